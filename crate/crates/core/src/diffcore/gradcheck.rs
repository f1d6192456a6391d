use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Step reductions tried when a finite difference straddles a relu kink.
const KINK_RETRIES: usize = 3;

/// Compare reverse-mode gradients of a scalar function against central finite
/// differences over every parameter coordinate in `store`.
///
/// Returns `max |g_ad - g_fd| / max(1, |g_fd|)`. `f` must be deterministic, so
/// it should build an evaluation-mode graph. When `x ± fd_step` lands on a
/// different side of some relu than `x`, the step is shrunk tenfold (up to
/// three times) so the difference is taken on a single linear piece.
pub fn grad_check<F>(store: &ParamStore, f: F, fd_step: f64) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    Ok(worst(&grad_check_by_param(store, f, fd_step)?))
}

/// Like [`grad_check`] but only on up to `per_param` coordinates of each
/// parameter, drawn with `seed`.
pub fn grad_check_sampled<F>(
    store: &ParamStore,
    f: F,
    fd_step: f64,
    per_param: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    Ok(worst(&check(store, &f, fd_step, Some((per_param, seed)))?))
}

/// Worst relative error per parameter, in store order.
pub fn grad_check_by_param<F>(store: &ParamStore, f: F, fd_step: f64) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    check(store, &f, fd_step, None)
}

fn worst(errs: &[(String, f64)]) -> f64 {
    errs.iter().map(|(_, e)| *e).fold(0.0, f64::max)
}

fn check<F>(
    store: &ParamStore,
    f: &F,
    fd_step: f64,
    sampling: Option<(usize, u64)>,
) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    let grads = g.backward(loss)?;
    let base_sig = g.kink_signature();
    drop(g);

    let mut rng = sampling.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut work = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for pi in 0..store.len() {
        let id = ParamId(pi);
        let n = store.get(id).value.len();
        let coords: Vec<usize> = match (sampling, rng.as_mut()) {
            (Some((k, _)), Some(rng)) if k < n => {
                let mut c = sample(rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for k in coords {
            let orig = store.get(id).value.data()[k];
            let mut h = fd_step;
            let mut fd = 0.0;
            for attempt in 0..=KINK_RETRIES {
                work.get_mut(id).value.data_mut()[k] = orig + h;
                let (plus, sp) = eval(&work, f)?;
                work.get_mut(id).value.data_mut()[k] = orig - h;
                let (minus, sm) = eval(&work, f)?;
                work.get_mut(id).value.data_mut()[k] = orig;
                fd = (plus - minus) / (2.0 * h);
                if (sp == base_sig && sm == base_sig) || attempt == KINK_RETRIES {
                    break;
                }
                h /= 10.0;
            }
            let ad = grads.get(id).map(|g| g[k]).unwrap_or(0.0);
            worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        }
        out.push((store.get(id).name.clone(), worst));
    }
    Ok(out)
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let v = f(&mut g)?;
    Ok((g.value(v).item(), g.kink_signature()))
}

/// Redraw every bias (`.../b`, `.../bias`) uniformly in `[-bound, bound)`.
///
/// Zero-initialised biases put ReLU inputs of symmetric data exactly on the
/// kink, where a finite difference straddles two slopes.
pub fn jitter_biases(store: &mut ParamStore, bound: f64, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.params_mut() {
        if p.name.ends_with("/b") || p.name.ends_with("/bias") {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-bound..bound));
        }
    }
}
