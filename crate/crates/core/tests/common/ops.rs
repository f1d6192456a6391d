use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcrank::diffcore::{grad_check, Graph, ParamStore, Tensor, Var};
use rcrank::Result;

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const TOL: f64 = 1e-4;
pub const STEP: f64 = 1e-3;

type Build = Box<dyn Fn(&mut ParamStore, &mut ChaCha8Rng)>;
type Loss = Box<dyn Fn(&mut Graph) -> Result<Var>>;

/// One differentiable operation wrapped into a scalar function of parameters.
pub struct OpCase {
    pub name: &'static str,
    build: Build,
    loss: Loss,
}

impl OpCase {
    /// Worst relative gradient error over the fixed seeds.
    pub fn worst_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for seed in SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            (self.build)(&mut store, &mut rng);
            let err = grad_check(&store, &self.loss, STEP).unwrap();
            worst = worst.max(err);
        }
        worst
    }
}

fn add<B, F>(cases: &mut Vec<OpCase>, name: &'static str, build: B, f: F)
where
    B: Fn(&mut ParamStore, &mut ChaCha8Rng) + 'static,
    F: Fn(&mut Graph) -> Result<Var> + 'static,
{
    cases.push(OpCase {
        name,
        build: Box::new(build),
        loss: Box::new(f),
    });
}

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
fn probe(g: &mut Graph, v: Var) -> Result<Var> {
    let n = g.value(v).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * ((i * 7) % 11) as f64).collect();
    let shape = g.shape(v).to_vec();
    let w = g.constant(Tensor::new(shape, w)?)?;
    let p = g.mul(v, w)?;
    g.sum_all(p)
}

fn p(g: &mut Graph, name: &str) -> Var {
    let id = g.params().id(name).unwrap();
    g.param(id)
}

fn two(
    shape_a: &'static [usize],
    shape_b: &'static [usize],
) -> impl Fn(&mut ParamStore, &mut ChaCha8Rng) {
    move |s, r| {
        s.add_uniform("a", shape_a, 1.0, r).unwrap();
        s.add_uniform("b", shape_b, 1.0, r).unwrap();
    }
}

/// Every differentiable graph operation, plus a composed attention block.
pub fn cases() -> Vec<OpCase> {
    let mut cases = Vec::new();
    {
        add(&mut cases, "matmul", two(&[3, 4], &[4, 2]), |g| {
            let (a, b) = (p(g, "a"), p(g, "b"));
            let y = g.matmul(a, b)?;
            probe(g, y)
        });
    }

    {
        add(&mut cases, "matmul_nt", two(&[3, 4], &[5, 4]), |g| {
            let (a, b) = (p(g, "a"), p(g, "b"));
            let y = g.matmul_nt(a, b)?;
            probe(g, y)
        });
    }

    {
        add(
            &mut cases,
            "matmul_const",
            |s, r| {
                s.add_uniform("b", &[4, 2], 1.0, r).unwrap();
            },
            |g| {
                let a = g.constant(Tensor::new(
                    vec![3, 4],
                    (0..12).map(|i| i as f64 * 0.1 - 0.5).collect(),
                )?)?;
                let b = p(g, "b");
                let y = g.matmul(a, b)?;
                probe(g, y)
            },
        );
    }

    {
        add(&mut cases, "transpose", two(&[3, 4], &[1, 1]), |g| {
            let a = p(g, "a");
            let y = g.transpose(a)?;
            probe(g, y)
        });
    }

    {
        for b_shape in [&[3usize, 4][..], &[1, 4], &[1, 1]] {
            let b_shape: &'static [usize] = Box::leak(b_shape.to_vec().into_boxed_slice());
            add(&mut cases, "add", two(&[3, 4], b_shape), |g| {
                let (a, b) = (p(g, "a"), p(g, "b"));
                let y = g.add(a, b)?;
                probe(g, y)
            });
            add(&mut cases, "sub", two(&[3, 4], b_shape), |g| {
                let (a, b) = (p(g, "a"), p(g, "b"));
                let y = g.sub(a, b)?;
                probe(g, y)
            });
            add(&mut cases, "mul", two(&[3, 4], b_shape), |g| {
                let (a, b) = (p(g, "a"), p(g, "b"));
                let y = g.mul(a, b)?;
                probe(g, y)
            });
        }
    }

    {
        add(&mut cases, "scale_shift", two(&[3, 4], &[1, 1]), |g| {
            let a = p(g, "a");
            let y = g.scale(a, -1.7)?;
            let y = g.shift(y, 0.4)?;
            let y = g.reshape(y, &[2, 6])?;
            probe(g, y)
        });
    }

    {
        add(&mut cases, "concat0", two(&[2, 3], &[4, 3]), |g| {
            let (a, b) = (p(g, "a"), p(g, "b"));
            let y = g.concat(&[a, b, a], 0)?;
            let y = g.slice(y, 0, 1, 5)?;
            probe(g, y)
        });
        add(&mut cases, "concat1", two(&[3, 2], &[3, 4]), |g| {
            let (a, b) = (p(g, "a"), p(g, "b"));
            let y = g.concat(&[b, a], 1)?;
            let y = g.slice(y, 1, 2, 3)?;
            probe(g, y)
        });
    }

    {
        add(&mut cases, "embedding", two(&[5, 3], &[2, 6]), |g| {
            let (a, b) = (p(g, "a"), p(g, "b"));
            let e = g.embedding(a, &[4, 0, 4, 2])?;
            let s = g.select_cols(b, &[5, 1, 1, 0])?;
            let y = g.matmul(s, e)?;
            probe(g, y)
        });
    }

    {
        add(&mut cases, "softmax", two(&[3, 5], &[1, 1]), |g| {
            let a = p(g, "a");
            let y = g.softmax(a)?;
            probe(g, y)
        });
        add(&mut cases, "sigmoid", two(&[3, 5], &[1, 1]), |g| {
            let a = p(g, "a");
            let y = g.sigmoid(a)?;
            probe(g, y)
        });
        add(&mut cases, "relu", two(&[3, 5], &[1, 1]), |g| {
            let a = p(g, "a");
            let y = g.relu(a)?;
            probe(g, y)
        });
    }

    {
        add(
            &mut cases,
            "layer_norm",
            |s, r| {
                s.add_uniform("x", &[3, 6], 1.0, r).unwrap();
                s.add_uniform("gamma", &[1, 6], 1.0, r).unwrap();
                s.add_uniform("beta", &[1, 6], 1.0, r).unwrap();
            },
            |g| {
                let (x, ga, be) = (p(g, "x"), p(g, "gamma"), p(g, "beta"));
                let y = g.layer_norm(x, ga, be)?;
                probe(g, y)
            },
        );
    }

    {
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            add(
                &mut cases,
                "conv2d",
                |s, r| {
                    s.add_uniform("x", &[2, 5, 6], 1.0, r).unwrap();
                    s.add_uniform("k", &[3, 2, 3, 3], 1.0, r).unwrap();
                    s.add_uniform("b", &[1, 3], 1.0, r).unwrap();
                },
                move |g| {
                    let (x, k, b) = (p(g, "x"), p(g, "k"), p(g, "b"));
                    let y = g.conv2d(x, k, b, stride, pad)?;
                    probe(g, y)
                },
            );
        }
    }

    {
        add(&mut cases, "reductions", two(&[4, 3], &[1, 1]), |g| {
            let a = p(g, "a");
            let m = g.mean_rows(a)?;
            let s = probe(g, m)?;
            let t = g.mean_all(a)?;
            let t = g.scale(t, 3.0)?;
            g.add(s, t)
        });
    }

    {
        add(
            &mut cases,
            "attention",
            |s, r| {
                s.add_uniform("x", &[4, 6], 1.0, r).unwrap();
                s.add_uniform("wq", &[6, 6], 0.5, r).unwrap();
                s.add_uniform("wk", &[6, 6], 0.5, r).unwrap();
            },
            |g| {
                let (x, wq, wk) = (p(g, "x"), p(g, "wq"), p(g, "wk"));
                let q = g.matmul(x, wq)?;
                let k = g.matmul(x, wk)?;
                let s = g.matmul_nt(q, k)?;
                let s = g.scale(s, 0.4)?;
                let a = g.softmax(s)?;
                let y = g.matmul(a, x)?;
                probe(g, y)
            },
        );
    }
    cases
}
