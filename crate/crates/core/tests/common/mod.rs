//! Reference implementations written directly from the metric definitions,
//! with no code shared with the library.
#![allow(dead_code)]

pub mod ops;

use rand::Rng;

fn first_max(v: &[f64]) -> usize {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().position(|&x| x == m).unwrap()
}

fn max_count(v: &[f64]) -> usize {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().filter(|&&x| x == m).count()
}

/// Valid causes by repeated selection of the largest remaining one.
fn ranked_valid(v: &[f64], eps: f64) -> Vec<usize> {
    let mut left: Vec<usize> = (0..v.len()).filter(|&j| v[j] >= eps).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if v[left[k]] > v[left[best]] {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

pub fn v_acc(t: &[Vec<f64>], e: &[Vec<f64>], eps: f64) -> f64 {
    let cells: Vec<bool> = t
        .iter()
        .zip(e)
        .flat_map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(move |(x, y)| (*x >= eps) == (*y >= eps))
        })
        .collect();
    cells.iter().filter(|&&c| c).count() as f64 / cells.len() as f64
}

pub fn top1(t: &[Vec<f64>], e: &[Vec<f64>], eps: f64) -> f64 {
    let mut hits = 0.0;
    let mut n = 0.0;
    for (a, b) in t.iter().zip(e) {
        if a.iter().all(|&x| x < eps) || max_count(a) > 1 {
            continue;
        }
        n += 1.0;
        if first_max(a) == first_max(b) {
            hits += 1.0;
        }
    }
    if n == 0.0 {
        0.0
    } else {
        hits / n
    }
}

/// Mean and population standard deviation of per-query MSE.
pub fn mse(t: &[Vec<f64>], e: &[Vec<f64>]) -> (f64, f64) {
    let per: Vec<f64> = t
        .iter()
        .zip(e)
        .map(|(a, b)| {
            let s: f64 = (0..a.len()).map(|j| (a[j] - b[j]).powi(2)).sum();
            s / a.len() as f64
        })
        .collect();
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let var = per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn mc_acc(t: &[Vec<f64>], e: &[Vec<f64>], eps: f64) -> f64 {
    let mut hits = 0.0;
    let mut n = 0.0;
    for (a, b) in t.iter().zip(e) {
        let va = ranked_valid(a, eps);
        if va.is_empty() {
            continue;
        }
        n += 1.0;
        if va == ranked_valid(b, eps) {
            hits += 1.0;
        }
    }
    if n == 0.0 {
        0.0
    } else {
        hits / n
    }
}

/// Tau-b from sign products over all ordered pairs; `None` when a ranking is constant.
pub fn tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    let sgn = |x: f64| {
        if x > 0.0 {
            1i64
        } else if x < 0.0 {
            -1
        } else {
            0
        }
    };
    let (mut s, mut ta, mut tb) = (0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i == j {
                continue;
            }
            let (x, y) = (sgn(a[i] - a[j]), sgn(b[i] - b[j]));
            s += x * y;
            ta += x * x;
            tb += y * y;
        }
    }
    if ta == 0 || tb == 0 {
        None
    } else {
        Some(s as f64 / ((ta as f64) * (tb as f64)).sqrt())
    }
}

pub fn tau(t: &[Vec<f64>], e: &[Vec<f64>]) -> f64 {
    let v: Vec<f64> = t.iter().zip(e).filter_map(|(a, b)| tau_b(a, b)).collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn top1_ir(t: &[Vec<f64>], e: &[Vec<f64>]) -> f64 {
    t.iter().zip(e).map(|(a, b)| a[first_max(b)]).sum::<f64>() / t.len() as f64
}

/// A random `n x r` impact matrix. With `coarse` the values come from a
/// small grid so ties are common.
pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, r: usize, coarse: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..r)
                .map(|_| {
                    if coarse {
                        [0.0, 0.05, 0.1, 0.2, 0.35, 0.5][rng.gen_range(0..6)]
                    } else {
                        rng.gen_range(-0.2..0.8)
                    }
                })
                .collect()
        })
        .collect()
}
