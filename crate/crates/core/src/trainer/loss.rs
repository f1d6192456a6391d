//! Prediction, validity and ordering losses, on plain vectors and as graph
//! nodes. Both forms compute the same per-query values.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// How the estimate is arranged before taking adjacent gaps in the
/// ordering loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Estimates reordered by the true descending order, so both gap series
    /// compare the same pairs of causes.
    #[default]
    TruthPermuted,
    /// Estimates sorted on their own.
    IndependentSort,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub order: OrderMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 7.0,
            epsilon: 0.10,
            eta: 0.02,
            order: OrderMode::TruthPermuted,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub pred: f64,
    pub valid: f64,
    pub order: f64,
    pub total: f64,
}

fn same_len(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::shape("loss", &[y.len()], &[yhat.len()]));
    }
    Ok(())
}

/// Descending order of `v`, lower index first on ties.
pub fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// `+1` for a truly invalid cause, `-1` for a valid one.
pub fn indicator(y: f64, epsilon: f64) -> f64 {
    if y < epsilon {
        1.0
    } else {
        -1.0
    }
}

pub fn loss_pred(y: &[f64], yhat: &[f64]) -> Result<f64> {
    same_len(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn loss_valid(y: &[f64], yhat: &[f64], epsilon: f64, eta: f64) -> Result<f64> {
    same_len(y, yhat)?;
    Ok(y.iter()
        .zip(yhat)
        .map(|(&a, &b)| (indicator(a, epsilon) * (b - epsilon) + eta).max(0.0))
        .sum())
}

/// Sum over adjacent pairs of `max(0, gap_true - gap_est)`.
pub fn loss_order(y: &[f64], yhat: &[f64], mode: OrderMode) -> Result<f64> {
    same_len(y, yhat)?;
    let perm = descending_order(y);
    let z: Vec<f64> = perm.iter().map(|&j| y[j]).collect();
    let zhat: Vec<f64> = match mode {
        OrderMode::TruthPermuted => perm.iter().map(|&j| yhat[j]).collect(),
        OrderMode::IndependentSort => descending_order(yhat).iter().map(|&j| yhat[j]).collect(),
    };
    Ok(z.windows(2)
        .zip(zhat.windows(2))
        .map(|(a, b)| ((a[0] - a[1]) - (b[0] - b[1])).max(0.0))
        .sum())
}

pub fn total_loss(y: &[f64], yhat: &[f64], w: &LossWeights) -> Result<LossParts> {
    let pred = loss_pred(y, yhat)?;
    let valid = loss_valid(y, yhat, w.epsilon, w.eta)?;
    let order = loss_order(y, yhat, w.order)?;
    Ok(LossParts {
        pred,
        valid,
        order,
        total: pred + w.lambda * (valid + order),
    })
}

/// Graph form of [`total_loss`] for one query; `yhat` is `[1, r]`.
pub fn graph_loss(
    g: &mut Graph,
    yhat: Var,
    y: &[f64],
    w: &LossWeights,
) -> Result<(Var, LossParts)> {
    let r = y.len();
    if g.shape(yhat) != [1, r] {
        return Err(Error::shape("loss", g.shape(yhat), &[1, r]));
    }
    let target = g.constant(Tensor::row(y))?;
    let diff = g.sub(yhat, target)?;
    let sq = g.mul(diff, diff)?;
    let pred = g.sum_all(sq)?;

    let signs: Vec<f64> = y.iter().map(|&v| indicator(v, w.epsilon)).collect();
    let signs = g.constant(Tensor::row(&signs))?;
    let centred = g.shift(yhat, -w.epsilon)?;
    let signed = g.mul(centred, signs)?;
    let margin = g.shift(signed, w.eta)?;
    let hinge = g.relu(margin)?;
    let valid = g.sum_all(hinge)?;

    let order = if r < 2 {
        g.constant(Tensor::scalar(0.0))?
    } else {
        let perm = descending_order(y);
        let zhat_perm = match w.order {
            OrderMode::TruthPermuted => perm.clone(),
            OrderMode::IndependentSort => descending_order(g.value(yhat).data()),
        };
        let zhat = g.select_cols(yhat, &zhat_perm)?;
        let gaps_true: Vec<f64> = perm.windows(2).map(|p| y[p[0]] - y[p[1]]).collect();
        // Adjacent differences as a product with a [r, r-1] difference matrix.
        let mut dm = Tensor::zeros(&[r, r - 1]);
        for k in 0..r - 1 {
            dm.data_mut()[k * (r - 1) + k] = 1.0;
            dm.data_mut()[(k + 1) * (r - 1) + k] = -1.0;
        }
        let dm = g.constant(dm)?;
        let gaps_est = g.matmul(zhat, dm)?;
        let gaps_true = g.constant(Tensor::row(&gaps_true))?;
        let short = g.sub(gaps_true, gaps_est)?;
        let hinge = g.relu(short)?;
        g.sum_all(hinge)?
    };

    let reg = g.add(valid, order)?;
    let reg = g.scale(reg, w.lambda)?;
    let total = g.add(pred, reg)?;
    let parts = LossParts {
        pred: g.value(pred).item(),
        valid: g.value(valid).item(),
        order: g.value(order).item(),
        total: g.value(total).item(),
    };
    Ok((total, parts))
}
