//! Layers shared by the encoders, the pretraining aggregator and the fusion stack.

use rand::Rng;

use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_xavier(format!("{name}/w"), fan_in, fan_out, rng)?;
        let b = store.add_const(format!("{name}/b"), &[1, fan_out], 0.0)?;
        Ok(Linear {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add_const(format!("{name}/gamma"), &[1, d], 1.0)?,
            beta: store.add_const(format!("{name}/beta"), &[1, d], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Stack of linear layers with relu between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs at least two sizes".into(),
            ));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}/{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Multi-head self-attention with an optional additive score bias.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "width {d} not divisible by {heads} heads"
            )));
        }
        Ok(SelfAttention {
            wq: Linear::new(store, &format!("{name}/wq"), d, d, rng)?,
            wk: Linear::new(store, &format!("{name}/wk"), d, d, rng)?,
            wv: Linear::new(store, &format!("{name}/wv"), d, d, rng)?,
            wo: Linear::new(store, &format!("{name}/wo"), d, d, rng)?,
            heads,
        })
    }

    /// `x` is `[n, d]`; `bias`, if given, is `[n, n]` and added to every head's scores.
    pub fn forward(&self, g: &mut Graph, x: Var, bias: Option<Var>) -> Result<Var> {
        let d = g.shape(x)[1];
        let dh = d / self.heads;
        let q = self.wq.forward(g, x)?;
        let k = self.wk.forward(g, x)?;
        let v = self.wv.forward(g, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice(q, 1, h * dh, dh)?,
                    g.slice(k, 1, h * dh, dh)?,
                    g.slice(v, 1, h * dh, dh)?,
                )
            };
            let s = g.matmul_nt(qh, kh)?;
            let mut s = g.scale(s, scale)?;
            if let Some(b) = bias {
                s = g.add(s, b)?;
            }
            let a = g.softmax(s)?;
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat(&outs, 1)?
        };
        self.wo.forward(g, cat)
    }
}

/// Pre-norm transformer layer: attention and a 2x-wide feed-forward, each
/// with a residual connection.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub ff: Mlp,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}/ln1"), d)?,
            attn: SelfAttention::new(store, &format!("{name}/attn"), d, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}/ln2"), d)?,
            ff: Mlp::new(store, &format!("{name}/ff"), &[d, 2 * d, d], rng)?,
            dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, bias: Option<Var>) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h, bias)?;
        let h = g.dropout(h, self.dropout)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.ff.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        g.add(x, h)
    }
}

/// Fixed sinusoidal position table of shape `[n, d]`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![n, d], data).expect("shape matches data")
}
