use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::EncoderConfig;

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dense layer `y = W x + b`, `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn glorot(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    /// Applies the layer to `rows` stacked inputs.
    pub(crate) fn apply(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(rows * self.out_dim);
        for r in 0..rows {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                y.push(self.bias[o] + dot(w, xr));
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; rows * self.in_dim];
        for r in 0..rows {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let dxr = &mut dx[r * self.in_dim..(r + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let g = dy[r * self.out_dim + o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let gw = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (gwi, xi) in gw.iter_mut().zip(xr) {
                    *gwi += g * xi;
                }
                for (dxi, wi) in dxr.iter_mut().zip(w) {
                    *dxi += g * wi;
                }
            }
        }
        dx
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl LayerNorm {
    fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
        }
    }

    pub(crate) fn apply(&self, x: &[f64], rows: usize) -> (Vec<f64>, LnCache) {
        let d = self.gamma.len();
        let mut y = Vec::with_capacity(rows * d);
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for (i, v) in xr.iter().enumerate() {
                let h = (v - mean) * s;
                xhat.push(h);
                y.push(self.gamma[i] * h + self.beta[i]);
            }
        }
        (y, LnCache { xhat, rstd })
    }

    pub(crate) fn backward(&self, cache: &LnCache, dy: &[f64], rows: usize, grad: &mut LayerNorm) -> Vec<f64> {
        let d = self.gamma.len();
        let mut dx = vec![0.0; rows * d];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            for i in 0..d {
                grad.gamma[i] += dyr[i] * xh[i];
                grad.beta[i] += dyr[i];
                dxhat[i] = dyr[i] * self.gamma[i];
            }
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for i in 0..d {
                dx[r * d + i] = cache.rstd[r] * (dxhat[i] - mean_d - xh[i] * mean_dx);
            }
        }
        dx
    }
}

/// One pre-norm encoder block: attention and feed-forward sublayers, each
/// wrapped in a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub ln2: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

/// All trainable weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input: Linear,
    /// Learned positional embeddings, `seq_len × d_model`.
    pub position: Vec<f64>,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
    pub feature_head: Linear,
    pub logit_head: Linear,
}

macro_rules! for_each_slot {
    ($p:expr, $f:ident) => {{
        $f("input.weight".to_string(), &$p.input.weight);
        $f("input.bias".to_string(), &$p.input.bias);
        $f("position".to_string(), &$p.position);
        for (l, b) in $p.blocks.iter().enumerate() {
            $f(format!("blocks.{l}.ln1.gamma"), &b.ln1.gamma);
            $f(format!("blocks.{l}.ln1.beta"), &b.ln1.beta);
            $f(format!("blocks.{l}.query.weight"), &b.query.weight);
            $f(format!("blocks.{l}.query.bias"), &b.query.bias);
            $f(format!("blocks.{l}.key.weight"), &b.key.weight);
            $f(format!("blocks.{l}.key.bias"), &b.key.bias);
            $f(format!("blocks.{l}.value.weight"), &b.value.weight);
            $f(format!("blocks.{l}.value.bias"), &b.value.bias);
            $f(format!("blocks.{l}.attn_out.weight"), &b.attn_out.weight);
            $f(format!("blocks.{l}.attn_out.bias"), &b.attn_out.bias);
            $f(format!("blocks.{l}.ln2.gamma"), &b.ln2.gamma);
            $f(format!("blocks.{l}.ln2.beta"), &b.ln2.beta);
            $f(format!("blocks.{l}.ff_in.weight"), &b.ff_in.weight);
            $f(format!("blocks.{l}.ff_in.bias"), &b.ff_in.bias);
            $f(format!("blocks.{l}.ff_out.weight"), &b.ff_out.weight);
            $f(format!("blocks.{l}.ff_out.bias"), &b.ff_out.bias);
        }
        $f("final_norm.gamma".to_string(), &$p.final_norm.gamma);
        $f("final_norm.beta".to_string(), &$p.final_norm.beta);
        $f("feature_head.weight".to_string(), &$p.feature_head.weight);
        $f("feature_head.bias".to_string(), &$p.feature_head.bias);
        $f("logit_head.weight".to_string(), &$p.logit_head.weight);
        $f("logit_head.bias".to_string(), &$p.logit_head.bias);
    }};
}

macro_rules! for_each_slot_mut {
    ($p:expr, $f:ident) => {{
        $f("input.weight".to_string(), &mut $p.input.weight);
        $f("input.bias".to_string(), &mut $p.input.bias);
        $f("position".to_string(), &mut $p.position);
        for (l, b) in $p.blocks.iter_mut().enumerate() {
            $f(format!("blocks.{l}.ln1.gamma"), &mut b.ln1.gamma);
            $f(format!("blocks.{l}.ln1.beta"), &mut b.ln1.beta);
            $f(format!("blocks.{l}.query.weight"), &mut b.query.weight);
            $f(format!("blocks.{l}.query.bias"), &mut b.query.bias);
            $f(format!("blocks.{l}.key.weight"), &mut b.key.weight);
            $f(format!("blocks.{l}.key.bias"), &mut b.key.bias);
            $f(format!("blocks.{l}.value.weight"), &mut b.value.weight);
            $f(format!("blocks.{l}.value.bias"), &mut b.value.bias);
            $f(format!("blocks.{l}.attn_out.weight"), &mut b.attn_out.weight);
            $f(format!("blocks.{l}.attn_out.bias"), &mut b.attn_out.bias);
            $f(format!("blocks.{l}.ln2.gamma"), &mut b.ln2.gamma);
            $f(format!("blocks.{l}.ln2.beta"), &mut b.ln2.beta);
            $f(format!("blocks.{l}.ff_in.weight"), &mut b.ff_in.weight);
            $f(format!("blocks.{l}.ff_in.bias"), &mut b.ff_in.bias);
            $f(format!("blocks.{l}.ff_out.weight"), &mut b.ff_out.weight);
            $f(format!("blocks.{l}.ff_out.bias"), &mut b.ff_out.bias);
        }
        $f("final_norm.gamma".to_string(), &mut $p.final_norm.gamma);
        $f("final_norm.beta".to_string(), &mut $p.final_norm.beta);
        $f("feature_head.weight".to_string(), &mut $p.feature_head.weight);
        $f("feature_head.bias".to_string(), &mut $p.feature_head.bias);
        $f("logit_head.weight".to_string(), &mut $p.logit_head.weight);
        $f("logit_head.bias".to_string(), &mut $p.logit_head.bias);
    }};
}

impl EncoderParams {
    /// Glorot-uniform dense layers, unit layer norms, small positional
    /// embeddings. Values are rounded to `f32` so a saved model reloads
    /// bit-exactly.
    pub(crate) fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.d_model;
        let input = Linear::glorot(config.input_channels, d, rng);
        let position = (0..config.seq_len * d)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::identity(d),
                query: Linear::glorot(d, d, rng),
                key: Linear::glorot(d, d, rng),
                value: Linear::glorot(d, d, rng),
                attn_out: Linear::glorot(d, d, rng),
                ln2: LayerNorm::identity(d),
                ff_in: Linear::glorot(d, config.d_ff, rng),
                ff_out: Linear::glorot(config.d_ff, d, rng),
            })
            .collect();
        let mut p = Self {
            input,
            position,
            blocks,
            final_norm: LayerNorm::identity(d),
            feature_head: Linear::glorot(d, config.feature_dim, rng),
            logit_head: Linear::glorot(config.feature_dim, 1, rng),
        };
        p.round_to_f32();
        p
    }

    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.d_model;
        Self {
            input: Linear::zeros(config.input_channels, d),
            position: vec![0.0; config.seq_len * d],
            blocks: (0..config.n_layers)
                .map(|_| Block {
                    ln1: LayerNorm::zeros(d),
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    attn_out: Linear::zeros(d, d),
                    ln2: LayerNorm::zeros(d),
                    ff_in: Linear::zeros(d, config.d_ff),
                    ff_out: Linear::zeros(config.d_ff, d),
                })
                .collect(),
            final_norm: LayerNorm::zeros(d),
            feature_head: Linear::zeros(d, config.feature_dim),
            logit_head: Linear::zeros(config.feature_dim, 1),
        }
    }

    /// Visits every parameter group in the fixed serialization order.
    pub fn visit(&self, mut f: impl FnMut(String, &Vec<f64>)) {
        for_each_slot!(self, f);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut Vec<f64>)) {
        for_each_slot_mut!(self, f);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, v| n += v.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(|_, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites all parameters from a flat vector in visit order.
    pub fn assign(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(|_, v| {
            let n = v.len();
            v.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, v| v.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &EncoderParams) {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(|_, v| {
            for x in v.iter_mut() {
                *x += alpha * flat[offset];
                offset += 1;
            }
        });
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub(crate) fn round_to_f32(&mut self) {
        self.visit_mut(|_, v| v.iter_mut().for_each(|x| *x = *x as f32 as f64));
    }
}
