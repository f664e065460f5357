//! Per-sample forward pass with activation caching, and its exact reverse.

use super::params::{dot, Block, EncoderParams, LnCache};
use super::{EncoderConfig, EncoderError};

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct BlockCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `n_heads × T × T` row-stochastic attention weights.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    b: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

pub(crate) struct SampleCache {
    x: Vec<f64>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    pooled: Vec<f64>,
    pub(crate) feature: Vec<f64>,
    pub(crate) logit: f64,
}

impl SampleCache {
    #[cfg(test)]
    pub(crate) fn attention(&self, layer: usize) -> &[f64] {
        &self.blocks[layer].probs
    }

    #[cfg(test)]
    pub(crate) fn context(&self, layer: usize) -> &[f64] {
        &self.blocks[layer].ctx
    }
}

fn check(values: &[f64], layer: usize) -> Result<(), EncoderError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EncoderError::NonFinite { layer })
    }
}

fn attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let row = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
            let qi = &q[i * d + off..i * d + off + dh];
            let mut max = f64::NEG_INFINITY;
            for (j, p) in row.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                *p = scale * dot(qi, kj);
                max = max.max(*p);
            }
            let mut sum = 0.0;
            for p in row.iter_mut() {
                *p = (*p - max).exp();
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
            let ci = &mut ctx[i * d + off..i * d + off + dh];
            for (j, p) in row.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + dh];
                for (cc, vc) in ci.iter_mut().zip(vj) {
                    *cc += p * vc;
                }
            }
        }
    }
    (probs, ctx)
}

/// Returns `(dq, dk, dv)` given `dctx`.
fn attention_backward(
    cache: &BlockCache,
    dctx: &[f64],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let p = &cache.probs[(h * t + i) * t..(h * t + i + 1) * t];
            let dci = &dctx[i * d + off..i * d + off + dh];
            for j in 0..t {
                let vj = &v[j * d + off..j * d + off + dh];
                dp[j] = dot(dci, vj);
                let dvj = &mut dv[j * d + off..j * d + off + dh];
                for (dvc, dc) in dvj.iter_mut().zip(dci) {
                    *dvc += p[j] * dc;
                }
            }
            let inner = dot(p, &dp);
            for j in 0..t {
                let ds = p[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &k[j * d + off..j * d + off + dh];
                for (dqc, kc) in dq[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                    *dqc += ds * kc;
                }
                let qi = &q[i * d + off..i * d + off + dh];
                for (dkc, qc) in dk[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                    *dkc += ds * qc;
                }
            }
        }
    }
    (dq, dk, dv)
}

fn block_forward(block: &Block, h_in: Vec<f64>, cfg: &EncoderConfig) -> (Vec<f64>, BlockCache) {
    let (t, d) = (cfg.seq_len, cfg.d_model);
    let (a, ln1) = block.ln1.apply(&h_in, t);
    let q = block.query.apply(&a, t);
    let k = block.key.apply(&a, t);
    let v = block.value.apply(&a, t);
    let (probs, ctx) = attention(&q, &k, &v, t, d, cfg.n_heads);
    let o = block.attn_out.apply(&ctx, t);
    let h_mid: Vec<f64> = h_in.iter().zip(&o).map(|(x, y)| x + y).collect();
    let (b, ln2) = block.ln2.apply(&h_mid, t);
    let pre = block.ff_in.apply(&b, t);
    let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
    let f = block.ff_out.apply(&act, t);
    let h_out = h_mid.iter().zip(&f).map(|(x, y)| x + y).collect();
    (
        h_out,
        BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            b,
            pre,
            act,
        },
    )
}

fn block_backward(
    block: &Block,
    cache: &BlockCache,
    dh_out: &[f64],
    cfg: &EncoderConfig,
    grad: &mut Block,
) -> Vec<f64> {
    let t = cfg.seq_len;
    let dact = block.ff_out.backward(&cache.act, dh_out, t, &mut grad.ff_out);
    let dpre: Vec<f64> = dact
        .iter()
        .zip(&cache.pre)
        .map(|(g, &x)| g * gelu_grad(x))
        .collect();
    let db = block.ff_in.backward(&cache.b, &dpre, t, &mut grad.ff_in);
    let dmid_ln = block.ln2.backward(&cache.ln2, &db, t, &mut grad.ln2);
    let dh_mid: Vec<f64> = dh_out.iter().zip(&dmid_ln).map(|(a, b)| a + b).collect();
    let dctx = block.attn_out.backward(&cache.ctx, &dh_mid, t, &mut grad.attn_out);
    let (dq, dk, dv) = attention_backward(cache, &dctx, t, cfg.d_model, cfg.n_heads);
    let mut da = block.query.backward(&cache.a, &dq, t, &mut grad.query);
    for (x, y) in da.iter_mut().zip(block.key.backward(&cache.a, &dk, t, &mut grad.key)) {
        *x += y;
    }
    for (x, y) in da.iter_mut().zip(block.value.backward(&cache.a, &dv, t, &mut grad.value)) {
        *x += y;
    }
    let din_ln = block.ln1.backward(&cache.ln1, &da, t, &mut grad.ln1);
    dh_mid.iter().zip(&din_ln).map(|(a, b)| a + b).collect()
}

/// Forward pass for one flattened `seq_len × input_channels` sequence.
///
/// Layer indices in errors: 0 is the input embedding, `1..=n_layers` the
/// blocks, `n_layers + 1` the pooling and heads.
pub(crate) fn forward_sample(
    p: &EncoderParams,
    cfg: &EncoderConfig,
    x: &[f64],
) -> Result<SampleCache, EncoderError> {
    let (t, d) = (cfg.seq_len, cfg.d_model);
    let mut h = p.input.apply(x, t);
    for (hv, pv) in h.iter_mut().zip(&p.position) {
        *hv += pv;
    }
    check(&h, 0)?;
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for (l, block) in p.blocks.iter().enumerate() {
        let (next, cache) = block_forward(block, h, cfg);
        check(&next, l + 1)?;
        blocks.push(cache);
        h = next;
    }
    let (hf, lnf) = p.final_norm.apply(&h, t);
    let mut pooled = vec![0.0; d];
    for r in 0..t {
        for c in 0..d {
            pooled[c] += hf[r * d + c];
        }
    }
    pooled.iter_mut().for_each(|v| *v /= t as f64);
    let feature = p.feature_head.apply(&pooled, 1);
    let logit = p.logit_head.apply(&feature, 1)[0];
    check(&feature, cfg.n_layers + 1)?;
    check(&[logit], cfg.n_layers + 1)?;
    Ok(SampleCache {
        x: x.to_vec(),
        blocks,
        lnf,
        pooled,
        feature,
        logit,
    })
}

/// Accumulates `dlogit · ∂logit/∂params` into `grad`.
pub(crate) fn backward_sample(
    p: &EncoderParams,
    cfg: &EncoderConfig,
    cache: &SampleCache,
    dlogit: f64,
    grad: &mut EncoderParams,
) {
    let (t, d) = (cfg.seq_len, cfg.d_model);
    let dfeature = p
        .logit_head
        .backward(&cache.feature, &[dlogit], 1, &mut grad.logit_head);
    let dpooled = p
        .feature_head
        .backward(&cache.pooled, &dfeature, 1, &mut grad.feature_head);
    let mut dhf = vec![0.0; t * d];
    for r in 0..t {
        for c in 0..d {
            dhf[r * d + c] = dpooled[c] / t as f64;
        }
    }
    let mut dh = p.final_norm.backward(&cache.lnf, &dhf, t, &mut grad.final_norm);
    for l in (0..p.blocks.len()).rev() {
        dh = block_backward(&p.blocks[l], &cache.blocks[l], &dh, cfg, &mut grad.blocks[l]);
    }
    for (g, v) in grad.position.iter_mut().zip(&dh) {
        *g += v;
    }
    p.input.backward(&cache.x, &dh, t, &mut grad.input);
}
