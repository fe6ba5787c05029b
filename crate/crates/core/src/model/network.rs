//! Batched forward and backward passes of the fusion network.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::fusion::{
    fuse_attention, fuse_attention_backward, llr_head_backward, llr_head_forward, AttentionForward,
    AttentionGrads, AttentionParams, LlrHeadCache,
};
use super::{Batch, FusionOutput, HeadIds, Layout, ModelConfig};
use crate::error::Result;
use crate::nn::attention_pool::{attention_pool_backward, attention_pool_forward, PoolCache, PoolGrads, PoolParams};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache};
use crate::nn::conv::{conv1d_backward, conv1d_forward};
use crate::nn::gru::{gru_backward, gru_forward, GruCache, GruDims, GruGrads, GruParams};
use crate::nn::linear::{linear_backward, linear_forward};
use crate::nn::linalg::{gemm, MatRef};
use crate::nn::loss::softmax_in_place;
use crate::nn::{relu, relu_backward, ParamStore, Tensor, Values};

pub(super) enum BufferMode<'a> {
    Train(&'a mut [Tensor]),
    Eval(&'a [Tensor]),
}

struct ConvLayerCache {
    input: Vec<f64>,
    t_in: usize,
    pre: Vec<f64>,
    bn: Option<BnCache>,
}

pub(super) struct EncoderCache {
    convs: Vec<ConvLayerCache>,
    pub conv_out: Vec<f64>,
    steps: usize,
    grus: Vec<GruCache>,
    pool: PoolCache,
    /// `[B x D]`
    pub pooled: Vec<f64>,
    /// Fingerprint of the ReLU activation pattern.
    pub kinks: u64,
    /// Fingerprint state before each conv layer.
    kink_prefix: Vec<u64>,
}

/// Where [`encode_from`] restarts the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Stage {
    Conv(usize),
    Gru(usize),
    Pool,
}

/// Output of a partial re-encode.
pub(super) struct Reencoded {
    pub pooled: Vec<f64>,
    pub kinks: u64,
}

pub(super) enum HeadCache {
    Llr {
        pair_logits_cache: Vec<LlrHeadCache>,
        pair_llr: Vec<Vec<f64>>,
    },
    Attention {
        hm: Vec<f64>,
        fwd: AttentionForward,
    },
}

pub(super) struct ForwardCache {
    batch: usize,
    encoders: Vec<EncoderCache>,
    head: HeadCache,
    fused: Vec<f64>,
    pub logits: Vec<f64>,
}

pub(super) fn encode(
    cfg: &ModelConfig,
    layout: &Layout,
    params: &ParamStore,
    bufs: &mut BufferMode<'_>,
    index: usize,
    x: &[f64],
    batch: usize,
) -> Result<EncoderCache> {
    let v = params.values();
    let enc = &layout.encoders[index];
    let subnet = &layout.subnets[enc.subnet];
    let d = cfg.feature_dim;
    let mut a = x.to_vec();
    let mut t = cfg.input_shape(enc.pair).0;
    let mut convs = Vec::with_capacity(subnet.layers.len());
    let mut kinks = Fingerprint::default();
    let mut kink_prefix = Vec::with_capacity(subnet.layers.len());
    for (l, ids) in subnet.layers.iter().enumerate() {
        kink_prefix.push(kinks.0);
        let shape = cfg.conv_shape(subnet.sensor, l);
        let (pre, t_out) = conv1d_forward(&shape, &a, batch, t, v.get(ids.w), v.get(ids.b))?;
        kinks.add_mask(pre.iter().map(|&p| p > 0.0));
        let mut act = pre.clone();
        relu(&mut act);
        let (y, bn) = match bufs {
            BufferMode::Train(b) => {
                let [rm, rv] = b
                    .get_disjoint_mut([ids.running_mean, ids.running_var])
                    .expect("distinct buffers");
                let (y, c) = batchnorm_train(
                    &act,
                    d,
                    v.get(ids.gamma),
                    v.get(ids.beta),
                    rm.data_mut(),
                    rv.data_mut(),
                    cfg.bn_momentum,
                    cfg.bn_eps,
                );
                (y, Some(c))
            }
            BufferMode::Eval(b) => {
                batchnorm_eval(
                    &mut act,
                    d,
                    v.get(ids.gamma),
                    v.get(ids.beta),
                    b[ids.running_mean].data(),
                    b[ids.running_var].data(),
                    cfg.bn_eps,
                );
                (act, None)
            }
        };
        convs.push(ConvLayerCache {
            input: a,
            t_in: t,
            pre,
            bn,
        });
        a = y;
        t = t_out;
    }
    let dims = GruDims {
        batch,
        steps: t,
        input: d,
        hidden: d,
    };
    let mut grus: Vec<GruCache> = Vec::with_capacity(enc.gru.len());
    for ids in &enc.gru {
        let input = grus.last().map_or(&a[..], |c| &c.h[..]);
        let c = gru_forward(&dims, input, gru_params(&v, ids), None);
        grus.push(c);
    }
    let last = &grus.last().expect("at least one GRU layer").h;
    let (pooled, pool) = attention_pool_forward(last, batch, t, d, pool_params(&v, enc));
    Ok(EncoderCache {
        convs,
        conv_out: a,
        steps: t,
        grus,
        pool,
        pooled,
        kinks: kinks.0,
        kink_prefix,
    })
}

/// Recomputes encoder `index` from `stage` on, reusing `base` for every
/// earlier layer. Batchnorm runs in training mode as in `encode`; running
/// statistics go to `scratch`.
#[allow(clippy::too_many_arguments)]
pub(super) fn encode_from(
    cfg: &ModelConfig,
    layout: &Layout,
    params: &ParamStore,
    scratch: &mut [Tensor],
    index: usize,
    batch: usize,
    base: &EncoderCache,
    stage: Stage,
) -> Result<Reencoded> {
    let v = params.values();
    let enc = &layout.encoders[index];
    let subnet = &layout.subnets[enc.subnet];
    let d = cfg.feature_dim;
    let t = base.steps;
    let dims = GruDims {
        batch,
        steps: t,
        input: d,
        hidden: d,
    };
    let (conv_out, kinks, first_gru) = match stage {
        Stage::Conv(l0) => {
            let mut kinks = Fingerprint(base.kink_prefix[l0]);
            let mut a = base.convs[l0].input.clone();
            let mut t_in = base.convs[l0].t_in;
            for (l, ids) in subnet.layers.iter().enumerate().skip(l0) {
                let shape = cfg.conv_shape(subnet.sensor, l);
                let (pre, t_out) = conv1d_forward(&shape, &a, batch, t_in, v.get(ids.w), v.get(ids.b))?;
                kinks.add_mask(pre.iter().map(|&p| p > 0.0));
                let mut act = pre;
                relu(&mut act);
                let [rm, rv] = scratch
                    .get_disjoint_mut([ids.running_mean, ids.running_var])
                    .expect("distinct buffers");
                let (y, _) = batchnorm_train(
                    &act,
                    d,
                    v.get(ids.gamma),
                    v.get(ids.beta),
                    rm.data_mut(),
                    rv.data_mut(),
                    cfg.bn_momentum,
                    cfg.bn_eps,
                );
                a = y;
                t_in = t_out;
            }
            (Some(a), kinks.0, 0)
        }
        Stage::Gru(k) => (None, base.kinks, k),
        Stage::Pool => (None, base.kinks, enc.gru.len()),
    };
    let mut h: Option<Vec<f64>> = None;
    for (k, ids) in enc.gru.iter().enumerate().skip(first_gru) {
        let input: &[f64] = match (&h, &conv_out) {
            (Some(prev), _) => prev,
            (None, Some(c)) => c,
            (None, None) if k == 0 => &base.conv_out,
            (None, None) => &base.grus[k - 1].h,
        };
        h = Some(gru_forward(&dims, input, gru_params(&v, ids), None).h);
    }
    let last = h.as_deref().unwrap_or(&base.grus.last().expect("at least one GRU layer").h);
    let (pooled, _) = attention_pool_forward(last, batch, t, d, pool_params(&v, enc));
    Ok(Reencoded { pooled, kinks })
}

/// Order-sensitive hash of boolean patterns (which side of each kink a
/// value sits on).
pub(super) struct Fingerprint(pub u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub fn add_mask(&mut self, bits: impl Iterator<Item = bool>) {
        let mut word = 0u64;
        let mut n = 0;
        for b in bits {
            word = (word << 1) | b as u64;
            n += 1;
            if n == 64 {
                self.add_word(word);
                word = 0;
                n = 0;
            }
        }
        self.add_word(word ^ ((n as u64) << 56));
    }

    pub fn add_word(&mut self, word: u64) {
        self.0 = (self.0 ^ word).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
    }
}

impl HeadCache {
    /// Fingerprint of which per-pair probabilities sit inside the clamp range.
    pub(super) fn kinks(&self, eps: f64) -> u64 {
        let mut f = Fingerprint::default();
        if let HeadCache::Llr { pair_logits_cache, .. } = self {
            for c in pair_logits_cache {
                f.add_mask(c.probs.iter().map(|&p| p > eps && p < 1.0 - eps));
            }
        }
        f.0
    }
}

fn gru_params<'a>(v: &Values<'a>, ids: &super::GruIds) -> GruParams<'a> {
    GruParams {
        w_ih: v.get(ids.w_ih),
        w_hh: v.get(ids.w_hh),
        b_ih: v.get(ids.b_ih),
        b_hn: v.get(ids.b_hn),
    }
}

fn pool_params<'a>(v: &Values<'a>, enc: &super::EncoderIds) -> PoolParams<'a> {
    PoolParams {
        w: v.get(enc.pool_w),
        b: v.get(enc.pool_b),
        v: v.get(enc.pool_v),
        gate: v.scalar(enc.gate),
    }
}

pub(super) fn forward(
    cfg: &ModelConfig,
    layout: &Layout,
    params: &ParamStore,
    bufs: &mut BufferMode<'_>,
    batch: &Batch,
) -> Result<ForwardCache> {
    let mut encoders = Vec::with_capacity(layout.encoders.len());
    for (i, x) in batch.inputs.iter().enumerate() {
        encoders.push(encode(cfg, layout, params, bufs, i, x, batch.size)?);
    }
    let pooled: Vec<&[f64]> = encoders.iter().map(|e| &e.pooled[..]).collect();
    let (head, fused, logits) = head_forward(cfg, layout, params, &pooled, batch.size);
    Ok(ForwardCache {
        batch: batch.size,
        encoders,
        head,
        fused,
        logits,
    })
}

/// Fusion head on per-pair embeddings `[B x D]`; returns `(cache, fused, logits)`.
pub(super) fn head_forward(
    cfg: &ModelConfig,
    layout: &Layout,
    params: &ParamStore,
    pooled: &[&[f64]],
    b: usize,
) -> (HeadCache, Vec<f64>, Vec<f64>) {
    let n = cfg.num_classes;
    let d = cfg.feature_dim;
    let v = params.values();
    match layout.head {
        HeadIds::Llr { out_w, out_b } => {
            let mut caches = Vec::with_capacity(pooled.len());
            let mut pair_llr = Vec::with_capacity(pooled.len());
            for (h, ids) in pooled.iter().zip(&layout.encoders) {
                let (hw, hb) = ids.head.expect("LLR head weights");
                let z = linear_forward(h, b, v.get(hw), v.get(hb), n);
                let (llr, c) = llr_head_forward(&z, n, cfg.llr_clamp);
                caches.push(c);
                pair_llr.push(llr);
            }
            let fused: Vec<f64> = (0..b * n)
                .map(|k| super::fusion::exact_sum(pair_llr.iter().map(|l: &Vec<f64>| l[k])))
                .collect();
            let logits = linear_forward(&fused, b, v.get(out_w), v.get(out_b), n);
            (
                HeadCache::Llr {
                    pair_logits_cache: caches,
                    pair_llr,
                },
                fused,
                logits,
            )
        }
        HeadIds::Attention {
            wq,
            wk,
            wv,
            reduce_w,
            reduce_b,
            out_w,
            out_b,
        } => {
            let a = pooled.len();
            let mut hm = vec![0.0; b * a * d];
            for (p, h) in pooled.iter().enumerate() {
                for r in 0..b {
                    hm[(r * a + p) * d..(r * a + p + 1) * d].copy_from_slice(&h[r * d..(r + 1) * d]);
                }
            }
            let fwd = fuse_attention(
                &hm,
                b,
                a,
                d,
                AttentionParams {
                    wq: v.get(wq),
                    wk: v.get(wk),
                    wv: v.get(wv),
                    reduce_w: v.get(reduce_w),
                    reduce_b: v.get(reduce_b),
                },
            );
            let fused = fwd.out.clone();
            let logits = linear_forward(&fused, b, v.get(out_w), v.get(out_b), n);
            (HeadCache::Attention { hm, fwd }, fused, logits)
        }
    }
}

impl ForwardCache {
    pub(super) fn outputs(&self, cfg: &ModelConfig) -> Vec<FusionOutput> {
        let n = cfg.num_classes;
        let a = self.encoders.len();
        let fw = self.fused.len() / self.batch.max(1);
        (0..self.batch)
            .map(|r| {
                let logits = self.logits[r * n..(r + 1) * n].to_vec();
                let mut probs = logits.clone();
                softmax_in_place(&mut probs);
                let (per_pair_llr, per_pair_probs, attention) = match &self.head {
                    HeadCache::Llr {
                        pair_logits_cache,
                        pair_llr,
                    } => {
                        let mut llr = Vec::with_capacity(a * n);
                        let mut pp = Vec::with_capacity(a * n);
                        for (l, c) in pair_llr.iter().zip(pair_logits_cache) {
                            llr.extend_from_slice(&l[r * n..(r + 1) * n]);
                            pp.extend_from_slice(&c.renorm[r * n..(r + 1) * n]);
                        }
                        (
                            Some(Tensor::new(vec![a, n], llr).expect("shape")),
                            Some(Tensor::new(vec![a, n], pp).expect("shape")),
                            None,
                        )
                    }
                    HeadCache::Attention { fwd, .. } => (
                        None,
                        None,
                        Some(Tensor::new(vec![a, a], fwd.attn[r * a * a..(r + 1) * a * a].to_vec()).expect("shape")),
                    ),
                };
                FusionOutput {
                    kind: cfg.fusion,
                    pairs: cfg.active_pairs.clone(),
                    logits,
                    probs,
                    fused: self.fused[r * fw..(r + 1) * fw].to_vec(),
                    per_pair_llr,
                    per_pair_probs,
                    attention,
                }
            })
            .collect()
    }
}

pub(super) fn backward(
    cfg: &ModelConfig,
    layout: &Layout,
    params: &mut ParamStore,
    cache: &ForwardCache,
    dlogits: &[f64],
) -> Result<()> {
    let b = cache.batch;
    let n = cfg.num_classes;
    let d = cfg.feature_dim;
    let (v, mut g) = params.split();
    let dpooled: Vec<Vec<f64>> = match (&layout.head, &cache.head) {
        (HeadIds::Llr { out_w, out_b }, HeadCache::Llr { pair_logits_cache, .. }) => {
            let dfused = {
                let [dw, db] = g.many([*out_w, *out_b]);
                linear_backward(&cache.fused, b, v.get(*out_w), n, dlogits, dw, db)
            };
            let mut out = Vec::with_capacity(layout.encoders.len());
            for ((enc, ids), hc) in cache.encoders.iter().zip(&layout.encoders).zip(pair_logits_cache) {
                let (hw, hb) = ids.head.expect("LLR head weights");
                let dz = llr_head_backward(hc, &dfused, n, cfg.llr_clamp);
                let [dw, db] = g.many([hw, hb]);
                out.push(linear_backward(&enc.pooled, b, v.get(hw), n, &dz, dw, db));
            }
            out
        }
        (
            HeadIds::Attention {
                wq,
                wk,
                wv,
                reduce_w,
                reduce_b,
                out_w,
                out_b,
            },
            HeadCache::Attention { hm, fwd },
        ) => {
            let dfused = {
                let [dw, db] = g.many([*out_w, *out_b]);
                linear_backward(&cache.fused, b, v.get(*out_w), n, dlogits, dw, db)
            };
            let a = cache.encoders.len();
            let [gq, gk, gv, grw, grb] = g.many([*wq, *wk, *wv, *reduce_w, *reduce_b]);
            let dhm = fuse_attention_backward(
                hm,
                b,
                a,
                d,
                AttentionParams {
                    wq: v.get(*wq),
                    wk: v.get(*wk),
                    wv: v.get(*wv),
                    reduce_w: v.get(*reduce_w),
                    reduce_b: v.get(*reduce_b),
                },
                fwd,
                &dfused,
                AttentionGrads {
                    wq: gq,
                    wk: gk,
                    wv: gv,
                    reduce_w: grw,
                    reduce_b: grb,
                },
            );
            (0..a)
                .map(|p| {
                    let mut dh = vec![0.0; b * d];
                    for r in 0..b {
                        dh[r * d..(r + 1) * d].copy_from_slice(&dhm[(r * a + p) * d..(r * a + p + 1) * d]);
                    }
                    dh
                })
                .collect()
        }
        _ => unreachable!("head cache matches layout"),
    };

    for (i, (enc, ids)) in cache.encoders.iter().zip(&layout.encoders).enumerate() {
        let t = enc.steps;
        let last = &enc.grus.last().expect("GRU layer").h;
        let mut dseq = {
            let [gw, gb, gv, ggate] = g.many([ids.pool_w, ids.pool_b, ids.pool_v, ids.gate]);
            attention_pool_backward(
                last,
                b,
                t,
                d,
                pool_params(&v, ids),
                &enc.pool,
                &dpooled[i],
                PoolGrads {
                    w: gw,
                    b: gb,
                    v: gv,
                    gate: &mut ggate[0],
                },
            )
        };
        let dims = GruDims {
            batch: b,
            steps: t,
            input: d,
            hidden: d,
        };
        for l in (0..ids.gru.len()).rev() {
            let input = if l == 0 { &enc.conv_out } else { &enc.grus[l - 1].h };
            let gids = &ids.gru[l];
            let [w_ih, w_hh, b_ih, b_hn] = g.many([gids.w_ih, gids.w_hh, gids.b_ih, gids.b_hn]);
            dseq = gru_backward(
                &dims,
                input,
                gru_params(&v, gids),
                &enc.grus[l],
                &dseq,
                GruGrads {
                    w_ih,
                    w_hh,
                    b_ih,
                    b_hn,
                },
            );
        }
        let subnet = &layout.subnets[ids.subnet];
        for (l, (lc, lids)) in enc.convs.iter().zip(&subnet.layers).enumerate().rev() {
            let shape = cfg.conv_shape(subnet.sensor, l);
            let bn = lc.bn.as_ref().expect("backward needs a training-mode forward");
            let mut dact = {
                let [dgamma, dbeta] = g.many([lids.gamma, lids.beta]);
                batchnorm_backward(bn, &dseq, d, v.get(lids.gamma), dgamma, dbeta)
            };
            relu_backward(&lc.pre, &mut dact);
            let mut dx = if l > 0 { vec![0.0; lc.input.len()] } else { Vec::new() };
            let [dw, db] = g.many([lids.w, lids.b]);
            conv1d_backward(
                &shape,
                &lc.input,
                b,
                lc.t_in,
                v.get(lids.w),
                &dact,
                dw,
                db,
                if l > 0 { Some(&mut dx) } else { None },
            )?;
            dseq = dx;
        }
    }
    Ok(())
}

/// Reference point for finite differences of the loss.
///
/// `L(theta +- h)` sits next to `L(theta)` and, like the summed LLRs and the
/// logits, is large compared with the change being measured, so subtracting
/// two loss values loses most of the significant digits. The difference is
/// instead carried through the head as exact algebraic deltas
/// (`z - z0 = W (f - f0) + (W - W0) f0 + (b - b0)`, log-ratios via `log1p`),
/// which keeps the rounding error proportional to the perturbation.
pub(super) struct DeltaBase {
    probs0: Vec<Vec<f64>>,
    fused0: Vec<f64>,
    softmax0: Vec<f64>,
    out_w0: Vec<f64>,
    out_b0: Vec<f64>,
    batch: usize,
}

impl DeltaBase {
    pub fn new(cfg: &ModelConfig, layout: &Layout, params: &ParamStore, head: &HeadCache, fused: Vec<f64>, logits: &[f64], batch: usize) -> Self {
        let n = cfg.num_classes;
        let (out_w, out_b) = final_layer(layout);
        let mut softmax0 = logits.to_vec();
        for row in softmax0.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let probs0 = match head {
            HeadCache::Llr { pair_logits_cache, .. } => pair_logits_cache.iter().map(|c| c.renorm.clone()).collect(),
            HeadCache::Attention { .. } => Vec::new(),
        };
        let v = params.values();
        DeltaBase {
            probs0,
            fused0: fused,
            softmax0,
            out_w0: v.get(out_w).to_vec(),
            out_b0: v.get(out_b).to_vec(),
            batch,
        }
    }

    /// `L(now) - L(base)` for the mean cross-entropy.
    pub fn loss_delta(&self, cfg: &ModelConfig, layout: &Layout, params: &ParamStore, head: &HeadCache, fused: &[f64], targets: &[usize]) -> f64 {
        let n = cfg.num_classes;
        let b = self.batch;
        let dfused: Vec<f64> = match head {
            HeadCache::Llr { pair_logits_cache, .. } => {
                let mut d = vec![0.0; b * n];
                for (c, q0) in pair_logits_cache.iter().zip(&self.probs0) {
                    for ((acc, &q), &q0) in d.iter_mut().zip(&c.renorm).zip(q0) {
                        let dq = q - q0;
                        if dq != 0.0 {
                            *acc += (dq / q0).ln_1p() - (-dq / (1.0 - q0)).ln_1p();
                        }
                    }
                }
                d
            }
            HeadCache::Attention { .. } => fused.iter().zip(&self.fused0).map(|(a, b)| a - b).collect(),
        };
        let (out_w, out_b) = final_layer(layout);
        let v = params.values();
        let w = v.get(out_w);
        let bias = v.get(out_b);
        let width = w.len() / n;
        let dw: Vec<f64> = w.iter().zip(&self.out_w0).map(|(a, b)| a - b).collect();
        let db: Vec<f64> = bias.iter().zip(&self.out_b0).map(|(a, b)| a - b).collect();
        let mut dz = linear_forward(&dfused, b, w, &db, n);
        gemm(
            1.0,
            MatRef::new(&self.fused0, b, width),
            MatRef::new(&dw, width, n),
            1.0,
            &mut dz,
            n,
        );
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &dz[r * n..(r + 1) * n];
            let p0 = &self.softmax0[r * n..(r + 1) * n];
            let s: f64 = row.iter().zip(p0).map(|(d, p)| p * d.exp_m1()).sum();
            total += s.ln_1p() - row[t];
        }
        total / b as f64
    }
}

fn final_layer(layout: &Layout) -> (crate::nn::ParamId, crate::nn::ParamId) {
    match layout.head {
        HeadIds::Llr { out_w, out_b } => (out_w, out_b),
        HeadIds::Attention { out_w, out_b, .. } => (out_w, out_b),
    }
}
