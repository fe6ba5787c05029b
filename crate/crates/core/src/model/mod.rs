//! The recognition network: one conv subnet per sensor type (shared across
//! hands), a GRU stack and attention pool per modality pair, and either the
//! LLR or the self-attention fusion head.

pub mod config;
pub mod fusion;
mod network;
mod state;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::gradcheck::{relative_error, GradCheckReport};
use crate::nn::init::uniform_fan_in;
use crate::nn::loss::cross_entropy_batch;
use crate::nn::{ParamId, ParamStore, Tensor};
use crate::types::{LabeledWindow, ModalityPair, SensorType};

pub use config::{FusionKind, ModelConfig};
pub use fusion::{clamp_renormalize, exact_sum, fuse_attention, fuse_llr, llr_per_pair, per_pair_class_probs};
pub use state::ModelState;

use network::{BufferMode, ForwardCache};

#[derive(Debug, Clone)]
struct ConvLayerIds {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: usize,
    running_var: usize,
}

#[derive(Debug, Clone)]
struct SubnetIds {
    sensor: SensorType,
    layers: Vec<ConvLayerIds>,
}

#[derive(Debug, Clone, Copy)]
struct GruIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hn: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderIds {
    pair: ModalityPair,
    subnet: usize,
    gru: Vec<GruIds>,
    pool_w: ParamId,
    pool_b: ParamId,
    pool_v: ParamId,
    gate: ParamId,
    /// Per-pair class head (LLR fusion only).
    head: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy)]
enum HeadIds {
    Llr {
        out_w: ParamId,
        out_b: ParamId,
    },
    Attention {
        wq: ParamId,
        wk: ParamId,
        wv: ParamId,
        reduce_w: ParamId,
        reduce_b: ParamId,
        out_w: ParamId,
        out_b: ParamId,
    },
}

#[derive(Debug, Clone)]
struct Layout {
    subnets: Vec<SubnetIds>,
    encoders: Vec<EncoderIds>,
    head: HeadIds,
}

/// Inputs for a batch of windows, one `[B x T x C]` buffer per active pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    size: usize,
    inputs: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Per-window network output with the interpretability fields of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub kind: FusionKind,
    pub pairs: Vec<ModalityPair>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Input of the final linear layer: summed LLRs (`[N]`) or the attention
    /// reduction (`[D]`).
    pub fused: Vec<f64>,
    /// `[pairs x N]`, LLR head only.
    pub per_pair_llr: Option<Tensor>,
    /// Clamped, renormalised per-pair class probabilities `[pairs x N]`, LLR head only.
    pub per_pair_probs: Option<Tensor>,
    /// `[pairs x pairs]`, self-attention head only.
    pub attention: Option<Tensor>,
}

impl FusionOutput {
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore,
    buffer_names: Vec<String>,
    buffers: Vec<Tensor>,
}

impl FusionModel {
    /// Builds a freshly initialised model. Weights are drawn from
    /// `U(-sqrt(1/fan_in), sqrt(1/fan_in))`, biases start at zero, batchnorm at
    /// identity and every attention-pool gate at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let config = config.normalized()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.feature_dim;
        let n = config.num_classes;
        let k = config.kernel_size;
        let mut params = ParamStore::new();
        let mut buffer_names = Vec::new();
        let mut buffers = Vec::new();

        let mut subnets = Vec::new();
        for sensor in config.active_sensors() {
            let mut layers = Vec::new();
            for l in 0..config.conv_layers {
                let shape = config.conv_shape(sensor, l);
                let pre = format!("conv.{}.{}", sensor.key(), l);
                let w = params.add(
                    format!("{pre}.weight"),
                    uniform_fan_in(&mut rng, &[k, shape.c_in, d], k * shape.c_in),
                );
                let b = params.add(format!("{pre}.bias"), Tensor::zeros(&[d]));
                let gamma = params.add(format!("{pre}.bn.gamma"), Tensor::from_vec(vec![1.0; d]));
                let beta = params.add(format!("{pre}.bn.beta"), Tensor::zeros(&[d]));
                buffer_names.push(format!("{pre}.bn.running_mean"));
                buffers.push(Tensor::zeros(&[d]));
                buffer_names.push(format!("{pre}.bn.running_var"));
                buffers.push(Tensor::from_vec(vec![1.0; d]));
                layers.push(ConvLayerIds {
                    w,
                    b,
                    gamma,
                    beta,
                    running_mean: buffers.len() - 2,
                    running_var: buffers.len() - 1,
                });
            }
            subnets.push(SubnetIds { sensor, layers });
        }

        let mut encoders = Vec::new();
        for &pair in &config.active_pairs {
            let pre = format!("enc.{}", pair.key());
            let mut gru = Vec::new();
            for l in 0..config.gru_layers {
                gru.push(GruIds {
                    w_ih: params.add(
                        format!("{pre}.gru{l}.w_ih"),
                        uniform_fan_in(&mut rng, &[d, 3 * d], d),
                    ),
                    w_hh: params.add(
                        format!("{pre}.gru{l}.w_hh"),
                        uniform_fan_in(&mut rng, &[d, 3 * d], d),
                    ),
                    b_ih: params.add(format!("{pre}.gru{l}.b_ih"), Tensor::zeros(&[3 * d])),
                    b_hn: params.add(format!("{pre}.gru{l}.b_hn"), Tensor::zeros(&[d])),
                });
            }
            let pool_w = params.add(format!("{pre}.pool.weight"), uniform_fan_in(&mut rng, &[d, d], d));
            let pool_b = params.add(format!("{pre}.pool.bias"), Tensor::zeros(&[d]));
            let pool_v = params.add(format!("{pre}.pool.score"), uniform_fan_in(&mut rng, &[d], d));
            let gate = params.add(format!("{pre}.pool.gate"), Tensor::zeros(&[1]));
            let head = match config.fusion {
                FusionKind::Llr => Some((
                    params.add(format!("{pre}.head.weight"), uniform_fan_in(&mut rng, &[d, n], d)),
                    params.add(format!("{pre}.head.bias"), Tensor::zeros(&[n])),
                )),
                FusionKind::SelfAttention => None,
            };
            let subnet = subnets
                .iter()
                .position(|s| s.sensor == pair.sensor)
                .expect("subnet for every active sensor");
            encoders.push(EncoderIds {
                pair,
                subnet,
                gru,
                pool_w,
                pool_b,
                pool_v,
                gate,
                head,
            });
        }

        let head = match config.fusion {
            FusionKind::Llr => HeadIds::Llr {
                out_w: params.add("fusion.llr.out.weight", uniform_fan_in(&mut rng, &[n, n], n)),
                out_b: params.add("fusion.llr.out.bias", Tensor::zeros(&[n])),
            },
            FusionKind::SelfAttention => {
                let a = encoders.len();
                HeadIds::Attention {
                    wq: params.add("fusion.attn.q", uniform_fan_in(&mut rng, &[d, d], d)),
                    wk: params.add("fusion.attn.k", uniform_fan_in(&mut rng, &[d, d], d)),
                    wv: params.add("fusion.attn.v", uniform_fan_in(&mut rng, &[d, d], d)),
                    reduce_w: params.add(
                        "fusion.attn.reduce.weight",
                        uniform_fan_in(&mut rng, &[a * d, d], a * d),
                    ),
                    reduce_b: params.add("fusion.attn.reduce.bias", Tensor::zeros(&[d])),
                    out_w: params.add("fusion.attn.out.weight", uniform_fan_in(&mut rng, &[d, n], d)),
                    out_b: params.add("fusion.attn.out.bias", Tensor::zeros(&[n])),
                }
            }
        };

        Ok(FusionModel {
            config,
            layout: Layout {
                subnets,
                encoders,
                head,
            },
            params,
            buffer_names,
            buffers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> FusionKind {
        self.config.fusion
    }

    pub fn active_pairs(&self) -> &[ModalityPair] {
        &self.config.active_pairs
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Batchnorm running statistics as `(name, tensor)`.
    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffer_names.iter().map(String::as_str).zip(&self.buffers)
    }

    /// Packs windows into per-pair input buffers, checking every shape.
    pub fn make_batch(&self, windows: &[&LabeledWindow]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(self.config.active_pairs.len());
        for &pair in &self.config.active_pairs {
            let (t, c) = self.config.input_shape(pair);
            let mut buf = Vec::with_capacity(windows.len() * t * c);
            for w in windows {
                let x = w.inputs.get(&pair).ok_or(Error::MissingModality(pair))?;
                check_input(pair, x, t, c)?;
                buf.extend_from_slice(x.data());
            }
            inputs.push(buf);
        }
        Ok(Batch {
            size: windows.len(),
            inputs,
        })
    }

    /// Class indices of labelled windows; the null class is rejected.
    pub fn targets(&self, windows: &[&LabeledWindow]) -> Result<Vec<usize>> {
        windows
            .iter()
            .map(|w| {
                let i = w.label.index();
                if w.label.is_null() || i >= self.config.num_classes {
                    Err(Error::Precondition(format!(
                        "window label {} is not a trainable class",
                        w.label.name()
                    )))
                } else {
                    Ok(i)
                }
            })
            .collect()
    }

    /// Inference on one window.
    pub fn forward(&self, window: &LabeledWindow) -> Result<FusionOutput> {
        let batch = self.make_batch(&[window])?;
        Ok(self.forward_batch(&batch)?.pop().expect("one output"))
    }

    /// Inference on a batch (batchnorm uses running statistics).
    pub fn forward_batch(&self, batch: &Batch) -> Result<Vec<FusionOutput>> {
        let cache = network::forward(
            &self.config,
            &self.layout,
            &self.params,
            &mut BufferMode::Eval(&self.buffers),
            batch,
        )?;
        Ok(cache.outputs(&self.config))
    }

    /// Batch-mean cross-entropy of a training-mode forward pass (batch
    /// statistics in batchnorm; running statistics are left untouched).
    pub fn train_loss(&self, batch: &Batch, targets: &[usize]) -> Result<f64> {
        let mut scratch = self.buffers.clone();
        let cache = network::forward(
            &self.config,
            &self.layout,
            &self.params,
            &mut BufferMode::Train(&mut scratch),
            batch,
        )?;
        Ok(cross_entropy_batch(&cache.logits, self.config.num_classes, targets)?.0)
    }

    /// Training-mode forward and backward. Adds the loss gradient to the
    /// parameter gradients, updates batchnorm running statistics and returns
    /// the loss.
    pub fn accumulate_gradients(&mut self, batch: &Batch, targets: &[usize]) -> Result<f64> {
        let cache = self.forward_train(batch)?;
        let (loss, dlogits) = cross_entropy_batch(&cache.logits, self.config.num_classes, targets)?;
        network::backward(&self.config, &self.layout, &mut self.params, &cache, &dlogits)?;
        Ok(loss)
    }

    fn forward_train(&mut self, batch: &Batch) -> Result<ForwardCache> {
        network::forward(
            &self.config,
            &self.layout,
            &self.params,
            &mut BufferMode::Train(&mut self.buffers),
            batch,
        )
    }

    /// Per-pair embedding `h_{p,s}` of a single `[T x C]` input (inference mode).
    pub fn encode_modality(&self, pair: ModalityPair, x: &Tensor) -> Result<Vec<f64>> {
        let i = self.encoder_index(pair)?;
        let (t, c) = self.config.input_shape(pair);
        check_input(pair, x, t, c)?;
        let enc = network::encode(
            &self.config,
            &self.layout,
            &self.params,
            &mut BufferMode::Eval(&self.buffers),
            i,
            x.data(),
            1,
        )?;
        Ok(enc.pooled)
    }

    /// Output of the conv subnet for `pair`, `[T* x D]` (inference mode).
    pub fn conv_features(&self, pair: ModalityPair, x: &Tensor) -> Result<Vec<f64>> {
        let i = self.encoder_index(pair)?;
        let (t, c) = self.config.input_shape(pair);
        check_input(pair, x, t, c)?;
        let enc = network::encode(
            &self.config,
            &self.layout,
            &self.params,
            &mut BufferMode::Eval(&self.buffers),
            i,
            x.data(),
            1,
        )?;
        Ok(enc.conv_out)
    }

    fn encoder_index(&self, pair: ModalityPair) -> Result<usize> {
        self.config
            .active_pairs
            .iter()
            .position(|p| *p == pair)
            .ok_or(Error::MissingModality(pair))
    }

    /// Compares the analytic gradient of [`train_loss`](Self::train_loss)
    /// with central differences over every parameter.
    ///
    /// A perturbed parameter only re-runs the encoders it feeds, from the
    /// layer it belongs to (and the head); everything upstream is reused.
    /// Coordinates whose `+-h` evaluations switch a ReLU or probability
    /// clamp are counted in `skipped_kinks` instead of being compared.
    pub fn gradient_check(&mut self, batch: &Batch, targets: &[usize], h: f64) -> Result<GradCheckReport> {
        let saved = self.buffers.clone();
        self.params.zero_grads();
        self.accumulate_gradients(batch, targets)?;
        self.buffers = saved;
        let analytic = self.params.flat_grads();
        self.params.zero_grads();

        let owners = self.param_owners();
        let mut scratch = self.buffers.clone();
        let mut base = Vec::with_capacity(self.layout.encoders.len());
        for (i, x) in batch.inputs.iter().enumerate() {
            base.push(network::encode(
                &self.config,
                &self.layout,
                &self.params,
                &mut BufferMode::Train(&mut scratch),
                i,
                x,
                batch.size,
            )?);
        }
        let pooled0: Vec<&[f64]> = base.iter().map(|e| &e.pooled[..]).collect();
        let (head0, fused0, logits0) =
            network::head_forward(&self.config, &self.layout, &self.params, &pooled0, batch.size);
        let reference = {
            let mut k = network::Fingerprint::default();
            base.iter().for_each(|e| k.add_word(e.kinks));
            k.add_word(head0.kinks(self.config.llr_clamp));
            k.0
        };
        let delta = network::DeltaBase::new(&self.config, &self.layout, &self.params, &head0, fused0, &logits0, batch.size);
        drop(pooled0);

        let mut evaluate = |model: &FusionModel, touched: &[(usize, network::Stage)]| -> Result<(f64, u64)> {
            let mut fresh = Vec::with_capacity(touched.len());
            for &(e, stage) in touched {
                fresh.push(network::encode_from(
                    &model.config,
                    &model.layout,
                    &model.params,
                    &mut scratch,
                    e,
                    batch.size,
                    &base[e],
                    stage,
                )?);
            }
            let mut kinks = network::Fingerprint::default();
            let mut pooled: Vec<&[f64]> = Vec::with_capacity(base.len());
            for (e, enc) in base.iter().enumerate() {
                match touched.iter().position(|&(t, _)| t == e) {
                    Some(k) => {
                        kinks.add_word(fresh[k].kinks);
                        pooled.push(&fresh[k].pooled);
                    }
                    None => {
                        kinks.add_word(enc.kinks);
                        pooled.push(&enc.pooled);
                    }
                }
            }
            let (head, fused, _) =
                network::head_forward(&model.config, &model.layout, &model.params, &pooled, batch.size);
            kinks.add_word(head.kinks(model.config.llr_clamp));
            let d = delta.loss_delta(&model.config, &model.layout, &model.params, &head, &fused, targets);
            Ok((d, kinks.0))
        };

        let mut report = GradCheckReport::empty();
        let ids: Vec<ParamId> = self.params.ids().collect();
        let mut i = 0;
        for (id, touched) in ids.into_iter().zip(owners) {
            for _ in 0..self.params.value(id).len() {
                let x0 = self.params.set_flat(i, 0.0);
                self.params.set_flat(i, x0 + h);
                let (fp, kp) = evaluate(self, &touched)?;
                self.params.set_flat(i, x0 - h);
                let (fm, km) = evaluate(self, &touched)?;
                self.params.set_flat(i, x0);
                let smooth = kp == reference && km == reference;
                if !smooth {
                    report.skipped_kinks += 1;
                } else {
                    let num = (fp - fm) / (2.0 * h);
                    let e = relative_error(analytic[i], num);
                    report.record_magnitude(analytic[i], num, e);
                    if e > report.max_rel_error || report.checked == 0 {
                        report.max_rel_error = e;
                        report.worst_index = i;
                        report.analytic = analytic[i];
                        report.numeric = num;
                    }
                    report.checked += 1;
                }
                i += 1;
            }
        }
        Ok(report)
    }

    /// For each parameter, the encoders whose output depends on it and the
    /// stage they must be re-run from.
    fn param_owners(&self) -> Vec<Vec<(usize, network::Stage)>> {
        use network::Stage;
        let mut owners = vec![Vec::new(); self.params.len()];
        for (e, enc) in self.layout.encoders.iter().enumerate() {
            for (l, ids) in self.layout.subnets[enc.subnet].layers.iter().enumerate() {
                for id in [ids.w, ids.b, ids.gamma, ids.beta] {
                    owners[id.index()].push((e, Stage::Conv(l)));
                }
            }
            for (k, g) in enc.gru.iter().enumerate() {
                for id in [g.w_ih, g.w_hh, g.b_ih, g.b_hn] {
                    owners[id.index()].push((e, Stage::Gru(k)));
                }
            }
            for id in [enc.pool_w, enc.pool_b, enc.pool_v, enc.gate] {
                owners[id.index()].push((e, Stage::Pool));
            }
        }
        owners
    }

    /// Name of the parameter holding flat index `i`.
    pub fn flat_param_name(&self, mut i: usize) -> Option<&str> {
        for id in self.params.ids() {
            let n = self.params.value(id).len();
            if i < n {
                return Some(self.params.name(id));
            }
            i -= n;
        }
        None
    }
}

fn check_input(pair: ModalityPair, x: &Tensor, t: usize, c: usize) -> Result<()> {
    if x.shape() != [t, c] {
        return Err(Error::Shape(format!(
            "{}: expected input [{t} x {c}], got {:?}",
            pair.key(),
            x.shape()
        )));
    }
    Ok(())
}
