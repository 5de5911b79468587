//! One full network of the chain: conv stages into fully connected stages,
//! ending in per-position category scores over the inner pattern.
//!
//! Every conv stage is conv -> batch norm -> activation, optionally followed
//! by 2x2x2 max pooling. Hidden fully connected stages are fc -> batch norm ->
//! activation; the output stage is linear by default so the softmax sees
//! unrestricted logits. `strict_final` restores batch norm plus activation on
//! the output stage for comparison runs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::adam::{AdamParams, AdamState};
use crate::nn::batchnorm::{BatchNorm, BnGrads, BnTrace};
use crate::nn::conv::{ConvGrads, ConvLayer};
use crate::nn::fc::{FcGrads, FcLayer};
use crate::nn::pool::{maxpool_backward, maxpool_forward, pooled_dims, PoolTrace};
use crate::nn::softmax::softmax;
use crate::tensor::TensorBlock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub in_channels: usize,
    pub sg: [usize; 3],
    pub ip: [usize; 3],
    pub k: usize,
    /// Feature maps per conv stage.
    pub conv_maps: Vec<usize>,
    /// Pool flag per conv stage, same length as `conv_maps`.
    pub pool_after: Vec<bool>,
    /// Hidden fully connected widths; the output width `k * |ip|` is implied.
    pub fc_hidden: Vec<usize>,
    pub filter: [usize; 3],
    pub activation: Activation,
    pub bn_momentum: f64,
    /// Batch norm + activation on the output stage instead of a linear head.
    pub strict_final: bool,
}

impl StackConfig {
    pub fn ip_len(&self) -> usize {
        self.ip[0] * self.ip[1] * self.ip[2]
    }

    pub fn output_dim(&self) -> usize {
        self.k * self.ip_len()
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.k == 0 {
            return Err(Error::InvalidArg("channels and categories must be positive".into()));
        }
        if self.conv_maps.is_empty() || self.conv_maps.contains(&0) {
            return Err(Error::InvalidArg(format!(
                "conv_maps must be non-empty positive, got {:?}",
                self.conv_maps
            )));
        }
        if self.pool_after.len() != self.conv_maps.len() {
            return Err(Error::InvalidArg(format!(
                "pool_after length {} != conv stages {}",
                self.pool_after.len(),
                self.conv_maps.len()
            )));
        }
        if self.fc_hidden.contains(&0) {
            return Err(Error::InvalidArg("fc widths must be positive".into()));
        }
        for a in 0..3 {
            if self.sg[a].is_multiple_of(2) || self.ip[a].is_multiple_of(2) || self.ip[a] > self.sg[a] {
                return Err(Error::InvalidArg(format!(
                    "sg {:?} / ip {:?} must be odd with ip inside sg",
                    self.sg, self.ip
                )));
            }
        }
        Ok(())
    }
}

/// Raw per-position logits over the inner pattern; position-major, the `k`
/// class scores of one node are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    ip: [usize; 3],
    k: usize,
    logits: Vec<f64>,
}

impl ScoreField {
    pub fn new(ip: [usize; 3], k: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != ip[0] * ip[1] * ip[2] * k {
            return Err(Error::Shape(format!(
                "score field needs {} logits, got {}",
                ip[0] * ip[1] * ip[2] * k,
                logits.len()
            )));
        }
        Ok(ScoreField { ip, k, logits })
    }

    pub fn ip(&self) -> [usize; 3] {
        self.ip
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn positions(&self) -> usize {
        self.ip[0] * self.ip[1] * self.ip[2]
    }

    /// Flat index of the central inner-pattern node.
    pub fn center_pos(&self) -> usize {
        self.ip[0] / 2 + self.ip[0] * (self.ip[1] / 2 + self.ip[1] * (self.ip[2] / 2))
    }

    pub fn logits_at(&self, pos: usize) -> &[f64] {
        &self.logits[pos * self.k..(pos + 1) * self.k]
    }

    /// Softmax class probabilities at one inner-pattern position.
    pub fn probs_at(&self, pos: usize) -> Vec<f64> {
        softmax(self.logits_at(pos))
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

struct ConvStage {
    conv: ConvLayer,
    bn: BatchNorm,
    pool: bool,
}

struct FcStage {
    fc: FcLayer,
    bn: Option<BatchNorm>,
    activated: bool,
}

pub struct CnnStack {
    config: StackConfig,
    conv: Vec<ConvStage>,
    fc: Vec<FcStage>,
    /// Spatial dims after each conv stage (post pool).
    stage_dims: Vec<[usize; 3]>,
    flatten_dim: usize,
}

impl std::fmt::Debug for CnnStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "CnnStack({} ch x {:?} -> {} conv + {} fc stages, {} params)",
            self.config.in_channels,
            self.config.sg,
            self.conv.len(),
            self.fc.len(),
            self.num_params()
        )
    }
}

struct ConvStageTrace {
    inputs: Vec<TensorBlock>,
    bn: BnTrace,
    /// Batch-norm outputs, the activation's inputs.
    act_in: Vec<TensorBlock>,
    pool: Option<Vec<PoolTrace>>,
}

struct FcStageTrace {
    inputs: Vec<TensorBlock>,
    bn: Option<BnTrace>,
    act_in: Option<Vec<TensorBlock>>,
}

/// Everything the backward pass needs from one training forward pass.
pub struct StackTrace {
    conv: Vec<ConvStageTrace>,
    fc: Vec<FcStageTrace>,
}

/// Parameter gradients accumulated over a batch, stage by stage.
pub struct StackGrads {
    pub conv: Vec<(ConvGrads, BnGrads)>,
    pub fc: Vec<(FcGrads, Option<BnGrads>)>,
}

impl StackGrads {
    /// Gradient buffers in the fixed order of [`CnnStack::param_buffers`].
    pub fn buffers(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, (cg, bg)) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.weights"), &cg.weights));
            out.push((format!("conv{i}.bias"), &cg.bias));
            out.push((format!("conv{i}.bn.gamma"), &bg.gamma));
            out.push((format!("conv{i}.bn.beta"), &bg.beta));
        }
        for (j, (fg, bg)) in self.fc.iter().enumerate() {
            out.push((format!("fc{j}.weights"), &fg.weights));
            out.push((format!("fc{j}.bias"), &fg.bias));
            if let Some(bg) = bg {
                out.push((format!("fc{j}.bn.gamma"), &bg.gamma));
                out.push((format!("fc{j}.bn.beta"), &bg.beta));
            }
        }
        out
    }
}

/// Streaming re-estimation of the batch-norm running statistics under fixed
/// weights. The exponential averages maintained during training trail the
/// weights they describe, which skews inference-mode outputs; feeding an
/// epoch's batches through [`StatsRecalibration::observe`] and then
/// [`StatsRecalibration::commit`] replaces every running moment with the
/// equal-weight average of the batch moments produced by the current weights.
pub struct StatsRecalibration {
    conv: Vec<(Vec<f64>, Vec<f64>)>,
    fc: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    batches: usize,
}

impl StatsRecalibration {
    /// Run one batch in training mode and pool its per-layer moments. The
    /// exponential updates this also triggers are overwritten by `commit`.
    pub fn observe(&mut self, stack: &mut CnnStack, batch: &[TensorBlock]) -> Result<()> {
        let (_, trace) = stack.forward_train(batch)?;
        if trace.conv.len() != self.conv.len() || trace.fc.len() != self.fc.len() {
            return Err(Error::State(
                "statistics recalibration bound to a different stack shape".into(),
            ));
        }
        for (acc, st) in self.conv.iter_mut().zip(&trace.conv) {
            pool_moments(acc, st.bn.batch_mean(), st.bn.batch_var())?;
        }
        for (acc, st) in self.fc.iter_mut().zip(&trace.fc) {
            match (acc, &st.bn) {
                (Some(acc), Some(tr)) => pool_moments(acc, tr.batch_mean(), tr.batch_var())?,
                (None, None) => {}
                _ => {
                    return Err(Error::State(
                        "statistics recalibration bound to a different stack shape".into(),
                    ))
                }
            }
        }
        self.batches += 1;
        Ok(())
    }

    /// Write the averaged moments back as the running statistics.
    pub fn commit(self, stack: &mut CnnStack) -> Result<()> {
        if self.batches == 0 {
            return Err(Error::State("statistics recalibration saw no batches".into()));
        }
        let n = self.batches as f64;
        let scaled = |mut acc: (Vec<f64>, Vec<f64>)| {
            for v in acc.0.iter_mut().chain(acc.1.iter_mut()) {
                *v /= n;
            }
            acc
        };
        for (stage, acc) in stack.conv.iter_mut().zip(self.conv) {
            let (mean, var) = scaled(acc);
            stage.bn.set_running(&mean, &var)?;
        }
        for (stage, acc) in stack.fc.iter_mut().zip(self.fc) {
            if let (Some(bn), Some(acc)) = (stage.bn.as_mut(), acc) {
                let (mean, var) = scaled(acc);
                bn.set_running(&mean, &var)?;
            }
        }
        Ok(())
    }
}

fn pool_moments(acc: &mut (Vec<f64>, Vec<f64>), mean: &[f64], var: &[f64]) -> Result<()> {
    if acc.0.len() != mean.len() || acc.1.len() != var.len() {
        return Err(Error::State(
            "statistics recalibration bound to a different stack shape".into(),
        ));
    }
    for (a, v) in acc.0.iter_mut().zip(mean) {
        *a += v;
    }
    for (a, v) in acc.1.iter_mut().zip(var) {
        *a += v;
    }
    Ok(())
}

fn sample_truncated_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("std must be finite positive");
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

impl CnnStack {
    pub fn new(config: StackConfig) -> Result<Self> {
        config.validate()?;
        let mut conv = Vec::with_capacity(config.conv_maps.len());
        let mut stage_dims = Vec::with_capacity(config.conv_maps.len());
        let mut dims = config.sg;
        let mut in_c = config.in_channels;
        for (s, &maps) in config.conv_maps.iter().enumerate() {
            conv.push(ConvStage {
                conv: ConvLayer::new(in_c, maps, config.filter)?,
                bn: BatchNorm::new(maps, config.bn_momentum),
                pool: config.pool_after[s],
            });
            if config.pool_after[s] {
                dims = pooled_dims(dims);
            }
            stage_dims.push(dims);
            in_c = maps;
        }
        let flatten_dim = in_c * dims[0] * dims[1] * dims[2];

        let mut fc = Vec::new();
        let mut in_d = flatten_dim;
        for &w in &config.fc_hidden {
            fc.push(FcStage {
                fc: FcLayer::new(in_d, w),
                bn: Some(BatchNorm::new(w, config.bn_momentum)),
                activated: true,
            });
            in_d = w;
        }
        let out_dim = config.output_dim();
        fc.push(FcStage {
            fc: FcLayer::new(in_d, out_dim),
            bn: config
                .strict_final
                .then(|| BatchNorm::new(out_dim, config.bn_momentum)),
            activated: config.strict_final,
        });

        Ok(CnnStack {
            config,
            conv,
            fc,
            stage_dims,
            flatten_dim,
        })
    }

    pub fn config(&self) -> &StackConfig {
        &self.config
    }

    pub fn flatten_dim(&self) -> usize {
        self.flatten_dim
    }

    /// Weights and biases from truncated normal draws (std `sqrt(2/fan_in)`,
    /// resampled beyond two sigma), zero biases, fresh batch-norm state.
    pub fn init_parameters<R: Rng>(&mut self, rng: &mut R) {
        for stage in &mut self.conv {
            let std = (2.0 / stage.conv.fan_in() as f64).sqrt();
            for w in &mut stage.conv.weights {
                *w = sample_truncated_normal(rng, std);
            }
            stage.conv.bias.fill(0.0);
            stage.bn = BatchNorm::new(stage.bn.channels(), self.config.bn_momentum);
        }
        for stage in &mut self.fc {
            let std = (2.0 / stage.fc.in_dim() as f64).sqrt();
            for w in &mut stage.fc.weights {
                *w = sample_truncated_normal(rng, std);
            }
            stage.fc.bias.fill(0.0);
            if let Some(bn) = &mut stage.bn {
                *bn = BatchNorm::new(bn.channels(), self.config.bn_momentum);
            }
        }
    }

    fn check_input(&self, input: &TensorBlock) -> Result<()> {
        if input.channels() != self.config.in_channels || input.dims() != self.config.sg {
            return Err(Error::Shape(format!(
                "stack expects {} channels x {:?}, got {} x {:?}",
                self.config.in_channels,
                self.config.sg,
                input.channels(),
                input.dims()
            )));
        }
        Ok(())
    }

    /// Batch forward in training mode: batch-norm uses batch moments and
    /// updates its running averages. Returns per-element score fields and the
    /// trace consumed by [`CnnStack::backward`].
    pub fn forward_train(
        &mut self,
        batch: &[TensorBlock],
    ) -> Result<(Vec<ScoreField>, StackTrace)> {
        if batch.is_empty() {
            return Err(Error::Shape("forward on empty batch".into()));
        }
        for b in batch {
            self.check_input(b)?;
        }
        let act = self.config.activation;
        let mut current: Vec<TensorBlock> = batch.to_vec();
        let mut conv_traces = Vec::with_capacity(self.conv.len());
        for stage in &mut self.conv {
            let inputs = current;
            let mut z = Vec::with_capacity(inputs.len());
            for b in &inputs {
                z.push(stage.conv.forward(b)?);
            }
            let (bn_out, bn_trace) = stage.bn.forward_train(&z)?;
            let act_in = bn_out;
            let mut activated = act_in.clone();
            for t in &mut activated {
                act.apply_slice(t.data_mut());
            }
            let (next, pool_traces) = if stage.pool {
                let mut outs = Vec::with_capacity(activated.len());
                let mut traces = Vec::with_capacity(activated.len());
                for t in &activated {
                    let (o, tr) = maxpool_forward(t);
                    outs.push(o);
                    traces.push(tr);
                }
                (outs, Some(traces))
            } else {
                (activated, None)
            };
            conv_traces.push(ConvStageTrace {
                inputs,
                bn: bn_trace,
                act_in,
                pool: pool_traces,
            });
            current = next;
        }

        let mut current: Vec<TensorBlock> = current.into_iter().map(|t| t.flatten()).collect();
        let mut fc_traces = Vec::with_capacity(self.fc.len());
        for stage in &mut self.fc {
            let inputs = current;
            let mut z = Vec::with_capacity(inputs.len());
            for b in &inputs {
                z.push(stage.fc.forward(b)?);
            }
            let (out, bn_trace, act_in) = if let Some(bn) = &mut stage.bn {
                let (bn_out, tr) = bn.forward_train(&z)?;
                let act_in = bn_out;
                let mut activated = act_in.clone();
                for t in &mut activated {
                    act.apply_slice(t.data_mut());
                }
                (activated, Some(tr), Some(act_in))
            } else if stage.activated {
                let act_in = z;
                let mut activated = act_in.clone();
                for t in &mut activated {
                    act.apply_slice(t.data_mut());
                }
                (activated, None, Some(act_in))
            } else {
                (z, None, None)
            };
            fc_traces.push(FcStageTrace {
                inputs,
                bn: bn_trace,
                act_in,
            });
            current = out;
        }

        let fields = current
            .into_iter()
            .map(|t| ScoreField::new(self.config.ip, self.config.k, t.into_data()))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            fields,
            StackTrace {
                conv: conv_traces,
                fc: fc_traces,
            },
        ))
    }

    /// Single-input forward in inference mode: batch norm reads its running
    /// averages and nothing is mutated.
    pub fn forward_infer(&self, input: &TensorBlock) -> Result<ScoreField> {
        self.check_input(input)?;
        let act = self.config.activation;
        let mut t = input.clone();
        for stage in &self.conv {
            t = stage.conv.forward(&t)?;
            t = stage.bn.forward_infer(&t)?;
            act.apply_slice(t.data_mut());
            if stage.pool {
                t = maxpool_forward(&t).0;
            }
        }
        let mut t = t.flatten();
        for stage in &self.fc {
            t = stage.fc.forward(&t)?;
            if let Some(bn) = &stage.bn {
                t = bn.forward_infer(&t)?;
            }
            if stage.activated {
                act.apply_slice(t.data_mut());
            }
        }
        ScoreField::new(self.config.ip, self.config.k, t.into_data())
    }

    /// Shape-matched accumulator for [`StatsRecalibration`].
    pub fn stats_recalibration(&self) -> StatsRecalibration {
        StatsRecalibration {
            conv: self
                .conv
                .iter()
                .map(|s| {
                    let c = s.bn.channels();
                    (vec![0.0; c], vec![0.0; c])
                })
                .collect(),
            fc: self
                .fc
                .iter()
                .map(|s| {
                    s.bn.as_ref().map(|bn| {
                        let c = bn.channels();
                        (vec![0.0; c], vec![0.0; c])
                    })
                })
                .collect(),
            batches: 0,
        }
    }

    /// Backpropagate per-element logit gradients through the whole stack,
    /// summing parameter gradients over the batch.
    pub fn backward(&self, trace: &StackTrace, grad_logits: &[Vec<f64>]) -> Result<StackGrads> {
        if trace.fc.len() != self.fc.len() || trace.conv.len() != self.conv.len() {
            return Err(Error::State("trace does not match stack shape".into()));
        }
        let batch_n = grad_logits.len();
        if batch_n != trace.fc[0].inputs.len() {
            return Err(Error::Shape(format!(
                "{} logit grads for batch of {}",
                batch_n,
                trace.fc[0].inputs.len()
            )));
        }
        let act = self.config.activation;
        let mut g: Vec<TensorBlock> = grad_logits
            .iter()
            .map(|v| {
                if v.len() != self.config.output_dim() {
                    return Err(Error::Shape(format!(
                        "logit grad length {} != {}",
                        v.len(),
                        self.config.output_dim()
                    )));
                }
                Ok(TensorBlock::from_vec(v.clone()))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut fc_grads: Vec<(FcGrads, Option<BnGrads>)> = Vec::with_capacity(self.fc.len());
        for (stage, st) in self.fc.iter().zip(&trace.fc).rev() {
            if let Some(act_in) = &st.act_in {
                for (gt, at) in g.iter_mut().zip(act_in) {
                    for (gv, av) in gt.data_mut().iter_mut().zip(at.data()) {
                        *gv *= act.derivative(*av);
                    }
                }
            }
            let bn_grads = if let Some(bn) = &stage.bn {
                let (gin, bg) = bn.backward(st.bn.as_ref().expect("bn trace"), &g)?;
                g = gin;
                Some(bg)
            } else {
                None
            };
            let mut acc = FcGrads {
                weights: vec![0.0; stage.fc.weights.len()],
                bias: vec![0.0; stage.fc.bias.len()],
            };
            let mut gin_batch = Vec::with_capacity(batch_n);
            for (input, gt) in st.inputs.iter().zip(&g) {
                let (gin, fg) = stage.fc.backward(input, gt)?;
                for (a, b) in acc.weights.iter_mut().zip(&fg.weights) {
                    *a += b;
                }
                for (a, b) in acc.bias.iter_mut().zip(&fg.bias) {
                    *a += b;
                }
                gin_batch.push(gin);
            }
            g = gin_batch;
            fc_grads.push((acc, bn_grads));
        }
        fc_grads.reverse();

        // restore the conv shape the flatten erased
        let last_maps = *self.config.conv_maps.last().expect("conv stages");
        let last_dims = *self.stage_dims.last().expect("conv stages");
        g = g
            .into_iter()
            .map(|t| TensorBlock::from_data(last_maps, last_dims, t.into_data()))
            .collect::<Result<Vec<_>>>()?;

        let mut conv_grads: Vec<(ConvGrads, BnGrads)> = Vec::with_capacity(self.conv.len());
        for (stage, st) in self.conv.iter().zip(&trace.conv).rev() {
            if let Some(pool_traces) = &st.pool {
                let mut unpooled = Vec::with_capacity(batch_n);
                for (tr, gt) in pool_traces.iter().zip(&g) {
                    unpooled.push(maxpool_backward(tr, gt)?);
                }
                g = unpooled;
            }
            for (gt, at) in g.iter_mut().zip(&st.act_in) {
                for (gv, av) in gt.data_mut().iter_mut().zip(at.data()) {
                    *gv *= act.derivative(*av);
                }
            }
            let (gin, bn_g) = stage.bn.backward(&st.bn, &g)?;
            g = gin;
            let mut acc = ConvGrads {
                weights: vec![0.0; stage.conv.weights.len()],
                bias: vec![0.0; stage.conv.bias.len()],
            };
            let mut gin_batch = Vec::with_capacity(batch_n);
            for (input, gt) in st.inputs.iter().zip(&g) {
                let (gin, cg) = stage.conv.backward(input, gt)?;
                for (a, b) in acc.weights.iter_mut().zip(&cg.weights) {
                    *a += b;
                }
                for (a, b) in acc.bias.iter_mut().zip(&cg.bias) {
                    *a += b;
                }
                gin_batch.push(gin);
            }
            g = gin_batch;
            conv_grads.push((acc, bn_g));
        }
        conv_grads.reverse();

        Ok(StackGrads {
            conv: conv_grads,
            fc: fc_grads,
        })
    }

    /// Trainable buffers in a fixed, checkpoint-stable order.
    pub fn param_buffers(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, s) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.weights"), &s.conv.weights));
            out.push((format!("conv{i}.bias"), &s.conv.bias));
            out.push((format!("conv{i}.bn.gamma"), &s.bn.gamma));
            out.push((format!("conv{i}.bn.beta"), &s.bn.beta));
        }
        for (j, s) in self.fc.iter().enumerate() {
            out.push((format!("fc{j}.weights"), &s.fc.weights));
            out.push((format!("fc{j}.bias"), &s.fc.bias));
            if let Some(bn) = &s.bn {
                out.push((format!("fc{j}.bn.gamma"), &bn.gamma));
                out.push((format!("fc{j}.bn.beta"), &bn.beta));
            }
        }
        out
    }

    pub fn param_buffers_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, s) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{i}.weights"), s.conv.weights.as_mut_slice()));
            out.push((format!("conv{i}.bias"), s.conv.bias.as_mut_slice()));
            out.push((format!("conv{i}.bn.gamma"), s.bn.gamma.as_mut_slice()));
            out.push((format!("conv{i}.bn.beta"), s.bn.beta.as_mut_slice()));
        }
        for (j, s) in self.fc.iter_mut().enumerate() {
            out.push((format!("fc{j}.weights"), s.fc.weights.as_mut_slice()));
            out.push((format!("fc{j}.bias"), s.fc.bias.as_mut_slice()));
            if let Some(bn) = &mut s.bn {
                out.push((format!("fc{j}.bn.gamma"), bn.gamma.as_mut_slice()));
                out.push((format!("fc{j}.bn.beta"), bn.beta.as_mut_slice()));
            }
        }
        out
    }

    /// Non-trainable batch-norm running averages, for checkpointing.
    pub fn state_buffers(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, s) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.bn.running_mean"), &s.bn.running_mean));
            out.push((format!("conv{i}.bn.running_var"), &s.bn.running_var));
        }
        for (j, s) in self.fc.iter().enumerate() {
            if let Some(bn) = &s.bn {
                out.push((format!("fc{j}.bn.running_mean"), &bn.running_mean));
                out.push((format!("fc{j}.bn.running_var"), &bn.running_var));
            }
        }
        out
    }

    pub fn state_buffers_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, s) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{i}.bn.running_mean"), s.bn.running_mean.as_mut_slice()));
            out.push((format!("conv{i}.bn.running_var"), s.bn.running_var.as_mut_slice()));
        }
        for (j, s) in self.fc.iter_mut().enumerate() {
            if let Some(bn) = &mut s.bn {
                out.push((format!("fc{j}.bn.running_mean"), bn.running_mean.as_mut_slice()));
                out.push((format!("fc{j}.bn.running_var"), bn.running_var.as_mut_slice()));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_buffers().iter().map(|(_, b)| b.len()).sum()
    }
}

/// Adam moments for every parameter buffer of one stack, in buffer order.
pub struct StackAdam {
    states: Vec<AdamState>,
}

impl StackAdam {
    pub fn new(stack: &CnnStack) -> Self {
        StackAdam {
            states: stack
                .param_buffers()
                .iter()
                .map(|(_, b)| AdamState::new(b.len()))
                .collect(),
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [AdamState] {
        &mut self.states
    }

    pub fn step(
        &mut self,
        stack: &mut CnnStack,
        grads: &StackGrads,
        hp: &AdamParams,
    ) -> Result<()> {
        let gbufs = grads.buffers();
        let pbufs = stack.param_buffers_mut();
        if gbufs.len() != pbufs.len() || gbufs.len() != self.states.len() {
            return Err(Error::State(format!(
                "optimizer buffers {} vs grads {} vs params {}",
                self.states.len(),
                gbufs.len(),
                pbufs.len()
            )));
        }
        for ((state, (pname, pbuf)), (gname, gbuf)) in
            self.states.iter_mut().zip(pbufs).zip(gbufs)
        {
            if pname != gname {
                return Err(Error::State(format!(
                    "buffer order mismatch: param {pname} vs grad {gname}"
                )));
            }
            state.step(pbuf, gbuf, hp)?;
        }
        Ok(())
    }
}
