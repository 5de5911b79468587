//! Batch normalization over feature channels.
//!
//! Statistics pool every element of the batch and every spatial position of a
//! channel, so the same code serves convolutional maps and fully connected
//! vectors (a vector is a block with spatial dims `[1, 1, 1]`). Training
//! normalizes by biased batch moments and maintains exponential running
//! averages of the same moments; inference normalizes by the running values.

use crate::error::{Error, Result};
use crate::tensor::TensorBlock;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BatchNorm {
    channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    momentum: f64,
    eps: f64,
}

/// Per-batch cache needed by [`BatchNorm::backward`].
#[derive(Debug, Clone)]
pub struct BnTrace {
    /// Normalized activations, one block per batch element.
    xhat: Vec<TensorBlock>,
    inv_std: Vec<f64>,
    /// Pooled element count per channel (batch size times spatial size).
    m: usize,
    /// This batch's per-channel moments, for statistics recalibration.
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BnTrace {
    pub fn batch_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.var
    }
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, momentum: f64) -> Self {
        BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn check_batch(&self, batch: &[TensorBlock]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Shape("batch norm on empty batch".into()));
        }
        let dims = batch[0].dims();
        for b in batch {
            if b.channels() != self.channels || b.dims() != dims {
                return Err(Error::Shape(format!(
                    "batch norm expects {} channels x {:?}, got {} x {:?}",
                    self.channels,
                    dims,
                    b.channels(),
                    b.dims()
                )));
            }
        }
        Ok(())
    }

    /// Normalize by this batch's moments and fold them into the running
    /// averages.
    pub fn forward_train(&mut self, batch: &[TensorBlock]) -> Result<(Vec<TensorBlock>, BnTrace)> {
        self.check_batch(batch)?;
        let s = batch[0].spatial_len();
        let m = batch.len() * s;
        let mf = m as f64;

        let mut mean = vec![0.0; self.channels];
        let mut var = vec![0.0; self.channels];
        for b in batch {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += b.channel(c).iter().sum::<f64>();
            }
        }
        for m in &mut mean {
            *m /= mf;
        }
        for b in batch {
            for c in 0..self.channels {
                var[c] += b.channel(c).iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let mut inv_std = vec![0.0; self.channels];
        for c in 0..self.channels {
            var[c] /= mf;
            inv_std[c] = 1.0 / (var[c] + self.eps).sqrt();
        }

        for c in 0..self.channels {
            self.running_mean[c] = self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean[c];
            self.running_var[c] = self.momentum * self.running_var[c] + (1.0 - self.momentum) * var[c];
        }

        let mut xhat = Vec::with_capacity(batch.len());
        let mut out = Vec::with_capacity(batch.len());
        for b in batch {
            let mut h = TensorBlock::zeros(self.channels, b.dims());
            let mut y = TensorBlock::zeros(self.channels, b.dims());
            for c in 0..self.channels {
                let (g, bt) = (self.gamma[c], self.beta[c]);
                let src = b.channel(c);
                let hc = h.channel_mut(c);
                for (hv, xv) in hc.iter_mut().zip(src) {
                    *hv = (xv - mean[c]) * inv_std[c];
                }
                let yc = y.channel_mut(c);
                for (yv, hv) in yc.iter_mut().zip(h.channel(c)) {
                    *yv = g * hv + bt;
                }
            }
            xhat.push(h);
            out.push(y);
        }
        Ok((out, BnTrace { xhat, inv_std, m, mean, var }))
    }

    /// Replace the running averages outright; used when recalibrating the
    /// inference statistics under fixed weights.
    pub fn set_running(&mut self, mean: &[f64], var: &[f64]) -> Result<()> {
        if mean.len() != self.channels || var.len() != self.channels {
            return Err(Error::Shape(format!(
                "running stats for {} channels, got {}/{}",
                self.channels,
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArg("running variance must be finite and nonnegative".into()));
        }
        self.running_mean.copy_from_slice(mean);
        self.running_var.copy_from_slice(var);
        Ok(())
    }

    /// Normalize a single block by the running averages; no state is touched.
    pub fn forward_infer(&self, input: &TensorBlock) -> Result<TensorBlock> {
        if input.channels() != self.channels {
            return Err(Error::Shape(format!(
                "batch norm expects {} channels, got {}",
                self.channels,
                input.channels()
            )));
        }
        let mut out = TensorBlock::zeros(self.channels, input.dims());
        for c in 0..self.channels {
            let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
            let (mu, g, bt) = (self.running_mean[c], self.gamma[c], self.beta[c]);
            let src = input.channel(c);
            let dst = out.channel_mut(c);
            for (d, x) in dst.iter_mut().zip(src) {
                *d = g * (x - mu) * inv + bt;
            }
        }
        Ok(out)
    }

    /// Full backward including the dependence of the batch moments on every
    /// input element:
    /// `dx = gamma * inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))`.
    pub fn backward(
        &self,
        trace: &BnTrace,
        grad_out: &[TensorBlock],
    ) -> Result<(Vec<TensorBlock>, BnGrads)> {
        if grad_out.len() != trace.xhat.len() {
            return Err(Error::Shape(format!(
                "batch norm backward: {} grads for batch of {}",
                grad_out.len(),
                trace.xhat.len()
            )));
        }
        let mf = trace.m as f64;
        let mut grads = BnGrads {
            gamma: vec![0.0; self.channels],
            beta: vec![0.0; self.channels],
        };
        let mut sum_dh = vec![0.0; self.channels];
        let mut sum_dh_h = vec![0.0; self.channels];
        for (g, h) in grad_out.iter().zip(&trace.xhat) {
            for c in 0..self.channels {
                for (gv, hv) in g.channel(c).iter().zip(h.channel(c)) {
                    grads.beta[c] += gv;
                    grads.gamma[c] += gv * hv;
                }
            }
        }
        for c in 0..self.channels {
            // dxhat = gamma * dy, so the pooled sums are gamma-scaled copies
            sum_dh[c] = self.gamma[c] * grads.beta[c];
            sum_dh_h[c] = self.gamma[c] * grads.gamma[c];
        }
        let mut grad_in = Vec::with_capacity(grad_out.len());
        for (g, h) in grad_out.iter().zip(&trace.xhat) {
            let mut gi = TensorBlock::zeros(self.channels, g.dims());
            for c in 0..self.channels {
                let scale = trace.inv_std[c] / mf;
                let gamma = self.gamma[c];
                let dst = gi.channel_mut(c);
                for ((d, gv), hv) in dst.iter_mut().zip(g.channel(c)).zip(h.channel(c)) {
                    let dh = gamma * gv;
                    *d = scale * (mf * dh - sum_dh[c] - hv * sum_dh_h[c]);
                }
            }
            grad_in.push(gi);
        }
        Ok((grad_in, grads))
    }
}
