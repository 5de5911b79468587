//! 3D convolution, stride 1, zero ("same") padding.
//!
//! Weights are stored `[out][in][fz][fy][fx]`, fx fastest, matching the
//! x-fastest spatial layout of [`TensorBlock`]. The hot loops slice whole x
//! rows per kernel tap so the inner loop is a contiguous fused multiply-add.
//! Even filter dims pad one node more on the low side (taps at `i - f/2`).

use crate::error::{Error, Result};
use crate::tensor::TensorBlock;

#[derive(Debug, Clone)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    fdims: [usize; 3],
    /// `[out][in][fz][fy][fx]`, fx fastest.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients from one backward pass, same layout as the layer.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, fdims: [usize; 3]) -> Result<Self> {
        if fdims.contains(&0) {
            return Err(Error::InvalidArg(format!(
                "filter dims must be positive, got {fdims:?}"
            )));
        }
        let flen = fdims[0] * fdims[1] * fdims[2];
        Ok(ConvLayer {
            in_channels,
            out_channels,
            fdims,
            weights: vec![0.0; out_channels * in_channels * flen],
            bias: vec![0.0; out_channels],
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn fdims(&self) -> [usize; 3] {
        self.fdims
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.fdims[0] * self.fdims[1] * self.fdims[2]
    }

    #[inline]
    fn weight_index(&self, o: usize, i: usize, fz: usize, fy: usize, fx: usize) -> usize {
        ((o * self.in_channels + i) * self.fdims[2] + fz) * self.fdims[1] * self.fdims[0]
            + fy * self.fdims[0]
            + fx
    }

    pub fn forward(&self, input: &TensorBlock) -> Result<TensorBlock> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let [nx, ny, nz] = input.dims();
        let [fx_n, fy_n, fz_n] = self.fdims;
        let (hx, hy, hz) = (fx_n / 2, fy_n / 2, fz_n / 2);
        let mut out = TensorBlock::zeros(self.out_channels, input.dims());
        for o in 0..self.out_channels {
            out.channel_mut(o).fill(self.bias[o]);
        }
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                let in_ch = input.channel(i);
                for fz in 0..fz_n {
                    let dz = fz as isize - hz as isize;
                    for fy in 0..fy_n {
                        let dy = fy as isize - hy as isize;
                        for fx in 0..fx_n {
                            let dx = fx as isize - hx as isize;
                            let w = self.weights[self.weight_index(o, i, fz, fy, fx)];
                            if w == 0.0 {
                                continue;
                            }
                            let x_lo = (-dx).max(0) as usize;
                            let x_hi = (nx as isize - dx).min(nx as isize).max(0) as usize;
                            if x_lo >= x_hi {
                                continue;
                            }
                            let out_ch = out.channel_mut(o);
                            for z in 0..nz as isize {
                                let zi = z + dz;
                                if zi < 0 || zi >= nz as isize {
                                    continue;
                                }
                                for y in 0..ny as isize {
                                    let yi = y + dy;
                                    if yi < 0 || yi >= ny as isize {
                                        continue;
                                    }
                                    let orow = (z as usize * ny + y as usize) * nx;
                                    let irow = (zi as usize * ny + yi as usize) * nx;
                                    let start =
                                        (irow as isize + dx + x_lo as isize) as usize;
                                    let src = &in_ch[start..][..x_hi - x_lo];
                                    let dst = &mut out_ch[orow + x_lo..orow + x_hi];
                                    for (d, s) in dst.iter_mut().zip(src) {
                                        *d += w * s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradients of the loss w.r.t. input and parameters, given the gradient
    /// w.r.t. this layer's output.
    pub fn backward(
        &self,
        input: &TensorBlock,
        grad_out: &TensorBlock,
    ) -> Result<(TensorBlock, ConvGrads)> {
        if grad_out.channels() != self.out_channels || grad_out.dims() != input.dims() {
            return Err(Error::Shape(format!(
                "conv backward: grad_out {}x{:?} vs expected {}x{:?}",
                grad_out.channels(),
                grad_out.dims(),
                self.out_channels,
                input.dims()
            )));
        }
        let [nx, ny, nz] = input.dims();
        let [fx_n, fy_n, fz_n] = self.fdims;
        let (hx, hy, hz) = (fx_n / 2, fy_n / 2, fz_n / 2);

        let mut grad_in = TensorBlock::zeros(self.in_channels, input.dims());
        let mut grads = ConvGrads {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.out_channels],
        };

        for o in 0..self.out_channels {
            grads.bias[o] = grad_out.channel(o).iter().sum();
        }

        for o in 0..self.out_channels {
            let gout = grad_out.channel(o);
            for i in 0..self.in_channels {
                let in_ch = input.channel(i);
                for fz in 0..fz_n {
                    let dz = fz as isize - hz as isize;
                    for fy in 0..fy_n {
                        let dy = fy as isize - hy as isize;
                        for fx in 0..fx_n {
                            let dx = fx as isize - hx as isize;
                            let widx = self.weight_index(o, i, fz, fy, fx);
                            let w = self.weights[widx];
                            let x_lo = (-dx).max(0) as usize;
                            let x_hi = (nx as isize - dx).min(nx as isize).max(0) as usize;
                            if x_lo >= x_hi {
                                continue;
                            }
                            let mut wsum = 0.0;
                            let gin = grad_in.channel_mut(i);
                            for z in 0..nz as isize {
                                let zi = z + dz;
                                if zi < 0 || zi >= nz as isize {
                                    continue;
                                }
                                for y in 0..ny as isize {
                                    let yi = y + dy;
                                    if yi < 0 || yi >= ny as isize {
                                        continue;
                                    }
                                    let orow = (z as usize * ny + y as usize) * nx;
                                    let irow = (zi as usize * ny + yi as usize) * nx;
                                    let start =
                                        (irow as isize + dx + x_lo as isize) as usize;
                                    let g = &gout[orow + x_lo..orow + x_hi];
                                    let s = &in_ch[start..][..x_hi - x_lo];
                                    let d = &mut gin[start..][..x_hi - x_lo];
                                    for ((gv, sv), dv) in g.iter().zip(s).zip(d) {
                                        wsum += gv * sv;
                                        *dv += w * gv;
                                    }
                                }
                            }
                            grads.weights[widx] = wsum;
                        }
                    }
                }
            }
        }
        Ok((grad_in, grads))
    }
}
