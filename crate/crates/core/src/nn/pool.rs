//! Max pooling, fixed 2x2x2 window with stride 2.
//!
//! Output dims are `ceil(d / 2)`; boundary windows are clipped to the grid
//! rather than padded, so a size-1 axis passes through unchanged. The forward
//! pass records the flat spatial index of each winning input element; ties go
//! to the first element in x-fastest scan order, and the backward pass routes
//! the entire gradient to that winner.

use crate::error::{Error, Result};
use crate::tensor::TensorBlock;

#[derive(Debug, Clone)]
pub struct PoolTrace {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    channels: usize,
    /// Winning flat spatial input index per `(channel, output position)`.
    argmax: Vec<usize>,
}

pub fn pooled_dims(dims: [usize; 3]) -> [usize; 3] {
    [dims[0].div_ceil(2), dims[1].div_ceil(2), dims[2].div_ceil(2)]
}

pub fn maxpool_forward(input: &TensorBlock) -> (TensorBlock, PoolTrace) {
    let in_dims = input.dims();
    let out_dims = pooled_dims(in_dims);
    let [nx, ny, _] = in_dims;
    let [ox, oy, oz] = out_dims;
    let out_s = ox * oy * oz;
    let mut out = TensorBlock::zeros(input.channels(), out_dims);
    let mut argmax = vec![0usize; input.channels() * out_s];
    for c in 0..input.channels() {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for pz in 0..oz {
            for py in 0..oy {
                for px in 0..ox {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for z in (pz * 2)..((pz * 2 + 2).min(in_dims[2])) {
                        for y in (py * 2)..((py * 2 + 2).min(ny)) {
                            for x in (px * 2)..((px * 2 + 2).min(nx)) {
                                let idx = x + nx * (y + ny * z);
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let o = px + ox * (py + oy * pz);
                    dst[o] = best;
                    argmax[c * out_s + o] = best_idx;
                }
            }
        }
    }
    (
        out,
        PoolTrace {
            in_dims,
            out_dims,
            channels: input.channels(),
            argmax,
        },
    )
}

pub fn maxpool_backward(trace: &PoolTrace, grad_out: &TensorBlock) -> Result<TensorBlock> {
    if grad_out.channels() != trace.channels || grad_out.dims() != trace.out_dims {
        return Err(Error::Shape(format!(
            "pool backward: grad {}x{:?} vs trace {}x{:?}",
            grad_out.channels(),
            grad_out.dims(),
            trace.channels,
            trace.out_dims
        )));
    }
    let out_s = grad_out.spatial_len();
    let mut grad_in = TensorBlock::zeros(trace.channels, trace.in_dims);
    for c in 0..trace.channels {
        let g = grad_out.channel(c);
        let gi = grad_in.channel_mut(c);
        for o in 0..out_s {
            gi[trace.argmax[c * out_s + o]] += g[o];
        }
    }
    Ok(grad_in)
}
