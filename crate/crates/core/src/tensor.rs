//! Dense rank-4 tensors (channels x 3 spatial dims) backing every network buffer.
//!
//! Storage is channel-major with x-fastest spatial order inside a channel, so
//! flattening a tensor into a fully connected input is a plain reinterpretation
//! of the same data.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    channels: usize,
    dims: [usize; 3],
    data: Vec<f64>,
}

impl TensorBlock {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        TensorBlock {
            channels,
            dims,
            data: vec![0.0; channels * dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_data(channels: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let expect = channels * dims[0] * dims[1] * dims[2];
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {}x{}x{}x{} = {}",
                data.len(),
                channels,
                dims[0],
                dims[1],
                dims[2],
                expect
            )));
        }
        Ok(TensorBlock {
            channels,
            dims,
            data,
        })
    }

    /// A vector (fully connected activation) as a tensor with 1x1x1 spatial extent.
    pub fn from_vec(data: Vec<f64>) -> Self {
        TensorBlock {
            channels: data.len(),
            dims: [1, 1, 1],
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spatial_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spatial_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn spatial_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.spatial_len() + self.spatial_index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: f64) {
        let i = c * self.spatial_len() + self.spatial_index(x, y, z);
        self.data[i] = v;
    }

    /// Reinterpret as a flat vector tensor; channel-then-x-fastest order is
    /// exactly the storage order, so no data moves.
    pub fn flatten(self) -> TensorBlock {
        TensorBlock::from_vec(self.data)
    }

    /// Concatenate along the channel axis. All blocks must share spatial dims.
    pub fn concat_channels(blocks: &[TensorBlock]) -> Result<TensorBlock> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidArg("cannot concatenate zero tensors".into()))?;
        let dims = first.dims;
        let mut channels = 0;
        for b in blocks {
            if b.dims != dims {
                return Err(Error::Shape(format!(
                    "channel concat over mismatched spatial dims {:?} vs {:?}",
                    b.dims, dims
                )));
            }
            channels += b.channels;
        }
        let mut data = Vec::with_capacity(channels * first.spatial_len());
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(TensorBlock {
            channels,
            dims,
            data,
        })
    }

    /// No NaN/Inf anywhere; used by the assertion sweep around training steps.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::State(format!(
                "non-finite value {} at flat index {} in {}",
                self.data[i], i, what
            )));
        }
        Ok(())
    }
}
