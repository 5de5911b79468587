//! Fully connected layer on flattened feature vectors.
//!
//! Vectors travel as [`TensorBlock`]s with spatial dims `[1, 1, 1]` so batch
//! norm and activations apply unchanged.

use crate::error::{Error, Result};
use crate::tensor::TensorBlock;

#[derive(Debug, Clone)]
pub struct FcLayer {
    in_dim: usize,
    out_dim: usize,
    /// `[out][in]`, in fastest.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FcLayer {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        FcLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn check_input(&self, input: &TensorBlock) -> Result<()> {
        if input.len() != self.in_dim || input.spatial_len() != 1 {
            return Err(Error::Shape(format!(
                "fc expects a {}-vector, got {} channels x {:?}",
                self.in_dim,
                input.channels(),
                input.dims()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &TensorBlock) -> Result<TensorBlock> {
        self.check_input(input)?;
        let x = input.data();
        let mut y = vec![0.0; self.out_dim];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            *yo = self.bias[o] + row.iter().zip(x).map(|(w, xv)| w * xv).sum::<f64>();
        }
        Ok(TensorBlock::from_vec(y))
    }

    pub fn backward(
        &self,
        input: &TensorBlock,
        grad_out: &TensorBlock,
    ) -> Result<(TensorBlock, FcGrads)> {
        self.check_input(input)?;
        if grad_out.len() != self.out_dim {
            return Err(Error::Shape(format!(
                "fc backward: grad length {} vs out dim {}",
                grad_out.len(),
                self.out_dim
            )));
        }
        let x = input.data();
        let g = grad_out.data();
        let mut grads = FcGrads {
            weights: vec![0.0; self.weights.len()],
            bias: g.to_vec(),
        };
        let mut gin = vec![0.0; self.in_dim];
        for (o, &go) in g.iter().enumerate().take(self.out_dim) {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] = go * x[i];
                gin[i] += go * row[i];
            }
        }
        Ok((TensorBlock::from_vec(gin), grads))
    }
}
