//! Pattern-learning geostatistical simulation on categorical 3D grids.
//!
//! A chain of small 3D convolutional networks is trained on a single training
//! image: network `i` reads the previously simulated domains and predicts
//! category probabilities for the inner pattern around each node. Sequential
//! simulation along a random path, with partial freezing of intermediate
//! domains, turns the trained chain into a generator of conditioned
//! realizations, which are then checked against the training image with
//! two-point statistics.

pub mod checkpoint;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod rcnn;
pub mod rng;
pub mod simulate;
pub mod synthti;
pub mod tensor;

pub use error::{Error, Result};
