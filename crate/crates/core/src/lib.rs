//! Core of the PDRFE laboratory: an edge-featured graph convolutional model
//! for bipartite customer–skill interaction graphs, with the training and
//! evaluation machinery around it.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the experiment
//! harness and the command line live in `pdrfe-lab`.

#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod downstream;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
