//! Boolean CP and Tucker decompositions of sparse binary 3-way tensors.
//!
//! The pipeline discovers dense rank-1 blocks with short random walks over the
//! cell adjacency graph ([`walk`]), completes them with small monochromatic
//! blocks and density-gated merging ([`merge`]), then turns the blocks into a
//! CP decomposition whose rank is chosen by two-part MDL ([`cp`]) or into a
//! Tucker decomposition compressed by MDL-gated factor merging ([`tucker`]).

pub mod block;
pub mod cp;
pub mod error;
pub mod io;
pub mod mdl;
pub mod merge;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod tucker;
pub mod walk;

pub use block::{merge_density, reconstruct, Block, BlockList, Density};
pub use error::{Error, Result};
pub use tensor::{Cell, Dims, SparseBinaryTensor};
