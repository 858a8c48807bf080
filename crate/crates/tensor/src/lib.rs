//! Deterministic CPU tensor backend with reverse-mode autodiff.
//!
//! Everything in this crate is written for reproducibility first: seeded
//! streams instead of global RNG state, fixed reduction orders, and
//! parallelism only across independent batch samples. Networks higher up the
//! stack are expressed against this module boundary, so a different backend
//! can be swapped in behind the same graph-building API.

pub mod adam;
pub mod archive;
pub mod graph;
pub mod init;
pub mod nn;
pub mod param;
pub mod rng;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use archive::{read_archive, write_archive, Archive, ArchiveError, ARCHIVE_FORMAT};
pub use graph::{conv_out, Graph, VarId};
pub use init::xavier_uniform;
pub use nn::{Conv2d, Linear};
pub use param::{Gradients, ParamEntry, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
