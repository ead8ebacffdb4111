//! Dense/sparse linear algebra and the reverse-mode tape.

pub mod adam;
pub mod dense;
pub mod kernels;
pub mod sparse;
pub mod tape;

pub use adam::AdamState;
pub use dense::DenseMatrix;
pub use sparse::{SparseMatrix, PRUNE_THRESHOLD};
pub use tape::{NodeId, Tape, Value};
