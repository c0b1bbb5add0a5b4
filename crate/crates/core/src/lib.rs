//! Training neural networks in singular-value-decomposition form: layers held
//! as `(u, s, v)` factors, orthogonality and sparsity regularizers, energy-based
//! singular value pruning and the FLOPs accounting of the resulting low-rank
//! layers.

pub mod compression;
pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod regularizers;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::{ConvGeometry, DecompositionScheme, DenseLayer, LayerGeometry, SvdLayer};
pub use linalg::{svd, SvdFactors};
pub use model::{Model, ParamLayer};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
