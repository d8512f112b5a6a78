//! Scalar computation graph: reverse-mode tape plus second-order forward jets.

mod jet;
mod scalar;
mod tape;

pub use jet::Jet2;
pub use scalar::Scalar;
pub use tape::{Gradients, OpKind, Tape, TapeNode, Var};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AutodiffError {
    #[error("division by zero at tape node {node}")]
    SingularEvaluation { node: usize },
    #[error("node {index} is not on this tape")]
    ForeignNode { index: usize },
}
