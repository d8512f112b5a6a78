//! Homotopy physics-informed neural networks for inverse problems whose
//! differential equations admit several solutions.

pub mod autodiff;
pub mod config;
pub mod io;
pub mod loss;
pub mod network;
pub mod optimizer;
pub mod oracle;
pub mod problems;
pub mod trainer;
