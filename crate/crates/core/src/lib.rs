pub mod conditions;
pub mod error;
pub mod funcspace;
pub mod io;
pub mod kernel;
pub mod operator;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
pub use funcspace::GridFunction;
pub use kernel::{GreenQuadrature, LinearParams, Matrix2};
pub use par::Execution;
