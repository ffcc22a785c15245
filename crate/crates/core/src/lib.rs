pub mod clipping;
pub mod degree_approx;
pub mod mechanisms;
pub mod oracles;
pub mod dp;
pub mod error;
pub mod graph;
pub mod harness;
pub mod lp;

pub use error::{Error, Result};
pub use graph::{Edge, Graph, NodeId};
