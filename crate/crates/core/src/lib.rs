//! Graph data, spectral and shortest-path machinery, relaxed graph
//! transformer models and the structure/injection attacks built on them.

pub mod attack;
pub mod graph;
pub mod models;
pub mod paths;
pub mod spectral;

pub use graph::{Dataset, EdgeFlipMatrix, Graph, GraphError, Split, Task};
