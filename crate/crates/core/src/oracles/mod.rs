//! Exact reference solvers used to check the Physarum iterates.

mod dijkstra;
mod hungarian;
mod vertex;

pub use dijkstra::{dijkstra, ShortestPath};
pub use hungarian::hungarian;
pub use vertex::{enumerate_vertices, VertexSolution, MAX_BASES, MAX_COLUMNS};
