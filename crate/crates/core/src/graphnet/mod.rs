//! Graph residual network over the mesh graph.
//!
//! Node features flow through stacked graph convolutions
//! `H' = H W0 + (A H) W1 + b` with identity shortcuts across every pair of
//! layers. A per-vertex head and a global head (fed by four region means
//! plus every vertex embedding) produce the two softmax outputs. Gradients
//! are derived by hand; see `model::backward`.

mod checkpoint;
mod classify;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use classify::{
    classify_gc, classify_pv, classify_pv_counts, classify_vv, mass_counts, select_pv_threshold, MassClassMap,
};
pub use model::{
    backward, ce_loss, forward, from_one_hot, graph_conv, loss, Activation, ConvLayer, Dense, Forward,
    GlobalInput, GraphResNet, InputNorm, NetShape, Targets,
};
pub use train::{train, EpochLog, TrainConfig, TrainExample, TrainResult};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mesh::AnatomyMesh;

/// Undirected simple graph stored as sorted neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    neighbors: Vec<Vec<usize>>,
}

impl GraphTopology {
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); nodes];
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) outside {nodes} nodes")));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn from_mesh(mesh: &AnatomyMesh) -> Self {
        Self::new(mesh.vertex_count(), mesh.edges()).expect("mesh edges are valid")
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.neighbors[p]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(p) = stack.pop() {
            for &q in &self.neighbors[p] {
                if !seen[q] {
                    seen[q] = true;
                    count += 1;
                    stack.push(q);
                }
            }
        }
        count == n
    }

    /// `A H`: row `p` is the sum of the neighbour rows of `p`.
    pub fn aggregate(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for (p, nbrs) in self.neighbors.iter().enumerate() {
            let mut row = out.row_mut(p);
            for &q in nbrs {
                row += &h.row(q);
            }
        }
        out
    }

    pub fn dense_adjacency(&self) -> Array2<f64> {
        let n = self.node_count();
        let mut a = Array2::zeros((n, n));
        for (p, nbrs) in self.neighbors.iter().enumerate() {
            for &q in nbrs {
                a[[p, q]] = 1.0;
            }
        }
        a
    }
}
