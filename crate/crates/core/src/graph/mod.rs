//! Graph data model and the adjacency-derived quantities shared by the models.

mod generate;
mod io;

use grelax_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

pub use generate::{generate_retweet_tree, generate_sbm_cluster, SbmParams, TreeParams};
pub use io::{load_dataset, load_graph, parse_graph, save_dataset, save_graph, to_json};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{context}: parse error at line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("generator gave up after {0} attempts to draw a connected graph")]
    RetriesExhausted(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Node,
    Graph,
}

/// Undirected attributed graph with a dense adjacency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Tensor,
    features: Tensor,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
    pub labeled_mask: Option<Vec<bool>>,
}

impl Graph {
    pub fn new(adjacency: Tensor, features: Tensor) -> Result<Self, GraphError> {
        validate_adjacency(&adjacency)?;
        let n = adjacency.dims2().0;
        if features.ndim() != 2 || features.dims2().0 != n {
            return Err(GraphError::Invalid(format!(
                "features have shape {:?}, expected {n} rows",
                features.shape()
            )));
        }
        Ok(Self {
            adjacency,
            features,
            node_labels: None,
            graph_label: None,
            labeled_mask: None,
        })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], features: Tensor) -> Result<Self, GraphError> {
        let mut adj = Tensor::zeros(&[n, n]);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(GraphError::Invalid(format!("edge ({i}, {j}) out of range for n={n}")));
            }
            adj.set2(i, j, w);
            adj.set2(j, i, w);
        }
        Self::new(adj, features)
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Self {
        self.node_labels = Some(labels);
        self
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_labeled_mask(mut self, mask: Vec<bool>) -> Self {
        self.labeled_mask = Some(mask);
        self
    }

    pub fn n(&self) -> usize {
        self.adjacency.dims2().0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dims2().1
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Same graph with a different (validated) adjacency.
    pub fn with_adjacency(&self, adjacency: Tensor) -> Result<Self, GraphError> {
        validate_adjacency(&adjacency)?;
        if adjacency.shape() != self.adjacency.shape() {
            return Err(GraphError::Invalid(format!(
                "adjacency shape {:?} does not match {:?}",
                adjacency.shape(),
                self.adjacency.shape()
            )));
        }
        Ok(Self {
            adjacency,
            ..self.clone()
        })
    }

    pub fn is_discrete(&self) -> bool {
        self.adjacency.data().iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Upper-triangle pairs with a nonzero weight.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.adjacency.get2(i, j);
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn is_connected(&self) -> bool {
        is_connected(&self.adjacency)
    }

    /// Node ids of the subgraph induced by `keep`, in the given order.
    pub fn induced(&self, keep: &[usize]) -> Graph {
        let k = keep.len();
        let d = self.feature_dim();
        let mut adj = Tensor::zeros(&[k, k]);
        let mut feats = Vec::with_capacity(k * d);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                adj.set2(a, b, self.adjacency.get2(i, j));
            }
            feats.extend_from_slice(self.features.row(i));
        }
        Graph {
            adjacency: adj,
            features: Tensor::matrix(k, d, feats),
            node_labels: self.node_labels.as_ref().map(|l| keep.iter().map(|&i| l[i]).collect()),
            graph_label: self.graph_label,
            labeled_mask: self.labeled_mask.as_ref().map(|m| keep.iter().map(|&i| m[i]).collect()),
        }
    }
}

fn validate_adjacency(adj: &Tensor) -> Result<(), GraphError> {
    if adj.ndim() != 2 || adj.dims2().0 != adj.dims2().1 {
        return Err(GraphError::Invalid(format!("adjacency must be square, got {:?}", adj.shape())));
    }
    let n = adj.dims2().0;
    for i in 0..n {
        if adj.get2(i, i) != 0.0 {
            return Err(GraphError::Invalid(format!("nonzero diagonal at node {i}")));
        }
        for j in i + 1..n {
            let (a, b) = (adj.get2(i, j), adj.get2(j, i));
            if !(0.0..=1.0).contains(&a) {
                return Err(GraphError::Invalid(format!("weight {a} at ({i}, {j}) outside [0, 1]")));
            }
            if (a - b).abs() > SYMMETRY_TOL {
                return Err(GraphError::Invalid(format!("asymmetric weights at ({i}, {j}): {a} vs {b}")));
            }
        }
    }
    Ok(())
}

/// Connectivity of the support (`w > 0`) of a square adjacency.
pub fn is_connected(adj: &Tensor) -> bool {
    let n = adj.dims2().0;
    n == 0 || component_of(adj, &[0]).len() == n
}

/// Nodes reachable from `seeds` over positive-weight edges, in ascending order.
pub fn component_of(adj: &Tensor, seeds: &[usize]) -> Vec<usize> {
    let n = adj.dims2().0;
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = seeds.to_vec();
    for &s in seeds {
        seen[s] = true;
    }
    while let Some(u) = stack.pop() {
        for (v, &w) in adj.row(u).iter().enumerate() {
            if w > 0.0 && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    (0..n).filter(|&i| seen[i]).collect()
}

/// Row sums of the adjacency.
pub fn degrees(adj: &Tensor) -> Vec<f64> {
    let (n, _) = adj.dims2();
    (0..n).map(|i| adj.row(i).iter().sum()).collect()
}

/// `I − D^{-1/2} A D^{-1/2}`; isolated nodes get an identity row.
pub fn laplacian_sym(adj: &Tensor) -> Tensor {
    let n = adj.dims2().0;
    let r: Vec<f64> = degrees(adj)
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            l.set2(i, j, delta - adj.get2(i, j) * r[i] * r[j]);
        }
    }
    l
}

/// [`laplacian_sym`] recorded on the tape; bitwise equal in value.
pub fn laplacian_sym_var<'t>(adj: Var<'t>) -> Var<'t> {
    let n = adj.value().dims2().0;
    let r = adj.sum_rows().safe_rsqrt();
    let scaled = adj.mul_col(r).mul_row(r);
    adj.tape().constant(Tensor::identity(n)) - scaled
}

/// Relaxed edge flips `B`, stored as upper-triangle pairs with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFlipMatrix {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl EdgeFlipMatrix {
    pub fn new(n: usize, pairs: Vec<(usize, usize)>, values: Vec<f64>) -> Result<Self, GraphError> {
        if pairs.len() != values.len() {
            return Err(GraphError::Invalid(format!(
                "{} flip pairs but {} values",
                pairs.len(),
                values.len()
            )));
        }
        for &(i, j) in &pairs {
            if i >= j || j >= n {
                return Err(GraphError::Invalid(format!("flip pair ({i}, {j}) is not upper-triangle in n={n}")));
            }
        }
        Ok(Self { n, pairs, values })
    }

    /// Discrete flips of the given pairs.
    pub fn discrete(n: usize, pairs: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::new(n, pairs.to_vec(), vec![1.0; pairs.len()])
    }
}

/// `Ã = A + (11ᵀ − 2A) ⊙ B`, clamped to `[0, 1]` against rounding.
pub fn apply_flips(adj: &Tensor, b: &EdgeFlipMatrix) -> Tensor {
    assert_eq!(adj.dims2().0, b.n, "apply_flips: size mismatch");
    let mut out = adj.clone();
    for (&(i, j), &v) in b.pairs.iter().zip(&b.values) {
        let a = adj.get2(i, j);
        let w = (a + (1.0 - 2.0 * a) * v).clamp(0.0, 1.0);
        out.set2(i, j, w);
        out.set2(j, i, w);
    }
    out
}

/// [`apply_flips`] on the tape, differentiable in `values`.
pub fn apply_flips_var<'t>(adj: &Tensor, pairs: &[(usize, usize)], values: Var<'t>) -> Var<'t> {
    let tape = values.tape();
    let n = adj.dims2().0;
    let sign = Tensor::vector(pairs.iter().map(|&(i, j)| 1.0 - 2.0 * adj.get2(i, j)).collect());
    let delta = (values * tape.constant(sign)).scatter_sym(pairs, n);
    tape.constant(adj.clone()) + delta
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, len: usize) -> Result<(), GraphError> {
        let mut seen = vec![false; len];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= len {
                return Err(GraphError::Invalid(format!("split index {i} out of range for {len} graphs")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(GraphError::Invalid(format!("graph {i} appears in more than one split")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub split: Split,
    pub task: Task,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>, split: Split, task: Task) -> Result<Self, GraphError> {
        split.validate(graphs.len())?;
        if let Some(first) = graphs.first() {
            let d = first.feature_dim();
            if let Some((i, g)) = graphs.iter().enumerate().find(|(_, g)| g.feature_dim() != d) {
                return Err(GraphError::Invalid(format!(
                    "graph {i} has feature dimension {}, expected {d}",
                    g.feature_dim()
                )));
            }
        }
        for (i, g) in graphs.iter().enumerate() {
            let ok = match task {
                Task::Node => g.node_labels.as_ref().is_some_and(|l| l.len() == g.n()),
                Task::Graph => g.graph_label.is_some(),
            };
            if !ok {
                return Err(GraphError::Invalid(format!("graph {i} lacks labels for a {task:?} task")));
            }
        }
        Ok(Self { graphs, split, task })
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn num_classes(&self) -> usize {
        match self.task {
            Task::Graph => 2,
            Task::Node => {
                self.graphs
                    .iter()
                    .flat_map(|g| g.node_labels.iter().flatten())
                    .max()
                    .map_or(0, |&m| m + 1)
            }
        }
    }
}

/// Attack budget `Δ = round(ε·m)` for a clean edge count `m`.
pub fn budget_from_fraction(fraction: f64, edge_count: usize) -> usize {
    (fraction * edge_count as f64).round() as usize
}
