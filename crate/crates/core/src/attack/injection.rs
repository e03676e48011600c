use grelax_autodiff::{Tape, Tensor, Var};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::graph::{component_of, Graph};

/// Origin of an injection candidate: node `node` of dataset graph `graph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateRef {
    pub graph: usize,
    pub node: usize,
}

/// Injection candidates with real features taken from other graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub features: Tensor,
    pub provenance: Vec<CandidateRef>,
}

impl CandidateSet {
    /// Draws `size` distinct nodes from every graph but `attacked`; node 0
    /// (the root) of each graph is skipped when `exclude_roots`.
    pub fn sample(
        graphs: &[Graph],
        attacked: usize,
        size: usize,
        exclude_roots: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, AttackError> {
        let pool: Vec<CandidateRef> = graphs
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != attacked)
            .flat_map(|(g, graph)| {
                let start = usize::from(exclude_roots);
                (start..graph.n()).map(move |node| CandidateRef { graph: g, node })
            })
            .collect();
        let take = size.min(pool.len());
        let mut picked: Vec<CandidateRef> = index::sample(rng, pool.len(), take).into_iter().map(|k| pool[k]).collect();
        picked.sort_unstable();
        Self::from_refs(graphs, picked, Some(attacked))
    }

    /// Candidates at the given positions; refuses nodes of `attacked`.
    pub fn from_refs(graphs: &[Graph], refs: Vec<CandidateRef>, attacked: Option<usize>) -> Result<Self, AttackError> {
        let d = graphs.first().map_or(0, Graph::feature_dim);
        let mut feats = Vec::with_capacity(refs.len() * d);
        for r in &refs {
            if Some(r.graph) == attacked {
                return Err(AttackError::Config(format!("candidate {r:?} comes from the attacked graph")));
            }
            let g = graphs
                .get(r.graph)
                .filter(|g| r.node < g.n())
                .ok_or_else(|| AttackError::Config(format!("candidate {r:?} does not exist")))?;
            feats.extend_from_slice(g.features().row(r.node));
        }
        Ok(Self {
            features: Tensor::matrix(refs.len(), d, feats),
            provenance: refs,
        })
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

/// `graph` with the candidates appended as isolated nodes.
pub fn nia_augment(graph: &Graph, candidates: &CandidateSet) -> Result<Graph, AttackError> {
    let (n, k) = (graph.n(), candidates.len());
    if k > 0 && candidates.features.dims2().1 != graph.feature_dim() {
        return Err(AttackError::Config(format!(
            "candidate features have {} channels, graph has {}",
            candidates.features.dims2().1,
            graph.feature_dim()
        )));
    }
    let total = n + k;
    let mut adj = Tensor::zeros(&[total, total]);
    for i in 0..n {
        adj.data_mut()[i * total..i * total + n].copy_from_slice(graph.adjacency().row(i));
    }
    let mut feats = graph.features().data().to_vec();
    feats.extend_from_slice(candidates.features.data());
    let mut out = Graph::new(adj, Tensor::matrix(total, graph.feature_dim(), feats))?;
    out.graph_label = graph.graph_label;
    Ok(out)
}

/// Keeps the positive-weight component holding the first `n_original`
/// nodes; returns the pruned adjacency and the kept node ids (ascending).
pub fn prune_disconnected(adj: &Tensor, n_original: usize) -> Result<(Tensor, Vec<usize>), AttackError> {
    if n_original == 0 {
        return Ok((Tensor::zeros(&[0, 0]), Vec::new()));
    }
    let keep = component_of(adj, &[0]);
    if keep.len() < n_original || keep[n_original - 1] != n_original - 1 {
        return Err(AttackError::Config("the original graph is not connected".into()));
    }
    Ok((induced(adj, &keep), keep))
}

pub(crate) fn induced(adj: &Tensor, keep: &[usize]) -> Tensor {
    let k = keep.len();
    let mut out = Tensor::zeros(&[k, k]);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            out.set2(a, b, adj.get2(i, j));
        }
    }
    out
}

/// `T` sweeps of `p_i ← 1 − Π_j (1 − A_ij p_j)` from `p = 1`, on the tape.
pub fn node_probability_var<'t>(adj: Var<'t>, iterations: usize) -> Var<'t> {
    let n = adj.value().dims2().0;
    let mut p = adj.tape().constant(Tensor::ones(&[n]));
    for _ in 0..iterations {
        p = adj.noisy_or(p);
    }
    p
}

pub fn node_probability(adj: &Tensor, iterations: usize) -> Vec<f64> {
    let tape = Tape::new();
    node_probability_var(tape.constant(adj.clone()), iterations).to_tensor().into_data()
}

/// Maximum spanning tree of the positive-weight support as a 0/1 adjacency.
///
/// Kruskal over descending weights; equal weights go by index pair.
pub fn mst_projection(weights: &Tensor) -> Result<Tensor, AttackError> {
    let n = weights.dims2().0;
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = weights.get2(i, j);
            if w > 0.0 {
                edges.push((i, j, w));
            }
        }
    }
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Tensor::zeros(&[n, n]);
    let mut count = 0;
    for (i, j, _) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            tree.set2(i, j, 1.0);
            tree.set2(j, i, 1.0);
            count += 1;
        }
    }
    if n > 0 && count != n - 1 {
        return Err(AttackError::Constraint("weighted support is disconnected; no spanning tree".into()));
    }
    Ok(tree)
}

/// Whether a 0/1 adjacency is a spanning tree.
pub fn is_tree(adj: &Tensor) -> bool {
    let n = adj.dims2().0;
    let discrete = adj.data().iter().all(|&x| x == 0.0 || x == 1.0);
    let edges = adj.data().iter().filter(|&&x| x == 1.0).count() / 2;
    discrete && (n == 0 || (edges == n - 1 && component_of(adj, &[0]).len() == n))
}
