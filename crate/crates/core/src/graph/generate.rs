//! Seeded synthetic graph generators.

use grelax_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{is_connected, Graph, GraphError};

/// Stochastic block model with one labeled node per cluster.
///
/// Feature layout: channels `0..n_clusters` hold the one-hot cluster id of
/// the labeled nodes (zero elsewhere), channel `n_clusters` flags unlabeled
/// nodes and any remaining channels carry noise only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmParams {
    pub n_clusters: usize,
    pub min_cluster_size: usize,
    pub max_cluster_size: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub max_retries: usize,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            n_clusters: 6,
            min_cluster_size: 15,
            max_cluster_size: 25,
            p_intra: 0.4,
            p_inter: 0.05,
            feature_dim: 8,
            noise_std: 0.1,
            max_retries: 100,
        }
    }
}

pub fn generate_sbm_cluster(seed: u64, params: &SbmParams) -> Result<Graph, GraphError> {
    let p = params;
    if !(0.0..=1.0).contains(&p.p_intra) || !(0.0..=1.0).contains(&p.p_inter) || p.p_intra <= p.p_inter {
        return Err(GraphError::Invalid(format!(
            "need 0 <= p_inter < p_intra <= 1, got p_intra={} p_inter={}",
            p.p_intra, p.p_inter
        )));
    }
    if p.feature_dim < p.n_clusters + 1 || p.min_cluster_size == 0 || p.min_cluster_size > p.max_cluster_size {
        return Err(GraphError::Invalid("inconsistent SBM size parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.noise_std).map_err(|e| GraphError::Invalid(e.to_string()))?;
    for _ in 0..p.max_retries {
        let sizes: Vec<usize> = (0..p.n_clusters)
            .map(|_| rng.random_range(p.min_cluster_size..=p.max_cluster_size))
            .collect();
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
        let n = labels.len();
        let mut adj = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                let prob = if labels[i] == labels[j] { p.p_intra } else { p.p_inter };
                if rng.random::<f64>() < prob {
                    adj.set2(i, j, 1.0);
                    adj.set2(j, i, 1.0);
                }
            }
        }
        if !is_connected(&adj) {
            continue;
        }
        let mut mask = vec![false; n];
        let mut start = 0;
        for &s in &sizes {
            mask[start + rng.random_range(0..s)] = true;
            start += s;
        }
        let d = p.feature_dim;
        let mut feats = vec![0.0; n * d];
        for i in 0..n {
            let row = &mut feats[i * d..(i + 1) * d];
            if mask[i] {
                row[labels[i]] = 1.0;
            } else {
                row[p.n_clusters] = 1.0;
            }
            for x in &mut row[p.n_clusters + 1..] {
                *x = noise.sample(&mut rng);
            }
        }
        let graph = Graph::new(adj, Tensor::matrix(n, d, feats))?
            .with_node_labels(labels)
            .with_labeled_mask(mask);
        return Ok(graph);
    }
    Err(GraphError::RetriesExhausted(p.max_retries))
}

/// Retweet-style tree rooted at node 0 for binary graph classification.
///
/// Channel 0 flags the root. The root's content channels (the first half of
/// the rest) are shifted by `±root_shift`; every node's user channels (the
/// second half) are shifted by `±user_shift`, the sign given by the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub feature_dim: usize,
    pub root_shift: f64,
    pub user_shift: f64,
    pub root_attach: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_nodes: 15,
            max_nodes: 40,
            feature_dim: 8,
            root_shift: 0.3,
            user_shift: 0.1,
            root_attach: 0.3,
        }
    }
}

pub fn generate_retweet_tree(seed: u64, params: &TreeParams, label: usize) -> Result<Graph, GraphError> {
    let p = params;
    if p.min_nodes < 2 || p.min_nodes > p.max_nodes || p.feature_dim < 3 || label > 1 {
        return Err(GraphError::Invalid("inconsistent tree parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(p.min_nodes..=p.max_nodes);
    let mut adj = Tensor::zeros(&[n, n]);
    for v in 1..n {
        let parent = if rng.random::<f64>() < p.root_attach { 0 } else { rng.random_range(0..v) };
        adj.set2(v, parent, 1.0);
        adj.set2(parent, v, 1.0);
    }
    let d = p.feature_dim;
    let split = 1 + (d - 1) / 2;
    let sign = if label == 1 { 1.0 } else { -1.0 };
    let mut feats = vec![0.0; n * d];
    for i in 0..n {
        let row = &mut feats[i * d..(i + 1) * d];
        for x in &mut row[1..] {
            *x = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        if i == 0 {
            row[0] = 1.0;
            row[1..split].iter_mut().for_each(|x| *x += sign * p.root_shift);
        } else {
            row[1..split].iter_mut().for_each(|x| *x = 0.0);
        }
        row[split..].iter_mut().for_each(|x| *x += sign * p.user_shift);
    }
    Ok(Graph::new(adj, Tensor::matrix(n, d, feats))?.with_graph_label(label))
}
