use rand::seq::index;
use rand::Rng;

use super::{AttackError, ConstraintKind};
use crate::graph::Graph;

/// Block of an augmented adjacency `[B E; Eᵀ F]` an index pair falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// original × original
    B,
    /// original × candidate
    E,
    /// candidate × candidate
    F,
}

pub fn region(i: usize, j: usize, n_original: usize) -> Region {
    match (i < n_original, j < n_original) {
        (true, true) => Region::B,
        (false, false) => Region::F,
        _ => Region::E,
    }
}

/// Which upper-triangle pairs of an (optionally augmented) graph may flip.
#[derive(Debug, Clone)]
pub struct PairMask {
    n_original: usize,
    n_total: usize,
    protected: Vec<bool>,
    allow_b: bool,
    allow_f: bool,
}

impl PairMask {
    pub fn allows(&self, i: usize, j: usize) -> bool {
        let (i, j) = (i.min(j), i.max(j));
        if i == j || j >= self.n_total || self.protected[i] || self.protected[j] {
            return false;
        }
        match region(i, j, self.n_original) {
            Region::B => self.allow_b,
            Region::E => true,
            Region::F => self.allow_f,
        }
    }

    /// Allowed pairs in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_total;
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.allows(i, j))
            .collect()
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }
}

/// Mask for `graph` augmented by `candidates` isolated nodes.
///
/// Candidate-candidate pairs are only allowed with `include_f`.
pub fn constraint_mask(
    graph: &Graph,
    kind: ConstraintKind,
    candidates: usize,
    include_f: bool,
) -> Result<PairMask, AttackError> {
    let n = graph.n();
    let mut protected = vec![false; n + candidates];
    if kind == ConstraintKind::ProtectLabeled {
        let Some(mask) = &graph.labeled_mask else {
            return Err(AttackError::Config("protect_labeled needs a labeled-node mask on the graph".into()));
        };
        protected[..n].copy_from_slice(mask);
    }
    Ok(PairMask {
        n_original: n,
        n_total: n + candidates,
        protected,
        allow_b: kind != ConstraintKind::TreeOnly,
        allow_f: include_f,
    })
}

/// Sampled index pairs (`i < j`, unique) with relaxed flip values.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub pairs: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl BlockState {
    /// `size` distinct allowed pairs at value 0, all of them when `size` covers the mask.
    pub fn sample(allowed: &[(usize, usize)], size: usize, rng: &mut impl Rng) -> Self {
        let pairs = if size >= allowed.len() {
            allowed.to_vec()
        } else {
            let mut idx = index::sample(rng, allowed.len(), size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| allowed[k]).collect()
        };
        let values = vec![0.0; pairs.len()];
        Self { pairs, values }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Keeps the highest-valued `keep_fraction` of the block and refills the
/// rest with fresh allowed pairs at value 0.
pub fn resample_block(
    block: &BlockState,
    keep_fraction: f64,
    allowed: &[(usize, usize)],
    rng: &mut impl Rng,
) -> BlockState {
    let size = block.len();
    let keep = ((keep_fraction.clamp(0.0, 1.0) * size as f64).round() as usize).min(size);
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| block.values[b].total_cmp(&block.values[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();

    let mut pairs: Vec<(usize, usize)> = kept.iter().map(|&k| block.pairs[k]).collect();
    let mut values: Vec<f64> = kept.iter().map(|&k| block.values[k]).collect();
    let taken: std::collections::HashSet<(usize, usize)> = pairs.iter().copied().collect();
    let fresh: Vec<(usize, usize)> = allowed.iter().copied().filter(|p| !taken.contains(p)).collect();
    let want = (size - keep).min(fresh.len());
    let mut idx = index::sample(rng, fresh.len(), want).into_vec();
    idx.sort_unstable();
    pairs.extend(idx.iter().map(|&k| fresh[k]));
    values.resize(pairs.len(), 0.0);
    BlockState { pairs, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use grelax_autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v, 1.0)).collect();
        Graph::from_edges(n, &edges, Tensor::zeros(&[n, 1])).unwrap()
    }

    #[test]
    fn regions() {
        assert_eq!(region(0, 3, 4), Region::B);
        assert_eq!(region(3, 4, 4), Region::E);
        assert_eq!(region(5, 4, 4), Region::F);
    }

    #[test]
    fn no_constraint_allows_every_pair() {
        let m = constraint_mask(&path(6), ConstraintKind::None, 0, false).unwrap();
        assert_eq!(m.pairs().len(), 15);
    }

    #[test]
    fn tree_only_allows_only_candidate_pairs() {
        let m = constraint_mask(&path(5), ConstraintKind::TreeOnly, 3, false).unwrap();
        let pairs = m.pairs();
        assert_eq!(pairs.len(), 15);
        assert!(pairs.iter().all(|&(i, j)| region(i, j, 5) == Region::E));
        let with_f = constraint_mask(&path(5), ConstraintKind::TreeOnly, 3, true).unwrap();
        assert_eq!(with_f.pairs().len(), 18);
    }

    #[test]
    fn protect_labeled_needs_mask() {
        assert!(constraint_mask(&path(4), ConstraintKind::ProtectLabeled, 0, false).is_err());
        let g = path(4).with_labeled_mask(vec![true, false, false, false]);
        let m = constraint_mask(&g, ConstraintKind::ProtectLabeled, 0, false).unwrap();
        assert_eq!(m.pairs(), vec![(1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn resample_extremes() {
        let allowed: Vec<_> = (0..10).flat_map(|i| (i + 1..10).map(move |j| (i, j))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block = BlockState::sample(&allowed, 8, &mut rng);
        block.values = (0..8).map(|k| k as f64 / 8.0).collect();
        assert_eq!(resample_block(&block, 1.0, &allowed, &mut rng), block);
        let fresh = resample_block(&block, 0.0, &allowed, &mut rng);
        assert_eq!(fresh.len(), 8);
        assert!(fresh.values.iter().all(|&v| v == 0.0));
        let half = resample_block(&block, 0.5, &allowed, &mut rng);
        for k in 4..8 {
            assert!(half.pairs.contains(&block.pairs[k]));
        }
    }
}
