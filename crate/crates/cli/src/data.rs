use grelax_core::graph::{generate_retweet_tree, generate_sbm_cluster};
use grelax_core::{Dataset, Graph, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DatasetSpec;
use crate::error::CliError;

/// Draws the dataset; graph `i` gets its own seed from a stream keyed by `seed`.
/// Splits are contiguous: train, then validation, then test.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<Dataset, CliError> {
    let (train, val, test) = spec.sizes();
    let total = train + val + test;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..total).map(|_| rng.random()).collect();
    let graphs = match spec {
        DatasetSpec::Cluster { sbm, .. } => seeds
            .iter()
            .map(|&s| generate_sbm_cluster(s, sbm))
            .collect::<Result<Vec<Graph>, _>>()?,
        DatasetSpec::Tree { tree, .. } => {
            // alternate labels inside every split so each stays balanced
            let label = |i: usize| {
                let k = if i < train { i } else if i < train + val { i - train } else { i - train - val };
                k % 2
            };
            seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| generate_retweet_tree(s, tree, label(i)))
                .collect::<Result<Vec<Graph>, _>>()?
        }
    };
    let split = Split {
        train: (0..train).collect(),
        val: (train..train + val).collect(),
        test: (train + val..total).collect(),
    };
    Ok(Dataset::new(graphs, split, spec.task())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use grelax_core::graph::TreeParams;

    #[test]
    fn tree_labels_are_balanced() {
        let spec = DatasetSpec::Tree {
            train: 10,
            val: 4,
            test: 6,
            tree: TreeParams::default(),
        };
        let ds = generate(&spec, 3).unwrap();
        for part in [&ds.split.train, &ds.split.val, &ds.split.test] {
            let ones = part.iter().filter(|&&i| ds.graphs[i].graph_label == Some(1)).count();
            assert_eq!(2 * ones, part.len());
        }
        assert_eq!(generate(&spec, 3).unwrap(), ds);
    }
}
