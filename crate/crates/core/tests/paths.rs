use std::rc::Rc;

use grelax_autodiff::{finite_difference, Tape, Tensor};
use grelax_core::paths::{all_pairs_shortest, bfs_distances, reciprocal_weights, relaxed_shortest, FrozenPaths};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64, weighted: bool) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let w = if weighted { rng.random_range(0.05..1.0) } else { 1.0 };
                a.set2(i, j, w);
                a.set2(j, i, w);
            }
        }
    }
    a
}

#[test]
fn discrete_distances_equal_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let density = rng.random_range(0.02..0.5);
        let a = random_graph(&mut rng, n, density, false);
        assert_eq!(relaxed_shortest(&a).dist, bfs_distances(&a, 0.5));
    }
}

#[test]
fn metric_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let n = rng.random_range(2..15);
        let a = random_graph(&mut rng, n, 0.4, true);
        let sp = relaxed_shortest(&a);
        for i in 0..n {
            assert_eq!(sp.distance(i, i), 0.0);
            for j in 0..n {
                assert!((sp.distance(i, j) - sp.distance(j, i)).abs() <= 1e-9 || sp.distance(i, j).is_infinite());
                for k in 0..n {
                    assert!(sp.distance(i, k) <= sp.distance(i, j) + sp.distance(j, k) + 1e-9);
                }
            }
        }
    }
}

#[test]
fn raising_a_weight_never_lengthens_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(2..12);
        let a = random_graph(&mut rng, n, 0.4, true);
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i == j {
            continue;
        }
        let mut b = a.clone();
        let w = (a.get2(i, j) + rng.random_range(0.0..1.0)).min(1.0);
        b.set2(i, j, w);
        b.set2(j, i, w);
        let (da, db) = (relaxed_shortest(&a), relaxed_shortest(&b));
        for (x, y) in da.dist.iter().zip(&db.dist) {
            assert!(y <= x, "{y} > {x}");
        }
    }
}

/// Brute-force lexicographically smallest shortest path by DFS over simple paths.
fn brute_path(r: &Tensor, s: usize, t: usize, target: f64) -> Option<Vec<usize>> {
    fn go(r: &Tensor, path: &mut Vec<usize>, len: f64, t: usize, target: f64, best: &mut Option<Vec<usize>>) {
        let u = *path.last().unwrap();
        if u == t {
            if len == target && best.as_ref().is_none_or(|b| path.as_slice() < b.as_slice()) {
                *best = Some(path.clone());
            }
            return;
        }
        for v in 0..r.dims2().0 {
            let w = r.get2(u, v);
            if v != u && w.is_finite() && !path.contains(&v) && len + w <= target {
                path.push(v);
                go(r, path, len + w, t, target, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    go(r, &mut vec![s], 0.0, t, target, &mut best);
    best
}

#[test]
fn tie_break_picks_lexicographically_smallest_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..40 {
        let n = rng.random_range(2..8);
        let a = random_graph(&mut rng, n, 0.5, false);
        let r = reciprocal_weights(&a);
        let sp = all_pairs_shortest(&r);
        for s in 0..n {
            for t in 0..n {
                let d = sp.distance(s, t);
                if d.is_finite() {
                    assert_eq!(sp.path(s, t), brute_path(&r, s, t, d), "pair ({s}, {t})");
                }
            }
        }
    }
}

#[test]
fn frozen_path_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = 7;
        let a = random_graph(&mut rng, n, 0.6, true).map(|w| if w > 0.0 { 0.2 + 0.7 * w } else { 0.0 });
        let frozen = FrozenPaths::of(&a);
        let weights = Tensor::matrix(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let tape = Tape::new();
        let leaf = tape.leaf(a.clone());
        let loss = (leaf.path_sums(Rc::clone(&frozen.table)) * tape.constant(weights.clone())).sum();
        let got = tape.backward(loss).unwrap().get(leaf);
        let want = finite_difference(
            |x| {
                let t = Tape::new();
                (t.constant(x.clone()).path_sums(Rc::clone(&frozen.table)) * t.constant(weights.clone()))
                    .sum()
                    .item()
            },
            &a,
            1e-5,
        );
        let rel = got.max_abs_diff(&want) / want.max_abs().max(1e-3);
        assert!(rel <= 1e-4, "relative error {rel:e}");
    }
}
