//! Reciprocal-weight shortest paths for the relaxed distance encodings.

use std::collections::VecDeque;
use std::rc::Rc;

use grelax_autodiff::{interp_slots, InterpSlot, PathTable, Tensor, Var};

/// Weights below this are treated as absent edges.
pub const MIN_EDGE: f64 = 1e-9;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("pair ({0}, {1}) is unreachable")]
    Unreachable(usize, usize),
}

/// `R_ij = 1/Ã_ij`, `+∞` where `Ã_ij < 1e-9`, zero on the diagonal.
pub fn reciprocal_weights(adj: &Tensor) -> Tensor {
    let n = adj.dims2().0;
    let mut r = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let a = adj.get2(i, j);
                r.set2(i, j, if a < MIN_EDGE { f64::INFINITY } else { 1.0 / a });
            }
        }
    }
    r
}

/// All-pairs distances with one reconstructed path per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathResult {
    pub n: usize,
    /// Row-major `n × n`; `+∞` for unreachable pairs.
    pub dist: Vec<f64>,
    /// `pred[s·n + t]` is the node before `t` on the path from `s`.
    pub pred: Vec<usize>,
}

impl ShortestPathResult {
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Node sequence from `i` to `j`, or `None` when unreachable.
    pub fn path(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        if self.distance(i, j).is_infinite() {
            return None;
        }
        let mut seq = vec![j];
        let mut cur = j;
        while cur != i {
            cur = self.pred[i * self.n + cur];
            seq.push(cur);
        }
        seq.reverse();
        Some(seq)
    }

    /// Edge lists of every pair's path, in source-to-target order.
    pub fn path_table(&self) -> PathTable {
        let n = self.n;
        let mut offsets = Vec::with_capacity(n * n + 1);
        let mut edges = Vec::new();
        offsets.push(0);
        for i in 0..n {
            for j in 0..n {
                if let Some(p) = self.path(i, j) {
                    edges.extend(p.windows(2).map(|w| (w[0] as u32, w[1] as u32)));
                }
                offsets.push(edges.len());
            }
        }
        PathTable {
            rows: n,
            cols: n,
            offsets,
            edges,
        }
    }
}

/// Whether `pa + [t]` precedes `pb + [t]` lexicographically.
fn lex_less(pa: &[usize], pb: &[usize], t: usize) -> bool {
    pa.iter().chain([&t]).lt(pb.iter().chain([&t]))
}

/// Dijkstra from every source over `R`. Among equally short paths the one
/// with the lexicographically smallest node sequence is kept.
pub fn all_pairs_shortest(r: &Tensor) -> ShortestPathResult {
    let n = r.dims2().0;
    let neighbours: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|u| {
            (0..n)
                .filter(|&v| v != u && r.get2(u, v).is_finite())
                .map(|v| (v, r.get2(u, v)))
                .collect()
        })
        .collect();
    let mut dist = vec![f64::INFINITY; n * n];
    let mut pred = vec![NONE; n * n];
    let mut done = vec![false; n];
    // settled[u] is the final path from the source to u
    let mut settled: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        done.iter_mut().for_each(|d| *d = false);
        let row = s * n;
        dist[row + s] = 0.0;
        pred[row + s] = s;
        loop {
            let mut u = NONE;
            for v in 0..n {
                if !done[v] && dist[row + v].is_finite() && (u == NONE || dist[row + v] < dist[row + u]) {
                    u = v;
                }
            }
            if u == NONE {
                break;
            }
            done[u] = true;
            let mut path = if u == s { Vec::new() } else { settled[pred[row + u]].clone() };
            path.push(u);
            settled[u] = path;
            let du = dist[row + u];
            for &(v, w) in &neighbours[u] {
                if done[v] {
                    continue;
                }
                let cand = du + w;
                let p = pred[row + v];
                let better = cand < dist[row + v]
                    || (cand == dist[row + v] && p != u && lex_less(&settled[u], &settled[p], v));
                if better {
                    dist[row + v] = cand;
                    pred[row + v] = u;
                }
            }
        }
    }
    ShortestPathResult { n, dist, pred }
}

/// Relaxed shortest paths of a continuous adjacency.
pub fn relaxed_shortest(adj: &Tensor) -> ShortestPathResult {
    all_pairs_shortest(&reciprocal_weights(adj))
}

/// Hop distances on the support `w > threshold`; `+∞` when unreachable.
pub fn bfs_distances(adj: &Tensor, threshold: f64) -> Vec<f64> {
    let n = adj.dims2().0;
    let mut dist = vec![f64::INFINITY; n * n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        dist[s * n + s] = 0.0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = dist[s * n + u];
            for (v, &w) in adj.row(u).iter().enumerate() {
                if w > threshold && dist[s * n + v].is_infinite() {
                    dist[s * n + v] = du + 1.0;
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

/// Paths frozen for one gradient step: the edge lists plus reachability.
#[derive(Debug, Clone)]
pub struct FrozenPaths {
    pub table: Rc<PathTable>,
    pub dist: Vec<f64>,
}

impl FrozenPaths {
    pub fn of(adj: &Tensor) -> Self {
        let sp = relaxed_shortest(adj);
        Self {
            table: Rc::new(sp.path_table()),
            dist: sp.dist,
        }
    }
}

/// `Σ 1/Ã` over the stored path from `i` to `j`, differentiable in `Ã`.
pub fn path_sum_proxy<'t>(adj: Var<'t>, result: &ShortestPathResult, i: usize, j: usize) -> Result<Var<'t>, PathError> {
    if result.distance(i, j).is_infinite() {
        return Err(PathError::Unreachable(i, j));
    }
    let n = result.n;
    let sums = adj.path_sums(Rc::new(result.path_table()));
    Ok(sums.reshape(&[n * n, 1]).gather_rows(&[i * n + j]).sum())
}

/// Interpolation slots into an SPD bias table with rows `0..=s_max`
/// followed by the unreachable row.
pub fn spd_slots(rspd: &[f64], s_max: usize) -> Vec<InterpSlot> {
    interp_slots(rspd, s_max, Some(s_max + 1))
}

/// Bias for one relaxed distance from a `[s_max + 2, 1]` table.
pub fn spd_bias<'t>(rspd: f64, table: Var<'t>) -> Var<'t> {
    let rows = table.value().dims2().0;
    let s_max = rows - 2;
    let pos = table.tape().constant(Tensor::scalar(if rspd.is_finite() { rspd } else { 0.0 }));
    table.interp_rows(Some(pos), spd_slots(&[rspd], s_max)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use grelax_autodiff::Tape;

    fn path3(ab: f64) -> Tensor {
        let mut a = Tensor::zeros(&[3, 3]);
        for (i, j, w) in [(0, 1, ab), (1, 2, 1.0)] {
            a.set2(i, j, w);
            a.set2(j, i, w);
        }
        a
    }

    #[test]
    fn reciprocal_examples() {
        let r = reciprocal_weights(&path3(0.5));
        assert_eq!(r.get2(1, 2), 1.0);
        assert_eq!(r.get2(0, 1), 2.0);
        assert_eq!(r.get2(0, 2), f64::INFINITY);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(relaxed_shortest(&path3(1.0)).distance(0, 2), 2.0);
        assert_eq!(relaxed_shortest(&path3(0.5)).distance(0, 2), 3.0);
        let mut split = Tensor::zeros(&[3, 3]);
        split.set2(0, 1, 1.0);
        split.set2(1, 0, 1.0);
        assert!(relaxed_shortest(&split).distance(0, 2).is_infinite());
    }

    #[test]
    fn lexicographic_tie_break() {
        // square 0-1-3, 0-2-3: both paths have length 2
        let mut a = Tensor::zeros(&[4, 4]);
        for (i, j) in [(0, 2), (2, 3), (0, 1), (1, 3)] {
            a.set2(i, j, 1.0);
            a.set2(j, i, 1.0);
        }
        let sp = relaxed_shortest(&a);
        assert_eq!(sp.path(0, 3), Some(vec![0, 1, 3]));
        assert_eq!(sp.path(3, 0), Some(vec![3, 1, 0]));
    }

    #[test]
    fn proxy_values_and_gradients() {
        let tape = Tape::new();
        let adj = tape.leaf(path3(1.0));
        let sp = relaxed_shortest(&path3(1.0));
        let v = path_sum_proxy(adj, &sp, 0, 2).unwrap();
        assert_eq!(v.item(), 2.0);
        let g = tape.backward(v).unwrap().get(adj);
        assert_eq!(g.get2(0, 1), -1.0);

        let tape = Tape::new();
        let mut single = Tensor::zeros(&[2, 2]);
        single.set2(0, 1, 0.5);
        single.set2(1, 0, 0.5);
        let adj = tape.leaf(single.clone());
        let v = path_sum_proxy(adj, &relaxed_shortest(&single), 0, 1).unwrap();
        assert_eq!(v.item(), 2.0);
        assert_eq!(tape.backward(v).unwrap().get(adj).get2(0, 1), -4.0);

        let tape = Tape::new();
        let adj = tape.leaf(path3(1.0));
        let v = path_sum_proxy(adj, &sp, 1, 1).unwrap();
        assert_eq!(v.item(), 0.0);
        assert_eq!(tape.backward(v).unwrap().get(adj).max_abs(), 0.0);
    }

    #[test]
    fn unreachable_proxy_is_an_error() {
        let tape = Tape::new();
        let z = Tensor::zeros(&[2, 2]);
        let adj = tape.leaf(z.clone());
        assert_eq!(
            path_sum_proxy(adj, &relaxed_shortest(&z), 0, 1).err(),
            Some(PathError::Unreachable(0, 1))
        );
    }

    #[test]
    fn bias_interpolation() {
        let tape = Tape::new();
        let rows: Vec<f64> = (0..22).map(|k| k as f64 * 10.0 + 1.0).collect();
        let table = tape.constant(Tensor::matrix(22, 1, rows.clone()));
        assert_eq!(spd_bias(2.0, table).item(), rows[2]);
        assert_eq!(spd_bias(2.25, table).item(), 0.25 * rows[3] + 0.75 * rows[2]);
        assert_eq!(spd_bias(f64::INFINITY, table).item(), rows[21]);
        assert_eq!(spd_bias(35.0, table).item(), rows[20]);
    }
}
