//! Symmetric eigendecomposition and first-order spectral perturbation.

use std::ops::Range;

use grelax_autodiff::{Tensor, Var};

const SYMMETRY_TOL: f64 = 1e-9;
/// Relative tolerance for treating eigenvalues as equal.
pub const DEGENERACY_TOL: f64 = 1e-8;
const SMALL_GAP: f64 = 1e-6;
const PI_CLAMP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("eig_sym: matrix is not symmetric (max |L - Lᵀ| = {0:e})")]
    NotSymmetric(f64),
    #[error("eig_sym: matrix has shape {0:?}, expected square")]
    NotSquare(Vec<usize>),
    #[error("eig_sym: matrix contains non-finite entries")]
    NonFinite,
}

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl EigenDecomposition {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> Tensor {
        let n = self.n();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for j in 0..n {
                scaled.set2(i, j, self.vectors.get2(i, j) * self.values[j]);
            }
        }
        scaled.matmul(&self.vectors.transpose())
    }

    /// Block-diagonal extension with `extra` isolated nodes, each contributing
    /// eigenvalue 1 and a unit eigenvector, re-sorted ascending.
    pub fn with_isolated(&self, extra: usize) -> EigenDecomposition {
        let n = self.n();
        let total = n + extra;
        let mut cols: Vec<(f64, Vec<f64>)> = (0..n)
            .map(|j| {
                let mut c: Vec<f64> = (0..n).map(|i| self.vectors.get2(i, j)).collect();
                c.resize(total, 0.0);
                (self.values[j], c)
            })
            .collect();
        for e in 0..extra {
            let mut c = vec![0.0; total];
            c[n + e] = 1.0;
            cols.push((1.0, c));
        }
        cols.sort_by(|a, b| a.0.total_cmp(&b.0));
        from_columns(cols)
    }
}

fn from_columns(cols: Vec<(f64, Vec<f64>)>) -> EigenDecomposition {
    let n = cols.len();
    let mut vectors = Tensor::zeros(&[n, n]);
    let mut values = Vec::with_capacity(n);
    for (j, (v, c)) in cols.into_iter().enumerate() {
        values.push(v);
        for (i, x) in c.into_iter().enumerate() {
            vectors.set2(i, j, x);
        }
    }
    EigenDecomposition { values, vectors }
}

/// Flips column signs so each column's largest-magnitude entry is positive
/// (the lowest index wins ties).
fn fix_signs(u: &mut Tensor) {
    let (n, m) = u.dims2();
    for j in 0..m {
        let mut best = 0;
        for i in 1..n {
            if u.get2(i, j).abs() > u.get2(best, j).abs() {
                best = i;
            }
        }
        if u.get2(best, j) < 0.0 {
            for i in 0..n {
                u.set2(i, j, -u.get2(i, j));
            }
        }
    }
}

/// Symmetric eigendecomposition (Householder tridiagonalization and
/// implicit QR), sorted ascending with a deterministic sign per vector.
pub fn eig_sym(l: &Tensor) -> Result<EigenDecomposition, SpectralError> {
    if l.ndim() != 2 || l.dims2().0 != l.dims2().1 {
        return Err(SpectralError::NotSquare(l.shape().to_vec()));
    }
    if !l.is_finite() {
        return Err(SpectralError::NonFinite);
    }
    let asym = l.max_abs_diff(&l.transpose());
    if asym > SYMMETRY_TOL {
        return Err(SpectralError::NotSymmetric(asym));
    }
    let n = l.dims2().0;
    let eig = nalgebra::DMatrix::from_row_slice(n, n, l.data()).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let cols = order
        .into_iter()
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors.column(j).iter().cloned().collect()))
        .collect();
    let mut out = from_columns(cols);
    fix_signs(&mut out.vectors);
    Ok(out)
}

/// Index ranges of consecutive eigenvalues equal up to `tol · max(1, |λ|)`.
/// Singletons are omitted.
pub fn degenerate_groups(values: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || values[i] - values[i - 1] > tol * values[i - 1].abs().max(1.0);
        if split {
            if i - start > 1 {
                groups.push(start..i);
            }
            start = i;
        }
    }
    groups
}

/// `Π_ij = 1/(λ_i − λ_j)`, zero inside degenerate groups.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationOperator {
    pub pi: Tensor,
    pub groups: Vec<Range<usize>>,
}

impl PerturbationOperator {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        let groups = degenerate_groups(values, DEGENERACY_TOL);
        let mut group_of = vec![usize::MAX; n];
        for (g, r) in groups.iter().enumerate() {
            for i in r.clone() {
                group_of[i] = g;
            }
        }
        let mut pi = Tensor::zeros(&[n, n]);
        let mut clamped = 0;
        for i in 0..n {
            for j in 0..n {
                if i == j || (group_of[i] != usize::MAX && group_of[i] == group_of[j]) {
                    continue;
                }
                let gap = values[i] - values[j];
                let mut x = 1.0 / gap;
                if gap.abs() < SMALL_GAP {
                    x = x.clamp(-PI_CLAMP, PI_CLAMP);
                    clamped += 1;
                }
                pi.set2(i, j, x);
            }
        }
        if clamped > 0 {
            log::warn!("eigen-gap below {SMALL_GAP:e} for {} pairs; clamped Π to ±{PI_CLAMP:e}", clamped / 2);
        }
        Self { pi, groups }
    }
}

/// Rotates each degenerate eigenspace so `Uᵀ δL U` is diagonal on it.
/// `tol` is the relative degeneracy tolerance.
pub fn degenerate_alignment(base: &EigenDecomposition, delta_l: &Tensor, tol: f64) -> EigenDecomposition {
    let mut out = base.clone();
    let n = base.n();
    for g in degenerate_groups(&base.values, tol) {
        let k = g.len();
        let mut ug = Tensor::zeros(&[n, k]);
        for i in 0..n {
            for (c, j) in g.clone().enumerate() {
                ug.set2(i, c, base.vectors.get2(i, j));
            }
        }
        let block = ug.transpose().matmul(&delta_l.matmul(&ug));
        if block.max_abs() == 0.0 {
            continue;
        }
        let sym = block.zip_map(&block.transpose(), |a, b| 0.5 * (a + b));
        let w = eig_sym(&sym).expect("projected perturbation block is symmetric").vectors;
        let mut rotated = ug.matmul(&w);
        fix_signs(&mut rotated);
        for i in 0..n {
            for (c, j) in g.clone().enumerate() {
                out.vectors.set2(i, j, rotated.get2(i, c));
            }
        }
    }
    out
}

/// First-order perturbed eigenpairs, restricted to the first `k` of them.
///
/// `λ̃ = λ + diag(Uᵀ δL U)` and `Ũ = U − U (Π ⊙ Uᵀ δL U)`. The base must
/// already be aligned with `δL` via [`degenerate_alignment`].
pub fn perturb_top_k<'t>(
    base: &EigenDecomposition,
    op: &PerturbationOperator,
    delta_l: Var<'t>,
    k: usize,
) -> (Var<'t>, Var<'t>) {
    let tape = delta_l.tape();
    let n = base.n();
    assert!(k <= n, "perturb_top_k: k={k} exceeds n={n}");
    let u = tape.constant(base.vectors.clone());
    let uk = u.slice_cols(0, k);
    let c = u.t_matmul(delta_l.matmul(uk));
    let head: Vec<usize> = (0..k).collect();
    let lambda = tape.constant(Tensor::vector(base.values[..k].to_vec()));
    let values = lambda + c.gather_rows(&head).diag();
    let pi_k = tape.constant(op.pi.clone()).slice_cols(0, k);
    let vectors = uk - u.matmul(pi_k * c);
    (values, vectors)
}

/// `λ + diag(Uᵀ δL U)` for all eigenpairs.
pub fn perturb_eigenvalues<'t>(base: &EigenDecomposition, delta_l: Var<'t>) -> Var<'t> {
    let op = PerturbationOperator::new(&base.values);
    perturb_top_k(base, &op, delta_l, base.n()).0
}

/// `U − U (Π ⊙ Uᵀ δL U)` for all eigenpairs.
pub fn perturb_eigenvectors<'t>(base: &EigenDecomposition, delta_l: Var<'t>) -> Var<'t> {
    let op = PerturbationOperator::new(&base.values);
    perturb_top_k(base, &op, delta_l, base.n()).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use grelax_autodiff::Tape;

    fn diag2() -> EigenDecomposition {
        eig_sym(&Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 2.0])).unwrap()
    }

    #[test]
    fn identity_decomposes_to_identity() {
        let e = eig_sym(&Tensor::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0; 3]);
        assert_eq!(e.vectors, Tensor::identity(3));
    }

    #[test]
    fn single_edge_laplacian() {
        let e = eig_sym(&Tensor::matrix(2, 2, vec![1.0, -1.0, -1.0, 1.0])).unwrap();
        assert!(e.values[0].abs() < 1e-15 && (e.values[1] - 2.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let want = Tensor::matrix(2, 2, vec![h, h, h, -h]);
        assert!(e.vectors.max_abs_diff(&want) < 1e-15, "{:?}", e.vectors);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(eig_sym(&m), Err(SpectralError::NotSymmetric(_))));
    }

    #[test]
    fn alignment_is_identity_without_degeneracy_or_perturbation() {
        let base = diag2();
        let dl = Tensor::matrix(2, 2, vec![0.0, 0.1, 0.1, 0.0]);
        assert_eq!(degenerate_alignment(&base, &dl, DEGENERACY_TOL), base);
        let ident = eig_sym(&Tensor::identity(3)).unwrap();
        assert_eq!(degenerate_alignment(&ident, &Tensor::zeros(&[3, 3]), DEGENERACY_TOL), ident);
    }

    #[test]
    fn alignment_diagonalizes_degenerate_block() {
        let base = eig_sym(&Tensor::identity(2)).unwrap();
        let dl = Tensor::matrix(2, 2, vec![0.0, 0.1, 0.1, 0.0]);
        let aligned = degenerate_alignment(&base, &dl, DEGENERACY_TOL);
        let u = &aligned.vectors;
        let proj = u.transpose().matmul(&dl.matmul(u));
        assert!(proj.get2(0, 1).abs() < 1e-9);
        assert!(u.transpose().matmul(u).max_abs_diff(&Tensor::identity(2)) < 1e-12);
    }

    #[test]
    fn first_order_examples() {
        let base = diag2();
        let tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(&[2, 2]));
        assert_eq!(perturb_eigenvalues(&base, zero).value().data(), &[0.0, 2.0]);
        assert_eq!(perturb_eigenvectors(&base, zero).to_tensor(), base.vectors);

        let diag = tape.constant(Tensor::matrix(2, 2, vec![0.1, 0.0, 0.0, 0.0]));
        let l = perturb_eigenvalues(&base, diag).to_tensor();
        assert!((l.data()[0] - 0.1).abs() < 1e-15 && l.data()[1] == 2.0);

        let off = tape.constant(Tensor::matrix(2, 2, vec![0.0, 0.1, 0.1, 0.0]));
        let l = perturb_eigenvalues(&base, off).to_tensor();
        assert_eq!(l.data(), &[0.0, 2.0]);
        let du = perturb_eigenvectors(&base, off).to_tensor().zip_map(&base.vectors, |a, b| a - b);
        let want = Tensor::matrix(2, 2, vec![0.0, 0.05, -0.05, 0.0]);
        assert!(du.max_abs_diff(&want) < 1e-15, "{du:?}");
    }

    #[test]
    fn pi_is_antisymmetric_and_zero_in_groups() {
        let op = PerturbationOperator::new(&[0.0, 0.5, 0.5, 1.3]);
        assert_eq!(op.groups, vec![1..3]);
        assert_eq!(op.pi.get2(1, 2), 0.0);
        for i in 0..4 {
            assert_eq!(op.pi.get2(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(op.pi.get2(i, j), -op.pi.get2(j, i));
            }
        }
        assert!((op.pi.get2(0, 3) + 1.0 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn tiny_gaps_are_clamped() {
        let op = PerturbationOperator::new(&[0.0, 1e-7]);
        assert_eq!(op.pi.get2(0, 1), -PI_CLAMP);
        assert_eq!(op.pi.get2(1, 0), PI_CLAMP);
    }

    #[test]
    fn isolated_extension_sorts_in_unit_eigenvalues() {
        let e = eig_sym(&Tensor::matrix(2, 2, vec![1.0, -1.0, -1.0, 1.0])).unwrap();
        let x = e.with_isolated(1);
        assert_eq!(x.values.len(), 3);
        assert_eq!(x.values[1], 1.0);
        assert_eq!(x.vectors.get2(2, 1), 1.0);
        assert!(x.reconstruct().max_abs_diff(&{
            let mut l = Tensor::identity(3);
            l.set2(0, 1, -1.0);
            l.set2(1, 0, -1.0);
            l
        }) < 1e-14);
    }
}
