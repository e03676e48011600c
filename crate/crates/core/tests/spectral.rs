use grelax_autodiff::{finite_difference, Tape, Tensor};
use grelax_core::graph::laplacian_sym;
use grelax_core::spectral::{
    degenerate_alignment, eig_sym, perturb_top_k, EigenDecomposition, PerturbationOperator, DEGENERACY_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let x = rng.random_range(-1.0..1.0);
            m.set2(i, j, x);
            m.set2(j, i, x);
        }
    }
    m
}

fn random_weighted_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let w = rng.random_range(0.2..1.0);
                a.set2(i, j, w);
                a.set2(j, i, w);
            }
        }
    }
    a
}

fn min_gap(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn check_invariants(m: &Tensor, e: &EigenDecomposition) {
    let n = e.n();
    let u = &e.vectors;
    assert!(u.transpose().matmul(u).max_abs_diff(&Tensor::identity(n)) <= 1e-9);
    assert!(e.reconstruct().max_abs_diff(m) <= 1e-8);
    assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn random_matrices_reconstruct() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 5, 8, 8, 8, 30] {
        let m = random_symmetric(&mut rng, n);
        check_invariants(&m, &eig_sym(&m).unwrap());
    }
}

#[test]
fn eigenvalues_match_independent_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let n = rng.random_range(2..25);
        let m = random_symmetric(&mut rng, n);
        let ours = eig_sym(&m).unwrap().values;
        let mut theirs = jacobi_eigenvalues(&m);
        theirs.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
fn jacobi_eigenvalues(m: &Tensor) -> Vec<f64> {
    let n = m.dims2().0;
    let mut a = m.data().to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n * n).filter(|k| k / n != k % n).map(|k| a[k] * a[k]).sum();
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

#[test]
fn sign_convention_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_symmetric(&mut rng, 12);
    let e = eig_sym(&m).unwrap();
    assert_eq!(e, eig_sym(&m).unwrap());
    for j in 0..12 {
        let col: Vec<f64> = (0..12).map(|i| e.vectors.get2(i, j)).collect();
        let big = col.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        assert!(big > 0.0);
    }
}

#[test]
fn laplacian_spectrum_lies_in_zero_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(2..20);
        let density = rng.random_range(0.1..0.9);
        let a = random_weighted_graph(&mut rng, n, density);
        let l = laplacian_sym(&a);
        let e = eig_sym(&l).unwrap();
        check_invariants(&l, &e);
        assert!(e.values[0] >= -1e-9 && e.values[n - 1] <= 2.0 + 1e-9, "{:?}", e.values);
    }
}

/// Largest eigenvalue and eigenvector errors of the first-order update
/// against an exact re-decomposition of `L + δL`.
fn first_order_errors(l: &Tensor, base: &EigenDecomposition, dl: &Tensor) -> (f64, f64) {
    let n = base.n();
    let op = PerturbationOperator::new(&base.values);
    let tape = Tape::new();
    let (vals, vecs) = perturb_top_k(base, &op, tape.constant(dl.clone()), n);
    let exact = eig_sym(&l.zip_map(dl, |a, b| a + b)).unwrap();
    let vals = vals.to_tensor();
    let vecs = vecs.to_tensor();
    let mut ev = 0.0f64;
    let mut evec = 0.0f64;
    for j in 0..n {
        ev = ev.max((vals.data()[j] - exact.values[j]).abs());
        let dot: f64 = (0..n).map(|i| vecs.get2(i, j) * exact.vectors.get2(i, j)).sum();
        let s = dot.signum();
        for i in 0..n {
            evec = evec.max((vecs.get2(i, j) - s * exact.vectors.get2(i, j)).abs());
        }
    }
    (ev, evec)
}

#[test]
fn first_order_error_is_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut trials = 0;
    while trials < 50 {
        let a = random_weighted_graph(&mut rng, 10, 0.5);
        let l = laplacian_sym(&a);
        let base = eig_sym(&l).unwrap();
        if min_gap(&base.values) < 0.05 {
            continue;
        }
        trials += 1;
        let dir = random_symmetric(&mut rng, 10);
        let norm = dir.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let at = |eps: f64| dir.map(|x| x * eps / norm);
        let (v1, u1) = first_order_errors(&l, &base, &at(1e-2));
        let (v2, u2) = first_order_errors(&l, &base, &at(5e-3));
        for (name, r) in [("eigenvalue", v1 / v2), ("eigenvector", u1 / u2)] {
            assert!((3.0..=5.0).contains(&r), "{name} error ratio {r:.3} in trial {trials}");
        }
    }
}

fn weighted_perturbation<'t>(
    base: &EigenDecomposition,
    op: &PerturbationOperator,
    d: grelax_autodiff::Var<'t>,
    wv: &Tensor,
    wu: &Tensor,
) -> grelax_autodiff::Var<'t> {
    let tape = d.tape();
    let (v, u) = perturb_top_k(base, op, d, wv.len());
    (v * tape.constant(wv.clone())).sum() + (u * tape.constant(wu.clone())).sum()
}

#[test]
fn perturbation_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, k) = (6, 3);
    for _ in 0..10 {
        let a = random_weighted_graph(&mut rng, n, 0.7);
        let base = eig_sym(&laplacian_sym(&a)).unwrap();
        let op = PerturbationOperator::new(&base.values);
        let wv = Tensor::vector((0..k).map(|_| rng.random_range(-1.0..1.0)).collect());
        let wu = Tensor::matrix(n, k, (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect());
        let point = random_symmetric(&mut rng, n).map(|x| 0.01 * x);
        let tape = Tape::new();
        let d = tape.leaf(point.clone());
        let l = weighted_perturbation(&base, &op, d, &wv, &wu);
        let got = tape.backward(l).unwrap().get(d);
        let want = finite_difference(
            |x| {
                let t = Tape::new();
                weighted_perturbation(&base, &op, t.constant(x.clone()), &wv, &wu).item()
            },
            &point,
            1e-5,
        );
        let rel = got.max_abs_diff(&want) / want.max_abs().max(1e-3);
        assert!(rel <= 1e-4, "relative error {rel:e}");
    }
}

#[test]
fn alignment_leaves_distinct_spectrum_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_weighted_graph(&mut rng, 8, 0.6);
    let base = eig_sym(&laplacian_sym(&a)).unwrap();
    let dl = random_symmetric(&mut rng, 8);
    assert_eq!(degenerate_alignment(&base, &dl, DEGENERACY_TOL), base);
}

#[test]
fn degenerate_star_is_aligned() {
    // star graph: eigenvalue 1 with multiplicity n-2
    let n = 6;
    let mut a = Tensor::zeros(&[n, n]);
    for v in 1..n {
        a.set2(0, v, 1.0);
        a.set2(v, 0, 1.0);
    }
    let base = eig_sym(&laplacian_sym(&a)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dl = random_symmetric(&mut rng, n).map(|x| 0.01 * x);
    let aligned = degenerate_alignment(&base, &dl, DEGENERACY_TOL);
    let op = PerturbationOperator::new(&aligned.values);
    assert_eq!(op.groups.len(), 1);
    let g = op.groups[0].clone();
    let u = &aligned.vectors;
    let proj = u.transpose().matmul(&dl.matmul(u));
    for i in g.clone() {
        for j in g.clone() {
            if i != j {
                assert!(proj.get2(i, j).abs() < 1e-9);
            }
        }
    }
    assert!(aligned.reconstruct().max_abs_diff(&laplacian_sym(&a)) < 1e-12);
}
