//! Thin wrapper over the blocked GEMM from `matrixmultiply`.

/// `c = op(a) · op(b) + beta · c` for row-major buffers.
///
/// `op(a)` is `m × k`; when `ta` is set, `a` is stored as `k × m`. Likewise
/// `op(b)` is `k × n` and is stored as `n × k` when `tb` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            c.iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    if !ta && n <= NARROW {
        if tb {
            narrow(m, k, n, a, &transpose(n, k, b), c, beta);
        } else {
            narrow(m, k, n, a, b, c, beta);
        }
        return;
    }
    if ta && !tb && m <= NARROW && n <= NARROW {
        outer_sum(m, k, n, a, b, c, beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the `m*k`, `k*n` and `m*n`
    // elements of the asserted buffer lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output widths up to this use [`narrow`]; packing costs more than it saves.
const NARROW: usize = 32;

/// Row-by-row `c_i = Σ_p a_ip b_p + beta c_i` without packing.
fn narrow(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    for (ci, ai) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)).take(m) {
        if beta == 0.0 {
            ci.fill(0.0);
        } else {
            ci.iter_mut().for_each(|x| *x *= beta);
        }
        for (&aip, bp) in ai.iter().zip(b.chunks_exact(n)) {
            for (x, &y) in ci.iter_mut().zip(bp) {
                *x += aip * y;
            }
        }
    }
}

/// `c = aᵀ b + beta c` for `a: [k, m]`, `b: [k, n]`, accumulated row by row.
fn outer_sum(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    if beta == 0.0 {
        c.fill(0.0);
    } else {
        c.iter_mut().for_each(|x| *x *= beta);
    }
    for (ap, bp) in a.chunks_exact(m).zip(b.chunks_exact(n)).take(k) {
        for (ci, &api) in c.chunks_exact_mut(n).zip(ap) {
            if api == 0.0 {
                continue;
            }
            for (x, &y) in ci.iter_mut().zip(bp) {
                *x += api * y;
            }
        }
    }
}

fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn transposed_operands_agree_with_naive() {
        for (m, k, n) in [(3, 4, 5), (40, 50, 60), (7, 300, 9)] {
            check(m, k, n);
        }
    }

    fn check(m: usize, k: usize, n: usize) {
        let a: Vec<f64> = (0..m * k).map(|x| x as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|x| (x as f64).sin()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut acc = vec![1.0; m * n];
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            gemm(m, k, n, aa, ta, bb, tb, &mut acc, 2.0);
            for (x, y) in acc.iter().zip(&want) {
                assert!((x - y - 2.0).abs() <= 1e-12 * y.abs().max(1.0));
            }
            let mut c = vec![0.0; m * n];
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            gemm(m, k, n, aa, ta, bb, tb, &mut c, 0.0);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}
