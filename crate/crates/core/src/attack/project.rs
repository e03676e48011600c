const SUM_TOL: f64 = 1e-8;
const MAX_BISECTIONS: usize = 200;

/// Euclidean projection onto `{x ∈ [0, 1]^k : Σx ≤ Δ}`, in place.
pub fn project_budget(values: &mut [f64], delta: f64) {
    let shifted = |mu: f64| values.iter().map(|&v| (v - mu).clamp(0.0, 1.0)).sum::<f64>();
    let mu = if shifted(0.0) <= delta {
        0.0
    } else if delta <= 0.0 {
        f64::INFINITY
    } else {
        // Σ clamp(x − μ, 0, 1) is non-increasing in μ. Bisect down to float
        // resolution and keep the feasible end of the bracket.
        let (mut lo, mut hi) = (0.0, values.iter().cloned().fold(0.0, f64::max));
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if shifted(mid) > delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        debug_assert!((shifted(hi) - delta).abs() <= SUM_TOL || shifted(hi) <= delta);
        hi
    };
    values.iter_mut().for_each(|v| *v = (*v - mu).clamp(0.0, 1.0));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let mut v = [0.8, 0.8];
        project_budget(&mut v, 1.0);
        assert!((v[0] - 0.5).abs() < 1e-8 && (v[1] - 0.5).abs() < 1e-8);

        let mut v = [0.2, 0.1];
        project_budget(&mut v, 1.0);
        assert_eq!(v, [0.2, 0.1]);

        let mut v = [2.0, -1.0];
        project_budget(&mut v, 1.0);
        assert_eq!(v, [1.0, 0.0]);
    }

    #[test]
    fn zero_budget_clears() {
        let mut v = [0.3, 0.9];
        project_budget(&mut v, 0.0);
        assert_eq!(v, [0.0, 0.0]);
    }
}
