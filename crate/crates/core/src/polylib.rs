//! Jacobi polynomials and their zeros.

/// Evaluates the Jacobi polynomial `P_n^{(alpha,beta)}(x)` by the three-term recurrence.
pub fn jacobi(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let ab = alpha + beta;
    let mut p_prev = 1.0;
    let mut p = 0.5 * ((ab + 2.0) * x + (alpha - beta));
    for k in 1..n {
        let k = k as f64;
        let a1 = 2.0 * (k + 1.0) * (k + ab + 1.0) * (2.0 * k + ab);
        let a2 = (2.0 * k + ab + 1.0) * (alpha * alpha - beta * beta);
        let a3 = (2.0 * k + ab) * (2.0 * k + ab + 1.0) * (2.0 * k + ab + 2.0);
        let a4 = 2.0 * (k + alpha) * (k + beta) * (2.0 * k + ab + 2.0);
        let next = ((a2 + a3 * x) * p - a4 * p_prev) / a1;
        p_prev = p;
        p = next;
    }
    p
}

/// Derivative of `P_n^{(alpha,beta)}` from the identity
/// `d/dx P_n^{(a,b)} = (n+a+b+1)/2 P_{n-1}^{(a+1,b+1)}`.
pub fn jacobi_deriv(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    0.5 * (n as f64 + alpha + beta + 1.0) * jacobi(n - 1, alpha + 1.0, beta + 1.0, x)
}

pub(crate) const NEWTON_TOL: f64 = 1e-15;
pub(crate) const NEWTON_MAX_ITER: usize = 100;

/// Zeros of `P_n^{(alpha,beta)}` in increasing order, by Newton iteration with deflation.
pub fn jacobi_zeros(n: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let mut roots: Vec<f64> = Vec::with_capacity(n);
    for k in 0..n {
        let mut r = -(std::f64::consts::PI * (2 * k + 1) as f64 / (2 * n) as f64).cos();
        if let Some(&last) = roots.last() {
            r = 0.5 * (r + last);
        }
        for _ in 0..NEWTON_MAX_ITER {
            let deflation: f64 = roots.iter().map(|&z| 1.0 / (r - z)).sum();
            let p = jacobi(n, alpha, beta, r);
            let dp = jacobi_deriv(n, alpha, beta, r);
            let delta = -p / (dp - deflation * p);
            r += delta;
            if delta.abs() < NEWTON_TOL {
                break;
            }
        }
        roots.push(r);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_matches_closed_forms() {
        for &x in &[-0.9, -0.3, 0.0, 0.4, 1.0] {
            assert!((jacobi(2, 0.0, 0.0, x) - 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-15);
            assert!((jacobi(3, 0.0, 0.0, x) - 0.5 * (5.0 * x * x * x - 3.0 * x)).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobi_endpoint_value() {
        // P_n^{(a,b)}(1) = binom(n + a, n)
        assert!((jacobi(4, 1.0, 1.0, 1.0) - 5.0).abs() < 1e-12);
        assert!((jacobi(3, 3.0, 1.0, 1.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        for n in 1..8 {
            for &x in &[-0.7, 0.1, 0.6] {
                let fd = (jacobi(n, 3.0, 1.0, x + h) - jacobi(n, 3.0, 1.0, x - h)) / (2.0 * h);
                assert!((fd - jacobi_deriv(n, 3.0, 1.0, x)).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn zeros_are_roots() {
        for n in 1..20 {
            for z in jacobi_zeros(n, 1.0, 1.0) {
                assert!(jacobi(n, 1.0, 1.0, z).abs() < 1e-10 * (n * n) as f64);
            }
        }
    }
}
