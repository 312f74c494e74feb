//! Gauss–Legendre and Gauss–Hermite rules by Newton iteration on the
//! three-term recurrences.

use crate::error::{invalid, Error, Result};
use crate::real::Real;

const MAX_NEWTON: usize = 100;

/// Largest supported Gauss–Legendre order.
pub const MAX_LEGENDRE_ORDER: usize = 64;

/// `(P_n(x), P_{n-1}(x))` via `(k+1)P_{k+1} = (2k+1)xP_k − kP_{k−1}`.
fn legendre_pair<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p_prev = T::one();
    let mut p = x;
    for k in 1..n {
        let kf = T::from_count(k);
        let next = ((kf + kf + T::one()) * x * p - kf * p_prev) / (kf + T::one());
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Nodes (ascending, in `(-1, 1)`) and weights of the `n`-point
/// Gauss–Legendre rule on `[-1, 1]`, `1 ≤ n ≤ 64`.
pub fn gauss_legendre<T: Real>(n: usize) -> Result<(Vec<T>, Vec<T>)> {
    if n == 0 || n > MAX_LEGENDRE_ORDER {
        return Err(invalid(format!("Gauss-Legendre order must be in 1..={MAX_LEGENDRE_ORDER}, got {n}")));
    }
    let tol = T::lit(1e-14).max(T::epsilon() * T::lit(4.0));
    let nf = T::from_count(n);
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    // roots are symmetric; compute the non-negative half and mirror
    for i in 0..n.div_ceil(2) {
        // Chebyshev-type initial guess
        let mut x = (T::PI() * (T::from_count(i) + T::lit(0.75)) / (nf + T::lit(0.5))).cos();
        let mut converged = false;
        for _ in 0..MAX_NEWTON {
            let (p, p_prev) = legendre_pair(n, x);
            let dp = nf * (x * p - p_prev) / (x * x - T::one());
            let step = p / dp;
            x = x - step;
            if step.abs() <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence(format!("Gauss-Legendre root {i} of order {n}")));
        }
        if n % 2 == 1 && i == n / 2 {
            x = T::zero();
        }
        let (p, p_prev) = legendre_pair(n, x);
        let dp = nf * (x * p - p_prev) / (x * x - T::one());
        let w = T::lit(2.0) / ((T::one() - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok((nodes, weights))
}

/// Affine map of a rule on `[-1, 1]` to `[a, b]`.
pub fn rescale<T: Real>(nodes: &[T], weights: &[T], a: T, b: T) -> (Vec<T>, Vec<T>) {
    let half = (b - a) / T::lit(2.0);
    let mid = (a + b) / T::lit(2.0);
    (
        nodes.iter().map(|&x| mid + half * x).collect(),
        weights.iter().map(|&w| w * half).collect(),
    )
}

/// `n`-point Gauss–Hermite rule for the weight `exp(-x²)` (physicists'
/// convention), nodes ascending.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 200 {
        return Err(invalid(format!("Gauss-Hermite order must be in 1..=200, got {n}")));
    }
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        // initial guesses for the largest roots first
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..MAX_NEWTON {
            // orthonormal Hermite recurrence
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence(format!("Gauss-Hermite root {i} of order {n}")));
        }
        // nodes[] temporarily holds the descending positive roots
        nodes[i] = z;
        weights[i] = 2.0 / (pp * pp);
    }
    let positive: Vec<(f64, f64)> = nodes[..m].iter().copied().zip(weights[..m].iter().copied()).collect();
    for (i, &(z, w)) in positive.iter().enumerate() {
        nodes[i] = -z;
        weights[i] = w;
        nodes[n - 1 - i] = z;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_orders() {
        let (x, w) = gauss_legendre::<f64>(1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - 2.0).abs() < 1e-15);
        let (x, w) = gauss_legendre::<f64>(2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert!((x[0] + r).abs() < 1e-15 && (x[1] - r).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        let (x, w) = gauss_legendre::<f64>(5).unwrap();
        assert_eq!(x[2], 0.0);
        assert!((w[2] - 128.0 / 225.0).abs() < 1e-14);
        // analytic outer nodes of the 5-point rule
        let outer = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
        assert!((x[4] - outer).abs() < 1e-14);
        assert!((w[4] - (322.0 - 13.0 * 70f64.sqrt()) / 900.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_two_and_integrate_polynomials() {
        for n in 1..=MAX_LEGENDRE_ORDER {
            let (x, w) = gauss_legendre::<f64>(n).unwrap();
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13, "n={n}");
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            assert!(x.iter().all(|v| v.abs() < 1.0));
            // exact for degree 2n-1; check x^{2k}
            for k in 0..n.min(8) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k as i32)).sum();
                assert!((q - 2.0 / (2 * k + 1) as f64).abs() < 1e-12, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(gauss_legendre::<f64>(0).is_err());
        assert!(gauss_legendre::<f64>(65).is_err());
    }

    #[test]
    fn rescaled_rule_integrates_constants() {
        let (x, w) = gauss_legendre::<f64>(7).unwrap();
        let (y, v) = rescale(&x, &w, 0.2, 0.7);
        assert!((v.iter().sum::<f64>() - 0.5).abs() < 1e-14);
        assert!(y.iter().all(|&t| t > 0.2 && t < 0.7));
        let cubic: f64 = y.iter().zip(&v).map(|(t, w)| w * t * t * t).sum();
        assert!((cubic - (0.7f64.powi(4) - 0.2f64.powi(4)) / 4.0).abs() < 1e-14);
    }

    #[test]
    fn single_precision_rule() {
        let (x, w) = gauss_legendre::<f32>(6).unwrap();
        assert!((w.iter().sum::<f32>() - 2.0).abs() < 1e-5);
        assert!(x.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn hermite_moments() {
        for n in [1usize, 2, 5, 16, 40] {
            let (x, w) = gauss_hermite(n).unwrap();
            let sqrt_pi = std::f64::consts::PI.sqrt();
            assert!((w.iter().sum::<f64>() - sqrt_pi).abs() < 1e-12, "n={n}");
            if n >= 2 {
                let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
                assert!((m2 - sqrt_pi / 2.0).abs() < 1e-12);
            }
            if n >= 3 {
                let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
                assert!((m4 - 3.0 * sqrt_pi / 4.0).abs() < 1e-11);
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
