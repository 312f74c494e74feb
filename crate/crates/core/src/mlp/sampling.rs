//! Time sampling, exact constant-coefficient paths and thresholding.

use crate::real::Real;
use crate::rng::RngStream;

use super::Estimate;

/// Importance weight `1/ϱ` for the time fraction `frac ∈ (0, 1)` under the
/// density `(1-α) r^{-α}` rescaled to `(s, T)`.
pub fn time_weight<T: Real>(s: T, horizon: T, alpha: T, frac: T) -> T {
    (horizon - s) * frac.powf(alpha) / (T::one() - alpha)
}

/// Inverse-CDF draw of a time in `(s, T)` from a uniform `u ∈ (0, 1)`.
/// Returns `(R, 1/ϱ(R))`.
pub fn sample_time<T: Real>(s: T, horizon: T, alpha: T, u: T) -> (T, T) {
    let frac = u.powf(T::one() / (T::one() - alpha));
    (s + (horizon - s) * frac, time_weight(s, horizon, alpha, frac))
}

/// Endpoint and Brownian increment of one path over `(s, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample<T> {
    pub endpoint: Vec<T>,
    pub increment: Vec<T>,
    pub dt: T,
}

impl<T: Real> PathSample<T> {
    /// `X = x + μ·dt + c·dW`.
    pub fn from_increment(x: &[T], dt: T, drift: &[T], diffusion: T, increment: Vec<T>) -> Self {
        let endpoint = x
            .iter()
            .zip(drift)
            .zip(&increment)
            .map(|((&xi, &mi), &wi)| xi + mi * dt + diffusion * wi)
            .collect();
        Self {
            endpoint,
            increment,
            dt,
        }
    }

    /// Feynman–Kac / Bismut weight `(1, dW/dt)`.
    pub fn weight(&self) -> Vec<T> {
        std::iter::once(T::one())
            .chain(self.increment.iter().map(|&w| w / self.dt))
            .collect()
    }
}

/// Source of Brownian increments over an interval of length `dt`.
pub trait IncrementSource<T: Real>: Sync {
    fn increment(&self, stream: &mut RngStream, dt: T, out: &mut [T]);
}

/// `dW ~ N(0, dt·I)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GaussianIncrements;

impl<T: Real> IncrementSource<T> for GaussianIncrements {
    fn increment(&self, stream: &mut RngStream, dt: T, out: &mut [T]) {
        let scale = dt.sqrt();
        for v in out.iter_mut() {
            let z: T = stream.normal();
            *v = scale * z;
        }
    }
}

/// Samples a path from `(s, x)` to time `t > s`; returns the sample and its weight vector.
pub fn sample_path<T: Real>(
    x: &[T],
    s: T,
    t: T,
    drift: &[T],
    diffusion: T,
    stream: &mut RngStream,
) -> (PathSample<T>, Vec<T>) {
    let dt = t - s;
    let mut dw = vec![T::zero(); x.len()];
    GaussianIncrements.increment(stream, dt, &mut dw);
    let sample = PathSample::from_increment(x, dt, drift, diffusion, dw);
    let w = sample.weight();
    (sample, w)
}

/// Clamps every component into `[-threshold, threshold]`.
pub fn clip<T: Real>(mut est: Estimate<T>, threshold: T) -> Estimate<T> {
    clip_in_place(&mut est.components, threshold);
    est
}

pub(crate) fn clip_in_place<T: Real>(values: &mut [T], threshold: T) {
    for v in values.iter_mut() {
        if *v > threshold {
            *v = threshold;
        }
        if *v < -threshold {
            *v = -threshold;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_sampler_examples() {
        let (r, _) = sample_time(0.0f64, 1.0, 0.5, 0.25);
        assert!((r - 0.0625).abs() < 1e-15);
        let (r, _) = sample_time(0.0f64, 1.0, 0.5, 1.0 - 1e-12);
        assert!((r - 1.0).abs() < 1e-11);
        assert!((time_weight(0.2f64, 0.7, 0.5, 0.04) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn time_weight_integrates_constants_in_expectation() {
        // E[1/ϱ] = T - s for any α.
        for alpha in [0.25, 0.5, 0.75] {
            let mut s = RngStream::new(3);
            let n = 200_000;
            let mean = (0..n)
                .map(|_| sample_time(0.1, 0.6, alpha, s.uniform_open::<f64>()).1)
                .sum::<f64>()
                / n as f64;
            assert!((mean - 0.5).abs() < 5e-3, "alpha={alpha} mean={mean}");
        }
    }

    #[test]
    fn path_examples() {
        let x = [0.0, 0.0];
        let drift = [-0.5, -0.5];
        let c = 2f64.sqrt();
        let zero = PathSample::from_increment(&x, 0.25, &drift, c, vec![0.0, 0.0]);
        assert_eq!(zero.endpoint, vec![-0.125, -0.125]);
        assert_eq!(zero.weight(), vec![1.0, 0.0, 0.0]);

        let p = PathSample::from_increment(&[0.3], 1.0, &[0.0], 1.0, vec![0.7]);
        assert_eq!(p.endpoint, vec![1.0]);
        assert_eq!(p.weight(), vec![1.0, 0.7]);

        let p = PathSample::from_increment(&x, 0.25, &drift, c, vec![0.1, -0.2]);
        assert!((p.endpoint[0] - (-0.125 + c * 0.1)).abs() < 1e-15);
        assert!((p.endpoint[0] - 0.016_421_356_237_309_5).abs() < 1e-12);
        assert!((p.endpoint[1] - (-0.407_842_712_474_619)).abs() < 1e-12);
        let w = p.weight();
        assert!((w[1] - 0.4).abs() < 1e-15 && (w[2] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn sampled_increments_have_the_right_variance() {
        let mut s = RngStream::new(8);
        let n = 50_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (p, _) = sample_path(&[0.0], 0.2, 0.45, &[0.0], 1.0, &mut s);
            acc += p.increment[0] * p.increment[0];
        }
        assert!((acc / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn clipping() {
        let e = clip(Estimate::new(vec![0.7, -0.9, 0.2]), 0.5);
        assert_eq!(e.components, vec![0.5, -0.5, 0.2]);
        let inside = Estimate::new(vec![0.1, -0.3]);
        assert_eq!(clip(inside.clone(), 0.5), inside);
    }
}
