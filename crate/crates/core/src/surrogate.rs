//! Surrogate solutions `û` and their PDE residual.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::SquareMatrix;
use crate::problem::{sample_test_points, ExactSolution, Jet, LaplacianTerms, SemilinearPde, SpaceTimePoint};
use crate::real::Real;
use crate::rng::{Branch, RngStream};

/// Value, time derivative, gradient and Laplacian of a surrogate.
pub type SurrogateDerivatives<T> = Jet<T>;

/// Cheap approximate solution exposing the derivatives needed for its residual.
pub trait Surrogate<T: Real>: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Jet at `(t, x)`; `terms` selects which diagonal Hessian entries are
    /// summed into the `laplacian` field.
    fn jet(&self, t: T, x: &[T], terms: LaplacianTerms<'_>) -> SurrogateDerivatives<T>;

    fn derivatives(&self, t: T, x: &[T]) -> SurrogateDerivatives<T> {
        self.jet(t, x, LaplacianTerms::All)
    }

    fn value(&self, t: T, x: &[T]) -> T {
        self.derivatives(t, x).value
    }

    /// `û = u + δ` for surrogates built on an exact solution `u`: returns `u`
    /// and the full jet of `δ`.
    fn split(&self, _t: T, _x: &[T]) -> Option<(&Arc<dyn ExactSolution<T>>, Jet<T>)> {
        None
    }
}

/// How the Laplacian inside the residual is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianMode {
    Exact,
    /// `(d/K) Σ_k ∂²û/∂x_{j_k}²` over `K` distinct uniformly drawn coordinates.
    Hutchinson { samples: usize },
}

impl LaplacianMode {
    pub fn validate(&self, d: usize) -> Result<()> {
        if let LaplacianMode::Hutchinson { samples } = *self {
            if samples == 0 || samples > d {
                return Err(invalid(format!(
                    "Hutchinson sample count must lie in 1..={d}, got {samples}"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- zero

#[derive(Clone, Debug)]
pub struct ZeroSurrogate {
    dim: usize,
}

impl ZeroSurrogate {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl<T: Real> Surrogate<T> for ZeroSurrogate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, _t: T, x: &[T], _terms: LaplacianTerms<'_>) -> Jet<T> {
        Jet {
            value: T::zero(),
            time_deriv: T::zero(),
            gradient: vec![T::zero(); x.len()],
            laplacian: T::zero(),
        }
    }

    fn value(&self, _t: T, _x: &[T]) -> T {
        T::zero()
    }
}

// ---------------------------------------------------------------- synthetic

/// `û = u_ref + e·sin(Σxᵢ + t)`: a surrogate whose error is known exactly.
#[derive(Clone)]
pub struct SyntheticSurrogate<T: Real> {
    dim: usize,
    amplitude: T,
    reference: Arc<dyn ExactSolution<T>>,
}

impl<T: Real> fmt::Debug for SyntheticSurrogate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyntheticSurrogate")
            .field("dim", &self.dim)
            .field("amplitude", &self.amplitude)
            .finish()
    }
}

impl<T: Real> SyntheticSurrogate<T> {
    pub fn new(pde: &SemilinearPde<T>, amplitude: T) -> Result<Self> {
        let reference = pde.reference().cloned().ok_or_else(|| {
            invalid(format!(
                "synthetic surrogate needs an analytic reference; `{}` has none",
                pde.kind().short_name()
            ))
        })?;
        Ok(Self {
            dim: pde.dim(),
            amplitude,
            reference,
        })
    }

    pub fn amplitude(&self) -> T {
        self.amplitude
    }
}

impl<T: Real> Surrogate<T> for SyntheticSurrogate<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, t: T, x: &[T], terms: LaplacianTerms<'_>) -> Jet<T> {
        let mut jet = self.reference.jet(t, x, terms);
        let phase = x.iter().copied().sum::<T>() + t;
        let (s, c) = phase.sin_cos();
        let e = self.amplitude;
        let count = match terms {
            LaplacianTerms::All => x.len(),
            LaplacianTerms::Subset(idx) => idx.len(),
        };
        jet.value = jet.value + e * s;
        jet.time_deriv = jet.time_deriv + e * c;
        for g in jet.gradient.iter_mut() {
            *g = *g + e * c;
        }
        jet.laplacian = jet.laplacian - e * T::from_count(count) * s;
        jet
    }

    fn value(&self, t: T, x: &[T]) -> T {
        self.reference.value(t, x) + self.amplitude * (x.iter().copied().sum::<T>() + t).sin()
    }

    fn split(&self, t: T, x: &[T]) -> Option<(&Arc<dyn ExactSolution<T>>, Jet<T>)> {
        let (s, c) = (x.iter().copied().sum::<T>() + t).sin_cos();
        let e = self.amplitude;
        let perturbation = Jet {
            value: e * s,
            time_deriv: e * c,
            gradient: vec![e * c; x.len()],
            laplacian: -(e * T::from_count(x.len()) * s),
        };
        Some((&self.reference, perturbation))
    }
}

/// Zero surrogate of the right dimension for `pde`.
pub fn zero_surrogate<T: Real>(pde: &SemilinearPde<T>) -> Arc<dyn Surrogate<T>> {
    Arc::new(ZeroSurrogate::new(pde.dim()))
}

/// Synthetic surrogate with perturbation amplitude `amplitude`.
pub fn synthetic_surrogate<T: Real>(pde: &SemilinearPde<T>, amplitude: T) -> Result<Arc<dyn Surrogate<T>>> {
    Ok(Arc::new(SyntheticSurrogate::new(pde, amplitude)?))
}

// ---------------------------------------------------------------- RBF

/// Gaussian-kernel expansion over space-time centers `[t, x₁..x_d]`:
/// `û = Σ_j w_j exp(-(‖x-x_j‖² + (t-t_j)²) / (2ℓ²d))`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfSurrogate<T> {
    dim: usize,
    lengthscale: T,
    /// `centers.len() == weights.len() * (dim + 1)`, row-major.
    centers: Vec<T>,
    weights: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfFitOptions {
    pub n_train: usize,
    pub centers: usize,
    pub lengthscale: f64,
    pub ridge: f64,
    pub seed: u64,
    /// Monte-Carlo budget per point when the reference has no closed form.
    pub reference_budget: usize,
}

impl Default for RbfFitOptions {
    fn default() -> Self {
        Self {
            n_train: 1000,
            centers: 1000,
            lengthscale: 1.0,
            ridge: 1e-8,
            seed: 0,
            reference_budget: 1000,
        }
    }
}

impl<T: Real> RbfSurrogate<T> {
    pub fn new(dim: usize, lengthscale: T, centers: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        if !(lengthscale > T::zero()) {
            return Err(invalid("lengthscale must be positive"));
        }
        if centers.len() != weights.len() {
            return Err(Error::Malformed(format!(
                "{} centers but {} weights",
                centers.len(),
                weights.len()
            )));
        }
        let mut flat = Vec::with_capacity(centers.len() * (dim + 1));
        for c in &centers {
            if c.len() != dim + 1 {
                return Err(Error::DimensionMismatch {
                    expected: dim + 1,
                    found: c.len(),
                });
            }
            flat.extend_from_slice(c);
        }
        Ok(Self {
            dim,
            lengthscale,
            centers: flat,
            weights,
        })
    }

    pub fn lengthscale(&self) -> T {
        self.lengthscale
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn centers(&self) -> impl Iterator<Item = &[T]> {
        self.centers.chunks(self.dim + 1)
    }

    fn gamma(&self) -> T {
        T::one() / (T::lit(2.0) * self.lengthscale * self.lengthscale * T::from_count(self.dim))
    }

    fn kernel_at(&self, gamma: T, point: &[T], center: &[T]) -> T {
        let r2: T = point.iter().zip(center).map(|(&a, &b)| (a - b) * (a - b)).sum();
        (-gamma * r2).exp()
    }

    /// Writes the surrogate in the versioned JSON format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = SurrogateFile {
            format_version: 1,
            d: self.dim,
            lengthscale: self.lengthscale.as_f64(),
            centers: self.centers().map(|c| c.iter().map(|v| v.as_f64()).collect()).collect(),
            weights: self.weights.iter().map(|v| v.as_f64()).collect(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Malformed(e.to_string()))?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl<T: Real> Surrogate<T> for RbfSurrogate<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, t: T, x: &[T], terms: LaplacianTerms<'_>) -> Jet<T> {
        let d = self.dim;
        let gamma = self.gamma();
        let two_g = T::lit(2.0) * gamma;
        let four_g2 = two_g * two_g;
        let mut value = T::zero();
        let mut time_deriv = T::zero();
        let mut gradient = vec![T::zero(); d];
        let mut laplacian = T::zero();
        let mut dx = vec![T::zero(); d];
        for (c, &w) in self.centers.chunks(d + 1).zip(&self.weights) {
            let dt = t - c[0];
            let mut r2 = dt * dt;
            for i in 0..d {
                dx[i] = x[i] - c[i + 1];
                r2 = r2 + dx[i] * dx[i];
            }
            let wk = w * (-gamma * r2).exp();
            value = value + wk;
            time_deriv = time_deriv - two_g * dt * wk;
            for (g, &di) in gradient.iter_mut().zip(&dx) {
                *g = *g - two_g * di * wk;
            }
            let second = match terms {
                LaplacianTerms::All => {
                    let s2: T = dx.iter().map(|&v| v * v).sum();
                    four_g2 * s2 - two_g * T::from_count(d)
                }
                LaplacianTerms::Subset(idx) => idx.iter().map(|&i| four_g2 * dx[i] * dx[i] - two_g).sum(),
            };
            laplacian = laplacian + second * wk;
        }
        Jet {
            value,
            time_deriv,
            gradient,
            laplacian,
        }
    }

    fn value(&self, t: T, x: &[T]) -> T {
        let gamma = self.gamma();
        let mut point = Vec::with_capacity(self.dim + 1);
        point.push(t);
        point.extend_from_slice(x);
        self.centers
            .chunks(self.dim + 1)
            .zip(&self.weights)
            .map(|(c, &w)| w * self.kernel_at(gamma, &point, c))
            .sum()
    }
}

/// On-disk representation of an RBF surrogate.
#[derive(Debug, Serialize, Deserialize)]
struct SurrogateFile {
    format_version: u32,
    d: usize,
    lengthscale: f64,
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Loads a surrogate file; `expected_dim` rejects files for another dimension.
pub fn load_surrogate<T: Real>(path: &Path, expected_dim: Option<usize>) -> Result<RbfSurrogate<T>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: SurrogateFile =
        serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    if file.format_version != 1 {
        return Err(Error::Malformed(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    if let Some(d) = expected_dim {
        if d != file.d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: file.d,
            });
        }
    }
    let conv = |v: f64| T::from_f64(v).ok_or_else(|| Error::Malformed(format!("value {v} not representable")));
    let centers = file
        .centers
        .iter()
        .map(|c| c.iter().map(|&v| conv(v)).collect::<Result<Vec<T>>>())
        .collect::<Result<Vec<_>>>()?;
    let weights = file.weights.iter().map(|&v| conv(v)).collect::<Result<Vec<T>>>()?;
    RbfSurrogate::new(file.d, conv(file.lengthscale)?, centers, weights)
}

/// Greedy farthest-point ordering of `points` (rows of length `stride`),
/// starting from a seeded random index. Returns the first `count` indices.
pub fn farthest_point_selection<T: Real>(points: &[T], stride: usize, count: usize, seed: u64) -> Vec<usize> {
    let n = points.len() / stride;
    let count = count.min(n);
    if count == 0 {
        return Vec::new();
    }
    let row = |i: usize| &points[i * stride..(i + 1) * stride];
    let dist = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum::<T>();
    let mut chosen = Vec::with_capacity(count);
    let mut stream = RngStream::new(seed).child(0, Branch::Fit, 1);
    let mut current = stream.below(n);
    let mut nearest = vec![T::infinity(); n];
    loop {
        chosen.push(current);
        if chosen.len() == count {
            break;
        }
        let c = row(current);
        let mut best = (T::neg_infinity(), 0usize);
        for i in 0..n {
            let di = dist(row(i), c);
            if di < nearest[i] {
                nearest[i] = di;
            }
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        current = best.1;
    }
    chosen
}

/// Ridge-regularised least-squares fit of a Gaussian expansion to
/// `(points, targets)`.
pub fn fit_rbf_to_targets<T: Real>(
    dim: usize,
    points: &[SpaceTimePoint<T>],
    targets: &[T],
    opts: &RbfFitOptions,
) -> Result<RbfSurrogate<T>> {
    if points.len() != targets.len() {
        return Err(invalid("points and targets differ in length"));
    }
    if points.is_empty() || opts.centers == 0 {
        return Err(invalid("need at least one training point and one center"));
    }
    if !(opts.lengthscale > 0.0) || !(opts.ridge >= 0.0) {
        return Err(invalid("lengthscale must be positive and ridge nonnegative"));
    }
    let stride = dim + 1;
    let mut flat = Vec::with_capacity(points.len() * stride);
    for p in points {
        if p.x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.x.len(),
            });
        }
        flat.push(p.t);
        flat.extend_from_slice(&p.x);
    }
    let picks = farthest_point_selection(&flat, stride, opts.centers, opts.seed);
    let centers: Vec<Vec<T>> = picks.iter().map(|&i| flat[i * stride..(i + 1) * stride].to_vec()).collect();
    let m = centers.len();
    let n = points.len();
    let shell = RbfSurrogate::new(dim, T::lit(opts.lengthscale), centers.clone(), vec![T::zero(); m])?;
    let gamma = shell.gamma();

    // design matrix Φ[i][j] = k(p_i, c_j)
    let design: Vec<T> = (0..n)
        .flat_map(|i| {
            let row = &flat[i * stride..(i + 1) * stride];
            centers.iter().map(move |c| (row, c))
        })
        .map(|(row, c)| shell.kernel_at(gamma, row, c))
        .collect();
    let mut normal = SquareMatrix::zeros(m);
    let ridge = T::lit(opts.ridge);
    for a in 0..m {
        for b in a..m {
            let mut s = T::zero();
            for i in 0..n {
                s = s + design[i * m + a] * design[i * m + b];
            }
            if a == b {
                s = s + ridge;
            }
            normal.set(a, b, s);
            normal.set(b, a, s);
        }
    }
    let rhs: Vec<T> = (0..m)
        .map(|a| (0..n).map(|i| design[i * m + a] * targets[i]).sum())
        .collect();
    let weights = normal.cholesky_solve(&rhs)?;
    RbfSurrogate::new(dim, shell.lengthscale, centers, weights)
}

/// Fits an RBF surrogate to the reference solution of `pde` at `n_train`
/// uniformly sampled points.
pub fn fit_rbf<T: Real>(pde: &SemilinearPde<T>, opts: &RbfFitOptions) -> Result<RbfSurrogate<T>> {
    if opts.n_train == 0 {
        return Err(invalid("n_train must be positive"));
    }
    let root = RngStream::new(opts.seed);
    let points = sample_test_points(pde, opts.n_train, root.child(0, Branch::Fit, 0).key());
    let ref_root = root.child(0, Branch::Reference, 0);
    let targets = points
        .iter()
        .enumerate()
        .map(|(i, p)| pde.reference_value(p, opts.reference_budget, ref_root.child(0, Branch::Point, i as u64).key()))
        .collect::<Result<Vec<T>>>()?;
    fit_rbf_to_targets(pde.dim(), &points, &targets, opts)
}

// ---------------------------------------------------------------- residual

/// Surrogate jet at `(t, x)` together with the linear part
/// `∂tû + ⟨μ,∇û⟩ + (c²/2)L̂` of the operator applied to it.
///
/// In Hutchinson mode only `K` diagonal Hessian entries enter `L̂`, rescaled
/// by `d/K`. When the surrogate splits as `u + δ` with `u` the problem's own
/// exact solution, the linear part of `u` is taken as `−F(u, c∇u)`, so a
/// perfect surrogate has a residual of exactly zero.
pub(crate) fn residual_jet<T: Real>(
    pde: &SemilinearPde<T>,
    surrogate: &dyn Surrogate<T>,
    t: T,
    x: &[T],
    mode: LaplacianMode,
    stream: &mut RngStream,
) -> (Jet<T>, T) {
    match mode {
        LaplacianMode::Exact => {
            let jet = surrogate.derivatives(t, x);
            let linear = match (surrogate.split(t, x), pde.reference()) {
                (Some((u, delta)), Some(own)) if Arc::ptr_eq(u, own) => {
                    let exact = u.jet(t, x, LaplacianTerms::All);
                    let c = pde.diffusion();
                    let z: Vec<T> = exact.gradient.iter().map(|&g| c * g).collect();
                    pde.linear_operator(&delta) - pde.f(exact.value, &z, t, x, stream)
                }
                _ => pde.linear_operator(&jet),
            };
            (jet, linear)
        }
        LaplacianMode::Hutchinson { samples } => {
            let d = x.len();
            let idx = stream.distinct_indices(d, samples);
            let mut jet = surrogate.jet(t, x, LaplacianTerms::Subset(&idx));
            jet.laplacian = jet.laplacian * T::from_count(d) / T::from_count(samples);
            let linear = pde.linear_operator(&jet);
            (jet, linear)
        }
    }
}

/// Surrogate jet plus its PDE residual at `(t, x)`.
pub(crate) fn residual_with_jet<T: Real>(
    pde: &SemilinearPde<T>,
    surrogate: &dyn Surrogate<T>,
    t: T,
    x: &[T],
    mode: LaplacianMode,
    stream: &mut RngStream,
) -> (Jet<T>, T) {
    let (jet, linear) = residual_jet(pde, surrogate, t, x, mode, stream);
    let z: Vec<T> = jet.gradient.iter().map(|&g| pde.diffusion() * g).collect();
    let eps = pde.f(jet.value, &z, t, x, stream) + linear;
    (jet, eps)
}

/// `ε = ∂tû + ⟨μ,∇û⟩ + (c²/2)L̂ + F(û, c∇û, t, x)`.
///
/// `stream` supplies the coordinate draws in Hutchinson mode.
pub fn surrogate_residual<T: Real>(
    pde: &SemilinearPde<T>,
    surrogate: &dyn Surrogate<T>,
    p: &SpaceTimePoint<T>,
    mode: LaplacianMode,
    stream: &mut RngStream,
) -> Result<T> {
    mode.validate(pde.dim())?;
    if surrogate.dim() != pde.dim() || p.x.len() != pde.dim() {
        return Err(Error::DimensionMismatch {
            expected: pde.dim(),
            found: if surrogate.dim() != pde.dim() {
                surrogate.dim()
            } else {
                p.x.len()
            },
        });
    }
    Ok(residual_with_jet(pde, surrogate, p.t, &p.x, mode, stream).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{finite_difference_jet, make_diffusion_reaction, make_lcd, make_lqg_hjb, make_viscous_burgers};

    /// `û(x) = Σ a_i x_i²`, a test double with known Hessian diagonal.
    #[derive(Debug)]
    struct Quadratic(Vec<f64>);

    impl Surrogate<f64> for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn jet(&self, _t: f64, x: &[f64], terms: LaplacianTerms<'_>) -> Jet<f64> {
            let lap = match terms {
                LaplacianTerms::All => self.0.iter().map(|a| 2.0 * a).sum(),
                LaplacianTerms::Subset(idx) => idx.iter().map(|&i| 2.0 * self.0[i]).sum(),
            };
            Jet {
                value: x.iter().zip(&self.0).map(|(x, a)| a * x * x).sum(),
                time_deriv: 0.0,
                gradient: x.iter().zip(&self.0).map(|(x, a)| 2.0 * a * x).collect(),
                laplacian: lap,
            }
        }
    }

    fn assert_jet_close(analytic: &Jet<f64>, numeric: &Jet<f64>, tol: f64) {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * (1.0 + b.abs());
        assert!(close(analytic.value, numeric.value));
        assert!(close(analytic.time_deriv, numeric.time_deriv), "{analytic:?} vs {numeric:?}");
        for (a, b) in analytic.gradient.iter().zip(&numeric.gradient) {
            assert!(close(*a, *b), "{a} vs {b}");
        }
        assert!(
            close(analytic.laplacian, numeric.laplacian),
            "{} vs {}",
            analytic.laplacian,
            numeric.laplacian
        );
    }

    fn check_fd_consistency(pde: &SemilinearPde<f64>, s: &dyn Surrogate<f64>) {
        for p in sample_test_points(pde, 100, 5) {
            let num = finite_difference_jet(|t, x| s.value(t, x), p.t, &p.x, 1e-4);
            assert_jet_close(&s.derivatives(p.t, &p.x), &num, 1e-4);
        }
    }

    #[test]
    fn zero_surrogate_is_zero() {
        let s = ZeroSurrogate::new(3);
        let j = Surrogate::<f64>::derivatives(&s, 0.2, &[1.0, 2.0, 3.0]);
        assert_eq!(j.value, 0.0);
        assert_eq!(j.gradient, vec![0.0; 3]);
        assert_eq!(j.laplacian, 0.0);
    }

    #[test]
    fn synthetic_values() {
        let pde = make_lcd::<f64>(2).unwrap();
        let s = SyntheticSurrogate::new(&pde, 0.1).unwrap();
        let j = s.derivatives(0.0, &[0.0, 0.0]);
        assert_eq!(j.value, 0.0);
        assert!((j.gradient[0] - 1.1).abs() < 1e-15 && (j.gradient[1] - 1.1).abs() < 1e-15);
        assert!(SyntheticSurrogate::new(&make_lqg_hjb::<f64>(4, 0).unwrap(), 0.1).is_err());
    }

    #[test]
    fn synthetic_error_bounded_by_amplitude() {
        let pde = make_viscous_burgers::<f64>(5, 1.0).unwrap();
        let e = 0.05;
        let s = SyntheticSurrogate::new(&pde, e).unwrap();
        let r = pde.reference().unwrap();
        let sup = sample_test_points(&pde, 10_000, 2)
            .iter()
            .map(|p| (s.value(p.t, &p.x) - r.value(p.t, &p.x)).abs())
            .fold(0.0, f64::max);
        assert!(sup <= e);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let lcd = make_lcd::<f64>(4).unwrap();
        let vb = make_viscous_burgers::<f64>(4, 2f64.sqrt()).unwrap();
        let dr = make_diffusion_reaction::<f64>(4).unwrap();
        check_fd_consistency(&lcd, &SyntheticSurrogate::new(&lcd, 0.3).unwrap());
        check_fd_consistency(&vb, &SyntheticSurrogate::new(&vb, 0.1).unwrap());
        check_fd_consistency(&dr, &SyntheticSurrogate::new(&dr, 0.2).unwrap());
        let rbf = fit_rbf(
            &vb,
            &RbfFitOptions {
                n_train: 60,
                centers: 30,
                lengthscale: 0.5,
                ridge: 1e-6,
                seed: 1,
                reference_budget: 0,
            },
        )
        .unwrap();
        check_fd_consistency(&vb, &rbf);
    }

    #[test]
    fn residual_cancellations() {
        let vb = make_viscous_burgers::<f64>(3, 2f64.sqrt()).unwrap();
        let mut st = RngStream::new(0);
        for p in sample_test_points(&vb, 20, 1) {
            let e = surrogate_residual(&vb, &ZeroSurrogate::new(3), &p, LaplacianMode::Exact, &mut st).unwrap();
            assert_eq!(e, 0.0);
        }
        let lcd = make_lcd::<f64>(3).unwrap();
        let perfect = SyntheticSurrogate::new(&lcd, 0.0).unwrap();
        for p in sample_test_points(&lcd, 20, 1) {
            let e = surrogate_residual(&lcd, &perfect, &p, LaplacianMode::Exact, &mut st).unwrap();
            assert_eq!(e, 0.0);
        }
    }

    #[test]
    fn residual_of_zero_on_dr() {
        let d = 4;
        let dr = make_diffusion_reaction::<f64>(d).unwrap();
        let mut st = RngStream::new(0);
        let z = ZeroSurrogate::new(d);
        let mut at = |t: f64| {
            let p = SpaceTimePoint::new(t, vec![0.1, -0.1, 0.2, -0.2]);
            surrogate_residual(&dr, &z, &p, LaplacianMode::Exact, &mut st).unwrap()
        };
        assert_eq!(at(1.0), 1.0);
        let t: f64 = 0.3;
        let expected = (1.6f64 * 1.6 * (0.01 * d as f64 * (t - 1.0)).exp()).min(1.0);
        assert!((at(t) - expected).abs() < 1e-12);
    }

    #[test]
    fn hutchinson_quadratic_is_exact_every_draw() {
        for d in [1usize, 3, 10, 17] {
            let s = Quadratic(vec![1.0; d]);
            let mut st = RngStream::new(d as u64);
            for k in 1..=d {
                for _ in 0..20 {
                    let (jet, _) = residual_with_jet(
                        &make_lcd::<f64>(d).unwrap(),
                        &s,
                        0.0,
                        &vec![0.3; d],
                        LaplacianMode::Hutchinson { samples: k },
                        &mut st,
                    );
                    assert_eq!(jet.laplacian, 2.0 * d as f64);
                }
            }
        }
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        if n < k {
            return vec![];
        }
        let mut with = subsets(n - 1, k - 1);
        for s in with.iter_mut() {
            s.push(n - 1);
        }
        let mut out = subsets(n - 1, k);
        out.extend(with);
        out
    }

    #[test]
    fn hutchinson_unbiased_over_all_subsets() {
        let a = vec![0.5, -1.25, 2.0, 3.5, -0.75, 1.0];
        let d = a.len();
        let s = Quadratic(a.clone());
        let exact: f64 = a.iter().map(|v| 2.0 * v).sum();
        for k in 1..=d {
            let all = subsets(d, k);
            let mean = all
                .iter()
                .map(|idx| {
                    let j = s.jet(0.0, &[0.0; 6], LaplacianTerms::Subset(idx));
                    j.laplacian * d as f64 / k as f64
                })
                .sum::<f64>()
                / all.len() as f64;
            assert!((mean - exact).abs() < 1e-12, "k={k}: {mean} vs {exact}");
        }
    }

    #[test]
    fn hutchinson_rejects_bad_sample_count() {
        let lcd = make_lcd::<f64>(3).unwrap();
        let p = SpaceTimePoint::new(0.1, vec![0.1; 3]);
        let mut st = RngStream::new(0);
        let z = ZeroSurrogate::new(3);
        assert!(surrogate_residual(&lcd, &z, &p, LaplacianMode::Hutchinson { samples: 4 }, &mut st).is_err());
        assert!(surrogate_residual(&lcd, &z, &p, LaplacianMode::Hutchinson { samples: 0 }, &mut st).is_err());
    }

    #[test]
    fn rbf_recovers_single_kernel() {
        let dim = 2;
        let pde = make_lcd::<f64>(dim).unwrap();
        let points = sample_test_points(&pde, 12, 4);
        let opts = RbfFitOptions {
            n_train: 12,
            centers: 12,
            lengthscale: 0.1,
            ridge: 1e-10,
            seed: 3,
            reference_budget: 0,
        };
        let order = {
            let flat: Vec<f64> = points.iter().flat_map(|p| std::iter::once(p.t).chain(p.x.iter().copied())).collect();
            farthest_point_selection(&flat, dim + 1, 12, opts.seed)
        };
        let anchor = &points[5];
        let gamma = 1.0 / (2.0 * 0.1 * 0.1 * dim as f64);
        let kernel = |p: &SpaceTimePoint<f64>| {
            let r2 = (p.t - anchor.t).powi(2) + p.x.iter().zip(&anchor.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (-gamma * r2).exp()
        };
        let targets: Vec<f64> = points.iter().map(kernel).collect();
        let fit = fit_rbf_to_targets(dim, &points, &targets, &opts).unwrap();
        let slot = order.iter().position(|&i| i == 5).unwrap();
        assert!((fit.weights()[slot] - 1.0).abs() < 1e-4, "{:?}", fit.weights());
        for (p, y) in points.iter().zip(&targets) {
            assert!((fit.value(p.t, &p.x) - y).abs() < 1e-4);
        }
    }

    #[test]
    fn rbf_zero_targets_give_zero_weights() {
        let pde = make_lcd::<f64>(3).unwrap();
        let points = sample_test_points(&pde, 30, 4);
        let fit = fit_rbf_to_targets(3, &points, &[0.0; 30], &RbfFitOptions {
            n_train: 30,
            centers: 10,
            ..Default::default()
        })
        .unwrap();
        assert!(fit.weights().iter().all(|&w| w == 0.0));
        assert_eq!(fit.value(0.1, &[0.1, 0.2, 0.3]), 0.0);
    }

    #[test]
    fn rbf_singular_without_ridge() {
        let pde = make_lcd::<f64>(2).unwrap();
        let mut points = sample_test_points(&pde, 5, 4);
        points.push(points[0].clone());
        let opts = RbfFitOptions {
            n_train: 6,
            centers: 6,
            lengthscale: 1.0,
            ridge: 0.0,
            seed: 0,
            reference_budget: 0,
        };
        let err = fit_rbf_to_targets(2, &points, &[1.0; 6], &opts).unwrap_err();
        assert!(matches!(err, Error::IllConditioned(_)));
    }

    #[test]
    fn fit_is_deterministic() {
        let pde = make_viscous_burgers::<f64>(3, 1.0).unwrap();
        let opts = RbfFitOptions {
            n_train: 50,
            centers: 20,
            lengthscale: 0.7,
            ridge: 1e-8,
            seed: 9,
            reference_budget: 0,
        };
        assert_eq!(fit_rbf(&pde, &opts).unwrap(), fit_rbf(&pde, &opts).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let pde = make_viscous_burgers::<f64>(5, 1.0).unwrap();
        let fit = fit_rbf(
            &pde,
            &RbfFitOptions {
                n_train: 40,
                centers: 25,
                lengthscale: 0.9,
                ..Default::default()
            },
        )
        .unwrap();
        fit.save(&path).unwrap();
        let back: RbfSurrogate<f64> = load_surrogate(&path, Some(5)).unwrap();
        assert_eq!(back, fit);
        for p in sample_test_points(&pde, 100, 3) {
            assert_eq!(back.derivatives(p.t, &p.x), fit.derivatives(p.t, &p.x));
        }
        assert!(matches!(
            load_surrogate::<f64>(&path, Some(10)),
            Err(Error::DimensionMismatch { expected: 10, found: 5 })
        ));
    }

    #[test]
    fn load_rejects_malformed_and_handles_empty() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{ not json").unwrap();
        assert!(matches!(load_surrogate::<f64>(&bad, None), Err(Error::Malformed(_))));
        let short = dir.path().join("short.json");
        fs::write(
            &short,
            r#"{"format_version":1,"d":2,"lengthscale":1.0,"centers":[[0.0,1.0]],"weights":[1.0]}"#,
        )
        .unwrap();
        assert!(load_surrogate::<f64>(&short, None).is_err());
        let empty = dir.path().join("empty.json");
        fs::write(&empty, r#"{"format_version":1,"d":3,"lengthscale":1.0,"centers":[],"weights":[]}"#).unwrap();
        let s: RbfSurrogate<f64> = load_surrogate(&empty, Some(3)).unwrap();
        let j = s.derivatives(0.2, &[0.1, 0.2, 0.3]);
        assert_eq!(j, Surrogate::<f64>::derivatives(&ZeroSurrogate::new(3), 0.2, &[0.1, 0.2, 0.3]));
        assert!(load_surrogate::<f64>(&dir.path().join("missing.json"), None).is_err());
    }
}
