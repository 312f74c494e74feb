//! Multilevel Picard (MLP) estimators of `(u, σᵀ∇u)` for a [`SemilinearPde`].
//!
//! `U_n(s, x)` telescopes the Picard sequence: a terminal block with `M^n`
//! paths plus, for every level `l < n`, `M^{n-l}` samples of
//! `[F(U_l) − F(U_{l-1})]` integrated over `(s, T)` either by importance
//! sampling in time (full history) or by a Gauss–Legendre rule (quadrature).
//! Each integrand sample is weighted by `(1, dW/(t-s))` so the same paths
//! yield the value and the scaled gradient.
//!
//! Randomness is value-derived: every sample owns a child stream labelled by
//! `(level, branch, index)`, so an estimate is a pure function of its inputs.

pub mod quadrature;
pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::SemilinearPde;
use crate::real::Real;
use crate::rng::{Branch, RngStream, StreamLabel};

pub use quadrature::{gauss_hermite, gauss_legendre, rescale};
pub use sampling::{clip, sample_path, sample_time, time_weight, GaussianIncrements, IncrementSource, PathSample};

/// Hard cap on the Picard depth; cost grows like `(5M)^n`.
pub const MAX_LEVELS: u32 = 10;

/// How time integrals are discretised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    FullHistory { alpha: f64 },
    Quadrature { order: usize },
}

impl Default for Variant {
    fn default() -> Self {
        Variant::FullHistory { alpha: 0.5 }
    }
}

/// Solver parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Total Picard depth `n`.
    pub levels: u32,
    /// Sample base `M`; level `l` uses `M^{n-l}` samples.
    pub base: u32,
    pub variant: Variant,
    /// Threshold applied to every recursive return.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            base: 10,
            variant: Variant::default(),
            clip: None,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels > MAX_LEVELS {
            return Err(invalid(format!("levels must be at most {MAX_LEVELS}")));
        }
        if self.base == 0 {
            return Err(invalid("base must be at least 1"));
        }
        if u64::from(self.base).checked_pow(self.levels).is_none() {
            return Err(invalid("base^levels overflows"));
        }
        match self.variant {
            Variant::FullHistory { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
                }
            }
            Variant::Quadrature { order } => {
                if order == 0 || order > quadrature::MAX_LEGENDRE_ORDER {
                    return Err(invalid(format!("quadrature order must lie in 1..=64, got {order}")));
                }
            }
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(invalid(format!("clip threshold must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// `M^k` in exact integer arithmetic.
    pub fn samples(&self, k: u32) -> u64 {
        u64::from(self.base).pow(k)
    }
}

/// `(value, σᵀ∇u)` estimate: index 0 is the value, `1..=d` the scaled gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate<T> {
    pub components: Vec<T>,
}

impl<T: Real> Estimate<T> {
    pub fn new(components: Vec<T>) -> Self {
        Self { components }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![T::zero(); dim + 1])
    }

    pub fn value(&self) -> T {
        self.components[0]
    }

    pub fn gradient(&self) -> &[T] {
        &self.components[1..]
    }
}

/// Observes every recursive evaluation (test instrumentation).
pub trait Probe<T: Real>: Sync {
    /// `path` is the label chain from the root to this call.
    fn visit(&self, path: &[StreamLabel], level: u32, s: T, x: &[T]);
}

/// Probe that records nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoProbe;

impl<T: Real> Probe<T> for NoProbe {
    #[inline]
    fn visit(&self, _path: &[StreamLabel], _level: u32, _s: T, _x: &[T]) {}
}

/// MLP solver bound to one problem and configuration.
pub struct MlpSolver<'a, T: Real, I = GaussianIncrements, P = NoProbe> {
    pde: &'a SemilinearPde<T>,
    cfg: MlpConfig,
    increments: I,
    probe: P,
    /// Gauss–Legendre rule on `[-1, 1]` (quadrature variant only).
    rule: Option<(Vec<T>, Vec<T>)>,
}

impl<'a, T: Real> MlpSolver<'a, T> {
    pub fn new(pde: &'a SemilinearPde<T>, cfg: &MlpConfig) -> Result<Self> {
        Self::with_parts(pde, cfg, GaussianIncrements, NoProbe)
    }
}

impl<'a, T: Real, I: IncrementSource<T>, P: Probe<T>> MlpSolver<'a, T, I, P> {
    /// Solver with a custom increment source and probe.
    pub fn with_parts(pde: &'a SemilinearPde<T>, cfg: &MlpConfig, increments: I, probe: P) -> Result<Self> {
        cfg.validate()?;
        let rule = match cfg.variant {
            Variant::Quadrature { order } => Some(gauss_legendre(order)?),
            Variant::FullHistory { .. } => None,
        };
        Ok(Self {
            pde,
            cfg: *cfg,
            increments,
            probe,
            rule,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    /// `U_n(s, x)` with `n = cfg.levels`.
    pub fn estimate(&self, s: T, x: &[T], stream: &RngStream) -> Result<Estimate<T>> {
        if x.len() != self.pde.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pde.dim(),
                found: x.len(),
            });
        }
        let mut path = Vec::with_capacity(2 * self.cfg.levels as usize + 2);
        self.recurse(self.cfg.levels, s, x, stream, &mut path).map(Estimate::new)
    }

    fn recurse(&self, n: u32, s: T, x: &[T], stream: &RngStream, path: &mut Vec<StreamLabel>) -> Result<Vec<T>> {
        self.probe.visit(path, n, s, x);
        let d = x.len();
        let mut out = vec![T::zero(); d + 1];
        if n == 0 {
            return Ok(out);
        }
        let horizon = self.pde.horizon();
        let gx = self.pde.g(x);
        out[0] = gx;

        if s < horizon {
            let dt = horizon - s;
            let count = self.cfg.samples(n);
            let inv = T::one() / T::lit(count as f64);
            let mut dw = vec![T::zero(); d];
            for i in 0..count {
                let mut ps = stream.child(0, Branch::Terminal, i);
                self.increments.increment(&mut ps, dt, &mut dw);
                let end = PathSample::from_increment(x, dt, self.pde.drift(), self.pde.diffusion(), dw.clone());
                let diff = (self.pde.g(&end.endpoint) - gx) * inv;
                out[0] = out[0] + diff;
                for (o, &w) in out[1..].iter_mut().zip(&end.increment) {
                    *o = *o + diff * w / dt;
                }
            }

            for l in 0..n {
                let count = self.cfg.samples(n - l);
                let inv = T::one() / T::lit(count as f64);
                match (&self.cfg.variant, &self.rule) {
                    (Variant::FullHistory { alpha }, _) => {
                        let alpha = T::lit(*alpha);
                        for i in 0..count {
                            let u: T = stream.child(l, Branch::Time, i).uniform_open();
                            let (r, w) = sample_time(s, horizon, alpha, u);
                            self.level_term(l, i, s, x, r, w * inv, stream, path, &mut out)?;
                        }
                    }
                    (Variant::Quadrature { .. }, Some((nodes, weights))) => {
                        let (times, tw) = rescale(nodes, weights, s, horizon);
                        let q = times.len() as u64;
                        for i in 0..count {
                            for (k, (&t, &w)) in times.iter().zip(&tw).enumerate() {
                                self.level_term(l, i * q + k as u64, s, x, t, w * inv, stream, path, &mut out)?;
                            }
                        }
                    }
                    (Variant::Quadrature { .. }, None) => unreachable!("rule built in constructor"),
                }
            }
        }

        if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("component {bad} of level-{n} estimate at {}", render_path(path)),
            });
        }
        if let Some(c) = self.cfg.clip {
            sampling::clip_in_place(&mut out, T::lit(c));
        }
        Ok(out)
    }

    /// Adds `scale · [F(U_l) − 1_{l≥1} F(U_{l−1})](t, X_t) · (1, dW/(t−s))` to `out`.
    #[allow(clippy::too_many_arguments)]
    fn level_term(
        &self,
        l: u32,
        idx: u64,
        s: T,
        x: &[T],
        t: T,
        scale: T,
        stream: &RngStream,
        path: &mut Vec<StreamLabel>,
        out: &mut [T],
    ) -> Result<()> {
        let dt = t - s;
        // a time fraction that underflowed to zero carries zero weight
        if !(dt > T::zero()) {
            return Ok(());
        }
        let d = x.len();
        let mut dw = vec![T::zero(); d];
        let mut ps = stream.child(l, Branch::Path, idx);
        self.increments.increment(&mut ps, dt, &mut dw);
        let sample = PathSample::from_increment(x, dt, self.pde.drift(), self.pde.diffusion(), dw);
        let residual_stream = stream.child(l, Branch::Residual, idx);

        let main = StreamLabel::new(l, Branch::Main, idx);
        path.push(main);
        let a = self.recurse(l, t, &sample.endpoint, &stream.derive(main), path)?;
        path.pop();
        let mut diff = self
            .pde
            .f(a[0], &a[1..], t, &sample.endpoint, &mut residual_stream.clone());

        if l > 0 {
            let prev = StreamLabel::new(l, Branch::Prev, idx);
            path.push(prev);
            let b = self.recurse(l - 1, t, &sample.endpoint, &stream.derive(prev), path)?;
            path.pop();
            diff = diff - self.pde.f(b[0], &b[1..], t, &sample.endpoint, &mut residual_stream.clone());
        }

        let coef = diff * scale;
        out[0] = out[0] + coef;
        for (o, &w) in out[1..].iter_mut().zip(&sample.increment) {
            *o = *o + coef * w / dt;
        }
        Ok(())
    }
}

fn render_path(path: &[StreamLabel]) -> String {
    if path.is_empty() {
        return "root".into();
    }
    let mut s = String::from("root");
    for l in path {
        s.push('/');
        s.push_str(&l.to_string());
    }
    s
}

/// One MLP estimate of `(u, σᵀ∇u)` at `(s, x)`.
pub fn mlp_estimate<T: Real>(
    pde: &SemilinearPde<T>,
    cfg: &MlpConfig,
    s: T,
    x: &[T],
    stream: &RngStream,
) -> Result<Estimate<T>> {
    MlpSolver::new(pde, cfg)?.estimate(s, x, stream)
}

/// Stream for point `index` of a run seeded with `seed`.
pub fn point_stream(seed: u64, index: u64) -> RngStream {
    RngStream::new(seed)
        .child(0, Branch::Inference, 0)
        .child(0, Branch::Point, index)
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::problem::{make_lcd, make_viscous_burgers, Domain, Nonlinearity, TerminalFn};

    struct ZeroIncrements;

    impl IncrementSource<f64> for ZeroIncrements {
        fn increment(&self, _stream: &mut RngStream, _dt: f64, out: &mut [f64]) {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn cfg(levels: u32, base: u32) -> MlpConfig {
        MlpConfig {
            levels,
            base,
            ..Default::default()
        }
    }

    #[test]
    fn level_zero_is_zero() {
        let pde = make_viscous_burgers::<f64>(3, 1.0).unwrap();
        let e = mlp_estimate(&pde, &cfg(0, 5), 0.1, &[0.1, 0.2, 0.3], &RngStream::new(1)).unwrap();
        assert_eq!(e, Estimate::zeros(3));
    }

    #[test]
    fn degenerate_increment_reproduces_linear_solution() {
        let pde = make_lcd::<f64>(1).unwrap();
        let solver = MlpSolver::with_parts(&pde, &cfg(1, 1), ZeroIncrements, NoProbe).unwrap();
        let e = solver.estimate(0.0, &[0.3], &RngStream::new(0)).unwrap();
        assert!((e.value() - 0.3).abs() < 1e-15);
        assert_eq!(e.gradient(), &[0.0]);
    }

    #[test]
    fn zero_data_gives_exact_zero() {
        let zero_f: Nonlinearity<f64> = Arc::new(|_, _, _, _, _| 0.0);
        let zero_g: TerminalFn<f64> = Arc::new(|_: &[f64]| 0.0);
        let pde = SemilinearPde::new(1.0, vec![0.3, -0.1], 0.8, zero_f, zero_g, Domain::cube(2, 0.0, 1.0)).unwrap();
        for variant in [Variant::FullHistory { alpha: 0.3 }, Variant::Quadrature { order: 3 }] {
            for levels in 0..4 {
                let c = MlpConfig {
                    levels,
                    base: 3,
                    variant,
                    clip: None,
                    seed: 0,
                };
                let e = mlp_estimate(&pde, &c, 0.2, &[0.5, 0.5], &RngStream::new(levels as u64)).unwrap();
                assert_eq!(e, Estimate::zeros(2));
            }
        }
    }

    #[test]
    fn terminal_time_returns_terminal_value() {
        let pde = make_lcd::<f64>(2).unwrap();
        let e = mlp_estimate(&pde, &cfg(2, 4), 0.5, &[0.1, 0.2], &RngStream::new(0)).unwrap();
        assert!((e.value() - 0.8).abs() < 1e-15);
        assert_eq!(e.gradient(), &[0.0, 0.0]);
    }

    #[test]
    fn unbiased_for_linear_problem() {
        let pde = make_lcd::<f64>(1).unwrap();
        let c = cfg(1, 1);
        let solver = MlpSolver::new(&pde, &c).unwrap();
        let root = RngStream::new(42);
        let n = 100_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| solver.estimate(0.0, &[0.3], &root.child(0, Branch::Aux, i)).unwrap().value())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 0.3).abs() < 4.0 * sd / (n as f64).sqrt(), "mean={mean}");
    }

    #[test]
    fn deterministic_given_stream() {
        let pde = make_viscous_burgers::<f64>(4, 2f64.sqrt()).unwrap();
        for variant in [Variant::FullHistory { alpha: 0.5 }, Variant::Quadrature { order: 4 }] {
            let c = MlpConfig {
                levels: 2,
                base: 3,
                variant,
                clip: Some(1.0),
                seed: 0,
            };
            let x = [0.1, -0.2, 0.0, 0.3];
            let a = mlp_estimate(&pde, &c, 0.1, &x, &RngStream::new(5)).unwrap();
            let b = mlp_estimate(&pde, &c, 0.1, &x, &RngStream::new(5)).unwrap();
            assert_eq!(a, b);
            let other = mlp_estimate(&pde, &c, 0.1, &x, &RngStream::new(6)).unwrap();
            assert_ne!(a, other);
        }
    }

    #[test]
    fn clipping_bounds_every_component() {
        let pde = make_lcd::<f64>(3).unwrap();
        let c = MlpConfig {
            clip: Some(0.25),
            ..cfg(2, 3)
        };
        let e = mlp_estimate(&pde, &c, 0.0, &[0.5, 0.5, 0.5], &RngStream::new(1)).unwrap();
        assert!(e.components.iter().all(|v| v.abs() <= 0.25));
        assert_eq!(e.value(), 0.25);
    }

    #[derive(Default)]
    struct Recorder {
        calls: Mutex<Vec<(Vec<StreamLabel>, u32, f64, Vec<f64>)>>,
    }

    impl Probe<f64> for &Recorder {
        fn visit(&self, path: &[StreamLabel], level: u32, s: f64, x: &[f64]) {
            self.calls.lock().unwrap().push((path.to_vec(), level, s, x.to_vec()));
        }
    }

    #[test]
    fn coupled_subestimates_share_time_and_position() {
        let pde = make_viscous_burgers::<f64>(2, 1.0).unwrap();
        for variant in [Variant::FullHistory { alpha: 0.5 }, Variant::Quadrature { order: 2 }] {
            let rec = Recorder::default();
            let c = MlpConfig {
                levels: 3,
                base: 2,
                variant,
                clip: None,
                seed: 0,
            };
            let solver = MlpSolver::with_parts(&pde, &c, GaussianIncrements, &rec).unwrap();
            solver.estimate(0.05, &[0.1, 0.2], &RngStream::new(9)).unwrap();
            let calls = rec.calls.into_inner().unwrap();
            let mut pairs = 0;
            for (path, level, s, x) in calls.iter().filter(|c| c.0.last().map(|l| l.branch) == Some(Branch::Prev)) {
                let mut main_path = path.clone();
                let last = main_path.last_mut().unwrap();
                last.branch = Branch::Main;
                let partner = calls.iter().find(|c| c.0 == main_path).expect("main partner");
                assert_eq!(partner.1, level + 1);
                assert_eq!(partner.2, *s);
                assert_eq!(&partner.3, x);
                pairs += 1;
            }
            assert!(pairs > 0);
        }
    }

    #[test]
    fn quadrature_integrates_constant_source() {
        // F ≡ κ, g ≡ 0 ⇒ value = κ (T - s) exactly for the quadrature variant.
        let kappa = 0.7;
        let f: Nonlinearity<f64> = Arc::new(move |_, _, _, _, _| kappa);
        let g: TerminalFn<f64> = Arc::new(|_: &[f64]| 0.0);
        let pde = SemilinearPde::new(1.0, vec![0.0], 1.0, f, g, Domain::cube(1, 0.0, 1.0)).unwrap();
        for order in [1, 3, 8] {
            let c = MlpConfig {
                levels: 1,
                base: 4,
                variant: Variant::Quadrature { order },
                clip: None,
                seed: 0,
            };
            let e = mlp_estimate(&pde, &c, 0.25, &[0.5], &RngStream::new(2)).unwrap();
            assert!((e.value() - kappa * 0.75).abs() < 1e-14);
        }
        // full history agrees in expectation
        let c = MlpConfig {
            levels: 1,
            base: 4,
            variant: Variant::FullHistory { alpha: 0.5 },
            clip: None,
            seed: 0,
        };
        let n = 20_000;
        let mean = (0..n)
            .map(|i| mlp_estimate(&pde, &c, 0.25, &[0.5], &RngStream::new(i)).unwrap().value())
            .sum::<f64>()
            / n as f64;
        assert!((mean - kappa * 0.75).abs() < 0.01, "mean={mean}");
    }

    #[test]
    fn non_finite_is_reported_with_path() {
        let f: Nonlinearity<f64> = Arc::new(|v, _, _, _, _| if v != 0.0 { f64::NAN } else { 0.0 });
        let pde = make_lcd::<f64>(1).unwrap().with_nonlinearity(f);
        let c = MlpConfig {
            clip: Some(1.0),
            ..cfg(2, 2)
        };
        match mlp_estimate(&pde, &c, 0.0, &[0.1], &RngStream::new(0)) {
            Err(Error::NonFinite { context }) => assert!(context.starts_with("component 0 of level-2"), "{context}"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(11, 2).validate().is_err());
        assert!(cfg(2, 0).validate().is_err());
        let mut c = cfg(2, 2);
        c.variant = Variant::FullHistory { alpha: 1.0 };
        assert!(c.validate().is_err());
        c.variant = Variant::Quadrature { order: 0 };
        assert!(c.validate().is_err());
        c.variant = Variant::Quadrature { order: 8 };
        c.clip = Some(0.0);
        assert!(c.validate().is_err());
        c.clip = Some(2.0);
        assert!(c.validate().is_ok());
        assert_eq!(cfg(3, 10).samples(3), 1000);
    }
}
