//! Semi-linear parabolic terminal-value problems
//!
//! `∂u/∂t + ⟨μ, ∇u⟩ + (c²/2) Δu + F(u, c∇u, t, x) = 0`, `u(T, x) = g(x)`,
//!
//! with constant drift `μ` and scalar diffusion `σ = c·I`, plus the four
//! benchmark families used throughout the crate.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::rng::RngStream;

/// A space-time location `(t, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimePoint<T> {
    pub t: T,
    pub x: Vec<T>,
}

impl<T: Real> SpaceTimePoint<T> {
    pub fn new(t: T, x: Vec<T>) -> Self {
        Self { t, x }
    }
}

/// Nonlinearity `F(v, z, t, x)` where `z` plays the role of `σᵀ∇u`.
///
/// The stream argument is only consumed by stochastic nonlinearities (a
/// defect problem with a sampled Laplacian); the benchmark maps ignore it.
pub type Nonlinearity<T> = Arc<dyn Fn(T, &[T], T, &[T], &mut RngStream) -> T + Send + Sync>;

/// Terminal condition `g(x)`.
pub type TerminalFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Value and the derivatives entering the PDE operator at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    pub value: T,
    pub time_deriv: T,
    pub gradient: Vec<T>,
    /// Full Laplacian, or a partial sum of second derivatives when a subset
    /// of coordinates was requested.
    pub laplacian: T,
}

/// Which diagonal Hessian entries a [`Jet`] should sum into its Laplacian.
#[derive(Clone, Copy, Debug)]
pub enum LaplacianTerms<'a> {
    All,
    Subset(&'a [usize]),
}

/// Closed-form solution with analytic derivatives.
pub trait ExactSolution<T: Real>: Send + Sync {
    fn value(&self, t: T, x: &[T]) -> T;
    fn jet(&self, t: T, x: &[T], terms: LaplacianTerms<'_>) -> Jet<T>;

    fn gradient(&self, t: T, x: &[T]) -> Vec<T> {
        self.jet(t, x, LaplacianTerms::All).gradient
    }
}

/// Sampling region for spatial coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain<T> {
    /// Hyper-rectangle with per-axis bounds.
    Rect { lower: Vec<T>, upper: Vec<T> },
    /// Centered open ball.
    Ball { radius: T },
}

impl<T: Real> Domain<T> {
    pub fn cube(d: usize, lo: T, hi: T) -> Self {
        Domain::Rect {
            lower: vec![lo; d],
            upper: vec![hi; d],
        }
    }

    pub fn unit_ball() -> Self {
        Domain::Ball { radius: T::one() }
    }

    pub fn contains(&self, x: &[T]) -> bool {
        match self {
            Domain::Rect { lower, upper } => {
                x.len() == lower.len()
                    && x.iter()
                        .zip(lower.iter().zip(upper))
                        .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
            }
            Domain::Ball { radius } => x.iter().map(|&v| v * v).sum::<T>() < *radius * *radius,
        }
    }

    /// Axis-aligned bounding box of the region for dimension `d`.
    pub fn bounds(&self, d: usize) -> (Vec<T>, Vec<T>) {
        match self {
            Domain::Rect { lower, upper } => (lower.clone(), upper.clone()),
            Domain::Ball { radius } => (vec![-*radius; d], vec![*radius; d]),
        }
    }
}

/// Identifies the benchmark family a problem was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    LinearConvectionDiffusion,
    ViscousBurgers,
    LqgHjb,
    DiffusionReaction,
    Custom,
}

impl ProblemKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ProblemKind::LinearConvectionDiffusion => "lcd",
            ProblemKind::ViscousBurgers => "vb",
            ProblemKind::LqgHjb => "lqg",
            ProblemKind::DiffusionReaction => "dr",
            ProblemKind::Custom => "custom",
        }
    }
}

/// One terminal-value problem. Immutable after construction.
#[derive(Clone)]
pub struct SemilinearPde<T: Real> {
    kind: ProblemKind,
    dim: usize,
    horizon: T,
    drift: Vec<T>,
    diffusion: T,
    nonlinearity: Nonlinearity<T>,
    terminal: TerminalFn<T>,
    domain: Domain<T>,
    reference: Option<Arc<dyn ExactSolution<T>>>,
}

impl<T: Real> fmt::Debug for SemilinearPde<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemilinearPde")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("diffusion", &self.diffusion)
            .field("domain", &self.domain)
            .field("has_reference", &self.reference.is_some())
            .finish()
    }
}

impl<T: Real> SemilinearPde<T> {
    /// Builds a custom problem, validating the coefficient invariants.
    pub fn new(
        horizon: T,
        drift: Vec<T>,
        diffusion: T,
        nonlinearity: Nonlinearity<T>,
        terminal: TerminalFn<T>,
        domain: Domain<T>,
    ) -> Result<Self> {
        let dim = drift.len();
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(horizon > T::zero()) {
            return Err(invalid("terminal time must be positive"));
        }
        if !(diffusion > T::zero()) {
            return Err(invalid("diffusion coefficient must be positive"));
        }
        if let Domain::Rect { lower, upper } = &domain {
            if lower.len() != dim || upper.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: lower.len().min(upper.len()),
                });
            }
        }
        Ok(Self {
            kind: ProblemKind::Custom,
            dim,
            horizon,
            drift,
            diffusion,
            nonlinearity,
            terminal,
            domain,
            reference: None,
        })
    }

    pub fn with_reference(mut self, reference: Arc<dyn ExactSolution<T>>) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn without_reference(mut self) -> Self {
        self.reference = None;
        self
    }

    pub fn with_terminal(mut self, terminal: TerminalFn<T>) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn with_nonlinearity(mut self, nonlinearity: Nonlinearity<T>) -> Self {
        self.nonlinearity = nonlinearity;
        self
    }

    pub(crate) fn with_kind(mut self, kind: ProblemKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn drift(&self) -> &[T] {
        &self.drift
    }

    pub fn diffusion(&self) -> T {
        self.diffusion
    }

    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    pub fn nonlinearity(&self) -> &Nonlinearity<T> {
        &self.nonlinearity
    }

    pub fn terminal_fn(&self) -> &TerminalFn<T> {
        &self.terminal
    }

    pub fn reference(&self) -> Option<&Arc<dyn ExactSolution<T>>> {
        self.reference.as_ref()
    }

    #[inline]
    pub fn f(&self, v: T, z: &[T], t: T, x: &[T], stream: &mut RngStream) -> T {
        (self.nonlinearity)(v, z, t, x, stream)
    }

    /// Deterministic evaluation of `F` (uses a throwaway stream).
    pub fn f_det(&self, v: T, z: &[T], t: T, x: &[T]) -> T {
        let mut scratch = RngStream::new(0);
        self.f(v, z, t, x, &mut scratch)
    }

    #[inline]
    pub fn g(&self, x: &[T]) -> T {
        (self.terminal)(x)
    }

    pub fn contains(&self, p: &SpaceTimePoint<T>) -> bool {
        p.t >= T::zero() && p.t <= self.horizon && p.x.len() == self.dim && self.domain.contains(&p.x)
    }

    /// Reference value at `p`: closed form when available, otherwise the
    /// Cole–Hopf Monte-Carlo representation for the LQG family.
    pub fn reference_value(&self, p: &SpaceTimePoint<T>, mc_budget: usize, seed: u64) -> Result<T> {
        if let Some(r) = &self.reference {
            return Ok(r.value(p.t, &p.x));
        }
        match self.kind {
            ProblemKind::LqgHjb => lqg_reference(self, p, mc_budget, seed),
            _ => Err(Error::Undefined(format!(
                "problem `{}` has no reference solution",
                self.kind.short_name()
            ))),
        }
    }

    /// Linear part `∂u/∂t + ⟨μ,∇u⟩ + (c²/2)Δu` of the operator.
    pub fn linear_operator(&self, jet: &Jet<T>) -> T {
        let c = self.diffusion;
        let drift: T = self.drift.iter().zip(&jet.gradient).map(|(&m, &g)| m * g).sum();
        jet.time_deriv + drift + c * c / T::lit(2.0) * jet.laplacian
    }

    /// `∂u/∂t + ⟨μ,∇u⟩ + (c²/2)Δu + F(u, c∇u, t, x)` for a given jet.
    pub fn operator_residual(&self, jet: &Jet<T>, t: T, x: &[T], stream: &mut RngStream) -> T {
        let c = self.diffusion;
        let z: Vec<T> = jet.gradient.iter().map(|&g| c * g).collect();
        self.linear_operator(jet) + self.f(jet.value, &z, t, x, stream)
    }
}

fn check_dim(d: usize, min: usize) -> Result<()> {
    if d < min {
        return Err(invalid(format!("dimension must be at least {min}, got {d}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- LCD

struct LcdSolution;

impl<T: Real> ExactSolution<T> for LcdSolution {
    fn value(&self, t: T, x: &[T]) -> T {
        x.iter().copied().sum::<T>() + t
    }

    fn jet(&self, t: T, x: &[T], _terms: LaplacianTerms<'_>) -> Jet<T> {
        Jet {
            value: self.value(t, x),
            time_deriv: T::one(),
            gradient: vec![T::one(); x.len()],
            laplacian: T::zero(),
        }
    }
}

/// Linear convection-diffusion: `u(t, x) = Σxᵢ + t` on `[0, 0.5] × [0, 0.5]^d`.
pub fn make_lcd<T: Real>(d: usize) -> Result<SemilinearPde<T>> {
    check_dim(d, 1)?;
    let horizon = T::lit(0.5);
    let drift = vec![-T::one() / T::from_count(d); d];
    let terminal: TerminalFn<T> = Arc::new(move |y: &[T]| y.iter().copied().sum::<T>() + horizon);
    let zero: Nonlinearity<T> = Arc::new(|_, _, _, _, _| T::zero());
    Ok(SemilinearPde::new(
        horizon,
        drift,
        T::SQRT_2(),
        zero,
        terminal,
        Domain::cube(d, T::zero(), T::lit(0.5)),
    )?
    .with_reference(Arc::new(LcdSolution))
    .with_kind(ProblemKind::LinearConvectionDiffusion))
}

// ---------------------------------------------------------------- VB

fn sigmoid<T: Real>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

struct BurgersSolution;

impl<T: Real> ExactSolution<T> for BurgersSolution {
    fn value(&self, t: T, x: &[T]) -> T {
        sigmoid(t + x.iter().copied().sum::<T>())
    }

    fn jet(&self, t: T, x: &[T], terms: LaplacianTerms<'_>) -> Jet<T> {
        let u = self.value(t, x);
        let du = u * (T::one() - u);
        let d2u = du * (T::one() - T::lit(2.0) * u);
        let count = match terms {
            LaplacianTerms::All => x.len(),
            LaplacianTerms::Subset(idx) => idx.len(),
        };
        Jet {
            value: u,
            time_deriv: du,
            gradient: vec![du; x.len()],
            laplacian: T::from_count(count) * d2u,
        }
    }
}

/// Viscous Burgers: `u(t, x) = sigmoid(t + Σxᵢ)` on `[0, 0.5] × [-0.5, 0.5]^d`.
pub fn make_viscous_burgers<T: Real>(d: usize, sigma0: T) -> Result<SemilinearPde<T>> {
    check_dim(d, 1)?;
    if !(sigma0 > T::zero()) {
        return Err(invalid("sigma0 must be positive"));
    }
    let horizon = T::lit(0.5);
    let half = T::lit(0.5);
    let drift = vec![-(T::one() / T::from_count(d) + sigma0 * sigma0 * half); d];
    let terminal: TerminalFn<T> = Arc::new(move |y: &[T]| sigmoid(horizon + y.iter().copied().sum::<T>()));
    let f: Nonlinearity<T> = Arc::new(move |v, z, _, _, _| sigma0 * v * z.iter().copied().sum::<T>());
    Ok(SemilinearPde::new(
        horizon,
        drift,
        sigma0,
        f,
        terminal,
        Domain::cube(d, -half, half),
    )?
    .with_reference(Arc::new(BurgersSolution))
    .with_kind(ProblemKind::ViscousBurgers))
}

// ---------------------------------------------------------------- LQG

/// Coefficients `(c₁ᵢ, c₂ᵢ)`, `i = 1..d-1`, drawn uniformly from `[0.5, 1.5]`.
pub fn lqg_coefficients<T: Real>(d: usize, coeff_seed: u64) -> (Vec<T>, Vec<T>) {
    let mut s = RngStream::new(coeff_seed);
    let lo = T::lit(0.5);
    let hi = T::lit(1.5);
    let c1 = (0..d - 1).map(|_| s.uniform_in(lo, hi)).collect();
    let c2 = (0..d - 1).map(|_| s.uniform_in(lo, hi)).collect();
    (c1, c2)
}

/// HJB of a linear-quadratic-Gaussian control problem on `[0, 0.5] × B^d`.
/// No closed form; see [`lqg_reference`].
pub fn make_lqg_hjb<T: Real>(d: usize, coeff_seed: u64) -> Result<SemilinearPde<T>> {
    check_dim(d, 2)?;
    let (c1, c2) = lqg_coefficients::<T>(d, coeff_seed);
    let terminal: TerminalFn<T> = Arc::new(move |y: &[T]| {
        let mut q = T::one();
        for i in 0..y.len() - 1 {
            let diff = y[i] - y[i + 1];
            q = q + c1[i] * diff * diff + c2[i] * y[i + 1] * y[i + 1];
        }
        (q / T::lit(2.0)).ln()
    });
    let f: Nonlinearity<T> = Arc::new(|_, z, _, _, _| -z.iter().map(|&v| v * v).sum::<T>() / T::lit(2.0));
    Ok(SemilinearPde::new(
        T::lit(0.5),
        vec![T::zero(); d],
        T::SQRT_2(),
        f,
        terminal,
        Domain::unit_ball(),
    )?
    .with_kind(ProblemKind::LqgHjb))
}

/// `-log E[exp(-g(y + μ(T-r) + c√(T-r)·ξ))]`, estimated with `n_samples`
/// Gaussian vectors in a max-shifted log-mean-exp.
pub fn lqg_reference<T: Real>(pde: &SemilinearPde<T>, p: &SpaceTimePoint<T>, n_samples: usize, seed: u64) -> Result<T> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be positive"));
    }
    if p.x.len() != pde.dim() {
        return Err(Error::DimensionMismatch {
            expected: pde.dim(),
            found: p.x.len(),
        });
    }
    let dt = (pde.horizon() - p.t).max(T::zero());
    let scale = pde.diffusion() * dt.sqrt();
    let mut stream = RngStream::new(seed);
    let mut y = vec![T::zero(); pde.dim()];
    let mut exponents = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        for ((yi, &xi), &mi) in y.iter_mut().zip(&p.x).zip(pde.drift()) {
            let xi_draw: T = stream.normal();
            *yi = xi + mi * dt + scale * xi_draw;
        }
        let gy = pde.g(&y);
        if !gy.is_finite() {
            return Err(Error::NonFinite {
                context: "terminal condition inside LQG reference".into(),
            });
        }
        exponents.push(-gy);
    }
    let shift = exponents.iter().copied().fold(T::neg_infinity(), T::max);
    let mean = exponents.iter().map(|&a| (a - shift).exp()).sum::<T>() / T::from_count(n_samples);
    Ok(-(shift + mean.ln()))
}

// ---------------------------------------------------------------- DR

struct ReactionSolution;

impl ReactionSolution {
    fn parts<T: Real>(t: T, x: &[T]) -> (T, T, T) {
        let d = T::from_count(x.len());
        let arg = T::lit(0.1) * x.iter().copied().sum::<T>();
        let decay = (T::lit(0.01) * d * (t - T::one()) / T::lit(2.0)).exp();
        (arg.sin(), arg.cos(), decay)
    }
}

impl<T: Real> ExactSolution<T> for ReactionSolution {
    fn value(&self, t: T, x: &[T]) -> T {
        let (s, _, e) = Self::parts(t, x);
        T::lit(1.6) + s * e
    }

    fn jet(&self, t: T, x: &[T], terms: LaplacianTerms<'_>) -> Jet<T> {
        let (s, c, e) = Self::parts(t, x);
        let d = T::from_count(x.len());
        let count = match terms {
            LaplacianTerms::All => x.len(),
            LaplacianTerms::Subset(idx) => idx.len(),
        };
        Jet {
            value: T::lit(1.6) + s * e,
            time_deriv: T::lit(0.005) * d * s * e,
            gradient: vec![T::lit(0.1) * c * e; x.len()],
            laplacian: -T::lit(0.01) * T::from_count(count) * s * e,
        }
    }
}

/// Diffusion-reaction with an oscillatory exact solution on `[0, 1] × B^d`.
pub fn make_diffusion_reaction<T: Real>(d: usize) -> Result<SemilinearPde<T>> {
    check_dim(d, 1)?;
    let exact = Arc::new(ReactionSolution);
    let terminal: TerminalFn<T> = Arc::new(|y: &[T]| ExactSolution::<T>::value(&ReactionSolution, T::one(), y));
    let f: Nonlinearity<T> = Arc::new(|v, _, t, x, _| {
        let dev = v - ExactSolution::<T>::value(&ReactionSolution, t, x);
        T::one().min(dev * dev)
    });
    Ok(SemilinearPde::new(
        T::one(),
        vec![T::zero(); d],
        T::one(),
        f,
        terminal,
        Domain::unit_ball(),
    )?
    .with_reference(exact)
    .with_kind(ProblemKind::DiffusionReaction))
}

// ---------------------------------------------------------------- sampling

/// `count` points uniform over `[0, T] × domain`.
pub fn sample_test_points<T: Real>(pde: &SemilinearPde<T>, count: usize, seed: u64) -> Vec<SpaceTimePoint<T>> {
    let mut stream = RngStream::new(seed);
    let d = pde.dim();
    (0..count)
        .map(|_| {
            let t = stream.uniform_in(T::zero(), pde.horizon());
            let x = match pde.domain() {
                Domain::Rect { lower, upper } => lower
                    .iter()
                    .zip(upper)
                    .map(|(&lo, &hi)| stream.uniform_in(lo, hi))
                    .collect(),
                Domain::Ball { radius } => sample_ball(&mut stream, d, *radius),
            };
            SpaceTimePoint { t, x }
        })
        .collect()
}

fn sample_ball<T: Real>(stream: &mut RngStream, d: usize, radius: T) -> Vec<T> {
    let mut dir = vec![T::zero(); d];
    let norm = loop {
        stream.fill_normal(&mut dir);
        let n = dir.iter().map(|&v| v * v).sum::<T>().sqrt();
        if n > T::zero() {
            break n;
        }
    };
    let u: T = stream.uniform_open();
    let r = radius * u.powf(T::one() / T::from_count(d));
    dir.iter().map(|&v| v / norm * r).collect()
}

// ---------------------------------------------------------------- diagnostics

/// Central finite-difference jet of `f` at `(t, x)` with step `h`.
///
/// Used to cross-check analytic derivatives and PDE residuals of closed forms.
pub fn finite_difference_jet<T: Real>(f: impl Fn(T, &[T]) -> T, t: T, x: &[T], h: T) -> Jet<T> {
    let two = T::lit(2.0);
    let value = f(t, x);
    let time_deriv = (f(t + h, x) - f(t - h, x)) / (two * h);
    let mut probe = x.to_vec();
    let mut gradient = Vec::with_capacity(x.len());
    let mut laplacian = T::zero();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(t, &probe);
        probe[i] = x[i] - h;
        let down = f(t, &probe);
        probe[i] = x[i];
        gradient.push((up - down) / (two * h));
        laplacian = laplacian + (up - two * value + down) / (h * h);
    }
    Jet {
        value,
        time_deriv,
        gradient,
        laplacian,
    }
}
