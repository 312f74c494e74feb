//! The defect `ŭ = u − û` solves a problem of the same semi-linear form:
//!
//! `F̆(v, z, t, x) = F(û + v, c∇û + z, t, x) − F(û, c∇û, t, x) + ε(t, x)`,
//! `ğ(x) = g(x) − û(T, x)`,
//!
//! where `ε` is the residual of the surrogate. The derived problem is an
//! ordinary [`SemilinearPde`], so the solver needs no special casing.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::problem::{sample_test_points, Nonlinearity, SemilinearPde, TerminalFn};
use crate::real::Real;
use crate::rng::{Branch, RngStream};
use crate::surrogate::{residual_jet, LaplacianMode, Surrogate};

#[derive(Clone)]
pub struct DefectProblem<T: Real> {
    base: SemilinearPde<T>,
    surrogate: Arc<dyn Surrogate<T>>,
    lap_mode: LaplacianMode,
    derived: SemilinearPde<T>,
}

impl<T: Real> fmt::Debug for DefectProblem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DefectProblem")
            .field("base", &self.base)
            .field("surrogate", &self.surrogate)
            .field("lap_mode", &self.lap_mode)
            .finish()
    }
}

impl<T: Real> DefectProblem<T> {
    pub fn base(&self) -> &SemilinearPde<T> {
        &self.base
    }

    pub fn surrogate(&self) -> &Arc<dyn Surrogate<T>> {
        &self.surrogate
    }

    pub fn lap_mode(&self) -> LaplacianMode {
        self.lap_mode
    }

    /// The problem whose solution is the defect.
    pub fn derived(&self) -> &SemilinearPde<T> {
        &self.derived
    }
}

/// Builds the defect problem of `pde` with respect to `surrogate`.
pub fn make_defect_problem<T: Real>(
    pde: &SemilinearPde<T>,
    surrogate: Arc<dyn Surrogate<T>>,
    lap_mode: LaplacianMode,
) -> Result<DefectProblem<T>> {
    if surrogate.dim() != pde.dim() {
        return Err(Error::DimensionMismatch {
            expected: pde.dim(),
            found: surrogate.dim(),
        });
    }
    lap_mode.validate(pde.dim())?;

    let base = pde.clone();
    let s = surrogate.clone();
    let f: Nonlinearity<T> = Arc::new(move |v, z, t, x, stream| {
        // F(û, c∇û) cancels against the residual, leaving its linear part
        let (jet, linear) = residual_jet(&base, &*s, t, x, lap_mode, stream);
        let c = base.diffusion();
        let shifted: Vec<T> = jet.gradient.iter().zip(z).map(|(&g, &b)| c * g + b).collect();
        base.f(jet.value + v, &shifted, t, x, stream) + linear
    });

    let base = pde.clone();
    let s = surrogate.clone();
    let g: TerminalFn<T> = Arc::new(move |x: &[T]| base.g(x) - s.value(base.horizon(), x));

    let derived = pde.clone().with_nonlinearity(f).with_terminal(g).without_reference();
    Ok(DefectProblem {
        base: pde.clone(),
        surrogate,
        lap_mode,
        derived,
    })
}

/// Largest observed `|F(w₁) − F(w₂)| / ‖w₁ − w₂‖₁` over `n_pairs` random pairs
/// `w = (v, z)` drawn from `[-1, 1]^{1+d}` at random domain points.
///
/// Both members of a pair see the same stream, so stochastic Laplacians
/// cancel inside the difference.
pub fn lipschitz_probe_pde<T: Real>(pde: &SemilinearPde<T>, n_pairs: usize, seed: u64) -> T {
    let root = RngStream::new(seed);
    let points = sample_test_points(pde, n_pairs, root.child(0, Branch::TestPoints, 0).key());
    let d = pde.dim();
    let mut best = T::zero();
    for (i, p) in points.iter().enumerate() {
        let mut draw = root.child(0, Branch::Aux, i as u64);
        let w = |draw: &mut RngStream| -> (T, Vec<T>) {
            let v = draw.uniform_in(-T::one(), T::one());
            let z = (0..d).map(|_| draw.uniform_in(-T::one(), T::one())).collect();
            (v, z)
        };
        let (v1, z1) = w(&mut draw);
        let (v2, z2) = w(&mut draw);
        let shared = root.child(0, Branch::Residual, i as u64);
        let f1 = pde.f(v1, &z1, p.t, &p.x, &mut shared.clone());
        let f2 = pde.f(v2, &z2, p.t, &p.x, &mut shared.clone());
        let dist = (v1 - v2).abs() + z1.iter().zip(&z2).map(|(&a, &b)| (a - b).abs()).sum::<T>();
        if dist > T::zero() {
            best = best.max((f1 - f2).abs() / dist);
        }
    }
    best
}

/// Empirical Lipschitz constant of `F̆` (diagnostic only).
pub fn lipschitz_probe<T: Real>(dp: &DefectProblem<T>, n_pairs: usize, seed: u64) -> T {
    lipschitz_probe_pde(dp.derived(), n_pairs, seed)
}
