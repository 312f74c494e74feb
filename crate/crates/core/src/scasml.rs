//! Surrogate correction: estimate the defect with MLP and add it back.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::defect::{make_defect_problem, DefectProblem};
use crate::error::{invalid, Result};
use crate::mlp::{point_stream, Estimate, MlpConfig, MlpSolver};
use crate::problem::{ProblemKind, SemilinearPde, SpaceTimePoint};
use crate::real::Real;
use crate::surrogate::{LaplacianMode, Surrogate, ZeroSurrogate};

/// Corrected estimate at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<T> {
    /// `û(s, x) + Ŭ₀`.
    pub value: T,
    /// `c∇û(s, x) + Ŭ₁..d`.
    pub gradient_scaled: Vec<T>,
    /// Raw MLP estimate of the defect.
    pub correction: Estimate<T>,
    pub surrogate_value: T,
    /// Seconds spent on this point.
    pub wall_time: f64,
}

/// Clip threshold used by the benchmark presets; `corrected` selects the
/// threshold for the surrogate-corrected run rather than naive MLP.
pub fn preset_clip(kind: ProblemKind, dim: usize, corrected: bool) -> Option<f64> {
    match (kind, corrected) {
        (ProblemKind::LinearConvectionDiffusion, _) => Some(0.5 * (dim as f64 + 1.0)),
        (ProblemKind::ViscousBurgers, false) => Some(1.0),
        (ProblemKind::ViscousBurgers, true) => Some(0.01),
        (ProblemKind::LqgHjb, false) => Some(10.0),
        (ProblemKind::LqgHjb, true) => Some(0.1),
        (ProblemKind::DiffusionReaction, false) => Some(10.0),
        (ProblemKind::DiffusionReaction, true) => Some(0.01),
        (ProblemKind::Custom, _) => None,
    }
}

/// Laplacian evaluation used by the benchmark presets: coordinate sampling
/// with `K = d/4` for LQG, exact otherwise.
pub fn preset_laplacian(kind: ProblemKind, dim: usize) -> LaplacianMode {
    match kind {
        ProblemKind::LqgHjb => LaplacianMode::Hutchinson {
            samples: (dim / 4).max(1),
        },
        _ => LaplacianMode::Exact,
    }
}

fn solve_prepared<T: Real>(
    dp: &DefectProblem<T>,
    cfg: &MlpConfig,
    p: &SpaceTimePoint<T>,
    index: u64,
) -> Result<SolveResult<T>> {
    let start = Instant::now();
    let base = dp.base();
    if !base.contains(p) {
        return Err(invalid(format!("point {index} lies outside the problem domain")));
    }
    let solver = MlpSolver::new(dp.derived(), cfg)?;
    let correction = solver.estimate(p.t, &p.x, &point_stream(cfg.seed, index))?;
    let jet = dp.surrogate().derivatives(p.t, &p.x);
    let c = base.diffusion();
    let value = jet.value + correction.value();
    let gradient_scaled = jet
        .gradient
        .iter()
        .zip(correction.gradient())
        .map(|(&g, &k)| c * g + k)
        .collect();
    Ok(SolveResult {
        value,
        gradient_scaled,
        surrogate_value: jet.value,
        correction,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Corrected solution at `p`, which is treated as point `index` of a run
/// seeded with `cfg.seed`.
pub fn solve_point<T: Real>(
    pde: &SemilinearPde<T>,
    surrogate: Arc<dyn Surrogate<T>>,
    cfg: &MlpConfig,
    p: &SpaceTimePoint<T>,
    lap_mode: LaplacianMode,
    index: u64,
) -> Result<SolveResult<T>> {
    let dp = make_defect_problem(pde, surrogate, lap_mode)?;
    solve_prepared(&dp, cfg, p, index)
}

/// MLP on the original problem, i.e. the correction of the zero surrogate.
pub fn naive_mlp_point<T: Real>(
    pde: &SemilinearPde<T>,
    cfg: &MlpConfig,
    p: &SpaceTimePoint<T>,
    index: u64,
) -> Result<SolveResult<T>> {
    solve_point(pde, Arc::new(ZeroSurrogate::new(pde.dim())), cfg, p, LaplacianMode::Exact, index)
}

/// Solves every point on a pool of `workers` threads. Output `i` belongs to
/// `points[i]` and is identical for any worker count; failures stay in place.
pub fn solve_batch<T: Real>(
    pde: &SemilinearPde<T>,
    surrogate: Arc<dyn Surrogate<T>>,
    cfg: &MlpConfig,
    points: &[SpaceTimePoint<T>],
    workers: usize,
    lap_mode: LaplacianMode,
) -> Result<Vec<Result<SolveResult<T>>>> {
    if workers == 0 {
        return Err(invalid("workers must be positive"));
    }
    cfg.validate()?;
    let dp = make_defect_problem(pde, surrogate, lap_mode)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| solve_prepared(&dp, cfg, p, i as u64))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::mlp_estimate;
    use crate::problem::{make_diffusion_reaction, make_lcd, make_viscous_burgers, sample_test_points};
    use crate::surrogate::{synthetic_surrogate, zero_surrogate};
    use crate::Error;

    fn cfg(levels: u32, base: u32, clip: Option<f64>) -> MlpConfig {
        MlpConfig {
            levels,
            base,
            clip,
            seed: 11,
            ..MlpConfig::default()
        }
    }

    #[test]
    fn decomposition_is_exact() {
        let pde = make_viscous_burgers::<f64>(3, 2f64.sqrt()).unwrap();
        let s = synthetic_surrogate(&pde, 0.05).unwrap();
        for (i, p) in sample_test_points(&pde, 10, 2).iter().enumerate() {
            let r = solve_point(&pde, s.clone(), &cfg(2, 3, Some(1.0)), p, LaplacianMode::Exact, i as u64).unwrap();
            assert_eq!(r.value, r.surrogate_value + r.correction.value());
            let grad = s.derivatives(p.t, &p.x).gradient;
            for j in 0..3 {
                assert_eq!(r.gradient_scaled[j], pde.diffusion() * grad[j] + r.correction.gradient()[j]);
            }
        }
    }

    #[test]
    fn zero_surrogate_matches_mlp_on_the_original_problem() {
        for pde in [make_lcd::<f64>(4).unwrap(), make_diffusion_reaction::<f64>(4).unwrap()] {
            let c = cfg(2, 4, Some(10.0));
            for (i, p) in sample_test_points(&pde, 8, 5).iter().enumerate() {
                let a = solve_point(&pde, zero_surrogate(&pde), &c, p, LaplacianMode::Exact, i as u64).unwrap();
                let b = naive_mlp_point(&pde, &c, p, i as u64).unwrap();
                let direct = mlp_estimate(&pde, &c, p.t, &p.x, &point_stream(c.seed, i as u64)).unwrap();
                assert_eq!(a.value, b.value);
                assert_eq!(a.value, direct.value());
                assert_eq!(a.gradient_scaled, direct.gradient());
                assert_eq!(b.surrogate_value, 0.0);
            }
        }
    }

    #[test]
    fn perfect_surrogate_is_returned_unchanged() {
        let pde = make_lcd::<f64>(5).unwrap();
        let s = synthetic_surrogate(&pde, 0.0).unwrap();
        for (i, p) in sample_test_points(&pde, 20, 3).iter().enumerate() {
            let r = solve_point(&pde, s.clone(), &cfg(2, 5, None), p, LaplacianMode::Exact, i as u64).unwrap();
            assert!(r.correction.components.iter().all(|&c| c == 0.0));
            let exact = pde.reference_value(p, 0, 0).unwrap();
            assert!((r.value - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_levels_return_the_surrogate() {
        let pde = make_viscous_burgers::<f64>(2, 1.0).unwrap();
        let s = synthetic_surrogate(&pde, 0.3).unwrap();
        let p = SpaceTimePoint::new(0.2, vec![0.1, -0.2]);
        let r = solve_point(&pde, s.clone(), &cfg(0, 10, None), &p, LaplacianMode::Exact, 0).unwrap();
        assert_eq!(r.value, s.value(0.2, &p.x));
        assert_eq!(naive_mlp_point(&pde, &cfg(0, 10, None), &p, 0).unwrap().value, 0.0);
    }

    #[test]
    fn naive_mlp_single_level_is_unbiased_for_lcd() {
        let pde = make_lcd::<f64>(1).unwrap();
        let p = SpaceTimePoint::new(0.1, vec![0.3]);
        let n = 400;
        let vals: Vec<f64> = (0..n)
            .map(|i| naive_mlp_point(&pde, &MlpConfig { seed: i, ..cfg(1, 50, None) }, &p, 0).unwrap().value)
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.4).abs() <= 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn batch_is_independent_of_worker_count() {
        let pde = make_viscous_burgers::<f64>(3, 2f64.sqrt()).unwrap();
        let s = synthetic_surrogate(&pde, 0.1).unwrap();
        let pts = sample_test_points(&pde, 32, 4);
        let c = cfg(2, 4, Some(0.5));
        let strip = |v: Vec<Result<SolveResult<f64>>>| -> Vec<(f64, Vec<f64>)> {
            v.into_iter().map(|r| r.unwrap()).map(|r| (r.value, r.gradient_scaled)).collect()
        };
        let one = strip(solve_batch(&pde, s.clone(), &c, &pts, 1, LaplacianMode::Exact).unwrap());
        let many = strip(solve_batch(&pde, s.clone(), &c, &pts, 8, LaplacianMode::Exact).unwrap());
        assert_eq!(one, many);
        // point i's result does not depend on the rest of the batch
        let alone = solve_point(&pde, s, &c, &pts[7], LaplacianMode::Exact, 7).unwrap();
        assert_eq!(alone.value, one[7].0);
    }

    #[test]
    fn batch_edge_cases() {
        let pde = make_lcd::<f64>(2).unwrap();
        let c = cfg(1, 2, None);
        assert!(solve_batch(&pde, zero_surrogate(&pde), &c, &[], 2, LaplacianMode::Exact).unwrap().is_empty());
        assert!(solve_batch(&pde, zero_surrogate(&pde), &c, &[], 0, LaplacianMode::Exact).is_err());
        let outside = SpaceTimePoint::new(0.1, vec![3.0, 0.0]);
        let inside = SpaceTimePoint::new(0.1, vec![0.2, 0.3]);
        let out = solve_batch(&pde, zero_surrogate(&pde), &c, &[inside, outside], 2, LaplacianMode::Exact).unwrap();
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn presets() {
        assert_eq!(preset_clip(ProblemKind::LinearConvectionDiffusion, 10, false), Some(5.5));
        assert_eq!(preset_clip(ProblemKind::ViscousBurgers, 20, true), Some(0.01));
        assert_eq!(preset_clip(ProblemKind::LqgHjb, 100, false), Some(10.0));
        assert_eq!(preset_clip(ProblemKind::DiffusionReaction, 5, true), Some(0.01));
        assert_eq!(preset_laplacian(ProblemKind::LqgHjb, 100), LaplacianMode::Hutchinson { samples: 25 });
        assert_eq!(preset_laplacian(ProblemKind::LqgHjb, 2), LaplacianMode::Hutchinson { samples: 1 });
        assert_eq!(preset_laplacian(ProblemKind::LinearConvectionDiffusion, 100), LaplacianMode::Exact);
    }
}
