//! Experiment runner: benchmark tables, inference-budget sweeps, surrogate
//! convergence fits, and report emission.

mod metrics;
mod report;
mod spec;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use metrics::{evaluate_metrics, fit_log_slope, Metrics};
pub use report::{emit_report, read_report, write_report, Method, MetricsRow, ReportFormat, CSV_HEADER};
pub use spec::{
    ClipSetting, FitSpec, LaplacianSetting, MlpSpec, ProblemName, ProblemSpec, RunSpec, SurrogateSpec, VariantName,
};

use crate::error::{invalid, Error, Result};
use crate::mlp::MlpConfig;
use crate::problem::{SemilinearPde, SpaceTimePoint};
use crate::scasml::solve_batch;
use crate::surrogate::{fit_rbf, zero_surrogate, LaplacianMode, Surrogate};

/// Largest failed-point share (percent) for which a row is still emitted.
pub const FAILURE_BUDGET_PERCENT: usize = 5;

/// A method whose failed-point share exceeded the budget; its row is omitted.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodFailure {
    pub method: Method,
    pub failed: usize,
    pub total: usize,
    /// Diagnostic of the first failed point.
    pub first_error: String,
}

impl MethodFailure {
    pub fn to_error(&self) -> Error {
        Error::TooManyFailures {
            failed: self.failed,
            total: self.total,
            budget_percent: FAILURE_BUDGET_PERCENT,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<MethodFailure>,
}

/// Problem, test points and reference values shared by every method of a run.
pub struct Prepared {
    pub pde: SemilinearPde<f64>,
    pub points: Vec<SpaceTimePoint<f64>>,
    pub references: Vec<f64>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Validates `spec`, builds its problem and samples the test set with references.
pub fn prepare(spec: &RunSpec) -> Result<Prepared> {
    spec.validate()?;
    let pde = spec.problem.build()?;
    let points = spec.test_points(&pde);
    let budget = spec.reference_budget();
    let references = pool(spec.workers)?.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| pde.reference_value(p, budget, spec.reference_seed(i)))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(Prepared {
        pde,
        points,
        references,
    })
}

#[derive(Serialize)]
struct RowConfig<'a> {
    spec: &'a RunSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    mlp: Option<&'a MlpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    laplacian: Option<LaplacianMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_train: Option<usize>,
    failed: usize,
    norms: &'static str,
}

const NORMS: &str = "rel_l2=l2(p-r)/l2(r); l_inf=max|p-r|; l1=mean|p-r|";

struct Row<'a> {
    spec: &'a RunSpec,
    method: Method,
    mlp: Option<&'a MlpConfig>,
    laplacian: Option<LaplacianMode>,
    n_train: Option<usize>,
}

impl Row<'_> {
    /// Scores `preds` (one entry per test point, `Err` for failures).
    fn finish(
        self,
        prep: &Prepared,
        preds: Vec<Result<f64>>,
        elapsed: f64,
        outcome: &mut RunOutcome,
    ) -> Result<Option<Metrics>> {
        let total = preds.len();
        let mut kept_p = Vec::with_capacity(total);
        let mut kept_r = Vec::with_capacity(total);
        let mut first_error = None;
        for (p, &r) in preds.into_iter().zip(&prep.references) {
            match p {
                Ok(v) => {
                    kept_p.push(v);
                    kept_r.push(r);
                }
                Err(e) => {
                    first_error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        let failed = total - kept_p.len();
        if failed * 100 > FAILURE_BUDGET_PERCENT * total {
            outcome.failures.push(MethodFailure {
                method: self.method,
                failed,
                total,
                first_error: first_error.unwrap_or_default(),
            });
            return Ok(None);
        }
        let m = evaluate_metrics(&kept_p, &kept_r)?;
        let config = serde_json::to_string(&RowConfig {
            spec: self.spec,
            mlp: self.mlp,
            laplacian: self.laplacian,
            n_train: self.n_train,
            failed,
            norms: NORMS,
        })
        .map_err(|e| invalid(e.to_string()))?;
        outcome.rows.push(MetricsRow {
            problem: self.spec.problem.name_str().into(),
            dim: self.spec.problem.dim,
            method: self.method,
            time_s: if self.spec.timing { elapsed } else { 0.0 },
            rel_l2: m.rel_l2,
            l_inf: m.l_inf,
            l1: m.l1,
            seed: self.spec.seed,
            config,
        });
        Ok(Some(m))
    }
}

fn surrogate_predictions(spec: &RunSpec, prep: &Prepared, s: &dyn Surrogate<f64>) -> Result<(Vec<Result<f64>>, f64)> {
    let start = Instant::now();
    let preds = pool(spec.workers)?.install(|| {
        prep.points
            .par_iter()
            .map(|p| {
                let v = s.value(p.t, &p.x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite {
                        context: "surrogate value".into(),
                    })
                }
            })
            .collect()
    });
    Ok((preds, start.elapsed().as_secs_f64()))
}

fn corrected_predictions(
    spec: &RunSpec,
    prep: &Prepared,
    surrogate: Arc<dyn Surrogate<f64>>,
    cfg: &MlpConfig,
    lap: LaplacianMode,
) -> Result<(Vec<Result<f64>>, f64)> {
    let start = Instant::now();
    let results = solve_batch(&prep.pde, surrogate, cfg, &prep.points, spec.workers, lap)?;
    let preds = results.into_iter().map(|r| r.map(|s| s.value)).collect();
    Ok((preds, start.elapsed().as_secs_f64()))
}

/// SR, MLP and SCaSML rows over one shared test set.
pub fn run_benchmark(spec: &RunSpec) -> Result<RunOutcome> {
    let prep = prepare(spec)?;
    let surrogate = spec.build_surrogate(&prep.pde)?;
    let mut outcome = RunOutcome::default();

    let (preds, t) = surrogate_predictions(spec, &prep, &*surrogate)?;
    Row {
        spec,
        method: Method::SR,
        mlp: None,
        laplacian: None,
        n_train: None,
    }
    .finish(&prep, preds, t, &mut outcome)?;

    let naive = spec.mlp_config(false)?;
    let (preds, t) = corrected_predictions(spec, &prep, zero_surrogate(&prep.pde), &naive, LaplacianMode::Exact)?;
    Row {
        spec,
        method: Method::MLP,
        mlp: Some(&naive),
        laplacian: None,
        n_train: None,
    }
    .finish(&prep, preds, t, &mut outcome)?;

    let corrected = spec.mlp_config(true)?;
    let lap = spec.laplacian_mode();
    let (preds, t) = corrected_predictions(spec, &prep, surrogate, &corrected, lap)?;
    Row {
        spec,
        method: Method::SCaSML,
        mlp: Some(&corrected),
        laplacian: Some(lap),
        n_train: None,
    }
    .finish(&prep, preds, t, &mut outcome)?;
    Ok(outcome)
}

/// One SCaSML row per sample base `M`, all sharing points and surrogate.
pub fn run_scaling(spec: &RunSpec, bases: &[u32]) -> Result<RunOutcome> {
    let mut outcome = RunOutcome::default();
    if bases.is_empty() {
        return Ok(outcome);
    }
    let prep = prepare(spec)?;
    let surrogate = spec.build_surrogate(&prep.pde)?;
    let lap = spec.laplacian_mode();
    for &m in bases {
        let swept = RunSpec {
            mlp: MlpSpec {
                base: m,
                ..spec.mlp.clone()
            },
            ..spec.clone()
        };
        let cfg = swept.mlp_config(true)?;
        let (preds, t) = corrected_predictions(&swept, &prep, surrogate.clone(), &cfg, lap)?;
        Row {
            spec: &swept,
            method: Method::SCaSML,
            mlp: Some(&cfg),
            laplacian: Some(lap),
            n_train: None,
        }
        .finish(&prep, preds, t, &mut outcome)?;
    }
    Ok(outcome)
}

/// Per-size errors and fitted log-log slopes of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub sizes: Vec<usize>,
    pub sr_errors: Vec<f64>,
    pub scasml_errors: Vec<f64>,
    pub sr_slope: f64,
    pub scasml_slope: f64,
    pub outcome: RunOutcome,
}

/// Fits the RBF surrogate at each training size and regresses
/// `ln(rel_l2)` on `ln(m)` for SR and SCaSML.
pub fn run_convergence(spec: &RunSpec, train_sizes: &[usize]) -> Result<ConvergenceReport> {
    if train_sizes.len() < 3 {
        return Err(invalid(format!(
            "a convergence fit needs at least 3 training sizes, got {}",
            train_sizes.len()
        )));
    }
    let fit = match &spec.surrogate {
        SurrogateSpec::Fit(f) => f.clone(),
        _ => FitSpec::default(),
    };
    let prep = prepare(spec)?;
    let cfg = spec.mlp_config(true)?;
    let lap = spec.laplacian_mode();
    let mut outcome = RunOutcome::default();
    let mut sr_errors = Vec::new();
    let mut scasml_errors = Vec::new();
    for &m in train_sizes {
        let sized = FitSpec {
            n_train: m,
            centers: fit.centers.min(m),
            ..fit.clone()
        };
        let run = RunSpec {
            surrogate: SurrogateSpec::Fit(sized.clone()),
            ..spec.clone()
        };
        let surrogate: Arc<dyn Surrogate<f64>> = Arc::new(fit_rbf(&prep.pde, &run.fit_options(&sized))?);

        let (preds, t) = surrogate_predictions(&run, &prep, &*surrogate)?;
        let sr = Row {
            spec: &run,
            method: Method::SR,
            mlp: None,
            laplacian: None,
            n_train: Some(m),
        }
        .finish(&prep, preds, t, &mut outcome)?;

        let (preds, t) = corrected_predictions(&run, &prep, surrogate, &cfg, lap)?;
        let sc = Row {
            spec: &run,
            method: Method::SCaSML,
            mlp: Some(&cfg),
            laplacian: Some(lap),
            n_train: Some(m),
        }
        .finish(&prep, preds, t, &mut outcome)?;
        match (sr, sc) {
            (Some(a), Some(b)) => {
                sr_errors.push(a.rel_l2);
                scasml_errors.push(b.rel_l2);
            }
            _ => {
                let f = outcome.failures.last().cloned().expect("a missing row records a failure");
                return Err(f.to_error());
            }
        }
    }
    let xs: Vec<f64> = train_sizes.iter().map(|&m| m as f64).collect();
    Ok(ConvergenceReport {
        sizes: train_sizes.to_vec(),
        sr_slope: fit_log_slope(&xs, &sr_errors)?,
        scasml_slope: fit_log_slope(&xs, &scasml_errors)?,
        sr_errors,
        scasml_errors,
        outcome,
    })
}

impl ProblemSpec {
    pub fn name_str(&self) -> &'static str {
        match self.name {
            ProblemName::Lcd => "lcd",
            ProblemName::Vb => "vb",
            ProblemName::Lqg => "lqg",
            ProblemName::Dr => "dr",
        }
    }
}
