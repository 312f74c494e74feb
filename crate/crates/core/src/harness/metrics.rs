use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Error norms of a prediction vector against references.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `‖p − r‖₂ / ‖r‖₂`.
    pub rel_l2: f64,
    /// `max |p − r|`.
    pub l_inf: f64,
    /// `mean |p − r|`.
    pub l1: f64,
}

pub fn evaluate_metrics(preds: &[f64], refs: &[f64]) -> Result<Metrics> {
    if preds.len() != refs.len() {
        return Err(invalid(format!(
            "{} predictions but {} references",
            preds.len(),
            refs.len()
        )));
    }
    if preds.is_empty() {
        return Err(invalid("metrics need at least one point"));
    }
    if preds.iter().chain(refs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "metric inputs".into(),
        });
    }
    let ref_sq: f64 = refs.iter().map(|r| r * r).sum();
    if ref_sq == 0.0 {
        return Err(Error::Undefined("relative L2 error of an all-zero reference".into()));
    }
    let mut err_sq = 0.0;
    let mut l_inf = 0.0f64;
    let mut l1 = 0.0;
    for (p, r) in preds.iter().zip(refs) {
        let e = (p - r).abs();
        err_sq += e * e;
        l_inf = l_inf.max(e);
        l1 += e;
    }
    Ok(Metrics {
        rel_l2: err_sq.sqrt() / ref_sq.sqrt(),
        l_inf,
        l1: l1 / preds.len() as f64,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(invalid("sizes and errors differ in length"));
    }
    if xs.len() < 3 {
        return Err(invalid(format!("a slope fit needs at least 3 sizes, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("log-log fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("log-log fit needs at least two distinct sizes"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}
