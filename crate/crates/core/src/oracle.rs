//! Deterministic Picard fixed-point solver for one-dimensional problems.
//!
//! Each sweep applies the Feynman–Kac map on a tensor grid: Gaussian
//! expectations by Gauss–Hermite quadrature, time integrals by Gauss–Legendre,
//! and off-grid values by local cubic interpolation. It exists to check the
//! Monte-Carlo solver on instances small enough to solve by brute force.

use crate::error::{invalid, Error, Result};
use crate::mlp::{gauss_hermite, gauss_legendre, mlp_estimate, rescale, MlpConfig};
use crate::problem::{SemilinearPde, SpaceTimePoint};
use crate::rng::{Branch, RngStream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    pub n_t: usize,
    pub n_x: usize,
    pub n_hermite: usize,
    pub n_legendre: usize,
    pub iters: usize,
    pub tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            n_t: 41,
            n_x: 401,
            n_hermite: 24,
            n_legendre: 16,
            iters: 40,
            tol: 1e-10,
        }
    }
}

/// Converged Picard iterate on a uniform `n_t × n_x` grid.
#[derive(Clone, Debug)]
pub struct GridSolution {
    pub times: Vec<f64>,
    pub space: Vec<f64>,
    /// `values[i][j] = u(times[i], space[j])`.
    pub values: Vec<Vec<f64>>,
    /// Smallest `k ≥ 1` whose iterate `u_k` already met the tolerance; the
    /// sweep that confirmed it is not counted.
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub last_change: f64,
}

/// Weights of the 4-point Lagrange cubic through nodes `-1, 0, 1, 2` at `r ∈ [0, 1]`.
fn cubic_weights(r: f64) -> [f64; 4] {
    [
        -r * (r - 1.0) * (r - 2.0) / 6.0,
        (r + 1.0) * (r - 1.0) * (r - 2.0) / 2.0,
        -(r + 1.0) * r * (r - 2.0) / 2.0,
        (r + 1.0) * r * (r - 1.0) / 6.0,
    ]
}

/// Stencil start and local weights for coordinate `y` on a uniform axis.
/// Coordinates beyond the axis are clamped to its ends.
fn stencil(axis_start: f64, step: f64, n: usize, y: f64) -> (usize, [f64; 4]) {
    if n < 4 {
        let j = (((y - axis_start) / step).round().max(0.0) as usize).min(n - 1);
        let mut w = [0.0; 4];
        w[0] = 1.0;
        return (j, w);
    }
    let pos = ((y - axis_start) / step).clamp(0.0, (n - 1) as f64);
    let cell = (pos.floor() as usize).min(n - 2);
    let start = cell.saturating_sub(1).min(n - 4);
    let r = pos - start as f64 - 1.0;
    (start, cubic_weights(r))
}

struct Grid {
    t0: f64,
    dt: f64,
    nt: usize,
    x0: f64,
    dx: f64,
    nx: usize,
}

impl Grid {
    fn interpolate(&self, table: &[Vec<f64>], t: f64, x: f64) -> f64 {
        let (it, wt) = stencil(self.t0, self.dt, self.nt, t);
        let (ix, wx) = stencil(self.x0, self.dx, self.nx, x);
        let rows = if self.nt < 4 { 1 } else { 4 };
        let cols = if self.nx < 4 { 1 } else { 4 };
        let mut acc = 0.0;
        for a in 0..rows {
            let row = &table[it + a];
            let mut inner = 0.0;
            for b in 0..cols {
                inner += wx[b] * row[ix + b];
            }
            acc += wt[a] * inner;
        }
        acc
    }
}

/// Centered differences in space (one-sided at the ends).
fn space_derivative(values: &[Vec<f64>], dx: f64) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|row| {
            let n = row.len();
            (0..n)
                .map(|j| {
                    if n < 2 {
                        0.0
                    } else if j == 0 {
                        (row[1] - row[0]) / dx
                    } else if j == n - 1 {
                        (row[n - 1] - row[n - 2]) / dx
                    } else {
                        (row[j + 1] - row[j - 1]) / (2.0 * dx)
                    }
                })
                .collect()
        })
        .collect()
}

impl GridSolution {
    fn grid(&self) -> Grid {
        let step = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 1.0 };
        Grid {
            t0: self.times[0],
            dt: step(&self.times),
            nt: self.times.len(),
            x0: self.space[0],
            dx: step(&self.space),
            nx: self.space.len(),
        }
    }

    /// Cubic interpolant of the grid values.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.grid().interpolate(&self.values, t, x)
    }

    /// Interpolated centered-difference estimate of `∂u/∂x`.
    pub fn space_derivative(&self, t: f64, x: f64) -> f64 {
        let g = self.grid();
        g.interpolate(&space_derivative(&self.values, g.dx), t, x)
    }
}

/// Picard iteration `u ← Φ(u)` from `u₀ = 0` for a one-dimensional problem,
/// run until the sup-norm change drops below `opts.tol`.
pub fn picard_oracle(pde: &SemilinearPde<f64>, opts: &OracleOptions) -> Result<GridSolution> {
    sweep(pde, opts, None)
}

/// The `k`-th Picard iterate `Φᵏ(0)` on the oracle grid, with no
/// convergence requirement.
pub fn picard_iterate(pde: &SemilinearPde<f64>, opts: &OracleOptions, k: usize) -> Result<GridSolution> {
    sweep(pde, opts, Some(k))
}

fn sweep(pde: &SemilinearPde<f64>, opts: &OracleOptions, fixed: Option<usize>) -> Result<GridSolution> {
    if pde.dim() != 1 {
        return Err(invalid(format!("the grid oracle needs d = 1, got d = {}", pde.dim())));
    }
    if opts.n_t < 2 || opts.n_x < 4 {
        return Err(invalid("the grid oracle needs n_t >= 2 and n_x >= 4"));
    }
    let horizon = pde.horizon();
    let mu = pde.drift()[0];
    let c = pde.diffusion();
    let (lo, hi) = pde.domain().bounds(1);
    let pad = 4.0 * c * horizon.sqrt() + mu.abs() * horizon;
    let x0 = lo[0] - pad;
    let x1 = hi[0] + pad;
    let grid = Grid {
        t0: 0.0,
        dt: horizon / (opts.n_t - 1) as f64,
        nt: opts.n_t,
        x0,
        dx: (x1 - x0) / (opts.n_x - 1) as f64,
        nx: opts.n_x,
    };
    let mut times: Vec<f64> = (0..opts.n_t).map(|i| i as f64 * grid.dt).collect();
    times[opts.n_t - 1] = horizon;
    let space: Vec<f64> = (0..opts.n_x).map(|j| x0 + j as f64 * grid.dx).collect();

    let (gh_nodes, gh_weights) = gauss_hermite(opts.n_hermite)?;
    let gh_norm = std::f64::consts::PI.sqrt();
    let (gl_nodes, gl_weights) = gauss_legendre::<f64>(opts.n_legendre)?;

    // the terminal expectation does not depend on the iterate
    let terminal: Vec<Vec<f64>> = times
        .iter()
        .map(|&s| {
            let tau = horizon - s;
            if tau == 0.0 {
                return space.iter().map(|&x| pde.g(&[x])).collect();
            }
            space
                .iter()
                .map(|&x| {
                    let mean = x + mu * tau;
                    let sd = c * tau.sqrt();
                    gh_nodes
                        .iter()
                        .zip(&gh_weights)
                        .map(|(&z, &w)| w * pde.g(&[mean + sd * std::f64::consts::SQRT_2 * z]))
                        .sum::<f64>()
                        / gh_norm
                })
                .collect()
        })
        .collect();

    let mut current = vec![vec![0.0; opts.n_x]; opts.n_t];
    let mut history: Vec<f64> = Vec::new();
    let mut scratch = RngStream::new(0);
    let mut row_v = vec![0.0; opts.n_x];
    let mut row_d = vec![0.0; opts.n_x];
    if fixed == Some(0) {
        return Ok(GridSolution {
            times,
            space,
            values: current,
            iterations: 0,
            last_change: 0.0,
        });
    }
    for iter in 1..=fixed.unwrap_or(opts.iters) {
        let deriv = space_derivative(&current, grid.dx);
        let mut next = terminal.clone();
        for (i, &s) in times.iter().enumerate().take(opts.n_t - 1) {
            let (tq, wq) = rescale(&gl_nodes, &gl_weights, s, horizon);
            for (&t, &wt) in tq.iter().zip(&wq) {
                // collapse the time direction once per quadrature node
                let (it, tw) = stencil(grid.t0, grid.dt, grid.nt, t);
                let rows = if grid.nt < 4 { 1 } else { 4 };
                for j in 0..opts.n_x {
                    row_v[j] = (0..rows).map(|a| tw[a] * current[it + a][j]).sum();
                    row_d[j] = (0..rows).map(|a| tw[a] * deriv[it + a][j]).sum();
                }
                let sd = c * (t - s).sqrt() * std::f64::consts::SQRT_2;
                for (j, &x) in space.iter().enumerate() {
                    let mean = x + mu * (t - s);
                    let mut expectation = 0.0;
                    for (&z, &w) in gh_nodes.iter().zip(&gh_weights) {
                        let y = mean + sd * z;
                        let (ix, xw) = stencil(grid.x0, grid.dx, grid.nx, y);
                        let mut v = 0.0;
                        let mut dv = 0.0;
                        for b in 0..4 {
                            v += xw[b] * row_v[ix + b];
                            dv += xw[b] * row_d[ix + b];
                        }
                        expectation += w * pde.f(v, &[c * dv], t, &[y], &mut scratch);
                    }
                    next[i][j] += wt * expectation / gh_norm;
                }
            }
        }
        let change = next
            .iter()
            .flatten()
            .zip(current.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::NonFinite {
                context: format!("grid oracle sweep {iter}"),
            });
        }
        current = next;
        history.push(change);
        if fixed == Some(iter) {
            return Ok(GridSolution {
                times,
                space,
                values: current,
                iterations: iter,
                last_change: change,
            });
        }
        if fixed.is_some() {
            continue;
        }
        if change < opts.tol {
            return Ok(GridSolution {
                times,
                space,
                values: current,
                iterations: (iter - 1).max(1),
                last_change: change,
            });
        }
        let n = history.len();
        if n >= 4 && history[n - 1] > history[n - 2] && history[n - 2] > history[n - 3] && history[n - 3] > history[n - 4] {
            return Err(Error::NoConvergence(format!(
                "grid oracle diverging: sweep changes {:?}",
                &history[n - 4..]
            )));
        }
    }
    Err(Error::NoConvergence(format!(
        "grid oracle did not reach tolerance {} in {} sweeps (last change {})",
        opts.tol,
        opts.iters,
        history.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Mean and standard error of `n_reps` independent MLP value estimates at `p`.
pub fn mc_confidence(
    pde: &SemilinearPde<f64>,
    cfg: &MlpConfig,
    p: &SpaceTimePoint<f64>,
    n_reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_reps < 2 {
        return Err(invalid("mc_confidence needs at least two replicates"));
    }
    let root = RngStream::new(seed);
    let values = (0..n_reps)
        .map(|r| mlp_estimate(pde, cfg, p.t, &p.x, &root.child(0, Branch::Aux, r as u64)).map(|e| e.value()))
        .collect::<Result<Vec<f64>>>()?;
    let n = n_reps as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
