//! Run configuration: what to solve, with which surrogate and solver
//! settings, on how many points. Mirrors the config file one-to-one.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::report::ReportFormat;
use crate::error::{invalid, Error, Result};
use crate::mlp::{MlpConfig, Variant};
use crate::problem::{
    make_diffusion_reaction, make_lcd, make_lqg_hjb, make_viscous_burgers, sample_test_points, SemilinearPde,
    SpaceTimePoint,
};
use crate::rng::{Branch, RngStream};
use crate::scasml::{preset_clip, preset_laplacian};
use crate::surrogate::{fit_rbf, load_surrogate, synthetic_surrogate, zero_surrogate, LaplacianMode, RbfFitOptions, Surrogate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemName {
    #[default]
    Lcd,
    Vb,
    Lqg,
    Dr,
}

impl FromStr for ProblemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lcd" => Ok(ProblemName::Lcd),
            "vb" => Ok(ProblemName::Vb),
            "lqg" => Ok(ProblemName::Lqg),
            "dr" => Ok(ProblemName::Dr),
            other => Err(invalid(format!("unknown problem `{other}` (expected lcd, vb, lqg or dr)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: ProblemName,
    pub dim: usize,
    /// Viscous Burgers diffusion.
    pub sigma0: f64,
    /// Seed of the LQG terminal coefficients.
    pub coeff_seed: u64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            name: ProblemName::Lcd,
            dim: 10,
            sigma0: std::f64::consts::SQRT_2,
            coeff_seed: 0,
        }
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<SemilinearPde<f64>> {
        match self.name {
            ProblemName::Lcd => make_lcd(self.dim),
            ProblemName::Vb => make_viscous_burgers(self.dim, self.sigma0),
            ProblemName::Lqg => make_lqg_hjb(self.dim, self.coeff_seed),
            ProblemName::Dr => make_diffusion_reaction(self.dim),
        }
    }
}

/// Ridge fit settings; sample seed and reference budget come from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub n_train: usize,
    pub centers: usize,
    pub lengthscale: f64,
    pub ridge: f64,
}

impl Default for FitSpec {
    fn default() -> Self {
        let d = RbfFitOptions::default();
        Self {
            n_train: d.n_train,
            centers: d.centers,
            lengthscale: d.lengthscale,
            ridge: d.ridge,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SurrogateSpec {
    #[default]
    Zero,
    Synthetic {
        amplitude: f64,
    },
    Rbf {
        path: PathBuf,
    },
    Fit(FitSpec),
}

impl FromStr for SurrogateSpec {
    type Err = Error;

    /// `zero`, `synthetic:<e>`, `rbf:<file>` or `fit`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        match (head, tail) {
            ("zero", None) => Ok(SurrogateSpec::Zero),
            ("fit", None) => Ok(SurrogateSpec::Fit(FitSpec::default())),
            ("synthetic", Some(e)) => e
                .parse::<f64>()
                .map(|amplitude| SurrogateSpec::Synthetic { amplitude })
                .map_err(|_| invalid(format!("bad synthetic amplitude `{e}`"))),
            ("rbf", Some(p)) if !p.is_empty() => Ok(SurrogateSpec::Rbf { path: PathBuf::from(p) }),
            _ => Err(invalid(format!(
                "unknown surrogate `{s}` (expected zero, synthetic:<e>, rbf:<file> or fit)"
            ))),
        }
    }
}

/// Clip threshold selector: benchmark preset, a fixed value, or none.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClipRepr", into = "ClipRepr")]
pub enum ClipSetting {
    #[default]
    Auto,
    None,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ClipRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<ClipRepr> for ClipSetting {
    type Error = Error;

    fn try_from(r: ClipRepr) -> Result<Self> {
        match r {
            ClipRepr::Value(v) => Ok(ClipSetting::Fixed(v)),
            ClipRepr::Word(w) => w.parse(),
        }
    }
}

impl From<ClipSetting> for ClipRepr {
    fn from(c: ClipSetting) -> Self {
        match c {
            ClipSetting::Auto => ClipRepr::Word("auto".into()),
            ClipSetting::None => ClipRepr::Word("none".into()),
            ClipSetting::Fixed(v) => ClipRepr::Value(v),
        }
    }
}

impl FromStr for ClipSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ClipSetting::Auto),
            "none" => Ok(ClipSetting::None),
            v => v
                .parse::<f64>()
                .map(ClipSetting::Fixed)
                .map_err(|_| invalid(format!("bad clip `{v}` (expected auto, none or a positive number)"))),
        }
    }
}

/// Laplacian selector for the residual: preset, exact, or `hutchinson:<K>`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LaplacianSetting {
    #[default]
    Auto,
    Fixed(LaplacianMode),
}

impl FromStr for LaplacianSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(LaplacianSetting::Auto),
            "exact" => Ok(LaplacianSetting::Fixed(LaplacianMode::Exact)),
            other => match other.strip_prefix("hutchinson:").map(str::parse::<usize>) {
                Some(Ok(samples)) => Ok(LaplacianSetting::Fixed(LaplacianMode::Hutchinson { samples })),
                _ => Err(invalid(format!(
                    "bad laplacian `{other}` (expected auto, exact or hutchinson:<K>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for LaplacianSetting {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LaplacianSetting> for String {
    fn from(l: LaplacianSetting) -> Self {
        l.to_string()
    }
}

impl fmt::Display for LaplacianSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaplacianSetting::Auto => f.write_str("auto"),
            LaplacianSetting::Fixed(LaplacianMode::Exact) => f.write_str("exact"),
            LaplacianSetting::Fixed(LaplacianMode::Hutchinson { samples }) => write!(f, "hutchinson:{samples}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    #[default]
    Fullhist,
    Quad,
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fullhist" => Ok(VariantName::Fullhist),
            "quad" => Ok(VariantName::Quad),
            other => Err(invalid(format!("unknown variant `{other}` (expected fullhist or quad)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSpec {
    pub levels: u32,
    pub base: u32,
    pub variant: VariantName,
    pub alpha: f64,
    pub order: usize,
    pub clip: ClipSetting,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            levels: 2,
            base: 10,
            variant: VariantName::Fullhist,
            alpha: 0.5,
            order: 8,
            clip: ClipSetting::Auto,
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn default_points() -> usize {
    1200
}

fn default_true() -> bool {
    true
}

/// Everything needed to reproduce a run. Execution-only fields (`out`,
/// `workers`) are accepted from config files but never written to reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub surrogate: SurrogateSpec,
    #[serde(default)]
    pub mlp: MlpSpec,
    #[serde(default)]
    pub laplacian: LaplacianSetting,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    /// Monte-Carlo samples per reference value when no closed form exists;
    /// `None` means `100·d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_budget: Option<usize>,
    /// When false every `time_s` is written as 0 so reports are byte-stable.
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default)]
    pub format: ReportFormat,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            surrogate: SurrogateSpec::default(),
            mlp: MlpSpec::default(),
            laplacian: LaplacianSetting::default(),
            points: default_points(),
            seed: 0,
            reference_budget: None,
            timing: true,
            format: ReportFormat::default(),
            out: None,
            workers: default_workers(),
        }
    }
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("config: {e}")))
    }

    /// Compact JSON used as the report's provenance column.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        if self.problem.name == ProblemName::Lqg && self.problem.dim < 2 {
            return Err(invalid("lqg needs dim >= 2"));
        }
        if self.problem.name == ProblemName::Vb && !(self.problem.sigma0 > 0.0) {
            return Err(invalid("sigma0 must be positive"));
        }
        if self.points == 0 {
            return Err(invalid("points must be positive"));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be positive"));
        }
        if self.reference_budget == Some(0) {
            return Err(invalid("reference_budget must be positive"));
        }
        if let ClipSetting::Fixed(v) = self.mlp.clip {
            if !(v > 0.0) {
                return Err(invalid(format!("clip threshold must be positive, got {v}")));
            }
        }
        if let LaplacianSetting::Fixed(mode) = self.laplacian {
            mode.validate(self.problem.dim)?;
        }
        match &self.surrogate {
            SurrogateSpec::Synthetic { amplitude } if !amplitude.is_finite() => {
                return Err(invalid("synthetic amplitude must be finite"));
            }
            SurrogateSpec::Synthetic { .. } if self.problem.name == ProblemName::Lqg => {
                return Err(invalid("the synthetic surrogate needs a closed-form solution; lqg has none"));
            }
            SurrogateSpec::Fit(f) => {
                if f.n_train == 0 || f.centers == 0 {
                    return Err(invalid("fit needs positive n_train and centers"));
                }
                if !(f.lengthscale > 0.0) || !(f.ridge >= 0.0) {
                    return Err(invalid("fit needs a positive lengthscale and a nonnegative ridge"));
                }
            }
            _ => {}
        }
        self.mlp_config(false)?.validate()?;
        Ok(())
    }

    /// Solver settings for naive MLP (`corrected = false`) or the corrected run.
    pub fn mlp_config(&self, corrected: bool) -> Result<MlpConfig> {
        let variant = match self.mlp.variant {
            VariantName::Fullhist => Variant::FullHistory { alpha: self.mlp.alpha },
            VariantName::Quad => Variant::Quadrature { order: self.mlp.order },
        };
        let clip = match self.mlp.clip {
            ClipSetting::Auto => preset_clip(self.problem.build()?.kind(), self.problem.dim, corrected),
            ClipSetting::None => None,
            ClipSetting::Fixed(v) => Some(v),
        };
        let cfg = MlpConfig {
            levels: self.mlp.levels,
            base: self.mlp.base,
            variant,
            clip,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn laplacian_mode(&self) -> LaplacianMode {
        match self.laplacian {
            LaplacianSetting::Auto => match self.problem.name {
                ProblemName::Lqg => preset_laplacian(crate::problem::ProblemKind::LqgHjb, self.problem.dim),
                _ => LaplacianMode::Exact,
            },
            LaplacianSetting::Fixed(m) => m,
        }
    }

    pub fn reference_budget(&self) -> usize {
        self.reference_budget.unwrap_or(100 * self.problem.dim)
    }

    fn root(&self) -> RngStream {
        RngStream::new(self.seed)
    }

    pub fn test_points(&self, pde: &SemilinearPde<f64>) -> Vec<SpaceTimePoint<f64>> {
        sample_test_points(pde, self.points, self.root().child(0, Branch::TestPoints, 0).key())
    }

    /// Seed of the reference value at test point `index`.
    pub fn reference_seed(&self, index: usize) -> u64 {
        self.root().child(0, Branch::Reference, index as u64).key()
    }

    pub fn fit_options(&self, fit: &FitSpec) -> RbfFitOptions {
        RbfFitOptions {
            n_train: fit.n_train,
            centers: fit.centers,
            lengthscale: fit.lengthscale,
            ridge: fit.ridge,
            seed: self.root().child(0, Branch::Fit, 0).key(),
            reference_budget: self.reference_budget(),
        }
    }

    pub fn build_surrogate(&self, pde: &SemilinearPde<f64>) -> Result<Arc<dyn Surrogate<f64>>> {
        Ok(match &self.surrogate {
            SurrogateSpec::Zero => zero_surrogate(pde),
            SurrogateSpec::Synthetic { amplitude } => synthetic_surrogate(pde, *amplitude)?,
            SurrogateSpec::Rbf { path } => Arc::new(load_surrogate::<f64>(path, Some(pde.dim()))?),
            SurrogateSpec::Fit(fit) => Arc::new(fit_rbf(pde, &self.fit_options(fit))?),
        })
    }
}
