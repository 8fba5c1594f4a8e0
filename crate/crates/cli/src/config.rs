//! Run configuration files.
//!
//! ```toml
//! [lattice]
//! kind = "stub"
//! n_cells = 30000
//! alpha = 1.0
//!
//! [disorder]
//! y = 0.1
//! mode = "random"
//!
//! [ensemble]
//! n_configs = 25
//! master_seed = 7
//!
//! [cpgf]
//! eta = 1e-3
//! moments = "auto"
//! random_vectors = 4
//!
//! [sweep]
//! variable = "alpha"
//! values = [0.5, 1.0, 2.0]
//!
//! [output]
//! path = "sigma.csv"
//! format = "csv"
//! ```

use std::path::PathBuf;

use fbkubo::ensemble::{EnsembleSpec, Method};
use fbkubo::lattice::{DisorderMode, LatticeKind, LatticeSpec};
use fbkubo::spectral::{CpgfParams, Moments, TraceMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    #[serde(default)]
    pub disorder: DisorderSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub cpgf: CpgfSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub kind: LatticeKind,
    pub n_cells: usize,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default = "random")]
    pub mode: DisorderMode,
}

fn random() -> DisorderMode {
    DisorderMode::Random
}

impl Default for DisorderSection {
    fn default() -> Self {
        Self {
            x: None,
            y: None,
            mode: DisorderMode::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "one_config")]
    pub n_configs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "cpgf_method")]
    pub method: Method,
}

fn one_config() -> usize {
    1
}

fn cpgf_method() -> Method {
    Method::Cpgf
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            n_configs: 1,
            master_seed: 0,
            method: Method::Cpgf,
        }
    }
}

/// `"auto"` or a fixed count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MomentsSetting {
    Count(usize),
    Word(String),
}

impl std::fmt::Display for MomentsSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MomentsSetting::Count(n) => write!(f, "{n}"),
            MomentsSetting::Word(w) => f.write_str(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpgfSection {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "auto")]
    pub moments: MomentsSetting,
    #[serde(default = "default_rvecs")]
    pub random_vectors: usize,
    #[serde(default = "stochastic")]
    pub trace: TraceMode,
}

fn default_eta() -> f64 {
    1e-3
}

fn auto() -> MomentsSetting {
    MomentsSetting::Word("auto".into())
}

fn default_rvecs() -> usize {
    10
}

fn stochastic() -> TraceMode {
    TraceMode::Stochastic
}

impl Default for CpgfSection {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            moments: auto(),
            random_vectors: default_rvecs(),
            trace: stochastic(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "E")]
    Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: PathBuf,
    #[serde(default = "csv_format")]
    pub format: OutputFormat,
    #[serde(default = "info", skip_serializing_if = "is_info")]
    pub verbosity: String,
}

fn csv_format() -> OutputFormat {
    OutputFormat::Csv
}

fn info() -> String {
    "info".into()
}

fn is_info(v: &String) -> bool {
    v == "info"
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses TOML, reporting the offending key path on failure.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| invalid("<document>", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().message().to_string();
            invalid(if path == "." { "<document>" } else { &path }, message)
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn moments(&self) -> Result<Moments, CliError> {
        match &self.cpgf.moments {
            MomentsSetting::Count(0) => Err(invalid("cpgf.moments", "moment count must be positive")),
            MomentsSetting::Count(n) => Ok(Moments::Fixed(*n)),
            MomentsSetting::Word(w) if w == "auto" => Ok(Moments::Auto),
            MomentsSetting::Word(w) => Err(invalid("cpgf.moments", format!("expected \"auto\" or a count, got {w:?}"))),
        }
    }

    pub fn lattice_spec(&self) -> Result<LatticeSpec, CliError> {
        let l = &self.lattice;
        let mut spec = match l.kind {
            LatticeKind::Sawtooth => LatticeSpec::sawtooth(l.n_cells),
            LatticeKind::Stub => {
                let alpha = l.alpha.ok_or_else(|| invalid("lattice.alpha", "required for the stub lattice"))?;
                LatticeSpec::stub(l.n_cells, alpha)
            }
        };
        if l.kind == LatticeKind::Sawtooth {
            if let Some(a) = l.alpha {
                if (a - spec.alpha).abs() > 1e-12 {
                    return Err(invalid("lattice.alpha", "the sawtooth ratio is fixed at sqrt(2)"));
                }
            }
        }
        spec.t = l.t;
        spec.validate().map_err(|e| {
            let path = if l.n_cells < 3 {
                "lattice.n_cells"
            } else if !(l.t > 0.0) {
                "lattice.t"
            } else {
                "lattice.alpha"
            };
            invalid(path, e.to_string())
        })?;
        if l.t != 1.0 {
            log::warn!("analytic overlays assume t = 1; numeric columns use t = {}", l.t);
        }
        Ok(spec)
    }

    /// Vacancy density from `disorder.x` or `disorder.y`.
    pub fn base_x(&self) -> Result<f64, CliError> {
        match (self.disorder.x, self.disorder.y) {
            (Some(_), Some(_)) => Err(invalid("disorder", "give either x or y, not both")),
            (Some(x), None) => check_unit("disorder.x", x),
            (None, Some(y)) => Ok(1.0 - check_unit("disorder.y", y)?),
            (None, None) => Ok(0.0),
        }
    }

    pub fn sweep_values(&self) -> Result<Option<(SweepVariable, &[f64])>, CliError> {
        let Some(s) = &self.sweep else { return Ok(None) };
        if s.values.is_empty() {
            return Err(invalid("sweep.values", "must not be empty"));
        }
        if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
            return Err(invalid("sweep.values", format!("non-finite value {v}")));
        }
        match s.variable {
            SweepVariable::X | SweepVariable::Y => {
                for &v in &s.values {
                    check_unit("sweep.values", v)?;
                }
            }
            SweepVariable::Alpha => {
                if self.lattice.kind != LatticeKind::Stub {
                    return Err(invalid("sweep.variable", "alpha sweeps need the stub lattice"));
                }
            }
            SweepVariable::Energy => {
                if !s.values.windows(2).all(|w| w[0] < w[1]) {
                    return Err(invalid("sweep.values", "energies must be strictly increasing"));
                }
            }
        }
        Ok(Some((s.variable, &s.values)))
    }

    pub fn cpgf_params(&self) -> Result<CpgfParams, CliError> {
        let c = &self.cpgf;
        if !(c.eta > 0.0 && c.eta.is_finite()) {
            return Err(invalid("cpgf.eta", format!("must be positive, got {}", c.eta)));
        }
        if c.trace == TraceMode::Stochastic && c.random_vectors == 0 {
            return Err(invalid("cpgf.random_vectors", "must be positive"));
        }
        Ok(CpgfParams {
            eta: c.eta,
            moments: self.moments()?,
            random_vectors: c.random_vectors,
            trace: c.trace,
            seed: self.ensemble.master_seed,
            ..CpgfParams::default()
        })
    }

    /// Ensemble specification over the sweep; energy sweeps land in
    /// `energies`.
    pub fn ensemble_spec(&self) -> Result<EnsembleSpec, CliError> {
        let lattice = self.lattice_spec()?;
        if self.ensemble.n_configs == 0 {
            return Err(invalid("ensemble.n_configs", "must be at least 1"));
        }
        if !matches!(self.output.verbosity.as_str(), "error" | "warn" | "info" | "debug" | "trace") {
            return Err(invalid("output.verbosity", "one of error, warn, info, debug, trace"));
        }
        let mut spec = EnsembleSpec::new(lattice, vec![self.base_x()?], self.ensemble.n_configs, self.ensemble.method);
        spec.mode = self.disorder.mode;
        spec.master_seed = self.ensemble.master_seed;
        spec.cpgf = self.cpgf_params()?;
        match self.sweep_values()? {
            None => {}
            Some((SweepVariable::X, v)) => spec.x_grid = v.to_vec(),
            Some((SweepVariable::Y, v)) => spec.x_grid = v.iter().map(|y| 1.0 - y).collect(),
            Some((SweepVariable::Alpha, v)) => {
                for &a in v {
                    let mut l = spec.lattice.clone();
                    l.alpha = a;
                    l.validate().map_err(|e| invalid("sweep.values", e.to_string()))?;
                }
                spec.alpha_grid = v.to_vec();
            }
            Some((SweepVariable::Energy, v)) => spec.energies = v.to_vec(),
        }
        Ok(spec)
    }
}

fn check_unit(path: &str, v: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(invalid(path, format!("must lie in [0, 1], got {v}")))
    }
}
