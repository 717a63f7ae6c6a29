//! Run configuration: a JSON file, optionally overridden by flags.
//!
//! ```json
//! {
//!   "system": {"rod": {"n_modes": 16, "m": {"0": 2.0, "1": 4.0, "2": 4.0}}},
//!   "alpha": 0.0,
//!   "beta": 0.23,
//!   "initial": "rest",
//!   "horizon": 10.0,
//!   "s_max": 10.0,
//!   "output_dir": "out"
//! }
//! ```
//!
//! `system` is either an inline descriptor or a path to a JSON file holding
//! one (relative paths resolve against the config file's directory).

use std::fs;
use std::path::{Path, PathBuf};

use hystheat_core::poincare::PerturbationSplit;
use hystheat_core::{SpectralSystem, SystemDescriptor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: field `{field}`: {message}")]
    Parse {
        file: PathBuf,
        field: String,
        message: String,
    },
    #[error("field `{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SystemSource {
    File(PathBuf),
    Inline(SystemDescriptor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedInitial {
    /// Uniform state on the plane `v̂ = α`.
    Rest,
    /// The first valid symmetric periodic solution for the gap.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(NamedInitial),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Both,
    Guiding,
    Guided,
}

impl From<Split> for PerturbationSplit {
    fn from(s: Split) -> Self {
        match s {
            Split::Both => PerturbationSplit::Both,
            Split::Guiding => PerturbationSplit::GuidingOnly,
            Split::Guided => PerturbationSplit::GuidedOnly,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    system: SystemSource,
    alpha: Option<f64>,
    beta: Option<f64>,
    initial: Option<InitialState>,
    horizon: Option<f64>,
    stride: Option<f64>,
    s_min: Option<f64>,
    s_max: Option<f64>,
    n_points: Option<usize>,
    tol: Option<f64>,
    seed: Option<u64>,
    n_periods: Option<usize>,
    delta0: Option<f64>,
    split: Option<Split>,
    /// Solution selected by `rate`: the valid solution with `s` closest to this.
    s_target: Option<f64>,
    output_dir: Option<PathBuf>,
}

/// Values given on the command line; each replaces the file field.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub stride: Option<f64>,
    #[arg(long)]
    pub s_min: Option<f64>,
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_periods: Option<usize>,
    #[arg(long)]
    pub s_target: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Effective configuration after defaults and overrides. Its JSON form,
/// without the output directory, is what the config hash covers.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub system: SystemDescriptor,
    pub alpha: f64,
    pub beta: f64,
    pub initial: InitialState,
    pub horizon: f64,
    pub stride: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub n_points: usize,
    pub tol: f64,
    pub seed: u64,
    pub n_periods: usize,
    pub delta0: f64,
    pub split: Split,
    pub s_target: Option<f64>,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        ConfigError::Parse {
            file: path.to_path_buf(),
            field: if field == "." { "<root>".into() } else { field },
            message: e.into_inner().to_string(),
        }
    })
}

fn positive(field: &'static str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::Invalid {
            field,
            message: format!("must be positive and finite, got {x}"),
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path, flags: &Overrides) -> Result<Self, ConfigError> {
        let file: FileConfig = parse_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let system = match file.system {
            SystemSource::Inline(d) => d,
            SystemSource::File(p) => parse_json(&base.join(p))?,
        };
        let alpha = flags.alpha.or(file.alpha).ok_or(ConfigError::Invalid {
            field: "alpha",
            message: "missing".into(),
        })?;
        let beta = flags.beta.or(file.beta).ok_or(ConfigError::Invalid {
            field: "beta",
            message: "missing".into(),
        })?;
        if !(alpha.is_finite() && beta.is_finite() && alpha < beta) {
            return Err(ConfigError::Invalid {
                field: "beta",
                message: format!("need alpha < beta, got alpha = {alpha}, beta = {beta}"),
            });
        }
        let s_min = positive("s_min", flags.s_min.or(file.s_min).unwrap_or(1e-3))?;
        let s_max = positive("s_max", flags.s_max.or(file.s_max).unwrap_or(10.0))?;
        if s_max <= s_min {
            return Err(ConfigError::Invalid {
                field: "s_max",
                message: format!("must exceed s_min = {s_min}, got {s_max}"),
            });
        }
        let n_points = flags.n_points.or(file.n_points).unwrap_or(400);
        if n_points < 2 {
            return Err(ConfigError::Invalid {
                field: "n_points",
                message: format!("need at least 2, got {n_points}"),
            });
        }
        let n_periods = flags.n_periods.or(file.n_periods).unwrap_or(30);
        if n_periods < 3 {
            return Err(ConfigError::Invalid {
                field: "n_periods",
                message: format!("need at least 3, got {n_periods}"),
            });
        }
        Ok(Self {
            system,
            alpha,
            beta,
            initial: file
                .initial
                .unwrap_or(InitialState::Named(NamedInitial::Rest)),
            horizon: positive("horizon", flags.horizon.or(file.horizon).unwrap_or(10.0))?,
            stride: positive("stride", flags.stride.or(file.stride).unwrap_or(0.01))?,
            s_min,
            s_max,
            n_points,
            tol: positive("tol", flags.tol.or(file.tol).unwrap_or(1e-8))?,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            n_periods,
            delta0: positive("delta0", file.delta0.unwrap_or(1e-6))?,
            split: file.split.unwrap_or(Split::Both),
            s_target: flags.s_target.or(file.s_target),
            output_dir: flags
                .out
                .clone()
                .or(file.output_dir)
                .unwrap_or_else(|| PathBuf::from("hystheat-out")),
        })
    }

    pub fn build_system(&self) -> Result<SpectralSystem, ConfigError> {
        self.system.build().map_err(|e| ConfigError::Invalid {
            field: "system",
            message: e.to_string(),
        })
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
