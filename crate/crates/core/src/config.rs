//! Run configuration: a flat TOML file of documented keys, validated into a
//! [`RunConfig`] before any computation starts.
//!
//! ```toml
//! kernel = "dykstra-laud"
//! family = "generalized-gamma"
//! alpha = 0.5
//! b = 1.0                 # or "linear(1, 0.5)", "exponential(2, 0.1)"
//! eta = "lebesgue"        # lebesgue | constant | exponential | gamma | atom
//! eta_lo = 0.0
//! eta_hi = 10.0
//! sampler = "wcr"
//! replicates = 10000
//! seed = 42
//! grid_t_max = 5.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::levy::{BaseMeasure, Density, LevyFamily, ParamFn};
use crate::posterior::{ModelOptions, DEFAULT_ORACLE_CAP};
use crate::quadrature::QuadConfig;
use crate::samplers::{RunSettings, SamplerKind};

/// Artifact version embedded in every output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A number or a parameter-function expression such as `linear(1, 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamText {
    Number(f64),
    Text(String),
}

/// The file as written, every key optional. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kernel: Option<String>,
    pub kernel_bandwidth: Option<f64>,
    pub family: Option<String>,
    pub alpha: Option<f64>,
    pub b: Option<ParamText>,
    pub c: Option<ParamText>,
    pub eta: Option<String>,
    pub eta_lo: Option<f64>,
    pub eta_hi: Option<f64>,
    pub eta_params: Option<Vec<f64>>,
    pub sampler: Option<String>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub grid_t_min: Option<f64>,
    pub grid_t_max: Option<f64>,
    pub grid_points: Option<usize>,
    pub quad_tol: Option<f64>,
    pub quad_max_level: Option<u32>,
    pub epsilon: Option<f64>,
    pub crm_draws: Option<usize>,
    pub workers: Option<usize>,
    pub enumeration_cap: Option<usize>,
    pub burn_in_fraction: Option<f64>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        toml::from_str(text).map_err(|e| {
            // name the offending key from the line the error points at
            let field = e
                .span()
                .and_then(|sp| {
                    let start = text[..sp.start].rfind('\n').map_or(0, |i| i + 1);
                    let line = &text[start..];
                    let line = &line[..line.find('\n').unwrap_or(line.len())];
                    line.split_once('=').map(|(k, _)| k.trim().to_string())
                })
                .filter(|k| !k.is_empty())
                .unwrap_or_else(|| "<file>".into());
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RawConfig> {
        RawConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// sha256 of the re-serialized file in fixed key order, so formatting
    /// and key order in the file do not matter. `workers` is left out since
    /// results do not depend on it.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(&RawConfig {
            workers: None,
            ..self.clone()
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Equally spaced output times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        let step = (self.t_max - self.t_min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.t_max } else { self.t_min + step * i as f64 })
            .collect()
    }
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel: Kernel,
    pub family: LevyFamily,
    pub eta: BaseMeasure,
    pub sampler: SamplerKind,
    pub replicates: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    pub quad: QuadConfig,
    pub epsilon: Option<f64>,
    pub crm_draws: usize,
    pub workers: usize,
    pub enumeration_cap: usize,
    pub burn_in_fraction: f64,
    /// Hash of the raw configuration after command-line overrides.
    pub hash: String,
}

fn required<T: Clone>(v: &Option<T>, field: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::config(field, "is required"))
}

fn param(v: &Option<ParamText>, field: &str) -> Result<ParamFn> {
    match required(v, field)? {
        ParamText::Number(x) => Ok(ParamFn::Constant(x)),
        ParamText::Text(t) => ParamFn::parse(&t).map_err(|e| Error::config(field, e.to_string())),
    }
}

fn at_field(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<RunConfig> {
        let mut kernel: Kernel = required(&raw.kernel, "kernel")?.parse().map_err(at_field("kernel"))?;
        if let Kernel::Rectangular { bandwidth } = &mut kernel {
            *bandwidth = required(&raw.kernel_bandwidth, "kernel_bandwidth")?;
        } else if raw.kernel_bandwidth.is_some() {
            return Err(Error::config("kernel_bandwidth", "only applies to the rectangular kernel"));
        }
        kernel.validate().map_err(at_field("kernel_bandwidth"))?;

        let family = match required(&raw.family, "family")?.as_str() {
            "generalized-gamma" => {
                if raw.c.is_some() {
                    return Err(Error::config("c", "only applies to the beta family"));
                }
                LevyFamily::generalized_gamma(required(&raw.alpha, "alpha")?, param(&raw.b, "b")?)
                    .map_err(at_field("family"))?
            }
            "beta" => {
                if raw.alpha.is_some() || raw.b.is_some() {
                    return Err(Error::config("family", "alpha and b only apply to generalized-gamma"));
                }
                LevyFamily::beta(param(&raw.c, "c")?).map_err(at_field("c"))?
            }
            other => {
                return Err(Error::config(
                    "family",
                    format!("unknown family `{other}` (expected generalized-gamma or beta)"),
                ))
            }
        };

        let params = raw.eta_params.clone().unwrap_or_default();
        let want = |k: usize| -> Result<()> {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::config("eta_params", format!("expected {k} values, got {}", params.len())))
            }
        };
        let eta_name = required(&raw.eta, "eta")?;
        let eta = if eta_name == "atom" {
            want(2)?;
            BaseMeasure::Atom {
                at: params[0],
                mass: params[1],
            }
        } else {
            let density = match eta_name.as_str() {
                "lebesgue" => {
                    want(0)?;
                    Density::Lebesgue
                }
                "constant" => {
                    want(1)?;
                    Density::Constant(params[0])
                }
                "exponential" => {
                    want(1)?;
                    Density::Exponential { rate: params[0] }
                }
                "gamma" => {
                    want(2)?;
                    Density::Gamma {
                        shape: params[0],
                        rate: params[1],
                    }
                }
                other => {
                    return Err(Error::config(
                        "eta",
                        format!("unknown base measure `{other}` (expected lebesgue, constant, exponential, gamma or atom)"),
                    ))
                }
            };
            BaseMeasure::Continuous {
                lo: required(&raw.eta_lo, "eta_lo")?,
                hi: required(&raw.eta_hi, "eta_hi")?,
                density,
            }
        };
        eta.validate().map_err(at_field("eta"))?;
        let (lo, hi) = eta.support();
        kernel.check_support(lo, hi).map_err(at_field("eta_lo"))?;
        family.validate_on(lo, hi).map_err(at_field("family"))?;

        let sampler = match &raw.sampler {
            Some(s) => s.parse().map_err(at_field("sampler"))?,
            None => SamplerKind::Wcr,
        };
        let replicates = raw.replicates.unwrap_or(10_000);
        if replicates < 1 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        let grid = TimeGrid {
            t_min: raw.grid_t_min.unwrap_or(0.0),
            t_max: required(&raw.grid_t_max, "grid_t_max")?,
            points: raw.grid_points.unwrap_or(51),
        };
        if grid.points < 2 {
            return Err(Error::config("grid_points", "must be at least 2"));
        }
        if !(grid.t_min >= 0.0 && grid.t_max > grid.t_min && grid.t_max.is_finite()) {
            return Err(Error::config("grid_t_max", "need 0 ≤ grid_t_min < grid_t_max < ∞"));
        }

        let mut quad = QuadConfig::default();
        if let Some(tol) = raw.quad_tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::config("quad_tol", "must lie in (0, 1)"));
            }
            quad.tol = tol;
        }
        if let Some(l) = raw.quad_max_level {
            if !(quad.min_level..=16).contains(&l) {
                return Err(Error::config("quad_max_level", format!("must lie in {}..=16", quad.min_level)));
            }
            quad.max_level = l;
        }
        if let Some(eps) = raw.epsilon {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::config("epsilon", "must be a finite nonnegative number"));
            }
        }
        let workers = raw.workers.unwrap_or(1);
        if workers < 1 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        let burn_in_fraction = raw.burn_in_fraction.unwrap_or(0.1);
        if !(0.0..1.0).contains(&burn_in_fraction) {
            return Err(Error::config("burn_in_fraction", "must lie in [0, 1)"));
        }
        let enumeration_cap = raw.enumeration_cap.unwrap_or(DEFAULT_ORACLE_CAP);
        if !(1..=crate::partition::DEFAULT_ENUMERATION_CAP).contains(&enumeration_cap) {
            return Err(Error::config(
                "enumeration_cap",
                format!("must lie in 1..={}", crate::partition::DEFAULT_ENUMERATION_CAP),
            ));
        }
        Ok(RunConfig {
            kernel,
            family,
            eta,
            sampler,
            replicates,
            seed: raw.seed.unwrap_or(1),
            grid,
            quad,
            epsilon: raw.epsilon,
            crm_draws: raw.crm_draws.unwrap_or(0),
            workers,
            enumeration_cap,
            burn_in_fraction,
            hash: raw.hash(),
        })
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            quad: self.quad,
            grid_level: None,
            enumeration_cap: self.enumeration_cap,
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            kind: self.sampler,
            replicates: self.replicates,
            seed: self.seed,
            workers: self.workers,
            burn_in_fraction: self.burn_in_fraction,
        }
    }

    /// The comment line heading every CSV output.
    pub fn stamp(&self) -> String {
        format!("# config_hash={},seed={},version={}", self.hash, self.seed, VERSION)
    }
}
