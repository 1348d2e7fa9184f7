//! Run configuration: parsing, unit conversion and validation.
//!
//! Decibel-valued keys (`pt_dbm`, `sigma2_dbm`, `rician_beta_db`) and the
//! region size in wavelengths are converted here; everything passed to the
//! library is in linear units and meters.

use std::path::Path;

use mapos::engine::EngineKind;
use mapos::laga::LagaConfig;
use mapos::scenario::{self, ExperimentOptions, Scheme, ScenarioSpec, SweepAxis};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Problem with the configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Map<String, Value>,
    #[serde(default)]
    laga: Map<String, Value>,
    #[serde(default)]
    experiment: Option<ExperimentSection>,
    #[serde(default)]
    sweep: Option<SweepSection>,
    #[serde(default)]
    optimize: Option<OptimizeSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Defaults to UPA-dense, UPA-sparse and the MA scheme of the engine.
    #[serde(default)]
    pub schemes: Option<Vec<Scheme>>,
    #[serde(default = "one")]
    pub realizations: usize,
    #[serde(default = "hundred")]
    pub eval_samples: usize,
    #[serde(default)]
    pub eval_seed: Option<u64>,
    #[serde(default)]
    pub sparse_shrink: Option<f64>,
}

fn one() -> usize {
    1
}

fn hundred() -> usize {
    100
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            schemes: None,
            realizations: one(),
            eval_samples: hundred(),
            eval_seed: None,
            sparse_shrink: None,
        }
    }
}

/// Sweep axes as written in configuration files. The `_db`/`_dbm` and
/// `region_size` values are converted before reaching the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CliAxis {
    RicianBeta,
    RicianBetaDb,
    ClusterRate,
    /// Region side in wavelengths.
    RegionSize,
    Pt,
    PtDbm,
    NUsers,
}

impl CliAxis {
    pub fn name(self) -> &'static str {
        match self {
            CliAxis::RicianBeta => "rician_beta",
            CliAxis::RicianBetaDb => "rician_beta_db",
            CliAxis::ClusterRate => "cluster_rate",
            CliAxis::RegionSize => "region_size",
            CliAxis::Pt => "pt",
            CliAxis::PtDbm => "pt_dbm",
            CliAxis::NUsers => "n_users",
        }
    }

    /// Library axis and the value it receives.
    pub fn to_library(self, value: f64) -> (SweepAxis, f64) {
        match self {
            CliAxis::RicianBeta => (SweepAxis::RicianBeta, value),
            CliAxis::RicianBetaDb => (SweepAxis::RicianBeta, scenario::db_to_linear(value)),
            CliAxis::ClusterRate => (SweepAxis::ClusterRate, value),
            CliAxis::RegionSize => (SweepAxis::RegionSize, value),
            CliAxis::Pt => (SweepAxis::Pt, value),
            CliAxis::PtDbm => (SweepAxis::Pt, scenario::dbm_to_watts(value)),
            CliAxis::NUsers => (SweepAxis::NUsers, value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: CliAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialLayout {
    #[default]
    UpaSparse,
    UpaDense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    /// Which user draw of the scenario to optimize for.
    #[serde(default)]
    pub realization: usize,
    #[serde(default)]
    pub initial: InitialLayout,
}

/// Fully resolved configuration. Its JSON form is what the config hash
/// covers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub laga: LagaConfig,
    pub experiment: ExperimentSection,
    pub sweep: Option<SweepSection>,
    pub optimize: OptimizeSection,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub engine: Option<EngineKind>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: Overrides) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        let mut scenario = resolve_scenario(raw.scenario)?;
        if let Some(seed) = overrides.seed {
            scenario.seed = seed;
        }
        let mut laga = resolve_laga(raw.laga, scenario.wavelength)?;
        if let Some(engine) = overrides.engine {
            laga.engine = engine;
        }
        let cfg = Self {
            scenario,
            laga,
            experiment: raw.experiment.unwrap_or_default(),
            sweep: raw.sweep,
            optimize: raw.optimize.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let lib = |r: mapos::Result<()>, what: &str| r.map_err(|e| ConfigError(format!("{what}: {e}")));
        lib(self.scenario.validate(), "scenario")?;
        lib(self.laga.validate(), "laga")?;
        let e = &self.experiment;
        if e.realizations == 0 || e.eval_samples == 0 {
            return err("experiment: realizations and eval_samples must be at least 1");
        }
        if e.schemes.as_ref().is_some_and(Vec::is_empty) {
            return err("experiment: schemes must not be empty");
        }
        if let Some(s) = e.sparse_shrink {
            if !(s > 0.0 && s <= 1.0) {
                return err(format!("experiment: sparse_shrink must lie in (0, 1], got {s}"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return err("sweep: value list is empty");
            }
            for &v in &sweep.values {
                if !v.is_finite() {
                    return err(format!("sweep: non-finite value {v}"));
                }
                let (axis, value) = sweep.axis.to_library(v);
                lib(self.scenario.with_axis(axis, value).map(|_| ()), &format!("sweep value {v}"))?;
            }
        }
        Ok(())
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        self.experiment.schemes.clone().unwrap_or_else(|| {
            let ma = match self.laga.engine {
                EngineKind::Mc => Scheme::MaMc,
                EngineKind::De => Scheme::MaDe,
            };
            vec![Scheme::UpaDense, Scheme::UpaSparse, ma]
        })
    }

    pub fn experiment_options(&self) -> ExperimentOptions {
        ExperimentOptions {
            laga: self.laga.clone(),
            eval_samples: self.experiment.eval_samples,
            eval_seed: self.experiment.eval_seed,
            sparse_shrink: self.experiment.sparse_shrink,
        }
    }

    /// SHA-256 of the resolved configuration, lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Moves `from` (converted by `f`) into `to`, refusing to have both.
fn convert_key(map: &mut Map<String, Value>, from: &str, to: &str, f: fn(f64) -> f64) -> Result<(), ConfigError> {
    let Some(v) = map.remove(from) else { return Ok(()) };
    if map.contains_key(to) {
        return err(format!("scenario: give either `{to}` or `{from}`, not both"));
    }
    let Some(x) = v.as_f64() else {
        return err(format!("scenario: `{from}` must be a number"));
    };
    map.insert(to.into(), Value::from(f(x)));
    Ok(())
}

/// Merges the given keys over the defaults for the given wavelength.
fn resolve_scenario(mut given: Map<String, Value>) -> Result<ScenarioSpec, ConfigError> {
    let Some(wavelength) = given.get("wavelength").and_then(Value::as_f64) else {
        return err("scenario: `wavelength` (meters) is required");
    };
    if wavelength <= 0.0 {
        return err("scenario: `wavelength` must be positive");
    }
    convert_key(&mut given, "pt_dbm", "pt", scenario::dbm_to_watts)?;
    convert_key(&mut given, "sigma2_dbm", "sigma2", scenario::dbm_to_watts)?;
    convert_key(&mut given, "rician_beta_db", "rician_beta", scenario::db_to_linear)?;
    let mut spec = serde_json::to_value(ScenarioSpec::defaults_for(wavelength)).expect("defaults serialize");
    let obj = spec.as_object_mut().expect("object");
    if let Some(side) = given.remove("region_size_wavelengths") {
        if given.contains_key("region") {
            return err("scenario: give either `region` or `region_size_wavelengths`, not both");
        }
        let Some(side) = side.as_f64() else {
            return err("scenario: `region_size_wavelengths` must be a number");
        };
        let region = obj.get_mut("region").and_then(Value::as_object_mut).expect("region object");
        region.insert("sx".into(), Value::from(side * wavelength));
        region.insert("sy".into(), Value::from(side * wavelength));
    }
    obj.extend(given);
    serde_json::from_value(spec).map_err(|e| ConfigError(format!("scenario: {e}")))
}

fn resolve_laga(given: Map<String, Value>, wavelength: f64) -> Result<LagaConfig, ConfigError> {
    let mut cfg = serde_json::to_value(LagaConfig::defaults_for(wavelength)).expect("defaults serialize");
    cfg.as_object_mut().expect("object").extend(given);
    serde_json::from_value(cfg).map_err(|e| ConfigError(format!("laga: {e}")))
}
