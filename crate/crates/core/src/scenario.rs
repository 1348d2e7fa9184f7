//! Synthetic scenarios, ergodic-rate evaluation and experiment sweeps.
//!
//! Candidate user locations are synthesized as angular clusters: each
//! candidate has a LoS direction and NLoS directions scattered around it with
//! a Gaussian angular spread. The first `hotspot_centers.len()` candidates
//! sit exactly at the configured hotspot directions.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AntennaLayout, MovingRegion, StatisticalCsi, UserPaths, Wavevector};
use crate::engine::{EngineKind, Instantaneous};
use crate::error::{Error, Result};
use crate::grad_mc;
use crate::laga::{self, LagaConfig};
use crate::rng::{Purpose, SeedTree};

/// How per-path powers are drawn before Rician rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PowerLaw {
    /// Uniform in decibels over `[−span_db, 0]`.
    LogUniform { span_db: f64 },
    Equal,
    /// Path `l` (NLoS paths counted from 1) is `decay_db · l` below the LoS path.
    Exponential { decay_db: f64 },
}

impl Default for PowerLaw {
    fn default() -> Self {
        PowerLaw::LogUniform { span_db: 20.0 }
    }
}

fn default_path_gain_db() -> f64 {
    -100.0
}

/// Scenario description. Angles are in radians, lengths in meters, powers in
/// watts and `rician_beta` is a linear ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_antennas: usize,
    pub n_users: usize,
    pub region: MovingRegion,
    pub wavelength: f64,
    pub paths_per_user: usize,
    pub candidate_count: usize,
    /// `[azimuth, elevation]` of each designated hotspot candidate.
    pub hotspot_centers: Vec<[f64; 2]>,
    pub angular_spread: f64,
    pub cluster_rate: f64,
    pub rician_beta: f64,
    pub pt: f64,
    pub sigma2: f64,
    pub seed: u64,
    #[serde(default)]
    pub power_law: PowerLaw,
    /// Mean total channel power per candidate, in dB.
    #[serde(default = "default_path_gain_db")]
    pub path_gain_db: f64,
}

/// `10^(dBm/10) / 1000`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ScenarioSpec {
    /// `N = 16, K = 12, S₀ = 8λ, Δ = λ/2`, 200 candidates with 12 paths,
    /// `β = 10 dB`, `P_T = 30 dBm`, `σ² = −90 dBm`, uniform users.
    pub fn defaults_for(wavelength: f64) -> Self {
        Self {
            n_antennas: 16,
            n_users: 12,
            region: MovingRegion {
                sx: 8.0 * wavelength,
                sy: 8.0 * wavelength,
                min_spacing: wavelength / 2.0,
            },
            wavelength,
            paths_per_user: 12,
            candidate_count: 200,
            hotspot_centers: Vec::new(),
            angular_spread: 0.2,
            cluster_rate: 0.0,
            rician_beta: db_to_linear(10.0),
            pt: dbm_to_watts(30.0),
            sigma2: dbm_to_watts(-90.0),
            seed: 0,
            power_law: PowerLaw::default(),
            path_gain_db: default_path_gain_db(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        self.region.validate()?;
        if self.n_antennas == 0 || self.n_users == 0 || self.paths_per_user == 0 {
            return fail("n_antennas, n_users and paths_per_user must be at least 1".into());
        }
        if self.n_users > self.n_antennas {
            return Err(Error::Unsupported(format!(
                "zero-forcing needs n_users ≤ n_antennas ({} > {})",
                self.n_users, self.n_antennas
            )));
        }
        if !(self.wavelength > 0.0) || !(self.pt > 0.0) || !(self.sigma2 > 0.0) {
            return fail("wavelength, pt and sigma2 must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.cluster_rate) {
            return fail(format!("cluster_rate must lie in [0, 1], got {}", self.cluster_rate));
        }
        if !(self.rician_beta >= 0.0 && self.rician_beta.is_finite()) || !(self.angular_spread >= 0.0) {
            return fail("rician_beta and angular_spread must be finite and non-negative".into());
        }
        let hotspots = self.hotspot_centers.len();
        if hotspots > self.candidate_count {
            return fail("more hotspot centers than candidates".into());
        }
        if self.cluster_rate > 0.0 && hotspots == 0 {
            return fail("a positive cluster_rate needs at least one hotspot center".into());
        }
        if self.cluster_rate < 1.0 && self.candidate_count == hotspots {
            return fail("cluster_rate < 1 needs candidates outside the hotspots".into());
        }
        if !self.path_gain_db.is_finite() {
            return fail("path_gain_db must be finite".into());
        }
        match self.power_law {
            PowerLaw::LogUniform { span_db } if !(span_db >= 0.0) => fail("span_db must be non-negative".into()),
            PowerLaw::Exponential { decay_db } if !(decay_db >= 0.0) => fail("decay_db must be non-negative".into()),
            _ => Ok(()),
        }
    }
}

fn draw_direction<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let az = rng.random_range(-PI..PI);
    let el = rng.random_range(0.0f64..1.0).asin();
    (az, el)
}

fn path_powers<R: Rng + ?Sized>(law: PowerLaw, count: usize, rng: &mut R) -> Vec<f64> {
    (0..count)
        .map(|l| match law {
            PowerLaw::LogUniform { span_db } => db_to_linear(-rng.random_range(0.0..=1.0) * span_db),
            PowerLaw::Equal => 1.0,
            PowerLaw::Exponential { decay_db } => db_to_linear(-decay_db * l as f64),
        })
        .collect()
}

/// Candidate user locations, each a single-user [`StatisticalCsi`] whose
/// path 0 is the LoS path.
pub fn generate_candidates(spec: &ScenarioSpec, seed: &SeedTree) -> Result<Vec<StatisticalCsi>> {
    spec.validate()?;
    let raw: Vec<StatisticalCsi> = (0..spec.candidate_count)
        .map(|i| {
            let mut rng = seed.rng(Purpose::Scenario, i as u64);
            let (az, el) = match spec.hotspot_centers.get(i) {
                Some(&[az, el]) => (az, el),
                None => draw_direction(&mut rng),
            };
            let mut wavevectors = vec![Wavevector::from_angles(spec.wavelength, az, el)];
            for _ in 1..spec.paths_per_user {
                let da: f64 = rng.sample(StandardNormal);
                let de: f64 = rng.sample(StandardNormal);
                wavevectors.push(Wavevector::from_angles(
                    spec.wavelength,
                    az + spec.angular_spread * da,
                    el + spec.angular_spread * de,
                ));
            }
            let power = path_powers(spec.power_law, spec.paths_per_user, &mut rng);
            StatisticalCsi::from_users(
                spec.wavelength,
                &[UserPaths {
                    wavevectors,
                    power,
                    los: Some(0),
                }],
            )
        })
        .collect::<Result<_>>()?;
    let rescaled: Vec<StatisticalCsi> = if spec.paths_per_user > 1 {
        raw.iter()
            .map(|c| channel::rician_rescale(c, spec.rician_beta, &raw))
            .collect::<Result<_>>()?
    } else {
        raw
    };
    let mean_total = rescaled.iter().map(|c| c.user_power(0)).sum::<f64>() / rescaled.len() as f64;
    let scale = db_to_linear(spec.path_gain_db) / mean_total;
    rescaled
        .iter()
        .map(|c| {
            let u = c.user_paths(0);
            StatisticalCsi::from_users(
                spec.wavelength,
                &[UserPaths {
                    power: u.power.iter().map(|p| p * scale).collect(),
                    ..u
                }],
            )
        })
        .collect()
}

/// Candidate index of each user: with probability `τ` a uniformly chosen
/// hotspot candidate, otherwise a uniformly chosen non-hotspot candidate.
pub fn draw_user_indices(candidate_count: usize, spec: &ScenarioSpec, seed: &SeedTree) -> Result<Vec<usize>> {
    let hotspots = spec.hotspot_centers.len();
    if candidate_count == 0 || hotspots > candidate_count {
        return Err(Error::InvalidInput("need candidates covering every hotspot".into()));
    }
    let mut rng = seed.rng(Purpose::UserSelection, 0);
    (0..spec.n_users)
        .map(|_| {
            let at_hotspot = rng.random_bool(spec.cluster_rate);
            if at_hotspot {
                if hotspots == 0 {
                    return Err(Error::InvalidInput("cluster_rate > 0 without hotspots".into()));
                }
                Ok(rng.random_range(0..hotspots))
            } else {
                if candidate_count == hotspots {
                    return Err(Error::InvalidInput("no candidates outside the hotspots".into()));
                }
                Ok(rng.random_range(hotspots..candidate_count))
            }
        })
        .collect()
}

/// Assembles the drawn users into one multi-user CSI.
pub fn draw_user_set(candidates: &[StatisticalCsi], spec: &ScenarioSpec, seed: &SeedTree) -> Result<StatisticalCsi> {
    let idx = draw_user_indices(candidates.len(), spec, seed)?;
    let users: Vec<UserPaths> = idx.iter().map(|&i| candidates[i].user_paths(0)).collect();
    StatisticalCsi::from_users(spec.wavelength, &users)
}

/// Sample mean of the instantaneous rate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub resamples: usize,
}

pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ergodic rate by direct sampling, using draws reserved for evaluation.
pub fn evaluate_ergodic_rate(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    n_samples: usize,
    seed: &SeedTree,
) -> Result<RateEstimate> {
    let (rates, resamples) = grad_mc::sample_rates(layout, csi, pt, sigma2, n_samples, seed, Purpose::Evaluation)?;
    let (mean, std_error) = mean_and_std_error(&rates);
    Ok(RateEstimate {
        mean,
        std_error,
        resamples,
    })
}

/// Antenna placement schemes compared by [`run_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "UPA-dense")]
    UpaDense,
    #[serde(rename = "UPA-sparse")]
    UpaSparse,
    #[serde(rename = "MA-MC")]
    MaMc,
    #[serde(rename = "MA-DE")]
    MaDe,
    #[serde(rename = "MA-instantaneous")]
    MaInstantaneous,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::UpaDense,
        Scheme::UpaSparse,
        Scheme::MaMc,
        Scheme::MaDe,
        Scheme::MaInstantaneous,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::UpaDense => "UPA-dense",
            Scheme::UpaSparse => "UPA-sparse",
            Scheme::MaMc => "MA-MC",
            Scheme::MaDe => "MA-DE",
            Scheme::MaInstantaneous => "MA-instantaneous",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Scheme::ALL
            .iter()
            .find(|x| x.label().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// Settings shared by every realization of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    pub laga: LagaConfig,
    /// Channel draws per ergodic-rate evaluation.
    pub eval_samples: usize,
    /// Seed of the evaluation draws; defaults to the scenario seed.
    #[serde(default)]
    pub eval_seed: Option<u64>,
    /// Shrink factor of the UPA-sparse grid; `None` picks 1 and falls back
    /// to a spacing midway between `Δ` and the largest fitting spacing.
    #[serde(default)]
    pub sparse_shrink: Option<f64>,
}

impl ExperimentOptions {
    pub fn defaults_for(wavelength: f64) -> Self {
        Self {
            laga: LagaConfig::defaults_for(wavelength),
            eval_samples: 100,
            eval_seed: None,
            sparse_shrink: None,
        }
    }
}

/// Sparse grid, falling back to the midway spacing when the full-region grid
/// touches the spacing constraint.
pub fn sparse_initial_layout(spec: &ScenarioSpec, shrink: Option<f64>) -> Result<AntennaLayout> {
    match shrink {
        Some(s) => laga::upa_sparse_init(spec.n_antennas, &spec.region, s),
        None => match laga::upa_sparse_init(spec.n_antennas, &spec.region, 1.0) {
            Err(Error::Infeasible(_)) => laga::upa_sparse_midway(spec.n_antennas, &spec.region),
            other => other,
        },
    }
}

/// Outcome of one scheme on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub realization: usize,
    pub rate: Option<f64>,
    /// Standard error of the per-realization Monte-Carlo evaluation.
    pub eval_std_error: Option<f64>,
    pub layout: Option<AntennaLayout>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub results: Vec<RealizationResult>,
    /// Mean over successful realizations.
    pub mean_rate: f64,
    /// Standard error of `mean_rate` across realizations.
    pub std_error: f64,
    pub config: ScenarioSpec,
}

impl EvalReport {
    pub fn rates(&self) -> Vec<f64> {
        self.results.iter().filter_map(|r| r.rate).collect()
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.rate.is_none()).count()
    }
}

/// Mean and standard error of `a − b` over realizations where both
/// succeeded.
pub fn paired_difference(a: &EvalReport, b: &EvalReport) -> (f64, f64) {
    let diffs: Vec<f64> = a
        .results
        .iter()
        .filter_map(|ra| {
            let rb = b.results.iter().find(|rb| rb.realization == ra.realization)?;
            Some(ra.rate? - rb.rate?)
        })
        .collect();
    mean_and_std_error(&diffs)
}

fn laga_seed(realization: &SeedTree) -> u64 {
    realization.child(Purpose::PathResponse, 0).seed()
}

/// Users and optimizer seed of realization `r`, identical to the ones
/// [`run_experiment`] uses for that realization.
pub fn realization_setup(spec: &ScenarioSpec, r: usize) -> Result<(StatisticalCsi, u64)> {
    spec.validate()?;
    let master = SeedTree::new(spec.seed);
    let candidates = generate_candidates(spec, &master.child(Purpose::Scenario, 0))?;
    let tree = master.child(Purpose::Realization, r as u64);
    Ok((draw_user_set(&candidates, spec, &tree)?, laga_seed(&tree)))
}

/// Evaluation draws of realization `r`.
pub fn realization_eval_seed(spec: &ScenarioSpec, opts: &ExperimentOptions, r: usize) -> SeedTree {
    SeedTree::new(opts.eval_seed.unwrap_or(spec.seed))
        .child(Purpose::Realization, r as u64)
        .child(Purpose::Evaluation, 0)
}

fn scheme_layout(
    scheme: Scheme,
    spec: &ScenarioSpec,
    csi: &StatisticalCsi,
    opts: &ExperimentOptions,
    tree: &SeedTree,
) -> Result<AntennaLayout> {
    let sparse = || sparse_initial_layout(spec, opts.sparse_shrink);
    let mut cfg = opts.laga.clone();
    cfg.seed = laga_seed(tree);
    match scheme {
        Scheme::UpaDense => laga::upa_dense_init(spec.n_antennas, spec.wavelength),
        Scheme::UpaSparse => sparse(),
        Scheme::MaMc | Scheme::MaDe => {
            cfg.engine = if scheme == Scheme::MaMc { EngineKind::Mc } else { EngineKind::De };
            let (layout, _) = laga::laga_optimize(&sparse()?, &spec.region, csi, spec.pt, spec.sigma2, &cfg)?;
            Ok(layout)
        }
        Scheme::MaInstantaneous => {
            let engine = Instantaneous {
                csi: csi.clone(),
                pt: spec.pt,
                sigma2: spec.sigma2,
                sample: channel::sample_prv(csi, &mut tree.rng(Purpose::Instantaneous, 0)),
            };
            let (layout, _) = laga::laga_optimize_instantaneous(&sparse()?, &spec.region, &engine, &cfg)?;
            Ok(layout)
        }
    }
}

/// Fraction of failed realizations above which an experiment is an error.
const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Runs every scheme on `realizations` independent user draws. All schemes
/// of one realization are scored on the same evaluation draws.
pub fn run_experiment(
    spec: &ScenarioSpec,
    schemes: &[Scheme],
    realizations: usize,
    opts: &ExperimentOptions,
) -> Result<Vec<EvalReport>> {
    spec.validate()?;
    opts.laga.validate()?;
    if realizations == 0 || schemes.is_empty() || opts.eval_samples == 0 {
        return Err(Error::InvalidInput("need at least one scheme, realization and evaluation sample".into()));
    }
    let master = SeedTree::new(spec.seed);
    let candidates = generate_candidates(spec, &master.child(Purpose::Scenario, 0))?;
    let per_realization: Vec<Result<Vec<RealizationResult>>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let tree = master.child(Purpose::Realization, r as u64);
            let eval_tree = realization_eval_seed(spec, opts, r);
            let csi = draw_user_set(&candidates, spec, &tree)?;
            Ok(schemes
                .iter()
                .map(|&scheme| {
                    let outcome = scheme_layout(scheme, spec, &csi, opts, &tree).and_then(|layout| {
                        let est =
                            evaluate_ergodic_rate(&layout, &csi, spec.pt, spec.sigma2, opts.eval_samples, &eval_tree)?;
                        Ok((layout, est))
                    });
                    match outcome {
                        Ok((layout, est)) => RealizationResult {
                            realization: r,
                            rate: Some(est.mean),
                            eval_std_error: Some(est.std_error),
                            layout: Some(layout),
                            error: None,
                        },
                        Err(e) => RealizationResult {
                            realization: r,
                            rate: None,
                            eval_std_error: None,
                            layout: None,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect())
        })
        .collect();
    let mut reports: Vec<EvalReport> = schemes
        .iter()
        .map(|&scheme| EvalReport {
            scheme,
            results: Vec::with_capacity(realizations),
            mean_rate: f64::NAN,
            std_error: f64::NAN,
            config: spec.clone(),
        })
        .collect();
    for row in per_realization {
        for (report, result) in reports.iter_mut().zip(row?) {
            report.results.push(result);
        }
    }
    for report in &mut reports {
        let failures = report.failures();
        if failures as f64 > MAX_FAILURE_FRACTION * realizations as f64 {
            let first = report.results.iter().find_map(|r| r.error.clone()).unwrap_or_default();
            return Err(Error::Degenerate(format!(
                "{} failed on {failures} of {realizations} realizations (first error: {first})",
                report.scheme.label()
            )));
        }
        let (mean, se) = mean_and_std_error(&report.rates());
        report.mean_rate = mean;
        report.std_error = se;
    }
    Ok(reports)
}

/// Scenario parameters that a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Linear Rician factor.
    RicianBeta,
    ClusterRate,
    /// Side of the square moving region, in wavelengths.
    RegionSize,
    /// Transmit power in watts.
    Pt,
    NUsers,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::RicianBeta => "rician_beta",
            SweepAxis::ClusterRate => "cluster_rate",
            SweepAxis::RegionSize => "region_size",
            SweepAxis::Pt => "pt",
            SweepAxis::NUsers => "n_users",
        }
    }
}

impl ScenarioSpec {
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut s = self.clone();
        match axis {
            SweepAxis::RicianBeta => s.rician_beta = value,
            SweepAxis::ClusterRate => s.cluster_rate = value,
            SweepAxis::RegionSize => {
                s.region.sx = value * s.wavelength;
                s.region.sy = value * s.wavelength;
            }
            SweepAxis::Pt => s.pt = value,
            SweepAxis::NUsers => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidInput(format!("n_users must be a positive integer, got {value}")));
                }
                s.n_users = value as usize;
            }
        }
        s.validate()?;
        Ok(s)
    }
}

/// One [`run_experiment`] per sweep value.
pub fn run_sweep(
    spec: &ScenarioSpec,
    axis: SweepAxis,
    values: &[f64],
    schemes: &[Scheme],
    realizations: usize,
    opts: &ExperimentOptions,
) -> Result<Vec<(f64, Vec<EvalReport>)>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| Ok((v, run_experiment(&spec.with_axis(axis, v)?, schemes, realizations, opts)?)))
        .collect()
}

/// CSV with one row per scheme × realization.
pub fn reports_to_csv(reports: &[EvalReport], comment: Option<&str>, leading: Option<(&str, f64)>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(s, "# {line}");
        }
    }
    let lead_name = leading.map(|(n, _)| format!("{n},")).unwrap_or_default();
    let _ = writeln!(s, "{lead_name}scheme,realization,mean_rate,stderr");
    append_rows(&mut s, reports, leading.map(|(_, v)| v));
    s
}

fn append_rows(s: &mut String, reports: &[EvalReport], leading: Option<f64>) {
    let lead = leading.map(|v| format!("{v},")).unwrap_or_default();
    for report in reports {
        for r in &report.results {
            let rate = r.rate.map(|v| format!("{v:e}")).unwrap_or_else(|| "NaN".into());
            let se = r.eval_std_error.map(|v| format!("{v:e}")).unwrap_or_else(|| "NaN".into());
            let _ = writeln!(s, "{lead}{},{},{rate},{se}", report.scheme.label(), r.realization);
        }
    }
}

/// Consolidated sweep CSV with the sweep value as leading column, headed
/// `column`.
pub fn sweep_to_csv(column: &str, sweep: &[(f64, Vec<EvalReport>)], comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(s, "# {line}");
        }
    }
    let _ = writeln!(s, "{column},scheme,realization,mean_rate,stderr");
    for (v, reports) in sweep {
        append_rows(&mut s, reports, Some(*v));
    }
    s
}

/// JSON summary: per scheme mean, standard error and failure count.
pub fn reports_summary_json(reports: &[EvalReport]) -> serde_json::Value {
    serde_json::Value::Array(
        reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "scheme": r.scheme.label(),
                    "mean_rate": r.mean_rate,
                    "std_error": r.std_error,
                    "realizations": r.results.len(),
                    "failures": r.failures(),
                })
            })
            .collect(),
    )
}
