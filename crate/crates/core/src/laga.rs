//! Log-barrier penalized gradient ascent over antenna positions.
//!
//! The constrained problem is relaxed to maximizing
//! `f = R̄ + μ ℒ_f(x, y)` for a shrinking sequence of `μ`, where `ℒ_f` is a
//! log barrier on the region bounds and the minimum spacing. Each stage runs
//! a fixed number of normalized-gradient steps with backtracking.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channel::{AntennaLayout, MovingRegion, StatisticalCsi};
use crate::engine::{DeterministicEquivalent, EngineKind, Instantaneous, MonteCarlo, RateEngine, SamplingPolicy};
use crate::error::{Error, Result};
use crate::grad_de::NewtonOptions;
use crate::rng::SeedTree;

/// Optimizer settings. Lengths are in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagaConfig {
    pub mu0: f64,
    pub rho: f64,
    pub eps_r: f64,
    pub alpha0: f64,
    pub eta: f64,
    pub inner_iters: usize,
    pub max_stages: usize,
    pub engine: EngineKind,
    pub mc_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    #[serde(default)]
    pub newton: NewtonOptions,
}

impl LagaConfig {
    /// `μ₀ = 1, ρ = 0.4, ε_r = 0.01λ, α₀ = 0.15λ, η = 0.2, I = 20, M = 30`.
    pub fn defaults_for(wavelength: f64) -> Self {
        Self {
            mu0: 1.0,
            rho: 0.4,
            eps_r: 0.01 * wavelength,
            alpha0: 0.15 * wavelength,
            eta: 0.2,
            inner_iters: 20,
            max_stages: 60,
            engine: EngineKind::De,
            mc_samples: 30,
            seed: 0,
            sampling: SamplingPolicy::FixedSeed,
            newton: NewtonOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0 > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.eta > 0.0
            && self.eta < 1.0
            && self.alpha0 > 0.0
            && self.eps_r > 0.0
            && self.inner_iters >= 1
            && self.max_stages >= 1
            && self.mc_samples >= 1;
        if !ok {
            return Err(Error::InvalidInput(format!("invalid optimizer settings: {self:?}")));
        }
        Ok(())
    }
}

/// Value of the log barrier; leaving the strict interior is a variant, not a
/// number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Barrier {
    Feasible(f64),
    Infeasible,
}

impl Barrier {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Barrier::Feasible(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Barrier::Feasible(v) => Some(*v),
            Barrier::Infeasible => None,
        }
    }
}

/// `Σ_{n<i} ln(‖r_n − r_i‖² − Δ²) + Σ_n [ln(S_x²/4 − x_n²) + ln(S_y²/4 − y_n²)]`.
pub fn barrier_value(layout: &AntennaLayout, region: &MovingRegion) -> Barrier {
    let (x, y) = (layout.x(), layout.y());
    let (hx2, hy2) = (region.sx * region.sx / 4.0, region.sy * region.sy / 4.0);
    let d2 = region.min_spacing * region.min_spacing;
    let mut total = 0.0;
    for n in 0..layout.len() {
        let (gx, gy) = (hx2 - x[n] * x[n], hy2 - y[n] * y[n]);
        if !(gx > 0.0 && gy > 0.0) {
            return Barrier::Infeasible;
        }
        total += gx.ln() + gy.ln();
        for i in n + 1..layout.len() {
            let gap = (x[n] - x[i]).powi(2) + (y[n] - y[i]).powi(2) - d2;
            if !(gap > 0.0) {
                return Barrier::Infeasible;
            }
            total += gap.ln();
        }
    }
    Barrier::Feasible(total)
}

/// Gradient of [`barrier_value`]:
/// `−2v_n/(S_v²/4 − v_n²) + Σ_{i≠n} 2(v_n − v_i)/(‖r_n − r_i‖² − Δ²)`.
pub fn barrier_gradient(layout: &AntennaLayout, region: &MovingRegion) -> Result<(Vec<f64>, Vec<f64>)> {
    if !barrier_value(layout, region).is_feasible() {
        return Err(Error::Infeasible("barrier gradient requested outside the strict interior".into()));
    }
    let (x, y) = (layout.x(), layout.y());
    let (hx2, hy2) = (region.sx * region.sx / 4.0, region.sy * region.sy / 4.0);
    let d2 = region.min_spacing * region.min_spacing;
    let n_ant = layout.len();
    let mut gx: Vec<f64> = x.iter().map(|v| -2.0 * v / (hx2 - v * v)).collect();
    let mut gy: Vec<f64> = y.iter().map(|v| -2.0 * v / (hy2 - v * v)).collect();
    for n in 0..n_ant {
        for i in n + 1..n_ant {
            let (dx, dy) = (x[n] - x[i], y[n] - y[i]);
            let gap = dx * dx + dy * dy - d2;
            gx[n] += 2.0 * dx / gap;
            gx[i] -= 2.0 * dx / gap;
            gy[n] += 2.0 * dy / gap;
            gy[i] -= 2.0 * dy / gap;
        }
    }
    Ok((gx, gy))
}

/// One inner iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: usize,
    pub mu: f64,
    pub iter: usize,
    /// Objective before the step.
    pub f: f64,
    /// Objective after the step (equal to `f` for a zero step).
    pub f_new: f64,
    /// Surrogate rate before the step.
    pub rate: f64,
    /// Barrier value before the step.
    pub barrier: f64,
    /// Accepted step size, `0` when backtracking failed.
    pub alpha: f64,
    pub grad_norm: f64,
    /// Distance from the stage's starting layout after the step.
    pub displacement: f64,
}

/// One outer stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub mu: f64,
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
    pub stages: Vec<StageRecord>,
    /// Initial layout followed by every accepted iterate.
    pub iterates: Vec<AntennaLayout>,
    pub initial_rate: f64,
    pub final_rate: f64,
    /// Penalty of the last stage that ran.
    pub final_mu: f64,
    pub final_barrier: f64,
}

impl OptimizerTrace {
    pub const CSV_HEADER: &'static str = "stage,mu,iter,f,rate,barrier,alpha,grad_norm,displacement";

    /// CSV with one row per inner iteration. `comment` lines go first,
    /// prefixed with `# `.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.stage, r.mu, r.iter, r.f, r.rate, r.barrier, r.alpha, r.grad_norm, r.displacement
            );
        }
        s
    }
}

/// Backtracking gives up once the step falls below this fraction of `α₀`.
const ALPHA_FLOOR: f64 = 1e-12;

/// Runs the optimizer with the engine selected by `cfg`.
pub fn laga_optimize(
    init: &AntennaLayout,
    region: &MovingRegion,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    cfg: &LagaConfig,
) -> Result<(AntennaLayout, OptimizerTrace)> {
    match cfg.engine {
        EngineKind::Mc => {
            let engine = MonteCarlo {
                csi: csi.clone(),
                pt,
                sigma2,
                samples: cfg.mc_samples,
                seed: SeedTree::new(cfg.seed),
                policy: cfg.sampling,
            };
            laga_optimize_with(&engine, init, region, cfg)
        }
        EngineKind::De => {
            let engine = DeterministicEquivalent::new(csi.clone(), pt, sigma2, cfg.newton);
            laga_optimize_with(&engine, init, region, cfg)
        }
    }
}

/// Runs the optimizer on a pinned channel draw.
pub fn laga_optimize_instantaneous(
    init: &AntennaLayout,
    region: &MovingRegion,
    engine: &Instantaneous,
    cfg: &LagaConfig,
) -> Result<(AntennaLayout, OptimizerTrace)> {
    laga_optimize_with(engine, init, region, cfg)
}

/// Trial points whose rate cannot be evaluated are rejected like any other
/// failed backtracking step.
fn trial_rate(engine: &dyn RateEngine, layout: &AntennaLayout, iteration: usize) -> Result<Option<f64>> {
    match engine.rate(layout, iteration) {
        Ok(r) => Ok(Some(r)),
        Err(Error::SingularChannel { .. } | Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the optimizer against an arbitrary engine.
pub fn laga_optimize_with(
    engine: &dyn RateEngine,
    init: &AntennaLayout,
    region: &MovingRegion,
    cfg: &LagaConfig,
) -> Result<(AntennaLayout, OptimizerTrace)> {
    cfg.validate()?;
    region.validate()?;
    if !barrier_value(init, region).is_feasible() {
        return Err(Error::Infeasible("initial layout is not strictly feasible".into()));
    }
    let mut x = init.clone();
    let mut trace = OptimizerTrace {
        rows: Vec::new(),
        stages: Vec::new(),
        iterates: vec![x.clone()],
        initial_rate: engine.rate(&x, 0)?,
        final_rate: f64::NAN,
        final_mu: cfg.mu0,
        final_barrier: f64::NAN,
    };
    let mut mu = cfg.mu0;
    let mut iteration = 0;
    for stage in 0..cfg.max_stages {
        let stage_start = x.clone();
        for inner in 0..cfg.inner_iters {
            let rg = engine.rate_and_gradient(&x, iteration)?;
            let barrier = barrier_value(&x, region)
                .value()
                .ok_or_else(|| Error::Infeasible("iterate left the strict interior".into()))?;
            let (bx, by) = barrier_gradient(&x, region)?;
            let dx: Vec<f64> = rg.grad_x.iter().zip(&bx).map(|(g, b)| g + mu * b).collect();
            let dy: Vec<f64> = rg.grad_y.iter().zip(&by).map(|(g, b)| g + mu * b).collect();
            let norm = dx.iter().chain(&dy).map(|v| v * v).sum::<f64>().sqrt();
            let f = rg.rate + mu * barrier;
            let mut accepted = None;
            if norm > 0.0 && norm.is_finite() {
                let (ux, uy): (Vec<f64>, Vec<f64>) = (dx.iter().map(|v| v / norm).collect(), dy.iter().map(|v| v / norm).collect());
                let mut alpha = cfg.alpha0;
                while alpha >= ALPHA_FLOOR * cfg.alpha0 {
                    let trial = x.stepped(alpha, &ux, &uy);
                    if let Barrier::Feasible(b) = barrier_value(&trial, region) {
                        if let Some(r) = trial_rate(engine, &trial, iteration)? {
                            let f_new = r + mu * b;
                            if f_new >= f + cfg.eta * alpha * norm {
                                accepted = Some((trial, alpha, f_new));
                                break;
                            }
                        }
                    }
                    alpha *= 0.5;
                }
            }
            let (alpha, f_new) = match accepted {
                Some((trial, alpha, f_new)) => {
                    x = trial;
                    trace.iterates.push(x.clone());
                    (alpha, f_new)
                }
                None => (0.0, f),
            };
            trace.rows.push(TraceRow {
                stage,
                mu,
                iter: inner,
                f,
                f_new,
                rate: rg.rate,
                barrier,
                alpha,
                grad_norm: norm,
                displacement: x.distance(&stage_start),
            });
            iteration += 1;
        }
        let displacement = x.distance(&stage_start);
        trace.stages.push(StageRecord { stage, mu, displacement });
        trace.final_mu = mu;
        if displacement < cfg.eps_r {
            break;
        }
        mu *= cfg.rho;
    }
    trace.final_rate = engine.rate(&x, iteration)?;
    trace.final_barrier = barrier_value(&x, region)
        .value()
        .ok_or_else(|| Error::Infeasible("final layout left the strict interior".into()))?;
    Ok((x, trace))
}

/// `(rows, cols)` with `rows` the largest divisor of `n` not above `√n`.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut rows = 1;
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            rows = d;
        }
        d += 1;
    }
    (rows, n / rows)
}

fn centered_grid(n: usize, dx: f64, dy: f64) -> AntennaLayout {
    let (rows, cols) = grid_shape(n);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for r in 0..rows {
        for c in 0..cols {
            x.push((c as f64 - (cols as f64 - 1.0) / 2.0) * dx);
            y.push((r as f64 - (rows as f64 - 1.0) / 2.0) * dy);
        }
    }
    AntennaLayout::new(x, y).expect("grid has n ≥ 1 finite points")
}

/// Centered half-wavelength grid.
pub fn upa_dense_init(n: usize, wavelength: f64) -> Result<AntennaLayout> {
    if n == 0 || !(wavelength > 0.0) {
        return Err(Error::InvalidInput("need n ≥ 1 and a positive wavelength".into()));
    }
    Ok(centered_grid(n, wavelength / 2.0, wavelength / 2.0))
}

/// Centered grid with spacing `(S_x/cols)·shrink` and `(S_y/rows)·shrink`.
pub fn upa_sparse_init(n: usize, region: &MovingRegion, shrink: f64) -> Result<AntennaLayout> {
    if n == 0 || !(shrink > 0.0) {
        return Err(Error::InvalidInput("need n ≥ 1 and a positive shrink factor".into()));
    }
    region.validate()?;
    let (rows, cols) = grid_shape(n);
    let layout = centered_grid(n, region.sx / cols as f64 * shrink, region.sy / rows as f64 * shrink);
    if !barrier_value(&layout, region).is_feasible() {
        return Err(Error::Infeasible(format!(
            "sparse {rows}x{cols} grid with shrink {shrink} is not strictly inside the region with spacing {}",
            region.min_spacing
        )));
    }
    Ok(layout)
}

/// Centered grid whose spacing on each axis sits midway between `Δ` and the
/// largest spacing that keeps the grid strictly inside the region.
pub fn upa_sparse_midway(n: usize, region: &MovingRegion) -> Result<AntennaLayout> {
    if n == 0 {
        return Err(Error::InvalidInput("need n ≥ 1".into()));
    }
    region.validate()?;
    let (rows, cols) = grid_shape(n);
    let spacing = |count: usize, side: f64| {
        if count > 1 {
            0.5 * (region.min_spacing + side / (count - 1) as f64)
        } else {
            0.0
        }
    };
    let layout = centered_grid(n, spacing(cols, region.sx), spacing(rows, region.sy));
    if !barrier_value(&layout, region).is_feasible() {
        return Err(Error::Infeasible(format!(
            "no {rows}x{cols} grid fits strictly inside the region with spacing {}",
            region.min_spacing
        )));
    }
    Ok(layout)
}
