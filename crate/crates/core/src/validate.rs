//! Self-check suites run by the command-line `validate` subcommand.
//!
//! Each suite draws seeded random instances, compares the analytic routines
//! against independent references (enumeration, finite differences, closed
//! forms, explicit receive-side sums) and reports a single pass/fail line.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AntennaLayout, Axis, MovingRegion, ReceiveSideSpec, StatisticalCsi, UserPaths, Wavevector};
use crate::error::Result;
use crate::grad_de::{self, NewtonOptions};
use crate::grad_mc;
use crate::laga::{self, LagaConfig};
use crate::linalg::{CMatrix, C64};
use crate::rng::{Purpose, SeedTree};
use crate::zf::{self, WaterFillResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Quick,
    Full,
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level `{other}` (expected quick or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(serialize_with = "secs")]
    pub elapsed: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub level: Level,
    pub suites: Vec<SuiteResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    /// Fixed-width table, one row per suite.
    pub fn to_table(&self) -> String {
        let width = self.suites.iter().map(|s| s.name.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  result  time     detail\n", "suite");
        for s in &self.suites {
            let _ = writeln!(
                out,
                "{:<width$}  {:<6}  {:>6.2}s  {}",
                s.name,
                if s.passed { "PASS" } else { "FAIL" },
                s.elapsed.as_secs_f64(),
                s.detail
            );
        }
        out
    }
}

/// Water-filling routine under test.
pub type WaterFillFn = dyn Fn(&[f64], f64, f64) -> Result<WaterFillResult> + Sync;

/// Which routines the suites exercise. Replacing the water-filling routine
/// is how the negative control is run.
pub struct Subjects<'a> {
    pub water_fill: &'a WaterFillFn,
}

impl Default for Subjects<'static> {
    fn default() -> Self {
        Subjects { water_fill: &zf::water_fill }
    }
}

/// Water-filling with the water level scaled by `1 + offset` and the
/// allocation recomputed from it.
pub fn tampered_water_fill(offset: f64) -> impl Fn(&[f64], f64, f64) -> Result<WaterFillResult> + Sync {
    move |c: &[f64], pt: f64, sigma2: f64| {
        let w = zf::water_fill(c, pt, sigma2)?;
        let nu = w.nu * (1.0 + offset);
        let mut p = vec![0.0; c.len()];
        let mut active = Vec::new();
        let mut rate = 0.0;
        for (k, &ck) in c.iter().enumerate() {
            if nu > sigma2 * ck {
                p[k] = nu / ck - sigma2;
                active.push(k);
                rate += (nu / (sigma2 * ck)).log2();
            }
        }
        Ok(WaterFillResult { p, nu, active, rate })
    }
}

pub fn run(level: Level) -> ValidationReport {
    run_with(level, &Subjects::default())
}

pub fn run_with(level: Level, subjects: &Subjects<'_>) -> ValidationReport {
    let quick = level == Level::Quick;
    let mut suites = vec![
        timed("water-filling KKT", || kkt_suite(subjects.water_fill, if quick { 200 } else { 1000 })),
        timed("rate derivative in c", || rate_derivative_suite(if quick { 50 } else { 200 })),
        timed("Monte-Carlo gradient", || mc_gradient_suite(if quick { 10 } else { 50 })),
        timed("DE fixed point", || de_fixed_point_suite(if quick { 20 } else { 100 })),
        timed("DE gradient", || de_gradient_suite(if quick { 5 } else { 20 })),
        timed("receive-side oracle", || clt_suite(10_000)),
        timed("optimizer feasibility", || laga_suite(if quick { 2 } else { 10 })),
    ];
    if !quick {
        suites.push(timed("DE consistency", consistency_suite));
    }
    ValidationReport { level, suites }
}

fn timed(name: &'static str, f: impl FnOnce() -> std::result::Result<String, String>) -> SuiteResult {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    match outcome {
        Ok(detail) => SuiteResult {
            name,
            passed: true,
            detail,
            elapsed,
        },
        Err(detail) => SuiteResult {
            name,
            passed: false,
            detail,
            elapsed,
        },
    }
}

fn check(ok: bool, detail: String) -> std::result::Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(suite: u64) -> rand_chacha::ChaCha8Rng {
    SeedTree::new(0x5eed).rng(Purpose::Evaluation, suite)
}

fn random_csi<R: Rng>(rng: &mut R, k: usize, paths: usize, wavelength: f64) -> StatisticalCsi {
    let users: Vec<UserPaths> = (0..k)
        .map(|_| UserPaths {
            wavevectors: (0..paths)
                .map(|_| Wavevector::from_angles(wavelength, rng.random_range(-PI..PI), rng.random_range(0.0f64..1.0).asin()))
                .collect(),
            power: (0..paths).map(|_| 10f64.powf(-rng.random_range(0.0..2.0))).collect(),
            los: Some(0),
        })
        .collect();
    StatisticalCsi::from_users(wavelength, &users).expect("generated CSI is valid")
}

fn random_layout<R: Rng>(rng: &mut R, n: usize, side: f64, gap: f64) -> AntennaLayout {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-side / 2.0..side / 2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-side / 2.0..side / 2.0)).collect();
        let layout = AntennaLayout::new(x, y).expect("matching lengths");
        if n < 2 || layout.min_pairwise_distance() > gap {
            return layout;
        }
    }
}

/// Water level by enumerating every active set.
fn enumeration_nu(c: &[f64], pt: f64, sigma2: f64) -> Option<f64> {
    let k = c.len();
    (1u32..(1 << k)).find_map(|mask| {
        let members = (0..k).filter(|i| mask & (1 << i) != 0);
        let (count, sum) = members.fold((0, 0.0), |(n, s), i| (n + 1, s + c[i]));
        let nu = (pt + sigma2 * sum) / count as f64;
        (0..k).all(|i| (mask & (1 << i) != 0) == (nu > sigma2 * c[i])).then_some(nu)
    })
}

fn kkt_suite(solver: &WaterFillFn, instances: usize) -> std::result::Result<String, String> {
    let mut rng = rng(1);
    let (mut budget, mut oracle, mut violations) = (0.0f64, 0.0f64, 0);
    for _ in 0..instances {
        let k = rng.random_range(1..=16);
        let c: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
        let pt = 10f64.powf(rng.random_range(-2.0..2.0));
        let sigma2 = 10f64.powf(rng.random_range(-3.0..1.0));
        let w = solver(&c, pt, sigma2).map_err(|e| e.to_string())?;
        let used: f64 = c.iter().zip(&w.p).map(|(c, p)| c * p).sum();
        budget = budget.max((used - pt).abs() / pt);
        for i in 0..k {
            let active = w.active.contains(&i);
            let ok = if active {
                w.p[i] > 0.0 && w.nu > sigma2 * c[i]
            } else {
                w.p[i] == 0.0 && w.nu <= sigma2 * c[i]
            };
            violations += usize::from(!ok);
        }
        if k <= 8 {
            let nu = enumeration_nu(&c, pt, sigma2).ok_or("enumeration found no consistent active set")?;
            oracle = oracle.max((nu - w.nu).abs() / nu);
        }
    }
    check(
        budget < 1e-9 && violations == 0 && oracle < 1e-9,
        format!("{instances} instances, budget err {budget:.1e}, slackness violations {violations}, oracle err {oracle:.1e}"),
    )
}

fn rate_derivative_suite(instances: usize) -> std::result::Result<String, String> {
    let mut rng = rng(2);
    let (mut done, mut worst) = (0, 0.0f64);
    while done < instances {
        let k = rng.random_range(1..=12);
        let c: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
        let (pt, sigma2) = (10f64.powf(rng.random_range(-1.0..2.0)), 10f64.powf(rng.random_range(-2.0..0.0)));
        let w = zf::water_fill(&c, pt, sigma2).map_err(|e| e.to_string())?;
        if (0..k).any(|i| (w.nu - sigma2 * c[i]).abs() < 1e-6 * w.nu) {
            continue;
        }
        let an = zf::rate_derivative_c(&w);
        for i in 0..k {
            let h = 1e-7 * c[i];
            let (mut up, mut dn) = (c.clone(), c.clone());
            up[i] += h;
            dn[i] -= h;
            let rate = |v: &[f64]| zf::rate_from_c(v, pt, sigma2).map_err(|e| e.to_string());
            let fd = (rate(&up)? - rate(&dn)?) / (2.0 * h);
            worst = worst.max(if an[i] == 0.0 { fd.abs() } else { (fd - an[i]).abs() / an[i].abs() });
        }
        done += 1;
    }
    check(worst < 1e-5, format!("{instances} instances, worst relative error {worst:.1e}"))
}

/// Largest relative error, with the denominator floored at `1e-6` of the
/// largest analytic entry.
fn coordinate_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(1e-6 * scale).max(1e-300))
        .fold(0.0, f64::max)
}

fn mc_gradient_suite(instances: usize) -> std::result::Result<String, String> {
    let mut rng = rng(3);
    let wavelength = 0.01;
    let (mut done, mut worst) = (0, 0.0f64);
    while done < instances {
        let k = rng.random_range(2..=4);
        let paths = rng.random_range(1..=12 / k);
        let n = rng.random_range(k..=8);
        let csi = random_csi(&mut rng, k, paths, wavelength);
        let layout = random_layout(&mut rng, n, 4.0 * wavelength, 0.5 * wavelength);
        let sample = channel::sample_prv(&csi, &mut rng);
        let (pt, sigma2) = (1.0, 10f64.powf(rng.random_range(-3.0..0.0)));
        let c_of = |l: &AntennaLayout| -> Result<Vec<f64>> {
            let h = channel::channel_from_prv(l, &csi, &sample)?.h.expect("channel present");
            Ok(zf::gram_inverse_diag(&h)?.c)
        };
        let Ok(c0) = c_of(&layout) else { continue };
        let w = zf::water_fill(&c0, pt, sigma2).map_err(|e| e.to_string())?;
        if (0..k).any(|i| (w.nu - sigma2 * c0[i]).abs() < 1e-3 * w.nu) {
            continue;
        }
        let g = grad_mc::instantaneous_rate_gradient(&layout, &csi, &sample, pt, sigma2).map_err(|e| e.to_string())?;
        let step = 1e-6 * wavelength;
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for axis in Axis::BOTH {
            for i in 0..n {
                let r = |d: f64| -> std::result::Result<f64, String> {
                    let c = c_of(&layout.perturbed(axis, i, d)).map_err(|e| e.to_string())?;
                    zf::rate_from_c(&c, pt, sigma2).map_err(|e| e.to_string())
                };
                fd.push((r(step)? - r(-step)?) / (2.0 * step));
                an.push(g.grad(axis)[i]);
            }
        }
        worst = worst.max(coordinate_error(&an, &fd));
        done += 1;
    }
    check(worst < 1e-4, format!("{instances} instances, worst per-coordinate error {worst:.1e}"))
}

fn de_fixed_point_suite(instances: usize) -> std::result::Result<String, String> {
    let mut rng = rng(4);
    let opts = NewtonOptions::default();
    let (mut residual, mut diag, mut iters) = (0.0f64, 0.0f64, 0);
    for _ in 0..instances {
        let k = rng.random_range(1..=6);
        let n = rng.random_range(k..=10);
        let paths = rng.random_range(2..=20);
        let csi = random_csi(&mut rng, k, paths, 1.0);
        let layout = random_layout(&mut rng, n, 5.0, 0.5);
        let g = grad_de::autocorrelations(&layout, &csi);
        let sol = grad_de::c_infinity_from_g(&g, &opts).map_err(|e| e.to_string())?;
        for user in 0..k {
            let eps: Vec<f64> = (0..k).map(|l| sol.epsilon[(user, l)]).collect();
            let (r, _) = grad_de::newton_system(&g, user, &eps).map_err(|e| e.to_string())?;
            residual = residual.max(r.iter().map(|v| v * v).sum::<f64>().sqrt());
            diag = diag.max((sol.epsilon[(user, user)] - sol.c_inf[user]).abs() / sol.c_inf[user]);
        }
        iters = iters.max(sol.newton_iters.iter().copied().max().unwrap_or(0));
    }
    let mut closed = 0.0f64;
    for (n, k, gv) in [(4usize, 1usize, 2.0), (8, 3, 1.7), (16, 12, 1e-3)] {
        let g = vec![CMatrix::identity(n, n) * C64::new(gv, 0.0); k];
        let sol = grad_de::c_infinity_from_g(&g, &opts).map_err(|e| e.to_string())?;
        let exact = 1.0 / (gv * (n - k + 1) as f64);
        closed = sol.c_inf.iter().fold(closed, |m, c| m.max((c - exact).abs() / exact));
    }
    check(
        residual < 1e-3 && iters <= 50 && diag < 1e-6 && closed < 1e-9,
        format!(
            "{instances} instances, residual {residual:.1e}, max iterations {iters}, diagonal identity {diag:.1e}, closed forms {closed:.1e}"
        ),
    )
}

fn de_gradient_suite(instances: usize) -> std::result::Result<String, String> {
    let mut rng = rng(5);
    let opts = NewtonOptions::default();
    let wavelength = 0.01;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(k..=8);
        let paths = rng.random_range(2..=15);
        let csi = random_csi(&mut rng, k, paths, wavelength);
        let layout = random_layout(&mut rng, n, 4.0 * wavelength, 0.5 * wavelength);
        let sol = grad_de::c_infinity_with(&layout, &csi, &opts).map_err(|e| e.to_string())?;
        let (dx, dy) = grad_de::c_infinity_jacobian(&layout, &csi, &sol).map_err(|e| e.to_string())?;
        let step = 1e-5 * wavelength;
        for (axis, jac) in [(Axis::X, &dx), (Axis::Y, &dy)] {
            let mut fd = vec![vec![0.0; n]; k];
            for i in 0..n {
                let c = |d: f64| grad_de::c_infinity_with(&layout.perturbed(axis, i, d), &csi, &opts).map(|s| s.c_inf);
                let (up, dn) = (c(step).map_err(|e| e.to_string())?, c(-step).map_err(|e| e.to_string())?);
                for user in 0..k {
                    fd[user][i] = (up[user] - dn[user]) / (2.0 * step);
                }
            }
            for (user, row) in fd.iter().enumerate() {
                let an: Vec<f64> = (0..n).map(|i| jac[(user, i)]).collect();
                worst = worst.max(coordinate_error(&an, row));
            }
        }
    }
    check(worst < 1e-3, format!("{instances} instances, worst per-coordinate error {worst:.1e}"))
}

fn clt_suite(draws: usize) -> std::result::Result<String, String> {
    let mut rng = rng(6);
    let csi = random_csi(&mut rng, 2, 6, 1.0);
    let user = 0;
    let base = ReceiveSideSpec::random_for_user(&csi, user, 64, 5.0, &mut rng).map_err(|e| e.to_string())?;
    let b: Vec<f64> = csi.user_path_ranges()[user].clone().map(|l| csi.power()[(l, user)]).collect();
    let lk = b.len();
    let mut second = CMatrix::zeros(lk, lk);
    let mut pseudo = vec![C64::new(0.0, 0.0); lk];
    for _ in 0..draws {
        let spec = base.with_redrawn_phases(&mut rng);
        let psi = channel::receive_side_oracle_sample(&spec, &csi, user, &mut rng).map_err(|e| e.to_string())?;
        for a in 0..lk {
            pseudo[a] += psi[a] * psi[a];
            for c in 0..lk {
                second[(a, c)] += psi[a] * psi[c].conj();
            }
        }
    }
    let m = draws as f64;
    let (mut var, mut pse, mut cross) = (0.0f64, 0.0f64, 0.0f64);
    for a in 0..lk {
        var = var.max((second[(a, a)].re / m - b[a]).abs() / b[a]);
        pse = pse.max(pseudo[a].norm() / m / b[a]);
        for c in (0..lk).filter(|&c| c != a) {
            cross = cross.max(second[(a, c)].norm() / m / (b[a] * b[c]).sqrt());
        }
    }
    check(
        var < 0.10 && pse < 0.05 && cross < 0.05,
        format!("{draws} draws, variance err {var:.3}, pseudo-variance {pse:.3}, cross-path {cross:.3}"),
    )
}

fn laga_suite(runs: u64) -> std::result::Result<String, String> {
    let wavelength = 0.01;
    let region = MovingRegion::square(3.0 * wavelength, 0.5 * wavelength).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    for seed in 0..runs {
        let mut r = SeedTree::new(70 + seed).rng(Purpose::Scenario, 0);
        let csi = random_csi(&mut r, 2, 4, wavelength);
        let init = laga::upa_sparse_init(4, &region, 0.6).map_err(|e| e.to_string())?;
        let mut cfg = LagaConfig::defaults_for(wavelength);
        // Run until the penalty is negligible next to the rate.
        cfg.eps_r = 1e-9 * wavelength;
        cfg.seed = seed;
        let (pt, sigma2) = (1.0, 1e-2 * csi.user_power(0));
        let (_, trace) = laga::laga_optimize(&init, &region, &csi, pt, sigma2, &cfg).map_err(|e| e.to_string())?;
        if !trace.iterates.iter().all(|x| region.strictly_contains(x) && laga::barrier_value(x, &region).is_feasible()) {
            problems.push(format!("run {seed}: infeasible iterate"));
        }
        let decreasing = trace
            .rows
            .windows(2)
            .any(|w| w[0].stage == w[1].stage && (w[1].f < w[0].f || w[0].f_new < w[0].f));
        if decreasing {
            problems.push(format!("run {seed}: objective decreased within a stage"));
        }
        let penalty = (trace.final_mu * trace.final_barrier).abs() / trace.final_rate.abs();
        if penalty >= 1e-6 {
            problems.push(format!("run {seed}: final penalty ratio {penalty:.1e}"));
        }
        if trace.final_rate < trace.initial_rate {
            problems.push(format!("run {seed}: rate decreased"));
        }
    }
    check(problems.is_empty(), format!("{runs} toy runs{}", if problems.is_empty() { String::new() } else { format!(": {}", problems.join("; ")) }))
}

fn consistency_suite() -> std::result::Result<String, String> {
    let layout = laga::upa_sparse_midway(8, &MovingRegion::square(4.0, 0.5).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let gaps = |paths: usize| -> std::result::Result<Vec<f64>, String> {
        let mut out = Vec::new();
        for seed in 0..8u64 {
            let mut r = SeedTree::new(seed).rng(Purpose::Scenario, 0);
            let csi = random_csi(&mut r, 4, paths, 1.0);
            let de = grad_de::c_infinity(&layout, &csi).map_err(|e| e.to_string())?;
            let tree = SeedTree::new(seed).child(Purpose::Evaluation, 0);
            let mut mean = [0.0; 4];
            for i in 0..200u64 {
                let s = channel::sample_prv(&csi, &mut tree.rng(Purpose::PathResponse, i));
                let h = channel::channel_from_prv(&layout, &csi, &s).map_err(|e| e.to_string())?.h.expect("channel present");
                let c = zf::gram_inverse_diag(&h).map_err(|e| e.to_string())?.c;
                for (m, v) in mean.iter_mut().zip(&c) {
                    *m += v / 200.0;
                }
            }
            out.extend((0..4).map(|k| (mean[k] - de.c_inf[k]).abs() / de.c_inf[k]));
        }
        Ok(out)
    };
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let many = gaps(100)?;
    let worst = many.iter().copied().fold(0.0, f64::max);
    let (m100, m10) = (median(many), median(gaps(10)?));
    check(
        worst < 0.05 && m100 < m10,
        format!("worst gap at 100 paths {worst:.3}, median gap {m100:.3} (100 paths) vs {m10:.3} (10 paths)"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_matches_closed_form_cases() {
        assert_eq!(enumeration_nu(&[1.0, 1.0], 2.0, 1.0), Some(2.0));
        // Second user above the water level stays inactive.
        assert_eq!(enumeration_nu(&[1.0, 10.0], 1.0, 1.0), Some(2.0));
    }

    #[test]
    fn kkt_suite_passes_and_rejects_tampered_level() {
        assert!(kkt_suite(&zf::water_fill, 100).is_ok());
        let tampered = tampered_water_fill(0.01);
        assert!(kkt_suite(&tampered, 100).is_err());
    }

    #[test]
    fn table_lists_every_suite() {
        let report = ValidationReport {
            level: Level::Quick,
            suites: vec![
                SuiteResult {
                    name: "a",
                    passed: true,
                    detail: "fine".into(),
                    elapsed: Duration::from_millis(5),
                },
                SuiteResult {
                    name: "b",
                    passed: false,
                    detail: "broken".into(),
                    elapsed: Duration::ZERO,
                },
            ],
        };
        let table = report.to_table();
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("PASS") && table.contains("FAIL"));
        assert!(!report.all_passed());
        assert_eq!("FULL".parse::<Level>().unwrap(), Level::Full);
    }

    #[test]
    fn quick_suites_pass() {
        let report = run(Level::Quick);
        println!("{}", report.to_table());
        assert!(report.all_passed(), "{}", report.to_table());
    }
}
