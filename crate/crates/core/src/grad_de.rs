//! Deterministic-equivalent surrogate of the ergodic sum rate.
//!
//! For each user `k` the auxiliaries `ε_k ∈ ℝ₊ᴷ` solve
//! `ε_l tr(G_l Y_k⁻¹) = 1` for every `l`, with `Y_k = I + Σ_{i≠k} ε_i G_i`.
//! Then `c_k^∞ = 1/tr(G_k Y_k⁻¹)` approximates `c_k` for many paths per
//! user, and the surrogate rate is the water-filling rate at `c^∞`.
//!
//! The Newton system is assembled in the `N × N` antenna domain: with
//! `P_l = Y⁻¹G_l`, the residual is `ε_l tr(P_l) − 1` and the Jacobian is
//! `J[l, i] = δ_{li} tr(P_l) − ε_l Re tr(P_l P_i) [i ≠ k]`. The equivalent
//! `L × L` path-domain assembly is [`newton_system_path_domain`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AntennaLayout, Axis, StatisticalCsi};
use crate::error::{Error, Result};
use crate::grad_mc::RateGradient;
use crate::linalg::{self, CMatrix, RMatrix, C64};
use crate::zf;

/// Stopping rule and iteration cap of the Newton solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Both the relative step and `‖𝒢‖₂` must fall below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 50,
        }
    }
}

const MAX_HALVINGS: usize = 30;

/// Solution of the fixed-point system for all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeSolution {
    /// Row `k` holds `ε_k`.
    pub epsilon: RMatrix,
    pub c_inf: Vec<f64>,
    pub newton_iters: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// Autocorrelation matrices `G_1 … G_K` for a layout.
pub fn autocorrelations(layout: &AntennaLayout, csi: &StatisticalCsi) -> Vec<CMatrix> {
    let q = channel::transmit_frm(layout, csi);
    (0..csi.num_users())
        .map(|k| channel::autocorrelation_from_frm(&q, csi, k))
        .collect()
}

fn check_g(g: &[CMatrix]) -> Result<usize> {
    let k = g.len();
    if k == 0 {
        return Err(Error::InvalidInput("need at least one autocorrelation matrix".into()));
    }
    let n = g[0].nrows();
    if g.iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::InvalidInput("autocorrelation matrices must all be N×N".into()));
    }
    if k > n {
        return Err(Error::Unsupported(format!("zero-forcing needs K ≤ N, got K={k}, N={n}")));
    }
    for (i, m) in g.iter().enumerate() {
        let tr = linalg::real_trace(m);
        if !(tr > 0.0) {
            return Err(Error::Degenerate(format!("user {i} has zero channel power")));
        }
    }
    Ok(n)
}

/// `Y = I + Σ_{i≠k} ε_i G_i`.
fn y_matrix(g: &[CMatrix], k: usize, eps: &[f64]) -> CMatrix {
    let n = g[0].nrows();
    let mut y = CMatrix::identity(n, n);
    for (i, gi) in g.iter().enumerate() {
        if i != k && eps[i] != 0.0 {
            y += gi * C64::new(eps[i], 0.0);
        }
    }
    y
}

fn y_inverse(g: &[CMatrix], k: usize, eps: &[f64]) -> Result<CMatrix> {
    linalg::hermitian_pd_inverse(&y_matrix(g, k, eps))
        .ok_or_else(|| Error::Numeric("grad_de: Cholesky factorization of Y_k failed".into()))
}

/// Residual `𝒢_k(ε)` and Jacobian, assembled in the antenna domain.
pub fn newton_system(g: &[CMatrix], k: usize, eps: &[f64]) -> Result<(Vec<f64>, RMatrix)> {
    let y_inv = y_inverse(g, k, eps)?;
    Ok(system_from_inverse(g, k, eps, &y_inv))
}

fn system_from_inverse(g: &[CMatrix], k: usize, eps: &[f64], y_inv: &CMatrix) -> (Vec<f64>, RMatrix) {
    let kk = g.len();
    let p: Vec<CMatrix> = g.iter().map(|gi| y_inv * gi).collect();
    let t: Vec<f64> = p.iter().map(linalg::real_trace).collect();
    let residual: Vec<f64> = (0..kk).map(|l| eps[l] * t[l] - 1.0).collect();
    // tr(P_l P_i) is symmetric in (l, i); it is the flat dot product of
    // P_lᵀ with P_i.
    let pt: Vec<CMatrix> = p.iter().map(|m| m.transpose()).collect();
    let mut cross = RMatrix::zeros(kk, kk);
    for l in 0..kk {
        for i in l..kk {
            let v: f64 = pt[l]
                .as_slice()
                .iter()
                .zip(p[i].as_slice())
                .map(|(a, b)| a.re * b.re - a.im * b.im)
                .sum();
            cross[(l, i)] = v;
            cross[(i, l)] = v;
        }
    }
    let mut jac = RMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&t));
    for l in 0..kk {
        for i in 0..kk {
            if i != k {
                jac[(l, i)] -= eps[l] * cross[(l, i)];
            }
        }
    }
    (residual, jac)
}

/// Residual and Jacobian through the path-domain matrices
/// `D_k = Q(I + QᴴDiag(B_kε)Q)⁻¹Qᴴ` and `X_k = Bᵀ(D_k ⊙ D_kᵀ)B_k`.
pub fn newton_system_path_domain(q: &CMatrix, b: &RMatrix, k: usize, eps: &[f64]) -> Result<(Vec<f64>, RMatrix)> {
    let (l_total, kk) = b.shape();
    let mut b_k = b.clone();
    b_k.column_mut(k).fill(0.0);
    let omega = &b_k * nalgebra::DVector::from_column_slice(eps);
    let n = q.ncols();
    let mut weighted_q = q.clone();
    for a in 0..l_total {
        for z in weighted_q.row_mut(a).iter_mut() {
            *z *= omega[a];
        }
    }
    let inner = CMatrix::identity(n, n) + q.adjoint() * weighted_q;
    let inner_inv = linalg::hermitian_pd_inverse(&inner)
        .ok_or_else(|| Error::Numeric("grad_de: path-domain inverse failed".into()))?;
    let d = q * inner_inv * q.adjoint();
    let diag_d = nalgebra::DVector::from_fn(l_total, |a, _| d[(a, a)].re);
    let bt_diag = b.transpose() * diag_d;
    let residual: Vec<f64> = (0..kk).map(|l| eps[l] * bt_diag[l] - 1.0).collect();
    let hadamard = RMatrix::from_fn(l_total, l_total, |a, c| (d[(a, c)] * d[(c, a)]).re);
    let x = b.transpose() * hadamard * &b_k;
    let mut jac = RMatrix::from_diagonal(&bt_diag);
    for l in 0..kk {
        for i in 0..kk {
            jac[(l, i)] -= eps[l] * x[(l, i)];
        }
    }
    Ok((residual, jac))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn solve_linear(jac: &RMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let lu = jac.clone().lu();
    let sol = lu
        .solve(&nalgebra::DVector::from_column_slice(rhs))
        .ok_or_else(|| Error::Numeric("grad_de: singular Newton Jacobian".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("grad_de: non-finite Newton step".into()));
    }
    Ok(sol.iter().copied().collect())
}

/// Result of one Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub epsilon: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton iteration for `ε_k`, started at zero.
///
/// A step is halved (up to 30 times) while it would leave the positive
/// orthant or increase `‖𝒢_k‖`.
pub fn newton_epsilon(g: &[CMatrix], k: usize, opts: &NewtonOptions) -> Result<NewtonOutcome> {
    newton_epsilon_from(g, k, &vec![0.0; g.len()], opts)
}

/// Same iteration started at `start`, which must be non-negative.
pub fn newton_epsilon_from(g: &[CMatrix], k: usize, start: &[f64], opts: &NewtonOptions) -> Result<NewtonOutcome> {
    check_g(g)?;
    if k >= g.len() {
        return Err(Error::InvalidInput(format!("user index {k} out of range")));
    }
    if start.len() != g.len() || start.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("Newton start must be a non-negative vector of length K".into()));
    }
    let mut eps = start.to_vec();
    let (mut residual, mut jac) = newton_system(g, k, &eps)?;
    let mut res_norm = norm2(&residual);
    for iter in 1..=opts.max_iters {
        let step = solve_linear(&jac, &residual)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = eps.iter().zip(&step).map(|(e, s)| e - scale * s).collect();
            if trial.iter().all(|&v| v > 0.0) {
                let (r, j) = newton_system(g, k, &trial)?;
                let rn = norm2(&r);
                if rn <= res_norm || rn < opts.tol * 1e-3 {
                    accepted = Some((trial, r, j, rn));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((trial, r, j, rn)) = accepted else {
            return Err(Error::Numeric(format!(
                "grad_de: Newton step for user {k} could not be damped into the positive orthant"
            )));
        };
        let change = norm2(&trial.iter().zip(&eps).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm2(&trial);
        eps = trial;
        residual = r;
        jac = j;
        res_norm = rn;
        if change < opts.tol && res_norm < opts.tol {
            return Ok(NewtonOutcome {
                epsilon: eps,
                iterations: iter,
                residual: res_norm,
            });
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iters,
        residual: res_norm,
    })
}

/// Solves every user's system and forms `c^∞`.
pub fn c_infinity_from_g(g: &[CMatrix], opts: &NewtonOptions) -> Result<DeSolution> {
    c_infinity_warm(g, None, opts)
}

/// Like [`c_infinity_from_g`], starting user `k`'s iteration at row `k` of
/// `start` and falling back to zero if that fails.
pub fn c_infinity_warm(g: &[CMatrix], start: Option<&RMatrix>, opts: &NewtonOptions) -> Result<DeSolution> {
    check_g(g)?;
    let kk = g.len();
    if start.is_some_and(|s| s.shape() != (kk, kk)) {
        return Err(Error::InvalidInput("warm start must be K×K".into()));
    }
    let rows: Vec<Result<(NewtonOutcome, f64)>> = (0..kk)
        .into_par_iter()
        .map(|k| {
            let warm = start.map(|s| s.row(k).iter().copied().collect::<Vec<f64>>());
            let out = match warm.map(|w| newton_epsilon_from(g, k, &w, opts)) {
                Some(Ok(out)) => out,
                _ => newton_epsilon(g, k, opts)?,
            };
            let y_inv = y_inverse(g, k, &out.epsilon)?;
            let tr = linalg::trace_of_product(&g[k], &y_inv).re;
            Ok((out, 1.0 / tr))
        })
        .collect();
    let mut sol = DeSolution {
        epsilon: RMatrix::zeros(kk, kk),
        c_inf: Vec::with_capacity(kk),
        newton_iters: Vec::with_capacity(kk),
        residuals: Vec::with_capacity(kk),
    };
    for (k, row) in rows.into_iter().enumerate() {
        let (out, c) = row?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Numeric(format!("grad_de: c∞ of user {k} is {c}")));
        }
        for (l, e) in out.epsilon.iter().enumerate() {
            sol.epsilon[(k, l)] = *e;
        }
        sol.c_inf.push(c);
        sol.newton_iters.push(out.iterations);
        sol.residuals.push(out.residual);
    }
    Ok(sol)
}

pub fn c_infinity(layout: &AntennaLayout, csi: &StatisticalCsi) -> Result<DeSolution> {
    c_infinity_with(layout, csi, &NewtonOptions::default())
}

pub fn c_infinity_with(layout: &AntennaLayout, csi: &StatisticalCsi, opts: &NewtonOptions) -> Result<DeSolution> {
    c_infinity_from_g(&autocorrelations(layout, csi), opts)
}

/// Water-filling rate at `c^∞`.
pub fn de_rate(layout: &AntennaLayout, csi: &StatisticalCsi, pt: f64, sigma2: f64) -> Result<f64> {
    de_rate_with(layout, csi, pt, sigma2, &NewtonOptions::default())
}

pub fn de_rate_with(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    opts: &NewtonOptions,
) -> Result<f64> {
    let sol = c_infinity_with(layout, csi, opts)?;
    zf::rate_from_c(&sol.c_inf, pt, sigma2)
}

/// `dc^∞/dx` and `dc^∞/dy`, each `K × N` (row `k` is `dc_k^∞/dv`).
pub fn c_infinity_jacobian(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    sol: &DeSolution,
) -> Result<(RMatrix, RMatrix)> {
    let q = channel::transmit_frm(layout, csi);
    let g: Vec<CMatrix> = (0..csi.num_users())
        .map(|k| channel::autocorrelation_from_frm(&q, csi, k))
        .collect();
    let kappa = [csi.axis_components(Axis::X), csi.axis_components(Axis::Y)];
    let rows: Vec<Result<[Vec<f64>; 2]>> = (0..csi.num_users())
        .into_par_iter()
        .map(|k| user_c_gradient(&q, &g, csi, &kappa, k, sol))
        .collect();
    let (kk, n) = (csi.num_users(), layout.len());
    let mut dx = RMatrix::zeros(kk, n);
    let mut dy = RMatrix::zeros(kk, n);
    for (k, row) in rows.into_iter().enumerate() {
        let [gx, gy] = row?;
        for i in 0..n {
            dx[(k, i)] = gx[i];
            dy[(k, i)] = gy[i];
        }
    }
    Ok((dx, dy))
}

/// `dc_k^∞/dv = −(c_k^∞)² (U (ε_k ⊙ z) + U[:, k])` where `U = 2 Re(F B)`,
/// `F[n, a] = M[a, n] E[n, a]`, `M = (I − D̃ Diag(ω)) Diag(jκ^v) Q`,
/// `E = Y⁻¹Qᴴ` and `Jᵀ z = χ̃` with `χ̃_i = tr(G_k Y⁻¹ G_i Y⁻¹) [i ≠ k]`.
fn user_c_gradient(
    q: &CMatrix,
    g: &[CMatrix],
    csi: &StatisticalCsi,
    kappa: &[Vec<f64>; 2],
    k: usize,
    sol: &DeSolution,
) -> Result<[Vec<f64>; 2]> {
    let kk = g.len();
    let (l_total, n) = q.shape();
    let eps: Vec<f64> = (0..kk).map(|i| sol.epsilon[(k, i)]).collect();
    let y_inv = y_inverse(g, k, &eps)?;
    let (_, jac) = system_from_inverse(g, k, &eps, &y_inv);
    let c = sol.c_inf[k];

    let p: Vec<CMatrix> = g.iter().map(|gi| &y_inv * gi).collect();
    let chi: Vec<f64> = (0..kk)
        .map(|i| if i == k { 0.0 } else { linalg::trace_of_product(&p[k], &p[i]).re })
        .collect();
    let z = solve_linear(&jac.transpose(), &chi)?;
    let ez: Vec<f64> = eps.iter().zip(&z).map(|(e, z)| e * z).collect();

    // ω = B_k ε (user k's column removed).
    let b = csi.power();
    let mut omega = vec![0.0; l_total];
    for (i, range) in csi.user_path_ranges().iter().enumerate() {
        if i == k {
            continue;
        }
        for a in range.clone() {
            omega[a] += b[(a, i)] * eps[i];
        }
    }
    let qy = q * &y_inv;
    let e = y_inv * q.adjoint();
    let mut out = [vec![0.0; n], vec![0.0; n]];
    for (ai, kv) in kappa.iter().enumerate() {
        // Qᴴ Diag(ω ⊙ jκ) Q
        let mut weighted_q = q.clone();
        for a in 0..l_total {
            let w = C64::new(0.0, omega[a] * kv[a]);
            for zq in weighted_q.row_mut(a).iter_mut() {
                *zq *= w;
            }
        }
        let middle = q.adjoint() * weighted_q;
        let correction = &qy * middle;
        // U[n, l] = 2 Re Σ_{a} M[a, n] E[n, a] b[a, l]; only path blocks carry power.
        let mut u = RMatrix::zeros(n, kk);
        for (l, range) in csi.user_path_ranges().iter().enumerate() {
            for a in range.clone() {
                let bal = b[(a, l)];
                if bal == 0.0 {
                    continue;
                }
                let jk = C64::new(0.0, kv[a]);
                for ni in 0..n {
                    let m = jk * q[(a, ni)] - correction[(a, ni)];
                    u[(ni, l)] += 2.0 * (m * e[(ni, a)]).re * bal;
                }
            }
        }
        for ni in 0..n {
            let mut acc = u[(ni, k)];
            for i in 0..kk {
                acc += u[(ni, i)] * ez[i];
            }
            out[ai][ni] = -c * c * acc;
        }
    }
    Ok(out)
}

/// Surrogate rate `ℛ(c^∞)` and its position gradient.
pub fn de_gradient(layout: &AntennaLayout, csi: &StatisticalCsi, pt: f64, sigma2: f64) -> Result<RateGradient> {
    de_gradient_with(layout, csi, pt, sigma2, &NewtonOptions::default())
}

pub fn de_gradient_with(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    opts: &NewtonOptions,
) -> Result<RateGradient> {
    gradient_from_solution(layout, csi, pt, sigma2, &c_infinity_with(layout, csi, opts)?)
}

/// Surrogate rate and gradient at an already solved `c^∞`.
pub fn gradient_from_solution(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    sol: &DeSolution,
) -> Result<RateGradient> {
    let water = zf::water_fill(&sol.c_inf, pt, sigma2)?;
    let weights = zf::rate_derivative_c(&water);
    let (dx, dy) = c_infinity_jacobian(layout, csi, sol)?;
    let combine = |d: &RMatrix| -> Vec<f64> {
        (0..layout.len())
            .map(|n| (0..csi.num_users()).map(|k| weights[k] * d[(k, n)]).sum())
            .collect()
    };
    Ok(RateGradient {
        rate: water.rate,
        grad_x: combine(&dx),
        grad_y: combine(&dy),
        imag_residual: 0.0,
        resamples: 0,
    })
}
