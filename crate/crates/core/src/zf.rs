//! Zero-forcing precoding with water-filling power allocation.
//!
//! Under ZF the sum rate depends on the channel only through
//! `c = diag((HᴴH)⁻¹)`, so everything downstream is phrased as the map
//! `c ↦ rate`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64};

/// Gram matrices whose 1-norm condition estimate exceeds this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// `C_H = HᴴH`, its inverse and `c = diag(C_H⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramData {
    pub gram: CMatrix,
    pub gram_inv: CMatrix,
    pub c: Vec<f64>,
    pub condition_estimate: f64,
}

pub fn gram_inverse_diag(h: &CMatrix) -> Result<GramData> {
    let (n, k) = h.shape();
    if k > n {
        return Err(Error::Unsupported(format!("zero-forcing needs K ≤ N, got K={k}, N={n}")));
    }
    let gram = h.adjoint() * h;
    let gram_inv = linalg::hermitian_pd_inverse(&gram).ok_or(Error::SingularChannel {
        condition: f64::INFINITY,
    })?;
    let condition_estimate = linalg::norm1(&gram) * linalg::norm1(&gram_inv);
    if !(condition_estimate <= CONDITION_LIMIT) {
        return Err(Error::SingularChannel {
            condition: condition_estimate,
        });
    }
    let c: Vec<f64> = (0..k).map(|i| gram_inv[(i, i)].re).collect();
    if c.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularChannel {
            condition: condition_estimate,
        });
    }
    Ok(GramData {
        gram,
        gram_inv,
        c,
        condition_estimate,
    })
}

/// Water-filling power allocation and the resulting sum rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterFillResult {
    pub p: Vec<f64>,
    pub nu: f64,
    pub active: Vec<usize>,
    pub rate: f64,
}

fn check_inputs(c: &[f64], pt: f64, sigma2: f64) -> Result<()> {
    if c.is_empty() {
        return Err(Error::InvalidInput("water-filling needs at least one user".into()));
    }
    if c.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("water-filling needs finite positive c".into()));
    }
    if !(pt > 0.0 && pt.is_finite() && sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidInput(format!("need P_T > 0 and σ² > 0, got {pt} and {sigma2}")));
    }
    Ok(())
}

/// Consumed power `Σ_k (ν − σ²c_k)₊` at water level `nu`.
fn used_power(c: &[f64], sigma2: f64, nu: f64) -> f64 {
    c.iter().map(|&ck| (nu - sigma2 * ck).max(0.0)).sum()
}

/// Solves `Σ_k (ν − σ²c_k)₊ = P_T` and allocates `p_k = (ν/c_k − σ²)₊`.
///
/// Bisection locates the active set; `ν` is then recomputed in closed form
/// over that set so the power budget holds to rounding. Users exactly at the
/// water level are treated as inactive.
pub fn water_fill(c: &[f64], pt: f64, sigma2: f64) -> Result<WaterFillResult> {
    check_inputs(c, pt, sigma2)?;
    let c_max = c.iter().copied().fold(f64::MIN, f64::max);
    let upper = pt + sigma2 * c_max;
    let (mut lo, mut hi) = (0.0, upper);
    let tol = 1e-12 * upper;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if used_power(c, sigma2, mid) > pt {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut nu = 0.5 * (lo + hi);
    for _ in 0..=c.len() {
        let active: Vec<usize> = (0..c.len()).filter(|&k| nu > sigma2 * c[k]).collect();
        let refined = (pt + sigma2 * active.iter().map(|&k| c[k]).sum::<f64>()) / active.len() as f64;
        if refined == nu {
            break;
        }
        let same_set = (0..c.len()).all(|k| (refined > sigma2 * c[k]) == (nu > sigma2 * c[k]));
        nu = refined;
        if same_set {
            break;
        }
    }
    Ok(allocation_at(c, sigma2, nu))
}

fn allocation_at(c: &[f64], sigma2: f64, nu: f64) -> WaterFillResult {
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
    WaterFillResult { p, nu, active, rate }
}

/// The sum-rate map `c ↦ R`.
pub fn rate_from_c(c: &[f64], pt: f64, sigma2: f64) -> Result<f64> {
    Ok(water_fill(c, pt, sigma2)?.rate)
}

/// `∂R/∂c_k = −p_k / (ν ln 2)`.
pub fn rate_derivative_c(water: &WaterFillResult) -> Vec<f64> {
    water.p.iter().map(|&p| -p / (water.nu * LN_2)).collect()
}

/// `W = H (HᴴH)⁻¹ Diag(p)^{1/2}`.
pub fn zf_precoder(h: &CMatrix, water: &WaterFillResult) -> Result<CMatrix> {
    let gram = gram_inverse_diag(h)?;
    if water.p.len() != h.ncols() {
        return Err(Error::InvalidInput("power vector length differs from user count".into()));
    }
    let mut w = h * &gram.gram_inv;
    for (k, &p) in water.p.iter().enumerate() {
        let s = C64::new(p.max(0.0).sqrt(), 0.0);
        for z in w.column_mut(k).iter_mut() {
            *z *= s;
        }
    }
    Ok(w)
}

/// `γ_k = |h_kᴴw_k|² / (Σ_{i≠k} |h_kᴴw_i|² + σ²)`.
pub fn sinr_check(h: &CMatrix, w: &CMatrix, sigma2: f64) -> Result<Vec<f64>> {
    if h.nrows() != w.nrows() || h.ncols() != w.ncols() {
        return Err(Error::InvalidInput(format!(
            "channel {:?} and precoder {:?} are not conformable",
            h.shape(),
            w.shape()
        )));
    }
    let hw = h.adjoint() * w;
    Ok((0..h.ncols())
        .map(|k| {
            let signal = hw[(k, k)].norm_sqr();
            let interference: f64 = (0..w.ncols()).filter(|&i| i != k).map(|i| hw[(k, i)].norm_sqr()).sum();
            signal / (interference + sigma2)
        })
        .collect())
}
