//! Monte-Carlo surrogate of the ergodic sum rate and its position gradient.
//!
//! For one channel draw the ZF rate depends on the layout only through
//! `c = diag(C_H⁻¹)`. With `Ξ = ΨC_H⁻¹` (columns `ξ_k`) the derivative of `c_k`
//! along axis `v` at antenna `n` is the Hermitian form
//! `q̃_nᴴ (ξ_kξ_kᴴ ⊙ Λ^v) q̃_n`, where `Λ^v[a, b] = j(κ_a^v − κ_b^v)`.
//! Expanding the Hadamard product gives
//! `j (s₁ s̄₀ − s₀ s̄₁) = −2 Im(s₁ s̄₀)` with `s₀ = (QᴴΞ)[n, k]` and
//! `s₁ = (Qᴴ Diag(κ^v) Ξ)[n, k]`, which [`instantaneous_rate_gradient`] uses.
//! The `L × L` form is kept in [`rate_gradient_via_f`].

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, AntennaLayout, Axis, ChannelSample, StatisticalCsi};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::rng::{Purpose, SeedTree};
use crate::zf::{self, WaterFillResult};

/// Surrogate rate and its gradient with respect to antenna coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateGradient {
    pub rate: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    /// Largest imaginary part dropped from a quadratic form, relative to the
    /// gradient norm.
    pub imag_residual: f64,
    /// Channel draws replaced because their Gram matrix was singular.
    pub resamples: usize,
}

impl RateGradient {
    pub fn grad(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.grad_x,
            Axis::Y => &self.grad_y,
        }
    }

    pub fn norm(&self) -> f64 {
        self.grad_x.iter().chain(&self.grad_y).map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// `Λ^v[a, b] = j(κ_a^v − κ_b^v)`.
pub fn lambda_matrix(csi: &StatisticalCsi, axis: Axis) -> CMatrix {
    let kappa = csi.axis_components(axis);
    CMatrix::from_fn(kappa.len(), kappa.len(), |a, b| C64::new(0.0, kappa[a] - kappa[b]))
}

/// `Ξ = ΨC_H⁻¹`, whose columns are the `ξ_k`.
pub fn xi_matrix(psi: &CMatrix, gram_inv: &CMatrix) -> CMatrix {
    psi * gram_inv
}

/// `F = ΨC_H⁻¹ Diag(p) C_H⁻¹Ψᴴ = Σ_k p_k ξ_kξ_kᴴ`.
pub fn f_matrix(psi: &CMatrix, gram_inv: &CMatrix, p: &[f64]) -> CMatrix {
    let xi = xi_matrix(psi, gram_inv);
    let mut weighted = xi.clone();
    for (k, &pk) in p.iter().enumerate() {
        for z in weighted.column_mut(k).iter_mut() {
            *z *= pk;
        }
    }
    weighted * xi.adjoint()
}

/// Per-layout constants shared by every channel draw.
struct LayoutTerms {
    q: CMatrix,
    kappa: [Vec<f64>; 2],
}

impl LayoutTerms {
    fn new(layout: &AntennaLayout, csi: &StatisticalCsi) -> Self {
        Self {
            q: channel::transmit_frm(layout, csi),
            kappa: [csi.axis_components(Axis::X), csi.axis_components(Axis::Y)],
        }
    }
}

struct SampleOutcome {
    rate: f64,
    grad: [Vec<f64>; 2],
    imag: f64,
}

fn sample_rate(terms: &LayoutTerms, csi: &StatisticalCsi, psi: &CMatrix, pt: f64, sigma2: f64) -> Result<f64> {
    let h = channel::channel_matrix(&terms.q, csi, psi);
    let gram = zf::gram_inverse_diag(&h)?;
    zf::rate_from_c(&gram.c, pt, sigma2)
}

fn sample_gradient(
    terms: &LayoutTerms,
    csi: &StatisticalCsi,
    psi: &CMatrix,
    pt: f64,
    sigma2: f64,
) -> Result<SampleOutcome> {
    let h = channel::channel_matrix(&terms.q, csi, psi);
    let gram = zf::gram_inverse_diag(&h)?;
    let water = zf::water_fill(&gram.c, pt, sigma2)?;
    let weights = zf::rate_derivative_c(&water);
    let s0 = &h * &gram.gram_inv;
    let n_ant = terms.q.ncols();
    let mut grad = [vec![0.0; n_ant], vec![0.0; n_ant]];
    let mut imag = 0.0f64;
    for (ai, kappa) in terms.kappa.iter().enumerate() {
        // Qᴴ Diag(κ) Ψ, one user block at a time.
        let mut weighted_h = CMatrix::zeros(n_ant, csi.num_users());
        for (k, range) in csi.user_path_ranges().iter().enumerate() {
            for n in 0..n_ant {
                let mut acc = C64::new(0.0, 0.0);
                for l in range.clone() {
                    acc += terms.q[(l, n)].conj() * (psi[(l, k)] * kappa[l]);
                }
                weighted_h[(n, k)] = acc;
            }
        }
        let s1 = weighted_h * &gram.gram_inv;
        for n in 0..n_ant {
            let mut form = C64::new(0.0, 0.0);
            for k in water.active.iter().copied() {
                let a = s1[(n, k)] * s0[(n, k)].conj();
                let dc = C64::new(0.0, 1.0) * (a - a.conj());
                form += dc * weights[k];
            }
            grad[ai][n] = form.re;
            imag = imag.max(form.im.abs());
        }
    }
    Ok(SampleOutcome {
        rate: water.rate,
        grad,
        imag,
    })
}

/// Rate and exact gradient for one channel draw.
pub fn instantaneous_rate_gradient(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    sample: &ChannelSample,
    pt: f64,
    sigma2: f64,
) -> Result<RateGradient> {
    channel::check_psi_shape(csi, &sample.psi)?;
    let terms = LayoutTerms::new(layout, csi);
    let out = sample_gradient(&terms, csi, &sample.psi, pt, sigma2)?;
    Ok(finish(out.rate, out.grad, out.imag, 0))
}

fn finish(rate: f64, grad: [Vec<f64>; 2], imag: f64, resamples: usize) -> RateGradient {
    let [grad_x, grad_y] = grad;
    let mut rg = RateGradient {
        rate,
        grad_x,
        grad_y,
        imag_residual: 0.0,
        resamples,
    };
    let norm = rg.norm();
    rg.imag_residual = if norm > 0.0 { imag / norm } else { imag };
    rg
}

/// Same gradient through the explicit `L × L` matrices:
/// entry `(v, n)` is `(−1/(ν ln 2)) · q̃_nᴴ (F ⊙ Λ^v) q̃_n`.
pub fn rate_gradient_via_f(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    sample: &ChannelSample,
    pt: f64,
    sigma2: f64,
) -> Result<(RateGradient, WaterFillResult)> {
    let q = channel::transmit_frm(layout, csi);
    let h = channel::channel_matrix(&q, csi, &sample.psi);
    let gram = zf::gram_inverse_diag(&h)?;
    let water = zf::water_fill(&gram.c, pt, sigma2)?;
    let f = f_matrix(&sample.psi, &gram.gram_inv, &water.p);
    let scale = -1.0 / (water.nu * LN_2);
    let mut grad = [vec![0.0; layout.len()], vec![0.0; layout.len()]];
    let mut imag = 0.0f64;
    for (ai, axis) in Axis::BOTH.iter().enumerate() {
        let lambda = lambda_matrix(csi, *axis);
        let weighted = f.component_mul(&lambda);
        for n in 0..layout.len() {
            let col = q.column(n);
            let form = (col.adjoint() * &weighted * col)[(0, 0)];
            grad[ai][n] = scale * form.re;
            imag = imag.max((scale * form.im).abs());
        }
    }
    Ok((finish(water.rate, grad, imag, 0), water))
}

fn check_count(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    Ok(())
}

/// Draws sample `i`, replacing singular draws from the resample stream.
/// Returns the result and how many replacements were needed.
fn with_resampling<T>(
    csi: &StatisticalCsi,
    seed: &SeedTree,
    purpose: Purpose,
    i: usize,
    budget: usize,
    mut eval: impl FnMut(&CMatrix) -> Result<T>,
) -> Result<(T, usize)> {
    let mut draw = channel::sample_prv(csi, &mut seed.rng(purpose, i as u64));
    let mut replaced = 0;
    loop {
        match eval(&draw.psi) {
            Err(Error::SingularChannel { .. }) if replaced < budget => {
                replaced += 1;
                let stream = ((i as u64) << 20) | replaced as u64;
                draw = channel::sample_prv(csi, &mut seed.child(purpose, 0).rng(Purpose::Resample, stream));
            }
            Err(Error::SingularChannel { condition }) => {
                return Err(Error::Degenerate(format!(
                    "more than 10% of channel draws were singular (last condition estimate {condition:e})"
                )))
            }
            other => return other.map(|v| (v, replaced)),
        }
    }
}

fn resample_budget(m: usize) -> usize {
    m / 10
}

fn check_resamples(total: usize, m: usize) -> Result<()> {
    if total > resample_budget(m) {
        return Err(Error::Degenerate(format!(
            "{total} of {m} channel draws were singular and had to be replaced"
        )));
    }
    Ok(())
}

/// Sample-average rate and gradient over `m` draws from `seed`.
pub fn mc_rate_and_gradient(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    m: usize,
    seed: &SeedTree,
) -> Result<RateGradient> {
    check_count(m)?;
    let terms = LayoutTerms::new(layout, csi);
    let outcomes: Vec<Result<(SampleOutcome, usize)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            with_resampling(csi, seed, Purpose::PathResponse, i, resample_budget(m), |psi| {
                sample_gradient(&terms, csi, psi, pt, sigma2)
            })
        })
        .collect();
    let n_ant = layout.len();
    let (mut rate, mut grad, mut imag, mut resamples) = (0.0, [vec![0.0; n_ant], vec![0.0; n_ant]], 0.0f64, 0);
    for outcome in outcomes {
        let (out, replaced) = outcome?;
        rate += out.rate;
        for a in 0..2 {
            for (g, v) in grad[a].iter_mut().zip(&out.grad[a]) {
                *g += v;
            }
        }
        imag = imag.max(out.imag);
        resamples += replaced;
    }
    check_resamples(resamples, m)?;
    let inv = 1.0 / m as f64;
    for g in grad.iter_mut().flatten() {
        *g *= inv;
    }
    Ok(finish(rate * inv, grad, imag * inv, resamples))
}

/// Sample-average rate only; cheaper than [`mc_rate_and_gradient`].
pub fn mc_rate(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    m: usize,
    seed: &SeedTree,
) -> Result<f64> {
    Ok(sample_rates(layout, csi, pt, sigma2, m, seed, Purpose::PathResponse)?.0.iter().sum::<f64>() / m as f64)
}

/// Per-draw rates for `m` draws of stream `purpose`, plus the resample count.
pub(crate) fn sample_rates(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    pt: f64,
    sigma2: f64,
    m: usize,
    seed: &SeedTree,
    purpose: Purpose,
) -> Result<(Vec<f64>, usize)> {
    check_count(m)?;
    let terms = LayoutTerms::new(layout, csi);
    let outcomes: Vec<Result<(f64, usize)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            with_resampling(csi, seed, purpose, i, resample_budget(m), |psi| {
                sample_rate(&terms, csi, psi, pt, sigma2)
            })
        })
        .collect();
    let mut rates = Vec::with_capacity(m);
    let mut resamples = 0;
    for outcome in outcomes {
        let (r, replaced) = outcome?;
        rates.push(r);
        resamples += replaced;
    }
    check_resamples(resamples, m)?;
    Ok((rates, resamples))
}

/// Rate of one pinned draw.
pub fn instantaneous_rate(
    layout: &AntennaLayout,
    csi: &StatisticalCsi,
    sample: &ChannelSample,
    pt: f64,
    sigma2: f64,
) -> Result<f64> {
    channel::check_psi_shape(csi, &sample.psi)?;
    sample_rate(&LayoutTerms::new(layout, csi), csi, &sample.psi, pt, sigma2)
}
