//! Field-response statistical channel model.
//!
//! A downlink channel from `N` movable antennas to `K` single-antenna users is
//! described on the large timescale by a set of `L` transmit wavevectors and an
//! `L × K` angular power matrix. Each user owns a contiguous block of the
//! paths. On the small timescale, the path responses of user `k` are drawn as
//! `ψ_k ~ CN(0, Diag(b_k))` and the channel is `H = Qᴴ Ψ` where
//! `Q[l, n] = exp(j r_nᵀ κ_l)` is the transmit field-response matrix.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, RMatrix, C64};

/// Tolerance on `|κ| ≤ 2π/λ`.
const WAVEVECTOR_SLACK: f64 = 1e-9;

/// 2D transmit wavevector in radians per meter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wavevector {
    pub kx: f64,
    pub ky: f64,
}

impl Wavevector {
    pub fn new(kx: f64, ky: f64) -> Self {
        Self { kx, ky }
    }

    /// Plane wave leaving the array plane at `elevation` (measured from the
    /// plane) and `azimuth`.
    pub fn from_angles(wavelength: f64, azimuth: f64, elevation: f64) -> Self {
        let k = 2.0 * PI / wavelength;
        Self {
            kx: k * elevation.cos() * azimuth.cos(),
            ky: k * elevation.cos() * azimuth.sin(),
        }
    }

    pub fn component(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.kx,
            Axis::Y => self.ky,
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.kx.hypot(self.ky)
    }
}

/// Coordinate axis of the antenna plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];
}

/// Large-timescale channel knowledge: wavevectors plus angular power spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticalCsi {
    wavelength: f64,
    wavevectors: Vec<Wavevector>,
    power: RMatrix,
    user_path_ranges: Vec<Range<usize>>,
    los_index: Vec<Option<usize>>,
}

impl StatisticalCsi {
    /// Builds and validates a CSI description.
    ///
    /// `user_path_ranges` are zero-based half-open ranges that must tile
    /// `0..L` in user order. `los_index` holds a global path index per user.
    pub fn new(
        wavelength: f64,
        wavevectors: Vec<Wavevector>,
        power: RMatrix,
        user_path_ranges: Vec<Range<usize>>,
        los_index: Vec<Option<usize>>,
    ) -> Result<Self> {
        let csi = Self {
            wavelength,
            wavevectors,
            power,
            user_path_ranges,
            los_index,
        };
        csi.validate()?;
        Ok(csi)
    }

    /// Convenience constructor from per-user path lists.
    pub fn from_users(wavelength: f64, users: &[UserPaths]) -> Result<Self> {
        let l_total: usize = users.iter().map(|u| u.wavevectors.len()).sum();
        let k = users.len();
        let mut wavevectors = Vec::with_capacity(l_total);
        let mut power = RMatrix::zeros(l_total, k);
        let mut ranges = Vec::with_capacity(k);
        let mut los = Vec::with_capacity(k);
        for (ki, user) in users.iter().enumerate() {
            if user.wavevectors.len() != user.power.len() {
                return Err(Error::InvalidInput(format!(
                    "user {ki}: {} wavevectors but {} powers",
                    user.wavevectors.len(),
                    user.power.len()
                )));
            }
            let start = wavevectors.len();
            for (l, (wv, &b)) in user.wavevectors.iter().zip(&user.power).enumerate() {
                wavevectors.push(*wv);
                power[(start + l, ki)] = b;
            }
            ranges.push(start..wavevectors.len());
            los.push(user.los.map(|i| start + i));
        }
        Self::new(wavelength, wavevectors, power, ranges, los)
    }

    fn validate(&self) -> Result<()> {
        let l = self.wavevectors.len();
        let k = self.user_path_ranges.len();
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidInput("wavelength must be positive".into()));
        }
        if k == 0 || l == 0 {
            return Err(Error::InvalidInput("need at least one user and one path".into()));
        }
        if self.power.nrows() != l || self.power.ncols() != k {
            return Err(Error::InvalidInput(format!(
                "power matrix is {}x{}, expected {l}x{k}",
                self.power.nrows(),
                self.power.ncols()
            )));
        }
        if self.los_index.len() != k {
            return Err(Error::InvalidInput("los_index needs one entry per user".into()));
        }
        let limit = 2.0 * PI / self.wavelength * (1.0 + WAVEVECTOR_SLACK);
        for (i, wv) in self.wavevectors.iter().enumerate() {
            if !(wv.kx.is_finite() && wv.ky.is_finite()) || wv.magnitude() > limit {
                return Err(Error::InvalidInput(format!(
                    "wavevector {i} has magnitude {} above 2π/λ",
                    wv.magnitude()
                )));
            }
        }
        let mut expected_start = 0;
        for (ki, r) in self.user_path_ranges.iter().enumerate() {
            if r.start != expected_start || r.end <= r.start || r.end > l {
                return Err(Error::InvalidInput(format!(
                    "user {ki}: path range {r:?} does not continue a tiling of 0..{l}"
                )));
            }
            expected_start = r.end;
        }
        if expected_start != l {
            return Err(Error::InvalidInput(format!("path ranges cover 0..{expected_start}, not 0..{l}")));
        }
        for ki in 0..k {
            let r = &self.user_path_ranges[ki];
            let mut any_positive = false;
            for li in 0..l {
                let b = self.power[(li, ki)];
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(Error::InvalidInput(format!("power[{li}][{ki}] = {b} is not a finite non-negative value")));
                }
                if b > 0.0 {
                    if !r.contains(&li) {
                        return Err(Error::InvalidInput(format!(
                            "power[{li}][{ki}] is positive outside user {ki}'s path range"
                        )));
                    }
                    any_positive = true;
                }
            }
            if !any_positive {
                return Err(Error::InvalidInput(format!("user {ki} has no positive path power")));
            }
            if let Some(los) = self.los_index[ki] {
                if !r.contains(&los) {
                    return Err(Error::InvalidInput(format!("user {ki}: LoS index {los} outside its path range")));
                }
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavevectors(&self) -> &[Wavevector] {
        &self.wavevectors
    }

    /// The `L × K` angular power matrix `B`.
    pub fn power(&self) -> &RMatrix {
        &self.power
    }

    pub fn user_path_ranges(&self) -> &[Range<usize>] {
        &self.user_path_ranges
    }

    pub fn los_index(&self) -> &[Option<usize>] {
        &self.los_index
    }

    pub fn num_paths(&self) -> usize {
        self.wavevectors.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_path_ranges.len()
    }

    /// Total expected power `Σ_l b_{lk}` of user `k`.
    pub fn user_power(&self, k: usize) -> f64 {
        self.power.column(k).sum()
    }

    /// Per-user path list, the inverse of [`StatisticalCsi::from_users`].
    pub fn user_paths(&self, k: usize) -> UserPaths {
        let r = self.user_path_ranges[k].clone();
        UserPaths {
            wavevectors: self.wavevectors[r.clone()].to_vec(),
            power: r.clone().map(|l| self.power[(l, k)]).collect(),
            los: self.los_index[k].map(|i| i - r.start),
        }
    }

    /// `κ^v` for all paths along one axis.
    pub fn axis_components(&self, axis: Axis) -> Vec<f64> {
        self.wavevectors.iter().map(|w| w.component(axis)).collect()
    }

    /// Copy with the power matrix multiplied entrywise by per-path factors.
    fn scaled_paths(&self, factor: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut power = self.power.clone();
        for k in 0..self.num_users() {
            for l in self.user_path_ranges[k].clone() {
                power[(l, k)] *= factor(l, k);
            }
        }
        Self::new(
            self.wavelength,
            self.wavevectors.clone(),
            power,
            self.user_path_ranges.clone(),
            self.los_index.clone(),
        )
    }

    /// Serializes to the fixed-order JSON document with 17 significant digits
    /// per float.
    pub fn to_json_string(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{{\"wavelength\": {}, \"wavevectors\": [", fmt_float(self.wavelength));
        for (i, w) in self.wavevectors.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "[{}, {}]", fmt_float(w.kx), fmt_float(w.ky));
        }
        s.push_str("], \"power\": [");
        for l in 0..self.num_paths() {
            if l > 0 {
                s.push_str(", ");
            }
            s.push('[');
            for k in 0..self.num_users() {
                if k > 0 {
                    s.push_str(", ");
                }
                s.push_str(&fmt_float(self.power[(l, k)]));
            }
            s.push(']');
        }
        s.push_str("], \"user_path_ranges\": [");
        for (i, r) in self.user_path_ranges.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "[{}, {}]", r.start, r.end);
        }
        s.push_str("], \"los_index\": [");
        for (i, los) in self.los_index.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            match los {
                Some(v) => {
                    let _ = write!(s, "{v}");
                }
                None => s.push_str("null"),
            }
        }
        s.push_str("]}");
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let wire: CsiWire = serde_json::from_str(text)?;
        let l = wire.power.len();
        let k = wire.user_path_ranges.len();
        if wire.power.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidInput("power rows must have one entry per user".into()));
        }
        let power = DMatrix::from_fn(l, k, |i, j| wire.power[i][j]);
        Self::new(
            wire.wavelength,
            wire.wavevectors.iter().map(|w| Wavevector::new(w[0], w[1])).collect(),
            power,
            wire.user_path_ranges.iter().map(|r| r[0]..r[1]).collect(),
            wire.los_index,
        )
    }
}

impl Serialize for StatisticalCsi {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CsiWire {
            wavelength: self.wavelength,
            wavevectors: self.wavevectors.iter().map(|w| [w.kx, w.ky]).collect(),
            power: (0..self.num_paths())
                .map(|l| (0..self.num_users()).map(|k| self.power[(l, k)]).collect())
                .collect(),
            user_path_ranges: self.user_path_ranges.iter().map(|r| [r.start, r.end]).collect(),
            los_index: self.los_index.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StatisticalCsi {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = CsiWire::deserialize(deserializer)?;
        let text = serde_json::to_string(&wire).map_err(serde::de::Error::custom)?;
        Self::from_json_str(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CsiWire {
    wavelength: f64,
    wavevectors: Vec<[f64; 2]>,
    power: Vec<Vec<f64>>,
    user_path_ranges: Vec<[usize; 2]>,
    los_index: Vec<Option<usize>>,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One user's share of a [`StatisticalCsi`], with user-local path indices.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPaths {
    pub wavevectors: Vec<Wavevector>,
    pub power: Vec<f64>,
    pub los: Option<usize>,
}

/// Antenna coordinates in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaLayout {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl AntennaLayout {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "layout needs equal, non-zero coordinate counts (got {} and {})",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("layout coordinates must be finite".into()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn axis(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }

    pub fn position(&self, n: usize) -> (f64, f64) {
        (self.x[n], self.y[n])
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x.iter().map(|v| v + dx).collect(),
            y: self.y.iter().map(|v| v + dy).collect(),
        }
    }

    /// `self + step · (gx, gy)`.
    pub fn stepped(&self, step: f64, gx: &[f64], gy: &[f64]) -> Self {
        Self {
            x: self.x.iter().zip(gx).map(|(v, g)| v + step * g).collect(),
            y: self.y.iter().zip(gy).map(|(v, g)| v + step * g).collect(),
        }
    }

    /// Copy with one coordinate moved by `delta`.
    pub fn perturbed(&self, axis: Axis, n: usize, delta: f64) -> Self {
        let mut out = self.clone();
        match axis {
            Axis::X => out.x[n] += delta,
            Axis::Y => out.y[n] += delta,
        }
        out
    }

    /// Euclidean distance between the stacked coordinate vectors.
    pub fn distance(&self, other: &Self) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.y.iter().zip(&other.y))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for n in 0..self.len() {
            for i in n + 1..self.len() {
                best = best.min((self.x[n] - self.x[i]).hypot(self.y[n] - self.y[i]));
            }
        }
        best
    }
}

/// Rectangular moving region centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingRegion {
    pub sx: f64,
    pub sy: f64,
    pub min_spacing: f64,
}

impl MovingRegion {
    pub fn new(sx: f64, sy: f64, min_spacing: f64) -> Result<Self> {
        let r = Self { sx, sy, min_spacing };
        r.validate()?;
        Ok(r)
    }

    pub fn square(side: f64, min_spacing: f64) -> Result<Self> {
        Self::new(side, side, min_spacing)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sx > 0.0 && self.sy > 0.0 && self.min_spacing > 0.0) {
            return Err(Error::InvalidInput(format!("moving region needs positive sizes and spacing: {self:?}")));
        }
        Ok(())
    }

    pub fn half_extent(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.sx / 2.0,
            Axis::Y => self.sy / 2.0,
        }
    }

    /// Strict interior test for the region and spacing constraints.
    pub fn strictly_contains(&self, layout: &AntennaLayout) -> bool {
        crate::laga::barrier_value(layout, self).is_feasible()
    }
}

/// One small-timescale draw of the path responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    /// `L × K` block-diagonal path-response matrix `Ψ`.
    pub psi: CMatrix,
    /// `N × K` channel `H = QᴴΨ`, once computed for a layout.
    pub h: Option<CMatrix>,
}

/// Transmit field-response matrix `Q` (`L × N`).
pub fn transmit_frm(layout: &AntennaLayout, csi: &StatisticalCsi) -> CMatrix {
    let wv = csi.wavevectors();
    CMatrix::from_fn(wv.len(), layout.len(), |l, n| {
        let (x, y) = layout.position(n);
        C64::from_polar(1.0, x * wv[l].kx + y * wv[l].ky)
    })
}

/// Draws `Ψ` with in-block entries `CN(0, b_{lk})`.
pub fn sample_prv<R: Rng + ?Sized>(csi: &StatisticalCsi, rng: &mut R) -> ChannelSample {
    let mut psi = CMatrix::zeros(csi.num_paths(), csi.num_users());
    for (k, range) in csi.user_path_ranges().iter().enumerate() {
        for l in range.clone() {
            let sd = (csi.power()[(l, k)] / 2.0).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            psi[(l, k)] = C64::new(sd * re, sd * im);
        }
    }
    ChannelSample { psi, h: None }
}

/// Fills in `h = QᴴΨ` for `layout`.
pub fn channel_from_prv(layout: &AntennaLayout, csi: &StatisticalCsi, sample: &ChannelSample) -> Result<ChannelSample> {
    check_psi_shape(csi, &sample.psi)?;
    let q = transmit_frm(layout, csi);
    Ok(ChannelSample {
        psi: sample.psi.clone(),
        h: Some(channel_matrix(&q, csi, &sample.psi)),
    })
}

pub(crate) fn check_psi_shape(csi: &StatisticalCsi, psi: &CMatrix) -> Result<()> {
    if psi.nrows() != csi.num_paths() || psi.ncols() != csi.num_users() {
        return Err(Error::InvalidInput(format!(
            "path-response matrix is {}x{}, expected {}x{}",
            psi.nrows(),
            psi.ncols(),
            csi.num_paths(),
            csi.num_users()
        )));
    }
    Ok(())
}

/// `QᴴΨ`, touching only each user's own path block.
pub(crate) fn channel_matrix(q: &CMatrix, csi: &StatisticalCsi, psi: &CMatrix) -> CMatrix {
    let n_ant = q.ncols();
    let mut h = CMatrix::zeros(n_ant, csi.num_users());
    for (k, range) in csi.user_path_ranges().iter().enumerate() {
        for n in 0..n_ant {
            let mut acc = C64::new(0.0, 0.0);
            for l in range.clone() {
                acc += q[(l, n)].conj() * psi[(l, k)];
            }
            h[(n, k)] = acc;
        }
    }
    h
}

/// Channel autocorrelation `G_k = Qᴴ Diag(b_k) Q` of user `k`.
pub fn user_autocorrelation(layout: &AntennaLayout, csi: &StatisticalCsi, k: usize) -> Result<CMatrix> {
    if k >= csi.num_users() {
        return Err(Error::InvalidInput(format!("user index {k} out of range")));
    }
    let q = transmit_frm(layout, csi);
    Ok(autocorrelation_from_frm(&q, csi, k))
}

pub(crate) fn autocorrelation_from_frm(q: &CMatrix, csi: &StatisticalCsi, k: usize) -> CMatrix {
    let n_ant = q.ncols();
    let mut g = CMatrix::zeros(n_ant, n_ant);
    for l in csi.user_path_ranges()[k].clone() {
        let b = csi.power()[(l, k)];
        if b == 0.0 {
            continue;
        }
        for m2 in 0..n_ant {
            let right = q[(l, m2)] * b;
            for m1 in 0..n_ant {
                g[(m1, m2)] += q[(l, m1)].conj() * right;
            }
        }
    }
    g
}

/// Ensemble-average LoS and NLoS power per user.
pub fn expected_los_nlos_power(ensemble: &[StatisticalCsi]) -> Result<(f64, f64)> {
    if ensemble.is_empty() {
        return Err(Error::InvalidInput("Rician rescaling needs a non-empty ensemble".into()));
    }
    let (mut los, mut nlos, mut count) = (0.0, 0.0, 0usize);
    for csi in ensemble {
        for k in 0..csi.num_users() {
            let idx = csi.los_index()[k]
                .ok_or_else(|| Error::InvalidInput(format!("ensemble user {k} has no LoS path")))?;
            let b_los = csi.power()[(idx, k)];
            los += b_los;
            nlos += csi.user_power(k) - b_los;
            count += 1;
        }
    }
    Ok((los / count as f64, nlos / count as f64))
}

/// Squared LoS/NLoS scale factors that set the LoS-to-NLoS ratio to `beta`
/// while keeping the total expected power.
pub fn rician_factors(p_los: f64, p_nlos: f64, beta: f64) -> Result<(f64, f64)> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("Rician factor must be finite and non-negative, got {beta}")));
    }
    if p_los <= 0.0 || p_nlos <= 0.0 {
        return Err(Error::Degenerate(format!(
            "expected LoS power {p_los} and NLoS power {p_nlos} must both be positive"
        )));
    }
    let total = p_los + p_nlos;
    Ok((total / p_los * beta / (1.0 + beta), total / p_nlos / (1.0 + beta)))
}

/// Rescales LoS and NLoS path powers of `csi` to a Rician factor `beta`,
/// using expected powers taken over `ensemble`.
pub fn rician_rescale(csi: &StatisticalCsi, beta: f64, ensemble: &[StatisticalCsi]) -> Result<StatisticalCsi> {
    if csi.los_index().iter().any(Option::is_none) {
        return Err(Error::InvalidInput("every user needs a LoS path for Rician rescaling".into()));
    }
    let (p_los, p_nlos) = expected_los_nlos_power(ensemble)?;
    let (eta_los_sq, eta_nlos_sq) = rician_factors(p_los, p_nlos, beta)?;
    let los = csi.los_index().to_vec();
    csi.scaled_paths(|l, k| if los[k] == Some(l) { eta_los_sq } else { eta_nlos_sq })
}

/// Receive-side description of one user: the path-response matrix `Σ_k`
/// linking its transmit paths to its local receive paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveSideSpec {
    /// `L_k^t × L_k^r` complex path-response matrix.
    pub prm: CMatrix,
    /// 3D receive wavevectors, one per receive path (rad/m).
    pub receive_wavevectors: Vec<[f64; 3]>,
    /// Radius of the user's local movement region in meters.
    pub local_radius: f64,
}

impl ReceiveSideSpec {
    /// Builds a receive side for user `k` of `csi` with `receive_paths` paths.
    ///
    /// Magnitudes split each transmit path's power over the receive paths with
    /// random positive weights, phases are independent and uniform, so that
    /// `Σ_i |Σ_{li}|² = b_{kl}` exactly.
    pub fn random_for_user<R: Rng + ?Sized>(
        csi: &StatisticalCsi,
        k: usize,
        receive_paths: usize,
        local_radius: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if receive_paths == 0 || k >= csi.num_users() {
            return Err(Error::InvalidInput("need a valid user and at least one receive path".into()));
        }
        let range = csi.user_path_ranges()[k].clone();
        let mut prm = CMatrix::zeros(range.len(), receive_paths);
        for (row, l) in range.enumerate() {
            let b = csi.power()[(l, k)];
            let weights: Vec<f64> = (0..receive_paths).map(|_| rng.random_range(0.5..1.5)).collect();
            let total: f64 = weights.iter().sum();
            for (i, w) in weights.iter().enumerate() {
                let phase = rng.random_range(0.0..2.0 * PI);
                prm[(row, i)] = C64::from_polar((b * w / total).sqrt(), phase);
            }
        }
        let kr = 2.0 * PI / csi.wavelength();
        let receive_wavevectors = (0..receive_paths)
            .map(|_| {
                let az: f64 = rng.random_range(-PI..PI);
                let el: f64 = rng.random_range(-PI / 2.0..PI / 2.0);
                [kr * el.cos() * az.cos(), kr * el.cos() * az.sin(), kr * el.sin()]
            })
            .collect();
        let spec = Self {
            prm,
            receive_wavevectors,
            local_radius,
        };
        spec.validate_against(csi, k)?;
        Ok(spec)
    }

    /// Copy with every entry's phase redrawn uniformly, magnitudes kept.
    pub fn with_redrawn_phases<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut out = self.clone();
        for z in out.prm.iter_mut() {
            *z = C64::from_polar(z.norm(), rng.random_range(0.0..2.0 * PI));
        }
        out
    }

    pub fn receive_path_count(&self) -> usize {
        self.prm.ncols()
    }

    /// Checks that the row energies of `Σ_k` reproduce user `k`'s powers.
    pub fn validate_against(&self, csi: &StatisticalCsi, k: usize) -> Result<()> {
        let range = csi.user_path_ranges()[k].clone();
        if self.prm.nrows() != range.len() || self.receive_wavevectors.len() != self.prm.ncols() {
            return Err(Error::InvalidInput("receive-side dimensions do not match the user".into()));
        }
        for (row, l) in range.enumerate() {
            let energy: f64 = self.prm.row(row).iter().map(|z| z.norm_sqr()).sum();
            let b = csi.power()[(l, k)];
            if (energy - b).abs() > 1e-9 * b.max(1e-300) && (energy - b).abs() > 1e-300 {
                return Err(Error::InvalidInput(format!(
                    "receive path energy {energy} differs from target power {b} on path {l}"
                )));
            }
        }
        Ok(())
    }
}

/// One explicit draw `ψ_{kl} = Σ_i Σ_{k,li} exp(jρ_i)` with i.i.d. uniform
/// receive phases.
pub fn receive_side_oracle_sample<R: Rng + ?Sized>(
    spec: &ReceiveSideSpec,
    csi: &StatisticalCsi,
    k: usize,
    rng: &mut R,
) -> Result<Vec<C64>> {
    spec.validate_against(csi, k)?;
    let phases: Vec<C64> = (0..spec.receive_path_count())
        .map(|_| C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
        .collect();
    Ok((0..spec.prm.nrows())
        .map(|l| spec.prm.row(l).iter().zip(&phases).map(|(s, p)| s * p).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedTree};
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn random_csi(seed: u64, k: usize, paths: usize, wavelength: f64) -> StatisticalCsi {
        let mut rng = SeedTree::new(seed).rng(Purpose::Scenario, 0);
        let users: Vec<UserPaths> = (0..k)
            .map(|_| UserPaths {
                wavevectors: (0..paths)
                    .map(|_| {
                        Wavevector::from_angles(wavelength, rng.random_range(-PI..PI), rng.random_range(0.0..PI / 2.0))
                    })
                    .collect(),
                power: (0..paths).map(|_| rng.random_range(0.1..2.0)).collect(),
                los: Some(0),
            })
            .collect();
        StatisticalCsi::from_users(wavelength, &users).unwrap()
    }

    fn single_path(wavelength: f64, kx: f64, ky: f64, b: f64) -> StatisticalCsi {
        StatisticalCsi::from_users(
            wavelength,
            &[UserPaths {
                wavevectors: vec![Wavevector::new(kx, ky)],
                power: vec![b],
                los: Some(0),
            }],
        )
        .unwrap()
    }

    #[test]
    fn frm_at_origin_is_all_ones() {
        let csi = random_csi(1, 2, 3, 1.0);
        let layout = AntennaLayout::new(vec![0.0], vec![0.0]).unwrap();
        let q = transmit_frm(&layout, &csi);
        assert_eq!(q.shape(), (6, 1));
        for z in q.iter() {
            assert_eq!(*z, C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn frm_half_wavelength_phase() {
        let lambda = 0.06;
        let csi = single_path(lambda, 2.0 * PI / lambda, 0.0, 1.0);
        let layout = AntennaLayout::new(vec![lambda / 2.0], vec![0.0]).unwrap();
        let q = transmit_frm(&layout, &csi);
        assert!((q[(0, 0)] - C64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn frm_matches_scalar_loop() {
        let csi = random_csi(3, 3, 4, 0.06);
        let layout = AntennaLayout::new(vec![0.01, -0.02, 0.05], vec![0.0, 0.03, -0.04]).unwrap();
        let q = transmit_frm(&layout, &csi);
        for l in 0..csi.num_paths() {
            for n in 0..layout.len() {
                let w = csi.wavevectors()[l];
                let phase = layout.x()[n] * w.kx + layout.y()[n] * w.ky;
                let expected = C64::new(phase.cos(), phase.sin());
                assert!((q[(l, n)] - expected).norm() < 1e-14);
                assert!((q[(l, n)].norm() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_power_entry_samples_to_zero() {
        let users = [UserPaths {
            wavevectors: vec![Wavevector::new(1.0, 0.0), Wavevector::new(0.0, 1.0)],
            power: vec![0.0, 1.0],
            los: None,
        }];
        let csi = StatisticalCsi::from_users(1.0, &users).unwrap();
        let mut rng = SeedTree::new(5).rng(Purpose::PathResponse, 0);
        for _ in 0..100 {
            let s = sample_prv(&csi, &mut rng);
            assert_eq!(s.psi[(0, 0)], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn out_of_block_entries_are_zero_and_draws_reproduce() {
        let csi = random_csi(9, 3, 2, 0.06);
        let a = sample_prv(&csi, &mut SeedTree::new(11).rng(Purpose::PathResponse, 0));
        let b = sample_prv(&csi, &mut SeedTree::new(11).rng(Purpose::PathResponse, 0));
        assert_eq!(a, b);
        for k in 0..3 {
            for l in 0..6 {
                if !csi.user_path_ranges()[k].contains(&l) {
                    assert_eq!(a.psi[(l, k)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn sampled_moments_match_power() {
        let csi = single_path(1.0, 0.0, 0.0, 2.0);
        let mut rng = SeedTree::new(21).rng(Purpose::PathResponse, 0);
        let n = 100_000;
        let draws: Vec<C64> = (0..n).map(|_| sample_prv(&csi, &mut rng).psi[(0, 0)]).collect();
        let mean: C64 = draws.iter().sum::<C64>() / n as f64;
        // std of the complex mean is sqrt(b/n).
        assert!(mean.norm() < 4.0 * (2.0 / n as f64).sqrt(), "mean {mean}");
        let var_re = draws.iter().map(|z| (z.re - mean.re).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var_re - 1.0).abs() < 0.05, "var {var_re}");
    }

    #[test]
    fn channel_at_origin_sums_path_responses() {
        let csi = random_csi(4, 2, 3, 0.06);
        let layout = AntennaLayout::new(vec![0.0], vec![0.0]).unwrap();
        let s = sample_prv(&csi, &mut SeedTree::new(2).rng(Purpose::PathResponse, 0));
        let filled = channel_from_prv(&layout, &csi, &s).unwrap();
        let h = filled.h.unwrap();
        for k in 0..2 {
            let expected: C64 = s.psi.column(k).iter().sum();
            assert!((h[(0, k)] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_single_path_is_conjugated_frm() {
        let csi = single_path(0.06, 30.0, -40.0, 1.0);
        let layout = AntennaLayout::new(vec![0.01, 0.02], vec![0.03, -0.01]).unwrap();
        let sample = ChannelSample {
            psi: CMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            h: None,
        };
        let h = channel_from_prv(&layout, &csi, &sample).unwrap().h.unwrap();
        let q = transmit_frm(&layout, &csi);
        for n in 0..2 {
            assert!((h[(n, 0)] - q[(0, n)].conj()).norm() < 1e-15);
        }
    }

    #[test]
    fn channel_matches_triple_loop_product() {
        let csi = random_csi(6, 3, 4, 0.06);
        let layout = AntennaLayout::new(vec![0.0, 0.04, -0.03, 0.02], vec![0.01, -0.05, 0.02, 0.06]).unwrap();
        let s = sample_prv(&csi, &mut SeedTree::new(8).rng(Purpose::PathResponse, 1));
        let h = channel_from_prv(&layout, &csi, &s).unwrap().h.unwrap();
        let q = transmit_frm(&layout, &csi);
        for n in 0..4 {
            for k in 0..3 {
                let mut acc = C64::new(0.0, 0.0);
                for l in 0..csi.num_paths() {
                    acc += q[(l, n)].conj() * s.psi[(l, k)];
                }
                assert!((h[(n, k)] - acc).norm() <= 1e-12 * acc.norm().max(1.0));
            }
        }
    }

    #[test]
    fn channel_rejects_wrong_shape() {
        let csi = random_csi(6, 2, 2, 0.06);
        let layout = AntennaLayout::new(vec![0.0], vec![0.0]).unwrap();
        let bad = ChannelSample {
            psi: CMatrix::zeros(3, 2),
            h: None,
        };
        assert!(matches!(channel_from_prv(&layout, &csi, &bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn autocorrelation_trace_and_rank_one() {
        let users = [UserPaths {
            wavevectors: vec![Wavevector::new(10.0, 5.0), Wavevector::new(-20.0, 3.0), Wavevector::new(0.0, 40.0)],
            power: vec![1.0, 0.5, 1.5],
            los: Some(0),
        }];
        let csi = StatisticalCsi::from_users(0.06, &users).unwrap();
        let layout = AntennaLayout::new(vec![0.0, 0.03, 0.06, 0.09], vec![0.0, 0.01, -0.02, 0.05]).unwrap();
        let g = user_autocorrelation(&layout, &csi, 0).unwrap();
        assert!((crate::linalg::real_trace(&g) - 12.0).abs() < 1e-12);
        assert!(crate::linalg::hermitian_defect(&g) < 1e-12);

        let single = single_path(0.06, 10.0, 5.0, 2.5);
        let g1 = user_autocorrelation(&layout, &single, 0).unwrap();
        let q = transmit_frm(&layout, &single);
        for a in 0..4 {
            for b in 0..4 {
                let expected = q[(0, a)].conj() * q[(0, b)] * 2.5;
                assert!((g1[(a, b)] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn autocorrelation_matches_empirical_covariance() {
        let csi = random_csi(12, 2, 5, 0.06);
        let layout = AntennaLayout::new(vec![0.0, 0.03, -0.03], vec![0.0, 0.02, 0.04]).unwrap();
        let g = user_autocorrelation(&layout, &csi, 1).unwrap();
        let q = transmit_frm(&layout, &csi);
        let mut rng = SeedTree::new(13).rng(Purpose::PathResponse, 0);
        let n = 10_000;
        let mut acc = CMatrix::zeros(3, 3);
        for _ in 0..n {
            let s = sample_prv(&csi, &mut rng);
            let h = channel_matrix(&q, &csi, &s.psi);
            let col = h.column(1);
            acc += col * col.adjoint();
        }
        acc /= C64::new(n as f64, 0.0);
        let scale = crate::linalg::real_trace(&g) / 3.0;
        for (a, b) in g.iter().zip(acc.iter()) {
            assert!((a - b).norm() < 0.05 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn rician_fixed_point_and_closed_form() {
        let (los, nlos) = rician_factors(1.0, 1.0, 10.0).unwrap();
        assert!((los - 20.0 / 11.0).abs() < 1e-15);
        assert!((nlos - 2.0 / 11.0).abs() < 1e-15);

        let csi = random_csi(14, 3, 4, 0.06);
        let (p_los, p_nlos) = expected_los_nlos_power(std::slice::from_ref(&csi)).unwrap();
        let same = rician_rescale(&csi, p_los / p_nlos, std::slice::from_ref(&csi)).unwrap();
        for (a, b) in same.power().iter().zip(csi.power().iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn rician_preserves_ensemble_power_and_sets_ratio() {
        let ensemble: Vec<_> = (0..20).map(|s| random_csi(100 + s, 2, 5, 0.06)).collect();
        let beta = 7.5;
        let scaled: Vec<_> = ensemble.iter().map(|c| rician_rescale(c, beta, &ensemble).unwrap()).collect();
        let (l0, n0) = expected_los_nlos_power(&ensemble).unwrap();
        let (l1, n1) = expected_los_nlos_power(&scaled).unwrap();
        assert!(((l1 + n1) - (l0 + n0)).abs() <= 1e-9 * (l0 + n0));
        assert!((l1 / n1 - beta).abs() <= 1e-9 * beta);
    }

    #[test]
    fn rician_degenerate_ensemble() {
        let users = [UserPaths {
            wavevectors: vec![Wavevector::new(1.0, 0.0)],
            power: vec![1.0],
            los: Some(0),
        }];
        let csi = StatisticalCsi::from_users(1.0, &users).unwrap();
        assert!(matches!(
            rician_rescale(&csi, 10.0, std::slice::from_ref(&csi)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn single_receive_path_has_unit_modulus() {
        let csi = single_path(0.06, 1.0, 0.0, 1.0);
        let mut rng = SeedTree::new(3).rng(Purpose::ReceiveOracle, 0);
        let spec = ReceiveSideSpec::random_for_user(&csi, 0, 1, 0.5, &mut rng).unwrap();
        for _ in 0..20 {
            let draw = receive_side_oracle_sample(&spec, &csi, 0, &mut rng).unwrap();
            assert!((draw[0].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn csi_validation_rejects_bad_inputs() {
        let wv = vec![Wavevector::new(1.0, 0.0), Wavevector::new(0.0, 1.0)];
        let mut power = RMatrix::zeros(2, 2);
        power[(0, 0)] = 1.0;
        power[(0, 1)] = 1.0; // outside user 1's block
        power[(1, 1)] = 1.0;
        assert!(StatisticalCsi::new(1.0, wv.clone(), power, vec![0..1, 1..2], vec![None, None]).is_err());
        let mut power = RMatrix::zeros(2, 2);
        power[(0, 0)] = 1.0;
        assert!(StatisticalCsi::new(1.0, wv.clone(), power, vec![0..1, 1..2], vec![None, None]).is_err());
        let too_fast = vec![Wavevector::new(7.0, 0.0)];
        assert!(StatisticalCsi::new(1.0, too_fast, RMatrix::from_element(1, 1, 1.0), vec![0..1], vec![None]).is_err());
    }

    #[test]
    fn json_document_layout() {
        let csi = random_csi(30, 2, 2, 0.06);
        let text = csi.to_json_string();
        let keys = ["\"wavelength\"", "\"wavevectors\"", "\"power\"", "\"user_path_ranges\"", "\"los_index\""];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let back = StatisticalCsi::from_json_str(&text).unwrap();
        assert_eq!(back, csi);
        let via_serde: StatisticalCsi = serde_json::from_str(&serde_json::to_string(&csi).unwrap()).unwrap();
        assert_eq!(via_serde, csi);
    }

    proptest! {
        #[test]
        fn json_round_trip(seed in 0u64..10_000, k in 1usize..4, paths in 1usize..5) {
            let csi = random_csi(seed, k, paths, 0.0598);
            let back = StatisticalCsi::from_json_str(&csi.to_json_string()).unwrap();
            prop_assert_eq!(back, csi);
        }

        #[test]
        fn autocorrelation_is_hermitian_psd(seed in 0u64..10_000, n in 1usize..6) {
            let csi = random_csi(seed, 2, 4, 0.06);
            let mut rng = SeedTree::new(seed).rng(Purpose::Scenario, 1);
            let layout = AntennaLayout::new(
                (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
                (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
            ).unwrap();
            for k in 0..2 {
                let g = user_autocorrelation(&layout, &csi, k).unwrap();
                let tr = crate::linalg::real_trace(&g);
                prop_assert!(crate::linalg::hermitian_defect(&g) < 1e-12 * tr.max(1.0));
                prop_assert!((tr - n as f64 * csi.user_power(k)).abs() < 1e-9 * tr);
                let eig = g.symmetric_eigen();
                prop_assert!(eig.eigenvalues.min() >= -1e-10 * tr);
            }
        }
    }
}
