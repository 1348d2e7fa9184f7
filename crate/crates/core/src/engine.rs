//! Common interface over the rate/gradient engines used by the optimizer.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::channel::{AntennaLayout, ChannelSample, StatisticalCsi};
use crate::error::Result;
use crate::grad_de::{self, DeSolution, NewtonOptions};
use crate::grad_mc::{self, RateGradient};
use crate::linalg::RMatrix;
use crate::rng::{Purpose, SeedTree};
use crate::zf;

/// A surrogate of the ergodic sum rate with its position gradient.
///
/// `iteration` is the optimizer's inner-iteration counter. Engines whose
/// objective depends on random draws may use it to pick their draws; within
/// one iteration the objective must be a deterministic function of the
/// layout.
pub trait RateEngine: Send + Sync {
    fn rate(&self, layout: &AntennaLayout, iteration: usize) -> Result<f64>;
    fn rate_and_gradient(&self, layout: &AntennaLayout, iteration: usize) -> Result<RateGradient>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[serde(alias = "MC")]
    Mc,
    #[default]
    #[serde(alias = "DE")]
    De,
}

impl std::str::FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(Self::Mc),
            "de" => Ok(Self::De),
            other => Err(format!("unknown engine `{other}` (expected mc or de)")),
        }
    }
}

/// Whether Monte-Carlo draws are fixed for a whole run or redrawn per
/// iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPolicy {
    #[default]
    FixedSeed,
    PerIteration,
}

/// Sample-average engine over `samples` draws.
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    pub csi: StatisticalCsi,
    pub pt: f64,
    pub sigma2: f64,
    pub samples: usize,
    pub seed: SeedTree,
    pub policy: SamplingPolicy,
}

impl MonteCarlo {
    fn seed_for(&self, iteration: usize) -> SeedTree {
        match self.policy {
            SamplingPolicy::FixedSeed => self.seed,
            SamplingPolicy::PerIteration => self.seed.child(Purpose::Iteration, iteration as u64),
        }
    }
}

impl RateEngine for MonteCarlo {
    fn rate(&self, layout: &AntennaLayout, iteration: usize) -> Result<f64> {
        grad_mc::mc_rate(layout, &self.csi, self.pt, self.sigma2, self.samples, &self.seed_for(iteration))
    }

    fn rate_and_gradient(&self, layout: &AntennaLayout, iteration: usize) -> Result<RateGradient> {
        grad_mc::mc_rate_and_gradient(layout, &self.csi, self.pt, self.sigma2, self.samples, &self.seed_for(iteration))
    }
}

/// Deterministic-equivalent engine; no random draws.
///
/// Newton solves start from the auxiliaries of the previous call, which
/// are usually close, and fall back to a cold start if that fails. Results
/// agree with [`grad_de::de_rate_with`] to the Newton tolerance. The last
/// gradient point and the last rate-only point are kept, so revisiting
/// either reproduces it exactly.
#[derive(Debug)]
pub struct DeterministicEquivalent {
    pub csi: StatisticalCsi,
    pub pt: f64,
    pub sigma2: f64,
    pub newton: NewtonOptions,
    recent: Mutex<Recent>,
}

#[derive(Debug, Default)]
struct Recent {
    gradient: Option<(AntennaLayout, DeSolution)>,
    rate: Option<(AntennaLayout, DeSolution)>,
    last: Option<RMatrix>,
}

impl DeterministicEquivalent {
    pub fn new(csi: StatisticalCsi, pt: f64, sigma2: f64, newton: NewtonOptions) -> Self {
        Self {
            csi,
            pt,
            sigma2,
            newton,
            recent: Mutex::new(Recent::default()),
        }
    }

    fn solve(&self, layout: &AntennaLayout, for_gradient: bool) -> Result<DeSolution> {
        let mut recent = self.recent.lock().unwrap_or_else(|e| e.into_inner());
        let hit = recent
            .gradient
            .iter()
            .chain(recent.rate.iter())
            .find(|(l, _)| l == layout)
            .map(|(_, sol)| sol.clone());
        let sol = match hit {
            Some(sol) => sol,
            None => {
                let g = grad_de::autocorrelations(layout, &self.csi);
                let sol = grad_de::c_infinity_warm(&g, recent.last.as_ref(), &self.newton)?;
                recent.last = Some(sol.epsilon.clone());
                sol
            }
        };
        let slot = if for_gradient { &mut recent.gradient } else { &mut recent.rate };
        *slot = Some((layout.clone(), sol.clone()));
        Ok(sol)
    }
}

impl RateEngine for DeterministicEquivalent {
    fn rate(&self, layout: &AntennaLayout, _iteration: usize) -> Result<f64> {
        zf::rate_from_c(&self.solve(layout, false)?.c_inf, self.pt, self.sigma2)
    }

    fn rate_and_gradient(&self, layout: &AntennaLayout, _iteration: usize) -> Result<RateGradient> {
        let sol = self.solve(layout, true)?;
        grad_de::gradient_from_solution(layout, &self.csi, self.pt, self.sigma2, &sol)
    }
}

/// Rate of one pinned channel draw (instantaneous-CSI baseline).
#[derive(Debug, Clone)]
pub struct Instantaneous {
    pub csi: StatisticalCsi,
    pub pt: f64,
    pub sigma2: f64,
    pub sample: ChannelSample,
}

impl RateEngine for Instantaneous {
    fn rate(&self, layout: &AntennaLayout, _iteration: usize) -> Result<f64> {
        grad_mc::instantaneous_rate(layout, &self.csi, &self.sample, self.pt, self.sigma2)
    }

    fn rate_and_gradient(&self, layout: &AntennaLayout, _iteration: usize) -> Result<RateGradient> {
        grad_mc::instantaneous_rate_gradient(layout, &self.csi, &self.sample, self.pt, self.sigma2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_kind_parses() {
        assert_eq!("MC".parse::<EngineKind>().unwrap(), EngineKind::Mc);
        assert_eq!("de".parse::<EngineKind>().unwrap(), EngineKind::De);
        assert!("xx".parse::<EngineKind>().is_err());
        assert_eq!(serde_json::from_str::<EngineKind>("\"mc\"").unwrap(), EngineKind::Mc);
    }

    #[test]
    fn warm_started_engine_matches_cold_solves() {
        use crate::channel::{UserPaths, Wavevector};
        let users: Vec<UserPaths> = (0..3)
            .map(|k| UserPaths {
                wavevectors: (0..5)
                    .map(|l| Wavevector::from_angles(1.0, 0.7 * k as f64 + 0.31 * l as f64, 0.2 + 0.1 * l as f64))
                    .collect(),
                power: (0..5).map(|l| 1.0 / (1.0 + l as f64)).collect(),
                los: Some(0),
            })
            .collect();
        let csi = StatisticalCsi::from_users(1.0, &users).unwrap();
        let engine = DeterministicEquivalent::new(csi.clone(), 1.0, 0.01, NewtonOptions::default());
        let mut layout = AntennaLayout::new(vec![0.0, 0.6, 1.3, 0.2], vec![0.0, 0.1, -0.4, 0.9]).unwrap();
        for step in 0..5 {
            let warm = engine.rate_and_gradient(&layout, step).unwrap();
            let cold = grad_de::de_gradient(&layout, &csi, 1.0, 0.01).unwrap();
            assert!((warm.rate - cold.rate).abs() < 1e-9 * cold.rate);
            for (a, b) in warm.grad_x.iter().zip(&cold.grad_x) {
                assert!((a - b).abs() < 1e-6 * cold.norm());
            }
            assert!((engine.rate(&layout, step).unwrap() - cold.rate).abs() < 1e-9 * cold.rate);
            layout = layout.perturbed(crate::channel::Axis::X, step % 4, 0.05);
        }
    }
}
