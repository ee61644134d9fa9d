//! Fitting the stochastic model of a scenario to a measured operating point
//! (mean propagation delay and PDR).
//!
//! `loss_scale` comes from the closed-form survival probability of the
//! route; the contention mean starts from the gap between the target and the
//! deterministic floor and is then corrected against Monte Carlo runs, which
//! absorbs the small bias from truncating the Normal at zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::summarize;
use crate::scenario::Scenario;
use crate::sim::{simulate_path, PreparedPath, SimError, StochasticModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionTarget {
    pub mean_pd_ms: f64,
    pub pdr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    /// Contention stddev as a fraction of its mean.
    pub relative_stddev: f64,
    pub requests: u32,
    pub seeds: u64,
    pub iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            relative_stddev: 0.15,
            requests: 1000,
            seeds: 8,
            iterations: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StochasticFit {
    pub model: StochasticModel,
    /// Averages over the Monte Carlo runs of the final model.
    pub simulated_mean_pd_ms: f64,
    pub simulated_pdr: f64,
    pub expected_pdr: f64,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("target mean PD {target} ms is below the deterministic floor {floor} ms")]
    BelowFloor { target: f64, floor: f64 },
    #[error("target PDR {target} is out of reach: loss_scale 1 still delivers {best}")]
    PdrOutOfReach { target: f64, best: f64 },
    #[error("target PDR {0} must lie in (0, 1]")]
    BadPdr(f64),
}

/// Smallest `loss_scale` in [0, 1] whose expected PDR over `attenuations`
/// reaches `target`.
pub fn solve_loss_scale(attenuations: &[f64], target: f64) -> Result<f64, FitError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(FitError::BadPdr(target));
    }
    let pdr = |s: f64| {
        StochasticModel {
            loss_scale: s,
            ..StochasticModel::DETERMINISTIC
        }
        .expected_pdr(attenuations)
    };
    if target >= 1.0 {
        return Ok(0.0);
    }
    let best = pdr(1.0);
    if best > target {
        return Err(FitError::PdrOutOfReach { target, best });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if pdr(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn monte_carlo(
    scenario: &Scenario,
    path: &PreparedPath,
    model: StochasticModel,
    opts: &FitOptions,
) -> Result<(f64, f64), FitError> {
    let (mut pd, mut pdr) = (0.0, 0.0);
    for seed in 0..opts.seeds {
        let (rec, _) = simulate_path(&scenario.name, path, scenario, model, opts.requests, seed)?;
        let stats = summarize(&rec).expect("simulated sessions are well formed");
        pd += stats.mean_pd.unwrap_or(0.0);
        pdr += stats.pdr;
    }
    let n = opts.seeds.max(1) as f64;
    Ok((pd / n, pdr / n))
}

pub fn fit_stochastic(scenario: &Scenario, target: SessionTarget, opts: &FitOptions) -> Result<StochasticFit, FitError> {
    let path = PreparedPath::from_scenario(scenario)?;
    let loss_scale = solve_loss_scale(&path.link_attenuation, target.pdr)?;
    let floor = path.floor.min_propagation_delay();
    if target.mean_pd_ms < floor {
        return Err(FitError::BelowFloor {
            target: target.mean_pd_ms,
            floor,
        });
    }
    let with_mean = |mean: f64| StochasticModel {
        contention_mean: mean,
        contention_stddev: mean * opts.relative_stddev,
        loss_scale,
    };
    // Each probe's PD is the floor plus the average of two contention draws.
    let mut mean = target.mean_pd_ms - floor;
    for _ in 0..opts.iterations {
        let (sim_pd, _) = monte_carlo(scenario, &path, with_mean(mean), opts)?;
        mean = (mean + target.mean_pd_ms - sim_pd).max(0.0);
    }
    // Three decimals keeps shipped files readable without moving the fit.
    let round = |x: f64| (x * 1000.0).round() / 1000.0;
    let model = StochasticModel {
        contention_mean: round(mean),
        contention_stddev: round(mean * opts.relative_stddev),
        loss_scale: (loss_scale * 1e6).ceil() / 1e6,
    };
    let expected_pdr = model.expected_pdr(&path.link_attenuation);
    let (sim_pd, sim_pdr) = monte_carlo(scenario, &path, model, opts)?;
    Ok(StochasticFit {
        model,
        simulated_mean_pd_ms: sim_pd,
        simulated_pdr: sim_pdr,
        expected_pdr,
    })
}
