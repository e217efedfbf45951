//! Per-element global minimization of the separable model with optional
//! bisection on the resource multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgp::model::{ScanEntry, SeparableModel};
use crate::sgp::space::{CandidateKey, DesignSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BisectionConfig {
    pub tolerance: f64,
    pub max_halvings: usize,
    pub max_doublings: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_halvings: 60,
            max_doublings: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub keys: Vec<CandidateKey>,
    /// Model change `Σ_e (v_e − v_e^k)` of the returned design.
    pub model_change: f64,
    pub lambda_rho: f64,
    pub rho_mean: f64,
    /// Every `(λ_ρ, ρ_h)` evaluated, in evaluation order.
    pub trajectory: Vec<(f64, f64)>,
}

/// Minimizer of `value + λ_ρ ρ` over one element's entries. Entries are in
/// (type, grid) order, so a strict comparison keeps the lowest key on ties.
pub fn select(entries: &[ScanEntry], lambda_rho: f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, s) in entries.iter().enumerate() {
        let v = s.value + lambda_rho * s.rho;
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn select_all(scans: &[Vec<ScanEntry>], lambda_rho: f64) -> (Vec<usize>, f64) {
    let idx: Vec<usize> = scans.iter().map(|s| select(s, lambda_rho)).collect();
    let rho = idx.iter().zip(scans).map(|(&i, s)| s[i].rho).sum::<f64>() / scans.len() as f64;
    (idx, rho)
}

fn finish(
    scans: &[Vec<ScanEntry>],
    idx: &[usize],
    lambda_rho: f64,
    rho: f64,
    trajectory: Vec<(f64, f64)>,
) -> SubproblemSolution {
    SubproblemSolution {
        keys: idx.iter().zip(scans).map(|(&i, s)| s[i].key).collect(),
        model_change: idx.iter().zip(scans).map(|(&i, s)| s[i].value).sum(),
        lambda_rho,
        rho_mean: rho,
        trajectory,
    }
}

/// Resolves the subproblem from precomputed scans. Without a bound this is
/// a single pass at `λ_ρ = 0`; with one, the feasible end of the bisection
/// bracket is returned.
pub fn solve_scans(
    scans: &[Vec<ScanEntry>],
    rho_bar: Option<f64>,
    cfg: &BisectionConfig,
) -> Result<SubproblemSolution> {
    let (idx0, rho0) = select_all(scans, 0.0);
    let mut trajectory = vec![(0.0, rho0)];
    let Some(target) = rho_bar else {
        return Ok(finish(scans, &idx0, 0.0, rho0, trajectory));
    };
    if rho0 <= target {
        return Ok(finish(scans, &idx0, 0.0, rho0, trajectory));
    }
    let n = scans.len() as f64;
    let rho_min = scans
        .iter()
        .map(|s| s.iter().map(|e| e.rho).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / n;
    let rho_max = scans
        .iter()
        .map(|s| s.iter().map(|e| e.rho).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / n;
    if rho_min > target {
        return Err(Error::BisectionBracketFailure {
            target,
            min: rho_min,
            max: rho_max,
        });
    }

    // starting scale: value spread over solid-fraction spread
    let spread = scans
        .iter()
        .map(|s| {
            let (lo, hi) = s
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), e| {
                    (a.min(e.value), b.max(e.value))
                });
            if hi.is_finite() && lo.is_finite() {
                hi - lo
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut hi = (spread / (rho_max - rho_min).max(1e-3)).max(f64::MIN_POSITIVE.sqrt()) * 1e-3;
    let (mut idx_hi, mut rho_hi) = select_all(scans, hi);
    trajectory.push((hi, rho_hi));
    let mut doublings = 0;
    while rho_hi > target {
        if doublings == cfg.max_doublings {
            return Err(Error::BisectionBracketFailure {
                target,
                min: rho_min,
                max: rho_max,
            });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        (idx_hi, rho_hi) = select_all(scans, hi);
        trajectory.push((hi, rho_hi));
    }
    for _ in 0..cfg.max_halvings {
        if (rho_hi - target).abs() <= cfg.tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (idx_mid, rho_mid) = select_all(scans, mid);
        trajectory.push((mid, rho_mid));
        if rho_mid <= target {
            hi = mid;
            idx_hi = idx_mid;
            rho_hi = rho_mid;
        } else {
            lo = mid;
        }
    }
    Ok(finish(scans, &idx_hi, hi, rho_hi, trajectory))
}

/// Scans every element and resolves the resource bound.
pub fn solve_subproblem(
    model: &SeparableModel,
    space: &DesignSpace,
    rho_bar: Option<f64>,
    cfg: &BisectionConfig,
) -> Result<SubproblemSolution> {
    solve_scans(&model.scan(space), rho_bar, cfg)
}
