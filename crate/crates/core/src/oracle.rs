//! Ground truth and accounting: exhaustive matching, relevance-map error
//! metrics, convergence traces and the closed-form evaluation-count model.
//!
//! Costs are counted in relevance evaluations (one normalised inner product
//! each), which is exact and machine independent. Initial scoring of a
//! field (one evaluation per K position per level) is tracked separately
//! from propagation so each counter has its own closed form.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, mismatch, Result};
use crate::matcher::{
    sweep_length, Coord, MatchConfig, Matcher, Nnf, Phase, PositionMap, RelevanceMap, CANDIDATES_PER_STEP,
};
use crate::pyramid::{pooled_dims, run_cfe_observed, PyramidConfig};
use crate::tensor::FeatureMap;

/// Evaluation accounting for one matcher run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CostLedger {
    /// Propagation relevance evaluations, summed over levels.
    pub relevance_evals: u64,
    pub per_level_breakdown: Vec<u64>,
    /// Evaluations spent scoring each level's initial field.
    pub init_evals: u64,
    pub wall_time: f64,
}

impl CostLedger {
    pub fn from_levels(per_level: Vec<u64>, init_evals: u64, wall_time: f64) -> Self {
        CostLedger { relevance_evals: per_level.iter().sum(), per_level_breakdown: per_level, init_evals, wall_time }
    }
}

#[derive(Clone, Debug)]
pub struct OracleOutput {
    pub nnf: Nnf,
    pub evals: u64,
}

/// Exhaustive argmax over every Q position for every K position. Ties go to
/// the smallest row-major index in Q.
pub fn brute_force_nnf(k_map: &FeatureMap, q_map: &FeatureMap, epsilon_norm: f64) -> Result<OracleOutput> {
    let m = Matcher::new(k_map, q_map, epsilon_norm)?;
    let (kh, kw) = m.k_dims();
    let (qh, qw) = m.q_dims();
    let q_coords: Vec<Coord> = (0..qh).flat_map(|r| (0..qw).map(move |c| Coord::new(r as u32, c as u32))).collect();
    let best: Vec<(Coord, f64)> = (0..kh * kw)
        .into_par_iter()
        .map(|i| {
            let j = Coord::new((i / kw) as u32, (i % kw) as u32);
            let mut best = (q_coords[0], f64::NEG_INFINITY);
            for &jp in &q_coords {
                let s = m.score_pair(j, jp);
                if s > best.1 {
                    best = (jp, s);
                }
            }
            best
        })
        .collect();
    let positions = PositionMap::new(kh, kw, best.iter().map(|b| b.0).collect())?;
    let relevance = RelevanceMap::new(kh, kw, best.iter().map(|b| b.1).collect())?;
    Ok(OracleOutput { nnf: Nnf { positions, relevance }, evals: (kh * kw * qh * qw) as u64 })
}

fn check_same(s: &RelevanceMap, s_star: &RelevanceMap) -> Result<()> {
    if s.dims() != s_star.dims() {
        return Err(mismatch(format!("relevance maps {:?} vs {:?}", s.dims(), s_star.dims())));
    }
    Ok(())
}

/// Mean over positions of `(S*_j - S_j)^2`.
pub fn nnf_mse(s: &RelevanceMap, s_star: &RelevanceMap) -> Result<f64> {
    check_same(s, s_star)?;
    let n = s.values().len().max(1) as f64;
    Ok(s.values().iter().zip(s_star.values()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / n)
}

/// Mean and max of `S*_j - S_j`.
pub fn relevance_gap(s: &RelevanceMap, s_star: &RelevanceMap) -> Result<(f64, f64)> {
    check_same(s, s_star)?;
    let n = s.values().len().max(1) as f64;
    let (sum, max) = s
        .values()
        .iter()
        .zip(s_star.values())
        .map(|(a, b)| b - a)
        .fold((0.0, f64::NEG_INFINITY), |(sum, max), d| (sum + d, f64::max(max, d)));
    Ok((sum / n, max))
}

/// One snapshot of a convergence trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    /// Cumulative propagation evaluations, coarse levels included.
    pub evals: u64,
    pub mse: f64,
}

/// Runs the schedule and records the relevance MSE against `oracle` at the
/// full-resolution level: once on entry and after every (LR, Ref) pair.
/// Coarse levels contribute their evaluations to the running total but no
/// snapshots, since their fields live on a different grid.
pub fn convergence_trace(
    k_map: &FeatureMap,
    q_map: &FeatureMap,
    schedule: &PyramidConfig,
    match_cfg: &MatchConfig,
    oracle: &RelevanceMap,
) -> Result<Vec<TracePoint>> {
    if oracle.dims() != k_map.dims() {
        return Err(mismatch("oracle relevance must be sized to K"));
    }
    let finest = schedule.scale_denominators.len().saturating_sub(1);
    let mut trace = Vec::new();
    run_cfe_observed(k_map, q_map, schedule, match_cfg, |ev| {
        let snapshot = ev.level == finest && ev.step.is_none_or(|s| s.phase == Phase::Ref);
        if snapshot {
            // dims already checked against K, and every level-`finest` state is K-sized
            let mse = nnf_mse(&ev.state.relevance, oracle).expect("dims checked");
            trace.push(TracePoint { evals: ev.cumulative_evals, mse });
        }
    })?;
    Ok(trace)
}

/// Closed-form evaluation counts for a schedule on an `h x w` K map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostPrediction {
    pub per_level: Vec<u64>,
    pub propagation_evals: u64,
    pub init_evals: u64,
}

/// Predicted counts: each level contributes `18 * N_l * M_l * L_l`
/// propagation evaluations and `N_l` initial ones, where `N_l` is the
/// pooled K size and `L_l` its sweep length.
pub fn cost_model(h: usize, w: usize, cfg: &PyramidConfig) -> Result<CostPrediction> {
    cfg.validate()?;
    let mut per_level = Vec::with_capacity(cfg.iters_per_level.len());
    let mut init = 0u64;
    for (halvings, &m) in cfg.halvings().zip(&cfg.iters_per_level) {
        let (lh, lw) = pooled_dims(h, w, halvings);
        if lh == 0 || lw == 0 {
            return Err(invalid(format!("{h}x{w} vanishes after {halvings} halvings")));
        }
        let n = (lh * lw) as u64;
        per_level.push(2 * CANDIDATES_PER_STEP * n * m as u64 * sweep_length(lh, lw) as u64);
        init += n;
    }
    Ok(CostPrediction { propagation_evals: per_level.iter().sum(), per_level, init_evals: init })
}

/// Evaluations performed by exhaustive matching.
pub fn enumerated_cost(k_dims: (usize, usize), q_dims: (usize, usize)) -> u64 {
    (k_dims.0 * k_dims.1) as u64 * (q_dims.0 * q_dims.1) as u64
}

/// Uniform-M asymptotic envelope `18 * M * N * (85/64 log2(sqrt(N)/8) - 27/64)`
/// for a square map of `n` positions and a four-level 1/8..1 pyramid.
pub fn pyramid_envelope(n: f64, m: f64) -> f64 {
    let l = (n.sqrt() / 8.0).log2();
    2.0 * CANDIDATES_PER_STEP as f64 * m * n * (85.0 / 64.0 * l - 27.0 / 64.0)
}

/// Times a closure, returning its value and the elapsed seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}
