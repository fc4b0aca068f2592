//! Coarse-to-fine orchestration of Embedded PatchMatch.
//!
//! K and Q are average-pooled down to each level's scale. The coarsest level
//! starts from a random field; every later level starts from the previous
//! level's field, lifted by [`upscale_seed`], with relevances rescored
//! against that level's features.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matcher::{Coord, MatchConfig, Matcher, Nnf, PositionMap, StepEvent};
use crate::tensor::FeatureMap;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    /// Reciprocal scale of each level, coarsest first: `[8, 4, 2, 1]` means
    /// 1/8, 1/4, 1/2 and full resolution.
    pub scale_denominators: Vec<u32>,
    /// Outer rounds `M` at each level.
    pub iters_per_level: Vec<usize>,
    pub rng_seed: u64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig { scale_denominators: vec![8, 4, 2, 1], iters_per_level: vec![1, 1, 2, 6], rng_seed: 0 }
    }
}

impl PyramidConfig {
    /// A one-level schedule at full resolution: plain Embedded PatchMatch.
    pub fn single_scale(m: usize, rng_seed: u64) -> Self {
        PyramidConfig { scale_denominators: vec![1], iters_per_level: vec![m], rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_denominators.is_empty() {
            return Err(invalid("pyramid needs at least one level"));
        }
        if self.scale_denominators.len() != self.iters_per_level.len() {
            return Err(invalid("scales and iters_per_level differ in length"));
        }
        if self.scale_denominators.iter().any(|d| !d.is_power_of_two()) {
            return Err(invalid("scale denominators must be powers of two"));
        }
        if self.scale_denominators.windows(2).any(|w| w[0] <= w[1]) {
            return Err(invalid("scales must be strictly increasing"));
        }
        if *self.scale_denominators.last().unwrap() != 1 {
            return Err(invalid("last scale must be 1"));
        }
        if self.iters_per_level.contains(&0) {
            return Err(invalid("every level needs at least one iteration"));
        }
        Ok(())
    }

    /// Number of halvings needed to reach each level.
    pub fn halvings(&self) -> impl Iterator<Item = u32> + '_ {
        self.scale_denominators.iter().map(|d| d.trailing_zeros())
    }
}

/// Dims after `halvings` rounds of floor-halving.
pub fn pooled_dims(h: usize, w: usize, halvings: u32) -> (usize, usize) {
    (h >> halvings, w >> halvings)
}

fn pool2(fm: &FeatureMap) -> Result<FeatureMap> {
    let (h, w) = (fm.height() / 2, fm.width() / 2);
    if h == 0 || w == 0 {
        return Err(invalid(format!("cannot halve a {}x{} feature map", fm.height(), fm.width())));
    }
    FeatureMap::from_fn(fm.channels(), h, w, |r, c, k| {
        let (r2, c2) = (2 * r, 2 * c);
        (fm.get(r2, c2, k) + fm.get(r2, c2 + 1, k) + fm.get(r2 + 1, c2, k) + fm.get(r2 + 1, c2 + 1, k)) * 0.25
    })
}

/// Shrinks a feature map by `1 / denominator` with repeated 2x average pooling.
pub fn downscale_features(fm: &FeatureMap, denominator: u32) -> Result<FeatureMap> {
    if !denominator.is_power_of_two() || denominator > 8 {
        return Err(invalid(format!("scale 1/{denominator} is not one of 1, 1/2, 1/4, 1/8")));
    }
    let mut out = fm.clone();
    for _ in 0..denominator.trailing_zeros() {
        out = pool2(&out)?;
    }
    Ok(out)
}

/// Lifts a field to the next finer level: nearest replication onto
/// `k_dims`, every coordinate doubled and clamped into `q_dims`.
pub fn upscale_seed(h: &PositionMap, k_dims: (usize, usize), q_dims: (usize, usize)) -> PositionMap {
    let (qh, qw) = q_dims;
    let max_r = h.height() - 1;
    let max_c = h.width() - 1;
    PositionMap::from_fn(k_dims.0, k_dims.1, |r, c| {
        let src = h.get((r / 2).min(max_r), (c / 2).min(max_c));
        Coord::new((src.row as usize * 2).min(qh - 1) as u32, (src.col as usize * 2).min(qw - 1) as u32)
    })
}

/// Per-level record of a coarse-to-fine run.
#[derive(Clone, Debug)]
pub struct LevelResult {
    pub denominator: u32,
    pub nnf: Nnf,
    pub propagation_evals: u64,
    pub init_evals: u64,
}

#[derive(Clone, Debug)]
pub struct CfeOutput {
    pub nnf: Nnf,
    pub levels: Vec<LevelResult>,
}

impl CfeOutput {
    pub fn propagation_evals(&self) -> u64 {
        self.levels.iter().map(|l| l.propagation_evals).sum()
    }

    pub fn init_evals(&self) -> u64 {
        self.levels.iter().map(|l| l.init_evals).sum()
    }
}

/// What a coarse-to-fine run reports to its observer.
#[derive(Debug)]
pub struct CfeEvent<'a> {
    pub level: usize,
    /// `None` on level entry (after the seed is scored), else the step just taken.
    pub step: Option<StepEvent>,
    pub state: &'a Nnf,
    /// Propagation evaluations so far, earlier levels included.
    pub cumulative_evals: u64,
}

/// Coarse-to-fine Embedded PatchMatch between `k_map` and `q_map`.
pub fn run_cfe(
    k_map: &FeatureMap,
    q_map: &FeatureMap,
    cfg: &PyramidConfig,
    match_cfg: &MatchConfig,
) -> Result<CfeOutput> {
    run_cfe_observed(k_map, q_map, cfg, match_cfg, |_| {})
}

pub fn run_cfe_observed(
    k_map: &FeatureMap,
    q_map: &FeatureMap,
    cfg: &PyramidConfig,
    match_cfg: &MatchConfig,
    mut observer: impl FnMut(&CfeEvent<'_>),
) -> Result<CfeOutput> {
    cfg.validate()?;
    match_cfg.validate()?;
    let coarsest = cfg.scale_denominators[0] as usize;
    if k_map.height() < coarsest || k_map.width() < coarsest || q_map.height() < coarsest || q_map.width() < coarsest {
        return Err(invalid(format!(
            "maps {:?} / {:?} too small for a 1/{coarsest} level",
            k_map.dims(),
            q_map.dims()
        )));
    }

    let mut levels: Vec<LevelResult> = Vec::with_capacity(cfg.scale_denominators.len());
    let mut prior = 0u64;
    for (level, (&den, &m)) in cfg.scale_denominators.iter().zip(&cfg.iters_per_level).enumerate() {
        let k_level = downscale_features(k_map, den)?;
        let q_level = downscale_features(q_map, den)?;
        let matcher = Matcher::new(&k_level, &q_level, match_cfg.epsilon_norm)?;
        let seed = levels.last().map(|prev| upscale_seed(&prev.nnf.positions, k_level.dims(), q_level.dims()));
        let state = matcher.init(seed.as_ref(), cfg.rng_seed)?;
        observer(&CfeEvent { level, step: None, state: &state, cumulative_evals: prior });
        let nnf = matcher.run_observed(state, m, |ev, st| {
            observer(&CfeEvent { level, step: Some(*ev), state: st, cumulative_evals: prior + ev.evals })
        });
        prior += matcher.propagation_evals();
        levels.push(LevelResult {
            denominator: den,
            nnf,
            propagation_evals: matcher.propagation_evals(),
            init_evals: matcher.init_evals(),
        });
    }
    let nnf = levels.last().unwrap().nnf.clone();
    Ok(CfeOutput { nnf, levels })
}
