//! Embedded PatchMatch: random or seeded initialisation followed by
//! alternating LR-side and Ref-side propagation with dilations `2^t`.
//!
//! Every propagation step is a synchronous map over the K grid: each
//! position reads the frozen previous state and writes a fresh buffer, so
//! results never depend on how the work is split across threads.
//!
//! Both steps score exactly nine candidates per position (the incumbent and
//! eight dilated neighbours), which makes the relevance-evaluation count of
//! a run a closed-form quantity; see [`crate::oracle::cost_model`].

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::tensor::FeatureMap;

/// Default norm below which a feature vector is treated as zero.
pub const DEFAULT_EPSILON_NORM: f64 = 1e-12;

/// The eight neighbour directions, row-major, centre excluded.
pub const NEIGHBOR_DIRS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Candidates scored per position per propagation step.
pub const CANDIDATES_PER_STEP: u64 = 9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub const fn new(row: u32, col: u32) -> Self {
        Coord { row, col }
    }

    /// `self + dir * step`, clamped into an `h x w` grid.
    #[inline]
    pub fn offset_clamped(self, dir: (i64, i64), step: i64, h: usize, w: usize) -> Coord {
        let r = (self.row as i64 + dir.0 * step).clamp(0, h as i64 - 1);
        let c = (self.col as i64 + dir.1 * step).clamp(0, w as i64 - 1);
        Coord::new(r as u32, c as u32)
    }
}

/// Per-position coordinates into some target map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositionMap {
    height: usize,
    width: usize,
    coords: Vec<Coord>,
}

impl PositionMap {
    pub fn new(height: usize, width: usize, coords: Vec<Coord>) -> Result<Self> {
        if coords.len() != height * width {
            return Err(invalid(format!("position map has {} coords for {height}x{width}", coords.len())));
        }
        Ok(PositionMap { height, width, coords })
    }

    /// Every position pointing at itself.
    pub fn identity(height: usize, width: usize) -> Self {
        let coords = (0..height).flat_map(|r| (0..width).map(move |c| Coord::new(r as u32, c as u32))).collect();
        PositionMap { height, width, coords }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> Coord) -> Self {
        let coords = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        PositionMap { height, width, coords }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Coord {
        self.coords[row * self.width + col]
    }

    /// Errors unless every coordinate lies inside a `h x w` target.
    pub fn check_bounds(&self, h: usize, w: usize) -> Result<()> {
        match self.coords.iter().position(|c| c.row as usize >= h || c.col as usize >= w) {
            None => Ok(()),
            Some(i) => Err(invalid(format!(
                "coordinate ({}, {}) at index {i} outside {h}x{w}",
                self.coords[i].row, self.coords[i].col
            ))),
        }
    }
}

/// Per-position relevance scores in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RelevanceMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(invalid(format!("relevance map has {} values for {height}x{width}", values.len())));
        }
        Ok(RelevanceMap { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        RelevanceMap { height, width, values: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// A nearest-neighbour field: where each K position matches in Q, and how well.
#[derive(Clone, Debug, PartialEq)]
pub struct Nnf {
    pub positions: PositionMap,
    pub relevance: RelevanceMap,
}

impl Nnf {
    pub fn dims(&self) -> (usize, usize) {
        self.positions.dims()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Outer rounds `M`; each round sweeps every dilation once.
    pub m_multiplier: usize,
    pub rng_seed: u64,
    pub epsilon_norm: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { m_multiplier: 1, rng_seed: 0, epsilon_norm: DEFAULT_EPSILON_NORM }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_multiplier == 0 {
            return Err(invalid("M must be at least 1"));
        }
        if self.epsilon_norm.is_nan() || self.epsilon_norm < 0.0 {
            return Err(invalid("epsilon_norm must be non-negative"));
        }
        Ok(())
    }
}

/// Number of dilation exponents swept per round:
/// `max(1, floor(log2(max(h, w) / 8)))`.
pub fn sweep_length(h: usize, w: usize) -> usize {
    let m = h.max(w);
    if m == 0 {
        return 1;
    }
    (m.ilog2() as i64 - 3).max(1) as usize
}

/// Feature vectors scaled to unit length; vectors with norm below epsilon
/// become exactly zero so that any relevance against them is 0.
#[derive(Clone, Debug)]
pub struct UnitFeatures {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl UnitFeatures {
    pub fn new(fm: &FeatureMap, epsilon_norm: f64) -> Self {
        let ch = fm.channels();
        let mut data = fm.data().to_vec();
        data.par_chunks_mut(ch).for_each(|v| normalize_in_place(v, epsilon_norm));
        UnitFeatures { channels: ch, height: fm.height(), width: fm.width(), data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    fn vector(&self, c: Coord) -> &[f64] {
        let start = (c.row as usize * self.width + c.col as usize) * self.channels;
        &self.data[start..start + self.channels]
    }
}

fn normalize_in_place(v: &mut [f64], eps: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < eps || norm == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[i * 4 + l] * b[i * 4 + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn unit_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// Normalised inner product between `K_j` and `Q_j'`; 0 when either vector
/// has norm below `epsilon_norm`.
pub fn relevance(k_map: &FeatureMap, q_map: &FeatureMap, j: Coord, j_prime: Coord, epsilon_norm: f64) -> Result<f64> {
    if k_map.channels() != q_map.channels() {
        return Err(mismatch(format!("K has {} channels, Q has {}", k_map.channels(), q_map.channels())));
    }
    if j.row as usize >= k_map.height() || j.col as usize >= k_map.width() {
        return Err(invalid(format!("j={j:?} outside K")));
    }
    if j_prime.row as usize >= q_map.height() || j_prime.col as usize >= q_map.width() {
        return Err(invalid(format!("j'={j_prime:?} outside Q")));
    }
    let mut a = k_map.vector(j.row as usize, j.col as usize).to_vec();
    let mut b = q_map.vector(j_prime.row as usize, j_prime.col as usize).to_vec();
    normalize_in_place(&mut a, epsilon_norm);
    normalize_in_place(&mut b, epsilon_norm);
    Ok(unit_dot(&a, &b))
}

/// Which half of an iteration a step belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Lr,
    Ref,
}

/// Reported to observers after every propagation step.
#[derive(Clone, Copy, Debug)]
pub struct StepEvent {
    pub round: usize,
    pub dilation_exp: u32,
    pub phase: Phase,
    /// Propagation evaluations performed so far by this matcher.
    pub evals: u64,
}

/// Normalised K and Q plus instrumentation counters.
#[derive(Debug)]
pub struct Matcher {
    k: UnitFeatures,
    q: UnitFeatures,
    init_evals: AtomicU64,
    prop_evals: AtomicU64,
}

impl Matcher {
    pub fn new(k_map: &FeatureMap, q_map: &FeatureMap, epsilon_norm: f64) -> Result<Self> {
        if k_map.channels() != q_map.channels() {
            return Err(mismatch(format!("K has {} channels, Q has {}", k_map.channels(), q_map.channels())));
        }
        if k_map.is_empty() || q_map.is_empty() {
            return Err(invalid("feature maps must be at least 1x1"));
        }
        Ok(Matcher {
            k: UnitFeatures::new(k_map, epsilon_norm),
            q: UnitFeatures::new(q_map, epsilon_norm),
            init_evals: AtomicU64::new(0),
            prop_evals: AtomicU64::new(0),
        })
    }

    pub fn k_dims(&self) -> (usize, usize) {
        self.k.dims()
    }

    pub fn q_dims(&self) -> (usize, usize) {
        self.q.dims()
    }

    /// Relevance evaluations spent in propagation steps.
    pub fn propagation_evals(&self) -> u64 {
        self.prop_evals.load(Ordering::Relaxed)
    }

    /// Relevance evaluations spent scoring initial matches.
    pub fn init_evals(&self) -> u64 {
        self.init_evals.load(Ordering::Relaxed)
    }

    /// Relevance of `K_j` against `Q_j'`; not counted.
    #[inline]
    pub fn score_pair(&self, j: Coord, jp: Coord) -> f64 {
        unit_dot(self.k.vector(j), self.q.vector(jp))
    }

    /// Scores an arbitrary position map against K/Q.
    pub fn evaluate(&self, positions: &PositionMap) -> Result<RelevanceMap> {
        if positions.dims() != self.k.dims() {
            return Err(mismatch(format!("position map {:?} does not match K {:?}", positions.dims(), self.k.dims())));
        }
        let (qh, qw) = self.q.dims();
        positions.check_bounds(qh, qw)?;
        let w = positions.width();
        let values: Vec<f64> = positions
            .coords()
            .par_iter()
            .enumerate()
            .map(|(i, &jp)| self.score_pair(Coord::new((i / w) as u32, (i % w) as u32), jp))
            .collect();
        self.init_evals.fetch_add(values.len() as u64, Ordering::Relaxed);
        RelevanceMap::new(positions.height(), w, values)
    }

    /// Initial field: `seed` when given, otherwise an independent uniform
    /// draw per position from a ChaCha stream keyed by `(rng_seed, index)`.
    pub fn init(&self, seed: Option<&PositionMap>, rng_seed: u64) -> Result<Nnf> {
        let (kh, kw) = self.k.dims();
        let positions = match seed {
            Some(s) => s.clone(),
            None => random_positions(kh, kw, self.q.dims(), rng_seed),
        };
        let relevance = self.evaluate(&positions)?;
        Ok(Nnf { positions, relevance })
    }

    /// Shared body of both propagation steps. `candidate(j, state, i)` names
    /// the `i`-th of eight non-incumbent candidates for position `j`.
    fn propagate_with<F>(&self, state: &Nnf, candidate: F) -> Nnf
    where
        F: Fn(Coord, &PositionMap, usize) -> Coord + Sync,
    {
        let (h, w) = state.dims();
        let prev = &state.positions;
        let mut coords = vec![Coord::default(); h * w];
        let mut values = vec![0.0; h * w];
        let evals: u64 = coords
            .par_chunks_mut(w)
            .zip(values.par_chunks_mut(w))
            .enumerate()
            .map(|(r, (crow, vrow))| {
                let mut n = 0u64;
                for c in 0..w {
                    let j = Coord::new(r as u32, c as u32);
                    let mut best = prev.get(r, c);
                    let mut best_s = self.score_pair(j, best);
                    n += 1;
                    for i in 0..NEIGHBOR_DIRS.len() {
                        let cand = candidate(j, prev, i);
                        let s = self.score_pair(j, cand);
                        n += 1;
                        if s > best_s {
                            best_s = s;
                            best = cand;
                        }
                    }
                    crow[c] = best;
                    vrow[c] = best_s;
                }
                n
            })
            .sum();
        self.prop_evals.fetch_add(evals, Ordering::Relaxed);
        Nnf {
            positions: PositionMap { height: h, width: w, coords },
            relevance: RelevanceMap { height: h, width: w, values },
        }
    }

    /// LR-side step: adopt the best match among the position's own and its
    /// eight neighbours' (dilation `2^t`, clamped into K).
    pub fn lr_propagate(&self, state: &Nnf, t: u32) -> Nnf {
        let (kh, kw) = self.k.dims();
        let step = 1i64 << t;
        self.propagate_with(state, |j, prev, i| {
            let u = j.offset_clamped(NEIGHBOR_DIRS[i], step, kh, kw);
            prev.get(u.row as usize, u.col as usize)
        })
    }

    /// Ref-side step: try the eight neighbours (dilation `2^t`, clamped into
    /// Q) of the current match.
    pub fn ref_propagate(&self, state: &Nnf, t: u32) -> Nnf {
        let (qh, qw) = self.q.dims();
        let step = 1i64 << t;
        self.propagate_with(state, |j, prev, i| {
            prev.get(j.row as usize, j.col as usize).offset_clamped(NEIGHBOR_DIRS[i], step, qh, qw)
        })
    }

    /// `m` rounds, each sweeping `t = 0..L` with one LR then one Ref step.
    pub fn run(&self, state: Nnf, m: usize) -> Nnf {
        self.run_observed(state, m, |_, _| {})
    }

    pub fn run_observed(&self, mut state: Nnf, m: usize, mut observer: impl FnMut(&StepEvent, &Nnf)) -> Nnf {
        let (kh, kw) = self.k.dims();
        let sweep = sweep_length(kh, kw) as u32;
        for round in 0..m {
            for t in 0..sweep {
                state = self.lr_propagate(&state, t);
                let ev = StepEvent { round, dilation_exp: t, phase: Phase::Lr, evals: self.propagation_evals() };
                observer(&ev, &state);
                state = self.ref_propagate(&state, t);
                let ev = StepEvent { phase: Phase::Ref, evals: self.propagation_evals(), ..ev };
                observer(&ev, &state);
            }
        }
        state
    }
}

fn random_positions(kh: usize, kw: usize, q_dims: (usize, usize), rng_seed: u64) -> PositionMap {
    let (qh, qw) = q_dims;
    let total = (qh * qw) as u64;
    let coords = (0..kh * kw)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            let idx = rng.random_range(0..total);
            Coord::new((idx / qw as u64) as u32, (idx % qw as u64) as u32)
        })
        .collect();
    PositionMap { height: kh, width: kw, coords }
}

/// Result of a matcher run together with its evaluation counts.
#[derive(Clone, Debug)]
pub struct MatchOutput {
    pub nnf: Nnf,
    pub propagation_evals: u64,
    pub init_evals: u64,
}

pub fn init_nnf(
    k_map: &FeatureMap,
    q_map: &FeatureMap,
    seed_map: Option<&PositionMap>,
    cfg: &MatchConfig,
) -> Result<Nnf> {
    Matcher::new(k_map, q_map, cfg.epsilon_norm)?.init(seed_map, cfg.rng_seed)
}

fn check_state(state: &Nnf, k_map: &FeatureMap, q_map: &FeatureMap) -> Result<()> {
    if state.dims() != k_map.dims() || state.relevance.dims() != k_map.dims() {
        return Err(mismatch("state maps must be sized to K"));
    }
    state.positions.check_bounds(q_map.height(), q_map.width())
}

pub fn lr_propagate(state: &Nnf, k_map: &FeatureMap, q_map: &FeatureMap, t: u32) -> Result<Nnf> {
    check_state(state, k_map, q_map)?;
    Ok(Matcher::new(k_map, q_map, DEFAULT_EPSILON_NORM)?.lr_propagate(state, t))
}

pub fn ref_propagate(state: &Nnf, k_map: &FeatureMap, q_map: &FeatureMap, t: u32) -> Result<Nnf> {
    check_state(state, k_map, q_map)?;
    Ok(Matcher::new(k_map, q_map, DEFAULT_EPSILON_NORM)?.ref_propagate(state, t))
}

/// Single-scale Embedded PatchMatch.
pub fn run_embedded_patchmatch(
    k_map: &FeatureMap,
    q_map: &FeatureMap,
    cfg: &MatchConfig,
    seed_map: Option<&PositionMap>,
) -> Result<MatchOutput> {
    cfg.validate()?;
    let matcher = Matcher::new(k_map, q_map, cfg.epsilon_norm)?;
    let state = matcher.init(seed_map, cfg.rng_seed)?;
    let nnf = matcher.run(state, cfg.m_multiplier);
    Ok(MatchOutput { nnf, propagation_evals: matcher.propagation_evals(), init_evals: matcher.init_evals() })
}
