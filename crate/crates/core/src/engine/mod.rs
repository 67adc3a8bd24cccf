//! Mutation driver: transformation selection per iteration, (m, c)
//! scheduling, emission decisions and the budgeted round-robin run.

mod run;

use std::collections::BTreeMap;
use std::time::Duration;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::BinaryImage;
use crate::transforms::{Mutator, TransformError, TransformKind, Weights};

pub use run::{run_budget, EmissionRecord, Engine, EngineError, RunOutput, RunReport, StopReason};

/// Default chance of emitting regardless of the change threshold.
pub const DEFAULT_RANDOM_EMIT_PROBABILITY: f64 = 0.10;
/// Default τ as a fraction of the image's block count.
pub const DEFAULT_TAU_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Total mutation iterations across all representatives.
    Passes(u64),
    WallClock(Duration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationParams {
    /// Inclusive range of iterations per chain.
    pub m_range: (u32, u32),
    /// Candidate fractions of applicable sites per iteration.
    pub c_grid: Vec<f64>,
    pub seed: u64,
    pub budget: Budget,
    /// Emission threshold in weighted blocks; `None` means 5% of the
    /// representative's block count.
    pub tau: Option<f64>,
    pub random_emit_probability: f64,
    pub weights: Weights,
    /// Probability that each kind joins an iteration's draw.
    pub inclusion: [f64; 10],
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams {
            m_range: (1, 4),
            c_grid: vec![0.1, 0.25, 0.5],
            seed: 0,
            budget: Budget::Passes(100),
            tau: None,
            random_emit_probability: DEFAULT_RANDOM_EMIT_PROBABILITY,
            weights: Weights::default(),
            inclusion: [0.5; 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid parameter {field}: {message}")]
pub struct ParamError {
    pub field: &'static str,
    pub message: String,
}

fn param_err(field: &'static str, message: impl Into<String>) -> ParamError {
    ParamError {
        field,
        message: message.into(),
    }
}

impl MutationParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let (lo, hi) = self.m_range;
        if lo == 0 || lo > hi {
            return Err(param_err(
                "m_range",
                format!("need 1 <= lo <= hi, got [{lo}, {hi}]"),
            ));
        }
        if self.c_grid.is_empty() {
            return Err(param_err("c_grid", "empty"));
        }
        if let Some(c) = self.c_grid.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
            return Err(param_err("c_grid", format!("{c} is outside (0, 1]")));
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(param_err(
                    "tau",
                    format!("{t} is not a non-negative number"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.random_emit_probability) {
            return Err(param_err("random_emit_probability", "outside [0, 1]"));
        }
        if self.weights.0.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(param_err("weights", "weights must be positive"));
        }
        if self.inclusion.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(param_err("inclusion", "probabilities must lie in [0, 1]"));
        }
        if self.inclusion.iter().all(|p| *p == 0.0) {
            return Err(param_err(
                "inclusion",
                "at least one kind needs a positive probability",
            ));
        }
        if self.budget == Budget::Passes(0) {
            return Err(param_err("budget", "zero passes"));
        }
        Ok(())
    }

    /// τ for an image with `blocks` blocks.
    pub fn tau_for(&self, blocks: usize) -> f64 {
        self.tau.unwrap_or(DEFAULT_TAU_FRACTION * blocks as f64)
    }
}

/// (m, c) pairs used so far, per binary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamHistory(pub BTreeMap<String, Vec<(u32, f64)>>);

impl ParamHistory {
    pub fn record(&mut self, id: &str, m: u32, c: f64) {
        self.0.entry(id.to_string()).or_default().push((m, c));
    }

    pub fn get(&self, id: &str) -> &[(u32, f64)] {
        self.0.get(id).map_or(&[], Vec::as_slice)
    }
}

/// Normalized distance between two parameter pairs.
pub fn param_distance(a: (u32, f64), b: (u32, f64), m_width: f64) -> f64 {
    f64::from(a.0.abs_diff(b.0)) / m_width + (a.1 - b.1).abs()
}

/// The grid point farthest, by minimum distance, from every pair in
/// `history`. Ties go to smaller m, then smaller c.
pub fn select_params(history: &[(u32, f64)], m_range: (u32, u32), c_grid: &[f64]) -> (u32, f64) {
    let (lo, hi) = m_range;
    let width = f64::from(hi.saturating_sub(lo)).max(1.0);
    let mut grid = c_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut best = (lo, grid[0]);
    let mut best_d = f64::NEG_INFINITY;
    for m in lo..=hi {
        for &c in &grid {
            let d = history
                .iter()
                .map(|&h| param_distance((m, c), h, width))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = (m, c);
            }
        }
    }
    best
}

/// Weighted block changes since the original, and the totals at which
/// earlier versions were emitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeLedger {
    pub total: f64,
    pub emissions: Vec<f64>,
}

impl ChangeLedger {
    pub fn record(&mut self, delta: f64) {
        self.total += delta.max(0.0);
    }

    pub fn mark_emitted(&mut self) {
        self.emissions.push(self.total);
    }

    /// True when the current version is at least `tau` from the original
    /// and from every emitted version.
    pub fn separated(&self, tau: f64) -> bool {
        self.total >= tau && self.emissions.iter().all(|e| self.total - e >= tau)
    }
}

/// Threshold test, or a random emission with probability `p`. One draw is
/// consumed either way.
pub fn should_emit<R: Rng + ?Sized>(ledger: &ChangeLedger, tau: f64, p: f64, rng: &mut R) -> bool {
    let lucky = rng.gen::<f64>() < p;
    ledger.separated(tau) || lucky
}

/// Draws each kind with its inclusion probability, redrawing an empty
/// set, and shuffles the result.
pub fn draw_kinds<R: Rng + ?Sized>(inclusion: &[f64; 10], rng: &mut R) -> Vec<TransformKind> {
    assert!(inclusion.iter().any(|p| *p > 0.0), "no kind can be drawn");
    loop {
        let mut kinds: Vec<TransformKind> = TransformKind::ALL
            .into_iter()
            .filter(|k| rng.gen_bool(inclusion[k.index()].clamp(0.0, 1.0)))
            .collect();
        if !kinds.is_empty() {
            kinds.shuffle(rng);
            return kinds;
        }
    }
}

/// ⌈c × n⌉ with float noise removed, at least 1 when n > 0.
pub fn site_count(c: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = (c * n as f64 * 1e9).round() / 1e9;
    (raw.ceil() as usize).clamp(1, n)
}

/// Effect of one mutation iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    pub image: BinaryImage,
    /// Kinds drawn, in application order.
    pub kinds: Vec<TransformKind>,
    /// Sites attempted per kind.
    pub attempted: BTreeMap<TransformKind, usize>,
    /// Sites accepted per kind.
    pub applied: BTreeMap<TransformKind, usize>,
    pub reverted: usize,
    pub revert_reasons: BTreeMap<String, usize>,
    pub blocks_changed: BTreeMap<TransformKind, usize>,
    /// Intrusion-weighted changed blocks.
    pub delta: f64,
}

impl Iteration {
    /// Kinds with at least one accepted site.
    pub fn applied_kinds(&self) -> Vec<TransformKind> {
        self.applied
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(k, _)| *k)
            .collect()
    }
}

/// Applies `kinds` in order, each to ⌈c × sites⌉ random applicable sites.
pub fn apply_kinds<R: Rng + ?Sized>(
    image: &BinaryImage,
    kinds: &[TransformKind],
    c: f64,
    rng: &mut R,
    mutator: &Mutator,
    weights: &Weights,
) -> Result<Iteration, TransformError> {
    let mut it = Iteration {
        image: image.clone(),
        kinds: kinds.to_vec(),
        attempted: BTreeMap::new(),
        applied: BTreeMap::new(),
        reverted: 0,
        revert_reasons: BTreeMap::new(),
        blocks_changed: BTreeMap::new(),
        delta: 0.0,
    };
    for &kind in kinds {
        let sites = mutator.applicable_sites(&it.image, kind);
        let n = site_count(c, sites.len());
        let chosen: Vec<_> = sample(rng, sites.len(), n)
            .into_iter()
            .map(|i| sites[i].clone())
            .collect();
        let out = mutator.apply(kind, &it.image, &chosen, rng)?;
        *it.attempted.entry(kind).or_default() += chosen.len();
        *it.applied.entry(kind).or_default() += out.applied.len();
        it.reverted += out.reverted.len();
        for (_, reason) in &out.reverted {
            *it.revert_reasons.entry(reason.to_string()).or_default() += 1;
        }
        for (k, b) in &out.blocks_changed {
            *it.blocks_changed.entry(*k).or_default() += b;
            it.delta += weights.get(*k) * *b as f64;
        }
        it.image = out.image;
    }
    Ok(it)
}

/// One iteration: a random non-empty set of kinds in random order.
pub fn mutation_iteration<R: Rng + ?Sized>(
    image: &BinaryImage,
    c: f64,
    rng: &mut R,
    mutator: &Mutator,
    params: &MutationParams,
) -> Result<Iteration, TransformError> {
    let kinds = draw_kinds(&params.inclusion, rng);
    apply_kinds(image, &kinds, c, rng, mutator, &params.weights)
}
