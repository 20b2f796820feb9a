//! Synthetic worlds and datasets, evaluation metrics, and the noise sweep.
//!
//! Seeds: a sweep seed `s` feeds `ChaCha8Rng::seed_from_u64(s)`, whose first
//! three `u64` draws seed the world, the dataset and the flip channel. The
//! world and dataset for a seed are therefore shared by every loss kind and
//! noise rate, and the flipped subset depends only on `(seed, η)`.

pub mod config;
pub mod io;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::noise::{flip_exact_fraction, NoisyDataset};
use crate::prefmodel::{margin, true_preference_prob, Hyper, Label, Policy, PreferenceSample, QueryId, ResponseId, World};
use crate::theory::Pair;
use crate::trainer::{stable_learning_rate, train, RiskMode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldSpec {
    pub n_queries: usize,
    pub n_responses_per_query: usize,
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_queries: 20,
            n_responses_per_query: 4,
            reward_scale: 1.0,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries < 1 || self.n_responses_per_query < 2 {
            return Err(Error::Domain(format!(
                "world needs >= 1 query and >= 2 responses, got {}x{}",
                self.n_queries, self.n_responses_per_query
            )));
        }
        if !(self.reward_scale >= 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Domain(format!("reward scale {} must be finite and >= 0", self.reward_scale)));
        }
        Ok(())
    }
}

/// Rewards drawn i.i.d. standard normal, times `reward_scale`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rewards = (0..spec.n_queries)
        .map(|_| {
            (0..spec.n_responses_per_query)
                .map(|_| spec.reward_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    World::new(rewards)
}

/// Uniform query, two distinct uniform responses, label `First` with probability `P*(y1 ≻ y2)`.
pub fn generate_dataset(world: &World, n_samples: usize, seed: u64) -> Result<Vec<PreferenceSample>> {
    if n_samples == 0 {
        return Err(Error::Domain("dataset needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let q = QueryId(rng.random_range(0..world.n_queries()));
        let n = world.n_responses(q)?;
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        let (y1, y2) = (ResponseId(a), ResponseId(b));
        let p = true_preference_prob(world, q, y1, y2)?;
        let label = if rng.random::<f64>() < p { Label::First } else { Label::Second };
        out.push(PreferenceSample::new(q, y1, y2, label)?);
    }
    Ok(out)
}

/// `(wins + ties/2) / comparisons`.
pub fn win_rate(wins: usize, ties: usize, comparisons: usize) -> Result<f64> {
    if comparisons == 0 || wins + ties > comparisons {
        return Err(Error::Domain(format!(
            "win rate needs wins + ties <= comparisons >= 1, got ({wins}, {ties}, {comparisons})"
        )));
    }
    Ok((wins as f64 + ties as f64 / 2.0) / comparisons as f64)
}

const TIE: f64 = 1e-9;

/// Agreement of `sign(Δ)` with the ground-truth preferred response. Zero
/// margins (to 1e-9) score one half, and so do pairs with equal true rewards.
pub fn evaluate_accuracy(
    policy: &Policy,
    reference: &Policy,
    world: &World,
    hyper: &Hyper,
    eval_pairs: &[Pair],
) -> Result<f64> {
    let (mut wins, mut ties) = (0, 0);
    for &(q, a, b) in eval_pairs {
        let s = PreferenceSample::new(q, a, b, Label::First)?;
        s.validate(world)?;
        let d = margin(policy, reference, &s, hyper.beta(), None)?;
        let truth = world.reward(q, a)? - world.reward(q, b)?;
        if d.abs() < TIE || truth == 0.0 {
            ties += 1;
        } else if (d > 0.0) == (truth > 0.0) {
            wins += 1;
        }
    }
    win_rate(wins, ties, eval_pairs.len())
}

/// Per-query comparison of `E_π[r*]` against `E_ref[r*]`, scored by [`win_rate`].
pub fn win_rate_vs_reference(policy: &Policy, reference: &Policy, world: &World) -> Result<f64> {
    let (mut wins, mut ties) = (0, 0);
    for q in 0..world.n_queries() {
        let q = QueryId(q);
        let rewards = &world.rewards()[q.0];
        let expect = |p: &Policy| -> Result<f64> {
            Ok(p.probs(q)?.iter().zip(rewards).map(|(p, r)| p * r).sum())
        };
        let d = expect(policy)? - expect(reference)?;
        if d.abs() < TIE {
            ties += 1;
        } else if d > 0.0 {
            wins += 1;
        }
    }
    win_rate(wins, ties, world.n_queries())
}

/// Fixed-width histogram over `[lo, hi)`; values outside land in the end bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self { lo, hi, counts: vec![0; bins.max(1)] }
    }

    pub fn add(&mut self, x: f64) {
        let n = self.counts.len();
        let i = ((x - self.lo) / (self.hi - self.lo) * n as f64).floor();
        let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(n - 1) };
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Lower edge of bin `i`.
    pub fn edge(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / self.counts.len() as f64
    }
}

/// Margin statistics split by the flip mask. Means are `None` for an empty part.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginStats {
    pub mean_clean: Option<f64>,
    pub mean_noisy: Option<f64>,
    pub hist_clean: Histogram,
    pub hist_noisy: Histogram,
}

pub const HIST_BINS: usize = 20;

/// `r̂(dispreferred) − r̂(preferred)` per sample, with preference read from
/// the sample's (possibly flipped) label, partitioned by the flip mask.
/// Histograms span `[−M, M]` in [`HIST_BINS`] bins; with `M = ∞` they span `[−10, 10]`.
pub fn margin_stats(policy: &Policy, reference: &Policy, noisy: &NoisyDataset, hyper: &Hyper) -> Result<MarginStats> {
    let span = hyper.clip().unwrap_or(10.0);
    let mut hist_clean = Histogram::new(-span, span, HIST_BINS);
    let mut hist_noisy = Histogram::new(-span, span, HIST_BINS);
    let (mut sum_c, mut n_c, mut sum_n, mut n_n) = (0.0, 0usize, 0.0, 0usize);
    for (s, &flipped) in noisy.samples().iter().zip(noisy.flip_mask()) {
        let v = -s.label.orientation() * margin(policy, reference, s, hyper.beta(), None)?;
        if flipped {
            sum_n += v;
            n_n += 1;
            hist_noisy.add(v);
        } else {
            sum_c += v;
            n_c += 1;
            hist_clean.add(v);
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(MarginStats {
        mean_clean: mean(sum_c, n_c),
        mean_noisy: mean(sum_n, n_n),
        hist_clean,
        hist_noisy,
    })
}

/// One row of the sweep. Metrics are `None` when the cell failed or, for
/// `mean_margin_noisy`, when nothing was flipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: String,
    pub eta: f64,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub win_rate_vs_reference: Option<f64>,
    pub mean_margin_clean: Option<f64>,
    pub mean_margin_noisy: Option<f64>,
    pub steps_to_converge: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub kinds: Vec<LossKind>,
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.kinds.len() * self.etas.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            kinds: LossKind::BASIC.to_vec(),
            etas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            seeds: (0..10).collect(),
        }
    }
}

/// Per-cell training and data settings shared by the whole sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub world: WorldSpec,
    pub n_samples: usize,
    /// Step size as a multiple of each kind's stable learning rate.
    pub lr_factor: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            n_samples: 500,
            lr_factor: 0.5,
            max_steps: 2000,
            grad_tol: 1e-6,
        }
    }
}

/// Seeds for the world, the dataset and the flip channel of sweep seed `seed`.
pub fn derive_seeds(seed: u64) -> (u64, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64(), rng.next_u64())
}

/// World, clean samples and noisy dataset of one sweep cell.
pub fn cell_data(config: &SweepConfig, eta: f64, seed: u64) -> Result<(World, NoisyDataset)> {
    let (ws, ds, ns) = derive_seeds(seed);
    let world = generate_world(&WorldSpec { seed: ws, ..config.world })?;
    let clean = generate_dataset(&world, config.n_samples, ds)?;
    let noisy = flip_exact_fraction(&clean, eta, ns)?;
    Ok((world, noisy))
}

/// Trained policy plus every metric of one cell.
pub struct CellOutcome {
    pub world: World,
    pub data: NoisyDataset,
    pub policy: Policy,
    pub trace: crate::trainer::TrainTrace,
    pub row: SweepResult,
}

pub fn run_cell(kind: LossKind, eta: f64, seed: u64, hyper: &Hyper, config: &SweepConfig) -> Result<CellOutcome> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::Domain(format!("sweep noise rate {eta} outside [0, 1/2)")));
    }
    let (world, data) = cell_data(config, eta, seed)?;
    let reference = Policy::uniform(&world);
    let train_config = TrainConfig {
        learning_rate: config.lr_factor * stable_learning_rate(kind, hyper),
        max_steps: config.max_steps,
        grad_tol: config.grad_tol,
        risk_mode: RiskMode::Empirical,
        seed,
        record_every: 100,
        ..TrainConfig::default()
    };
    let trace = train(kind, &world, data.samples(), &reference, &reference, hyper, &train_config)?;
    let policy = trace.final_policy.clone();
    let accuracy = evaluate_accuracy(&policy, &reference, &world, hyper, &world.all_pairs())?;
    let wr = win_rate_vs_reference(&policy, &reference, &world)?;
    let stats = margin_stats(&policy, &reference, &data, hyper)?;
    let row = SweepResult {
        kind: kind.name().to_string(),
        eta,
        seed,
        accuracy: Some(accuracy),
        win_rate_vs_reference: Some(wr),
        mean_margin_clean: stats.mean_clean,
        mean_margin_noisy: stats.mean_noisy,
        steps_to_converge: Some(trace.steps_taken),
        converged: Some(trace.converged),
        error: None,
    };
    Ok(CellOutcome { world, data, policy, trace, row })
}

/// Runs every cell in grid order (kind, then η, then seed), handing each row
/// to `emit` as soon as it is done. A failed cell yields a row carrying the error.
pub fn sweep_with<F>(grid: &SweepGrid, hyper: &Hyper, config: &SweepConfig, mut emit: F) -> Result<()>
where
    F: FnMut(&SweepResult) -> Result<()>,
{
    if grid.is_empty() {
        return Err(Error::Domain("sweep grid is empty".into()));
    }
    for &kind in &grid.kinds {
        for &eta in &grid.etas {
            for &seed in &grid.seeds {
                let row = match run_cell(kind, eta, seed, hyper, config) {
                    Ok(out) => out.row,
                    Err(e) => SweepResult {
                        kind: kind.name().to_string(),
                        eta,
                        seed,
                        accuracy: None,
                        win_rate_vs_reference: None,
                        mean_margin_clean: None,
                        mean_margin_noisy: None,
                        steps_to_converge: None,
                        converged: None,
                        error: Some(e.to_string()),
                    },
                };
                emit(&row)?;
            }
        }
    }
    Ok(())
}

pub fn sweep(grid: &SweepGrid, hyper: &Hyper, config: &SweepConfig) -> Result<Vec<SweepResult>> {
    let mut rows = Vec::with_capacity(grid.len());
    sweep_with(grid, hyper, config, |r| {
        rows.push(r.clone());
        Ok(())
    })?;
    Ok(rows)
}

/// Mean and sample standard deviation of one metric for one `(kind, η)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub kind: String,
    pub eta: f64,
    pub n: usize,
    pub failed: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub win_rate_mean: Option<f64>,
    pub margin_clean_mean: Option<f64>,
    pub margin_noisy_mean: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), sd)
}

/// Groups rows by `(kind, η)` in first-appearance order.
pub fn summarize(rows: &[SweepResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(k, e)| *k == r.kind && *e == r.eta) {
            keys.push((r.kind.clone(), r.eta));
        }
    }
    keys.into_iter()
        .map(|(kind, eta)| {
            let group: Vec<&SweepResult> = rows.iter().filter(|r| r.kind == kind && r.eta == eta).collect();
            let pick = |f: fn(&SweepResult) -> Option<f64>| group.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let (accuracy_mean, accuracy_std) = mean_std(&pick(|r| r.accuracy));
            SummaryRow {
                n: group.len(),
                failed: group.iter().filter(|r| r.error.is_some()).count(),
                accuracy_mean,
                accuracy_std,
                win_rate_mean: mean_std(&pick(|r| r.win_rate_vs_reference)).0,
                margin_clean_mean: mean_std(&pick(|r| r.mean_margin_clean)).0,
                margin_noisy_mean: mean_std(&pick(|r| r.mean_margin_noisy)).0,
                kind,
                eta,
            }
        })
        .collect()
}
