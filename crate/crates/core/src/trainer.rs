//! Full-batch gradient descent on policy logits, plus the scalar minimizer
//! and the finite-difference gradient check.
//!
//! The margin of a pair depends on the logits only through
//! `log π(y1) − log π(y2)`, which is linear in the logits. With `s` the
//! margin scale (β or 1) and `c` the loss's curvature bound, the risk is
//! `2·c·s²`-smooth in the logits, so any constant step size below
//! [`stable_learning_rate`] = `1/(c·s²)` gives monotone descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{evaluate_delta, LossKind};
use crate::noise::empirical_risk;
use crate::prefmodel::{margin, true_preference_prob, Hyper, Policy, PreferenceSample, QueryId, ResponseId, World};

/// Which risk a run minimizes. Modes are never mixed within a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RiskMode {
    /// Mean loss on the samples' own (possibly noisy) labels.
    Empirical,
    /// Exact expectation over the η-flip channel, treating labels as clean.
    Population { eta: f64 },
    /// Exact expectation over Bradley-Terry labels drawn from the world; sample labels are ignored.
    BradleyTerry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Stop once the ∞-norm of the logit gradient drops below this.
    pub grad_tol: f64,
    pub risk_mode: RiskMode,
    /// Carried into reports for provenance; full-batch descent draws no randomness.
    pub seed: u64,
    pub record_every: usize,
    /// Linear warmup length in steps; 0 disables warmup.
    pub warmup_steps: usize,
    /// Number of leading samples whose margins are snapshotted at each record.
    pub track_margins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_steps: 10_000,
            grad_tol: 1e-9,
            risk_mode: RiskMode::Empirical,
            seed: 0,
            record_every: 100,
            warmup_steps: 0,
            track_margins: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub risk: f64,
    pub grad_norm: f64,
    pub margins: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub steps: Vec<TraceStep>,
    pub converged: bool,
    /// Number of parameter updates applied.
    pub steps_taken: usize,
    pub final_policy: Policy,
}

impl TrainTrace {
    pub fn final_risk(&self) -> Option<f64> {
        self.steps.last().map(|s| s.risk)
    }
}

/// Largest constant step size with guaranteed descent for `kind`.
pub fn stable_learning_rate(kind: LossKind, hyper: &Hyper) -> f64 {
    let s = kind.margin_scale(hyper.beta());
    1.0 / (kind.curvature_bound() * s * s)
}

/// One risk term: a pair with probabilities on its stated label and on the flipped one.
#[derive(Clone, Copy, Debug)]
struct Term {
    sample: PreferenceSample,
    p_keep: f64,
    p_flip: f64,
}

fn build_terms(world: &World, samples: &[PreferenceSample], mode: RiskMode) -> Result<Vec<Term>> {
    samples
        .iter()
        .map(|s| {
            s.validate(world)?;
            let (p_keep, p_flip) = match mode {
                RiskMode::Empirical => (1.0, 0.0),
                RiskMode::Population { eta } => (1.0 - eta, eta),
                RiskMode::BradleyTerry => {
                    let forward = true_preference_prob(world, s.query, s.y1, s.y2)?;
                    let backward = true_preference_prob(world, s.query, s.y2, s.y1)?;
                    let keep = if s.label.orientation() > 0.0 { forward } else { backward };
                    (keep, 1.0 - keep)
                }
            };
            Ok(Term { sample: *s, p_keep, p_flip })
        })
        .collect()
}

fn term_loss(kind: LossKind, delta: f64, t: &Term, hyper: &Hyper) -> (f64, f64) {
    let keep = evaluate_delta(kind, delta, t.sample.label, hyper);
    if t.p_flip == 0.0 {
        return (keep.eval.value, keep.d_delta);
    }
    let flip = evaluate_delta(kind, delta, t.sample.label.flipped(), hyper);
    (
        t.p_keep * keep.eval.value + t.p_flip * flip.eval.value,
        t.p_keep * keep.d_delta + t.p_flip * flip.d_delta,
    )
}

/// Risk and its gradient with respect to every logit.
fn risk_and_grad(
    kind: LossKind,
    policy: &Policy,
    reference: &Policy,
    terms: &[Term],
    hyper: &Hyper,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let scale = kind.margin_scale(hyper.beta());
    let mut grad: Vec<Vec<f64>> = policy.logits().iter().map(|row| vec![0.0; row.len()]).collect();
    let mut probs_cache: Vec<Option<Vec<f64>>> = vec![None; policy.n_queries()];
    let mut risk = 0.0;
    for t in terms {
        let s = &t.sample;
        let delta = margin(policy, reference, s, scale, None)?;
        let (value, d_delta) = term_loss(kind, delta, t, hyper);
        risk += value;
        if d_delta == 0.0 {
            continue;
        }
        let probs = probs_cache[s.query.0].get_or_insert_with(|| policy.probs(s.query).unwrap_or_default());
        // d/dl_j [log π(y1) − log π(y2)] = (δ_{y1,j} − p_j) − (δ_{y2,j} − p_j)
        let row = &mut grad[s.query.0];
        let coef = d_delta * scale;
        for (j, (g, p)) in row.iter_mut().zip(probs.iter()).enumerate() {
            let d1 = if j == s.y1.0 { 1.0 } else { 0.0 } - p;
            let d2 = if j == s.y2.0 { 1.0 } else { 0.0 } - p;
            *g += coef * (d1 - d2);
        }
    }
    let n = terms.len() as f64;
    for row in &mut grad {
        for g in row.iter_mut() {
            *g /= n;
        }
    }
    Ok((risk / n, grad))
}

fn inf_norm(grad: &[Vec<f64>]) -> f64 {
    grad.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
}

/// Gradient descent from `init` on the risk selected by `config.risk_mode`.
///
/// Deterministic for fixed inputs. A non-finite risk aborts with
/// [`Error::Diverged`], which carries the trace recorded so far.
pub fn train(
    kind: LossKind,
    world: &World,
    samples: &[PreferenceSample],
    init: &Policy,
    reference: &Policy,
    hyper: &Hyper,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    if !init.matches_world(world) || !reference.matches_world(world) {
        return Err(Error::Domain("policy shape does not match the world".into()));
    }
    if samples.is_empty() {
        return Err(Error::Domain("no training samples".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Domain(format!("learning rate {} must be finite and >= 0", config.learning_rate)));
    }
    if config.max_steps == 0 || !(config.grad_tol > 0.0) {
        return Err(Error::Domain("max_steps must be >= 1 and grad_tol > 0".into()));
    }
    if let RiskMode::Population { eta } = config.risk_mode {
        if !(0.0..0.5).contains(&eta) {
            return Err(Error::Domain(format!("population noise rate {eta} outside [0, 0.5)")));
        }
    }
    let terms = build_terms(world, samples, config.risk_mode)?;
    let tracked: Vec<PreferenceSample> = samples.iter().take(config.track_margins).copied().collect();
    let scale = kind.margin_scale(hyper.beta());
    let record_every = config.record_every.max(1);

    let mut policy = init.clone();
    let mut trace = TrainTrace {
        steps: Vec::new(),
        converged: false,
        steps_taken: 0,
        final_policy: init.clone(),
    };

    let snapshot = |policy: &Policy| -> Result<Vec<f64>> {
        tracked
            .iter()
            .map(|s| margin(policy, reference, s, scale, hyper.clip()))
            .collect()
    };

    for step in 0..=config.max_steps {
        let (risk, grad) = risk_and_grad(kind, &policy, reference, &terms, hyper)?;
        let grad_norm = inf_norm(&grad);
        if !risk.is_finite() || !grad_norm.is_finite() {
            trace.steps.push(TraceStep { step, risk, grad_norm, margins: snapshot(&policy)? });
            trace.final_policy = policy;
            return Err(Error::Diverged {
                step,
                trace: Box::new(trace),
            });
        }
        let converged = grad_norm < config.grad_tol;
        let last = converged || step == config.max_steps;
        if step % record_every == 0 || last {
            trace.steps.push(TraceStep { step, risk, grad_norm, margins: snapshot(&policy)? });
        }
        if last {
            trace.converged = converged;
            break;
        }
        let lr = if config.warmup_steps > 0 {
            config.learning_rate * ((step + 1) as f64 / config.warmup_steps as f64).min(1.0)
        } else {
            config.learning_rate
        };
        for (row, grow) in policy.logits_mut().iter_mut().zip(&grad) {
            for (l, g) in row.iter_mut().zip(grow) {
                *l -= lr * g;
            }
        }
        trace.steps_taken += 1;
    }
    trace.final_policy = policy;
    Ok(trace)
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
///
/// `floor` sits above finite-difference rounding noise (≈ |f|·ε/h) so that
/// near-zero gradients are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Floor used by the gradient checks: 1e-4 scaled by the function's magnitude.
pub fn gradient_floor(value: f64) -> f64 {
    1e-4 * value.abs().max(1.0)
}

/// Analytic logit gradient of the empirical risk of `samples`.
pub fn empirical_gradient(
    kind: LossKind,
    policy: &Policy,
    reference: &Policy,
    samples: &[PreferenceSample],
    hyper: &Hyper,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let terms: Vec<Term> = samples
        .iter()
        .map(|s| Term { sample: *s, p_keep: 1.0, p_flip: 0.0 })
        .collect();
    if terms.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    risk_and_grad(kind, policy, reference, &terms, hyper)
}

/// Compares analytic logit gradients of the empirical risk with central
/// differences on `n_coords` randomly chosen logits. Returns the largest
/// [`relative_error`].
#[allow(clippy::too_many_arguments)]
pub fn numeric_gradient_check(
    kind: LossKind,
    policy: &Policy,
    reference: &Policy,
    samples: &[PreferenceSample],
    hyper: &Hyper,
    n_coords: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {step} must be > 0")));
    }
    let (risk, grad) = empirical_gradient(kind, policy, reference, samples, hyper)?;
    let floor = gradient_floor(risk);
    let coords: Vec<(usize, usize)> = policy
        .logits()
        .iter()
        .enumerate()
        .flat_map(|(q, row)| (0..row.len()).map(move |r| (q, r)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut probe = policy.clone();
    for _ in 0..n_coords {
        let (q, r) = coords[rng.random_range(0..coords.len())];
        let (qid, rid) = (QueryId(q), ResponseId(r));
        let base = policy.logit(qid, rid)?;
        probe.set_logit(qid, rid, base + step)?;
        let up = empirical_risk(kind, &probe, reference, samples, hyper)?;
        probe.set_logit(qid, rid, base - step)?;
        let down = empirical_risk(kind, &probe, reference, samples, hyper)?;
        probe.set_logit(qid, rid, base)?;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(grad[q][r], numeric, floor));
    }
    Ok(worst)
}

/// Golden-section search for a minimum of `f` on `[lower, upper]`, run until
/// the bracket is narrower than `tol`. Returns `(location, value)`.
pub fn minimize_scalar<F>(f: F, lower: f64, upper: f64, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    if !(lower < upper) || !(tol > 0.0) {
        return Err(Error::Domain(format!("bad bracket [{lower}, {upper}] or tol {tol}")));
    }
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("objective is non-finite at {x}")))
        }
    };
    // 1/φ and 1/φ²
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let inv_phi2 = 1.0 - inv_phi;
    let (mut a, mut b) = (lower, upper);
    let mut c = a + inv_phi2 * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = a + inv_phi2 * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, eval(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_sigmoid;
    use crate::prefmodel::Label;

    fn pair_world() -> (World, Policy, Vec<PreferenceSample>) {
        let world = World::new(vec![vec![1.0, 0.0]]).unwrap();
        let reference = Policy::uniform(&world);
        let sample = PreferenceSample::new(QueryId(0), ResponseId(0), ResponseId(1), Label::First).unwrap();
        (world, reference, vec![sample])
    }

    #[test]
    fn golden_quadratic_and_monotone() {
        let (x, v) = minimize_scalar(|t| (t - 1.0) * (t - 1.0), -10.0, 10.0, 1e-8).unwrap();
        assert!((x - 1.0).abs() < 1e-7 && v < 1e-13);
        let (x, _) = minimize_scalar(|t| -t, -3.0, 2.0, 1e-9).unwrap();
        assert!((x - 2.0).abs() < 1e-9);
        let (x, _) = minimize_scalar(|t| t, -3.0, 2.0, 1e-9).unwrap();
        assert!((x + 3.0).abs() < 1e-9);
    }

    #[test]
    fn golden_dpo_counterexample() {
        let g = |t: f64| -0.9 * log_sigmoid(t) - 0.1 * log_sigmoid(-t);
        let (x, _) = minimize_scalar(g, -20.0, 20.0, 1e-10).unwrap();
        // mpmath: log 9 = 2.1972245773362193828
        assert!((x - 2.197_224_577_336_219_4).abs() < 1e-6);
    }

    #[test]
    fn golden_rejects_bad_input() {
        assert!(minimize_scalar(|t| t, 1.0, 0.0, 1e-6).is_err());
        assert!(minimize_scalar(|_| f64::NAN, 0.0, 1.0, 1e-6).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let (world, reference, samples) = pair_world();
        let init = Policy::new(vec![vec![0.3, -0.2]]).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, max_steps: 50, ..Default::default() };
        let t = train(LossKind::Dpo, &world, &samples, &init, &reference, &Hyper::default(), &cfg).unwrap();
        assert_eq!(t.final_policy, init);
        assert!(!t.converged);
    }

    #[test]
    fn ropo_zero_margin_gradient_is_beta_over_four() {
        let (_, reference, samples) = pair_world();
        for beta in [0.1, 0.5, 1.0] {
            let h = Hyper::default().with_beta(beta).unwrap();
            let (_, g) = empirical_gradient(LossKind::Ropo, &reference, &reference, &samples, &h).unwrap();
            assert!((g[0][0] + beta / 4.0).abs() < 1e-15);
            assert!((g[0][1] - beta / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn population_training_is_deterministic_and_descends() {
        let (world, reference, samples) = pair_world();
        let h = Hyper::default();
        let cfg = TrainConfig {
            learning_rate: 0.5 * stable_learning_rate(LossKind::Dpo, &h),
            max_steps: 500,
            risk_mode: RiskMode::Population { eta: 0.2 },
            record_every: 1,
            track_margins: 1,
            ..Default::default()
        };
        let a = train(LossKind::Dpo, &world, &samples, &reference, &reference, &h, &cfg).unwrap();
        let b = train(LossKind::Dpo, &world, &samples, &reference, &reference, &h, &cfg).unwrap();
        assert_eq!(a, b);
        for w in a.steps.windows(2) {
            assert!(w[1].risk <= w[0].risk + 1e-12);
        }
        assert!(a.converged);
        let m = a.steps.last().unwrap().margins[0];
        assert!((m - 4f64.ln()).abs() < 1e-3, "{m}");
    }

    #[test]
    fn warmup_scales_first_steps() {
        let (world, reference, samples) = pair_world();
        let h = Hyper::default();
        let base = TrainConfig { learning_rate: 1.0, max_steps: 1, ..Default::default() };
        let warm = TrainConfig { warmup_steps: 4, ..base.clone() };
        let a = train(LossKind::Dpo, &world, &samples, &reference, &reference, &h, &base).unwrap();
        let b = train(LossKind::Dpo, &world, &samples, &reference, &reference, &h, &warm).unwrap();
        let la = a.final_policy.logits()[0][0];
        let lb = b.final_policy.logits()[0][0];
        assert!((lb - la / 4.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_check_small_case() {
        let world = World::new(vec![vec![0.0; 3], vec![0.0; 4]]).unwrap();
        let reference = Policy::uniform(&world);
        let policy = Policy::new(vec![vec![0.4, -1.0, 2.0], vec![0.0, 0.5, -0.5, 1.5]]).unwrap();
        let samples = vec![
            PreferenceSample::new(QueryId(0), ResponseId(0), ResponseId(2), Label::First).unwrap(),
            PreferenceSample::new(QueryId(1), ResponseId(3), ResponseId(1), Label::Second).unwrap(),
            PreferenceSample::new(QueryId(1), ResponseId(0), ResponseId(2), Label::First).unwrap(),
        ];
        let h = Hyper::default();
        for kind in LossKind::BASIC {
            let e = numeric_gradient_check(kind, &policy, &reference, &samples, &h, 7, 1e-5, 3).unwrap();
            assert!(e < 1e-6, "{kind}: {e}");
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let (world, _, samples) = pair_world();
        let wrong = Policy::new(vec![vec![0.0; 3]]).unwrap();
        let cfg = TrainConfig::default();
        assert!(train(LossKind::Dpo, &world, &samples, &wrong, &wrong, &Hyper::default(), &cfg).is_err());
    }
}
