//! Closed-form optima of single-pair population risks, noise-tolerance
//! verdicts, Bradley-Terry consistency, and the numeric verification report.
//!
//! The single-pair problem puts all mass on one pair `(x, y1, y2)` with clean
//! label `y1 ≻ y2`; under the η-flip channel its risk is the scalar function
//! `(1−η)·ℓ(t) + η·ℓ(−t)` of the margin `t`, minimized over `[−M, M]`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::win_rate;
use crate::losses::{loss_at, LossKind};
use crate::noise::linear_risk_residual;
use crate::prefmodel::{margin, true_preference_prob, Hyper, Label, Policy, PreferenceSample, QueryId, ResponseId, World};
use crate::trainer::{minimize_scalar, numeric_gradient_check, relative_error, stable_learning_rate, train, RiskMode, TrainConfig};

/// Minimizer of a single-pair population risk over `[−M, M]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPoint {
    pub kind: LossKind,
    pub eta: f64,
    /// Optimal margin; `±M` when `is_boundary`.
    pub location: f64,
    pub is_boundary: bool,
}

impl FixedPoint {
    fn clipped(kind: LossKind, eta: f64, t: f64, bound: f64) -> Self {
        if t >= bound {
            Self { kind, eta, location: bound, is_boundary: true }
        } else if t <= -bound {
            Self { kind, eta, location: -bound, is_boundary: true }
        } else {
            Self { kind, eta, location: t, is_boundary: false }
        }
    }

    /// Same optimum: both on the same boundary, or interior locations within `tol`.
    pub fn same_as(&self, other: &FixedPoint, tol: f64) -> bool {
        match (self.is_boundary, other.is_boundary) {
            (true, true) => self.location.signum() == other.location.signum(),
            (false, false) => (self.location - other.location).abs() <= tol,
            _ => false,
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..0.5).contains(&eta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("noise rate {eta} outside [0, 1/2)")))
    }
}

/// `(1−η)·ℓ(t) + η·ℓ(−t)` on the kind's own margin scale, unclipped.
pub fn single_pair_risk(kind: LossKind, hyper: &Hyper, eta: f64, t: f64) -> f64 {
    (1.0 - eta) * loss_at(kind, t, hyper).value + eta * loss_at(kind, -t, hyper).value
}

/// Closed-form optimum of the single-pair population risk under η-flips.
pub fn noisy_fixed_point(kind: LossKind, hyper: &Hyper, eta: f64) -> Result<FixedPoint> {
    check_eta(eta)?;
    let (beta, eps) = (hyper.beta(), hyper.eps());
    let bound = hyper.margin_clip();
    let t = match kind {
        // argmin of −(1−η)·log σ(t) − η·log σ(−t); +∞ when η = 0
        LossKind::Dpo if eta == 0.0 => f64::INFINITY,
        LossKind::Dpo => ((1.0 - eta) / eta).ln(),
        LossKind::Ipo => 0.5 / beta - eta / beta,
        LossKind::Cdpo => {
            let a = eta + eps - 2.0 * eps * eta;
            (a / (1.0 - a)).ln()
        }
        LossKind::Cipo => -(1.0 - 2.0 * eps) * (1.0 - 2.0 * eta) / (2.0 * beta),
        // (1−2η)·σ(−t) + η is strictly decreasing in t
        LossKind::Ropo => f64::INFINITY,
        LossKind::Combined { .. } => {
            return Err(Error::Domain("no closed-form fixed point for the combined loss".into()))
        }
    };
    Ok(FixedPoint::clipped(kind, eta, t, bound))
}

/// Numeric optimum by golden-section search on `[−M−1, M+1]`, then clipped.
/// A minimizer within 1e-6 of `±M` is reported as a boundary optimum.
pub fn golden_fixed_point(kind: LossKind, hyper: &Hyper, eta: f64) -> Result<FixedPoint> {
    check_eta(eta)?;
    let bound = hyper
        .clip()
        .ok_or_else(|| Error::Domain("golden-section oracle needs a finite clip bound".into()))?;
    let (t, _) = minimize_scalar(|t| single_pair_risk(kind, hyper, eta, t), -bound - 1.0, bound + 1.0, 1e-11)?;
    let snapped = if (t.abs() - bound).abs() <= 1e-6 { t.signum() * bound } else { t };
    Ok(FixedPoint::clipped(kind, eta, snapped, bound))
}

/// True when the η-noisy optimum equals the clean optimum (within 1e-9).
pub fn tolerance_verdict(kind: LossKind, hyper: &Hyper, eta: f64) -> Result<bool> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::Domain(format!("verdict needs eta in (0, 1/2), got {eta}")));
    }
    let noisy = noisy_fixed_point(kind, hyper, eta)?;
    let clean = noisy_fixed_point(kind, hyper, 0.0)?;
    Ok(noisy.same_as(&clean, 1e-9))
}

/// Smallest η at which DPO's noisy optimum leaves the `+M` boundary: `1/(1+e^M)`.
pub fn dpo_sensitivity_threshold(margin_clip: f64) -> f64 {
    1.0 / (1.0 + margin_clip.exp())
}

/// Trains the single-pair problem from the uniform reference and returns the
/// final clipped margin.
pub fn trained_fixed_point(kind: LossKind, hyper: &Hyper, eta: f64) -> Result<(f64, bool)> {
    check_eta(eta)?;
    let world = World::new(vec![vec![0.0, 0.0]])?;
    let reference = Policy::uniform(&world);
    let sample = PreferenceSample::new(QueryId(0), ResponseId(0), ResponseId(1), Label::First)?;
    let config = TrainConfig {
        learning_rate: 0.5 * stable_learning_rate(kind, hyper),
        max_steps: 200_000,
        grad_tol: 1e-10,
        risk_mode: RiskMode::Population { eta },
        record_every: 1000,
        track_margins: 1,
        ..TrainConfig::default()
    };
    let trace = train(kind, &world, &[sample], &reference, &reference, hyper, &config)?;
    let m = margin(&trace.final_policy, &reference, &sample, kind.margin_scale(hyper.beta()), hyper.clip())?;
    Ok((m, trace.converged))
}

pub type Pair = (QueryId, ResponseId, ResponseId);

#[derive(Clone, Debug, PartialEq)]
pub struct BtReport {
    /// `None` when every pair is a tie.
    pub agreement: Option<f64>,
    pub compared: usize,
    pub agreeing: usize,
    pub disagreements: Vec<Pair>,
    /// Pairs with `|P* − 1/2| < 1e-9`, excluded from the agreement fraction.
    pub ties: Vec<Pair>,
}

/// Checks `sign(Δ) = sign(P*(y1 ≻ y2) − 1/2)` on each pair.
pub fn bt_consistency(
    world: &World,
    policy: &Policy,
    reference: &Policy,
    hyper: &Hyper,
    pairs: &[Pair],
) -> Result<BtReport> {
    let mut report = BtReport {
        agreement: None,
        compared: 0,
        agreeing: 0,
        disagreements: Vec::new(),
        ties: Vec::new(),
    };
    for &(q, a, b) in pairs {
        let p = true_preference_prob(world, q, a, b)?;
        if (p - 0.5).abs() < 1e-9 {
            report.ties.push((q, a, b));
            continue;
        }
        let s = PreferenceSample::new(q, a, b, Label::First)?;
        let d = margin(policy, reference, &s, hyper.beta(), None)?;
        report.compared += 1;
        if (d > 0.0 && p > 0.5) || (d < 0.0 && p < 0.5) {
            report.agreeing += 1;
        } else {
            report.disagreements.push((q, a, b));
        }
    }
    if report.compared > 0 {
        report.agreement = Some(report.agreeing as f64 / report.compared as f64);
    }
    Ok(report)
}

/// One line of the verification report.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationRecord {
    pub check: &'static str,
    pub kind: String,
    pub eta: Option<f64>,
    pub expected: f64,
    pub observed: f64,
    pub residual: f64,
    pub pass: bool,
}

impl fmt::Display for VerificationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let eta = self.eta.map_or_else(|| "-".to_string(), |e| format!("{e}"));
        write!(
            f,
            "check={} kind={} eta={} expected={:.9} observed={:.9} residual={:.3e} verdict={}",
            self.check,
            self.kind,
            eta,
            self.expected,
            self.observed,
            self.residual,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

fn record(check: &'static str, kind: impl ToString, eta: Option<f64>, expected: f64, observed: f64, tol: f64) -> VerificationRecord {
    let residual = if expected == observed { 0.0 } else { (expected - observed).abs() };
    VerificationRecord {
        check,
        kind: kind.to_string(),
        eta,
        expected,
        observed,
        residual,
        pass: residual <= tol,
    }
}

/// η grid {0.05, 0.10, …, 0.45}.
pub fn eta_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 * 0.05).collect()
}

fn random_problem(rng: &mut ChaCha8Rng, n_queries: usize, n_responses: usize, n_samples: usize) -> Result<(Policy, Policy, Vec<PreferenceSample>)> {
    let logits = (0..n_queries)
        .map(|_| (0..n_responses).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let reference_logits = (0..n_queries)
        .map(|_| (0..n_responses).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let q = rng.random_range(0..n_queries);
        let a = rng.random_range(0..n_responses);
        let b = (a + rng.random_range(1..n_responses)) % n_responses;
        let label = if rng.random_bool(0.5) { Label::First } else { Label::Second };
        samples.push(PreferenceSample::new(QueryId(q), ResponseId(a), ResponseId(b), label)?);
    }
    Ok((Policy::new(logits)?, Policy::new(reference_logits)?, samples))
}

/// Runs every numeric check of the theory and returns one record per check.
pub fn verification_report(hyper: &Hyper, seed: u64) -> Result<Vec<VerificationRecord>> {
    let mut out = Vec::new();
    let (beta, eps, bound) = (hyper.beta(), hyper.eps(), hyper.margin_clip());

    // closed forms against the golden-section oracle
    let mut etas = vec![0.0];
    etas.extend(eta_grid());
    for kind in LossKind::BASIC {
        for &eta in &etas {
            let closed = noisy_fixed_point(kind, hyper, eta)?;
            let golden = golden_fixed_point(kind, hyper, eta)?;
            let mut r = record("fixed_point_vs_golden", kind, Some(eta), closed.location, golden.location, 1e-6);
            r.pass &= closed.is_boundary == golden.is_boundary;
            out.push(r);
        }
    }

    // clean optima
    let clean = [
        (LossKind::Cdpo, (eps / (1.0 - eps)).ln()),
        (LossKind::Cipo, -(1.0 - 2.0 * eps) / (2.0 * beta)),
        (LossKind::Ipo, 0.5 / beta),
    ];
    for (kind, expected) in clean {
        let fp = noisy_fixed_point(kind, hyper, 0.0)?;
        let expected = expected.clamp(-bound, bound);
        out.push(record("clean_fixed_point", kind, Some(0.0), expected, fp.location, 1e-12));
    }

    // noise-tolerance verdicts
    let threshold = dpo_sensitivity_threshold(bound);
    for kind in LossKind::BASIC {
        for eta in eta_grid() {
            let verdict = tolerance_verdict(kind, hyper, eta)?;
            let expected = match kind {
                LossKind::Ropo => true,
                LossKind::Dpo => eta < threshold,
                _ => false,
            };
            out.push(record("tolerance_verdict", kind, Some(eta), expected as u8 as f64, verdict as u8 as f64, 0.0));
        }
    }

    // trained single-pair optima
    for kind in LossKind::BASIC {
        for eta in [0.0, 0.1, 0.2, 0.3, 0.4] {
            let expected = noisy_fixed_point(kind, hyper, eta)?.location;
            let (observed, _) = trained_fixed_point(kind, hyper, eta)?;
            out.push(record("trained_fixed_point", kind, Some(eta), expected, observed, 1e-3));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // symmetric condition of the ROPO loss
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(-20.0..20.0);
        let sum = loss_at(LossKind::Ropo, m, hyper).value + loss_at(LossKind::Ropo, -m, hyper).value;
        worst = worst.max((sum - 1.0).abs());
    }
    out.push(record("ropo_symmetric_condition", LossKind::Ropo, None, 0.0, worst, 1e-12));

    // linear-risk identity
    for eta in [0.1, 0.2, 0.3, 0.4] {
        let mut worst_ropo: f64 = 0.0;
        let mut min_dpo = f64::INFINITY;
        for _ in 0..25 {
            let (policy, reference, samples) = random_problem(&mut rng, 5, 4, 50)?;
            worst_ropo = worst_ropo.max(linear_risk_residual(LossKind::Ropo, &policy, &reference, &samples, hyper, eta)?);
            min_dpo = min_dpo.min(linear_risk_residual(LossKind::Dpo, &policy, &reference, &samples, hyper, eta)?);
        }
        out.push(record("linear_risk_identity", LossKind::Ropo, Some(eta), 0.0, worst_ropo, 1e-10));
        let mut r = record("linear_risk_violation", LossKind::Dpo, Some(eta), 1e-3, min_dpo, f64::INFINITY);
        r.pass = min_dpo > 1e-3;
        out.push(r);
    }

    // margin gradients and end-to-end logit gradients
    for kind in LossKind::BASIC {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let m = rng.random_range(-10.0..10.0);
            let h = 1e-5;
            let numeric = (loss_at(kind, m + h, hyper).value - loss_at(kind, m - h, hyper).value) / (2.0 * h);
            let e = loss_at(kind, m, hyper);
            worst = worst.max(relative_error(e.grad_margin, numeric, crate::trainer::gradient_floor(e.value)));
        }
        out.push(record("margin_gradient", kind, None, 0.0, worst, 1e-6));
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            let (policy, reference, samples) = random_problem(&mut rng, 4, 4, 30)?;
            worst = worst.max(numeric_gradient_check(kind, &policy, &reference, &samples, hyper, 8, 1e-5, seed ^ i)?);
        }
        out.push(record("logit_gradient", kind, None, 0.0, worst, 1e-6));
    }

    // win-rate formula
    for (w, t, n, expected) in [(3, 2, 5, 0.8), (0, 7, 7, 0.5), (7, 0, 7, 1.0)] {
        let got = win_rate(w, t, n)?;
        out.push(record("win_rate", format!("{w}/{t}/{n}"), None, expected, got, 0.0));
    }

    Ok(out)
}
