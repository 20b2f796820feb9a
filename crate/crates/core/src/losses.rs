//! Pairwise preference losses as functions of the label-oriented margin.
//!
//! Each loss takes the oriented margin `m`: `m = Δ` when the label says
//! `y1 ≻ y2` and `m = -Δ` otherwise. For the DPO family (DPO, C-DPO, ROPO,
//! combined) `Δ` is the β-scaled implicit-reward difference; for the IPO
//! family (IPO, C-IPO) it is the unscaled log-ratio difference.
//!
//! [`LossEval::weight`] is the scalar `w` in the factorization of each loss's
//! parameter gradient along `∇ log π(y1)/π(y2)`: `-w·∇…` for the DPO family
//! and `+w·∇…` for the IPO family.
//!
//! For C-DPO and C-IPO, `value` and `grad_margin` follow the smoothed
//! objectives with `ε` on the label-consistent term, while `weight` follows
//! the constant-shift identities `w_dpo − βε` and `w_ipo + 2ε/β`. Those
//! identities are the gradient weights of the mirrored convention (`ε` on the
//! flipped term), so for these two kinds `weight` is not `∓β·grad_margin`.
//! The trainer only consumes `grad_margin`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{sigmoid, sigmoid_slope, softplus};
use crate::prefmodel::{margin, Hyper, Label, Policy, PreferenceSample};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Dpo,
    Ipo,
    Cdpo,
    Cipo,
    Ropo,
    /// `α·ℓ_ropo + γ·ℓ_dpo`.
    Combined { alpha: f64, gamma: f64 },
}

impl LossKind {
    /// The five single objectives, in report order.
    pub const BASIC: [LossKind; 5] = [
        LossKind::Dpo,
        LossKind::Ipo,
        LossKind::Cdpo,
        LossKind::Cipo,
        LossKind::Ropo,
    ];

    pub fn combined(hyper: &Hyper) -> Self {
        LossKind::Combined {
            alpha: hyper.alpha(),
            gamma: hyper.gamma(),
        }
    }

    /// Parses a kind name; `combined` picks up α and γ from `hyper`.
    pub fn parse_with(name: &str, hyper: &Hyper) -> Result<Self> {
        match name.parse::<LossKind>()? {
            LossKind::Combined { .. } => Ok(LossKind::combined(hyper)),
            k => Ok(k),
        }
    }

    /// True for kinds whose margin is β-scaled.
    pub fn uses_scaled_margin(&self) -> bool {
        !matches!(self, LossKind::Ipo | LossKind::Cipo)
    }

    /// Multiplier from the raw log-ratio difference to this kind's margin.
    pub fn margin_scale(&self, beta: f64) -> f64 {
        if self.uses_scaled_margin() {
            beta
        } else {
            1.0
        }
    }

    /// Upper bound on `|d²ℓ/dm²|` over all margins.
    pub fn curvature_bound(&self) -> f64 {
        // max |σ''(m)| = 1/(6√3), attained at m = ±ln(2 + √3)
        let ropo = 1.0 / (6.0 * 3f64.sqrt());
        match *self {
            LossKind::Dpo | LossKind::Cdpo => 0.25,
            LossKind::Ropo => ropo,
            LossKind::Ipo | LossKind::Cipo => 2.0,
            LossKind::Combined { alpha, gamma } => alpha * ropo + gamma * 0.25,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Dpo => "dpo",
            LossKind::Ipo => "ipo",
            LossKind::Cdpo => "cdpo",
            LossKind::Cipo => "cipo",
            LossKind::Ropo => "ropo",
            LossKind::Combined { .. } => "combined",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let h = Hyper::default();
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dpo" => Ok(LossKind::Dpo),
            "ipo" => Ok(LossKind::Ipo),
            "cdpo" => Ok(LossKind::Cdpo),
            "cipo" => Ok(LossKind::Cipo),
            "ropo" => Ok(LossKind::Ropo),
            "combined" => Ok(LossKind::combined(&h)),
            other => Err(Error::Domain(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// Loss value, derivative with respect to the oriented margin, and gradient weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad_margin: f64,
    pub weight: f64,
}

impl LossEval {
    fn scaled(self, k: f64) -> Self {
        Self {
            value: k * self.value,
            grad_margin: k * self.grad_margin,
            weight: k * self.weight,
        }
    }

    fn plus(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            grad_margin: self.grad_margin + other.grad_margin,
            weight: self.weight + other.weight,
        }
    }
}

/// `-log σ(m)`.
pub fn loss_dpo(m: f64, beta: f64) -> LossEval {
    let s = sigmoid(-m);
    LossEval {
        value: softplus(-m),
        grad_margin: -s,
        weight: beta * s,
    }
}

/// `σ(-m)`: the DPO gradient reweighted by `σ(m)`, integrated back.
pub fn loss_ropo(m: f64, beta: f64) -> LossEval {
    let slope = sigmoid_slope(m);
    LossEval {
        value: sigmoid(-m),
        grad_margin: -slope,
        weight: beta * slope,
    }
}

/// `(u − 1/(2β))²` on the unscaled margin `u`.
pub fn loss_ipo(u: f64, beta: f64) -> LossEval {
    let d = u - 0.5 / beta;
    LossEval {
        value: d * d,
        grad_margin: 2.0 * d,
        weight: 2.0 * d,
    }
}

/// `-ε·log σ(m) − (1−ε)·log σ(-m)`.
pub fn loss_cdpo(m: f64, beta: f64, eps: f64) -> LossEval {
    LossEval {
        value: eps * softplus(-m) + (1.0 - eps) * softplus(m),
        grad_margin: -eps * sigmoid(-m) + (1.0 - eps) * sigmoid(m),
        weight: beta * sigmoid(-m) - beta * eps,
    }
}

/// `ε·(u − 1/(2β))² + (1−ε)·(−u − 1/(2β))²`.
pub fn loss_cipo(u: f64, beta: f64, eps: f64) -> LossEval {
    let c = 0.5 / beta;
    let pos = u - c;
    let neg = -u - c;
    LossEval {
        value: eps * pos * pos + (1.0 - eps) * neg * neg,
        grad_margin: 2.0 * eps * pos - 2.0 * (1.0 - eps) * neg,
        weight: 2.0 * pos + 2.0 * eps / beta,
    }
}

/// `α·ℓ_ropo(m) + γ·ℓ_dpo(m)`.
pub fn loss_combined(m: f64, beta: f64, alpha: f64, gamma: f64) -> LossEval {
    loss_ropo(m, beta).scaled(alpha).plus(loss_dpo(m, beta).scaled(gamma))
}

/// Dispatches on `kind` at oriented margin `m` (already in the kind's own scale).
pub fn loss_at(kind: LossKind, m: f64, hyper: &Hyper) -> LossEval {
    let beta = hyper.beta();
    match kind {
        LossKind::Dpo => loss_dpo(m, beta),
        LossKind::Ipo => loss_ipo(m, beta),
        LossKind::Cdpo => loss_cdpo(m, beta, hyper.eps()),
        LossKind::Cipo => loss_cipo(m, beta, hyper.eps()),
        LossKind::Ropo => loss_ropo(m, beta),
        LossKind::Combined { alpha, gamma } => loss_combined(m, beta, alpha, gamma),
    }
}

/// Loss of one labelled pair given its raw (unclipped, unoriented) margin Δ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLoss {
    pub eval: LossEval,
    /// `dℓ/dΔ` with the clip's stop-gradient applied.
    pub d_delta: f64,
    pub clipped: bool,
}

/// Orients and clips Δ, evaluates the loss, and maps the gradient back to Δ.
///
/// Outside `[-M, M]` the loss is evaluated at the clip bound and the
/// gradient is zero.
pub fn evaluate_delta(kind: LossKind, delta: f64, label: Label, hyper: &Hyper) -> PairLoss {
    let (bounded, clipped) = match hyper.clip() {
        Some(m) if delta.abs() > m => (delta.clamp(-m, m), true),
        _ => (delta, false),
    };
    let orient = label.orientation();
    let eval = loss_at(kind, orient * bounded, hyper);
    let d_delta = if clipped { 0.0 } else { orient * eval.grad_margin };
    PairLoss { eval, d_delta, clipped }
}

/// Loss of `sample` under `policy` against `reference`.
pub fn evaluate(
    kind: LossKind,
    policy: &Policy,
    reference: &Policy,
    sample: &PreferenceSample,
    hyper: &Hyper,
) -> Result<LossEval> {
    let delta = margin(policy, reference, sample, kind.margin_scale(hyper.beta()), None)?;
    Ok(evaluate_delta(kind, delta, sample.label, hyper).eval)
}
