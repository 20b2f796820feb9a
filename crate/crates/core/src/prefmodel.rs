//! Domain types for the synthetic preference world and the categorical toy
//! policy, plus the implicit-reward and margin computations every loss uses.
//!
//! Queries and responses are dense indices: query `q` owns responses
//! `0..n_responses(q)`. A [`Policy`] holds one unnormalized logit per
//! (query, response); the reference policy is simply a second, frozen
//! `Policy` of the same shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_softmax, sigmoid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseId(pub usize);

/// Binary preference label. `First` (0) means `y1 ≻ y2`; `Second` (1) means `y2 ≻ y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    First,
    Second,
}

impl Label {
    pub fn flipped(self) -> Self {
        match self {
            Label::First => Label::Second,
            Label::Second => Label::First,
        }
    }

    /// +1 for `First`, -1 for `Second`: multiplies Δ into the label-oriented margin.
    pub fn orientation(self) -> f64 {
        match self {
            Label::First => 1.0,
            Label::Second => -1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        self.into()
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        match label {
            Label::First => 0,
            Label::Second => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::First),
            1 => Ok(Label::Second),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// Ground truth: latent reward `r*(x, y)` for every (query, response).
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    rewards: Vec<Vec<f64>>,
}

impl World {
    pub fn new(rewards: Vec<Vec<f64>>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::Domain("world needs at least one query".into()));
        }
        for (q, row) in rewards.iter().enumerate() {
            if row.len() < 2 {
                return Err(Error::Domain(format!(
                    "query {q} has {} responses, need at least 2",
                    row.len()
                )));
            }
            if row.iter().any(|r| !r.is_finite()) {
                return Err(Error::Domain(format!("query {q} has a non-finite reward")));
            }
        }
        Ok(Self { rewards })
    }

    pub fn n_queries(&self) -> usize {
        self.rewards.len()
    }

    pub fn n_responses(&self, query: QueryId) -> Result<usize> {
        self.rewards
            .get(query.0)
            .map(Vec::len)
            .ok_or(Error::UnknownQuery(query.0))
    }

    pub fn reward(&self, query: QueryId, response: ResponseId) -> Result<f64> {
        let row = self.rewards.get(query.0).ok_or(Error::UnknownQuery(query.0))?;
        row.get(response.0).copied().ok_or(Error::UnknownResponse {
            query: query.0,
            response: response.0,
        })
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    /// Every unordered pair `(q, a, b)` with `a < b`.
    pub fn all_pairs(&self) -> Vec<(QueryId, ResponseId, ResponseId)> {
        let mut out = Vec::new();
        for (q, row) in self.rewards.iter().enumerate() {
            for a in 0..row.len() {
                for b in (a + 1)..row.len() {
                    out.push((QueryId(q), ResponseId(a), ResponseId(b)));
                }
            }
        }
        out
    }
}

/// Categorical policy over each query's response set, parameterized by logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    logits: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self> {
        for (q, row) in logits.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::Domain(format!("query {q} has no responses")));
            }
            if row.iter().any(|l| !l.is_finite()) {
                return Err(Error::Domain(format!("query {q} has a non-finite logit")));
            }
        }
        Ok(Self { logits })
    }

    /// All-zero logits over the world's response sets.
    pub fn uniform(world: &World) -> Self {
        Self {
            logits: world.rewards.iter().map(|row| vec![0.0; row.len()]).collect(),
        }
    }

    /// Logits equal to `scale · r*`, which ranks responses exactly as the world does.
    pub fn from_rewards(world: &World, scale: f64) -> Self {
        Self {
            logits: world
                .rewards
                .iter()
                .map(|row| row.iter().map(|r| scale * r).collect())
                .collect(),
        }
    }

    pub fn n_queries(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn logit(&self, query: QueryId, response: ResponseId) -> Result<f64> {
        self.row(query)?
            .get(response.0)
            .copied()
            .ok_or(Error::UnknownResponse {
                query: query.0,
                response: response.0,
            })
    }

    pub fn set_logit(&mut self, query: QueryId, response: ResponseId, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("non-finite logit for query {}", query.0)));
        }
        let slot = self
            .logits
            .get_mut(query.0)
            .ok_or(Error::UnknownQuery(query.0))?
            .get_mut(response.0)
            .ok_or(Error::UnknownResponse {
                query: query.0,
                response: response.0,
            })?;
        *slot = value;
        Ok(())
    }

    pub(crate) fn logits_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    /// True if both policies index the same (query, response) set.
    pub fn same_shape(&self, other: &Policy) -> bool {
        self.logits.len() == other.logits.len()
            && self.logits.iter().zip(&other.logits).all(|(a, b)| a.len() == b.len())
    }

    pub fn matches_world(&self, world: &World) -> bool {
        self.logits.len() == world.rewards.len()
            && self.logits.iter().zip(&world.rewards).all(|(a, b)| a.len() == b.len())
    }

    fn row(&self, query: QueryId) -> Result<&[f64]> {
        self.logits
            .get(query.0)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownQuery(query.0))
    }

    /// Log-softmax of the query's logits.
    pub fn log_probs(&self, query: QueryId) -> Result<Vec<f64>> {
        Ok(log_softmax(self.row(query)?))
    }

    pub fn probs(&self, query: QueryId) -> Result<Vec<f64>> {
        Ok(self.log_probs(query)?.into_iter().map(f64::exp).collect())
    }

    /// `log π(response | query)`.
    pub fn log_prob(&self, query: QueryId, response: ResponseId) -> Result<f64> {
        self.log_probs(query)?.get(response.0).copied().ok_or(Error::UnknownResponse {
            query: query.0,
            response: response.0,
        })
    }
}

/// One pairwise comparison `(x, y1, y2, c)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub query: QueryId,
    pub y1: ResponseId,
    pub y2: ResponseId,
    pub label: Label,
}

impl PreferenceSample {
    pub fn new(query: QueryId, y1: ResponseId, y2: ResponseId, label: Label) -> Result<Self> {
        if y1 == y2 {
            return Err(Error::Domain(format!(
                "sample on query {} compares response {} with itself",
                query.0, y1.0
            )));
        }
        Ok(Self { query, y1, y2, label })
    }

    pub fn with_label(self, label: Label) -> Self {
        Self { label, ..self }
    }

    /// Checks both responses against the world's response set.
    pub fn validate(&self, world: &World) -> Result<()> {
        let n = world.n_responses(self.query)?;
        for r in [self.y1, self.y2] {
            if r.0 >= n {
                return Err(Error::UnknownResponse {
                    query: self.query.0,
                    response: r.0,
                });
            }
        }
        if self.y1 == self.y2 {
            return Err(Error::Domain("y1 == y2".into()));
        }
        Ok(())
    }
}

/// Scalar hyperparameters, range-checked at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    beta: f64,
    eps: f64,
    alpha: f64,
    gamma: f64,
    eta: f64,
    margin_clip: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            beta: 0.5,
            eps: 0.1,
            alpha: 2.0,
            gamma: 0.1,
            eta: 0.0,
            margin_clip: 5.0,
        }
    }
}

impl Hyper {
    pub fn new(beta: f64, eps: f64, alpha: f64, gamma: f64, eta: f64, margin_clip: f64) -> Result<Self> {
        let h = Self { beta, eps, alpha, gamma, eta, margin_clip };
        h.check()?;
        Ok(h)
    }

    fn check(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidHyper(format!("{what} = {v}")));
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]; beta", self.beta);
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return bad("eps must lie in (0, 0.5); eps", self.eps);
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0; alpha", self.alpha);
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0; gamma", self.gamma);
        }
        if !(self.eta >= 0.0 && self.eta < 0.5) {
            return bad("eta must lie in [0, 0.5); eta", self.eta);
        }
        // +inf is accepted and disables clipping.
        if !(self.margin_clip > 0.0) {
            return bad("margin_clip must be > 0; margin_clip", self.margin_clip);
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn margin_clip(&self) -> f64 {
        self.margin_clip
    }

    /// The clip bound as an `Option`, `None` when clipping is disabled.
    pub fn clip(&self) -> Option<f64> {
        self.margin_clip.is_finite().then_some(self.margin_clip)
    }

    pub fn with_beta(self, beta: f64) -> Result<Self> {
        Self { beta, ..self }.checked()
    }
    pub fn with_eps(self, eps: f64) -> Result<Self> {
        Self { eps, ..self }.checked()
    }
    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        Self { alpha, ..self }.checked()
    }
    pub fn with_gamma(self, gamma: f64) -> Result<Self> {
        Self { gamma, ..self }.checked()
    }
    pub fn with_eta(self, eta: f64) -> Result<Self> {
        Self { eta, ..self }.checked()
    }
    pub fn with_margin_clip(self, margin_clip: f64) -> Result<Self> {
        Self { margin_clip, ..self }.checked()
    }

    fn checked(self) -> Result<Self> {
        self.check()?;
        Ok(self)
    }
}

/// `r̂(y, x) = β · (log π(y|x) − log π_ref(y|x))`.
pub fn implicit_reward(
    policy: &Policy,
    reference: &Policy,
    query: QueryId,
    response: ResponseId,
    beta: f64,
) -> Result<f64> {
    Ok(beta * (policy.log_prob(query, response)? - reference.log_prob(query, response)?))
}

/// `Δ = r̂(y1) − r̂(y2)`, optionally clipped to `[-clip, clip]`.
///
/// Pass `beta = 1` for the unscaled log-ratio margin used by the IPO family.
pub fn margin(
    policy: &Policy,
    reference: &Policy,
    sample: &PreferenceSample,
    beta: f64,
    clip: Option<f64>,
) -> Result<f64> {
    let raw = implicit_reward(policy, reference, sample.query, sample.y1, beta)?
        - implicit_reward(policy, reference, sample.query, sample.y2, beta)?;
    Ok(match clip {
        Some(m) => raw.clamp(-m, m),
        None => raw,
    })
}

/// Bradley-Terry probability `P*(y1 ≻ y2 | x) = σ(r*(y1) − r*(y2))`.
pub fn true_preference_prob(world: &World, query: QueryId, y1: ResponseId, y2: ResponseId) -> Result<f64> {
    Ok(sigmoid(world.reward(query, y1)? - world.reward(query, y2)?))
}
