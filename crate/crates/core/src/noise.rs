//! Symmetric label-flip channel and exact expected risk under it.
//!
//! Two sampled channels are provided and callers pick one explicitly:
//! [`flip_labels`] flips each label independently with probability η, and
//! [`flip_exact_fraction`] flips exactly `⌊ρ·n⌋` labels chosen uniformly
//! without replacement. Both draw from `ChaCha8Rng::seed_from_u64(seed)`.
//!
//! [`expected_risk`] needs no sampling: it enumerates both labels of every
//! sample and weights them `(1−η, η)`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{evaluate_delta, LossKind};
use crate::prefmodel::{margin, Hyper, Label, Policy, PreferenceSample, QueryId, ResponseId};

/// Samples after the flip channel, with the clean labels kept alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    samples: Vec<PreferenceSample>,
    clean_labels: Vec<Label>,
    flip_mask: Vec<bool>,
    eta: f64,
}

/// One line of the dataset file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub query: QueryId,
    pub y1: ResponseId,
    pub y2: ResponseId,
    pub label: Label,
    pub clean_label: Label,
    pub flipped: u8,
}

impl NoisyDataset {
    /// A dataset with no flips applied.
    pub fn clean(samples: Vec<PreferenceSample>) -> Self {
        let clean_labels = samples.iter().map(|s| s.label).collect();
        let flip_mask = vec![false; samples.len()];
        Self { samples, clean_labels, flip_mask, eta: 0.0 }
    }

    pub fn from_parts(
        samples: Vec<PreferenceSample>,
        clean_labels: Vec<Label>,
        flip_mask: Vec<bool>,
        eta: f64,
    ) -> Result<Self> {
        if samples.len() != clean_labels.len() || samples.len() != flip_mask.len() {
            return Err(Error::Domain("noisy dataset columns differ in length".into()));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Domain(format!("noise rate {eta} outside [0, 1]")));
        }
        for (i, ((s, c), f)) in samples.iter().zip(&clean_labels).zip(&flip_mask).enumerate() {
            if (s.label != *c) != *f {
                return Err(Error::Domain(format!("flip mask disagrees with labels at sample {i}")));
            }
        }
        Ok(Self { samples, clean_labels, flip_mask, eta })
    }

    pub fn samples(&self) -> &[PreferenceSample] {
        &self.samples
    }

    pub fn clean_labels(&self) -> &[Label] {
        &self.clean_labels
    }

    pub fn flip_mask(&self) -> &[bool] {
        &self.flip_mask
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_flipped(&self) -> usize {
        self.flip_mask.iter().filter(|&&f| f).count()
    }

    /// The samples with their original labels restored.
    pub fn clean_samples(&self) -> Vec<PreferenceSample> {
        self.samples
            .iter()
            .zip(&self.clean_labels)
            .map(|(s, &c)| s.with_label(c))
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = DatasetRecord> + '_ {
        self.samples
            .iter()
            .zip(&self.clean_labels)
            .zip(&self.flip_mask)
            .map(|((s, &c), &f)| DatasetRecord {
                query: s.query,
                y1: s.y1,
                y2: s.y2,
                label: s.label,
                clean_label: c,
                flipped: f as u8,
            })
    }

    pub fn from_records(records: &[DatasetRecord], eta: f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(records.len());
        let mut clean = Vec::with_capacity(records.len());
        let mut mask = Vec::with_capacity(records.len());
        for r in records {
            samples.push(PreferenceSample::new(r.query, r.y1, r.y2, r.label)?);
            clean.push(r.clean_label);
            mask.push(match r.flipped {
                0 => false,
                1 => true,
                v => return Err(Error::Domain(format!("flipped flag must be 0 or 1, got {v}"))),
            });
        }
        Self::from_parts(samples, clean, mask, eta)
    }

    fn from_mask(samples: &[PreferenceSample], mask: Vec<bool>, eta: f64) -> Self {
        let clean_labels = samples.iter().map(|s| s.label).collect();
        let noisy = samples
            .iter()
            .zip(&mask)
            .map(|(s, &f)| if f { s.with_label(s.label.flipped()) } else { *s })
            .collect();
        Self { samples: noisy, clean_labels, flip_mask: mask, eta }
    }
}

/// Flips each label independently with probability `eta`.
pub fn flip_labels(samples: &[PreferenceSample], eta: f64, seed: u64) -> Result<NoisyDataset> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("flip probability {eta} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = samples.iter().map(|_| rng.random::<f64>() < eta).collect();
    Ok(NoisyDataset::from_mask(samples, mask, eta))
}

/// Number of flips for ratio `ratio` over `n` samples: `⌊ratio·n⌋`.
///
/// A 1e-9 guard absorbs decimal-to-binary error so e.g. `0.29·100` yields 29.
pub fn exact_flip_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Flips exactly `⌊ratio·n⌋` labels, chosen uniformly without replacement.
pub fn flip_exact_fraction(samples: &[PreferenceSample], ratio: f64, seed: u64) -> Result<NoisyDataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!("flip ratio {ratio} outside [0, 1]")));
    }
    let n = samples.len();
    let k = exact_flip_count(ratio, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for i in index::sample(&mut rng, n, k) {
        mask[i] = true;
    }
    Ok(NoisyDataset::from_mask(samples, mask, ratio))
}

/// Mean loss of the samples on their own labels.
pub fn empirical_risk(
    kind: LossKind,
    policy: &Policy,
    reference: &Policy,
    samples: &[PreferenceSample],
    hyper: &Hyper,
) -> Result<f64> {
    expected_risk(kind, policy, reference, samples, hyper, 0.0)
}

/// Exact risk under the η-flip channel applied to `samples` (whose labels are
/// taken as clean): the mean of `(1−η)·ℓ(c) + η·ℓ(1−c)`.
///
/// Any η in `[0, 1]` is accepted; the result is affine in η.
pub fn expected_risk(
    kind: LossKind,
    policy: &Policy,
    reference: &Policy,
    samples: &[PreferenceSample],
    hyper: &Hyper,
    eta: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("noise rate {eta} outside [0, 1]")));
    }
    if samples.is_empty() {
        return Err(Error::Domain("risk over an empty dataset".into()));
    }
    let scale = kind.margin_scale(hyper.beta());
    let mut total = 0.0;
    for s in samples {
        let delta = margin(policy, reference, s, scale, None)?;
        let keep = evaluate_delta(kind, delta, s.label, hyper).eval.value;
        let flip = evaluate_delta(kind, delta, s.label.flipped(), hyper).eval.value;
        total += (1.0 - eta) * keep + eta * flip;
    }
    Ok(total / samples.len() as f64)
}

/// `|R_η − ((1−2η)·R_0 + η)|` for `kind`; zero up to rounding exactly when
/// the loss's two label values sum to one.
pub fn linear_risk_residual(
    kind: LossKind,
    policy: &Policy,
    reference: &Policy,
    samples: &[PreferenceSample],
    hyper: &Hyper,
    eta: f64,
) -> Result<f64> {
    let noisy = expected_risk(kind, policy, reference, samples, hyper, eta)?;
    let clean = expected_risk(kind, policy, reference, samples, hyper, 0.0)?;
    Ok((noisy - ((1.0 - 2.0 * eta) * clean + eta)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (Policy, Policy, Vec<PreferenceSample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let policy = Policy::new(logits).unwrap();
        let reference = Policy::new(vec![vec![0.0; 3]; 5]).unwrap();
        let samples = (0..n)
            .map(|_| {
                let q = rng.random_range(0..5);
                let a = rng.random_range(0..3);
                let b = (a + rng.random_range(1..3)) % 3;
                let label = if rng.random_bool(0.5) { Label::First } else { Label::Second };
                PreferenceSample::new(QueryId(q), ResponseId(a), ResponseId(b), label).unwrap()
            })
            .collect();
        (policy, reference, samples)
    }

    #[test]
    fn zero_and_certain_channels() {
        let (_, _, s) = toy(200, 1);
        let none = flip_labels(&s, 0.0, 9).unwrap();
        assert_eq!(none.n_flipped(), 0);
        assert_eq!(none.samples(), &s[..]);
        let all = flip_labels(&s, 1.0, 9).unwrap();
        assert!(all.flip_mask().iter().all(|&f| f));
        for (a, b) in all.samples().iter().zip(&s) {
            assert_eq!(a.label, b.label.flipped());
        }
        assert_eq!(all.clean_samples(), s);
    }

    #[test]
    fn flip_rate_concentrates() {
        // Binomial(10000, 0.3): 3σ = 3·sqrt(0.21/10000) = 0.01375 < 0.015
        let (_, _, s) = toy(10_000, 2);
        for seed in 0..20 {
            let d = flip_labels(&s, 0.3, seed).unwrap();
            let frac = d.n_flipped() as f64 / 10_000.0;
            assert!((frac - 0.3).abs() < 0.015, "seed {seed}: {frac}");
        }
    }

    #[test]
    fn flips_are_seeded() {
        let (_, _, s) = toy(300, 3);
        let a = flip_labels(&s, 0.4, 11).unwrap();
        let b = flip_labels(&s, 0.4, 11).unwrap();
        let c = flip_labels(&s, 0.4, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flip_mask(), c.flip_mask());
    }

    #[test]
    fn exact_fraction_counts() {
        let (_, _, s) = toy(500, 4);
        for &r in &[0.0, 0.1, 0.2, 0.29, 0.3, 0.4, 1.0] {
            let d = flip_exact_fraction(&s, r, 5).unwrap();
            assert_eq!(d.n_flipped(), exact_flip_count(r, 500));
        }
        assert_eq!(exact_flip_count(0.29, 100), 29);
        assert_eq!(exact_flip_count(0.4, 7), 2);
        assert_eq!(flip_exact_fraction(&s, 0.3, 5).unwrap().n_flipped(), 150);
    }

    #[test]
    fn risk_channel_identities() {
        let h = Hyper::default();
        let (p, r, s) = toy(50, 5);
        let clean = empirical_risk(LossKind::Dpo, &p, &r, &s, &h).unwrap();
        let mut manual = 0.0;
        for x in &s {
            manual += crate::losses::evaluate(LossKind::Dpo, &p, &r, x, &h).unwrap().value;
        }
        assert!((clean - manual / 50.0).abs() < 1e-14);
        let half = expected_risk(LossKind::Ropo, &p, &r, &s, &h, 0.5).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
        assert_eq!(linear_risk_residual(LossKind::Ropo, &p, &r, &s, &h, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ropo_linear_risk_example() {
        // one sample whose clean ROPO loss is exactly 0.3 → R_0.2 = 0.6·0.3 + 0.2 = 0.38
        let h = Hyper::default().with_margin_clip(f64::INFINITY).unwrap();
        let m = (0.7f64 / 0.3).ln(); // σ(-m) = 0.3
        let logit = m / h.beta();
        let p = Policy::new(vec![vec![logit, 0.0]]).unwrap();
        let r = Policy::new(vec![vec![0.0, 0.0]]).unwrap();
        let s = vec![PreferenceSample::new(QueryId(0), ResponseId(0), ResponseId(1), Label::First).unwrap()];
        let clean = expected_risk(LossKind::Ropo, &p, &r, &s, &h, 0.0).unwrap();
        assert!((clean - 0.3).abs() < 1e-14);
        let noisy = expected_risk(LossKind::Ropo, &p, &r, &s, &h, 0.2).unwrap();
        // exhaustive two-term expectation
        let two_term = 0.8 * clean + 0.2 * (1.0 - clean);
        assert!((noisy - 0.38).abs() < 1e-14);
        assert!((noisy - two_term).abs() < 1e-15);
    }

    #[test]
    fn dpo_breaks_linear_identity() {
        let h = Hyper::default();
        let (p, r, s) = toy(50, 6);
        assert!(linear_risk_residual(LossKind::Dpo, &p, &r, &s, &h, 0.2).unwrap() > 1e-3);
        assert!(linear_risk_residual(LossKind::Ropo, &p, &r, &s, &h, 0.2).unwrap() < 1e-10);
    }

    #[test]
    fn risk_is_affine_in_eta() {
        let h = Hyper::default();
        let (p, r, s) = toy(40, 7);
        for kind in LossKind::BASIC {
            let f = |e| expected_risk(kind, &p, &r, &s, &h, e).unwrap();
            let (a, b, c) = (f(0.05), f(0.25), f(0.45));
            // collinearity: b is the midpoint of a and c
            assert!((b - 0.5 * (a + c)).abs() < 1e-12 * a.abs().max(1.0), "{kind}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = Hyper::default();
        let (p, r, s) = toy(5, 8);
        assert!(flip_labels(&s, 1.5, 0).is_err());
        assert!(expected_risk(LossKind::Dpo, &p, &r, &[], &h, 0.1).is_err());
        let d = flip_labels(&s, 0.5, 0).unwrap();
        let mut mask = d.flip_mask().to_vec();
        mask[0] = !mask[0];
        assert!(NoisyDataset::from_parts(d.samples().to_vec(), d.clean_labels().to_vec(), mask, 0.5).is_err());
    }
}
