//! Numerically stable scalar helpers.
//!
//! Every log-sigmoid in the crate goes through [`softplus`], which never
//! exponentiates a positive argument and so stays finite for any finite input.

/// `log(1 + exp(x))`, computed as `max(x, 0) + log1p(exp(-|x|))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function `1 / (1 + exp(-x))`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    if x >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

/// `log σ(x) = -softplus(-x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `σ(x)·σ(-x)`, the derivative of the logistic function.
#[inline]
pub fn sigmoid_slope(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// Log-softmax. The largest entry's value is computed as `-ln_1p(Σ others)`
/// so saturated rows keep full relative precision.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let Some((k, &max)) = xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return Vec::new();
    };
    let rest: f64 = xs.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, x)| (x - max).exp()).sum();
    let tail = rest.ln_1p();
    xs.iter().enumerate().map(|(j, x)| if j == k { -tail } else { (x - max) - tail }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry() {
        for &t in &[-700.0, -30.0, -1.3, 0.0, 0.4, 12.0, 700.0] {
            assert!((sigmoid(t) + sigmoid(-t) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn log_sigmoid_is_finite_at_extremes() {
        assert!((log_sigmoid(-700.0) + 700.0).abs() < 1e-12);
        assert!(log_sigmoid(700.0) <= 0.0);
        assert!(log_sigmoid(700.0).is_finite());
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-16);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for i in -200..=200 {
            let x = i as f64 / 10.0;
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-13 * naive.max(1.0));
        }
    }

    #[test]
    fn log_softmax_shift_invariance() {
        let a = log_softmax(&[1.0, 2.0, 3.0]);
        let b = log_softmax(&[1001.0, 1002.0, 1003.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(log_softmax(&[]).is_empty());
    }
}
