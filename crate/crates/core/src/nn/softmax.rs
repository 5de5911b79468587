//! Softmax, categorical cross-entropy and deterministic argmax.

/// Numerically safe softmax: shift by the maximum before exponentiating.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Floor applied to probabilities before taking logs.
pub const CE_CLAMP: f64 = 1e-12;

/// `-ln p[target]` with the probability clamped away from zero.
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(CE_CLAMP).ln()
}

/// Gradient of cross-entropy w.r.t. the logits feeding the softmax:
/// `p - onehot(target)`.
pub fn softmax_ce_grad(probs: &[f64], target: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[target] -= 1.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_to_one_and_orders_preserved() {
        let p = softmax(&[1.0, 2.0, 0.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[1] > p[0] && p[0] > p[2]);
    }

    #[test]
    fn equal_logits_give_uniform() {
        let p = softmax(&[3.0, 3.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = softmax(&[1000.0, 999.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let q = softmax(&[-1000.0, -1000.0]);
        assert!((q[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_way_loss_is_ln_two() {
        let p = softmax(&[0.0, 0.0]);
        assert!((cross_entropy(&p, 0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn clamp_prevents_infinite_loss() {
        let loss = cross_entropy(&[0.0, 1.0], 0);
        assert!((loss - (-CE_CLAMP.ln())).abs() < 1e-9);
        assert!(loss.is_finite());
    }

    #[test]
    fn argmax_ties_resolve_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let logits = vec![0.3, -0.7, 1.2];
        let target = 2;
        let loss = |l: &[f64]| cross_entropy(&softmax(l), target);
        let analytic = softmax_ce_grad(&softmax(&logits), target);
        let h = 1e-6;
        for i in 0..3 {
            let mut lp = logits.clone();
            lp[i] += h;
            let mut lm = logits.clone();
            lm[i] -= h;
            let fd = (loss(&lp) - loss(&lm)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-9, "logit {i}");
        }
    }
}
