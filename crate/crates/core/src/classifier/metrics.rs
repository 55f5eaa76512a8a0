use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Aggregate counts over all samples.
    #[default]
    Micro,
    /// Mean of per-sample precision and recall.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    /// Set when some ratio had a zero denominator and was scored as 0.
    pub degenerate: bool,
}

/// `(1 + b^2) P R / (b^2 P + R)`, 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

fn ratio(num: usize, den: usize, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate_metrics(
    predicted: &[LabelSet],
    truth: &[LabelSet],
    averaging: Averaging,
) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: 0 });
    }
    let mut degenerate = false;
    let (precision, recall) = match averaging {
        Averaging::Micro => {
            let (mut tp, mut np, mut nt) = (0, 0, 0);
            for (p, t) in predicted.iter().zip(truth) {
                tp += p.intersection(t).count();
                np += p.len();
                nt += t.len();
            }
            (ratio(tp, np, &mut degenerate), ratio(tp, nt, &mut degenerate))
        }
        Averaging::PerSample => {
            let (mut ps, mut rs) = (0.0, 0.0);
            for (p, t) in predicted.iter().zip(truth) {
                let tp = p.intersection(t).count();
                ps += ratio(tp, p.len(), &mut degenerate);
                rs += ratio(tp, t.len(), &mut degenerate);
            }
            let n = predicted.len() as f64;
            (ps / n, rs / n)
        }
    };
    Ok(MetricsReport {
        precision,
        recall,
        f1: f_beta(precision, recall, 1.0),
        f2: f_beta(precision, recall, 2.0),
        degenerate,
    })
}

/// Multi-label decision rule on a softmax vector:
/// `{c : p_c >= max(tau_abs, alpha * max p)}`, argmax always included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub tau_abs: f64,
    pub alpha: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        Self {
            tau_abs: 0.1,
            alpha: 0.3,
        }
    }
}

pub fn predict_labels(probabilities: &[f32], rule: ThresholdRule) -> LabelSet {
    let mut best = 0;
    for (i, p) in probabilities.iter().enumerate() {
        if *p > probabilities[best] {
            best = i;
        }
    }
    let max = probabilities.get(best).copied().unwrap_or(0.0) as f64;
    let cut = rule.tau_abs.max(rule.alpha * max);
    let mut out: LabelSet = probabilities
        .iter()
        .enumerate()
        .filter(|(_, p)| **p as f64 >= cut)
        .map(|(i, _)| i as u16)
        .collect();
    if !probabilities.is_empty() {
        out.insert(best as u16);
    }
    out
}

/// `{0.01, 0.02, ..., 0.50}`.
pub fn tau_grid() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 100.0).collect()
}

/// `{0.0, 0.1, ..., 0.9}`.
pub fn alpha_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

/// Exhaustive search for the rule maximizing F2; ties keep the earliest
/// grid point (smallest alpha, then smallest tau).
pub fn tune_threshold(
    probabilities: &[Vec<f32>],
    truth: &[LabelSet],
    taus: &[f64],
    alphas: &[f64],
    averaging: Averaging,
) -> Result<(ThresholdRule, MetricsReport)> {
    let mut best: Option<(ThresholdRule, MetricsReport)> = None;
    for &alpha in alphas {
        for &tau_abs in taus {
            let rule = ThresholdRule { tau_abs, alpha };
            let pred: Vec<LabelSet> = probabilities.iter().map(|p| predict_labels(p, rule)).collect();
            let m = evaluate_metrics(&pred, truth, averaging)?;
            if best.as_ref().is_none_or(|(_, b)| m.f2 > b.f2) {
                best = Some((rule, m));
            }
        }
    }
    best.ok_or_else(|| Error::BadConfig("empty threshold grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn s(v: &[u16]) -> LabelSet {
        v.iter().copied().collect()
    }

    #[test]
    fn perfect_and_hand_computed() {
        let t = vec![s(&[1, 2]), s(&[3])];
        let m = evaluate_metrics(&t, &t, Averaging::Micro).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.f2), (1.0, 1.0, 1.0, 1.0));

        let m = evaluate_metrics(&[s(&[1])], &[s(&[1, 2])], Averaging::Micro).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f2 - 2.5 / 4.5).abs() < 1e-15);
    }

    #[test]
    fn reference_f_beta() {
        assert!((f_beta(0.85, 0.77, 1.0) - 0.8080).abs() < 1e-4);
        assert!((f_beta(0.85, 0.77, 2.0) - 0.7848).abs() < 1e-4);
    }

    #[test]
    fn degenerate_and_errors() {
        let m = evaluate_metrics(&[s(&[])], &[s(&[1])], Averaging::Micro).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.f2, 0.0);
        assert!(matches!(
            evaluate_metrics(&[s(&[1])], &[], Averaging::Micro),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn per_sample_differs_from_micro() {
        let pred = vec![s(&[1]), s(&[1, 2, 3, 4])];
        let truth = vec![s(&[1]), s(&[1])];
        let micro = evaluate_metrics(&pred, &truth, Averaging::Micro).unwrap();
        let ps = evaluate_metrics(&pred, &truth, Averaging::PerSample).unwrap();
        assert!((micro.precision - 2.0 / 5.0).abs() < 1e-15);
        assert!((ps.precision - (1.0 + 0.25) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rule_examples() {
        let mut one_hot = vec![0.0f32; 43];
        one_hot[9] = 1.0;
        for rule in [
            ThresholdRule { tau_abs: 0.0, alpha: 0.01 },
            ThresholdRule { tau_abs: 0.5, alpha: 0.9 },
        ] {
            assert_eq!(predict_labels(&one_hot, rule), s(&[9]));
        }
        let uniform = vec![1.0f32 / 43.0; 43];
        let all = predict_labels(&uniform, ThresholdRule { tau_abs: 0.0, alpha: 0.5 });
        assert_eq!(all.len(), 43);
    }

    #[test]
    fn tuned_tau_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n_classes = 8;
        let mut probs = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..60 {
            let k = rng.random_range(1..=3);
            let labels: LabelSet = rand::seq::index::sample(&mut rng, n_classes, k)
                .into_iter()
                .map(|c| c as u16)
                .collect();
            let mut p: Vec<f32> = (0..n_classes).map(|_| rng.random::<f32>() * 0.3).collect();
            for &c in &labels {
                p[c as usize] += rng.random::<f32>() * 1.5;
            }
            let z: f32 = p.iter().sum();
            probs.push(p.into_iter().map(|v| v / z).collect::<Vec<_>>());
            truth.push(labels);
        }
        let (rule, m) = tune_threshold(&probs, &truth, &tau_grid(), &[0.0], Averaging::Micro).unwrap();

        // independent brute force on the documented grid
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 1..=50 {
            let tau = i as f64 / 100.0;
            let (mut tp, mut np, mut nt) = (0.0, 0.0, 0.0);
            for (p, t) in probs.iter().zip(&truth) {
                let arg = (0..n_classes).fold(0, |b, c| if p[c] > p[b] { c } else { b });
                for c in 0..n_classes {
                    let on = c == arg || p[c] as f64 >= tau;
                    let pos = t.contains(&(c as u16));
                    if on {
                        np += 1.0;
                    }
                    if pos {
                        nt += 1.0;
                    }
                    if on && pos {
                        tp += 1.0;
                    }
                }
            }
            let (pr, rc) = (tp / np, tp / nt);
            let f2 = 5.0 * pr * rc / (4.0 * pr + rc);
            if f2 > best.0 {
                best = (f2, tau);
            }
        }
        assert_eq!(rule.tau_abs, best.1);
        assert!((m.f2 - best.0).abs() < 1e-12);
    }

    fn label_set() -> impl Strategy<Value = LabelSet> {
        prop::collection::btree_set(0u16..10, 0..4)
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((label_set(), label_set()), 1..12), seed in any::<u64>()) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p2: Vec<_> = idx.iter().map(|i| p[*i].clone()).collect();
            let t2: Vec<_> = idx.iter().map(|i| t[*i].clone()).collect();
            for avg in [Averaging::Micro, Averaging::PerSample] {
                let a = evaluate_metrics(&p, &t, avg).unwrap();
                let b = evaluate_metrics(&p2, &t2, avg).unwrap();
                prop_assert!((a.f2 - b.f2).abs() < 1e-12 && (a.precision - b.precision).abs() < 1e-12);
                for v in [a.precision, a.recall, a.f1, a.f2] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn f1_equals_f2_when_p_equals_r(p in 0.0f64..1.0) {
            prop_assert!((f_beta(p, p, 1.0) - f_beta(p, p, 2.0)).abs() < 1e-12);
        }

        #[test]
        fn rule_monotone_and_contains_argmax(raw in prop::collection::vec(0.001f32..1.0, 2..20), t1 in 0.0f64..0.6, t2 in 0.0f64..0.6, alpha in 0.0f64..1.0) {
            let z: f32 = raw.iter().sum();
            let p: Vec<f32> = raw.iter().map(|v| v / z).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = predict_labels(&p, ThresholdRule { tau_abs: lo, alpha });
            let b = predict_labels(&p, ThresholdRule { tau_abs: hi, alpha });
            prop_assert!(b.is_subset(&a));
            let arg = (0..p.len()).fold(0, |m, c| if p[c] > p[m] { c } else { m }) as u16;
            prop_assert!(b.contains(&arg));
        }
    }
}
