use candle_core::Tensor;
use rand::Rng;

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::nn::log_softmax;

/// With probability `p` replaces the label set by one of its members,
/// chosen uniformly; otherwise returns it unchanged.
pub fn drop_labels<R: Rng + ?Sized>(labels: &LabelSet, p: f64, rng: &mut R) -> Result<LabelSet> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let coin: f64 = rng.random();
    let pick = rng.random_range(0..labels.len());
    if coin < p {
        let keep = *labels.iter().nth(pick).expect("index in range");
        Ok(LabelSet::from([keep]))
    } else {
        Ok(labels.clone())
    }
}

/// Uniform distribution over the positive classes.
pub fn target_distribution(labels: &LabelSet, n_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let mut t = vec![0.0; n_classes];
    let w = 1.0 / labels.len() as f64;
    for &c in labels {
        let c = c as usize;
        if c >= n_classes {
            return Err(Error::UnknownLabel(format!("class index {c}")));
        }
        t[c] = w;
    }
    Ok(t)
}

/// Stacks target rows into an `[n, n_classes]` tensor.
pub fn target_tensor(label_sets: &[LabelSet], n_classes: usize) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(label_sets.len() * n_classes);
    for l in label_sets {
        flat.extend(target_distribution(l, n_classes)?.into_iter().map(|v| v as f32));
    }
    crate::nn::tensor_from(flat, &[label_sets.len(), n_classes])
}

/// Batch mean of the cross-entropy `H(target, softmax(logits))`.
pub fn classification_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if logits.dims() != targets.dims() {
        return Err(Error::shape(targets.dims(), logits.dims()));
    }
    let n = logits.dim(0)? as f64;
    let loss = (targets.mul(&log_softmax(logits)?)?.sum_all()? * (-1.0 / n))?;
    let v = crate::nn::scalar(&loss)?;
    if !v.is_finite() {
        return Err(Error::NonFiniteLogits);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(drop_labels(&LabelSet::from([5]), 0.5, &mut rng).unwrap(), LabelSet::from([5]));
        }
        assert!(matches!(drop_labels(&LabelSet::new(), 0.5, &mut rng), Err(Error::EmptyLabels)));
    }

    #[test]
    fn drop_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let full = LabelSet::from([3, 7, 21]);
        let n = 10_000;
        let (mut kept, mut single) = (0usize, [0usize; 3]);
        for _ in 0..n {
            let out = drop_labels(&full, 0.5, &mut rng).unwrap();
            if out == full {
                kept += 1;
            } else {
                assert_eq!(out.len(), 1);
                let c = *out.iter().next().unwrap();
                single[[3, 7, 21].iter().position(|x| *x == c).unwrap()] += 1;
            }
        }
        let se = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
        assert!((kept as f64 / n as f64 - 0.5).abs() < 4.0 * se(0.5));
        for s in single {
            assert!((s as f64 / n as f64 - 1.0 / 6.0).abs() < 4.0 * se(1.0 / 6.0));
        }
    }

    #[test]
    fn targets() {
        let t = target_distribution(&LabelSet::from([5]), 43).unwrap();
        assert_eq!(t[5], 1.0);
        assert_eq!(t.iter().sum::<f64>(), 1.0);
        let t = target_distribution(&LabelSet::from([2, 4]), 43).unwrap();
        assert_eq!((t[2], t[4], t[3]), (0.5, 0.5, 0.0));
        assert!(target_distribution(&LabelSet::new(), 43).is_err());
        assert!(target_distribution(&LabelSet::from([43]), 43).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let dev = Device::Cpu;
        let logits = Tensor::zeros((1, 43), DType::F64, &dev).unwrap();
        let t = target_tensor(&[LabelSet::from([0])], 43).unwrap().to_dtype(DType::F64).unwrap();
        let l = crate::nn::scalar(&classification_loss(&logits, &t).unwrap()).unwrap();
        assert!((l - 43f64.ln()).abs() < 1e-12);

        let mut v = vec![0.0f64; 43];
        v[7] = 30.0;
        let logits = Tensor::from_vec(v, (1, 43), &dev).unwrap();
        let t = target_tensor(&[LabelSet::from([7])], 43).unwrap().to_dtype(DType::F64).unwrap();
        let l = crate::nn::scalar(&classification_loss(&logits, &t).unwrap()).unwrap();
        assert!(l < 1e-9);

        let bad = Tensor::from_vec(vec![f64::NAN; 43], (1, 43), &dev).unwrap();
        assert!(matches!(classification_loss(&bad, &t), Err(Error::NonFiniteLogits)));
    }

    proptest! {
        #[test]
        fn drop_output_is_nonempty_subset(labels in prop::collection::btree_set(0u16..43, 1..6), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = drop_labels(&labels, 0.5, &mut rng).unwrap();
            prop_assert!(!out.is_empty());
            prop_assert!(out.is_subset(&labels));
        }

        #[test]
        fn loss_at_target_is_entropy(labels in prop::collection::btree_set(0u16..10, 1..5)) {
            let t = target_distribution(&labels, 10).unwrap();
            // logits = log(target) (with -inf replaced by a large negative)
            let logits: Vec<f64> = t.iter().map(|p| if *p > 0.0 { p.ln() } else { -800.0 }).collect();
            let lt = Tensor::from_vec(logits, (1, 10), &Device::Cpu).unwrap();
            let tt = Tensor::from_vec(t.clone(), (1, 10), &Device::Cpu).unwrap();
            let l = crate::nn::scalar(&classification_loss(&lt, &tt).unwrap()).unwrap();
            let h: f64 = t.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
            prop_assert!(l >= 0.0);
            prop_assert!((l - h).abs() < 1e-12);
        }
    }
}
