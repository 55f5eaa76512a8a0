use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::manifest::{DatasetManifest, Split};
use super::patch::Domain;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// One training step's worth of unpaired ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub cloudy: Vec<String>,
    pub clear: Vec<String>,
}

/// Cloudy-driven batch stream: every cloudy training patch once per epoch
/// in seeded order, each batch matched with a random clear batch.
#[derive(Debug, Clone)]
pub struct PairStream {
    cloudy: Vec<String>,
    clear: Vec<String>,
    batch_size: usize,
    seed: u64,
}

pub fn make_training_pair_stream(
    manifest: &DatasetManifest,
    batch_size: usize,
    seed: u64,
) -> Result<PairStream> {
    PairStream::new(
        manifest.ids(Split::Train, Domain::Cloudy),
        manifest.ids(Split::Train, Domain::Clear),
        batch_size,
        seed,
    )
}

impl PairStream {
    pub fn new(cloudy: Vec<String>, clear: Vec<String>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::ValidationError {
                key: "batch_size".into(),
                reason: "must be at least 1".into(),
            });
        }
        if cloudy.is_empty() {
            return Err(Error::EmptyDomain("cloudy"));
        }
        if clear.is_empty() {
            return Err(Error::EmptyDomain("clear"));
        }
        Ok(Self {
            cloudy,
            clear,
            batch_size,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.cloudy.len().div_ceil(self.batch_size)
    }

    /// Batches of epoch `epoch` (0-based); a pure function of seed and epoch.
    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = PairBatch> + '_ {
        let mut rng = rng_for(self.seed, &format!("pairs/{epoch}"));
        let mut order: Vec<usize> = (0..self.cloudy.len()).collect();
        order.shuffle(&mut rng);
        let bs = self.batch_size;
        let n_batches = self.batches_per_epoch();
        (0..n_batches).map(move |b| {
            let chunk = &order[b * bs..((b + 1) * bs).min(order.len())];
            let k = chunk.len();
            let clear_idx: Vec<usize> = if self.clear.len() >= k {
                index::sample(&mut rng, self.clear.len(), k).into_vec()
            } else {
                (0..k).map(|_| rng.random_range(0..self.clear.len())).collect()
            };
            PairBatch {
                cloudy: chunk.iter().map(|i| self.cloudy[*i].clone()).collect(),
                clear: clear_idx.into_iter().map(|i| self.clear[i].clone()).collect(),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::HashMap;

    fn ids(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn deterministic() {
        let s = PairStream::new(ids(50, "c"), ids(80, "y"), 8, 3).unwrap();
        let a: Vec<_> = s.epoch(0).collect();
        let b: Vec<_> = s.epoch(0).collect();
        assert_eq!(a, b);
        let c: Vec<_> = s.epoch(1).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn archive_scale_batch_count() {
        let s = PairStream::new(ids(9_280, "c"), ids(100, "y"), 32, 0).unwrap();
        let batches: Vec<_> = s.epoch(0).collect();
        assert_eq!(batches.len(), 290);
        assert!(batches.iter().all(|b| b.cloudy.len() == b.clear.len()));
    }

    #[test]
    fn epoch_covers_every_cloudy_patch_once() {
        let s = PairStream::new(ids(37, "c"), ids(5, "y"), 8, 11).unwrap();
        let mut seen: Vec<String> = s.epoch(2).flat_map(|b| b.cloudy).collect();
        seen.sort();
        let mut expected = ids(37, "c");
        expected.sort();
        assert_eq!(seen, expected);
        // last batch is partial
        assert_eq!(s.epoch(2).last().unwrap().cloudy.len(), 5);
    }

    #[test]
    fn empty_domains() {
        assert!(matches!(
            PairStream::new(vec![], ids(3, "y"), 2, 0),
            Err(Error::EmptyDomain("cloudy"))
        ));
        assert!(matches!(
            PairStream::new(ids(3, "c"), vec![], 2, 0),
            Err(Error::EmptyDomain("clear"))
        ));
    }

    #[test]
    fn clear_draws_are_uniform() {
        // 10^4 single-patch clear batches from a pool of 100
        let s = PairStream::new(ids(10_000, "c"), ids(100, "y"), 1, 5).unwrap();
        let mut counts: HashMap<String, f64> = HashMap::new();
        for b in s.epoch(0) {
            *counts.entry(b.clear[0].clone()).or_default() += 1.0;
        }
        let expected = 100.0;
        let chi2: f64 = ids(100, "y")
            .iter()
            .map(|k| {
                let o = counts.get(k).copied().unwrap_or(0.0);
                (o - expected).powi(2) / expected
            })
            .sum();
        let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 = {chi2} >= {critical}");
    }
}
