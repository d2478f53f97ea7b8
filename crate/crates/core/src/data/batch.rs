use super::{binarize_depth, InputKind, PairedSample};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Shuffle permutations use streams above this so they never collide with
/// the model-initialization streams of the same seed.
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub depth: Tensor,
    pub rgb: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&PairedSample]) -> Result<Self> {
        let depth: Vec<&Tensor> = samples.iter().map(|s| &s.depth).collect();
        let rgb: Vec<&Tensor> = samples.iter().map(|s| &s.rgb).collect();
        Ok(Batch {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            depth: Tensor::stack(&depth)?,
            rgb: Tensor::stack(&rgb)?,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Replaces the depth channel with its binary map when requested.
    pub fn with_input_kind(mut self, kind: InputKind, threshold: f32) -> Self {
        if kind == InputKind::Binary {
            self.depth = binarize_depth(&self.depth, threshold);
        }
        self
    }
}

/// Epoch-wise seeded batching. Every epoch draws a fresh permutation from
/// `(seed, epoch)`; the final partial batch is kept. Any step's batch can be
/// produced directly, which makes resumed runs see the same data order.
#[derive(Clone, Debug)]
pub struct Batcher<'a> {
    samples: &'a [PairedSample],
    batch_size: usize,
    seed: u64,
    step: u64,
    cached_epoch: Option<(u64, Vec<usize>)>,
}

impl<'a> Batcher<'a> {
    pub fn new(samples: &'a [PairedSample], batch_size: usize, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("cannot batch an empty dataset"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(Batcher {
            samples,
            batch_size,
            seed,
            step: 0,
            cached_epoch: None,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.samples.len().div_ceil(self.batch_size) as u64
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        Rng::stream(self.seed, SHUFFLE_STREAM_BASE + epoch).permutation(self.samples.len())
    }

    pub fn batch_at(&mut self, step: u64) -> Result<Batch> {
        let per = self.batches_per_epoch();
        let (epoch, index) = (step / per, (step % per) as usize);
        if self.cached_epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.cached_epoch = Some((epoch, self.permutation(epoch)));
        }
        let perm = &self.cached_epoch.as_ref().expect("set above").1;
        let start = index * self.batch_size;
        let end = (start + self.batch_size).min(perm.len());
        let picked: Vec<&PairedSample> = perm[start..end].iter().map(|&i| &self.samples[i]).collect();
        Batch::from_samples(&picked)
    }

    /// Continue iteration from `step`.
    pub fn seek(&mut self, step: u64) {
        self.step = step;
    }
}

impl Iterator for Batcher<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.batch_at(self.step).ok();
        self.step += 1;
        b
    }
}

/// Endless epoch-after-epoch iterator over seeded batches.
pub fn batches(samples: &[PairedSample], batch_size: usize, seed: u64) -> Result<Batcher<'_>> {
    Batcher::new(samples, batch_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_dataset, SynthSpec};
    use std::collections::BTreeSet;

    fn ten() -> Vec<PairedSample> {
        synthesize_dataset(&SynthSpec {
            seed: 1,
            count: 10,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn partial_last_batch_is_kept() {
        let ds = ten();
        let sizes: Vec<usize> = batches(&ds, 4, 0).unwrap().take(3).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let b = batches(&ds, 4, 0).unwrap().next().unwrap();
        assert_eq!(b.depth.shape().n(), 4);
        assert_eq!(b.rgb.shape().c(), 3);
    }

    #[test]
    fn same_seed_same_order() {
        let ds = ten();
        let a: Vec<Vec<String>> = batches(&ds, 3, 5).unwrap().take(8).map(|b| b.ids).collect();
        let b: Vec<Vec<String>> = batches(&ds, 3, 5).unwrap().take(8).map(|b| b.ids).collect();
        let c: Vec<Vec<String>> = batches(&ds, 3, 6).unwrap().take(8).map(|b| b.ids).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn each_epoch_is_a_partition() {
        let ds = ten();
        let all: BTreeSet<String> = ds.iter().map(|s| s.id.clone()).collect();
        let mut it = batches(&ds, 4, 2).unwrap();
        for _epoch in 0..3 {
            let mut seen = Vec::new();
            for _ in 0..3 {
                seen.extend(it.next().unwrap().ids);
            }
            assert_eq!(seen.len(), 10);
            assert_eq!(seen.iter().cloned().collect::<BTreeSet<_>>(), all);
        }
    }

    #[test]
    fn random_access_matches_iteration() {
        let ds = ten();
        let seq: Vec<Vec<String>> = batches(&ds, 4, 3).unwrap().take(7).map(|b| b.ids).collect();
        let mut b = Batcher::new(&ds, 4, 3).unwrap();
        assert_eq!(b.batch_at(5).unwrap().ids, seq[5]);
        assert_eq!(b.batch_at(1).unwrap().ids, seq[1]);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(batches(&[], 4, 0).is_err());
        assert!(batches(&ten(), 0, 0).is_err());
    }
}
