use mrrc_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::PAD;
use super::SceneExample;
use crate::error::{Error, Result};

/// Score added to masked region slots before the softmax.
pub const MASKED_SCORE: f64 = -1e30;

/// Live/padded flags for a `batch × k` grid of region slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    k: usize,
    live: Vec<bool>,
}

impl RegionMask {
    pub fn new(k: usize, live: Vec<bool>) -> Result<Self> {
        if k == 0 || live.is_empty() || live.len() % k != 0 {
            return Err(Error::contract(format!("mask of {} flags is not a multiple of k = {k}", live.len())));
        }
        Ok(RegionMask { k, live })
    }

    pub fn all_live(batch: usize, k: usize) -> Self {
        RegionMask {
            k,
            live: vec![true; batch * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn batch(&self) -> usize {
        self.live.len() / self.k
    }

    pub fn row(&self, b: usize) -> &[bool] {
        &self.live[b * self.k..(b + 1) * self.k]
    }

    pub fn live_count(&self, b: usize) -> usize {
        self.row(b).iter().filter(|&&x| x).count()
    }

    pub fn check_nonempty(&self) -> Result<()> {
        match (0..self.batch()).find(|&b| self.live_count(b) == 0) {
            Some(b) => Err(Error::contract(format!("row {b} has every region masked"))),
            None => Ok(()),
        }
    }

    /// `0` on live slots and a huge negative score on masked ones.
    pub fn score_bias(&self) -> Tensor {
        let data = self.live.iter().map(|&l| if l { 0.0 } else { MASKED_SCORE }).collect();
        Tensor::new(vec![self.batch(), self.k], data).expect("mask shape")
    }

    /// Uniform weights `1/k_live` over live slots, for masked means.
    pub fn uniform_weights(&self) -> Result<Tensor> {
        self.check_nonempty()?;
        let mut data = Vec::with_capacity(self.live.len());
        for b in 0..self.batch() {
            let w = 1.0 / self.live_count(b) as f64;
            data.extend(self.row(b).iter().map(|&l| if l { w } else { 0.0 }));
        }
        Ok(Tensor::new(vec![self.batch(), self.k], data)?)
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        RegionMask {
            k: self.k,
            live: rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect(),
        }
    }
}

/// Padded region features and tags for a batch of scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBatch {
    /// `batch × k_max × region_dim`, zero on masked slots.
    pub regions: Tensor,
    pub mask: RegionMask,
    /// `batch × tag_dim`.
    pub tags: Tensor,
}

impl SceneBatch {
    pub fn from_examples(examples: &[&SceneExample], k_max: usize) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::contract("empty scene batch"))?;
        let (r, s) = (first.region_dim(), first.tags.len());
        if r == 0 || s == 0 {
            return Err(Error::contract(format!("scene {} has empty regions or tags", first.id)));
        }
        let mut regions = Vec::with_capacity(examples.len() * k_max * r);
        let mut live = Vec::with_capacity(examples.len() * k_max);
        let mut tags = Vec::with_capacity(examples.len() * s);
        for ex in examples {
            if ex.k() == 0 || ex.k() > k_max {
                return Err(Error::contract(format!("scene {} has {} regions, k_max is {k_max}", ex.id, ex.k())));
            }
            if ex.regions.iter().any(|v| v.len() != r) || ex.tags.len() != s {
                return Err(Error::contract(format!("scene {} dims differ from batch", ex.id)));
            }
            for slot in 0..k_max {
                match ex.regions.get(slot) {
                    Some(v) => regions.extend_from_slice(v),
                    None => regions.extend(std::iter::repeat(0.0).take(r)),
                }
            }
            live.extend(ex.region_mask(k_max));
            tags.extend_from_slice(&ex.tags);
        }
        let b = examples.len();
        Ok(SceneBatch {
            regions: Tensor::new(vec![b, k_max, r], regions)?,
            mask: RegionMask::new(k_max, live)?,
            tags: Tensor::new(vec![b, s], tags)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.mask.batch()
    }

    /// Keeps the listed rows, in order; rows may repeat.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let pick = |t: &Tensor| -> Result<Tensor> {
            let mut shape = t.shape().to_vec();
            let mut data = Vec::with_capacity(rows.len() * t.len() / shape[0]);
            for &r in rows {
                if r >= shape[0] {
                    return Err(Error::contract(format!("row {r} out of range for batch of {}", shape[0])));
                }
                data.extend_from_slice(t.row_slice(r));
            }
            shape[0] = rows.len();
            Ok(Tensor::new(shape, data)?)
        };
        if rows.is_empty() {
            return Err(Error::contract("selecting no rows"));
        }
        Ok(SceneBatch {
            regions: pick(&self.regions)?,
            mask: self.mask.select(rows),
            tags: pick(&self.tags)?,
        })
    }
}

/// A padded mini-batch: scenes plus their first caption.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub scenes: SceneBatch,
    /// Captions padded with PAD to the batch maximum length.
    pub captions: Vec<Vec<usize>>,
    /// True on real (non-PAD) caption positions.
    pub caption_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn from_examples(examples: &[&SceneExample], k_max: usize) -> Result<Self> {
        let captions: Vec<&Vec<usize>> = examples
            .iter()
            .map(|ex| ex.captions.first().ok_or_else(|| Error::contract(format!("scene {} has no caption", ex.id))))
            .collect::<Result<_>>()?;
        Self::with_captions(examples, &captions.iter().map(|c| c.as_slice()).collect::<Vec<_>>(), k_max)
    }

    /// Batches scenes with explicitly chosen token sequences.
    pub fn with_captions(examples: &[&SceneExample], captions: &[&[usize]], k_max: usize) -> Result<Self> {
        if captions.len() != examples.len() {
            return Err(Error::contract("one caption per scene required"));
        }
        let scenes = SceneBatch::from_examples(examples, k_max)?;
        let len = captions.iter().map(|c| c.len()).max().unwrap_or(0);
        let padded = captions
            .iter()
            .map(|c| {
                let mut v = c.to_vec();
                v.resize(len, PAD);
                v
            })
            .collect();
        let caption_mask = captions
            .iter()
            .map(|c| (0..len).map(|i| i < c.len()).collect())
            .collect();
        Ok(Batch {
            ids: examples.iter().map(|e| e.id.clone()).collect(),
            scenes,
            captions: padded,
            caption_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lazily assembled padded batches over a fixed example order.
pub struct Batches<'a> {
    examples: &'a [SceneExample],
    order: Vec<usize>,
    batch_size: usize,
    k_max: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk: Vec<&SceneExample> = self.order[self.pos..end].iter().map(|&i| &self.examples[i]).collect();
        self.pos = end;
        Some(Batch::from_examples(&chunk, self.k_max).expect("examples validated by make_batches"))
    }
}

fn shuffled_order(n: usize, seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// Example indices of each batch [`make_batches`] yields for the same
/// arguments.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || n == 0 {
        return Err(Error::contract("batching needs at least one example and batch_size >= 1"));
    }
    Ok(shuffled_order(n, seed, shuffle).chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Splits `examples` into padded batches; the final partial batch is kept.
pub fn make_batches(
    examples: &[SceneExample],
    batch_size: usize,
    k_max: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    if examples.is_empty() {
        return Err(Error::contract("cannot batch an empty dataset"));
    }
    let (r, s) = (examples[0].region_dim(), examples[0].tags.len());
    for ex in examples {
        if ex.k() == 0 || ex.k() > k_max || ex.region_dim() != r || ex.tags.len() != s || ex.captions.is_empty() {
            return Err(Error::contract(format!("scene {} does not fit the batch layout", ex.id)));
        }
    }
    Ok(Batches {
        examples,
        order: shuffled_order(examples.len(), seed, shuffle),
        batch_size,
        k_max,
        pos: 0,
    })
}
