//! Synthetic scene/caption data, dataset files, and padded batching.

mod batch;
mod grammar;
mod io;
mod vocab;

pub use batch::{batch_indices, make_batches, Batch, Batches, RegionMask, SceneBatch};
pub use grammar::{generate_dataset, GrammarSpec, ObjectLabel, SyntheticGrammar};
pub use io::{load_dataset, save_dataset, validate_tokens};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

/// One training instance.
///
/// `regions` holds only live regions; padding to `k_max` (with zero vectors
/// and a false mask bit) happens when scenes are batched.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneExample {
    pub id: String,
    pub regions: Vec<Vec<f64>>,
    /// Per-tag occurrence probabilities in `[0, 1]`.
    pub tags: Vec<f64>,
    /// Token id sequences, each starting with BOS and ending with EOS.
    pub captions: Vec<Vec<usize>>,
}

impl SceneExample {
    pub fn k(&self) -> usize {
        self.regions.len()
    }

    pub fn region_dim(&self) -> usize {
        self.regions.first().map_or(0, Vec::len)
    }

    pub fn region_mask(&self, k_max: usize) -> Vec<bool> {
        (0..k_max).map(|i| i < self.regions.len()).collect()
    }

    /// Reference captions with BOS/EOS/PAD stripped.
    pub fn references(&self) -> Vec<Vec<usize>> {
        self.captions.iter().map(|c| strip_special(c)).collect()
    }
}

pub fn strip_special(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().filter(|&t| !matches!(t, PAD | BOS | EOS)).collect()
}
