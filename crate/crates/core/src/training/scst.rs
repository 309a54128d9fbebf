//! Self-critical sequence training.
//!
//! For each scene a caption is sampled from the model and another is
//! decoded greedily. The surrogate loss
//! `-(γ/b) Σ_r (R(sample_r) - R(greedy_r)) Σ_t log p(sample_r,t)`
//! is built by teacher-forcing the sampled tokens, so its gradient is the
//! usual REINFORCE estimate with the greedy reward as baseline.

use mrrc_tensor::{derive_seed, Graph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{cider_lite, sentence_bleu4, IdfTable};
use super::{Optimizer, TrainConfig};
use crate::data::{batch_indices, strip_special, Batch, SceneExample, BOS, PAD};
use crate::decoder::{greedy_decode, sample_decode};
use crate::error::{Error, Result};
use crate::models::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Bleu4Smoothed,
    CiderLite,
}

/// Sequence reward in `[0, 1]` against a scene's references.
#[derive(Clone, Debug)]
pub struct RewardFn {
    kind: RewardKind,
    idf: IdfTable,
}

impl RewardFn {
    /// IDF statistics for CIDEr-lite are taken from `data`'s references.
    pub fn new(kind: RewardKind, data: &[SceneExample]) -> Self {
        let refs: Vec<Vec<Vec<usize>>> = data.iter().map(SceneExample::references).collect();
        RewardFn {
            kind,
            idf: IdfTable::new(&refs),
        }
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    /// Special tokens in `tokens` are ignored; `references` must already
    /// be stripped.
    pub fn reward(&self, tokens: &[usize], references: &[Vec<usize>]) -> f64 {
        let cand = strip_special(tokens);
        match self.kind {
            RewardKind::Bleu4Smoothed => sentence_bleu4(&cand, references),
            RewardKind::CiderLite => cider_lite(&cand, references, &self.idf),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScstStats {
    pub loss: f64,
    pub mean_sample_reward: f64,
    pub mean_greedy_reward: f64,
    /// Sampled token sequences, ending in EOS unless truncated.
    #[serde(skip)]
    pub samples: Vec<Vec<usize>>,
    #[serde(skip)]
    pub advantages: Vec<f64>,
}

/// Computes the surrogate loss and leaves its gradient in the model's
/// parameter store (previous gradients are discarded). Rows whose
/// advantage is zero are left out; when no row remains the gradient is
/// exactly zero.
pub fn scst_step(
    model: &mut Model,
    scenes: &[&SceneExample],
    reward: &RewardFn,
    gamma: f64,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ScstStats> {
    if !(gamma > 0.0) {
        return Err(Error::contract(format!("gamma must be positive, got {gamma}")));
    }
    let batch = Batch::from_examples(scenes, model.config().k_max)?;
    let samples = sample_decode(&*model, &batch.scenes, max_len, rng)?;
    let greedy = greedy_decode(&*model, &batch.scenes, max_len)?;

    let b = scenes.len();
    let mut advantages = Vec::with_capacity(b);
    let (mut rs, mut rg) = (0.0, 0.0);
    for (i, ex) in scenes.iter().enumerate() {
        let refs = ex.references();
        let s = reward.reward(&samples[i], &refs);
        let g = reward.reward(&greedy[i], &refs);
        rs += s;
        rg += g;
        advantages.push(s - g);
    }

    let store = model.params_mut();
    store.zero_grad();
    let mut loss = 0.0;
    if advantages.iter().any(|&a| a != 0.0) {
        let len = 1 + samples.iter().map(Vec::len).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(b);
        let mut weights = Vec::with_capacity(b);
        for (s, &adv) in samples.iter().zip(&advantages) {
            let mut row = vec![BOS];
            row.extend_from_slice(s);
            let coef = -gamma / b as f64 * adv;
            let w: Vec<f64> = (0..len - 1).map(|t| if t < s.len() { coef } else { 0.0 }).collect();
            row.resize(len, PAD);
            tokens.push(row);
            weights.push(w);
        }
        let mut g = Graph::new();
        let (bindings, mv) = model.bind(&mut g)?;
        let total = model.log_likelihood(&mut g, &mv, &batch.scenes, &tokens, &weights)?;
        loss = g.value(total).item();
        g.backward(total)?;
        model.params_mut().accumulate(&g, &bindings);
    } else {
        let mut g = Graph::new();
        let (bindings, _) = model.bind(&mut g)?;
        model.params_mut().accumulate(&g, &bindings);
    }

    Ok(ScstStats {
        loss,
        mean_sample_reward: rs / b as f64,
        mean_greedy_reward: rg / b as f64,
        samples,
        advantages,
    })
}

/// Runs `cfg.scst.steps` optimizer steps of self-critical training with
/// `cfg.scst.optimizer` at `cfg.scst.lr`, cycling through seeded shuffled batches.
pub fn train_scst(model: &mut Model, data: &[SceneExample], cfg: &TrainConfig) -> Result<Vec<ScstStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("cannot fine-tune on an empty dataset"));
    }
    let reward = RewardFn::new(cfg.scst.reward, data);
    let mut opt = Optimizer::new(cfg.scst.optimizer, model.params(), cfg.scst.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "scst"));
    let mut out = Vec::with_capacity(cfg.scst.steps);
    let mut epoch = 0;
    while out.len() < cfg.scst.steps {
        let seed = derive_seed(cfg.seed, &format!("scst-epoch{epoch}"));
        for idx in batch_indices(data.len(), cfg.batch_size, seed, cfg.shuffle)? {
            if out.len() >= cfg.scst.steps {
                break;
            }
            let scenes: Vec<&SceneExample> = idx.iter().map(|&i| &data[i]).collect();
            let stats = scst_step(model, &scenes, &reward, cfg.scst.gamma, cfg.max_len, &mut rng)?;
            if let Some(max) = cfg.grad_clip {
                model.params_mut().clip_grad_norm(max);
            }
            opt.step(model.params_mut())?;
            out.push(stats);
        }
        epoch += 1;
    }
    Ok(out)
}
