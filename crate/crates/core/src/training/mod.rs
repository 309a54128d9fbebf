//! Cross-entropy training, self-critical fine-tuning, gradient checking and
//! caption metrics.

mod gradcheck;
pub mod metrics;
mod scst;

use mrrc_tensor::{derive_seed, Adam, Graph, ParamStore, Sgd, TensorError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, strip_special, Batch, SceneExample};
use crate::decoder::{argmax, beam_decode, greedy_decode};
use crate::error::{Error, Result};
use crate::models::Model;

pub use gradcheck::{gradcheck, gradcheck_model, relative_error, REL_ERR_FLOOR, GradcheckOptions, GradcheckReport, TensorCheck};
pub use metrics::{cider_lite, corpus_bleu, sentence_bleu4, IdfTable};
pub use scst::{scst_step, train_scst, RewardFn, RewardKind, ScstStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScstConfig {
    pub enabled: bool,
    pub steps: usize,
    pub reward: RewardKind,
    /// Scale of the policy-gradient surrogate.
    pub gamma: f64,
    /// Learning rate of the fine-tuning phase.
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for ScstConfig {
    fn default() -> Self {
        ScstConfig {
            enabled: false,
            steps: 200,
            reward: RewardKind::CiderLite,
            gamma: 1.0,
            lr: 5e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub shuffle: bool,
    pub optimizer: OptimizerKind,
    /// Global L2 cap on the gradient, if set.
    pub grad_clip: Option<f64>,
    /// Decode length limit, counted in steps including EOS.
    pub max_len: usize,
    pub scst: ScstConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 10,
            epochs: 20,
            max_steps: None,
            seed: 0,
            shuffle: true,
            optimizer: OptimizerKind::Adam,
            grad_clip: Some(5.0),
            max_len: 20,
            scst: ScstConfig::default(),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if !(self.scst.gamma > 0.0 && self.scst.gamma.is_finite()) {
            return Err(Error::Config(format!("scst.gamma must be positive, got {}", self.scst.gamma)));
        }
        if !(self.scst.lr >= 0.0 && self.scst.lr.is_finite()) {
            return Err(Error::Config(format!("scst.lr must be finite and >= 0, got {}", self.scst.lr)));
        }
        Ok(())
    }
}

/// Adam or SGD behind one interface.
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(store, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { lr }),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(store)?,
            Optimizer::Sgd(s) => s.step(store)?,
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Token-weighted mean NLL of the epoch's batches, before each update.
    pub nll: f64,
    /// Teacher-forced token accuracy of the epoch's batches, before each update.
    pub acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

impl History {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }

    /// `epoch,nll,acc` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,nll,acc\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.nll, e.acc));
        }
        s
    }
}

fn non_finite_as_loss(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { .. }) | Error::Stage { source: TensorError::NonFinite { .. }, .. } => {
            Error::NonFiniteLoss { step }
        }
        other => other,
    }
}

/// Counts `(correct, total)` argmax predictions over real target positions.
fn count_correct(g: &Graph, logits: &[mrrc_tensor::Var], batch: &Batch) -> (usize, usize) {
    let (mut correct, mut total) = (0, 0);
    for (t, &l) in logits.iter().enumerate() {
        let v = g.value(l);
        let width = v.last_dim();
        for r in 0..batch.len() {
            if !batch.caption_mask[r][t + 1] {
                continue;
            }
            total += 1;
            if argmax(&v.data()[r * width..(r + 1) * width]) == batch.captions[r][t + 1] {
                correct += 1;
            }
        }
    }
    (correct, total)
}

/// Cross-entropy training with teacher forcing. Deterministic in the seed.
pub fn train_xe(model: &mut Model, data: &[SceneExample], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let k_max = model.config().k_max;
    let mut opt = Optimizer::new(cfg.optimizer, model.params(), cfg.lr);
    let mut history = History::default();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    for epoch in 0..cfg.epochs {
        if history.steps() >= limit {
            break;
        }
        let seed = derive_seed(cfg.seed, &format!("epoch{epoch}"));
        let (mut nll_sum, mut tokens, mut correct) = (0.0, 0usize, 0usize);
        for batch in make_batches(data, cfg.batch_size, k_max, seed, cfg.shuffle)? {
            if history.steps() >= limit {
                break;
            }
            let step = history.steps();
            let mut g = Graph::new();
            let (bindings, mv) = model.bind(&mut g)?;
            let out = model.forward_sequence(&mut g, &mv, &batch).map_err(non_finite_as_loss(step))?;
            let loss = g.value(out.nll).item();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let (c, n) = count_correct(&g, &out.logits, &batch);
            nll_sum += loss * n as f64;
            tokens += n;
            correct += c;

            g.backward(out.nll).map_err(|e| non_finite_as_loss(step)(e.into()))?;
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&g, &bindings);
            if let Some(max) = cfg.grad_clip {
                store.clip_grad_norm(max);
            }
            opt.step(store)?;
            history.step_losses.push(loss);
        }
        if tokens > 0 {
            history.epochs.push(EpochStats {
                epoch,
                nll: nll_sum / tokens as f64,
                acc: correct as f64 / tokens as f64,
            });
        }
    }
    Ok(history)
}

/// Fraction of real target tokens whose teacher-forced argmax is correct,
/// using each scene's first caption.
pub fn teacher_forced_accuracy(model: &Model, data: &[SceneExample], batch_size: usize) -> Result<f64> {
    let (mut correct, mut total) = (0, 0);
    for batch in make_batches(data, batch_size, model.config().k_max, 0, false)? {
        let mut g = Graph::new();
        let (_, mv) = model.bind(&mut g)?;
        let out = model.forward_sequence(&mut g, &mv, &batch)?;
        let (c, n) = count_correct(&g, &out.logits, &batch);
        correct += c;
        total += n;
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Decodes every scene with beam search (`beam_width == 1` decodes
/// greedily), fanning out over `workers` threads when given.
pub fn decode_dataset(
    model: &Model,
    data: &[SceneExample],
    beam_width: usize,
    max_len: usize,
    workers: Option<usize>,
) -> Result<Vec<Vec<usize>>> {
    if beam_width == 0 {
        return Err(Error::contract("beam width must be at least 1"));
    }
    let k_max = model.config().k_max;
    let run = || -> Result<Vec<Vec<usize>>> {
        let chunks: Vec<Vec<Vec<usize>>> = data
            .par_chunks(16)
            .map(|chunk| {
                let refs: Vec<&SceneExample> = chunk.iter().collect();
                let batch = Batch::from_examples(&refs, k_max)?;
                if beam_width == 1 {
                    greedy_decode(model, &batch.scenes, max_len)
                } else {
                    Ok(beam_decode(model, &batch.scenes, beam_width, max_len, false)?
                        .into_iter()
                        .map(|hyps| hyps.into_iter().next().map(|h| h.tokens).unwrap_or_default())
                        .collect())
                }
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    };
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::contract(e.to_string()))?
            .install(run),
        None => run(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub cider_lite: f64,
    /// Fraction of scenes whose decoded caption equals one of its references.
    pub exact_match: f64,
    /// Mean decoded length, special tokens excluded.
    pub mean_length: f64,
    pub scenes: usize,
}

/// Scores decoded captions (special tokens are stripped) against the
/// dataset references. IDF statistics come from the same references.
pub fn score_captions(data: &[SceneExample], decoded: &[Vec<usize>]) -> Result<Metrics> {
    if data.is_empty() || data.len() != decoded.len() {
        return Err(Error::contract("one decoded caption per scene required"));
    }
    let refs: Vec<Vec<Vec<usize>>> = data.iter().map(SceneExample::references).collect();
    let cands: Vec<Vec<usize>> = decoded.iter().map(|c| strip_special(c)).collect();
    let bleu = corpus_bleu(&cands, &refs);
    let idf = IdfTable::new(&refs);
    let n = data.len() as f64;
    let cider = cands.iter().zip(&refs).map(|(c, r)| cider_lite(c, r, &idf)).sum::<f64>() / n;
    let exact = cands.iter().zip(&refs).filter(|(c, r)| r.contains(c)).count() as f64 / n;
    let mean_length = cands.iter().map(Vec::len).sum::<usize>() as f64 / n;
    Ok(Metrics {
        bleu1: bleu[0],
        bleu2: bleu[1],
        bleu3: bleu[2],
        bleu4: bleu[3],
        cider_lite: cider,
        exact_match: exact,
        mean_length,
        scenes: data.len(),
    })
}

pub fn evaluate(
    model: &Model,
    data: &[SceneExample],
    beam_width: usize,
    max_len: usize,
    workers: Option<usize>,
) -> Result<Metrics> {
    let decoded = decode_dataset(model, data, beam_width, max_len, workers)?;
    score_captions(data, &decoded)
}
