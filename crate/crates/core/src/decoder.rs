//! The three-input gated cell and sequence decoding.
//!
//! The gates read only the token input `p`, the attended region input `q`
//! and the crossover vector `T`; the previous hidden state reaches the next
//! step through the attention modules that produce `q` and `T`.

use std::cmp::Ordering;

use mrrc_tensor::{Bindings, Graph, ParamId, Tensor, Var};
use rand::Rng;

use crate::attention::{context_sum_update, GateInput, GATES};
use crate::data::{SceneBatch, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::registrar::Registrar;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<P = ParamId> {
    /// `V × e` token embeddings.
    pub w_e: P,
    /// Token input weights per gate, `p_dim × d`.
    pub w_p: [P; 4],
    /// Region input weights per gate, `q_dim × d`.
    pub w_q: [P; 4],
    /// Crossover input weights per gate, `t_dim × d`.
    pub w_t: [P; 4],
    /// Gate biases, `1 × d`.
    pub b: [P; 4],
    /// `d × V` output projection.
    pub w_hx: P,
}

/// Widths of the decoder's inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderDims {
    pub vocab: usize,
    pub e: usize,
    pub d: usize,
    pub p_in: usize,
    pub q_in: usize,
    pub t_in: usize,
}

impl DecoderParams {
    pub fn register(reg: &mut Registrar, dims: DecoderDims) -> Result<Self> {
        let w_e = reg.weight("embed.w_e", dims.vocab, dims.e)?;
        let mut per_gate = |prefix: &str, rows: usize| -> Result<[ParamId; 4]> {
            let mut out = Vec::with_capacity(4);
            for gate in GATES {
                out.push(reg.weight(&format!("dec.{prefix}_{gate}"), rows, dims.d)?);
            }
            Ok(out.try_into().expect("four gates"))
        };
        let w_p = per_gate("w_p", dims.p_in)?;
        let w_q = per_gate("w_q", dims.q_in)?;
        let w_t = per_gate("w_t", dims.t_in)?;
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            b.push(reg.bias(&format!("dec.b_{gate}"), dims.d)?);
        }
        let w_hx = reg.weight("dec.w_hx", dims.d, dims.vocab)?;
        Ok(DecoderParams {
            w_e,
            w_p,
            w_q,
            w_t,
            b: b.try_into().expect("four gates"),
            w_hx,
        })
    }

    pub fn bind(&self, b: &Bindings) -> DecoderParams<Var> {
        DecoderParams {
            w_e: b[self.w_e],
            w_p: self.w_p.map(|p| b[p]),
            w_q: self.w_q.map(|p| b[p]),
            w_t: self.w_t.map(|p| b[p]),
            b: self.b.map(|p| b[p]),
            w_hx: b[self.w_hx],
        }
    }
}

/// Recurrent state between decode steps.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// Sum of the embeddings of all tokens consumed before step `t`.
    pub ctx_sum: Var,
    pub t: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    /// `b × V`.
    pub logits: Var,
    /// Activations of the i, f, o, g gates.
    pub gates: [Var; 4],
}

/// One cell update. `embedded` is the raw embedding of the consumed token
/// and is added to the context sum for the next step.
pub fn decoder_step(
    g: &mut Graph,
    params: &DecoderParams<Var>,
    state: &DecoderState,
    embedded: Var,
    p_in: &GateInput,
    q_in: &GateInput,
    t_vec: Var,
) -> Result<StepOutput> {
    let batch = g.value(t_vec).shape()[0];
    let mut gates = [t_vec; 4];
    for i in 0..4 {
        let zp = g.matmul(p_in.gate(i), params.w_p[i])?;
        let zq = g.matmul(q_in.gate(i), params.w_q[i])?;
        let zt = g.matmul(t_vec, params.w_t[i])?;
        let b = g.repeat_rows(params.b[i], batch)?;
        let z = g.add(zp, zq)?;
        let z = g.add(z, zt)?;
        let z = g.add(z, b)?;
        gates[i] = if i == 3 { g.tanh(z)? } else { g.sigmoid(z)? };
    }
    let [i, f, o, gg] = gates;
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, gg)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    let logits = g.matmul(h, params.w_hx)?;
    let ctx_sum = context_sum_update(g, state.ctx_sum, embedded)?;
    Ok(StepOutput {
        state: DecoderState {
            h,
            c,
            ctx_sum,
            t: state.t + 1,
        },
        logits,
        gates,
    })
}

/// `Σ_r Σ_t w[r][t] · log p(tokens[r][t+1] | tokens[r][..=t])` under teacher
/// forcing. `step` consumes one column of input tokens and returns `b × V`
/// logits. Also returns the logits of every step.
pub fn weighted_log_likelihood<F>(
    g: &mut Graph,
    tokens: &[Vec<usize>],
    weights: &[Vec<f64>],
    mut step: F,
) -> Result<(Var, Vec<Var>)>
where
    F: FnMut(&mut Graph, &[usize]) -> Result<Var>,
{
    let len = tokens.first().map_or(0, Vec::len);
    if len < 2 {
        return Err(Error::contract("sequences need BOS and at least one more token"));
    }
    if tokens.iter().any(|t| t.len() != len) || weights.len() != tokens.len() || weights.iter().any(|w| w.len() != len - 1) {
        return Err(Error::contract("ragged token or weight rows"));
    }
    let mut total: Option<Var> = None;
    let mut all_logits = Vec::with_capacity(len - 1);
    for t in 0..len - 1 {
        let inputs: Vec<usize> = tokens.iter().map(|row| row[t]).collect();
        let logits = step(g, &inputs)?;
        all_logits.push(logits);
        let w: Vec<f64> = weights.iter().map(|row| row[t]).collect();
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let targets: Vec<usize> = tokens.iter().map(|row| row[t + 1]).collect();
        let logp = g.log_softmax(logits)?;
        let term = g.pick(logp, &targets, &w)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(v) => v,
        None => g.constant(Tensor::scalar(0.0))?,
    };
    Ok((total, all_logits))
}

/// Mean negative log-likelihood over the real (unmasked) target positions.
pub fn teacher_forced_nll<F>(g: &mut Graph, captions: &[Vec<usize>], mask: &[Vec<bool>], step: F) -> Result<(Var, Vec<Var>)>
where
    F: FnMut(&mut Graph, &[usize]) -> Result<Var>,
{
    if captions.len() != mask.len() || captions.iter().zip(mask).any(|(c, m)| c.len() != m.len()) {
        return Err(Error::contract("caption mask does not match captions"));
    }
    if let Some(r) = mask.iter().position(|m| m.iter().filter(|&&x| x).count() < 2) {
        return Err(Error::contract(format!("caption {r} has no token after BOS")));
    }
    let targets: usize = mask.iter().map(|m| m.iter().skip(1).filter(|&&x| x).count()).sum();
    let w = -1.0 / targets as f64;
    let weights: Vec<Vec<f64>> = mask
        .iter()
        .map(|m| m.iter().skip(1).map(|&real| if real { w } else { 0.0 }).collect())
        .collect();
    weighted_log_likelihood(g, captions, &weights, step)
}

/// A model that can be advanced one token at a time outside of training.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Initial state for every scene of the batch.
    fn start(&self, scenes: &SceneBatch) -> Result<Self::State>;

    /// Consumes one token per row and returns the advanced state together
    /// with next-token log-probabilities, `b × V`.
    fn step(&self, state: &Self::State, tokens: &[usize]) -> Result<(Self::State, Tensor)>;

    /// Keeps the listed rows, in order; rows may repeat.
    fn select(&self, state: &Self::State, rows: &[usize]) -> Result<Self::State>;
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes by feeding back the most likely token. Each output holds the
/// generated tokens, ending in EOS unless `max_len` steps ran out first.
pub fn greedy_decode<M: StepModel>(model: &M, scenes: &SceneBatch, max_len: usize) -> Result<Vec<Vec<usize>>> {
    decode_with(model, scenes, max_len, |row| argmax(row))
}

/// Decodes by sampling each token from the model distribution.
pub fn sample_decode<M: StepModel, R: Rng>(
    model: &M,
    scenes: &SceneBatch,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    decode_with(model, scenes, max_len, |row| {
        let u: f64 = rng.random();
        let (mut acc, mut last_possible) = (0.0, 0);
        for (i, lp) in row.iter().enumerate() {
            let p = lp.exp();
            if p > 0.0 {
                last_possible = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left the cumulative sum just under 1.
        last_possible
    })
}

fn decode_with<M: StepModel>(
    model: &M,
    scenes: &SceneBatch,
    max_len: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<Vec<Vec<usize>>> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let b = scenes.batch();
    let mut state = model.start(scenes)?;
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); b];
    let mut done = vec![false; b];
    let mut last = vec![BOS; b];
    for _ in 0..max_len {
        let (next, logp) = model.step(&state, &last)?;
        state = next;
        let v = logp.last_dim();
        for r in 0..b {
            if done[r] {
                last[r] = PAD;
                continue;
            }
            let tok = choose(&logp.data()[r * v..(r + 1) * v]);
            out[r].push(tok);
            last[r] = tok;
            done[r] = tok == EOS;
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

/// A beam search result.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, ending in EOS when `finished`.
    pub tokens: Vec<usize>,
    /// Total log-probability.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Ranking score: the total log-probability, or its per-step mean.
    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm && !self.tokens.is_empty() {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }
}

struct Candidate {
    score: f64,
    step_lp: f64,
    parent: usize,
    token: usize,
}

/// Length-synchronized beam search for every scene. Hypotheses that emit
/// EOS retire to a pool; survivors after `max_len` steps join it
/// unfinished. Each returned list is sorted best first.
///
/// Expansions are ranked by total log-probability, then by the log-prob
/// of the new token, then parent rank, then token id, so width 1
/// reproduces [`greedy_decode`] exactly.
pub fn beam_decode<M: StepModel>(
    model: &M,
    scenes: &SceneBatch,
    width: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Vec<Vec<Hypothesis>>> {
    if width == 0 {
        return Err(Error::contract("beam width must be at least 1"));
    }
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let start = model.start(scenes)?;
    (0..scenes.batch())
        .map(|row| {
            let state = model.select(&start, &[row])?;
            beam_one(model, state, width, max_len, length_norm)
        })
        .collect()
}

fn beam_one<M: StepModel>(
    model: &M,
    mut state: M::State,
    width: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Vec<Hypothesis>> {
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut pool = Vec::new();
    for _ in 0..max_len {
        let last: Vec<usize> = alive.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS)).collect();
        let (next, logp) = model.step(&state, &last)?;
        let v = logp.last_dim();
        let mut cands = Vec::with_capacity(alive.len() * v);
        for (parent, hyp) in alive.iter().enumerate() {
            for (token, &lp) in logp.data()[parent * v..(parent + 1) * v].iter().enumerate() {
                cands.push(Candidate {
                    score: hyp.log_prob + lp,
                    step_lp: lp,
                    parent,
                    token,
                });
            }
        }
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.step_lp.total_cmp(&a.step_lp))
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        cands.truncate(width);

        let mut survivors = Vec::new();
        let mut parents = Vec::new();
        for c in cands {
            let mut tokens = alive[c.parent].tokens.clone();
            tokens.push(c.token);
            let hyp = Hypothesis {
                tokens,
                log_prob: c.score,
                finished: c.token == EOS,
            };
            if hyp.finished {
                pool.push(hyp);
            } else {
                survivors.push(hyp);
                parents.push(c.parent);
            }
        }
        if survivors.is_empty() {
            alive.clear();
            break;
        }
        state = model.select(&next, &parents)?;
        alive = survivors;
    }
    pool.extend(alive);
    pool.sort_by(|a, b| compare_hypotheses(a, b, length_norm));
    Ok(pool)
}

fn compare_hypotheses(a: &Hypothesis, b: &Hypothesis, length_norm: bool) -> Ordering {
    b.score(length_norm)
        .total_cmp(&a.score(length_norm))
        .then_with(|| a.tokens.cmp(&b.tokens))
}
