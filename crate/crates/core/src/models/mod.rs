//! The five assemblies of FDC attention, crossover attention, gate-input
//! factorization and the gated decoder behind one forward interface.
//!
//! Every step runs, in order: FDC attention on `h_{t-1}` giving `q_t`; the
//! token embedding `p_t`; the variant's factorization; the crossover with
//! the variant's prospects; the decoder cell.

mod checkpoint;
mod config;

use mrrc_tensor::{Bindings, Graph, ParamId, ParamStore, Tensor, Var};

use crate::attention::{
    context_read, factorize_gate_input, fdc_attend, fdc_init_state, mrrc_attend, region_mean, zeros, FactDims,
    FactParams, FactorizationMode, FdcParams, MrrcDims, MrrcInputs, MrrcParams, SceneVars,
};
use crate::data::{Batch, SceneBatch};
use crate::decoder::{
    teacher_forced_nll, weighted_log_likelihood, DecoderDims, DecoderParams, DecoderState, StepModel, StepOutput,
};
use crate::error::{Error, Result, StageExt};
use crate::registrar::Registrar;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{InitKind, ModelConfig, MrrcProspect, Variant};

/// Parameter handles of every sub-module.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P = ParamId> {
    pub fdc: FdcParams<P>,
    pub mrrc: MrrcParams<P>,
    pub fact: FactParams<P>,
    pub dec: DecoderParams<P>,
}

impl ModelParams {
    pub fn bind(&self, b: &Bindings) -> ModelParams<Var> {
        ModelParams {
            fdc: self.fdc.bind(b),
            mrrc: self.mrrc.bind(b),
            fact: self.fact.bind(b),
            dec: self.dec.bind(b),
        }
    }
}

/// Width of the three crossover inputs for a prospect choice.
pub fn mrrc_dims(cfg: &ModelConfig) -> MrrcDims {
    let (left, right, mult) = match cfg.prospect() {
        MrrcProspect::FdcQ => (cfg.d, cfg.d, cfg.region_dim),
        MrrcProspect::HiddenH => (cfg.d, cfg.d, cfg.d),
        MrrcProspect::SemanticS => (cfg.tag_dim, cfg.d, cfg.tag_dim),
    };
    MrrcDims {
        left,
        right,
        mult,
        ctx: cfg.e,
        gate: cfg.mrrc_gate,
        out: cfg.d,
    }
}

/// A captioning model: its configuration and named parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    ids: ModelParams,
}

/// Builds and initializes a model. Deterministic in the config.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let c = config;
    let mut store = ParamStore::new();
    let mut reg = Registrar::new(&mut store, c.initializer.initializer(), c.seed);
    let fdc = FdcParams::register(&mut reg, c.d, c.m_intermediate, c.k_max, c.region_dim)?;
    let mrrc = MrrcParams::register(&mut reg, mrrc_dims(c))?;
    let mode = c.factorization_mode();
    let fact = FactParams::register(
        &mut reg,
        mode,
        FactDims {
            d: c.d,
            e: c.e,
            region_dim: c.region_dim,
            tag_dim: c.tag_dim,
        },
    )?;
    let (p_in, q_in) = match mode {
        FactorizationMode::None => (c.e, c.region_dim),
        FactorizationMode::Static | FactorizationMode::Dynamic => (c.e, c.d),
        FactorizationMode::PerGate => (c.d, c.d),
    };
    let dec = DecoderParams::register(
        &mut reg,
        DecoderDims {
            vocab: c.vocab_size,
            e: c.e,
            d: c.d,
            p_in,
            q_in,
            t_in: c.d,
        },
    )?;
    Ok(Model {
        config: config.clone(),
        store,
        ids: ModelParams { fdc, mrrc, fact, dec },
    })
}

/// Per-step logits and the mean NLL of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub nll: Var,
    pub logits: Vec<Var>,
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn ids(&self) -> &ModelParams {
        &self.ids
    }

    /// `(name, shape)` of every parameter in registration order.
    pub fn census(&self) -> Vec<(String, Vec<usize>)> {
        self.store
            .ids()
            .map(|id| (self.store.name(id).to_string(), self.store.get(id).shape().to_vec()))
            .collect()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        let id = self.store.id(name).ok_or_else(|| Error::contract(format!("no parameter {name}")))?;
        Ok(self.store.get(id))
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.store.id(name).ok_or_else(|| Error::contract(format!("no parameter {name}")))?;
        Ok(self.store.set(id, value)?)
    }

    /// Adds every parameter to `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<(Bindings, ModelParams<Var>)> {
        let b = self.store.bind(g)?;
        let vars = self.ids.bind(&b);
        Ok((b, vars))
    }

    fn check_scene(&self, scenes: &SceneBatch) -> Result<()> {
        let c = &self.config;
        let want = [c.k_max, c.region_dim];
        let got = &scenes.regions.shape()[1..];
        if got != want || scenes.tags.last_dim() != c.tag_dim {
            return Err(Error::contract(format!(
                "scene batch has regions {:?} and {} tags, model expects {want:?} and {}",
                got,
                scenes.tags.last_dim(),
                c.tag_dim
            )));
        }
        Ok(())
    }

    /// `(h0, c0)` from the region mean, an empty context sum and `t = 0`.
    pub fn init_state(&self, g: &mut Graph, mv: &ModelParams<Var>, scene: &SceneVars) -> Result<DecoderState> {
        let v_mean = region_mean(g, scene).stage("region_mean")?;
        let (h, c) = fdc_init_state(g, v_mean, &mv.fdc).stage("fdc_init_state")?;
        let ctx_sum = zeros(g, scene.batch, self.config.e)?;
        Ok(DecoderState { h, c, ctx_sum, t: 0 })
    }

    /// One decode step consuming `prev` (one token id per row).
    pub fn forward_step(
        &self,
        g: &mut Graph,
        mv: &ModelParams<Var>,
        scene: &SceneVars,
        state: &DecoderState,
        prev: &[usize],
    ) -> Result<StepOutput> {
        if prev.len() != scene.batch {
            return Err(Error::contract(format!("{} tokens for a batch of {}", prev.len(), scene.batch)));
        }
        if let Some(&bad) = prev.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::contract(format!("token {bad} outside vocabulary")));
        }
        let (q, _alpha) = fdc_attend(g, state.h, scene, &mv.fdc).stage("fdc_attend")?;
        let p = g.gather_rows(mv.dec.w_e, prev).stage("embed")?;
        let mode = self.config.factorization_mode();
        let (p_in, q_in) =
            factorize_gate_input(g, mode, &mv.fact, p, q, scene.tags, state.h).stage("factorize")?;
        let inputs = match self.config.prospect() {
            MrrcProspect::FdcQ => MrrcInputs {
                left: state.h,
                right: state.h,
                mult: q,
            },
            MrrcProspect::HiddenH => MrrcInputs {
                left: state.h,
                right: state.h,
                mult: state.h,
            },
            MrrcProspect::SemanticS => MrrcInputs {
                left: scene.tags,
                right: state.h,
                mult: scene.tags,
            },
        };
        let ctx = context_read(g, state.ctx_sum, state.t, self.config.ctx_mean_pool)?;
        let t_vec = mrrc_attend(g, inputs, ctx, &mv.mrrc).stage("mrrc_attend")?;
        crate::decoder::decoder_step(g, &mv.dec, state, p, &p_in, &q_in, t_vec).stage("decoder_step")
    }

    /// Teacher-forced pass over the batch captions; returns the mean NLL
    /// over real target tokens and every step's logits.
    pub fn forward_sequence(&self, g: &mut Graph, mv: &ModelParams<Var>, batch: &Batch) -> Result<SequenceOutput> {
        self.check_scene(&batch.scenes)?;
        let scene = SceneVars::new(g, &batch.scenes)?;
        let mut state = self.init_state(g, mv, &scene)?;
        let (nll, logits) = teacher_forced_nll(g, &batch.captions, &batch.caption_mask, |g, prev| {
            let out = self.forward_step(g, mv, &scene, &state, prev)?;
            state = out.state;
            Ok(out.logits)
        })?;
        Ok(SequenceOutput { nll, logits })
    }

    /// `Σ_r Σ_t w[r][t] log p(tokens[r][t+1] | prefix)` with teacher forcing.
    pub fn log_likelihood(
        &self,
        g: &mut Graph,
        mv: &ModelParams<Var>,
        scenes: &SceneBatch,
        tokens: &[Vec<usize>],
        weights: &[Vec<f64>],
    ) -> Result<Var> {
        self.check_scene(scenes)?;
        let scene = SceneVars::new(g, scenes)?;
        let mut state = self.init_state(g, mv, &scene)?;
        let (total, _) = weighted_log_likelihood(g, tokens, weights, |g, prev| {
            let out = self.forward_step(g, mv, &scene, &state, prev)?;
            state = out.state;
            Ok(out.logits)
        })?;
        Ok(total)
    }
}

/// Decoding state held as plain tensors between steps.
#[derive(Clone, Debug)]
pub struct InferState {
    h: Tensor,
    c: Tensor,
    ctx_sum: Tensor,
    t: usize,
    scenes: SceneBatch,
}

impl InferState {
    pub fn hidden(&self) -> &Tensor {
        &self.h
    }

    pub fn cell(&self) -> &Tensor {
        &self.c
    }

    pub fn context_sum(&self) -> &Tensor {
        &self.ctx_sum
    }

    pub fn step_index(&self) -> usize {
        self.t
    }
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * t.last_dim());
    for &r in rows {
        data.extend_from_slice(t.row_slice(r));
    }
    Ok(Tensor::new(vec![rows.len(), t.last_dim()], data)?)
}

impl StepModel for Model {
    type State = InferState;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn start(&self, scenes: &SceneBatch) -> Result<InferState> {
        self.check_scene(scenes)?;
        let mut g = Graph::new();
        let (_, mv) = self.bind(&mut g)?;
        let scene = SceneVars::new(&mut g, scenes)?;
        let s = self.init_state(&mut g, &mv, &scene)?;
        Ok(InferState {
            h: g.value(s.h).clone(),
            c: g.value(s.c).clone(),
            ctx_sum: g.value(s.ctx_sum).clone(),
            t: 0,
            scenes: scenes.clone(),
        })
    }

    fn step(&self, state: &InferState, tokens: &[usize]) -> Result<(InferState, Tensor)> {
        let mut g = Graph::new();
        let (_, mv) = self.bind(&mut g)?;
        let scene = SceneVars::new(&mut g, &state.scenes)?;
        let s = DecoderState {
            h: g.constant(state.h.clone())?,
            c: g.constant(state.c.clone())?,
            ctx_sum: g.constant(state.ctx_sum.clone())?,
            t: state.t,
        };
        let out = self.forward_step(&mut g, &mv, &scene, &s, tokens)?;
        let logp = g.log_softmax(out.logits)?;
        let next = InferState {
            h: g.value(out.state.h).clone(),
            c: g.value(out.state.c).clone(),
            ctx_sum: g.value(out.state.ctx_sum).clone(),
            t: out.state.t,
            scenes: state.scenes.clone(),
        };
        Ok((next, g.value(logp).clone()))
    }

    fn select(&self, state: &InferState, rows: &[usize]) -> Result<InferState> {
        Ok(InferState {
            h: select_rows(&state.h, rows)?,
            c: select_rows(&state.c, rows)?,
            ctx_sum: select_rows(&state.ctx_sum, rows)?,
            t: state.t,
            scenes: state.scenes.select(rows)?,
        })
    }
}
