//! FDC region attention, MRRC crossover attention and the factorized gate
//! inputs shared by the model variants.
//!
//! All vectors are batch rows: a `b × n` tensor holds one n-vector per scene
//! and weights are stored `[in × out]`, so `W x` is written `x · W`.

use mrrc_tensor::{Bindings, Graph, ParamId, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::SceneBatch;
use crate::error::{Error, Result};
use crate::registrar::Registrar;

/// Graph handles for one batch of scenes.
#[derive(Clone, Copy, Debug)]
pub struct SceneVars {
    /// `b × k_max × region_dim`.
    pub regions: Var,
    /// `b × k_max`: 0 on live slots, -1e30 on masked ones.
    pub score_bias: Var,
    /// `b × k_max`: uniform weights over live slots.
    pub mean_weights: Var,
    /// `b × tag_dim`.
    pub tags: Var,
    pub batch: usize,
}

impl SceneVars {
    pub fn new(g: &mut Graph, scenes: &SceneBatch) -> Result<Self> {
        let mean = scenes.mask.uniform_weights()?;
        Ok(SceneVars {
            regions: g.constant(scenes.regions.clone())?,
            score_bias: g.constant(scenes.mask.score_bias())?,
            mean_weights: g.constant(mean)?,
            tags: g.constant(scenes.tags.clone())?,
            batch: scenes.batch(),
        })
    }
}

/// Mean of the live regions of every scene, `b × region_dim`.
pub fn region_mean(g: &mut Graph, scene: &SceneVars) -> Result<Var> {
    Ok(g.attend(scene.mean_weights, scene.regions)?)
}

fn bias_rows(g: &mut Graph, bias: Var, batch: usize) -> Result<Var> {
    Ok(g.repeat_rows(bias, batch)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdcParams<P = ParamId> {
    /// `d × m`.
    pub w_h: P,
    /// `m × k_max`.
    pub w_a: P,
    /// `region_dim × d`.
    pub w_h0: P,
    /// `region_dim × d`.
    pub w_c0: P,
}

impl FdcParams {
    pub fn register(reg: &mut Registrar, d: usize, m: usize, k_max: usize, region_dim: usize) -> Result<Self> {
        Ok(FdcParams {
            w_h: reg.weight("fdc.w_h", d, m)?,
            w_a: reg.weight("fdc.w_a", m, k_max)?,
            w_h0: reg.weight("fdc.w_h0", region_dim, d)?,
            w_c0: reg.weight("fdc.w_c0", region_dim, d)?,
        })
    }

    pub fn bind(&self, b: &Bindings) -> FdcParams<Var> {
        FdcParams {
            w_h: b[self.w_h],
            w_a: b[self.w_a],
            w_h0: b[self.w_h0],
            w_c0: b[self.w_c0],
        }
    }
}

/// `(h0, c0) = (v̄ W_h0, v̄ W_c0)`.
pub fn fdc_init_state(g: &mut Graph, v_mean: Var, p: &FdcParams<Var>) -> Result<(Var, Var)> {
    let h0 = g.matmul(v_mean, p.w_h0)?;
    let c0 = g.matmul(v_mean, p.w_c0)?;
    Ok((h0, c0))
}

/// Scores `tanh(h W_h) W_a`, masked softmax over regions, and the attended
/// vector `v̂ = Σ α_i v_i`. Returns `(v̂, α)`.
pub fn fdc_attend(g: &mut Graph, h_prev: Var, scene: &SceneVars, p: &FdcParams<Var>) -> Result<(Var, Var)> {
    let u = g.matmul(h_prev, p.w_h)?;
    let u = g.tanh(u)?;
    let scores = g.matmul(u, p.w_a)?;
    let scores = g.add(scores, scene.score_bias)?;
    let alpha = g.softmax(scores)?;
    let v_hat = g.attend(alpha, scene.regions)?;
    Ok((v_hat, alpha))
}

/// Adds the embedding of the token just consumed to the running sum.
pub fn context_sum_update(g: &mut Graph, acc: Var, embedded: Var) -> Result<Var> {
    Ok(g.add(acc, embedded)?)
}

/// The context term seen at step `t`: the raw sum, or its mean over the `t`
/// tokens it holds when `mean_pool` is set.
pub fn context_read(g: &mut Graph, acc: Var, t: usize, mean_pool: bool) -> Result<Var> {
    if mean_pool && t > 1 {
        Ok(g.scale(acc, 1.0 / t as f64)?)
    } else {
        Ok(acc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MrrcParams<P = ParamId> {
    /// `left_dim × gate`.
    pub w_s11: P,
    /// `gate × out`.
    pub w_s12: P,
    /// `right_dim × mult_dim`.
    pub w_s21: P,
    /// `mult_dim × out`.
    pub w_s22: P,
    /// `e × gate`.
    pub w_w1: P,
    /// `e × mult_dim`.
    pub w_w2: P,
    pub b1: P,
    pub b2: P,
    pub b3: P,
}

/// Input widths of the two crossover branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MrrcDims {
    pub left: usize,
    pub right: usize,
    pub mult: usize,
    pub ctx: usize,
    pub gate: usize,
    pub out: usize,
}

impl MrrcParams {
    pub fn register(reg: &mut Registrar, dims: MrrcDims) -> Result<Self> {
        Ok(MrrcParams {
            w_s11: reg.weight("mrrc.w_s11", dims.left, dims.gate)?,
            w_s12: reg.weight("mrrc.w_s12", dims.gate, dims.out)?,
            w_s21: reg.weight("mrrc.w_s21", dims.right, dims.mult)?,
            w_s22: reg.weight("mrrc.w_s22", dims.mult, dims.out)?,
            w_w1: reg.weight("mrrc.w_w1", dims.ctx, dims.gate)?,
            w_w2: reg.weight("mrrc.w_w2", dims.ctx, dims.mult)?,
            b1: reg.bias("mrrc.b1", dims.gate)?,
            b2: reg.bias("mrrc.b2", dims.mult)?,
            b3: reg.bias("mrrc.b3", dims.out)?,
        })
    }

    pub fn bind(&self, b: &Bindings) -> MrrcParams<Var> {
        MrrcParams {
            w_s11: b[self.w_s11],
            w_s12: b[self.w_s12],
            w_s21: b[self.w_s21],
            w_s22: b[self.w_s22],
            w_w1: b[self.w_w1],
            w_w2: b[self.w_w2],
            b1: b[self.b1],
            b2: b[self.b2],
            b3: b[self.b3],
        }
    }

    pub fn all(&self) -> [ParamId; 9] {
        [
            self.w_s11, self.w_s12, self.w_s21, self.w_s22, self.w_w1, self.w_w2, self.b1, self.b2, self.b3,
        ]
    }
}

/// The three prospects fed to the crossover.
#[derive(Clone, Copy, Debug)]
pub struct MrrcInputs {
    /// Drives the left gate `σ(left W_s11 + ctx W_w1 + b1)`.
    pub left: Var,
    /// Drives the right gate `σ(right W_s21 + ctx W_w2 + b2)`.
    pub right: Var,
    /// Multiplied elementwise into the right gate.
    pub mult: Var,
}

/// `T = σ(left W_s11 + ctx W_w1 + b1) W_s12 ⊙ tanh((mult ⊙ σ(right W_s21 + ctx W_w2 + b2)) W_s22 + b3)`.
pub fn mrrc_attend(g: &mut Graph, x: MrrcInputs, ctx: Var, p: &MrrcParams<Var>) -> Result<Var> {
    let batch = g.value(x.left).shape()[0];
    let (left_out, right_out) = (g.value(p.w_s12).shape()[1], g.value(p.w_s22).shape()[1]);
    if left_out != right_out {
        return Err(Error::contract(format!(
            "crossover branches disagree: {left_out} vs {right_out}"
        )));
    }

    let a = g.matmul(x.left, p.w_s11)?;
    let c1 = g.matmul(ctx, p.w_w1)?;
    let b1 = bias_rows(g, p.b1, batch)?;
    let z1 = g.add(a, c1)?;
    let z1 = g.add(z1, b1)?;
    let s1 = g.sigmoid(z1)?;
    let left = g.matmul(s1, p.w_s12)?;

    let r = g.matmul(x.right, p.w_s21)?;
    let c2 = g.matmul(ctx, p.w_w2)?;
    let b2 = bias_rows(g, p.b2, batch)?;
    let z2 = g.add(r, c2)?;
    let z2 = g.add(z2, b2)?;
    let s2 = g.sigmoid(z2)?;
    let gated = g.mul(x.mult, s2)?;
    let proj = g.matmul(gated, p.w_s22)?;
    let b3 = bias_rows(g, p.b3, batch)?;
    let z3 = g.add(proj, b3)?;
    let right = g.tanh(z3)?;

    Ok(g.mul(left, right)?)
}

/// How the decoder inputs are gated by a second vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorizationMode {
    None,
    /// One shared `q_n = (S W_m) ⊙ (q W_n)`.
    Static,
    /// One shared `q_n = (h W_m) ⊙ (q W_n)`.
    Dynamic,
    /// Separate `S`-gated factors of both `p` and `q` for every gate.
    PerGate,
}

/// A factor pair computing `(source W_m) ⊙ (x W_n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor<P = ParamId> {
    pub m: P,
    pub n: P,
}

impl Factor {
    fn register(reg: &mut Registrar, name: &str, source_dim: usize, x_dim: usize, out: usize) -> Result<Self> {
        Ok(Factor {
            m: reg.weight(&format!("{name}m"), source_dim, out)?,
            n: reg.weight(&format!("{name}n"), x_dim, out)?,
        })
    }

    fn bind(&self, b: &Bindings) -> Factor<Var> {
        Factor {
            m: b[self.m],
            n: b[self.n],
        }
    }
}

/// Gate names, in the order every per-gate array uses.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Clone, Debug, PartialEq)]
pub enum FactParams<P = ParamId> {
    None,
    Static(Factor<P>),
    Dynamic(Factor<P>),
    PerGate { p: [Factor<P>; 4], q: [Factor<P>; 4] },
}

/// Widths needed to register factorization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactDims {
    pub d: usize,
    pub e: usize,
    pub region_dim: usize,
    pub tag_dim: usize,
}

impl FactParams {
    pub fn register(reg: &mut Registrar, mode: FactorizationMode, dims: FactDims) -> Result<Self> {
        let FactDims { d, e, region_dim, tag_dim } = dims;
        Ok(match mode {
            FactorizationMode::None => FactParams::None,
            FactorizationMode::Static => FactParams::Static(Factor::register(reg, "fact.w_q", tag_dim, region_dim, d)?),
            FactorizationMode::Dynamic => FactParams::Dynamic(Factor::register(reg, "fact.w_h", d, region_dim, d)?),
            FactorizationMode::PerGate => {
                let mut p = Vec::with_capacity(4);
                let mut q = Vec::with_capacity(4);
                for gate in GATES {
                    p.push(Factor::register(reg, &format!("fact.w_p{gate}"), tag_dim, e, d)?);
                    q.push(Factor::register(reg, &format!("fact.w_q{gate}"), tag_dim, region_dim, d)?);
                }
                FactParams::PerGate {
                    p: p.try_into().expect("four gates"),
                    q: q.try_into().expect("four gates"),
                }
            }
        })
    }

    pub fn bind(&self, b: &Bindings) -> FactParams<Var> {
        match self {
            FactParams::None => FactParams::None,
            FactParams::Static(f) => FactParams::Static(f.bind(b)),
            FactParams::Dynamic(f) => FactParams::Dynamic(f.bind(b)),
            FactParams::PerGate { p, q } => FactParams::PerGate {
                p: p.map(|f| f.bind(b)),
                q: q.map(|f| f.bind(b)),
            },
        }
    }
}

impl<P> FactParams<P> {
    pub fn mode(&self) -> FactorizationMode {
        match self {
            FactParams::None => FactorizationMode::None,
            FactParams::Static(_) => FactorizationMode::Static,
            FactParams::Dynamic(_) => FactorizationMode::Dynamic,
            FactParams::PerGate { .. } => FactorizationMode::PerGate,
        }
    }
}

/// A decoder input, either shared by all four gates or one per gate.
#[derive(Clone, Copy, Debug)]
pub enum GateInput {
    Shared(Var),
    PerGate([Var; 4]),
}

impl GateInput {
    pub fn gate(&self, i: usize) -> Var {
        match self {
            GateInput::Shared(v) => *v,
            GateInput::PerGate(vs) => vs[i],
        }
    }
}

/// `(source W_m) ⊙ (x W_n)`.
pub fn factor(g: &mut Graph, f: &Factor<Var>, x: Var, source: Var) -> Result<Var> {
    let gate = g.matmul(source, f.m)?;
    let proj = g.matmul(x, f.n)?;
    Ok(g.mul(gate, proj)?)
}

/// Decoder inputs `(p, q)` after the variant's factorization. Static and
/// per-gate modes gate by the tags `s`; dynamic mode by `h_prev`.
pub fn factorize_gate_input(
    g: &mut Graph,
    mode: FactorizationMode,
    params: &FactParams<Var>,
    p_t: Var,
    q_t: Var,
    s: Var,
    h_prev: Var,
) -> Result<(GateInput, GateInput)> {
    if params.mode() != mode {
        return Err(Error::contract(format!(
            "factorization mode {mode:?} with {:?} parameters",
            params.mode()
        )));
    }
    Ok(match params {
        FactParams::None => (GateInput::Shared(p_t), GateInput::Shared(q_t)),
        FactParams::Static(f) => (GateInput::Shared(p_t), GateInput::Shared(factor(g, f, q_t, s)?)),
        FactParams::Dynamic(f) => (GateInput::Shared(p_t), GateInput::Shared(factor(g, f, q_t, h_prev)?)),
        FactParams::PerGate { p, q } => {
            let mut ps = [p_t; 4];
            let mut qs = [q_t; 4];
            for i in 0..4 {
                ps[i] = factor(g, &p[i], p_t, s)?;
                qs[i] = factor(g, &q[i], q_t, s)?;
            }
            (GateInput::PerGate(ps), GateInput::PerGate(qs))
        }
    })
}

/// A `b × n` zero constant.
pub fn zeros(g: &mut Graph, batch: usize, n: usize) -> Result<Var> {
    Ok(g.constant(Tensor::zeros(&[batch, n]))?)
}
