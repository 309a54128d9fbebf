//! Central finite differences against reverse-mode gradients.

use mrrc_tensor::{derive_seed, Bindings, Graph, Mutation, ParamStore, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Batch;
use crate::error::Result;
use crate::models::Model;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
    /// Corrupts one derivative rule in the analytic pass.
    pub mutation: Option<Mutation>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tol: 1e-4,
            max_coords: 200,
            seed: 0,
            mutation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

/// Denominator floor of [`relative_error`]. A central difference with step
/// 1e-5 on an O(1) loss carries round-off near 1e-10, so gradients much
/// below 1e-6 cannot be resolved to 1e-4 relative accuracy.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Checks every tensor of `store` for the scalar loss built by `loss`.
pub fn gradcheck<F>(store: &ParamStore, loss: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &Bindings) -> Result<Var>,
{
    let mut g = Graph::with_mutation(opts.mutation);
    let bindings = store.bind(&mut g)?;
    let out = loss(&mut g, &bindings)?;
    g.backward(out)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    analytic.accumulate(&g, &bindings);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let b = s.bind(&mut g)?;
        let out = loss(&mut g, &b)?;
        Ok(g.value(out).item())
    };

    let mut probe = store.clone();
    let mut tensors = Vec::with_capacity(store.len());
    for id in store.ids() {
        let name = store.name(id).to_string();
        let len = store.get(id).len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &name));
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let grad = analytic.grad(id).expect("accumulate fills every gradient");
        let mut worst: f64 = 0.0;
        for &j in &coords {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + opts.step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - opts.step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
        tensors.push(TensorCheck {
            name,
            checked: coords.len(),
            max_rel_err: worst,
            passed: worst < opts.tol,
        });
    }
    Ok(GradcheckReport { tol: opts.tol, tensors })
}

/// Checks all parameters of `model` under the teacher-forced NLL of `batch`.
pub fn gradcheck_model(model: &Model, batch: &Batch, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    gradcheck(
        model.params(),
        |g, b| {
            let mv = model.ids().bind(b);
            Ok(model.forward_sequence(g, &mv, batch)?.nll)
        },
        opts,
    )
}
