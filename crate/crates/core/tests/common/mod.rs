#![allow(dead_code)]

use mrrc_core::data::{SceneExample, BOS, EOS};
use mrrc_core::models::{build_model, Model, ModelConfig, Variant};
use mrrc_tensor::{Graph, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Scene with `k` live regions of width `region_dim` drawn from N(0, 1).
pub fn random_scene(id: &str, k: usize, region_dim: usize, tag_dim: usize, caption: Vec<usize>, seed: u64) -> SceneExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SceneExample {
        id: id.to_string(),
        regions: (0..k).map(|_| (0..region_dim).map(|_| rng.sample(StandardNormal)).collect()).collect(),
        tags: (0..tag_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
        captions: vec![caption],
    }
}

/// A caption `BOS w.. EOS` over ids drawn from `4..vocab`.
pub fn random_caption(len: usize, vocab: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut c = vec![BOS];
    c.extend((0..len).map(|_| rng.random_range(4..vocab)));
    c.push(EOS);
    c
}

pub fn small_config(variant: Variant, vocab: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        d: 8,
        e: 8,
        vocab_size: vocab,
        region_dim: 6,
        tag_dim: 5,
        k_max: 4,
        m_intermediate: 5,
        mrrc_gate: 7,
        seed,
        ..Default::default()
    }
}

pub fn small_model(variant: Variant, vocab: usize, seed: u64) -> Model {
    build_model(&small_config(variant, vocab, seed)).unwrap()
}

/// Unit-norm direction over every parameter coordinate.
pub fn random_direction(store: &ParamStore, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<Vec<f64>> = store
        .ids()
        .map(|id| (0..store.get(id).len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let n = u.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().flatten().for_each(|x| *x /= n);
    u
}

/// `θ + h·u` as a new store.
pub fn shifted(store: &ParamStore, u: &[Vec<f64>], h: f64) -> ParamStore {
    let mut s = store.clone();
    for (id, dir) in store.ids().zip(u) {
        for (w, d) in s.get_mut(id).data_mut().iter_mut().zip(dir) {
            *w += h * d;
        }
    }
    s
}

/// `<grad, u>` over the gradients held by `store`.
pub fn project_grad(store: &ParamStore, u: &[Vec<f64>]) -> f64 {
    store
        .ids()
        .zip(u)
        .map(|(id, dir)| {
            let g = store.grad(id).expect("gradient present");
            g.data().iter().zip(dir).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

/// Exact log-probability of the generated tokens `y` (EOS included when
/// present) for the single scene of `scene`.
pub fn sequence_log_prob(model: &Model, scene: &SceneExample, y: &[usize]) -> f64 {
    let batch = mrrc_core::data::Batch::from_examples(&[scene], model.config().k_max).unwrap();
    let mut tokens = vec![BOS];
    tokens.extend_from_slice(y);
    let weights = vec![vec![1.0; y.len()]];
    let mut g = Graph::new();
    let (_, mv) = model.bind(&mut g).unwrap();
    let total = model.log_likelihood(&mut g, &mv, &batch.scenes, &[tokens], &weights).unwrap();
    g.value(total).item()
}

/// Brute-force softmax log-probabilities of one logits row.
pub fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// Saturates the output gate and cell so `h` is positive, then points
/// `dec.w_hx` at EOS: every row decodes EOS first with probability 1.
pub fn saturate_to_eos(model: &mut Model) {
    let d = model.config().d;
    for (gate, bias) in [("i", 50.0), ("f", -50.0), ("o", 50.0), ("g", 50.0)] {
        model.set_param(&format!("dec.b_{gate}"), mrrc_tensor::Tensor::full(&[1, d], bias)).unwrap();
    }
    let v = model.config().vocab_size;
    let mut w = mrrc_tensor::Tensor::zeros(&[d, v]);
    for r in 0..d {
        w.data_mut()[r * v + EOS] = 1000.0;
    }
    model.set_param("dec.w_hx", w).unwrap();
}
