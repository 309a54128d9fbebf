use mrrc_core::attention::*;
use mrrc_core::data::{RegionMask, SceneBatch};
use mrrc_core::training::{gradcheck, GradcheckOptions};
use mrrc_tensor::{Graph, ParamStore, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Regions with masked slots zeroed, plus random tags.
fn random_scenes(b: usize, k: usize, r: usize, tag_dim: usize, rng: &mut impl Rng) -> SceneBatch {
    let mut live = Vec::with_capacity(b * k);
    for _ in 0..b {
        let n_live = rng.random_range(1..=k);
        let mut row = vec![false; k];
        // Live slots are not always a prefix.
        let mut placed = 0;
        while placed < n_live {
            let i = rng.random_range(0..k);
            if !row[i] {
                row[i] = true;
                placed += 1;
            }
        }
        live.extend(row);
    }
    let mut regions = randn(&[b, k, r], 1.0, rng);
    for (slot, &on) in live.iter().enumerate() {
        if !on {
            regions.data_mut()[slot * r..(slot + 1) * r].fill(0.0);
        }
    }
    SceneBatch {
        regions,
        mask: RegionMask::new(k, live).unwrap(),
        tags: Tensor::new(vec![b, tag_dim], (0..b * tag_dim).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap(),
    }
}

/// Plain `a · w` for row-major `a` (n × p) and `w` (p × q).
fn matmul(a: &[f64], w: &Tensor, n: usize) -> Vec<f64> {
    let (p, q) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; n * q];
    for i in 0..n {
        for j in 0..q {
            out[i * q + j] = (0..p).map(|l| a[i * p + l] * w.data()[l * q + j]).sum();
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn fdc_params(g: &mut Graph, d: usize, m: usize, k: usize, r: usize, rng: &mut impl Rng) -> FdcParams<Var> {
    FdcParams {
        w_h: g.constant(randn(&[d, m], 1.0, rng)).unwrap(),
        w_a: g.constant(randn(&[m, k], 2.0, rng)).unwrap(),
        w_h0: g.constant(randn(&[r, d], 1.0, rng)).unwrap(),
        w_c0: g.constant(randn(&[r, d], 1.0, rng)).unwrap(),
    }
}

#[test]
fn region_mean_examples() {
    let mut g = Graph::new();
    let scenes = SceneBatch {
        regions: Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 3.0, -2.0, 0.0, 0.0]).unwrap(),
        mask: RegionMask::new(2, vec![true, true, true, false]).unwrap(),
        tags: Tensor::zeros(&[2, 1]),
    };
    let sv = SceneVars::new(&mut g, &scenes).unwrap();
    let m = region_mean(&mut g, &sv).unwrap();
    assert_eq!(g.value(m).data(), &[0.5, 0.5, 3.0, -2.0]);
}

#[test]
fn region_mean_ignores_masked_slots() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let live = vec![true, false, true, false, true];
    let mut regions = randn(&[1, 5, 4], 1.0, &mut rng);
    // Garbage in masked slots must not leak into the mean.
    for i in [1, 3] {
        regions.data_mut()[i * 4..(i + 1) * 4].fill(100.0);
    }
    let scenes = SceneBatch {
        regions: regions.clone(),
        mask: RegionMask::new(5, live.clone()).unwrap(),
        tags: Tensor::zeros(&[1, 1]),
    };
    let mut g = Graph::new();
    let sv = SceneVars::new(&mut g, &scenes).unwrap();
    let m = region_mean(&mut g, &sv).unwrap();
    for j in 0..4 {
        let want = [0, 2, 4].iter().map(|&i| regions.data()[i * 4 + j]).sum::<f64>() / 3.0;
        assert!((g.value(m).data()[j] - want).abs() < 1e-14);
    }
}

#[test]
fn all_masked_scene_is_rejected() {
    let scenes = SceneBatch {
        regions: Tensor::zeros(&[1, 3, 2]),
        mask: RegionMask::new(3, vec![false; 3]).unwrap(),
        tags: Tensor::zeros(&[1, 1]),
    };
    let mut g = Graph::new();
    assert!(SceneVars::new(&mut g, &scenes).is_err());
}

#[test]
fn init_state_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let p = fdc_params(&mut g, 3, 2, 2, 3, &mut rng);
    let zero = g.constant(Tensor::zeros(&[1, 3])).unwrap();
    let (h0, c0) = fdc_init_state(&mut g, zero, &p).unwrap();
    assert!(g.value(h0).data().iter().chain(g.value(c0).data()).all(|&x| x == 0.0));

    let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let p_eye = FdcParams {
        w_h0: g.constant(eye).unwrap(),
        ..p
    };
    let v = randn(&[2, 3], 1.0, &mut rng);
    let vm = g.constant(v.clone()).unwrap();
    let (h0, c0) = fdc_init_state(&mut g, vm, &p_eye).unwrap();
    assert_eq!(g.value(h0).data(), v.data());
    let want = matmul(v.data(), g.value(p.w_c0), 2);
    for (a, b) in g.value(c0).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn zero_scores_give_masked_mean_and_single_region_gets_all_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scenes = random_scenes(6, 5, 4, 2, &mut rng);
    let mut g = Graph::new();
    let sv = SceneVars::new(&mut g, &scenes).unwrap();
    let mut p = fdc_params(&mut g, 3, 4, 5, 4, &mut rng);
    p.w_a = g.constant(Tensor::zeros(&[4, 5])).unwrap();
    let h = g.constant(randn(&[6, 3], 1.0, &mut rng)).unwrap();
    let (v_hat, _) = fdc_attend(&mut g, h, &sv, &p).unwrap();
    let mean = region_mean(&mut g, &sv).unwrap();
    for (a, b) in g.value(v_hat).data().iter().zip(g.value(mean).data()) {
        assert!((a - b).abs() < 1e-12);
    }

    let single = SceneBatch {
        regions: randn(&[1, 3, 2], 1.0, &mut rng),
        mask: RegionMask::new(3, vec![false, true, false]).unwrap(),
        tags: Tensor::zeros(&[1, 1]),
    };
    let mut g = Graph::new();
    let sv = SceneVars::new(&mut g, &single).unwrap();
    let p = fdc_params(&mut g, 3, 4, 3, 2, &mut rng);
    let h = g.constant(randn(&[1, 3], 1.0, &mut rng)).unwrap();
    let (v_hat, alpha) = fdc_attend(&mut g, h, &sv, &p).unwrap();
    assert_eq!(g.value(alpha).data(), &[0.0, 1.0, 0.0]);
    assert_eq!(g.value(v_hat).data(), &single.regions.data()[2..4]);
}

/// The acceptance draw: simplex, exact zeros on masked slots, and the
/// coordinatewise convex-hull bound, over 1000 random inputs.
#[test]
fn fdc_attend_thousand_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for _ in 0..1000 {
        let (b, k, r, d, m) = (
            rng.random_range(1..4),
            rng.random_range(1..7),
            rng.random_range(1..6),
            rng.random_range(1..6),
            rng.random_range(1..6),
        );
        let scenes = random_scenes(b, k, r, 1, &mut rng);
        let mut g = Graph::new();
        let sv = SceneVars::new(&mut g, &scenes).unwrap();
        let p = fdc_params(&mut g, d, m, k, r, &mut rng);
        let h = g.constant(randn(&[b, d], 3.0, &mut rng)).unwrap();
        let (v_hat, alpha) = fdc_attend(&mut g, h, &sv, &p).unwrap();
        let (a, v) = (g.value(alpha).data(), g.value(v_hat).data());
        for row in 0..b {
            let live = scenes.mask.row(row);
            let ar = &a[row * k..(row + 1) * k];
            if (ar.iter().sum::<f64>() - 1.0).abs() >= 1e-10 || ar.iter().any(|&x| x < 0.0) {
                violations += 1;
            }
            if ar.iter().zip(live).any(|(&x, &on)| !on && x != 0.0) {
                violations += 1;
            }
            for j in 0..r {
                let vals = (0..k).filter(|&i| live[i]).map(|i| scenes.regions.data()[(row * k + i) * r + j]);
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                let x = v[row * r + j];
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                if x < lo - slack || x > hi + slack {
                    violations += 1;
                }
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn softmax_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = randn(&[3, 5], 2.0, &mut rng);
    let shifted = s.map(|x| x + 7.25);
    let mut g = Graph::new();
    let (a, b) = (g.constant(s).unwrap(), g.constant(shifted).unwrap());
    let (sa, sb) = (g.softmax(a).unwrap(), g.softmax(b).unwrap());
    for (x, y) in g.value(sa).data().iter().zip(g.value(sb).data()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn context_sum_prefix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let embeds = randn(&[7, 5], 1.0, &mut rng);
    let mut g = Graph::new();
    let mut acc = zeros(&mut g, 1, 5).unwrap();
    for t in 0..=7 {
        let want: Vec<f64> = (0..5).map(|j| (0..t).map(|i| embeds.data()[i * 5 + j]).sum()).collect();
        let got = g.value(acc).data().to_vec();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
        let read = context_read(&mut g, acc, t, true).unwrap();
        if t > 0 {
            for (a, b) in g.value(read).data().iter().zip(&want) {
                assert!((a - b / t as f64).abs() < 1e-14);
            }
        }
        if t < 7 {
            let e = g.constant(Tensor::row(&embeds.data()[t * 5..(t + 1) * 5])).unwrap();
            acc = context_sum_update(&mut g, acc, e).unwrap();
        }
    }
}

struct MrrcFixture {
    g: Graph,
    p: MrrcParams<Var>,
    x: MrrcInputs,
    ctx: Var,
    raw: Vec<Tensor>,
}

/// Random crossover with left/right widths 4, mult 3, ctx 5, gate 6, out 2.
fn mrrc_fixture(rng: &mut impl Rng, b: usize) -> MrrcFixture {
    let mut g = Graph::new();
    let shapes: [&[usize]; 9] = [&[4, 6], &[6, 2], &[4, 3], &[3, 2], &[5, 6], &[5, 3], &[1, 6], &[1, 3], &[1, 2]];
    let raw: Vec<Tensor> = shapes.iter().map(|s| randn(s, 1.0, rng)).collect();
    let v: Vec<Var> = raw.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
    let p = MrrcParams {
        w_s11: v[0],
        w_s12: v[1],
        w_s21: v[2],
        w_s22: v[3],
        w_w1: v[4],
        w_w2: v[5],
        b1: v[6],
        b2: v[7],
        b3: v[8],
    };
    let x = MrrcInputs {
        left: g.constant(randn(&[b, 4], 1.0, rng)).unwrap(),
        right: g.constant(randn(&[b, 4], 1.0, rng)).unwrap(),
        mult: g.constant(randn(&[b, 3], 1.0, rng)).unwrap(),
    };
    let ctx = g.constant(randn(&[b, 5], 1.0, rng)).unwrap();
    MrrcFixture { g, p, x, ctx, raw }
}

fn brute_mrrc(f: &MrrcFixture, b: usize) -> Vec<f64> {
    let w = &f.raw;
    let val = |v: Var| f.g.value(v).data().to_vec();
    let (left, right, mult, ctx) = (val(f.x.left), val(f.x.right), val(f.x.mult), val(f.ctx));
    let z1a = matmul(&left, &w[0], b);
    let z1c = matmul(&ctx, &w[4], b);
    let s1: Vec<f64> = (0..b * 6).map(|i| sigmoid(z1a[i] + z1c[i] + w[6].data()[i % 6])).collect();
    let l = matmul(&s1, &w[1], b);
    let z2a = matmul(&right, &w[2], b);
    let z2c = matmul(&ctx, &w[5], b);
    let gated: Vec<f64> = (0..b * 3).map(|i| mult[i] * sigmoid(z2a[i] + z2c[i] + w[7].data()[i % 3])).collect();
    let pr = matmul(&gated, &w[3], b);
    (0..b * 2).map(|i| l[i] * (pr[i] + w[8].data()[i % 2]).tanh()).collect()
}

#[test]
fn mrrc_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut f = mrrc_fixture(&mut rng, 3);
    let t = mrrc_attend(&mut f.g, f.x, f.ctx, &f.p).unwrap();
    let want = brute_mrrc(&f, 3);
    for (a, b) in f.g.value(t).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn mrrc_zero_params_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut f = mrrc_fixture(&mut rng, 2);
    let mut p = f.p;
    for (slot, shape) in [(&mut p.w_s11, [4, 6]), (&mut p.w_s12, [6, 2]), (&mut p.w_s21, [4, 3]), (&mut p.w_s22, [3, 2])] {
        *slot = f.g.constant(Tensor::zeros(&shape)).unwrap();
    }
    p.w_w1 = f.g.constant(Tensor::zeros(&[5, 6])).unwrap();
    p.w_w2 = f.g.constant(Tensor::zeros(&[5, 3])).unwrap();
    p.b1 = f.g.constant(Tensor::zeros(&[1, 6])).unwrap();
    p.b2 = f.g.constant(Tensor::zeros(&[1, 3])).unwrap();
    p.b3 = f.g.constant(Tensor::zeros(&[1, 2])).unwrap();
    let t = mrrc_attend(&mut f.g, f.x, f.ctx, &p).unwrap();
    assert!(f.g.value(t).data().iter().all(|&x| x == 0.0));
}

#[test]
fn mrrc_saturated_right_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut f = mrrc_fixture(&mut rng, 2);
    let mut p = f.p;
    let zero = |g: &mut Graph, s: &[usize]| g.constant(Tensor::zeros(s)).unwrap();
    p.w_s11 = zero(&mut f.g, &[4, 6]);
    p.w_s21 = zero(&mut f.g, &[4, 3]);
    p.w_s22 = zero(&mut f.g, &[3, 2]);
    p.w_w1 = zero(&mut f.g, &[5, 6]);
    p.w_w2 = zero(&mut f.g, &[5, 3]);
    p.b2 = zero(&mut f.g, &[1, 3]);
    p.b3 = f.g.constant(Tensor::full(&[1, 2], -1e3)).unwrap();
    let t = mrrc_attend(&mut f.g, f.x, f.ctx, &p).unwrap();
    let b1 = &f.raw[6];
    let s: Vec<f64> = b1.data().iter().map(|&x| sigmoid(x)).collect();
    let left = matmul(&s, &f.raw[1], 1);
    for row in 0..2 {
        for j in 0..2 {
            assert!((f.g.value(t).data()[row * 2 + j] + left[j]).abs() < 1e-14);
        }
    }
}

#[test]
fn mrrc_branch_mismatch_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut f = mrrc_fixture(&mut rng, 1);
    let mut p = f.p;
    p.w_s22 = f.g.constant(randn(&[3, 5], 1.0, &mut rng)).unwrap();
    p.b3 = f.g.constant(Tensor::zeros(&[1, 5])).unwrap();
    assert!(mrrc_attend(&mut f.g, f.x, f.ctx, &p).is_err());
}

fn factor_fixture(rng: &mut impl Rng) -> (Graph, Factor<Var>, Tensor, Tensor, Tensor, Tensor) {
    let mut g = Graph::new();
    let (wm, wn) = (randn(&[5, 4], 1.0, rng), randn(&[3, 4], 1.0, rng));
    let f = Factor {
        m: g.constant(wm.clone()).unwrap(),
        n: g.constant(wn.clone()).unwrap(),
    };
    let (q, s) = (randn(&[2, 3], 1.0, rng), randn(&[2, 5], 1.0, rng));
    (g, f, wm, wn, q, s)
}

#[test]
fn factor_equals_diag_pseudo_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut g, f, wm, wn, q, s) = factor_fixture(&mut rng);
    let (qv, sv) = (g.constant(q.clone()).unwrap(), g.constant(s.clone()).unwrap());
    let out = factor(&mut g, &f, qv, sv).unwrap();
    for row in 0..2 {
        // W_pr · diag(W_q S) · W_ps with W_pr = I and W_ps = W_n, built as matrices.
        let gate = matmul(&s.data()[row * 5..(row + 1) * 5], &wm, 1);
        let mut diag = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            diag.data_mut()[i * 4 + i] = gate[i];
        }
        let pseudo = wn.matmul(&diag).unwrap();
        let want = matmul(&q.data()[row * 3..(row + 1) * 3], &pseudo, 1);
        for j in 0..4 {
            assert!((g.value(out).data()[row * 4 + j] - want[j]).abs() < 1e-13);
        }
    }
}

#[test]
fn all_ones_gate_reduces_to_linear_map_and_zero_source_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut g, f, _, wn, q, _) = factor_fixture(&mut rng);
    let mut wm = Tensor::zeros(&[5, 4]);
    wm.data_mut()[..4].fill(1.0);
    let ones_gate = Factor {
        m: g.constant(wm).unwrap(),
        n: f.n,
    };
    let mut s = Tensor::zeros(&[2, 5]);
    s.data_mut()[0] = 1.0;
    s.data_mut()[5] = 1.0;
    let (qv, sv) = (g.constant(q.clone()).unwrap(), g.constant(s).unwrap());
    let out = factor(&mut g, &ones_gate, qv, sv).unwrap();
    assert_eq!(g.value(out).data(), matmul(q.data(), &wn, 2).as_slice());

    let zero = g.constant(Tensor::zeros(&[2, 5])).unwrap();
    let out = factor(&mut g, &f, qv, zero).unwrap();
    assert!(g.value(out).data().iter().all(|&x| x == 0.0));
}

#[test]
fn static_mode_ignores_h_and_dynamic_mode_follows_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut g = Graph::new();
    let fm = |g: &mut Graph, rng: &mut ChaCha8Rng, src: usize| Factor {
        m: g.constant(randn(&[src, 4], 1.0, rng)).unwrap(),
        n: g.constant(randn(&[3, 4], 1.0, rng)).unwrap(),
    };
    let stat = FactParams::Static(fm(&mut g, &mut rng, 5));
    let dynamic = FactParams::Dynamic(fm(&mut g, &mut rng, 4));
    let p = g.constant(randn(&[2, 6], 1.0, &mut rng)).unwrap();
    let q = g.constant(randn(&[2, 3], 1.0, &mut rng)).unwrap();
    let s = g.constant(randn(&[2, 5], 1.0, &mut rng)).unwrap();
    let h1 = g.constant(randn(&[2, 4], 1.0, &mut rng)).unwrap();
    let h2 = g.constant(randn(&[2, 4], 1.0, &mut rng)).unwrap();
    let run = |g: &mut Graph, mode, params: &FactParams<Var>, h| {
        let (_, q_in) = factorize_gate_input(g, mode, params, p, q, s, h).unwrap();
        g.value(q_in.gate(0)).data().to_vec()
    };
    assert_eq!(run(&mut g, FactorizationMode::Static, &stat, h1), run(&mut g, FactorizationMode::Static, &stat, h2));
    assert_ne!(run(&mut g, FactorizationMode::Dynamic, &dynamic, h1), run(&mut g, FactorizationMode::Dynamic, &dynamic, h2));
    assert!(factorize_gate_input(&mut g, FactorizationMode::Dynamic, &stat, p, q, s, h1).is_err());
}

fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(out).shape().to_vec();
    let w = g.constant(randn(&shape, 1.0, &mut rng)).unwrap();
    let prod = g.mul(out, w).unwrap();
    g.sum(prod).unwrap()
}

fn tight() -> GradcheckOptions {
    GradcheckOptions {
        tol: 1e-5,
        ..Default::default()
    }
}

#[test]
fn fdc_ops_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let scenes = random_scenes(3, 4, 3, 2, &mut rng);
    let mut store = ParamStore::new();
    for (name, shape, scale) in [
        ("w_h", vec![5, 4], 0.7),
        ("w_a", vec![4, 4], 0.7),
        ("w_h0", vec![3, 5], 0.7),
        ("w_c0", vec![3, 5], 0.7),
        ("h", vec![3, 5], 1.0),
        ("regions", vec![3, 4, 3], 1.0),
    ] {
        store.add(name, randn(&shape, scale, &mut rng)).unwrap();
    }
    let id = |n: &str| store.id(n).unwrap();
    let ids = [id("w_h"), id("w_a"), id("w_h0"), id("w_c0"), id("h"), id("regions")];
    let report = gradcheck(
        &store,
        |g, b| {
            let fixed = SceneVars::new(g, &scenes)?;
            let sv = SceneVars {
                regions: b[ids[5]],
                ..fixed
            };
            let p = FdcParams {
                w_h: b[ids[0]],
                w_a: b[ids[1]],
                w_h0: b[ids[2]],
                w_c0: b[ids[3]],
            };
            let (v_hat, alpha) = fdc_attend(g, b[ids[4]], &sv, &p)?;
            let mean = region_mean(g, &sv)?;
            let (h0, c0) = fdc_init_state(g, mean, &p)?;
            let parts = [weighted_sum(g, v_hat, 1), weighted_sum(g, alpha, 2), weighted_sum(g, h0, 3), weighted_sum(g, c0, 4)];
            let a = g.add(parts[0], parts[1])?;
            let c = g.add(parts[2], parts[3])?;
            Ok(g.add(a, c)?)
        },
        &tight(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn mrrc_and_factor_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let shapes: [(&str, &[usize]); 15] = [
        ("w_s11", &[4, 6]),
        ("w_s12", &[6, 2]),
        ("w_s21", &[4, 3]),
        ("w_s22", &[3, 2]),
        ("w_w1", &[5, 6]),
        ("w_w2", &[5, 3]),
        ("b1", &[1, 6]),
        ("b2", &[1, 3]),
        ("b3", &[1, 2]),
        ("left", &[2, 4]),
        ("right", &[2, 4]),
        ("mult", &[2, 3]),
        ("ctx", &[2, 5]),
        ("f_m", &[5, 3]),
        ("f_n", &[2, 3]),
    ];
    for (name, shape) in shapes {
        store.add(name, randn(shape, 0.8, &mut rng)).unwrap();
    }
    let ids: Vec<_> = store.ids().collect();
    let report = gradcheck(
        &store,
        |g, b| {
            let v: Vec<Var> = ids.iter().map(|&i| b[i]).collect();
            let p = MrrcParams {
                w_s11: v[0],
                w_s12: v[1],
                w_s21: v[2],
                w_s22: v[3],
                w_w1: v[4],
                w_w2: v[5],
                b1: v[6],
                b2: v[7],
                b3: v[8],
            };
            let x = MrrcInputs {
                left: v[9],
                right: v[10],
                mult: v[11],
            };
            let t = mrrc_attend(g, x, v[12], &p)?;
            let f = Factor { m: v[13], n: v[14] };
            let fx = factor(g, &f, t, v[12])?;
            let a = weighted_sum(g, t, 5);
            let c = weighted_sum(g, fx, 6);
            Ok(g.add(a, c)?)
        },
        &tight(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.tensors.len(), 15);
}

proptest! {
    #[test]
    fn mrrc_bounded_by_left_column_sums(seed in any::<u64>(), scale in 0.1..20.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = mrrc_fixture(&mut rng, 3);
        let big = f.g.constant(randn(&[1, 2], scale, &mut rng)).unwrap();
        let p = MrrcParams { b3: big, ..f.p };
        let t = mrrc_attend(&mut f.g, f.x, f.ctx, &p).unwrap();
        let w12 = &f.raw[1];
        for row in 0..3 {
            for j in 0..2 {
                let bound: f64 = (0..6).map(|i| w12.data()[i * 2 + j].abs()).sum();
                prop_assert!(f.g.value(t).data()[row * 2 + j].abs() <= bound);
            }
        }
    }

    #[test]
    fn init_state_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let p = fdc_params(&mut g, 4, 2, 2, 3, &mut rng);
        let (x, y) = (randn(&[1, 3], 1.0, &mut rng), randn(&[1, 3], 1.0, &mut rng));
        let mix = x.zip_map(&y, "mix", |u, v| a * u + b * v).unwrap();
        let run = |g: &mut Graph, t: Tensor| {
            let v = g.constant(t).unwrap();
            let (h, c) = fdc_init_state(g, v, &p).unwrap();
            (g.value(h).data().to_vec(), g.value(c).data().to_vec())
        };
        let (hx, cx) = run(&mut g, x);
        let (hy, cy) = run(&mut g, y);
        let (hm, cm) = run(&mut g, mix);
        for i in 0..4 {
            prop_assert!((hm[i] - (a * hx[i] + b * hy[i])).abs() < 1e-12);
            prop_assert!((cm[i] - (a * cx[i] + b * cy[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_on_live_simplex(seed in any::<u64>(), hscale in 0.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenes = random_scenes(2, 6, 3, 1, &mut rng);
        let mut g = Graph::new();
        let sv = SceneVars::new(&mut g, &scenes).unwrap();
        let p = fdc_params(&mut g, 3, 3, 6, 3, &mut rng);
        let h = g.constant(randn(&[2, 3], hscale, &mut rng)).unwrap();
        let (_, alpha) = fdc_attend(&mut g, h, &sv, &p).unwrap();
        for row in 0..2 {
            let a = &g.value(alpha).data()[row * 6..(row + 1) * 6];
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for (x, &on) in a.iter().zip(scenes.mask.row(row)) {
                prop_assert!(*x >= 0.0);
                if !on {
                    prop_assert_eq!(*x, 0.0);
                }
            }
        }
    }
}
