use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        check_grads(store, self.m.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = store.grad(id).expect("checked").clone();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((mj, vj), gj) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
            }
            let w = store.get_mut(id).data_mut();
            for ((wj, mj), vj) in w.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mj / c1;
                let vhat = vj / c2;
                *wj -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        check_grads(store, store.len())?;
        for id in store.ids().collect::<Vec<_>>() {
            let g = store.grad(id).expect("checked").clone();
            for (w, gj) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                *w -= self.lr * gj;
            }
        }
        Ok(())
    }
}

fn check_grads(store: &ParamStore, expected: usize) -> Result<()> {
    if store.len() != expected {
        return Err(TensorError::contract(format!(
            "optimizer state tracks {expected} tensors but store has {}",
            store.len()
        )));
    }
    if let Some(id) = store.ids().find(|&id| store.grad(id).is_none()) {
        return Err(TensorError::contract(format!("missing gradient for {}", store.name(id))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn scalar_store(w: f64) -> (ParamStore, crate::params::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::row(&[w])).unwrap();
        (s, id)
    }

    fn set_grad(store: &mut ParamStore, g: f64) {
        store.zero_grad();
        let mut graph = Graph::new();
        let b = store.bind(&mut graph).unwrap();
        let id = store.ids().next().unwrap();
        let l = graph.pick(b[id], &[0], &[g]).unwrap();
        graph.backward(l).unwrap();
        store.accumulate(&graph, &b);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = scalar_store(0.7);
        let mut adam = Adam::new(&s, 0.1);
        set_grad(&mut s, 0.0);
        adam.step(&mut s).unwrap();
        assert_eq!(s.get(id).data(), &[0.7]);
    }

    #[test]
    fn single_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias correction restores mhat = vhat = 1.
        let (mut s, id) = scalar_store(1.0);
        let mut adam = Adam::new(&s, 0.1);
        set_grad(&mut s, 1.0);
        adam.step(&mut s).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_a_contract_error() {
        let (mut s, _) = scalar_store(1.0);
        let mut adam = Adam::new(&s, 0.1);
        assert!(matches!(adam.step(&mut s), Err(TensorError::Contract(_))));
        assert!(Sgd { lr: 0.1 }.step(&mut s).is_err());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let (mut s, id) = scalar_store(0.3);
            let mut adam = Adam::new(&s, 0.05);
            let mut traj = Vec::new();
            for k in 0..20 {
                set_grad(&mut s, (k as f64 * 0.37).sin());
                adam.step(&mut s).unwrap();
                traj.push(s.get(id).data()[0].to_bits());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sgd_step() {
        let (mut s, id) = scalar_store(1.0);
        set_grad(&mut s, 2.0);
        Sgd { lr: 0.25 }.step(&mut s).unwrap();
        assert_eq!(s.get(id).data(), &[0.5]);
    }
}
