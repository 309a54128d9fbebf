use mrrc_tensor::{derive_seed, Initializer, ParamId, ParamStore, Tensor};

use crate::error::Result;

/// Creates named parameters with per-name seeds derived from one base seed,
/// so adding or removing a tensor never shifts the values of the others.
pub struct Registrar<'a> {
    store: &'a mut ParamStore,
    init: Initializer,
    seed: u64,
}

impl<'a> Registrar<'a> {
    pub fn new(store: &'a mut ParamStore, init: Initializer, seed: u64) -> Self {
        Registrar { store, init, seed }
    }

    /// An `[rows × cols]` matrix drawn from the configured initializer.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let value = self.init.init(&[rows, cols], derive_seed(self.seed, name));
        Ok(self.store.add(name, value)?)
    }

    /// A `[1 × n]` bias row, zero-initialized.
    pub fn bias(&mut self, name: &str, n: usize) -> Result<ParamId> {
        Ok(self.store.add(name, Tensor::zeros(&[1, n]))?)
    }
}
