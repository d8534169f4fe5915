use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{BufferId, ParamId, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{BnMode, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization, dropout active, running stats
    /// updated.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// One forward pass: a fresh tape bound to a parameter store.
///
/// Parameters are placed on the tape lazily, sharing their buffers, the
/// first time a layer asks for them.
pub struct Forward<'a, T: Scalar> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    param_grads: bool,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Forward<'a, T> {
    /// `seed` drives dropout masks.
    pub fn new(store: &'a ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Forward {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            param_grads: mode == Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Overrides whether parameters are tracked for gradients (tracked by
    /// default only in training mode).
    pub fn with_param_grads(mut self, on: bool) -> Self {
        self.param_grads = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.constant(x)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self
            .tape
            .leaf_shared(self.store.param(id).shared(), self.param_grads);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        stats: BufferId,
    ) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let buffer = self.store.buffer(stats);
        let tape = &mut self.tape;
        match self.mode {
            Mode::Train => buffer.with_stats(|s| tape.batch_norm2d(x, g, b, BnMode::Train(s))),
            Mode::Eval => buffer.with_stats(|s| tape.batch_norm2d(x, g, b, BnMode::Eval(s))),
        }
    }

    /// Identity outside training mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        match self.mode {
            Mode::Train => self.tape.dropout(x, p, &mut self.rng),
            Mode::Eval => Ok(x),
        }
    }

    /// Gradients of every bound parameter after `tape.backward`.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let g = self.tape.grad((*v)?)?;
                Some((ParamId(i), g.to_vec()))
            })
            .collect()
    }
}
