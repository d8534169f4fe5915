//! SGD with momentum and Adam, as slice kernels plus a stateful wrapper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

fn check_lens(w: usize, g: usize, state: &[usize]) -> Result<()> {
    if g != w || state.iter().any(|&s| s != w) {
        return Err(Error::Contract(format!(
            "optimizer shape mismatch: {w} weights, {g} gradients, state {state:?}"
        )));
    }
    Ok(())
}

/// `v <- momentum * v + g; w <- w - lr * v`.
pub fn sgd_step<T: Scalar>(
    w: &mut [T],
    g: &[T],
    v: &mut [T],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_lens(w.len(), g.len(), &[v.len()])?;
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v + *g;
        *w -= lr * *v;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update for step `t >= 1`.
pub fn adam_step<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    hp: AdamParams,
    t: u64,
) -> Result<()> {
    check_lens(w.len(), g.len(), &[m.len(), v.len()])?;
    if t == 0 {
        return Err(Error::Contract("adam step counter starts at 1".into()));
    }
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    // fold both corrections into the step size: lr * sqrt(c2) / c1
    let step = T::of(lr * c2.sqrt() / c1);
    let eps = T::of(hp.eps * c2.sqrt());
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let (nb1, nb2) = (T::one() - b1, T::one() - b2);
    for (((w, g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + nb1 * *g;
        *v = b2 * *v + nb2 * *g * *g;
        *w -= step * *m / (v.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam(AdamParams),
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam(AdamParams::default())
    }
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam(_) => "adam",
        }
    }
}

/// Per-parameter optimizer state for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        match kind {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::Config(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )));
            }
            OptimizerKind::Adam(p)
                if !(0.0..1.0).contains(&p.beta1)
                    || !(0.0..1.0).contains(&p.beta2)
                    || p.eps <= 0.0 =>
            {
                return Err(Error::Config(format!("invalid adam parameters {p:?}")));
            }
            _ => {}
        }
        Ok(Optimizer {
            kind,
            lr,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the stored gradients of every parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.first.is_empty() {
            let zeros = |s: &ParamStore<T>| -> Vec<Vec<T>> {
                s.params()
                    .iter()
                    .map(|p| vec![T::zero(); p.value().numel()])
                    .collect()
            };
            self.first = zeros(store);
            if matches!(self.kind, OptimizerKind::Adam(_)) {
                self.second = zeros(store);
            }
        }
        if self.first.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.t += 1;
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let (w, g) = p.value_and_grad_mut();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    sgd_step(w, g, &mut self.first[i], self.lr, momentum)?
                }
                OptimizerKind::Adam(hp) => adam_step(
                    w,
                    g,
                    &mut self.first[i],
                    &mut self.second[i],
                    self.lr,
                    hp,
                    self.t,
                )?,
            }
        }
        Ok(())
    }
}
