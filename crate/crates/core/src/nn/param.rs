//! Named parameter and running-statistics storage shared by all layers.

use std::sync::{Arc, Mutex, PoisonError};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{RunningStats, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position in [`ParamStore::params`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    value: Arc<Tensor<T>>,
    grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    /// Mutable view of the weights. Copies the buffer first if a tape still
    /// holds a reference to it.
    pub fn value_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.value).data_mut()
    }

    pub fn value_and_grad_mut(&mut self) -> (&mut [T], &[T]) {
        (Arc::make_mut(&mut self.value).data_mut(), &self.grad)
    }
}

#[derive(Debug)]
pub struct Buffer<T> {
    name: String,
    stats: Mutex<RunningStats<T>>,
}

impl<T: Scalar> Buffer<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stats(&self) -> RunningStats<T> {
        self.stats
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .clone()
    }

    pub(crate) fn with_stats<R>(&self, f: impl FnOnce(&mut RunningStats<T>) -> R) -> R {
        let mut guard = self.stats.lock().unwrap_or_else(PoisonError::into_inner);
        f(&mut guard)
    }
}

impl<T: Scalar> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Buffer {
            name: self.name.clone(),
            stats: Mutex::new(self.stats()),
        }
    }
}

/// All trainable tensors of a model plus its normalization statistics.
///
/// Running statistics sit behind a lock so a model can run training-mode
/// forward passes through a shared reference; only one trainer may drive a
/// given store at a time.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = vec![T::zero(); value.numel()];
        self.params.push(Param {
            name: name.into(),
            value: Arc::new(value),
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, stats: RunningStats<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            stats: Mutex::new(stats),
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds gradient contributions (`+=`) into the stored gradient buffers.
    pub fn accumulate_grads(&mut self, grads: Vec<(ParamId, Vec<T>)>) -> Result<()> {
        for (id, g) in grads {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::Contract(format!("unknown parameter id {}", id.0)))?;
            if g.len() != p.grad.len() {
                return Err(Error::Contract(format!(
                    "gradient for {} has {} values, parameter has {}",
                    p.name,
                    g.len(),
                    p.grad.len()
                )));
            }
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok(())
    }

    /// Every persisted tensor in a fixed order: parameters, then each
    /// buffer's running mean and variance.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), (*p.value).clone()))
            .collect();
        for b in &self.buffers {
            let stats = b.stats();
            let c = stats.mean.len();
            out.push((
                format!("{}.running_mean", b.name),
                Tensor::from_parts(vec![c], stats.mean),
            ));
            out.push((
                format!("{}.running_var", b.name),
                Tensor::from_parts(vec![c], stats.var),
            ));
        }
        out
    }

    /// Overwrites every tensor from `named_tensors`-ordered input, checking
    /// names and shapes. Nothing is modified unless all entries match.
    pub fn load_named_tensors(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        let expected = self.params.len() + 2 * self.buffers.len();
        if tensors.len() != expected {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} tensors, architecture needs {expected}",
                tensors.len()
            )));
        }
        let current = self.named_tensors();
        for ((name, t), (want_name, want)) in tensors.iter().zip(&current) {
            if name != want_name || t.shape() != want.shape() {
                return Err(Error::Integrity(format!(
                    "tensor {name} {:?} does not match expected {want_name} {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        for p in &mut self.params {
            let (_, t) = it.next().expect("length checked");
            p.value = Arc::new(t);
        }
        for b in &mut self.buffers {
            let (_, mean) = it.next().expect("length checked");
            let (_, var) = it.next().expect("length checked");
            b.with_stats(|s| {
                s.mean = mean.into_data();
                s.var = var.into_data();
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_counts_zero() {
        assert_eq!(ParamStore::<f32>::new().param_count(), 0);
    }

    #[test]
    fn dense_four_to_three_counts_fifteen() {
        let mut store = ParamStore::<f32>::new();
        store.add("fc.weight", Tensor::zeros(&[4, 3]).unwrap());
        store.add("fc.bias", Tensor::zeros(&[3]).unwrap());
        assert_eq!(store.param_count(), 15);
    }

    #[test]
    fn accumulate_adds_and_checks_length() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros(&[2]).unwrap());
        store.accumulate_grads(vec![(id, vec![1.0, 2.0])]).unwrap();
        store.accumulate_grads(vec![(id, vec![1.0, 2.0])]).unwrap();
        assert_eq!(store.param(id).grad(), &[2.0, 4.0]);
        assert!(store.accumulate_grads(vec![(id, vec![1.0])]).is_err());
        store.zero_grads();
        assert_eq!(store.param(id).grad(), &[0.0, 0.0]);
    }
}
