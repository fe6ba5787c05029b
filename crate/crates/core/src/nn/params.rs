use alloc::string::String;
use alloc::vec::Vec;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with gradient accumulators and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    pub(crate) m: Vec<Tensor>,
    pub(crate) v: Vec<Tensor>,
    pub(crate) step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let shape = value.shape().to_vec();
        self.names.push(name.into());
        self.grads.push(Tensor::zeros(&shape));
        self.m.push(Tensor::zeros(&shape));
        self.v.push(Tensor::zeros(&shape));
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn adam_moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        (&self.m[id.0], &self.v[id.0])
    }

    pub fn adam_moments_mut(&mut self, id: ParamId) -> (&mut Tensor, &mut Tensor) {
        (&mut self.m[id.0], &mut self.v[id.0])
    }

    /// Adam step counter.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Disjoint borrows of the values (read) and gradients (write).
    pub fn split(&mut self) -> (Values<'_>, Grads<'_>) {
        (Values(&self.values), Grads(&mut self.grads))
    }

    pub fn values(&self) -> Values<'_> {
        Values(&self.values)
    }

    /// Flattened copies of all values / gradients in id order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars());
        let mut off = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Sets one scalar addressed by its flat index; returns the old value.
    pub fn set_flat(&mut self, index: usize, value: f64) -> f64 {
        let mut off = index;
        for t in &mut self.values {
            if off < t.len() {
                let old = t.data()[off];
                t.data_mut()[off] = value;
                return old;
            }
            off -= t.len();
        }
        panic!("flat parameter index {index} out of range");
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Tensor], &mut [Tensor], &mut [Tensor], &mut [Tensor]) {
        (&mut self.values, &mut self.grads, &mut self.m, &mut self.v)
    }
}

#[derive(Clone, Copy)]
pub struct Values<'a>(&'a [Tensor]);

impl<'a> Values<'a> {
    #[inline]
    pub fn get(&self, id: ParamId) -> &'a [f64] {
        self.0[id.0].data()
    }

    #[inline]
    pub fn scalar(&self, id: ParamId) -> f64 {
        self.0[id.0].data()[0]
    }
}

pub struct Grads<'a>(&'a mut [Tensor]);

impl Grads<'_> {
    #[inline]
    pub fn get(&mut self, id: ParamId) -> &mut [f64] {
        self.0[id.0].data_mut()
    }

    /// Several distinct gradient buffers at once. Panics on repeated ids.
    pub fn many<const N: usize>(&mut self, ids: [ParamId; N]) -> [&mut [f64]; N] {
        self.0
            .get_disjoint_mut(ids.map(|id| id.0))
            .expect("distinct parameter ids")
            .map(Tensor::data_mut)
    }

    /// Two distinct gradient buffers at once.
    pub fn pair(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a, b);
        if a.0 < b.0 {
            let (lo, hi) = self.0.split_at_mut(b.0);
            (lo[a.0].data_mut(), hi[0].data_mut())
        } else {
            let (lo, hi) = self.0.split_at_mut(a.0);
            (hi[0].data_mut(), lo[b.0].data_mut())
        }
    }
}
