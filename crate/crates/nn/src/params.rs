use rand::Rng;

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Index of an entry inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One named array. Trainable entries carry a gradient buffer and optimizer
/// moments; buffers (batch-norm running statistics) carry neither.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub trainable: bool,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Flat, named collection of arrays for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    /// Number of optimizer steps applied so far.
    pub step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), step: 0 }
    }

    fn push(&mut self, name: &str, shape: &[usize], value: Vec<T>, trainable: bool) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter name {name}");
        let n: usize = shape.iter().product();
        assert_eq!(n, value.len());
        let zeros = || if trainable { vec![T::zero(); n] } else { Vec::new() };
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            grad: zeros(),
            first_moment: zeros(),
            second_moment: zeros(),
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<T>) -> ParamId {
        self.push(name, shape, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], value: Vec<T>) -> ParamId {
        self.push(name, shape, value, false)
    }

    /// Trainable entry drawn from `U(-bound, bound)`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound))).collect();
        self.add(name, shape, value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].grad
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.iter().enumerate().filter(|(_, e)| e.trainable).map(|(i, _)| ParamId(i))
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn grad_norm(&self) -> T {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|&g| g * g)
            .sum::<T>()
            .sqrt()
    }

    /// True when every gradient entry is exactly zero.
    pub fn grads_all_zero(&self) -> bool {
        self.entries.iter().flat_map(|e| e.grad.iter()).all(|g| *g == T::zero())
    }

    /// Overwrite values (not moments) from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        self.check_layout(other)?;
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }

    /// `self ← tau·other + (1−tau)·self` over trainable entries and buffers.
    pub fn polyak_from(&mut self, other: &ParamStore<T>, tau: T) -> Result<()> {
        self.check_layout(other)?;
        let keep = T::one() - tau;
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            for (d, &s) in dst.value.iter_mut().zip(&src.value) {
                *d = tau * s + keep * *d;
            }
        }
        Ok(())
    }

    fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len()
            || self.entries.iter().zip(&other.entries).any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    /// Convert every array to another scalar type, keeping names and moments.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN))).collect();
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    value: conv(&e.value),
                    grad: conv(&e.grad),
                    first_moment: conv(&e.first_moment),
                    second_moment: conv(&e.second_moment),
                    trainable: e.trainable,
                })
                .collect(),
            step: self.step,
        }
    }

    /// Order-sensitive FNV-1a digest over names and value bits; used to assert
    /// that frozen networks are not mutated.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for e in &self.entries {
            e.name.bytes().for_each(&mut eat);
            for v in &e.value {
                v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }
}
