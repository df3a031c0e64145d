use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Named parameters of one network with matching gradient buffers.
///
/// Every store carries a process-unique id that tapes use to route
/// gradients back; clones receive a new id.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Clone> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            names: self.names.clone(),
            index: self.index.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Registers a parameter; returns its index. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name `{name}`")));
        }
        let idx = self.values.len();
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.index.insert(name.clone(), idx);
        self.names.push(name);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, idx: usize) -> &Tensor<T> {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.values[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn grad(&self, idx: usize) -> &Tensor<T> {
        &self.grads[idx]
    }

    pub fn grad_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.grads[idx]
    }

    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor<T>, &Tensor<T>)> {
        self.values.iter_mut().zip(self.grads.iter())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::zero()));
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            id: fresh_id(),
            names: self.names.clone(),
            index: self.index.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
        }
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::shape("parameter name lists differ"));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::shape(format!(
                    "parameter shape {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Serializes every parameter as `(u16 name length, UTF-8 name, u8 rank,
    /// u32 LE dims, f32 LE values)`, preceded by a u32 LE entry count.
    /// `prefix` is prepended to every name.
    pub fn write_to(&self, w: &mut impl Write, prefix: &str) -> Result<()> {
        write_entries(w, self.names.iter().zip(&self.values).map(|(n, v)| (format!("{prefix}{n}"), v)))
    }
}

/// Writes named tensors in the parameter serialization format.
pub fn write_entries<'a, T: Scalar + 'a>(
    w: &mut impl Write,
    entries: impl ExactSizeIterator<Item = (String, &'a Tensor<T>)>,
) -> Result<()> {
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::InvalidConfig(format!("parameter name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads entries written by [`write_entries`].
pub fn read_entries(r: &mut impl Read) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let mut name = vec![0u8; u16::from_le_bytes(u16buf) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::CorruptCheckpoint("parameter name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

/// Truncated normal (cut at two standard deviations) with
/// `std = sqrt(2 / fan_in)`.
pub fn he_truncated_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * std);
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn clone_gets_new_id() {
        let s = ParamStore::<f32>::new();
        assert_ne!(s.id(), s.clone().id());
    }

    #[test]
    fn serialization_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f32>::new();
        s.insert("conv0.w", he_truncated_normal(&[8, 1, 6, 6], 36, &mut rng)).unwrap();
        s.insert("conv0.b", Tensor::full(&[8], 0.25)).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf, "disc_A/").unwrap();
        let back = read_entries(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "disc_A/conv0.w");
        assert_eq!(back[0].1.shape(), &[8, 1, 6, 6]);
        for (a, b) in back[0].1.data().iter().zip(s.value(0).data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // u32 count + (u16 + 14 name + u8 + 4 dims*4 + 288*4)
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..6], &14u16.to_le_bytes());
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = he_truncated_normal(&[10_000], 8, &mut rng);
        let std = 0.5;
        assert!(t.data().iter().all(|v| v.abs() <= 2.0 * std + 1e-12));
        let mean = t.data().iter().sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.02);
    }
}
