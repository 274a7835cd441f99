//! Flat parameter vector with named matrix views and a matching gradient
//! buffer.

use std::io::{Read, Write};

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{input_err, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"HLPP";

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamEntry {
    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

/// Every tensor is a row-major `rows × cols` slice of one contiguous vector;
/// biases are `1 × cols`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

/// Read-only view over parameter values.
#[derive(Clone, Copy)]
pub struct Params<'a> {
    entries: &'a [ParamEntry],
    data: &'a [f64],
}

impl<'a> Params<'a> {
    pub fn get(&self, id: ParamId) -> ArrayView2<'a, f64> {
        let e = &self.entries[id.0];
        ArrayView2::from_shape((e.rows, e.cols), &self.data[e.range()]).expect("layout")
    }

    /// Row-major values of one tensor.
    pub fn slice(&self, id: ParamId) -> &'a [f64] {
        &self.data[self.entries[id.0].range()]
    }
}

/// Mutable view over the gradient buffer.
pub struct Grads<'a> {
    entries: &'a [ParamEntry],
    data: &'a mut [f64],
}

impl Grads<'_> {
    pub fn get_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let e = &self.entries[id.0];
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut self.data[e.range()]).expect("layout")
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialized `rows × cols` tensor.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        let offset = self.values.len();
        self.entries.push(ParamEntry {
            name: name.into(),
            offset,
            rows,
            cols,
        });
        self.values.resize(offset + rows * cols, 0.0);
        self.grad.resize(offset + rows * cols, 0.0);
        ParamId(self.entries.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn params(&self) -> Params<'_> {
        Params {
            entries: &self.entries,
            data: &self.values,
        }
    }

    pub fn view(&self, id: ParamId) -> ArrayView2<'_, f64> {
        self.params().get(id)
    }

    pub fn view_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let e = &self.entries[id.0];
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut self.values[e.range()]).expect("layout")
    }

    pub fn grad_view(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let e = &self.entries[id.0];
        ArrayView2::from_shape((e.rows, e.cols), &self.grad[e.range()]).expect("layout")
    }

    /// Values for reading alongside the gradient buffer for writing.
    pub fn split_mut(&mut self) -> (Params<'_>, Grads<'_>) {
        (
            Params {
                entries: &self.entries,
                data: &self.values,
            },
            Grads {
                entries: &self.entries,
                data: &mut self.grad,
            },
        )
    }

    /// Replaces all values; the layout must match.
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(input_err!(
                "parameter vector has {} values, store expects {}",
                values.len(),
                self.values.len()
            ));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// FNV-1a hash over the value bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Checkpoint layout: magic `HLPP`, entry count (u64), then per entry a
    /// u32 name length, UTF-8 name, rows and cols (u64); finally the value
    /// count (u64) and the f64 values. All integers little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.rows as u64).to_le_bytes())?;
            w.write_all(&(e.cols as u64).to_le_bytes())?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        fn u64_le<R: Read>(r: &mut R) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(input_err!("not a parameter checkpoint (bad magic)"));
        }
        let count = u64_le(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let mut len = [0u8; 4];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| input_err!("checkpoint name is not UTF-8"))?;
            let rows = u64_le(&mut r)? as usize;
            let cols = u64_le(&mut r)? as usize;
            store.add(name, rows, cols);
        }
        let n = u64_le(&mut r)? as usize;
        if n != store.len() {
            return Err(input_err!("checkpoint declares {n} values, layout needs {}", store.len()));
        }
        for v in store.values.iter_mut() {
            *v = f64::from_bits(u64_le(&mut r)?);
        }
        Ok(store)
    }
}
