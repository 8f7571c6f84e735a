use rand::Rng;

use crate::error::{Error, Result};

/// Dense `(C, H, W)` array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, 0.0)
    }

    pub fn filled(c: usize, h: usize, w: usize, v: f64) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![v; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Shape(format!(
                "{} values for shape ({c}, {h}, {w})",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tensor contains non-finite values".into()));
        }
        Ok(Self { c, h, w, data })
    }

    /// Uniform values in `[-1, 1)`.
    pub fn random(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let data = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, o: &Tensor) -> bool {
        self.shape() == o.shape()
    }

    pub(crate) fn expect_shape(&self, o: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(o) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.shape(), o.shape())))
        }
    }

    /// Channel-wise concatenation; all parts must share `H × W`.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
        let (h, w) = (first.h, first.w);
        if let Some(p) = parts.iter().find(|p| p.h != h || p.w != w) {
            return Err(Error::Shape(format!(
                "concat spatial size {:?} vs ({h}, {w})",
                (p.h, p.w)
            )));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            c: parts.iter().map(|p| p.c).sum(),
            h,
            w,
            data,
        })
    }

    /// Channels `range` as a new tensor.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> Tensor {
        let n = self.plane_len();
        Tensor {
            c: range.len(),
            h: self.h,
            w: self.w,
            data: self.data[range.start * n..range.end * n].to_vec(),
        }
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        debug_assert!(self.same_shape(o));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn hadamard(&self, o: &Tensor) -> Tensor {
        debug_assert!(self.same_shape(o));
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn dot(&self, o: &Tensor) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| a * b).sum()
    }
}

/// Flattening of parameters and activations into one coordinate vector, used
/// by gradient checks and by the binary parameter blob.
pub trait Flat {
    fn flat_len(&self) -> usize;
    fn write_flat(&self, out: &mut Vec<f64>);
    /// Overwrites `self` from the front of `src` and advances it.
    fn read_flat(&mut self, src: &mut &[f64]);

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        self.write_flat(&mut v);
        v
    }
}

pub(crate) fn take<'a>(src: &mut &'a [f64], n: usize) -> &'a [f64] {
    let (head, tail) = src.split_at(n);
    *src = tail;
    head
}

impl Flat for Tensor {
    fn flat_len(&self) -> usize {
        self.data.len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.data);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        let n = self.data.len();
        self.data.copy_from_slice(take(src, n));
    }
}

impl<T: Flat> Flat for Vec<T> {
    fn flat_len(&self) -> usize {
        self.iter().map(Flat::flat_len).sum()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        for t in self {
            t.write_flat(out);
        }
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        for t in self {
            t.read_flat(src);
        }
    }
}

impl<A: Flat, B: Flat> Flat for (A, B) {
    fn flat_len(&self) -> usize {
        self.0.flat_len() + self.1.flat_len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.0.write_flat(out);
        self.1.write_flat(out);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        self.0.read_flat(src);
        self.1.read_flat(src);
    }
}

impl Flat for Vec<f64> {
    fn flat_len(&self) -> usize {
        self.len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        let n = self.len();
        self.copy_from_slice(take(src, n));
    }
}
