use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
///
/// A rank-0 tensor (empty shape) holds exactly one value.
#[derive(Clone, PartialEq)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| S::of(x)).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> S) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::dim("item", format!("shape {:?} is not scalar", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn at(&self, index: &[usize]) -> S {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: S) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                assert!(i < e, "index {i} out of bounds for extent {e}");
                acc * e + i
            })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("shapes {:?} and {:?} differ", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Self, alpha: S) -> Result<()> {
        self.same_shape(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents disagree: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![S::zero(); m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data: out,
        })
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::dim(op, format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::dim(op, format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    /// Sub-tensor at position `i` along the leading axis.
    pub fn index0(&self, i: usize) -> Result<Self> {
        let Some((&lead, rest)) = self.shape.split_first() else {
            return Err(Error::dim("index0", "scalar has no leading axis"));
        };
        if i >= lead {
            return Err(Error::dim("index0", format!("index {i} >= extent {lead}")));
        }
        let stride: usize = rest.iter().product();
        let shape = if rest.is_empty() { vec![1] } else { rest.to_vec() };
        Ok(Self {
            shape,
            data: self.data[i * stride..(i + 1) * stride].to_vec(),
        })
    }
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// `out[m x n] += a[m x k] * b[k x n]`
pub(crate) fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
