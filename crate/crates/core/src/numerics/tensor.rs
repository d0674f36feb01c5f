use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// A shape of `[]` denotes a scalar holding exactly one element.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("shape {shape:?} has a zero extent")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for shapes already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::invalid(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().expect("row() on scalar");
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("elementwise", &self.shape, &other.shape));
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product `self[m×k] · other[k×n]`.
    ///
    /// Every output element is accumulated over `k` in ascending order starting
    /// from `0.0`, so results are bit-identical to the textbook triple loop.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        transpose_into(&self.data, &mut out, r, c);
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(format!(
                "{perm:?} is not a permutation of {rank} axes"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.data.len() {
            let src: usize = idx
                .iter()
                .zip(perm)
                .map(|(&i, &p)| i * in_strides[p])
                .sum();
            out.push(self.data[src]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = self.split_axis(axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                softmax_strided(&mut out, o * len * inner + i, len, inner, None);
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = self.split_axis(axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                log_softmax_strided(&mut out, o * len * inner + i, len, inner);
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// `(outer, axis_len, inner)` decomposition used by axis-wise kernels.
    pub(crate) fn split_axis(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (outer, _, inner) = first.split_axis(axis)?;
        let mut total = 0;
        for p in parts {
            let same_rest = p.shape.len() == first.shape.len()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !same_rest {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
            total += p.shape[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor::from_parts(shape, out))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, full, inner) = self.split_axis(axis)?;
        if len == 0 || start + len > full {
            return Err(Error::invalid(format!(
                "slice {start}..{} out of range for axis {axis} of {:?}",
                start + len,
                self.shape
            )));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor::from_parts(shape, out))
    }

    /// Adds `bias` (length `shape[axis]`) broadcast over all other axes.
    pub fn add_bias(&self, bias: &Tensor, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = self.split_axis(axis)?;
        if bias.len() != len {
            return Err(Error::shape("add_bias", &self.shape, &bias.shape));
        }
        let mut out = self.data.clone();
        for o in 0..outer {
            for (a, &b) in bias.data.iter().enumerate() {
                let base = (o * len + a) * inner;
                for v in &mut out[base..base + inner] {
                    *v += b;
                }
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// One-dimensional convolution along the last (time) axis.
    ///
    /// `x` is `[C×N×T]` and `kernel` is `[C_out×C×1×w]`; each joint `N` is
    /// convolved independently. With `same_padding` the time axis is
    /// zero-padded by `w/2` on both sides (requires odd `w`) so the output
    /// keeps extent `T`; otherwise the output has extent `T − w + 1`.
    pub fn conv_temporal(
        &self,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        same_padding: bool,
    ) -> Result<Tensor> {
        let geom = ConvGeometry::new(self.shape(), kernel.shape(), same_padding)?;
        if let Some(b) = bias {
            if b.len() != geom.c_out {
                return Err(Error::shape("conv_temporal bias", kernel.shape(), b.shape()));
            }
        }
        let cols = geom.im2col(&self.data);
        let mut out = vec![0.0; geom.c_out * geom.n * geom.t_out];
        gemm(
            &kernel.data,
            &cols,
            &mut out,
            geom.c_out,
            geom.c_in * geom.width,
            geom.n * geom.t_out,
        );
        let mut y = Tensor::from_parts(vec![geom.c_out, geom.n, geom.t_out], out);
        if let Some(b) = bias {
            y = y.add_bias(b, 0)?;
        }
        Ok(y)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn transpose_into(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, row-major.
///
/// Blocked over `k` and `n` for cache reuse; within every output element the
/// products are still added in ascending `k` order.
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const KB: usize = 128;
    const NB: usize = 256;
    if m == 0 || n == 0 {
        return;
    }
    for j0 in (0..n).step_by(NB) {
        let j1 = (j0 + NB).min(n);
        let w = j1 - j0;
        for k0 in (0..k).step_by(KB) {
            let k1 = (k0 + KB).min(k);
            let mut i = 0;
            while i + 4 <= m {
                let (c0, rest) = c[i * n..].split_at_mut(n);
                let (c1, rest) = rest.split_at_mut(n);
                let (c2, rest) = rest.split_at_mut(n);
                let c3 = &mut rest[..n];
                let (c0, c1, c2, c3) = (
                    &mut c0[j0..j1],
                    &mut c1[j0..j1],
                    &mut c2[j0..j1],
                    &mut c3[j0..j1],
                );
                for kk in k0..k1 {
                    let a0 = a[i * k + kk];
                    let a1 = a[(i + 1) * k + kk];
                    let a2 = a[(i + 2) * k + kk];
                    let a3 = a[(i + 3) * k + kk];
                    let brow = &b[kk * n + j0..kk * n + j1];
                    for j in 0..w {
                        let bv = brow[j];
                        c0[j] += a0 * bv;
                        c1[j] += a1 * bv;
                        c2[j] += a2 * bv;
                        c3[j] += a3 * bv;
                    }
                }
                i += 4;
            }
            while i < m {
                let crow = &mut c[i * n + j0..i * n + j1];
                for kk in k0..k1 {
                    let av = a[i * k + kk];
                    let brow = &b[kk * n + j0..kk * n + j1];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
                i += 1;
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for j in 0..n {
        let brow = &b[j * k..(j + 1) * k];
        for i in 0..m {
            c[i * n + j] += dot(&a[i * k..(i + 1) * k], brow);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for p in 0..k {
        let crow = &mut c[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[i * k + p];
            for (cv, &bv) in crow.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// Softmax over `len` entries starting at `start` spaced by `stride`.
/// Entries with `mask[j] == true` get weight exactly zero.
pub(crate) fn softmax_strided(
    buf: &mut [f64],
    start: usize,
    len: usize,
    stride: usize,
    mask: Option<&[bool]>,
) {
    let allowed = |j: usize| mask.is_none_or(|m| !m[j]);
    let mut max = f64::NEG_INFINITY;
    for j in 0..len {
        if allowed(j) {
            max = max.max(buf[start + j * stride]);
        }
    }
    if max == f64::NEG_INFINITY {
        // fully masked row: define the output as all zeros
        for j in 0..len {
            buf[start + j * stride] = 0.0;
        }
        return;
    }
    let mut total = 0.0;
    for j in 0..len {
        let p = start + j * stride;
        buf[p] = if allowed(j) { (buf[p] - max).exp() } else { 0.0 };
        total += buf[p];
    }
    for j in 0..len {
        buf[start + j * stride] /= total;
    }
}

pub(crate) fn log_softmax_strided(buf: &mut [f64], start: usize, len: usize, stride: usize) {
    let mut max = f64::NEG_INFINITY;
    for j in 0..len {
        max = max.max(buf[start + j * stride]);
    }
    let total: f64 = (0..len).map(|j| (buf[start + j * stride] - max).exp()).sum();
    let lse = max + total.ln();
    for j in 0..len {
        buf[start + j * stride] -= lse;
    }
}

/// Shape bookkeeping shared by the temporal convolution forward and backward.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub n: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub width: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], kernel: &[usize], same_padding: bool) -> Result<Self> {
        let (c_in, n, t_in) = match *x {
            [c, n, t] => (c, n, t),
            _ => return Err(Error::invalid(format!("conv input must be [C×N×T], got {x:?}"))),
        };
        let (c_out, kc, width) = match *kernel {
            [o, c, 1, w] => (o, c, w),
            _ => {
                return Err(Error::invalid(format!(
                    "conv kernel must be [C_out×C×1×w], got {kernel:?}"
                )))
            }
        };
        if kc != c_in {
            return Err(Error::shape("conv_temporal", x, kernel));
        }
        if same_padding && width % 2 == 0 {
            return Err(Error::invalid(format!(
                "same padding needs an odd kernel width, got {width}"
            )));
        }
        let pad = if same_padding { width / 2 } else { 0 };
        if t_in + 2 * pad < width {
            return Err(Error::invalid(format!(
                "time extent {t_in} shorter than kernel width {width}"
            )));
        }
        Ok(ConvGeometry {
            c_in,
            c_out,
            n,
            t_in,
            t_out: t_in + 2 * pad - width + 1,
            width,
            pad,
        })
    }

    /// Unfolds `x[C×N×T]` into `[(C·w) × (N·T_out)]`.
    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let cols_w = self.n * self.t_out;
        let mut cols = vec![0.0; self.c_in * self.width * cols_w];
        for c in 0..self.c_in {
            for k in 0..self.width {
                let row = &mut cols[(c * self.width + k) * cols_w..][..cols_w];
                for j in 0..self.n {
                    let src = &x[(c * self.n + j) * self.t_in..][..self.t_in];
                    let dst = &mut row[j * self.t_out..][..self.t_out];
                    for (t, d) in dst.iter_mut().enumerate() {
                        let s = t + k;
                        if s >= self.pad && s - self.pad < self.t_in {
                            *d = src[s - self.pad];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters column gradients back.
    pub fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let cols_w = self.n * self.t_out;
        let mut x = vec![0.0; self.c_in * self.n * self.t_in];
        for c in 0..self.c_in {
            for k in 0..self.width {
                let row = &cols[(c * self.width + k) * cols_w..][..cols_w];
                for j in 0..self.n {
                    let dst = &mut x[(c * self.n + j) * self.t_in..][..self.t_in];
                    let src = &row[j * self.t_out..][..self.t_out];
                    for (t, &g) in src.iter().enumerate() {
                        let s = t + k;
                        if s >= self.pad && s - self.pad < self.t_in {
                            dst[s - self.pad] += g;
                        }
                    }
                }
            }
        }
        x
    }
}
