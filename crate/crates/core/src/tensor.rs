//! Dense row-major `f64` tensors and the raw kernels the rest of the crate
//! is built on.
//!
//! Every operation here is a pure function returning a fresh tensor. Axes are
//! zero-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Spatial padding for 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `k / 2` on each side; output keeps the input extent.
    #[default]
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "axis lengths must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(vec![1], vec![value])
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor::from_parts(vec![n], values)
    }

    /// Builds a matrix from rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, n)| i >= n) {
            return None;
        }
        let offset: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        Some(self.data[offset])
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> Result<Vec<Vec<f64>>> {
        let (_, cols) = self.as_matrix()?;
        Ok(self.data.chunks(cols).map(<[f64]>::to_vec).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub(crate) fn as_matrix(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other, "zip_with")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sums out `axis`; the result drops that axis (a rank-1 input yields
    /// shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (dst, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_parts(shape, out))
    }

    /// Inverse of [`Tensor::sum_axis`] for gradients: repeats `self` along a
    /// reinserted `axis` of length `n`.
    pub(crate) fn broadcast_axis(&self, target: &[usize], axis: usize) -> Tensor {
        let outer: usize = target[..axis].iter().product();
        let n = target[axis];
        let inner: usize = target[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let src = &self.data[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(src);
            }
        }
        Tensor::from_parts(target.to_vec(), out)
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// Interchanges axes `a` and `b`, materializing a copy.
    pub fn swap_axes(&self, a: usize, b: usize) -> Result<Tensor> {
        self.check_axis(a)?;
        self.check_axis(b)?;
        if a == b {
            return Ok(self.clone());
        }
        let mut out_shape = self.shape.clone();
        out_shape.swap(a, b);
        // Strides of the source, read in output-axis order.
        let mut src_strides = self.strides();
        src_strides.swap(a, b);
        let mut out = Vec::with_capacity(self.data.len());
        let rank = out_shape.len();
        let mut index = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[offset]);
            for ax in (0..rank).rev() {
                index[ax] += 1;
                offset += src_strides[ax];
                if index[ax] < out_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * out_shape[ax];
                index[ax] = 0;
            }
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// `(m×k) · (k×n)`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix()?;
        let (k2, n) = other.as_matrix()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (o, arow) in out.iter_mut().zip(self.data.chunks(k)) {
                *o = arow.iter().zip(&other.data).map(|(a, b)| a * b).sum();
            }
            return Ok(Tensor::from_parts(vec![m, 1], out));
        }
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in row.iter_mut().zip(&other.data[p * n..(p + 1) * n]) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.as_matrix()?;
        let (k2, n) = other.as_matrix()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul_tn: {:?}ᵀ x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let brow = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = self.data[p * m + i];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix()?;
        let (n, k2) = other.as_matrix()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul_nt: {:?} x {:?}ᵀ",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        if k == 1 {
            for (row, a) in out.chunks_mut(n).zip(&self.data) {
                for (o, b) in row.iter_mut().zip(&other.data) {
                    *o = a * b;
                }
            }
            return Ok(Tensor::from_parts(vec![m, n], out));
        }
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Multiplies the square matrix `p` into the first axis of `x`:
    /// `out[i, ...] = Σ_j p[i, j] · x[j, ...]`.
    pub fn mode1_matmul(p: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = p.as_matrix()?;
        if rows != cols {
            return Err(Error::shape(format!("mode-1 matrix must be square, got {:?}", p.shape)));
        }
        if x.shape[0] != cols {
            return Err(Error::shape(format!(
                "mode-1 product: {:?} into {:?}",
                p.shape, x.shape
            )));
        }
        let rest = x.len() / cols;
        let flat = Tensor::from_parts(vec![cols, rest], x.data.clone());
        let out = p.matmul(&flat)?;
        Ok(Tensor::from_parts(x.shape.clone(), out.data))
    }

    /// Row-wise softmax of a matrix, stabilized by the row maximum.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (_, cols) = self.as_matrix()?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Argmax per row of a matrix; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (_, cols) = self.as_matrix()?;
        Ok(self
            .data
            .chunks(cols)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(x: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding) -> Result<Self> {
        let [in_ch, height, width] = x.shape[..] else {
            return Err(Error::shape(format!("conv input must be (ch, h, w), got {:?}", x.shape)));
        };
        let [out_ch, k_in, kh, kw] = kernel.shape[..] else {
            return Err(Error::shape(format!(
                "conv kernel must be (out, in, kh, kw), got {:?}",
                kernel.shape
            )));
        };
        if k_in != in_ch {
            return Err(Error::shape(format!(
                "conv channel mismatch: input has {in_ch}, kernel expects {k_in}"
            )));
        }
        if bias.shape != [out_ch] {
            return Err(Error::shape(format!(
                "conv bias must be ({out_ch}), got {:?}",
                bias.shape
            )));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::shape("same padding needs odd kernel sides"));
                }
                (kh / 2, kw / 2)
            }
            Padding::Valid => (0, 0),
        };
        if height + 2 * pad_h < kh || width + 2 * pad_w < kw {
            return Err(Error::shape("conv kernel larger than padded input"));
        }
        Ok(ConvGeometry {
            in_ch,
            out_ch,
            height,
            width,
            kh,
            kw,
            pad_h,
            pad_w,
            out_h: height + 2 * pad_h - kh + 1,
            out_w: width + 2 * pad_w - kw + 1,
        })
    }

    /// Output index range whose tap at offset `d` lands inside the input.
    fn valid(d: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(d);
        let hi = (in_len + pad).saturating_sub(d).min(out_len);
        (lo, hi.max(lo))
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, (usize, usize), (usize, usize))) {
        for di in 0..self.kh {
            let rows = Self::valid(di, self.pad_h, self.height, self.out_h);
            for dj in 0..self.kw {
                let cols = Self::valid(dj, self.pad_w, self.width, self.out_w);
                f(di, dj, rows, cols);
            }
        }
    }
}

pub(crate) fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, g: &ConvGeometry) -> Tensor {
    let plane = g.out_h * g.out_w;
    let mut out = vec![0.0; g.out_ch * plane];
    for o in 0..g.out_ch {
        out[o * plane..(o + 1) * plane].fill(bias.data[o]);
    }
    g.for_each_tap(|di, dj, (y0, y1), (x0, x1)| {
        for o in 0..g.out_ch {
            for c in 0..g.in_ch {
                let w = kernel.data[((o * g.in_ch + c) * g.kh + di) * g.kw + dj];
                if w == 0.0 {
                    continue;
                }
                for y in y0..y1 {
                    let iy = y + di - g.pad_h;
                    let src = &x.data[(c * g.height + iy) * g.width + x0 + dj - g.pad_w..];
                    let dst = &mut out[o * plane + y * g.out_w + x0..o * plane + y * g.out_w + x1];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
    });
    Tensor::from_parts(vec![g.out_ch, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias. The input
/// gradient is skipped when `need_input` is false.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let plane = g.out_h * g.out_w;
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    let mut gk = vec![0.0; kernel.len()];
    let gb: Vec<f64> = grad_out.data.chunks(plane).map(|p| p.iter().sum()).collect();
    g.for_each_tap(|di, dj, (y0, y1), (x0, x1)| {
        for o in 0..g.out_ch {
            for c in 0..g.in_ch {
                let widx = ((o * g.in_ch + c) * g.kh + di) * g.kw + dj;
                let w = kernel.data[widx];
                let mut acc = 0.0;
                for y in y0..y1 {
                    let iy = y + di - g.pad_h;
                    let in_off = (c * g.height + iy) * g.width + x0 + dj - g.pad_w;
                    let go = &grad_out.data[o * plane + y * g.out_w + x0..o * plane + y * g.out_w + x1];
                    let xs = &x.data[in_off..in_off + (x1 - x0)];
                    acc += go.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                    if let Some(gx) = gx.as_mut() {
                        for (d, gv) in gx[in_off..in_off + (x1 - x0)].iter_mut().zip(go) {
                            *d += w * gv;
                        }
                    }
                }
                gk[widx] += acc;
            }
        }
    });
    (
        gx.map(|d| Tensor::from_parts(x.shape.clone(), d)),
        Tensor::from_parts(kernel.shape.clone(), gk),
        Tensor::from_parts(vec![g.out_ch], gb),
    )
}

/// Raw (untracked) 2-D cross-correlation.
pub fn conv2d_raw(x: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let g = ConvGeometry::new(x, kernel, bias, padding)?;
    Ok(conv2d(x, kernel, bias, &g))
}
