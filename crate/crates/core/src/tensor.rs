//! Dense matrix / 4-way tensor primitives: factor composition, the
//! matrix⇄kernel reshape, cross-correlation convolution and entrywise norms.

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return shape_err(format!("matrix dims must be positive, got {rows}x{cols}"));
        }
        if data.len() != rows * cols {
            return shape_err(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Builds a matrix from nested rows of `f64` literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::from_f64(v))).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![T::zero(); self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self { rows: self.cols, cols: self.rows, data: out }
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * alpha).collect() }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// 4-way row-major tensor; index `(i0,i1,i2,i3)` lives at
/// `((i0·n1 + i1)·n2 + i2)·n3 + i3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return shape_err(format!("tensor dims must be positive, got {dims:?}"));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return shape_err(format!("tensor {dims:?} needs {len} values, got {}", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be positive");
        Self { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn from_f64(dims: [usize; 4], values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: [usize; 4]) -> usize {
        let [_, n1, n2, n3] = self.dims;
        ((i[0] * n1 + i[1]) * n2 + i[2]) * n3 + i[3]
    }

    #[inline]
    pub fn get(&self, i: [usize; 4]) -> T {
        self.data[self.offset(i)]
    }

    #[inline]
    pub fn set(&mut self, i: [usize; 4], v: T) {
        let o = self.offset(i);
        self.data[o] = v;
    }

    /// Contiguous slice for the leading index (one image, or one output channel of a kernel).
    pub fn item(&self, i0: usize) -> &[T] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[i0 * stride..(i0 + 1) * stride]
    }

    pub fn item_mut(&mut self, i0: usize) -> &mut [T] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[i0 * stride..(i0 + 1) * stride]
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scaled(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return shape_err(format!("tensor dims differ: {:?} vs {:?}", self.dims, other.dims));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { dims: self.dims, data })
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Stride, symmetric zero padding and spatial window of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    /// `(D2, D1)`: window height and width.
    pub window: (usize, usize),
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, window: (usize, usize)) -> Result<Self> {
        if stride == 0 || window.0 == 0 || window.1 == 0 {
            return Err(Error::Argument(format!(
                "stride and window must be positive (stride {stride}, window {window:?})"
            )));
        }
        Ok(Self { stride, padding, window })
    }

    /// Stride 1, "same" padding for odd windows.
    pub fn same(window: (usize, usize)) -> Self {
        Self { stride: 1, padding: window.0 / 2, window }
    }

    /// Output spatial size `(H', W')` for an `H×W` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |n: usize, d: usize| -> Option<usize> {
            let padded = n + 2 * self.padding;
            (padded >= d).then(|| (padded - d) / self.stride + 1)
        };
        match (out(h, self.window.0), out(w, self.window.1)) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => shape_err(format!("geometry {self:?} yields empty output for {h}x{w} input")),
        }
    }
}

/// `M = A·B`, the factor product.
pub fn compose_factors<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return shape_err(format!(
            "cannot compose {}x{} with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = vec![T::zero(); a.rows * b.cols];
    T::gemm(a.rows, a.cols, b.cols, T::one(), &a.data, false, &b.data, false, T::zero(), &mut out);
    Ok(Matrix { rows: a.rows, cols: b.cols, data: out })
}

/// Reinterprets a `TS × D2D1` matrix as a `T×S×D2×D1` kernel:
/// row `t·S + s`, column `d2·D1 + d1` (0-based) maps to `K[t,s,d2,d1]`.
pub fn reshape_to_kernel<T: Real>(
    m: &Matrix<T>,
    t: usize,
    s: usize,
    d2: usize,
    d1: usize,
) -> Result<Tensor4<T>> {
    if m.rows != t * s || m.cols != d2 * d1 {
        return shape_err(format!(
            "{}x{} matrix cannot hold a {t}x{s}x{d2}x{d1} kernel",
            m.rows, m.cols
        ));
    }
    // Row-major layouts coincide, so the map is a plain copy.
    Tensor4::new([t, s, d2, d1], m.data.clone())
}

/// Inverse of [`reshape_to_kernel`].
pub fn flatten_from_kernel<T: Real>(k: &Tensor4<T>) -> Matrix<T> {
    let [t, s, d2, d1] = k.dims;
    Matrix { rows: t * s, cols: d2 * d1, data: k.data.clone() }
}

/// Unfolds one image (`S×H×W`) into an `(S·D2·D1) × (H'·W')` column matrix.
pub(crate) fn im2col<T: Real>(
    image: &[T],
    (s, h, w): (usize, usize, usize),
    geom: &ConvGeometry,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let (d2, d1) = geom.window;
    let pad = geom.padding as isize;
    let stride = geom.stride as isize;
    let plane = ho * wo;
    debug_assert_eq!(cols.len(), s * d2 * d1 * plane);
    for ch in 0..s {
        let src = &image[ch * h * w..(ch + 1) * h * w];
        for ky in 0..d2 {
            for kx in 0..d1 {
                let row = (ch * d2 + ky) * d1 + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize * stride + ky as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = ox as isize * stride + kx as isize - pad;
                        *out = if ix < 0 || ix >= w as isize { T::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into an image, accumulating.
pub(crate) fn col2im<T: Real>(
    cols: &[T],
    (s, h, w): (usize, usize, usize),
    geom: &ConvGeometry,
    (ho, wo): (usize, usize),
    image: &mut [T],
) {
    let (d2, d1) = geom.window;
    let pad = geom.padding as isize;
    let stride = geom.stride as isize;
    let plane = ho * wo;
    for ch in 0..s {
        let dst = &mut image[ch * h * w..(ch + 1) * h * w];
        for ky in 0..d2 {
            for kx in 0..d1 {
                let row = (ch * d2 + ky) * d1 + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize * stride + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = ox as isize * stride + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Column buffer for one input: the unfolded image plus the shapes needed
/// to reuse it across several kernels and the backward pass.
#[derive(Debug, Clone)]
pub struct Unfolded<T> {
    pub(crate) cols: Vec<T>,
    pub(crate) in_shape: (usize, usize, usize),
    pub(crate) out_hw: (usize, usize),
    pub(crate) geom: ConvGeometry,
}

impl<T: Real> Unfolded<T> {
    /// Unfolds a single-image slice `S×H×W`.
    pub fn new(image: &[T], in_shape: (usize, usize, usize), geom: &ConvGeometry) -> Result<Self> {
        let (s, h, w) = in_shape;
        if image.len() != s * h * w {
            return shape_err("image slice does not match its shape");
        }
        let out_hw = geom.output_size(h, w)?;
        let rows = s * geom.window.0 * geom.window.1;
        let mut cols = vec![T::zero(); rows * out_hw.0 * out_hw.1];
        im2col(image, in_shape, geom, out_hw, &mut cols);
        Ok(Self { cols, in_shape, out_hw, geom: *geom })
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.out_hw
    }

    fn patch_len(&self) -> usize {
        self.in_shape.0 * self.geom.window.0 * self.geom.window.1
    }

    /// `out (T×H'W') = beta·out + K·cols`, with the kernel's raw data as a `T × S·D2·D1` matrix.
    pub fn apply_kernel(&self, kernel: &[T], t: usize, beta: T, out: &mut [T]) {
        let plane = self.out_hw.0 * self.out_hw.1;
        T::gemm(t, self.patch_len(), plane, T::one(), kernel, false, &self.cols, false, beta, out);
    }

    /// Accumulates `dK += dY·colsᵀ` for this image.
    pub fn accumulate_kernel_grad(&self, dy: &[T], t: usize, dk: &mut [T]) {
        let plane = self.out_hw.0 * self.out_hw.1;
        T::gemm(t, plane, self.patch_len(), T::one(), dy, false, &self.cols, true, T::one(), dk);
    }

    /// Gradient w.r.t. the input image: `col2im(Kᵀ·dY)`.
    pub fn input_grad(&self, kernel: &[T], t: usize, dy: &[T]) -> Vec<T> {
        let plane = self.out_hw.0 * self.out_hw.1;
        let rows = self.patch_len();
        let mut dcols = vec![T::zero(); rows * plane];
        T::gemm(rows, t, plane, T::one(), kernel, true, dy, false, T::zero(), &mut dcols);
        let (s, h, w) = self.in_shape;
        let mut dx = vec![T::zero(); s * h * w];
        col2im(&dcols, self.in_shape, &self.geom, self.out_hw, &mut dx);
        dx
    }
}

fn check_conv<T: Real>(k: &Tensor4<T>, x: &Tensor4<T>, geom: &ConvGeometry) -> Result<(usize, usize)> {
    let [_, ks, kd2, kd1] = k.dims;
    let [_, xs, h, w] = x.dims;
    if ks != xs {
        return shape_err(format!("kernel expects {ks} input channels, input has {xs}"));
    }
    if (kd2, kd1) != geom.window {
        return shape_err(format!("kernel window {kd2}x{kd1} does not match geometry {:?}", geom.window));
    }
    geom.output_size(h, w)
}

/// Cross-correlation of `X (N×S×H×W)` with `K (T×S×D2×D1)` → `N×T×H'×W'`.
/// Out-of-range input reads as zero.
pub fn conv2d<T: Real>(k: &Tensor4<T>, x: &Tensor4<T>, geom: &ConvGeometry) -> Result<Tensor4<T>> {
    let (ho, wo) = check_conv(k, x, geom)?;
    let [n, s, h, w] = x.dims;
    let t = k.dims[0];
    let mut out = Tensor4::zeros([n, t, ho, wo]);
    for i in 0..n {
        let unfolded = Unfolded::new(x.item(i), (s, h, w), geom)?;
        unfolded.apply_kernel(&k.data, t, T::zero(), out.item_mut(i));
    }
    Ok(out)
}

/// Gradient of `sum(dY ⊙ conv2d(K, X))` with respect to `K`.
pub fn conv2d_kernel_grad<T: Real>(
    dy: &Tensor4<T>,
    x: &Tensor4<T>,
    kernel_dims: [usize; 4],
    geom: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let probe = Tensor4::<T>::zeros(kernel_dims);
    let (ho, wo) = check_conv(&probe, x, geom)?;
    let [n, s, h, w] = x.dims;
    let t = kernel_dims[0];
    if dy.dims != [n, t, ho, wo] {
        return shape_err(format!("upstream {:?} does not match output {:?}", dy.dims, [n, t, ho, wo]));
    }
    let mut dk = Tensor4::zeros(kernel_dims);
    for i in 0..n {
        let unfolded = Unfolded::new(x.item(i), (s, h, w), geom)?;
        unfolded.accumulate_kernel_grad(dy.item(i), t, &mut dk.data);
    }
    Ok(dk)
}

/// Gradient of `sum(dY ⊙ conv2d(K, X))` with respect to `X` (transposed convolution).
pub fn conv2d_input_grad<T: Real>(
    dy: &Tensor4<T>,
    k: &Tensor4<T>,
    input_dims: [usize; 4],
    geom: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let x_probe = Tensor4::<T>::zeros(input_dims);
    let (ho, wo) = check_conv(k, &x_probe, geom)?;
    let [n, s, h, w] = input_dims;
    let t = k.dims[0];
    if dy.dims != [n, t, ho, wo] {
        return shape_err(format!("upstream {:?} does not match output {:?}", dy.dims, [n, t, ho, wo]));
    }
    let plane = ho * wo;
    let rows = s * geom.window.0 * geom.window.1;
    let mut dx = Tensor4::zeros(input_dims);
    let mut dcols = vec![T::zero(); rows * plane];
    for i in 0..n {
        T::gemm(rows, t, plane, T::one(), &k.data, true, dy.item(i), false, T::zero(), &mut dcols);
        col2im(&dcols, (s, h, w), geom, (ho, wo), dx.item_mut(i));
    }
    Ok(dx)
}

/// Entrywise norm order accepted by [`p_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PNorm {
    L1,
    L2,
}

impl PNorm {
    pub fn order(self) -> u32 {
        match self {
            PNorm::L1 => 1,
            PNorm::L2 => 2,
        }
    }
}

impl TryFrom<u32> for PNorm {
    type Error = Error;

    fn try_from(p: u32) -> Result<Self> {
        match p {
            1 => Ok(PNorm::L1),
            2 => Ok(PNorm::L2),
            other => Err(Error::Argument(format!("unsupported norm order p={other}; expected 1 or 2"))),
        }
    }
}

pub fn slice_norm<T: Real>(values: &[T], p: PNorm) -> T {
    match p {
        PNorm::L1 => values.iter().map(|v| v.abs()).sum(),
        PNorm::L2 => values.iter().map(|&v| v * v).sum::<T>().sqrt(),
    }
}

/// Entrywise p-norm over all elements (Frobenius for p = 2).
pub fn p_norm<T: Real>(t: &Tensor4<T>, p: u32) -> Result<T> {
    let p = PNorm::try_from(p)?;
    Ok(slice_norm(&t.data, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4<f64> {
        let n = dims.iter().product();
        Tensor4::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    // Direct nested-loop evaluation of the convolution definition, 1-based
    // window offsets mapped to 0-based.
    fn naive_conv(k: &Tensor4<f64>, x: &Tensor4<f64>, stride: usize, pad: usize) -> Vec<f64> {
        let [t, s, d2, d1] = k.dims();
        let [n, _, h, w] = x.dims();
        let ho = (h + 2 * pad - d2) / stride + 1;
        let wo = (w + 2 * pad - d1) / stride + 1;
        let mut out = vec![0.0; n * t * ho * wo];
        for ni in 0..n {
            for ti in 0..t {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for si in 0..s {
                            for a in 0..d2 {
                                for b in 0..d1 {
                                    let y = (i * stride + a) as isize - pad as isize;
                                    let xx = (j * stride + b) as isize - pad as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                        acc += k.get([ti, si, a, b]) * x.get([ni, si, y as usize, xx as usize]);
                                    }
                                }
                            }
                        }
                        out[((ni * t + ti) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn compose_hand_example() {
        let a = Matrix::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]).unwrap();
        let b = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let m = compose_factors(&a, &b).unwrap();
        assert_eq!(m, Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[4.0, 6.0]]).unwrap());
    }

    #[test]
    fn compose_zero_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::new(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let m = compose_factors(&a, &Matrix::<f64>::zeros(3, 4)).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compose_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Matrix<f32> = Matrix::new(6, 3, (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let b: Matrix<f32> = Matrix::new(3, 4, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let m = compose_factors(&a, &b).unwrap();
        for p in 0..6 {
            for q in 0..4 {
                let mut acc = 0.0f64;
                for c in 0..3 {
                    acc += a.get(p, c) as f64 * b.get(c, q) as f64;
                }
                let got = m.get(p, q) as f64;
                assert!((got - acc).abs() <= 1e-6 * acc.abs().max(1.0), "{got} vs {acc}");
            }
        }
    }

    #[test]
    fn compose_rejects_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(compose_factors(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn reshape_index_examples() {
        // T=2,S=1,D2=2,D1=1: K[2,1,1,1] == M[2,1] (1-based).
        let m = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let k = reshape_to_kernel(&m, 2, 1, 2, 1).unwrap();
        assert_eq!(k.get([1, 0, 0, 0]), m.get(1, 0));
        let one = Matrix::<f64>::from_rows(&[&[7.0]]).unwrap();
        assert_eq!(reshape_to_kernel(&one, 1, 1, 1, 1).unwrap().get([0, 0, 0, 0]), 7.0);
        assert!(matches!(reshape_to_kernel(&m, 3, 1, 2, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn reshape_follows_index_formula() {
        let (t, s, d2, d1) = (3, 2, 2, 3);
        let m = Matrix::<f64>::new(t * s, d2 * d1, (0..t * s * d2 * d1).map(|v| v as f64).collect()).unwrap();
        let k = reshape_to_kernel(&m, t, s, d2, d1).unwrap();
        for ti in 1..=t {
            for si in 1..=s {
                for a in 1..=d2 {
                    for b in 1..=d1 {
                        let expect = m.get((ti - 1) * s + si - 1, (a - 1) * d1 + b - 1);
                        assert_eq!(k.get([ti - 1, si - 1, a - 1, b - 1]), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn flatten_examples() {
        let k = Tensor4::<f64>::from_f64([1, 1, 1, 1], &[5.0]).unwrap();
        assert_eq!(flatten_from_kernel(&k).data(), &[5.0]);
        // Constant per (t,s) → constant rows.
        let mut k = Tensor4::<f64>::zeros([2, 3, 3, 3]);
        for t in 0..2 {
            for s in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        k.set([t, s, a, b], (t * 3 + s) as f64);
                    }
                }
            }
        }
        let m = flatten_from_kernel(&k);
        for r in 0..6 {
            assert!((0..9).all(|c| m.get(r, c) == r as f64));
        }
    }

    #[test]
    fn conv_small_examples() {
        let k = Tensor4::<f64>::from_f64([1, 1, 1, 1], &[2.0]).unwrap();
        let x = Tensor4::<f64>::from_f64([1, 1, 1, 1], &[3.0]).unwrap();
        let g = ConvGeometry::new(1, 0, (1, 1)).unwrap();
        assert_eq!(conv2d(&k, &x, &g).unwrap().data(), &[6.0]);

        let k = Tensor4::<f64>::from_f64([1, 1, 3, 3], &[1.0; 9]).unwrap();
        let x = Tensor4::<f64>::from_f64([1, 1, 3, 3], &[1.0; 9]).unwrap();
        let g = ConvGeometry::new(1, 0, (3, 3)).unwrap();
        let y = conv2d(&k, &x, &g).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_matches_naive_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_tensor(&mut rng, [2, 3, 3, 3]);
        let x = random_tensor(&mut rng, [1, 3, 5, 5]);
        let g = ConvGeometry::new(1, 1, (3, 3)).unwrap();
        let y = conv2d(&k, &x, &g).unwrap();
        let oracle = naive_conv(&k, &x, 1, 1);
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn conv_errors() {
        let k = Tensor4::<f64>::zeros([1, 2, 3, 3]);
        let x = Tensor4::<f64>::zeros([1, 3, 5, 5]);
        let g = ConvGeometry::new(1, 0, (3, 3)).unwrap();
        assert!(matches!(conv2d(&k, &x, &g), Err(Error::Shape(_))));
        let k = Tensor4::<f64>::zeros([1, 3, 3, 3]);
        let x = Tensor4::<f64>::zeros([1, 3, 2, 2]);
        assert!(matches!(conv2d(&k, &x, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn norm_examples() {
        let z = Tensor4::<f64>::zeros([1, 1, 2, 2]);
        assert_eq!(p_norm(&z, 1).unwrap(), 0.0);
        assert_eq!(p_norm(&z, 2).unwrap(), 0.0);
        let t = Tensor4::<f64>::from_f64([1, 1, 1, 2], &[3.0, -4.0]).unwrap();
        assert_eq!(p_norm(&t, 2).unwrap(), 5.0);
        assert_eq!(p_norm(&t, 1).unwrap(), 7.0);
        assert!(matches!(p_norm(&t, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn conv_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = random_tensor(&mut rng, [2, 2, 3, 3]);
        let x = random_tensor(&mut rng, [2, 2, 5, 4]);
        let g = ConvGeometry::new(2, 1, (3, 3)).unwrap();
        let y = conv2d(&k, &x, &g).unwrap();
        let dy = random_tensor(&mut rng, y.dims());
        let f = |k: &Tensor4<f64>, x: &Tensor4<f64>| -> f64 {
            conv2d(k, x, &g).unwrap().data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let dk = conv2d_kernel_grad(&dy, &x, k.dims(), &g).unwrap();
        let dx = conv2d_input_grad(&dy, &k, x.dims(), &g).unwrap();
        let eps = 1e-6;
        for i in 0..k.len() {
            let (mut kp, mut km) = (k.clone(), k.clone());
            kp.data_mut()[i] += eps;
            km.data_mut()[i] -= eps;
            let num = (f(&kp, &x) - f(&km, &x)) / (2.0 * eps);
            assert!((num - dk.data()[i]).abs() < 1e-7);
        }
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let num = (f(&k, &xp) - f(&k, &xm)) / (2.0 * eps);
            assert!((num - dx.data()[i]).abs() < 1e-7);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn tensor_strategy(dims: [usize; 4]) -> impl Strategy<Value = Tensor4<f64>> {
            let n: usize = dims.iter().product();
            proptest::collection::vec(-1.0f64..1.0, n).prop_map(move |v| Tensor4::new(dims, v).unwrap())
        }

        fn conv_case() -> impl Strategy<Value = (Tensor4<f64>, Tensor4<f64>, Tensor4<f64>, ConvGeometry)> {
            (1usize..=4, 1usize..=4, 1usize..=4, 1usize..=3, 1usize..=3, 3usize..=8, 3usize..=8, 1usize..=2, 0usize..=1)
                .prop_flat_map(|(n, t, s, d2, d1, h, w, stride, pad)| {
                    (
                        tensor_strategy([t, s, d2, d1]),
                        tensor_strategy([t, s, d2, d1]),
                        tensor_strategy([n, s, h, w]),
                        Just(ConvGeometry::new(stride, pad, (d2, d1)).unwrap()),
                    )
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn conv_matches_naive_loops((k, _k2, x, g) in conv_case()) {
                let y = conv2d(&k, &x, &g).unwrap();
                let oracle = naive_conv(&k, &x, g.stride, g.padding);
                for (a, b) in y.data().iter().zip(&oracle) {
                    prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
                }
            }

            #[test]
            fn conv_is_linear_in_kernel((k1, k2, x, g) in conv_case()) {
                let lhs = conv2d(&k1.add(&k2).unwrap(), &x, &g).unwrap();
                let rhs = conv2d(&k1, &x, &g).unwrap().add(&conv2d(&k2, &x, &g).unwrap()).unwrap();
                for (a, b) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
                }
            }

            #[test]
            fn reshape_flatten_bijection(t in 1usize..5, s in 1usize..5, d2 in 1usize..4, d1 in 1usize..4, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = Matrix::<f32>::new(t * s, d2 * d1, (0..t * s * d2 * d1).map(|_| rng.gen::<f32>()).collect()).unwrap();
                let back = flatten_from_kernel(&reshape_to_kernel(&m, t, s, d2, d1).unwrap());
                prop_assert_eq!(back, m);
            }

            #[test]
            fn compose_is_bilinear(alpha in -3.0f64..3.0, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = Matrix::<f64>::new(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                let b = Matrix::<f64>::new(3, 5, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                let lhs = compose_factors(&a.scaled(alpha), &b).unwrap();
                let rhs = compose_factors(&a, &b).unwrap().scaled(alpha);
                for (x, y) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-12) + 1e-15);
                }
            }

            #[test]
            fn l2_norm_squared_is_sum_of_squares(v in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
                let n = v.len();
                let t = Tensor4::new([1, 1, 1, n], v.clone()).unwrap();
                let norm = p_norm(&t, 2).unwrap();
                let sum: f64 = v.iter().map(|x| x * x).sum();
                prop_assert!((norm * norm - sum).abs() <= 1e-6 * sum.max(1e-12));
            }
        }
    }
}
