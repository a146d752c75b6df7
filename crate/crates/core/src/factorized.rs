//! The factorized convolution layer.
//!
//! A `T×S×D2×D1` kernel is stored as factors `A (TS×r)` and `B (r×D2D1)`
//! whose product, reinterpreted as a kernel, is the convolution weight.
//! Capacity augmentation appends `Δr` columns to `A` and rows to `B`, which
//! is the same as running a second convolution branch with kernel
//! `ΔK = reshape(ΔA·ΔB)` in parallel and summing the outputs.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::{compose_factors, flatten_from_kernel, reshape_to_kernel, ConvGeometry, Matrix, Tensor4, Unfolded};

/// Kernel shape `(T, S, D2, D1)`: output channels, input channels, window height, window width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelShape {
    pub t: usize,
    pub s: usize,
    pub d2: usize,
    pub d1: usize,
}

impl KernelShape {
    pub fn new(t: usize, s: usize, d2: usize, d1: usize) -> Result<Self> {
        if t == 0 || s == 0 || d2 == 0 || d1 == 0 {
            return Err(Error::Argument(format!("kernel shape must be positive: {t}x{s}x{d2}x{d1}")));
        }
        Ok(Self { t, s, d2, d1 })
    }

    pub fn rows(&self) -> usize {
        self.t * self.s
    }

    pub fn cols(&self) -> usize {
        self.d2 * self.d1
    }

    /// Largest meaningful rank, `min(TS, D2D1)`.
    pub fn max_rank(&self) -> usize {
        self.rows().min(self.cols())
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.t, self.s, self.d2, self.d1]
    }

    pub fn dense_params(&self) -> usize {
        self.t * self.s * self.d2 * self.d1
    }

    /// Parameters of a rank-`r` factor pair: `r·(TS + D2D1)`.
    pub fn factored_params(&self, r: usize) -> usize {
        r * (self.rows() + self.cols())
    }
}

/// Per-layer parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// `T·S·D2·D1`, the unfactorized kernel.
    pub dense: usize,
    /// `r·(TS + D2D1)`.
    pub factored_base: usize,
    /// `Δr·(TS + D2D1)`.
    pub factored_delta: usize,
    pub bias: usize,
}

impl ParamCount {
    /// Every stored scalar: factors, augmentation factors and bias.
    pub fn total(&self) -> usize {
        self.factored_base + self.factored_delta + self.bias
    }

    pub fn trainable(&self, base_frozen: bool) -> usize {
        if base_frozen {
            self.factored_delta
        } else {
            self.total()
        }
    }
}

/// `r = max(1, ⌊α · min(TS, D2D1)⌋)` for `α ∈ (0, 1]`.
pub fn rank_for_alpha(shape: KernelShape, alpha: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Argument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    // The small tolerance keeps products such as 0.29·100 from flooring to 28.
    let r = (alpha * shape.max_rank() as f64 + 1e-9).floor() as usize;
    Ok(r.max(1))
}

/// Augmentation rank for a Δr:r ratio, `max(1, ⌊ratio · r⌋)`.
pub fn delta_rank_for_ratio(r: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Argument(format!("delta ratio must be positive, got {ratio}")));
    }
    Ok(((ratio * r as f64 + 1e-9).floor() as usize).max(1))
}

/// Augmentation factors `ΔA (TS×Δr)` and `ΔB (Δr×D2D1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaFactors<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedConvLayer<T> {
    shape: KernelShape,
    a: Matrix<T>,
    b: Matrix<T>,
    delta: Option<DeltaFactors<T>>,
    bias: Vec<T>,
    base_frozen: bool,
    geom: ConvGeometry,
}

/// Pre-bias outputs of the two branches for one forward pass, plus the
/// unfolded inputs the backward pass reuses.
#[derive(Debug, Clone)]
pub struct BranchOutputs<T> {
    /// `K * X`.
    pub base: Tensor4<T>,
    /// `ΔK * X`, present iff the layer is augmented.
    pub delta: Option<Tensor4<T>>,
    pub(crate) unfolded: Vec<Unfolded<T>>,
}

impl<T: Real> BranchOutputs<T> {
    /// `K*X + ΔK*X + bias`.
    pub fn combine(&self, bias: &[T]) -> Tensor4<T> {
        let mut y = self.base.clone();
        if let Some(delta) = &self.delta {
            for (o, &d) in y.data_mut().iter_mut().zip(delta.data()) {
                *o += d;
            }
        }
        add_bias(&mut y, bias);
        y
    }
}

pub(crate) fn add_bias<T: Real>(y: &mut Tensor4<T>, bias: &[T]) {
    let [n, t, h, w] = y.dims();
    let plane = h * w;
    let data = y.data_mut();
    for i in 0..n {
        for (c, &b) in bias.iter().enumerate().take(t) {
            let start = (i * t + c) * plane;
            for v in &mut data[start..start + plane] {
                *v += b;
            }
        }
    }
}

impl<T: Real> FactorizedConvLayer<T> {
    /// Assembles a base (unaugmented, trainable) layer from explicit factors.
    pub fn from_factors(shape: KernelShape, a: Matrix<T>, b: Matrix<T>, bias: Vec<T>, geom: ConvGeometry) -> Result<Self> {
        let layer = Self { shape, a, b, delta: None, bias, base_frozen: false, geom };
        layer.validate()?;
        Ok(layer)
    }

    /// Attaches explicit augmentation factors (used by weight loading and tests).
    pub fn with_delta(mut self, delta: Option<DeltaFactors<T>>) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let KernelShape { t, .. } = self.shape;
        let r = self.a.cols();
        if self.a.rows() != self.shape.rows() || self.b.cols() != self.shape.cols() || self.b.rows() != r {
            return shape_err(format!(
                "factors {}x{} · {}x{} do not fit kernel {:?}",
                self.a.rows(),
                self.a.cols(),
                self.b.rows(),
                self.b.cols(),
                self.shape
            ));
        }
        if r > self.shape.max_rank() {
            return shape_err(format!("rank {r} exceeds max rank {}", self.shape.max_rank()));
        }
        if self.bias.len() != t {
            return shape_err(format!("bias has {} entries, expected {t}", self.bias.len()));
        }
        if (self.shape.d2, self.shape.d1) != self.geom.window {
            return shape_err("geometry window does not match kernel");
        }
        if let Some(d) = &self.delta {
            if d.a.rows() != self.shape.rows() || d.b.cols() != self.shape.cols() || d.a.cols() != d.b.rows() {
                return shape_err("augmentation factors do not fit kernel");
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geom
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn delta_rank(&self) -> usize {
        self.delta.as_ref().map_or(0, |d| d.a.cols())
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn delta(&self) -> Option<&DeltaFactors<T>> {
        self.delta.as_ref()
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn is_base_frozen(&self) -> bool {
        self.base_frozen
    }

    pub fn freeze_base(&mut self) {
        self.base_frozen = true;
    }

    pub fn unfreeze_base(&mut self) {
        self.base_frozen = false;
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Matrix<T>, &mut Matrix<T>, Option<&mut DeltaFactors<T>>, &mut Vec<T>) {
        (&mut self.a, &mut self.b, self.delta.as_mut(), &mut self.bias)
    }

    /// Builds `K = reshape(A·B)` and `ΔK = reshape(ΔA·ΔB)` (all-zero when not augmented).
    pub fn materialize(&self) -> (Tensor4<T>, Tensor4<T>) {
        let KernelShape { t, s, d2, d1 } = self.shape;
        let kernel = |a: &Matrix<T>, b: &Matrix<T>| {
            let m = compose_factors(a, b).expect("factor shapes validated at construction");
            reshape_to_kernel(&m, t, s, d2, d1).expect("factor shapes validated at construction")
        };
        let k = kernel(&self.a, &self.b);
        let dk = match &self.delta {
            Some(d) => kernel(&d.a, &d.b),
            None => Tensor4::zeros(self.shape.dims()),
        };
        (k, dk)
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.dims()[1] != self.shape.s {
            return shape_err(format!("layer expects {} input channels, got {}", self.shape.s, x.dims()[1]));
        }
        Ok(())
    }

    /// Runs both branches without bias.
    pub fn forward_branches(&self, x: &Tensor4<T>) -> Result<BranchOutputs<T>> {
        self.check_input(x)?;
        let (k, dk) = self.materialize();
        let [n, s, h, w] = x.dims();
        let (ho, wo) = self.geom.output_size(h, w)?;
        let t = self.shape.t;
        let mut base = Tensor4::zeros([n, t, ho, wo]);
        let mut delta = self.delta.as_ref().map(|_| Tensor4::zeros([n, t, ho, wo]));
        let mut unfolded = Vec::with_capacity(n);
        for i in 0..n {
            let u = Unfolded::new(x.item(i), (s, h, w), &self.geom)?;
            u.apply_kernel(k.data(), t, T::zero(), base.item_mut(i));
            if let Some(d) = delta.as_mut() {
                u.apply_kernel(dk.data(), t, T::zero(), d.item_mut(i));
            }
            unfolded.push(u);
        }
        Ok(BranchOutputs { base, delta, unfolded })
    }

    /// `Y = K*X + ΔK*X + bias`.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_branches(x)?.combine(&self.bias))
    }

    /// Adds a `Δr`-rank branch: `ΔA` uniform in `±1/√(TS)`, `ΔB = 0`, so the
    /// layer computes exactly the same function afterwards. Freezes the base.
    pub fn augment_capacity(&self, delta_r: usize, seed: u64) -> Result<Self> {
        if self.delta.is_some() {
            return Err(Error::State("layer is already augmented".into()));
        }
        if delta_r == 0 {
            return Err(Error::Argument("augmentation rank must be positive".into()));
        }
        let rows = self.shape.rows();
        let bound = 1.0 / (rows as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let da = (0..rows * delta_r).map(|_| T::from_f64(rng.gen_range(-bound..=bound))).collect();
        let mut out = self.clone();
        out.delta = Some(DeltaFactors { a: Matrix::new(rows, delta_r, da)?, b: Matrix::zeros(delta_r, self.shape.cols()) });
        out.base_frozen = true;
        Ok(out)
    }

    pub fn param_counts(&self) -> ParamCount {
        ParamCount {
            dense: self.shape.dense_params(),
            factored_base: self.shape.factored_params(self.rank()),
            factored_delta: self.shape.factored_params(self.delta_rank()),
            bias: self.shape.t,
        }
    }

    pub fn trainable_params(&self) -> usize {
        self.param_counts().trainable(self.base_frozen)
    }

    pub fn cast<U: Real>(&self) -> FactorizedConvLayer<U> {
        FactorizedConvLayer {
            shape: self.shape,
            a: self.a.cast(),
            b: self.b.cast(),
            delta: self.delta.as_ref().map(|d| DeltaFactors { a: d.a.cast(), b: d.b.cast() }),
            bias: self.bias.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
            base_frozen: self.base_frozen,
            geom: self.geom,
        }
    }
}

/// Singular triples of a matrix with singular values in non-increasing order.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    /// `m×k` left singular vectors (columns).
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// `k×n` right singular vectors (rows).
    pub v_t: DMatrix<f64>,
}

/// Thin SVD with singular values sorted non-increasing; equal values keep
/// the order the decomposition produced them in.
pub fn sorted_svd<T: Real>(m: &Matrix<T>) -> Result<SortedSvd> {
    let dm = DMatrix::from_row_iterator(m.rows(), m.cols(), m.data().iter().map(|v| v.as_f64()));
    let svd = nalgebra::linalg::SVD::try_new(dm, true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD failed to converge".into()))?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numeric("SVD did not produce singular vectors".into())),
    };
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let sigma = order.iter().map(|&i| sv[i]).collect();
    Ok(SortedSvd { u, sigma, v_t })
}

/// Factorizes a dense kernel at rank `⌊α·r_max⌋` via truncated SVD:
/// `A = U_r Σ_r^{1/2}`, `B = Σ_r^{1/2} V_rᵀ`. Bias starts at zero.
pub fn svd_initialize<T: Real>(k0: &Tensor4<T>, alpha: f64, geom: ConvGeometry) -> Result<FactorizedConvLayer<T>> {
    let [t, s, d2, d1] = k0.dims();
    let shape = KernelShape::new(t, s, d2, d1)?;
    svd_initialize_rank(k0, rank_for_alpha(shape, alpha)?, geom)
}

/// [`svd_initialize`] with an explicit rank `1 ≤ r ≤ r_max`.
pub fn svd_initialize_rank<T: Real>(k0: &Tensor4<T>, r: usize, geom: ConvGeometry) -> Result<FactorizedConvLayer<T>> {
    if !k0.is_finite() {
        return Err(Error::Numeric("kernel contains non-finite values".into()));
    }
    let [t, s, d2, d1] = k0.dims();
    let shape = KernelShape::new(t, s, d2, d1)?;
    if r == 0 || r > shape.max_rank() {
        return Err(Error::Argument(format!("rank {r} outside 1..={}", shape.max_rank())));
    }
    let svd = sorted_svd(&flatten_from_kernel(k0))?;
    let root: Vec<f64> = svd.sigma.iter().take(r).map(|s| s.sqrt()).collect();
    let a = (0..shape.rows())
        .flat_map(|i| root.iter().enumerate().map(move |(c, &sr)| (i, c, sr)))
        .map(|(i, c, sr)| T::from_f64(svd.u[(i, c)] * sr))
        .collect();
    let b = root
        .iter()
        .enumerate()
        .flat_map(|(c, &sr)| (0..shape.cols()).map(move |j| (c, j, sr)))
        .map(|(c, j, sr)| T::from_f64(sr * svd.v_t[(c, j)]))
        .collect();
    FactorizedConvLayer::from_factors(
        shape,
        Matrix::new(shape.rows(), r, a)?,
        Matrix::new(r, shape.cols(), b)?,
        vec![T::zero(); t],
        geom,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;

    fn random_kernel(seed: u64, dims: [usize; 4]) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Tensor4::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_input(seed: u64, dims: [usize; 4]) -> Tensor4<f64> {
        random_kernel(seed ^ 0xdead_beef, dims)
    }

    #[test]
    fn rank_examples() {
        let shape = KernelShape::new(64, 32, 3, 3).unwrap();
        assert_eq!(shape.max_rank(), 9);
        assert_eq!(rank_for_alpha(shape, 0.5).unwrap(), 4);
        assert_eq!(rank_for_alpha(shape, 1.0).unwrap(), 9);
        let tiny = KernelShape::new(1, 1, 1, 1).unwrap();
        assert_eq!(rank_for_alpha(tiny, 0.1).unwrap(), 1);
        assert!(matches!(rank_for_alpha(shape, 0.0), Err(Error::Argument(_))));
        assert!(matches!(rank_for_alpha(shape, 1.5), Err(Error::Argument(_))));
    }

    #[test]
    fn delta_rank_rounding() {
        assert_eq!(delta_rank_for_ratio(8, 1.0 / 9.0).unwrap(), 1);
        assert_eq!(delta_rank_for_ratio(36, 0.25).unwrap(), 9);
        assert_eq!(delta_rank_for_ratio(1, 0.01).unwrap(), 1);
    }

    #[test]
    fn svd_diagonal_rank_one() {
        // M0 = diag(3, 1) as a 2×1×2×1 kernel.
        let k0 = Tensor4::<f64>::from_f64([2, 1, 2, 1], &[3.0, 0.0, 0.0, 1.0]).unwrap();
        let layer = svd_initialize_rank(&k0, 1, ConvGeometry::new(1, 0, (2, 1)).unwrap()).unwrap();
        let m = compose_factors(layer.a(), layer.b()).unwrap();
        let expect = [3.0, 0.0, 0.0, 0.0];
        for (got, want) in m.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
        let err: f64 = m.data().iter().zip(k0.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_full_rank_is_exact() {
        let k0 = random_kernel(5, [4, 3, 3, 3]);
        let layer = svd_initialize(&k0, 1.0, ConvGeometry::same((3, 3))).unwrap();
        assert_eq!(layer.rank(), 9);
        let (k, dk) = layer.materialize();
        let norm = p_frob(&k0);
        let err = p_frob(&k.sub(&k0).unwrap());
        assert!(err <= 1e-5 * norm);
        assert!(dk.data().iter().all(|&v| v == 0.0));
    }

    fn p_frob(t: &Tensor4<f64>) -> f64 {
        t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn svd_factors_are_orthogonal() {
        let k0 = random_kernel(6, [3, 2, 3, 3]);
        let layer = svd_initialize_rank(&k0, 4, ConvGeometry::same((3, 3))).unwrap();
        let svd = sorted_svd(&flatten_from_kernel(&k0)).unwrap();
        let ata = compose_factors(&layer.a().transpose(), layer.a()).unwrap();
        let bbt = compose_factors(layer.b(), &layer.b().transpose()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { svd.sigma[i] } else { 0.0 };
                assert!((ata.get(i, j) - want).abs() < 1e-5);
                assert!((bbt.get(i, j) - want).abs() < 1e-5);
            }
        }
        // Energy split: residual² + Σ_{i≤r} σ_i² = ‖M0‖².
        let m = compose_factors(layer.a(), layer.b()).unwrap();
        let resid: f64 = m.data().iter().zip(k0.data()).map(|(a, b)| (a - b).powi(2)).sum();
        let kept: f64 = svd.sigma.iter().take(4).map(|s| s * s).sum();
        let total: f64 = k0.data().iter().map(|v| v * v).sum();
        assert!((resid + kept - total).abs() <= 1e-5 * total);
    }

    #[test]
    fn materialize_matches_compose_then_reshape() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = KernelShape::new(2, 2, 2, 1).unwrap();
        let a = Matrix::<f32>::new(4, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Matrix::<f32>::new(2, 2, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let layer = FactorizedConvLayer::from_factors(shape, a.clone(), b.clone(), vec![0.0; 2], ConvGeometry::new(1, 0, (2, 1)).unwrap()).unwrap();
        let (k, dk) = layer.materialize();
        let oracle = reshape_to_kernel(&compose_factors(&a, &b).unwrap(), 2, 2, 2, 1).unwrap();
        assert_eq!(k, oracle);
        assert!(dk.data().iter().all(|&v| v == 0.0));
    }

    fn layer_with_bias(seed: u64) -> FactorizedConvLayer<f64> {
        let k0 = random_kernel(seed, [3, 2, 3, 3]);
        let mut layer = svd_initialize(&k0, 0.6, ConvGeometry::same((3, 3))).unwrap();
        layer.bias = vec![0.5, -0.25, 1.0];
        layer
    }

    #[test]
    fn forward_without_delta_is_conv_plus_bias() {
        let layer = layer_with_bias(8);
        let x = random_input(8, [2, 2, 5, 5]);
        let y = layer.forward(&x).unwrap();
        let (k, _) = layer.materialize();
        let mut expect = conv2d(&k, &x, &layer.geometry()).unwrap();
        add_bias(&mut expect, layer.bias());
        assert_eq!(y, expect);
    }

    #[test]
    fn forward_with_cancelling_delta_is_bias() {
        let base = layer_with_bias(9);
        // ΔA = −A, ΔB = B gives ΔK = −K.
        let delta = DeltaFactors { a: base.a().scaled(-1.0), b: base.b().clone() };
        let layer = base.clone().with_delta(Some(delta)).unwrap();
        let x = random_input(9, [1, 2, 4, 4]);
        let y = layer.forward(&x).unwrap();
        let [_, t, h, w] = y.dims();
        for c in 0..t {
            for i in 0..h * w {
                assert!((y.data()[c * h * w + i] - layer.bias()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_branch_sum_equals_summed_kernel() {
        let base = layer_with_bias(10);
        let layer = {
            let mut l = base.augment_capacity(2, 10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for v in l.delta.as_mut().unwrap().b.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            l
        };
        let x = random_input(10, [2, 2, 6, 5]);
        let y = layer.forward(&x).unwrap();
        let (k, dk) = layer.materialize();
        let mut single = conv2d(&k.add(&dk).unwrap(), &x, &layer.geometry()).unwrap();
        add_bias(&mut single, layer.bias());
        for (a, b) in y.data().iter().zip(single.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn augmentation_preserves_function_and_counts() {
        let layer = layer_with_bias(12).cast::<f32>();
        let aug = layer.augment_capacity(2, 3).unwrap();
        assert!(aug.is_base_frozen());
        assert_eq!(aug.a(), layer.a());
        assert_eq!(aug.b(), layer.b());
        assert_eq!(aug.bias(), layer.bias());
        let bound = 1.0 / (6f32).sqrt();
        assert!(aug.delta().unwrap().a.data().iter().all(|v| v.abs() <= bound));
        assert!(aug.delta().unwrap().b.data().iter().all(|&v| v == 0.0));
        for seed in 0..10 {
            let x = random_input(100 + seed, [1, 2, 5, 5]).cast::<f32>();
            let before = layer.forward(&x).unwrap();
            let after = aug.forward(&x).unwrap();
            let bits = |t: &Tensor4<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&before), bits(&after));
        }
        let shape = layer.shape();
        assert_eq!(
            aug.param_counts().factored_delta - layer.param_counts().factored_delta,
            2 * (shape.rows() + shape.cols())
        );
        assert!(matches!(aug.augment_capacity(1, 0), Err(Error::State(_))));
    }

    #[test]
    fn full_scale_counts() {
        let shape = KernelShape::new(64, 32, 3, 3).unwrap();
        assert_eq!(shape.dense_params(), 18432);
        assert_eq!(shape.factored_params(4), 8228);
        assert_eq!(shape.factored_params(1), 2057);
        // Full rank with TS ≥ D2D1 costs more than the dense kernel.
        assert_eq!(shape.factored_params(9), 9 * (2048 + 9));
        assert!(shape.factored_params(9) > shape.dense_params());
    }

    #[test]
    fn compression_condition_exhaustive() {
        // P_fac < P  ⇔  r < TS·D2D1 / (TS + D2D1), checked in exact integer arithmetic.
        for t in 1..=6 {
            for s in 1..=6 {
                for d2 in 1..=3 {
                    for d1 in 1..=3 {
                        let shape = KernelShape::new(t, s, d2, d1).unwrap();
                        for r in 1..=shape.max_rank() {
                            let lhs = shape.factored_params(r) < shape.dense_params();
                            let rhs = r * (shape.rows() + shape.cols()) < shape.rows() * shape.cols();
                            assert_eq!(lhs, rhs);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn freeze_is_idempotent() {
        let mut layer = layer_with_bias(13);
        layer.freeze_base();
        layer.freeze_base();
        assert!(layer.is_base_frozen());
        layer.unfreeze_base();
        assert!(!layer.is_base_frozen());
    }
}
