//! Reverse-mode gradients through a factorized layer: convolution, the
//! kernel reshape and the factor product, for both branches.

use crate::error::{shape_err, Result};
use crate::factorized::{BranchOutputs, FactorizedConvLayer};
use crate::real::Real;
use crate::tensor::{col2im, compose_factors, Matrix, Tensor4};

/// Gradients for one factorized layer. Shapes mirror the parameters;
/// frozen parameters still receive their gradient here.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub d_a: Matrix<T>,
    pub d_b: Matrix<T>,
    pub d_delta_a: Option<Matrix<T>>,
    pub d_delta_b: Option<Matrix<T>>,
    pub d_bias: Vec<T>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(layer: &FactorizedConvLayer<T>) -> Self {
        Self {
            d_a: Matrix::zeros(layer.a().rows(), layer.a().cols()),
            d_b: Matrix::zeros(layer.b().rows(), layer.b().cols()),
            d_delta_a: layer.delta().map(|d| Matrix::zeros(d.a.rows(), d.a.cols())),
            d_delta_b: layer.delta().map(|d| Matrix::zeros(d.b.rows(), d.b.cols())),
            d_bias: vec![T::zero(); layer.bias().len()],
        }
    }

    /// Gradient slices in parameter order: A, B, ΔA, ΔB, bias.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = vec![self.d_a.data(), self.d_b.data()];
        if let (Some(a), Some(b)) = (&self.d_delta_a, &self.d_delta_b) {
            out.push(a.data());
            out.push(b.data());
        }
        out.push(&self.d_bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![self.d_a.data_mut(), self.d_b.data_mut()];
        if let (Some(a), Some(b)) = (self.d_delta_a.as_mut(), self.d_delta_b.as_mut()) {
            out.push(a.data_mut());
            out.push(b.data_mut());
        }
        out.push(&mut self.d_bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Backward pass of a layer given its forward branch outputs.
///
/// `d_out` is the gradient w.r.t. the layer output `Y`; `extra`, when given,
/// adds separate gradients w.r.t. the pre-bias base (`K*X`) and delta
/// (`ΔK*X`) branch outputs (the complementarity term). Returns the
/// parameter gradients and the gradient w.r.t. the input `X`.
pub fn backward_branches<T: Real>(
    layer: &FactorizedConvLayer<T>,
    forward: &BranchOutputs<T>,
    d_out: &Tensor4<T>,
    extra: Option<(&Tensor4<T>, &Tensor4<T>)>,
) -> Result<(GradientSet<T>, Tensor4<T>)> {
    if d_out.dims() != forward.base.dims() {
        return shape_err(format!("upstream {:?} does not match layer output {:?}", d_out.dims(), forward.base.dims()));
    }
    if let Some((eb, ed)) = extra {
        if eb.dims() != d_out.dims() || ed.dims() != d_out.dims() {
            return shape_err("branch gradients do not match layer output");
        }
    }
    let shape = layer.shape();
    let [n, t, ho, wo] = d_out.dims();
    let plane = ho * wo;
    let (k, dk) = layer.materialize();
    let augmented = layer.delta().is_some();

    let mut d_bias = vec![T::zero(); t];
    for i in 0..n {
        let item = d_out.item(i);
        for (c, db) in d_bias.iter_mut().enumerate() {
            *db += item[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
        }
    }

    let with_extra = |extra_t: Option<&Tensor4<T>>| -> Tensor4<T> {
        match extra_t {
            Some(e) => d_out.add(e).expect("dims checked above"),
            None => d_out.clone(),
        }
    };
    let d_base = with_extra(extra.map(|e| e.0));
    let d_delta = augmented.then(|| with_extra(extra.map(|e| e.1)));

    let (s, h, w) = forward.unfolded.first().map(|u| u.in_shape).unwrap_or((shape.s, 1, 1));
    let patch = shape.s * shape.d2 * shape.d1;
    let mut g_base = vec![T::zero(); t * patch];
    let mut g_delta = vec![T::zero(); if augmented { t * patch } else { 0 }];
    let mut dx = Tensor4::zeros([n, s, h, w]);
    let mut dcols = vec![T::zero(); patch * plane];
    for (i, u) in forward.unfolded.iter().enumerate() {
        u.accumulate_kernel_grad(d_base.item(i), t, &mut g_base);
        T::gemm(patch, t, plane, T::one(), k.data(), true, d_base.item(i), false, T::zero(), &mut dcols);
        if let Some(dd) = &d_delta {
            u.accumulate_kernel_grad(dd.item(i), t, &mut g_delta);
            T::gemm(patch, t, plane, T::one(), dk.data(), true, dd.item(i), false, T::one(), &mut dcols);
        }
        col2im(&dcols, (s, h, w), &u.geom, (ho, wo), dx.item_mut(i));
    }

    // The kernel gradient, read as a TS×D2D1 matrix, is dM.
    let factor_grads = |dm: Vec<T>, a: &Matrix<T>, b: &Matrix<T>| -> Result<(Matrix<T>, Matrix<T>)> {
        let dm = Matrix::new(shape.rows(), shape.cols(), dm)?;
        Ok((compose_factors(&dm, &b.transpose())?, compose_factors(&a.transpose(), &dm)?))
    };
    let (d_a, d_b) = factor_grads(g_base, layer.a(), layer.b())?;
    let (d_delta_a, d_delta_b) = match layer.delta() {
        Some(delta) => {
            let (da, db) = factor_grads(g_delta, &delta.a, &delta.b)?;
            (Some(da), Some(db))
        }
        None => (None, None),
    };
    Ok((GradientSet { d_a, d_b, d_delta_a, d_delta_b, d_bias }, dx))
}

/// Gradients of `sum(upstream ⊙ layer.forward(x))` w.r.t. every layer
/// parameter and the input.
pub fn backward_factorized<T: Real>(
    layer: &FactorizedConvLayer<T>,
    x: &Tensor4<T>,
    upstream: &Tensor4<T>,
) -> Result<(GradientSet<T>, Tensor4<T>)> {
    let forward = layer.forward_branches(x)?;
    backward_branches(layer, &forward, upstream, None)
}
