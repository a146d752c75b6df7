use crate::error::{shape_err, Result};
use crate::real::Real;

/// A parameter buffer as seen by the optimizer.
pub struct ParamMut<'a, T> {
    pub values: &'a mut [T],
    /// Frozen buffers keep their values; their moments are left untouched.
    pub frozen: bool,
}

/// ADAM with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken.
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments for buffers of the given sizes; β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [ParamMut<'_, T>], grads: &[&[T]]) -> Result<()> {
        adam_step(params, grads, self)
    }
}

/// One ADAM update over every non-frozen buffer.
pub fn adam_step<T: Real>(params: &mut [ParamMut<'_, T>], grads: &[&[T]], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return shape_err(format!(
            "optimizer tracks {} buffers, got {} parameters and {} gradients",
            state.m.len(),
            params.len(),
            grads.len()
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.values.len() != g.len() || p.values.len() != m.len() {
            return shape_err("parameter, gradient and moment lengths differ");
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.lr;
    for (i, p) in params.iter_mut().enumerate() {
        if p.frozen {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for ((w, &g), (mi, vi)) in p.values.iter_mut().zip(grads[i]).zip(m.iter_mut().zip(v.iter_mut())) {
            let g = g.as_f64();
            let m_next = b1 * mi.as_f64() + (1.0 - b1) * g;
            let v_next = b2 * vi.as_f64() + (1.0 - b2) * g * g;
            *mi = T::from_f64(m_next);
            *vi = T::from_f64(v_next);
            let update = lr * (m_next / c1) / ((v_next / c2).sqrt() + state.eps);
            *w = T::from_f64(w.as_f64() - update);
        }
    }
    Ok(())
}
