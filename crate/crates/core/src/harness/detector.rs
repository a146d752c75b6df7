//! A small single-scale detector built from factorized convolutions.
//!
//! Each backbone layer is a factorized 3×3 convolution followed by a leaky
//! rectifier; layers marked for downsampling use stride 2. A dense 1×1 head
//! emits `5 + C` channels per grid cell: objectness logit, `C` class logits
//! and four box offsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::eval::{BoundingBox, Detection};
use crate::factorized::{delta_rank_for_ratio, svd_initialize, BranchOutputs, FactorizedConvLayer};
use crate::real::Real;
use crate::tensor::{ConvGeometry, Tensor4, Unfolded};
use crate::train::adam::ParamMut;
use crate::train::grad::{backward_branches, GradientSet};
use crate::train::loss::sigmoid;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Initial objectness bias; keeps early objectness predictions near the
/// background rate instead of 0.5.
const OBJECTNESS_PRIOR_LOGIT: f64 = -2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Channel chain `[input, layer 1, …, layer L]`.
    pub channels: Vec<usize>,
    /// 1-based indices of layers that halve the spatial resolution.
    pub downsample: Vec<usize>,
    pub window: usize,
    pub classes: usize,
    /// Global rank fraction for every factorized layer.
    pub alpha: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            channels: vec![1, 16, 32, 64, 64, 64, 64],
            downsample: vec![1, 2, 3],
            window: 3,
            classes: 3,
            alpha: 0.9,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Config("channel chain needs an input and at least one layer".into()));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config(format!("channel chain {:?} contains a zero", self.channels)));
        }
        let layers = self.channels.len() - 1;
        if let Some(bad) = self.downsample.iter().find(|&&l| l == 0 || l > layers) {
            return Err(Error::Config(format!("downsample layer {bad} outside 1..={layers}")));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!("window must be odd, got {}", self.window)));
        }
        if self.classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn geometry(&self, layer: usize) -> ConvGeometry {
        let stride = if self.downsample.contains(&(layer + 1)) { 2 } else { 1 };
        ConvGeometry { stride, padding: self.window / 2, window: (self.window, self.window) }
    }

    /// Output grid `(rows, cols)` for a `width × height` canvas.
    pub fn grid(&self, canvas: (usize, usize)) -> Result<(usize, usize)> {
        let (mut h, mut w) = (canvas.1, canvas.0);
        for l in 0..self.layer_count() {
            (h, w) = self.geometry(l).output_size(h, w)?;
        }
        Ok((h, w))
    }
}

/// Unfactorized convolution, used for the 1×1 head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseConv<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub frozen: bool,
}

impl<T: Real> DenseConv<T> {
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn geometry(&self) -> ConvGeometry {
        let [_, _, d2, d1] = self.weight.dims();
        ConvGeometry { stride: 1, padding: d2 / 2, window: (d2, d1) }
    }

    fn cast<U: Real>(&self) -> DenseConv<U> {
        DenseConv { weight: self.weight.cast(), bias: self.bias.iter().map(|&v| U::from_f64(v.as_f64())).collect(), frozen: self.frozen }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector<T> {
    pub layers: Vec<FactorizedConvLayer<T>>,
    pub head: DenseConv<T>,
    pub classes: usize,
    pub alpha: f64,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct DetectorForward<T> {
    pub branches: Vec<BranchOutputs<T>>,
    pub pre_activations: Vec<Tensor4<T>>,
    head_input: Unfolded<T>,
    head_input_dims: [usize; 4],
    pub output: Tensor4<T>,
}

/// Gradients for every detector parameter, in [`ToyDetector::param_slots_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGrads<T> {
    pub layers: Vec<GradientSet<T>>,
    pub head_weight: Vec<T>,
    pub head_bias: Vec<T>,
}

impl<T: Real> DetectorGrads<T> {
    pub fn zeros_like(model: &ToyDetector<T>) -> Self {
        Self {
            layers: model.layers.iter().map(GradientSet::zeros_like).collect(),
            head_weight: vec![T::zero(); model.head.weight.len()],
            head_bias: vec![T::zero(); model.head.bias.len()],
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.layers.iter().flat_map(|g| g.slices()).collect();
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.layers.iter_mut().flat_map(|g| g.slices_mut()).collect();
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// `self += other`, slot by slot.
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for slot in self.slices_mut() {
            for v in slot.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Labels for parameter slots, matching [`ToyDetector::param_slots_mut`].
pub fn slot_names<T: Real>(model: &ToyDetector<T>) -> Vec<String> {
    let mut names = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        names.push(format!("layer{}.A", l + 1));
        names.push(format!("layer{}.B", l + 1));
        if layer.delta().is_some() {
            names.push(format!("layer{}.dA", l + 1));
            names.push(format!("layer{}.dB", l + 1));
        }
        names.push(format!("layer{}.bias", l + 1));
    }
    names.push("head.weight".into());
    names.push("head.bias".into());
    names
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// He-uniform dense kernels for every backbone layer, in layer order.
pub fn initial_kernels<T: Real>(config: &DetectorConfig, seed: u64) -> Result<Vec<Tensor4<T>>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.window;
    Ok(config
        .channels
        .windows(2)
        .map(|pair| {
            let (s, t) = (pair[0], pair[1]);
            let bound = (6.0 / (s * d * d) as f64).sqrt();
            let data = (0..t * s * d * d).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
            Tensor4::new([t, s, d, d], data).expect("positive dims")
        })
        .collect())
}

fn initial_head<T: Real>(config: &DetectorConfig, seed: u64) -> DenseConv<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
    let s = *config.channels.last().expect("validated");
    let t = 5 + config.classes;
    let bound = (1.0 / s as f64).sqrt();
    let data = (0..t * s).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
    let mut bias = vec![T::zero(); t];
    bias[0] = T::from_f64(OBJECTNESS_PRIOR_LOGIT);
    DenseConv { weight: Tensor4::new([t, s, 1, 1], data).expect("positive dims"), bias, frozen: false }
}

/// Builds a detector whose backbone factors are SVD-initialized from
/// seeded dense kernels at the configured α.
pub fn build_toy_detector<T: Real>(config: &DetectorConfig, seed: u64) -> Result<ToyDetector<T>> {
    let kernels = initial_kernels(config, seed)?;
    ToyDetector::from_dense_kernels(config, &kernels, initial_head(config, seed))
}

impl<T: Real> ToyDetector<T> {
    pub fn from_dense_kernels(config: &DetectorConfig, kernels: &[Tensor4<T>], head: DenseConv<T>) -> Result<Self> {
        config.validate()?;
        if kernels.len() != config.layer_count() {
            return Err(Error::Config(format!("{} kernels for {} layers", kernels.len(), config.layer_count())));
        }
        let mut layers = Vec::with_capacity(kernels.len());
        for (l, k) in kernels.iter().enumerate() {
            let expect = [config.channels[l + 1], config.channels[l], config.window, config.window];
            if k.dims() != expect {
                return Err(Error::Config(format!("layer {} kernel {:?}, expected {expect:?}", l + 1, k.dims())));
            }
            layers.push(svd_initialize(k, config.alpha, config.geometry(l))?);
        }
        let model = Self { layers, head, classes: config.classes, alpha: config.alpha };
        model.validate()?;
        Ok(model)
    }

    /// Checks the channel chain and head width.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("detector has no backbone layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].shape().t != pair[1].shape().s {
                return Err(Error::Config("inconsistent channel chain".into()));
            }
        }
        let [ht, hs, _, _] = self.head.weight.dims();
        if hs != self.layers.last().expect("non-empty").shape().t || ht != 5 + self.classes {
            return Err(Error::Config(format!("head {ht}x{hs} does not fit backbone / {} classes", self.classes)));
        }
        if self.head.bias.len() != ht {
            return Err(Error::Config("head bias length".into()));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].shape().s
    }

    pub fn grid(&self, canvas: (usize, usize)) -> Result<(usize, usize)> {
        let (mut h, mut w) = (canvas.1, canvas.0);
        for layer in &self.layers {
            (h, w) = layer.geometry().output_size(h, w)?;
        }
        Ok((h, w))
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut act = x.clone();
        for layer in &self.layers {
            act = layer.forward(&act)?.map(|v| T::from_f64(leaky(v.as_f64())));
        }
        let u_geom = self.head.geometry();
        let [n, s, h, w] = act.dims();
        let t = self.head.weight.dims()[0];
        let (ho, wo) = u_geom.output_size(h, w)?;
        let mut out = Tensor4::zeros([n, t, ho, wo]);
        for i in 0..n {
            Unfolded::new(act.item(i), (s, h, w), &u_geom)?.apply_kernel(self.head.weight.data(), t, T::zero(), out.item_mut(i));
        }
        crate::factorized::add_bias(&mut out, &self.head.bias);
        Ok(out)
    }

    pub fn forward_cached(&self, x: &Tensor4<T>) -> Result<DetectorForward<T>> {
        if x.dims()[1] != self.input_channels() {
            return shape_err(format!("detector expects {} input channels, got {}", self.input_channels(), x.dims()[1]));
        }
        let mut branches = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &self.layers {
            let b = layer.forward_branches(&act)?;
            let pre = b.combine(layer.bias());
            act = pre.map(|v| T::from_f64(leaky(v.as_f64())));
            branches.push(b);
            pre_activations.push(pre);
        }
        let u_geom = self.head.geometry();
        let dims = act.dims();
        let [n, s, h, w] = dims;
        let t = self.head.weight.dims()[0];
        let (ho, wo) = u_geom.output_size(h, w)?;
        let mut output = Tensor4::zeros([n, t, ho, wo]);
        // Head runs per image; only batch size 1 keeps a single unfolded buffer.
        if n != 1 {
            return shape_err("cached forward takes one image at a time");
        }
        let head_input = Unfolded::new(act.item(0), (s, h, w), &u_geom)?;
        head_input.apply_kernel(self.head.weight.data(), t, T::zero(), output.item_mut(0));
        crate::factorized::add_bias(&mut output, &self.head.bias);
        Ok(DetectorForward { branches, pre_activations, head_input, head_input_dims: dims, output })
    }

    /// Backpropagates `d_output` (and optional per-layer branch gradients
    /// from the complementarity term) through the whole detector.
    pub fn backward(
        &self,
        cache: &DetectorForward<T>,
        d_output: &Tensor4<T>,
        branch_extra: Option<&[Option<(Tensor4<T>, Tensor4<T>)>]>,
    ) -> Result<DetectorGrads<T>> {
        if d_output.dims() != cache.output.dims() {
            return shape_err("upstream does not match head output");
        }
        let t = self.head.weight.dims()[0];
        let mut head_weight = vec![T::zero(); self.head.weight.len()];
        cache.head_input.accumulate_kernel_grad(d_output.item(0), t, &mut head_weight);
        let head_bias: Vec<T> = (0..t)
            .map(|c| {
                let plane = d_output.dims()[2] * d_output.dims()[3];
                d_output.item(0)[c * plane..(c + 1) * plane].iter().copied().sum()
            })
            .collect();
        let d_act = cache.head_input.input_grad(self.head.weight.data(), t, d_output.item(0));
        let mut d_act = Tensor4::new(cache.head_input_dims, d_act)?;

        let slope = T::from_f64(LEAKY_SLOPE);
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[l];
            let mut d_pre = d_act;
            for (g, &p) in d_pre.data_mut().iter_mut().zip(pre.data()) {
                if p <= T::zero() {
                    *g *= slope;
                }
            }
            let extra = branch_extra.and_then(|e| e[l].as_ref()).map(|(a, b)| (a, b));
            let (grads, dx) = backward_branches(layer, &cache.branches[l], &d_pre, extra)?;
            layer_grads.push(grads);
            d_act = dx;
        }
        layer_grads.reverse();
        Ok(DetectorGrads { layers: layer_grads, head_weight, head_bias })
    }

    /// Mutable parameter buffers with their freeze state:
    /// per layer A, B, (ΔA, ΔB), bias; then head weight and bias.
    pub fn param_slots_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            let frozen = layer.is_base_frozen();
            let (a, b, delta, bias) = layer.params_mut();
            out.push(ParamMut { values: a.data_mut(), frozen });
            out.push(ParamMut { values: b.data_mut(), frozen });
            if let Some(d) = delta {
                out.push(ParamMut { values: d.a.data_mut(), frozen: false });
                out.push(ParamMut { values: d.b.data_mut(), frozen: false });
            }
            out.push(ParamMut { values: bias.as_mut_slice(), frozen });
        }
        out.push(ParamMut { values: self.head.weight.data_mut(), frozen: self.head.frozen });
        out.push(ParamMut { values: self.head.bias.as_mut_slice(), frozen: self.head.frozen });
        out
    }

    pub fn slot_sizes(&mut self) -> Vec<usize> {
        self.param_slots_mut().iter().map(|p| p.values.len()).collect()
    }

    /// Adds an augmentation branch to every layer with `Δr = max(1, ⌊ratio·r⌋)`
    /// and freezes the base factors. Layer seeds derive from `seed`.
    pub fn augment(&self, delta_ratio: f64, seed: u64) -> Result<Self> {
        let mut out = self.clone();
        for (l, layer) in out.layers.iter_mut().enumerate() {
            let dr = delta_rank_for_ratio(layer.rank(), delta_ratio)?;
            *layer = layer.augment_capacity(dr, seed.wrapping_add(l as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))?;
        }
        Ok(out)
    }

    pub fn is_augmented(&self) -> bool {
        self.layers.iter().all(|l| l.delta().is_some() && l.is_base_frozen())
    }

    /// Every stored scalar (factors, augmentation factors, biases, head).
    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_counts().total()).sum::<usize>() + self.head.param_count()
    }

    pub fn trainable_params(&self) -> usize {
        let head = if self.head.frozen { 0 } else { self.head.param_count() };
        self.layers.iter().map(|l| l.trainable_params()).sum::<usize>() + head
    }

    /// Parameter count of the same architecture with dense kernels.
    pub fn dense_equivalent_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_counts().dense + l.param_counts().bias).sum::<usize>() + self.head.param_count()
    }

    pub fn cast<U: Real>(&self) -> ToyDetector<U> {
        ToyDetector { layers: self.layers.iter().map(|l| l.cast()).collect(), head: self.head.cast(), classes: self.classes, alpha: self.alpha }
    }
}

/// Decodes one image's head output: every cell with objectness ≥
/// `threshold` yields one box of its argmax class; confidence is objectness
/// times the class probability. No suppression.
pub fn decode_detections<T: Real>(
    output: &Tensor4<T>,
    classes: usize,
    image_id: usize,
    canvas: (usize, usize),
    threshold: f64,
) -> Result<Vec<Detection>> {
    let [n, ch, gh, gw] = output.dims();
    if n != 1 || ch != 5 + classes {
        return shape_err(format!("cannot decode head output {:?}", output.dims()));
    }
    let plane = gh * gw;
    let p = output.item(0);
    let (cw, chh) = (canvas.0 as f64, canvas.1 as f64);
    let mut dets = Vec::new();
    for row in 0..gh {
        for col in 0..gw {
            let cell = row * gw + col;
            let obj = sigmoid(p[cell].as_f64());
            if obj < threshold {
                continue;
            }
            let logits: Vec<f64> = (0..classes).map(|c| p[(1 + c) * plane + cell].as_f64()).collect();
            let (best, max) = logits.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let denom: f64 = logits.iter().map(|v| (v - max).exp()).sum();
            let offs: Vec<f64> = (0..4).map(|j| sigmoid(p[(1 + classes + j) * plane + cell].as_f64())).collect();
            let cx = (col as f64 + offs[0]) / gw as f64 * cw;
            let cy = (row as f64 + offs[1]) / gh as f64 * chh;
            let (w, h) = (offs[2] * cw, offs[3] * chh);
            let bbox = BoundingBox::new(
                (cx - w / 2.0).max(0.0),
                (cy - h / 2.0).max(0.0),
                (cx + w / 2.0).min(cw),
                (cy + h / 2.0).min(chh),
            )?;
            dets.push(Detection { image_id, class_id: best, bbox, confidence: (obj / denom).clamp(0.0, 1.0) });
        }
    }
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;

    fn small_config(alpha: f64) -> DetectorConfig {
        DetectorConfig { channels: vec![1, 4, 6, 6], downsample: vec![1, 2], window: 3, classes: 3, alpha }
    }

    #[test]
    fn default_grid_is_16_for_128() {
        let cfg = DetectorConfig::default();
        let model: ToyDetector<f32> = build_toy_detector(&cfg, 1).unwrap();
        assert_eq!(model.grid((128, 128)).unwrap(), (16, 16));
        let x = Tensor4::<f32>::zeros([1, 1, 128, 128]);
        assert_eq!(model.forward(&x).unwrap().dims(), [1, 8, 16, 16]);
    }

    #[test]
    fn inconsistent_chain_is_a_config_error() {
        let mut cfg = small_config(0.5);
        cfg.channels = vec![1];
        assert!(matches!(build_toy_detector::<f32>(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = small_config(0.5);
        cfg.downsample = vec![7];
        assert!(matches!(build_toy_detector::<f32>(&cfg, 0), Err(Error::Config(_))));
        let cfg = small_config(0.5);
        let kernels = initial_kernels::<f64>(&cfg, 0).unwrap();
        let head = initial_head::<f64>(&cfg, 0);
        let mut wrong = kernels.clone();
        wrong.swap(1, 2);
        assert!(matches!(ToyDetector::from_dense_kernels(&cfg, &wrong, head), Err(Error::Config(_))));
    }

    #[test]
    fn full_rank_matches_dense_twin() {
        let cfg = small_config(1.0);
        let kernels = initial_kernels::<f64>(&cfg, 3).unwrap();
        let head = initial_head::<f64>(&cfg, 3);
        let model = ToyDetector::from_dense_kernels(&cfg, &kernels, head.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor4::new([1, 1, 16, 16], (0..256).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let mut act = x.clone();
        for (l, k) in kernels.iter().enumerate() {
            act = conv2d(k, &act, &cfg.geometry(l)).unwrap().map(leaky);
        }
        let mut twin = conv2d(&head.weight, &act, &ConvGeometry::new(1, 0, (1, 1)).unwrap()).unwrap();
        crate::factorized::add_bias(&mut twin, &head.bias);
        let y = model.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(twin.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn cached_forward_matches_forward() {
        let model: ToyDetector<f64> = build_toy_detector(&small_config(0.6), 5).unwrap();
        let x = Tensor4::new([1, 1, 16, 16], (0..256).map(|v| (v % 7) as f64 / 7.0).collect()).unwrap();
        assert_eq!(model.forward_cached(&x).unwrap().output, model.forward(&x).unwrap());
    }

    #[test]
    fn parameter_bookkeeping() {
        let model: ToyDetector<f32> = build_toy_detector(&DetectorConfig::default(), 2).unwrap();
        let mut m = model.clone();
        let stored: usize = m.param_slots_mut().iter().map(|p| p.values.len()).sum();
        assert_eq!(stored, model.total_params());
        let per_layer: usize = model.layers.iter().map(|l| l.param_counts().factored_base + l.param_counts().bias).sum();
        assert_eq!(model.total_params(), per_layer + model.head.param_count());
        let aug = model.augment(1.0 / 9.0, 3).unwrap();
        assert!(aug.is_augmented());
        assert!(aug.total_params() > model.total_params());
        let delta: usize = aug.layers.iter().map(|l| l.param_counts().factored_delta).sum();
        assert_eq!(aug.trainable_params(), delta + aug.head.param_count());
    }

    #[test]
    fn augmentation_keeps_outputs_bit_identical() {
        let model: ToyDetector<f32> = build_toy_detector(&small_config(0.7), 9).unwrap();
        let aug = model.augment(0.5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let x = Tensor4::new([1, 1, 16, 16], (0..256).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap();
            let a: Vec<u32> = model.forward(&x).unwrap().data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = aug.forward(&x).unwrap().data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn decode_thresholds_objectness() {
        let mut out = Tensor4::<f64>::zeros([1, 8, 2, 2]);
        out.set([0, 0, 0, 0], -5.0);
        out.set([0, 0, 0, 1], 5.0);
        out.set([0, 0, 1, 0], -5.0);
        out.set([0, 0, 1, 1], -5.0);
        out.set([0, 2, 0, 1], 3.0);
        let dets = decode_detections(&out, 3, 7, (32, 32), 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = dets[0];
        assert_eq!((d.image_id, d.class_id), (7, 1));
        // Offsets of 0.5 → centered in cell (0,1), half-canvas box.
        assert_eq!(d.bbox, BoundingBox::new(16.0, 0.0, 32.0, 16.0).unwrap());
        assert!(d.confidence > 0.0 && d.confidence <= 1.0);
    }
}
