use indexmap::IndexMap;

use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::layers::{
    conv_backward_view, conv_forward_view, dropout_backward, dropout_forward, fc_backward, fc_forward, gap_backward,
    gap_forward, lrn_backward, lrn_forward, maxpool_backward, maxpool_forward, mlpconv_backward_view,
    mlpconv_forward_view, relu_backward, relu_forward, softmax, softmax_xent_backward, softmax_xent_forward, ConvView,
    LayerCache, Mode, MlpConvView,
};
use crate::rng::{Distribution, Rng};
use crate::tensor::{random_fill, Real, Tensor};

/// Named tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros_like(v)))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Errors unless both sets hold the same names, in order, with equal shapes.
    pub fn check_congruent(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, a), (nb, b)) in self.iter().zip(other.iter()) {
            if na != nb {
                return Err(Error::invalid(format!("parameter {na:?} paired with {nb:?}")));
            }
            if a.shape() != b.shape() {
                return Err(Error::shape_mismatch(a.shape(), b.shape()));
            }
        }
        Ok(())
    }
}

/// Output of a forward pass. Holds the caches needed by [`ModelState::backward`].
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    /// Input of global average pooling (the last convolutional maps).
    pub feature_maps: Option<Tensor<T>>,
    caches: Vec<LayerCache<T>>,
    version: u64,
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub loss: T,
    pub params: ParamSet<T>,
}

/// A network description together with its parameters.
#[derive(Clone, Debug)]
pub struct ModelState<T = f32> {
    spec: ModelSpec,
    params: ParamSet<T>,
    /// Parameter group name for each layer, `None` for unweighted layers.
    groups: Vec<Option<String>>,
    pub mode: Mode,
    version: u64,
}

impl<T: Real> PartialEq for ModelState<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl<T: Real> ModelState<T> {
    /// He-initialized weights `N(0, sqrt(2 / fan_in))` and zero biases.
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        for group in spec.param_groups()? {
            for (name, shape, fan_in) in group.tensors {
                let t = if fan_in == 0 {
                    Tensor::zeros(shape)?
                } else {
                    random_fill(rng, Distribution::gaussian(0.0, (2.0 / fan_in as f64).sqrt()), shape)?
                };
                params.insert(name, t);
            }
        }
        Self::from_params(spec, params)
    }

    /// Pairs `spec` with existing parameters, checking names and shapes.
    pub fn from_params(spec: ModelSpec, params: ParamSet<T>) -> Result<Self> {
        let expected = spec.param_groups()?;
        let mut groups = vec![None; spec.layers.len()];
        let mut ordered = ParamSet::new();
        let mut params = params;
        for g in &expected {
            for (name, shape, _) in &g.tensors {
                let t = params
                    .tensors
                    .shift_remove(name)
                    .ok_or_else(|| Error::Format(format!("missing parameter {name:?}")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Format(format!(
                        "parameter {name:?} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                ordered.insert(name.clone(), t);
            }
            groups[g.layer] = Some(g.name.clone());
        }
        if let Some(extra) = params.names().next() {
            return Err(Error::Format(format!("unexpected parameter {extra:?}")));
        }
        Ok(Self {
            spec,
            params: ordered,
            groups,
            mode: Mode::Eval,
            version: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Mutable parameter access. Forward passes taken before this call can no
    /// longer be used for backward.
    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        self.version += 1;
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn class_names(&self) -> &[String] {
        &self.spec.class_names
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec.clone(),
            params: self.params.cast(),
            groups: self.groups.clone(),
            mode: self.mode,
            version: 0,
        }
    }

    fn conv_view(&self, prefix: &str, stride: usize, pad: usize) -> Result<ConvView<'_, T>> {
        ConvView::new(
            self.params.get(&format!("{prefix}.weight"))?,
            self.params.get(&format!("{prefix}.bias"))?,
            stride,
            pad,
        )
    }

    fn mlp_view(&self, group: &str, stride: usize, pad: usize) -> Result<MlpConvView<'_, T>> {
        Ok(MlpConvView {
            base: self.conv_view(&format!("{group}.base"), stride, pad)?,
            mlp1: self.conv_view(&format!("{group}.mlp1"), 1, 0)?,
            mlp2: self.conv_view(&format!("{group}.mlp2"), 1, 0)?,
        })
    }

    fn group(&self, layer: usize) -> &str {
        self.groups[layer].as_deref().expect("weighted layer has a group")
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != self.spec.input_shape {
            return Err(Error::shape_mismatch(x.shape(), &self.spec.input_shape));
        }
        let plane = x.len() / 3;
        let mean = self.spec.input_mean.unwrap_or([0.0; 3]);
        let scale = T::from_f64_lossy(self.spec.input_scale);
        let mut out = x.clone();
        for (c, m) in mean.iter().enumerate() {
            let m = T::from_f64_lossy(*m);
            for v in &mut out.data_mut()[c * plane..(c + 1) * plane] {
                *v = (*v - m) * scale;
            }
        }
        Ok(out)
    }

    /// Runs the network on one `(3, H, W)` image. Dropout is active only in
    /// [`Mode::Train`], where it draws from `rng`.
    pub fn forward(&self, x: &Tensor<T>, rng: &mut Rng) -> Result<ForwardPass<T>> {
        let mut a = self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut feature_maps = None;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (y, cache) = match *layer {
                LayerSpec::MlpConv { stride, pad, .. } => {
                    let (y, c) = mlpconv_forward_view(&a, self.mlp_view(self.group(i), stride, pad)?)?;
                    (y, LayerCache::MlpConv(c))
                }
                LayerSpec::Conv { stride, pad, .. } => {
                    let (y, c) = conv_forward_view(&a, self.conv_view(self.group(i), stride, pad)?)?;
                    (y, LayerCache::Conv(c))
                }
                LayerSpec::MaxPool { window, stride } => {
                    let (y, c) = maxpool_forward(&a, window, stride)?;
                    (y, LayerCache::MaxPool(c))
                }
                LayerSpec::Gap => {
                    let (y, c) = gap_forward(&a)?;
                    feature_maps = Some(a);
                    (y, LayerCache::Gap(c))
                }
                LayerSpec::Fc { .. } => {
                    let g = self.group(i);
                    let w = self.params.get(&format!("{g}.weight"))?;
                    let b = self.params.get(&format!("{g}.bias"))?;
                    let (y, c) = fc_forward(&a, w, b)?;
                    (y, LayerCache::Fc(c))
                }
                LayerSpec::Relu => {
                    let (y, c) = relu_forward(&a);
                    (y, LayerCache::Relu(c))
                }
                LayerSpec::Dropout { rate } => {
                    let (y, c) = dropout_forward(&a, rate, self.mode, rng)?;
                    (y, LayerCache::Dropout(c))
                }
                LayerSpec::Lrn(p) => {
                    let (y, c) = lrn_forward(&a, &p)?;
                    (y, LayerCache::Lrn(c))
                }
                LayerSpec::SoftmaxHead => break,
            };
            a = y;
            caches.push(cache);
        }
        Ok(ForwardPass {
            probs: softmax(&a),
            logits: a,
            feature_maps,
            caches,
            version: self.version,
        })
    }

    /// Evaluation-mode class probabilities, ignoring [`ModelState::mode`].
    pub fn infer(&self, x: &Tensor<T>) -> Result<ForwardPass<T>> {
        if self.mode == Mode::Eval {
            return self.forward(x, &mut Rng::new(0));
        }
        let mut eval = self.clone();
        eval.mode = Mode::Eval;
        eval.forward(x, &mut Rng::new(0))
    }

    /// Loss and parameter gradients for one labelled sample.
    pub fn backward(&self, pass: ForwardPass<T>, label: usize) -> Result<Gradients<T>> {
        if pass.version != self.version || pass.caches.len() + 1 != self.spec.layers.len() {
            return Err(Error::StaleCache);
        }
        let (loss, _) = softmax_xent_forward(&pass.logits, label)?;
        let mut d = softmax_xent_backward(&pass.probs, label)?;
        let mut grads = self.params.zeros_like();
        let mut put = |name: String, t: Tensor<T>| {
            *grads.get_mut(&name).expect("gradient slot exists") = t;
        };
        for (i, cache) in pass.caches.into_iter().enumerate().rev() {
            let layer = &self.spec.layers[i];
            let want_dx = i > 0;
            d = match (layer, cache) {
                (&LayerSpec::MlpConv { stride, pad, .. }, LayerCache::MlpConv(c)) => {
                    let g = self.group(i);
                    let r = mlpconv_backward_view(&d, c, self.mlp_view(g, stride, pad)?, want_dx)?;
                    for (stage, (dk, db)) in [("base", r.base), ("mlp1", r.mlp1), ("mlp2", r.mlp2)] {
                        put(format!("{g}.{stage}.weight"), dk);
                        put(format!("{g}.{stage}.bias"), db);
                    }
                    match r.dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (&LayerSpec::Conv { stride, pad, .. }, LayerCache::Conv(c)) => {
                    let g = self.group(i);
                    let (dx, dk, db) = conv_backward_view(&d, c, self.conv_view(g, stride, pad)?, want_dx)?;
                    put(format!("{g}.weight"), dk);
                    put(format!("{g}.bias"), db);
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (LayerSpec::MaxPool { .. }, LayerCache::MaxPool(c)) => maxpool_backward(&d, c)?,
                (LayerSpec::Gap, LayerCache::Gap(c)) => gap_backward(&d, c)?,
                (LayerSpec::Fc { .. }, LayerCache::Fc(c)) => {
                    let g = self.group(i);
                    let r = fc_backward(&d, c, self.params.get(&format!("{g}.weight"))?)?;
                    put(format!("{g}.weight"), r.dw);
                    put(format!("{g}.bias"), r.db);
                    r.dx
                }
                (LayerSpec::Relu, LayerCache::Relu(c)) => relu_backward(&d, c)?,
                (LayerSpec::Dropout { .. }, LayerCache::Dropout(c)) => dropout_backward(&d, c)?,
                (LayerSpec::Lrn(_), LayerCache::Lrn(c)) => lrn_backward(&d, c)?,
                _ => return Err(Error::StaleCache),
            };
        }
        Ok(Gradients { loss, params: grads })
    }

    /// Cross-entropy loss of one sample in the current mode.
    pub fn loss(&self, x: &Tensor<T>, label: usize, rng: &mut Rng) -> Result<T> {
        let pass = self.forward(x, rng)?;
        Ok(softmax_xent_forward(&pass.logits, label)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::{deepspace_spec, DeepSpaceConfig};

    fn tiny(classes: usize) -> ModelSpec {
        DeepSpaceConfig {
            widths: [4, 4, 4, 6, 6],
            ..DeepSpaceConfig::reduced(classes, 32)
        }
        .build()
        .unwrap()
    }

    fn image<T: Real>(seed: u64, side: usize) -> Tensor<T> {
        random_fill(&mut Rng::new(seed), Distribution::uniform(0.0, 1.0), [3, side, side]).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_expected_shapes() {
        let spec = deepspace_spec(35, 227).unwrap();
        let a = ModelState::<f32>::init(spec.clone(), &mut Rng::new(3)).unwrap();
        let b = ModelState::<f32>::init(spec, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params().get("mlpconv1.base.weight").unwrap().shape(), [96, 3, 11, 11]);
        assert!(a.params().get("fc.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_stddev_follows_fan_in() {
        let spec = deepspace_spec(35, 227).unwrap();
        let m = ModelState::<f64>::init(spec, &mut Rng::new(11)).unwrap();
        // 35·3·11·11 = 34848 draws, fan-in 363
        let w = m.params().get("mlpconv1.base.weight").unwrap().data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let want = (2.0f64 / 363.0).sqrt();
        assert!((sd - want).abs() < 0.1 * want, "{sd} vs {want}");
    }

    #[test]
    fn forward_shapes_and_probability_contract() {
        let m = ModelState::<f32>::init(tiny(5), &mut Rng::new(1)).unwrap();
        let pass = m.infer(&image(2, 32)).unwrap();
        assert_eq!(pass.probs.shape(), [5]);
        assert!((pass.probs.sum() - 1.0).abs() < 1e-6);
        assert_eq!(pass.feature_maps.unwrap().shape(), [6, 4, 4]);
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut m = ModelState::<f32>::init(tiny(3), &mut Rng::new(1)).unwrap();
        m.mode = Mode::Eval;
        let x = image(5, 32);
        let a = m.forward(&x, &mut Rng::new(1)).unwrap();
        let b = m.forward(&x, &mut Rng::new(2)).unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = ModelState::<f32>::init(tiny(3), &mut Rng::new(1)).unwrap();
        assert!(matches!(m.infer(&image(1, 31)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradient_shapes_mirror_params() {
        let mut m = ModelState::<f32>::init(tiny(4), &mut Rng::new(1)).unwrap();
        m.mode = Mode::Train;
        let pass = m.forward(&image(3, 32), &mut Rng::new(4)).unwrap();
        let g = m.backward(pass, 2).unwrap();
        g.params.check_congruent(m.params()).unwrap();
        assert!(g.loss > 0.0);
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_gradient() {
        let m = ModelState::<f64>::init(tiny(3), &mut Rng::new(1)).unwrap();
        let pass = m.infer(&Tensor::zeros([3, 32, 32]).unwrap()).unwrap();
        let g = m.backward(pass, 0).unwrap();
        assert!(g.params.get("mlpconv1.base.weight").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_pass_is_rejected() {
        let mut m = ModelState::<f32>::init(tiny(3), &mut Rng::new(1)).unwrap();
        let pass = m.infer(&image(3, 32)).unwrap();
        m.params_mut();
        assert!(matches!(m.backward(pass, 0), Err(Error::StaleCache)));
    }

    #[test]
    fn from_params_checks_names_and_shapes() {
        let m = ModelState::<f32>::init(tiny(3), &mut Rng::new(1)).unwrap();
        let mut p = m.params().clone();
        p.insert("extra", Tensor::zeros([1]).unwrap());
        assert!(ModelState::from_params(m.spec().clone(), p).is_err());
        let mut p = m.params().clone();
        *p.get_mut("fc.bias").unwrap() = Tensor::zeros([4]).unwrap();
        assert!(ModelState::from_params(m.spec().clone(), p).is_err());
    }

    #[test]
    fn input_mean_is_subtracted() {
        let mut spec = tiny(3);
        let m0 = ModelState::<f64>::init(spec.clone(), &mut Rng::new(1)).unwrap();
        spec.input_mean = Some([0.1, 0.2, 0.3]);
        let m1 = ModelState::from_params(spec, m0.params().clone()).unwrap();
        let x = image::<f64>(7, 32);
        let shifted = Tensor::from_fn([3, 32, 32], |i| {
            x.at(i).unwrap() - [0.1, 0.2, 0.3][i[0]]
        })
        .unwrap();
        assert_eq!(m1.infer(&x).unwrap().logits, m0.infer(&shifted).unwrap().logits);
    }

    #[test]
    fn input_scale_multiplies_after_the_mean() {
        let mut spec = tiny(3);
        spec.input_scale = 1.0;
        let m0 = ModelState::<f64>::init(spec.clone(), &mut Rng::new(1)).unwrap();
        spec.input_scale = 4.0;
        spec.input_mean = Some([0.5, 0.25, 0.125]);
        let m1 = ModelState::from_params(spec, m0.params().clone()).unwrap();
        let x = image::<f64>(3, 32);
        let moved = Tensor::from_fn([3, 32, 32], |i| (x.at(i).unwrap() - [0.5, 0.25, 0.125][i[0]]) * 4.0).unwrap();
        assert_eq!(m1.infer(&x).unwrap().logits, m0.infer(&moved).unwrap().logits);
    }
}
