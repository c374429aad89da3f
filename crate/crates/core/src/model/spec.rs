//! Declarative network description and the DeepSpace architecture builder.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv;
use crate::layers::{check_dropout_rate, conv_output_size, pool_output_size, LrnParams};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Convolution followed by two 1×1 stages of widths `mlp`, ReLU after each.
    MlpConv {
        out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        mlp: [usize; 2],
    },
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Gap,
    Fc {
        out: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Lrn(LrnParams),
    SoftmaxHead,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::MlpConv { .. } => "mlpconv",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Gap => "gap",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Lrn(_) => "lrn",
            LayerSpec::SoftmaxHead => "softmax_head",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::MlpConv { .. } | LayerSpec::Conv { .. } | LayerSpec::Fc { .. })
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut parts = text.split_whitespace();
        let kind = parts.next().ok_or("empty layer description")?;
        let mut fields = std::collections::BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| format!("expected key=value, got {p:?}"))?;
            fields.insert(k, v);
        }
        let take = |key: &str| -> std::result::Result<&str, String> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| format!("{kind} layer is missing `{key}`"))
        };
        let int = |key: &str| -> std::result::Result<usize, String> {
            take(key)?.parse().map_err(|_| format!("bad integer for `{key}`"))
        };
        let real = |key: &str| -> std::result::Result<f64, String> {
            take(key)?.parse().map_err(|_| format!("bad number for `{key}`"))
        };
        let expect_fields = |names: &[&str]| -> std::result::Result<(), String> {
            match fields.keys().find(|k| !names.contains(k)) {
                Some(extra) => Err(format!("unknown field `{extra}` for {kind} layer")),
                None => Ok(()),
            }
        };
        let spec = match kind {
            "mlpconv" => {
                expect_fields(&["out", "kernel", "stride", "pad", "mlp"])?;
                let mlp: Vec<usize> = take("mlp")?
                    .split(',')
                    .map(|s| s.parse().map_err(|_| "bad mlp widths".to_string()))
                    .collect::<std::result::Result<_, _>>()?;
                let [a, b] = mlp[..] else {
                    return Err("mlp needs exactly two widths".into());
                };
                LayerSpec::MlpConv {
                    out: int("out")?,
                    kernel: int("kernel")?,
                    stride: int("stride")?,
                    pad: int("pad")?,
                    mlp: [a, b],
                }
            }
            "conv" => {
                expect_fields(&["out", "kernel", "stride", "pad"])?;
                LayerSpec::Conv {
                    out: int("out")?,
                    kernel: int("kernel")?,
                    stride: int("stride")?,
                    pad: int("pad")?,
                }
            }
            "maxpool" => {
                expect_fields(&["window", "stride"])?;
                LayerSpec::MaxPool {
                    window: int("window")?,
                    stride: int("stride")?,
                }
            }
            "gap" => {
                expect_fields(&[])?;
                LayerSpec::Gap
            }
            "fc" => {
                expect_fields(&["out"])?;
                LayerSpec::Fc { out: int("out")? }
            }
            "relu" => {
                expect_fields(&[])?;
                LayerSpec::Relu
            }
            "dropout" => {
                expect_fields(&["rate"])?;
                LayerSpec::Dropout { rate: real("rate")? }
            }
            "lrn" => {
                expect_fields(&["n", "k", "alpha", "beta"])?;
                LayerSpec::Lrn(LrnParams {
                    n: int("n")?,
                    k: real("k")?,
                    alpha: real("alpha")?,
                    beta: real("beta")?,
                })
            }
            "softmax_head" => {
                expect_fields(&[])?;
                LayerSpec::SoftmaxHead
            }
            other => return Err(format!("unknown layer kind {other:?}")),
        };
        Ok(spec)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::MlpConv {
                out,
                kernel,
                stride,
                pad,
                mlp,
            } => write!(
                f,
                "mlpconv out={out} kernel={kernel} stride={stride} pad={pad} mlp={},{}",
                mlp[0], mlp[1]
            ),
            LayerSpec::Conv {
                out,
                kernel,
                stride,
                pad,
            } => write!(f, "conv out={out} kernel={kernel} stride={stride} pad={pad}"),
            LayerSpec::MaxPool { window, stride } => write!(f, "maxpool window={window} stride={stride}"),
            LayerSpec::Fc { out } => write!(f, "fc out={out}"),
            LayerSpec::Dropout { rate } => write!(f, "dropout rate={rate}"),
            LayerSpec::Lrn(p) => write!(f, "lrn n={} k={} alpha={} beta={}", p.n, p.k, p.alpha, p.beta),
            other => f.write_str(other.kind()),
        }
    }
}

/// Activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Map { c, h, w } => vec![c, h, w],
            ActShape::Flat(n) => vec![n],
        }
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One weighted layer's parameter tensors, by name and shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub layer: usize,
    pub name: String,
    /// `(tensor name, shape, fan_in)`; a fan-in of 0 marks a bias.
    pub tensors: Vec<(String, Vec<usize>, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    /// `(3, H, W)`
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub class_names: Vec<String>,
    /// Per-channel mean subtracted from inputs before the first layer.
    pub input_mean: Option<[f64; 3]>,
    /// Factor applied after mean subtraction; 255 puts `[0, 1]` pixels on
    /// the 8-bit scale the LRN constants were tuned for.
    pub input_scale: f64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl ModelSpec {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Output shape of every layer, validating the whole chain.
    pub fn trace(&self) -> Result<Vec<ActShape>> {
        let [c, h, w] = self.input_shape;
        if c != 3 || h == 0 || w == 0 {
            return Err(bad(format!("input must be 3×H×W, got {:?}", self.input_shape)));
        }
        if self.class_names.len() < 2 {
            return Err(bad("a model needs at least two classes"));
        }
        for (i, name) in self.class_names.iter().enumerate() {
            if name.is_empty() || name.contains('\n') {
                return Err(bad(format!("class {i} has an invalid name {name:?}")));
            }
            if self.class_names[..i].contains(name) {
                return Err(bad(format!("duplicate class name {name:?}")));
            }
        }
        let mut cur = ActShape::Map { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |why: String| bad(format!("layer {i} ({layer}): {why}"));
            let spatial = |k: usize, s: usize, p: usize, h: usize, w: usize| {
                match (conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)) {
                    (Some(a), Some(b)) => Ok((a, b)),
                    _ => Err(fail(format!("no output on a {h}×{w} map"))),
                }
            };
            cur = match (layer, cur) {
                (
                    LayerSpec::MlpConv {
                        out,
                        kernel,
                        stride,
                        pad,
                        mlp,
                    },
                    ActShape::Map { h, w, .. },
                ) => {
                    if *out == 0 || mlp.contains(&0) || *stride == 0 {
                        return Err(fail("widths and stride must be positive".into()));
                    }
                    let (oh, ow) = spatial(*kernel, *stride, *pad, h, w)?;
                    ActShape::Map { c: mlp[1], h: oh, w: ow }
                }
                (
                    LayerSpec::Conv {
                        out,
                        kernel,
                        stride,
                        pad,
                    },
                    ActShape::Map { h, w, .. },
                ) => {
                    if *out == 0 || *stride == 0 {
                        return Err(fail("width and stride must be positive".into()));
                    }
                    let (oh, ow) = spatial(*kernel, *stride, *pad, h, w)?;
                    ActShape::Map { c: *out, h: oh, w: ow }
                }
                (LayerSpec::MaxPool { window, stride }, ActShape::Map { c, h, w }) => {
                    match (pool_output_size(h, *window, *stride), pool_output_size(w, *window, *stride)) {
                        (Some(oh), Some(ow)) => ActShape::Map { c, h: oh, w: ow },
                        _ => return Err(fail(format!("window does not fit a {h}×{w} map"))),
                    }
                }
                (LayerSpec::Gap, ActShape::Map { c, .. }) => ActShape::Flat(c),
                (LayerSpec::Fc { out }, s) => {
                    if *out == 0 || s.is_empty() {
                        return Err(fail("empty fully-connected layer".into()));
                    }
                    ActShape::Flat(*out)
                }
                (LayerSpec::Lrn(p), s @ ActShape::Map { .. }) => {
                    p.validate().map_err(|e| fail(e.to_string()))?;
                    s
                }
                (LayerSpec::Dropout { rate }, s) => {
                    check_dropout_rate(*rate).map_err(|e| fail(e.to_string()))?;
                    s
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::SoftmaxHead, s) => {
                    if i + 1 != self.layers.len() {
                        return Err(fail("softmax head must be the last layer".into()));
                    }
                    if s != ActShape::Flat(self.num_classes()) {
                        return Err(fail(format!(
                            "softmax head expects {} logits, got {:?}",
                            self.num_classes(),
                            s
                        )));
                    }
                    s
                }
                (_, ActShape::Flat(_)) => return Err(fail("needs a spatial feature map".into())),
            };
            out.push(cur);
        }
        if self.layers.last() != Some(&LayerSpec::SoftmaxHead) {
            return Err(bad("the last layer must be the softmax head"));
        }
        if let Some(mean) = self.input_mean {
            if mean.iter().any(|m| !m.is_finite()) {
                return Err(bad("input mean must be finite"));
            }
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(bad(format!("input scale must be positive, got {}", self.input_scale)));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.trace().map(|_| ())
    }

    /// Output side length after each convolution, MLPconv and pooling layer.
    pub fn spatial_trace(&self) -> Result<Vec<usize>> {
        let trace = self.trace()?;
        Ok(self
            .layers
            .iter()
            .zip(&trace)
            .filter(|(l, _)| matches!(l, LayerSpec::MlpConv { .. } | LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }))
            .filter_map(|(_, s)| match s {
                ActShape::Map { h, .. } => Some(*h),
                ActShape::Flat(_) => None,
            })
            .collect())
    }

    /// Shape of the map entering global average pooling, if the network has one.
    pub fn feature_map_shape(&self) -> Result<Option<ActShape>> {
        let trace = self.trace()?;
        Ok(self
            .layers
            .iter()
            .position(|l| *l == LayerSpec::Gap)
            .map(|i| if i == 0 { self.input_act() } else { trace[i - 1] }))
    }

    fn input_act(&self) -> ActShape {
        let [c, h, w] = self.input_shape;
        ActShape::Map { c, h, w }
    }

    /// Parameter groups in layer order. Convolution-type layers are numbered
    /// together (`mlpconv1`, `mlpconv2`, `mlpconv3`, `conv4`, ...).
    pub fn param_groups(&self) -> Result<Vec<ParamGroup>> {
        let trace = self.trace()?;
        let mut groups = Vec::new();
        let mut conv_ordinal = 0;
        let mut fc_ordinal = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { self.input_act() } else { trace[i - 1] };
            let in_ch = match input {
                ActShape::Map { c, .. } => c,
                ActShape::Flat(n) => n,
            };
            let conv = |prefix: &str, out: usize, inp: usize, k: usize| {
                vec![
                    (format!("{prefix}.weight"), vec![out, inp, k, k], inp * k * k),
                    (format!("{prefix}.bias"), vec![out], 0),
                ]
            };
            match *layer {
                LayerSpec::MlpConv {
                    out, kernel, mlp, ..
                } => {
                    conv_ordinal += 1;
                    let name = format!("mlpconv{conv_ordinal}");
                    let mut tensors = conv(&format!("{name}.base"), out, in_ch, kernel);
                    tensors.extend(conv(&format!("{name}.mlp1"), mlp[0], out, 1));
                    tensors.extend(conv(&format!("{name}.mlp2"), mlp[1], mlp[0], 1));
                    groups.push(ParamGroup {
                        layer: i,
                        name,
                        tensors,
                    });
                }
                LayerSpec::Conv { out, kernel, .. } => {
                    conv_ordinal += 1;
                    let name = format!("conv{conv_ordinal}");
                    groups.push(ParamGroup {
                        layer: i,
                        tensors: conv(&name, out, in_ch, kernel),
                        name,
                    });
                }
                LayerSpec::Fc { out } => {
                    fc_ordinal += 1;
                    let name = if fc_ordinal == 1 {
                        "fc".to_string()
                    } else {
                        format!("fc{fc_ordinal}")
                    };
                    let n = input.len();
                    groups.push(ParamGroup {
                        layer: i,
                        tensors: vec![
                            (format!("{name}.weight"), vec![out, n], n),
                            (format!("{name}.bias"), vec![out], 0),
                        ],
                        name,
                    });
                }
                _ => {}
            }
        }
        Ok(groups)
    }

    /// Canonical `key = value` text form.
    pub fn to_text(&self) -> String {
        let [c, h, w] = self.input_shape;
        let mut pairs: Vec<(String, String)> = vec![
            ("input".into(), format!("{c} {h} {w}")),
            ("classes".into(), self.class_names.len().to_string()),
        ];
        for (i, name) in self.class_names.iter().enumerate() {
            pairs.push((format!("class.{i}"), name.clone()));
        }
        if let Some([r, g, b]) = self.input_mean {
            pairs.push(("mean".into(), format!("{r} {g} {b}")));
        }
        if self.input_scale != 1.0 {
            pairs.push(("input_scale".into(), self.input_scale.to_string()));
        }
        pairs.push(("layers".into(), self.layers.len().to_string()));
        for (i, l) in self.layers.iter().enumerate() {
            pairs.push((format!("layer.{i}"), l.to_string()));
        }
        kv::render(pairs.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let entries = kv::parse(text, Path::new("<model spec>"))?;
        let mut input = None;
        let mut classes: Option<usize> = None;
        let mut n_layers: Option<usize> = None;
        let mut mean = None;
        let mut scale = 1.0;
        let mut names: Vec<(usize, String)> = Vec::new();
        let mut layers: Vec<(usize, LayerSpec)> = Vec::new();
        let perr = |line: usize, reason: String| Error::Parse {
            path: "<model spec>".into(),
            line,
            reason,
        };
        let nums = |v: &str| -> Option<Vec<f64>> { v.split_whitespace().map(|s| s.parse().ok()).collect() };
        for e in &entries {
            match e.key.as_str() {
                "input" => {
                    let v: Vec<usize> = e
                        .value
                        .split_whitespace()
                        .map(|s| s.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| perr(e.line, "bad input shape".into()))?;
                    let [c, h, w] = v[..] else {
                        return Err(perr(e.line, "input needs three dimensions".into()));
                    };
                    input = Some([c, h, w]);
                }
                "classes" => classes = Some(e.value.parse().map_err(|_| perr(e.line, "bad class count".into()))?),
                "layers" => n_layers = Some(e.value.parse().map_err(|_| perr(e.line, "bad layer count".into()))?),
                "input_scale" => scale = e.value.parse().map_err(|_| perr(e.line, "bad input scale".into()))?,
                "mean" => match nums(&e.value).as_deref() {
                    Some(&[r, g, b]) => mean = Some([r, g, b]),
                    _ => return Err(perr(e.line, "mean needs three numbers".into())),
                },
                key => {
                    if let Some(idx) = key.strip_prefix("class.") {
                        let idx = idx.parse().map_err(|_| perr(e.line, format!("bad key {key}")))?;
                        names.push((idx, e.value.clone()));
                    } else if let Some(idx) = key.strip_prefix("layer.") {
                        let idx = idx.parse().map_err(|_| perr(e.line, format!("bad key {key}")))?;
                        layers.push((idx, LayerSpec::parse(&e.value).map_err(|r| perr(e.line, r))?));
                    } else {
                        return Err(perr(e.line, format!("unknown key {key:?}")));
                    }
                }
            }
        }
        let input_shape = input.ok_or_else(|| bad("missing `input`"))?;
        let dense = |idx: Vec<usize>, expect: Option<usize>, what: &str| -> Result<()> {
            let want = expect.ok_or_else(|| bad(format!("missing {what} count")))?;
            if idx.len() != want || idx.iter().enumerate().any(|(i, &j)| i != j) {
                return Err(bad(format!("{what} entries must be numbered 0..{want} in order")));
            }
            Ok(())
        };
        dense(names.iter().map(|(i, _)| *i).collect(), classes, "class")?;
        dense(layers.iter().map(|(i, _)| *i).collect(), n_layers, "layer")?;
        let spec = ModelSpec {
            input_shape,
            layers: layers.into_iter().map(|(_, l)| l).collect(),
            class_names: names.into_iter().map(|(_, n)| n).collect(),
            input_mean: mean,
            input_scale: scale,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// First-layer `(kernel, stride)` options, tried in order until the chain fits.
pub const FIRST_CONV_CANDIDATES: [(usize, usize); 3] = [(11, 4), (5, 2), (3, 1)];

/// Builder for the DeepSpace network family.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepSpaceConfig {
    pub num_classes: usize,
    pub input_side: usize,
    /// Output widths of MLPconv1..3, conv4 and conv5.
    pub widths: [usize; 5],
    /// `(kernel, stride)` of the first convolution; chosen from
    /// [`FIRST_CONV_CANDIDATES`] when `None`.
    pub first_conv: Option<(usize, usize)>,
    pub lrn: Option<LrnParams>,
    pub dropout: f64,
    pub input_scale: f64,
    pub class_names: Option<Vec<String>>,
}

impl DeepSpaceConfig {
    pub const CANONICAL_WIDTHS: [usize; 5] = [96, 256, 384, 512, 512];
    pub const REDUCED_WIDTHS: [usize; 5] = [8, 16, 16, 24, 24];
    pub const REDUCED_DROPOUT: f64 = 0.1;

    pub fn new(num_classes: usize, input_side: usize) -> Self {
        Self {
            num_classes,
            input_side,
            widths: Self::CANONICAL_WIDTHS,
            first_conv: None,
            lrn: Some(LrnParams::default()),
            dropout: 0.5,
            input_scale: 255.0,
            class_names: None,
        }
    }

    /// Desk-scale widths 8/16/16/24/24. Dropout drops to 0.1: at these widths
    /// a rate of 0.5 leaves eval-mode activations far from anything seen in
    /// training.
    pub fn reduced(num_classes: usize, input_side: usize) -> Self {
        Self {
            widths: Self::REDUCED_WIDTHS,
            dropout: Self::REDUCED_DROPOUT,
            ..Self::new(num_classes, input_side)
        }
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = Some(names);
        self
    }

    fn layers_with(&self, (k1, s1): (usize, usize)) -> Vec<LayerSpec> {
        let [w1, w2, w3, w4, w5] = self.widths;
        let mut layers = vec![LayerSpec::MlpConv {
            out: w1,
            kernel: k1,
            stride: s1,
            pad: 0,
            mlp: [w1, w1],
        }];
        let regularize = |layers: &mut Vec<LayerSpec>| {
            layers.push(LayerSpec::MaxPool { window: 3, stride: 2 });
            if let Some(p) = self.lrn {
                layers.push(LayerSpec::Lrn(p));
            }
            if self.dropout > 0.0 {
                layers.push(LayerSpec::Dropout { rate: self.dropout });
            }
        };
        regularize(&mut layers);
        layers.push(LayerSpec::MlpConv {
            out: w2,
            kernel: 5,
            stride: 1,
            pad: 2,
            mlp: [w2, w2],
        });
        regularize(&mut layers);
        layers.extend([
            LayerSpec::MlpConv {
                out: w3,
                kernel: 3,
                stride: 1,
                pad: 1,
                mlp: [w3, w3],
            },
            LayerSpec::Conv {
                out: w4,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Conv {
                out: w5,
                kernel: 3,
                stride: 1,
                pad: 0,
            },
            LayerSpec::Relu,
            LayerSpec::Gap,
            LayerSpec::Fc { out: self.num_classes },
            LayerSpec::SoftmaxHead,
        ]);
        layers
    }

    pub fn build(&self) -> Result<ModelSpec> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "need at least two classes, got {}",
                self.num_classes
            )));
        }
        let class_names = match &self.class_names {
            Some(n) if n.len() != self.num_classes => {
                return Err(Error::invalid(format!(
                    "{} class names for {} classes",
                    n.len(),
                    self.num_classes
                )))
            }
            Some(n) => n.clone(),
            None => (0..self.num_classes).map(|i| format!("class_{i}")).collect(),
        };
        let candidates: Vec<(usize, usize)> = match self.first_conv {
            Some(fc) => vec![fc],
            None => FIRST_CONV_CANDIDATES.to_vec(),
        };
        let mut last_err = None;
        for geom in candidates {
            let spec = ModelSpec {
                input_shape: [3, self.input_side, self.input_side],
                layers: self.layers_with(geom),
                class_names: class_names.clone(),
                input_mean: None,
                input_scale: self.input_scale,
            };
            match spec.validate() {
                Ok(()) => return Ok(spec),
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::invalid(format!(
            "input side {} is too small for the network: {}",
            self.input_side,
            last_err.expect("at least one candidate")
        )))
    }
}

/// The DeepSpace network with canonical widths. At side 227 the first layer
/// is the 11×11 stride-4 MLPconv; smaller sides fall back to a smaller first
/// kernel so every map stays at least 1×1.
pub fn deepspace_spec(num_classes: usize, input_side: usize) -> Result<ModelSpec> {
    DeepSpaceConfig::new(num_classes, input_side).build()
}
