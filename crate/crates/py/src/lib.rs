//! Python bindings. Images are passed as file paths; tensors come back as
//! nested lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use deepspace::analysis::{build_confusion, distinctiveness, normalize_misclass, rank_similar_pairs};
use deepspace::cam::class_activation_map;
use deepspace::data::{blur_indicator, decode_image, load_manifest, preprocess, synth_generate, BlurConfig, Dataset};
use deepspace::hierarchy::{classify, Hierarchy, HierarchyConfig, LevelPrediction};
use deepspace::model::{load, save, DeepSpaceConfig};
use deepspace::training::{lr_at, train, TrainConfig};
use deepspace::{Error, ModelState, Rng};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for deepspace::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn level_dict<'py>(py: Python<'py>, p: &LevelPrediction) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("class_index", p.class_index)?;
    d.set_item("class_name", &p.class_name)?;
    d.set_item("confidence", p.confidence)?;
    d.set_item("top5", p.top5.clone())?;
    Ok(d)
}

fn grid(data: &[f64], w: usize) -> Vec<Vec<f64>> {
    data.chunks(w).map(<[f64]>::to_vec).collect()
}

/// A single-precision DeepSpace network.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ModelState<f32>,
}

#[pymethods]
impl PyModel {
    /// Fresh network with random weights.
    #[new]
    #[pyo3(signature = (num_classes, input_side=227, reduced=false, seed=0))]
    fn new(num_classes: usize, input_side: usize, reduced: bool, seed: u64) -> PyResult<Self> {
        let cfg = if reduced {
            DeepSpaceConfig::reduced(num_classes, input_side)
        } else {
            DeepSpaceConfig::new(num_classes, input_side)
        };
        let inner = ModelState::init(cfg.build().py()?, &mut Rng::new(seed)).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save(&self.inner, &path).py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn input_side(&self) -> usize {
        self.inner.spec().input_shape[1]
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    /// Text form of the architecture.
    fn spec_text(&self) -> String {
        self.inner.spec().to_text()
    }

    /// Spatial side after every layer.
    fn spatial_trace(&self) -> PyResult<Vec<usize>> {
        self.inner.spec().spatial_trace().py()
    }

    fn num_parameters(&self) -> usize {
        self.inner.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Class probabilities for the image at `path`.
    fn probabilities(&self, path: PathBuf) -> PyResult<Vec<f64>> {
        let img = decode_image(&path).py()?;
        let x = preprocess::<f32>(&img.pixels, self.input_side()).py()?;
        let out = self.inner.infer(&x).py()?;
        Ok(out.probs.data().iter().map(|&p| f64::from(p)).collect())
    }

    /// Top prediction as a dict with `class_index`, `class_name`,
    /// `confidence` and `top5`.
    fn classify<'py>(&self, py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let img = decode_image(&path).py()?;
        level_dict(py, &classify(&self.inner, &img).py()?)
    }

    /// `(class_index, raw_grid)`; the grid is the un-upsampled map.
    #[pyo3(signature = (path, class_index=None))]
    fn cam(&self, path: PathBuf, class_index: Option<usize>) -> PyResult<(usize, Vec<Vec<f64>>)> {
        let img = decode_image(&path).py()?;
        let x = preprocess::<f32>(&img.pixels, self.input_side()).py()?;
        let cam = class_activation_map(&self.inner, &x, class_index).py()?;
        let w = cam.raw.shape()[1];
        let data: Vec<f64> = cam.raw.data().iter().map(|&v| f64::from(v)).collect();
        Ok((cam.class_index, grid(&data, w)))
    }

    fn __repr__(&self) -> String {
        format!("Model(num_classes={}, input_side={})", self.num_classes(), self.input_side())
    }
}

/// Two-level place classifier loaded from a routing config file.
#[pyclass(name = "Hierarchy")]
struct PyHierarchy {
    inner: Hierarchy,
}

#[pymethods]
impl PyHierarchy {
    #[new]
    fn new(config: PathBuf) -> PyResult<Self> {
        let cfg = HierarchyConfig::load(&config).py()?;
        Ok(Self {
            inner: Hierarchy::load(&cfg).py()?,
        })
    }

    fn routed_classes(&self) -> Vec<usize> {
        (0..self.inner.level1().num_classes())
            .filter(|&c| self.inner.route(c).is_some())
            .collect()
    }

    fn predict<'py>(&self, py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let img = decode_image(&path).py()?;
        let p = self.inner.predict(&img).py()?;
        let d = PyDict::new(py);
        d.set_item("composite_label", &p.composite_label)?;
        d.set_item("level1", level_dict(py, &p.level1)?)?;
        match &p.level2 {
            Some(l2) => d.set_item("level2", level_dict(py, l2)?)?,
            None => d.set_item("level2", py.None())?,
        }
        Ok(d)
    }
}

/// Step-decayed learning rate at `iteration`.
#[pyfunction]
#[pyo3(signature = (iteration, base_lr=1e-4, decay_factor=0.5, decay_every=2000))]
fn learning_rate(iteration: u64, base_lr: f64, decay_factor: f64, decay_every: u64) -> PyResult<f64> {
    let cfg = TrainConfig {
        base_lr,
        decay_factor,
        decay_every,
        ..TrainConfig::default()
    };
    cfg.validate().py()?;
    Ok(lr_at(&cfg, iteration))
}

/// Blur screening of the image at `path`.
#[pyfunction]
#[pyo3(signature = (path, threshold=0.45, edge_threshold=35.0))]
fn blur<'py>(py: Python<'py>, path: PathBuf, threshold: f64, edge_threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let img = decode_image(&path).py()?;
    let v = blur_indicator(&img.pixels, &BlurConfig { threshold, edge_threshold }).py()?;
    let d = PyDict::new(py);
    d.set_item("indicator", v.indicator)?;
    d.set_item("is_sharp", v.is_sharp)?;
    d.set_item("edge_points", v.edge_points)?;
    Ok(d)
}

/// Renders a synthetic room set and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, classes, per_class, side=256, seed=0))]
fn synth(out_dir: PathBuf, classes: usize, per_class: usize, side: usize, seed: u64) -> PyResult<PathBuf> {
    synth_generate(classes, per_class, &out_dir, side, &mut Rng::new(seed)).py()?;
    Ok(out_dir.join("manifest.txt"))
}

/// Trains on two manifests and saves the best model; returns the report rows
/// as `(iteration, loss, top1, top5, lr)`.
#[pyfunction]
#[pyo3(signature = (train_manifest, val_manifest, out_model, input_side=227, reduced=false,
                    iterations=10_000, base_lr=1e-4, batch_size=64, eval_every=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    train_manifest: PathBuf,
    val_manifest: PathBuf,
    out_model: PathBuf,
    input_side: usize,
    reduced: bool,
    iterations: u64,
    base_lr: f64,
    batch_size: usize,
    eval_every: u64,
    seed: u64,
) -> PyResult<Vec<(u64, f64, f64, f64, f64)>> {
    let tr = load_manifest(&train_manifest).py()?;
    let va = load_manifest(&val_manifest).py()?;
    if tr.class_names != va.class_names {
        return Err(PyValueError::new_err("training and validation manifests declare different classes"));
    }
    py.detach(|| {
        let train_set = Dataset::load(&tr, input_side)?;
        let val_set = Dataset::load(&va, input_side)?;
        let arch = if reduced {
            DeepSpaceConfig::reduced(tr.num_classes(), input_side)
        } else {
            DeepSpaceConfig::new(tr.num_classes(), input_side)
        };
        let mut spec = arch.with_class_names(tr.class_names.clone()).build()?;
        spec.input_mean = Some(train_set.channel_mean()?);
        let mut rng = Rng::new(seed);
        let model = ModelState::<f32>::init(spec, &mut rng)?;
        let cfg = TrainConfig {
            base_lr,
            batch_size,
            max_iterations: iterations,
            eval_every,
            seed: rng.fork().seed(),
            ..TrainConfig::default()
        };
        let (best, report) = train(model, &train_set, &val_set, &cfg, |_| {})?;
        save(&best, &out_model)?;
        Ok(report
            .records
            .iter()
            .map(|r| (r.iteration, r.loss, r.top1, r.top5, r.lr))
            .collect())
    })
    .py()
}

/// Misclassification analysis of `(true, predicted)` pairs.
#[pyfunction]
fn analyze<'py>(py: Python<'py>, records: Vec<(usize, usize)>, class_names: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let cm = build_confusion(&records, &class_names).py()?;
    let mm = normalize_misclass(&cm).py()?;
    let d = PyDict::new(py);
    d.set_item("top1", cm.top1())?;
    d.set_item("confusion", cm.counts.clone())?;
    d.set_item("misclass", mm.rates.clone())?;
    let pairs: Vec<(usize, usize, f64)> = rank_similar_pairs(&mm).iter().map(|p| (p.a, p.b, p.score)).collect();
    d.set_item("pairs", pairs)?;
    let dist: Vec<(usize, f64)> = distinctiveness(&mm).iter().map(|s| (s.class, s.confusion_sum)).collect();
    d.set_item("distinctiveness", dist)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "deepspace")]
fn deepspace_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyHierarchy>()?;
    m.add_function(wrap_pyfunction!(learning_rate, m)?)?;
    m.add_function(wrap_pyfunction!(blur, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    Ok(())
}
