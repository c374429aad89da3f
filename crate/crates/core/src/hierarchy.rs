//! Two-level place prediction: a building-level model picks a segment, and a
//! room-level model registered for that segment refines it.
//!
//! Config file:
//!
//! ```text
//! level1 = building.dsw
//! route.7 = building7_rooms.dsw
//! min_confidence = 0.0
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{preprocess, ImageRecord};
use crate::error::{Error, Result};
use crate::kv;
use crate::model::{load, ModelState};
use crate::training::ranked_classes;

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    pub level1: PathBuf,
    /// Level-1 class index → level-2 model path.
    pub routes: BTreeMap<usize, PathBuf>,
    /// Refine only when the level-1 confidence reaches this value.
    pub min_confidence: f64,
}

impl HierarchyConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let base = origin.parent().unwrap_or(Path::new(""));
        let err = |line, reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        let mut level1 = None;
        let mut routes = BTreeMap::new();
        let mut min_confidence = 0.0;
        for e in kv::parse(text, origin)? {
            if e.key == "level1" {
                if level1.replace(base.join(&e.value)).is_some() {
                    return Err(err(e.line, "level1 given twice".into()));
                }
            } else if let Some(idx) = e.key.strip_prefix("route.") {
                let idx: usize = idx.parse().map_err(|_| err(e.line, format!("bad route index {idx:?}")))?;
                if routes.insert(idx, base.join(&e.value)).is_some() {
                    return Err(err(e.line, format!("route {idx} given twice")));
                }
            } else if e.key == "min_confidence" {
                min_confidence = e
                    .value
                    .parse()
                    .ok()
                    .filter(|c: &f64| (0.0..=1.0).contains(c))
                    .ok_or_else(|| err(e.line, format!("min_confidence must be in [0, 1], got {:?}", e.value)))?;
            } else {
                return Err(err(e.line, format!("unknown key {:?}", e.key)));
            }
        }
        let level1 = level1.ok_or_else(|| err(text.lines().count().max(1), "missing level1".into()))?;
        Ok(Self {
            level1,
            routes,
            min_confidence,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelPrediction {
    pub class_index: usize,
    pub class_name: String,
    pub confidence: f64,
    /// Up to five `(class index, name, probability)`, most probable first.
    pub top5: Vec<(usize, String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacePrediction {
    pub level1: LevelPrediction,
    pub level2: Option<LevelPrediction>,
    /// Level-1 name, or `level1/level2` when refined.
    pub composite_label: String,
}

#[derive(Clone, Debug)]
pub struct Hierarchy {
    level1: ModelState<f32>,
    routes: BTreeMap<usize, ModelState<f32>>,
    min_confidence: f64,
}

impl Hierarchy {
    pub fn new(level1: ModelState<f32>, routes: BTreeMap<usize, ModelState<f32>>, min_confidence: f64) -> Result<Self> {
        if let Some(&bad) = routes.keys().find(|&&k| k >= level1.num_classes()) {
            return Err(Error::invalid(format!(
                "route {bad} out of range for {} level-1 classes",
                level1.num_classes()
            )));
        }
        if !(0.0..=1.0).contains(&min_confidence) {
            return Err(Error::invalid(format!("min_confidence {min_confidence} outside [0, 1]")));
        }
        Ok(Self {
            level1,
            routes,
            min_confidence,
        })
    }

    pub fn load(cfg: &HierarchyConfig) -> Result<Self> {
        let level1 = load(&cfg.level1)?;
        let routes = cfg
            .routes
            .iter()
            .map(|(&k, p)| Ok((k, load(p)?)))
            .collect::<Result<_>>()?;
        Self::new(level1, routes, cfg.min_confidence)
    }

    pub fn level1(&self) -> &ModelState<f32> {
        &self.level1
    }

    pub fn route(&self, class_index: usize) -> Option<&ModelState<f32>> {
        self.routes.get(&class_index)
    }

    pub fn predict(&self, img: &ImageRecord) -> Result<PlacePrediction> {
        let level1 = classify(&self.level1, img)?;
        let level2 = match self.routes.get(&level1.class_index) {
            Some(m) if level1.confidence >= self.min_confidence => Some(classify(m, img)?),
            _ => None,
        };
        let composite_label = match &level2 {
            Some(l2) => format!("{}/{}", level1.class_name, l2.class_name),
            None => level1.class_name.clone(),
        };
        Ok(PlacePrediction {
            level1,
            level2,
            composite_label,
        })
    }
}

/// Eval-mode prediction of a single model on a raw image.
pub fn classify(model: &ModelState<f32>, img: &ImageRecord) -> Result<LevelPrediction> {
    let side = model.spec().input_shape[1];
    let x = preprocess::<f32>(&img.pixels, side)?;
    let probs = model.infer(&x)?.probs;
    let names = model.class_names();
    let top5: Vec<_> = ranked_classes(probs.data())
        .into_iter()
        .take(5)
        .map(|i| (i, names[i].clone(), probs.data()[i] as f64))
        .collect();
    let (class_index, class_name, confidence) = top5[0].clone();
    Ok(LevelPrediction {
        class_index,
        class_name,
        confidence,
        top5,
    })
}

pub fn predict_place(cfg: &HierarchyConfig, img: &ImageRecord) -> Result<PlacePrediction> {
    Hierarchy::load(cfg)?.predict(img)
}
