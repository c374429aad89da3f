//! Dataset inventory files.
//!
//! ```text
//! #split train
//! #class 0 building 7_L0
//! #class 1 building 7_L1
//! b7/img001.png 0
//! ```
//!
//! Entry paths are relative to the directory holding the manifest. The label
//! follows the last space, so paths may contain spaces.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Entry count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::invalid("manifest declares no classes"));
        }
        let mut names = HashSet::new();
        for n in &self.class_names {
            if n.is_empty() || n.contains('\n') || !names.insert(n) {
                return Err(Error::invalid(format!("bad or duplicate class name {n:?}")));
            }
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.label >= self.num_classes() {
                return Err(Error::invalid(format!(
                    "{}: label {} out of range for {} classes",
                    e.path.display(),
                    e.label,
                    self.num_classes()
                )));
            }
            if !seen.insert(&e.path) {
                return Err(Error::invalid(format!("duplicate path {}", e.path.display())));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#split {}\n", self.split);
        for (i, n) in self.class_names.iter().enumerate() {
            s.push_str(&format!("#class {i} {n}\n"));
        }
        for e in &self.entries {
            s.push_str(&format!("{} {}\n", e.path.display(), e.label));
        }
        s
    }

    /// Parses manifest text; `origin` names the file in errors and its parent
    /// directory becomes the root.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        let mut m = DatasetManifest {
            root: origin.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries: Vec::new(),
            class_names: Vec::new(),
            split: Split::Train,
        };
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#class ") {
                let (idx, name) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(ln, "expected `#class <index> <name>`".into()))?;
                let idx: usize = idx.parse().map_err(|_| err(ln, format!("bad class index {idx:?}")))?;
                if idx != m.class_names.len() {
                    return Err(err(ln, format!("class {idx} declared out of order")));
                }
                if m.class_names.iter().any(|n| n == name) {
                    return Err(err(ln, format!("duplicate class name {name:?}")));
                }
                m.class_names.push(name.to_string());
            } else if let Some(rest) = line.strip_prefix("#split ") {
                m.split = rest.trim().parse().map_err(|e: Error| err(ln, e.to_string()))?;
            } else if line.starts_with('#') {
                continue;
            } else {
                let (path, label) = line
                    .rsplit_once(' ')
                    .ok_or_else(|| err(ln, "expected `<path> <label>`".into()))?;
                let label: usize = label.parse().map_err(|_| err(ln, format!("bad label {label:?}")))?;
                if path.is_empty() {
                    return Err(err(ln, "empty path".into()));
                }
                if label >= m.class_names.len() {
                    return Err(err(
                        ln,
                        format!("label {label} out of range for {} declared classes", m.class_names.len()),
                    ));
                }
                if !seen.insert(path.to_string()) {
                    return Err(err(ln, format!("duplicate path {path:?}")));
                }
                m.entries.push(ManifestEntry {
                    path: PathBuf::from(path),
                    label,
                });
            }
        }
        if m.class_names.is_empty() {
            return Err(err(text.lines().count().max(1), "manifest declares no classes".into()));
        }
        Ok(m)
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text, path)
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.validate()?;
    std::fs::write(path, m.to_text()).map_err(|e| Error::io(path, e))
}

/// Moves exactly `per_class` randomly chosen entries of every class into a
/// validation manifest. Relative order is preserved on both sides.
pub fn split_validation(
    m: &DatasetManifest,
    per_class: usize,
    rng: &mut Rng,
) -> Result<(DatasetManifest, DatasetManifest)> {
    m.validate()?;
    let mut to_val = vec![false; m.entries.len()];
    if per_class > 0 {
        for class in 0..m.num_classes() {
            let mut idx: Vec<usize> = (0..m.entries.len()).filter(|&i| m.entries[i].label == class).collect();
            if idx.len() <= per_class {
                return Err(Error::invalid(format!(
                    "class {:?} has {} entries, needs more than {per_class} for validation",
                    m.class_names[class],
                    idx.len()
                )));
            }
            // partial Fisher–Yates: the first per_class slots are the sample
            for k in 0..per_class {
                let j = k + rng.below(idx.len() - k);
                idx.swap(k, j);
                to_val[idx[k]] = true;
            }
        }
    }
    let pick = |want: bool, split| DatasetManifest {
        root: m.root.clone(),
        entries: m
            .entries
            .iter()
            .zip(&to_val)
            .filter(|(_, &v)| v == want)
            .map(|(e, _)| e.clone())
            .collect(),
        class_names: m.class_names.clone(),
        split,
    };
    Ok((pick(false, Split::Train), pick(true, Split::Val)))
}
