//! Misclassification analysis over a prediction log, plus first-layer filter
//! visualization.
//!
//! The log is one `<true-index> <predicted-index>` pair per line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_image;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn parse_prediction_log(text: &str, origin: &Path) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            reason: format!("expected `<true> <predicted>`, got {line:?}"),
        };
        let mut it = line.split_whitespace();
        let (Some(t), Some(p), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad());
        };
        out.push((t.parse().map_err(|_| bad())?, p.parse().map_err(|_| bad())?));
    }
    Ok(out)
}

pub fn render_prediction_log(records: &[(usize, usize)]) -> String {
    records.iter().map(|(t, p)| format!("{t} {p}\n")).collect()
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

pub fn build_confusion(records: &[(usize, usize)], class_names: &[String]) -> Result<ConfusionMatrix> {
    let n = class_names.len();
    let mut counts = vec![vec![0; n]; n];
    for (i, &(t, p)) in records.iter().enumerate() {
        if t >= n || p >= n {
            return Err(Error::invalid(format!("record {i} ({t}, {p}) out of range for {n} classes")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: class_names.to_vec(),
    })
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn top1(&self) -> f64 {
        let hits: u64 = (0..self.num_classes()).map(|i| self.counts[i][i]).sum();
        hits as f64 / self.total() as f64
    }

    pub fn recall(&self, class: usize) -> f64 {
        self.counts[class][class] as f64 / self.row_sum(class) as f64
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.class_names, |i, j| self.counts[i][j].to_string())
    }
}

/// Row-normalized confusion with the diagonal zeroed: `rates[i][j]` is the
/// fraction of class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MisclassMatrix {
    pub rates: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
}

pub fn normalize_misclass(cm: &ConfusionMatrix) -> Result<MisclassMatrix> {
    let n = cm.num_classes();
    let mut rates = vec![vec![0.0; n]; n];
    for (i, row) in rates.iter_mut().enumerate() {
        let total = cm.row_sum(i);
        if total == 0 {
            return Err(Error::invalid(format!("class {:?} has no evaluated samples", cm.class_names[i])));
        }
        for (j, r) in row.iter_mut().enumerate() {
            if j != i {
                *r = cm.counts[i][j] as f64 / total as f64;
            }
        }
    }
    Ok(MisclassMatrix {
        rates,
        class_names: cm.class_names.clone(),
    })
}

impl MisclassMatrix {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.class_names, |i, j| format!("{:.6}", self.rates[i][j]))
    }
}

fn matrix_csv(names: &[String], cell: impl Fn(usize, usize) -> String) -> String {
    let mut s = String::from("true\\predicted");
    for n in names {
        s.push(',');
        s.push_str(&csv_field(n));
    }
    s.push('\n');
    for (i, n) in names.iter().enumerate() {
        s.push_str(&csv_field(n));
        for j in 0..names.len() {
            s.push(',');
            s.push_str(&cell(i, j));
        }
        s.push('\n');
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mutual confusion of classes `a < b`: `rates[a][b] + rates[b][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Every unordered pair, most similar first, ties in `(a, b)` order.
pub fn rank_similar_pairs(mm: &MisclassMatrix) -> Vec<SimilarityPair> {
    let n = mm.num_classes();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            pairs.push(SimilarityPair {
                a,
                b,
                score: mm.rates[a][b] + mm.rates[b][a],
            });
        }
    }
    pairs.sort_by(|x, y| y.score.total_cmp(&x.score).then((x.a, x.b).cmp(&(y.a, y.b))));
    pairs
}

pub fn pairs_to_csv(pairs: &[SimilarityPair], names: &[String]) -> String {
    let mut s = String::from("rank,a,b,name_a,name_b,score\n");
    for (r, p) in pairs.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6}",
            r + 1,
            p.a,
            p.b,
            csv_field(&names[p.a]),
            csv_field(&names[p.b]),
            p.score
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistinctivenessScore {
    pub class: usize,
    /// Fraction of the class predicted as something else.
    pub fn_rate: f64,
    /// Column sum of other classes' rates into this one.
    pub fp_rate: f64,
    pub confusion_sum: f64,
}

/// Per-class scores, most distinctive (lowest `confusion_sum`) first; ties by
/// class index.
pub fn distinctiveness(mm: &MisclassMatrix) -> Vec<DistinctivenessScore> {
    let n = mm.num_classes();
    let mut out: Vec<_> = (0..n)
        .map(|c| {
            let fn_rate: f64 = (0..n).filter(|&j| j != c).map(|j| mm.rates[c][j]).sum();
            let fp_rate: f64 = (0..n).filter(|&i| i != c).map(|i| mm.rates[i][c]).sum();
            DistinctivenessScore {
                class: c,
                fn_rate,
                fp_rate,
                confusion_sum: fn_rate + fp_rate,
            }
        })
        .collect();
    out.sort_by(|x, y| x.confusion_sum.total_cmp(&y.confusion_sum).then(x.class.cmp(&y.class)));
    out
}

pub fn distinctiveness_to_csv(scores: &[DistinctivenessScore], names: &[String]) -> String {
    let mut s = String::from("rank,class,name,fn_rate,fp_rate,confusion_sum\n");
    for (r, d) in scores.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6}",
            r + 1,
            d.class,
            csv_field(&names[d.class]),
            d.fn_rate,
            d.fp_rate,
            d.confusion_sum
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub threshold: f64,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<SimilarityPair>,
}

/// All classes as nodes; pairs scoring at least `threshold` as edges.
pub fn similarity_graph(pairs: &[SimilarityPair], names: &[String], threshold: f64) -> Result<SimilarityGraph> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!("threshold {threshold} must be ≥ 0")));
    }
    Ok(SimilarityGraph {
        threshold,
        nodes: names
            .iter()
            .enumerate()
            .map(|(id, n)| GraphNode { id, name: n.clone() })
            .collect(),
        edges: pairs
            .iter()
            .filter(|p| p.score >= threshold && p.score > 0.0)
            .cloned()
            .collect(),
    })
}

impl SimilarityGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// Graphviz: edge `penwidth` grows with the score.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph similarity {\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  n{} [label={:?}];", n.id, n.name);
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  n{} -- n{} [weight={:.6}, penwidth={:.3}, label=\"{:.6}\"];",
                e.a,
                e.b,
                e.score,
                1.0 + 4.0 * e.score,
                e.score
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Writes `<stem>.json` and `<stem>.dot`.
pub fn export_similarity_graph(
    pairs: &[SimilarityPair],
    names: &[String],
    threshold: f64,
    stem: &Path,
) -> Result<SimilarityGraph> {
    let g = similarity_graph(pairs, names, threshold)?;
    for (ext, body) in [("json", g.to_json()), ("dot", g.to_dot())] {
        let path = stem.with_extension(ext);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(g)
}

pub const GRID_COLUMNS: usize = 12;

/// First-layer kernels (`k × 3 × h × w`) as RGB tiles, each min-max normalized
/// on its own (flat kernels become 0.5), laid out 12 per row with 1-pixel
/// black separators.
pub fn filter_grid<T: Real>(kernels: &Tensor<T>) -> Result<Tensor<f32>> {
    let [k, 3, kh, kw] = *kernels.shape() else {
        return Err(Error::InvalidShape {
            shape: kernels.shape().to_vec(),
            reason: "expected k×3×h×w kernels".into(),
        });
    };
    if k == 0 {
        return Err(Error::invalid("no kernels to draw"));
    }
    let cols = GRID_COLUMNS.min(k);
    let rows = k.div_ceil(cols);
    let (gh, gw) = (rows * kh + rows + 1, cols * kw + cols + 1);
    let mut out = Tensor::zeros(vec![3, gh, gw])?;
    let px = out.data_mut();
    let tile = 3 * kh * kw;
    for (i, kernel) in kernels.data().chunks(tile).enumerate() {
        let lo = kernel.iter().fold(f64::INFINITY, |a, v| a.min(v.to_f64_lossy()));
        let hi = kernel.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64_lossy()));
        let (top, left) = (1 + (i / cols) * (kh + 1), 1 + (i % cols) * (kw + 1));
        for c in 0..3 {
            for y in 0..kh {
                for x in 0..kw {
                    let v = kernel[c * kh * kw + y * kw + x].to_f64_lossy();
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    px[c * gh * gw + (top + y) * gw + left + x] = t as f32;
                }
            }
        }
    }
    Ok(out)
}

pub fn export_filter_grid<T: Real>(kernels: &Tensor<T>, path: &Path) -> Result<Tensor<f32>> {
    let grid = filter_grid(kernels)?;
    write_image(&grid, path)?;
    Ok(grid)
}
