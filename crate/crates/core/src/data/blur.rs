//! Haar-wavelet blur detection.
//!
//! The luma plane (0–255) is decomposed over three Haar levels. Each level's
//! edge map `E = sqrt(LH² + HL² + HH²)` is reduced to window maxima with
//! windows of 8, 4 and 2, so the three maps line up. A window is an edge point
//! when any level exceeds the edge threshold. Edge points whose strength grows
//! with scale, or peaks at level 2, are Roof/Gstep structures; those among them
//! with a weak level-1 response count as blurred.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::image::luma;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlurConfig {
    /// Images with an indicator below this are rejected.
    pub threshold: f64,
    /// Edge strength threshold on the 0–255 luma scale.
    pub edge_threshold: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self {
            threshold: 0.45,
            edge_threshold: 35.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlurVerdict {
    /// `1 − BlurExtent`; 1.0 when there are no Roof/Gstep edges.
    pub indicator: f64,
    pub is_sharp: bool,
    pub edge_points: usize,
    /// Dirac and Astep edges.
    pub sharp_edges: usize,
    /// Roof and Gstep edges.
    pub roof_gstep: usize,
    /// Roof/Gstep edges with a level-1 maximum below the edge threshold.
    pub blurred: usize,
}

struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

/// One orthonormal Haar step: returns `(LL, edge map)`, each half-size.
fn haar_level(p: &Plane) -> (Plane, Plane) {
    let (h, w) = (p.h / 2, p.w / 2);
    let mut ll = Vec::with_capacity(h * w);
    let mut e = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let a = p.v[2 * r * p.w + 2 * c];
            let b = p.v[2 * r * p.w + 2 * c + 1];
            let cc = p.v[(2 * r + 1) * p.w + 2 * c];
            let d = p.v[(2 * r + 1) * p.w + 2 * c + 1];
            ll.push((a + b + cc + d) / 2.0);
            let lh = (a + b - cc - d) / 2.0;
            let hl = (a - b + cc - d) / 2.0;
            let hh = (a - b - cc + d) / 2.0;
            e.push((lh * lh + hl * hl + hh * hh).sqrt());
        }
    }
    (Plane { h, w, v: ll }, Plane { h, w, v: e })
}

/// Maxima over `size × size` windows; windows at the border may be partial.
fn window_max(p: &Plane, size: usize) -> Vec<f64> {
    let (nh, nw) = (p.h.div_ceil(size), p.w.div_ceil(size));
    let mut out = vec![f64::NEG_INFINITY; nh * nw];
    for r in 0..p.h {
        for c in 0..p.w {
            let o = &mut out[(r / size) * nw + c / size];
            *o = o.max(p.v[r * p.w + c]);
        }
    }
    out
}

pub fn blur_indicator(img: &Tensor<f32>, cfg: &BlurConfig) -> Result<BlurVerdict> {
    let y = luma(img)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!("blur detection needs at least 8×8 pixels, got {h}×{w}")));
    }
    let (ch, cw) = (h - h % 8, w - w % 8);
    let mut plane = Plane {
        h: ch,
        w: cw,
        v: Vec::with_capacity(ch * cw),
    };
    for r in 0..ch {
        plane.v.extend(y[r * w..r * w + cw].iter().map(|&v| v as f64 * 255.0));
    }
    let mut maxima = Vec::with_capacity(3);
    for size in [8, 4, 2] {
        let (ll, edges) = haar_level(&plane);
        maxima.push(window_max(&edges, size));
        plane = ll;
    }
    let t = cfg.edge_threshold;
    let mut v = BlurVerdict {
        indicator: 1.0,
        is_sharp: true,
        edge_points: 0,
        sharp_edges: 0,
        roof_gstep: 0,
        blurred: 0,
    };
    for i in 0..maxima[0].len() {
        let (e1, e2, e3) = (maxima[0][i], maxima[1][i], maxima[2][i]);
        if !(e1 > t || e2 > t || e3 > t) {
            continue;
        }
        v.edge_points += 1;
        if e1 > e2 && e2 > e3 {
            v.sharp_edges += 1;
        } else if (e1 < e2 && e2 < e3) || (e2 > e1 && e2 > e3) {
            v.roof_gstep += 1;
            if e1 < t {
                v.blurred += 1;
            }
        }
    }
    if v.roof_gstep > 0 {
        v.indicator = 1.0 - v.blurred as f64 / v.roof_gstep as f64;
    }
    v.is_sharp = v.indicator >= cfg.threshold;
    Ok(v)
}
