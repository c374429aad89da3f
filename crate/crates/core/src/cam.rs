//! Class activation maps: `M_c(x, y) = Σ_k ω_c[k] · F_k(x, y)` over the
//! feature maps feeding global average pooling.

use crate::data::{resize_bilinear, ImageRecord};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct CamMap<T = f32> {
    pub class_index: usize,
    /// Row `class_index` of the FC weight matrix, one entry per channel.
    pub weights: Vec<T>,
    /// `s × s` map on the final conv grid.
    pub raw: Tensor<T>,
    /// Raw map resized to the network input, once [`CamMap::upsample`] ran.
    pub upsampled: Option<Tensor<f32>>,
}

/// Weighted sum of `feature_maps` (`k × s × s`) with row `class_index` of
/// `fc_weights` (`classes × k`). The FC bias is left out.
pub fn compute_cam<T: Real>(feature_maps: &Tensor<T>, fc_weights: &Tensor<T>, class_index: usize) -> Result<CamMap<T>> {
    let [k, h, w] = *feature_maps.shape() else {
        return Err(Error::InvalidShape {
            shape: feature_maps.shape().to_vec(),
            reason: "feature maps must be k×s×s".into(),
        });
    };
    let [classes, fk] = *fc_weights.shape() else {
        return Err(Error::InvalidShape {
            shape: fc_weights.shape().to_vec(),
            reason: "fc weights must be classes×k".into(),
        });
    };
    if fk != k {
        return Err(Error::shape_mismatch(&[classes, fk], &[classes, k]));
    }
    if class_index >= classes {
        return Err(Error::invalid(format!("class {class_index} out of range for {classes} classes")));
    }
    let weights = fc_weights.data()[class_index * k..(class_index + 1) * k].to_vec();
    let plane = h * w;
    let maps = feature_maps.data();
    let mut raw = vec![T::zero(); plane];
    for (ch, &wk) in weights.iter().enumerate() {
        for (r, &f) in raw.iter_mut().zip(&maps[ch * plane..(ch + 1) * plane]) {
            *r += wk * f;
        }
    }
    Ok(CamMap {
        class_index,
        weights,
        raw: Tensor::new(vec![h, w], raw)?,
        upsampled: None,
    })
}

/// Bilinear resize of an `s × s` map, same pixel-centre convention as
/// [`resize_bilinear`].
pub fn upsample_bilinear<T: Real>(raw: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [h, w] = *raw.shape() else {
        return Err(Error::InvalidShape {
            shape: raw.shape().to_vec(),
            reason: "expected a 2-D map".into(),
        });
    };
    if out_h < h || out_w < w {
        return Err(Error::invalid(format!("cannot upsample {h}×{w} to {out_h}×{out_w}")));
    }
    let up = resize_bilinear(&raw.cast::<f32>().reshape(vec![1, h, w])?, out_h, out_w)?;
    up.reshape(vec![out_h, out_w])
}

impl<T: Real> CamMap<T> {
    pub fn upsample(&mut self, out_h: usize, out_w: usize) -> Result<&Tensor<f32>> {
        let up = upsample_bilinear(&self.raw, out_h, out_w)?;
        Ok(self.upsampled.insert(up))
    }

    /// One text row per grid row, values separated by spaces.
    pub fn raw_grid_text(&self) -> String {
        let w = self.raw.shape()[1];
        let mut s = String::new();
        for row in self.raw.data().chunks(w) {
            let cells: Vec<String> = row.iter().map(|v| format!("{}", v.to_f64_lossy())).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Runs `model` in eval mode and maps `class_index`, or the argmax class when
/// `None`, upsampled to the input resolution.
pub fn class_activation_map<T: Real>(model: &ModelState<T>, x: &Tensor<T>, class_index: Option<usize>) -> Result<CamMap<T>> {
    let pass = model.infer(x)?;
    let maps = pass
        .feature_maps
        .ok_or_else(|| Error::Format("model has no global average pooling layer".into()))?;
    let class = class_index.unwrap_or_else(|| pass.probs.argmax());
    let mut cam = compute_cam(&maps, model.params().get("fc.weight")?, class)?;
    let [_, h, w] = model.spec().input_shape;
    cam.upsample(h, w)?;
    Ok(cam)
}

/// Blue at 0, green at 0.5, red at 1, linear in between.
pub fn color_ramp(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    if t <= 0.5 {
        let u = t * 2.0;
        [0.0, u, 1.0 - u]
    } else {
        let u = (t - 0.5) * 2.0;
        [u, 1.0 - u, 0.0]
    }
}

/// Min-max normalizes the upsampled map (flat maps become 0.5), colors it with
/// [`color_ramp`] and blends `(1 − alpha)·img + alpha·ramp`.
pub fn render_overlay<T: Real>(img: &ImageRecord, cam: &CamMap<T>, alpha: f32) -> Result<ImageRecord> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let up = cam
        .upsampled
        .as_ref()
        .ok_or_else(|| Error::invalid("CAM has not been upsampled"))?;
    if img.pixels.shape()[1..] != *up.shape() {
        return Err(Error::shape_mismatch(&img.pixels.shape()[1..], up.shape()));
    }
    let lo = up.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = up.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let plane = up.len();
    let mut out = img.pixels.clone();
    let px = out.data_mut();
    for (i, &v) in up.data().iter().enumerate() {
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let rgb = color_ramp(t);
        for c in 0..3 {
            let p = &mut px[c * plane + i];
            *p = (1.0 - alpha) * *p + alpha * rgb[c];
        }
    }
    Ok(ImageRecord {
        pixels: out,
        source: img.source.clone(),
    })
}
