//! In-memory training data: decoded, resized images kept as 8-bit RGB.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::crop::{crop_offsets, CropMode};
use super::image::{decode_image, resize_bilinear, tensor_to_rgb8};
use super::manifest::DatasetManifest;

/// Side an image is resized to before cropping `crop_side`, keeping the
/// 256 → 227 ratio (227 → 256, 64 → 72, 32 → 36).
pub fn resize_side_for(crop_side: usize) -> usize {
    (crop_side * 256 + 113) / 227
}

/// Network input for a single image: resize to [`resize_side_for`]`(crop_side)`,
/// quantize to 8 bits and center-crop, exactly as [`Dataset`] samples do.
pub fn preprocess<T: Real>(img: &Tensor<f32>, crop_side: usize) -> Result<Tensor<T>> {
    let mut one = Dataset::empty(resize_side_for(crop_side), crop_side, vec![String::new()])?;
    one.push(img, 0)?;
    one.sample(0, CropMode::Center, &mut Rng::new(0))
}

#[derive(Clone, Debug)]
pub struct Dataset {
    side: usize,
    crop_side: usize,
    /// Channel-major `3 × side × side` bytes per image.
    images: Vec<Vec<u8>>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Decodes every manifest entry and resizes it to
    /// [`resize_side_for`]`(crop_side)`.
    pub fn load(manifest: &DatasetManifest, crop_side: usize) -> Result<Self> {
        manifest.validate()?;
        let side = resize_side_for(crop_side);
        let mut ds = Self::empty(side, crop_side, manifest.class_names.clone())?;
        for e in &manifest.entries {
            let img = decode_image(&manifest.resolve(e))?;
            ds.push(&img.pixels, e.label)?;
        }
        Ok(ds)
    }

    pub fn empty(side: usize, crop_side: usize, class_names: Vec<String>) -> Result<Self> {
        if crop_side == 0 || crop_side > side {
            return Err(Error::invalid(format!("crop side {crop_side} does not fit resize side {side}")));
        }
        Ok(Self {
            side,
            crop_side,
            images: Vec::new(),
            labels: Vec::new(),
            class_names,
        })
    }

    /// Adds a `(3, H, W)` image in `[0, 1]`, resizing it when needed.
    pub fn push(&mut self, img: &Tensor<f32>, label: usize) -> Result<()> {
        if label >= self.class_names.len() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                self.class_names.len()
            )));
        }
        let resized;
        let img = if img.shape()[1..] == [self.side, self.side] {
            img
        } else {
            resized = resize_bilinear(img, self.side, self.side)?;
            &resized
        };
        let rgb = tensor_to_rgb8(img)?;
        let plane = self.side * self.side;
        let mut bytes = vec![0u8; 3 * plane];
        for (i, px) in rgb.as_raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                bytes[c * plane + i] = px[c];
            }
        }
        self.images.push(bytes);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn crop_side(&self) -> usize {
        self.crop_side
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// The cropped network input for sample `i`, values in `[0, 1]`.
    pub fn sample<T: Real>(&self, i: usize, mode: CropMode, rng: &mut Rng) -> Result<Tensor<T>> {
        let img = self
            .images
            .get(i)
            .ok_or_else(|| Error::invalid(format!("sample {i} out of range for {} images", self.len())))?;
        let (top, left) = crop_offsets(self.side, self.side, self.crop_side, mode, rng)?;
        let (s, cs) = (self.side, self.crop_side);
        let mut out = Vec::with_capacity(3 * cs * cs);
        for c in 0..3 {
            for r in top..top + cs {
                let row = c * s * s + r * s + left;
                out.extend(img[row..row + cs].iter().map(|&b| T::from_f64_lossy(b as f64 / 255.0)));
            }
        }
        Tensor::new(vec![3, cs, cs], out)
    }

    /// Per-channel mean over all center crops.
    pub fn channel_mean(&self) -> Result<[f64; 3]> {
        if self.is_empty() {
            return Err(Error::invalid("cannot take the mean of an empty dataset"));
        }
        let mut sum = [0.0; 3];
        let mut rng = Rng::new(0);
        for i in 0..self.len() {
            let x: Tensor<f64> = self.sample(i, CropMode::Center, &mut rng)?;
            let plane = x.len() / 3;
            for (c, s) in sum.iter_mut().enumerate() {
                *s += x.data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
            }
        }
        Ok(sum.map(|s| s / self.len() as f64))
    }
}
