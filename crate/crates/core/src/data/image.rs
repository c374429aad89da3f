//! Decoding, encoding and bilinear resampling of RGB images.

use std::path::{Path, PathBuf};

use image::{ColorType, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded image, `(3, H, W)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub pixels: Tensor<f32>,
    pub source: PathBuf,
}

impl ImageRecord {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads an 8-bit RGB PNG or binary PPM.
pub fn decode_image(path: &Path) -> Result<ImageRecord> {
    let rgb = decode_rgb8(path)?;
    Ok(ImageRecord {
        pixels: rgb8_to_tensor(&rgb),
        source: path.to_path_buf(),
    })
}

pub fn decode_rgb8(path: &Path) -> Result<RgbImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(f) => return Err(image_err(path, format!("unsupported container {f:?}"))),
        None => return Err(image_err(path, "unrecognized image container")),
    }
    let img = reader.decode().map_err(|e| image_err(path, e))?;
    match img.color() {
        ColorType::Rgb8 => Ok(img.into_rgb8()),
        other => Err(image_err(
            path,
            format!(
                "expected 3-channel 8-bit RGB, found {} channel(s) ({other:?})",
                other.channel_count()
            ),
        )),
    }
}

pub fn rgb8_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("consistent shape")
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantizes a `(3, H, W)` tensor to 8-bit, clamping to `[0, 1]`.
pub fn tensor_to_rgb8(t: &Tensor<f32>) -> Result<RgbImage> {
    let [3, h, w] = *t.shape() else {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "expected a 3×H×W image".into(),
        });
    };
    let plane = h * w;
    let d = t.data();
    let mut raw = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        raw.extend((0..3).map(|c| to_u8(d[c * plane + i])));
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"))
}

/// Writes PNG or PPM depending on the extension (`.ppm` → binary P6).
pub fn write_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let img = tensor_to_rgb8(t)?;
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(e) if e == "ppm" => ImageFormat::Pnm,
        Some(e) if e == "png" => ImageFormat::Png,
        _ => return Err(image_err(path, "output must end in .png or .ppm")),
    };
    img.save_with_format(path, format).map_err(|e| image_err(path, e))
}

/// Bilinear resampling with pixel centres at `i + 0.5`. Source coordinates
/// outside the image clamp to the border.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "expected C×H×W".into(),
        });
    };
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("cannot resize {h}×{w} to {out_h}×{out_w}")));
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Rec. 601 luma, `0.299 R + 0.587 G + 0.114 B`, as an `H×W` row-major plane.
pub fn luma(img: &Tensor<f32>) -> Result<Vec<f32>> {
    let [3, h, w] = *img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "expected a 3×H×W image".into(),
        });
    };
    let plane = h * w;
    let d = img.data();
    Ok((0..plane)
        .map(|i| 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i])
        .collect())
}
