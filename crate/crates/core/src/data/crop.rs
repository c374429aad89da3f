use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    /// Offsets drawn uniformly from `[0, side − out_side]` on each axis.
    Random,
    /// Offsets `floor((side − out_side) / 2)`.
    Center,
}

/// Top-left corner `(row, col)` of a square crop.
pub fn crop_offsets(h: usize, w: usize, out_side: usize, mode: CropMode, rng: &mut Rng) -> Result<(usize, usize)> {
    if out_side == 0 || out_side > h || out_side > w {
        return Err(Error::invalid(format!("cannot crop {out_side}×{out_side} from {h}×{w}")));
    }
    Ok(match mode {
        CropMode::Center => ((h - out_side) / 2, (w - out_side) / 2),
        CropMode::Random => {
            let r = rng.below(h - out_side + 1);
            let c = rng.below(w - out_side + 1);
            (r, c)
        }
    })
}

/// Cuts a `(C, out_side, out_side)` window out of a `(C, H, W)` image.
pub fn crop_at<T: Real>(img: &Tensor<T>, top: usize, left: usize, out_side: usize) -> Result<Tensor<T>> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "expected C×H×W".into(),
        });
    };
    if top + out_side > h || left + out_side > w {
        return Err(Error::invalid(format!(
            "crop at ({top}, {left}) of side {out_side} leaves the {h}×{w} image"
        )));
    }
    let d = img.data();
    let mut out = Vec::with_capacity(c * out_side * out_side);
    for ch in 0..c {
        for r in top..top + out_side {
            let row = ch * h * w + r * w;
            out.extend_from_slice(&d[row + left..row + left + out_side]);
        }
    }
    Tensor::new(vec![c, out_side, out_side], out)
}

pub fn crop<T: Real>(img: &Tensor<T>, mode: CropMode, out_side: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let [_, h, w] = *img.shape() else {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "expected C×H×W".into(),
        });
    };
    let (top, left) = crop_offsets(h, w, out_side, mode, rng)?;
    crop_at(img, top, left, out_side)
}
