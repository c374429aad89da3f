//! Procedural stand-in for an indoor place dataset.
//!
//! Every class is a "room" with a fixed recipe: two colours, a texture kind,
//! a texture period and an orientation. Images of a class vary by viewpoint
//! shift, small rotation, brightness, sensor noise and occluders.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::image::write_image;
use super::manifest::{write_manifest, DatasetManifest, ManifestEntry, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Stripes,
    Checker,
    Gradient,
    Blobs,
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Texture::Stripes => "stripes",
            Texture::Checker => "checker",
            Texture::Gradient => "gradient",
            Texture::Blobs => "blobs",
        })
    }
}

const TEXTURES: [Texture; 4] = [Texture::Stripes, Texture::Checker, Texture::Gradient, Texture::Blobs];

#[derive(Clone, Debug, PartialEq)]
pub struct RoomRecipe {
    /// RGB in `[0, 1]`.
    pub primary: [f64; 3],
    pub secondary: [f64; 3],
    pub hues: (f64, f64),
    pub texture: Texture,
    /// Texture period as a fraction of the image side.
    pub scale: f64,
    /// Texture orientation in radians.
    pub angle: f64,
}

/// Smallest luma gap between a room's two colours.
pub const MIN_LUMA_CONTRAST: f64 = 0.3;

fn luma_of(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl RoomRecipe {
    /// Recipe of class `index`. Primary hues follow golden-ratio spacing so
    /// neighbouring classes differ.
    pub fn for_class(index: usize, rng: &mut Rng) -> Self {
        let h1 = (0.11 + index as f64 * 0.618_033_988_75).rem_euclid(1.0);
        let h2 = (h1 + rng.uniform_range(0.25, 0.75)).rem_euclid(1.0);
        let primary = hsv(h1, rng.uniform_range(0.6, 1.0), rng.uniform_range(0.55, 0.95));
        // edges must clear the blur detector's absolute threshold
        let lp = luma_of(primary);
        let mut secondary = if lp > 0.5 { [0.0; 3] } else { [1.0; 3] };
        for _ in 0..64 {
            let c = hsv(h2, rng.uniform_range(0.1, 1.0), rng.uniform_range(0.05, 1.0));
            if (luma_of(c) - lp).abs() >= MIN_LUMA_CONTRAST {
                secondary = c;
                break;
            }
        }
        RoomRecipe {
            primary,
            secondary,
            hues: (h1, h2),
            texture: TEXTURES[(index + index / 4) % 4],
            scale: rng.uniform_range(0.08, 0.3),
            angle: rng.uniform_range(0.0, std::f64::consts::PI),
        }
    }

    pub fn to_text(&self) -> String {
        let rgb = |c: [f64; 3]| format!("{:.6} {:.6} {:.6}", c[0], c[1], c[2]);
        kv::render([
            ("texture", self.texture.to_string()),
            ("hue.primary", format!("{:.6}", self.hues.0)),
            ("hue.secondary", format!("{:.6}", self.hues.1)),
            ("color.primary", rgb(self.primary)),
            ("color.secondary", rgb(self.secondary)),
            ("scale", format!("{:.6}", self.scale)),
            ("angle", format!("{:.6}", self.angle)),
        ])
    }

    /// Mixing weight of the secondary colour at texture coordinates `(u, v)`,
    /// both in image-side units.
    fn pattern(&self, u: f64, v: f64, blobs: &[(f64, f64, f64)]) -> f64 {
        let p = self.scale;
        match self.texture {
            Texture::Stripes => ((u / p).floor().rem_euclid(2.0) == 1.0) as u8 as f64,
            Texture::Checker => (((u / p).floor() + (v / p).floor()).rem_euclid(2.0) == 1.0) as u8 as f64,
            Texture::Gradient => {
                // a ramp with a hard band every four periods
                let t = (u / (4.0 * p)).rem_euclid(1.0);
                if t < 0.2 {
                    1.0
                } else {
                    t * 0.7
                }
            }
            Texture::Blobs => {
                let (cu, cv) = ((u / p).rem_euclid(2.0), (v / p).rem_euclid(2.0));
                blobs
                    .iter()
                    .any(|&(bu, bv, r)| {
                        let du = (cu - bu).abs().min(2.0 - (cu - bu).abs());
                        let dv = (cv - bv).abs().min(2.0 - (cv - bv).abs());
                        du * du + dv * dv < r * r
                    }) as u8 as f64
            }
        }
    }
}

/// Blob layout in one `2p × 2p` tile, fixed per class.
fn blob_layout(index: usize) -> Vec<(f64, f64, f64)> {
    let mut rng = Rng::new(0xb10b ^ index as u64);
    (0..3)
        .map(|_| (rng.uniform_range(0.0, 2.0), rng.uniform_range(0.0, 2.0), rng.uniform_range(0.3, 0.6)))
        .collect()
}

/// Renders one image of a room.
pub fn render_room(recipe: &RoomRecipe, blobs: &[(f64, f64, f64)], side: usize, rng: &mut Rng) -> Tensor<f32> {
    let s = side as f64;
    let (shift_u, shift_v) = (rng.uniform_range(-0.5, 0.5), rng.uniform_range(-0.5, 0.5));
    let angle = recipe.angle + rng.uniform_range(-0.15, 0.15);
    let zoom = rng.uniform_range(0.9, 1.1);
    let brightness = rng.uniform_range(0.8, 1.2);
    let noise = rng.uniform_range(0.0, 0.03);
    let (sin, cos) = angle.sin_cos();
    let occluder = if rng.uniform() < 0.3 {
        let w = rng.uniform_range(0.1, 0.3);
        let h = rng.uniform_range(0.1, 0.3);
        let x0 = rng.uniform_range(0.0, 1.0 - w);
        let y0 = rng.uniform_range(0.0, 1.0 - h);
        let color = [rng.uniform(), rng.uniform(), rng.uniform()];
        Some((x0, y0, w, h, color))
    } else {
        None
    };
    let plane = side * side;
    let mut data = vec![0.0f32; 3 * plane];
    for r in 0..side {
        for c in 0..side {
            let (x, y) = ((c as f64 + 0.5) / s, (r as f64 + 0.5) / s);
            let (cx, cy) = ((x - 0.5) * zoom, (y - 0.5) * zoom);
            let u = cx * cos - cy * sin + shift_u;
            let v = cx * sin + cy * cos + shift_v;
            let t = recipe.pattern(u, v, blobs);
            let mut rgb = [0.0; 3];
            for (k, out) in rgb.iter_mut().enumerate() {
                *out = (recipe.primary[k] * (1.0 - t) + recipe.secondary[k] * t) * brightness;
            }
            if let Some((x0, y0, w, h, color)) = occluder {
                if x >= x0 && x < x0 + w && y >= y0 && y < y0 + h {
                    rgb = color;
                }
            }
            for (k, &val) in rgb.iter().enumerate() {
                let n = noise * rng.gaussian();
                data[k * plane + r * side + c] = (val + n).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(vec![3, side, side], data).expect("consistent shape")
}

/// Writes `per_class` PNGs for each of `num_classes` rooms under `out_dir`,
/// one sub-directory per class with a `recipe.txt` sidecar, plus
/// `manifest.txt`. Identical seeds give byte-identical files.
pub fn synth_generate(
    num_classes: usize,
    per_class: usize,
    out_dir: &Path,
    image_side: usize,
    rng: &mut Rng,
) -> Result<DatasetManifest> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("need at least two classes, got {num_classes}")));
    }
    if image_side < 8 {
        return Err(Error::invalid(format!("image side must be at least 8, got {image_side}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries: Vec::with_capacity(num_classes * per_class),
        class_names: (0..num_classes).map(|i| format!("room_{i:02}")).collect(),
        split: Split::Train,
    };
    for class in 0..num_classes {
        let mut class_rng = rng.fork();
        let recipe = RoomRecipe::for_class(class, &mut class_rng);
        let blobs = blob_layout(class);
        let dir_name = format!("class_{class:02}");
        let dir = out_dir.join(&dir_name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let recipe_path = dir.join("recipe.txt");
        std::fs::write(&recipe_path, recipe.to_text()).map_err(|e| Error::io(&recipe_path, e))?;
        for j in 0..per_class {
            let img = render_room(&recipe, &blobs, image_side, &mut class_rng);
            let rel = format!("{dir_name}/img_{j:04}.png");
            write_image(&img, &out_dir.join(&rel))?;
            manifest.entries.push(ManifestEntry {
                path: rel.into(),
                label: class,
            });
        }
    }
    write_manifest(&manifest, &out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
