use super::conv::image_dims;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    in_shape: [usize; 3],
    /// Flat input index of the winning element for each output element.
    argmax: Vec<usize>,
}

pub fn pool_output_size(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || window > input {
        return None;
    }
    Some((input - window) / stride + 1)
}

/// Windowed max with no padding. Ties go to the first position in row-major
/// window order, and so does the gradient.
pub fn maxpool_forward<T: Real>(x: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, MaxPoolCache)> {
    let dims @ [c, h, w] = image_dims(x)?;
    let (oh, ow) = match (pool_output_size(h, window, stride), pool_output_size(w, window, stride)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::invalid(format!(
                "pool window {window} (stride {stride}) does not fit a {h}×{w} input"
            )))
        }
    };
    let xd = x.data();
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * stride * w + j * stride;
                for u in 0..window {
                    let row = base + (i * stride + u) * w + j * stride;
                    for idx in row..row + window {
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                y.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![c, oh, ow], y),
        MaxPoolCache { in_shape: dims, argmax },
    ))
}

pub fn maxpool_backward<T: Real>(dy: &Tensor<T>, cache: MaxPoolCache) -> Result<Tensor<T>> {
    if dy.len() != cache.argmax.len() {
        return Err(Error::invalid("maxpool backward shape differs from forward"));
    }
    let mut dx = vec![T::zero(); cache.in_shape.iter().product()];
    for (&g, &idx) in dy.data().iter().zip(&cache.argmax) {
        dx[idx] += g;
    }
    Ok(Tensor::from_parts(cache.in_shape.to_vec(), dx))
}

#[derive(Clone, Debug)]
pub struct GapCache {
    in_shape: [usize; 3],
}

pub fn gap_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, GapCache)> {
    let dims @ [c, h, w] = image_dims(x)?;
    let n = h * w;
    let denom = T::from_usize(n).unwrap();
    let y = x.data().chunks(n).map(|plane| plane.iter().copied().sum::<T>() / denom).collect();
    Ok((Tensor::from_parts(vec![c], y), GapCache { in_shape: dims }))
}

pub fn gap_backward<T: Real>(dy: &Tensor<T>, cache: GapCache) -> Result<Tensor<T>> {
    let [c, h, w] = cache.in_shape;
    if dy.shape() != [c] {
        return Err(Error::shape_mismatch(dy.shape(), &[c]));
    }
    let denom = T::from_usize(h * w).unwrap();
    let mut dx = Vec::with_capacity(c * h * w);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g / denom, h * w));
    }
    Ok(Tensor::from_parts(vec![c, h, w], dx))
}
