//! Local response normalization across channels:
//! `y[c] = x[c] / (k + (alpha/n) · Σ_{c' ∈ window(c)} x[c']²)^beta`,
//! where the window spans `n` channels centred on `c`, clipped at the edges.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrnParams {
    pub n: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            n: 5,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n.is_multiple_of(2) {
            return Err(Error::invalid(format!("LRN size must be odd and positive, got {}", self.n)));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::invalid("LRN alpha and beta must be positive"));
        }
        Ok(())
    }

    fn window(&self, c: usize, channels: usize) -> std::ops::Range<usize> {
        let half = self.n / 2;
        c.saturating_sub(half)..(c + half + 1).min(channels)
    }
}

#[derive(Clone, Debug)]
pub struct LrnCache<T> {
    x: Tensor<T>,
    /// Per-element denominator base `k + (alpha/n)·Σ x²`.
    s: Vec<T>,
    params: LrnParams,
}

fn split<T: Real>(x: &Tensor<T>) -> Result<(usize, usize)> {
    if x.rank() == 0 {
        return Err(Error::invalid("LRN needs a channel axis"));
    }
    let c = x.shape()[0];
    Ok((c, x.len() / c))
}

pub fn lrn_forward<T: Real>(x: &Tensor<T>, p: &LrnParams) -> Result<(Tensor<T>, LrnCache<T>)> {
    p.validate()?;
    let (c, plane) = split(x)?;
    let xd = x.data();
    let k = T::from_f64_lossy(p.k);
    let a = T::from_f64_lossy(p.alpha / p.n as f64);
    let beta = T::from_f64_lossy(p.beta);
    let mut s = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for ch in 0..c {
        let out = &mut s[ch * plane..(ch + 1) * plane];
        for nb in p.window(ch, c) {
            for (o, &v) in out.iter_mut().zip(&xd[nb * plane..(nb + 1) * plane]) {
                *o += v * v;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = k + a * *o;
            y[ch * plane + i] = xd[ch * plane + i] * o.powf(-beta);
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        LrnCache {
            x: x.clone(),
            s,
            params: *p,
        },
    ))
}

/// `dx[j] = dy[j]·s[j]^-β − (2αβ/n)·x[j]·Σ_{c: j ∈ window(c)} dy[c]·x[c]·s[c]^(-β-1)`.
pub fn lrn_backward<T: Real>(dy: &Tensor<T>, cache: LrnCache<T>) -> Result<Tensor<T>> {
    if dy.shape() != cache.x.shape() {
        return Err(Error::shape_mismatch(dy.shape(), cache.x.shape()));
    }
    let p = cache.params;
    let (c, plane) = split(&cache.x)?;
    let xd = cache.x.data();
    let g = dy.data();
    let beta = T::from_f64_lossy(p.beta);
    let coef = T::from_f64_lossy(2.0 * p.alpha * p.beta / p.n as f64);
    // t[c] = dy[c]·x[c]·s[c]^(-β-1)
    let t: Vec<T> = (0..xd.len())
        .map(|i| g[i] * xd[i] * cache.s[i].powf(-beta - T::one()))
        .collect();
    let mut dx = vec![T::zero(); xd.len()];
    for ch in 0..c {
        let out = &mut dx[ch * plane..(ch + 1) * plane];
        // The window is symmetric, so j ∈ window(c) iff c ∈ window(j).
        for nb in p.window(ch, c) {
            for (o, &tv) in out.iter_mut().zip(&t[nb * plane..(nb + 1) * plane]) {
                *o += tv;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let j = ch * plane + i;
            *o = g[j] * cache.s[j].powf(-beta) - coef * xd[j] * *o;
        }
    }
    Ok(Tensor::from_parts(dy.shape().to_vec(), dx))
}
