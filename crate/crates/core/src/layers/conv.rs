//! 2-D convolution over `(channels, height, width)` inputs.
//!
//! The forward pass lowers the input to a patch matrix and multiplies it by
//! the kernel matrix. Each output element is accumulated as
//! `bias + x[0]*w[0] + x[1]*w[1] + ...` in `(channel, row, col)` kernel order,
//! which is the same order a direct nested loop uses, so both agree exactly.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `out_ch × in_ch × kh × kw`
    pub kernels: Tensor<T>,
    /// `out_ch`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    in_shape: [usize; 3],
    out_hw: (usize, usize),
    /// Patch matrix `(in_ch·kh·kw) × (oh·ow)`; for pointwise kernels this is the input itself.
    cols: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dkernels: Tensor<T>,
    pub dbias: Tensor<T>,
}

/// `floor((input + 2·pad − kernel) / stride) + 1`, or `None` when the kernel
/// does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Borrowed convolution parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvView<'a, T> {
    pub kernels: &'a Tensor<T>,
    pub bias: &'a Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<'a, T: Real> ConvView<'a, T> {
    pub fn new(kernels: &'a Tensor<T>, bias: &'a Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        if kernels.rank() != 4 {
            return Err(Error::InvalidShape {
                shape: kernels.shape().to_vec(),
                reason: "conv kernels must be out_ch × in_ch × kh × kw".into(),
            });
        }
        if bias.shape() != [kernels.shape()[0]] {
            return Err(Error::shape_mismatch(bias.shape(), &kernels.shape()[..1]));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        Ok(Self {
            kernels,
            bias,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel_size() == (1, 1) && self.stride == 1 && self.pad == 0
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        match (
            conv_output_size(h, kh, self.stride, self.pad),
            conv_output_size(w, kw, self.stride, self.pad),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::invalid(format!(
                "{kh}×{kw} kernel with stride {} and pad {} yields no output on a {h}×{w} input",
                self.stride, self.pad
            ))),
        }
    }
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernels: Tensor<T>, bias: Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        ConvView::new(&kernels, &bias, stride, pad)?;
        Ok(Self {
            kernels,
            bias,
            stride,
            pad,
        })
    }

    pub fn view(&self) -> ConvView<'_, T> {
        ConvView {
            kernels: &self.kernels,
            bias: &self.bias,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.view().out_channels()
    }

    pub fn in_channels(&self) -> usize {
        self.view().in_channels()
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        self.view().kernel_size()
    }

    pub fn is_pointwise(&self) -> bool {
        self.view().is_pointwise()
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.view().output_size(h, w)
    }
}

pub(crate) fn image_dims<T: Real>(x: &Tensor<T>) -> Result<[usize; 3]> {
    match *x.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "expected a channels × height × width tensor".into(),
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    [c, h, w]: [usize; 3],
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let p = oh * ow;
    let mut cols = vec![T::zero(); c * kh * kw * p];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = &mut cols[((ch * kh + u) * kw + v) * p..][..p];
                for i in 0..oh {
                    let y = (i * stride + u) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    let dst = &mut row[i * ow..(i + 1) * ow];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let xx = (j * stride + v) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            *d = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    [c, h, w]: [usize; 3],
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let p = oh * ow;
    let mut x = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = &cols[((ch * kh + u) * kw + v) * p..][..p];
                for i in 0..oh {
                    let y = (i * stride + u) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for j in 0..ow {
                        let xx = (j * stride + v) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += row[i * ow + j];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `out[i, :] += Σ_k a[i, k] · b[k, :]`, accumulating in increasing `k`.
fn gemm_acc<T: Real>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let coef = a[i * k + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += coef * bv;
            }
        }
    }
}

/// Dot product with eight interleaved partial sums.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub fn conv_forward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
    conv_forward_view(x, p.view())
}

pub fn conv_forward_view<T: Real>(x: &Tensor<T>, p: ConvView<'_, T>) -> Result<(Tensor<T>, ConvCache<T>)> {
    let dims @ [c, h, w] = image_dims(x)?;
    if c != p.in_channels() {
        return Err(Error::invalid(format!(
            "conv expects {} input channels, got {c}",
            p.in_channels()
        )));
    }
    let (oh, ow) = p.output_size(h, w)?;
    let cols = if p.is_pointwise() {
        x.data().to_vec()
    } else {
        im2col(x.data(), dims, p.kernel_size(), p.stride, p.pad, (oh, ow))
    };
    let o = p.out_channels();
    let (kh, kw) = p.kernel_size();
    let k = c * kh * kw;
    let n = oh * ow;
    let mut y = Vec::with_capacity(o * n);
    for &b in p.bias.data() {
        y.extend(std::iter::repeat_n(b, n));
    }
    gemm_acc(&mut y, p.kernels.data(), &cols, o, k, n);
    Ok((
        Tensor::from_parts(vec![o, oh, ow], y),
        ConvCache {
            in_shape: dims,
            out_hw: (oh, ow),
            cols,
        },
    ))
}

pub fn conv_backward<T: Real>(dy: &Tensor<T>, cache: ConvCache<T>, p: &ConvParams<T>) -> Result<ConvGrads<T>> {
    let (dx, dkernels, dbias) = conv_backward_view(dy, cache, p.view(), true)?;
    Ok(ConvGrads {
        dx: dx.expect("input gradient requested"),
        dkernels,
        dbias,
    })
}

type ConvBackward<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Like [`conv_backward`], optionally skipping the input gradient.
pub fn conv_backward_view<T: Real>(
    dy: &Tensor<T>,
    cache: ConvCache<T>,
    p: ConvView<'_, T>,
    want_dx: bool,
) -> Result<ConvBackward<T>> {
    let (oh, ow) = cache.out_hw;
    let o = p.out_channels();
    if dy.shape() != [o, oh, ow] {
        return Err(Error::shape_mismatch(dy.shape(), &[o, oh, ow]));
    }
    let [c, _, _] = cache.in_shape;
    let (kh, kw) = p.kernel_size();
    let k = c * kh * kw;
    let n = oh * ow;
    let dyd = dy.data();

    let dbias: Vec<T> = (0..o).map(|oc| dyd[oc * n..(oc + 1) * n].iter().copied().sum()).collect();

    let mut dk = vec![T::zero(); o * k];
    for oc in 0..o {
        let dy_row = &dyd[oc * n..(oc + 1) * n];
        for kk in 0..k {
            dk[oc * k + kk] = dot(dy_row, &cache.cols[kk * n..(kk + 1) * n]);
        }
    }

    let dx = if want_dx {
        let wd = p.kernels.data();
        let mut dcols = vec![T::zero(); k * n];
        for kk in 0..k {
            let dst = &mut dcols[kk * n..(kk + 1) * n];
            for oc in 0..o {
                let coef = wd[oc * k + kk];
                for (d, &g) in dst.iter_mut().zip(&dyd[oc * n..(oc + 1) * n]) {
                    *d += coef * g;
                }
            }
        }
        let data = if p.is_pointwise() {
            dcols
        } else {
            col2im(&dcols, cache.in_shape, (kh, kw), p.stride, p.pad, (oh, ow))
        };
        Some(Tensor::from_parts(cache.in_shape.to_vec(), data))
    } else {
        None
    };

    Ok((
        dx,
        Tensor::from_parts(p.kernels.shape().to_vec(), dk),
        Tensor::from_parts(vec![o], dbias),
    ))
}
