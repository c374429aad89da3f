use super::conv::dot;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct FcCache<T> {
    x: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct FcGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

fn check_dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    let [m, n] = *w.shape() else {
        return Err(Error::InvalidShape {
            shape: w.shape().to_vec(),
            reason: "fully-connected weights must be out × in".into(),
        });
    };
    if x.len() != n {
        return Err(Error::invalid(format!(
            "fully-connected layer expects {n} inputs, got {}",
            x.len()
        )));
    }
    if b.shape() != [m] {
        return Err(Error::shape_mismatch(b.shape(), &[m]));
    }
    Ok((m, n))
}

/// `y = W·x + b`, with `x` flattened.
pub fn fc_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, FcCache<T>)> {
    let (m, n) = check_dims(x, w, b)?;
    let wd = w.data();
    let y = (0..m)
        .map(|i| b.data()[i] + dot(&wd[i * n..(i + 1) * n], x.data()))
        .collect();
    Ok((Tensor::from_parts(vec![m], y), FcCache { x: x.clone() }))
}

pub fn fc_backward<T: Real>(dy: &Tensor<T>, cache: FcCache<T>, w: &Tensor<T>) -> Result<FcGrads<T>> {
    let [m, n] = *w.shape() else {
        return Err(Error::invalid("fully-connected weights must be rank 2"));
    };
    if dy.len() != m || cache.x.len() != n {
        return Err(Error::shape_mismatch(dy.shape(), &[m]));
    }
    let x = cache.x.data();
    let wd = w.data();
    let mut dw = Vec::with_capacity(m * n);
    let mut dx = vec![T::zero(); n];
    for (i, &g) in dy.data().iter().enumerate() {
        dw.extend(x.iter().map(|&xv| g * xv));
        for (d, &wv) in dx.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
            *d += g * wv;
        }
    }
    Ok(FcGrads {
        dx: Tensor::from_parts(cache.x.shape().to_vec(), dx),
        dw: Tensor::from_parts(vec![m, n], dw),
        db: dy.reshape(vec![m])?,
    })
}
