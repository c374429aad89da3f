use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Clone, Debug)]
pub struct ReluCache {
    active: Vec<bool>,
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y, ReluCache { active })
}

pub fn relu_backward<T: Real>(dy: &Tensor<T>, cache: ReluCache) -> Result<Tensor<T>> {
    if dy.len() != cache.active.len() {
        return Err(Error::invalid(format!(
            "relu backward got {} gradients for {} activations",
            dy.len(),
            cache.active.len()
        )));
    }
    let data = dy
        .data()
        .iter()
        .zip(&cache.active)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_parts(dy.shape().to_vec(), data))
}

/// Inverted dropout: survivors are scaled by `1 / (1 − rate)` at train time
/// so evaluation is the identity.
#[derive(Clone, Debug)]
pub struct DropoutCache<T> {
    scale: Option<Vec<T>>,
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

pub fn dropout_forward<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, DropoutCache<T>)> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval {
        return Ok((x.clone(), DropoutCache { scale: None }));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect();
    let y = x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
    Ok((Tensor::from_parts(x.shape().to_vec(), y), DropoutCache { scale: Some(scale) }))
}

pub fn dropout_backward<T: Real>(dy: &Tensor<T>, cache: DropoutCache<T>) -> Result<Tensor<T>> {
    match cache.scale {
        None => Ok(dy.clone()),
        Some(scale) => {
            if scale.len() != dy.len() {
                return Err(Error::invalid("dropout backward shape differs from forward"));
            }
            let d = dy.data().iter().zip(&scale).map(|(&g, &s)| g * s).collect();
            Ok(Tensor::from_parts(dy.shape().to_vec(), d))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_masks_non_positive() {
        let x = Tensor::new(vec![4], vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        let (y, cache) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 3.0]);
        let dx = relu_backward(&Tensor::full([4], 1.0).unwrap(), cache).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let x = Tensor::new(vec![3], vec![0.5f32, -2.0, 7.0]).unwrap();
        let (y, _) = dropout_forward(&x, 0.5, Mode::Eval, &mut Rng::new(0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_half_survivors_and_unbiased() {
        let x = Tensor::<f64>::full([100_000], 1.0).unwrap();
        let (y, _) = dropout_forward(&x, 0.5, Mode::Train, &mut Rng::new(7)).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        let mean = y.sum() / 1e5;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn dropout_rate_bounds() {
        let x = Tensor::<f32>::zeros([2]).unwrap();
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut Rng::new(0)).is_err());
        assert!(dropout_forward(&x, -0.1, Mode::Eval, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn dropout_backward_uses_same_mask() {
        let x = Tensor::<f64>::full([64], 2.0).unwrap();
        let (y, cache) = dropout_forward(&x, 0.3, Mode::Train, &mut Rng::new(3)).unwrap();
        let dx = dropout_backward(&Tensor::full([64], 1.0).unwrap(), cache).unwrap();
        for (a, g) in y.data().iter().zip(dx.data()) {
            assert_eq!(*a, 2.0 * g);
        }
    }
}
