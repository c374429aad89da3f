#![allow(dead_code)]

use deepspace::layers::Mode;
use deepspace::model::{DeepSpaceConfig, ModelSpec, ModelState};
use deepspace::{Distribution, Rng, Tensor};

/// Small double-precision network for gradient checks.
pub fn tiny_spec(classes: usize, side: usize) -> ModelSpec {
    DeepSpaceConfig {
        widths: [4, 5, 4, 6, 5],
        ..DeepSpaceConfig::reduced(classes, side)
    }
    .build()
    .unwrap()
}

pub fn random_image(seed: u64, side: usize) -> Tensor<f64> {
    Tensor::random(&mut Rng::new(seed), Distribution::uniform(0.0, 1.0), [3, side, side]).unwrap()
}

/// Loss as a function of the model, with dropout masks fixed by `mask_seed`.
pub fn loss_at(m: &ModelState<f64>, x: &Tensor<f64>, label: usize, mask_seed: u64) -> f64 {
    m.loss(x, label, &mut Rng::new(mask_seed)).unwrap()
}

pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Compares analytic gradients against central differences on `per_tensor`
/// random entries of every parameter tensor. The error of a tensor is
/// `‖g_a − g_fd‖ / max(‖g_a‖ + ‖g_fd‖, 1e-8)` over the sampled entries.
pub fn check_gradients(seed: u64, mode: Mode, per_tensor: usize, h: f64) -> FdReport {
    let spec = tiny_spec(3, 32);
    let mut rng = Rng::new(seed);
    let mut m = ModelState::<f64>::init(spec, &mut rng).unwrap();
    // nonzero biases so every path is exercised
    for (_, t) in m.params_mut().iter_mut() {
        if t.rank() == 1 {
            for v in t.data_mut() {
                *v = 0.05 * rng.gaussian();
            }
        }
    }
    m.mode = mode;
    let x = random_image(seed ^ 0x5eed, 32);
    let label = rng.below(3);
    let mask_seed = seed.wrapping_add(17);
    let pass = m.forward(&x, &mut Rng::new(mask_seed)).unwrap();
    let grads = m.backward(pass, label).unwrap().params;

    let names: Vec<String> = m.params().names().map(String::from).collect();
    let mut report = FdReport {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    for name in names {
        let n = m.params().get(&name).unwrap().len();
        let picks: Vec<usize> = (0..per_tensor.min(n)).map(|_| rng.below(n)).collect();
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let orig = m.params().get(&name).unwrap().data()[i];
            m.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = loss_at(&m, &x, label, mask_seed);
            m.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = loss_at(&m, &x, label, mask_seed);
            m.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.get(&name).unwrap().data()[i];
            diff += (an - fd).powi(2);
            na += an * an;
            nf += fd * fd;
        }
        let rel = diff.sqrt() / (na.sqrt() + nf.sqrt()).max(1e-8);
        report.checked += picks.len();
        if rel > report.worst {
            report.worst = rel;
            report.worst_at = name.clone();
        }
    }
    report
}
