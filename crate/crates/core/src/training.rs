//! Minibatch SGD with momentum, step-decay learning rate, and top-k metrics.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{CropMode, Dataset};
use crate::error::{Error, Result};
use crate::layers::{softmax_xent_forward, Mode};
use crate::model::{ModelState, ParamSet};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Single,
    Double,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_iterations: u64,
    /// Validation cadence in iterations; a final evaluation always runs.
    pub eval_every: u64,
    pub seed: u64,
    /// In double precision the report's wall-time column is written as zero
    /// so that reruns are byte-identical.
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            decay_factor: 0.5,
            decay_every: 2000,
            momentum: 0.9,
            batch_size: 64,
            max_iterations: 10_000,
            eval_every: 200,
            seed: 0,
            precision: Precision::Single,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::invalid(format!("base learning rate must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid(format!("decay factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        if self.decay_every == 0 {
            return Err(Error::invalid("decay interval must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("evaluation cadence must be positive"));
        }
        Ok(())
    }
}

/// `base_lr · decay_factor^⌊iteration / decay_every⌋`
pub fn lr_at(cfg: &TrainConfig, iteration: u64) -> f64 {
    let steps = iteration / cfg.decay_every.max(1);
    cfg.base_lr * cfg.decay_factor.powi(steps.min(i32::MAX as u64) as i32)
}

/// `v ← momentum·v − lr·g; p ← p + v`, tensor by tensor.
pub fn sgd_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    velocities: &mut ParamSet<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    params.check_congruent(grads)?;
    params.check_congruent(velocities)?;
    let lr = T::from_f64_lossy(lr);
    let m = T::from_f64_lossy(momentum);
    for (((_, p), (_, g)), (_, v)) in params.iter_mut().zip(grads.iter()).zip(velocities.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = m * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// Class indices by descending probability, ties to the lower index.
pub fn ranked_classes<T: Real>(probs: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Fraction of rows whose label is among the `k` most probable classes.
pub fn top_k_accuracy<T: Real>(probs: &[Tensor<T>], labels: &[usize], k: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!("{} rows but {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::invalid("top-k accuracy of an empty batch"));
    }
    let mut hits = 0;
    for (p, &label) in probs.iter().zip(labels) {
        let n = p.len();
        if k == 0 || k > n {
            return Err(Error::invalid(format!("k = {k} out of range for {n} classes")));
        }
        if label >= n {
            return Err(Error::invalid(format!("label {label} out of range for {n} classes")));
        }
        hits += ranked_classes(p.data())[..k].contains(&label) as usize;
    }
    Ok(hits as f64 / probs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    /// Mean training loss since the previous record; at iteration 0, the
    /// loss of the first batch before any update.
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<EvalRecord>,
    pub best_iteration: u64,
    pub best_top1: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "iteration,loss,top1,top5,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            writeln!(
                s,
                "{},{:.9},{:.6},{:.6},{:e},{:.3}",
                r.iteration, r.loss, r.top1, r.top5, r.lr, r.seconds
            )
            .expect("writing to a string");
        }
        s
    }
}

/// Center-crop evaluation of a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub top1: f64,
    /// Top-5, or top-n when there are fewer than five classes.
    pub top5: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate<T: Real>(model: &ModelState<T>, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    check_labels(model, data)?;
    let k5 = 5.min(model.num_classes());
    let mut rng = Rng::new(0);
    let (mut loss, mut h1, mut h5) = (0.0, 0usize, 0usize);
    let mut predictions = Vec::with_capacity(data.len());
    for (i, &label) in data.labels().iter().enumerate() {
        let x = data.sample::<T>(i, CropMode::Center, &mut rng)?;
        let pass = model.infer(&x)?;
        loss += softmax_xent_forward(&pass.logits, label)?.0.to_f64_lossy();
        let ranked = ranked_classes(pass.probs.data());
        h1 += (ranked[0] == label) as usize;
        h5 += ranked[..k5].contains(&label) as usize;
        predictions.push(ranked[0]);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        top1: h1 as f64 / n,
        top5: h5 as f64 / n,
        predictions,
    })
}

fn check_labels<T: Real>(model: &ModelState<T>, data: &Dataset) -> Result<()> {
    let n = model.num_classes();
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= n) {
        return Err(Error::invalid(format!("label {bad} out of range for a {n}-class model")));
    }
    if data.crop_side() != model.spec().input_shape[1] {
        return Err(Error::invalid(format!(
            "dataset crops {} pixels but the model expects {}",
            data.crop_side(),
            model.spec().input_shape[1]
        )));
    }
    Ok(())
}

/// Yields sample indices epoch after epoch, each epoch a fresh permutation.
struct EpochStream {
    order: Vec<usize>,
    pos: usize,
}

impl EpochStream {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Runs minibatch SGD and returns the parameters with the best validation
/// top-1 (earliest on ties) together with the full report. `on_record` sees
/// each evaluation row as it is produced.
pub fn train<T: Real>(
    model: ModelState<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&EvalRecord),
) -> Result<(ModelState<T>, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    check_labels(&model, train_set)?;
    check_labels(&model, val_set)?;

    let start = Instant::now();
    let elapsed = |precision| match precision {
        Precision::Double => 0.0,
        Precision::Single => start.elapsed().as_secs_f64(),
    };
    let mut rng = Rng::new(cfg.seed);
    let mut stream = EpochStream::new(train_set.len());
    let mut model = model;
    let mut velocities = model.params().zeros_like();

    // loss of the first batch before any update
    let probe_loss = {
        let mut probe_rng = Rng::new(cfg.seed);
        let mut probe_stream = EpochStream::new(train_set.len());
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let i = probe_stream.next(&mut probe_rng);
            let x = train_set.sample::<T>(i, CropMode::Center, &mut probe_rng)?;
            let pass = model.infer(&x)?;
            total += softmax_xent_forward(&pass.logits, train_set.labels()[i])?.0.to_f64_lossy();
        }
        total / cfg.batch_size as f64
    };

    let mut report = TrainReport::default();
    let mut record = |model: &ModelState<T>, iteration: u64, loss: f64, report: &mut TrainReport| -> Result<bool> {
        let ev = evaluate(model, val_set)?;
        let r = EvalRecord {
            iteration,
            loss,
            top1: ev.top1,
            top5: ev.top5,
            lr: lr_at(cfg, iteration),
            seconds: elapsed(cfg.precision),
        };
        on_record(&r);
        let improved = report.records.is_empty() || r.top1 > report.best_top1;
        if improved {
            report.best_iteration = iteration;
            report.best_top1 = r.top1;
        }
        report.records.push(r);
        Ok(improved)
    };

    let mut best = model.clone();
    record(&model, 0, probe_loss, &mut report)?;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let scale = T::from_f64_lossy(1.0 / cfg.batch_size as f64);
    for it in 0..cfg.max_iterations {
        model.mode = Mode::Train;
        let mut acc = model.params().zeros_like();
        for _ in 0..cfg.batch_size {
            let i = stream.next(&mut rng);
            let x = train_set.sample::<T>(i, CropMode::Random, &mut rng)?;
            let pass = model.forward(&x, &mut rng)?;
            let g = model.backward(pass, train_set.labels()[i])?;
            loss_sum += g.loss.to_f64_lossy();
            loss_count += 1;
            for ((_, a), (_, gt)) in acc.iter_mut().zip(g.params.iter()) {
                for (av, &gv) in a.data_mut().iter_mut().zip(gt.data()) {
                    *av += gv;
                }
            }
        }
        for (_, a) in acc.iter_mut() {
            for v in a.data_mut() {
                *v *= scale;
            }
        }
        let lr = lr_at(cfg, it);
        sgd_step(model.params_mut(), &acc, &mut velocities, lr, cfg.momentum)?;
        model.mode = Mode::Eval;

        let done = it + 1;
        if done % cfg.eval_every == 0 || done == cfg.max_iterations {
            let loss = loss_sum / loss_count as f64;
            (loss_sum, loss_count) = (0.0, 0);
            if record(&model, done, loss, &mut report)? {
                best = model.clone();
            }
        }
    }
    best.mode = Mode::Eval;
    Ok((best, report))
}
