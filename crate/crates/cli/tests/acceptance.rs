//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Run alone with `cargo test -p deepspace-cli --test acceptance`; trailing
//! numbers (`-- 1 5`) restrict the run to those criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use deepspace::analysis::{build_confusion, distinctiveness, normalize_misclass, rank_similar_pairs};
use deepspace::cam::compute_cam;
use deepspace::data::{
    blur_indicator, decode_image, preprocess, split_validation, synth_generate, BlurConfig, Dataset, ImageRecord,
};
use deepspace::hierarchy::Hierarchy;
use deepspace::layers::{
    conv_backward, conv_forward, dropout_backward, dropout_forward, fc_backward, fc_forward, gap_backward,
    gap_forward, lrn_backward, lrn_forward, maxpool_backward, maxpool_forward, mlpconv_backward, mlpconv_forward,
    relu_backward, relu_forward, softmax_xent_backward, softmax_xent_forward, ConvParams, LrnParams, Mode,
    MlpConvParams,
};
use deepspace::model::io::{decode, encode};
use deepspace::model::{deepspace_spec, load, save, ActShape, DeepSpaceConfig};
use deepspace::training::{lr_at, train, TrainConfig};
use deepspace::{Distribution, ModelState, Rng, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradients),
        ("shape ledger", shape_ledger),
        ("desk-scale learning", desk_scale_learning),
        ("lr schedule exactness", lr_schedule),
        ("cam oracle", cam_oracle),
        ("blur separation", blur_separation),
        ("analysis oracle", analysis_oracle),
        ("hierarchy integration", hierarchy_integration),
        ("serialization", serialization),
        ("train determinism", train_determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-8)
}

fn rand_t(rng: &mut Rng, scale: f64, shape: &[usize]) -> Tensor<f64> {
    Tensor::random(rng, Distribution::gaussian(0.0, scale), shape.to_vec()).unwrap()
}

/// Central differences of `loss` with respect to every entry of every input,
/// compared slice by slice against `analytic`. Returns the worst error.
fn fd_layer(inputs: &[Tensor<f64>], analytic: &[Tensor<f64>], loss: impl Fn(&[Tensor<f64>]) -> f64) -> f64 {
    let h = 1e-6;
    let mut probe = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (slot, grad) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(grad.len());
        for i in 0..grad.len() {
            let orig = probe[slot].data()[i];
            probe[slot].data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe[slot].data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe[slot].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        worst = worst.max(rel_err(grad.data(), &numeric));
    }
    worst
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst per-slice error of each layer kind for one seed.
fn layer_kinds(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    let x = rand_t(&mut rng, 1.0, &[3, 9, 9]);
    let k = rand_t(&mut rng, 0.5, &[4, 3, 3, 3]);
    let b = rand_t(&mut rng, 0.1, &[4]);
    let p = ConvParams::new(k.clone(), b.clone(), 2, 1).unwrap();
    let (y, cache) = conv_forward(&x, &p).unwrap();
    let r = rand_t(&mut rng, 1.0, y.shape());
    let g = conv_backward(&r, cache, &p).unwrap();
    let e = fd_layer(&[x.clone(), k, b], &[g.dx, g.dkernels, g.dbias], |t| {
        let p = ConvParams::new(t[1].clone(), t[2].clone(), 2, 1).unwrap();
        dot(&conv_forward(&t[0], &p).unwrap().0, &r)
    });
    out.push(("conv", e));

    let x = rand_t(&mut rng, 1.0, &[3, 7, 7]);
    let shapes: [&[usize]; 3] = [&[4, 3, 3, 3], &[5, 4, 1, 1], &[3, 5, 1, 1]];
    let mut ts = vec![x];
    for s in shapes {
        ts.push(rand_t(&mut rng, 0.5, s));
        ts.push(rand_t(&mut rng, 0.1, &[s[0]]));
    }
    let mk = |t: &[Tensor<f64>]| {
        MlpConvParams::new(
            ConvParams::new(t[1].clone(), t[2].clone(), 1, 1).unwrap(),
            ConvParams::new(t[3].clone(), t[4].clone(), 1, 0).unwrap(),
            ConvParams::new(t[5].clone(), t[6].clone(), 1, 0).unwrap(),
        )
        .unwrap()
    };
    let p = mk(&ts);
    let (y, cache) = mlpconv_forward(&ts[0], &p).unwrap();
    let r = rand_t(&mut rng, 1.0, y.shape());
    let g = mlpconv_backward(&r, cache, &p).unwrap();
    let analytic = [g.dx.unwrap(), g.base.0, g.base.1, g.mlp1.0, g.mlp1.1, g.mlp2.0, g.mlp2.1];
    out.push(("mlpconv", fd_layer(&ts, &analytic, |t| dot(&mlpconv_forward(&t[0], &mk(t)).unwrap().0, &r))));

    let x = rand_t(&mut rng, 1.0, &[10]);
    let w = rand_t(&mut rng, 0.5, &[4, 10]);
    let b = rand_t(&mut rng, 0.1, &[4]);
    let (y, cache) = fc_forward(&x, &w, &b).unwrap();
    let r = rand_t(&mut rng, 1.0, y.shape());
    let g = fc_backward(&r, cache, &w).unwrap();
    let e = fd_layer(&[x, w, b], &[g.dx, g.dw, g.db], |t| dot(&fc_forward(&t[0], &t[1], &t[2]).unwrap().0, &r));
    out.push(("fc", e));

    let x = rand_t(&mut rng, 1.0, &[3, 6, 6]);
    let (y, cache) = relu_forward(&x);
    let r = rand_t(&mut rng, 1.0, y.shape());
    let e = fd_layer(&[x], &[relu_backward(&r, cache).unwrap()], |t| dot(&relu_forward(&t[0]).0, &r));
    out.push(("relu", e));

    let x = rand_t(&mut rng, 1.0, &[3, 6, 6]);
    let mask_seed = rng.fork().seed();
    let (y, cache) = dropout_forward(&x, 0.5, Mode::Train, &mut Rng::new(mask_seed)).unwrap();
    let r = rand_t(&mut rng, 1.0, y.shape());
    let e = fd_layer(&[x], &[dropout_backward(&r, cache).unwrap()], |t| {
        dot(&dropout_forward(&t[0], 0.5, Mode::Train, &mut Rng::new(mask_seed)).unwrap().0, &r)
    });
    out.push(("dropout", e));

    // 0–255-like magnitudes so the normaliser is far from identity
    let x = rand_t(&mut rng, 60.0, &[7, 4, 4]);
    let lp = LrnParams::default();
    let (y, cache) = lrn_forward(&x, &lp).unwrap();
    let r = rand_t(&mut rng, 1.0, y.shape());
    let e = fd_layer(&[x], &[lrn_backward(&r, cache).unwrap()], |t| dot(&lrn_forward(&t[0], &lp).unwrap().0, &r));
    out.push(("lrn", e));

    let x = rand_t(&mut rng, 1.0, &[3, 9, 9]);
    let (y, cache) = maxpool_forward(&x, 3, 2).unwrap();
    let r = rand_t(&mut rng, 1.0, y.shape());
    let e = fd_layer(&[x], &[maxpool_backward(&r, cache).unwrap()], |t| {
        dot(&maxpool_forward(&t[0], 3, 2).unwrap().0, &r)
    });
    out.push(("maxpool", e));

    let x = rand_t(&mut rng, 1.0, &[4, 5, 5]);
    let (y, cache) = gap_forward(&x).unwrap();
    let r = rand_t(&mut rng, 1.0, y.shape());
    let e = fd_layer(&[x], &[gap_backward(&r, cache).unwrap()], |t| dot(&gap_forward(&t[0]).unwrap().0, &r));
    out.push(("gap", e));

    let logits = rand_t(&mut rng, 2.0, &[6]);
    let label = rng.below(6);
    let (_, probs) = softmax_xent_forward(&logits, label).unwrap();
    let e = fd_layer(&[logits], &[softmax_xent_backward(&probs, label).unwrap()], |t| {
        softmax_xent_forward(&t[0], label).unwrap().0
    });
    out.push(("softmax-xent", e));
    out
}

/// Reduced network at side 32, sampled entries of every parameter tensor.
fn full_network(seed: u64, mode: Mode) -> (f64, String) {
    let spec = DeepSpaceConfig::reduced(3, 32).build().unwrap();
    let mut rng = Rng::new(seed);
    let mut m = ModelState::<f64>::init(spec, &mut rng).unwrap();
    for (_, t) in m.params_mut().iter_mut() {
        if t.rank() == 1 {
            for v in t.data_mut() {
                *v = 0.05 * rng.gaussian();
            }
        }
    }
    m.mode = mode;
    let x = Tensor::random(&mut rng, Distribution::uniform(0.0, 1.0), [3, 32, 32]).unwrap();
    let label = rng.below(3);
    let mask_seed = rng.fork().seed();
    let pass = m.forward(&x, &mut Rng::new(mask_seed)).unwrap();
    let grads = m.backward(pass, label).unwrap().params;
    let h = 1e-6;
    let names: Vec<String> = m.params().names().map(String::from).collect();
    let (mut worst, mut at) = (0.0f64, String::new());
    for name in names {
        let n = m.params().get(&name).unwrap().len();
        let (mut an, mut num) = (Vec::new(), Vec::new());
        for _ in 0..n.min(6) {
            let i = rng.below(n);
            let orig = m.params().get(&name).unwrap().data()[i];
            m.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = m.loss(&x, label, &mut Rng::new(mask_seed)).unwrap();
            m.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = m.loss(&x, label, &mut Rng::new(mask_seed)).unwrap();
            m.params_mut().get_mut(&name).unwrap().data_mut()[i] = orig;
            num.push((up - down) / (2.0 * h));
            an.push(grads.get(&name).unwrap().data()[i]);
        }
        let e = rel_err(&an, &num);
        if e > worst {
            (worst, at) = (e, name);
        }
    }
    (worst, at)
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let seeds = 20;
    for seed in 0..seeds {
        for (kind, e) in layer_kinds(seed) {
            if e > worst.0 {
                worst = (e, format!("{kind} seed {seed}"));
            }
        }
        let mode = if seed % 2 == 0 { Mode::Eval } else { Mode::Train };
        let (e, at) = full_network(1000 + seed, mode);
        if e > worst.0 {
            worst = (e, format!("network {at} seed {}", 1000 + seed));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!("worst relative error {:.2e} ({}), {seeds} seeds, {secs:.1}s", worst.0, worst.1);
    check(worst.0 < 1e-5, detail.clone())?;
    check(secs < 120.0, format!("too slow: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn shape_ledger() -> Outcome {
    let spec = deepspace_spec(35, 227).map_err(|e| e.to_string())?;
    let trace = spec.spatial_trace().map_err(|e| e.to_string())?;
    let mut stated = vec![55, 27, 27, 13, 13, 13, 13, 11];
    stated.dedup();
    let mut ours = trace.clone();
    ours.dedup();
    check(trace == [55, 27, 27, 13, 13, 13, 11], format!("trace {trace:?}"))?;
    check(ours == stated, format!("collapsed trace {ours:?} vs {stated:?}"))?;
    let fm = spec.feature_map_shape().map_err(|e| e.to_string())?;
    check(fm == Some(ActShape::Map { c: 512, h: 11, w: 11 }), format!("final map {fm:?}"))?;
    Ok(format!("trace {trace:?}, final map 512x11x11"))
}

// ---------------------------------------------------------------- 3

fn learn(classes: usize, iters: u64, decay_every: u64, eval_every: u64, seed: u64) -> Result<(f64, u64, f64), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let err = |e: deepspace::Error| e.to_string();
    let m = synth_generate(classes, 200, dir.path(), 64, &mut Rng::new(seed)).map_err(err)?;
    let (tr, va) = split_validation(&m, 40, &mut Rng::new(seed + 1)).map_err(err)?;
    let train_set = Dataset::load(&tr, 64).map_err(err)?;
    let val_set = Dataset::load(&va, 64).map_err(err)?;
    let mut spec = DeepSpaceConfig::reduced(classes, 64).build().map_err(err)?;
    spec.input_mean = Some(train_set.channel_mean().map_err(err)?);
    let model = ModelState::<f32>::init(spec, &mut Rng::new(seed + 2)).map_err(err)?;
    let cfg = TrainConfig {
        base_lr: 1e-3,
        decay_factor: 0.5,
        decay_every,
        momentum: 0.9,
        batch_size: 32,
        max_iterations: iters,
        eval_every,
        seed: seed + 3,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (_, report) = train(model, &train_set, &val_set, &cfg, |_| {}).map_err(err)?;
    Ok((report.best_top1, report.best_iteration, t0.elapsed().as_secs_f64()))
}

fn desk_scale_learning() -> Outcome {
    let (top1, at, secs) = learn(10, 2000, 500, 250, 1)?;
    let ten = format!("10 classes {:.2}% at iteration {at} in {secs:.0}s", 100.0 * top1);
    let (top1_35, at_35, secs_35) = learn(35, 6000, 1500, 500, 1)?;
    let many = format!("35 classes {:.2}% at iteration {at_35} in {secs_35:.0}s", 100.0 * top1_35);
    let detail = format!("{ten}; {many}");
    check(top1 >= 0.95 && secs < 900.0, format!("{detail} (need >= 95% in 15 min)"))?;
    check(top1_35 >= 0.90 && secs_35 < 1800.0, format!("{detail} (35 classes need >= 90% in 30 min)"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 4

fn lr_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let got = [lr_at(&cfg, 0), lr_at(&cfg, 2000), lr_at(&cfg, 4000)];
    let want = [1e-4f64, 5e-5, 2.5e-5];
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    check(bits(&got) == bits(&want), format!("{got:?} vs {want:?}"))?;
    Ok(format!("{got:?}"))
}

// ---------------------------------------------------------------- 5

fn cam_oracle() -> Outcome {
    let mut rng = Rng::new(55);
    let mut worst_lin: f64 = 0.0;
    for case in 0..50 {
        let (k, s, classes) = (1 + rng.below(12), 1 + rng.below(9), 2 + rng.below(6));
        let fm = Tensor::<f32>::random(&mut rng, Distribution::gaussian(0.0, 1.0), [k, s, s]).unwrap();
        let w = Tensor::<f32>::random(&mut rng, Distribution::gaussian(0.0, 1.0), [classes, k]).unwrap();
        let c = rng.below(classes);
        let cam = compute_cam(&fm, &w, c).map_err(|e| e.to_string())?;
        for y in 0..s {
            for x in 0..s {
                let mut acc = 0.0f32;
                for ch in 0..k {
                    acc += w.data()[c * k + ch] * fm.data()[(ch * s + y) * s + x];
                }
                check(cam.raw.data()[y * s + x] == acc, format!("case {case}: ({y},{x}) differs"))?;
            }
        }

        // linearity in the weight row, in double precision
        let fm64 = Tensor::<f64>::random(&mut rng, Distribution::gaussian(0.0, 1.0), [k, s, s]).unwrap();
        let wa = Tensor::<f64>::random(&mut rng, Distribution::gaussian(0.0, 1.0), [1, k]).unwrap();
        let wb = Tensor::<f64>::random(&mut rng, Distribution::gaussian(0.0, 1.0), [1, k]).unwrap();
        let (a, b) = (rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0));
        let mix: Vec<f64> = wa.data().iter().zip(wb.data()).map(|(p, q)| a * p + b * q).collect();
        let wm = Tensor::new(vec![1, k], mix).unwrap();
        let (ca, cb, cm) = (
            compute_cam(&fm64, &wa, 0).unwrap(),
            compute_cam(&fm64, &wb, 0).unwrap(),
            compute_cam(&fm64, &wm, 0).unwrap(),
        );
        for i in 0..s * s {
            let lin = a * ca.raw.data()[i] + b * cb.raw.data()[i];
            worst_lin = worst_lin.max((cm.raw.data()[i] - lin).abs());
        }

        let pick = rng.below(k);
        let onehot = Tensor::<f32>::from_fn([1, k], |i| if i[1] == pick { 1.0 } else { 0.0 }).unwrap();
        let sel = compute_cam(&fm, &onehot, 0).unwrap();
        check(
            sel.raw.data() == &fm.data()[pick * s * s..(pick + 1) * s * s],
            format!("case {case}: one-hot map differs"),
        )?;
    }
    check(worst_lin < 1e-6, format!("linearity error {worst_lin:.2e}"))?;
    Ok(format!("50 instances exact, linearity error {worst_lin:.1e}"))
}

// ---------------------------------------------------------------- 6

fn gaussian_blur(img: &Tensor<f32>, sigma: f64) -> Tensor<f32> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let ks: f64 = k.iter().sum();
    let [c, h, w] = [img.shape()[0], img.shape()[1], img.shape()[2]];
    let pass = |src: &Tensor<f32>, horiz: bool| {
        Tensor::from_fn([c, h, w], |i| {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let off = j as i64 - r;
                let (y, x) = if horiz {
                    (i[1], (i[2] as i64 + off).clamp(0, w as i64 - 1) as usize)
                } else {
                    ((i[1] as i64 + off).clamp(0, h as i64 - 1) as usize, i[2])
                };
                acc += kv * f64::from(src.data()[(i[0] * h + y) * w + x]);
            }
            (acc / ks) as f32
        })
        .unwrap()
    };
    pass(&pass(img, true), false)
}

fn blur_separation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = synth_generate(20, 10, dir.path(), 128, &mut Rng::new(66)).map_err(|e| e.to_string())?;
    let cfg = BlurConfig::default();
    let (mut kept, mut rejected) = (0, 0);
    for e in &m.entries {
        let sharp = decode_image(&m.resolve(e)).unwrap().pixels;
        kept += blur_indicator(&sharp, &cfg).unwrap().is_sharp as usize;
        rejected += !blur_indicator(&gaussian_blur(&sharp, 3.0), &cfg).unwrap().is_sharp as usize;
    }
    let n = m.entries.len();
    let detail = format!("threshold {}: kept {kept}/{n} sharp, rejected {rejected}/{n} blurred", cfg.threshold);
    check(n == 200 && kept * 100 >= 95 * n && rejected * 100 >= 95 * n, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn analysis_oracle() -> Outcome {
    // row totals 8, 16, 16, 4, 16: every rate is a multiple of 1/16, so all
    // sums are exact in binary floating point regardless of order
    let counts: [[u64; 5]; 5] = [
        [5, 1, 0, 2, 0],
        [3, 10, 2, 0, 1],
        [0, 4, 12, 0, 0],
        [1, 0, 0, 3, 0],
        [0, 2, 1, 0, 13],
    ];
    let mut log = Vec::new();
    for (t, row) in counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            log.extend(std::iter::repeat_n((t, p), c as usize));
        }
    }
    Rng::new(77).shuffle(&mut log);
    check(log.len() == 60, "log must hold 60 records")?;
    let names: Vec<String> = ["lobby", "office", "lab", "kitchen", "hall"].map(String::from).to_vec();

    let cm = build_confusion(&log, &names).map_err(|e| e.to_string())?;
    let mut tally = vec![vec![0u64; 5]; 5];
    for &(t, p) in &log {
        tally[t][p] += 1;
    }
    check(cm.counts == tally, "confusion matrix differs from tally")?;

    // sixteenths as integers
    let totals: Vec<u64> = tally.iter().map(|r| r.iter().sum()).collect();
    let six = |i: usize, j: usize| if i == j { 0 } else { tally[i][j] * (16 / totals[i]) };
    let mm = normalize_misclass(&cm).map_err(|e| e.to_string())?;
    for i in 0..5 {
        for j in 0..5 {
            check(mm.rates[i][j] == six(i, j) as f64 / 16.0, format!("rate ({i},{j})"))?;
        }
        let recall = tally[i][i] as f64 / totals[i] as f64;
        let row: f64 = mm.rates[i].iter().sum();
        check((row - (1.0 - recall)).abs() <= 1e-12, format!("row {i} sums to {row}, recall {recall}"))?;
    }

    let pairs = rank_similar_pairs(&mm);
    check(pairs.len() == 10, format!("{} pairs", pairs.len()))?;
    for p in &pairs {
        let want = (six(p.a, p.b) + six(p.b, p.a)) as f64 / 16.0;
        check(p.score == want, format!("pair ({},{}) {} vs {want}", p.a, p.b, p.score))?;
    }
    check(
        pairs.windows(2).all(|w| w[0].score >= w[1].score),
        "pairs not sorted by score",
    )?;

    let dist = distinctiveness(&mm);
    check(dist.len() == 5, "five distinctiveness scores")?;
    for d in &dist {
        let c = d.class;
        let want: u64 = (0..5).map(|j| six(c, j) + six(j, c)).sum();
        check(d.confusion_sum == want as f64 / 16.0, format!("class {c} sum {}", d.confusion_sum))?;
    }
    let top = &pairs[0];
    Ok(format!(
        "60 records, 10 pairs, 5 sums exact; most similar {}/{} {:.4}",
        names[top.a], names[top.b], top.score
    ))
}

// ---------------------------------------------------------------- 8

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn hierarchy_integration() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = synth_generate(4, 25, dir.path(), 40, &mut Rng::new(88)).map_err(|e| e.to_string())?;
    let images: Vec<ImageRecord> = m.entries.iter().map(|e| decode_image(&m.resolve(e)).unwrap()).collect();
    let side = 32;
    let inputs: Vec<Tensor<f32>> = images.iter().map(|i| preprocess(&i.pixels, side).unwrap()).collect();

    let names1: Vec<String> = ["office", "kitchen", "lab", "hall"].map(String::from).to_vec();
    let names2: Vec<String> = ["wet_lab", "dry_lab", "clean_room"].map(String::from).to_vec();
    let build = |names: &[String], seed| {
        let spec = DeepSpaceConfig::reduced(names.len(), side)
            .with_class_names(names.to_vec())
            .build()
            .unwrap();
        ModelState::<f32>::init(spec, &mut Rng::new(seed)).unwrap()
    };
    let mut level1 = build(&names1, 1);
    let level2 = build(&names2, 2);
    let routed = 2;

    // shift the routed class's bias to its median margin so about half the
    // images take the second stage
    let mut margins: Vec<f32> = inputs
        .iter()
        .map(|x| {
            let l = level1.infer(x).unwrap().logits;
            let d = l.data();
            let other = (0..4).filter(|&c| c != routed).map(|c| d[c]).fold(f32::MIN, f32::max);
            other - d[routed]
        })
        .collect();
    margins.sort_by(f32::total_cmp);
    level1.params_mut().get_mut("fc.bias").unwrap().data_mut()[routed] += margins[margins.len() / 2];

    let h = Hierarchy::new(level1.clone(), [(routed, level2.clone())].into(), 0.0).map_err(|e| e.to_string())?;
    let mut refined = 0;
    for (i, (img, x)) in images.iter().zip(&inputs).enumerate() {
        let got = h.predict(img).map_err(|e| e.to_string())?;
        let c1 = argmax(level1.infer(x).unwrap().probs.data());
        let want = if c1 == routed {
            refined += 1;
            let c2 = argmax(level2.infer(x).unwrap().probs.data());
            format!("{}/{}", names1[c1], names2[c2])
        } else {
            names1[c1].clone()
        };
        check(got.composite_label == want, format!("image {i}: {} vs {want}", got.composite_label))?;
        check(got.level2.is_some() == (c1 == routed), format!("image {i}: level-2 presence"))?;
    }
    check(refined > 0 && refined < images.len(), format!("{refined} routed: both paths must occur"))?;
    Ok(format!("{} images identical, {refined} routed to level 2", images.len()))
}

// ---------------------------------------------------------------- 9

fn serialization() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = DeepSpaceConfig::reduced(5, 32).build().unwrap();
    let model = ModelState::<f32>::init(spec, &mut Rng::new(9)).unwrap();
    let (a, b) = (dir.path().join("a.dsw"), dir.path().join("b.dsw"));
    save(&model, &a).map_err(|e| e.to_string())?;
    let back: ModelState<f32> = load(&a).map_err(|e| e.to_string())?;
    save(&back, &b).map_err(|e| e.to_string())?;
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    check(ba == bb, "resaved file differs")?;
    check(encode(&back) == ba, "in-memory encoding differs from file")?;

    let mut rng = Rng::new(10);
    let mut positions: Vec<usize> = (0..64).chain(ba.len() - 64..ba.len()).collect();
    positions.extend((0..400).map(|_| rng.below(ba.len())));
    for &pos in &positions {
        let mut bad = ba.clone();
        bad[pos] ^= 1 << rng.below(8);
        check(decode::<f32>(&bad).is_err(), format!("flip at byte {pos} went unnoticed"))?;
    }
    Ok(format!(
        "{} bytes round-trip identical, {} single-byte corruptions detected",
        ba.len(),
        positions.len()
    ))
}

// ---------------------------------------------------------------- 10

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deepspace"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn train_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    cli(&["--seed", "4", "synth", "--classes", "3", "--per-class", "12", "--out", &p("raw"), "--side", "48"])?;
    cli(&[
        "prep", "--in-manifest", &p("raw/manifest.txt"), "--out-dir", &p("prep"), "--side", "40",
        "--val-per-class", "4", "--blur-threshold", "0",
    ])?;
    let mut runs = Vec::new();
    for i in 0..2 {
        let model = p(&format!("run{i}.dsw"));
        cli(&[
            "--seed", "21", "train", "--train", &p("prep/train.txt"), "--val", &p("prep/val.txt"), "--arch",
            "reduced", "--input-side", "32", "--lr", "1e-3", "--batch", "8", "--iters", "40", "--eval-every", "10",
            "--precision", "double", "--out-model", &model,
        ])?;
        let report = Path::new(&model).with_extension("csv");
        runs.push((std::fs::read(&model).unwrap(), std::fs::read(report).unwrap()));
    }
    check(runs[0].0 == runs[1].0, "checkpoints differ")?;
    check(runs[0].1 == runs[1].1, "reports differ")?;
    let rows = String::from_utf8_lossy(&runs[0].1).lines().count() - 1;
    Ok(format!("checkpoints ({} bytes) and reports ({rows} rows) byte-identical", runs[0].0.len()))
}
