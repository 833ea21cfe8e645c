//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs under `cargo test` as a plain binary.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fgseg::dataset::{
    crop, decode_pixmap, discover_scene, encode_pixmap, pad_to_multiple, synth_scene, write_scene, Pixmap,
    SynthSceneConfig,
};
use fgseg::gradcheck::{full_model, gradient_check, layer_suite, CheckConfig, LAYER_TOL, MODEL_TOL};
use fgseg::layers::Mode;
use fgseg::metrics::{accumulate, f_measure, pwc, rates, threshold_mask, ConfusionCounts};
use fgseg::network::io::{decode, encode};
use fgseg::network::receptive::{input_field, pooling_field};
use fgseg::network::{load_weights, save_weights, GapMode, ModelConfig, ModelWeights, Network};
use fgseg::rng::streams;
use fgseg::training::{
    gt, schedule_and_stop, split_train_val, train_loop, Action, RmsProp, TrainConfig, TrainFrame, TrainState,
};
use fgseg::{Rng, Shape, Tensor};

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(limit: Duration, t0: Instant, what: &str) -> std::result::Result<Duration, String> {
    let took = t0.elapsed();
    ensure!(took < limit, "{what} took {took:.1?}, limit {limit:?}");
    Ok(took)
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let mut worst_layer: f64 = 0.0;
    let mut layers = 0;
    for seed in 0..3 {
        for op in layer_suite(seed) {
            let rep = ok(gradient_check(op.as_ref(), &CheckConfig { seed, ..Default::default() }))?;
            ensure!(
                rep.passes(LAYER_TOL),
                "{} (seed {seed}): max rel error {:.3e}, {} of {} probes skipped",
                rep.name,
                rep.max_rel_error,
                rep.skipped(),
                rep.checked() + rep.skipped()
            );
            worst_layer = worst_layer.max(rep.max_rel_error);
            layers += 1;
        }
    }
    let model = ok(full_model(1.0 / 8.0, 16, 0))?;
    let rep = ok(gradient_check(&model, &CheckConfig::default()))?;
    ensure!(
        rep.passes(MODEL_TOL),
        "full model: max rel error {:.3e}, {} skipped",
        rep.max_rel_error,
        rep.skipped()
    );
    let took = within(Duration::from_secs(60), t0, "gradient checks")?;
    Ok(format!(
        "{layers} layer checks max {worst_layer:.2e} < {LAYER_TOL:e}; full model max {:.2e} < {MODEL_TOL:e} over {} probes; {took:.1?}",
        rep.max_rel_error,
        rep.checked()
    ))
}

fn shape_contract() -> Outcome {
    let mut cases = 0;
    for wm in [1.0 / 16.0, 1.0 / 8.0, 0.25, 1.0] {
        let net = ok(Network::new(ModelConfig { width_mult: wm, ..Default::default() }))?;
        let w: ModelWeights<f32> = ok(net.init_weights(&mut Rng::new(1)))?;
        let branch = (64.0 * wm).round() as usize;
        let sizes: &[usize] = if wm == 1.0 { &[16] } else { &[16, 32, 64] };
        for &h in sizes {
            for &wd in sizes {
                let x = Tensor::full(Shape::new(1, 3, h, wd), 0.5f32);
                let t = ok(net.forward(&w, &x, Mode::Eval, &mut Rng::new(0)))?;
                let f = t.features.shape();
                ensure!((f.h, f.w) == (h / 4, wd / 4), "wm {wm} {h}x{wd}: encoder output {f}");
                ensure!(
                    t.pooled.shape() == Shape::new(1, 5 * branch, h / 4, wd / 4),
                    "wm {wm} {h}x{wd}: pooling output {}",
                    t.pooled.shape()
                );
                ensure!(
                    t.probability.shape() == Shape::new(1, 1, h, wd),
                    "wm {wm} {h}x{wd}: output {}",
                    t.probability.shape()
                );
                cases += 1;
            }
        }
        if wm == 1.0 {
            ensure!(net.pooled_channels() == 320, "full width gives {} channels", net.pooled_channels());
        }
    }
    Ok(format!("{cases} (width, H, W) cases exact; 320 pooled channels at full width"))
}

fn receptive_field() -> Outcome {
    let t0 = Instant::now();
    let net = ok(Network::new(ModelConfig { width_mult: 1.0 / 8.0, ..Default::default() }))?;
    let w: ModelWeights<f64> = ok(net.init_weights(&mut Rng::new(2)))?;
    let mut rng = Rng::new(3);
    let x = Tensor::from_fn(Shape::new(1, 3, 32, 32), |_, _, _, _| rng.uniform());
    let fused = |f: &Tensor<f64>| -> std::result::Result<Tensor<f64>, String> {
        Ok(ok(net.mfpm_forward(&w, f, Mode::Eval, &mut Rng::new(0)))?.1)
    };
    let (enc, _) = ok(net.encoder_forward(&w, &x, Mode::Eval, &mut Rng::new(0)))?;
    let base = fused(&enc.features)?;
    let fs = enc.features.shape();
    let (mut outside, mut inside) = (0, 0);
    for (i, j) in [(0, 0), (1, 2), (3, 4), (7, 7)] {
        let field = pooling_field(fs.h, fs.w, i, j);
        for u in 0..fs.h {
            for v in 0..fs.w {
                let mut f = enc.features.clone();
                for c in 0..fs.c {
                    f.set(0, c, u, v, f.at(0, c, u, v) + 0.75);
                }
                let out = fused(&f)?;
                let unchanged = (0..base.shape().c).all(|c| out.at(0, c, i, j) == base.at(0, c, i, j));
                if field.get(u, v) {
                    inside += 1;
                } else {
                    ensure!(unchanged, "feature ({u},{v}) outside the field of ({i},{j}) changed it");
                    outside += 1;
                }
            }
        }
    }

    // image level: at 32x32 the field of every location covers the frame, so
    // the bounded case is exercised on a larger input
    ensure!(input_field(32, 32, 0, 0).count() == 32 * 32, "32x32 field is not the whole frame");
    let x = Tensor::from_fn(Shape::new(1, 3, 256, 256), |_, _, _, _| rng.uniform());
    let field = input_field(256, 256, 0, 0);
    let features = |x: &Tensor<f64>| -> std::result::Result<Vec<f64>, String> {
        let (enc, _) = ok(net.encoder_forward(&w, x, Mode::Eval, &mut Rng::new(0)))?;
        let f = fused(&enc.features)?;
        Ok((0..f.shape().c).map(|c| f.at(0, c, 0, 0)).collect())
    };
    let base = features(&x)?;
    let mut pixels = 0;
    for (u, v) in [(150, 0), (0, 150), (150, 150), (255, 255), (200, 17)] {
        ensure!(!field.get(u, v), "pixel ({u},{v}) unexpectedly inside the analytic field");
        let mut y = x.clone();
        for c in 0..3 {
            y.set(0, c, u, v, 1.0 - y.at(0, c, u, v));
        }
        ensure!(features(&y)? == base, "pixel ({u},{v}) outside the field changed location (0,0)");
        pixels += 1;
    }
    let took = within(Duration::from_secs(30), t0, "receptive-field check")?;
    Ok(format!(
        "{outside} out-of-field feature perturbations and {pixels} out-of-field pixels at 256x256 left the pre-norm pooling features bit-identical ({inside} in-field probes); {took:.1?}"
    ))
}

fn gap_ablation() -> Outcome {
    let mut cases = 0;
    for seed in 0..3 {
        let net = ok(Network::new(ModelConfig { width_mult: 1.0 / 8.0, ..Default::default() }))?;
        let w: ModelWeights<f32> = ok(net.init_weights(&mut Rng::new(seed)))?;
        for size in [16, 32] {
            let mut rng = Rng::new(seed + 100);
            let x = Tensor::from_fn(Shape::new(1, 3, size, size), |_, _, _, _| rng.uniform() as f32);
            let zero = ok(net.clone().with_gap_mode(GapMode::Zero).predict(&w, &x))?;
            let off = ok(net.clone().with_gap_mode(GapMode::Off).predict(&w, &x))?;
            let learned = ok(net.predict(&w, &x))?;
            ensure!(
                zero.data().iter().zip(off.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
                "seed {seed} size {size}: zero-alpha output differs from the no-GAP output"
            );
            ensure!(learned != off, "seed {seed} size {size}: learned modulation had no effect");
            cases += 1;
        }
    }
    Ok(format!("{cases} cases: alpha = 0 bit-identical to no-GAP; learned alpha differs"))
}

struct OverfitRun {
    counts: ConfusionCounts,
    history: Vec<u64>,
    weights: ModelWeights<f32>,
    epochs: usize,
}

fn overfit_run(encoder_dropout_rate: f64) -> std::result::Result<OverfitRun, String> {
    let seed = 0;
    let dir = ok(tempfile::tempdir())?;
    let scene = ok(synth_scene(&SynthSceneConfig { frames: 25, seed, ..Default::default() }))?;
    ok(write_scene(dir.path(), &scene))?;
    let layout = ok(discover_scene(dir.path()))?;
    let records = ok(layout.load_frames::<f32>(&layout.ids))?;
    let cfg = TrainConfig { seed, ..Default::default() };
    let split = ok(split_train_val(&layout.ids, cfg.val_fraction, &mut Rng::with_stream(seed, streams::SPLIT)))?;
    ensure!(
        (split.train.len(), split.val.len()) == (20, 5),
        "split is {}+{}",
        split.train.len(),
        split.val.len()
    );
    let frames = |ids: &[u32]| -> std::result::Result<Vec<TrainFrame<f32>>, String> {
        ids.iter()
            .map(|id| ok(records.iter().find(|r| r.id == *id).expect("loaded").to_train_frame()))
            .collect()
    };
    let (train, val) = (frames(&split.train)?, frames(&split.val)?);
    let model = ModelConfig {
        width_mult: 1.0 / 8.0,
        encoder_dropout_rate,
        seed,
        ..Default::default()
    };
    let net = ok(Network::new(model))?;
    let init = ok(net.init_weights(&mut Rng::with_stream(seed, streams::INIT)))?;
    let out = ok(train_loop(&net, init, &train, &val, &cfg, |_| {}))?;
    let mut counts = ConfusionCounts::default();
    for f in &train {
        let rec = records.iter().find(|r| r.id == f.id).expect("loaded");
        let p = ok(net.predict(&out.weights, &f.input))?;
        let p = ok(crop(&p, rec.height, rec.width))?;
        let mask = ok(threshold_mask(&p, 0.5))?;
        counts += ok(accumulate(&mask, &rec.gt, None, rec.width))?.counts;
    }
    let history = out
        .state
        .history
        .iter()
        .flat_map(|r| [r.train_loss.to_bits(), r.val_loss.to_bits()])
        .collect();
    Ok(OverfitRun { counts, history, weights: out.weights, epochs: out.state.epoch })
}

// The encoder dropout rate is not fixed by the architecture description; the
// sanity run trains without it and reports the default-rate run alongside.
const OVERFIT_DROPOUT: f64 = 0.0;

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let a = overfit_run(OVERFIT_DROPOUT)?;
    let b = overfit_run(OVERFIT_DROPOUT)?;
    ensure!(a.history == b.history && a.weights == b.weights, "two runs with seed 0 differ");
    let f = f_measure(&a.counts);
    let e = ok(pwc(&a.counts))?;
    ensure!(a.epochs <= 100, "ran {} epochs", a.epochs);
    ensure!(f >= 0.95 && e <= 1.0, "F {f:.4}, PWC {e:.3} ({:?})", a.counts);
    let took = within(Duration::from_secs(600), t0, "two overfit runs")?;
    Ok(format!(
        "F {f:.4} >= 0.95, PWC {e:.3} <= 1.0 after {} epochs (encoder dropout {OVERFIT_DROPOUT}); two runs bit-identical; {took:.1?}",
        a.epochs
    ))
}

fn overfit_default_dropout() -> String {
    let rate = ModelConfig::default().encoder_dropout_rate;
    match overfit_run(rate).and_then(|r| Ok((f_measure(&r.counts), ok(pwc(&r.counts))?))) {
        Ok((f, e)) => format!("encoder dropout {rate}: F {f:.4}, PWC {e:.3}"),
        Err(e) => format!("encoder dropout {rate}: {e}"),
    }
}

fn oracle_counts(pred: &[bool], labels: &[u8], roi: Option<&[bool]>) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for i in 0..labels.len() {
        if let Some(r) = roi {
            if !r[i] {
                continue;
            }
        }
        match (labels[i], pred[i]) {
            (255, true) => c.tp += 1,
            (255, false) => c.fn_ += 1,
            (0 | 50, true) => c.fp += 1,
            (0 | 50, false) => c.tn += 1,
            _ => {}
        }
    }
    c
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn metric_oracle() -> Outcome {
    let mut rng = Rng::new(6);
    let labels = [gt::STATIC, gt::SHADOW, gt::NON_ROI, gt::UNKNOWN, gt::MOVING];
    let mut totals = ConfusionCounts::default();
    for k in 0..1000 {
        let n = 32 * 32;
        let fg_bias = rng.uniform();
        let lbl: Vec<u8> = (0..n).map(|_| labels[rng.below(5) as usize]).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.bernoulli(fg_bias)).collect();
        let roi: Option<Vec<bool>> = (k % 3 == 0).then(|| (0..n).map(|_| rng.bernoulli(0.7)).collect());
        let got = ok(accumulate(&pred, &lbl, roi.as_deref(), 32))?;
        let want = oracle_counts(&pred, &lbl, roi.as_deref());
        ensure!(got.counts == want && got.unknown == 0, "pair {k}: {:?} vs oracle {want:?}", got.counts);
        let (tp, fp, tn, fn_) = (want.tp as f64, want.fp as f64, want.tn as f64, want.fn_ as f64);
        let f_oracle = if want.tp == 0 { if want.fp + want.fn_ == 0 { 1.0 } else { 0.0 } } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        ensure!(close(f_measure(&got.counts), f_oracle), "pair {k}: F {} vs {f_oracle}", f_measure(&got.counts));
        if want.total() > 0 {
            let p_oracle = 100.0 * (fp + fn_) / (tp + fp + tn + fn_);
            ensure!(close(ok(pwc(&got.counts))?, p_oracle), "pair {k}: PWC mismatch");
        }
        let r = rates(&got.counts);
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        ensure!(
            close(r.precision, div(tp, tp + fp))
                && close(r.recall, div(tp, tp + fn_))
                && close(r.fpr, div(fp, fp + tn))
                && close(r.fnr, div(fn_, fn_ + tp)),
            "pair {k}: rates {r:?}"
        );
        totals += got.counts;
    }
    ensure!(f_measure(&ConfusionCounts::new(1, 1, 0, 1)) == 0.5, "tp=fp=fn=1 does not give F = 0.5");
    ensure!(ok(pwc(&ConfusionCounts::new(0, 1, 98, 1)))? == 2.0, "fp=fn=1 of 100 does not give PWC = 2.0");
    Ok(format!(
        "1000 pairs match the per-pixel oracle ({} evaluated pixels); F and PWC fixtures exact",
        totals.total()
    ))
}

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let mut st = TrainState::new(&cfg);
    let mut actions = Vec::new();
    for _ in 0..11 {
        actions.push(schedule_and_stop(&mut st, &cfg, 0.5, 0.5));
    }
    ensure!(actions[5] == Action::ReduceLr, "no reduction after 5 stagnant epochs: {actions:?}");
    ensure!(
        actions[..5].iter().chain(&actions[6..10]).all(|&a| a == Action::Continue),
        "unexpected actions {actions:?}"
    );
    ensure!(actions[10] == Action::Stop, "no stop after 10 stagnant epochs: {actions:?}");
    let (before, after) = (st.history[5].lr, st.history[6].lr);
    ensure!((after - before * 0.1).abs() < 1e-20, "lr {before} became {after}");

    let mut st = TrainState::new(&cfg);
    let mut epochs = 0;
    loop {
        epochs += 1;
        let l = 1.0 / epochs as f64;
        if schedule_and_stop(&mut st, &cfg, l, l) == Action::Stop {
            break;
        }
        ensure!(epochs < 1000, "improving trace never stopped");
    }
    ensure!(epochs == 100, "improving trace stopped at epoch {epochs}");
    Ok("reduce at 5 stagnant epochs (1e-4 -> 1e-5), stop at 10, hard cap at 100".into())
}

fn rmsprop_step() -> Outcome {
    let mut p = fgseg::layers::Param::kernel("w", Tensor::<f64>::zeros(Shape::new(1, 1, 1, 1)));
    p.grad.fill(1.0);
    RmsProp::default().update(&mut p, 1e-4);
    let dw = p.value.data()[0];
    ensure!((dw + 3.1623e-4).abs() < 1e-8, "delta w = {dw:e}");
    Ok(format!("delta w = {dw:.6e}"))
}

fn serialization() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let cfg = ModelConfig { width_mult: 1.0 / 8.0, ..Default::default() };
    let mut w: ModelWeights<f32> = ok(ModelWeights::init(&cfg, &mut Rng::new(4)))?;
    let mut rng = Rng::new(5);
    for p in w.iter_mut() {
        for v in p.value.data_mut() {
            *v = f32::from_bits(rng.below(u32::MAX as u64) as u32 & 0xbf7f_ffff);
        }
    }
    let path = dir.path().join("model.fgs2");
    ok(save_weights(&w, &path))?;
    let back: ModelWeights<f32> = ok(load_weights(&path, &cfg))?;
    for (a, b) in w.iter().zip(back.iter()) {
        ensure!(
            a.name == b.name && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "tensor {} changed in the round trip",
            a.name
        );
    }
    let bytes = ok(encode(&w))?;
    ensure!(ok(encode(&back))? == bytes, "re-encoding differs");
    ensure!(ok(decode(&bytes))?.len() == w.len(), "decoded tensor count differs");

    for (channels, width, height) in [(1, 7, 5), (3, 13, 4), (3, 1, 1)] {
        let data = (0..width * height * channels).map(|_| rng.below(256) as u8).collect();
        let img = ok(Pixmap::new(width, height, channels, data))?;
        let again = ok(decode_pixmap(&encode_pixmap(&img), std::path::Path::new("mem")))?;
        ensure!(again == img, "{channels}-channel {width}x{height} pixmap changed");
    }

    for (h, wd) in [(5, 7), (8, 8), (1, 3), (13, 6)] {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 3, h, wd), |_, _, _, _| rng.uniform() as f32);
        let (padded, (oh, ow)) = ok(pad_to_multiple(&x, 4))?;
        let s = padded.shape();
        ensure!(s.h % 4 == 0 && s.w % 4 == 0, "padded to {s}");
        ensure!(ok(crop(&padded, oh, ow))? == x, "pad/crop changed a {h}x{wd} tensor");
    }
    Ok(format!("{} weight tensors, 3 pixmaps and 4 pad/crop shapes round-trip bit-exactly", w.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("architecture shape contract", shape_contract),
        ("dilation receptive field", receptive_field),
        ("GAP ablation switch", gap_ablation),
        ("overfit sanity", overfit),
        ("metric oracle equivalence", metric_oracle),
        ("schedule conformance", schedule),
        ("RMSProp single step", rmsprop_step),
        ("serialization round trips", serialization),
    ];
    let only: Option<usize> = std::env::var("FGSEG_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why}");
            }
        }
        if id == 5 && std::env::var_os("FGSEG_SKIP_INFO").is_none() {
            println!("info 5 overfit at the default {}", overfit_default_dropout());
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
