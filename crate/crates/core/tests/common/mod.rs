//! Oracles and fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use intentflow::fm;
use intentflow::nn::{Activation, Model, Parameters};
use intentflow::rng::{self, Rng};
use intentflow::sampler::{self, cfg_combine, euler_rollout, Conditioning};
use intentflow::streaming::ClipContext;
use intentflow::types::{IntentClass, KinematicWindow, Lateral, Longitudinal, ModelConfig};
use intentflow::labeler::Thresholds;
use ndarray::Array2;
use rand::Rng as _;

// ---------------------------------------------------------------------------
// Meta-action rules, written out directly from the threshold table.

fn wrap(d: f64) -> f64 {
    let mut r = d % 360.0;
    if r > 180.0 {
        r -= 360.0;
    }
    if r <= -180.0 {
        r += 360.0;
    }
    r
}

pub fn oracle_label(w: &KinematicWindow, th: &Thresholds) -> (Longitudinal, Lateral) {
    let n = w.speeds.len();
    let v_s = w.speeds[0];
    let v_e = w.speeds[n - 1];
    let mut v_max = w.speeds[0];
    for &v in &w.speeds {
        if v > v_max {
            v_max = v;
        }
    }
    let dx = w.positions[n - 1][0] - w.positions[0][0];
    let dy = w.positions[n - 1][1] - w.positions[0][1];
    let dtheta = wrap(w.headings[n - 1] - w.headings[0]);

    let lon_rules: [(bool, Longitudinal); 6] = [
        (v_max <= th.speed_stop, Longitudinal::Stop),
        (dx < -th.reverse_dist, Longitudinal::Reverse),
        (v_s > th.speed_stop && v_e <= th.speed_stop, Longitudinal::Stopping),
        (v_s <= th.speed_stop && v_e > th.speed_stop, Longitudinal::Starting),
        (
            (v_e - v_s).abs() > f64::max(th.lon_min_delta, v_s * th.lon_speed_ratio),
            if v_e > v_s { Longitudinal::Accelerate } else { Longitudinal::Decelerate },
        ),
        (true, Longitudinal::MaintainSpeed),
    ];
    let lon = lon_rules.iter().find(|r| r.0).unwrap().1;

    if lon == Longitudinal::Reverse {
        let lat = if dy.abs() <= th.lat_offset_nudge {
            Lateral::Maintain
        } else if dy > 0.0 {
            Lateral::ReverseLeft
        } else {
            Lateral::ReverseRight
        };
        return (lon, lat);
    }

    let mut deltas = Vec::new();
    for i in 1..n {
        deltas.push(wrap(w.headings[i] - w.headings[i - 1]));
    }
    let m = deltas.len() as f64;
    let mut sum = 0.0;
    let (mut pos, mut neg) = (0.0, 0.0);
    for &d in &deltas {
        sum += d;
        if d > 0.0 {
            pos += 1.0;
        }
        if d < 0.0 {
            neg += 1.0;
        }
    }
    let mean_ok = (sum / m).abs() > th.sustained_yaw_mean;
    let sustained_left = mean_ok && pos / m >= th.sustained_yaw_ratio;
    let sustained_right = mean_ok && !sustained_left && neg / m >= th.sustained_yaw_ratio;
    let side = |l: Lateral, r: Lateral| if dy > 0.0 { l } else { r };

    let lat_rules: [(bool, Lateral); 5] = [
        (sustained_left, Lateral::SteerLeft),
        (sustained_right, Lateral::SteerRight),
        (
            dy.abs() > th.lat_offset_steer && dtheta.abs() > th.yaw_change_steer,
            side(Lateral::SteerLeft, Lateral::SteerRight),
        ),
        (
            dy.abs() > th.lat_offset_nudge && dtheta.abs() > th.yaw_change_nudge,
            side(Lateral::NudgeLeft, Lateral::NudgeRight),
        ),
        (true, Lateral::Maintain),
    ];
    (lon, lat_rules.iter().find(|r| r.0).unwrap().1)
}

fn pick<T: Copy>(rng: &mut Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

/// Windows concentrated near every threshold, including exact boundary values.
pub fn random_window(rng: &mut Rng) -> KinematicWindow {
    let n = rng.random_range(2..=16);
    let th = Thresholds::default();
    let boundary = [0.0, 0.1, th.speed_stop, 0.31, 1.0, 5.0, 10.0, 10.4, 10.5];
    let speeds: Vec<f64> = match rng.random_range(0..4) {
        0 => (0..n).map(|_| rng.random_range(0.0..0.35)).collect(),
        1 => {
            let a = pick(rng, &boundary);
            let b = if rng.random_bool(0.5) { pick(rng, &boundary) } else { rng.random_range(0.0..15.0) };
            (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
        }
        2 => {
            let base = rng.random_range(0.0..15.0);
            let delta = pick(rng, &[0.0, 0.49, 0.5, 0.51, -0.5, 2.0, -2.0, 0.15 * base]);
            (0..n).map(|i| if i == n - 1 { base + delta } else { base + rng.random_range(-1.0..1.0f64).max(-base) }).collect()
        }
        _ => (0..n).map(|_| rng.random_range(0.0..15.0)).collect(),
    };
    let h0 = rng.random_range(-180.0..180.0);
    let mut headings = vec![h0];
    let mode = rng.random_range(0..4);
    let step = pick(rng, &[0.5, 1.0, 1.2, 2.0, 3.0, 7.0]) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let flip_frac = pick(rng, &[0.0, 0.1, 0.2, 0.25, 0.5]);
    for _ in 1..n {
        let prev = *headings.last().unwrap();
        let d = match mode {
            0 => 0.0,
            1 => step,
            2 => if rng.random_bool(flip_frac) { -step } else { step },
            _ => rng.random_range(-8.0..8.0),
        };
        let mut h = prev + d;
        if rng.random_bool(0.1) {
            // Raw headings may wrap around.
            h += if rng.random_bool(0.5) { 360.0 } else { -360.0 };
        }
        headings.push(h);
    }
    let x0 = rng.random_range(-5.0..5.0);
    let y0 = rng.random_range(-5.0..5.0);
    let dx = if rng.random_bool(0.3) {
        pick(rng, &[-0.5, -0.51, -0.6, -3.0, 0.0])
    } else {
        rng.random_range(-2.0..30.0)
    };
    let dy = if rng.random_bool(0.4) {
        pick(rng, &[0.0, 0.3, -0.3, 0.31, -0.31, 1.5, -1.5, 1.6, -1.6, 0.4])
    } else {
        rng.random_range(-4.0..4.0)
    };
    let positions: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            if i == n - 1 {
                [x0 + dx, y0 + dy]
            } else if i == 0 {
                [x0, y0]
            } else {
                [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]
            }
        })
        .collect();
    let dt = pick(rng, &[0.1, 0.25, 0.5]);
    KinematicWindow::new(speeds, headings, positions, dt).unwrap()
}

// ---------------------------------------------------------------------------
// Small models and synthetic contexts.

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        intent_embed_inner: 6,
        scene_dim: 4,
        chunk_len: 3,
        time_freqs: 3,
        memory_tokens: 2,
        memory_capacity: 4,
        ..ModelConfig::default()
    }
}

pub fn random_contexts(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<ClipContext> {
    let mut r = rng::seeded(seed, 77);
    (0..n)
        .map(|i| ClipContext {
            scene: rng::normal_vec(&mut r, cfg.scene_dim),
            bank_read: rng::normal_vec(&mut r, cfg.hidden).iter().map(|v| 0.3 * v).collect(),
            prev: IntentClass::new((i * 7) % (cfg.num_intents + 1)).unwrap(),
            intent: IntentClass::new((i * 3) % cfg.num_intents).unwrap(),
            pseudo: i % 5 == 4,
            target: rng::normal_vec(&mut r, cfg.chunk_dim()),
        })
        .collect()
}

/// Max relative error per top-level parameter group between analytic
/// gradients and central differences with step `h`.
pub fn grad_check<P, F>(params: &P, analytic: &P, h: f64, per_tensor: usize, seed: u64, loss: F) -> BTreeMap<String, f64>
where
    P: Parameters<f64> + Clone,
    F: Fn(&P) -> f64,
{
    let mut r = rng::seeded(seed, 5);
    let meta: Vec<(String, usize)> = params.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut out = BTreeMap::new();
    for (ti, (name, len)) in meta.iter().enumerate() {
        let g = &grads[ti];
        // The largest entries plus a random sample.
        let mut idx: Vec<usize> = (0..*len).collect();
        idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        let mut chosen: Vec<usize> = idx.iter().take(per_tensor / 2).copied().collect();
        for _ in 0..per_tensor - per_tensor / 2 {
            chosen.push(r.random_range(0..*len));
        }
        for &ei in &chosen {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti].1[ei] += delta;
                loss(&p)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = g[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            let group = name.split('.').next().unwrap().to_string();
            let e = out.entry(group).or_insert(0.0f64);
            *e = e.max(rel);
        }
    }
    out
}

/// Relative errors for the teacher loss, covering net, embedder,
/// previous-intent table and prototype readout.
pub fn teacher_grad_errors(seed: u64) -> BTreeMap<String, f64> {
    let cfg = tiny_config();
    let model = Model::<f64>::new(&cfg).unwrap();
    let ctx = random_contexts(&cfg, 12, seed);
    let refs: Vec<&ClipContext> = ctx.iter().collect();
    let mut r = rng::seeded(seed, 9);
    let batch = fm::make_batch::<f64>(&refs, &cfg, &mut r).unwrap();
    let protos = Array2::from_shape_fn((cfg.num_intents, cfg.chunk_dim()), |(i, j)| ((i * 31 + j * 7) % 11) as f64 / 11.0 - 0.5);
    let (_, grads) = fm::loss_and_grads(&model, &batch, &protos, 0.5).unwrap();
    grad_check(&model, &grads, 1e-5, 8, seed, |m| {
        fm::loss_and_grads(m, &batch, &protos, 0.5).unwrap().0.total
    })
}

/// Relative errors for the distillation loss over the student embedder.
pub fn student_grad_errors(seed: u64) -> BTreeMap<String, f64> {
    let cfg = tiny_config();
    let model = Model::<f64>::new(&cfg).unwrap();
    let mut student = intentflow::distill::warm_start(&model, 1.5);
    // Move off the zero-residual start so every residual layer has gradient.
    let mut r = rng::seeded(seed, 11);
    for (_, d) in student.tensors_mut() {
        for v in d.iter_mut() {
            *v += 0.2 * rng::normal_vec(&mut r, 1)[0];
        }
    }
    let ctx = random_contexts(&cfg, 6, seed);
    let refs: Vec<&ClipContext> = ctx.iter().collect();
    let run = |s: &intentflow::nn::DistilledIntentEmbedder<f64>| {
        let mut r = rng::seeded(seed, 13);
        intentflow::distill::distill_batch(&model, s, &refs, 1.5, 2, &mut r).unwrap()
    };
    let (_, grads) = run(&student);
    let mut errs = grad_check(&student, &grads, 1e-5, 8, seed, |s| run(s).0);
    // Report under a single group name.
    let worst = errs.values().copied().fold(0.0, f64::max);
    errs.clear();
    errs.insert("distilled".into(), worst);
    errs
}

// ---------------------------------------------------------------------------
// Sampler oracles.

/// Worst deviations on 100 random inputs: w=0 against the unconditional
/// field, w=1 against the conditional field and against `v_u + 1 (v_c - v_u)`.
pub fn cfg_identity_errors(seed: u64) -> (f64, f64, f64) {
    let cfg = tiny_config();
    let model = Model::<f64>::new(&cfg).unwrap();
    let mut r = rng::seeded(seed, 21);
    let (mut e0, mut e1, mut e1_expr) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let x: Array2<f64> = sampler::draw_noise(1, cfg.chunk_dim(), &mut r);
        let t: f64 = r.random_range(0.0..1.0);
        let scene = rng::normal_vec(&mut r, cfg.scene_dim);
        let mem = rng::normal_vec(&mut r, cfg.hidden);
        let cond = Conditioning::<f64>::single(&scene, &mem);
        let k = IntentClass::new(i % cfg.num_intents).unwrap();
        let ec = model.embedder.embed_batch(&[k]).unwrap();
        let eu = model.embedder.embed_batch(&[IntentClass::UNCOND]).unwrap();
        let fwd = |e: &Array2<f64>| {
            model.net.forward(&intentflow::nn::NetBatch {
                x: x.clone(),
                t: ndarray::Array1::from_elem(1, t),
                scene: cond.scene.clone(),
                memory: cond.memory.clone(),
                intent: e.clone(),
            }).unwrap()
        };
        let (vc, vu) = (fwd(&ec), fwd(&eu));
        let g0 = sampler::cfg_velocity(&model.net, &x, t, &cond, &ec, &eu, 0.0).unwrap();
        let g1 = sampler::cfg_velocity(&model.net, &x, t, &cond, &ec, &eu, 1.0).unwrap();
        let expr = &vu + &((&vc - &vu) * 1.0);
        let maxdiff = |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        e0 = e0.max(maxdiff(&g0, &vu));
        e1 = e1.max(maxdiff(&g1, &vc));
        e1_expr = e1_expr.max(maxdiff(&g1, &expr));
        assert_eq!(cfg_combine(&vc, &vu, 0.0), vu);
    }
    (e0, e1, e1_expr)
}

/// Worst error over constant-field and straight-path rollouts.
pub fn euler_errors(n_steps: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::seeded(seed, 31);
    let dim = 6;
    let x0: Array2<f64> = sampler::draw_noise(4, dim, &mut r);
    let eps: Array2<f64> = sampler::draw_noise(4, dim, &mut r);
    let c: Array2<f64> = sampler::draw_noise(4, dim, &mut r);
    // dx/dt = c from t=1 to t=0 ends at x(1) - c.
    let out = euler_rollout(eps.clone(), n_steps, |_, _, _| Ok(c.clone())).unwrap();
    let closed = &eps - &c;
    let e_const = out.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // Field of the straight interpolant toward x0: v = (x - x0) / t.
    let out = euler_rollout(eps, n_steps, |x, t, _| Ok((x - &x0) / t)).unwrap();
    let e_line = out.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (e_const, e_line)
}

/// Max |single-pass - two-pass| on a net that is affine in the embedding.
pub fn affine_warm_start_error(w: f64, n_steps: usize, seed: u64) -> f64 {
    let cfg = tiny_config();
    let mut model = Model::<f64>::with_activation(&cfg, Activation::Identity).unwrap();
    model.distilled = Some(intentflow::distill::warm_start(&model, w));
    let ctx = random_contexts(&cfg, 20, seed);
    let refs: Vec<&ClipContext> = ctx.iter().collect();
    let cond = intentflow::distill::context_conditioning(&model, &refs).unwrap();
    let intents: Vec<IntentClass> = ctx.iter().map(|c| c.intent).collect();
    let mut r = rng::seeded(seed, 41);
    let noise: Array2<f64> = sampler::draw_noise(ctx.len(), cfg.chunk_dim(), &mut r);
    let two = sampler::sample_from_noise(&model, &cond, &intents, w, n_steps, noise.clone()).unwrap();
    let one = sampler::distilled_from_noise(&model, &cond, &intents, n_steps, noise).unwrap();
    two.iter().zip(&one).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// (empirical CFG-dropout rate over n draws, empirical mean of n time draws).
pub fn dropout_and_time_stats(n_drop: usize, n_time: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::seeded(seed, 51);
    let dropped = (0..n_drop)
        .filter(|i| fm::apply_cfg_dropout(IntentClass::new(i % 20).unwrap(), false, 0.15, &mut r).is_uncond())
        .count();
    let mut r = rng::seeded(seed, 52);
    let mean = (0..n_time).map(|_| fm::sample_time(&mut r)).sum::<f64>() / n_time as f64;
    (dropped as f64 / n_drop as f64, mean)
}

// ---------------------------------------------------------------------------
// Command-line pipeline.

pub struct CliRun {
    pub command: &'static str,
    pub outputs: Vec<String>,
    pub code: i32,
}

/// Runs the full subcommand chain inside `dir`, writing relative paths.
pub fn run_cli_chain(bin: &std::path::Path, dir: &std::path::Path, seed: u64) -> Vec<CliRun> {
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"model": {"hidden": 16, "intent_embed_inner": 16}, "train": {"epochs": 3, "batch_size": 32}}"#,
    )
    .unwrap();
    let seed = seed.to_string();
    let steps: Vec<(&'static str, Vec<&str>, Vec<&str>)> = vec![
        ("gen-data", vec!["--n", "12", "--config", "cfg.json", "--out", "data.jsonl"], vec!["data.jsonl"]),
        ("label", vec!["--data", "data.jsonl", "--out", "labeled.jsonl"], vec!["labeled.jsonl"]),
        ("validate", vec!["--data", "labeled.jsonl", "--out", "valid.jsonl"], vec!["valid.jsonl"]),
        (
            "train",
            vec!["--data", "valid.jsonl", "--config", "cfg.json", "--out", "teacher.ckpt", "--telemetry", "train.csv"],
            vec!["teacher.ckpt", "train.csv"],
        ),
        (
            "distill",
            vec!["--ckpt", "teacher.ckpt", "--data", "valid.jsonl", "--out", "student.ckpt", "--telemetry", "distill.csv"],
            vec!["student.ckpt", "distill.csv"],
        ),
        (
            "sample",
            vec!["--ckpt", "student.ckpt", "--scene-file", "valid.jsonl", "--intent", "turning_left", "--out", "sample.json"],
            vec!["sample.json"],
        ),
        ("stream", vec!["--ckpt", "student.ckpt", "--data", "valid.jsonl", "--out", "stream.jsonl"], vec!["stream.jsonl"]),
        (
            "eval",
            vec!["--ckpt", "student.ckpt", "--data", "valid.jsonl", "--distilled", "--out", "report.json"],
            vec!["report.json"],
        ),
        (
            "plot",
            vec!["--ckpt", "student.ckpt", "--scene-file", "valid.jsonl", "--traj", "sample.json", "--out", "plot.svg"],
            vec!["plot.svg"],
        ),
    ];
    steps
        .into_iter()
        .map(|(cmd, args, outs)| {
            let status = std::process::Command::new(bin)
                .current_dir(dir)
                .arg("--seed")
                .arg(&seed)
                .arg(cmd)
                .args(&args)
                .stderr(std::process::Stdio::null())
                .status()
                .expect("spawn cli");
            CliRun { command: cmd, outputs: outs.iter().map(|s| s.to_string()).collect(), code: status.code().unwrap_or(-1) }
        })
        .collect()
}

/// Per subcommand: exit code zero in both runs and byte-identical outputs.
pub fn cli_reproducibility(bin: &std::path::Path) -> Vec<(&'static str, bool)> {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_cli_chain(bin, a.path(), 3);
    let rb = run_cli_chain(bin, b.path(), 3);
    ra.iter()
        .zip(&rb)
        .map(|(x, y)| {
            let same = x.code == 0
                && y.code == 0
                && x.outputs.iter().all(|o| {
                    let p = std::fs::read(a.path().join(o));
                    let q = std::fs::read(b.path().join(o));
                    matches!((p, q), (Ok(p), Ok(q)) if p == q && !p.is_empty())
                });
            (x.command, same)
        })
        .collect()
}
