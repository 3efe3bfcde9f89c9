//! Guidance distillation: a single-pass intent embedding fitted to the
//! teacher's guided velocity along the teacher's own Euler trajectory.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm::TrainConfig;
use crate::nn::checkpoint::{param_checksum, TEACHER_PREFIXES};
use crate::nn::{cast, component_rng, DistilledIntentEmbedder, Model, NetBatch, Parameters, Real};
use crate::optim::{clip_grad_norm, one_cycle_lr, AdamW};
use crate::rng::{self, Rng};
use crate::sampler::{draw_noise, teacher_embeddings, teacher_velocity, Conditioning};
use crate::streaming::ClipContext;
use crate::types::IntentClass;

/// Student steps are this many times fewer than teacher steps.
pub const STEP_RATIO: usize = 10;

/// `base[k] = w e(k) - (w - 1) e(K)` for `k < K`, `base[K] = e(K)`, zero residual.
pub fn warm_start<T: Real>(model: &Model<T>, w: f64) -> DistilledIntentEmbedder<T> {
    let cfg = &model.config;
    let all: Vec<IntentClass> = (0..=cfg.num_intents)
        .map(|k| IntentClass::new(k).unwrap())
        .collect();
    let e = model.embedder.embed_batch(&all).expect("all rows in range");
    let uncond = e.row(cfg.num_intents).to_owned();
    let mut student = DistilledIntentEmbedder::new(cfg, &mut component_rng(cfg.seed, "distilled"));
    let (wt, wm1): (T, T) = (cast(w), cast(w - 1.0));
    for k in 0..cfg.num_intents {
        let row = &e.row(k) * wt - &uncond * wm1;
        student.base.row_mut(k).assign(&row);
    }
    student.base.row_mut(cfg.num_intents).assign(&uncond);
    student
}

pub fn forward_distilled<T: Real>(student: &DistilledIntentEmbedder<T>, k: IntentClass) -> Result<ndarray::Array1<T>> {
    student.forward(k)
}

/// Conditioning rows of a set of contexts, with memory = bank read + previous-intent row.
pub fn context_conditioning<T: Real>(model: &Model<T>, contexts: &[&ClipContext]) -> Result<Conditioning<T>> {
    let prevs: Vec<IntentClass> = contexts.iter().map(|c| c.prev).collect();
    let prev_rows = model.prev_table.lookup_batch(&prevs)?;
    let scenes: Vec<&[f64]> = contexts.iter().map(|c| c.scene.as_slice()).collect();
    let banks: Vec<&[f64]> = contexts.iter().map(|c| c.bank_read.as_slice()).collect();
    let mut cond = Conditioning::<T>::batch(&scenes, &banks);
    cond.memory += &prev_rows;
    Ok(cond)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillRow {
    pub step: usize,
    /// Per-step velocity MSE summed over the Euler steps.
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// One batch: rolls the teacher from fresh noise and accumulates student gradients.
pub fn distill_batch<T: Real>(
    model: &Model<T>,
    student: &DistilledIntentEmbedder<T>,
    contexts: &[&ClipContext],
    w: f64,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<(f64, DistilledIntentEmbedder<T>)> {
    let b = contexts.len();
    let c = model.config.chunk_dim();
    let intents: Vec<IntentClass> = contexts.iter().map(|x| x.intent).collect();
    let cond = context_conditioning(model, contexts)?;
    let cond2 = Conditioning {
        scene: ndarray::concatenate(ndarray::Axis(0), &[cond.scene.view(), cond.scene.view()]).unwrap(),
        memory: ndarray::concatenate(ndarray::Axis(0), &[cond.memory.view(), cond.memory.view()]).unwrap(),
    };
    let e_teacher = teacher_embeddings(model, &intents)?;
    let (e_s, s_tape) = student.forward_record(&intents)?;
    let mut de = Array2::<T>::zeros(e_s.raw_dim());
    let mut x: Array2<T> = draw_noise(b, c, rng);
    let dt: T = cast(-1.0 / n_steps as f64);
    let mut loss = 0.0;
    for i in 0..n_steps {
        let t: T = cast(1.0 - i as f64 / n_steps as f64);
        let v_t = teacher_velocity(model, &x, t, &cond2, &e_teacher, w)?;
        let nb = NetBatch {
            x: x.clone(),
            t: ndarray::Array1::from_elem(b, t),
            scene: cond.scene.clone(),
            memory: cond.memory.clone(),
            intent: e_s.clone(),
        };
        let (v_s, tape) = model.net.forward_record(&nb)?;
        let r = &v_s - &v_t;
        loss += r.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>() / (b * c) as f64;
        let dv = r * cast::<T>(2.0 / (b * c) as f64);
        de += &model.net.backward(&tape, &dv.view(), None).intent;
        if v_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVelocity { step: i });
        }
        x.scaled_add(dt, &v_t);
    }
    let mut grads = student.zeros_like();
    student.backward(&s_tape, &de.view(), &mut grads);
    Ok((loss, grads))
}

/// Fits the student embedder with net, teacher embedder and previous-intent
/// rows frozen. Runs `teacher_steps / STEP_RATIO` optimizer steps.
#[allow(clippy::too_many_arguments)]
pub fn distill<T: Real>(
    model: &mut Model<T>,
    contexts: &[ClipContext],
    tc: &TrainConfig,
    teacher_steps: usize,
    w: f64,
    n_steps: usize,
    seed: u64,
    mut on_step: impl FnMut(&DistillRow),
) -> Result<Vec<DistillRow>> {
    if contexts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    tc.validate()?;
    let before = param_checksum(model, &TEACHER_PREFIXES);
    let mut student = match model.distilled.take() {
        Some(s) => s,
        None => warm_start(model, w),
    };
    let total = (teacher_steps / STEP_RATIO).max(1);
    let mut opt_cfg = tc.optim();
    opt_cfg.weight_decay = 0.0;
    let mut opt = AdamW::new(&student, opt_cfg);
    let mut rng = rng::seeded(seed, rng::hash_str("distill"));
    let bs = tc.batch_size.min(contexts.len());
    let mut order: Vec<usize> = (0..contexts.len()).collect();
    let mut cursor = order.len();
    let mut rows = Vec::with_capacity(total);
    for step in 0..total {
        if cursor + bs > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let refs: Vec<&ClipContext> = order[cursor..cursor + bs].iter().map(|&i| &contexts[i]).collect();
        cursor += bs;
        let (loss, mut grads) = distill_batch(model, &student, &refs, w, n_steps, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::NanLoss { step, fm: loss, proto: 0.0 });
        }
        let grad_norm = clip_grad_norm(&mut grads, tc.grad_clip);
        let lr = one_cycle_lr(&opt.cfg, step, total);
        opt.update(&mut student, &grads, lr);
        let row = DistillRow { step, loss, grad_norm, lr };
        on_step(&row);
        rows.push(row);
    }
    model.distilled = Some(student);
    if param_checksum(model, &TEACHER_PREFIXES) != before {
        return Err(Error::FrozenViolation);
    }
    Ok(rows)
}

/// Mean per-step velocity error of the student against the guided teacher,
/// and the teacher-vs-unconditional velocity gap, along teacher trajectories.
pub fn velocity_fidelity<T: Real>(
    model: &Model<T>,
    contexts: &[ClipContext],
    w: f64,
    n_steps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let student = model
        .distilled
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("model has no distilled embedder".into()))?;
    let refs: Vec<&ClipContext> = contexts.iter().collect();
    let b = refs.len();
    let c = model.config.chunk_dim();
    let intents: Vec<IntentClass> = refs.iter().map(|x| x.intent).collect();
    let cond = context_conditioning(model, &refs)?;
    let e_t = teacher_embeddings(model, &intents)?;
    let e_s = student.forward_batch(&intents)?;
    let cond2 = Conditioning {
        scene: ndarray::concatenate(ndarray::Axis(0), &[cond.scene.view(), cond.scene.view()]).unwrap(),
        memory: ndarray::concatenate(ndarray::Axis(0), &[cond.memory.view(), cond.memory.view()]).unwrap(),
    };
    let e_u = e_t.slice(ndarray::s![b.., ..]).to_owned();
    let mut rng = rng::seeded(seed, rng::hash_str("fidelity"));
    let mut x: Array2<T> = draw_noise(b, c, &mut rng);
    let dt: T = cast(-1.0 / n_steps as f64);
    let (mut err, mut gap) = (0.0, 0.0);
    let mse = |a: &Array2<T>, b: &Array2<T>| {
        a.iter().zip(b.iter()).map(|(x, y)| (*x - *y).to_f64().unwrap().powi(2)).sum::<f64>() / a.len() as f64
    };
    for i in 0..n_steps {
        let t: T = cast(1.0 - i as f64 / n_steps as f64);
        let v_t = teacher_velocity(model, &x, t, &cond2, &e_t, w)?;
        let mk = |e: &Array2<T>| NetBatch {
            x: x.clone(),
            t: ndarray::Array1::from_elem(b, t),
            scene: cond.scene.clone(),
            memory: cond.memory.clone(),
            intent: e.clone(),
        };
        let v_s = model.net.forward(&mk(&e_s))?;
        let v_u = model.net.forward(&mk(&e_u))?;
        err += mse(&v_s, &v_t);
        gap += mse(&v_t, &v_u);
        x.scaled_add(dt, &v_t);
    }
    Ok((err / n_steps as f64, gap / n_steps as f64))
}
