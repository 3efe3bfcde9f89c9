//! Rectified flow-matching objective with CFG dropout and the prototype
//! auxiliary loss, and the minibatch AdamW training loop.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cast, Model, NetBatch, Parameters, PrevIntentTable, Real};
use crate::optim::{clip_grad_norm, one_cycle_lr, AdamW, OptimConfig};
use crate::rng::{self, Rng};
use crate::streaming::ClipContext;
use crate::types::{IntentClass, ModelConfig};

/// Lower/upper clamp keeping `t` inside the open unit interval.
const T_EPS: f64 = 1e-6;

/// `t ~ Beta(1.5, 1)` via the inverse CDF `u^(1/1.5)`.
pub fn sample_time(rng: &mut Rng) -> f64 {
    time_from_uniform(rng.random::<f64>())
}

pub fn time_from_uniform(u: f64) -> f64 {
    u.powf(1.0 / 1.5).clamp(T_EPS, 1.0 - T_EPS)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// `t eps + (1 - t) x0`.
pub fn make_interpolant(x0: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>> {
    same_len(x0, eps)?;
    Ok(x0.iter().zip(eps).map(|(x, e)| t * e + (1.0 - t) * x).collect())
}

/// `eps - x0`.
pub fn fm_target(x0: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    same_len(x0, eps)?;
    Ok(x0.iter().zip(eps).map(|(x, e)| e - x).collect())
}

/// Pseudo-labeled samples always become unconditional; others with
/// probability `p_drop`. One uniform is drawn in every case so the RNG stream
/// does not depend on the flag.
pub fn apply_cfg_dropout(k: IntentClass, is_pseudo: bool, p_drop: f64, rng: &mut Rng) -> IntentClass {
    let u: f64 = rng.random();
    if is_pseudo || u < p_drop {
        IntentClass::UNCOND
    } else {
        k
    }
}

/// Mean squared error between `readout(e_k)` and the class prototype.
pub fn prototype_loss<T: Real>(
    e_k: &[T],
    k: IntentClass,
    prototypes: &[Vec<f64>],
    readout: &crate::nn::Linear<T>,
) -> Result<f64> {
    let proto = prototypes.get(k.index()).ok_or(Error::UndefinedPrototype(k.index()))?;
    let e = Array2::from_shape_vec((1, e_k.len()), e_k.to_vec())
        .map_err(|_| Error::ShapeMismatch { expected: readout.input_dim(), got: e_k.len() })?;
    if e_k.len() != readout.input_dim() {
        return Err(Error::ShapeMismatch { expected: readout.input_dim(), got: e_k.len() });
    }
    let y = readout.forward(&e.view());
    same_len(proto, &vec![0.0; y.len()])?;
    Ok(y.iter()
        .zip(proto)
        .map(|(a, b)| (a.to_f64().unwrap() - b).powi(2))
        .sum::<f64>()
        / proto.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub warmup_fraction: f64,
    /// Noise-free generator draws averaged into each class prototype.
    pub prototype_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 10,
            batch_size: 64,
            grad_clip: 0.5,
            warmup_fraction: 0.05,
            prototype_samples: 64,
        }
    }
}

impl TrainConfig {
    /// Settings that fit the synthetic benchmark in a few minutes on one core.
    pub fn toy() -> Self {
        Self {
            lr: 2e-3,
            weight_decay: 1e-4,
            epochs: 120,
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("warmup_fraction must be in [0,1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig("grad_clip must be > 0".into()));
        }
        Ok(())
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            warmup_fraction: self.warmup_fraction,
            clip_norm: self.grad_clip,
            ..OptimConfig::default()
        }
    }
}

/// One minibatch with all random draws already made.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub x_t: Array2<T>,
    pub t: Array1<T>,
    pub target: Array2<T>,
    pub scene: Array2<T>,
    pub bank: Array2<T>,
    /// Intent after CFG dropout.
    pub intents: Vec<IntentClass>,
    /// Training intent before dropout (for the prototype term).
    pub labels: Vec<IntentClass>,
    /// Previous-intent row after memory dropout.
    pub prevs: Vec<IntentClass>,
}

pub fn make_batch<T: Real>(contexts: &[&ClipContext], cfg: &ModelConfig, rng: &mut Rng) -> Result<Batch<T>> {
    let b = contexts.len();
    let c = cfg.chunk_dim();
    let mut x_t = Array2::zeros((b, c));
    let mut target = Array2::zeros((b, c));
    let mut t = Array1::zeros(b);
    let mut scene = Array2::zeros((b, cfg.scene_dim));
    let mut bank = Array2::zeros((b, cfg.hidden));
    let mut intents = Vec::with_capacity(b);
    let mut labels = Vec::with_capacity(b);
    let mut prevs = Vec::with_capacity(b);
    for (i, ctx) in contexts.iter().enumerate() {
        same_len(&ctx.target, &vec![0.0; c])?;
        let ti = sample_time(rng);
        let eps = rng::normal_vec(rng, c);
        for j in 0..c {
            x_t[[i, j]] = cast(ti * eps[j] + (1.0 - ti) * ctx.target[j]);
            target[[i, j]] = cast(eps[j] - ctx.target[j]);
        }
        t[i] = cast(ti);
        for (j, v) in ctx.scene.iter().enumerate() {
            scene[[i, j]] = cast(*v);
        }
        for (j, v) in ctx.bank_read.iter().enumerate() {
            bank[[i, j]] = cast(*v);
        }
        intents.push(apply_cfg_dropout(ctx.intent, ctx.pseudo, cfg.p_drop, rng));
        labels.push(ctx.intent);
        let u: f64 = rng.random();
        prevs.push(if u < cfg.p_drop { IntentClass::UNCOND } else { ctx.prev });
    }
    Ok(Batch { x_t, t, target, scene, bank, intents, labels, prevs })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub fm: f64,
    pub proto: f64,
    pub total: f64,
}

/// Loss and exact parameter gradients for one batch.
pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    prototypes: &Array2<T>,
    proto_weight: f64,
) -> Result<(Losses, Model<T>)> {
    let b = batch.x_t.nrows();
    let c = batch.x_t.ncols();
    let (e, etape) = model.embedder.embed_record(&batch.intents)?;
    let memory = &batch.bank + &model.prev_table.lookup_batch(&batch.prevs)?;
    let nb = NetBatch {
        x: batch.x_t.clone(),
        t: batch.t.clone(),
        scene: batch.scene.clone(),
        memory,
        intent: e.clone(),
    };
    let (v, tape) = model.net.forward_record(&nb)?;
    let resid = &v - &batch.target;
    let fm = resid.iter().map(|r| r.to_f64().unwrap().powi(2)).sum::<f64>() / (b * c) as f64;
    let mut grads = model.zeros_like();
    let dv = resid * cast::<T>(2.0 / (b * c) as f64);
    let ig = model.net.backward(&tape, &dv.view(), Some(&mut grads.net));

    let mut de = ig.intent;
    let rows: Vec<usize> = (0..b).filter(|&i| !batch.intents[i].is_uncond()).collect();
    let mut proto = 0.0;
    if !rows.is_empty() && proto_weight > 0.0 {
        let e_rows = e.select(Axis(0), &rows);
        let mut target = Array2::zeros((rows.len(), c));
        for (r, &i) in rows.iter().enumerate() {
            let k = batch.labels[i].index();
            if k >= prototypes.nrows() {
                return Err(Error::UndefinedPrototype(k));
            }
            target.row_mut(r).assign(&prototypes.row(k));
        }
        let y = model.readout.forward(&e_rows.view());
        let pr = &y - &target;
        let n = (rows.len() * c) as f64;
        proto = pr.iter().map(|r| r.to_f64().unwrap().powi(2)).sum::<f64>() / n;
        let dy = pr * cast::<T>(2.0 * proto_weight / n);
        let de_rows = model.readout.backward(&e_rows.view(), &dy.view(), Some(&mut grads.readout));
        for (r, &i) in rows.iter().enumerate() {
            let mut row = de.row_mut(i);
            row += &de_rows.row(r);
        }
    }
    model.embedder.backward(&etape, &de.view(), &mut grads.embedder);
    PrevIntentTable::backward(&batch.prevs, &ig.memory.view(), &mut grads.prev_table);
    Ok((
        Losses { fm, proto, total: fm + proto_weight * proto },
        grads,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: usize,
    pub epoch: usize,
    pub fm_loss: f64,
    pub proto_loss: f64,
    /// Global gradient norm after clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

pub fn telemetry_csv(rows: &[TelemetryRow], comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        s.push_str(&format!("# {c}\n"));
    }
    s.push_str("step,fm_loss,proto_loss,grad_norm,lr\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e}\n",
            r.step, r.fm_loss, r.proto_loss, r.grad_norm, r.lr
        ));
    }
    s
}

pub fn prototype_matrix<T: Real>(prototypes: &[Vec<f64>], chunk_dim: usize) -> Result<Array2<T>> {
    let mut m = Array2::zeros((prototypes.len(), chunk_dim));
    for (k, p) in prototypes.iter().enumerate() {
        if p.len() != chunk_dim {
            return Err(Error::ShapeMismatch { expected: chunk_dim, got: p.len() });
        }
        for (j, v) in p.iter().enumerate() {
            m[[k, j]] = cast(*v);
        }
    }
    Ok(m)
}

/// Resumable training loop over shuffled epochs; [`train`] runs it to the end.
pub struct Trainer<T> {
    protos: Array2<T>,
    cfg: ModelConfig,
    rng: Rng,
    opt: AdamW<T>,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    step: usize,
    total: usize,
    epochs: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(
        model: &Model<T>,
        contexts: &[ClipContext],
        prototypes: &[Vec<f64>],
        tc: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        tc.validate()?;
        let cfg = model.config.clone();
        let protos = prototype_matrix::<T>(prototypes, cfg.chunk_dim())?;
        let bs = tc.batch_size.min(contexts.len());
        let total = contexts.len().div_ceil(bs) * tc.epochs;
        let order: Vec<usize> = (0..contexts.len()).collect();
        Ok(Self {
            protos,
            cfg,
            rng: rng::seeded(seed, rng::hash_str("fm-train")),
            opt: AdamW::new(model, tc.optim()),
            batch_size: bs,
            cursor: order.len(),
            order,
            epoch: 0,
            step: 0,
            total,
            epochs: tc.epochs,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total
    }

    /// One optimizer step on the contexts given at construction; `None` once
    /// every epoch has run.
    pub fn step(&mut self, model: &mut Model<T>, contexts: &[ClipContext]) -> Result<Option<TelemetryRow>> {
        if self.is_done() {
            return Ok(None);
        }
        if contexts.len() != self.order.len() {
            return Err(Error::ShapeMismatch { expected: self.order.len(), got: contexts.len() });
        }
        if self.cursor >= self.order.len() {
            if self.step > 0 {
                self.epoch += 1;
            }
            debug_assert!(self.epoch < self.epochs);
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let refs: Vec<&ClipContext> = self.order[self.cursor..end].iter().map(|&i| &contexts[i]).collect();
        self.cursor = end;
        let batch = make_batch::<T>(&refs, &self.cfg, &mut self.rng)?;
        let (losses, mut grads) = loss_and_grads(model, &batch, &self.protos, self.cfg.proto_weight)?;
        if !losses.total.is_finite() {
            return Err(Error::NanLoss { step: self.step, fm: losses.fm, proto: losses.proto });
        }
        let grad_norm = clip_grad_norm(&mut grads, self.opt.cfg.clip_norm);
        let lr = one_cycle_lr(&self.opt.cfg, self.step, self.total);
        self.opt.update(model, &grads, lr);
        let row = TelemetryRow {
            step: self.step,
            epoch: self.epoch,
            fm_loss: losses.fm,
            proto_loss: losses.proto,
            grad_norm,
            lr,
        };
        self.step += 1;
        Ok(Some(row))
    }
}

/// Trains net, embedder, previous-intent rows and readout in place.
pub fn train<T: Real>(
    model: &mut Model<T>,
    contexts: &[ClipContext],
    prototypes: &[Vec<f64>],
    tc: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&TelemetryRow),
) -> Result<Vec<TelemetryRow>> {
    let mut trainer = Trainer::new(model, contexts, prototypes, tc, seed)?;
    let mut rows = Vec::with_capacity(trainer.total_steps());
    while let Some(row) = trainer.step(model, contexts)? {
        on_step(&row);
        rows.push(row);
    }
    Ok(rows)
}
