//! Cross-clip memory: previous-intent token, compressed clip tokens in a FIFO
//! bank, and SE(2) re-alignment of stored anchors into the current ego frame.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bridge::{self, BridgeConfig, ParseOutcome};
use crate::error::{Error, Result};
use crate::labeler::{self, Thresholds};
use crate::nn::{Model, PrevIntentTable, Real};
use crate::rng;
use crate::sampler;
use crate::types::{wrap_deg, ClipRecord, IntentClass, MetaAction, ModelConfig, Trajectory};

/// Planar pose; heading in radians, normalized to (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

pub fn wrap_rad(a: f64) -> f64 {
    wrap_deg(a.to_degrees()).to_radians()
}

impl EgoPose {
    pub const ORIGIN: EgoPose = EgoPose { x: 0.0, y: 0.0, heading: 0.0 };

    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: wrap_rad(heading) }
    }

    /// Pose of `self` (given in frame A) expressed in frame B.
    pub fn realign(&self, a: &EgoPose, b: &EgoPose) -> EgoPose {
        let [x, y] = se2_realign([self.x, self.y], a, b);
        EgoPose::new(x, y, self.heading + a.heading - b.heading)
    }
}

/// Maps a point from frame A to frame B, both poses given in a common frame.
pub fn se2_realign(p: [f64; 2], a: &EgoPose, b: &EgoPose) -> [f64; 2] {
    let (sa, ca) = a.heading.sin_cos();
    let wx = ca * p[0] - sa * p[1] + a.x;
    let wy = sa * p[0] + ca * p[1] + a.y;
    let (dx, dy) = (wx - b.x, wy - b.y);
    let (sb, cb) = b.heading.sin_cos();
    [cb * dx + sb * dy, -sb * dx + cb * dy]
}

/// Row `K` if there is no usable outcome, else the parsed intent's row.
pub fn prev_intent_index(outcome: Option<&ParseOutcome>, is_pseudo: bool) -> IntentClass {
    match outcome {
        Some(o) if o.parsed_ok && !is_pseudo => o.intent,
        _ => IntentClass::UNCOND,
    }
}

pub fn prev_intent_token<T: Real>(
    table: &PrevIntentTable<T>,
    outcome: Option<&ParseOutcome>,
    is_pseudo: bool,
) -> Vec<T> {
    let k = prev_intent_index(outcome, is_pseudo);
    table.rows.row(k.index()).to_vec()
}

const COMPRESSOR_SEED: u64 = 0xC0_4E55;
const STEP_FEATURES: usize = 5;
/// Meters per unit in the compressor's position features.
const POSITION_SCALE: f64 = 10.0;

/// Frozen single-layer multi-head cross-attention from `m` query tokens onto
/// the clip summary vectors `[scene projection, per-step past-state projections]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Compressor {
    pub queries: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub w_scene: Array2<f64>,
    pub w_step: Array2<f64>,
    /// Projection of a relative pose to a positional-encoding vector.
    pub w_pose: Array2<f64>,
    pub heads: usize,
}

fn random(rows: usize, cols: usize, std: f64, r: &mut rng::Rng) -> Array2<f64> {
    let v = rng::normal_vec(r, rows * cols).into_iter().map(|x| x * std).collect();
    Array2::from_shape_vec((rows, cols), v).unwrap()
}

impl Compressor {
    pub fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let mut r = rng::seeded(COMPRESSOR_SEED, (h * 1000 + cfg.scene_dim) as u64);
        Self {
            queries: random(cfg.memory_tokens, h, 1.0, &mut r),
            w_key: random(h, h, 1.0 / (h as f64).sqrt(), &mut r),
            w_value: random(h, h, 1.0 / (h as f64).sqrt(), &mut r),
            w_scene: random(h, cfg.scene_dim, 1.0 / (cfg.scene_dim as f64).sqrt(), &mut r),
            w_step: random(h, STEP_FEATURES, 1.0 / (STEP_FEATURES as f64).sqrt(), &mut r),
            w_pose: random(h, 4, 0.5, &mut r),
            heads: cfg.memory_heads,
        }
    }

    pub fn summary(&self, record: &ClipRecord) -> Result<Array2<f64>> {
        if record.past_state.is_empty() && record.scene_features.is_empty() {
            return Err(Error::EmptyState);
        }
        let h = self.queries.ncols();
        let mut rows = Vec::new();
        if record.scene_features.len() == self.w_scene.ncols() {
            let s = ndarray::Array1::from(record.scene_features.clone());
            rows.push(self.w_scene.dot(&s).mapv(f64::tanh));
        } else if !record.scene_features.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: self.w_scene.ncols(),
                got: record.scene_features.len(),
            });
        }
        for p in &record.past_state {
            let hd = p[2].to_radians();
            let f = ndarray::arr1(&[
                p[0] / POSITION_SCALE,
                p[1] / POSITION_SCALE,
                hd.sin(),
                hd.cos(),
                p[3] / 10.0,
            ]);
            rows.push(self.w_step.dot(&f).mapv(f64::tanh));
        }
        let mut out = Array2::zeros((rows.len(), h));
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&r);
        }
        Ok(out)
    }

    /// Returns the `m x H` tokens and the attention weights `[head][query][key]`.
    pub fn attend(&self, summary: &Array2<f64>) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        if summary.nrows() == 0 {
            return Err(Error::EmptyState);
        }
        let h = self.queries.ncols();
        let dh = h / self.heads;
        let keys = summary.dot(&self.w_key.t());
        let values = summary.dot(&self.w_value.t());
        let mut out = Array2::zeros((self.queries.nrows(), h));
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let cols = ndarray::s![.., head * dh..(head + 1) * dh];
            let q = self.queries.slice(cols);
            let k = keys.slice(cols);
            let v = values.slice(cols);
            let mut a = q.dot(&k.t()) / (dh as f64).sqrt();
            for mut row in a.rows_mut() {
                let mx = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - mx).exp());
                let s = row.sum();
                row /= s;
            }
            out.slice_mut(cols).assign(&a.dot(&v));
            weights.push(a);
        }
        Ok((out, weights))
    }

    pub fn compress_clip(&self, record: &ClipRecord) -> Result<Array2<f64>> {
        Ok(self.attend(&self.summary(record)?)?.0)
    }

    pub fn pose_encoding(&self, pose: &EgoPose) -> ndarray::Array1<f64> {
        let f = ndarray::arr1(&[
            pose.x / POSITION_SCALE,
            pose.y / POSITION_SCALE,
            pose.heading.sin(),
            pose.heading.cos() - 1.0,
        ]);
        self.w_pose.dot(&f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub tokens: Array2<f64>,
    /// Ego pose at the entry's clip, expressed in the current ego frame.
    pub anchor: EgoPose,
    pub clip_index: u32,
}

/// FIFO over whole clip entries; capacity is counted in tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    entries: VecDeque<MemoryEntry>,
    capacity: usize,
}

impl MemoryBank {
    pub fn new(capacity_tokens: usize) -> Self {
        Self { entries: VecDeque::new(), capacity: capacity_tokens }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_tokens(&self) -> usize {
        self.entries.iter().map(|e| e.tokens.nrows()).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        self.entries.push_back(entry);
        while self.num_tokens() > self.capacity && self.entries.len() > 1 {
            self.entries.pop_front();
        }
    }

    /// Re-expresses every anchor after the ego moved; `prev_in_current` is the
    /// previous ego frame's pose in the new frame.
    pub fn realign(&mut self, prev_in_current: &EgoPose) {
        for e in &mut self.entries {
            e.anchor = e.anchor.realign(prev_in_current, &EgoPose::ORIGIN);
        }
    }

    /// Mean over stored tokens of `token + PE(anchor)`; zeros when empty.
    pub fn read(&self, compressor: &Compressor) -> Vec<f64> {
        let h = compressor.queries.ncols();
        let mut acc = ndarray::Array1::zeros(h);
        let mut n = 0usize;
        for e in &self.entries {
            let pe = compressor.pose_encoding(&e.anchor);
            for row in e.tokens.rows() {
                acc += &row;
                acc += &pe;
                n += 1;
            }
        }
        if n > 0 {
            acc /= n as f64;
        }
        acc.to_vec()
    }
}

/// Index into `past_state` of the previous clip's ego pose (two 4 Hz steps back).
pub const PREV_CLIP_STATE: usize = 13;

/// Memory state for one stream, shared by training-time context building and
/// the streaming engine.
#[derive(Clone, Debug)]
pub struct MemoryState {
    pub compressor: Compressor,
    pub bank: MemoryBank,
    sequence: Option<String>,
    last_clip: u32,
    prev: IntentClass,
}

/// What a clip is conditioned on before its own intent is known.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipMemory {
    pub bank_read: Vec<f64>,
    pub prev: IntentClass,
}

impl MemoryState {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            compressor: Compressor::new(cfg),
            bank: MemoryBank::new(cfg.memory_capacity),
            sequence: None,
            last_clip: 0,
            prev: IntentClass::UNCOND,
        }
    }

    pub fn reset(&mut self) {
        self.bank.clear();
        self.sequence = None;
        self.prev = IntentClass::UNCOND;
    }

    pub fn begin_clip(&mut self, record: &ClipRecord) -> Result<ClipMemory> {
        if self.sequence.as_deref() == Some(record.sequence_id.as_str()) {
            if record.clip_index != self.last_clip + 1 {
                return Err(Error::OutOfOrderClip {
                    sequence: record.sequence_id.clone(),
                    expected: self.last_clip + 1,
                    got: record.clip_index,
                });
            }
            if let Some(p) = record.past_state.get(PREV_CLIP_STATE) {
                self.bank.realign(&EgoPose::new(p[0], p[1], p[2].to_radians()));
            }
        } else {
            self.reset();
            self.sequence = Some(record.sequence_id.clone());
        }
        self.last_clip = record.clip_index;
        Ok(ClipMemory {
            bank_read: self.bank.read(&self.compressor),
            prev: self.prev,
        })
    }

    /// Records the clip's outcome and pushes its compressed tokens.
    pub fn commit(&mut self, record: &ClipRecord, raw: &ParseOutcome, committed: IntentClass) -> Result<()> {
        let usable = ParseOutcome { intent: committed, ..raw.clone() };
        self.prev = prev_intent_index(Some(&usable), record.is_pseudo_labeled);
        self.bank.push(MemoryEntry {
            tokens: self.compressor.compress_clip(record)?,
            anchor: EgoPose::ORIGIN,
            clip_index: record.clip_index,
        });
        Ok(())
    }
}

/// Runs the bridge on a record: raw parse plus the committed (possibly relabeled) intent.
pub fn resolve_intent(
    record: &ClipRecord,
    bridge_cfg: &BridgeConfig,
    th: &Thresholds,
) -> Result<(ClipRecord, ParseOutcome, bridge::Provenance)> {
    let labeled = if record.meta_action.is_some() {
        record.clone()
    } else {
        bridge::fill_meta_action(record, th)?
    };
    let raw = bridge::parse_intent(&labeled.intent_text, bridge_cfg.fallback);
    let (out, prov) = bridge::relabel_if_inconsistent(&labeled, bridge_cfg)?;
    Ok((out, raw, prov))
}

/// Training example with its teacher-forced streaming context.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipContext {
    pub scene: Vec<f64>,
    pub bank_read: Vec<f64>,
    pub prev: IntentClass,
    pub intent: IntentClass,
    pub pseudo: bool,
    /// Ground-truth chunk in model units.
    pub target: Vec<f64>,
}

/// Streams the records in order, feeding each clip's committed intent to the next.
pub fn teacher_forced_contexts(
    records: &[ClipRecord],
    cfg: &ModelConfig,
    bridge_cfg: &BridgeConfig,
    th: &Thresholds,
) -> Result<Vec<ClipContext>> {
    let mut state = MemoryState::new(cfg);
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mem = state.begin_clip(r)?;
        let (resolved, raw, _) = resolve_intent(r, bridge_cfg, th)?;
        let intent = resolved.intent.expect("resolved");
        if r.scene_features.len() != cfg.scene_dim {
            return Err(Error::ShapeMismatch { expected: cfg.scene_dim, got: r.scene_features.len() });
        }
        let target = r.trajectory.to_chunk(cfg.coord_scale);
        if target.len() != cfg.chunk_dim() {
            return Err(Error::ShapeMismatch { expected: cfg.chunk_dim(), got: target.len() });
        }
        out.push(ClipContext {
            scene: r.scene_features.clone(),
            bank_read: mem.bank_read,
            prev: mem.prev,
            intent,
            pseudo: r.is_pseudo_labeled,
            target,
        });
        state.commit(r, &raw, intent)?;
    }
    Ok(out)
}

/// Per-clip result of [`StreamingEngine::step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub sequence_id: String,
    pub clip_index: u32,
    pub parsed_intent: IntentClass,
    pub parsed_ok: bool,
    pub committed_intent: IntentClass,
    pub relabeled: bool,
    pub trajectory: Trajectory,
    pub meta_action: MetaAction,
    pub consistent: bool,
    pub used_unknown_prev: bool,
}

#[derive(Clone, Debug)]
pub struct StreamSettings {
    pub guidance: f64,
    pub steps: usize,
    pub distilled: bool,
    pub seed: u64,
    pub label_horizon_s: f64,
    pub thresholds: Thresholds,
    pub bridge: BridgeConfig,
}

impl StreamSettings {
    pub fn from_config(cfg: &ModelConfig, seed: u64) -> Self {
        Self {
            guidance: cfg.guidance_scale,
            steps: cfg.euler_steps,
            distilled: false,
            seed,
            label_horizon_s: 3.0,
            thresholds: Thresholds::default(),
            bridge: BridgeConfig::default(),
        }
    }
}

/// Single-owner streaming loop over clips.
pub struct StreamingEngine<'m> {
    pub model: &'m Model<f32>,
    pub settings: StreamSettings,
    pub state: MemoryState,
}

impl<'m> StreamingEngine<'m> {
    pub fn new(model: &'m Model<f32>, settings: StreamSettings) -> Self {
        Self { state: MemoryState::new(&model.config), model, settings }
    }

    pub fn step(&mut self, record: &ClipRecord) -> Result<StepOutput> {
        let cfg = &self.model.config;
        let s = &self.settings;
        let mem = self.state.begin_clip(record)?;
        let (resolved, raw, prov) = resolve_intent(record, &s.bridge, &s.thresholds)?;
        let committed = resolved.intent.expect("resolved");

        let prev_row = self.model.prev_table.rows.row(mem.prev.index());
        let memory: Vec<f64> = mem
            .bank_read
            .iter()
            .zip(prev_row.iter())
            .map(|(b, p)| b + *p as f64)
            .collect();
        let mut r = rng::seeded(
            s.seed,
            rng::hash_str(&record.sequence_id) ^ (record.clip_index as u64).wrapping_mul(0x1000_0001),
        );
        let cond = sampler::Conditioning::single(&record.scene_features, &memory);
        let chunk = if s.distilled {
            sampler::sample_distilled(self.model, &cond, &[committed], s.steps, &mut r)?
        } else {
            sampler::sample(self.model, &cond, &[committed], s.guidance, s.steps, &mut r)?
        };
        let row: Vec<f64> = chunk.row(0).iter().map(|&v: &f32| v as f64).collect();
        let trajectory = Trajectory::from_chunk(&row, cfg.coord_scale, cfg.rate_hz)?;
        let window = crate::types::KinematicWindow::from_trajectory(&trajectory, s.label_horizon_s)?;
        let meta = labeler::label(&window, &s.thresholds)?;
        let consistent =
            bridge::consistency_check(&s.bridge.table, committed, &meta)? == bridge::Consistency::Consistent;
        self.state.commit(record, &raw, committed)?;
        Ok(StepOutput {
            sequence_id: record.sequence_id.clone(),
            clip_index: record.clip_index,
            parsed_intent: raw.intent,
            parsed_ok: raw.parsed_ok,
            committed_intent: committed,
            relabeled: prov.relabeled,
            trajectory,
            meta_action: meta,
            consistent,
            used_unknown_prev: mem.prev.is_uncond(),
        })
    }
}
