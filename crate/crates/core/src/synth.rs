//! Synthetic parametric-maneuver benchmark.
//!
//! Each intent maps to a family of unicycle rollouts whose parameters are
//! chosen to trip exactly the labeler thresholds that intent requires. Scenes
//! carry a feature vector that encodes the admissible intent set, so
//! ambiguous scenes are genuinely multimodal.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bridge::{self, BridgeConfig};
use crate::error::{Error, Result};
use crate::labeler::{self, Thresholds};
use crate::rng::{self, Rng};
use crate::types::{ClipRecord, IntentClass, KinematicWindow, ModelConfig, Trajectory, NUM_INTENTS};

/// Lane-change sigmoid time constant in seconds.
const SHIFT_TAU_S: f64 = 0.5;
const SUBSTEPS: usize = 32;
/// Seed of the fixed scene-feature projection.
const PROJECTION_SEED: u64 = 0x5CE7E;
/// Cadence between consecutive clips (2 Hz).
pub const CLIP_PERIOD_S: f64 = 0.5;
pub const PAST_STEPS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSpec {
    pub intent: IntentClass,
    /// 1/m, positive turns left.
    pub curvature: f64,
    pub speed_start: f64,
    pub speed_end: f64,
    /// Signed lateral offset in meters, applied as a sigmoid; positive is left.
    pub lateral_shift: f64,
    pub noise_sigma: f64,
    /// Seconds over which speed ramps linearly from start to end.
    pub ramp_s: f64,
    /// Time of the sigmoid midpoint for the lateral shift.
    pub shift_center_s: f64,
}

impl ManeuverSpec {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.curvature,
            self.speed_start,
            self.speed_end,
            self.lateral_shift,
            self.noise_sigma,
            self.ramp_s,
            self.shift_center_s,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        if self.intent.is_uncond() {
            return Err(Error::InvalidSpec("unconditional slot has no maneuver".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidSpec("noise_sigma < 0".into()));
        }
        if self.ramp_s <= 0.0 {
            return Err(Error::InvalidSpec("ramp_s must be > 0".into()));
        }
        Ok(())
    }

    fn speed_at(&self, t: f64) -> f64 {
        let a = (t / self.ramp_s).min(1.0);
        self.speed_start + (self.speed_end - self.speed_start) * a
    }

    fn shift_at(&self, t: f64) -> f64 {
        if self.lateral_shift == 0.0 {
            return 0.0;
        }
        let s = |t: f64| 1.0 / (1.0 + (-(t - self.shift_center_s) / SHIFT_TAU_S).exp());
        self.lateral_shift * (s(t) - s(0.0))
    }
}

/// Unicycle rollout of `spec` over `cfg.chunk_len` waypoints.
///
/// Heading integrates curvature times speed; positions are integrated with a
/// midpoint rule on fine substeps, which is exact for straight linear ramps.
pub fn generate_trajectory(spec: &ManeuverSpec, cfg: &ModelConfig, rng: &mut Rng) -> Result<Trajectory> {
    spec.validate()?;
    let dt = 1.0 / cfg.rate_hz;
    let h = dt / SUBSTEPS as f64;
    let (mut x, mut y, mut theta) = (0.0f64, 0.0f64, 0.0f64);
    let mut points = Vec::with_capacity(cfg.chunk_len);
    for i in 0..cfg.chunk_len {
        for j in 0..SUBSTEPS {
            let t0 = i as f64 * dt + j as f64 * h;
            let v_mid = spec.speed_at(t0 + 0.5 * h);
            let theta_mid = theta + 0.5 * h * spec.curvature * v_mid;
            x += h * v_mid * theta_mid.cos();
            y += h * v_mid * theta_mid.sin();
            theta += h * spec.curvature * v_mid;
        }
        let t = (i + 1) as f64 * dt;
        points.push([x, y + spec.shift_at(t)]);
    }
    if spec.noise_sigma > 0.0 {
        for p in &mut points {
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            p[0] += spec.noise_sigma * nx;
            p[1] += spec.noise_sigma * ny;
        }
    }
    Trajectory::new(points, cfg.rate_hz)
}

/// Speed-start range each intent family accepts.
pub fn speed_range(intent: IntentClass) -> (f64, f64) {
    match intent {
        IntentClass::CRUISING | IntentClass::LANE_KEEPING | IntentClass::FOLLOWING => (4.0, 12.0),
        IntentClass::LANE_CHANGE_LEFT | IntentClass::LANE_CHANGE_RIGHT => (6.0, 12.0),
        IntentClass::TURNING_LEFT | IntentClass::TURNING_RIGHT => (3.0, 8.0),
        IntentClass::U_TURN | IntentClass::PARKING => (2.0, 4.0),
        IntentClass::STARTING | IntentClass::WAITING | IntentClass::REVERSING => (0.0, 0.0),
        IntentClass::STOPPING => (3.0, 10.0),
        IntentClass::ACCELERATING => (2.0, 9.0),
        IntentClass::DECELERATING => (6.0, 10.0),
        IntentClass::BRAKING => (8.0, 12.0),
        IntentClass::YIELDING | IntentClass::AVOIDING_OBSTACLE => (5.0, 10.0),
        IntentClass::MERGING => (6.0, 12.0),
        IntentClass::OVERTAKING => (6.0, 10.0),
        _ => (0.0, 0.0),
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws maneuver parameters for `intent` starting near `speed_hint` (clamped
/// into the intent's range). `noise_sigma` is left at zero.
pub fn sample_spec(intent: IntentClass, speed_hint: f64, rng: &mut Rng) -> ManeuverSpec {
    let (lo, hi) = speed_range(intent);
    let v = speed_hint.clamp(lo, hi);
    let mut s = ManeuverSpec {
        intent,
        curvature: 0.0,
        speed_start: v,
        speed_end: v,
        lateral_shift: 0.0,
        noise_sigma: 0.0,
        ramp_s: 5.0,
        shift_center_s: 2.5,
    };
    match intent {
        IntentClass::LANE_CHANGE_LEFT | IntentClass::LANE_CHANGE_RIGHT => {
            let sign = if intent == IntentClass::LANE_CHANGE_LEFT { 1.0 } else { -1.0 };
            s.lateral_shift = sign * uniform(rng, 2.5, 3.7);
            s.shift_center_s = uniform(rng, 2.0, 2.8);
        }
        IntentClass::TURNING_LEFT | IntentClass::TURNING_RIGHT => {
            let sign = if intent == IntentClass::TURNING_LEFT { 1.0 } else { -1.0 };
            let angle = uniform(rng, 1.2, 2.0);
            s.curvature = sign * (angle / (5.0 * v)).clamp(0.03, 0.12);
        }
        IntentClass::U_TURN => {
            let sign = if rng.random::<f64>() < 0.7 { 1.0 } else { -1.0 };
            let angle = uniform(rng, 2.9, 3.3);
            s.curvature = sign * (angle / (5.0 * v)).clamp(0.15, 0.3);
        }
        IntentClass::STARTING => {
            s.speed_start = 0.0;
            s.speed_end = uniform(rng, 3.0, 6.0);
        }
        IntentClass::STOPPING => {
            s.speed_end = 0.0;
            s.ramp_s = uniform(rng, 1.5, 2.5);
        }
        IntentClass::WAITING => {
            s.speed_start = 0.0;
            s.speed_end = 0.0;
        }
        IntentClass::ACCELERATING => s.speed_end = v + uniform(rng, 3.0, 5.0),
        IntentClass::DECELERATING => s.speed_end = v - uniform(rng, 3.0, 5.0),
        IntentClass::BRAKING => {
            s.speed_end = v - uniform(rng, 4.0, 6.0);
            s.ramp_s = 2.0;
        }
        IntentClass::YIELDING => {
            s.speed_end = v - uniform(rng, 3.0, 4.5);
            s.ramp_s = 3.0;
        }
        IntentClass::MERGING => {
            s.lateral_shift = uniform(rng, 1.0, 2.0);
            s.shift_center_s = uniform(rng, 1.5, 2.5);
        }
        IntentClass::OVERTAKING => {
            s.speed_end = v + uniform(rng, 2.0, 4.0);
            s.lateral_shift = uniform(rng, 2.5, 3.5);
            s.shift_center_s = uniform(rng, 1.5, 2.5);
        }
        IntentClass::AVOIDING_OBSTACLE => {
            s.lateral_shift = -uniform(rng, 0.8, 1.5);
            s.shift_center_s = uniform(rng, 1.5, 2.5);
        }
        IntentClass::PARKING => {
            s.speed_end = 0.0;
            s.ramp_s = uniform(rng, 1.5, 2.5);
            s.lateral_shift = -uniform(rng, 0.5, 1.0);
            s.shift_center_s = 1.0;
        }
        IntentClass::REVERSING => {
            s.speed_start = 0.0;
            s.speed_end = -uniform(rng, 1.0, 2.0);
            s.ramp_s = 1.0;
        }
        _ => {}
    }
    s
}

/// Groups of intents that one scene can admit at the same time.
pub const AMBIGUITY_GROUPS: &[&[IntentClass]] = &[
    &[IntentClass::TURNING_LEFT, IntentClass::TURNING_RIGHT],
    &[IntentClass::LANE_CHANGE_LEFT, IntentClass::LANE_CHANGE_RIGHT, IntentClass::LANE_KEEPING],
    &[IntentClass::STOPPING, IntentClass::FOLLOWING],
    &[IntentClass::ACCELERATING, IntentClass::DECELERATING],
    &[IntentClass::STARTING, IntentClass::WAITING, IntentClass::REVERSING],
    &[IntentClass::BRAKING, IntentClass::OVERTAKING],
    &[IntentClass::YIELDING, IntentClass::MERGING],
    &[IntentClass::AVOIDING_OBSTACLE, IntentClass::CRUISING],
    &[IntentClass::PARKING, IntentClass::U_TURN],
];

/// Intersection of the speed ranges of a group.
pub fn group_speed_range(group: &[IntentClass]) -> (f64, f64) {
    group.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(lo, hi), k| {
        let (a, b) = speed_range(*k);
        (lo.max(a), hi.min(b))
    })
}

/// Hand-authored clip-to-clip successor lists.
fn successors(k: IntentClass) -> &'static [IntentClass] {
    use IntentClass as I;
    match k {
        I::CRUISING | I::LANE_KEEPING => &[
            I::LANE_KEEPING,
            I::CRUISING,
            I::FOLLOWING,
            I::DECELERATING,
            I::ACCELERATING,
            I::LANE_CHANGE_LEFT,
            I::LANE_CHANGE_RIGHT,
            I::TURNING_LEFT,
            I::TURNING_RIGHT,
            I::OVERTAKING,
            I::YIELDING,
            I::MERGING,
            I::AVOIDING_OBSTACLE,
            I::BRAKING,
            I::STOPPING,
        ],
        I::FOLLOWING => &[I::CRUISING, I::DECELERATING, I::BRAKING, I::ACCELERATING, I::STOPPING],
        I::LANE_CHANGE_LEFT | I::LANE_CHANGE_RIGHT => &[I::CRUISING, I::LANE_KEEPING],
        I::TURNING_LEFT | I::TURNING_RIGHT | I::U_TURN => &[I::CRUISING, I::ACCELERATING],
        I::STARTING => &[I::ACCELERATING, I::CRUISING],
        I::STOPPING => &[I::WAITING, I::STARTING],
        I::WAITING => &[I::STARTING, I::ACCELERATING, I::REVERSING],
        I::ACCELERATING => &[I::CRUISING, I::LANE_KEEPING, I::FOLLOWING],
        I::DECELERATING => &[I::STOPPING, I::CRUISING, I::TURNING_LEFT, I::TURNING_RIGHT, I::U_TURN, I::PARKING],
        I::BRAKING => &[I::STOPPING, I::WAITING],
        I::YIELDING => &[I::STOPPING, I::DECELERATING, I::CRUISING],
        I::OVERTAKING | I::MERGING | I::AVOIDING_OBSTACLE => &[I::LANE_KEEPING, I::CRUISING],
        I::PARKING => &[I::WAITING, I::REVERSING],
        _ => &[I::WAITING, I::STARTING],
    }
}

const STAY_PROB: f64 = 0.35;

pub fn next_intent(prev: IntentClass, rng: &mut Rng) -> IntentClass {
    if rng.random::<f64>() < STAY_PROB {
        return prev;
    }
    let succ = successors(prev);
    succ[rng.random_range(0..succ.len())]
}

/// Fixed random projection from (admissible one-hot, speed, curvature sign)
/// to scene features. Identical for every dataset with the same `scene_dim`.
pub fn scene_projection(scene_dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(PROJECTION_SEED, scene_dim as u64);
    let inputs = NUM_INTENTS + 2;
    let scale = 1.0 / (inputs as f64).sqrt() * 2.0;
    (0..scene_dim)
        .map(|_| rng::normal_vec(&mut r, inputs).into_iter().map(|v| v * scale).collect())
        .collect()
}

pub fn encode_scene(
    projection: &[Vec<f64>],
    admissible: &[IntentClass],
    speed_start: f64,
    curvature_sign: f64,
    noise: f64,
    rng: &mut Rng,
) -> Vec<f64> {
    let mut input = vec![0.0; NUM_INTENTS + 2];
    for k in admissible {
        input[k.index()] = 1.0;
    }
    input[NUM_INTENTS] = speed_start / 10.0;
    input[NUM_INTENTS + 1] = curvature_sign;
    projection
        .iter()
        .map(|row| {
            let v: f64 = row.iter().zip(&input).map(|(a, b)| a * b).sum();
            let n: f64 = StandardNormal.sample(rng);
            v + noise * n
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub scene_features: Vec<f64>,
    pub gt_trajectory: Trajectory,
    pub gt_intent: IntentClass,
    pub admissible_intents: Vec<IntentClass>,
    pub spec: ManeuverSpec,
}

/// Produces the CoT-shaped answer for a clip.
pub trait Annotator {
    fn annotate(&self, record: &ClipRecord, gt: IntentClass, rng: &mut Rng) -> String;
}

/// Template annotator: four sections ending in the intent span, with an
/// optional corruption rate that drops or garbles the span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockAnnotator {
    pub corruption: f64,
}

impl Annotator for MockAnnotator {
    fn annotate(&self, record: &ClipRecord, gt: IntentClass, rng: &mut Rng) -> String {
        let speed = record.past_state.last().map(|p| p[3]).unwrap_or(0.0);
        let meta = record
            .meta_action
            .map(|m| {
                format!(
                    "{} / {}",
                    serde_json::to_value(m.longitudinal).unwrap().as_str().unwrap_or(""),
                    serde_json::to_value(m.lateral).unwrap().as_str().unwrap_or("")
                )
            })
            .unwrap_or_else(|| "unknown".into());
        let options = if record.admissible_intents.len() > 1 {
            record
                .admissible_intents
                .iter()
                .map(|k| k.name())
                .collect::<Vec<_>>()
                .join(", ")
        } else {
            gt.name().to_string()
        };
        let body = format!(
            "Perceive: ego travels at {speed:.1} m/s; scene admits {options}.\n\
             Predict: surrounding agents keep their current motion.\n\
             Judge: kinematics read {meta}; the maneuver is feasible.\n\
             Plan: commit to {}.",
            gt.name().replace('_', " ")
        );
        let corrupt = self.corruption > 0.0 && rng.random::<f64>() < self.corruption;
        if !corrupt {
            format!("{body} <INTENT>{}</INTENT>", gt.name())
        } else if self.corruption >= 1.0 || rng.random::<bool>() {
            body
        } else {
            let garbled: String = gt.name().chars().rev().collect();
            format!("{body} <INTENT>{garbled}</INTENT>")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub min_clips: usize,
    pub max_clips: usize,
    pub noise_sigma_max: f64,
    pub feature_noise: f64,
    pub pseudo_fraction: f64,
    pub annotator: MockAnnotator,
    /// Length of the labeled future window, seconds.
    pub label_horizon_s: f64,
    pub thresholds: Thresholds,
    pub bridge: BridgeConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_clips: 3,
            max_clips: 6,
            noise_sigma_max: 0.01,
            feature_noise: 0.05,
            pseudo_fraction: 0.05,
            annotator: MockAnnotator { corruption: 0.05 },
            label_horizon_s: 3.0,
            thresholds: Thresholds::default(),
            bridge: BridgeConfig::default(),
        }
    }
}

/// World-frame ego history at the trajectory rate.
#[derive(Clone, Copy, Debug)]
struct HistPose {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
}

struct SequenceBuilder<'a> {
    cfg: &'a ModelConfig,
    gen: &'a GenConfig,
    projection: &'a [Vec<f64>],
    sequence_id: String,
    history: Vec<HistPose>,
    clip_index: u32,
}

impl<'a> SequenceBuilder<'a> {
    fn new(
        cfg: &'a ModelConfig,
        gen: &'a GenConfig,
        projection: &'a [Vec<f64>],
        sequence_id: String,
        initial_speed: f64,
    ) -> Self {
        let dt = 1.0 / cfg.rate_hz;
        let history = (0..PAST_STEPS)
            .map(|i| {
                let t = -((PAST_STEPS - 1 - i) as f64) * dt;
                HistPose {
                    x: initial_speed * t,
                    y: 0.0,
                    heading: 0.0,
                    speed: initial_speed,
                }
            })
            .collect();
        Self {
            cfg,
            gen,
            projection,
            sequence_id,
            history,
            clip_index: 0,
        }
    }

    fn current(&self) -> HistPose {
        *self.history.last().unwrap()
    }

    fn past_state(&self) -> Vec<[f64; 4]> {
        let cur = self.current();
        let (s, c) = cur.heading.sin_cos();
        self.history[self.history.len() - PAST_STEPS..]
            .iter()
            .map(|p| {
                let dx = p.x - cur.x;
                let dy = p.y - cur.y;
                [
                    c * dx + s * dy,
                    -s * dx + c * dy,
                    (p.heading - cur.heading).to_degrees(),
                    p.speed,
                ]
            })
            .collect()
    }

    fn scene(
        &self,
        gt: IntentClass,
        admissible: Vec<IntentClass>,
        speed_hint: f64,
        rng: &mut Rng,
    ) -> Result<SceneSample> {
        let mut spec = sample_spec(gt, speed_hint, rng);
        spec.noise_sigma = uniform(rng, 0.0, self.gen.noise_sigma_max);
        let traj = generate_trajectory(&spec, self.cfg, rng)?;
        let curv_sign = if admissible.len() > 1 {
            0.0
        } else {
            spec.curvature.signum() * (spec.curvature != 0.0) as u8 as f64
        };
        let features = encode_scene(
            self.projection,
            &admissible,
            spec.speed_start,
            curv_sign,
            self.gen.feature_noise,
            rng,
        );
        Ok(SceneSample {
            scene_features: features,
            gt_trajectory: traj,
            gt_intent: gt,
            admissible_intents: admissible,
            spec,
        })
    }

    /// Builds and annotates the next clip, then advances the ego by one clip period.
    fn push_clip(&mut self, sample: SceneSample, rng: &mut Rng) -> Result<ClipRecord> {
        self.clip_index += 1;
        let window = KinematicWindow::from_trajectory(&sample.gt_trajectory, self.gen.label_horizon_s)?;
        let meta = labeler::label(&window, &self.gen.thresholds)?;
        let mut record = ClipRecord {
            sequence_id: self.sequence_id.clone(),
            clip_index: self.clip_index,
            past_state: self.past_state(),
            future_window: window,
            meta_action: Some(meta),
            intent_text: String::new(),
            intent: None,
            trajectory: sample.gt_trajectory,
            is_pseudo_labeled: false,
            scene_features: sample.scene_features,
            admissible_intents: sample.admissible_intents,
        };
        record.intent_text = self.gen.annotator.annotate(&record, sample.gt_intent, rng);
        record.is_pseudo_labeled = rng.random::<f64>() < self.gen.pseudo_fraction;
        let (record, _) = bridge::relabel_if_inconsistent(&record, &self.gen.bridge)?;
        self.advance(&record);
        Ok(record)
    }

    fn advance(&mut self, record: &ClipRecord) {
        let cur = self.current();
        let (s, c) = cur.heading.sin_cos();
        let step = (CLIP_PERIOD_S * self.cfg.rate_hz).round() as usize;
        let w = &record.future_window;
        for i in 1..=step.min(record.trajectory.len()) {
            let p = record.trajectory.points[i - 1];
            let h = w.headings.get(i).copied().unwrap_or(0.0).to_radians();
            let v = w.speeds.get(i - 1).copied().unwrap_or(0.0);
            self.history.push(HistPose {
                x: cur.x + c * p[0] - s * p[1],
                y: cur.y + s * p[0] + c * p[1],
                heading: cur.heading + h,
                speed: v,
            });
        }
    }

    fn speed_now(&self) -> f64 {
        self.current().speed
    }
}

fn pick_group(k: IntentClass, rng: &mut Rng) -> &'static [IntentClass] {
    let containing: Vec<&'static [IntentClass]> = AMBIGUITY_GROUPS
        .iter()
        .copied()
        .filter(|g| g.contains(&k))
        .collect();
    if containing.is_empty() {
        AMBIGUITY_GROUPS[rng.random_range(0..AMBIGUITY_GROUPS.len())]
    } else {
        containing[rng.random_range(0..containing.len())]
    }
}

fn generate_sequence(
    seq: usize,
    ambiguous_fraction: f64,
    cfg: &ModelConfig,
    gen: &GenConfig,
    projection: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<ClipRecord>> {
    let mut rng = rng::seeded(seed, seq as u64);
    let len = rng.random_range(gen.min_clips..=gen.max_clips);
    let mut intent = IntentClass::new(rng.random_range(0..NUM_INTENTS))?;
    let (lo, hi) = speed_range(intent);
    let v0 = uniform(&mut rng, lo, hi);
    let mut builder = SequenceBuilder::new(cfg, gen, projection, format!("seq{seq:05}"), v0);
    let mut out = Vec::with_capacity(len);
    for c in 0..len {
        if c > 0 {
            intent = next_intent(intent, &mut rng);
        }
        let ambiguous = rng.random::<f64>() < ambiguous_fraction;
        let (admissible, speed_hint) = if ambiguous {
            let group = pick_group(intent, &mut rng);
            intent = group[rng.random_range(0..group.len())];
            let (lo, hi) = group_speed_range(group);
            let v = if c == 0 {
                uniform(&mut rng, lo, hi)
            } else {
                builder.speed_now().clamp(lo, hi)
            };
            (group.to_vec(), v)
        } else {
            let (lo, hi) = speed_range(intent);
            let v = if c == 0 {
                v0
            } else {
                let jitter = uniform(&mut rng, -1.0, 1.0);
                (builder.speed_now() + jitter).clamp(lo, hi)
            };
            (vec![intent], v)
        };
        let sample = builder.scene(intent, admissible, speed_hint, &mut rng)?;
        out.push(builder.push_clip(sample, &mut rng)?);
    }
    Ok(out)
}

/// `n` continuous sequences of 3 to 6 annotated clips.
///
/// Each sequence draws from its own RNG stream derived from `seed`, so the
/// output does not depend on generation order.
pub fn generate_dataset(
    n: usize,
    ambiguous_fraction: f64,
    cfg: &ModelConfig,
    gen: &GenConfig,
    seed: u64,
) -> Result<Vec<ClipRecord>> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&ambiguous_fraction) {
        return Err(Error::InvalidConfig("ambiguous_fraction not in [0,1]".into()));
    }
    if gen.min_clips == 0 || gen.min_clips > gen.max_clips {
        return Err(Error::InvalidConfig("invalid clip count range".into()));
    }
    let projection = scene_projection(cfg.scene_dim);
    let mut out = Vec::new();
    for seq in 0..n {
        out.extend(generate_sequence(seq, ambiguous_fraction, cfg, gen, &projection, seed)?);
    }
    Ok(out)
}

/// A single unambiguous sequence following the given intents clip by clip.
/// Its reasoning text is authored, so the annotator's corruption is off.
pub fn authored_episode(
    intents: &[IntentClass],
    cfg: &ModelConfig,
    gen: &GenConfig,
    sequence_id: &str,
    seed: u64,
) -> Result<Vec<ClipRecord>> {
    let gen = &GenConfig { annotator: MockAnnotator { corruption: 0.0 }, ..gen.clone() };
    let projection = scene_projection(cfg.scene_dim);
    let mut rng = rng::seeded(seed, rng::hash_str(sequence_id));
    let first = *intents.first().ok_or(Error::EmptyDataset)?;
    let (lo, hi) = speed_range(first);
    let v0 = uniform(&mut rng, lo, hi);
    let mut builder = SequenceBuilder::new(cfg, gen, &projection, sequence_id.to_string(), v0);
    let mut out = Vec::with_capacity(intents.len());
    for &k in intents {
        let (lo, hi) = speed_range(k);
        let v = builder.speed_now().clamp(lo, hi);
        let sample = builder.scene(k, vec![k], v, &mut rng)?;
        out.push(builder.push_clip(sample, &mut rng)?);
    }
    Ok(out)
}

/// Mean noise-free trajectory per intent, flattened in chunk units.
pub fn class_prototypes(cfg: &ModelConfig, samples_per_class: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(NUM_INTENTS);
    for k in IntentClass::all() {
        let mut rng = rng::seeded(seed, 1000 + k.index() as u64);
        let mut acc = vec![0.0; cfg.chunk_dim()];
        let (lo, hi) = speed_range(k);
        for _ in 0..samples_per_class {
            let v = uniform(&mut rng, lo, hi);
            let spec = sample_spec(k, v, &mut rng);
            let traj = generate_trajectory(&spec, cfg, &mut rng)?;
            for (a, b) in acc.iter_mut().zip(traj.to_chunk(cfg.coord_scale)) {
                *a += b;
            }
        }
        acc.iter_mut().for_each(|a| *a /= samples_per_class as f64);
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{consistency_check, parse_intent, Consistency};
    use rand::SeedableRng;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn spec(curvature: f64, v0: f64, v1: f64) -> ManeuverSpec {
        ManeuverSpec {
            intent: IntentClass::CRUISING,
            curvature,
            speed_start: v0,
            speed_end: v1,
            lateral_shift: 0.0,
            noise_sigma: 0.0,
            ramp_s: 5.0,
            shift_center_s: 2.5,
        }
    }

    #[test]
    fn straight_constant_speed_spacing() {
        let mut r = Rng::seed_from_u64(0);
        let t = generate_trajectory(&spec(0.0, 8.0, 8.0), &cfg(), &mut r).unwrap();
        assert_eq!(t.len(), 20);
        for (i, p) in t.points.iter().enumerate() {
            assert!((p[0] - 2.0 * (i + 1) as f64).abs() < 1e-9);
            assert_eq!(p[1], 0.0);
        }
    }

    #[test]
    fn linear_ramp_total_distance() {
        let mut r = Rng::seed_from_u64(0);
        let t = generate_trajectory(&spec(0.0, 8.0, 0.0), &cfg(), &mut r).unwrap();
        // 20 * (8 + 0) / 2 / 4
        assert!((t.points[19][0] - 20.0).abs() < 1e-9);
        let gaps: Vec<f64> = std::iter::once(t.points[0][0])
            .chain(t.points.windows(2).map(|w| w[1][0] - w[0][0]))
            .collect();
        assert!(gaps.windows(2).all(|g| g[1] < g[0]));
    }

    #[test]
    fn arc_heading_change() {
        let mut r = Rng::seed_from_u64(0);
        let t = generate_trajectory(&spec(0.05, 6.0, 6.0), &cfg(), &mut r).unwrap();
        let w = KinematicWindow::from_trajectory(&t, 5.0).unwrap();
        let total = (w.headings.last().unwrap() - w.headings[0]).to_radians();
        // Chord directions lag the true heading by half a step of yaw.
        let expected = 0.05 * 6.0 * 5.0;
        let half_step = 0.05 * 6.0 * 0.25 / 2.0;
        assert!((total - (expected - half_step)).abs() < 1e-3, "{total}");
        assert!(t.points[19][1] > 0.0);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut r = Rng::seed_from_u64(0);
        let mut s = spec(0.0, 1.0, 1.0);
        s.noise_sigma = -1.0;
        assert!(matches!(generate_trajectory(&s, &cfg(), &mut r), Err(Error::InvalidSpec(_))));
        s.noise_sigma = 0.0;
        s.curvature = f64::NAN;
        assert!(generate_trajectory(&s, &cfg(), &mut r).is_err());
    }

    #[test]
    fn noise_free_families_match_their_intent() {
        let cfg = cfg();
        let th = Thresholds::default();
        let table = crate::bridge::CompatibilityTable::default();
        let mut r = Rng::seed_from_u64(11);
        for k in IntentClass::all() {
            let (lo, hi) = speed_range(k);
            for _ in 0..300 {
                let v = uniform(&mut r, lo, hi);
                let s = sample_spec(k, v, &mut r);
                let t = generate_trajectory(&s, &cfg, &mut r).unwrap();
                let w = KinematicWindow::from_trajectory(&t, 3.0).unwrap();
                let meta = labeler::label(&w, &th).unwrap();
                assert_eq!(
                    consistency_check(&table, k, &meta).unwrap(),
                    Consistency::Consistent,
                    "{k}: {s:?} -> {meta:?}"
                );
            }
        }
    }

    #[test]
    fn group_ranges_are_nonempty() {
        for g in AMBIGUITY_GROUPS {
            let (lo, hi) = group_speed_range(g);
            assert!(lo <= hi, "{g:?}");
        }
        for k in IntentClass::all() {
            assert!(AMBIGUITY_GROUPS.iter().any(|g| g.contains(&k)), "{k} in no group");
        }
    }

    #[test]
    fn single_sequence_dataset() {
        let gen = GenConfig::default();
        let d = generate_dataset(1, 0.0, &cfg(), &gen, 3).unwrap();
        assert!((3..=6).contains(&d.len()));
        for (i, r) in d.iter().enumerate() {
            assert_eq!(r.clip_index as usize, i + 1);
            assert_eq!(r.past_state.len(), PAST_STEPS);
            let meta = r.meta_action.unwrap();
            assert_eq!(
                consistency_check(&gen.bridge.table, r.intent.unwrap(), &meta).unwrap(),
                Consistency::Consistent
            );
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let gen = GenConfig::default();
        let a = generate_dataset(5, 0.3, &cfg(), &gen, 9).unwrap();
        let b = generate_dataset(5, 0.3, &cfg(), &gen, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(5, 0.3, &cfg(), &gen, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fully_ambiguous_dataset() {
        let d = generate_dataset(10, 1.0, &cfg(), &GenConfig::default(), 1).unwrap();
        assert!(d.iter().all(|r| r.admissible_intents.len() >= 2));
        assert!(d.iter().all(|r| r.admissible_intents.contains(&r.intent.unwrap())
            || r.is_pseudo_labeled
            || !parse_intent(&r.intent_text, IntentClass::LANE_KEEPING).parsed_ok));
    }

    #[test]
    fn annotator_round_trip_and_corruption() {
        let gen = GenConfig::default();
        let d = generate_dataset(3, 0.0, &cfg(), &gen, 5).unwrap();
        let clean = MockAnnotator { corruption: 0.0 };
        let always = MockAnnotator { corruption: 1.0 };
        let mut r = Rng::seed_from_u64(1);
        for rec in &d {
            let k = IntentClass::TURNING_LEFT;
            let text = clean.annotate(rec, k, &mut r);
            assert!(text.ends_with("<INTENT>turning_left</INTENT>"));
            for s in ["Perceive:", "Predict:", "Judge:", "Plan:"] {
                assert!(text.contains(s));
            }
            let o = parse_intent(&text, IntentClass::LANE_KEEPING);
            assert_eq!(o.intent, k);
            let bad = always.annotate(rec, k, &mut r);
            assert!(!bad.contains("<INTENT>"));
        }
    }

    #[test]
    fn authored_episode_follows_intents() {
        let ks = [
            IntentClass::STOPPING,
            IntentClass::WAITING,
            IntentClass::ACCELERATING,
            IntentClass::CRUISING,
            IntentClass::DECELERATING,
        ];
        let gen = GenConfig {
            annotator: MockAnnotator { corruption: 0.0 },
            pseudo_fraction: 0.0,
            ..GenConfig::default()
        };
        let ep = authored_episode(&ks, &cfg(), &gen, "episode", 0).unwrap();
        let got: Vec<_> = ep.iter().map(|r| r.intent.unwrap()).collect();
        assert_eq!(got, ks);
    }

    #[test]
    fn past_state_ends_at_origin() {
        let d = generate_dataset(4, 0.2, &cfg(), &GenConfig::default(), 2).unwrap();
        for r in &d {
            let last = r.past_state.last().unwrap();
            assert_eq!(&last[..3], &[0.0, 0.0, 0.0]);
        }
    }
}
