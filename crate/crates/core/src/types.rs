//! Domain types shared by every stage: trajectories, the intent taxonomy,
//! kinematic windows, meta-actions, per-clip records and the model config.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of driving-intent classes. Index `NUM_INTENTS` is the unconditional slot.
pub const NUM_INTENTS: usize = 20;

/// The closed driving-intent taxonomy, in index order.
pub const INTENT_NAMES: [&str; NUM_INTENTS] = [
    "cruising",
    "lane_keeping",
    "following",
    "lane_change_left",
    "lane_change_right",
    "turning_left",
    "turning_right",
    "u_turn",
    "starting",
    "stopping",
    "waiting",
    "accelerating",
    "decelerating",
    "braking",
    "yielding",
    "overtaking",
    "merging",
    "avoiding_obstacle",
    "parking",
    "reversing",
];

/// A driving intent index in `[0, K]`, where `K` is the unconditional slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct IntentClass(u8);

impl IntentClass {
    pub const UNCOND: IntentClass = IntentClass(NUM_INTENTS as u8);

    pub const CRUISING: IntentClass = IntentClass(0);
    pub const LANE_KEEPING: IntentClass = IntentClass(1);
    pub const FOLLOWING: IntentClass = IntentClass(2);
    pub const LANE_CHANGE_LEFT: IntentClass = IntentClass(3);
    pub const LANE_CHANGE_RIGHT: IntentClass = IntentClass(4);
    pub const TURNING_LEFT: IntentClass = IntentClass(5);
    pub const TURNING_RIGHT: IntentClass = IntentClass(6);
    pub const U_TURN: IntentClass = IntentClass(7);
    pub const STARTING: IntentClass = IntentClass(8);
    pub const STOPPING: IntentClass = IntentClass(9);
    pub const WAITING: IntentClass = IntentClass(10);
    pub const ACCELERATING: IntentClass = IntentClass(11);
    pub const DECELERATING: IntentClass = IntentClass(12);
    pub const BRAKING: IntentClass = IntentClass(13);
    pub const YIELDING: IntentClass = IntentClass(14);
    pub const OVERTAKING: IntentClass = IntentClass(15);
    pub const MERGING: IntentClass = IntentClass(16);
    pub const AVOIDING_OBSTACLE: IntentClass = IntentClass(17);
    pub const PARKING: IntentClass = IntentClass(18);
    pub const REVERSING: IntentClass = IntentClass(19);

    pub fn new(index: usize) -> Result<Self> {
        if index <= NUM_INTENTS {
            Ok(IntentClass(index as u8))
        } else {
            Err(Error::IndexOutOfRange(index))
        }
    }

    /// All driving classes (excluding the unconditional slot).
    pub fn all() -> impl Iterator<Item = IntentClass> {
        (0..NUM_INTENTS as u8).map(IntentClass)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_uncond(self) -> bool {
        self.index() == NUM_INTENTS
    }

    /// Taxonomy name; the unconditional slot reads as `"<uncond>"`.
    pub fn name(self) -> &'static str {
        INTENT_NAMES.get(self.index()).copied().unwrap_or("<uncond>")
    }

    /// Accepts either a taxonomy name or a decimal index.
    pub fn parse_name_or_index(s: &str) -> Result<Self> {
        match s.trim().parse::<usize>() {
            Ok(i) if i < NUM_INTENTS => Ok(IntentClass(i as u8)),
            Ok(i) => Err(Error::IndexOutOfRange(i)),
            Err(_) => intent_name_to_index(s),
        }
    }
}

impl TryFrom<u8> for IntentClass {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        IntentClass::new(v as usize)
    }
}

impl From<IntentClass> for u8 {
    fn from(k: IntentClass) -> u8 {
        k.0
    }
}

impl fmt::Display for IntentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Case-insensitive, whitespace-trimmed lookup into the 20-class taxonomy.
pub fn intent_name_to_index(name: &str) -> Result<IntentClass> {
    let key = name.trim().to_ascii_lowercase();
    INTENT_NAMES
        .iter()
        .position(|n| *n == key)
        .map(|i| IntentClass(i as u8))
        .ok_or_else(|| Error::UnknownIntent(name.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Longitudinal {
    Stop,
    Reverse,
    Stopping,
    Starting,
    Accelerate,
    Decelerate,
    MaintainSpeed,
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 7] = [
        Longitudinal::Stop,
        Longitudinal::Reverse,
        Longitudinal::Stopping,
        Longitudinal::Starting,
        Longitudinal::Accelerate,
        Longitudinal::Decelerate,
        Longitudinal::MaintainSpeed,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lateral {
    SteerLeft,
    SteerRight,
    NudgeLeft,
    NudgeRight,
    ReverseLeft,
    ReverseRight,
    Maintain,
}

impl Lateral {
    pub const ALL: [Lateral; 7] = [
        Lateral::SteerLeft,
        Lateral::SteerRight,
        Lateral::NudgeLeft,
        Lateral::NudgeRight,
        Lateral::ReverseLeft,
        Lateral::ReverseRight,
        Lateral::Maintain,
    ];
}

/// Rule-derived (longitudinal, lateral) discretization of a kinematic window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaAction {
    pub longitudinal: Longitudinal,
    pub lateral: Lateral,
}

impl MetaAction {
    pub fn new(longitudinal: Longitudinal, lateral: Lateral) -> Self {
        Self {
            longitudinal,
            lateral,
        }
    }
}

/// A planar action chunk in the ego BEV frame at clip start (x forward, y left).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<[f64; 2]>,
    pub rate_hz: f64,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 2]>, rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!("rate_hz must be > 0, got {rate_hz}")));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("trajectory has non-finite coordinates".into()));
        }
        Ok(Self { points, rate_hz })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Time span covered by the waypoints; the first waypoint sits at `1 / rate_hz`.
    pub fn span_s(&self) -> f64 {
        self.points.len() as f64 / self.rate_hz
    }

    /// Per-step displacements `[dx0, dy0, dx1, dy1, ...]` divided by `scale`,
    /// where step `i` runs from waypoint `i - 1` (the origin for `i = 0`) to `i`.
    pub fn to_chunk(&self, scale: f64) -> Vec<f64> {
        let mut prev = [0.0, 0.0];
        let mut out = Vec::with_capacity(2 * self.points.len());
        for p in &self.points {
            out.push((p[0] - prev[0]) / scale);
            out.push((p[1] - prev[1]) / scale);
            prev = *p;
        }
        out
    }

    /// Inverse of [`Trajectory::to_chunk`].
    pub fn from_chunk(chunk: &[f64], scale: f64, rate_hz: f64) -> Result<Self> {
        if chunk.len() % 2 != 0 {
            return Err(Error::ShapeMismatch {
                expected: chunk.len() + 1,
                got: chunk.len(),
            });
        }
        let mut acc = [0.0, 0.0];
        let points = chunk
            .chunks_exact(2)
            .map(|d| {
                acc = [acc[0] + d[0] * scale, acc[1] + d[1] * scale];
                acc
            })
            .collect();
        Trajectory::new(points, rate_hz)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicWindow {
    pub speeds: Vec<f64>,
    pub headings: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub frame_dt: f64,
}

/// Segments shorter than this keep the previous heading; their direction is noise.
const MIN_HEADING_SEGMENT: f64 = 0.05;

impl KinematicWindow {
    pub fn new(
        speeds: Vec<f64>,
        headings: Vec<f64>,
        positions: Vec<[f64; 2]>,
        frame_dt: f64,
    ) -> Result<Self> {
        let w = Self {
            speeds,
            headings,
            positions,
            frame_dt,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.speeds.len();
        if n < 2 || self.headings.len() != n || self.positions.len() != n {
            return Err(Error::DegenerateWindow(format!(
                "speeds={}, headings={}, positions={}",
                n,
                self.headings.len(),
                self.positions.len()
            )));
        }
        if !(self.frame_dt > 0.0) {
            return Err(Error::DegenerateWindow(format!("frame_dt={}", self.frame_dt)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Derives a window from the ego origin plus the waypoints within `horizon_s`.
    ///
    /// Speeds are segment lengths over `frame_dt`. Heading follows the direction
    /// of travel, flipped when the segment points backwards relative to the
    /// current heading (reverse driving keeps the vehicle's orientation).
    pub fn from_trajectory(traj: &Trajectory, horizon_s: f64) -> Result<Self> {
        let dt = 1.0 / traj.rate_hz;
        let n = ((horizon_s * traj.rate_hz) + 1e-9).floor() as usize;
        let n = n.min(traj.len());
        if n == 0 {
            return Err(Error::DegenerateWindow("no waypoints within horizon".into()));
        }
        let mut positions = Vec::with_capacity(n + 1);
        positions.push([0.0, 0.0]);
        positions.extend_from_slice(&traj.points[..n]);

        let segs: Vec<[f64; 2]> = positions
            .windows(2)
            .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
            .collect();
        let mut speeds: Vec<f64> = segs.iter().map(|s| s[0].hypot(s[1]) / dt).collect();
        speeds.push(*speeds.last().unwrap());

        let mut headings = Vec::with_capacity(n + 1);
        let mut h = 0.0f64;
        headings.push(h);
        for s in &segs {
            let len = s[0].hypot(s[1]);
            if len >= MIN_HEADING_SEGMENT {
                let hr = h.to_radians();
                let forward = s[0] * hr.cos() + s[1] * hr.sin();
                let dir = if forward < 0.0 {
                    (-s[1]).atan2(-s[0])
                } else {
                    s[1].atan2(s[0])
                };
                h += wrap_deg(dir.to_degrees() - h);
            }
            headings.push(h);
        }
        KinematicWindow::new(speeds, headings, positions, dt)
    }
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let mut x = a % 360.0;
    if x > 180.0 {
        x -= 360.0;
    } else if x <= -180.0 {
        x += 360.0;
    }
    x
}

/// Stage-4 per-clip record, persisted as one JSONL line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub sequence_id: String,
    pub clip_index: u32,
    /// 16 steps of (x, y, heading_deg, speed) in the current clip's ego frame,
    /// oldest first; the last entry is the ego at clip start.
    pub past_state: Vec<[f64; 4]>,
    pub future_window: KinematicWindow,
    pub meta_action: Option<MetaAction>,
    pub intent_text: String,
    pub intent: Option<IntentClass>,
    pub trajectory: Trajectory,
    pub is_pseudo_labeled: bool,
    pub scene_features: Vec<f64>,
    /// Intents the scene admits; a single entry for unambiguous scenes.
    #[serde(default)]
    pub admissible_intents: Vec<IntentClass>,
}

/// Model sizes and inference settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_intents: usize,
    pub chunk_len: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub scene_dim: usize,
    pub intent_embed_inner: usize,
    pub guidance_scale: f64,
    pub p_drop: f64,
    pub euler_steps: usize,
    pub proto_weight: f64,
    pub seed: u64,
    pub rate_hz: f64,
    /// Meters per chunk unit; the flow operates on per-step displacements divided by this.
    pub coord_scale: f64,
    pub time_freqs: usize,
    pub memory_tokens: usize,
    /// Bank capacity in tokens.
    pub memory_capacity: usize,
    pub memory_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_intents: NUM_INTENTS,
            chunk_len: 20,
            action_dim: 2,
            hidden: 64,
            scene_dim: 16,
            intent_embed_inner: 64,
            guidance_scale: 1.5,
            p_drop: 0.15,
            euler_steps: 2,
            proto_weight: 0.1,
            seed: 0,
            rate_hz: 4.0,
            coord_scale: 0.5,
            time_freqs: 8,
            memory_tokens: 8,
            memory_capacity: 32,
            memory_heads: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("chunk_len", self.chunk_len),
            ("action_dim", self.action_dim),
            ("hidden", self.hidden),
            ("scene_dim", self.scene_dim),
            ("intent_embed_inner", self.intent_embed_inner),
            ("euler_steps", self.euler_steps),
            ("time_freqs", self.time_freqs),
            ("memory_tokens", self.memory_tokens),
            ("memory_heads", self.memory_heads),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.num_intents != NUM_INTENTS {
            return Err(Error::InvalidConfig(format!(
                "num_intents must be {NUM_INTENTS}, got {}",
                self.num_intents
            )));
        }
        if self.action_dim != 2 {
            return Err(Error::InvalidConfig("action_dim must be 2 (planar)".into()));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::InvalidConfig(format!("p_drop={} not in [0,1]", self.p_drop)));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(Error::InvalidConfig("guidance_scale must be >= 0".into()));
        }
        if !(self.rate_hz > 0.0) || !(self.coord_scale > 0.0) {
            return Err(Error::InvalidConfig("rate_hz and coord_scale must be > 0".into()));
        }
        if self.hidden % self.memory_heads != 0 {
            return Err(Error::InvalidConfig("hidden must be divisible by memory_heads".into()));
        }
        if self.memory_capacity < self.memory_tokens {
            return Err(Error::InvalidConfig(
                "memory_capacity must hold at least one clip".into(),
            ));
        }
        Ok(())
    }

    /// Flattened chunk size `T * D`.
    pub fn chunk_dim(&self) -> usize {
        self.chunk_len * self.action_dim
    }

    pub fn uncond(&self) -> IntentClass {
        IntentClass::UNCOND
    }
}
