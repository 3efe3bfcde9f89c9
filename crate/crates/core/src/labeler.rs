//! Deterministic meta-action rule engine.
//!
//! Longitudinal is decided first by a first-match ladder over start/end/max
//! speed and forward displacement; lateral follows from sustained yaw, total
//! lateral offset and total heading change.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{wrap_deg, KinematicWindow, Lateral, Longitudinal, MetaAction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// m/s; at or below this the vehicle is stationary.
    pub speed_stop: f64,
    pub lon_speed_ratio: f64,
    /// m/s
    pub lon_min_delta: f64,
    /// m of backward travel
    pub reverse_dist: f64,
    pub lat_offset_steer: f64,
    pub lat_offset_nudge: f64,
    /// degrees over the window
    pub yaw_change_steer: f64,
    pub yaw_change_nudge: f64,
    pub sustained_yaw_ratio: f64,
    /// degrees per frame
    pub sustained_yaw_mean: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            speed_stop: 0.3,
            lon_speed_ratio: 0.15,
            lon_min_delta: 0.5,
            reverse_dist: 0.5,
            lat_offset_steer: 1.5,
            lat_offset_nudge: 0.3,
            yaw_change_steer: 5.0,
            yaw_change_nudge: 1.5,
            sustained_yaw_ratio: 0.8,
            sustained_yaw_mean: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YawDirection {
    Left,
    Right,
}

/// Per-frame yaw deltas in degrees, each wrapped to (-180, 180].
fn yaw_deltas(window: &KinematicWindow) -> Vec<f64> {
    window
        .headings
        .windows(2)
        .map(|h| wrap_deg(h[1] - h[0]))
        .collect()
}

pub fn sustained_yaw_direction(
    window: &KinematicWindow,
    th: &Thresholds,
) -> Result<Option<YawDirection>> {
    window.validate()?;
    let deltas = yaw_deltas(window);
    let n = deltas.len() as f64;
    let pos = deltas.iter().filter(|&&d| d > 0.0).count() as f64;
    let neg = deltas.iter().filter(|&&d| d < 0.0).count() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    if mean.abs() <= th.sustained_yaw_mean {
        return Ok(None);
    }
    Ok(if pos / n >= th.sustained_yaw_ratio {
        Some(YawDirection::Left)
    } else if neg / n >= th.sustained_yaw_ratio {
        Some(YawDirection::Right)
    } else {
        None
    })
}

struct Aggregates {
    v_s: f64,
    v_e: f64,
    v_max: f64,
    dx: f64,
    dy: f64,
    dtheta: f64,
}

fn aggregates(window: &KinematicWindow) -> Aggregates {
    let first = window.positions[0];
    let last = *window.positions.last().unwrap();
    Aggregates {
        v_s: window.speeds[0],
        v_e: *window.speeds.last().unwrap(),
        v_max: window.speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        dx: last[0] - first[0],
        dy: last[1] - first[1],
        dtheta: wrap_deg(window.headings.last().unwrap() - window.headings[0]),
    }
}

pub fn classify_longitudinal(window: &KinematicWindow, th: &Thresholds) -> Result<Longitudinal> {
    window.validate()?;
    let a = aggregates(window);
    let lon = if a.v_max <= th.speed_stop {
        Longitudinal::Stop
    } else if a.dx < -th.reverse_dist {
        Longitudinal::Reverse
    } else if a.v_s > th.speed_stop && a.v_e <= th.speed_stop {
        Longitudinal::Stopping
    } else if a.v_s <= th.speed_stop && a.v_e > th.speed_stop {
        Longitudinal::Starting
    } else if (a.v_e - a.v_s).abs() > th.lon_min_delta.max(a.v_s * th.lon_speed_ratio) {
        if a.v_e > a.v_s {
            Longitudinal::Accelerate
        } else {
            Longitudinal::Decelerate
        }
    } else {
        Longitudinal::MaintainSpeed
    };
    Ok(lon)
}

pub fn classify_lateral(
    window: &KinematicWindow,
    th: &Thresholds,
    lon: Longitudinal,
) -> Result<Lateral> {
    window.validate()?;
    let a = aggregates(window);
    let left = a.dy > 0.0;
    if lon == Longitudinal::Reverse {
        // Exactly zero offset falls into the magnitude gate and reads as maintain.
        return Ok(if a.dy.abs() <= th.lat_offset_nudge {
            Lateral::Maintain
        } else if left {
            Lateral::ReverseLeft
        } else {
            Lateral::ReverseRight
        });
    }
    if let Some(d) = sustained_yaw_direction(window, th)? {
        return Ok(match d {
            YawDirection::Left => Lateral::SteerLeft,
            YawDirection::Right => Lateral::SteerRight,
        });
    }
    let lat = if a.dy.abs() > th.lat_offset_steer && a.dtheta.abs() > th.yaw_change_steer {
        if left {
            Lateral::SteerLeft
        } else {
            Lateral::SteerRight
        }
    } else if a.dy.abs() > th.lat_offset_nudge && a.dtheta.abs() > th.yaw_change_nudge {
        if left {
            Lateral::NudgeLeft
        } else {
            Lateral::NudgeRight
        }
    } else {
        Lateral::Maintain
    };
    Ok(lat)
}

pub fn label(window: &KinematicWindow, th: &Thresholds) -> Result<MetaAction> {
    let lon = classify_longitudinal(window, th)?;
    let lat = classify_lateral(window, th, lon)?;
    Ok(MetaAction::new(lon, lat))
}
