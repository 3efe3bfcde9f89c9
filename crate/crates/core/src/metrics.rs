//! Displacement errors and intent faithfulness.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bridge::{consistency_check, CompatibilityTable, Consistency};
use crate::distill::context_conditioning;
use crate::error::{Error, Result};
use crate::labeler::{self, Thresholds};
use crate::nn::Model;
use crate::rng;
use crate::sampler::{distilled_from_noise, draw_noise, sample_from_noise};
use crate::streaming::ClipContext;
use crate::types::{IntentClass, KinematicWindow, Trajectory};

fn horizon_points(pred: &Trajectory, gt: &Trajectory, horizon_s: f64) -> Result<usize> {
    if (pred.rate_hz - gt.rate_hz).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "rates differ: {} vs {}",
            pred.rate_hz, gt.rate_hz
        )));
    }
    let span = pred.span_s().min(gt.span_s());
    if horizon_s > span + 1e-9 || !(horizon_s > 0.0) {
        return Err(Error::HorizonExceedsSpan { horizon: horizon_s, span });
    }
    let n = ((horizon_s * gt.rate_hz) + 1e-9).floor() as usize;
    if n == 0 {
        return Err(Error::HorizonExceedsSpan { horizon: horizon_s, span });
    }
    Ok(n)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean distance over waypoints with timestamp `(i + 1) / rate <= horizon`.
pub fn ade(pred: &Trajectory, gt: &Trajectory, horizon_s: f64) -> Result<f64> {
    let n = horizon_points(pred, gt, horizon_s)?;
    Ok((0..n).map(|i| dist(pred.points[i], gt.points[i])).sum::<f64>() / n as f64)
}

/// Distance at the last waypoint within the horizon.
pub fn fde(pred: &Trajectory, gt: &Trajectory, horizon_s: f64) -> Result<f64> {
    let n = horizon_points(pred, gt, horizon_s)?;
    Ok(dist(pred.points[n - 1], gt.points[n - 1]))
}

/// Anything that maps (context, requested intent) pairs to trajectories.
pub trait TrajectoryGenerator {
    fn generate(&self, contexts: &[&ClipContext], intents: &[IntentClass]) -> Result<Vec<Trajectory>>;
}

/// The trained model, sampled with guidance `w` or through the student embedder.
pub struct ModelGenerator<'m> {
    pub model: &'m Model<f32>,
    pub guidance: f64,
    pub steps: usize,
    pub distilled: bool,
    pub seed: u64,
}

impl TrajectoryGenerator for ModelGenerator<'_> {
    fn generate(&self, contexts: &[&ClipContext], intents: &[IntentClass]) -> Result<Vec<Trajectory>> {
        let cfg = &self.model.config;
        let cond = context_conditioning(self.model, contexts)?;
        let mut r = rng::seeded(self.seed, rng::hash_str("generate"));
        let noise = draw_noise(contexts.len(), cfg.chunk_dim(), &mut r);
        let chunks = if self.distilled {
            distilled_from_noise(self.model, &cond, intents, self.steps, noise)?
        } else {
            sample_from_noise(self.model, &cond, intents, self.guidance, self.steps, noise)?
        };
        chunks
            .rows()
            .into_iter()
            .map(|row| {
                let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                Trajectory::from_chunk(&v, cfg.coord_scale, cfg.rate_hz)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    /// Rate per probed intent name.
    pub per_intent: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    /// Mean of the per-intent rates.
    pub macro_rate: f64,
    /// Pooled over all probes.
    pub overall: f64,
    pub probes: usize,
}

#[derive(Clone, Debug)]
pub struct FaithfulnessConfig {
    pub thresholds: Thresholds,
    pub table: CompatibilityTable,
    pub label_horizon_s: f64,
    /// Probe every intent instead of only the scene's admissible set.
    pub all_intents: bool,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            table: CompatibilityTable::default(),
            label_horizon_s: 3.0,
            all_intents: false,
        }
    }
}

/// Whether the labeled trajectory agrees with `k` under the compatibility table.
pub fn is_faithful(traj: &Trajectory, k: IntentClass, cfg: &FaithfulnessConfig) -> Result<bool> {
    let window = KinematicWindow::from_trajectory(traj, cfg.label_horizon_s)?;
    let meta = labeler::label(&window, &cfg.thresholds)?;
    Ok(consistency_check(&cfg.table, k, &meta)? == Consistency::Consistent)
}

/// `admissible[i]` lists the intents scene `i` admits.
pub fn intent_faithfulness<G: TrajectoryGenerator>(
    generator: &G,
    contexts: &[ClipContext],
    admissible: &[Vec<IntentClass>],
    cfg: &FaithfulnessConfig,
) -> Result<Faithfulness> {
    if contexts.len() != admissible.len() {
        return Err(Error::ShapeMismatch { expected: contexts.len(), got: admissible.len() });
    }
    let mut refs = Vec::new();
    let mut ks = Vec::new();
    for (ctx, adm) in contexts.iter().zip(admissible) {
        let probe: Vec<IntentClass> = if cfg.all_intents || adm.is_empty() {
            IntentClass::all().collect()
        } else {
            adm.clone()
        };
        for k in probe {
            refs.push(ctx);
            ks.push(k);
        }
    }
    if refs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let trajs = generator.generate(&refs, &ks)?;
    let mut hits: BTreeMap<IntentClass, (usize, usize)> = BTreeMap::new();
    for (traj, &k) in trajs.iter().zip(&ks) {
        let e = hits.entry(k).or_default();
        e.1 += 1;
        if is_faithful(traj, k, cfg)? {
            e.0 += 1;
        }
    }
    let mut out = Faithfulness { probes: ks.len(), ..Default::default() };
    let mut total_hits = 0;
    for (k, (h, n)) in &hits {
        out.per_intent.insert(k.name().to_string(), *h as f64 / *n as f64);
        out.counts.insert(k.name().to_string(), *n);
        total_hits += h;
    }
    out.macro_rate = out.per_intent.values().sum::<f64>() / out.per_intent.len() as f64;
    out.overall = total_hits as f64 / ks.len() as f64;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementReport {
    pub ade_3s: f64,
    pub ade_5s: f64,
    pub fde_3s: f64,
    pub fde_5s: f64,
}

/// ADE/FDE of trajectories generated for each context's own intent.
pub fn displacement<G: TrajectoryGenerator>(
    generator: &G,
    contexts: &[ClipContext],
    rate_hz: f64,
    coord_scale: f64,
) -> Result<DisplacementReport> {
    if contexts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let refs: Vec<&ClipContext> = contexts.iter().collect();
    let ks: Vec<IntentClass> = contexts.iter().map(|c| c.intent).collect();
    let preds = generator.generate(&refs, &ks)?;
    let mut acc = [0.0f64; 4];
    for (p, c) in preds.iter().zip(contexts) {
        let gt = Trajectory::from_chunk(&c.target, coord_scale, rate_hz)?;
        acc[0] += ade(p, &gt, 3.0)?;
        acc[1] += ade(p, &gt, 5.0)?;
        acc[2] += fde(p, &gt, 3.0)?;
        acc[3] += fde(p, &gt, 5.0)?;
    }
    let n = contexts.len() as f64;
    Ok(DisplacementReport {
        ade_3s: acc[0] / n,
        ade_5s: acc[1] / n,
        fde_3s: acc[2] / n,
        fde_5s: acc[3] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, f: impl Fn(usize) -> [f64; 2]) -> Trajectory {
        Trajectory::new((0..n).map(f).collect(), 4.0).unwrap()
    }

    #[test]
    fn ade_examples() {
        let gt = line(20, |i| [i as f64, 0.0]);
        assert_eq!(ade(&gt, &gt, 5.0).unwrap(), 0.0);
        let off = line(20, |i| [i as f64 + 1.0, 0.0]);
        assert!((ade(&off, &gt, 3.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((ade(&off, &gt, 5.0).unwrap() - 1.0).abs() < 1e-12);
        let half = line(20, |i| [i as f64, if i >= 10 { 1.0 } else { 0.0 }]);
        assert!((ade(&half, &gt, 5.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(ade(&gt, &gt, 6.0), Err(Error::HorizonExceedsSpan { .. })));
    }

    #[test]
    fn fde_examples() {
        let gt = line(20, |i| [i as f64, 0.0]);
        assert_eq!(fde(&gt, &gt, 5.0).unwrap(), 0.0);
        let last = line(20, |i| [i as f64, if i == 19 { 2.0 } else { 0.0 }]);
        assert!((fde(&last, &gt, 5.0).unwrap() - 2.0).abs() < 1e-12);
        // 3 s at 4 Hz ends at the 12th waypoint.
        let at12 = line(20, |i| [i as f64, if i == 11 { 1.5 } else { 0.0 }]);
        assert!((fde(&at12, &gt, 3.0).unwrap() - 1.5).abs() < 1e-12);
    }
}
