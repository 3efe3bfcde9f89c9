//! End-to-end stages shared by the command line and the acceptance suite.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::distill::{self, DistillRow};
use crate::error::{Error, Result};
use crate::fm::{self, TelemetryRow, TrainConfig};
use crate::metrics::{self, FaithfulnessConfig, ModelGenerator};
use crate::nn::Model;
use crate::streaming::{teacher_forced_contexts, ClipContext};
use crate::synth::{self, GenConfig};
use crate::types::{ClipRecord, ModelConfig};

/// Every tunable of a run. Files are merged over [`RunConfig::default`], so
/// a partial file only overrides the keys it names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::toy(),
            gen: GenConfig::default(),
        }
    }
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge_json(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

impl RunConfig {
    pub fn from_overrides(overrides: Value) -> Result<Self> {
        let mut base = serde_json::to_value(RunConfig::default())?;
        merge_json(&mut base, overrides);
        let rc: RunConfig = serde_json::from_value(base)?;
        rc.model.validate()?;
        rc.train.validate()?;
        Ok(rc)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_overrides(serde_json::from_str(&std::fs::read_to_string(p)?)?),
            None => Self::from_overrides(Value::Object(Default::default())),
        }
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// True for the `{"provenance": ...}` header line of a JSONL file.
pub fn is_provenance_line(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.len() == 1 && o.contains_key("provenance"))
}

pub fn read_jsonl_values(path: &Path) -> Result<Vec<Value>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)?;
        if !is_provenance_line(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<ClipRecord>> {
    read_jsonl_values(path)?
        .into_iter()
        .map(|v| serde_json::from_value(v).map_err(Error::from))
        .collect()
}

pub fn write_jsonl<S: Serialize>(path: &Path, provenance: &Value, items: &[S]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", serde_json::json!({ "provenance": provenance }))?;
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn contexts(records: &[ClipRecord], rc: &RunConfig) -> Result<Vec<ClipContext>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    teacher_forced_contexts(records, &rc.model, &rc.gen.bridge, &rc.gen.thresholds)
}

pub fn prototypes(rc: &RunConfig) -> Result<Vec<Vec<f64>>> {
    synth::class_prototypes(&rc.model, rc.train.prototype_samples, 0)
}

/// Number of optimizer steps a teacher run takes on `n` examples.
pub fn teacher_steps(n: usize, tc: &TrainConfig) -> usize {
    let bs = tc.batch_size.min(n).max(1);
    n.div_ceil(bs) * tc.epochs
}

pub fn train_teacher(
    records: &[ClipRecord],
    rc: &RunConfig,
    seed: u64,
    on_step: impl FnMut(&TelemetryRow),
) -> Result<(Model<f32>, Vec<TelemetryRow>)> {
    let ctx = contexts(records, rc)?;
    let protos = prototypes(rc)?;
    let mut model = Model::<f32>::new(&rc.model)?;
    let rows = fm::train(&mut model, &ctx, &protos, &rc.train, seed, on_step)?;
    Ok((model, rows))
}

pub fn distill_student(
    model: &mut Model<f32>,
    records: &[ClipRecord],
    rc: &RunConfig,
    seed: u64,
    on_step: impl FnMut(&DistillRow),
) -> Result<Vec<DistillRow>> {
    let ctx = contexts(records, rc)?;
    let steps = teacher_steps(ctx.len(), &rc.train);
    let (w, n) = (model.config.guidance_scale, model.config.euler_steps);
    distill::distill(model, &ctx, &rc.train, steps, w, n, seed, on_step)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub guidance: f64,
    pub steps: usize,
    pub distilled: bool,
    pub seed: u64,
    pub all_intents: bool,
}

impl EvalOptions {
    pub fn from_model(cfg: &ModelConfig, seed: u64) -> Self {
        Self {
            guidance: cfg.guidance_scale,
            steps: cfg.euler_steps,
            distilled: false,
            seed,
            all_intents: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade_3s: f64,
    pub ade_5s: f64,
    pub fde_3s: f64,
    pub fde_5s: f64,
    pub faithfulness_per_intent: std::collections::BTreeMap<String, f64>,
    pub faithfulness_macro: f64,
    /// Net forwards per generated trajectory.
    pub forward_count: usize,
    pub num_scenes: usize,
    pub num_probes: usize,
}

pub fn evaluate(model: &Model<f32>, records: &[ClipRecord], rc: &RunConfig, opts: &EvalOptions) -> Result<EvalReport> {
    let ctx = contexts(records, rc)?;
    let generator = ModelGenerator {
        model,
        guidance: opts.guidance,
        steps: opts.steps,
        distilled: opts.distilled,
        seed: opts.seed,
    };
    model.net.reset_forward_count();
    let disp = metrics::displacement(&generator, &ctx, model.config.rate_hz, model.config.coord_scale)?;
    let forward_count = model.net.forward_count() / ctx.len();
    let admissible: Vec<_> = records.iter().map(|r| r.admissible_intents.clone()).collect();
    let fc = FaithfulnessConfig {
        thresholds: rc.gen.thresholds.clone(),
        table: rc.gen.bridge.table.clone(),
        label_horizon_s: rc.gen.label_horizon_s,
        all_intents: opts.all_intents,
    };
    let faith = metrics::intent_faithfulness(&generator, &ctx, &admissible, &fc)?;
    Ok(EvalReport {
        ade_3s: disp.ade_3s,
        ade_5s: disp.ade_5s,
        fde_3s: disp.fde_3s,
        fde_5s: disp.fde_5s,
        faithfulness_per_intent: faith.per_intent,
        faithfulness_macro: faith.macro_rate,
        forward_count,
        num_scenes: ctx.len(),
        num_probes: faith.probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_overrides_only_named_keys() {
        let rc = RunConfig::from_overrides(serde_json::json!({"train": {"epochs": 3}, "model": {"hidden": 32}})).unwrap();
        assert_eq!(rc.train.epochs, 3);
        assert_eq!(rc.train.lr, TrainConfig::toy().lr);
        assert_eq!(rc.model.hidden, 32);
        assert_eq!(rc.model.chunk_len, ModelConfig::default().chunk_len);
        assert!(RunConfig::from_overrides(serde_json::json!({"model": {"num_intents": 5}})).is_err());
    }

    #[test]
    fn provenance_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, &serde_json::json!({"seed": 1}), &[serde_json::json!({"a": 1})]).unwrap();
        let v = read_jsonl_values(&p).unwrap();
        assert_eq!(v, vec![serde_json::json!({"a": 1})]);
    }
}
