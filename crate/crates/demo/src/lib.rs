//! Browser bindings: maneuver explorer, in-page training and an intent sweep.
//!
//! Every export returns a JSON string; the page parses it.

use intentflow::bridge::{consistency_check, CompatibilityTable, Consistency};
use intentflow::distill::context_conditioning;
use intentflow::fm::{TelemetryRow, Trainer};
use intentflow::labeler::{self, Thresholds};
use intentflow::nn::{checkpoint, Model};
use intentflow::pipeline::{self, RunConfig};
use intentflow::rng;
use intentflow::sampler::{distilled_from_noise, draw_noise, sample_from_noise};
use intentflow::streaming::ClipContext;
use intentflow::synth;
use intentflow::types::{ClipRecord, IntentClass, KinematicWindow, MetaAction, Trajectory};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type JsResult<T> = Result<T, JsError>;

fn js(e: intentflow::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn label_of(traj: &Trajectory, k: IntentClass) -> intentflow::Result<(MetaAction, bool)> {
    let meta = labeler::label(&KinematicWindow::from_trajectory(traj, 3.0)?, &Thresholds::default())?;
    let ok = consistency_check(&CompatibilityTable::default(), k, &meta)? == Consistency::Consistent;
    Ok((meta, ok))
}

fn trajectory_json(traj: &Trajectory, k: IntentClass) -> intentflow::Result<Value> {
    let (meta, ok) = label_of(traj, k)?;
    Ok(json!({
        "intent": k.name(),
        "points": traj.points,
        "meta_action": meta,
        "consistent": ok,
    }))
}

#[wasm_bindgen]
pub fn intent_names() -> String {
    let names: Vec<&str> = IntentClass::all().map(|k| k.name()).collect();
    json!(names).to_string()
}

/// Generates the maneuver family of `intent` and labels its first 3 s.
#[wasm_bindgen]
pub fn maneuver(intent: &str, speed: f64, noise_sigma: f64, seed: u64) -> JsResult<String> {
    let k = IntentClass::parse_name_or_index(intent).map_err(js)?;
    let cfg = intentflow::types::ModelConfig::default();
    let mut r = rng::seeded(seed, 1);
    let mut spec = synth::sample_spec(k, speed, &mut r);
    spec.noise_sigma = noise_sigma.max(0.0);
    let traj = synth::generate_trajectory(&spec, &cfg, &mut r).map_err(js)?;
    let mut v = trajectory_json(&traj, k).map_err(js)?;
    v["spec"] = serde_json::to_value(&spec).unwrap();
    Ok(v.to_string())
}

/// A small dataset, a model and its training state.
#[wasm_bindgen]
pub struct Playground {
    rc: RunConfig,
    records: Vec<ClipRecord>,
    contexts: Vec<ClipContext>,
    scenes: Vec<usize>,
    model: Model<f32>,
    trainer: Option<Trainer<f32>>,
    history: Vec<TelemetryRow>,
    seed: u64,
}

#[wasm_bindgen]
impl Playground {
    /// `sequences` synthetic sequences trained for `epochs` epochs.
    #[wasm_bindgen(constructor)]
    pub fn new(sequences: usize, epochs: usize, seed: u64) -> JsResult<Playground> {
        let mut rc = RunConfig::default();
        rc.train.epochs = epochs.max(1);
        let records = synth::generate_dataset(sequences.max(1), 0.5, &rc.model, &rc.gen, seed).map_err(js)?;
        let contexts = pipeline::contexts(&records, &rc).map_err(js)?;
        let scenes = (0..records.len()).filter(|&i| records[i].admissible_intents.len() > 1).collect();
        let model = Model::<f32>::new(&rc.model).map_err(js)?;
        let protos = pipeline::prototypes(&rc).map_err(js)?;
        let trainer = Trainer::new(&model, &contexts, &protos, &rc.train, seed).map_err(js)?;
        Ok(Playground { rc, records, contexts, scenes, model, trainer: Some(trainer), history: Vec::new(), seed })
    }

    /// Runs up to `steps` optimizer steps and reports progress.
    pub fn train(&mut self, steps: usize) -> JsResult<String> {
        let mut last = None;
        if let Some(t) = self.trainer.as_mut() {
            for _ in 0..steps {
                match t.step(&mut self.model, &self.contexts).map_err(js)? {
                    Some(row) => {
                        last = Some(row);
                        self.history.push(row);
                    }
                    None => break,
                }
            }
        }
        let (done, total) = self.trainer.as_ref().map_or((1, 1), |t| (t.steps_done(), t.total_steps()));
        Ok(json!({
            "step": done,
            "total": total,
            "fm_loss": last.map(|r| r.fm_loss),
            "finished": done >= total,
        })
        .to_string())
    }

    /// Per-step FM loss so far.
    pub fn loss_history(&self) -> String {
        json!(self.history.iter().map(|r| r.fm_loss).collect::<Vec<_>>()).to_string()
    }

    /// Fits the single-pass student; returns the number of steps it ran.
    pub fn distill(&mut self) -> JsResult<usize> {
        let steps = pipeline::distill_student(&mut self.model, &self.records, &self.rc, self.seed, |_| {}).map_err(js)?;
        Ok(steps.len())
    }

    pub fn has_student(&self) -> bool {
        self.model.distilled.is_some()
    }

    /// Replaces the model with a checkpoint written by the command-line tool.
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> JsResult<()> {
        let (model, _) = checkpoint::from_bytes::<f32>(bytes).map_err(js)?;
        if model.config.scene_dim != self.rc.model.scene_dim || model.config.chunk_len != self.rc.model.chunk_len {
            return Err(JsError::new("checkpoint shape does not match the demo data"));
        }
        self.model = model;
        self.trainer = None;
        Ok(())
    }

    /// Number of ambiguous scenes available to [`Playground::sweep`].
    pub fn num_scenes(&self) -> usize {
        self.scenes.len()
    }

    /// Samples every admissible intent (or all 20) for one ambiguous scene
    /// from shared noise, with guidance `w` or through the student.
    pub fn sweep(&self, scene: usize, w: f64, distilled: bool, all_intents: bool, noise_seed: u64) -> JsResult<String> {
        let idx = *self.scenes.get(scene).ok_or_else(|| JsError::new("scene out of range"))?;
        let rec = &self.records[idx];
        let ctx = &self.contexts[idx];
        let intents: Vec<IntentClass> = if all_intents { IntentClass::all().collect() } else { rec.admissible_intents.clone() };
        let refs: Vec<&ClipContext> = intents.iter().map(|_| ctx).collect();
        let cond = context_conditioning(&self.model, &refs).map_err(js)?;
        let cfg = &self.model.config;
        let mut r = rng::seeded(noise_seed, 2);
        let one: ndarray::Array2<f32> = draw_noise(1, cfg.chunk_dim(), &mut r);
        let noise = ndarray::Array2::from_shape_fn((intents.len(), cfg.chunk_dim()), |(_, j)| one[[0, j]]);
        self.model.net.reset_forward_count();
        let chunks = if distilled {
            distilled_from_noise(&self.model, &cond, &intents, cfg.euler_steps, noise)
        } else {
            sample_from_noise(&self.model, &cond, &intents, w, cfg.euler_steps, noise)
        }
        .map_err(js)?;
        let forwards = self.model.net.forward_count();
        let mut samples = Vec::new();
        for (row, &k) in chunks.rows().into_iter().zip(&intents) {
            let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            let traj = Trajectory::from_chunk(&v, cfg.coord_scale, cfg.rate_hz).map_err(js)?;
            samples.push(trajectory_json(&traj, k).map_err(js)?);
        }
        Ok(json!({
            "ground_truth": rec.trajectory.points,
            "gt_intent": rec.intent.map(|k| k.name()),
            "admissible": rec.admissible_intents.iter().map(|k| k.name()).collect::<Vec<_>>(),
            "samples": samples,
            "forwards_per_sample": forwards / intents.len().max(1),
        })
        .to_string())
    }
}
