//! Command-line front end. Precedence for settings: built-in defaults, then
//! the `--config` JSON file, then explicit flags.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::bridge::{self, consistency_check, Consistency};
use crate::error::{Error, Result};
use crate::labeler::{self, Thresholds};
use crate::nn::{checkpoint, Model};
use crate::pipeline::{self, sha256_hex, EvalOptions, RunConfig};
use crate::rng;
use crate::sampler::{self, Conditioning};
use crate::streaming::{StreamSettings, StreamingEngine};
use crate::synth;
use crate::types::{ClipRecord, IntentClass, KinematicWindow, MetaAction, Trajectory};

#[derive(Parser, Debug)]
#[command(name = "intentflow", version, about = "Intent-conditioned flow-matching trajectory toolkit")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic annotated clip sequences as JSONL.
    GenData(GenDataArgs),
    /// Fill meta-actions from each record's future window.
    Label(LabelArgs),
    /// Parse intent spans and relabel records that contradict their meta-action.
    Validate(IoArgs),
    /// Train the flow-matching teacher.
    Train(TrainArgs),
    /// Distill the guided teacher into a single-pass student embedder.
    Distill(DistillArgs),
    /// Sample one trajectory for a scene and intent.
    Sample(SampleArgs),
    /// Stream clips through the memory loop, one output line per clip.
    Stream(StreamArgs),
    /// ADE/FDE and intent faithfulness on a dataset.
    Eval(EvalArgs),
    /// Render trajectories to an SVG bird's-eye view.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Number of sequences.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Fraction of scenes that admit several intents.
    #[arg(long, default_value_t = 0.5)]
    pub ambiguous: f64,
    /// Author a single unambiguous sequence, e.g. `stopping,waiting,cruising`.
    #[arg(long, value_delimiter = ',')]
    pub episode: Option<Vec<String>>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IoArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON object overriding individual thresholds.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Telemetry CSV; defaults to `<out>.csv`.
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A ClipRecord as JSON, or a JSONL file whose first record is used.
    #[arg(long)]
    pub scene_file: PathBuf,
    /// Intent name or index.
    #[arg(long)]
    pub intent: String,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub distilled: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub distilled: bool,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub distilled: bool,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Probe all intents rather than each scene's admissible set.
    #[arg(long)]
    pub all_intents: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Output files of `sample`.
    #[arg(long = "traj")]
    pub trajs: Vec<PathBuf>,
    /// Scene whose ground truth is drawn; with `--ckpt` also sampled.
    #[arg(long)]
    pub scene_file: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Intents to sample with `--ckpt`; defaults to the scene's admissible set.
    #[arg(long, value_delimiter = ',')]
    pub intents: Option<Vec<String>>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub distilled: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::GenData(a) => gen_data(a, seed),
        Command::Label(a) => label(a, seed),
        Command::Validate(a) => validate(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Distill(a) => distill(a, seed),
        Command::Sample(a) => sample(a, seed),
        Command::Stream(a) => stream(a, seed),
        Command::Eval(a) => eval(a, seed),
        Command::Plot(a) => plot(a, seed),
    }
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn provenance(command: &str, seed: u64, rc: Option<&RunConfig>, extra: Value) -> Value {
    let mut p = json!({
        "tool": "intentflow",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
    });
    if let Some(rc) = rc {
        p["config_hash"] = json!(rc.hash());
        p["config"] = serde_json::to_value(rc).expect("config serializes");
    }
    pipeline::merge_json(&mut p, extra);
    p
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn load_ckpt(path: &Path) -> Result<(Model<f32>, checkpoint::Header, String)> {
    let bytes = std::fs::read(path)?;
    let (m, h) = checkpoint::from_bytes::<f32>(&bytes)?;
    Ok((m, h, sha256_hex(&bytes)))
}

/// Run settings stored in a checkpoint, or the defaults around its model config.
fn ckpt_run_config(header: &checkpoint::Header, file: Option<&Path>) -> Result<RunConfig> {
    let mut base = header
        .provenance
        .get("config")
        .cloned()
        .unwrap_or_else(|| json!({}));
    pipeline::merge_json(&mut base, json!({ "model": serde_json::to_value(&header.config)? }));
    if let Some(p) = file {
        pipeline::merge_json(&mut base, serde_json::from_str(&std::fs::read_to_string(p)?)?);
    }
    RunConfig::from_overrides(base)
}

fn gen_data(a: &GenDataArgs, seed: u64) -> Result<()> {
    let rc = RunConfig::load(a.config.as_deref())?;
    let (records, extra) = match &a.episode {
        Some(names) => {
            let intents = names
                .iter()
                .map(|n| IntentClass::parse_name_or_index(n))
                .collect::<Result<Vec<_>>>()?;
            let recs = synth::authored_episode(&intents, &rc.model, &rc.gen, "episode", seed)?;
            let names: Vec<&str> = intents.iter().map(|k| k.name()).collect();
            (recs, json!({ "episode": names }))
        }
        None => (
            synth::generate_dataset(a.n, a.ambiguous, &rc.model, &rc.gen, seed)?,
            json!({ "n": a.n, "ambiguous": a.ambiguous }),
        ),
    };
    let prov = provenance("gen-data", seed, Some(&rc), extra);
    pipeline::write_jsonl(&a.out, &prov, &records)
}

fn label(a: &LabelArgs, seed: u64) -> Result<()> {
    let th: Thresholds = match &a.thresholds {
        Some(p) => {
            let mut base = serde_json::to_value(Thresholds::default())?;
            pipeline::merge_json(&mut base, serde_json::from_str(&std::fs::read_to_string(p)?)?);
            serde_json::from_value(base)?
        }
        None => Thresholds::default(),
    };
    let records = pipeline::read_records(&a.data)?;
    let out = records
        .iter()
        .map(|r| bridge::fill_meta_action(r, &th))
        .collect::<Result<Vec<_>>>()?;
    let prov = provenance(
        "label",
        seed,
        None,
        json!({ "thresholds": th, "data_sha256": file_sha(&a.data)? }),
    );
    pipeline::write_jsonl(&a.out, &prov, &out)
}

fn validate(a: &IoArgs, seed: u64) -> Result<()> {
    let cfg = bridge::BridgeConfig::default();
    let th = Thresholds::default();
    let mut out = Vec::new();
    let (mut relabeled, mut failed) = (0usize, 0usize);
    for r in pipeline::read_records(&a.data)? {
        let r = if r.meta_action.is_some() { r } else { bridge::fill_meta_action(&r, &th)? };
        let (rec, prov) = bridge::relabel_if_inconsistent(&r, &cfg)?;
        relabeled += prov.relabeled as usize;
        failed += (!prov.parsed_ok) as usize;
        let mut v = serde_json::to_value(&rec)?;
        v["provenance"] = serde_json::to_value(prov)?;
        out.push(v);
    }
    eprintln!("{} records, {relabeled} relabeled, {failed} without a usable parse", out.len());
    let prov = provenance("validate", seed, None, json!({ "data_sha256": file_sha(&a.data)? }));
    pipeline::write_jsonl(&a.out, &prov, &out)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let mut rc = RunConfig::load(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        rc.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        rc.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        rc.train.batch_size = b;
    }
    rc.model.seed = seed;
    rc.train.validate()?;
    let records = pipeline::read_records(&a.data)?;
    let (model, rows) = pipeline::train_teacher(&records, &rc, seed, |_| {})?;
    let prov = provenance("train", seed, Some(&rc), json!({ "data_sha256": file_sha(&a.data)? }));
    checkpoint::save(&model, &a.out, prov.clone())?;
    let tel = a.telemetry.clone().unwrap_or_else(|| with_suffix(&a.out, ".csv"));
    let comment = serde_json::to_string(&json!({ "provenance": prov }))?;
    std::fs::write(tel, crate::fm::telemetry_csv(&rows, Some(&comment)))?;
    if let Some(last) = rows.last() {
        eprintln!("trained {} steps, final fm_loss {:.4}", rows.len(), last.fm_loss);
    }
    Ok(())
}

fn distill(a: &DistillArgs, seed: u64) -> Result<()> {
    let (mut model, header, teacher_sha) = load_ckpt(&a.ckpt)?;
    let rc = ckpt_run_config(&header, a.config.as_deref())?;
    let records = pipeline::read_records(&a.data)?;
    let rows = pipeline::distill_student(&mut model, &records, &rc, seed, |_| {})?;
    let prov = provenance(
        "distill",
        seed,
        Some(&rc),
        json!({ "teacher_sha256": teacher_sha, "data_sha256": file_sha(&a.data)? }),
    );
    checkpoint::save(&model, &a.out, prov.clone())?;
    let tel = a.telemetry.clone().unwrap_or_else(|| with_suffix(&a.out, ".csv"));
    let mut csv = format!("# {}\nstep,loss,grad_norm,lr\n", serde_json::to_string(&json!({ "provenance": prov }))?);
    for r in &rows {
        let _ = writeln!(csv, "{},{:.6e},{:.6e},{:.6e}", r.step, r.loss, r.grad_norm, r.lr);
    }
    std::fs::write(tel, csv)?;
    Ok(())
}

fn read_scene(path: &Path) -> Result<ClipRecord> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(r) = serde_json::from_str::<ClipRecord>(&text) {
        return Ok(r);
    }
    pipeline::read_records(path)?
        .into_iter()
        .next()
        .ok_or(Error::EmptyDataset)
}

/// Generates one trajectory per intent for a stand-alone scene (empty memory,
/// unknown previous intent).
fn sample_scene(
    model: &Model<f32>,
    scene: &ClipRecord,
    intents: &[IntentClass],
    w: f64,
    n_steps: usize,
    distilled: bool,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let cfg = &model.config;
    if scene.scene_features.len() != cfg.scene_dim {
        return Err(Error::ShapeMismatch { expected: cfg.scene_dim, got: scene.scene_features.len() });
    }
    let memory: Vec<f64> = model.prev_table.unknown().iter().map(|&v| v as f64).collect();
    let scenes: Vec<&[f64]> = intents.iter().map(|_| scene.scene_features.as_slice()).collect();
    let mems: Vec<&[f64]> = intents.iter().map(|_| memory.as_slice()).collect();
    let cond = Conditioning::<f32>::batch(&scenes, &mems);
    // Every intent gets the same initial noise so samples differ only by intent.
    let mut r = rng::seeded(seed, rng::hash_str("sample"));
    let one: ndarray::Array2<f32> = sampler::draw_noise(1, cfg.chunk_dim(), &mut r);
    let noise = ndarray::Array2::from_shape_fn((intents.len(), cfg.chunk_dim()), |(_, j)| one[[0, j]]);
    let chunks = if distilled {
        sampler::distilled_from_noise(model, &cond, intents, n_steps, noise)?
    } else {
        sampler::sample_from_noise(model, &cond, intents, w, n_steps, noise)?
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

fn label_trajectory(traj: &Trajectory, k: IntentClass) -> Result<(MetaAction, bool)> {
    let meta = labeler::label(&KinematicWindow::from_trajectory(traj, 3.0)?, &Thresholds::default())?;
    let ok = consistency_check(&bridge::CompatibilityTable::default(), k, &meta)? == Consistency::Consistent;
    Ok((meta, ok))
}

fn sample(a: &SampleArgs, seed: u64) -> Result<()> {
    let (model, _, ckpt_sha) = load_ckpt(&a.ckpt)?;
    let k = IntentClass::parse_name_or_index(&a.intent)?;
    if k.is_uncond() {
        return Err(Error::InvalidIntent);
    }
    let scene = read_scene(&a.scene_file)?;
    let w = a.w.unwrap_or(model.config.guidance_scale);
    let n = a.n_steps.unwrap_or(model.config.euler_steps);
    let traj = sample_scene(&model, &scene, &[k], w, n, a.distilled, seed)?.remove(0);
    let (meta, consistent) = label_trajectory(&traj, k)?;
    let prov = provenance(
        "sample",
        seed,
        None,
        json!({
            "checkpoint_sha256": ckpt_sha,
            "scene_sha256": file_sha(&a.scene_file)?,
            "intent": k.index(),
            "w": w,
            "n_steps": n,
            "distilled": a.distilled,
        }),
    );
    write_json(
        &a.out,
        &json!({
            "provenance": prov,
            "intent": k.name(),
            "intent_index": k.index(),
            "trajectory": traj,
            "meta_action": meta,
            "consistent": consistent,
        }),
    )
}

fn stream(a: &StreamArgs, seed: u64) -> Result<()> {
    let (model, _, ckpt_sha) = load_ckpt(&a.ckpt)?;
    let mut settings = StreamSettings::from_config(&model.config, seed);
    settings.distilled = a.distilled;
    if let Some(w) = a.w {
        settings.guidance = w;
    }
    let records = pipeline::read_records(&a.data)?;
    let mut engine = StreamingEngine::new(&model, settings);
    let out = records.iter().map(|r| engine.step(r)).collect::<Result<Vec<_>>>()?;
    let consistent = out.iter().filter(|o| o.consistent).count();
    eprintln!("{} clips, {consistent} meta-action consistent", out.len());
    let prov = provenance(
        "stream",
        seed,
        None,
        json!({
            "checkpoint_sha256": ckpt_sha,
            "data_sha256": file_sha(&a.data)?,
            "distilled": a.distilled,
            "w": engine.settings.guidance,
        }),
    );
    pipeline::write_jsonl(&a.out, &prov, &out)
}

fn eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let (model, header, ckpt_sha) = load_ckpt(&a.ckpt)?;
    let rc = ckpt_run_config(&header, a.config.as_deref())?;
    let mut opts = EvalOptions::from_model(&model.config, seed);
    opts.distilled = a.distilled;
    opts.all_intents = a.all_intents;
    if let Some(w) = a.w {
        opts.guidance = w;
    }
    if let Some(n) = a.n_steps {
        opts.steps = n;
    }
    let records = pipeline::read_records(&a.data)?;
    let report = pipeline::evaluate(&model, &records, &rc, &opts)?;
    let prov = provenance(
        "eval",
        seed,
        Some(&rc),
        json!({ "checkpoint_sha256": ckpt_sha, "data_sha256": file_sha(&a.data)?, "options": opts }),
    );
    let mut v = serde_json::to_value(&report)?;
    v["provenance"] = prov;
    write_json(&a.out, &v)
}

struct Series {
    label: String,
    points: Vec<[f64; 2]>,
    gt: bool,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const DASHES: [&str; 4] = ["", "6 3", "2 3", "8 3 2 3"];

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    for m in [1.0, 2.0, 5.0, 10.0] {
        if raw <= m * mag {
            return m * mag;
        }
    }
    10.0 * mag
}

/// Bird's-eye view: forward (+x) points up, left (+y) points left.
pub fn render_svg(series: &[(String, Vec<[f64; 2]>, bool)], comment: &str) -> String {
    let series: Vec<Series> = series
        .iter()
        .map(|(l, p, g)| Series { label: l.clone(), points: p.clone(), gt: *g })
        .collect();
    let (w, h, margin) = (560.0, 640.0, 60.0);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in &series {
        for p in &s.points {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
    }
    let pad = 2.0;
    let (xmin, xmax, ymin, ymax) = (xmin - pad, xmax + pad, ymin - pad, ymax + pad);
    let scale = ((h - 2.0 * margin) / (xmax - xmin)).min((w - 2.0 * margin) / (ymax - ymin));
    let ymid = 0.5 * (ymin + ymax);
    let xmid = 0.5 * (xmin + xmax);
    let sx = |y: f64| w / 2.0 - (y - ymid) * scale;
    let sy = |x: f64| h / 2.0 - (x - xmid) * scale;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, "<!-- {} -->", comment.replace("--", "- -"));
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    // Grid and tick labels in meters.
    let step = nice_step((xmax - xmin).max(ymax - ymin));
    let mut v = (xmin / step).ceil() * step;
    while v <= xmax {
        let y = sy(v);
        let _ = writeln!(s, r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e6e6e6"/>"##, margin, w - margin);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, margin - 4.0, y + 4.0);
        v += step;
    }
    let mut v = (ymin / step).ceil() * step;
    while v <= ymax {
        let x = sx(v);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#e6e6e6"/>"##, margin, h - margin);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, h - margin + 14.0);
        v += step;
    }
    let _ = writeln!(s, r##"<rect x="{margin}" y="{margin}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##, w - 2.0 * margin, h - 2.0 * margin);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">lateral y (m, left positive)</text>"#, w / 2.0, h - 18.0);
    let _ = writeln!(s, r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">longitudinal x (m)</text>"#, h / 2.0);
    // Ego marker at the origin.
    let _ = writeln!(s, r#"<path d="M {:.1} {:.1} l -5 10 l 10 0 z" fill="black"/>"#, sx(0.0), sy(0.0) - 5.0);

    let mut colour = 0;
    let mut legend = Vec::new();
    for ser in &series {
        let (stroke, dash, width) = if ser.gt {
            ("#000000", "4 4", 2.0)
        } else {
            let c = (PALETTE[colour % PALETTE.len()], DASHES[(colour / PALETTE.len()) % DASHES.len()], 2.0);
            colour += 1;
            c
        };
        let mut d = format!("M {:.1} {:.1}", sx(0.0), sy(0.0));
        for p in &ser.points {
            let _ = write!(d, " L {:.1} {:.1}", sx(p[1]), sy(p[0]));
        }
        let dash_attr = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{stroke}" stroke-width="{width}"{dash_attr}/>"#);
        if !ser.gt {
            for p in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="1.8" fill="{stroke}"/>"#, sx(p[1]), sy(p[0]));
            }
        }
        legend.push((ser.label.clone(), stroke, dash_attr));
    }
    for (i, (label, stroke, dash)) in legend.iter().enumerate() {
        let y = margin + 14.0 + 16.0 * i as f64;
        let x = w - margin - 150.0;
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{stroke}" stroke-width="2"{dash}/>"#, x + 24.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 30.0, y + 4.0, xml_escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plot(a: &PlotArgs, seed: u64) -> Result<()> {
    let mut series = Vec::new();
    let mut inputs = serde_json::Map::new();
    let scene = match &a.scene_file {
        Some(p) => {
            inputs.insert("scene_sha256".into(), json!(file_sha(p)?));
            let s = read_scene(p)?;
            series.push(("ground truth".to_string(), s.trajectory.points.clone(), true));
            Some(s)
        }
        None => None,
    };
    if let Some(ckpt) = &a.ckpt {
        let scene = scene
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--ckpt needs --scene-file".into()))?;
        let (model, _, sha) = load_ckpt(ckpt)?;
        let intents: Vec<IntentClass> = match &a.intents {
            Some(v) => v.iter().map(|n| IntentClass::parse_name_or_index(n)).collect::<Result<_>>()?,
            None if !scene.admissible_intents.is_empty() => scene.admissible_intents.clone(),
            None => scene.intent.into_iter().collect(),
        };
        let w = a.w.unwrap_or(model.config.guidance_scale);
        let trajs = sample_scene(&model, scene, &intents, w, model.config.euler_steps, a.distilled, seed)?;
        for (k, t) in intents.iter().zip(trajs) {
            series.push((k.name().to_string(), t.points, false));
        }
        inputs.insert("checkpoint_sha256".into(), json!(sha));
        inputs.insert("intents".into(), json!(intents.iter().map(|k| k.index()).collect::<Vec<_>>()));
        inputs.insert("w".into(), json!(w));
        inputs.insert("distilled".into(), json!(a.distilled));
    }
    let mut traj_shas = Vec::new();
    for p in &a.trajs {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        let traj: Trajectory = serde_json::from_value(v["trajectory"].clone())?;
        let name = v["intent"].as_str().unwrap_or("sample").to_string();
        series.push((name, traj.points, false));
        traj_shas.push(file_sha(p)?);
    }
    if series.is_empty() {
        return Err(Error::InvalidConfig("nothing to plot: pass --traj or --scene-file".into()));
    }
    inputs.insert("traj_sha256".into(), json!(traj_shas));
    let prov = provenance("plot", seed, None, Value::Object(inputs));
    let comment = serde_json::to_string(&json!({ "provenance": prov }))?;
    std::fs::write(&a.out, render_svg(&series, &comment))?;
    Ok(())
}
