//! The pipeline stages behind each subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use xband_core::dataset::{
    crop_parent, decode_container, encode_container, generate_parent, read_dataset, sample_sparse, simulate_sample,
    split, validate_sample, write_dataset, write_records, Record, Sample,
};
use xband_core::eval::{self, render, EvalReport, IdwFlag};
use xband_core::io::read_artifact;
use xband_core::models::{predict, train, Checkpoint, CoverageSource, ModelConfig, Prediction};
use xband_core::propagation::{Band, Beam, DIRECTIONS_DEG};
use xband_core::{Grid, SignalMap};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

pub const SCENES: &str = "scenes.cuxd";
pub const SIMULATED: &str = "simulated.cuxd";
pub const DATASET: &str = "dataset.cuxd";
pub const SPLIT: &str = "split.json";
pub const MODEL: &str = "model.cuxw";
pub const TRAIN_LOG: &str = "train_log.json";
pub const PREDICTIONS: &str = "predictions.cuxd";
pub const REPORT: &str = "report.csv";
pub const REPORT_IDW: &str = "report_idw.csv";
pub const SUMMARY: &str = "summary.json";
pub const RENDER_DIR: &str = "render";

pub struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub hash: String,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        Self { cfg, hash: cfg.hash() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.out)
            .with_context(|| format!("creating {}", self.cfg.out.display()))
            .map_err(CliError::Other)
    }

    fn manifest(&self, stage: &str, extra: Value) -> Value {
        json!({ "config_hash": self.hash, "stage": stage, "extra": extra })
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let bytes = read_artifact(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Other(anyhow!("{}: {e}", path.display())))
}

/// Keeps the successes, tallying failure reasons.
fn keep_ok<T>(items: Vec<xband_core::Result<T>>, reasons: &mut BTreeMap<String, usize>) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        match it {
            Ok(v) => out.push(v),
            Err(e) => *reasons.entry(e.to_string()).or_default() += 1,
        }
    }
    out
}

pub fn gen(ctx: &Ctx) -> Result<()> {
    let b = &ctx.cfg.build;
    let per_parent: Vec<xband_core::Result<Vec<Sample>>> = (0..b.n_parents)
        .into_par_iter()
        .map(|i| {
            let parent = generate_parent(b, i)?;
            crop_parent(b, &parent, b.parent_seed(i))
        })
        .collect();
    let mut reasons = BTreeMap::new();
    let scenes: Vec<Sample> = keep_ok(per_parent, &mut reasons).into_iter().flatten().collect();
    ctx.out_dir()?;
    let extra = json!({ "parents_attempted": b.n_parents, "rejected": reasons });
    write_records(&scenes, &ctx.path(SCENES), ctx.manifest("gen", extra))?;
    eprintln!("gen: {} crops from {} parents", scenes.len(), b.n_parents);
    Ok(())
}

pub fn simulate(ctx: &Ctx) -> Result<()> {
    let (scenes, _) = read_dataset(&ctx.path(SCENES))?;
    let b = &ctx.cfg.build;
    let results: Vec<xband_core::Result<Sample>> = scenes
        .into_par_iter()
        .map(|mut s| {
            simulate_sample(b, &mut s)?;
            Ok(s)
        })
        .collect();
    let mut reasons = BTreeMap::new();
    let sims = keep_ok(results, &mut reasons);
    ctx.out_dir()?;
    write_records(&sims, &ctx.path(SIMULATED), ctx.manifest("simulate", json!({ "rejected": reasons })))?;
    eprintln!("simulate: {} samples", sims.len());
    Ok(())
}

pub fn sample(ctx: &Ctx) -> Result<()> {
    let (sims, _) = read_dataset(&ctx.path(SIMULATED))?;
    let b = &ctx.cfg.build;
    let results: Vec<xband_core::Result<Sample>> = sims
        .into_par_iter()
        .map(|mut s| {
            sample_sparse(b, &mut s)?;
            validate_sample(&s)?;
            Ok(s)
        })
        .collect();
    let mut reasons = BTreeMap::new();
    let samples = keep_ok(results, &mut reasons);
    ctx.out_dir()?;
    write_dataset(&samples, &ctx.path(DATASET), ctx.manifest("sample", json!({ "rejected": reasons })))?;
    eprintln!("sample: {} valid samples", samples.len());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub config_hash: String,
    pub ratios: [u32; 3],
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub fn split_stage(ctx: &Ctx) -> Result<()> {
    let (samples, _) = read_dataset(&ctx.path(DATASET))?;
    let parents: Vec<&str> = samples.iter().map(|s| s.parent_id.as_str()).collect();
    let idx = split(&parents, &ctx.cfg.split)?;
    let ids = |v: &[usize]| v.iter().map(|&i| samples[i].id()).collect::<Vec<_>>();
    let file = SplitFile {
        config_hash: ctx.hash.clone(),
        ratios: ctx.cfg.split.ratios,
        seed: ctx.cfg.split.seed,
        train: ids(&idx.train),
        val: ids(&idx.val),
        test: ids(&idx.test),
    };
    ctx.out_dir()?;
    write_json(&ctx.path(SPLIT), &serde_json::to_value(&file)?)?;
    eprintln!(
        "split: {} train, {} val, {} test samples",
        file.train.len(),
        file.val.len(),
        file.test.len()
    );
    Ok(())
}

fn read_split(ctx: &Ctx) -> Result<SplitFile> {
    let v = read_json(&ctx.path(SPLIT))?;
    serde_json::from_value(v).map_err(|e| CliError::Other(anyhow!("{SPLIT}: {e}")))
}

fn select(samples: &[Sample], ids: &[String]) -> Result<Vec<Sample>> {
    let by_id: BTreeMap<String, &Sample> = samples.iter().map(|s| (s.id(), s)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|s| (*s).clone())
                .ok_or_else(|| CliError::Other(anyhow!("split names sample {id} absent from {DATASET}")))
        })
        .collect()
}

pub fn train_stage(ctx: &Ctx) -> Result<()> {
    let (samples, _) = read_dataset(&ctx.path(DATASET))?;
    let sp = read_split(ctx)?;
    let tr = select(&samples, &sp.train)?;
    let va = select(&samples, &sp.val)?;
    let (ckpt, report) = train(&tr, &va, &ctx.cfg.model, &ctx.cfg.train)?;
    ctx.out_dir()?;
    let extra = json!({
        "config_hash": ctx.hash,
        "train": ctx.cfg.train,
        "best_epoch": report.best_epoch,
        "steps": report.steps.len(),
    });
    ckpt.save(&ctx.path(MODEL), extra)?;
    write_json(
        &ctx.path(TRAIN_LOG),
        &json!({ "config_hash": ctx.hash, "report": report }),
    )?;
    let last = report.epochs.last();
    eprintln!(
        "train: {} steps, best epoch {}, last train loss {:.4}",
        report.steps.len(),
        report.best_epoch,
        last.map_or(f64::NAN, |e| e.train_total)
    );
    Ok(())
}

fn prediction_record(id: &str, dirs: &[u8], p: &Prediction, hash: &str) -> Record {
    let (h, w) = p.directions[0].dims();
    let mut grids: Vec<(String, Vec<f32>)> = dirs
        .iter()
        .zip(&p.directions)
        .map(|(d, m)| (format!("dir{d}"), m.values.as_slice().to_vec()))
        .collect();
    if let Some(n) = &p.nlos_prob {
        grids.push(("nlos_prob".into(), n.as_slice().to_vec()));
    }
    if let Some(c) = &p.coverage {
        grids.push(("coverage".into(), c.values.as_slice().to_vec()));
    }
    Record {
        header: json!({ "id": id, "directions": dirs, "config_hash": hash }),
        height: h,
        width: w,
        grids,
    }
}

pub fn predict_stage(ctx: &Ctx) -> Result<()> {
    let (ckpt, _) = Checkpoint::load(&ctx.path(MODEL))?;
    let (samples, _) = read_dataset(&ctx.path(DATASET))?;
    let sp = read_split(ctx)?;
    let test = select(&samples, &sp.test)?;
    let preds = predict(&ckpt, &test)?;
    let dirs = ckpt.network.config.direction_indices();
    let records: Vec<Record> = test
        .iter()
        .zip(&preds)
        .map(|(s, p)| prediction_record(&s.id(), &dirs, p, &ctx.hash))
        .collect();
    let manifest = ctx.manifest("predict", json!({ "model": ckpt.network.config }));
    let (bytes, _) = encode_container(&records, manifest)?;
    ctx.out_dir()?;
    std::fs::write(ctx.path(PREDICTIONS), bytes)?;
    eprintln!("predict: {} test maps", records.len());
    Ok(())
}

/// Predicted directional maps of one test sample.
pub struct PredictedMap {
    pub id: String,
    pub directions: Vec<u8>,
    pub maps: Vec<SignalMap>,
}

fn read_predictions(ctx: &Ctx) -> Result<(Vec<PredictedMap>, ModelConfig)> {
    let bytes = read_artifact(&ctx.path(PREDICTIONS))?;
    let (records, manifest) = decode_container(&bytes)?;
    let model: ModelConfig = serde_json::from_value(manifest["extra"]["model"].clone())
        .map_err(|e| CliError::Other(anyhow!("{PREDICTIONS} manifest: {e}")))?;
    let mut out = Vec::with_capacity(records.len());
    for r in &records {
        let id = r.header["id"].as_str().unwrap_or_default().to_string();
        let directions: Vec<u8> = serde_json::from_value(r.header["directions"].clone())?;
        let maps = directions
            .iter()
            .map(|&d| {
                let g = r
                    .grid(&format!("dir{d}"))
                    .ok_or_else(|| CliError::Other(anyhow!("prediction {id} lacks direction {d}")))?;
                Ok(SignalMap {
                    values: g,
                    band: Band::High,
                    beam: Beam::Direction(d),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PredictedMap { id, directions, maps });
    }
    Ok((out, model))
}

/// Evaluates `pred` against `truth` for the given directions. Categories
/// use the model's low-band observation mask: everything for a complete
/// coverage input, the sampled pixels otherwise.
pub fn evaluate_sample(
    id: &str,
    truth: &Sample,
    dirs: &[u8],
    pred: &[SignalMap],
    coverage: CoverageSource,
) -> Result<eval::MapEval> {
    let t: Vec<SignalMap> = dirs.iter().map(|&d| truth.directions[d as usize].clone()).collect();
    let m7: Vec<_> = dirs
        .iter()
        .map(|&d| truth.sparse_directions[d as usize].sample_mask.clone())
        .collect();
    let (h, w) = truth.dims();
    let m3 = match coverage.strategy() {
        None => Grid::filled(h, w, true),
        Some(s) => truth
            .sparse_coverage
            .get(&s)
            .map(|sp| sp.sample_mask.clone())
            .ok_or_else(|| CliError::Other(anyhow!("sample {id} lacks {} coverage", s.name())))?,
    };
    Ok(eval::evaluate_map(id, pred, &t, Some(&m3), &m7)?)
}

pub struct EvalOutcome {
    pub model: EvalReport,
    pub idw: EvalReport,
}

pub fn evaluate(
    samples: &[Sample],
    preds: &[PredictedMap],
    coverage: CoverageSource,
    idw_power: f64,
) -> Result<EvalOutcome> {
    let by_id: BTreeMap<String, &Sample> = samples.iter().map(|s| (s.id(), s)).collect();
    let rows: Vec<Result<(eval::MapEval, eval::MapEval, Vec<IdwFlag>)>> = preds
        .par_iter()
        .map(|p| {
            let s = by_id
                .get(&p.id)
                .ok_or_else(|| CliError::Other(anyhow!("prediction {} has no sample in {DATASET}", p.id)))?;
            let model = evaluate_sample(&p.id, s, &p.directions, &p.maps, coverage)?;
            let sparse: Vec<_> = p
                .directions
                .iter()
                .map(|&d| s.sparse_directions[d as usize].clone())
                .collect();
            let idw = eval::idw_baseline(&sparse, &s.building, idw_power)?;
            let flags = idw
                .filled
                .iter()
                .map(|&k| IdwFlag {
                    map_id: p.id.clone(),
                    direction: p.directions[k] as usize,
                })
                .collect();
            let base = evaluate_sample(&p.id, s, &p.directions, &idw.maps, coverage)?;
            Ok((model, base, flags))
        })
        .collect();
    let mut model = Vec::new();
    let mut base = Vec::new();
    let mut flags = Vec::new();
    for r in rows {
        let (m, b, f) = r?;
        model.push(m);
        base.push(b);
        flags.extend(f);
    }
    Ok(EvalOutcome {
        model: EvalReport::from_maps("model", model, Vec::new()),
        idw: EvalReport::from_maps("idw", base, flags),
    })
}

pub fn eval_stage(ctx: &Ctx) -> Result<()> {
    let (preds, model) = read_predictions(ctx)?;
    let (samples, _) = read_dataset(&ctx.path(DATASET))?;
    let out = evaluate(&samples, &preds, model.coverage_input, ctx.cfg.eval.idw_power)?;
    for r in [&out.model, &out.idw] {
        if let (Some(m), Some(r2)) = (r.mae, r.rmse) {
            if !(m.is_finite() && r2.is_finite()) {
                return Err(CliError::NonFinite(format!("{} metrics are not finite", r.label)));
            }
        }
    }
    ctx.out_dir()?;
    std::fs::write(ctx.path(REPORT), out.model.to_csv(&ctx.hash))?;
    std::fs::write(ctx.path(REPORT_IDW), out.idw.to_csv(&ctx.hash))?;
    let beats = match (out.model.mae_median, out.idw.mae_median) {
        (Some(a), Some(b)) => Some(a < b),
        _ => None,
    };
    write_json(
        &ctx.path(SUMMARY),
        &json!({
            "config_hash": ctx.hash,
            "model": out.model.summary(&ctx.hash),
            "idw": out.idw.summary(&ctx.hash),
            "model_median_mae_below_idw": beats,
        }),
    )?;
    eprintln!(
        "eval: median MAE model {} dB, IDW {} dB over {} maps",
        fmt_opt(out.model.mae_median),
        fmt_opt(out.idw.mae_median),
        preds.len()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.3}"))
}

pub fn render_stage(ctx: &Ctx) -> Result<()> {
    let (preds, _) = read_predictions(ctx)?;
    let (samples, _) = read_dataset(&ctx.path(DATASET))?;
    let by_id: BTreeMap<String, &Sample> = samples.iter().map(|s| (s.id(), s)).collect();
    let dir = ctx.path(RENDER_DIR);
    std::fs::create_dir_all(&dir)?;
    let text = [("config_hash", ctx.hash.as_str())];
    let mut n = 0;
    for p in preds.iter().take(ctx.cfg.eval.render_maps) {
        let s = by_id
            .get(&p.id)
            .ok_or_else(|| CliError::Other(anyhow!("prediction {} has no sample in {DATASET}", p.id)))?;
        for (k, &d) in p.directions.iter().enumerate() {
            let deg = DIRECTIONS_DEG[d as usize];
            let truth = &s.directions[d as usize];
            let err = eval::error_map(&p.maps[k], truth)?;
            let files = [
                (format!("{}_truth_{deg}.png", p.id), render::render_signal(&truth.values, &text)?),
                (format!("{}_pred_{deg}.png", p.id), render::render_signal(&p.maps[k].values, &text)?),
                (format!("{}_error_{deg}.png", p.id), render::render_error(&err.errors, &text)?),
            ];
            for (name, bytes) in files {
                render::write_png(&bytes, &dir.join(name))?;
                n += 1;
            }
        }
    }
    eprintln!("render: {n} images in {}", dir.display());
    Ok(())
}

pub fn all(ctx: &Ctx) -> Result<()> {
    gen(ctx)?;
    simulate(ctx)?;
    sample(ctx)?;
    split_stage(ctx)?;
    train_stage(ctx)?;
    predict_stage(ctx)?;
    eval_stage(ctx)?;
    render_stage(ctx)
}
