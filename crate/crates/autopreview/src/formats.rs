//! On-disk formats for datasets, models, brand registries, clips, prediction
//! records and reports.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use autopreview_core::autopilot::{AutopilotParams, BrandPreset, BrandRegistry, ParamsError};
use autopreview_core::delegate::{
    DelegateModel, HighLevelAction, LabeledFrame, ModelError, Observation, TrainingMeta, FEATURE_COUNT,
};
use autopreview_core::rollout::Scenario;
use autopreview_core::study::{
    clip_manifest_hash, render_markdown, AggressivenessRating, Group, PredictionRecord, ScenarioClip, StudyReport,
};
use serde::{Deserialize, Serialize};

use crate::atomic;
use crate::log::{read_log, LogHeader, LogWriter};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

impl FormatError {
    fn invalid(path: &Path, msg: impl ToString) -> Self {
        FormatError::Invalid {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

// ---- dataset -------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    f1: f64,
    f2: f64,
    f3: f64,
    f4: f64,
    f5: f64,
    f6: f64,
    f7: f64,
    label: u8,
    t: f64,
    rollout_id: u64,
}

pub fn write_dataset(path: &Path, frames: &[LabeledFrame]) -> Result<(), FormatError> {
    atomic::write_file(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for f in frames {
            let x = f.obs.0;
            csv.serialize(DatasetRow {
                f1: x[0],
                f2: x[1],
                f3: x[2],
                f4: x[3],
                f5: x[4],
                f6: x[5],
                f7: x[6],
                label: f.label as u8,
                t: f.t,
                rollout_id: f.rollout_id,
            })
            .map_err(io::Error::other)?;
        }
        csv.flush()
    })
    .map_err(|e| FormatError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledFrame>, FormatError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| FormatError::invalid(path, e))?;
    let expected = ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "label", "t", "rollout_id"];
    let headers = rdr.headers().map_err(|e| FormatError::invalid(path, e))?;
    if headers.iter().ne(expected) {
        return Err(FormatError::invalid(path, format!("header must be {}", expected.join(","))));
    }
    let mut frames = Vec::new();
    for (i, row) in rdr.deserialize::<DatasetRow>().enumerate() {
        let r = row.map_err(|e| FormatError::invalid(path, e))?;
        let label = HighLevelAction::from_index(r.label as usize)
            .ok_or_else(|| FormatError::invalid(path, format!("row {}: label {} is not 0, 1 or 2", i + 1, r.label)))?;
        let obs = Observation([r.f1, r.f2, r.f3, r.f4, r.f5, r.f6, r.f7]);
        if !obs.is_finite() {
            return Err(FormatError::invalid(path, format!("row {}: non-finite feature", i + 1)));
        }
        frames.push(LabeledFrame {
            obs,
            label,
            t: r.t,
            rollout_id: r.rollout_id,
        });
    }
    Ok(frames)
}

// ---- model ---------------------------------------------------------------

/// Loose mirror of [`DelegateModel`] so dimension errors get a clear message.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    feature_spec_version: u32,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    training_meta: TrainingMeta,
}

pub fn model_to_json(model: &DelegateModel) -> String {
    serde_json::to_string_pretty(model).expect("models always serialize")
}

pub fn parse_model(text: &str) -> Result<DelegateModel, String> {
    let raw: ModelFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if raw.weights.len() != 3 || raw.weights.iter().any(|r| r.len() != FEATURE_COUNT) {
        let shape: Vec<usize> = raw.weights.iter().map(Vec::len).collect();
        return Err(format!("weights must be 3x{FEATURE_COUNT}, found rows of lengths {shape:?}"));
    }
    if raw.bias.len() != 3 {
        return Err(format!("bias must have 3 entries, found {}", raw.bias.len()));
    }
    let mut weights = [[0.0; FEATURE_COUNT]; 3];
    for (dst, src) in weights.iter_mut().zip(&raw.weights) {
        dst.copy_from_slice(src);
    }
    let model = DelegateModel {
        feature_spec_version: raw.feature_spec_version,
        weights,
        bias: [raw.bias[0], raw.bias[1], raw.bias[2]],
        training_meta: raw.training_meta,
    };
    model.validate().map_err(|e: ModelError| e.to_string())?;
    Ok(model)
}

pub fn read_model(path: &Path) -> Result<DelegateModel, FormatError> {
    parse_model(&read_to_string(path)?).map_err(|e| FormatError::invalid(path, e))
}

pub fn write_model(path: &Path, model: &DelegateModel) -> Result<(), FormatError> {
    atomic::write_bytes(path, model_to_json(model).as_bytes()).map_err(|e| FormatError::io(path, e))
}

// ---- brands --------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    v_des: Option<f64>,
    horizon: Option<u32>,
    accel_candidates: Option<Vec<f64>>,
    w_speed: Option<f64>,
    w_gap: Option<f64>,
    d_safe: Option<f64>,
    cooldown_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BrandEntry {
    name: String,
    aggressiveness: f64,
    #[serde(default)]
    overrides: Overrides,
}

fn brand_from_entry(e: BrandEntry) -> Result<BrandPreset, ParamsError> {
    let mut p = AutopilotParams::with_aggressiveness(e.aggressiveness)?;
    let o = e.overrides;
    p.v_des = o.v_des.unwrap_or(p.v_des);
    p.horizon = o.horizon.unwrap_or(p.horizon);
    p.accel_candidates = o.accel_candidates.unwrap_or(p.accel_candidates);
    p.w_speed = o.w_speed.unwrap_or(p.w_speed);
    p.w_gap = o.w_gap.unwrap_or(p.w_gap);
    p.d_safe = o.d_safe.unwrap_or(p.d_safe);
    p.cooldown_s = o.cooldown_s.unwrap_or(p.cooldown_s);
    p.validate()?;
    Ok(BrandPreset { name: e.name, params: p })
}

pub fn parse_brands(text: &str) -> Result<BrandRegistry, String> {
    let entries: Vec<BrandEntry> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut reg = BrandRegistry::new(Vec::new()).map_err(|e| e.to_string())?;
    for e in entries {
        let name = e.name.clone();
        let brand = brand_from_entry(e).map_err(|err| format!("brand {name}: {err}"))?;
        reg.insert(brand).map_err(|e| e.to_string())?;
    }
    Ok(reg)
}

/// The registry in `path`, or the built-in BrandA/B/C presets.
pub fn load_brands(path: Option<&Path>) -> Result<BrandRegistry, FormatError> {
    match path {
        None => Ok(BrandRegistry::builtin()),
        Some(p) => parse_brands(&read_to_string(p)?).map_err(|e| FormatError::invalid(p, e)),
    }
}

// ---- prediction records and ratings -------------------------------------

pub fn parse_records(path: &Path) -> Result<Vec<PredictionRecord>, FormatError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| FormatError::invalid(path, e))?;
    let expected = ["subject_id", "clip_id", "t_pred", "confidence", "group"];
    let headers = rdr.headers().map_err(|e| FormatError::invalid(path, e))?;
    if headers.iter().ne(expected) {
        return Err(FormatError::invalid(path, format!("header must be {}", expected.join(","))));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| FormatError::invalid(path, format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn write_records(path: &Path, records: &[PredictionRecord]) -> Result<(), FormatError> {
    atomic::write_file(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        if records.is_empty() {
            csv.write_record(["subject_id", "clip_id", "t_pred", "confidence", "group"])?;
        }
        for r in records {
            csv.serialize(r).map_err(io::Error::other)?;
        }
        csv.flush()
    })
    .map_err(|e| FormatError::io(path, e))
}

pub fn parse_ratings(path: &Path) -> Result<Vec<AggressivenessRating>, FormatError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| FormatError::invalid(path, e))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| FormatError::invalid(path, format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn write_ratings(path: &Path, ratings: &[AggressivenessRating]) -> Result<(), FormatError> {
    atomic::write_file(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        if ratings.is_empty() {
            csv.write_record(["subject_id", "rating"])?;
        }
        for r in ratings {
            csv.serialize(r).map_err(io::Error::other)?;
        }
        csv.flush()
    })
    .map_err(|e| FormatError::io(path, e))
}

pub fn group_from_str(s: &str) -> Option<Group> {
    match s {
        "comparison" => Some(Group::Comparison),
        "treatment" => Some(Group::Treatment),
        _ => None,
    }
}

// ---- reports -------------------------------------------------------------

pub fn report_to_json(report: &StudyReport) -> String {
    serde_json::to_string_pretty(report).expect("reports always serialize")
}

/// Writes `<path>` as JSON and the markdown rendering next to it with an `.md` extension.
pub fn write_report(path: &Path, report: &StudyReport) -> Result<PathBuf, FormatError> {
    let md_path = path.with_extension("md");
    atomic::write_bytes(path, report_to_json(report).as_bytes()).map_err(|e| FormatError::io(path, e))?;
    atomic::write_bytes(&md_path, render_markdown(report).as_bytes()).map_err(|e| FormatError::io(&md_path, e))?;
    Ok(md_path)
}

// ---- clips ---------------------------------------------------------------

pub const CLIP_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub clip_manifest_hash: String,
    pub brand: String,
    pub window_seed: u64,
    pub scenario: Scenario,
    pub clips: Vec<ScenarioClip>,
}

pub fn slice_file_name(clip: &ScenarioClip) -> String {
    format!("{}.jsonl", clip.clip_id)
}

/// Writes the manifest plus one log slice per clip, cut from `logs` (one full
/// rollout log per clip, in clip order).
pub fn write_clips_dir(dir: &Path, manifest: &ClipManifest, logs: &[String]) -> Result<(), FormatError> {
    let is_clips_dir = |p: &Path| p.join(CLIP_MANIFEST).is_file();
    atomic::write_dir(dir, is_clips_dir, |staging| {
        for (clip, log) in manifest.clips.iter().zip(logs) {
            let parsed = read_log(log.as_bytes()).map_err(io::Error::other)?;
            let mut f = io::BufWriter::new(fs::File::create(staging.join(slice_file_name(clip)))?);
            let mut w = LogWriter::new(&mut f, &parsed.header)?;
            let (from, to) = (clip.start_tick, clip.start_tick + clip.duration_ticks);
            for (line, rec) in parsed.lines.iter().zip(&parsed.ticks) {
                if rec.tick >= from && rec.tick < to {
                    w.line(line)?;
                }
            }
            f.flush()?;
        }
        let json = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
        fs::write(staging.join(CLIP_MANIFEST), json)
    })
    .map_err(|e| FormatError::io(dir, e))
}

/// Reads a clip manifest and checks its hash against the listed clips.
pub fn load_clips_dir(dir: &Path) -> Result<ClipManifest, FormatError> {
    let path = dir.join(CLIP_MANIFEST);
    let m: ClipManifest = serde_json::from_str(&read_to_string(&path)?).map_err(|e| FormatError::invalid(&path, e))?;
    let actual = clip_manifest_hash(&m.clips);
    if actual != m.clip_manifest_hash {
        return Err(FormatError::invalid(
            &path,
            format!("manifest hash {} does not match clips ({actual})", m.clip_manifest_hash),
        ));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipCheck {
    pub clip_id: String,
    pub ticks: usize,
    pub events: usize,
    pub t_gt: f64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
}

/// Re-scans every slice: it must be a full, undamaged window holding exactly
/// one lane-change command, at the manifest's event time, 1 to 4 s in.
pub fn validate_clips_dir(dir: &Path) -> Result<Vec<ClipCheck>, FormatError> {
    let manifest = load_clips_dir(dir)?;
    let mut out = Vec::new();
    for clip in &manifest.clips {
        let path = dir.join(slice_file_name(clip));
        let text = read_to_string(&path)?;
        let log = read_log(text.as_bytes()).map_err(|e| FormatError::invalid(&path, e))?;
        let events: Vec<_> = log
            .ticks
            .iter()
            .filter(|r| r.ego_cmd.lane_change != autopreview_core::sim::LaneChange::None)
            .collect();
        let problem = if log.truncated_at.is_some() {
            Some("slice is damaged".to_string())
        } else if log.ticks.len() as u64 != clip.duration_ticks {
            Some(format!("slice has {} ticks, expected {}", log.ticks.len(), clip.duration_ticks))
        } else if log.ticks.first().map(|r| r.tick) != Some(clip.start_tick) {
            Some("slice does not start at the clip start".to_string())
        } else if events.len() != 1 {
            Some(format!("{} lane-change events, expected exactly one", events.len()))
        } else if events[0].tick != clip.event_tick() {
            Some(format!("event at tick {}, manifest says {}", events[0].tick, clip.event_tick()))
        } else if !(1.0..=4.0).contains(&clip.t_gt) {
            Some(format!("event at {} s, outside [1, 4] s", clip.t_gt))
        } else {
            None
        };
        out.push(ClipCheck {
            clip_id: clip.clip_id.clone(),
            ticks: log.ticks.len(),
            events: events.len(),
            t_gt: clip.t_gt,
            ok: problem.is_none(),
            problem,
        });
    }
    Ok(out)
}

/// Header of a clip slice; handy for showing what produced it.
pub fn slice_header(dir: &Path, clip: &ScenarioClip) -> Result<LogHeader, FormatError> {
    let path = dir.join(slice_file_name(clip));
    let text = read_to_string(&path)?;
    Ok(read_log(text.as_bytes()).map_err(|e| FormatError::invalid(&path, e))?.header)
}
