use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::clips::{clip_manifest_hash, ScenarioClip, CLIP_DURATION_S};
use super::stats::{hedges_g, mann_whitney_u, UMethod};

/// How weighted errors are aggregated; recorded in every report.
pub const WEIGHTED_ERROR_NORMALIZATION: &str = "per-subject confidence-weighted mean, then unweighted mean across subjects";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Group {
    Comparison,
    Treatment,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Comparison => "comparison",
            Group::Treatment => "treatment",
        }
    }
}

/// One timing prediction for one clip.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictionRecord {
    pub subject_id: String,
    pub clip_id: String,
    pub t_pred: f64,
    pub confidence: u8,
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggressivenessRating {
    pub subject_id: String,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StudyError {
    #[error("records reference unknown clips: {0:?}")]
    UnknownClips(Vec<(String, String)>),
    #[error("subject {subject:?} has more than one record for clip {clip:?}")]
    DuplicateRecord { subject: String, clip: String },
    #[error("invalid record for subject {subject:?}, clip {clip:?}: {reason}")]
    InvalidRecord {
        subject: String,
        clip: String,
        reason: &'static str,
    },
    #[error("subject {0:?} appears in both groups")]
    MixedGroups(String),
    #[error("rating {rating} for subject {subject:?} outside 1..=10")]
    RatingRange { subject: String, rating: u8 },
    #[error("rating for subject {0:?} who has no prediction records")]
    UnratedSubject(String),
    #[error("no records given")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimingError {
    pub unweighted_s: f64,
    /// Absent when every confidence is zero.
    pub weighted_s: Option<f64>,
}

fn validate_record(r: &PredictionRecord) -> Result<(), StudyError> {
    let reason = if !(r.t_pred.is_finite() && (0.0..=CLIP_DURATION_S).contains(&r.t_pred)) {
        "t_pred outside [0, 5] s"
    } else if r.confidence > 10 {
        "confidence outside 0..=10"
    } else {
        return Ok(());
    };
    Err(StudyError::InvalidRecord {
        subject: r.subject_id.clone(),
        clip: r.clip_id.clone(),
        reason,
    })
}

/// Unweighted and confidence-weighted mean absolute timing error for one
/// subject's records.
pub fn timing_error(records: &[&PredictionRecord], clips: &[ScenarioClip]) -> Result<TimingError, StudyError> {
    if records.is_empty() {
        return Err(StudyError::Empty);
    }
    let mut unknown = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    let mut abs_sum = 0.0;
    let mut weighted_sum = 0.0;
    let mut conf_sum = 0.0;
    for r in records {
        validate_record(r)?;
        let Some(clip) = clips.iter().find(|c| c.clip_id == r.clip_id) else {
            unknown.push((r.subject_id.clone(), r.clip_id.clone()));
            continue;
        };
        if seen.contains(&r.clip_id.as_str()) {
            return Err(StudyError::DuplicateRecord {
                subject: r.subject_id.clone(),
                clip: r.clip_id.clone(),
            });
        }
        seen.push(&r.clip_id);
        let err = libm::fabs(r.t_pred - clip.t_gt);
        let c = r.confidence as f64;
        abs_sum += err;
        weighted_sum += c * err;
        conf_sum += c;
    }
    if !unknown.is_empty() {
        return Err(StudyError::UnknownClips(unknown));
    }
    Ok(TimingError {
        unweighted_s: abs_sum / records.len() as f64,
        weighted_s: (conf_sum > 0.0).then(|| weighted_sum / conf_sum),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubjectSummary {
    pub subject_id: String,
    pub n_records: usize,
    pub unweighted_error_s: f64,
    pub weighted_error_s: Option<f64>,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupSummary {
    pub group: Group,
    pub n_subjects: usize,
    pub unweighted_error_s: f64,
    pub weighted_error_s: Option<f64>,
    pub mean_confidence: f64,
    /// Counts of aggressiveness ratings 1..=10.
    pub rating_histogram: [u32; 10],
    pub subjects: Vec<SubjectSummary>,
}

/// Treatment-versus-comparison statistics for one metric.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BetweenGroups {
    pub metric: String,
    pub n_treatment: usize,
    pub n_comparison: usize,
    /// Hedges's g_s of treatment minus comparison.
    pub hedges_g: Option<f64>,
    pub hedges_g_note: Option<String>,
    pub u_statistic: f64,
    /// U counting treatment values below comparison values.
    pub u_treatment: f64,
    pub p_value: f64,
    pub method: UMethod,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyReport {
    pub clip_manifest_hash: String,
    pub n_clips: usize,
    pub weighted_error_normalization: String,
    pub groups: Vec<GroupSummary>,
    pub unweighted_error: Option<BetweenGroups>,
    pub weighted_error: Option<BetweenGroups>,
    pub notes: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn between(metric: &str, treatment: &[f64], comparison: &[f64], notes: &mut Vec<String>) -> Option<BetweenGroups> {
    if treatment.is_empty() || comparison.is_empty() {
        notes.push(format!("{metric}: a group has no values; between-group statistics omitted"));
        return None;
    }
    let mw = mann_whitney_u(treatment, comparison).ok()?;
    let (hedges_g, hedges_g_note) = match hedges_g(treatment, comparison) {
        Ok(g) => (Some(g), None),
        Err(e) => (None, Some(format!("{e}"))),
    };
    Some(BetweenGroups {
        metric: String::from(metric),
        n_treatment: treatment.len(),
        n_comparison: comparison.len(),
        hedges_g,
        hedges_g_note,
        u_statistic: mw.u,
        u_treatment: mw.u_a,
        p_value: mw.p_value,
        method: mw.method,
    })
}

/// Aggregates prediction records into per-subject, per-group and
/// between-group results.
pub fn build_report(
    records: &[PredictionRecord],
    ratings: &[AggressivenessRating],
    clips: &[ScenarioClip],
) -> Result<StudyReport, StudyError> {
    if records.is_empty() {
        return Err(StudyError::Empty);
    }
    let unknown: Vec<(String, String)> = records
        .iter()
        .filter(|r| !clips.iter().any(|c| c.clip_id == r.clip_id))
        .map(|r| (r.subject_id.clone(), r.clip_id.clone()))
        .collect();
    if !unknown.is_empty() {
        return Err(StudyError::UnknownClips(unknown));
    }

    let mut by_subject: BTreeMap<&str, (Group, Vec<&PredictionRecord>)> = BTreeMap::new();
    for r in records {
        let entry = by_subject.entry(&r.subject_id).or_insert((r.group, Vec::new()));
        if entry.0 != r.group {
            return Err(StudyError::MixedGroups(r.subject_id.clone()));
        }
        entry.1.push(r);
    }

    let mut histograms: BTreeMap<Group, [u32; 10]> = BTreeMap::new();
    for rating in ratings {
        if !(1..=10).contains(&rating.rating) {
            return Err(StudyError::RatingRange {
                subject: rating.subject_id.clone(),
                rating: rating.rating,
            });
        }
        let Some((group, _)) = by_subject.get(rating.subject_id.as_str()) else {
            return Err(StudyError::UnratedSubject(rating.subject_id.clone()));
        };
        histograms.entry(*group).or_insert([0; 10])[rating.rating as usize - 1] += 1;
    }

    let mut notes = Vec::new();
    let mut groups = Vec::new();
    for group in [Group::Comparison, Group::Treatment] {
        let mut subjects = Vec::new();
        for (id, (g, recs)) in &by_subject {
            if *g != group {
                continue;
            }
            let err = timing_error(recs, clips)?;
            if err.weighted_s.is_none() {
                notes.push(format!("subject {id}: all confidences are zero, weighted error absent"));
            }
            let confs: Vec<f64> = recs.iter().map(|r| r.confidence as f64).collect();
            subjects.push(SubjectSummary {
                subject_id: String::from(*id),
                n_records: recs.len(),
                unweighted_error_s: err.unweighted_s,
                weighted_error_s: err.weighted_s,
                mean_confidence: mean(&confs),
            });
        }
        if subjects.is_empty() {
            continue;
        }
        let unweighted: Vec<f64> = subjects.iter().map(|s| s.unweighted_error_s).collect();
        let weighted: Vec<f64> = subjects.iter().filter_map(|s| s.weighted_error_s).collect();
        let confs: Vec<f64> = subjects.iter().map(|s| s.mean_confidence).collect();
        groups.push(GroupSummary {
            group,
            n_subjects: subjects.len(),
            unweighted_error_s: mean(&unweighted),
            weighted_error_s: (!weighted.is_empty()).then(|| mean(&weighted)),
            mean_confidence: mean(&confs),
            rating_histogram: histograms.get(&group).copied().unwrap_or([0; 10]),
            subjects,
        });
    }

    let find = |g: Group| groups.iter().find(|s| s.group == g);
    let (unweighted_error, weighted_error) = match (find(Group::Treatment), find(Group::Comparison)) {
        (Some(t), Some(c)) => {
            let uw = |s: &GroupSummary| s.subjects.iter().map(|x| x.unweighted_error_s).collect::<Vec<_>>();
            let w = |s: &GroupSummary| s.subjects.iter().filter_map(|x| x.weighted_error_s).collect::<Vec<_>>();
            (
                between("unweighted_error", &uw(t), &uw(c), &mut notes),
                between("weighted_error", &w(t), &w(c), &mut notes),
            )
        }
        _ => {
            notes.push(String::from("only one group present; between-group statistics omitted"));
            (None, None)
        }
    };

    Ok(StudyReport {
        clip_manifest_hash: clip_manifest_hash(clips),
        n_clips: clips.len(),
        weighted_error_normalization: String::from(WEIGHTED_ERROR_NORMALIZATION),
        groups,
        unweighted_error,
        weighted_error,
        notes,
    })
}

fn opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.4}"),
        None => String::from("n/a"),
    }
}

/// Markdown rendering with a fixed section order.
pub fn render_markdown(report: &StudyReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Study report\n");
    let _ = writeln!(md, "## Clips\n");
    let _ = writeln!(md, "- clips: {}", report.n_clips);
    let _ = writeln!(md, "- manifest hash: `{}`", report.clip_manifest_hash);
    let _ = writeln!(md, "- weighted error: {}\n", report.weighted_error_normalization);

    let _ = writeln!(md, "## Groups\n");
    let _ = writeln!(md, "| group | subjects | unweighted error (s) | weighted error (s) | mean confidence |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for g in &report.groups {
        let _ = writeln!(
            md,
            "| {} | {} | {:.4} | {} | {:.2} |",
            g.group.as_str(),
            g.n_subjects,
            g.unweighted_error_s,
            opt(g.weighted_error_s),
            g.mean_confidence
        );
    }

    let _ = writeln!(md, "\n## Subjects\n");
    let _ = writeln!(md, "| subject | group | records | unweighted error (s) | weighted error (s) | mean confidence |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for g in &report.groups {
        for s in &g.subjects {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.4} | {} | {:.2} |",
                s.subject_id,
                g.group.as_str(),
                s.n_records,
                s.unweighted_error_s,
                opt(s.weighted_error_s),
                s.mean_confidence
            );
        }
    }

    let _ = writeln!(md, "\n## Between groups\n");
    let rows: Vec<&BetweenGroups> = report.unweighted_error.iter().chain(&report.weighted_error).collect();
    if rows.is_empty() {
        let _ = writeln!(md, "Not computed.");
    } else {
        let _ = writeln!(md, "| metric | n (treatment/comparison) | Hedges g_s | U | p | method |");
        let _ = writeln!(md, "|---|---|---|---|---|---|");
        for b in rows {
            let method = match b.method {
                UMethod::Exact => "exact",
                UMethod::NormalApprox => "normal approx.",
            };
            let _ = writeln!(
                md,
                "| {} | {}/{} | {} | {} | {:.4} | {} |",
                b.metric,
                b.n_treatment,
                b.n_comparison,
                opt(b.hedges_g),
                b.u_statistic,
                b.p_value,
                method
            );
        }
    }

    let _ = writeln!(md, "\n## Aggressiveness ratings\n");
    let _ = writeln!(md, "| group | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|---|---|");
    for g in &report.groups {
        let _ = write!(md, "| {} |", g.group.as_str());
        for c in g.rating_histogram {
            let _ = write!(md, " {c} |");
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "\n## Notes\n");
    if report.notes.is_empty() {
        let _ = writeln!(md, "None.");
    }
    for n in &report.notes {
        let _ = writeln!(md, "- {n}");
    }
    md
}
