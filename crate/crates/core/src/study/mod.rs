//! Measurement pipeline for timing-prediction studies: clip extraction,
//! timing error, effect size, rank test and report rendering.

mod clips;
mod report;
pub mod stats;

pub use clips::{
    clip_manifest_hash, make_clips, ClipError, ScenarioClip, CLIP_DURATION_S, DEFAULT_CLIP_COUNT, EVENT_WINDOW_S,
};
pub use report::{
    build_report, render_markdown, timing_error, AggressivenessRating, BetweenGroups, Group, GroupSummary,
    PredictionRecord, StudyError, StudyReport, SubjectSummary, TimingError, WEIGHTED_ERROR_NORMALIZATION,
};
pub use stats::{hedges_g, mann_whitney_u, mann_whitney_u_with, MannWhitney, StatsError, UMethod};
