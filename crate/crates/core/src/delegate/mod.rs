//! The delegate pipeline: abstract target behavior into high-level labels,
//! learn a clone, and turn its predictions into notifications.
//!
//! Nothing in this module can reach a [`WorldState`](crate::sim::WorldState)
//! mutably; delegates only ever see an [`EgoView`].

mod fidelity;
mod model;
mod notify;

pub use fidelity::{
    fidelity, fidelity_on_clips, match_events, EventMatch, FidelityError, FidelityReport, TimedEvent, EVENT_TOLERANCE_S,
};
pub use model::{
    class_weights, softmax, train_delegate, weighted_objective, DelegateModel, Gradient, LearnedDelegate, ModelError,
    TrainConfig, TrainOutcome, TrainingMeta, FEATURE_SPEC_VERSION,
};
pub use notify::{notify, Notification, Notifier, NotifyError, SUSTAIN_TICKS};

use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::autopilot::{trigger_for, AutopilotParams, BrandPreset, EgoView};
use crate::rollout::{run_target, Scenario};
use crate::sim::{LaneChange, SimError};

/// The explainable action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HighLevelAction {
    #[default]
    KeepLane = 0,
    ChangeLeft = 1,
    ChangeRight = 2,
}

impl HighLevelAction {
    pub const ALL: [HighLevelAction; 3] = [
        HighLevelAction::KeepLane,
        HighLevelAction::ChangeLeft,
        HighLevelAction::ChangeRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_critical(self) -> bool {
        self != HighLevelAction::KeepLane
    }
}

/// Remaps a low-level maneuver request to the explainable action space.
pub fn abstract_action(lane_change: LaneChange) -> HighLevelAction {
    match lane_change {
        LaneChange::None => HighLevelAction::KeepLane,
        LaneChange::Left => HighLevelAction::ChangeLeft,
        LaneChange::Right => HighLevelAction::ChangeRight,
    }
}

pub const FEATURE_COUNT: usize = 7;

/// Feature vector consumed by learned delegates.
///
/// Layout: `v/30`, `lead_gap_current/100`, `(lead_speed_current - v)/10`,
/// `lead_gap_other/100`, `rear_gap_other/100`, `lane`, `cooldown_remaining/5`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Observation(pub [f64; FEATURE_COUNT]);

impl Observation {
    pub fn from_view(view: &EgoView) -> Self {
        let cur = view.current();
        let other = view.other();
        Observation([
            view.v / 30.0,
            cur.lead_gap / 100.0,
            (cur.lead_speed - view.v) / 10.0,
            other.lead_gap / 100.0,
            other.rear_gap / 100.0,
            view.lane.index() as f64,
            view.cooldown_remaining_s / 5.0,
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledFrame {
    pub obs: Observation,
    pub label: HighLevelAction,
    pub t: f64,
    pub rollout_id: u64,
}

/// Anything that can preview the target's next high-level action.
pub trait Delegate {
    fn predict(&self, view: &EgoView) -> HighLevelAction;
}

/// Delegate defined by the target's own trigger rules.
#[derive(Debug, Clone)]
pub struct RuleDelegate {
    params: AutopilotParams,
}

impl RuleDelegate {
    pub fn new(params: AutopilotParams) -> Self {
        RuleDelegate { params }
    }
}

impl Delegate for RuleDelegate {
    fn predict(&self, view: &EgoView) -> HighLevelAction {
        abstract_action(trigger_for(view, &self.params))
    }
}

/// Always predicts `KeepLane`.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeepLaneDelegate;

impl Delegate for KeepLaneDelegate {
    fn predict(&self, _view: &EgoView) -> HighLevelAction {
        HighLevelAction::KeepLane
    }
}

impl<D: Delegate + ?Sized> Delegate for &D {
    fn predict(&self, view: &EgoView) -> HighLevelAction {
        (**self).predict(view)
    }
}

/// Labeled frames from target-controlled rollouts, one per settled tick.
pub fn collect_dataset(brand: &BrandPreset, seeds: &[u64], scenario: &Scenario) -> Result<Vec<LabeledFrame>, SimError> {
    let mut frames = Vec::new();
    for &seed in seeds {
        run_target(seed, &brand.params, scenario, |ctx, _| {
            if ctx.view.mid_maneuver() {
                return;
            }
            frames.push(LabeledFrame {
                obs: Observation::from_view(ctx.view),
                label: abstract_action(ctx.decision.action.lane_change),
                t: ctx.view.t,
                rollout_id: seed,
            });
        })?;
    }
    Ok(frames)
}

/// Lowercase hex SHA-256 of the dataset's exact bit content.
pub fn dataset_hash(frames: &[LabeledFrame]) -> String {
    let mut h = Sha256::new();
    for f in frames {
        for x in f.obs.0 {
            h.update(x.to_bits().to_le_bytes());
        }
        h.update([f.label as u8]);
        h.update(f.t.to_bits().to_le_bytes());
        h.update(f.rollout_id.to_le_bytes());
    }
    crate::hex(&h.finalize())
}
