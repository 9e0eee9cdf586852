use alloc::vec::Vec;

use super::{abstract_action, Delegate, HighLevelAction};
use crate::autopilot::BrandPreset;
use crate::rollout::{run_target, Scenario};
use crate::sim::SimError;
use crate::study::ScenarioClip;

/// Predicted and true events further apart than this never match.
pub const EVENT_TOLERANCE_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FidelityError {
    #[error("evaluation set is empty")]
    Empty,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimedEvent {
    pub t: f64,
    pub action: HighLevelAction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventMatch {
    pub predicted: usize,
    pub truth: usize,
    pub abs_error_s: f64,
}

/// Greedy nearest-first matching of same-class events within `tolerance_s`.
pub fn match_events(predicted: &[TimedEvent], truth: &[TimedEvent], tolerance_s: f64) -> Vec<EventMatch> {
    let mut candidates = Vec::new();
    for (pi, p) in predicted.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            let err = libm::fabs(p.t - t.t);
            if p.action == t.action && err <= tolerance_s + 1e-9 {
                candidates.push(EventMatch {
                    predicted: pi,
                    truth: ti,
                    abs_error_s: err,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.abs_error_s
            .total_cmp(&b.abs_error_s)
            .then(a.truth.cmp(&b.truth))
            .then(a.predicted.cmp(&b.predicted))
    });
    let mut used_p = alloc::vec![false; predicted.len()];
    let mut used_t = alloc::vec![false; truth.len()];
    let mut out = Vec::new();
    for c in candidates {
        if !used_p[c.predicted] && !used_t[c.truth] {
            used_p[c.predicted] = true;
            used_t[c.truth] = true;
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FidelityReport {
    pub frames: usize,
    pub agreeing_frames: usize,
    pub frame_agreement: f64,
    pub predicted_events: usize,
    pub truth_events: usize,
    pub matched_events: usize,
    /// 1.0 when nothing was predicted; see `no_predictions`.
    pub event_precision: f64,
    /// 1.0 when there was nothing to find; see `no_truth_events`.
    pub event_recall: f64,
    /// Mean absolute timing error over matched events, if any matched.
    pub event_timing_mae_s: Option<f64>,
    pub no_predictions: bool,
    pub no_truth_events: bool,
}

#[derive(Default)]
struct Tally {
    frames: usize,
    agree: usize,
    predicted: usize,
    truth: usize,
    matched: usize,
    abs_err_sum: f64,
}

impl Tally {
    fn finish(self) -> Result<FidelityReport, FidelityError> {
        if self.frames == 0 {
            return Err(FidelityError::Empty);
        }
        Ok(FidelityReport {
            frames: self.frames,
            agreeing_frames: self.agree,
            frame_agreement: self.agree as f64 / self.frames as f64,
            predicted_events: self.predicted,
            truth_events: self.truth,
            matched_events: self.matched,
            event_precision: if self.predicted == 0 {
                1.0
            } else {
                self.matched as f64 / self.predicted as f64
            },
            event_recall: if self.truth == 0 {
                1.0
            } else {
                self.matched as f64 / self.truth as f64
            },
            event_timing_mae_s: (self.matched > 0).then(|| self.abs_err_sum / self.matched as f64),
            no_predictions: self.predicted == 0,
            no_truth_events: self.truth == 0,
        })
    }
}

/// Scores one target rollout, counting only ticks in `[from, to)`.
///
/// Frames are the settled ticks. A predicted event is the first tick of a run
/// of one critical class; runs are broken by maneuvers, since those ticks are
/// not evaluated.
fn score_rollout<D: Delegate>(
    delegate: &D,
    brand: &BrandPreset,
    seed: u64,
    scenario: &Scenario,
    window: (u64, u64),
    tally: &mut Tally,
) -> Result<(), SimError> {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut prev: Option<(u64, HighLevelAction)> = None;
    run_target(seed, &brand.params, scenario, |ctx, _| {
        if ctx.view.mid_maneuver() {
            return;
        }
        let tick = ctx.world.tick();
        let label = abstract_action(ctx.decision.action.lane_change);
        let guess = delegate.predict(ctx.view);
        let rising = guess.is_critical()
            && match prev {
                Some((pt, pa)) => pt + 1 != tick || pa != guess,
                None => true,
            };
        prev = Some((tick, guess));
        if tick < window.0 || tick >= window.1 {
            return;
        }
        tally.frames += 1;
        if label == guess {
            tally.agree += 1;
        }
        if rising {
            predicted.push(TimedEvent { t: ctx.view.t, action: guess });
        }
        if label.is_critical() {
            truth.push(TimedEvent { t: ctx.view.t, action: label });
        }
    })?;
    let matches = match_events(&predicted, &truth, EVENT_TOLERANCE_S);
    tally.predicted += predicted.len();
    tally.truth += truth.len();
    tally.matched += matches.len();
    tally.abs_err_sum += matches.iter().map(|m| m.abs_error_s).sum::<f64>();
    Ok(())
}

/// How closely `delegate` tracks `brand` over whole held-out rollouts.
pub fn fidelity<D: Delegate>(
    delegate: &D,
    brand: &BrandPreset,
    held_out_seeds: &[u64],
    scenario: &Scenario,
) -> Result<FidelityReport, FidelityError> {
    let mut tally = Tally::default();
    for &seed in held_out_seeds {
        score_rollout(delegate, brand, seed, scenario, (0, u64::MAX), &mut tally)?;
    }
    tally.finish()
}

/// Fidelity restricted to the windows of `clips`.
pub fn fidelity_on_clips<D: Delegate>(
    delegate: &D,
    brand: &BrandPreset,
    clips: &[ScenarioClip],
    scenario: &Scenario,
) -> Result<FidelityReport, FidelityError> {
    let mut tally = Tally::default();
    for clip in clips {
        let window = (clip.start_tick, clip.start_tick + clip.duration_ticks);
        score_rollout(delegate, brand, clip.seed, scenario, window, &mut tally)?;
    }
    tally.finish()
}
