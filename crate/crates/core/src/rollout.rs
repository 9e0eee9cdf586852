//! Target-controlled rollouts shared by dataset collection, fidelity and clips.

use crate::autopilot::{act, AutopilotParams, Decision, EgoView};
use crate::sim::{init_world, SimError, StepReport, TrackLoop, WorldState};

/// World configuration for a batch of rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub track: TrackLoop,
    pub traffic_count: usize,
    pub duration_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            track: TrackLoop::default(),
            traffic_count: 12,
            duration_s: 120.0,
        }
    }
}

impl Scenario {
    pub fn with_duration(duration_s: f64) -> Self {
        Scenario {
            duration_s,
            ..Default::default()
        }
    }

    pub fn ticks(&self, dt: f64) -> u64 {
        libm::round(self.duration_s / dt) as u64
    }
}

/// One tick of a rollout, observed before the step is applied.
pub struct TickContext<'a> {
    pub world: &'a WorldState,
    pub view: &'a EgoView,
    pub decision: &'a Decision,
}

/// Runs the target autopilot for the scenario duration, calling `on_tick`
/// with the pre-step world and the step outcome for every tick.
pub fn run_target<F>(seed: u64, params: &AutopilotParams, scenario: &Scenario, mut on_tick: F) -> Result<WorldState, SimError>
where
    F: FnMut(&TickContext<'_>, &StepReport),
{
    let mut world = init_world(seed, scenario.traffic_count, scenario.track)?;
    let ticks = scenario.ticks(world.dt);
    for _ in 0..ticks {
        let view = EgoView::from_world(&world, params);
        let decision = act(&view, params);
        let before = world.clone();
        let report = world.step(decision.action);
        on_tick(
            &TickContext {
                world: &before,
                view: &view,
                decision: &decision,
            },
            &report,
        );
    }
    Ok(world)
}
