use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autopilot::BrandPreset;
use crate::delegate::{abstract_action, HighLevelAction};
use crate::rollout::{run_target, Scenario};
use crate::sim::{LaneChange, SimError, DT};

pub const CLIP_DURATION_S: f64 = 5.0;
pub const DEFAULT_CLIP_COUNT: usize = 8;
/// Earliest and latest position of the event inside a clip, seconds.
pub const EVENT_WINDOW_S: (f64, f64) = (1.0, 4.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClipError {
    #[error("seed pool yielded {found} usable lane-change events, {needed} required")]
    InsufficientEvents { found: usize, needed: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A five-second window of a target rollout containing one lane change.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioClip {
    pub clip_id: String,
    pub brand: String,
    /// Seed of the source rollout.
    pub seed: u64,
    pub start_tick: u64,
    pub duration_ticks: u64,
    pub start_t: f64,
    pub duration_s: f64,
    /// Event time relative to the clip start.
    pub t_gt: f64,
    pub direction: HighLevelAction,
}

impl ScenarioClip {
    pub fn event_tick(&self) -> u64 {
        self.start_tick + libm::round(self.t_gt / DT) as u64
    }
}

/// Cuts `n_clips` clips from target rollouts over `seed_pool`.
///
/// Seeds are visited in ascending order and each contributes at most its
/// first usable event. The event's offset inside the clip is drawn
/// uniformly from the 1..=4 s tick grid with a generator seeded by
/// `window_seed`.
pub fn make_clips(
    brand: &BrandPreset,
    seed_pool: &[u64],
    n_clips: usize,
    window_seed: u64,
    scenario: &Scenario,
) -> Result<Vec<ScenarioClip>, ClipError> {
    let clip_ticks = libm::round(CLIP_DURATION_S / DT) as u64;
    let min_off = libm::round(EVENT_WINDOW_S.0 / DT) as u64;
    let max_off = libm::round(EVENT_WINDOW_S.1 / DT) as u64;
    let total = scenario.ticks(DT);

    let mut seeds = seed_pool.to_vec();
    seeds.sort_unstable();
    seeds.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(window_seed);
    let mut clips = Vec::with_capacity(n_clips);
    for seed in seeds {
        if clips.len() == n_clips {
            break;
        }
        let mut events: Vec<(u64, LaneChange)> = Vec::new();
        run_target(seed, &brand.params, scenario, |ctx, _| {
            if ctx.decision.action.lane_change != LaneChange::None {
                events.push((ctx.world.tick(), ctx.decision.action.lane_change));
            }
        })?;
        let usable = events
            .iter()
            .find(|(tick, _)| *tick >= max_off && *tick + clip_ticks <= total + min_off);
        let Some(&(tick, dir)) = usable else { continue };
        let offset = rng.gen_range(min_off..=max_off);
        let start = tick - offset;
        let in_window = events
            .iter()
            .filter(|(t, _)| *t >= start && *t < start + clip_ticks)
            .count();
        if in_window != 1 {
            continue;
        }
        clips.push(ScenarioClip {
            clip_id: format!("clip-{:02}", clips.len()),
            brand: brand.name.clone(),
            seed,
            start_tick: start,
            duration_ticks: clip_ticks,
            start_t: start as f64 * DT,
            duration_s: CLIP_DURATION_S,
            t_gt: offset as f64 * DT,
            direction: abstract_action(dir),
        });
    }
    if clips.len() < n_clips {
        return Err(ClipError::InsufficientEvents {
            found: clips.len(),
            needed: n_clips,
        });
    }
    Ok(clips)
}

/// Lowercase hex SHA-256 over the clip list's identifying fields.
pub fn clip_manifest_hash(clips: &[ScenarioClip]) -> String {
    let mut h = Sha256::new();
    for c in clips {
        h.update((c.clip_id.len() as u64).to_le_bytes());
        h.update(c.clip_id.as_bytes());
        h.update((c.brand.len() as u64).to_le_bytes());
        h.update(c.brand.as_bytes());
        h.update(c.seed.to_le_bytes());
        h.update(c.start_tick.to_le_bytes());
        h.update(c.duration_ticks.to_le_bytes());
        h.update(c.t_gt.to_bits().to_le_bytes());
        h.update([c.direction as u8]);
    }
    crate::hex(&h.finalize())
}
