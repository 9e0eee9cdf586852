//! The target autopilot: receding-horizon longitudinal search plus an
//! engineered lane-change trigger, tuned by a single aggressiveness knob.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::sim::{GapReport, Lane, LaneChange, LaneGaps, LowLevelAction, WorldState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("aggressiveness must lie in [0, 1], got {0}")]
    Aggressiveness(f64),
    #[error("accel candidate list must be non-empty, finite and contain 0")]
    Candidates,
    #[error("lane-change trigger gap {trigger} must exceed the safe distance {d_safe}")]
    TriggerBelowSafeDistance { trigger: f64, d_safe: f64 },
    #[error("invalid parameter {name}: {value}")]
    Invalid { name: &'static str, value: f64 },
    #[error("duplicate brand name {0:?}")]
    DuplicateBrand(String),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AutopilotParams {
    pub aggressiveness: f64,
    pub v_des: f64,
    /// Planning horizon in ticks.
    pub horizon: u32,
    pub accel_candidates: Vec<f64>,
    pub w_speed: f64,
    pub w_gap: f64,
    pub d_safe: f64,
    /// Minimum time between finishing a lane change and starting the next.
    pub cooldown_s: f64,
}

impl Default for AutopilotParams {
    fn default() -> Self {
        AutopilotParams {
            aggressiveness: 0.5,
            v_des: 15.0,
            horizon: 10,
            accel_candidates: vec![-4.0, -2.0, -1.0, 0.0, 1.0, 2.0],
            w_speed: 1.0,
            w_gap: 50.0,
            d_safe: 8.0,
            cooldown_s: 5.0,
        }
    }
}

impl AutopilotParams {
    pub fn with_aggressiveness(aggressiveness: f64) -> Result<Self, ParamsError> {
        let p = AutopilotParams {
            aggressiveness,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(0.0..=1.0).contains(&self.aggressiveness) {
            return Err(ParamsError::Aggressiveness(self.aggressiveness));
        }
        if self.accel_candidates.is_empty()
            || !self.accel_candidates.iter().all(|a| a.is_finite())
            || !self.accel_candidates.contains(&0.0)
        {
            return Err(ParamsError::Candidates);
        }
        let positive = [
            ("v_des", self.v_des),
            ("w_speed", self.w_speed),
            ("w_gap", self.w_gap),
            ("d_safe", self.d_safe),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ParamsError::Invalid { name, value });
            }
        }
        if !(self.cooldown_s.is_finite() && self.cooldown_s >= 0.0) {
            return Err(ParamsError::Invalid {
                name: "cooldown_s",
                value: self.cooldown_s,
            });
        }
        if self.horizon == 0 {
            return Err(ParamsError::Invalid { name: "horizon", value: 0.0 });
        }
        if self.trigger_gap() <= self.d_safe {
            return Err(ParamsError::TriggerBelowSafeDistance {
                trigger: self.trigger_gap(),
                d_safe: self.d_safe,
            });
        }
        Ok(())
    }

    /// Lead gap below which the current lane counts as impeded. Grows with
    /// aggressiveness, so aggressive presets pull out earlier.
    pub fn trigger_gap(&self) -> f64 {
        12.0 + self.aggressiveness * 28.0
    }

    /// Lead gap required in the destination lane.
    pub fn front_gap(&self) -> f64 {
        8.0 + (1.0 - self.aggressiveness) * 12.0
    }

    /// Rear gap required in the destination lane.
    pub fn rear_gap(&self) -> f64 {
        6.0 + (1.0 - self.aggressiveness) * 10.0
    }

    pub fn cooldown_ticks(&self, dt: f64) -> u64 {
        libm::round(self.cooldown_s / dt) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BrandPreset {
    pub name: String,
    pub params: AutopilotParams,
}

impl BrandPreset {
    pub fn new(name: impl Into<String>, aggressiveness: f64) -> Result<Self, ParamsError> {
        Ok(BrandPreset {
            name: name.into(),
            params: AutopilotParams::with_aggressiveness(aggressiveness)?,
        })
    }
}

/// Brand presets with unique names, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BrandRegistry {
    brands: Vec<BrandPreset>,
}

impl BrandRegistry {
    pub fn new(brands: Vec<BrandPreset>) -> Result<Self, ParamsError> {
        let mut reg = BrandRegistry::default();
        for b in brands {
            reg.insert(b)?;
        }
        Ok(reg)
    }

    /// BrandA (0.8), BrandB (0.5), BrandC (0.2).
    pub fn builtin() -> Self {
        let brands = [("BrandA", 0.8), ("BrandB", 0.5), ("BrandC", 0.2)]
            .into_iter()
            .map(|(n, a)| BrandPreset::new(n, a).expect("builtin presets are valid"))
            .collect();
        BrandRegistry { brands }
    }

    pub fn insert(&mut self, brand: BrandPreset) -> Result<(), ParamsError> {
        if self.get(&brand.name).is_some() {
            return Err(ParamsError::DuplicateBrand(brand.name));
        }
        brand.params.validate()?;
        self.brands.push(brand);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BrandPreset> {
        self.brands.iter().find(|b| b.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BrandPreset> {
        self.brands.iter()
    }

    pub fn len(&self) -> usize {
        self.brands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.brands.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalPlan {
    pub accel: f64,
    pub cost: f64,
    /// Every candidate collided within the horizon; `accel` is maximum braking.
    pub emergency: bool,
}

/// Cost of holding `accel` for the whole horizon against a constant-speed lead.
fn rollout_cost(gaps: &GapReport, v: f64, accel: f64, params: &AutopilotParams, dt: f64) -> f64 {
    let mut cost = 0.0;
    let mut speed = v;
    let mut gap = gaps.lead_gap;
    for _ in 0..params.horizon {
        let a = if accel < -speed / dt { -speed / dt } else { accel };
        let disp = speed * dt + 0.5 * a * dt * dt;
        speed = f64::max(0.0, speed + a * dt);
        gap += gaps.lead_speed * dt - disp;
        if gap <= 0.0 {
            return f64::INFINITY;
        }
        let dv = speed - params.v_des;
        let short = f64::max(0.0, params.d_safe - gap);
        cost += params.w_speed * dv * dv + params.w_gap * short * short;
    }
    cost
}

/// Exhaustive receding-horizon search over the candidate accelerations.
///
/// Ties go to the smaller |a|, then to the more negative a.
pub fn plan_longitudinal(gaps: &GapReport, v: f64, params: &AutopilotParams, dt: f64) -> LongitudinalPlan {
    let mut best: Option<(f64, f64)> = None;
    for &a in &params.accel_candidates {
        let c = rollout_cost(gaps, v, a, params, dt);
        if !c.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((ba, bc)) => {
                c < bc || (c == bc && (libm::fabs(a) < libm::fabs(ba) || (libm::fabs(a) == libm::fabs(ba) && a < ba)))
            }
        };
        if better {
            best = Some((a, c));
        }
    }
    match best {
        Some((accel, cost)) => LongitudinalPlan {
            accel,
            cost,
            emergency: false,
        },
        None => {
            let brake = params.accel_candidates.iter().copied().fold(f64::INFINITY, f64::min);
            LongitudinalPlan {
                accel: brake,
                cost: f64::INFINITY,
                emergency: true,
            }
        }
    }
}

/// Fires toward the other lane when the current lane is impeded by a slow
/// lead, the destination has room front and back, and the cooldown is over.
pub fn lane_change_trigger(
    current: &GapReport,
    other: &GapReport,
    lane: Lane,
    cooldown_remaining_s: f64,
    params: &AutopilotParams,
) -> LaneChange {
    let fires = cooldown_remaining_s == 0.0
        && current.lead_gap < params.trigger_gap()
        && current.lead_speed < params.v_des - 1.0
        && other.lead_gap > params.front_gap()
        && other.rear_gap > params.rear_gap();
    if fires {
        LaneChange::toward_other(lane)
    } else {
        LaneChange::None
    }
}

/// Everything the autopilot sees at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoView {
    pub t: f64,
    pub dt: f64,
    pub gaps: LaneGaps,
    pub v: f64,
    pub lane: Lane,
    pub target_lane: Lane,
    pub cooldown_remaining_s: f64,
}

impl EgoView {
    /// Ego's view of `world`, with cooldown measured against `params`.
    pub fn from_world(world: &WorldState, params: &AutopilotParams) -> Self {
        let cooldown_ticks = params.cooldown_ticks(world.dt);
        let remaining = match world.ticks_since_lane_change() {
            None => 0,
            Some(n) => cooldown_ticks.saturating_sub(n),
        };
        EgoView {
            t: world.t(),
            dt: world.dt,
            gaps: world.ego_gaps(),
            v: world.ego.v,
            lane: world.ego.lane,
            target_lane: world.ego.target_lane,
            cooldown_remaining_s: remaining as f64 * world.dt,
        }
    }

    pub fn mid_maneuver(&self) -> bool {
        self.lane != self.target_lane
    }

    pub fn current(&self) -> &GapReport {
        self.gaps.lane(self.lane)
    }

    pub fn other(&self) -> &GapReport {
        self.gaps.lane(self.lane.other())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: LowLevelAction,
    pub emergency: bool,
}

/// The trigger's verdict for a view; always `None` mid-maneuver.
pub fn trigger_for(view: &EgoView, params: &AutopilotParams) -> LaneChange {
    if view.mid_maneuver() {
        LaneChange::None
    } else {
        lane_change_trigger(view.current(), view.other(), view.lane, view.cooldown_remaining_s, params)
    }
}

/// One tick of the target autopilot.
pub fn act(view: &EgoView, params: &AutopilotParams) -> Decision {
    let lane_change = trigger_for(view, params);
    let plan_lane = match view.lane.shifted(lane_change) {
        Some(l) => l,
        None => view.target_lane,
    };
    let plan = plan_longitudinal(view.gaps.lane(plan_lane), view.v, params, view.dt);
    Decision {
        action: LowLevelAction::new(plan.accel, lane_change),
        emergency: plan.emergency,
    }
}
