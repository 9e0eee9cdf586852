//! Fixed-timestep two-lane loop world.
//!
//! Vehicles are points on a closed loop. Lateral motion is reduced to a
//! scalar maneuver progress, so a vehicle is either settled in one lane or
//! in flight between its origin lane and `target_lane`. A vehicle in flight
//! occupies both lanes for everybody else's gap queries.
//!
//! All stepping is integer-tick driven; `t` is always `tick * dt`.

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Simulation timestep in seconds.
pub const DT: f64 = 0.1;
/// Duration of a lane change, seconds.
pub const LANE_CHANGE_DURATION_S: f64 = 2.0;
/// Sensing horizon for gap queries; anything further reports this value.
pub const GAP_CAP: f64 = 100.0;
/// Minimum same-lane spacing at spawn.
pub const MIN_SPAWN_GAP: f64 = 25.0;
/// Same-lane bumper gap traffic never goes below.
pub const GAP_FLOOR: f64 = 2.0;
/// Distance under which the ego is considered to be touching another vehicle.
pub const CONTACT_DISTANCE: f64 = 1.0;

pub const EGO_ACCEL_MIN: f64 = -6.0;
pub const EGO_ACCEL_MAX: f64 = 3.0;
pub const EGO_INITIAL_SPEED: f64 = 15.0;

pub const TRAFFIC_SPEED_MIN: f64 = 8.0;
pub const TRAFFIC_SPEED_MAX: f64 = 13.0;
const TRAFFIC_GAIN: f64 = 0.5;
const TRAFFIC_ACCEL_MIN: f64 = -4.0;
const TRAFFIC_ACCEL_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("loop length must be positive and finite, got {0}")]
    InvalidTrack(f64),
    #[error(
        "cannot place {requested} traffic vehicles: a {loop_length} m loop holds at most {capacity} at {min_gap} m spacing (ego included)"
    )]
    Capacity {
        requested: usize,
        capacity: usize,
        loop_length: f64,
        min_gap: f64,
    },
    #[error("no vehicle with id {0}")]
    UnknownVehicle(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrackLoop {
    pub loop_length: f64,
    pub lane_count: u8,
    pub lane_width: f64,
}

impl TrackLoop {
    pub fn new(loop_length: f64) -> Result<Self, SimError> {
        if !(loop_length.is_finite() && loop_length > 0.0) {
            return Err(SimError::InvalidTrack(loop_length));
        }
        Ok(TrackLoop {
            loop_length,
            lane_count: 2,
            lane_width: 3.5,
        })
    }

    /// Forward arc distance from `from` to `to`, in `[0, loop_length)`.
    pub fn forward_distance(&self, from: f64, to: f64) -> f64 {
        let d = to - from;
        if d < 0.0 {
            d + self.loop_length
        } else {
            d
        }
    }

    fn wrap(&self, s: f64) -> f64 {
        let mut s = s;
        while s >= self.loop_length {
            s -= self.loop_length;
        }
        while s < 0.0 {
            s += self.loop_length;
        }
        s
    }
}

impl Default for TrackLoop {
    fn default() -> Self {
        TrackLoop {
            loop_length: 1000.0,
            lane_count: 2,
            lane_width: 3.5,
        }
    }
}

/// Lane index. `Right` is lane 0, `Left` is lane 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lane {
    Right = 0,
    Left = 1,
}

impl Lane {
    pub const ALL: [Lane; 2] = [Lane::Right, Lane::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Lane> {
        match i {
            0 => Some(Lane::Right),
            1 => Some(Lane::Left),
            _ => None,
        }
    }

    pub fn other(self) -> Lane {
        match self {
            Lane::Right => Lane::Left,
            Lane::Left => Lane::Right,
        }
    }

    /// Lane reached by shifting in `dir`, if one exists.
    pub fn shifted(self, dir: LaneChange) -> Option<Lane> {
        match (self, dir) {
            (Lane::Right, LaneChange::Left) => Some(Lane::Left),
            (Lane::Left, LaneChange::Right) => Some(Lane::Right),
            _ => None,
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Lane {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Lane {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let i = <u8 as serde::Deserialize>::deserialize(d)?;
        Lane::from_index(i).ok_or_else(|| serde::de::Error::custom("lane must be 0 or 1"))
    }
}

/// Maneuver request carried by a low-level command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LaneChange {
    #[default]
    None,
    Left,
    Right,
}

impl LaneChange {
    /// Direction that moves a vehicle out of `lane` into the other lane.
    pub fn toward_other(lane: Lane) -> LaneChange {
        match lane {
            Lane::Right => LaneChange::Left,
            Lane::Left => LaneChange::Right,
        }
    }
}

/// The lowest-level command this world accepts for the ego.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LowLevelAction {
    pub accel: f64,
    pub lane_change: LaneChange,
}

impl LowLevelAction {
    pub fn new(accel: f64, lane_change: LaneChange) -> Self {
        LowLevelAction { accel, lane_change }
    }

    pub fn coast() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct VehicleId(pub u32);

pub const EGO_ID: VehicleId = VehicleId(0);

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    /// Arc position in `[0, loop_length)`.
    pub s: f64,
    pub lane: Lane,
    /// Fraction of an in-flight lane change; 1.0 when settled.
    pub lane_progress: f64,
    pub v: f64,
    /// Acceleration actually applied during the last tick.
    pub a: f64,
    pub target_lane: Lane,
    /// Speed the vehicle cruises at when unobstructed.
    pub cruise_speed: f64,
    /// Unwrapped distance travelled since spawn.
    pub odometer: f64,
    maneuver_ticks: u32,
}

impl VehicleState {
    fn settled(id: VehicleId, s: f64, lane: Lane, v: f64, cruise_speed: f64) -> Self {
        VehicleState {
            id,
            s,
            lane,
            lane_progress: 1.0,
            v,
            a: 0.0,
            target_lane: lane,
            cruise_speed,
            odometer: 0.0,
            maneuver_ticks: 0,
        }
    }

    pub fn mid_maneuver(&self) -> bool {
        self.target_lane != self.lane
    }

    pub fn occupies(&self, lane: Lane) -> bool {
        self.lane == lane || (self.mid_maneuver() && self.target_lane == lane)
    }
}

/// Gaps seen from one vehicle in one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapReport {
    pub lead_gap: f64,
    pub lead_speed: f64,
    pub rear_gap: f64,
}

impl GapReport {
    pub fn open(own_speed: f64) -> Self {
        GapReport {
            lead_gap: GAP_CAP,
            lead_speed: own_speed,
            rear_gap: GAP_CAP,
        }
    }
}

/// Gap reports for both lanes, indexed by [`Lane::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneGaps(pub [GapReport; 2]);

impl LaneGaps {
    pub fn lane(&self, lane: Lane) -> &GapReport {
        &self.0[lane.index()]
    }
}

/// What happened to the ego command during a step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Accel was clamped or a lane-change request was dropped.
    pub clamped: bool,
    pub applied_accel: f64,
    pub lane_change_started: Option<Lane>,
    pub ego_contact: bool,
}

/// Full simulation state. Cloning gives an independent world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub track: TrackLoop,
    pub dt: f64,
    pub seed: u64,
    pub ego: VehicleState,
    pub traffic: Vec<VehicleState>,
    tick: u64,
    rng: ChaCha8Rng,
    ticks_since_settle: Option<u64>,
}

/// Number of ticks a lane change takes.
pub fn maneuver_ticks(dt: f64) -> u32 {
    libm::round(LANE_CHANGE_DURATION_S / dt) as u32
}

/// Deterministically places `traffic_count` vehicles plus the ego.
///
/// Each lane is cut into slots at least [`MIN_SPAWN_GAP`] wide. The ego
/// takes slot 0 of the right lane; traffic picks a lane uniformly (falling
/// back to the other lane when full) and then a free slot uniformly.
pub fn init_world(seed: u64, traffic_count: usize, track: TrackLoop) -> Result<WorldState, SimError> {
    if !(track.loop_length.is_finite() && track.loop_length > 0.0) {
        return Err(SimError::InvalidTrack(track.loop_length));
    }
    let slots_per_lane = libm::floor(track.loop_length / MIN_SPAWN_GAP) as usize;
    let capacity = (2 * slots_per_lane).saturating_sub(1);
    if traffic_count > capacity {
        return Err(SimError::Capacity {
            requested: traffic_count,
            capacity,
            loop_length: track.loop_length,
            min_gap: MIN_SPAWN_GAP,
        });
    }
    let slot_width = track.loop_length / slots_per_lane as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut free: [Vec<usize>; 2] = [(1..slots_per_lane).collect(), (0..slots_per_lane).collect()];

    let ego = VehicleState::settled(EGO_ID, 0.0, Lane::Right, EGO_INITIAL_SPEED, EGO_INITIAL_SPEED);
    let mut traffic = Vec::with_capacity(traffic_count);
    for i in 0..traffic_count {
        let mut lane = if rng.gen_bool(0.5) { Lane::Left } else { Lane::Right };
        if free[lane.index()].is_empty() {
            lane = lane.other();
        }
        let pool = &mut free[lane.index()];
        let pick = rng.gen_range(0..pool.len());
        let slot = pool.remove(pick);
        let speed = rng.gen_range(TRAFFIC_SPEED_MIN..TRAFFIC_SPEED_MAX);
        let s = slot as f64 * slot_width;
        traffic.push(VehicleState::settled(VehicleId(i as u32 + 1), s, lane, speed, speed));
    }

    Ok(WorldState {
        track,
        dt: DT,
        seed,
        ego,
        traffic,
        tick: 0,
        rng,
        ticks_since_settle: None,
    })
}

/// Nearest vehicle ahead of `query` in `lane` among `others`: (gap, index).
fn nearest_ahead<'a, I>(track: &TrackLoop, query: &VehicleState, lane: Lane, others: I) -> Option<(f64, &'a VehicleState)>
where
    I: IntoIterator<Item = &'a VehicleState>,
{
    let mut best: Option<(f64, &VehicleState)> = None;
    for o in others {
        if o.id == query.id || !o.occupies(lane) {
            continue;
        }
        let d = track.forward_distance(query.s, o.s);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, o));
        }
    }
    best
}

fn nearest_behind<'a, I>(track: &TrackLoop, query: &VehicleState, lane: Lane, others: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a VehicleState>,
{
    let mut best: Option<f64> = None;
    for o in others {
        if o.id == query.id || !o.occupies(lane) {
            continue;
        }
        let d = track.forward_distance(o.s, query.s);
        if best.map_or(true, |bd| d < bd) {
            best = Some(d);
        }
    }
    best
}

/// Largest acceleration keeping the follower at least `GAP_FLOOR + v_next*dt/2`
/// behind a leader whose displacement this tick is at least `leader_disp`.
fn floor_bound(gap: f64, leader_disp: f64, v: f64, dt: f64) -> f64 {
    (gap + leader_disp - GAP_FLOOR - 1.5 * v * dt) / (dt * dt)
}

fn integrate(track: &TrackLoop, veh: &mut VehicleState, accel: f64, dt: f64) {
    // Braking past standstill stops the vehicle within the tick.
    let a = if accel < -veh.v / dt { -veh.v / dt } else { accel };
    let disp = veh.v * dt + 0.5 * a * dt * dt;
    veh.s = track.wrap(veh.s + disp);
    veh.odometer += disp;
    veh.v = f64::max(0.0, veh.v + a * dt);
    veh.a = a;
}

impl WorldState {
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn t(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Ticks since the ego last finished a lane change, `None` if it never has.
    pub fn ticks_since_lane_change(&self) -> Option<u64> {
        self.ticks_since_settle
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        core::iter::once(&self.ego).chain(self.traffic.iter())
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles().find(|v| v.id == id)
    }

    /// Gap reports for both lanes as seen from `id`.
    pub fn gaps(&self, id: VehicleId) -> Result<LaneGaps, SimError> {
        let q = self.vehicle(id).ok_or(SimError::UnknownVehicle(id.0))?;
        Ok(self.gaps_for(q))
    }

    pub fn ego_gaps(&self) -> LaneGaps {
        self.gaps_for(&self.ego)
    }

    fn gaps_for(&self, q: &VehicleState) -> LaneGaps {
        let report = |lane: Lane| {
            let mut r = GapReport::open(q.v);
            if let Some((d, lead)) = nearest_ahead(&self.track, q, lane, self.vehicles()) {
                if d < GAP_CAP {
                    r.lead_gap = d;
                    r.lead_speed = lead.v;
                }
            }
            if let Some(d) = nearest_behind(&self.track, q, lane, self.vehicles()) {
                r.rear_gap = f64::min(d, GAP_CAP);
            }
            r
        };
        LaneGaps([report(Lane::Right), report(Lane::Left)])
    }

    /// Advances the world by one tick under `cmd` for the ego.
    pub fn step(&mut self, cmd: LowLevelAction) -> StepReport {
        let dt = self.dt;
        let mut report = StepReport::default();

        let mut accel = cmd.accel;
        if !accel.is_finite() {
            accel = 0.0;
            report.clamped = true;
        }
        if accel < EGO_ACCEL_MIN || accel > EGO_ACCEL_MAX {
            accel = accel.clamp(EGO_ACCEL_MIN, EGO_ACCEL_MAX);
            report.clamped = true;
        }
        if cmd.lane_change != LaneChange::None {
            match self.ego.lane.shifted(cmd.lane_change) {
                Some(target) if !self.ego.mid_maneuver() => {
                    self.ego.target_lane = target;
                    self.ego.lane_progress = 0.0;
                    self.ego.maneuver_ticks = 0;
                    report.lane_change_started = Some(target);
                }
                _ => report.clamped = true,
            }
        }

        let ego_before = self.ego.clone();
        let ego_accel = if accel < -ego_before.v / dt { -ego_before.v / dt } else { accel };
        let ego_disp = ego_before.v * dt + 0.5 * ego_accel * dt * dt;

        // Traffic decisions read the pre-step world (ego maneuver already begun).
        let mut traffic_accel = Vec::with_capacity(self.traffic.len());
        for veh in &self.traffic {
            let mut a = (TRAFFIC_GAIN * (veh.cruise_speed - veh.v)).clamp(TRAFFIC_ACCEL_MIN, TRAFFIC_ACCEL_MAX);
            if let Some((gap, lead)) = nearest_ahead(&self.track, veh, veh.lane, self.vehicles()) {
                let lead_disp = if lead.id == EGO_ID { ego_disp } else { 0.5 * lead.v * dt };
                a = f64::min(a, floor_bound(gap, lead_disp, veh.v, dt));
            }
            if let Some((gap, lead)) = nearest_ahead(&self.track, veh, veh.lane, self.traffic.iter()) {
                a = f64::min(a, floor_bound(gap, 0.5 * lead.v * dt, veh.v, dt));
            }
            traffic_accel.push(a);
        }

        let track = self.track;
        integrate(&track, &mut self.ego, accel, dt);
        report.applied_accel = self.ego.a;
        for (veh, a) in self.traffic.iter_mut().zip(traffic_accel) {
            integrate(&track, veh, a, dt);
        }

        let total = maneuver_ticks(dt);
        if self.ego.mid_maneuver() {
            self.ego.maneuver_ticks += 1;
            if self.ego.maneuver_ticks >= total {
                self.ego.lane = self.ego.target_lane;
                self.ego.lane_progress = 1.0;
                self.ego.maneuver_ticks = 0;
                self.ticks_since_settle = Some(0);
            } else {
                self.ego.lane_progress = self.ego.maneuver_ticks as f64 / total as f64;
            }
        } else if let Some(n) = self.ticks_since_settle.as_mut() {
            *n += 1;
        }

        self.tick += 1;
        report.ego_contact = self.ego_in_contact();
        report
    }

    /// Whether any vehicle sharing a lane with the ego is within [`CONTACT_DISTANCE`].
    pub fn ego_in_contact(&self) -> bool {
        self.traffic.iter().any(|o| {
            let shares = Lane::ALL.iter().any(|&l| self.ego.occupies(l) && o.occupies(l));
            if !shares {
                return false;
            }
            let d = self.track.forward_distance(self.ego.s, o.s);
            f64::min(d, self.track.loop_length - d) < CONTACT_DISTANCE
        })
    }
}
