//! Core of autopreview: a deterministic two-lane loop simulator, a
//! receding-horizon target autopilot, a delegate that distills the target
//! into high-level previews, and the statistics used to evaluate how well
//! people understand the target.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod autopilot;
pub mod delegate;
pub mod rollout;
pub mod sim;
pub mod study;

pub use autopilot::{act, lane_change_trigger, plan_longitudinal, AutopilotParams, BrandPreset, BrandRegistry, EgoView};
pub use delegate::{Delegate, DelegateModel, HighLevelAction, Observation};
pub use rollout::Scenario;
pub use sim::{init_world, LaneChange, LowLevelAction, TrackLoop, WorldState};

pub(crate) fn hex(bytes: &[u8]) -> alloc::string::String {
    use core::fmt::Write;
    let mut s = alloc::string::String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}
