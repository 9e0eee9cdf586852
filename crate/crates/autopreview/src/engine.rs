//! Logged rollouts with delegates attached as passive observers.

use autopreview_core::autopilot::{act, AutopilotParams, BrandPreset, EgoView};
use autopreview_core::delegate::{Delegate, LearnedDelegate, Notification, Notifier, RuleDelegate};
use autopreview_core::rollout::Scenario;
use autopreview_core::sim::{init_world, LaneChange, SimError, WorldState};
use autopreview_core::DelegateModel;
use serde::Serialize;

use crate::log::{LogHeader, TickRecord};

/// Either delegate kind behind one type, so sessions can mix them.
#[derive(Debug, Clone)]
pub enum AnyDelegate {
    Rule(RuleDelegate),
    Learned(LearnedDelegate),
}

impl Delegate for AnyDelegate {
    fn predict(&self, view: &EgoView) -> autopreview_core::HighLevelAction {
        match self {
            AnyDelegate::Rule(d) => d.predict(view),
            AnyDelegate::Learned(d) => d.predict(view),
        }
    }
}

/// A brand's delegate plus its notification state. It only ever sees an
/// [`EgoView`] built from a shared borrow of the world.
#[derive(Debug, Clone)]
pub struct Attached {
    pub brand: BrandPreset,
    delegate: AnyDelegate,
    notifier: Notifier,
}

impl Attached {
    pub fn rule(brand: BrandPreset) -> Self {
        let delegate = AnyDelegate::Rule(RuleDelegate::new(brand.params.clone()));
        Self::with(brand, delegate)
    }

    pub fn learned(brand: BrandPreset, model: DelegateModel) -> Result<Self, autopreview_core::delegate::ModelError> {
        let delegate = AnyDelegate::Learned(LearnedDelegate::new(model)?);
        Ok(Self::with(brand, delegate))
    }

    fn with(brand: BrandPreset, delegate: AnyDelegate) -> Self {
        let notifier = Notifier::new(brand.name.clone());
        Attached {
            brand,
            delegate,
            notifier,
        }
    }

    /// Runs the delegate on the world as it stands and feeds the notifier.
    pub fn observe(&mut self, world: &WorldState) -> Option<Notification> {
        let view = EgoView::from_world(world, &self.brand.params);
        let guess = self.delegate.predict(&view);
        // Ticks come from the world clock, so they are always in order.
        self.notifier.push(view.t, guess).ok().flatten()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RolloutSummary {
    pub seed: u64,
    pub brand: String,
    pub ticks: u64,
    pub lane_changes: usize,
    pub emergencies: usize,
    pub clamped_ticks: usize,
    pub ego_contact_ticks: usize,
    pub notifications: usize,
}

/// Target-driven rollout. Emits the header and each tick line through
/// `on_line`, and every notification of the attached delegates through `on_note`.
pub fn logged_rollout(
    seed: u64,
    brand: &BrandPreset,
    scenario: &Scenario,
    attached: &mut [Attached],
    mut on_line: impl FnMut(&str),
    mut on_note: impl FnMut(&Notification),
) -> Result<RolloutSummary, SimError> {
    let mut world = init_world(seed, scenario.traffic_count, scenario.track)?;
    let header = LogHeader::for_world(&world, Some(brand.name.clone()));
    on_line(&serde_json::to_string(&header).expect("headers always serialize"));
    let mut summary = RolloutSummary {
        seed,
        brand: brand.name.clone(),
        ..Default::default()
    };
    for _ in 0..scenario.ticks(world.dt) {
        for a in attached.iter_mut() {
            if let Some(n) = a.observe(&world) {
                summary.notifications += 1;
                on_note(&n);
            }
        }
        let params: &AutopilotParams = &brand.params;
        let decision = act(&EgoView::from_world(&world, params), params);
        let before = world.clone();
        let report = world.step(decision.action);
        on_line(&TickRecord::new(&before, decision.action, &report).to_line());

        summary.ticks += 1;
        summary.lane_changes += usize::from(decision.action.lane_change != LaneChange::None);
        summary.emergencies += usize::from(decision.emergency);
        summary.clamped_ticks += usize::from(report.clamped);
        summary.ego_contact_ticks += usize::from(report.ego_contact);
    }
    Ok(summary)
}

/// The complete log of a rollout as one string, newline-terminated.
pub fn rollout_log(
    seed: u64,
    brand: &BrandPreset,
    scenario: &Scenario,
    attached: &mut [Attached],
) -> Result<(String, RolloutSummary, Vec<Notification>), SimError> {
    let mut log = String::new();
    let mut notes = Vec::new();
    let summary = logged_rollout(
        seed,
        brand,
        scenario,
        attached,
        |line| {
            log.push_str(line);
            log.push('\n');
        },
        |n| notes.push(n.clone()),
    )?;
    Ok((log, summary, notes))
}
