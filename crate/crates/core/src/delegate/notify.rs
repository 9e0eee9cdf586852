use alloc::string::String;
use alloc::vec::Vec;

use super::HighLevelAction;

/// Ticks a critical class must persist before it is announced.
pub const SUSTAIN_TICKS: u32 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NotifyError {
    #[error("timestamp {t} precedes previous timestamp {prev}")]
    OutOfOrder { prev: f64, t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Notification {
    pub t: f64,
    pub action: HighLevelAction,
    pub brand: String,
}

/// Debouncing state machine for one (session, brand) pair.
///
/// A notification goes out when a critical class has been predicted for
/// [`SUSTAIN_TICKS`] consecutive ticks, stamped with the first tick of the run.
/// Nothing more is emitted until the prediction returns to `KeepLane`.
#[derive(Debug, Clone)]
pub struct Notifier {
    brand: String,
    last_t: Option<f64>,
    run: Option<(HighLevelAction, f64, u32)>,
    armed: bool,
}

impl Notifier {
    pub fn new(brand: impl Into<String>) -> Self {
        Notifier {
            brand: brand.into(),
            last_t: None,
            run: None,
            armed: true,
        }
    }

    pub fn brand(&self) -> &str {
        &self.brand
    }

    pub fn push(&mut self, t: f64, action: HighLevelAction) -> Result<Option<Notification>, NotifyError> {
        if let Some(prev) = self.last_t {
            if t < prev || t.is_nan() {
                return Err(NotifyError::OutOfOrder { prev, t });
            }
        }
        self.last_t = Some(t);

        if !action.is_critical() {
            self.run = None;
            self.armed = true;
            return Ok(None);
        }
        let (start, len) = match self.run {
            Some((cls, start, len)) if cls == action => (start, len + 1),
            _ => (t, 1),
        };
        self.run = Some((action, start, len));
        if self.armed && len >= SUSTAIN_TICKS {
            self.armed = false;
            return Ok(Some(Notification {
                t: start,
                action,
                brand: self.brand.clone(),
            }));
        }
        Ok(None)
    }
}

/// Runs a whole `(t, action)` stream through a fresh [`Notifier`].
pub fn notify<I>(brand: &str, stream: I) -> Result<Vec<Notification>, NotifyError>
where
    I: IntoIterator<Item = (f64, HighLevelAction)>,
{
    let mut n = Notifier::new(brand);
    let mut out = Vec::new();
    for (t, a) in stream {
        if let Some(note) = n.push(t, a)? {
            out.push(note);
        }
    }
    Ok(out)
}
