//! JSON-lines trajectory log: one header line, then one line per tick.
//!
//! A tick line holds the world as it was at the start of the tick together
//! with the ego command chosen for it and what the step did with that command.

use std::io::{self, BufRead, Write};

use autopreview_core::sim::{LowLevelAction, StepReport, TrackLoop, VehicleState, WorldState};
use serde::{Deserialize, Serialize};

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub dt: f64,
    pub track: TrackLoop,
    pub traffic_count: usize,
    pub code_version: String,
    /// Who drove the ego: a brand name, `manual`, or `scripted:<brand>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<String>,
}

impl LogHeader {
    pub fn for_world(world: &WorldState, driver: Option<String>) -> Self {
        LogHeader {
            schema_version: LOG_SCHEMA_VERSION,
            seed: world.seed,
            dt: world.dt,
            track: world.track,
            traffic_count: world.traffic.len(),
            code_version: CODE_VERSION.to_string(),
            driver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoRecord {
    pub s: f64,
    pub lane: u8,
    pub lane_progress: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficRecord {
    pub id: u32,
    pub s: f64,
    pub lane: u8,
    pub lane_progress: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub ego: EgoRecord,
    pub traffic: Vec<TrafficRecord>,
    pub ego_cmd: LowLevelAction,
    pub clamped: bool,
    pub ego_contact: bool,
}

fn ego_record(v: &VehicleState) -> EgoRecord {
    EgoRecord {
        s: v.s,
        lane: v.lane.index() as u8,
        lane_progress: v.lane_progress,
        v: v.v,
        a: v.a,
    }
}

impl TickRecord {
    /// Record for a tick, from the pre-step world and the step's outcome.
    pub fn new(before: &WorldState, cmd: LowLevelAction, report: &StepReport) -> Self {
        TickRecord {
            tick: before.tick(),
            t: before.t(),
            ego: ego_record(&before.ego),
            traffic: before
                .traffic
                .iter()
                .map(|v| TrafficRecord {
                    id: v.id.0,
                    s: v.s,
                    lane: v.lane.index() as u8,
                    lane_progress: v.lane_progress,
                    v: v.v,
                    a: v.a,
                })
                .collect(),
            ego_cmd: cmd,
            clamped: report.clamped,
            ego_contact: report.ego_contact,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("tick records always serialize")
    }
}

pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(LogWriter { out })
    }

    pub fn line(&mut self, line: &str) -> io::Result<()> {
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log is empty")]
    Empty,
    #[error("bad log header: {0}")]
    Header(String),
    #[error("log schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A parsed log. Parsing stops at the first damaged tick line.
#[derive(Debug, Clone)]
pub struct ParsedLog {
    pub header: LogHeader,
    /// Raw tick lines, exactly as stored.
    pub lines: Vec<String>,
    pub ticks: Vec<TickRecord>,
    /// 1-based tick-line number of the first damaged line, if any.
    pub truncated_at: Option<usize>,
}

pub fn read_log<R: BufRead>(reader: R) -> Result<ParsedLog, LogError> {
    let mut lines = reader.split(b'\n').collect::<Result<Vec<_>, _>>()?;
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    let mut lines = lines.into_iter();
    let header_bytes = lines.next().ok_or(LogError::Empty)?;
    let header: LogHeader = serde_json::from_slice(&header_bytes).map_err(|e| LogError::Header(e.to_string()))?;
    if header.schema_version != LOG_SCHEMA_VERSION {
        return Err(LogError::Schema {
            found: header.schema_version,
            expected: LOG_SCHEMA_VERSION,
        });
    }
    let mut out = ParsedLog {
        header,
        lines: Vec::new(),
        ticks: Vec::new(),
        truncated_at: None,
    };
    for (i, raw) in lines.enumerate() {
        let parsed = std::str::from_utf8(&raw)
            .ok()
            .and_then(|s| serde_json::from_str::<TickRecord>(s).ok().map(|r| (s.to_string(), r)));
        let in_order = |r: &TickRecord| out.ticks.last().map_or(true, |p| p.tick + 1 == r.tick);
        match parsed {
            Some((line, rec)) if in_order(&rec) => {
                out.lines.push(line);
                out.ticks.push(rec);
            }
            _ => {
                out.truncated_at = Some(i + 1);
                break;
            }
        }
    }
    Ok(out)
}
