//! Live sessions: the message protocol plus a synchronous state machine. The
//! server feeds it client frames and a 10 Hz tick; tests drive it directly.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use autopreview_core::autopilot::{act, BrandPreset, BrandRegistry, EgoView};
use autopreview_core::delegate::Notification;
use autopreview_core::rollout::Scenario;
use autopreview_core::sim::{init_world, LaneChange, LowLevelAction, WorldState, GAP_FLOOR};
use autopreview_core::study::{build_report, AggressivenessRating, Group, PredictionRecord, StudyReport};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

use crate::atomic;
use crate::engine::Attached;
use crate::formats::{self, ClipManifest};
use crate::log::{read_log, LogHeader, ParsedLog, TickRecord};

pub const PROTOCOL_VERSION: u32 = 1;

/// Ego acceleration for pedal states -1, 0 and +1, m/s².
pub const PEDAL_ACCEL: [f64; 3] = [-3.0, 0.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Preview,
    Compare,
    Quiz,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Driver {
    #[default]
    Manual,
    /// The ego follows a brand's autopilot, for reproducible treatment-style sessions.
    Scripted,
}

fn default_duration() -> f64 {
    120.0
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSession {
    pub protocol_version: u32,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub brands: Vec<String>,
    /// Brand name to model file. Brands without one use the rule delegate.
    #[serde(default)]
    pub delegate_models: BTreeMap<String, PathBuf>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_count: Option<usize>,
    #[serde(default)]
    pub driver: Driver,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clips_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    /// Replay pacing multiplier; 0 replays as fast as possible.
    #[serde(default = "default_speed")]
    pub speed: f64,
}

impl StartSession {
    pub fn new(mode: Mode) -> Self {
        StartSession {
            protocol_version: PROTOCOL_VERSION,
            mode,
            seed: 0,
            brands: Vec::new(),
            delegate_models: BTreeMap::new(),
            duration_s: default_duration(),
            traffic_count: None,
            driver: Driver::Manual,
            script_brand: None,
            clips_dir: None,
            subject_id: None,
            group: None,
            log: None,
            speed: default_speed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Control {
    pub accel: i8,
    #[serde(default = "no_lane_change")]
    pub lane_request: LaneChange,
}

fn no_lane_change() -> LaneChange {
    LaneChange::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuizAnswer {
    pub clip_id: String,
    pub t_pred: f64,
    pub confidence: u8,
    /// Optional 1..=10 rating of how aggressive the autopilot looked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggressiveness: Option<u8>,
}

/// Builds a client frame. Used by tests and scripted clients.
pub fn client_frame(kind: &str, session_id: Option<&str>, seq: u64, payload: impl Serialize) -> String {
    serde_json::json!({
        "type": kind,
        "session_id": session_id,
        "seq": seq,
        "payload": payload,
    })
    .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutKind {
    SessionStarted,
    State,
    Notification,
    QuizClip,
    Report,
    Error,
}

impl OutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutKind::SessionStarted => "session_started",
            OutKind::State => "state",
            OutKind::Notification => "notification",
            OutKind::QuizClip => "quiz_clip",
            OutKind::Report => "report",
            OutKind::Error => "error",
        }
    }
}

/// A server frame, already serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub kind: OutKind,
    pub seq: u64,
    pub text: String,
}

impl Outgoing {
    /// The payload as raw JSON text.
    pub fn payload(&self) -> String {
        #[derive(Deserialize)]
        struct Env<'a> {
            #[serde(borrow)]
            payload: &'a RawValue,
        }
        let env: Env = serde_json::from_str(&self.text).expect("outgoing frames are valid JSON");
        env.payload.get().to_string()
    }
}

#[derive(Serialize)]
struct OutEnvelope<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    session_id: &'a str,
    seq: u64,
    payload: &'a RawValue,
}

#[derive(Debug, Clone, Serialize)]
struct ErrorPayload<'a> {
    code: &'a str,
    message: String,
    seq: Option<u64>,
}

/// Bounded queue between the stepper and the socket writer. When full, the
/// oldest state frame is dropped; other frames are never dropped.
#[derive(Debug)]
pub struct Outbox {
    capacity: usize,
    queue: VecDeque<Outgoing>,
    dropped_states: u64,
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        Outbox {
            capacity: capacity.max(1),
            queue: VecDeque::new(),
            dropped_states: 0,
        }
    }

    pub fn push(&mut self, msg: Outgoing) {
        if self.queue.len() >= self.capacity {
            if let Some(i) = self.queue.iter().position(|m| m.kind == OutKind::State) {
                self.queue.remove(i);
                self.dropped_states += 1;
            }
        }
        self.queue.push_back(msg);
    }

    pub fn pop(&mut self) -> Option<Outgoing> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped_states(&self) -> u64 {
        self.dropped_states
    }
}

/// End-of-session summary for preview, compare and replay sessions.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SessionSummary {
    pub ticks: u64,
    pub lane_changes: usize,
    pub notifications: BTreeMap<String, usize>,
    pub rejected_lane_requests: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated_at: Option<usize>,
}

struct Drive {
    world: WorldState,
    header: LogHeader,
    total_ticks: u64,
    attached: Vec<Attached>,
    script: Option<BrandPreset>,
    pedal: i8,
    lane_request: Option<(LaneChange, u64)>,
    lines: Vec<String>,
    notes: Vec<Notification>,
    summary: SessionSummary,
}

struct Quiz {
    manifest: ClipManifest,
    slices: Vec<(LogHeader, Vec<String>)>,
    current: usize,
    frame: usize,
    subject_id: String,
    group: Group,
    records: Vec<PredictionRecord>,
    rating: Option<u8>,
    report: Option<StudyReport>,
}

struct Replay {
    log: ParsedLog,
    next: usize,
    summary: SessionSummary,
}

enum Body {
    Drive(Box<Drive>),
    Quiz(Box<Quiz>),
    Replay(Box<Replay>),
}

struct Active {
    config: StartSession,
    body: Body,
}

/// One client connection and the session it runs.
pub struct Session {
    id: String,
    brands: BrandRegistry,
    seq: u64,
    last_client_seq: Option<u64>,
    client_seq_gaps: u64,
    warnings: Vec<String>,
    active: Option<Active>,
    finished: bool,
}

struct Reject {
    code: &'static str,
    message: String,
}

fn reject(code: &'static str, message: impl ToString) -> Reject {
    Reject {
        code,
        message: message.to_string(),
    }
}

impl Session {
    pub fn new(id: impl Into<String>, brands: BrandRegistry) -> Self {
        Session {
            id: id.into(),
            brands,
            seq: 0,
            last_client_seq: None,
            client_seq_gaps: 0,
            warnings: Vec::new(),
            active: None,
            finished: false,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> Option<Mode> {
        self.active.as_ref().map(|a| a.config.mode)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn client_seq_gaps(&self) -> u64 {
        self.client_seq_gaps
    }

    /// Wall-clock spacing of ticks. `None` means as fast as possible.
    pub fn tick_interval(&self) -> Option<std::time::Duration> {
        let dt = 0.1;
        match &self.active {
            Some(Active { config, body: Body::Replay(_) }) => {
                (config.speed > 0.0).then(|| std::time::Duration::from_secs_f64(dt / config.speed))
            }
            _ => Some(std::time::Duration::from_secs_f64(dt)),
        }
    }

    fn out(&mut self, kind: OutKind, payload: String) -> Outgoing {
        self.seq += 1;
        let raw = RawValue::from_string(payload).expect("payloads are valid JSON");
        let text = serde_json::to_string(&OutEnvelope {
            kind: kind.as_str(),
            session_id: &self.id,
            seq: self.seq,
            payload: &raw,
        })
        .expect("envelopes always serialize");
        Outgoing {
            kind,
            seq: self.seq,
            text,
        }
    }

    fn out_json(&mut self, kind: OutKind, payload: &impl Serialize) -> Outgoing {
        let json = serde_json::to_string(payload).expect("payloads always serialize");
        self.out(kind, json)
    }

    fn error(&mut self, code: &str, message: impl ToString, seq: Option<u64>) -> Outgoing {
        let payload = ErrorPayload {
            code,
            message: message.to_string(),
            seq,
        };
        self.out_json(OutKind::Error, &payload)
    }

    /// Handles one client frame.
    pub fn handle(&mut self, text: &str) -> Vec<Outgoing> {
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![self.error("malformed", e, None)],
        };
        let seq = value.get("seq").and_then(Value::as_u64);
        let Some(seq) = seq else {
            return vec![self.error("malformed", "missing or invalid seq", None)];
        };
        let Some(kind) = value.get("type").and_then(Value::as_str) else {
            return vec![self.error("malformed", "missing type", Some(seq))];
        };
        if let Some(last) = self.last_client_seq {
            if seq <= last {
                return vec![self.error("seq_not_increasing", format!("seq {seq} after {last}"), Some(seq))];
            }
            if seq > last + 1 {
                self.client_seq_gaps += seq - last - 1;
                self.warnings.push(format!("client seq jumped from {last} to {seq}"));
            }
        }
        self.last_client_seq = Some(seq);
        if let Some(sid) = value.get("session_id").and_then(Value::as_str) {
            if self.active.is_some() && sid != self.id {
                return vec![self.error("wrong_session", format!("unknown session {sid}"), Some(seq))];
            }
        }
        let payload = value.get("payload").cloned().unwrap_or(Value::Null);
        if self.finished && kind != "end_session" {
            return vec![self.error("session_finished", "session has ended", Some(seq))];
        }
        let result = match kind {
            "start_session" => self.on_start(payload),
            "control" => self.on_control(payload, seq),
            "quiz_answer" => self.on_answer(payload),
            "end_session" => Ok(self.finish()),
            other => Err(reject("unknown_type", format!("unknown message type {other:?}"))),
        };
        match result {
            Ok(out) => out,
            Err(r) => vec![self.error(r.code, r.message, Some(seq))],
        }
    }

    fn on_start(&mut self, payload: Value) -> Result<Vec<Outgoing>, Reject> {
        if self.active.is_some() {
            return Err(reject("already_started", "session already started"));
        }
        let config: StartSession = serde_json::from_value(payload).map_err(|e| reject("malformed", e))?;
        if config.protocol_version != PROTOCOL_VERSION {
            return Err(reject(
                "protocol_version",
                format!("protocol version {} not supported (server speaks {PROTOCOL_VERSION})", config.protocol_version),
            ));
        }
        let body = match config.mode {
            Mode::Preview | Mode::Compare => Body::Drive(Box::new(self.start_drive(&config)?)),
            Mode::Quiz => Body::Quiz(Box::new(start_quiz(&config)?)),
            Mode::Replay => Body::Replay(Box::new(start_replay(&config)?)),
        };
        let mut started = serde_json::json!({
            "protocol_version": PROTOCOL_VERSION,
            "mode": config.mode,
            "brands": config.brands,
        });
        match &body {
            Body::Drive(d) => started["header"] = serde_json::to_value(&d.header).expect("headers serialize"),
            Body::Replay(r) => started["header"] = serde_json::to_value(&r.log.header).expect("headers serialize"),
            Body::Quiz(q) => started["n_clips"] = q.manifest.clips.len().into(),
        }
        self.active = Some(Active { config, body });
        let mut out = vec![self.out_json(OutKind::SessionStarted, &started)];
        if let Some(clip) = self.quiz_clip_message() {
            out.push(clip);
        }
        Ok(out)
    }

    fn start_drive(&self, config: &StartSession) -> Result<Drive, Reject> {
        let (lo, hi) = if config.mode == Mode::Preview { (1, 1) } else { (2, 3) };
        if config.brands.len() < lo || config.brands.len() > hi {
            return Err(reject(
                "invalid_config",
                format!("{:?} mode takes {lo} to {hi} brands, got {}", config.mode, config.brands.len()),
            ));
        }
        if !(config.duration_s.is_finite() && config.duration_s > 0.0) {
            return Err(reject("invalid_config", "duration_s must be positive"));
        }
        for name in config.delegate_models.keys() {
            if !config.brands.contains(name) {
                return Err(reject("invalid_config", format!("model given for brand {name} not in session")));
            }
        }
        let mut attached = Vec::new();
        for name in &config.brands {
            let brand = self.brand(name)?;
            if attached.iter().any(|a: &Attached| &a.brand.name == name) {
                return Err(reject("invalid_config", format!("brand {name} listed twice")));
            }
            attached.push(match config.delegate_models.get(name) {
                None => Attached::rule(brand),
                Some(path) => {
                    let model = formats::read_model(path).map_err(|e| reject("invalid_config", e))?;
                    Attached::learned(brand, model).map_err(|e| reject("invalid_config", e))?
                }
            });
        }
        let script = match config.driver {
            Driver::Manual => None,
            Driver::Scripted => Some(self.brand(config.script_brand.as_deref().unwrap_or(&config.brands[0]))?),
        };
        let scenario = Scenario {
            duration_s: config.duration_s,
            traffic_count: config.traffic_count.unwrap_or(Scenario::default().traffic_count),
            ..Scenario::default()
        };
        let world = init_world(config.seed, scenario.traffic_count, scenario.track).map_err(|e| reject("invalid_config", e))?;
        let driver = match &script {
            None => "manual".to_string(),
            Some(b) => format!("scripted:{}", b.name),
        };
        let header = LogHeader::for_world(&world, Some(driver));
        let total_ticks = scenario.ticks(world.dt);
        let summary = SessionSummary {
            notifications: config.brands.iter().map(|b| (b.clone(), 0)).collect(),
            ..Default::default()
        };
        Ok(Drive {
            world,
            header,
            total_ticks,
            attached,
            script,
            pedal: 0,
            lane_request: None,
            lines: Vec::new(),
            notes: Vec::new(),
            summary,
        })
    }

    fn brand(&self, name: &str) -> Result<BrandPreset, Reject> {
        self.brands
            .get(name)
            .cloned()
            .ok_or_else(|| reject("invalid_config", format!("unknown brand {name}")))
    }

    fn on_control(&mut self, payload: Value, seq: u64) -> Result<Vec<Outgoing>, Reject> {
        let Some(Active { body: Body::Drive(drive), .. }) = &mut self.active else {
            return Err(reject("wrong_mode", "control messages need a preview or compare session"));
        };
        if drive.script.is_some() {
            return Err(reject("wrong_mode", "the ego is scripted in this session"));
        }
        let c: Control = serde_json::from_value(payload).map_err(|e| reject("malformed", e))?;
        if !(-1..=1).contains(&c.accel) {
            return Err(reject("malformed", format!("accel must be -1, 0 or 1, got {}", c.accel)));
        }
        drive.pedal = c.accel;
        if c.lane_request != LaneChange::None {
            drive.lane_request = Some((c.lane_request, seq));
        }
        Ok(Vec::new())
    }

    fn on_answer(&mut self, payload: Value) -> Result<Vec<Outgoing>, Reject> {
        let Some(Active { body: Body::Quiz(quiz), .. }) = &mut self.active else {
            return Err(reject("wrong_mode", "quiz answers need a quiz session"));
        };
        let a: QuizAnswer = serde_json::from_value(payload).map_err(|e| reject("malformed", e))?;
        let Some(clip) = quiz.manifest.clips.get(quiz.current) else {
            return Err(reject("invalid_answer", "all clips are answered"));
        };
        if a.clip_id != clip.clip_id {
            return Err(reject(
                "invalid_answer",
                format!("answer is for {}, current clip is {}", a.clip_id, clip.clip_id),
            ));
        }
        if !(a.t_pred.is_finite() && (0.0..=clip.duration_s).contains(&a.t_pred)) {
            return Err(reject("invalid_answer", format!("t_pred must lie in [0, {}]", clip.duration_s)));
        }
        if a.confidence > 10 {
            return Err(reject("invalid_answer", "confidence must lie in 0..=10"));
        }
        if let Some(r) = a.aggressiveness {
            if !(1..=10).contains(&r) {
                return Err(reject("invalid_answer", "aggressiveness must lie in 1..=10"));
            }
            quiz.rating = Some(r);
        }
        quiz.records.push(PredictionRecord {
            subject_id: quiz.subject_id.clone(),
            clip_id: a.clip_id,
            t_pred: a.t_pred,
            confidence: a.confidence,
            group: quiz.group,
        });
        quiz.current += 1;
        quiz.frame = 0;
        if quiz.current < quiz.manifest.clips.len() {
            Ok(self.quiz_clip_message().into_iter().collect())
        } else {
            Ok(self.finish())
        }
    }

    fn quiz_clip_message(&mut self) -> Option<Outgoing> {
        let Some(Active { body: Body::Quiz(quiz), .. }) = &self.active else {
            return None;
        };
        let clip = quiz.manifest.clips.get(quiz.current)?;
        // Ground truth stays on the server.
        let payload = serde_json::json!({
            "clip_id": clip.clip_id,
            "index": quiz.current,
            "n_clips": quiz.manifest.clips.len(),
            "duration_s": clip.duration_s,
            "duration_ticks": clip.duration_ticks,
            "header": quiz.slices[quiz.current].0,
        });
        Some(self.out_json(OutKind::QuizClip, &payload))
    }

    /// Advances the session by one tick.
    pub fn tick(&mut self) -> Vec<Outgoing> {
        if self.finished {
            return Vec::new();
        }
        let Some(active) = &mut self.active else {
            return Vec::new();
        };
        match &mut active.body {
            Body::Drive(drive) => {
                let (line, notes, rejected) = drive.step();
                let mut out = vec![self.out(OutKind::State, line)];
                for n in &notes {
                    out.push(self.out_json(OutKind::Notification, n));
                }
                if let Some(seq) = rejected {
                    out.push(self.error(
                        "lane_request_rejected",
                        "target lane is missing, occupied within 2 m, or a maneuver is under way",
                        Some(seq),
                    ));
                }
                let done = matches!(&self.active, Some(Active { body: Body::Drive(d), .. }) if d.summary.ticks >= d.total_ticks);
                if done {
                    out.extend(self.finish());
                }
                out
            }
            Body::Quiz(quiz) => {
                let Some((_, lines)) = quiz.slices.get(quiz.current) else {
                    return Vec::new();
                };
                let Some(line) = lines.get(quiz.frame).cloned() else {
                    return Vec::new();
                };
                quiz.frame += 1;
                vec![self.out(OutKind::State, line)]
            }
            Body::Replay(replay) => match replay.log.lines.get(replay.next).cloned() {
                Some(line) => {
                    replay.next += 1;
                    replay.summary.ticks += 1;
                    vec![self.out(OutKind::State, line)]
                }
                None => self.finish(),
            },
        }
    }

    /// Ends the session and emits its report.
    fn finish(&mut self) -> Vec<Outgoing> {
        if self.finished {
            return Vec::new();
        }
        self.finished = true;
        let payload = match &mut self.active {
            None => return Vec::new(),
            Some(Active { body: Body::Drive(d), .. }) => serde_json::to_string(&d.summary),
            Some(Active { body: Body::Replay(r), .. }) => serde_json::to_string(&r.summary),
            Some(Active { body: Body::Quiz(q), .. }) => {
                if q.records.is_empty() {
                    return vec![self.error("no_report", "no answers were given", None)];
                }
                match build_report(&q.records, &q.ratings(), &q.manifest.clips) {
                    Ok(report) => {
                        let json = serde_json::to_string(&report);
                        q.report = Some(report);
                        json
                    }
                    Err(e) => return vec![self.error("no_report", e, None)],
                }
            }
        };
        let payload = payload.expect("reports always serialize");
        vec![self.out(OutKind::Report, payload)]
    }

    /// Writes the session to `<root>/sessions/<id>/`, replacing an earlier save.
    pub fn persist(&self, root: &Path) -> std::io::Result<PathBuf> {
        let dir = root.join("sessions").join(&self.id);
        let status = if self.finished { "complete" } else { "incomplete" };
        let meta = serde_json::json!({
            "session_id": self.id,
            "status": status,
            "protocol_version": PROTOCOL_VERSION,
            "config": self.active.as_ref().map(|a| &a.config),
            "client_seq_gaps": self.client_seq_gaps,
            "warnings": self.warnings,
        });
        atomic::write_dir(
            &dir,
            |p| p.join("session.json").is_file(),
            |staging| {
                std::fs::write(staging.join("session.json"), serde_json::to_string_pretty(&meta)?)?;
                match self.active.as_ref().map(|a| &a.body) {
                    Some(Body::Drive(d)) => {
                        let mut log = serde_json::to_string(&d.header)?;
                        log.push('\n');
                        for l in &d.lines {
                            log.push_str(l);
                            log.push('\n');
                        }
                        std::fs::write(staging.join("trajectory.jsonl"), log)?;
                        let mut notes = String::new();
                        for n in &d.notes {
                            notes.push_str(&serde_json::to_string(n)?);
                            notes.push('\n');
                        }
                        std::fs::write(staging.join("notifications.jsonl"), notes)?;
                    }
                    Some(Body::Quiz(q)) => {
                        let io = |e: formats::FormatError| std::io::Error::other(e.to_string());
                        formats::write_records(&staging.join("records.csv"), &q.records).map_err(io)?;
                        formats::write_ratings(&staging.join("ratings.csv"), &q.ratings()).map_err(io)?;
                        if let Some(report) = &q.report {
                            formats::write_report(&staging.join("report.json"), report).map_err(io)?;
                        }
                    }
                    Some(Body::Replay(_)) | None => {}
                }
                Ok(())
            },
        )?;
        Ok(dir)
    }

    /// Tick lines of a preview or compare session so far.
    pub fn trajectory(&self) -> Option<(&LogHeader, &[String])> {
        match &self.active {
            Some(Active { body: Body::Drive(d), .. }) => Some((&d.header, &d.lines)),
            _ => None,
        }
    }
}

impl Drive {
    /// One tick: delegates observe, the ego command is resolved, the world steps.
    fn step(&mut self) -> (String, Vec<Notification>, Option<u64>) {
        let mut notes = Vec::new();
        for a in &mut self.attached {
            if let Some(n) = a.observe(&self.world) {
                *self.summary.notifications.entry(n.brand.clone()).or_default() += 1;
                notes.push(n);
            }
        }
        let mut rejected = None;
        let cmd = match &self.script {
            Some(brand) => act(&EgoView::from_world(&self.world, &brand.params), &brand.params).action,
            None => {
                let accel = PEDAL_ACCEL[(self.pedal + 1) as usize];
                let mut lane_change = LaneChange::None;
                if let Some((dir, seq)) = self.lane_request.take() {
                    if manual_change_allowed(&self.world, dir) {
                        lane_change = dir;
                    } else {
                        rejected = Some(seq);
                        self.summary.rejected_lane_requests += 1;
                    }
                }
                LowLevelAction::new(accel, lane_change)
            }
        };
        let before = self.world.clone();
        let report = self.world.step(cmd);
        let line = TickRecord::new(&before, cmd, &report).to_line();
        self.summary.ticks += 1;
        self.summary.lane_changes += usize::from(report.lane_change_started.is_some());
        self.lines.push(line.clone());
        self.notes.extend(notes.iter().cloned());
        (line, notes, rejected)
    }
}

fn manual_change_allowed(world: &WorldState, dir: LaneChange) -> bool {
    let ego = &world.ego;
    let Some(target) = ego.lane.shifted(dir) else {
        return false;
    };
    if ego.mid_maneuver() {
        return false;
    }
    let g = world.ego_gaps();
    let gaps = g.lane(target);
    gaps.lead_gap >= GAP_FLOOR && gaps.rear_gap >= GAP_FLOOR
}

impl Quiz {
    fn ratings(&self) -> Vec<AggressivenessRating> {
        self.rating
            .map(|rating| AggressivenessRating {
                subject_id: self.subject_id.clone(),
                rating,
            })
            .into_iter()
            .collect()
    }
}

fn start_quiz(config: &StartSession) -> Result<Quiz, Reject> {
    let dir = config
        .clips_dir
        .as_ref()
        .ok_or_else(|| reject("invalid_config", "quiz mode needs clips_dir"))?;
    let subject_id = config
        .subject_id
        .clone()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| reject("invalid_config", "quiz mode needs subject_id"))?;
    let group = config.group.ok_or_else(|| reject("invalid_config", "quiz mode needs group"))?;
    let manifest = formats::load_clips_dir(dir).map_err(|e| reject("invalid_config", e))?;
    let mut slices = Vec::new();
    for clip in &manifest.clips {
        let path = dir.join(formats::slice_file_name(clip));
        let text = std::fs::read(&path).map_err(|e| reject("invalid_config", format!("{}: {e}", path.display())))?;
        let log = read_log(text.as_slice()).map_err(|e| reject("invalid_config", format!("{}: {e}", path.display())))?;
        slices.push((log.header, log.lines));
    }
    Ok(Quiz {
        manifest,
        slices,
        current: 0,
        frame: 0,
        subject_id,
        group,
        records: Vec::new(),
        rating: None,
        report: None,
    })
}

fn start_replay(config: &StartSession) -> Result<Replay, Reject> {
    let path = config.log.as_ref().ok_or_else(|| reject("invalid_config", "replay mode needs log"))?;
    if !(config.speed.is_finite() && config.speed >= 0.0) {
        return Err(reject("invalid_config", "speed must be zero or positive"));
    }
    let file = std::fs::File::open(path).map_err(|e| reject("invalid_config", format!("{}: {e}", path.display())))?;
    let log = read_log(std::io::BufReader::new(file)).map_err(|e| reject("invalid_config", e))?;
    let summary = SessionSummary {
        truncated_at: log.truncated_at,
        ..Default::default()
    };
    Ok(Replay { log, next: 0, summary })
}
