//! WebSocket session server. One session per connection on `/ws`; everything
//! else is served from the static directory.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use autopreview_core::autopilot::BrandRegistry;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::Notify;
use tower_http::services::ServeDir;

use crate::session::{Outbox, Outgoing, Session};

pub const OUTBOX_CAPACITY: usize = 256;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub brands: BrandRegistry,
    /// Persistence root; sessions are not saved when unset.
    pub data_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

struct Shared {
    config: ServerConfig,
    next_id: AtomicU64,
    epoch: u64,
}

impl Shared {
    fn session_id(&self) -> String {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        format!("{:x}-{n}", self.epoch)
    }
}

pub fn router(config: ServerConfig) -> Router {
    let epoch = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let static_dir = config.static_dir.clone();
    let shared = Arc::new(Shared {
        config,
        next_id: AtomicU64::new(1),
        epoch,
    });
    let app = Router::new().route("/ws", get(upgrade)).with_state(shared);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Binds and serves until the process is interrupted.
pub async fn serve(addr: SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| run_connection(socket, shared))
}

struct Queue {
    outbox: Mutex<Outbox>,
    ready: Notify,
}

impl Queue {
    fn push_all(&self, msgs: Vec<Outgoing>) {
        if msgs.is_empty() {
            return;
        }
        let mut outbox = self.outbox.lock().expect("outbox lock");
        for m in msgs {
            outbox.push(m);
        }
        drop(outbox);
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<Outgoing> {
        self.outbox.lock().expect("outbox lock").pop()
    }
}

async fn run_connection(socket: WebSocket, shared: Arc<Shared>) {
    let (mut sink, mut stream) = socket.split();
    let queue = Arc::new(Queue {
        outbox: Mutex::new(Outbox::new(OUTBOX_CAPACITY)),
        ready: Notify::new(),
    });

    // The writer drains the outbox so a slow client never stalls the stepper.
    let writer_queue = queue.clone();
    let writer = tokio::spawn(async move {
        loop {
            while let Some(msg) = writer_queue.pop() {
                if sink.send(Message::Text(msg.text.into())).await.is_err() {
                    return;
                }
            }
            writer_queue.ready.notified().await;
        }
    });

    let mut session = Session::new(shared.session_id(), shared.config.brands.clone());
    let mut interval = tokio::time::interval(Duration::from_millis(100));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut gaps_seen = 0;
    loop {
        let fast = session.mode().is_some() && session.tick_interval().is_none() && !session.is_finished();
        tokio::select! {
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => {
                    queue.push_all(session.handle(text.as_str()));
                    if session.client_seq_gaps() != gaps_seen {
                        gaps_seen = session.client_seq_gaps();
                        eprintln!("session {}: {gaps_seen} client seq numbers skipped so far", session.id());
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            _ = interval.tick(), if !fast => {
                if let Some(period) = session.tick_interval() {
                    if period != interval.period() {
                        interval = tokio::time::interval(period);
                        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                    }
                }
                queue.push_all(session.tick());
            }
            _ = tokio::task::yield_now(), if fast => {
                queue.push_all(session.tick());
            }
        }
        if session.is_finished() {
            persist(&session, &shared);
            // Let the writer flush the report, then keep reading until the client leaves.
            while let Some(frame) = stream.next().await {
                match frame {
                    Ok(Message::Text(text)) => queue.push_all(session.handle(text.as_str())),
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => {}
                }
            }
            break;
        }
    }
    if !session.is_finished() {
        persist(&session, &shared);
    }
    // Give queued frames a moment to go out before dropping the socket.
    let drain = async {
        while !queue.outbox.lock().expect("outbox lock").is_empty() {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    };
    let _ = tokio::time::timeout(Duration::from_secs(1), drain).await;
    writer.abort();
}

fn persist(session: &Session, shared: &Shared) {
    let Some(root) = &shared.config.data_dir else {
        return;
    };
    if session.mode().is_none() {
        return;
    }
    if let Err(e) = session.persist(root) {
        eprintln!("session {}: could not persist: {e}", session.id());
    }
}
