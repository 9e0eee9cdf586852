use std::time::{Duration, Instant};

use autopreview::core::autopilot::BrandRegistry;
use autopreview::server::{router, ServerConfig};
use autopreview::session::{client_frame, Mode, StartSession};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

async fn spawn(config: ServerConfig) -> std::net::SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(config)).await.unwrap() });
    addr
}

async fn next_json<S>(ws: &mut S) -> Value
where
    S: futures::Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

#[tokio::test]
async fn preview_session_over_loopback() {
    let data = tempfile::tempdir().unwrap();
    let statics = tempfile::tempdir().unwrap();
    std::fs::write(statics.path().join("index.html"), "<h1>preview</h1>").unwrap();
    let addr = spawn(ServerConfig {
        brands: BrandRegistry::builtin(),
        data_dir: Some(data.path().to_path_buf()),
        static_dir: Some(statics.path().to_path_buf()),
    })
    .await;

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let mut start = StartSession::new(Mode::Preview);
    start.brands = vec!["BrandA".into()];
    start.seed = 2;
    start.duration_s = 3.0;
    ws.send(Message::Text(client_frame("start_session", None, 1, &start).into())).await.unwrap();
    let started = next_json(&mut ws).await;
    assert_eq!(started["type"], "session_started");
    let id = started["session_id"].as_str().unwrap().to_string();

    ws.send(Message::Text(client_frame("control", Some(&id), 2, json!({"accel": 1})).into())).await.unwrap();

    // Ten ticks a second on the server clock.
    let t0 = Instant::now();
    let mut states = 0;
    let mut last_seq = started["seq"].as_u64().unwrap();
    let report = loop {
        let m = next_json(&mut ws).await;
        let seq = m["seq"].as_u64().unwrap();
        assert!(seq > last_seq);
        last_seq = seq;
        match m["type"].as_str().unwrap() {
            "state" => states += 1,
            "report" => break m,
            "notification" => {}
            other => panic!("unexpected {other}: {m}"),
        }
    };
    let elapsed = t0.elapsed();
    assert_eq!(states, 30);
    assert_eq!(report["payload"]["ticks"], 30);
    assert!(elapsed >= Duration::from_millis(2500), "{elapsed:?}");
    ws.close(None).await.unwrap();

    // The finished session is on disk.
    let dir = data.path().join("sessions").join(&id);
    for _ in 0..50 {
        if dir.join("session.json").is_file() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let meta: Value = serde_json::from_slice(&std::fs::read(dir.join("session.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "complete");
    let log = std::fs::read_to_string(dir.join("trajectory.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 31);

    // Static assets come from the same port.
    let mut tcp = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    tcp.write_all(b"GET /index.html HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    tcp.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("<h1>preview</h1>"));
}

#[tokio::test]
async fn dropped_connection_is_saved_incomplete() {
    let data = tempfile::tempdir().unwrap();
    let addr = spawn(ServerConfig {
        brands: BrandRegistry::builtin(),
        data_dir: Some(data.path().to_path_buf()),
        static_dir: None,
    })
    .await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let mut start = StartSession::new(Mode::Compare);
    start.brands = vec!["BrandA".into(), "BrandC".into()];
    ws.send(Message::Text(client_frame("start_session", None, 1, &start).into())).await.unwrap();
    let id = next_json(&mut ws).await["session_id"].as_str().unwrap().to_string();
    // Malformed frames get an error and the session keeps going.
    ws.send(Message::Text("{oops".into())).await.unwrap();
    loop {
        let m = next_json(&mut ws).await;
        if m["type"] == "error" {
            assert_eq!(m["payload"]["code"], "malformed");
            break;
        }
    }
    assert_eq!(next_json(&mut ws).await["type"], "state");
    drop(ws);

    let meta_path = data.path().join("sessions").join(&id).join("session.json");
    for _ in 0..100 {
        if meta_path.is_file() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let meta: Value = serde_json::from_slice(&std::fs::read(&meta_path).unwrap()).unwrap();
    assert_eq!(meta["status"], "incomplete");
}
