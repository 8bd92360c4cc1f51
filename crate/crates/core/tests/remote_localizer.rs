//! Remote localizer against an in-process HTTP stub.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use longvid_core::localizer::{
    localize, LocalizationRequest, LocalizeError, RemoteConfig, RemoteLocalizer, PROMPT_VERSION,
};
use longvid_core::planner::partition_segments;

#[derive(Clone)]
struct Scripted {
    status: u16,
    body: String,
    delay: Duration,
}

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

/// Serves `script` in order; the last entry repeats.
fn serve(script: Vec<Scripted>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/localize", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, p, b) = (hits.clone(), peak.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = h.fetch_add(1, Ordering::SeqCst);
            let step = script[n.min(script.len() - 1)].clone();
            let (active, peak, bodies) = (active.clone(), p.clone(), b.clone());
            thread::spawn(move || {
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let body = read_request(&mut stream);
                bodies.lock().unwrap().push(body);
                thread::sleep(step.delay);
                active.fetch_sub(1, Ordering::SeqCst);
                let resp = format!(
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    step.status,
                    step.body.len(),
                    step.body
                );
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    Stub {
        url,
        hits,
        peak,
        bodies,
    }
}

fn ok(text: &str) -> Scripted {
    Scripted {
        status: 200,
        body: serde_json::json!({ "text": text }).to_string(),
        delay: Duration::ZERO,
    }
}

fn request() -> LocalizationRequest {
    let times: Vec<f64> = (0..12).map(|i| 30.0 + 60.0 * i as f64).collect();
    let segs = partition_segments(&times, 720.0).unwrap();
    let mut req = LocalizationRequest::new("Which drawer did I open last?", &times, &segs, 2);
    req.options = Some(["left".into(), "right".into(), "top".into(), "none".into()]);
    req
}

fn client(url: &str, retries: u32) -> RemoteLocalizer {
    RemoteLocalizer::new(RemoteConfig {
        endpoint: url.to_string(),
        model: "stub-vlm".into(),
        timeout_ms: 2_000,
        max_in_flight: 2,
        max_retries: retries,
        include_options: false,
        inline_images: false,
    })
    .unwrap()
}

#[test]
fn parses_reply_and_sends_contract_fields() {
    let stub = serve(vec![ok("Looking at the order of events... Segments: 7, 8")]);
    let res = localize(&client(&stub.url, 0), &request()).unwrap();
    assert_eq!(res.selected, BTreeSet::from([7, 8]));
    let bodies = stub.bodies.lock().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["model"], "stub-vlm");
    assert_eq!(sent["question"], "Which drawer did I open last?");
    assert_eq!(sent["frames"].as_array().unwrap().len(), 12);
    assert_eq!(sent["frames"][3]["segment"], 3);
    assert_eq!(sent["frames"][3]["t_s"], 210.0);
    assert!(sent.get("options").is_none());
    assert!(sent["instruction"]
        .as_str()
        .unwrap()
        .contains("Frame 11 @ 11:30"));
    assert_eq!(PROMPT_VERSION, "localize_v1");
}

#[test]
fn retries_use_only_the_successful_attempt() {
    let stub = serve(vec![
        Scripted {
            status: 503,
            body: r#"{"text":"Segments: 1"}"#.into(),
            delay: Duration::ZERO,
        },
        ok("segment 4"),
    ]);
    let res = localize(&client(&stub.url, 2), &request()).unwrap();
    assert_eq!(res.selected, BTreeSet::from([4]));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn gives_up_after_retries() {
    let stub = serve(vec![Scripted {
        status: 500,
        body: "boom".into(),
        delay: Duration::ZERO,
    }]);
    let err = localize(&client(&stub.url, 2), &request()).unwrap_err();
    assert!(
        matches!(err, LocalizeError::Status { status: 500, .. }),
        "{err}"
    );
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(vec![Scripted {
        status: 400,
        body: "bad".into(),
        delay: Duration::ZERO,
    }]);
    let err = localize(&client(&stub.url, 5), &request()).unwrap_err();
    assert!(matches!(err, LocalizeError::Status { status: 400, .. }));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn times_out() {
    let stub = serve(vec![Scripted {
        delay: Duration::from_millis(1500),
        ..ok("Segments: 1")
    }]);
    let mut cfg = client(&stub.url, 0).config().clone();
    cfg.timeout_ms = 200;
    let err = localize(&RemoteLocalizer::new(cfg).unwrap(), &request()).unwrap_err();
    assert!(matches!(err, LocalizeError::Timeout(_)), "{err}");
}

#[test]
fn unparsable_reply_is_typed_error() {
    let stub = serve(vec![ok("I cannot tell from these images.")]);
    let err = localize(&client(&stub.url, 0), &request()).unwrap_err();
    assert!(matches!(err, LocalizeError::Parse(_)));
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let err = localize(&client(&url, 1), &request()).unwrap_err();
    assert!(matches!(err, LocalizeError::Transport(_)), "{err}");
}

#[test]
fn options_sent_when_enabled() {
    let stub = serve(vec![ok("Segments: 2")]);
    let mut cfg = client(&stub.url, 0).config().clone();
    cfg.include_options = true;
    localize(&RemoteLocalizer::new(cfg).unwrap(), &request()).unwrap();
    let sent: serde_json::Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["options"][1], "right");
    assert!(sent["instruction"].as_str().unwrap().contains("(B) right"));
}

#[test]
fn in_flight_requests_are_bounded() {
    let stub = serve(vec![Scripted {
        delay: Duration::from_millis(150),
        ..ok("Segments: 5")
    }]);
    let c = client(&stub.url, 0);
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let c = c.clone();
            thread::spawn(move || localize(&c, &request()).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().selected, BTreeSet::from([5]));
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 6);
    assert!(stub.peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn images_inline_or_by_uri() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("kf0.jpg");
    std::fs::write(&img, [0xffu8, 0xd8, 0xff]).unwrap();
    let mut req = request();
    req.keyframes[0].frame = Some(img);

    let stub = serve(vec![ok("Segments: 0")]);
    localize(&client(&stub.url, 0), &req).unwrap();
    let sent: serde_json::Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
    assert!(sent["frames"][0]["image"]
        .as_str()
        .unwrap()
        .starts_with("file://"));
    assert!(sent["frames"][1].get("image").is_none());

    let stub = serve(vec![ok("Segments: 0")]);
    let mut cfg = client(&stub.url, 0).config().clone();
    cfg.inline_images = true;
    localize(&RemoteLocalizer::new(cfg).unwrap(), &req).unwrap();
    let sent: serde_json::Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["frames"][0]["image"], "/9j/");
}
