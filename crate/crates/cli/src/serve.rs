//! HTTP front end: `POST /correct` runs one session, `GET /healthz` reports
//! liveness. Each worker thread handles one request at a time, so the
//! worker count caps concurrent sessions.

use std::io::{Read, Write};
use std::sync::Arc;
use std::thread;

use colearn_core::config::ServeSettings;
use colearn_core::corpus::parse_record;
use colearn_core::orchestrator::Engine;
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

const MAX_BODY_BYTES: u64 = 4 * 1024 * 1024;

pub fn run(settings: &ServeSettings, engine: Arc<Engine>) -> Result<(), String> {
    let server = Arc::new(Server::http(&settings.addr).map_err(|e| format!("{}: {e}", settings.addr))?);
    let addr = server
        .server_addr()
        .to_ip()
        .map(|a| a.to_string())
        .unwrap_or_else(|| settings.addr.clone());
    println!("listening on http://{addr}");
    std::io::stdout().flush().map_err(|e| e.to_string())?;

    let workers: Vec<_> = (0..settings.max_concurrent)
        .map(|_| {
            let server = server.clone();
            let engine = engine.clone();
            thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    handle(request, &engine);
                }
            })
        })
        .collect();
    for w in workers {
        w.join().map_err(|_| "worker panicked".to_string())?;
    }
    Ok(())
}

fn handle(mut request: Request, engine: &Engine) {
    let (status, body) = match (request.method(), request.url()) {
        (Method::Get, "/healthz") => (200, json!({"status": "ok"}).to_string()),
        (Method::Post, "/correct") => correct(&mut request, engine),
        (_, "/healthz" | "/correct") => (405, error("method not allowed")),
        _ => (404, error("not found")),
    };
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    // the client may have gone away; nothing to do about it
    let _ = request.respond(
        Response::from_string(body)
            .with_status_code(status)
            .with_header(header),
    );
}

fn correct(request: &mut Request, engine: &Engine) -> (u16, String) {
    let mut text = String::new();
    if let Err(e) = request.as_reader().take(MAX_BODY_BYTES).read_to_string(&mut text) {
        return (400, error(&format!("unreadable body: {e}")));
    }
    let task = match parse_record(&text, 1) {
        Ok(t) => t,
        Err(e) => return (400, error(&e.to_string())),
    };
    match engine.run_session(&task) {
        Ok(result) => match serde_json::to_string(&result) {
            Ok(body) => (200, body),
            Err(e) => (500, error(&e.to_string())),
        },
        Err(e) => (500, error(&e.to_string())),
    }
}

fn error(message: &str) -> String {
    json!({"error": message}).to_string()
}
