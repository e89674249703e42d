mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use colearn_core::bench::{run_bench, BenchOptions, Method};
use colearn_core::gateway::{
    build_prompt, read_trace, AgentRole, Backend, ChatRole, DialoguePair, Gateway, GatewayError, HttpBackend,
    HttpBackendConfig, PromptLibrary, PromptLimits, RecordingBackend, ReplayBackend, Script, ScriptedBackend,
    ScriptedReply,
};
use colearn_core::orchestrator::{Engine, SessionConfig};
use colearn_core::policy::ModelId;
use colearn_core::sandbox::{MockShim, Sandbox, SandboxPolicy};
use serde_json::Value;

fn bundle(role: AgentRole, payload: &str, model: &str) -> colearn_core::gateway::PromptBundle {
    build_prompt(
        &PromptLibrary::default(),
        role,
        &[],
        payload,
        &model.into(),
        &PromptLimits::default(),
    )
    .unwrap()
}

fn pair(i: usize) -> DialoguePair {
    DialoguePair {
        user: format!("u{i}"),
        assistant: format!("a{i}"),
    }
}

#[test]
fn prompt_layout_and_limits() {
    let lib = PromptLibrary::default();
    let limits = PromptLimits::default();
    let memory = [pair(1), pair(2)];
    let b = build_prompt(
        &lib,
        AgentRole::Correction,
        &memory,
        "fix this",
        &"ernie".into(),
        &limits,
    )
    .unwrap();
    let roles: Vec<ChatRole> = b.turns.iter().map(|t| t.role).collect();
    use ChatRole::*;
    assert_eq!(roles, [System, User, Assistant, User, Assistant, User]);
    assert_eq!(b.turns[1].content, "u1");
    assert_eq!(b.payload(), "fix this");
    assert_eq!(b.turns[0].content, lib.get(AgentRole::Correction));

    let four = [pair(1), pair(2), pair(3), pair(4)];
    assert!(matches!(
        build_prompt(&lib, AgentRole::Correction, &four, "x", &"ernie".into(), &limits),
        Err(GatewayError::MemoryOverCapacity { got: 4, capacity: 3 })
    ));
    let mut tight = PromptLimits::default();
    tight.max_input_chars.insert("spark".into(), 10);
    assert!(matches!(
        build_prompt(&lib, AgentRole::Correction, &[], "x", &"spark".into(), &tight),
        Err(GatewayError::OverlongPrompt { .. })
    ));
    assert!(build_prompt(&lib, AgentRole::Correction, &[], "x", &"ernie".into(), &tight).is_ok());
    assert!(matches!(
        build_prompt(&lib, AgentRole::Correction, &[], "  ", &"ernie".into(), &limits),
        Err(GatewayError::EmptyTurn("user"))
    ));
}

#[test]
fn prompt_directory_overrides_one_role() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("annotation.txt"), "Comment the code.\n").unwrap();
    let lib = PromptLibrary::from_dir(dir.path()).unwrap();
    assert_eq!(lib.get(AgentRole::Annotation), "Comment the code.");
    assert_eq!(
        lib.get(AgentRole::Correction),
        PromptLibrary::default().get(AgentRole::Correction)
    );
    assert!(PromptLibrary::from_dir(&dir.path().join("missing")).is_err());
}

#[test]
fn digest_depends_on_content() {
    let a = bundle(AgentRole::Correction, "one", "ernie");
    assert_eq!(a.digest(), bundle(AgentRole::Correction, "one", "ernie").digest());
    assert_ne!(a.digest(), bundle(AgentRole::Correction, "two", "ernie").digest());
    assert_ne!(a.digest(), bundle(AgentRole::Correction, "one", "spark").digest());
    assert_eq!(a.digest().len(), 64);
}

#[test]
fn concurrent_conversations_keep_their_own_order() {
    let mut script = Script::default();
    for c in 0..8 {
        let replies = (0..20)
            .map(|i| ScriptedReply::text(format!("c{c}-{i}"), 0.0))
            .collect();
        script.push(Some(&format!("c{c}")), None, AgentRole::Correction, replies);
    }
    let backend = Arc::new(ScriptedBackend::new(script));
    let b = bundle(AgentRole::Correction, "p", "ernie");
    thread::scope(|s| {
        for c in 0..8 {
            let (backend, b) = (backend.clone(), b.clone());
            s.spawn(move || {
                for i in 0..20 {
                    let got = backend.complete(&b, &format!("c{c}")).unwrap().text;
                    assert_eq!(got, format!("c{c}-{i}"));
                }
            });
        }
    });
    assert_eq!(backend.remaining(), 0);
    assert!(matches!(
        backend.complete(&b, "c0"),
        Err(GatewayError::ScriptExhausted { .. })
    ));
}

#[test]
fn script_lookup_prefers_specific_keys() {
    let mut script = Script::default();
    script
        .push(
            Some("c"),
            Some(&"ernie".into()),
            AgentRole::Correction,
            vec![ScriptedReply::text("conv+model", 0.0)],
        )
        .push(
            Some("c"),
            None,
            AgentRole::Correction,
            vec![ScriptedReply::text("conv", 0.0)],
        )
        .push(
            None,
            Some(&"ernie".into()),
            AgentRole::Correction,
            vec![ScriptedReply::text("model", 0.0)],
        );
    script.default_reply(None, AgentRole::Correction, ScriptedReply::echo("echo:", 0.0));
    let backend = ScriptedBackend::new(script);
    let b = bundle(AgentRole::Correction, "p", "ernie");
    let got: Vec<String> = (0..4).map(|_| backend.complete(&b, "c").unwrap().text).collect();
    assert_eq!(got, ["conv+model", "conv", "model", "echo:p"]);
}

#[test]
fn script_round_trips_through_json() {
    let script = common::mini_script();
    let text = serde_json::to_string(&script).unwrap();
    let back: Script = serde_json::from_str(&text).unwrap();
    assert_eq!(back, script);
}

fn engine_over(backend: Arc<dyn Backend>, prompts: PromptLibrary) -> Engine {
    let mut gateway = Gateway::new(prompts, PromptLimits::default());
    gateway.set_fallback(backend);
    let shim = MockShim::solutions(common::mini_solutions().into_values());
    let sandbox = Sandbox::new(Arc::new(shim), SandboxPolicy::default()).unwrap();
    Engine::new(Arc::new(gateway), Arc::new(sandbox), SessionConfig::default()).unwrap()
}

#[test]
fn recorded_bench_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let corpus = common::mini_corpus();
    let opts = BenchOptions {
        workers: 4,
        ..BenchOptions::default()
    };
    let scripted: Arc<dyn Backend> = Arc::new(ScriptedBackend::new(common::mini_script()));
    let recorder = Arc::new(RecordingBackend::to_file(scripted, &trace).unwrap());
    let live = run_bench(
        &corpus,
        &engine_over(recorder, PromptLibrary::default()),
        &Method::Erl,
        &opts,
    )
    .unwrap();

    let entries = read_trace(&trace).unwrap();
    // solved on loop k: k corrections, k - 1 interpretations, 1 annotation;
    // unsolved: 5 corrections and 4 interpretations
    let calls: usize = live
        .report
        .rows
        .iter()
        .map(|r| if r.solved { 2 * r.loops } else { 9 })
        .sum();
    assert_eq!(entries.len(), calls);
    let replay = Arc::new(ReplayBackend::new(entries));
    let again = run_bench(
        &corpus,
        &engine_over(replay.clone(), PromptLibrary::default()),
        &Method::Erl,
        &opts,
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&again).unwrap(),
        serde_json::to_string(&live).unwrap()
    );
    assert_eq!(replay.remaining(), 0);

    // a changed system prompt no longer matches the recorded digests
    let dir2 = tempfile::tempdir().unwrap();
    std::fs::write(dir2.path().join("correction.txt"), "Different instructions.").unwrap();
    let replay = Arc::new(ReplayBackend::from_file(&trace).unwrap());
    let prompts = PromptLibrary::from_dir(dir2.path()).unwrap();
    let drifted = run_bench(&corpus, &engine_over(replay, prompts), &Method::Erl, &opts).unwrap();
    assert_eq!(drifted.report.solved(), 0);
    assert!(drifted.report.rows[0]
        .failure_cause
        .as_deref()
        .unwrap()
        .contains("replay mismatch"));
}

#[test]
fn gateway_routes_by_model() {
    let mut one = Script::default();
    one.default_reply(None, AgentRole::Correction, ScriptedReply::text("from one", 0.0));
    let mut gateway = Gateway::new(PromptLibrary::default(), PromptLimits::default());
    gateway.register("ernie".into(), Arc::new(ScriptedBackend::new(one)));
    let b = bundle(AgentRole::Correction, "p", "ernie");
    assert_eq!(gateway.complete(&b, "c").unwrap().text, "from one");
    let other = bundle(AgentRole::Correction, "p", "spark");
    assert!(
        matches!(gateway.complete(&other, "c"), Err(GatewayError::BackendNotRegistered(m)) if m == ModelId::from("spark"))
    );
}

/// Serves `responses` in order (status, body), then 500s; returns the
/// captured request bodies and authorization headers.
/// Request bodies with their Authorization header.
type Seen = thread::JoinHandle<Vec<(Value, Option<String>)>>;

fn serve(responses: Vec<(u16, String)>) -> (String, Seen, Arc<AtomicUsize>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/chat", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let n = responses.len();
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses.into_iter().take(n) {
            let mut req = server.recv().unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let auth = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.to_string());
            seen.push((serde_json::from_str(&text).unwrap(), auth));
            req.respond(tiny_http::Response::from_string(body).with_status_code(status))
                .unwrap();
        }
        seen
    });
    (url, handle, hits)
}

#[test]
fn http_backend_speaks_wire_format() {
    let (url, handle, _) = serve(vec![(200, r#"{"content":"```python\nx = 1\n```"}"#.into())]);
    std::env::set_var("COLEARN_TEST_KEY", "sekret");
    let backend = HttpBackend::new(HttpBackendConfig {
        endpoint: url,
        api_key_env: Some("COLEARN_TEST_KEY".into()),
        remote_model: Some("ernie-4.0".into()),
        ..HttpBackendConfig::default()
    });
    let memory = [pair(1)];
    let b = build_prompt(
        &PromptLibrary::default(),
        AgentRole::Interpretation,
        &memory,
        "why?",
        &"ernie".into(),
        &PromptLimits::default(),
    )
    .unwrap();
    let c = backend.complete(&b, "conv").unwrap();
    assert_eq!(c.text, "```python\nx = 1\n```");
    assert!(c.elapsed_s >= 0.0);
    let seen = handle.join().unwrap();
    let (body, auth) = &seen[0];
    assert_eq!(body["model"], "ernie-4.0");
    assert_eq!(body["temperature"], 0.2);
    let roles: Vec<&str> = body["messages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["role"].as_str().unwrap())
        .collect();
    assert_eq!(roles, ["system", "user", "assistant", "user"]);
    assert_eq!(body["messages"][3]["content"], "why?");
    assert_eq!(auth.as_deref(), Some("Bearer sekret"));
}

#[test]
fn http_backend_retries_then_succeeds() {
    let (url, handle, hits) = serve(vec![
        (503, "busy".into()),
        (200, "not json".into()),
        (200, r#"{"content":"ok"}"#.into()),
    ]);
    let backend = HttpBackend::new(HttpBackendConfig {
        endpoint: url,
        retries: 2,
        backoff_ms: 1,
        temperature: None,
        ..HttpBackendConfig::default()
    });
    let c = backend
        .complete(&bundle(AgentRole::Correction, "p", "llama"), "c")
        .unwrap();
    assert_eq!(c.text, "ok");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    let seen = handle.join().unwrap();
    assert!(seen[0].0.get("temperature").is_none());
    assert!(seen[0].1.is_none());
}

#[test]
fn http_backend_gives_up_after_retries() {
    let (url, handle, hits) = serve(vec![(500, "a".into()), (500, "b".into())]);
    let backend = HttpBackend::new(HttpBackendConfig {
        endpoint: url,
        retries: 1,
        backoff_ms: 1,
        ..HttpBackendConfig::default()
    });
    let err = backend
        .complete(&bundle(AgentRole::Correction, "p", "llama"), "c")
        .unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { .. }));
    assert!(err.to_string().contains("2 attempts failed"));
    handle.join().unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn missing_api_key_is_unavailable() {
    let backend = HttpBackend::new(HttpBackendConfig {
        endpoint: "http://127.0.0.1:9/".into(),
        api_key_env: Some("COLEARN_TEST_KEY_THAT_IS_NOT_SET".into()),
        retries: 0,
        ..HttpBackendConfig::default()
    });
    let err = backend
        .complete(&bundle(AgentRole::Correction, "p", "llama"), "c")
        .unwrap_err();
    assert!(err.to_string().contains("COLEARN_TEST_KEY_THAT_IS_NOT_SET"));
}

#[test]
fn scripted_outage_is_unavailable() {
    let mut script = Script::default();
    script.push(
        None,
        None,
        AgentRole::Annotation,
        vec![ScriptedReply::unavailable()],
    );
    let backend = ScriptedBackend::new(script);
    assert!(matches!(
        backend.complete(&bundle(AgentRole::Annotation, "p", "x"), "c"),
        Err(GatewayError::BackendUnavailable { .. })
    ));
}
