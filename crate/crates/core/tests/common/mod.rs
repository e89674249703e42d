#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use colearn_core::corpus::{load_corpus, TaskRecord};
use colearn_core::gateway::{AgentRole, Gateway, PromptLimits, Script, ScriptedBackend, ScriptedReply};
use colearn_core::orchestrator::{Engine, ModelStrategy, SessionConfig};
use colearn_core::sandbox::{MockShim, Sandbox, SandboxPolicy, ShimTransport};

pub const WRONG: &str = "def f(x):\n    return x";
pub const RIGHT: &str = "def f(x):\n    return x + 1";

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn mini_corpus() -> Vec<TaskRecord> {
    load_corpus(&data("mini_corpus.jsonl")).unwrap()
}

pub fn mini_solutions() -> BTreeMap<String, String> {
    serde_json::from_str(&std::fs::read_to_string(data("mini_solutions.json")).unwrap()).unwrap()
}

pub fn mini_script() -> Script {
    Script::load(&data("mini_script.json")).unwrap()
}

pub fn fenced(code: &str) -> String {
    format!("```python\n{code}\n```")
}

/// Task whose tests pass only for [`RIGHT`].
pub fn task(id: &str) -> TaskRecord {
    TaskRecord {
        task_id: id.to_string(),
        description: "Return x plus one.".into(),
        error_code: WRONG.into(),
        test_list: vec!["assert f(1) == 2".into(), "assert f(0) == 1".into()],
        challenge_test_list: vec!["assert f(-1) == 0".into()],
    }
}

/// Interpretation and annotation replies shared by most scripts.
pub fn base_script() -> Script {
    let mut script = Script::default();
    script
        .default_reply(
            None,
            AgentRole::Interpretation,
            ScriptedReply::text("The function returns its input unchanged.", 2.0),
        )
        .default_reply(
            None,
            AgentRole::Annotation,
            ScriptedReply::echo("# annotated\n", 1.0),
        );
    script
}

/// Correction replies for `id`: `k - 1` wrong answers then the right one,
/// or only wrong answers when `k` is `None`.
pub fn push_solve_at(script: &mut Script, id: &str, k: Option<usize>, max_loops: usize, elapsed_s: f64) {
    let wrong = ScriptedReply::text(fenced(WRONG), elapsed_s);
    let right = ScriptedReply::text(fenced(RIGHT), elapsed_s);
    let mut replies = vec![wrong; k.map_or(max_loops, |k| k - 1)];
    if k.is_some() {
        replies.push(right);
    }
    script.push(Some(id), None, AgentRole::Correction, replies);
}

pub fn engine_with(script: Script, shim: Arc<dyn ShimTransport>, config: SessionConfig) -> Engine {
    let limits = PromptLimits {
        memory_capacity: config.memory_capacity,
        ..PromptLimits::default()
    };
    let gateway = Gateway::uniform(Arc::new(ScriptedBackend::new(script)), limits);
    let sandbox = Sandbox::new(shim, SandboxPolicy::default()).unwrap();
    Engine::new(Arc::new(gateway), Arc::new(sandbox), config).unwrap()
}

pub fn engine(script: Script, config: SessionConfig) -> Engine {
    engine_with(script, Arc::new(MockShim::solutions([RIGHT])), config)
}

pub fn fixed(model: &str) -> SessionConfig {
    SessionConfig {
        strategy: ModelStrategy::Fixed { model: model.into() },
        ..SessionConfig::default()
    }
}

pub fn mini_engine() -> Engine {
    let shim = MockShim::solutions(mini_solutions().into_values());
    engine_with(mini_script(), Arc::new(shim), SessionConfig::default())
}
