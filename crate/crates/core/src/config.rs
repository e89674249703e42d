//! Engine configuration file (JSON) and the builders that turn it into a
//! running gateway and sandbox.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    Backend, Gateway, GatewayError, HttpBackend, HttpBackendConfig, PromptLibrary, PromptLimits,
    RecordingBackend, ReplayBackend, Script, ScriptedBackend,
};
use crate::orchestrator::SessionConfig;
use crate::policy::ModelId;
use crate::sandbox::{MockShim, ProcessShim, Sandbox, SandboxError, SandboxPolicy, ShimTransport};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{0}")]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Sandbox(#[from] SandboxError),
    #[error("{0}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxSettings {
    #[serde(flatten)]
    pub policy: SandboxPolicy,
    /// Program and arguments that start the shim.
    pub command: Vec<String>,
    pub working_dir: Option<PathBuf>,
    pub grace_s: f64,
    /// JSON list (or object) of known-good programs. When set, tests run
    /// in-process against [`MockShim`] instead of starting the shim.
    pub mock_solutions: Option<PathBuf>,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        SandboxSettings {
            policy: SandboxPolicy::default(),
            command: vec!["python3".into(), "-I".into(), "shim/colearn_shim.py".into()],
            working_dir: None,
            grace_s: 2.0,
            mock_solutions: None,
        }
    }
}

impl SandboxSettings {
    pub fn process_shim(&self, base: &Path) -> Result<ProcessShim, ConfigError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| ConfigError::Missing("sandbox.command is empty".into()))?;
        // Relative script paths are taken relative to the config file.
        let args = args
            .iter()
            .map(|a| {
                let p = Path::new(a);
                if p.is_relative() && !a.starts_with('-') && base.join(p).exists() {
                    base.join(p).display().to_string()
                } else {
                    a.clone()
                }
            })
            .collect();
        let mut shim = ProcessShim::new(program.clone(), args);
        shim.working_dir = self.working_dir.clone();
        shim.grace = std::time::Duration::from_secs_f64(self.grace_s.max(0.0));
        Ok(shim)
    }

    pub fn build(&self, base: &Path) -> Result<Sandbox, ConfigError> {
        let transport: Arc<dyn ShimTransport> = match &self.mock_solutions {
            Some(path) => Arc::new(load_mock(&base.join(path))?),
            None => Arc::new(self.process_shim(base)?),
        };
        Ok(Sandbox::new(transport, self.policy)?)
    }
}

fn load_mock(path: &Path) -> Result<MockShim, ConfigError> {
    let invalid = |message: String| ConfigError::Invalid {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let solutions: Vec<String> = match serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))? {
        serde_json::Value::Object(map) => map.into_iter().map(|(_, v)| v).collect(),
        serde_json::Value::Array(items) => items,
        _ => return Err(invalid("expected a list or an object of programs".into())),
    }
    .into_iter()
    .map(|v| {
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| invalid("programs must be strings".into()))
    })
    .collect::<Result<_, _>>()?;
    Ok(MockShim::solutions(solutions))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub limits: PromptLimits,
    pub prompts_dir: Option<PathBuf>,
    /// Live endpoints per model.
    pub models: BTreeMap<ModelId, HttpBackendConfig>,
    /// Script used in scripted mode.
    pub script: Option<PathBuf>,
    /// Trace written in live mode and read in replay mode.
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Live,
    Scripted,
    Replay,
}

impl std::str::FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendMode::Live),
            "scripted" => Ok(BackendMode::Scripted),
            "replay" => Ok(BackendMode::Replay),
            other => Err(format!("unknown backend mode `{other}` (live, scripted, replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSettings {
    pub addr: String,
    pub max_concurrent: usize,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings {
            addr: "127.0.0.1:8080".into(),
            max_concurrent: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub session: SessionConfig,
    pub sandbox: SandboxSettings,
    pub gateway: GatewaySettings,
    pub serve: ServeSettings,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg: EngineConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths();
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: path.display().to_string(),
            message,
        })?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self) {
        let base = self.base_dir.clone();
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.gateway.prompts_dir);
        fix(&mut self.gateway.script);
        fix(&mut self.gateway.trace);
        fix(&mut self.sandbox.mock_solutions);
    }

    pub fn validate(&self) -> Result<(), String> {
        self.session.validate().map_err(|e| e.to_string())?;
        self.sandbox.policy.validate().map_err(|e| e.to_string())?;
        if self.session.memory_capacity > self.gateway.limits.memory_capacity {
            return Err(format!(
                "session.memory_capacity {} exceeds gateway.limits.memory_capacity {}",
                self.session.memory_capacity, self.gateway.limits.memory_capacity
            ));
        }
        if self.serve.max_concurrent == 0 {
            return Err("serve.max_concurrent must be >= 1".into());
        }
        Ok(())
    }

    /// Keeps the prompt memory bound in step with the session's.
    pub fn set_memory_capacity(&mut self, capacity: usize) {
        self.session.memory_capacity = capacity;
        self.gateway.limits.memory_capacity = capacity;
    }

    pub fn prompt_library(&self) -> Result<PromptLibrary, ConfigError> {
        Ok(match &self.gateway.prompts_dir {
            Some(dir) => PromptLibrary::from_dir(dir)?,
            None => PromptLibrary::default(),
        })
    }

    /// Builds the gateway for a backend mode. Returns the replay backend as
    /// well so callers can check that the trace was fully consumed.
    pub fn build_gateway(
        &self,
        mode: BackendMode,
    ) -> Result<(Gateway, Option<Arc<ReplayBackend>>), ConfigError> {
        let mut gateway = Gateway::new(self.prompt_library()?, self.gateway.limits.clone());
        let mut replay = None;
        match mode {
            BackendMode::Live => {
                if self.gateway.models.is_empty() {
                    return Err(ConfigError::Missing(
                        "live mode needs gateway.models endpoints".into(),
                    ));
                }
                for (model, http) in &self.gateway.models {
                    let mut backend: Arc<dyn Backend> = Arc::new(HttpBackend::new(http.clone()));
                    if let Some(trace) = &self.gateway.trace {
                        backend = Arc::new(RecordingBackend::to_file(backend, trace)?);
                    }
                    gateway.register(model.clone(), backend);
                }
            }
            BackendMode::Scripted => {
                let path = self
                    .gateway
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Missing("scripted mode needs gateway.script".into()))?;
                let mut backend: Arc<dyn Backend> = Arc::new(ScriptedBackend::new(Script::load(path)?));
                if let Some(trace) = &self.gateway.trace {
                    backend = Arc::new(RecordingBackend::to_file(backend, trace)?);
                }
                gateway.set_fallback(backend);
            }
            BackendMode::Replay => {
                let path = self
                    .gateway
                    .trace
                    .as_ref()
                    .ok_or_else(|| ConfigError::Missing("replay mode needs gateway.trace".into()))?;
                let backend = Arc::new(ReplayBackend::from_file(path)?);
                gateway.set_fallback(backend.clone());
                replay = Some(backend);
            }
        }
        Ok((gateway, replay))
    }

    pub fn build_sandbox(&self) -> Result<Sandbox, ConfigError> {
        self.sandbox.build(&self.base_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(EngineConfig::default().validate().is_ok());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"session":{"max_loops":3},"sandbox":{"per_case_timeout_s":2.0},"gateway":{"script":"s.json"}}"#,
        )
        .unwrap();
        let cfg = EngineConfig::load(&path).unwrap();
        assert_eq!(cfg.session.max_loops, 3);
        assert_eq!(cfg.session.memory_capacity, 3);
        assert_eq!(cfg.sandbox.policy.per_case_timeout_s, 2.0);
        assert_eq!(cfg.sandbox.policy.total_timeout_s, 60.0);
        assert_eq!(cfg.gateway.script, Some(dir.path().join("s.json")));
    }

    #[test]
    fn missing_file_names_path() {
        let err = EngineConfig::load(Path::new("/nonexistent/cfg.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.json"));
    }

    #[test]
    fn invalid_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"session":{"max_loops":0}}"#).unwrap();
        assert!(matches!(
            EngineConfig::load(&path),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn mock_solutions_accept_list_or_object() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [crate::sandbox::TestCase::basic("assert f(1) == 2").unwrap()];
        for body in [
            r#"["def f(x):\n    return x + 1"]"#,
            r#"{"t": "def f(x):\n    return x + 1"}"#,
        ] {
            std::fs::write(dir.path().join("m.json"), body).unwrap();
            let settings = SandboxSettings {
                mock_solutions: Some("m.json".into()),
                ..SandboxSettings::default()
            };
            let sb = settings.build(dir.path()).unwrap();
            assert!(sb
                .evaluate("def f(x):\n    return x + 1", &cases)
                .unwrap()
                .all_passed());
            assert!(!sb
                .evaluate("def f(x):\n    return x", &cases)
                .unwrap()
                .all_passed());
        }
        std::fs::write(dir.path().join("m.json"), "[1]").unwrap();
        let settings = SandboxSettings {
            mock_solutions: Some("m.json".into()),
            ..SandboxSettings::default()
        };
        assert!(matches!(
            settings.build(dir.path()),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("replay".parse::<BackendMode>(), Ok(BackendMode::Replay));
        assert!("bogus".parse::<BackendMode>().is_err());
    }

    #[test]
    fn scripted_mode_requires_script() {
        let cfg = EngineConfig::default();
        assert!(matches!(
            cfg.build_gateway(BackendMode::Scripted),
            Err(ConfigError::Missing(_))
        ));
        assert!(matches!(
            cfg.build_gateway(BackendMode::Live),
            Err(ConfigError::Missing(_))
        ));
    }
}
