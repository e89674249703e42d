//! The main agent's correction loop.
//!
//! A session picks an initial model from the code length, then repeats
//! correct → test until every case passes or the loop budget runs out.
//! After a failed round the current model explains the failure, the
//! explanation goes into the dialogue memory, and the policy reselects the
//! model for the next attempt. A passing candidate is annotated before it
//! is returned. Every hop between agents travels as an ACL message.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acl::{AgentId, Performative, Platform, PlatformConfig};
use crate::corpus::{CorpusError, TaskRecord};
use crate::gateway::{hex, AgentRole, Completion, DialoguePair, Gateway, GatewayError};
use crate::policy::{
    initial_model_by_length, score_models, select_model, ModelId, PolicyConfig, PolicyError, RewardLedger,
};
use crate::sandbox::{
    extract_error_message, CaseResult, Sandbox, SandboxError, TestCase, TestOutcome, Tier, Verdict,
};

pub const DEFAULT_MAX_LOOPS: usize = 5;

pub const MAIN_AGENT: &str = "main";
pub const CORRECTION_AGENT: &str = "correction";
pub const TEST_AGENT: &str = "test";
pub const INTERPRETATION_AGENT: &str = "interpretation";
pub const ANNOTATION_AGENT: &str = "annotation";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    InvalidTask(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Init,
    Correcting,
    Testing,
    Interpreting,
    Selecting,
    Annotating,
    DoneSuccess,
    DoneFailure,
}

impl SessionState {
    pub const ALL: [SessionState; 8] = [
        SessionState::Init,
        SessionState::Correcting,
        SessionState::Testing,
        SessionState::Interpreting,
        SessionState::Selecting,
        SessionState::Annotating,
        SessionState::DoneSuccess,
        SessionState::DoneFailure,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::DoneSuccess | SessionState::DoneFailure)
    }
}

/// Every edge the session machine may take.
pub const TRANSITIONS: &[(SessionState, SessionState)] = {
    use SessionState::*;
    &[
        (Init, Correcting),
        (Init, DoneFailure),
        (Correcting, Testing),
        (Correcting, DoneFailure),
        (Testing, Annotating),
        (Testing, Interpreting),
        (Testing, DoneFailure),
        (Interpreting, Selecting),
        (Interpreting, DoneFailure),
        (Selecting, Correcting),
        (Annotating, DoneSuccess),
    ]
};

pub fn transition_allowed(from: SessionState, to: SessionState) -> bool {
    TRANSITIONS.contains(&(from, to))
}

/// How the model for each attempt is chosen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelStrategy {
    /// Length-based initial choice, policy reselection after each failure.
    #[default]
    Erl,
    /// One model for the whole session.
    Fixed { model: ModelId },
}

/// Where the test agent's verdict comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSource {
    /// The task's own assert lists, run in the sandbox.
    #[default]
    Supplied,
    /// Asserts written by a model from the requirement, run in the sandbox.
    Generated,
    /// A model's PASS/FAIL judgment of the candidate.
    Judged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_loops: usize,
    pub memory_capacity: usize,
    pub strategy: ModelStrategy,
    pub test_source: TestSource,
    /// Run challenge asserts even when a basic assert failed.
    pub run_challenge_after_basic_failure: bool,
    /// Re-run the tests on the annotated code and fall back to the plain
    /// correction if they no longer pass.
    pub verify_annotation: bool,
    pub policy: PolicyConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            max_loops: DEFAULT_MAX_LOOPS,
            memory_capacity: crate::gateway::DEFAULT_MEMORY_CAPACITY,
            strategy: ModelStrategy::Erl,
            test_source: TestSource::Supplied,
            run_challenge_after_basic_failure: true,
            verify_annotation: true,
            policy: PolicyConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_loops < 1 {
            return Err(SessionError::InvalidConfig("max_loops must be >= 1".into()));
        }
        if self.memory_capacity < 1 {
            return Err(SessionError::InvalidConfig("memory_capacity must be >= 1".into()));
        }
        self.policy.validate()?;
        if let ModelStrategy::Fixed { model } = &self.strategy {
            if model.as_str().is_empty() {
                return Err(SessionError::InvalidConfig("fixed model id is empty".into()));
            }
        }
        Ok(())
    }

    /// Models the session's reward ledger tracks.
    pub fn models(&self) -> Vec<ModelId> {
        let mut models: Vec<ModelId> = self.policy.profiles.keys().cloned().collect();
        if let ModelStrategy::Fixed { model } = &self.strategy {
            if !models.contains(model) {
                models.push(model.clone());
                models.sort();
            }
        }
        models
    }
}

/// Bounded dialogue memory; the oldest pair is evicted first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRing {
    capacity: usize,
    pairs: VecDeque<DialoguePair>,
}

impl MemoryRing {
    pub fn new(capacity: usize) -> Self {
        MemoryRing {
            capacity,
            pairs: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn append(&mut self, pair: DialoguePair) {
        self.pairs.push_back(pair);
        while self.pairs.len() > self.capacity {
            self.pairs.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn to_vec(&self) -> Vec<DialoguePair> {
        self.pairs.iter().cloned().collect()
    }
}

/// One state transition in a session's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub state_from: SessionState,
    pub state_to: SessionState,
    pub agent: String,
    pub model: Option<ModelId>,
    pub elapsed_s: f64,
    pub payload_digest: String,
    pub loop_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn payload_digest(payload: &str) -> String {
    hex(&Sha256::digest(payload.as_bytes()))[..16].to_string()
}

/// Writes events as one JSON object per line.
pub fn export_history<W: Write>(events: &[SessionEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Success,
    Failure,
}

/// One correct-then-test round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRound {
    pub loop_index: usize,
    pub model: ModelId,
    pub candidate: String,
    pub outcome: TestOutcome,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub task_id: String,
    pub status: SessionStatus,
    /// Annotated code on success (or the plain correction if annotation
    /// degraded).
    pub final_code: Option<String>,
    pub corrected_code: Option<String>,
    pub loop_count: usize,
    pub models_used: Vec<ModelId>,
    pub final_model: ModelId,
    pub cumulative_elapsed_s: f64,
    pub rounds: Vec<TestRound>,
    pub history: Vec<SessionEvent>,
    pub ledger: RewardLedger,
    pub memory: Vec<DialoguePair>,
    pub failure_cause: Option<String>,
    pub warnings: Vec<String>,
    pub acl_messages: usize,
}

impl SessionResult {
    pub fn solved(&self) -> bool {
        self.status == SessionStatus::Success
    }

    pub fn total_reward(&self) -> f64 {
        self.rounds.iter().map(|r| r.reward).sum()
    }
}

/// Pulls the code out of a model reply: the first fenced block if there is
/// one, otherwise the whole reply.
pub fn extract_code(reply: &str) -> String {
    let mut lines = reply.lines();
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("```") {
            let body: Vec<&str> = lines
                .by_ref()
                .take_while(|l| !l.trim_start().starts_with("```"))
                .collect();
            return body.join("\n").trim_matches('\n').to_string();
        }
    }
    reply.trim().to_string()
}

/// Asserts found in a test-generation reply, one per line.
pub fn parse_generated_tests(reply: &str) -> Vec<TestCase> {
    extract_code(reply)
        .lines()
        .filter_map(|l| TestCase::basic(l.trim()).ok())
        .collect()
}

/// First reply line `PASS` / `FAIL`, the rest is the justification.
pub fn parse_judgment(reply: &str) -> Option<(bool, String)> {
    let mut lines = reply.trim().lines();
    let verdict = lines.next()?.trim().trim_matches(|c: char| !c.is_alphabetic());
    let passed = if verdict.eq_ignore_ascii_case("pass") {
        true
    } else if verdict.eq_ignore_ascii_case("fail") {
        false
    } else {
        return None;
    };
    Some((passed, lines.collect::<Vec<_>>().join("\n").trim().to_string()))
}

pub fn correction_payload(task: &TaskRecord, tests: &[TestCase]) -> String {
    let mut out = String::new();
    if !task.description.trim().is_empty() {
        out.push_str("Requirement:\n");
        out.push_str(task.description.trim());
        out.push_str("\n\n");
    }
    if !tests.is_empty() {
        out.push_str("The code must pass these tests:\n");
        for t in tests {
            out.push_str(&t.expression);
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("Code to correct:\n```python\n");
    out.push_str(task.error_code.trim_end());
    out.push_str("\n```");
    out
}

fn attempt_summary(loop_index: usize, model: &ModelId, candidate: &str, feedback: &str) -> String {
    format!(
        "Attempt {loop_index} by {model}:\n```python\n{}\n```\nTest feedback:\n{feedback}",
        candidate.trim_end()
    )
}

fn synthetic_outcome(cases: &[TestCase], verdict: Verdict, message: &str) -> TestOutcome {
    let per_case: Vec<CaseResult> = cases
        .iter()
        .enumerate()
        .map(|(index, c)| CaseResult {
            index,
            tier: c.tier,
            expression: c.expression.clone(),
            verdict,
            message: message.to_string(),
        })
        .collect();
    let ok = verdict == Verdict::Pass;
    TestOutcome {
        per_case,
        basic_all_passed: ok,
        challenge_all_passed: ok,
        elapsed_s: 0.0,
    }
}

/// Agents participating in a session, registered on a private platform.
struct Crew {
    platform: Platform,
    main: AgentId,
    correction: AgentId,
    test: AgentId,
    interpretation: AgentId,
    annotation: AgentId,
}

impl Crew {
    fn new() -> Self {
        let platform = Platform::new(PlatformConfig::default());
        let ids = [
            MAIN_AGENT,
            CORRECTION_AGENT,
            TEST_AGENT,
            INTERPRETATION_AGENT,
            ANNOTATION_AGENT,
        ]
        .map(AgentId::local);
        for id in &ids {
            platform
                .register_agent(id.clone())
                .expect("crew names are distinct");
        }
        let [main, correction, test, interpretation, annotation] = ids;
        Crew {
            platform,
            main,
            correction,
            test,
            interpretation,
            annotation,
        }
    }

    /// Main → agent request, agent takes it from its inbox.
    fn request(&self, to: &AgentId, conversation: &str, content: &str) -> String {
        self.platform
            .send(Performative::Request, &self.main, to, conversation, content)
            .expect("crew member is registered");
        self.platform
            .receive(&to.name)
            .expect("request was just delivered")
            .content
    }

    /// Agent → main reply, main takes it from its inbox.
    fn reply(&self, from: &AgentId, conversation: &str, performative: Performative, content: &str) {
        self.platform
            .send(performative, from, &self.main, conversation, content)
            .expect("main is registered");
        self.platform.receive(MAIN_AGENT);
    }
}

struct Run<'a> {
    engine: &'a Engine,
    task: &'a TaskRecord,
    crew: Crew,
    state: SessionState,
    loop_count: usize,
    memory: MemoryRing,
    model: ModelId,
    models_used: Vec<ModelId>,
    elapsed: f64,
    history: Vec<SessionEvent>,
    rounds: Vec<TestRound>,
    ledger: RewardLedger,
    warnings: Vec<String>,
    generated_tests: Option<Vec<TestCase>>,
}

impl Run<'_> {
    fn conversation(&self) -> &str {
        &self.task.task_id
    }

    fn emit(
        &mut self,
        to: SessionState,
        agent: &str,
        model: Option<ModelId>,
        elapsed_s: f64,
        payload: &str,
        note: Option<String>,
    ) {
        debug_assert!(
            transition_allowed(self.state, to),
            "illegal transition {:?} -> {:?}",
            self.state,
            to
        );
        self.history.push(SessionEvent {
            state_from: self.state,
            state_to: to,
            agent: agent.to_string(),
            model,
            elapsed_s,
            payload_digest: payload_digest(payload),
            loop_count: self.loop_count,
            note,
        });
        self.state = to;
    }

    fn use_model(&mut self, model: ModelId) {
        if !self.models_used.contains(&model) {
            self.models_used.push(model.clone());
        }
        self.model = model;
    }

    fn call(
        &mut self,
        role: AgentRole,
        payload: &str,
        with_memory: bool,
    ) -> Result<Completion, GatewayError> {
        let memory = if with_memory {
            self.memory.to_vec()
        } else {
            Vec::new()
        };
        let gateway = &self.engine.gateway;
        let bundle = gateway.build_prompt(role, &memory, payload, &self.model)?;
        let completion = gateway.complete(&bundle, &self.task.task_id)?;
        self.elapsed += completion.elapsed_s;
        let _ = self.ledger.record_elapsed(&self.model, completion.elapsed_s);
        Ok(completion)
    }

    fn fail(&mut self, agent: &str, cause: String) -> String {
        let model = Some(self.model.clone());
        self.emit(
            SessionState::DoneFailure,
            agent,
            model,
            0.0,
            &cause,
            Some(cause.clone()),
        );
        cause
    }

    fn test_cases(&mut self) -> Result<Vec<TestCase>, String> {
        match self.engine.config.test_source {
            TestSource::Supplied | TestSource::Judged => Ok(self.task.cases()),
            TestSource::Generated => {
                if let Some(cases) = &self.generated_tests {
                    return Ok(cases.clone());
                }
                let payload = format!(
                    "Requirement:\n{}\n\nFunction to test:\n```python\n{}\n```",
                    self.task.description.trim(),
                    self.task.error_code.trim_end()
                );
                let reply = self
                    .call(AgentRole::TestGeneration, &payload, false)
                    .map_err(|e| format!("test generation failed: {e}"))?;
                let cases = parse_generated_tests(&reply.text);
                if cases.is_empty() {
                    return Err("test generation produced no assert statements".into());
                }
                self.generated_tests = Some(cases.clone());
                Ok(cases)
            }
        }
    }

    fn run_tests(&mut self, candidate: &str, cases: &[TestCase]) -> Result<TestOutcome, String> {
        if candidate.trim().is_empty() {
            return Ok(synthetic_outcome(
                cases,
                Verdict::RuntimeError,
                "empty completion",
            ));
        }
        let sandbox = &self.engine.sandbox;
        match self.engine.config.test_source {
            TestSource::Judged => {
                let payload = format!(
                    "Requirement:\n{}\n\nCandidate code:\n```python\n{}\n```",
                    self.task.description.trim(),
                    candidate.trim_end()
                );
                let reply = self
                    .call(AgentRole::TestJudgment, &payload, false)
                    .map_err(|e| format!("test judgment failed: {e}"))?;
                let judged = TestCase {
                    expression: "assert judged_correct".into(),
                    tier: Tier::Basic,
                };
                Ok(match parse_judgment(&reply.text) {
                    Some((true, why)) => synthetic_outcome(&[judged], Verdict::Pass, &why),
                    Some((false, why)) => synthetic_outcome(&[judged], Verdict::AssertionFailed, &why),
                    None => synthetic_outcome(&[judged], Verdict::RuntimeError, "unparseable judgment"),
                })
            }
            _ if self.engine.config.run_challenge_after_basic_failure => {
                sandbox.evaluate(candidate, cases).map_err(|e| e.to_string())
            }
            _ => {
                let (basic, challenge): (Vec<_>, Vec<_>) =
                    cases.iter().cloned().partition(|c| c.tier == Tier::Basic);
                let mut outcome = sandbox.evaluate(candidate, &basic).map_err(|e| e.to_string())?;
                if challenge.is_empty() {
                    return Ok(outcome);
                }
                if !outcome.basic_all_passed {
                    outcome.challenge_all_passed = false;
                    return Ok(outcome);
                }
                let second = sandbox
                    .evaluate(candidate, &challenge)
                    .map_err(|e| e.to_string())?;
                let offset = outcome.per_case.len();
                outcome.per_case.extend(second.per_case.into_iter().map(|mut c| {
                    c.index += offset;
                    c
                }));
                outcome.challenge_all_passed = second.challenge_all_passed;
                outcome.elapsed_s += second.elapsed_s;
                Ok(outcome)
            }
        }
    }

    fn annotate(&mut self, code: &str) -> String {
        let conv = self.conversation().to_string();
        let crew_annotation = self.crew.annotation.clone();
        self.crew.request(&crew_annotation, &conv, code);
        let attempt = self.call(AgentRole::Annotation, code, false);
        let annotated = match attempt {
            Ok(c) if !c.text.trim().is_empty() => c.text,
            Ok(_) => {
                self.warnings.push("annotation returned empty text".into());
                code.to_string()
            }
            Err(e) => {
                self.warnings.push(format!("annotation failed: {e}"));
                code.to_string()
            }
        };
        if annotated != code && self.engine.config.verify_annotation {
            let still_ok = self
                .test_cases()
                .ok()
                .and_then(|cases| self.run_tests(&annotated, &cases).ok())
                .is_some_and(|o| o.all_passed());
            if !still_ok {
                self.warnings
                    .push("annotated code no longer passes its tests; keeping the plain correction".into());
                self.crew
                    .reply(&crew_annotation, &conv, Performative::Failure, code);
                return code.to_string();
            }
        }
        self.crew
            .reply(&crew_annotation, &conv, Performative::Inform, &annotated);
        annotated
    }

    fn execute(mut self) -> SessionResult {
        let config = &self.engine.config;
        let code_length = self.task.code_length();
        let initial = match &config.strategy {
            ModelStrategy::Fixed { model } => model.clone(),
            ModelStrategy::Erl => {
                match initial_model_by_length(code_length, config.policy.thresholds, &config.policy.ranking) {
                    Ok(m) => m,
                    Err(e) => {
                        let cause = self.fail(MAIN_AGENT, e.to_string());
                        return self.finish(None, None, Some(cause));
                    }
                }
            }
        };
        self.use_model(initial.clone());
        let conv = self.conversation().to_string();
        self.emit(
            SessionState::Correcting,
            MAIN_AGENT,
            Some(initial),
            0.0,
            &self.task.error_code.clone(),
            Some(format!("initial model for {code_length} characters")),
        );

        loop {
            self.loop_count += 1;
            let loop_index = self.loop_count;

            // correcting
            let cases = match self.test_cases() {
                Ok(c) => c,
                Err(cause) => {
                    let cause = self.fail(TEST_AGENT, cause);
                    return self.finish(None, None, Some(cause));
                }
            };
            let shown: Vec<TestCase> = match config.test_source {
                TestSource::Supplied => self.task.basic_cases(),
                TestSource::Generated => cases.clone(),
                TestSource::Judged => Vec::new(),
            };
            let payload = correction_payload(self.task, &shown);
            let correction = self.crew.correction.clone();
            self.crew.request(&correction, &conv, &payload);
            let completion = match self.call(AgentRole::Correction, &payload, true) {
                Ok(c) => c,
                Err(e) => {
                    self.crew
                        .reply(&correction, &conv, Performative::Failure, &e.to_string());
                    let cause = self.fail(CORRECTION_AGENT, format!("correction failed: {e}"));
                    return self.finish(None, None, Some(cause));
                }
            };
            let candidate = extract_code(&completion.text);
            self.crew
                .reply(&correction, &conv, Performative::Inform, &candidate);
            let model = self.model.clone();
            self.emit(
                SessionState::Testing,
                CORRECTION_AGENT,
                Some(model.clone()),
                completion.elapsed_s,
                &candidate,
                None,
            );

            // testing
            let test = self.crew.test.clone();
            self.crew.request(&test, &conv, &candidate);
            let outcome = match self.run_tests(&candidate, &cases) {
                Ok(o) => o,
                Err(cause) => {
                    self.crew.reply(&test, &conv, Performative::Failure, &cause);
                    let cause = self.fail(TEST_AGENT, format!("testing failed: {cause}"));
                    return self.finish(None, None, Some(cause));
                }
            };
            let outcome_json = serde_json::to_string(&outcome).expect("outcome serializes");
            let reward = self
                .ledger
                .apply_test_reward(&model, outcome.tier_verdict())
                .expect("ledger tracks every configured model");
            self.rounds.push(TestRound {
                loop_index,
                model: model.clone(),
                candidate: candidate.clone(),
                outcome: outcome.clone(),
                reward,
            });

            if outcome.all_passed() {
                self.crew
                    .reply(&test, &conv, Performative::Confirm, &outcome_json);
                self.emit(
                    SessionState::Annotating,
                    TEST_AGENT,
                    None,
                    outcome.elapsed_s,
                    &outcome_json,
                    None,
                );
                let before = self.elapsed;
                let warned = self.warnings.len();
                let annotated = self.annotate(&candidate);
                let note = self.warnings.get(warned).cloned();
                let model = Some(self.model.clone());
                self.emit(
                    SessionState::DoneSuccess,
                    ANNOTATION_AGENT,
                    model,
                    self.elapsed - before,
                    &annotated,
                    note,
                );
                let _ = self.ledger.record_session(&self.model.clone(), Some(loop_index));
                return self.finish(Some(annotated), Some(candidate), None);
            }

            self.crew
                .reply(&test, &conv, Performative::Failure, &outcome_json);
            if loop_index >= config.max_loops {
                self.emit(
                    SessionState::DoneFailure,
                    TEST_AGENT,
                    None,
                    outcome.elapsed_s,
                    &outcome_json,
                    Some(format!("loop budget of {} exhausted", config.max_loops)),
                );
                let _ = self.ledger.record_session(&self.model.clone(), None);
                return self.finish(None, None, Some("loop budget exhausted".into()));
            }
            self.emit(
                SessionState::Interpreting,
                TEST_AGENT,
                None,
                outcome.elapsed_s,
                &outcome_json,
                None,
            );

            // interpreting
            let feedback =
                extract_error_message(&outcome).unwrap_or_else(|_| "The tests did not all pass.".to_string());
            let summary = attempt_summary(loop_index, &model, &candidate, &feedback);
            let interpretation = self.crew.interpretation.clone();
            self.crew.request(&interpretation, &conv, &summary);
            let explained = match self.call(AgentRole::Interpretation, &summary, true) {
                Ok(c) => c,
                Err(e) => {
                    self.crew
                        .reply(&interpretation, &conv, Performative::Failure, &e.to_string());
                    let cause = self.fail(INTERPRETATION_AGENT, format!("interpretation failed: {e}"));
                    return self.finish(None, None, Some(cause));
                }
            };
            self.crew
                .reply(&interpretation, &conv, Performative::Inform, &explained.text);
            self.memory.append(DialoguePair {
                user: summary,
                assistant: if explained.text.trim().is_empty() {
                    "(no explanation)".to_string()
                } else {
                    explained.text.clone()
                },
            });
            self.emit(
                SessionState::Selecting,
                INTERPRETATION_AGENT,
                Some(model.clone()),
                explained.elapsed_s,
                &explained.text,
                None,
            );

            // selecting
            let (next, note) = match &config.strategy {
                ModelStrategy::Fixed { model } => (model.clone(), "fixed model".to_string()),
                ModelStrategy::Erl => {
                    let policy = &config.policy;
                    let scores = score_models(
                        code_length,
                        self.elapsed,
                        &model,
                        &policy.profiles,
                        &policy.weights,
                    );
                    let pick = select_model(
                        code_length,
                        self.elapsed,
                        &model,
                        &policy.profiles,
                        &policy.weights,
                        &policy.tie_break,
                    );
                    match (scores, pick) {
                        (Ok(scores), Ok(pick)) => {
                            let listed: Vec<String> =
                                scores.iter().map(|(m, s)| format!("{m}={s:.6}")).collect();
                            (
                                pick,
                                format!("run_time={:.3} scores: {}", self.elapsed, listed.join(", ")),
                            )
                        }
                        (Err(e), _) | (_, Err(e)) => {
                            let cause = self.fail(MAIN_AGENT, format!("model selection failed: {e}"));
                            return self.finish(None, None, Some(cause));
                        }
                    }
                }
            };
            self.use_model(next.clone());
            self.emit(
                SessionState::Correcting,
                MAIN_AGENT,
                Some(next),
                0.0,
                &note,
                Some(note.clone()),
            );
        }
    }

    fn finish(
        self,
        final_code: Option<String>,
        corrected_code: Option<String>,
        failure_cause: Option<String>,
    ) -> SessionResult {
        let status = if final_code.is_some() {
            SessionStatus::Success
        } else {
            SessionStatus::Failure
        };
        SessionResult {
            task_id: self.task.task_id.clone(),
            status,
            final_code,
            corrected_code,
            loop_count: self.loop_count,
            models_used: self.models_used,
            final_model: self.model,
            cumulative_elapsed_s: self.elapsed,
            rounds: self.rounds,
            history: self.history,
            ledger: self.ledger,
            memory: self.memory.to_vec(),
            failure_cause,
            warnings: self.warnings,
            acl_messages: self.crew.platform.log_len(),
        }
    }
}

/// Runs correction sessions against one gateway and sandbox.
#[derive(Debug, Clone)]
pub struct Engine {
    gateway: Arc<Gateway>,
    sandbox: Arc<Sandbox>,
    config: SessionConfig,
}

impl Engine {
    pub fn new(
        gateway: Arc<Gateway>,
        sandbox: Arc<Sandbox>,
        config: SessionConfig,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        if config.memory_capacity > gateway.limits().memory_capacity {
            return Err(SessionError::InvalidConfig(format!(
                "memory_capacity {} exceeds the gateway's prompt capacity {}",
                config.memory_capacity,
                gateway.limits().memory_capacity
            )));
        }
        Ok(Engine {
            gateway,
            sandbox,
            config,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Same gateway and sandbox, different model strategy.
    pub fn with_strategy(&self, strategy: ModelStrategy) -> Result<Self, SessionError> {
        let mut config = self.config.clone();
        config.strategy = strategy;
        Engine::new(self.gateway.clone(), self.sandbox.clone(), config)
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn run_session(&self, task: &TaskRecord) -> Result<SessionResult, SessionError> {
        task.validate(0)?;
        let models = self.config.models();
        let run = Run {
            engine: self,
            task,
            crew: Crew::new(),
            state: SessionState::Init,
            loop_count: 0,
            memory: MemoryRing::new(self.config.memory_capacity),
            model: models[0].clone(),
            models_used: Vec::new(),
            elapsed: 0.0,
            history: Vec::new(),
            rounds: Vec::new(),
            ledger: RewardLedger::new(&models, self.config.max_loops),
            warnings: Vec::new(),
            generated_tests: None,
        };
        Ok(run.execute())
    }

    /// Re-runs the task's tests on a session's final code.
    pub fn reverify(&self, task: &TaskRecord, code: &str) -> Result<TestOutcome, SandboxError> {
        self.sandbox.evaluate(code, &task.cases())
    }
}
