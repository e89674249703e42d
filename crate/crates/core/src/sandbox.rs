//! Test execution for candidate code.
//!
//! Candidate code and its assert cases are shipped to an interpreter-side
//! shim over a pipe as one JSON line; the shim answers with one JSON line
//! holding a verdict per case. The wire format is
//!
//! ```text
//! request:  {"code": str, "cases": [{"expr": str, "tier": "basic"|"challenge"}], "timeout_s": float}
//! response: {"results": [{"index": int, "verdict": "pass"|"assertion_failed"|"runtime_error"|"timeout", "message": str}]}
//!         | {"error": str}
//! ```
//!
//! [`ProcessShim`] runs the shim as a child process and enforces the total
//! timeout from the host side. [`MockShim`] answers in-process and is used
//! wherever a Python interpreter is not wanted.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::policy::TierVerdict;

/// Upper bound on what the host reads from a shim's stdout.
const MAX_REPLY_BYTES: u64 = 16 * 1024 * 1024;
const STDERR_SNIPPET_BYTES: usize = 2048;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to start sandbox process `{command}`: {source}")]
    SandboxSpawnFailure {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("shim protocol error: {0}")]
    ShimProtocolError(String),
    #[error("invalid sandbox input: {0}")]
    InvalidInput(&'static str),
    #[error("invalid sandbox policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("every test case passed; there is no failure to report")]
    NoFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Basic,
    Challenge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub expression: String,
    pub tier: Tier,
}

/// True when `expr` starts with the `assert` keyword.
pub fn is_assert(expr: &str) -> bool {
    let rest = match expr.trim_start().strip_prefix("assert") {
        Some(rest) => rest,
        None => return false,
    };
    rest.starts_with(|c: char| c.is_whitespace() || c == '(')
}

impl TestCase {
    pub fn new(expression: impl Into<String>, tier: Tier) -> Result<Self, SandboxError> {
        let expression = expression.into();
        if !is_assert(&expression) {
            return Err(SandboxError::InvalidInput(
                "test expression must start with `assert`",
            ));
        }
        Ok(TestCase { expression, tier })
    }

    pub fn basic(expression: impl Into<String>) -> Result<Self, SandboxError> {
        Self::new(expression, Tier::Basic)
    }

    pub fn challenge(expression: impl Into<String>) -> Result<Self, SandboxError> {
        Self::new(expression, Tier::Challenge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    AssertionFailed,
    RuntimeError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub index: usize,
    pub tier: Tier,
    pub expression: String,
    pub verdict: Verdict,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub per_case: Vec<CaseResult>,
    pub basic_all_passed: bool,
    pub challenge_all_passed: bool,
    pub elapsed_s: f64,
}

impl TestOutcome {
    fn from_cases(per_case: Vec<CaseResult>, elapsed_s: f64) -> Self {
        let tier_ok = |tier| {
            per_case
                .iter()
                .filter(|c| c.tier == tier)
                .all(|c| c.verdict == Verdict::Pass)
        };
        TestOutcome {
            basic_all_passed: tier_ok(Tier::Basic),
            challenge_all_passed: tier_ok(Tier::Challenge),
            per_case,
            elapsed_s,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.basic_all_passed && self.challenge_all_passed
    }

    pub fn tier_verdict(&self) -> TierVerdict {
        TierVerdict {
            basic_passed: self.basic_all_passed,
            challenge_passed: self.challenge_all_passed,
        }
    }

    pub fn first_failure(&self) -> Option<&CaseResult> {
        self.per_case.iter().find(|c| c.verdict != Verdict::Pass)
    }
}

/// Feedback block for the first failing case, as handed to the
/// interpretation step.
pub fn extract_error_message(outcome: &TestOutcome) -> Result<String, SandboxError> {
    let case = outcome.first_failure().ok_or(SandboxError::NoFailure)?;
    let verdict = match case.verdict {
        Verdict::Pass => unreachable!(),
        Verdict::AssertionFailed => "assertion failed",
        Verdict::RuntimeError => "runtime error",
        Verdict::Timeout => "timeout",
    };
    let mut block = format!(
        "Failed test #{} ({}): {}\nResult: {}",
        case.index + 1,
        match case.tier {
            Tier::Basic => "basic",
            Tier::Challenge => "challenge",
        },
        case.expression,
        verdict,
    );
    if !case.message.is_empty() {
        block.push_str("\nError: ");
        block.push_str(&case.message);
    }
    Ok(block)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxPolicy {
    pub per_case_timeout_s: f64,
    pub total_timeout_s: f64,
    pub output_byte_cap: usize,
    /// Asks the shim to block network and file writes. Best effort only.
    pub deny_io: bool,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        SandboxPolicy {
            per_case_timeout_s: 10.0,
            total_timeout_s: 60.0,
            output_byte_cap: 4096,
            deny_io: true,
        }
    }
}

impl SandboxPolicy {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if [self.per_case_timeout_s, self.total_timeout_s]
            .iter()
            .any(|t| t.is_nan() || *t <= 0.0)
        {
            return Err(SandboxError::InvalidPolicy("timeouts must be positive"));
        }
        if self.per_case_timeout_s > self.total_timeout_s {
            return Err(SandboxError::InvalidPolicy(
                "per-case timeout exceeds total timeout",
            ));
        }
        if self.output_byte_cap == 0 {
            return Err(SandboxError::InvalidPolicy("output byte cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimCase {
    pub expr: String,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimRequest {
    pub code: String,
    pub cases: Vec<ShimCase>,
    pub timeout_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimResult {
    pub index: usize,
    pub verdict: Verdict,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShimResponse {
    Results { results: Vec<ShimResult> },
    Error { error: String },
}

/// What a transport hands back for one request.
#[derive(Debug, Clone, PartialEq)]
pub enum ShimReply {
    Response(ShimResponse),
    /// The host killed the shim at the total timeout before it answered.
    KilledAtDeadline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub reply: ShimReply,
    pub elapsed_s: f64,
}

/// Carries one request to a shim and returns its reply.
pub trait ShimTransport: Send + Sync {
    fn exchange(&self, request: &ShimRequest, policy: &SandboxPolicy) -> Result<Exchange, SandboxError>;
}

/// Runs the shim as a child process, one process per request.
#[derive(Debug, Clone)]
pub struct ProcessShim {
    pub program: String,
    pub args: Vec<String>,
    pub working_dir: Option<PathBuf>,
    /// Slack on top of the total timeout before the host kills the child.
    pub grace: Duration,
}

impl ProcessShim {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        ProcessShim {
            program: program.into(),
            args,
            working_dir: None,
            grace: Duration::from_secs(2),
        }
    }

    fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl ShimTransport for ProcessShim {
    fn exchange(&self, request: &ShimRequest, policy: &SandboxPolicy) -> Result<Exchange, SandboxError> {
        let mut line =
            serde_json::to_vec(request).map_err(|e| SandboxError::ShimProtocolError(e.to_string()))?;
        line.push(b'\n');

        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("COLEARN_SANDBOX_DENY_IO", if policy.deny_io { "1" } else { "0" });
        cmd.current_dir(self.working_dir.clone().unwrap_or_else(std::env::temp_dir));

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|source| SandboxError::SandboxSpawnFailure {
            command: self.command_line(),
            source,
        })?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            // A shim that exits early closes the pipe; that shows up as a
            // protocol error below, not here.
            let _ = stdin.write_all(&line);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = (&mut stdout).take(MAX_REPLY_BYTES).read_to_end(&mut buf);
            buf
        });
        let mut stderr = child.stderr.take().expect("piped stderr");
        let err_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = (&mut stderr).take(MAX_REPLY_BYTES).read_to_end(&mut buf);
            buf
        });

        let deadline = Duration::from_secs_f64(policy.total_timeout_s) + self.grace;
        let status = match child.wait_timeout(deadline) {
            Ok(Some(status)) => Some(status),
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                None
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(SandboxError::ShimProtocolError(format!("wait failed: {e}")));
            }
        };
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        let elapsed_s = started.elapsed().as_secs_f64();

        let Some(status) = status else {
            return Ok(Exchange {
                reply: ShimReply::KilledAtDeadline,
                elapsed_s,
            });
        };
        let text = String::from_utf8_lossy(&out);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next();
        if first.is_none() || lines.next().is_some() {
            let snippet: String = String::from_utf8_lossy(&err)
                .chars()
                .take(STDERR_SNIPPET_BYTES)
                .collect();
            return Err(SandboxError::ShimProtocolError(format!(
                "expected exactly one response line (exit status {status}); stderr: {}",
                snippet.trim()
            )));
        }
        let response: ShimResponse = serde_json::from_str(first.unwrap())
            .map_err(|e| SandboxError::ShimProtocolError(format!("bad response line: {e}")))?;
        Ok(Exchange {
            reply: ShimReply::Response(response),
            elapsed_s,
        })
    }
}

type MockRule = dyn Fn(&ShimRequest) -> ShimResponse + Send + Sync;

/// In-process stand-in for the shim.
#[derive(Clone)]
pub struct MockShim {
    rule: Arc<MockRule>,
    elapsed_s: f64,
}

impl std::fmt::Debug for MockShim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockShim")
            .field("elapsed_s", &self.elapsed_s)
            .finish_non_exhaustive()
    }
}

impl MockShim {
    pub fn new(rule: impl Fn(&ShimRequest) -> ShimResponse + Send + Sync + 'static) -> Self {
        MockShim {
            rule: Arc::new(rule),
            elapsed_s: 0.0,
        }
    }

    /// Every case passes iff the candidate, ignoring full-line comments and
    /// surrounding blank space, equals one of `solutions`. Otherwise every
    /// case fails its assertion.
    pub fn solutions<I, S>(solutions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let known: HashSet<String> = solutions
            .into_iter()
            .map(|s| normalize_code(s.as_ref()))
            .collect();
        Self::new(move |req| {
            let ok = known.contains(&normalize_code(&req.code));
            uniform_response(
                req,
                if ok {
                    Verdict::Pass
                } else {
                    Verdict::AssertionFailed
                },
                if ok { "" } else { "AssertionError" },
            )
        })
    }

    pub fn with_elapsed(mut self, elapsed_s: f64) -> Self {
        self.elapsed_s = elapsed_s;
        self
    }
}

impl ShimTransport for MockShim {
    fn exchange(&self, request: &ShimRequest, _: &SandboxPolicy) -> Result<Exchange, SandboxError> {
        Ok(Exchange {
            reply: ShimReply::Response((self.rule)(request)),
            elapsed_s: self.elapsed_s,
        })
    }
}

/// Same verdict and message for every case of `req`.
pub fn uniform_response(req: &ShimRequest, verdict: Verdict, message: &str) -> ShimResponse {
    ShimResponse::Results {
        results: (0..req.cases.len())
            .map(|index| ShimResult {
                index,
                verdict,
                message: message.to_string(),
            })
            .collect(),
    }
}

/// Drops full-line `#` comments and blank lines, trims line ends.
pub fn normalize_code(code: &str) -> String {
    code.lines()
        .filter(|l| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

fn truncate_bytes(s: &str, cap: usize) -> String {
    if s.len() <= cap {
        return s.to_string();
    }
    let mut end = cap;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_string()
}

/// The test agent's execution engine.
#[derive(Clone)]
pub struct Sandbox {
    transport: Arc<dyn ShimTransport>,
    policy: SandboxPolicy,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox")
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

impl Sandbox {
    pub fn new(transport: Arc<dyn ShimTransport>, policy: SandboxPolicy) -> Result<Self, SandboxError> {
        policy.validate()?;
        Ok(Sandbox { transport, policy })
    }

    pub fn policy(&self) -> &SandboxPolicy {
        &self.policy
    }

    pub fn evaluate(&self, code: &str, cases: &[TestCase]) -> Result<TestOutcome, SandboxError> {
        if code.trim().is_empty() {
            return Err(SandboxError::InvalidInput("code must be non-empty"));
        }
        if cases.is_empty() {
            return Err(SandboxError::InvalidInput("at least one test case is required"));
        }
        let request = ShimRequest {
            code: code.to_string(),
            cases: cases
                .iter()
                .map(|c| ShimCase {
                    expr: c.expression.clone(),
                    tier: c.tier,
                })
                .collect(),
            timeout_s: self.policy.per_case_timeout_s,
        };
        let exchange = self.transport.exchange(&request, &self.policy)?;
        let cap = self.policy.output_byte_cap;
        let case_result = |i: usize, verdict, message: &str| CaseResult {
            index: i,
            tier: cases[i].tier,
            expression: cases[i].expression.clone(),
            verdict,
            message: truncate_bytes(message, cap),
        };

        let per_case = match exchange.reply {
            ShimReply::KilledAtDeadline => {
                let msg = format!(
                    "sandbox killed after exceeding total timeout of {}s",
                    self.policy.total_timeout_s
                );
                (0..cases.len())
                    .map(|i| case_result(i, Verdict::Timeout, &msg))
                    .collect()
            }
            ShimReply::Response(ShimResponse::Error { error }) => {
                return Err(SandboxError::ShimProtocolError(format!(
                    "shim rejected request: {error}"
                )));
            }
            ShimReply::Response(ShimResponse::Results { results }) => {
                if results.len() != cases.len() {
                    return Err(SandboxError::ShimProtocolError(format!(
                        "expected {} results, got {}",
                        cases.len(),
                        results.len()
                    )));
                }
                let mut out = Vec::with_capacity(results.len());
                for (pos, r) in results.into_iter().enumerate() {
                    if r.index != pos {
                        return Err(SandboxError::ShimProtocolError(format!(
                            "result at position {pos} carries index {}",
                            r.index
                        )));
                    }
                    out.push(case_result(pos, r.verdict, &r.message));
                }
                out
            }
        };
        Ok(TestOutcome::from_cases(per_case, exchange.elapsed_s))
    }
}
