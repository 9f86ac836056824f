use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use crate::process::{run_with_timeout, tail};

/// One invocation handed to an executor.
#[derive(Debug, Clone)]
pub struct ExecutorCall<'a> {
    pub template_id: &'a str,
    pub system_text: &'a str,
    pub user_text: &'a str,
    pub schema: &'a Value,
    pub working_root: &'a Path,
    /// Session to continue. `None` starts a fresh session.
    pub session: Option<&'a str>,
    /// Prior transcript supplied when the backend cannot resume natively.
    pub replay_context: Option<&'a str>,
    pub timeout: Duration,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutorReply {
    /// Final structured message as text. `None` when the agent produced nothing.
    pub raw_output: Option<String>,
    pub session_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecutorError {
    #[error("executor timed out")]
    Timeout,
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("executor failed: {0}")]
    Failed(String),
}

/// The agent backend contract shared by recommendation, attribution, and evolution.
pub trait Executor: Send + Sync {
    fn name(&self) -> &str;

    fn execute(&self, call: &ExecutorCall<'_>) -> Result<ExecutorReply, ExecutorError>;

    /// Whether `call.session` continues an existing session natively.
    fn supports_resume(&self) -> bool {
        true
    }
}

impl<E: Executor + ?Sized> Executor for &E {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn execute(&self, call: &ExecutorCall<'_>) -> Result<ExecutorReply, ExecutorError> {
        (**self).execute(call)
    }
    fn supports_resume(&self) -> bool {
        (**self).supports_resume()
    }
}

impl<E: Executor + ?Sized> Executor for std::sync::Arc<E> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn execute(&self, call: &ExecutorCall<'_>) -> Result<ExecutorReply, ExecutorError> {
        (**self).execute(call)
    }
    fn supports_resume(&self) -> bool {
        (**self).supports_resume()
    }
}

type Responder = Box<dyn Fn(&ExecutorCall<'_>) -> ScriptStep + Send + Sync>;

/// One canned executor behaviour.
pub enum ScriptStep {
    /// Raw text returned verbatim (may be malformed on purpose).
    Output(String),
    /// A document serialized to JSON text.
    Json(Value),
    /// The agent finished without a final message.
    Missing,
    Timeout,
    SessionNotFound,
    Fail(String),
    /// Computed from the call; useful when the step must touch the working root.
    Respond(Responder),
}

impl std::fmt::Debug for ScriptStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Output(s) => f.debug_tuple("Output").field(s).finish(),
            Self::Json(v) => f.debug_tuple("Json").field(v).finish(),
            Self::Missing => f.write_str("Missing"),
            Self::Timeout => f.write_str("Timeout"),
            Self::SessionNotFound => f.write_str("SessionNotFound"),
            Self::Fail(s) => f.debug_tuple("Fail").field(s).finish(),
            Self::Respond(_) => f.write_str("Respond(..)"),
        }
    }
}

impl ScriptStep {
    pub fn respond(f: impl Fn(&ExecutorCall<'_>) -> ScriptStep + Send + Sync + 'static) -> Self {
        Self::Respond(Box::new(f))
    }
}

/// What a [`ScriptedExecutor`] saw on one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedCall {
    pub template_id: String,
    pub system_text: String,
    pub user_text: String,
    pub working_root: PathBuf,
    pub session: Option<String>,
    pub replay_context: Option<String>,
    pub attempt: u32,
}

/// Deterministic executor that replays a queue of steps, or answers every call
/// from a function.
pub struct ScriptedExecutor {
    name: String,
    queue: Mutex<VecDeque<ScriptStep>>,
    fallback: Option<Responder>,
    calls: Mutex<Vec<RecordedCall>>,
    sessions: AtomicU64,
    resume: bool,
}

impl std::fmt::Debug for ScriptedExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedExecutor")
            .field("name", &self.name)
            .field("invocations", &self.invocations())
            .finish()
    }
}

impl ScriptedExecutor {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        Self {
            name: "scripted".into(),
            queue: Mutex::new(steps.into_iter().collect()),
            fallback: None,
            calls: Mutex::new(Vec::new()),
            sessions: AtomicU64::new(0),
            resume: true,
        }
    }

    /// Answers every call (after any queued steps) with `f`.
    pub fn from_fn(f: impl Fn(&ExecutorCall<'_>) -> ScriptStep + Send + Sync + 'static) -> Self {
        let mut s = Self::new([]);
        s.fallback = Some(Box::new(f));
        s
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Pretend the backend cannot resume sessions.
    pub fn without_resume(mut self) -> Self {
        self.resume = false;
        self
    }

    pub fn push(&self, step: ScriptStep) {
        self.queue.lock().unwrap().push_back(step);
    }

    pub fn invocations(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    fn resolve(&self, step: ScriptStep, call: &ExecutorCall<'_>, session: String) -> Result<ExecutorReply, ExecutorError> {
        match step {
            ScriptStep::Output(s) => Ok(ExecutorReply {
                raw_output: Some(s),
                session_ref: session,
            }),
            ScriptStep::Json(v) => Ok(ExecutorReply {
                raw_output: Some(v.to_string()),
                session_ref: session,
            }),
            ScriptStep::Missing => Ok(ExecutorReply {
                raw_output: None,
                session_ref: session,
            }),
            ScriptStep::Timeout => Err(ExecutorError::Timeout),
            ScriptStep::SessionNotFound => Err(ExecutorError::SessionNotFound(
                call.session.unwrap_or_default().to_string(),
            )),
            ScriptStep::Fail(m) => Err(ExecutorError::Failed(m)),
            ScriptStep::Respond(f) => self.resolve(f(call), call, session),
        }
    }
}

impl Executor for ScriptedExecutor {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_resume(&self) -> bool {
        self.resume
    }

    fn execute(&self, call: &ExecutorCall<'_>) -> Result<ExecutorReply, ExecutorError> {
        self.calls.lock().unwrap().push(RecordedCall {
            template_id: call.template_id.to_string(),
            system_text: call.system_text.to_string(),
            user_text: call.user_text.to_string(),
            working_root: call.working_root.to_path_buf(),
            session: call.session.map(str::to_string),
            replay_context: call.replay_context.map(str::to_string),
            attempt: call.attempt,
        });
        let session = match call.session {
            Some(s) => s.to_string(),
            None => format!("{}-{}", self.name, self.sessions.fetch_add(1, Ordering::SeqCst) + 1),
        };
        let queued = self.queue.lock().unwrap().pop_front();
        match (queued, &self.fallback) {
            (Some(step), _) => self.resolve(step, call, session),
            (None, Some(f)) => self.resolve(f(call), call, session),
            (None, None) => Err(ExecutorError::Failed("script exhausted".into())),
        }
    }
}

/// Exit status a [`CommandExecutor`] program uses to report an unknown session.
pub const EXIT_SESSION_NOT_FOUND: i32 = 4;

/// Runs an external agent program once per call.
///
/// The user text is written to stdin and stdout is taken as the raw output
/// (empty stdout means no output). The program learns everything else from
/// environment variables:
///
/// | variable | meaning |
/// |---|---|
/// | `AGENT_TEMPLATE_ID` | template being executed |
/// | `AGENT_SYSTEM_PROMPT_FILE` | file holding the system text |
/// | `AGENT_SCHEMA_FILE` | file holding the output schema |
/// | `AGENT_WORKING_ROOT` | directory the agent may work in |
/// | `AGENT_SESSION` | session to resume (unset for a fresh session) |
/// | `AGENT_REPLAY_FILE` | transcript to replay when resuming is not native |
/// | `AGENT_SESSION_OUT` | file the program may write its session id to |
/// | `AGENT_ATTEMPT` | 1-based attempt number |
///
/// Exit status [`EXIT_SESSION_NOT_FOUND`] maps to
/// [`ExecutorError::SessionNotFound`]; any other non-zero status is a failure.
#[derive(Debug, Clone)]
pub struct CommandExecutor {
    program: PathBuf,
    args: Vec<String>,
    env: Vec<(String, String)>,
    resume: bool,
    counter: std::sync::Arc<AtomicU64>,
}

impl CommandExecutor {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            env: Vec::new(),
            resume: true,
            counter: Default::default(),
        }
    }

    /// Splits a shell-like command line on whitespace: program then arguments.
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let mut exec = Self::new(parts.next()?);
        exec.args = parts.map(str::to_string).collect();
        Some(exec)
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    pub fn without_resume(mut self) -> Self {
        self.resume = false;
        self
    }
}

impl Executor for CommandExecutor {
    fn name(&self) -> &str {
        self.program.to_str().unwrap_or("command")
    }

    fn supports_resume(&self) -> bool {
        self.resume
    }

    fn execute(&self, call: &ExecutorCall<'_>) -> Result<ExecutorReply, ExecutorError> {
        let io_err = |e: std::io::Error| ExecutorError::Failed(e.to_string());
        let scratch = tempfile::tempdir().map_err(io_err)?;
        let system_file = scratch.path().join("system.md");
        let schema_file = scratch.path().join("schema.json");
        let session_out = scratch.path().join("session.out");
        std::fs::write(&system_file, call.system_text).map_err(io_err)?;
        std::fs::write(&schema_file, call.schema.to_string()).map_err(io_err)?;

        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .env("AGENT_TEMPLATE_ID", call.template_id)
            .env("AGENT_SYSTEM_PROMPT_FILE", &system_file)
            .env("AGENT_SCHEMA_FILE", &schema_file)
            .env("AGENT_WORKING_ROOT", call.working_root)
            .env("AGENT_SESSION_OUT", &session_out)
            .env("AGENT_ATTEMPT", call.attempt.to_string())
            .env_remove("AGENT_SESSION")
            .env_remove("AGENT_REPLAY_FILE")
            .current_dir(call.working_root);
        if let Some(s) = call.session {
            cmd.env("AGENT_SESSION", s);
        }
        if let Some(replay) = call.replay_context {
            let replay_file = scratch.path().join("replay.txt");
            std::fs::write(&replay_file, replay).map_err(io_err)?;
            cmd.env("AGENT_REPLAY_FILE", replay_file);
        }
        for (k, v) in &self.env {
            cmd.env(k, v);
        }

        let Some(done) = run_with_timeout(cmd, call.user_text, call.timeout).map_err(io_err)? else {
            return Err(ExecutorError::Timeout);
        };
        let (status, stdout, stderr) = (done.status, done.stdout, done.stderr);

        let session_ref = std::fs::read_to_string(&session_out)
            .ok()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .or_else(|| call.session.map(str::to_string))
            .unwrap_or_else(|| {
                format!(
                    "cmd-{}-{}",
                    std::process::id(),
                    self.counter.fetch_add(1, Ordering::SeqCst) + 1
                )
            });

        if status.code() == Some(EXIT_SESSION_NOT_FOUND) {
            return Err(ExecutorError::SessionNotFound(
                call.session.unwrap_or_default().to_string(),
            ));
        }
        if !status.success() {
            return Err(ExecutorError::Failed(format!("{status}: {}", tail(&stderr, 2000))));
        }
        let text = String::from_utf8_lossy(&stdout).into_owned();
        Ok(ExecutorReply {
            raw_output: if text.trim().is_empty() { None } else { Some(text) },
            session_ref,
        })
    }
}
