//! The single boundary to agent backends: prompt rendering, structured
//! output requests, schema validation, and bounded retry.

mod executor;
mod schema;
mod template;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

pub use executor::{
    CommandExecutor, Executor, ExecutorCall, ExecutorError, ExecutorReply, RecordedCall, ScriptStep,
    ScriptedExecutor, EXIT_SESSION_NOT_FOUND,
};
pub use schema::{documents, SchemaRegistry, ATTRIBUTION_SCHEMA, EVOLUTION_SCHEMA, RECOMMENDATION_SCHEMA};
pub use template::{builtin, placeholders, render_prompt, PromptTemplate, RenderedPrompt};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("binding `{0}` matches no placeholder in the template")]
    UnknownPlaceholder(String),
    #[error("no schema registered as `{0}`")]
    UnknownSchema(String),
    #[error("schema does not compile: {0}")]
    InvalidSchema(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no valid output after {} attempts; last failure: {}", .failures.len(), .failures.last().map(ToString::to_string).unwrap_or_default())]
    ExhaustedRetries {
        raw_outputs: Vec<Option<String>>,
        failures: Vec<AttemptFailure>,
    },
    #[error("executor timed out on all {attempts} attempts")]
    ExecutorTimeout { attempts: u32 },
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Why one attempt did not yield a usable document. All are retryable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum AttemptFailure {
    MissingOutput,
    Malformed(String),
    SchemaViolation(Vec<String>),
    /// Schema-valid but refused by the caller's semantic check.
    Rejected(String),
    Timeout,
    ExecutorFailed(String),
}

impl fmt::Display for AttemptFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingOutput => f.write_str("no output"),
            Self::Malformed(e) => write!(f, "malformed JSON: {e}"),
            Self::SchemaViolation(v) => write!(f, "schema violation: {}", v.join("; ")),
            Self::Rejected(e) => write!(f, "rejected: {e}"),
            Self::Timeout => f.write_str("timeout"),
            Self::ExecutorFailed(e) => write!(f, "executor failed: {e}"),
        }
    }
}

/// A session to continue, plus an optional transcript for backends that cannot resume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionRef {
    pub id: String,
    #[serde(skip)]
    pub transcript: Option<String>,
}

impl SessionRef {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            transcript: None,
        }
    }

    pub fn with_transcript(mut self, transcript: impl Into<String>) -> Self {
        self.transcript = Some(transcript.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct StructuredRequest {
    pub template: PromptTemplate,
    pub bindings: BTreeMap<String, String>,
    pub output_schema_id: String,
    pub working_root: PathBuf,
    /// `Some` runs in resume mode.
    pub session: Option<SessionRef>,
    pub max_attempts: u32,
    pub timeout: Duration,
    /// Where request/attempt/output artifacts are written. `None` writes nothing.
    pub artifact_dir: Option<PathBuf>,
}

impl StructuredRequest {
    pub fn new(
        template: PromptTemplate,
        bindings: BTreeMap<String, String>,
        output_schema_id: impl Into<String>,
        working_root: impl Into<PathBuf>,
    ) -> Self {
        Self {
            template,
            bindings,
            output_schema_id: output_schema_id.into(),
            working_root: working_root.into(),
            session: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            timeout: DEFAULT_TIMEOUT,
            artifact_dir: None,
        }
    }

    pub fn resume(mut self, session: SessionRef) -> Self {
        self.session = Some(session);
        self
    }

    pub fn max_attempts(mut self, n: u32) -> Self {
        self.max_attempts = n;
        self
    }

    pub fn timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }

    pub fn artifacts(mut self, dir: impl Into<PathBuf>) -> Self {
        self.artifact_dir = Some(dir.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutorResult {
    /// Always schema-valid.
    pub parsed_output: Value,
    pub raw_output: String,
    pub attempts_used: u32,
    pub session_ref: String,
    pub log_ref: Option<PathBuf>,
    /// Resume was requested but the backend got a transcript replay instead.
    pub resume_degraded: bool,
}

/// Semantic check run on schema-valid output. `Err` makes the attempt retryable.
pub type OutputCheck<'a> = &'a (dyn Fn(&Value) -> Result<(), String> + Sync);

fn session_lock(id: &str) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(id.to_string()).or_default().clone()
}

#[derive(Serialize)]
struct RequestArtifact<'a> {
    template_id: &'a str,
    output_schema_id: &'a str,
    working_root: &'a Path,
    session: Option<&'a str>,
    resume_degraded: bool,
    max_attempts: u32,
    timeout_ms: u128,
    bindings: &'a BTreeMap<String, String>,
    system_text: &'a str,
    user_text: &'a str,
}

struct Artifacts {
    dir: Option<PathBuf>,
    log: String,
}

impl Artifacts {
    fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, contents)?;
        }
        Ok(())
    }

    fn log(&mut self, line: impl AsRef<str>) {
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    fn flush_log(&self) -> io::Result<Option<PathBuf>> {
        self.write("log", &self.log)?;
        Ok(self.dir.as_ref().map(|d| d.join("log")))
    }
}

/// Runs structured requests against any [`Executor`].
#[derive(Debug, Clone, Default)]
pub struct Gateway {
    schemas: SchemaRegistry,
}

impl Gateway {
    pub fn new(schemas: SchemaRegistry) -> Self {
        Self { schemas }
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        &self.schemas
    }

    pub fn execute_structured(
        &self,
        request: &StructuredRequest,
        executor: &dyn Executor,
    ) -> Result<ExecutorResult, GatewayError> {
        self.execute_structured_with(request, executor, &|_| Ok(()))
    }

    /// Invokes `executor` until an attempt yields JSON that parses, passes the
    /// schema, and passes `check`, or `max_attempts` is used up.
    ///
    /// Output is never repaired: each failure is logged and the next attempt
    /// starts from the same rendered prompt.
    pub fn execute_structured_with(
        &self,
        request: &StructuredRequest,
        executor: &dyn Executor,
        check: OutputCheck<'_>,
    ) -> Result<ExecutorResult, GatewayError> {
        if request.max_attempts == 0 {
            return Err(GatewayError::InvalidRequest("max_attempts must be at least 1".into()));
        }
        let rendered = request.template.render(&request.bindings)?;
        let schema = self.schemas.document(&request.output_schema_id)?.clone();

        let (session, replay, resume_degraded) = match &request.session {
            None => (None, None, false),
            Some(s) if executor.supports_resume() => (Some(s.id.as_str()), None, false),
            Some(s) => match &s.transcript {
                Some(t) => (None, Some(t.as_str()), true),
                None => return Err(GatewayError::SessionNotFound(s.id.clone())),
            },
        };
        let lock = request.session.as_ref().map(|s| session_lock(&s.id));
        let _guard = lock.as_ref().map(|l| l.lock().unwrap_or_else(|e| e.into_inner()));

        let mut art = Artifacts {
            dir: request.artifact_dir.clone(),
            log: String::new(),
        };
        let req_doc = RequestArtifact {
            template_id: &request.template.template_id,
            output_schema_id: &request.output_schema_id,
            working_root: &request.working_root,
            session: request.session.as_ref().map(|s| s.id.as_str()),
            resume_degraded,
            max_attempts: request.max_attempts,
            timeout_ms: request.timeout.as_millis(),
            bindings: &request.bindings,
            system_text: &rendered.system_text,
            user_text: &rendered.user_text,
        };
        art.write("request.json", serde_json::to_vec_pretty(&req_doc).map_err(io::Error::other)?)?;
        art.write("schema.json", serde_json::to_vec_pretty(&schema).map_err(io::Error::other)?)?;
        art.log(format!(
            "executor={} template={} schema={} max_attempts={}",
            executor.name(),
            request.template.template_id,
            request.output_schema_id,
            request.max_attempts
        ));
        if resume_degraded {
            art.log("resume unsupported by backend; replaying transcript as context");
        }

        let mut raw_outputs = Vec::new();
        let mut failures = Vec::new();
        for attempt in 1..=request.max_attempts {
            let call = ExecutorCall {
                template_id: &request.template.template_id,
                system_text: &rendered.system_text,
                user_text: &rendered.user_text,
                schema: &schema,
                working_root: &request.working_root,
                session,
                replay_context: replay,
                timeout: request.timeout,
                attempt,
            };
            let failure = match executor.execute(&call) {
                Err(ExecutorError::SessionNotFound(id)) => {
                    art.log(format!("attempt {attempt}: session not found"));
                    art.flush_log()?;
                    return Err(GatewayError::SessionNotFound(if id.is_empty() {
                        request.session.as_ref().map(|s| s.id.clone()).unwrap_or_default()
                    } else {
                        id
                    }));
                }
                Err(ExecutorError::Timeout) => {
                    raw_outputs.push(None);
                    AttemptFailure::Timeout
                }
                Err(ExecutorError::Failed(m)) => {
                    raw_outputs.push(None);
                    AttemptFailure::ExecutorFailed(m)
                }
                Ok(reply) => {
                    art.write(
                        &format!("attempts/{attempt}.raw"),
                        reply.raw_output.as_deref().unwrap_or(""),
                    )?;
                    raw_outputs.push(reply.raw_output.clone());
                    match self.judge_output(&request.output_schema_id, reply.raw_output.as_deref(), check)? {
                        Ok(parsed) => {
                            art.log(format!("attempt {attempt}: ok"));
                            art.write(
                                "output.json",
                                serde_json::to_vec_pretty(&parsed).map_err(io::Error::other)?,
                            )?;
                            art.write("session.ref", &reply.session_ref)?;
                            let log_ref = art.flush_log()?;
                            return Ok(ExecutorResult {
                                parsed_output: parsed,
                                raw_output: reply.raw_output.unwrap_or_default(),
                                attempts_used: attempt,
                                session_ref: reply.session_ref,
                                log_ref,
                                resume_degraded,
                            });
                        }
                        Err(f) => f,
                    }
                }
            };
            tracing::warn!(attempt, template = %request.template.template_id, "structured output rejected: {failure}");
            art.log(format!("attempt {attempt}: {failure}"));
            failures.push(failure);
        }
        art.flush_log()?;
        if failures.iter().all(|f| *f == AttemptFailure::Timeout) {
            return Err(GatewayError::ExecutorTimeout {
                attempts: request.max_attempts,
            });
        }
        Err(GatewayError::ExhaustedRetries {
            raw_outputs,
            failures,
        })
    }

    fn judge_output(
        &self,
        schema_id: &str,
        raw: Option<&str>,
        check: OutputCheck<'_>,
    ) -> Result<Result<Value, AttemptFailure>, GatewayError> {
        let Some(raw) = raw else {
            return Ok(Err(AttemptFailure::MissingOutput));
        };
        let parsed: Value = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(e) => return Ok(Err(AttemptFailure::Malformed(e.to_string()))),
        };
        let violations = self.schemas.violations(schema_id, &parsed)?;
        if !violations.is_empty() {
            return Ok(Err(AttemptFailure::SchemaViolation(violations)));
        }
        Ok(match check(&parsed) {
            Ok(()) => Ok(parsed),
            Err(e) => Err(AttemptFailure::Rejected(e)),
        })
    }
}

/// [`Gateway::execute_structured`] with the built-in schemas.
pub fn execute_structured(
    request: &StructuredRequest,
    executor: &dyn Executor,
) -> Result<ExecutorResult, GatewayError> {
    static GATEWAY: OnceLock<Gateway> = OnceLock::new();
    GATEWAY.get_or_init(Gateway::default).execute_structured(request, executor)
}
