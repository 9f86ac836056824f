//! Evidence-gated library evolution.
//!
//! Only successful subtasks that carry reusable exploration are admitted. They
//! are grouped into one create request plus one edit request per linked skill,
//! each handed to the executor in its own workspace, and the validated actions
//! are committed with backups.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attribution::{AttributionKind, Subtask};
use crate::fsutil::{copy_dir, normalize_absolute, remove_dir_if_exists, write_json};
use crate::gateway::{
    builtin, Executor, Gateway, GatewayError, SchemaRegistry, StructuredRequest, DEFAULT_MAX_ATTEMPTS,
    DEFAULT_TIMEOUT, EVOLUTION_SCHEMA,
};
use crate::store::{parse_skill_package, BatchTimestamp, SkillLibrary, StoreError};


/// Name of the single create request directory in a batch.
pub const CREATE_REQUEST_DIR: &str = "create";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum Route {
    Edit(String),
    Create,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolvableUnit {
    pub trial_id: String,
    pub subtask: Subtask,
    pub admissible: bool,
    pub route: Route,
}

impl EvolvableUnit {
    pub fn assess(trial_id: impl Into<String>, subtask: Subtask, library: &SkillLibrary) -> Self {
        let admissible = admit_unit(&subtask);
        let route = route_unit(&subtask, library);
        Self {
            trial_id: trial_id.into(),
            subtask,
            admissible,
            route,
        }
    }
}

/// A subtask waiting for evolution, as stored in a units file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedUnit {
    pub trial_id: String,
    pub subtask: Subtask,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum UnitsDoc {
    Units(Vec<QueuedUnit>),
    Attribution { subtasks: Vec<Subtask> },
}

/// Reads queued units from JSON Lines (one [`QueuedUnit`] per line), a JSON
/// array of them, or an attribution `subtasks.json` document. Subtasks from an
/// attribution document take the name of the trial directory holding it.
pub fn read_units(path: &Path) -> Result<Vec<QueuedUnit>, EvolutionError> {
    let fail = |reason: String| EvolutionError::UnitsFile {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let whole = serde_json::from_str::<Value>(&text).ok();
    if let Some(doc) = whole.filter(|v| v.is_array() || v.get("subtasks").is_some()) {
        return match serde_json::from_value(doc).map_err(|e| fail(e.to_string()))? {
            UnitsDoc::Units(units) => Ok(units),
            UnitsDoc::Attribution { subtasks } => {
                let trial = path
                    .parent()
                    .and_then(Path::parent)
                    .and_then(Path::file_name)
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "units".into());
                Ok(subtasks
                    .into_iter()
                    .map(|subtask| QueuedUnit {
                        trial_id: trial.clone(),
                        subtask,
                    })
                    .collect())
            }
        };
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| fail(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Writes units as JSON Lines.
pub fn write_units(path: &Path, units: &[QueuedUnit]) -> std::io::Result<()> {
    let mut out = String::new();
    for u in units {
        out.push_str(&serde_json::to_string(u)?);
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// A subtask is evidence only when it succeeded and carries exploration.
pub fn admit_unit(subtask: &Subtask) -> bool {
    subtask.exploration.is_some() && subtask.attribution.is_success()
}

/// Edit when a successful run used an editable linked skill but needed extra
/// exploration; create for any other admissible unit.
pub fn route_unit(subtask: &Subtask, library: &SkillLibrary) -> Route {
    if !admit_unit(subtask) {
        return Route::Skip;
    }
    match &subtask.skill_linked {
        Some(skill)
            if subtask.attribution == AttributionKind::SuccessSkillUsedWithExtraExploration
                && library.is_editable(skill) =>
        {
            Route::Edit(skill.clone())
        }
        _ => Route::Create,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Edit,
    Create,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionRequest {
    pub request_dir_name: String,
    pub kind: RequestKind,
    pub target_skill_name: Option<String>,
    pub subtasks: Vec<Subtask>,
    /// Trial of each subtask, parallel to `subtasks`.
    pub trial_ids: Vec<String>,
    /// Working copy of the target skill. Edit requests only.
    pub edit_dir: Option<PathBuf>,
    pub create_dir: PathBuf,
    /// `<batch dir>/<request_dir_name>`: executor working root and artifact dir.
    pub workspace: PathBuf,
    pub batch_timestamp: BatchTimestamp,
}

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error("cannot prepare workspace {}: {source}", .path.display())]
    WorkspaceFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("evolution output violates schema: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error("a skip action must be the only action")]
    SkipNotAlone,
    #[error("created skill path {} is not inside {}", .path.display(), .create_dir.display())]
    PathOutsideCreateDir { path: PathBuf, create_dir: PathBuf },
    #[error("{0} action in a create request")]
    EditActionInCreateRequest(ActionKind),
    #[error("created skill at {} is invalid: {reason}", .path.display())]
    InvalidCreatedSkill { path: PathBuf, reason: String },
    #[error("skill `{0}` created more than once")]
    DuplicateCreatedSkill(String),
    #[error("units file {}: {reason}", .path.display())]
    UnitsFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn workspace_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvolutionError + '_ {
    move |source| EvolutionError::WorkspaceFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn fresh_dir(path: &Path) -> Result<(), EvolutionError> {
    remove_dir_if_exists(path)
        .and_then(|()| std::fs::create_dir_all(path))
        .map_err(workspace_err(path))
}

/// Groups routed units into requests and materializes their workspaces under
/// `batch_dir`. Skip-routed units are dropped. Order: create first, then edits
/// by skill name.
pub fn aggregate_requests(
    units: &[EvolvableUnit],
    library: &SkillLibrary,
    batch_timestamp: &BatchTimestamp,
    batch_dir: &Path,
) -> Result<Vec<EvolutionRequest>, EvolutionError> {
    let mut create: Vec<&EvolvableUnit> = Vec::new();
    let mut edits: BTreeMap<&str, Vec<&EvolvableUnit>> = BTreeMap::new();
    for u in units {
        match &u.route {
            Route::Create => create.push(u),
            Route::Edit(t) => edits.entry(t.as_str()).or_default().push(u),
            Route::Skip => {}
        }
    }

    let mut out = Vec::new();
    let mut request = |dir_name: String, target: Option<&str>, members: &[&EvolvableUnit]| {
        let workspace = batch_dir.join(&dir_name);
        fresh_dir(&workspace)?;
        let create_dir = workspace.join("create");
        fresh_dir(&create_dir)?;
        let edit_dir = match target {
            Some(skill) => {
                let pkg = library.get(skill).ok_or_else(|| EvolutionError::WorkspaceFailure {
                    path: library.root().join(skill),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "edit target not in library"),
                })?;
                let dst = workspace.join("edit").join(skill);
                copy_dir(&pkg.root, &dst).map_err(workspace_err(&dst))?;
                Some(dst)
            }
            None => None,
        };
        out.push(EvolutionRequest {
            request_dir_name: dir_name,
            kind: if target.is_some() { RequestKind::Edit } else { RequestKind::Create },
            target_skill_name: target.map(str::to_string),
            subtasks: members.iter().map(|u| u.subtask.clone()).collect(),
            trial_ids: members.iter().map(|u| u.trial_id.clone()).collect(),
            edit_dir,
            create_dir,
            workspace,
            batch_timestamp: batch_timestamp.clone(),
        });
        Ok::<_, EvolutionError>(())
    };
    if !create.is_empty() {
        request(CREATE_REQUEST_DIR.to_string(), None, &create)?;
    }
    for (skill, members) in &edits {
        request(format!("edit-{skill}"), Some(skill), members)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ErrorFix,
    KnowledgeAddition,
    PrerequisiteAddition,
    CreateSkill,
    Skip,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        Self::ErrorFix,
        Self::KnowledgeAddition,
        Self::PrerequisiteAddition,
        Self::CreateSkill,
        Self::Skip,
    ];

    /// True for the three kinds that modify the request's existing skill.
    pub fn is_edit(self) -> bool {
        matches!(self, Self::ErrorFix | Self::KnowledgeAddition | Self::PrerequisiteAddition)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ErrorFix => "error_fix",
            Self::KnowledgeAddition => "knowledge_addition",
            Self::PrerequisiteAddition => "prerequisite_addition",
            Self::CreateSkill => "create_skill",
            Self::Skip => "skip",
        }
    }
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionAction {
    pub action_type: ActionKind,
    pub rationale: String,
    pub summary: Option<String>,
    pub skill_dir_path: Option<PathBuf>,
}

fn inside(path: &Path, dir: &Path) -> bool {
    path != dir && path.starts_with(dir)
}

fn check_created(path: &Path, create_dir: &Path) -> Result<String, EvolutionError> {
    let outside = || EvolutionError::PathOutsideCreateDir {
        path: path.to_path_buf(),
        create_dir: create_dir.to_path_buf(),
    };
    let lexical = normalize_absolute(path).ok_or_else(outside)?;
    let base = normalize_absolute(create_dir).ok_or_else(outside)?;
    if !inside(&lexical, &base) {
        return Err(outside());
    }
    let invalid = |reason: String| EvolutionError::InvalidCreatedSkill {
        path: path.to_path_buf(),
        reason,
    };
    // Resolve links so a symlinked directory cannot point back out.
    let real = lexical.canonicalize().map_err(|e| invalid(e.to_string()))?;
    let real_base = base.canonicalize().map_err(|e| invalid(e.to_string()))?;
    if !inside(&real, &real_base) {
        return Err(outside());
    }
    let pkg = parse_skill_package(&lexical).map_err(|e| invalid(e.to_string()))?;
    Ok(pkg.name().to_string())
}

/// Enforces the per-action field rules, then checks every created skill
/// directory: inside the request's create directory and parseable as a package.
///
/// Edit requests may also create skills in their own create directory.
pub fn validate_evolution_output(raw: &Value, request: &EvolutionRequest) -> Result<Vec<EvolutionAction>, EvolutionError> {
    if let Some(actions) = raw.get("actions").and_then(Value::as_array) {
        let has_skip = actions
            .iter()
            .any(|a| a.get("action_type").and_then(Value::as_str) == Some("skip"));
        if has_skip && actions.len() > 1 {
            return Err(EvolutionError::SkipNotAlone);
        }
    }
    let violations = SchemaRegistry::builtin()
        .violations(EVOLUTION_SCHEMA, raw)
        .expect("evolution schema is built in");
    if !violations.is_empty() {
        return Err(EvolutionError::SchemaViolation(violations));
    }
    let actions: Vec<EvolutionAction> = serde_json::from_value(raw["actions"].clone())
        .map_err(|e| EvolutionError::SchemaViolation(vec![e.to_string()]))?;
    let mut created = BTreeSet::new();
    for a in &actions {
        if a.action_type.is_edit() && request.kind == RequestKind::Create {
            return Err(EvolutionError::EditActionInCreateRequest(a.action_type));
        }
        if a.action_type == ActionKind::CreateSkill {
            let path = a.skill_dir_path.as_deref().expect("schema requires a path for create_skill");
            let name = check_created(path, &request.create_dir)?;
            if !created.insert(name.clone()) {
                return Err(EvolutionError::DuplicateCreatedSkill(name));
            }
        }
    }
    Ok(actions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AppliedAction {
    /// The edited copy was committed; `backup` holds the previous version.
    Edited { skill: String, backup: PathBuf },
    /// Another edit action on the same skill, covered by the earlier commit.
    EditIncluded { skill: String },
    Created { skill: String },
    Skipped,
    Failed { error: String },
    /// Not tried because an earlier action in the request failed.
    NotAttempted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub request: EvolutionRequest,
    pub actions: Vec<EvolutionAction>,
    /// One entry per action, in order.
    pub applied: Vec<AppliedAction>,
    pub aborted: bool,
}

impl EvolutionReport {
    pub fn edited(&self) -> impl Iterator<Item = &str> {
        self.applied.iter().filter_map(|a| match a {
            AppliedAction::Edited { skill, .. } => Some(skill.as_str()),
            _ => None,
        })
    }

    pub fn created(&self) -> impl Iterator<Item = &str> {
        self.applied.iter().filter_map(|a| match a {
            AppliedAction::Created { skill } => Some(skill.as_str()),
            _ => None,
        })
    }
}

/// Commits validated actions in order.
///
/// All edit actions of a request share one commit of the edited copy (and so
/// one backup). A failed commit stops the request: earlier commits stay,
/// later actions are recorded as not attempted, and `aborted` is set.
pub fn apply_evolution(
    request: &EvolutionRequest,
    actions: &[EvolutionAction],
    library: &mut SkillLibrary,
) -> Result<EvolutionReport, EvolutionError> {
    if !library.writable() {
        return Err(StoreError::ReadOnly(library.root().to_path_buf()).into());
    }
    let mut applied = Vec::with_capacity(actions.len());
    let mut aborted = false;
    let mut edit_committed = false;
    for a in actions {
        if aborted {
            applied.push(AppliedAction::NotAttempted);
            continue;
        }
        let outcome = match a.action_type {
            ActionKind::Skip => Ok(AppliedAction::Skipped),
            k if k.is_edit() => match (&request.target_skill_name, &request.edit_dir) {
                (Some(skill), Some(_)) if edit_committed => Ok(AppliedAction::EditIncluded { skill: skill.clone() }),
                (Some(skill), Some(dir)) => library
                    .commit_edit(skill, dir, &request.batch_timestamp)
                    .map(|c| {
                        edit_committed = true;
                        AppliedAction::Edited {
                            skill: skill.clone(),
                            backup: c.backup.snapshot_root,
                        }
                    })
                    .map_err(|e| e.to_string()),
                _ => Err(EvolutionError::EditActionInCreateRequest(k).to_string()),
            },
            _ => match &a.skill_dir_path {
                Some(path) => library
                    .commit_new_skill(path)
                    .map(|p| AppliedAction::Created {
                        skill: p.name().to_string(),
                    })
                    .map_err(|e| e.to_string()),
                None => Err("create_skill without skill_dir_path".to_string()),
            },
        };
        applied.push(outcome.unwrap_or_else(|error| {
            tracing::warn!(request = %request.request_dir_name, "evolution action failed: {error}");
            aborted = true;
            AppliedAction::Failed { error }
        }));
    }
    Ok(EvolutionReport {
        request: request.clone(),
        actions: actions.to_vec(),
        applied,
        aborted,
    })
}

fn bindings(request: &EvolutionRequest) -> Result<BTreeMap<String, String>, EvolutionError> {
    let subtasks = serde_json::to_string_pretty(&request.subtasks).map_err(std::io::Error::other)?;
    let mut b = BTreeMap::from([
        ("create_dir".to_string(), request.create_dir.display().to_string()),
        ("subtasks_json".to_string(), subtasks),
    ]);
    if let Some(edit) = &request.edit_dir {
        b.insert("edit_dir".to_string(), edit.display().to_string());
    }
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct EvolutionOptions {
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Runs one request through the executor and returns its validated actions.
pub fn propose_actions(
    request: &EvolutionRequest,
    executor: &dyn Executor,
    gateway: &Gateway,
    opts: &EvolutionOptions,
) -> Result<Vec<EvolutionAction>, EvolutionError> {
    let template = match request.kind {
        RequestKind::Edit => builtin::evolution_edit(),
        RequestKind::Create => builtin::evolution_create(),
    };
    let sreq = StructuredRequest::new(template, bindings(request)?, EVOLUTION_SCHEMA, &request.workspace)
        .max_attempts(opts.max_attempts)
        .timeout(opts.timeout)
        .artifacts(&request.workspace);
    let check = |v: &Value| validate_evolution_output(v, request).map(drop).map_err(|e| e.to_string());
    let res = gateway.execute_structured_with(&sreq, executor, &check)?;
    validate_evolution_output(&res.parsed_output, request)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_dir_name: String,
    pub kind: RequestKind,
    pub target_skill_name: Option<String>,
    pub subtask_count: usize,
    /// Set when no valid actions were obtained; nothing was applied.
    pub error: Option<String>,
    pub report: Option<EvolutionReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch_timestamp: BatchTimestamp,
    pub units_total: usize,
    pub units_admissible: usize,
    pub requests: Vec<RequestOutcome>,
    pub edited: Vec<String>,
    pub created: Vec<String>,
    pub library_hash_before: String,
    pub library_hash_after: String,
}

/// Aggregates `units`, runs every request in order, applies the actions, and
/// writes `report.json` to `batch_dir`. A request whose executor output never
/// validates is recorded and skipped.
pub fn run_evolution_batch(
    units: &[EvolvableUnit],
    library: &mut SkillLibrary,
    batch_timestamp: &BatchTimestamp,
    batch_dir: &Path,
    executor: &dyn Executor,
    gateway: &Gateway,
    opts: &EvolutionOptions,
) -> Result<BatchReport, EvolutionError> {
    let library_hash_before = library.content_hash()?;
    std::fs::create_dir_all(batch_dir).map_err(workspace_err(batch_dir))?;
    let batch_dir = &std::path::absolute(batch_dir).map_err(workspace_err(batch_dir))?;
    let requests = aggregate_requests(units, library, batch_timestamp, batch_dir)?;
    let mut outcomes = Vec::with_capacity(requests.len());
    let (mut edited, mut created) = (Vec::new(), Vec::new());
    for request in requests {
        let mut outcome = RequestOutcome {
            request_dir_name: request.request_dir_name.clone(),
            kind: request.kind,
            target_skill_name: request.target_skill_name.clone(),
            subtask_count: request.subtasks.len(),
            error: None,
            report: None,
        };
        match propose_actions(&request, executor, gateway, opts) {
            Ok(actions) => {
                let report = apply_evolution(&request, &actions, library)?;
                edited.extend(report.edited().map(str::to_string));
                created.extend(report.created().map(str::to_string));
                outcome.report = Some(report);
            }
            Err(e) => {
                tracing::warn!(request = %request.request_dir_name, "evolution request dropped: {e}");
                outcome.error = Some(e.to_string());
            }
        }
        outcomes.push(outcome);
    }
    let report = BatchReport {
        batch_timestamp: batch_timestamp.clone(),
        units_total: units.len(),
        units_admissible: units.iter().filter(|u| u.admissible).count(),
        requests: outcomes,
        edited,
        created,
        library_hash_before,
        library_hash_after: library.content_hash()?,
    };
    write_json(&batch_dir.join("report.json"), &report)?;
    Ok(report)
}
