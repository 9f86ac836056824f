//! Directory-level skill packages and the libraries that hold them.

mod library;
mod manifest;
mod package;
pub mod testing;
mod timestamp;

use std::io;
use std::path::PathBuf;

pub use library::{install_selection, BackupRecord, EditCommit, LibraryScan, SkillLibrary, BACKUP_DIR};
pub use manifest::{is_slug, SkillManifest};
pub use package::{parse_skill_package, SkillPackage, MANIFEST_FILE, RESOURCE_DIRS};
pub use timestamp::{BatchTimestamp, Clock, SteppingClock, SystemClock};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no SKILL.md in {0}")]
    MissingManifest(PathBuf),
    #[error("cannot parse {path}: {reason}")]
    ManifestParse { path: PathBuf, reason: String },
    #[error("manifest name `{manifest}` does not match directory `{dir}`")]
    NameMismatch { manifest: String, dir: String },
    #[error("`{0}` is not a lowercase-hyphenated skill name")]
    InvalidName(String),
    #[error("{0} escapes the package root")]
    PathEscape(PathBuf),
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("skill `{0}` already exists")]
    DuplicateSkillName(String),
    #[error("backup of `{skill}` for batch {batch} already exists")]
    SnapshotExists { skill: String, batch: String },
    #[error("library at {0} is read-only")]
    ReadOnly(PathBuf),
    #[error("candidate package is invalid: {0}")]
    ValidationFailed(Box<StoreError>),
    #[error("copy into {path} failed: {source}")]
    CopyFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid batch timestamp `{0}`")]
    InvalidTimestamp(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
