use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::package::{parse_skill_package, SkillPackage};
use super::timestamp::BatchTimestamp;
use super::StoreError;
use crate::fsutil::{copy_dir, hash_tree_into, remove_dir_if_exists, tree_hash};

/// Hidden directory under a library root that holds pre-mutation snapshots.
pub const BACKUP_DIR: &str = ".backups";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupRecord {
    pub skill_name: String,
    pub batch_timestamp: BatchTimestamp,
    pub snapshot_root: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EditCommit {
    pub package: SkillPackage,
    pub backup: BackupRecord,
}

/// A directory of skill packages.
///
/// Every immediate, non-hidden subdirectory of `root` is a package. Hidden
/// entries (`.backups`, staging dirs) and plain files are ignored.
#[derive(Debug, Clone)]
pub struct SkillLibrary {
    root: PathBuf,
    packages: BTreeMap<String, SkillPackage>,
    writable: bool,
}

/// Result of a lenient scan: the parseable packages plus one error per rejected directory.
#[derive(Debug)]
pub struct LibraryScan {
    pub library: SkillLibrary,
    pub rejected: Vec<(PathBuf, StoreError)>,
}

fn is_hidden(name: &str) -> bool {
    name.starts_with('.')
}

fn package_dirs(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else {
            dirs.push(entry.path());
            continue;
        };
        if is_hidden(name) {
            continue;
        }
        let ft = entry.file_type()?;
        // Symlinked entries are handed to the parser, which rejects them.
        if ft.is_dir() || ft.is_symlink() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

// Single-writer contract: mutations on one library root are serialized even
// across independent `SkillLibrary` handles in this process.
fn writer_lock(root: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let key = fs::canonicalize(root).unwrap_or_else(|_| root.to_path_buf());
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(key).or_default().clone()
}

impl SkillLibrary {
    /// Opens `root`, failing on the first invalid package.
    pub fn open(root: impl Into<PathBuf>, writable: bool) -> Result<Self, StoreError> {
        let root = std::path::absolute(root.into())?;
        let mut packages = BTreeMap::new();
        for dir in package_dirs(&root)? {
            let pkg = parse_skill_package(&dir)?;
            packages.insert(pkg.name().to_string(), pkg);
        }
        Ok(Self {
            root,
            packages,
            writable,
        })
    }

    /// Creates `root` if needed and opens it as a writable library.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Self::open(root, true)
    }

    /// Opens `root`, collecting per-directory errors instead of failing.
    pub fn scan(root: impl Into<PathBuf>, writable: bool) -> Result<LibraryScan, StoreError> {
        let root = root.into();
        let mut packages = BTreeMap::new();
        let mut rejected = Vec::new();
        for dir in package_dirs(&root)? {
            match parse_skill_package(&dir) {
                Ok(pkg) => {
                    packages.insert(pkg.name().to_string(), pkg);
                }
                Err(e) => rejected.push((dir, e)),
            }
        }
        Ok(LibraryScan {
            library: Self {
                root,
                packages,
                writable,
            },
            rejected,
        })
    }

    /// Re-reads the library from disk.
    pub fn reload(&mut self) -> Result<(), StoreError> {
        *self = Self::open(self.root.clone(), self.writable)?;
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn writable(&self) -> bool {
        self.writable
    }

    pub fn packages(&self) -> &BTreeMap<String, SkillPackage> {
        &self.packages
    }

    /// Skill names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.packages.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&SkillPackage> {
        self.packages.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.packages.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    /// Whether `name` can be edited in place: present here and the library is writable.
    pub fn is_editable(&self, name: &str) -> bool {
        self.writable && self.contains(name)
    }

    /// Hash of every non-hidden entry under the root. Backups do not participate.
    pub fn content_hash(&self) -> Result<String, StoreError> {
        let mut hasher = Sha256::new();
        hash_tree_into(&mut hasher, &self.root, |name| !is_hidden(name))?;
        Ok(hex::encode(hasher.finalize()))
    }

    /// Hash of one skill directory.
    pub fn skill_hash(&self, name: &str) -> Result<String, StoreError> {
        let pkg = self
            .get(name)
            .ok_or_else(|| StoreError::UnknownSkill(name.to_string()))?;
        Ok(tree_hash(&pkg.root)?)
    }

    pub fn backup_root(&self) -> PathBuf {
        self.root.join(BACKUP_DIR)
    }

    fn require_writable(&self) -> Result<(), StoreError> {
        if self.writable {
            Ok(())
        } else {
            Err(StoreError::ReadOnly(self.root.clone()))
        }
    }

    /// Copies the current `skill_name` directory to `.backups/<batch>/<skill_name>/`.
    pub fn snapshot_backup(
        &self,
        skill_name: &str,
        batch: &BatchTimestamp,
    ) -> Result<BackupRecord, StoreError> {
        self.require_writable()?;
        let lock = writer_lock(&self.root);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.snapshot_locked(skill_name, batch)
    }

    fn snapshot_locked(
        &self,
        skill_name: &str,
        batch: &BatchTimestamp,
    ) -> Result<BackupRecord, StoreError> {
        let pkg = self
            .get(skill_name)
            .ok_or_else(|| StoreError::UnknownSkill(skill_name.to_string()))?;
        let batch_dir = self.backup_root().join(batch.as_str());
        let snapshot_root = batch_dir.join(skill_name);
        if snapshot_root.exists() {
            return Err(StoreError::SnapshotExists {
                skill: skill_name.to_string(),
                batch: batch.to_string(),
            });
        }
        fs::create_dir_all(&batch_dir)?;
        // Copy next to the final location, then rename, so a crash never
        // leaves a half-written snapshot under the real key.
        let partial = batch_dir.join(format!(".partial-{skill_name}"));
        remove_dir_if_exists(&partial)?;
        copy_dir(&pkg.root, &partial).map_err(|source| {
            let _ = remove_dir_if_exists(&partial);
            StoreError::CopyFailure {
                path: snapshot_root.clone(),
                source,
            }
        })?;
        fs::rename(&partial, &snapshot_root)?;
        Ok(BackupRecord {
            skill_name: skill_name.to_string(),
            batch_timestamp: batch.clone(),
            snapshot_root,
        })
    }

    /// Every snapshot on disk, sorted by (timestamp, skill).
    pub fn backups(&self) -> Result<Vec<BackupRecord>, StoreError> {
        let root = self.backup_root();
        let mut out = Vec::new();
        let batches = match fs::read_dir(&root) {
            Ok(rd) => rd,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for batch in batches {
            let batch = batch?;
            let Some(ts) = batch
                .file_name()
                .to_str()
                .and_then(|s| BatchTimestamp::parse(s).ok())
            else {
                continue;
            };
            for skill in fs::read_dir(batch.path())? {
                let skill = skill?;
                let Some(name) = skill.file_name().to_str().map(str::to_string) else {
                    continue;
                };
                if is_hidden(&name) || !skill.file_type()?.is_dir() {
                    continue;
                }
                out.push(BackupRecord {
                    skill_name: name,
                    batch_timestamp: ts.clone(),
                    snapshot_root: skill.path(),
                });
            }
        }
        out.sort_by(|a, b| {
            (&a.batch_timestamp, &a.skill_name).cmp(&(&b.batch_timestamp, &b.skill_name))
        });
        Ok(out)
    }

    /// Backs up `skill_name`, then replaces it with the package at `edited_root`.
    ///
    /// The edited copy is validated before anything on disk changes. The swap
    /// stages a full copy beside the live directory and renames it into place.
    pub fn commit_edit(
        &mut self,
        skill_name: &str,
        edited_root: &Path,
        batch: &BatchTimestamp,
    ) -> Result<EditCommit, StoreError> {
        self.require_writable()?;
        if !self.contains(skill_name) {
            return Err(StoreError::UnknownSkill(skill_name.to_string()));
        }
        let edited = match parse_skill_package(edited_root) {
            Ok(p) => p,
            Err(StoreError::NameMismatch { manifest, dir }) => {
                return Err(StoreError::NameMismatch { manifest, dir })
            }
            Err(e) => return Err(StoreError::ValidationFailed(Box::new(e))),
        };
        if edited.name() != skill_name {
            return Err(StoreError::NameMismatch {
                manifest: edited.name().to_string(),
                dir: skill_name.to_string(),
            });
        }

        let lock = writer_lock(&self.root);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let backup = self.snapshot_locked(skill_name, batch)?;

        let live = self.root.join(skill_name);
        let staging = self.root.join(format!(".staging-{skill_name}-{batch}"));
        let retired = self.root.join(format!(".retired-{skill_name}-{batch}"));
        remove_dir_if_exists(&staging)?;
        copy_dir(edited_root, &staging).map_err(|source| {
            let _ = remove_dir_if_exists(&staging);
            StoreError::CopyFailure {
                path: live.clone(),
                source,
            }
        })?;
        remove_dir_if_exists(&retired)?;
        fs::rename(&live, &retired)?;
        if let Err(e) = fs::rename(&staging, &live) {
            let _ = fs::rename(&retired, &live);
            let _ = remove_dir_if_exists(&staging);
            return Err(e.into());
        }
        remove_dir_if_exists(&retired)?;

        let package = parse_skill_package(&live)?;
        self.packages.insert(skill_name.to_string(), package.clone());
        Ok(EditCommit { package, backup })
    }

    /// Copies a new package into the library. Existing names are never overwritten.
    pub fn commit_new_skill(&mut self, new_root: &Path) -> Result<SkillPackage, StoreError> {
        self.require_writable()?;
        let pkg = parse_skill_package(new_root).map_err(|e| StoreError::ValidationFailed(Box::new(e)))?;
        let name = pkg.name().to_string();

        let lock = writer_lock(&self.root);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let live = self.root.join(&name);
        if self.contains(&name) || fs::symlink_metadata(&live).is_ok() {
            return Err(StoreError::DuplicateSkillName(name));
        }
        let staging = self.root.join(format!(".staging-new-{name}"));
        remove_dir_if_exists(&staging)?;
        copy_dir(new_root, &staging).map_err(|source| {
            let _ = remove_dir_if_exists(&staging);
            StoreError::CopyFailure {
                path: live.clone(),
                source,
            }
        })?;
        fs::rename(&staging, &live)?;
        let package = parse_skill_package(&live)?;
        self.packages.insert(name, package.clone());
        Ok(package)
    }
}

/// Makes `dest` hold exactly the named skills from `source`.
///
/// All names are checked before `dest` is touched, so an unknown name leaves
/// no partial copy. Existing non-hidden subdirectories of `dest` are removed.
/// Duplicate names are installed once.
pub fn install_selection<S: AsRef<str>>(
    source: &SkillLibrary,
    names: &[S],
    dest: &Path,
) -> Result<Vec<SkillPackage>, StoreError> {
    let mut selected: Vec<&SkillPackage> = Vec::new();
    for name in names {
        let name = name.as_ref();
        let pkg = source
            .get(name)
            .ok_or_else(|| StoreError::UnknownSkill(name.to_string()))?;
        if !selected.iter().any(|p| p.name() == name) {
            selected.push(pkg);
        }
    }

    fs::create_dir_all(dest)?;
    for entry in fs::read_dir(dest)? {
        let entry = entry?;
        let hidden = entry.file_name().to_str().map(is_hidden).unwrap_or(false);
        if hidden {
            continue;
        }
        let ft = entry.file_type()?;
        if ft.is_dir() {
            fs::remove_dir_all(entry.path())?;
        } else if ft.is_symlink() {
            fs::remove_file(entry.path())?;
        }
    }

    let mut installed = Vec::with_capacity(selected.len());
    for pkg in selected {
        let target = dest.join(pkg.name());
        copy_dir(&pkg.root, &target).map_err(|source| StoreError::CopyFailure {
            path: target.clone(),
            source,
        })?;
        installed.push(parse_skill_package(&target)?);
    }
    Ok(installed)
}
