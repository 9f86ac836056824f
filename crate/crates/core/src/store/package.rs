use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::manifest::{is_slug, parse_manifest, SkillManifest};
use super::StoreError;
use crate::fsutil::relative_slash_path;

pub const MANIFEST_FILE: &str = "SKILL.md";

/// Optional resource directories recognised inside a package.
pub const RESOURCE_DIRS: [&str; 3] = ["scripts", "references", "assets"];

/// One directory-level skill: the manifest plus its resource files.
///
/// Resource paths are relative to [`SkillPackage::root`] and use `/` separators,
/// e.g. `scripts/run.sh`. Lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillPackage {
    pub root: PathBuf,
    pub manifest: SkillManifest,
    pub scripts: Vec<String>,
    pub references: Vec<String>,
    pub assets: Vec<String>,
    /// Files outside `SKILL.md` and the resource directories. Recorded, otherwise ignored.
    pub other_files: Vec<String>,
}

impl SkillPackage {
    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    /// All resource files in `scripts`, `references`, `assets` order.
    pub fn resources(&self) -> impl Iterator<Item = &str> {
        self.scripts
            .iter()
            .chain(&self.references)
            .chain(&self.assets)
            .map(String::as_str)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    /// Field-wise equality ignoring where the package lives on disk.
    pub fn same_content_as(&self, other: &SkillPackage) -> bool {
        self.manifest == other.manifest
            && self.scripts == other.scripts
            && self.references == other.references
            && self.assets == other.assets
            && self.other_files == other.other_files
    }
}

/// Parses the package rooted at `dir`.
pub fn parse_skill_package(dir: &Path) -> Result<SkillPackage, StoreError> {
    let meta = fs::symlink_metadata(dir)?;
    if meta.file_type().is_symlink() {
        return Err(StoreError::PathEscape(dir.to_path_buf()));
    }
    if !meta.is_dir() {
        return Err(StoreError::Io(io::Error::new(
            io::ErrorKind::NotADirectory,
            format!("{} is not a directory", dir.display()),
        )));
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_meta = match fs::symlink_metadata(&manifest_path) {
        Ok(m) => m,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(StoreError::MissingManifest(dir.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    if manifest_meta.file_type().is_symlink() {
        return Err(StoreError::PathEscape(manifest_path));
    }
    if !manifest_meta.is_file() {
        return Err(StoreError::MissingManifest(dir.to_path_buf()));
    }
    let bytes = fs::read(&manifest_path)?;
    let text = String::from_utf8(bytes).map_err(|_| StoreError::ManifestParse {
        path: manifest_path.clone(),
        reason: "SKILL.md is not valid UTF-8".into(),
    })?;
    let manifest = parse_manifest(&text).map_err(|reason| StoreError::ManifestParse {
        path: manifest_path.clone(),
        reason,
    })?;

    let dir_name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    if manifest.name != dir_name {
        return Err(StoreError::NameMismatch {
            manifest: manifest.name,
            dir: dir_name,
        });
    }
    if !is_slug(&dir_name) {
        return Err(StoreError::InvalidName(dir_name));
    }

    let mut scripts = Vec::new();
    let mut references = Vec::new();
    let mut assets = Vec::new();
    let mut other_files = Vec::new();
    for entry in WalkDir::new(dir).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        if entry.file_type().is_symlink() {
            return Err(StoreError::PathEscape(entry.path().to_path_buf()));
        }
        if entry.file_type().is_dir() {
            continue;
        }
        let rel = relative_slash_path(dir, entry.path())?;
        if rel == MANIFEST_FILE {
            continue;
        }
        match rel.split('/').next() {
            Some("scripts") if rel.contains('/') => scripts.push(rel),
            Some("references") if rel.contains('/') => references.push(rel),
            Some("assets") if rel.contains('/') => assets.push(rel),
            _ => other_files.push(rel),
        }
    }

    Ok(SkillPackage {
        root: dir.to_path_buf(),
        manifest,
        scripts,
        references,
        assets,
        other_files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::testing::write_skill;

    #[test]
    fn minimal_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_skill(tmp.path(), "demo-skill", "Use it.\n", &[]);
        let pkg = parse_skill_package(&dir).unwrap();
        assert_eq!(pkg.name(), "demo-skill");
        assert!(pkg.scripts.is_empty());
        assert!(pkg.references.is_empty());
        assert!(pkg.assets.is_empty());
        assert!(pkg.other_files.is_empty());
    }

    #[test]
    fn full_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_skill(
            tmp.path(),
            "demo-skill",
            "Use it.\n",
            &[
                ("scripts/run.sh", "#!/bin/sh\necho hi\n"),
                ("references/doc.md", "# doc\n"),
                ("assets/tpl.html", "<html></html>\n"),
                ("LICENSE", "MIT\n"),
            ],
        );
        let pkg = parse_skill_package(&dir).unwrap();
        assert_eq!(pkg.scripts, vec!["scripts/run.sh"]);
        assert_eq!(pkg.references, vec!["references/doc.md"]);
        assert_eq!(pkg.assets, vec!["assets/tpl.html"]);
        assert_eq!(pkg.other_files, vec!["LICENSE"]);
    }

    #[test]
    fn nested_resources_are_listed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_skill(
            tmp.path(),
            "nested",
            "x\n",
            &[("references/api/v1.md", "a"), ("references/api/v2.md", "b")],
        );
        let pkg = parse_skill_package(&dir).unwrap();
        assert_eq!(pkg.references, vec!["references/api/v1.md", "references/api/v2.md"]);
    }

    #[test]
    fn scripts_without_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("orphan");
        fs::create_dir_all(dir.join("scripts")).unwrap();
        fs::write(dir.join("scripts/run.sh"), "echo").unwrap();
        assert!(matches!(
            parse_skill_package(&dir),
            Err(StoreError::MissingManifest(_))
        ));
    }

    #[test]
    fn front_matter_problems() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("SKILL.md"), "no fence\n").unwrap();
        assert!(matches!(
            parse_skill_package(&dir),
            Err(StoreError::ManifestParse { .. })
        ));
        fs::write(dir.join("SKILL.md"), "---\ndescription: d\n---\nbody\n").unwrap();
        assert!(matches!(
            parse_skill_package(&dir),
            Err(StoreError::ManifestParse { .. })
        ));
        fs::write(dir.join("SKILL.md"), "").unwrap();
        assert!(matches!(
            parse_skill_package(&dir),
            Err(StoreError::ManifestParse { .. })
        ));
    }

    #[test]
    fn name_must_match_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("SKILL.md"), "---\nname: other\n---\nbody\n").unwrap();
        assert!(matches!(
            parse_skill_package(&dir),
            Err(StoreError::NameMismatch { .. })
        ));
    }

    #[test]
    fn non_slug_directory_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("Demo_Skill");
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("SKILL.md"), "---\nname: Demo_Skill\n---\nbody\n").unwrap();
        assert!(matches!(
            parse_skill_package(&dir),
            Err(StoreError::InvalidName(_))
        ));
    }

    #[cfg(unix)]
    #[test]
    fn symlinks_are_path_escapes() {
        let tmp = tempfile::tempdir().unwrap();
        let outside = tmp.path().join("secret.txt");
        fs::write(&outside, "s").unwrap();
        let dir = write_skill(tmp.path(), "linky", "x\n", &[]);
        fs::create_dir_all(dir.join("references")).unwrap();
        std::os::unix::fs::symlink(&outside, dir.join("references/secret.txt")).unwrap();
        assert!(matches!(
            parse_skill_package(&dir),
            Err(StoreError::PathEscape(_))
        ));
    }
}
