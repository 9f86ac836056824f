//! Directory copy and content hashing shared by the store and the orchestrator.

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

/// Recursively copies `src` into `dst`, creating `dst`. Symlinks are refused.
pub fn copy_dir(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in WalkDir::new(src).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .map_err(io::Error::other)?;
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_symlink() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("refusing to copy symlink {}", entry.path().display()),
            ));
        } else if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// SHA-256 over the relative paths and bytes of every entry below `dir`.
///
/// Two trees hash equal iff they contain the same relative paths with the
/// same file contents. Permissions and timestamps do not participate.
pub fn tree_hash(dir: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    hash_tree_into(&mut hasher, dir, |_| true)?;
    Ok(hex::encode(hasher.finalize()))
}

pub(crate) fn hash_tree_into(
    hasher: &mut Sha256,
    dir: &Path,
    mut keep_top: impl FnMut(&str) -> bool,
) -> io::Result<()> {
    let walker = WalkDir::new(dir)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() != 1 || e.file_name().to_str().map(&mut keep_top).unwrap_or(false)
        });
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        let rel = relative_slash_path(dir, entry.path())?;
        let ft = entry.file_type();
        if ft.is_symlink() {
            let target = fs::read_link(entry.path())?;
            hasher.update(b"L\0");
            hasher.update(rel.as_bytes());
            hasher.update(b"\0");
            hasher.update(target.to_string_lossy().as_bytes());
        } else if ft.is_dir() {
            hasher.update(b"D\0");
            hasher.update(rel.as_bytes());
        } else {
            let bytes = fs::read(entry.path())?;
            hasher.update(b"F\0");
            hasher.update(rel.as_bytes());
            hasher.update(b"\0");
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        hasher.update(b"\n");
    }
    Ok(())
}

/// `path` relative to `base`, joined with forward slashes.
pub(crate) fn relative_slash_path(base: &Path, path: &Path) -> io::Result<String> {
    let rel = path.strip_prefix(base).map_err(io::Error::other)?;
    let parts: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    Ok(parts.join("/"))
}

/// True when `path` is relative and contains no `..`, root, or prefix components.
pub fn is_contained_relative(path: &Path) -> bool {
    !path.as_os_str().is_empty()
        && path
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

/// Lexically normalizes an absolute path. Returns `None` when `..` would climb
/// above the root or the path is not absolute.
pub(crate) fn normalize_absolute(path: &Path) -> Option<PathBuf> {
    if !path.is_absolute() {
        return None;
    }
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::Prefix(_) | Component::RootDir => out.push(c.as_os_str()),
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() || out.as_os_str().is_empty() {
                    return None;
                }
            }
            Component::Normal(p) => out.push(p),
        }
    }
    Some(out)
}

/// Pretty JSON to `path`, creating parent directories.
pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
    bytes.push(b'\n');
    fs::write(path, bytes)
}

pub(crate) fn remove_dir_if_exists(path: &Path) -> io::Result<()> {
    match fs::remove_dir_all(path) {
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        other => other,
    }
}
