//! Fixture helpers for building skill packages on disk.

use std::fs;
use std::path::{Path, PathBuf};

/// Writes `<parent>/<name>/SKILL.md` with a front-matter block naming `name`,
/// followed by `body`, plus each `(relative path, contents)` file.
///
/// Panics on I/O errors; meant for tests and examples.
pub fn write_skill(parent: &Path, name: &str, body: &str, files: &[(&str, &str)]) -> PathBuf {
    let dir = parent.join(name);
    fs::create_dir_all(&dir).expect("create skill dir");
    fs::write(
        dir.join("SKILL.md"),
        format!("---\nname: {name}\ndescription: Fixture skill {name}.\n---\n{body}"),
    )
    .expect("write SKILL.md");
    for (rel, contents) in files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).expect("create resource dir");
        }
        fs::write(path, contents).expect("write resource");
    }
    dir
}
