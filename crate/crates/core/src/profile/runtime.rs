//! Lexical runtime-requirement extraction.
//!
//! Shell commands are read from fenced shell blocks in the manifest body,
//! `$ `/`sudo ` inline code spans, and shell scripts under `scripts/`.
//! Identifier patterns (env vars, key names, MCP servers) are read from the
//! whole manifest body and every script.

use std::collections::BTreeSet;
use std::fs;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::store::SkillPackage;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeRequirementProfile {
    pub os_assumptions: Vec<String>,
    pub needs_write_permission: bool,
    pub needs_sudo: bool,
    pub needs_network: bool,
    pub api_keys: Vec<String>,
    pub cli_tools: Vec<String>,
    pub mcp_servers: Vec<String>,
    pub env_vars: Vec<String>,
}

const NETWORK_COMMANDS: &[&str] = &[
    "curl", "wget", "ssh", "scp", "sftp", "rsync", "ftp", "telnet", "nc", "ping", "dig", "nslookup",
];

const WRITE_COMMANDS: &[&str] = &[
    "mkdir", "touch", "cp", "mv", "rm", "tee", "chmod", "chown", "ln", "dd", "install",
];

const PACKAGE_MANAGERS: &[&str] = &[
    "apt", "apt-get", "yum", "dnf", "pip", "pip3", "npm", "yarn", "pnpm", "cargo", "brew", "gem",
    "go", "apk", "pacman", "conda", "uv", "choco", "winget",
];

const FETCH_SUBCOMMANDS: &[&str] = &["install", "add", "get", "update", "upgrade", "-S", "-Sy", "sync", "clone"];

/// Tokens that may precede the real command name.
const WRAPPERS: &[&str] = &["env", "time", "nohup", "exec", "command", "nice"];

const SHELL_WORDS: &[&str] = &[
    "if", "then", "else", "elif", "fi", "for", "in", "do", "done", "while", "until", "case", "esac",
    "function", "select", "cd", "echo", "export", "set", "unset", "source", ".", "read", "printf",
    "test", "[", "[[", "]", "]]", "true", "false", "return", "exit", "local", "shift", "eval", "alias",
    "trap", "wait", "declare", "let", "pushd", "popd", "type", "hash", "ulimit", "umask", "{", "}",
    "(", ")", "!", "break", "continue", "readonly", "getopts",
];

fn os_for_command(cmd: &str) -> Option<&'static str> {
    Some(match cmd {
        "apt" | "apt-get" | "dpkg" | "apt-cache" => "debian",
        "yum" | "dnf" | "rpm" => "rhel",
        "brew" | "launchctl" | "defaults" => "macos",
        "pacman" => "arch",
        "apk" => "alpine",
        "systemctl" | "journalctl" => "linux",
        "powershell" | "choco" | "winget" => "windows",
        _ => return None,
    })
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn url_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b(?:https?|ftp)://[^\s)>\]`'\x22]+")
}

fn env_ref_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\$\{?([A-Z][A-Z0-9_]*)")
}

fn export_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\bexport\s+([A-Z][A-Z0-9_]*)")
}

fn env_api_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r#"(?:os\.environ(?:\.get)?\s*[\[(]|getenv\s*\(|env::var\s*\()\s*["']([A-Z][A-Z0-9_]*)["']|process\.env\.([A-Z][A-Z0-9_]*)"#,
    )
}

fn api_key_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b([A-Z][A-Z0-9_]*_(?:KEY|TOKEN))\b")
}

fn mcp_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"\bmcp__([a-z0-9][a-z0-9_-]*?)__|\bmcp-server-([a-z0-9][a-z0-9-]*)|@modelcontextprotocol/server-([a-z0-9][a-z0-9-]*)",
    )
}

fn redirect_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?:^|[^<>=-])\d?>>?\s*([^\s;&|]+|&\d)")
}

fn inline_code_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"`([^`\n]+)`")
}

#[derive(Default)]
struct Acc {
    os: BTreeSet<String>,
    write: bool,
    sudo: bool,
    network: bool,
    api_keys: BTreeSet<String>,
    tools: BTreeSet<String>,
    mcp: BTreeSet<String>,
    env: BTreeSet<String>,
}

impl Acc {
    fn finish(self) -> RuntimeRequirementProfile {
        RuntimeRequirementProfile {
            os_assumptions: self.os.into_iter().collect(),
            needs_write_permission: self.write,
            needs_sudo: self.sudo,
            needs_network: self.network,
            api_keys: self.api_keys.into_iter().collect(),
            cli_tools: self.tools.into_iter().collect(),
            mcp_servers: self.mcp.into_iter().collect(),
            env_vars: self.env.into_iter().collect(),
        }
    }

    /// Identifier-level patterns that apply to any text.
    fn scan_identifiers(&mut self, text: &str) {
        for c in env_ref_re().captures_iter(text) {
            self.env.insert(c[1].to_string());
        }
        for c in export_re().captures_iter(text) {
            self.env.insert(c[1].to_string());
        }
        for c in env_api_re().captures_iter(text) {
            if let Some(m) = c.get(1).or_else(|| c.get(2)) {
                self.env.insert(m.as_str().to_string());
            }
        }
        for c in api_key_re().captures_iter(text) {
            self.api_keys.insert(c[1].to_string());
        }
        for c in mcp_re().captures_iter(text) {
            if let Some(m) = c.get(1).or_else(|| c.get(2)).or_else(|| c.get(3)) {
                self.mcp.insert(m.as_str().replace('_', "-"));
            }
        }
    }

    /// Code (not prose): URLs here mean the skill fetches something.
    fn scan_code(&mut self, code: &str) {
        if url_re().is_match(code) {
            self.network = true;
        }
    }

    fn scan_shell(&mut self, script: &str) {
        self.scan_code(script);
        for line in logical_lines(script) {
            self.scan_shell_line(&line);
        }
    }

    fn scan_shell_line(&mut self, line: &str) {
        for c in redirect_re().captures_iter(line) {
            let target = &c[1];
            if !target.starts_with('&') && target != "/dev/null" {
                self.write = true;
            }
        }
        for segment in split_segments(line) {
            self.scan_segment(segment);
        }
    }

    fn scan_segment(&mut self, segment: &str) {
        let mut tokens = segment.split_whitespace().peekable();
        let mut cmd = None;
        while let Some(tok) = tokens.next() {
            if is_assignment(tok) {
                continue;
            }
            if tok == "sudo" {
                self.sudo = true;
                while tokens.peek().is_some_and(|t| t.starts_with('-')) {
                    tokens.next();
                }
                continue;
            }
            if WRAPPERS.contains(&tok) {
                continue;
            }
            cmd = Some(tok);
            break;
        }
        let Some(cmd) = cmd else { return };
        if !is_command_name(cmd) || SHELL_WORDS.contains(&cmd) {
            return;
        }
        self.tools.insert(cmd.to_string());
        if let Some(os) = os_for_command(cmd) {
            self.os.insert(os.to_string());
        }
        if NETWORK_COMMANDS.contains(&cmd) {
            self.network = true;
        }
        if WRITE_COMMANDS.contains(&cmd) {
            self.write = true;
        }
        if PACKAGE_MANAGERS.contains(&cmd) {
            let rest: Vec<&str> = tokens.collect();
            if rest.iter().any(|t| FETCH_SUBCOMMANDS.contains(t)) {
                self.network = true;
            }
        } else if cmd == "git" {
            let rest: Vec<&str> = tokens.collect();
            if rest.iter().any(|t| matches!(*t, "clone" | "fetch" | "pull" | "push")) {
                self.network = true;
            }
        }
    }
}

fn is_assignment(tok: &str) -> bool {
    match tok.split_once('=') {
        Some((name, _)) => {
            !name.is_empty()
                && name
                    .bytes()
                    .enumerate()
                    .all(|(i, b)| b == b'_' || b.is_ascii_alphabetic() || (i > 0 && b.is_ascii_digit()))
        }
        None => false,
    }
}

fn is_command_name(tok: &str) -> bool {
    let mut bytes = tok.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphanumeric())
        && bytes.all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'+' | b'-'))
}

/// Joins `\` continuations and drops comments and blank lines.
fn logical_lines(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for raw in text.lines() {
        let line = raw.trim();
        if pending.is_empty() && (line.is_empty() || line.starts_with('#')) {
            continue;
        }
        if let Some(stripped) = line.strip_suffix('\\') {
            pending.push_str(stripped);
            pending.push(' ');
            continue;
        }
        pending.push_str(line);
        let mut full = std::mem::take(&mut pending);
        if let Some(idx) = full.find(" #") {
            full.truncate(idx);
        }
        out.push(full);
    }
    if !pending.is_empty() {
        out.push(pending);
    }
    out
}

fn split_segments(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let two = &bytes[i..(i + 2).min(bytes.len())];
        let width = match two {
            b"&&" | b"||" | b"$(" => 2,
            [b';', ..] | [b'|', ..] | [b'`', ..] | [b'(', ..] | [b')', ..] => 1,
            _ => 0,
        };
        if width > 0 {
            out.push(&line[start..i]);
            i += width;
            start = i;
        } else {
            i += 1;
        }
    }
    out.push(&line[start..]);
    out
}

enum BlockKind {
    Shell,
    Console,
    Other,
}

fn block_kind(info: &str) -> BlockKind {
    let lang = info.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
    match lang.as_str() {
        "sh" | "bash" | "shell" | "zsh" | "powershell" | "pwsh" | "ps1" => BlockKind::Shell,
        "" | "console" | "shellsession" | "terminal" => BlockKind::Console,
        _ => BlockKind::Other,
    }
}

/// Feeds fenced blocks and inline commands of a markdown body into `acc`.
fn scan_markdown(acc: &mut Acc, body: &str) {
    let mut fence: Option<(String, BlockKind)> = None;
    let mut block = String::new();
    for line in body.lines() {
        let trimmed = line.trim_start();
        if let Some((marker, kind)) = &fence {
            if trimmed.starts_with(marker.as_str()) && trimmed.trim_end() == marker.as_str() {
                match kind {
                    BlockKind::Shell => acc.scan_shell(&block),
                    BlockKind::Console => {
                        acc.scan_code(&block);
                        for l in block.lines() {
                            if let Some(cmd) = l.trim_start().strip_prefix("$ ") {
                                acc.scan_shell(cmd);
                            }
                        }
                    }
                    BlockKind::Other => acc.scan_code(&block),
                }
                block.clear();
                fence = None;
            } else {
                block.push_str(line);
                block.push('\n');
            }
            continue;
        }
        let marker = if trimmed.starts_with("```") {
            "```"
        } else if trimmed.starts_with("~~~") {
            "~~~"
        } else {
            for c in inline_code_re().captures_iter(line) {
                let span = c[1].trim();
                if let Some(cmd) = span.strip_prefix("$ ") {
                    acc.scan_shell(cmd);
                } else if span.starts_with("sudo ") {
                    acc.scan_shell(span);
                } else {
                    acc.scan_code(span);
                }
            }
            continue;
        };
        let info = trimmed.trim_start_matches(marker.as_bytes()[0] as char);
        fence = Some((marker.to_string(), block_kind(info)));
    }
    // An unterminated fence still counts as code.
    if let Some((_, kind)) = fence {
        match kind {
            BlockKind::Shell => acc.scan_shell(&block),
            _ => acc.scan_code(&block),
        }
    }
}

fn is_shell_script(rel: &str, text: &str) -> bool {
    let ext_shell = [".sh", ".bash", ".zsh", ".ps1"].iter().any(|e| rel.ends_with(e));
    let first = text.lines().next().unwrap_or("");
    ext_shell || (first.starts_with("#!") && (first.contains("sh") || first.contains("pwsh")))
}

/// Extracts the runtime profile plus warnings for unreadable script files.
pub fn runtime_requirements_with_warnings(
    pkg: &SkillPackage,
) -> (RuntimeRequirementProfile, Vec<String>) {
    let mut acc = Acc::default();
    let mut warnings = Vec::new();
    acc.scan_identifiers(&pkg.manifest.raw_body);
    scan_markdown(&mut acc, &pkg.manifest.raw_body);
    for rel in &pkg.scripts {
        let bytes = match fs::read(pkg.root.join(rel)) {
            Ok(b) => b,
            Err(e) => {
                warnings.push(format!("{rel}: unreadable ({e})"));
                continue;
            }
        };
        let Ok(text) = String::from_utf8(bytes) else {
            warnings.push(format!("{rel}: not UTF-8 text, skipped"));
            continue;
        };
        acc.scan_identifiers(&text);
        if is_shell_script(rel, &text) {
            acc.scan_shell(&text);
        } else {
            acc.scan_code(&text);
        }
    }
    (acc.finish(), warnings)
}

/// Pure function of the package bytes: the same input always yields the same profile.
pub fn profile_runtime_requirements(pkg: &SkillPackage) -> RuntimeRequirementProfile {
    runtime_requirements_with_warnings(pkg).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::parse_skill_package;
    use crate::store::testing::write_skill;

    fn profile(body: &str, files: &[(&str, &str)]) -> (RuntimeRequirementProfile, Vec<String>) {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_skill(tmp.path(), "p", body, files);
        let pkg = parse_skill_package(&dir).unwrap();
        runtime_requirements_with_warnings(&pkg)
    }

    #[test]
    fn sudo_apt_in_script() {
        let (p, w) = profile("Run the script.\n", &[("scripts/setup.sh", "#!/bin/bash\nsudo apt-get install git\n")]);
        assert!(w.is_empty());
        assert!(p.needs_sudo);
        assert!(p.needs_network);
        assert_eq!(p.cli_tools, vec!["apt-get"]);
        assert_eq!(p.os_assumptions, vec!["debian"]);
    }

    #[test]
    fn exported_key_in_manifest() {
        let (p, _) = profile("Set `export OPENAI_API_KEY=...` first.\n", &[]);
        assert_eq!(p.env_vars, vec!["OPENAI_API_KEY"]);
        assert_eq!(p.api_keys, vec!["OPENAI_API_KEY"]);
    }

    #[test]
    fn minimal_package_is_empty() {
        let (p, w) = profile("Just read this.\n", &[]);
        assert_eq!(p, RuntimeRequirementProfile::default());
        assert!(w.is_empty());
    }

    #[test]
    fn fenced_block_commands() {
        let body = "Steps:\n\n```bash\nFOO=1 git clone https://example.com/r.git && cd r\nmkdir -p out; python3 run.py > out/log.txt 2>&1\ncat x | grep y\n./local.sh\n```\n";
        let (p, _) = profile(body, &[]);
        assert_eq!(p.cli_tools, vec!["cat", "git", "grep", "mkdir", "python3"]);
        assert!(p.needs_network);
        assert!(p.needs_write_permission);
        assert!(!p.needs_sudo);
    }

    #[test]
    fn dev_null_redirect_is_not_a_write() {
        let (p, _) = profile("```sh\nls > /dev/null 2>&1\n```\n", &[]);
        assert!(!p.needs_write_permission);
        assert_eq!(p.cli_tools, vec!["ls"]);
    }

    #[test]
    fn console_blocks_only_read_prompt_lines() {
        let body = "```console\n$ docker ps\nCONTAINER ID   IMAGE\nabc   nginx\n```\n";
        let (p, _) = profile(body, &[]);
        assert_eq!(p.cli_tools, vec!["docker"]);
    }

    #[test]
    fn prose_urls_do_not_imply_network() {
        let (p, _) = profile("See https://example.com for docs.\n", &[]);
        assert!(!p.needs_network);
        let (p, _) = profile("```python\nrequests.get('https://api.example.com')\n```\n", &[]);
        assert!(p.needs_network);
    }

    #[test]
    fn env_and_mcp_patterns() {
        let script = "import os\nkey = os.environ['GITHUB_TOKEN']\nhome = os.getenv(\"HOME_DIR\")\n";
        let body = "Call mcp__github__create_issue or run `$ npx @modelcontextprotocol/server-filesystem`.\nUse ${WORKDIR}.\n";
        let (p, _) = profile(body, &[("scripts/a.py", script)]);
        assert_eq!(p.env_vars, vec!["GITHUB_TOKEN", "HOME_DIR", "WORKDIR"]);
        assert_eq!(p.api_keys, vec!["GITHUB_TOKEN"]);
        assert_eq!(p.mcp_servers, vec!["filesystem", "github"]);
        assert_eq!(p.cli_tools, vec!["npx"]);
    }

    #[test]
    fn os_hints() {
        let (p, _) = profile("```sh\nbrew install jq\nsudo systemctl restart nginx\n```\n", &[]);
        assert_eq!(p.os_assumptions, vec!["linux", "macos"]);
        assert!(p.needs_sudo);
    }

    #[test]
    fn binary_script_warns() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_skill(tmp.path(), "p", "x\n", &[]);
        fs::create_dir_all(dir.join("scripts")).unwrap();
        fs::write(dir.join("scripts/blob.bin"), [0xff, 0xfe, 0x00]).unwrap();
        let pkg = parse_skill_package(&dir).unwrap();
        let (_, w) = runtime_requirements_with_warnings(&pkg);
        assert_eq!(w.len(), 1);
        assert!(w[0].starts_with("scripts/blob.bin"));
    }

    #[test]
    fn continuation_and_comments() {
        let lines = logical_lines("# c\ncurl \\\n  -O x # trailing\n\nls\n");
        assert_eq!(lines, vec!["curl  -O x", "ls"]);
    }

    #[test]
    fn segments() {
        assert_eq!(split_segments("a && b || c; d | e $(f)"), vec!["a ", " b ", " c", " d ", " e ", "f", ""]);
    }
}
