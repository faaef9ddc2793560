//! Minimal path globbing (`*`, `?`, `**`) on top of `regex`.

use std::path::{Component, Path, PathBuf};

use regex::Regex;

fn has_wildcard(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

/// Translates one glob into an anchored regex over `/`-separated paths.
pub fn glob_to_regex(pattern: &str) -> Regex {
    let mut re = String::from("^");
    let chars: Vec<char> = pattern.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '*' if chars.get(i + 1) == Some(&'*') => {
                // `**/` matches zero or more directories
                if chars.get(i + 2) == Some(&'/') {
                    re.push_str("(?:[^/]*/)*");
                    i += 3;
                } else {
                    re.push_str(".*");
                    i += 2;
                }
                continue;
            }
            '*' => re.push_str("[^/]*"),
            '?' => re.push_str("[^/]"),
            c => re.push_str(&regex::escape(&c.to_string())),
        }
        i += 1;
    }
    re.push('$');
    Regex::new(&re).expect("escaped glob is a valid regex")
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            walk(&path, out);
        } else {
            out.push(path);
        }
    }
}

fn slash(path: &Path) -> String {
    path.components()
        .filter(|c| !matches!(c, Component::CurDir))
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
        .replacen("//", "/", 1)
}

/// Files matching `pattern`, sorted. A pattern without wildcards matches
/// itself if it is an existing file.
pub fn expand(pattern: &str) -> Vec<PathBuf> {
    if !has_wildcard(pattern) {
        let p = PathBuf::from(pattern);
        return if p.is_file() { vec![p] } else { Vec::new() };
    }
    // Walk from the longest literal directory prefix.
    let parts: Vec<&str> = pattern.split('/').collect();
    let literal = parts.iter().take_while(|p| !has_wildcard(p)).count();
    let base = if literal == 0 {
        PathBuf::from(".")
    } else {
        let joined = parts[..literal].join("/");
        PathBuf::from(if joined.is_empty() { "/".to_string() } else { joined })
    };
    let norm_pattern = slash(Path::new(pattern));
    let re = glob_to_regex(&norm_pattern);
    let mut files = Vec::new();
    walk(&base, &mut files);
    let mut hits: Vec<PathBuf> = files.into_iter().filter(|f| re.is_match(&slash(f))).collect();
    hits.sort();
    hits
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regex_translation() {
        let re = glob_to_regex("runs/*/report.json");
        assert!(re.is_match("runs/xception/report.json"));
        assert!(!re.is_match("runs/a/b/report.json"));
        let re = glob_to_regex("runs/**/report.json");
        assert!(re.is_match("runs/report.json"));
        assert!(re.is_match("runs/a/b/report.json"));
        assert!(glob_to_regex("r?n.json").is_match("run.json"));
        assert!(!glob_to_regex("a.json").is_match("a_json"));
    }

    #[test]
    fn expands_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["a", "b", "c/d"] {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
            std::fs::write(dir.path().join(sub).join("report.json"), "{}").unwrap();
        }
        let root = dir.path().display().to_string();
        assert_eq!(expand(&format!("{root}/*/report.json")).len(), 2);
        assert_eq!(expand(&format!("{root}/**/report.json")).len(), 3);
        assert_eq!(expand(&format!("{root}/a/report.json")).len(), 1);
        assert!(expand(&format!("{root}/zzz/*.json")).is_empty());
    }
}
