//! `key = value` config files, merged into the argument list ahead of the
//! command-line flags so that the latter win.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::input(format!("config line {}: expected `key = value`, found `{line}`", i + 1)));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::input(format!("config line {}: invalid key `{}`", i + 1, key)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

/// Value of `--config` in `args`, if any.
pub fn find_config(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Inserts the config entries as flags right after the subcommand name.
/// `true`/`false` values toggle boolean switches.
pub fn merge(args: Vec<OsString>, entries: &[(String, String)]) -> Vec<OsString> {
    let mut it = args.into_iter();
    let mut out: Vec<OsString> = it.next().into_iter().collect();
    let mut pending_value = false;
    for a in it.by_ref() {
        let s = a.to_string_lossy().into_owned();
        out.push(a);
        if pending_value {
            pending_value = false;
        } else if s == "--config" {
            pending_value = true;
        } else if !s.starts_with('-') {
            break;
        }
    }
    for (key, value) in entries {
        match value.as_str() {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => out.push(format!("--{key}={value}").into()),
        }
    }
    out.extend(it);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_underscores() {
        let e = parse("# header\nsigma_rel = 0.05  # inline\n\n--trials=100\n").unwrap();
        assert_eq!(e, vec![("sigma-rel".into(), "0.05".into()), ("trials".into(), "100".into())]);
        assert!(parse("trials 100").is_err());
    }

    #[test]
    fn entries_go_after_the_subcommand() {
        let args = os(&["effifit", "--config", "c.txt", "simulate", "--trials", "5"]);
        assert_eq!(find_config(&args), Some("c.txt".into()));
        let merged = merge(args, &[("trials".into(), "100".into()), ("inject-fault".into(), "true".into())]);
        assert_eq!(merged, os(&["effifit", "--config", "c.txt", "simulate", "--trials=100", "--inject-fault", "--trials", "5"]));
    }
}
