//! Plain-text `key=value` configuration merged under command-line flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use anyhow::{Context, Result};

use crate::UsageError;

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", n + 1)).into());
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Flags equivalent to a config map. `true`/`false` values toggle switches.
pub fn config_to_flags(config: &BTreeMap<String, String>) -> Vec<OsString> {
    let mut out = Vec::new();
    for (key, value) in config {
        match value.as_str() {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    out
}

/// Removes `--config PATH` from `argv` and splices the file's flags in right
/// after the subcommand, ahead of the user's own flags so those win.
pub fn expand_config(argv: &[OsString]) -> Result<(Vec<OsString>, BTreeMap<String, String>)> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut iter = argv.iter().cloned();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            let value = iter.next().ok_or_else(|| UsageError("--config needs a path".into()))?;
            path = Some(value);
        } else if let Some(value) = text.strip_prefix("--config=") {
            path = Some(value.into());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok((rest, BTreeMap::new()));
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let config = parse_config(&text)?;
    // argv[0] is the program, the first bare word after it the subcommand.
    let at = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|i| i + 2);
    let Some(at) = at else {
        return Err(UsageError("--config needs a subcommand".into()).into());
    };
    let mut merged = rest[..at].to_vec();
    merged.extend(config_to_flags(&config));
    merged.extend_from_slice(&rest[at..]);
    Ok((merged, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_switches() {
        let cfg = parse_config("# run\nsteps = 8\nsampler=mvtm\n\ntime_channel=true\nquiet=false\n").unwrap();
        assert_eq!(cfg["steps"], "8");
        assert_eq!(cfg["time-channel"], "true");
        let flags: Vec<String> = config_to_flags(&cfg).into_iter().map(|f| f.into_string().unwrap()).collect();
        assert_eq!(flags, ["--sampler", "mvtm", "--steps", "8", "--time-channel"]);
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn file_flags_precede_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "steps=4\n").unwrap();
        let argv: Vec<OsString> =
            ["rehash", "sample", "--config", path.to_str().unwrap(), "--steps", "9"].iter().map(Into::into).collect();
        let (merged, cfg) = expand_config(&argv).unwrap();
        let merged: Vec<String> = merged.into_iter().map(|f| f.into_string().unwrap()).collect();
        assert_eq!(merged, ["rehash", "sample", "--steps", "4", "--steps", "9"]);
        assert_eq!(cfg.len(), 1);
    }
}
