//! JSON configuration files. Every key names a long flag; values are
//! expanded into arguments appended after the command line, so flags given
//! explicitly win. A run manifest is itself a valid config.

use std::ffi::OsString;
use std::path::Path;

use serde_json::{Map, Value};

use crate::CliError;

/// Flags that take a value and may appear before the subcommand.
const GLOBAL_VALUED: [&str; 3] = ["--seed", "--threads", "--config"];

/// `(config path, subcommand name)` found by a light scan of `argv`.
pub fn scan(argv: &[OsString]) -> (Option<OsString>, Option<String>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            config = argv.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.into());
        } else if GLOBAL_VALUED.contains(&a.as_ref()) {
            i += 1;
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(a.into_owned());
        }
        i += 1;
    }
    (config, sub)
}

fn present(argv: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&eq)
    })
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Arguments contributed by the config file at `path` for `sub`.
pub fn expand(path: &Path, sub: Option<&str>, argv: &[OsString]) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let root = root
        .as_object()
        .ok_or_else(|| CliError::Usage("config must be a JSON object".into()))?;
    if let (Some(Value::String(cmd)), Some(sub)) = (root.get("command"), sub) {
        if cmd != sub {
            return Err(CliError::Usage(format!("config is for `{cmd}`, not `{sub}`")));
        }
    }
    let mut flags: Map<String, Value> = match root.get("flags") {
        Some(Value::Object(f)) => f.clone(),
        Some(_) => return Err(CliError::Usage("config `flags` must be an object".into())),
        None => root
            .iter()
            .filter(|(k, _)| k.as_str() != "command")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    };
    if root.contains_key("flags") {
        if let Some(s) = root.get("seed") {
            flags.insert("seed".into(), s.clone());
        }
    }
    let mut out = Vec::new();
    for (key, v) in flags {
        let flag = format!("--{key}");
        if key == "config" || present(argv, &flag) {
            continue;
        }
        match &v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                if items.is_empty() {
                    continue;
                }
                let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
                let parts = parts.ok_or_else(|| CliError::Usage(format!("config key `{key}` must hold scalars")))?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            other => {
                let s = scalar(other).ok_or_else(|| CliError::Usage(format!("config key `{key}` has an object value")))?;
                out.push(flag.into());
                out.push(s.into());
            }
        }
    }
    Ok(out)
}
