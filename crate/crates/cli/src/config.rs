//! `--config FILE` support: the file's entries become ordinary flags, inserted
//! right after the subcommand unless the same flag is already on the command line.

use std::fs;

use anyhow::{bail, Context, Result};
use serde_json::Value;

const SUBCOMMANDS: &[&str] = &[
    "generate",
    "split",
    "train",
    "eval",
    "noise-sweep",
    "remove-sweep",
    "ablate",
    "params",
];

/// Global flags that take a value and may appear before the subcommand.
const GLOBAL_VALUED: &[&str] = &["--config", "--threads"];

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(arg) = it.next() {
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            return it.next().cloned();
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            return Some(path.to_string());
        }
    }
    None
}

fn subcommand_position(argv: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].as_str();
        if SUBCOMMANDS.contains(&arg) {
            return Some(i);
        }
        i += if GLOBAL_VALUED.contains(&arg) { 2 } else { 1 };
    }
    None
}

fn on_command_line(argv: &[String], flag: &str) -> bool {
    let with_value = format!("{flag}=");
    argv.iter().any(|a| a == flag || a.starts_with(&with_value))
}

fn scalar(value: &Value, key: &str) -> Result<String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => bail!("config key '{key}' holds an unsupported value"),
    }
}

/// Returns `argv` with the config file's flags spliced in.
pub fn merge_config_file(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text =
        fs::read_to_string(&path).with_context(|| format!("cannot open config file {path}"))?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("malformed JSON in config file {path}"))?;
    let Value::Object(entries) = value else {
        bail!("config file {path} must hold a JSON object")
    };
    let Some(pos) = subcommand_position(&argv) else {
        return Ok(argv);
    };

    let mut injected = Vec::new();
    for (key, value) in &entries {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || on_command_line(&argv, &flag) {
            continue;
        }
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => injected.push(flag),
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| scalar(v, key))
                    .collect::<Result<Vec<_>>>()?;
                injected.push(format!("{flag}={}", parts.join(",")));
            }
            other => injected.push(format!("{flag}={}", scalar(other, key)?)),
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}
