//! TOML pipeline config, merged into the command line as leading flags.
//!
//! A section per subcommand path (`[labels.densify]`, `[train]`) holds keys
//! named after the long flags. Top-level scalar keys are global flags.
//! Flags given on the command line come later and win.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Command};
use toml::{Table, Value};

pub fn load(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing config {}", path.display()))
}

fn find_long<'a>(cmd: &'a Command, key: &str) -> Option<&'a clap::Arg> {
    let key = key.replace('_', "-");
    cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str()))
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => format!("{f:?}"),
        Value::Boolean(b) => b.to_string(),
        _ => bail!("config key '{key}': expected a scalar"),
    })
}

fn push_flag(out: &mut Vec<String>, arg: &clap::Arg, key: &str, v: &Value) -> Result<()> {
    let long = format!("--{}", arg.get_long().expect("looked up by long name"));
    match arg.get_action() {
        ArgAction::SetTrue => match v {
            Value::Boolean(true) => out.push(long),
            Value::Boolean(false) => {}
            _ => bail!("config key '{key}': expected a boolean"),
        },
        ArgAction::Append => {
            let items = match v {
                Value::Array(items) => items.iter().map(|x| scalar(key, x)).collect::<Result<Vec<_>>>()?,
                other => vec![scalar(key, other)?],
            };
            for item in items {
                out.push(long.clone());
                out.push(item);
            }
        }
        _ => {
            let s = match v {
                Value::Array(items) => items
                    .iter()
                    .map(|x| scalar(key, x))
                    .collect::<Result<Vec<_>>>()?
                    .join(","),
                other => scalar(key, other)?,
            };
            out.push(long);
            out.push(s);
        }
    }
    Ok(())
}

/// Flags for the subcommand at `path`, followed by global flags, derived from
/// `table`. Unknown sections and keys are schema violations.
pub fn to_flags(table: &Table, root: &Command, path: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    let mut global = Vec::new();
    for (key, v) in table {
        if v.is_table() {
            if root.find_subcommand(key).is_none() {
                bail!("config section [{key}] names no subcommand");
            }
            continue;
        }
        let arg = find_long(root, key)
            .filter(|a| a.is_global_set())
            .with_context(|| format!("config key '{key}' is not a global flag"))?;
        if arg.get_long() == Some("config") {
            bail!("config files cannot include other config files");
        }
        push_flag(&mut global, arg, key, v)?;
    }

    let mut local = Vec::new();
    let mut cmd = root;
    let mut section = Some(table);
    for (depth, name) in path.iter().enumerate() {
        cmd = cmd.find_subcommand(name).expect("path comes from parsed matches");
        section = section.and_then(|t| t.get(name)).and_then(Value::as_table);
        let Some(t) = section else { break };
        let leaf = depth + 1 == path.len();
        for (key, v) in t {
            if v.is_table() {
                if cmd.find_subcommand(key).is_none() {
                    bail!(
                        "config section [{}.{key}] names no subcommand",
                        path[..=depth].join(".")
                    );
                }
                continue;
            }
            if !leaf {
                bail!(
                    "config key '{key}' must sit in a leaf section, not [{}]",
                    path[..=depth].join(".")
                );
            }
            let arg = find_long(cmd, key)
                .with_context(|| format!("config key '{key}' is not a flag of '{}'", path.join(" ")))?;
            push_flag(&mut local, arg, key, v)?;
        }
    }
    Ok((local, global))
}
