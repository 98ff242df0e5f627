//! `key=value` configuration files. Each key names a long flag of the chosen
//! subcommand (`ack_power` for `--ack-power`); values from the file are
//! placed before the command-line flags so the latter win.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Command};

/// One `key=value` line of a configuration file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got `{line}`", k + 1);
        };
        entries.push(Entry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line: k + 1,
        });
    }
    Ok(entries)
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn long_names(cmd: &Command) -> impl Iterator<Item = &str> {
    cmd.get_arguments()
        .flat_map(|a| a.get_long().into_iter().chain(a.get_all_aliases().unwrap_or_default()))
}

/// Turns file entries into flags for `subcommand`. Keys that no subcommand
/// knows are errors; keys that belong to other subcommands are skipped.
pub fn to_args(entries: &[Entry], root: &Command, subcommand: &str) -> Result<Vec<String>> {
    let known: BTreeSet<&str> = root.get_subcommands().flat_map(long_names).collect();
    let sub = root
        .find_subcommand(subcommand)
        .with_context(|| format!("unknown subcommand `{subcommand}`"))?;
    let mut args = Vec::new();
    for e in entries {
        let flag = flag_name(&e.key);
        if !known.contains(flag.as_str()) || flag == "config" {
            bail!("unknown key `{}` on line {} of the config file", e.key, e.line);
        }
        let Some(arg) = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(flag.as_str()) || a.get_all_aliases().unwrap_or_default().contains(&flag.as_str()))
        else {
            continue;
        };
        let long = arg.get_long().expect("config keys map to long flags");
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match e.value.as_str() {
                "true" | "1" | "yes" => args.push(format!("--{long}")),
                "false" | "0" | "no" => {}
                other => bail!("key `{}` on line {}: expected true or false, got `{other}`", e.key, e.line),
            }
        } else {
            args.push(format!("--{long}={}", e.value));
        }
    }
    Ok(args)
}

/// Reads and parses a configuration file.
pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    parse(&text).with_context(|| format!("in config file {}", path.display()))
}

/// Splits `--config FILE` / `--config=FILE` out of raw arguments.
pub fn extract_config_path(args: &[String]) -> Result<(Option<String>, Vec<String>)> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let Some(p) = it.next() else {
                bail!("--config needs a file path");
            };
            path = Some(p.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a.clone());
        }
    }
    Ok((path, rest))
}
