//! `--config` support: values from a TOML file become extra flags, but only
//! for arguments that were not given on the command line or through their
//! environment variable.
//!
//! Top-level keys apply to every subcommand that accepts them; a table named
//! after a subcommand applies to that subcommand only.

use std::ffi::OsString;

use clap::{Arg, Command};

pub const CONFIG_ENV: &str = "CLARION_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("argument is not valid UTF-8: {0:?}")]
    NotUtf8(OsString),
    #[error("config file {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("config file {path}: unknown key `{key}` for `{command}`")]
    UnknownKey { path: String, command: String, key: String },
    #[error("config file {path}: unsupported value for `{key}`")]
    BadValue { path: String, key: String },
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    std::env::var(CONFIG_ENV).ok()
}

fn on_command_line(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

fn in_env(arg: &Arg) -> bool {
    arg.get_env().is_some_and(|name| std::env::var_os(name).is_some())
}

fn render(value: &toml::Value) -> Option<Vec<String>> {
    match value {
        toml::Value::String(s) => Some(vec![s.clone()]),
        toml::Value::Integer(i) => Some(vec![i.to_string()]),
        toml::Value::Float(f) => Some(vec![f.to_string()]),
        toml::Value::Boolean(_) => Some(vec![]),
        toml::Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(|v| render(v).and_then(|mut p| p.pop())).collect();
            parts.map(|p| vec![p.join(",")])
        }
        _ => None,
    }
}

/// Returns `args` extended with flags taken from the config file, if any.
pub fn merge(args: Vec<OsString>, command: &Command) -> Result<Vec<String>, ConfigError> {
    let mut args: Vec<String> =
        args.into_iter().map(|a| a.into_string().map_err(ConfigError::NotUtf8)).collect::<Result<_, _>>()?;
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text =
        std::fs::read_to_string(&path).map_err(|e| ConfigError::Read { path: path.clone(), msg: e.to_string() })?;
    let table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| ConfigError::Read { path: path.clone(), msg: e.to_string() })?;

    let Some(sub) = args.iter().skip(1).find_map(|a| command.find_subcommand(a)) else { return Ok(args) };
    let sub_name = sub.get_name().to_string();
    let known: Vec<&Arg> = command.get_arguments().chain(sub.get_arguments()).collect();

    let mut entries: Vec<(String, &toml::Value, bool)> = Vec::new();
    for (key, value) in &table {
        if value.is_table() {
            if *key == sub_name {
                for (k, v) in value.as_table().expect("checked") {
                    entries.push((k.replace('_', "-"), v, true));
                }
            }
        } else {
            entries.push((key.replace('_', "-"), value, false));
        }
    }

    let mut extra = Vec::new();
    for (key, value, strict) in entries {
        if key == "config" {
            continue;
        }
        let Some(arg) = known.iter().find(|a| a.get_long() == Some(key.as_str())) else {
            if strict {
                return Err(ConfigError::UnknownKey { path, command: sub_name, key });
            }
            continue;
        };
        if on_command_line(&args, &key) || in_env(arg) {
            continue;
        }
        let rendered = render(value).ok_or_else(|| ConfigError::BadValue { path: path.clone(), key: key.clone() })?;
        match value {
            toml::Value::Boolean(true) => extra.push(format!("--{key}")),
            toml::Value::Boolean(false) => {}
            _ => extra.extend(rendered.into_iter().map(|v| format!("--{key}={v}"))),
        }
    }
    args.extend(extra);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser, Debug)]
    struct Demo {
        #[arg(long, global = true, env = "CLARION_TEST_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, global = true)]
        config: Option<String>,
        #[command(subcommand)]
        cmd: Sub,
    }

    #[derive(clap::Subcommand, Debug)]
    enum Sub {
        Run {
            #[arg(long, default_value_t = 1)]
            episodes: usize,
            #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
            penalty: f64,
        },
    }

    fn parse(file: &str, argv: &[&str]) -> Result<Demo, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, file).unwrap();
        let mut args: Vec<OsString> = argv.iter().map(OsString::from).collect();
        args.push(format!("--config={}", path.display()).into());
        let merged = merge(args, &<Demo as clap::CommandFactory>::command())?;
        Ok(Demo::try_parse_from(merged).unwrap())
    }

    #[test]
    fn config_fills_missing_flags() {
        let d = parse("seed = 5\n[run]\nepisodes = 7\npenalty = -3.0\n", &["demo", "run"]).unwrap();
        assert_eq!(d.seed, 5);
        let Sub::Run { episodes, penalty } = d.cmd;
        assert_eq!((episodes, penalty), (7, -3.0));
    }

    #[test]
    fn flags_beat_config() {
        let d = parse("seed = 5\n[run]\nepisodes = 7\n", &["demo", "run", "--episodes", "2", "--seed=9"]).unwrap();
        assert_eq!(d.seed, 9);
        let Sub::Run { episodes, .. } = d.cmd;
        assert_eq!(episodes, 2);
    }

    #[test]
    fn unknown_table_key_is_an_error() {
        let err = parse("[run]\nbogus = 1\n", &["demo", "run"]).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
        // unknown top-level keys belong to other subcommands and are ignored
        assert!(parse("bogus = 1\n", &["demo", "run"]).is_ok());
    }
}
