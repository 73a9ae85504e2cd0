//! Flat `key = value` run configs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {msg}")]
    Line { source_name: String, line: usize, msg: String },
    #[error("{0}")]
    Plain(String),
}

fn plain<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Plain(msg.into()))
}

/// Where a value came from, for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Default,
    File { name: String, line: usize },
    Flag,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: Origin,
}

/// One line of a subcommand's key table: name, default (None when the key has to
/// be supplied for the run to need it), and a one-line description for --help.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default: Some(default), help }
}

pub const fn required(name: &'static str, help: &'static str) -> Key {
    Key { name, default: None, help }
}

pub fn describe(keys: &[Key]) -> String {
    let mut s = String::new();
    for k in keys {
        let d = k.default.unwrap_or("(none)");
        let _ = writeln!(s, "  {:<18} {:<12} {}", k.name, d, k.help);
    }
    s
}

/// Parses `key = value` lines; `#` starts a comment. A `subcommand` key, as
/// written into manifests, must name the subcommand being run.
pub fn parse(text: &str, source_name: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let err = |line: usize, msg: String| ConfigError::Line { source_name: source_name.to_string(), line, msg };
    let mut out: Vec<(String, String, usize)> = Vec::new();
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last = line;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(err(line, format!("expected `key = value`, found `{body}`")));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
            return Err(err(line, format!("invalid key `{k}` (use lowercase letters, digits and _)")));
        }
        if v.is_empty() {
            return Err(err(line, format!("key `{k}` has no value")));
        }
        if let Some((_, _, first)) = out.iter().find(|e| e.0 == k) {
            return Err(err(line, format!("duplicate key `{k}` (first set on line {first})")));
        }
        out.push((k.to_string(), v.to_string(), line));
    }
    if out.is_empty() {
        return Err(err(last.max(1), "empty config: no `key = value` lines".into()));
    }
    Ok(out)
}

/// Resolved parameters of one run.
#[derive(Debug, Clone)]
pub struct Params {
    subcommand: String,
    entries: BTreeMap<String, Entry>,
}

impl Params {
    pub fn resolve(
        subcommand: &str,
        keys: &[Key],
        file: Option<&Path>,
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for k in keys {
            if let Some(d) = k.default {
                entries.insert(k.name.to_string(), Entry { value: d.to_string(), origin: Origin::Default });
            }
        }
        let known = |name: &str| keys.iter().any(|k| k.name == name);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Plain(format!("cannot read config {}: {e}", path.display())))?;
            let name = path.display().to_string();
            for (k, v, line) in parse(&text, &name)? {
                if k == "subcommand" {
                    if v != subcommand {
                        return Err(ConfigError::Line {
                            source_name: name,
                            line,
                            msg: format!("config is for `{v}`, not `{subcommand}`"),
                        });
                    }
                    continue;
                }
                if !known(&k) {
                    return Err(ConfigError::Line {
                        source_name: name,
                        line,
                        msg: format!("unknown key `{k}` for {subcommand}"),
                    });
                }
                entries.insert(k, Entry { value: v, origin: Origin::File { name: name.clone(), line } });
            }
        }
        for (k, v) in flags {
            if !known(k) {
                return plain(format!("unknown key `{k}` for {subcommand}"));
            }
            entries.insert(k.clone(), Entry { value: v.clone(), origin: Origin::Flag });
        }
        Ok(Params { subcommand: subcommand.to_string(), entries })
    }

    fn fail<T>(&self, key: &str, msg: String) -> Result<T, ConfigError> {
        match self.entries.get(key).map(|e| &e.origin) {
            Some(Origin::File { name, line }) => {
                Err(ConfigError::Line { source_name: name.clone(), line: *line, msg })
            }
            Some(Origin::Flag) => plain(format!("flag {key}: {msg}")),
            _ => plain(msg),
        }
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        match self.entries.get(key) {
            Some(e) => Ok(&e.value),
            None => plain(format!("missing key `{key}` for {}", self.subcommand)),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(key)?;
        v.parse::<T>().or_else(|e| self.fail(key, format!("bad value `{v}` for `{key}`: {e}")))
    }

    pub fn choice<'a>(&self, key: &str, options: &[&'a str]) -> Result<&'a str, ConfigError> {
        let v = self.str(key)?;
        match options.iter().find(|o| **o == v) {
            Some(o) => Ok(o),
            None => self.fail(key, format!("`{key}` must be one of {}, got `{v}`", options.join("|"))),
        }
    }

    /// The seed, which every stochastic run must state explicitly.
    pub fn seed(&self, why: &str) -> Result<u64, ConfigError> {
        if !self.has("seed") {
            return plain(format!("`seed` is required for {why}"));
        }
        self.get("seed")
    }

    /// Replayable echo: the resolved keys in `key = value` form.
    pub fn echo(&self) -> String {
        let mut s = format!("subcommand = {}\n", self.subcommand);
        for (k, e) in &self.entries {
            let _ = writeln!(s, "{k} = {}", e.value);
        }
        s
    }
}
