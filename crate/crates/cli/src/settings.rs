//! Flat `key = value` settings merged from a config file and the command line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use crate::manifest::ExperimentManifest;
use crate::CliError;

/// Keys that never reach the manifest.
pub const LOCATION_KEYS: [&str; 2] = ["out", "config"];

#[derive(Debug)]
pub struct Settings {
    subcommand: String,
    values: BTreeMap<String, String>,
    used: Mutex<BTreeMap<String, String>>,
}

impl Settings {
    /// `cli` overrides `file`; every key must be in `allowed`.
    pub fn merge(
        subcommand: &str,
        allowed: &[&str],
        file: BTreeMap<String, String>,
        cli: BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (k, v) in file.into_iter().chain(cli) {
            if !allowed.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("unknown key {k:?} for {subcommand}")));
            }
            values.insert(k, v);
        }
        Ok(Settings {
            subcommand: subcommand.to_string(),
            values,
            used: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn subcommand(&self) -> &str {
        &self.subcommand
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn record(&self, key: &str, value: &str) {
        if !LOCATION_KEYS.contains(&key) {
            self.used
                .lock()
                .expect("settings lock")
                .insert(key.to_string(), value.to_string());
        }
    }

    /// String value or `default`, recorded for the manifest.
    pub fn string(&self, key: &str, default: &str) -> String {
        let v = self.raw(key).unwrap_or(default).to_string();
        self.record(key, &v);
        v
    }

    /// String value if present, recorded.
    pub fn optional(&self, key: &str) -> Option<String> {
        let v = self.raw(key)?.to_string();
        self.record(key, &v);
        Some(v)
    }

    pub fn get<T>(&self, key: &str, default: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.string(key, default);
        v.parse().map_err(|e| CliError::Usage(format!("--{key} {v:?}: {e}")))
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str, default: &str) -> Result<Vec<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.string(key, default);
        parse_list(&v).map_err(|e| CliError::Usage(format!("--{key} {v:?}: {e}")))
    }

    /// Values read so far.
    pub fn used(&self) -> BTreeMap<String, String> {
        self.used.lock().expect("settings lock").clone()
    }
}

pub fn parse_list<T>(s: &str) -> Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

/// Read a config file: flat `key = value` lines (`#` comments), or a JSON
/// manifest of the same subcommand, whose parameters are replayed.
pub fn read_config(path: &Path, subcommand: &str) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let m = ExperimentManifest::from_json(&text)
            .map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))?;
        if m.subcommand != subcommand {
            return Err(CliError::Usage(format!(
                "manifest {} belongs to {}, not {subcommand}",
                path.display(),
                m.subcommand
            )));
        }
        return Ok(m.params);
    }
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), no + 1)))?;
        let k = k.trim().trim_start_matches("--").to_string();
        if LOCATION_KEYS.contains(&k.as_str()) {
            return Err(CliError::Usage(format!(
                "{}:{}: {k} is not allowed in a config file",
                path.display(),
                no + 1
            )));
        }
        out.insert(k, v.trim().trim_matches('"').to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn command_line_overrides_file() {
        let s = Settings::merge("pde", &["n", "t"], map(&[("n", "5"), ("t", "1")]), map(&[("n", "7")])).unwrap();
        assert_eq!(s.get::<i64>("n", "1").unwrap(), 7);
        assert_eq!(s.list::<f64>("t", "0").unwrap(), vec![1.0]);
        assert_eq!(s.get::<f64>("t", "0").unwrap(), 1.0);
        assert_eq!(s.used(), map(&[("n", "7"), ("t", "1")]));
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let e = Settings::merge("pde", &["n"], map(&[("m", "5")]), BTreeMap::new()).unwrap_err();
        assert!(matches!(e, CliError::Usage(_)));
    }

    #[test]
    fn defaults_are_recorded() {
        let s = Settings::merge("pde", &["n", "out"], BTreeMap::new(), map(&[("out", "x")])).unwrap();
        assert_eq!(s.get::<i64>("n", "10").unwrap(), 10);
        assert_eq!(s.string("out", "."), "x");
        assert_eq!(s.used(), map(&[("n", "10")]));
        assert!(matches!(s.get::<i64>("missing", "abc"), Err(CliError::Usage(_))));
    }
}
