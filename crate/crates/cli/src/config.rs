//! Flat `key = value` config files. `#` starts a comment line; keys may use
//! dashes or underscores. A flag given on the command line always beats the
//! file, and the file beats the built-in default.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

fn normalise(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            let key = normalise(k);
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!("config line {}: duplicate key {key}", n + 1)));
            }
        }
        Ok(Self { values, used: RefCell::default() })
    }

    /// Flag value, else the file's value for `key`, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let key = normalise(key);
        let from_file = self.values.get(&key);
        if from_file.is_some() {
            self.used.borrow_mut().insert(key.clone());
        }
        if flag.is_some() {
            return Ok(flag);
        }
        from_file
            .map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("config key {key} = {v:?}: {e}"))))
            .transpose()
    }

    /// Rejects keys the subcommand never asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self.values.keys().filter(|k| !used.contains(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flag_file_default() {
        let s = Settings::parse("# comment\nlr = 0.01\nn-g=6\n\nseed = 3").unwrap();
        assert_eq!(s.pick(Some(0.5f32), "lr", 1.0).unwrap(), 0.5);
        assert_eq!(s.pick(None, "lr", 1.0f32).unwrap(), 0.01);
        assert_eq!(s.pick(None, "n_g", 8usize).unwrap(), 6);
        assert_eq!(s.pick(None, "steps", 100usize).unwrap(), 100);
        assert!(s.finish().is_err(), "seed never consumed");
        s.pick(None, "seed", 0u64).unwrap();
        s.finish().unwrap();
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(Settings::parse("lr 0.1").is_err());
        assert!(Settings::parse("lr=1\nlr=2").is_err());
        let s = Settings::parse("steps = many").unwrap();
        assert!(s.pick(None, "steps", 1usize).is_err());
    }
}
