//! Flat, line-oriented configuration files.
//!
//! Syntax: `key = value` lines, `#` comments, and `[section]` headers that
//! prefix the keys that follow (`[inner]` + `k = 5` defines `inner.k`).
//! Every key a command reads — whether from the file or from a default — is
//! recorded, the fully-resolved set is echoed to `config.resolved` in the
//! output directory, and keys the command does not know are rejected.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;

use crate::CliError;

pub struct ConfigReader {
    values: HashMap<String, String>,
    consumed: std::collections::HashSet<String>,
    resolved: Vec<(String, String)>,
}

impl ConfigReader {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(CliError::Config(format!(
                        "line {}: malformed section header `{raw}`",
                        lineno + 1
                    )));
                }
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if values.insert(full.clone(), value.to_string()).is_some() {
                return Err(CliError::Config(format!("duplicate key `{full}`")));
            }
        }
        Ok(ConfigReader {
            values,
            consumed: Default::default(),
            resolved: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.values.get(key).cloned()
    }

    /// Overrides a key before reading (used for `--seed`).
    pub fn force(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get_parsed<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
    ) -> Result<T, CliError>
    where
        T: Display,
        T::Err: Display,
    {
        let out = match self.raw(key) {
            Some(text) => text.parse::<T>().map_err(|e| {
                CliError::Config(format!("key `{key}`: cannot parse `{text}`: {e}"))
            })?,
            None => default,
        };
        self.record(key, &out);
        Ok(out)
    }

    pub fn get_f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        self.get_parsed(key, default)
    }

    pub fn get_usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        self.get_parsed(key, default)
    }

    pub fn get_u64(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        self.get_parsed(key, default)
    }

    pub fn get_bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        self.get_parsed(key, default)
    }

    /// A value restricted to a fixed set of names.
    pub fn get_choice(
        &mut self,
        key: &str,
        choices: &[&str],
        default: &str,
    ) -> Result<String, CliError> {
        debug_assert!(choices.contains(&default));
        let out = match self.raw(key) {
            Some(text) => {
                if !choices.contains(&text.as_str()) {
                    return Err(CliError::Config(format!(
                        "key `{key}`: `{text}` is not one of {choices:?}"
                    )));
                }
                text
            }
            None => default.to_string(),
        };
        self.record(key, &out);
        Ok(out)
    }

    pub fn get_list_f64(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let out = match self.raw(key) {
            Some(text) => parse_list(key, &text)?,
            None => default.to_vec(),
        };
        self.record(key, join(&out));
        Ok(out)
    }

    pub fn get_list_usize(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        let out = match self.raw(key) {
            Some(text) => parse_list(key, &text)?,
            None => default.to_vec(),
        };
        self.record(key, join(&out));
        Ok(out)
    }

    pub fn get_list_string(&mut self, key: &str, default: &[&str]) -> Result<Vec<String>, CliError> {
        let out: Vec<String> = match self.raw(key) {
            Some(text) => text
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            None => default.iter().map(|s| s.to_string()).collect(),
        };
        self.record(key, out.join(","));
        Ok(out)
    }

    /// Fails if the file contained keys no getter consumed.
    pub fn reject_unknown(&self) -> Result<(), CliError> {
        let mut unknown: Vec<&String> = self
            .values
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect();
        if unknown.is_empty() {
            return Ok(());
        }
        unknown.sort();
        Err(CliError::Config(format!(
            "unknown config keys: {}",
            unknown
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }

    /// The fully-resolved configuration, every applied default included, in
    /// read order.
    pub fn resolved_text(&self, command: &str) -> String {
        let mut out = String::from("# resolved configuration (schema v1)\n");
        out.push_str(&format!("# command = {command}\n"));
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::Config(format!("key `{key}`: cannot parse `{s}`: {e}")))
        })
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let mut r = ConfigReader::parse("seed = 3\n[inner]\nk = 7 # steps\n").unwrap();
        assert_eq!(r.get_u64("seed", 0).unwrap(), 3);
        assert_eq!(r.get_usize("inner.k", 1).unwrap(), 7);
        r.reject_unknown().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_paths() {
        let mut r = ConfigReader::parse("[outer]\nstepsize = 1.0\n").unwrap();
        let _ = r.get_f64("outer.step_size", 0.1).unwrap();
        let err = r.reject_unknown().unwrap_err();
        assert!(err.to_string().contains("outer.stepsize"));
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert!(ConfigReader::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn resolved_echo_contains_defaults() {
        let mut r = ConfigReader::parse("").unwrap();
        let _ = r.get_f64("outer.step_size", 0.25).unwrap();
        let _ = r.get_choice("inner.sampling", &["cycle", "replacement"], "cycle").unwrap();
        let text = r.resolved_text("demo");
        assert!(text.contains("outer.step_size = 0.25"));
        assert!(text.contains("inner.sampling = cycle"));
    }
}
