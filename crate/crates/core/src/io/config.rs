//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; keys are the long CLI flag
//! names without dashes (`tol`, `folds`, `delta-frac`, ...). Values are kept
//! as text and parsed by whoever consumes them.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("line {}: expected key = value", i + 1),
            })?;
            let key = k.trim().trim_start_matches("--").replace('_', "-");
            if key.is_empty() {
                return Err(Error::Config {
                    key: String::new(),
                    message: format!("line {}: empty key", i + 1),
                });
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config {
                    key,
                    message: format!("line {}: repeated key", i + 1),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e: V::Err| Error::Config {
                    key: key.to_string(),
                    message: format!("'{v}': {e}"),
                })
            })
            .transpose()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses comma-separated values such as `0.5,1,1.5`.
pub fn parse_list<V: FromStr>(key: &str, text: &str) -> Result<Vec<V>>
where
    V::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|e: V::Err| Error::Config {
                key: key.to_string(),
                message: format!("'{s}': {e}"),
            })
        })
        .collect::<Result<Vec<V>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::Config {
                    key: key.to_string(),
                    message: "empty list".into(),
                })
            } else {
                Ok(v)
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let c = RunConfig::parse("# run\ntol = 1e-5\nn_grid=3,4 # degrees\n\nstep-rule = conjugate\n").unwrap();
        assert_eq!(c.get("tol"), Some("1e-5"));
        assert_eq!(c.get("n-grid"), Some("3,4"));
        assert_eq!(c.get_parsed::<f64>("tol").unwrap(), Some(1e-5));
        assert_eq!(parse_list::<usize>("n-grid", c.get("n-grid").unwrap()).unwrap(), vec![3, 4]);
        assert!(c.get_parsed::<f64>("step-rule").is_err());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(RunConfig::parse("tol 1e-5").is_err());
        assert!(RunConfig::parse("a=1\na=2").is_err());
        assert!(parse_list::<f64>("x", ",").is_err());
        assert!(parse_list::<f64>("x", "1,a").is_err());
    }
}
