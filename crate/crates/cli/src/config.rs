//! Run configuration: sectioned key-value text files with command-line
//! overrides (command line wins).
//!
//! Format: `[section]` headers, `key = value` lines, `#` or `;` comments,
//! blank lines ignored. Values are free text; typed accessors parse on
//! demand and report the section, key, and offending value on failure.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing config key [{section}] {key}")]
    Missing { section: String, key: String },
    #[error("invalid value for [{section}] {key}: {value:?} ({msg})")]
    Invalid {
        section: String,
        key: String,
        value: String,
        msg: String,
    },
    #[error("bad override {0:?}: expected section.key=value")]
    BadOverride(String),
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Parsed configuration: ordered sections of ordered string pairs.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::from("run");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: i + 1,
                    msg: "unterminated section header".into(),
                })?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RunConfig { sections })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    /// Applies `section.key=value` overrides in order.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        for s in sets {
            let (path, value) = s
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(s.clone()))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError::BadOverride(s.clone()))?;
            self.set(section.trim(), key.trim(), value.trim());
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|v| v.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key).ok_or_else(|| ConfigError::Missing {
            section: section.to_string(),
            key: key.to_string(),
        })
    }

    fn invalid(section: &str, key: &str, value: &str, msg: impl ToString) -> ConfigError {
        ConfigError::Invalid {
            section: section.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            msg: msg.to_string(),
        }
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => match v {
                "inf" | "infinity" => Ok(Some(f64::INFINITY)),
                _ => v
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| Self::invalid(section, key, v, e)),
            },
        }
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.require(section, key)?;
        Ok(self.get_f64(section, key)?.expect("checked above"))
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|e| Self::invalid(section, key, v, e)),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|e| Self::invalid(section, key, v, e)),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => match v {
                "true" | "yes" | "1" => Ok(Some(true)),
                "false" | "no" | "0" => Ok(Some(false)),
                _ => Err(Self::invalid(section, key, v, "expected true/false")),
            },
        }
    }

    /// Whitespace- or comma-separated list of floats.
    pub fn get_vec_f64(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => {
                let parts: Result<Vec<f64>, _> = v
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|p| !p.is_empty())
                    .map(|p| p.parse::<f64>())
                    .collect();
                parts
                    .map(Some)
                    .map_err(|e| Self::invalid(section, key, v, e))
            }
        }
    }

    pub fn require_vec_f64(&self, section: &str, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.require(section, key)?;
        Ok(self.get_vec_f64(section, key)?.expect("checked above"))
    }

    /// All numeric entries of a section (used for field parameters).
    pub fn section_f64(&self, section: &str) -> Result<BTreeMap<String, f64>, ConfigError> {
        let mut out = BTreeMap::new();
        if let Some(s) = self.sections.get(section) {
            for (k, v) in s {
                let parsed = v
                    .parse::<f64>()
                    .map_err(|e| Self::invalid(section, k, v, e))?;
                out.insert(k.clone(), parsed);
            }
        }
        Ok(out)
    }

    /// Resolved config echo for the manifest.
    pub fn echo(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.sections.clone()
    }
}
