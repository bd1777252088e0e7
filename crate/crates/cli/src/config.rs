//! `key = value` config files. A flag given on the command line always wins
//! over the file; the file wins over built-in defaults.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Config {
    table: toml::Table,
}

/// Keys are matched with dashes and underscores treated alike.
fn canonical(key: &str) -> String {
    key.replace('-', "_")
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        let mut table = toml::Table::new();
        for (k, v) in raw {
            if v.is_table() || v.is_array() {
                return Err(format!("`{k}` must be a scalar"));
            }
            table.insert(canonical(&k), v);
        }
        Ok(Self { table })
    }

    fn raw(&self, key: &str) -> Option<String> {
        self.table.get(&canonical(key)).map(|v| match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    /// The flag value if given, else the config value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| CliError::input(format!("config key `{key}` = `{s}`: {e}"))),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }
}

/// A range limit in meters, or unlimited (`none`, `inf`, `unlimited`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeLimit(pub Option<f64>);

impl FromStr for RangeLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "inf" | "unlimited" => Ok(Self(None)),
            t => match t.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(Self(Some(v))),
                _ => Err(format!("expected a positive range in meters or `none`, got `{s}`")),
            },
        }
    }
}
