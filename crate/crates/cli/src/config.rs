//! `key=value` configuration files with flag override semantics.
//!
//! Precedence is defaults < config file < command-line flags: a flag left
//! unset falls back to the config value, then to the built-in default.
//! Every key a command consumes is tracked; unconsumed keys are rejected.

use geogen::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, (usize, String)>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: lineno + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if values.insert(key.clone(), (lineno + 1, value.trim().to_string())).is_some() {
                return Err(Error::Config {
                    line: lineno + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(FileConfig { values })
    }

    /// Flag value, else parsed config value, else the default.
    pub fn resolve<T: FromStr + Clone>(
        &mut self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        Ok(self.resolve_opt(flag, key)?.unwrap_or(default))
    }

    /// Flag value, else parsed config value, else `None`.
    pub fn resolve_opt<T: FromStr>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        let from_file = self.values.remove(key);
        if let Some(v) = flag {
            return Ok(Some(v));
        }
        match from_file {
            None => Ok(None),
            Some((line, raw)) => raw.parse::<T>().map(Some).map_err(|_| Error::Config {
                line,
                msg: format!("cannot parse `{raw}` for key `{key}`"),
            }),
        }
    }

    /// Reject any keys this command did not consume.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.values.into_iter().next() {
            return Err(Error::Config { line, msg: format!("unknown key `{key}`") });
        }
        Ok(())
    }
}
