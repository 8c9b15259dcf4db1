//! Flat `key = value` configuration files with optional `[section]` headers.
//!
//! Lines starting with `#` are comments. Keys that appear before the first
//! section header belong to the unnamed section `""`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                current = name.trim().to_string();
                cfg.sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            let section = cfg.sections.entry(current.clone()).or_default();
            if section
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn section(&self, section: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.get(section)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    /// Parsed value, or `None` when the key is absent.
    pub fn get<V>(&self, section: &str, key: &str) -> Result<Option<V>>
    where
        V: FromStr,
        V::Err: Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("[{section}] {key} = `{s}`: {e}"))),
        }
    }

    /// Overwrites `*slot` when the key is present.
    pub fn read_into<V>(&self, section: &str, key: &str, slot: &mut V) -> Result<()>
    where
        V: FromStr,
        V::Err: Display,
    {
        if let Some(v) = self.get(section, key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Keys in `section` that are not listed in `known`.
    pub fn unknown_keys(&self, section: &str, known: &[&str]) -> Vec<String> {
        self.sections
            .get(section)
            .map(|s| {
                s.keys()
                    .filter(|k| !known.contains(&k.as_str()))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Errors if `section` holds keys outside `known`.
    pub fn check_known(&self, section: &str, known: &[&str]) -> Result<()> {
        let unknown = self.unknown_keys(section, known);
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "[{section}] unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    /// Canonical text form: sections in name order, keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, keys) in &self.sections {
            if !name.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{name}]\n"));
            }
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
