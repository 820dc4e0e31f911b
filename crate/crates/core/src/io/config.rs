//! Line-based configuration: `[section]` headers, `key = value` pairs and `#`
//! comments. Numeric values may be arithmetic expressions such as `pi/90`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    /// Source line, 0 for values set programmatically.
    line: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

/// Evaluates a numeric expression (`1e-3`, `pi/18`, `2*pi/3`).
pub fn eval_expr(text: &str) -> std::result::Result<f64, String> {
    let v = meval::eval_str(text.trim()).map_err(|e| format!("cannot evaluate `{text}`: {e}"))?;
    if !v.is_finite() {
        return Err(format!("`{text}` evaluates to {v}"));
    }
    Ok(v)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            let no = no + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                    line: no,
                    reason: format!("unterminated section header `{line}`"),
                })?;
                section = name.trim().to_ascii_lowercase();
                if section.is_empty() {
                    return Err(Error::Config {
                        line: no,
                        reason: "empty section name".into(),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: no,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            if section.is_empty() {
                return Err(Error::Config {
                    line: no,
                    reason: "key outside of any [section]".into(),
                });
            }
            let key = key.trim().to_ascii_lowercase().replace('-', "_");
            let entries = cfg.sections.entry(section.clone()).or_default();
            if entries.contains_key(&key) {
                return Err(Error::Config {
                    line: no,
                    reason: format!("duplicate key `{section}.{key}`"),
                });
            }
            entries.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line: no,
                },
            );
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Config::parse(&std::fs::read_to_string(path).map_err(Error::file(path))?)
    }

    /// Sets (or overrides) `section.key`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_ascii_lowercase())
            .or_default()
            .insert(
                key.to_ascii_lowercase().replace('-', "_"),
                Entry {
                    value: value.to_string(),
                    line: 0,
                },
            );
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let bad = || Error::Config {
            line: 0,
            reason: format!("override `{spec}` is not of the form section.key=value"),
        };
        let (path, value) = spec.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        self.set(section.trim(), key.trim(), value.trim());
        Ok(())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section)?.get(key)
    }

    pub fn get_str(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get_str(section, key).unwrap_or(default)
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.entry(section, key)
            .map(|e| {
                eval_expr(&e.value).map_err(|reason| Error::Config {
                    line: e.line,
                    reason: format!("{section}.{key}: {reason}"),
                })
            })
            .transpose()
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(section, key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64> {
        self.get_f64(section, key)?.ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("missing required key `{section}.{key}`"),
        })
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.entry(section, key)
            .map(|e| {
                e.value.parse::<usize>().map_err(|_| Error::Config {
                    line: e.line,
                    reason: format!(
                        "{section}.{key}: expected a non-negative integer, got `{}`",
                        e.value
                    ),
                })
            })
            .transpose()
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_usize(section, key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.entry(section, key) {
            None => Ok(default),
            Some(e) => e.value.parse::<u64>().map_err(|_| Error::Config {
                line: e.line,
                reason: format!(
                    "{section}.{key}: expected an unsigned integer, got `{}`",
                    e.value
                ),
            }),
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.entry(section, key) {
            None => Ok(default),
            Some(e) => match e.value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(Error::Config {
                    line: e.line,
                    reason: format!("{section}.{key}: expected a boolean, got `{}`", e.value),
                }),
            },
        }
    }

    /// Error for a value outside an enumerated set.
    pub fn invalid(&self, section: &str, key: &str, expected: &str) -> Error {
        let (line, value) = self
            .entry(section, key)
            .map_or((0, String::new()), |e| (e.line, e.value.clone()));
        Error::Config {
            line,
            reason: format!("{section}.{key}: expected {expected}, got `{value}`"),
        }
    }

    /// Canonical text form; parsing it gives back an equal config (line numbers aside).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            let _ = writeln!(out, "[{name}]");
            for (k, e) in entries {
                let _ = writeln!(out, "{k} = {}", e.value);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# header comment\n[tomography]\nn = 128\nangle_step = pi/90  # uniform\na = pi/18\n\n[flow]\nk = 1\nfilter-name = ram-lak\n";

    #[test]
    fn parses_sections_and_expressions() {
        let c = Config::parse(SAMPLE).unwrap();
        assert_eq!(c.get_usize("tomography", "n").unwrap(), Some(128));
        let step = c.require_f64("tomography", "angle_step").unwrap();
        assert!((step - std::f64::consts::PI / 90.0).abs() < 1e-15);
        assert_eq!(c.get_str("flow", "filter_name"), Some("ram-lak"));
        assert_eq!(c.get_str("flow", "missing"), None);
        assert!(c.require_f64("flow", "missing").is_err());
    }

    #[test]
    fn reports_line_numbers() {
        let err = Config::parse("[a]\nx = 1\nbroken line\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }));
        let err = Config::parse("x = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = Config::parse("[a]\nx = 1\nx = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }));
        let c = Config::parse("[a]\n\nx = pi/\n").unwrap();
        assert!(matches!(
            c.get_f64("a", "x"),
            Err(Error::Config { line: 3, .. })
        ));
        let c = Config::parse("[a]\nx = 1/0\n").unwrap();
        assert!(c.get_f64("a", "x").is_err());
    }

    #[test]
    fn overrides_and_round_trip() {
        let mut c = Config::parse(SAMPLE).unwrap();
        c.apply_override("tomography.n=64").unwrap();
        c.apply_override("flow.t_end = 1e-3").unwrap();
        assert!(c.apply_override("nodot=1").is_err());
        assert_eq!(c.get_usize("tomography", "n").unwrap(), Some(64));
        assert_eq!(c.get_f64("flow", "t_end").unwrap(), Some(1e-3));
        let again = Config::parse(&c.to_text()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn booleans() {
        let c = Config::parse("[x]\na = yes\nb = off\nc = maybe\n").unwrap();
        assert!(c.bool_or("x", "a", false).unwrap());
        assert!(!c.bool_or("x", "b", true).unwrap());
        assert!(c.bool_or("x", "c", true).is_err());
        assert!(c.bool_or("x", "d", true).unwrap());
    }
}
