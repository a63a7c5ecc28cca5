//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # comment
//! [portfolio]
//! n_values = 5, 15, 25, 75
//! gamma = 4
//! ```
//!
//! Lists are comma separated. Every key is looked up through a
//! [`Section`], which remembers which keys were consumed so leftovers can
//! be reported as unknown with their line numbers.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct RawSection {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    sections: Vec<RawSection>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<RawSection> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                    line,
                    message: format!("unterminated section header '{content}'"),
                })?;
                let name = name.trim();
                if name.is_empty() || sections.iter().any(|s| s.name == name) {
                    return Err(Error::Config {
                        line,
                        message: format!("empty or repeated section '[{name}]'"),
                    });
                }
                sections.push(RawSection {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config {
                    line,
                    message: "missing key before '='".into(),
                });
            }
            let section = sections.last_mut().ok_or_else(|| Error::Config {
                line,
                message: format!("key '{key}' appears before any [section]"),
            })?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key '{key}' in [{}]", section.name),
                });
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section {
            raw: self.sections.iter().find(|s| s.name == name),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    /// Rejects sections other than `allowed`.
    pub fn check_sections(&self, allowed: &[&str]) -> Result<()> {
        match self.sections.iter().find(|s| !allowed.contains(&s.name.as_str())) {
            Some(s) => Err(Error::Config {
                line: s.line,
                message: format!("unexpected section [{}]; expected one of {allowed:?}", s.name),
            }),
            None => Ok(()),
        }
    }
}

/// Typed view of one section. A missing section behaves as empty.
pub struct Section<'a> {
    raw: Option<&'a RawSection>,
    used: RefCell<BTreeSet<String>>,
}

impl Section<'_> {
    fn entry(&self, key: &str) -> Option<&Entry> {
        let e = self.raw?.entries.iter().find(|e| e.key == key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(e)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| Error::Config {
                line: e.line,
                message: format!("cannot parse '{}' for key '{key}'", e.value),
            }),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|item| {
                    item.trim().parse().map_err(|_| Error::Config {
                        line: e.line,
                        message: format!("cannot parse list item '{}' for key '{key}'", item.trim()),
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.raw
            .and_then(|s| s.entries.iter().find(|e| e.key == key))
            .map_or(0, |e| e.line)
    }

    /// Fails on the first key that was never looked up.
    pub fn finish(&self) -> Result<()> {
        let Some(raw) = self.raw else { return Ok(()) };
        let used = self.used.borrow();
        match raw.entries.iter().find(|e| !used.contains(&e.key)) {
            Some(e) => Err(Error::Config {
                line: e.line,
                message: format!("unknown key '{}' in [{}]", e.key, raw.name),
            }),
            None => Ok(()),
        }
    }
}

/// Builder for writing resolved configs and manifests in the same format.
#[derive(Debug, Default)]
pub struct ConfigWriter {
    out: String,
}

impl ConfigWriter {
    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        let _ = writeln!(self.out, "[{name}]");
        self
    }

    pub fn value(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn list<T: std::fmt::Display>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.value(key, joined.join(", "))
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}
