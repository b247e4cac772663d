//! Columnar text format shared by datasets, test functions and fitted
//! estimators.
//!
//! ```text
//! #sievesim <kind> v1
//! <key> <value>
//! ...
//! @<block> <col> <col> ...
//! <value> <value> ...
//! ...
//! ```
//!
//! Header lines are `key value` pairs. Each block starts with an `@` line
//! naming the block and its columns; every following line up to the next
//! `@` line (or end of file) is one row of whitespace-separated floats.
//! Floats are written with 17 significant digits so they parse back to the
//! same bits. Blank lines are ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const MAGIC: &str = "#sievesim";
const VERSION: &str = "v1";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Block {
    pub fn new(name: impl Into<String>, columns: Vec<String>) -> Self {
        Block {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub kind: String,
    pub header: Vec<(String, String)>,
    pub blocks: Vec<Block>,
}

impl Document {
    pub fn new(kind: impl Into<String>) -> Self {
        Document {
            kind: kind.into(),
            header: Vec::new(),
            blocks: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn set_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.set(key, fmt_f64(value))
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("missing header key `{key}`"),
            })
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| Error::Parse {
            line: 0,
            reason: format!("header `{key}`: cannot parse `{raw}`"),
        })
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("missing block `{name}`"),
            })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected a `{kind}` document, found `{}`", self.kind),
            });
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {} {VERSION}", self.kind);
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k} {v}");
        }
        for block in &self.blocks {
            let _ = writeln!(out, "@{} {}", block.name, block.columns.join(" "));
            for row in &block.rows {
                let line: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            reason: "empty document".into(),
        })?;
        let mut parts = first.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::Parse {
                line: 1,
                reason: format!("missing `{MAGIC}` magic"),
            });
        }
        let kind = parts.next().ok_or(Error::Parse {
            line: 1,
            reason: "missing document kind".into(),
        })?;
        if parts.next() != Some(VERSION) {
            return Err(Error::Parse {
                line: 1,
                reason: "unsupported version".into(),
            });
        }
        let mut doc = Document::new(kind);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('@') {
                let mut fields = rest.split_whitespace();
                let name = fields.next().ok_or(Error::Parse {
                    line: lineno,
                    reason: "block without a name".into(),
                })?;
                doc.blocks
                    .push(Block::new(name, fields.map(str::to_string).collect()));
            } else if let Some(block) = doc.blocks.last_mut() {
                let row = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|_| Error::Parse {
                            line: lineno,
                            reason: format!("bad number `{tok}`"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if row.len() != block.columns.len() {
                    return Err(Error::Parse {
                        line: lineno,
                        reason: format!(
                            "row has {} values, block `{}` has {} columns",
                            row.len(),
                            block.name,
                            block.columns.len()
                        ),
                    });
                }
                block.rows.push(row);
            } else {
                let (k, v) = line.split_once(char::is_whitespace).ok_or(Error::Parse {
                    line: lineno,
                    reason: format!("header line `{line}` is not `key value`"),
                })?;
                doc.header.push((k.to_string(), v.trim().to_string()));
            }
        }
        Ok(doc)
    }
}
