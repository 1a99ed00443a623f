//! Versioned plain-text container used for checkpoints, model dumps and gain schedules.
//!
//! ```text
//! naf-text 1
//! kind mlp
//! meta input_dim 2
//! meta hidden 64 64
//! block params 1 4353
//! 1.2e-1 -3.5e-2 ...
//! end
//! ```
//!
//! Numbers are written with `{:e}`, which prints the shortest digits that parse back
//! to the same `f64`, so a save/load round trip is value-exact. Block values are
//! column-major.

use crate::numerics::{Matrix, Vector};
use std::fmt::Write as _;
use thiserror::Error;

pub const MAGIC: &str = "naf-text";
pub const VERSION: u32 = 1;

const VALUES_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TextError {
    #[error("missing '{MAGIC}' header")]
    MissingHeader,
    #[error("unsupported format version {0} (expected {VERSION})")]
    Version(String),
    #[error("expected document kind '{expected}', found '{found}'")]
    Kind { expected: String, found: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing entry '{0}'")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Block {
    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self {
            name: name.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            values: m.as_slice().to_vec(),
        }
    }

    pub fn from_vector(name: impl Into<String>, v: &Vector) -> Self {
        Self {
            name: name.into(),
            rows: v.len(),
            cols: 1,
            values: v.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_column_slice(self.rows, self.cols, &self.values)
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_column_slice(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TextDocument {
    pub kind: String,
    pub meta: Vec<(String, Vec<String>)>,
    pub blocks: Vec<Block>,
}

impl TextDocument {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn push_meta<T: ToString>(&mut self, key: &str, values: impl IntoIterator<Item = T>) {
        self.meta
            .push((key.to_string(), values.into_iter().map(|v| v.to_string()).collect()));
    }

    pub fn push_block(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn meta(&self, key: &str) -> Result<&[String], TextError> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| TextError::Missing(key.to_string()))
    }

    pub fn meta_usizes(&self, key: &str) -> Result<Vec<usize>, TextError> {
        self.meta(key)?
            .iter()
            .map(|s| {
                s.parse().map_err(|_| TextError::Parse {
                    line: 0,
                    msg: format!("meta '{key}' value '{s}' is not an integer"),
                })
            })
            .collect()
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize, TextError> {
        let v = self.meta_usizes(key)?;
        match v.as_slice() {
            [one] => Ok(*one),
            _ => Err(TextError::Parse {
                line: 0,
                msg: format!("meta '{key}' should hold exactly one value"),
            }),
        }
    }

    pub fn block(&self, name: &str) -> Result<&Block, TextError> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| TextError::Missing(name.to_string()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), TextError> {
        if self.kind != kind {
            return Err(TextError::Kind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "kind {}", self.kind);
        for (k, vals) in &self.meta {
            let _ = writeln!(out, "meta {k} {}", vals.join(" "));
        }
        for b in &self.blocks {
            let _ = writeln!(out, "block {} {} {}", b.name, b.rows, b.cols);
            for chunk in b.values.chunks(VALUES_PER_LINE) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TextError::MissingHeader)?;
        let mut head = header.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(TextError::MissingHeader);
        }
        let version = head.next().unwrap_or("");
        if version != VERSION.to_string() {
            return Err(TextError::Version(version.to_string()));
        }

        let mut doc = TextDocument::default();
        let mut current: Option<Block> = None;
        let mut ended = false;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let mut toks = line.split_whitespace();
            let first = toks.next().unwrap_or("");
            let err = |msg: String| TextError::Parse { line: lineno, msg };
            match first {
                "kind" | "meta" | "block" | "end" => {
                    if let Some(b) = current.take() {
                        if b.values.len() != b.rows * b.cols {
                            return Err(err(format!(
                                "block '{}' holds {} values, expected {}",
                                b.name,
                                b.values.len(),
                                b.rows * b.cols
                            )));
                        }
                        doc.blocks.push(b);
                    }
                    match first {
                        "kind" => doc.kind = toks.next().unwrap_or("").to_string(),
                        "meta" => {
                            let key = toks.next().ok_or_else(|| err("meta without key".into()))?;
                            doc.meta.push((key.to_string(), toks.map(str::to_string).collect()));
                        }
                        "block" => {
                            let name = toks.next().ok_or_else(|| err("block without name".into()))?;
                            let mut dim = || -> Result<usize, TextError> {
                                toks.next()
                                    .and_then(|s| s.parse().ok())
                                    .ok_or_else(|| err(format!("block '{name}' needs rows and cols")))
                            };
                            let rows = dim()?;
                            let cols = dim()?;
                            current = Some(Block {
                                name: name.to_string(),
                                rows,
                                cols,
                                values: Vec::with_capacity(rows * cols),
                            });
                        }
                        _ => {
                            ended = true;
                            break;
                        }
                    }
                }
                _ => {
                    let block = current
                        .as_mut()
                        .ok_or_else(|| err(format!("unexpected token '{first}'")))?;
                    for tok in line.split_whitespace() {
                        let v: f64 = tok.parse().map_err(|_| err(format!("bad number '{tok}'")))?;
                        block.values.push(v);
                    }
                }
            }
        }
        if !ended {
            return Err(TextError::Missing("end".into()));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_value_exact() {
        let mut doc = TextDocument::new("demo");
        doc.push_meta("dims", [3, 4]);
        let m = Matrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) / (j as f64 + 7.0) * 1e-300f64.powf(0.5));
        doc.push_block(Block::from_matrix("m", &m));
        doc.push_block(Block::from_vector("v", &Vector::from_vec(vec![0.1, f64::MAX, -0.0, 1e-320])));
        let parsed = TextDocument::parse(&doc.render()).unwrap();
        assert_eq!(parsed, doc);
        assert_eq!(parsed.block("m").unwrap().to_matrix(), m);
        assert_eq!(parsed.meta_usizes("dims").unwrap(), vec![3, 4]);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = "naf-text 7\nkind x\nend\n";
        assert_eq!(TextDocument::parse(text), Err(TextError::Version("7".into())));
        assert_eq!(TextDocument::parse("hello\n"), Err(TextError::MissingHeader));
    }

    #[test]
    fn truncated_block_is_rejected() {
        let text = "naf-text 1\nkind x\nblock a 2 2\n1 2 3\nend\n";
        assert!(matches!(TextDocument::parse(text), Err(TextError::Parse { .. })));
        let text = "naf-text 1\nkind x\nblock a 1 1\n1\n";
        assert_eq!(TextDocument::parse(text), Err(TextError::Missing("end".into())));
    }
}
