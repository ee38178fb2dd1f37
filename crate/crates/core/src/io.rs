//! Plain-text sample tables: annotations, features and predictions.
//!
//! ```text
//! # s2vr <kind> v1
//! # pipeline <64 hex digits>
//! # columns <count>
//! # <key> <value>          (any number of metadata lines)
//! v,v,v,...                (one record per sample)
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! yields bit-identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::LABEL_LEN;

pub const TABLE_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: String,
    /// Hex-encoded pipeline hash.
    pub pipeline: String,
    /// Extra `key value` header lines, in order.
    pub meta: Vec<(String, String)>,
    /// One column per sample, one row per field.
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn new(kind: &str, pipeline: &[u8; 32], data: DMatrix<f64>) -> Self {
        Self {
            kind: kind.to_string(),
            pipeline: hex::encode(pipeline),
            meta: Vec::new(),
            data,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# s2vr {} {TABLE_VERSION}", self.kind);
        let _ = writeln!(out, "# pipeline {}", self.pipeline);
        let _ = writeln!(out, "# columns {}", self.data.nrows());
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k} {v}");
        }
        for col in self.data.column_iter() {
            for (i, v) in col.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |want: &str| -> Result<String> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing '{want}' header line")))?;
            line.strip_prefix("# ")
                .and_then(|rest| rest.strip_prefix(want))
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| err(no, format!("expected '# {want} ...', found {line:?}")))
        };
        let magic = header("s2vr")?;
        let (kind, version) = magic
            .rsplit_once(' ')
            .ok_or_else(|| err(1, "header lacks a version".into()))?;
        if version != TABLE_VERSION {
            return Err(err(1, format!("unsupported table version {version}")));
        }
        let pipeline = header("pipeline")?;
        let columns: usize = header("columns")?
            .parse()
            .map_err(|e| err(3, format!("bad column count: {e}")))?;

        let mut meta = Vec::new();
        let mut values = Vec::new();
        let mut samples = 0usize;
        for (no, line) in text.lines().enumerate().skip(3).map(|(i, l)| (i + 1, l)) {
            if let Some(rest) = line.strip_prefix('#') {
                if samples > 0 {
                    return Err(err(no, "header line after data".into()));
                }
                let rest = rest.trim_start();
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.push((k.to_string(), v.to_string()));
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for (j, field) in line.split(',').enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| err(no, format!("field {}: {e}", j + 1)))?;
                values.push(v);
            }
            if values.len() - before != columns {
                return Err(err(
                    no,
                    format!("expected {columns} fields, found {}", values.len() - before),
                ));
            }
            samples += 1;
        }
        Ok(Self {
            kind: kind.to_string(),
            pipeline,
            meta,
            data: DMatrix::from_vec(columns, samples, values),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.render().as_bytes())
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = Self::parse(&text, path)?;
        if table.kind != kind {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected a {kind} table, found {}", table.kind),
            });
        }
        Ok(table)
    }
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub const ANNOTATIONS: &str = "annotations";
pub const FEATURES: &str = "features";
pub const PREDICTIONS: &str = "predictions";

/// Column order of an annotation record.
pub const ANNOTATION_LAYOUT: &str =
    "h_1..h_68 v_1..v_68 TA MA BA; landmarks vertebra-major top to bottom, corners TL TR BL BR; angles in degrees";

pub fn annotation_table(labels: DMatrix<f64>, pipeline: &[u8; 32]) -> Result<Table> {
    if labels.nrows() != LABEL_LEN {
        return Err(Error::Shape(format!(
            "annotations have {LABEL_LEN} rows, got {}",
            labels.nrows()
        )));
    }
    Ok(Table::new(ANNOTATIONS, pipeline, labels).with_meta("layout", ANNOTATION_LAYOUT))
}

pub fn read_annotations(path: &Path) -> Result<Table> {
    let t = Table::read(path, ANNOTATIONS)?;
    if t.data.nrows() != LABEL_LEN {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 3,
            message: format!("annotations need {LABEL_LEN} columns, found {}", t.data.nrows()),
        });
    }
    Ok(t)
}

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("spine_{index:05}.png"))
}
