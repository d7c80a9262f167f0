//! Text formats of the corpus files.
//!
//! * phoneme file: space-separated integer ids on one line
//! * duration file: space-separated non-negative frame counts, same count
//! * trajectory / acoustic files: CSV without header, one frame per row
//! * manifest: one tab-separated record per line
//!   (`id subject phn dur art ac split`); lines starting with `#` are
//!   comments, and `# key=value` comments carry corpus metadata

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn single_line<'a>(path: &Path, text: &'a str) -> Result<&'a str> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    if lines.next().is_some() {
        return Err(Error::parse(path, 2, "expected a single line"));
    }
    Ok(first)
}

fn parse_ints(path: &Path, text: &str) -> Result<Vec<usize>> {
    single_line(path, text)?
        .split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<usize>().map_err(|_| {
                Error::parse(
                    path,
                    1,
                    format!("field {}: '{tok}' is not a non-negative integer", i + 1),
                )
            })
        })
        .collect()
}

pub fn parse_phonemes(path: &Path, text: &str) -> Result<Vec<usize>> {
    parse_ints(path, text)
}

pub fn parse_durations(path: &Path, text: &str) -> Result<Vec<usize>> {
    parse_ints(path, text)
}

pub fn read_phonemes(path: &Path) -> Result<Vec<usize>> {
    parse_phonemes(path, &read(path)?)
}

pub fn read_durations(path: &Path) -> Result<Vec<usize>> {
    parse_durations(path, &read(path)?)
}

pub fn format_ints(v: &[usize]) -> String {
    let mut s = v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

/// Parses a headerless CSV matrix of exactly `cols` columns.
pub fn parse_matrix(path: &Path, text: &str, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for (j, tok) in line.split(',').enumerate() {
            let v: f64 = tok.trim().parse().map_err(|_| {
                Error::parse(
                    path,
                    i + 1,
                    format!("column {}: '{}' is not a number", j + 1, tok.trim()),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("column {}: non-finite value", j + 1),
                ));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {cols} columns, found {}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::parse(path, 1, "no frames"));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row count checked"))
}

pub fn read_matrix(path: &Path, cols: usize) -> Result<Array2<f64>> {
    parse_matrix(path, &read(path)?, cols)
}

/// Shortest round-trip decimal representation of every value.
pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!(
                "unknown split '{other}' (train, val, test)"
            ))),
        }
    }
}

/// One sentence of the corpus; paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub subject: String,
    pub phonemes: PathBuf,
    pub durations: PathBuf,
    pub trajectory: PathBuf,
    pub acoustics: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    /// Directory the record paths are relative to.
    pub root: PathBuf,
    pub meta: BTreeMap<String, String>,
    pub records: Vec<Record>,
}

impl CorpusManifest {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut records: Vec<Record> = Vec::new();
        let mut ids = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [id, subject, phn, dur, art, ac, split] = f[..] else {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("expected 7 tab-separated fields, found {}", f.len()),
                ));
            };
            if [id, subject, phn, dur, art, ac]
                .iter()
                .any(|s| s.is_empty())
            {
                return Err(Error::parse(path, ln, "empty field"));
            }
            let split: Split = split
                .parse()
                .map_err(|e: Error| Error::parse(path, ln, e.to_string()))?;
            if !ids.insert(id.to_string()) {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("duplicate sentence id '{id}'"),
                ));
            }
            records.push(Record {
                id: id.into(),
                subject: subject.into(),
                phonemes: phn.into(),
                durations: dur.into(),
                trajectory: art.into(),
                acoustics: ac.into(),
                split,
            });
        }
        if records.is_empty() {
            return Err(Error::parse(path, 1, "manifest lists no sentences"));
        }
        Ok(Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            meta,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}").unwrap();
        }
        for r in &self.records {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.subject,
                r.phonemes.display(),
                r.durations.display(),
                r.trajectory.display(),
                r.acoustics.display(),
                r.split
            )
            .unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_text())
    }

    pub fn record(&self, id: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Data(format!("no sentence '{id}' in manifest")))
    }

    /// Subjects in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.subject) {
                out.push(r.subject.clone());
            }
        }
        out
    }

    pub fn select<'a>(
        &'a self,
        subject: Option<&'a str>,
        split: Split,
    ) -> impl Iterator<Item = &'a Record> + 'a {
        self.records
            .iter()
            .filter(move |r| r.split == split && subject.is_none_or(|s| r.subject == s))
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.meta.get("vocab_size").and_then(|v| v.parse().ok())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}
