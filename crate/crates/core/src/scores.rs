//! Per-image score tables and their CSV form (`id,raw,normalized`).

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Gmm,
    Knn,
    Mbc,
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScorerKind::Gmm => "gmm",
            ScorerKind::Knn => "knn",
            ScorerKind::Mbc => "mbc",
        })
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(ScorerKind::Gmm),
            "knn" => Ok(ScorerKind::Knn),
            "mbc" => Ok(ScorerKind::Mbc),
            other => Err(Error::InvalidArgument(format!("unknown scorer {other:?}"))),
        }
    }
}

/// Raw scores (higher is better) for a set of images, plus an optional
/// `[0, 1]` normalization of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    ids: Vec<String>,
    raw: Vec<f64>,
    normalized: Option<Vec<f64>>,
    kind: Option<ScorerKind>,
    /// Rows whose raw score was clamped (KNN exact matches).
    flagged: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    id: String,
    raw: f64,
    normalized: Option<f64>,
}

impl ScoreTable {
    pub fn new(ids: Vec<String>, raw: Vec<f64>, kind: ScorerKind) -> Result<Self> {
        Self::build(ids, raw, None, Some(kind))
    }

    fn build(
        ids: Vec<String>,
        raw: Vec<f64>,
        normalized: Option<Vec<f64>>,
        kind: Option<ScorerKind>,
    ) -> Result<Self> {
        if ids.len() != raw.len() {
            return Err(Error::Format(format!(
                "{} ids for {} scores",
                ids.len(),
                raw.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(row) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col: 1 });
        }
        if let Some(n) = &normalized {
            if n.len() != raw.len() {
                return Err(Error::Format("normalized column has the wrong length".into()));
            }
            if let Some(row) = n.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Format(format!(
                    "normalized score at row {row} lies outside [0, 1]"
                )));
            }
        }
        let flagged = vec![false; ids.len()];
        Ok(Self {
            ids,
            raw,
            normalized,
            kind,
            flagged,
        })
    }

    pub(crate) fn with_flags(mut self, flagged: Vec<bool>) -> Self {
        debug_assert_eq!(flagged.len(), self.ids.len());
        self.flagged = flagged;
        self
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> Option<&[f64]> {
        self.normalized.as_deref()
    }

    pub fn kind(&self) -> Option<ScorerKind> {
        self.kind
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub(crate) fn set_normalized(&mut self, normalized: Vec<f64>) {
        debug_assert_eq!(normalized.len(), self.raw.len());
        self.normalized = Some(normalized);
    }

    /// Rows whose ids appear in `keep`, in table order.
    pub fn subset(&self, keep: &[String]) -> Self {
        let wanted: HashSet<&str> = keep.iter().map(String::as_str).collect();
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| wanted.contains(self.ids[i].as_str()))
            .collect();
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            raw: idx.iter().map(|&i| self.raw[i]).collect(),
            normalized: self
                .normalized
                .as_ref()
                .map(|n| idx.iter().map(|&i| n[i]).collect()),
            kind: self.kind,
            flagged: idx.iter().map(|&i| self.flagged[i]).collect(),
        }
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "raw", "normalized"])?;
        for i in 0..self.len() {
            let norm = self
                .normalized
                .as_ref()
                .map(|n| n[i].to_string())
                .unwrap_or_default();
            w.write_record([self.ids[i].as_str(), &self.raw[i].to_string(), &norm])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads `id,raw,normalized`. The normalized column is kept only when it
    /// is filled on every row.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().take(2).collect::<Vec<_>>() != ["id", "raw"] {
            return Err(Error::Format(format!(
                "score CSV header must start with id,raw; found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut ids = Vec::new();
        let mut raw = Vec::new();
        let mut normalized = Vec::new();
        let mut complete = true;
        for row in r.deserialize() {
            let row: CsvRow = row?;
            ids.push(row.id);
            raw.push(row.raw);
            match row.normalized {
                Some(v) => normalized.push(v),
                None => complete = false,
            }
        }
        let normalized = (complete && !ids.is_empty()).then_some(normalized);
        Self::build(ids, raw, normalized, None)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = ScoreTable::new(
            vec!["a.png".into(), "b,c.png".into()],
            vec![-1.5, 0.1 + 0.2],
            ScorerKind::Gmm,
        )
        .unwrap();
        let text = t.to_csv_string().unwrap();
        assert!(text.starts_with("id,raw,normalized\n"));
        let back = ScoreTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.raw(), t.raw());
        assert!(back.normalized().is_none());

        t.set_normalized(vec![0.0, 1.0]);
        let back = ScoreTable::read_csv(t.to_csv_string().unwrap().as_bytes()).unwrap();
        assert_eq!(back.normalized(), Some(&[0.0, 1.0][..]));
        assert_eq!(back.ids(), t.ids());
    }

    #[test]
    fn rejects_duplicates_and_non_finite() {
        assert!(ScoreTable::new(vec!["a".into(), "a".into()], vec![1.0, 2.0], ScorerKind::Knn).is_err());
        assert!(ScoreTable::new(vec!["a".into()], vec![f64::NAN], ScorerKind::Knn).is_err());
    }
}
