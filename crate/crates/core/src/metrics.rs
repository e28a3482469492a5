//! Evaluation quantities built from score tables: normalization, quality
//! score (QS), diversity score (DS), pair accuracy and histograms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::{fit_gmm, score_gmm, CovarianceType, EmConfig};
use crate::knn::{build_index, score_knn};
use crate::scores::ScoreTable;

fn min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Min-max map onto `[0, 1]`; a degenerate range maps everything to 0.5.
fn rescale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi == lo {
        return 0.5;
    }
    // Halved so that hi - lo cannot overflow for raw scores near ±f64::MAX.
    ((v * 0.5 - lo * 0.5) / (hi * 0.5 - lo * 0.5)).clamp(0.0, 1.0)
}

/// Copy of `table` with its normalized column set from its own min and max.
pub fn normalize_scores(table: &ScoreTable) -> Result<ScoreTable> {
    let mut out = table.clone();
    normalize_jointly(std::slice::from_mut(&mut out))?;
    Ok(out)
}

/// Normalizes every table against the min and max of all their raw scores
/// together, so normalized values are comparable across tables.
pub fn normalize_jointly(tables: &mut [ScoreTable]) -> Result<()> {
    let (lo, hi) = min_max(tables.iter().flat_map(|t| t.raw().iter().copied()))
        .ok_or_else(|| Error::InsufficientData("no scores to normalize".into()))?;
    for t in tables.iter_mut() {
        let n = t.raw().iter().map(|&v| rescale(v, lo, hi)).collect();
        t.set_normalized(n);
    }
    Ok(())
}

fn require_normalized(table: &ScoreTable) -> Result<&[f64]> {
    table.normalized().ok_or(Error::MissingNormalization)
}

/// Mean normalized score.
pub fn quality_score(table: &ScoreTable) -> Result<f64> {
    let n = require_normalized(table)?;
    if n.is_empty() {
        return Err(Error::InsufficientData("score table is empty".into()));
    }
    Ok(n.iter().sum::<f64>() / n.len() as f64)
}

/// Density model used for the diversity score, fitted on generated features.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityScorer {
    Gmm {
        n_components: usize,
        covariance_type: CovarianceType,
        config: EmConfig,
    },
    Knn {
        k: usize,
    },
}

impl DensityScorer {
    /// Fits on `reference` and returns raw scores of `queries`.
    pub fn fit_and_score(&self, reference: &FeatureMatrix, queries: &FeatureMatrix) -> Result<ScoreTable> {
        if reference.dim() != queries.dim() {
            return Err(Error::DimensionMismatch {
                expected: reference.dim(),
                found: queries.dim(),
            });
        }
        if queries.is_empty() {
            return Err(Error::InsufficientData("query set is empty".into()));
        }
        match self {
            DensityScorer::Gmm {
                n_components,
                covariance_type,
                config,
            } => {
                let fit = fit_gmm(reference, *n_components, *covariance_type, config)?;
                score_gmm(&fit.model, queries)
            }
            DensityScorer::Knn { k } => {
                let index = build_index(reference.clone())?;
                score_knn(&index, queries, *k)
            }
        }
    }
}

/// DS of one generated set: real features scored under a model of the
/// generated features, normalized within this run, then averaged.
pub fn diversity_score(generated: &FeatureMatrix, real: &FeatureMatrix, scorer: &DensityScorer) -> Result<f64> {
    let table = normalize_scores(&scorer.fit_and_score(generated, real)?)?;
    quality_score(&table)
}

/// DS of several generated sets against the same real set, with the real
/// images' scores normalized jointly across all sets.
pub fn diversity_scores(
    generated_sets: &[&FeatureMatrix],
    real: &FeatureMatrix,
    scorer: &DensityScorer,
) -> Result<Vec<f64>> {
    let mut tables = generated_sets
        .iter()
        .map(|g| scorer.fit_and_score(g, real))
        .collect::<Result<Vec<_>>>()?;
    normalize_jointly(&mut tables)?;
    tables.iter().map(quality_score).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    id_a: String,
    id_b: String,
    winner: Winner,
}

/// Labeled image pairs, each naming which image is better.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pairs: Vec<(String, String, Winner)>,
    source: String,
}

impl PairDataset {
    pub fn new(pairs: Vec<(String, String, Winner)>, source: impl Into<String>) -> Result<Self> {
        if let Some((a, _, _)) = pairs.iter().find(|(a, b, _)| a == b) {
            return Err(Error::Format(format!("pair compares {a:?} with itself")));
        }
        Ok(Self {
            pairs,
            source: source.into(),
        })
    }

    pub fn pairs(&self) -> &[(String, String, Winner)] {
        &self.pairs
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Reads `id_a,id_b,winner` with winner `a` or `b`.
    pub fn read_csv<R: std::io::Read>(reader: R, source: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let pairs = r
            .deserialize()
            .map(|row| row.map(|p: PairRow| (p.id_a, p.id_b, p.winner)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(pairs, source)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path.display().to_string())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (a, b, winner) in &self.pairs {
            w.serialize(PairRow {
                id_a: a.clone(),
                id_b: b.clone(),
                winner: *winner,
            })?;
        }
        if self.pairs.is_empty() {
            w.write_record(["id_a", "id_b", "winner"])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEvaluation {
    pub accuracy: f64,
    /// Per-pair credit: 1 agree, 0 disagree, 0.5 tie.
    pub credits: Vec<f64>,
    /// Raw scores of `(id_a, id_b)` for each pair.
    pub scores: Vec<(f64, f64)>,
}

/// Fraction of pairs where the winner's raw score is higher; ties count 0.5.
pub fn pair_accuracy(table: &ScoreTable, pairs: &PairDataset) -> Result<PairEvaluation> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("pair set is empty".into()));
    }
    let index = table.index();
    let mut missing: Vec<String> = Vec::new();
    for (a, b, _) in pairs.pairs() {
        for id in [a, b] {
            if !index.contains_key(id.as_str()) && !missing.contains(id) {
                missing.push(id.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let raw = table.raw();
    let mut credits = Vec::with_capacity(pairs.len());
    let mut scores = Vec::with_capacity(pairs.len());
    for (a, b, winner) in pairs.pairs() {
        let (sa, sb) = (raw[index[a.as_str()]], raw[index[b.as_str()]]);
        let (w, l) = match winner {
            Winner::A => (sa, sb),
            Winner::B => (sb, sa),
        };
        credits.push(if w > l {
            1.0
        } else if w == l {
            0.5
        } else {
            0.0
        });
        scores.push((sa, sb));
    }
    let accuracy = credits.iter().sum::<f64>() / credits.len() as f64;
    Ok(PairEvaluation {
        accuracy,
        credits,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    #[serde(rename = "bin_low")]
    pub low: f64,
    #[serde(rename = "bin_high")]
    pub high: f64,
    pub count: usize,
}

/// Counts of normalized scores in `bins` equal-width bins over `[0, 1]`.
/// Bins are half-open except the last, which includes 1.
pub fn score_histogram(table: &ScoreTable, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    let values = require_normalized(table)?;
    let edge = |i: usize| i as f64 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: edge(i),
            high: edge(i + 1),
            count: 0,
        })
        .collect();
    for &v in values {
        let mut i = ((v * bins as f64).floor() as usize).min(bins - 1);
        // Settle rounding at the edges against the edges as reported.
        while i > 0 && v < edge(i) {
            i -= 1;
        }
        while i + 1 < bins && v >= edge(i + 1) {
            i += 1;
        }
        out[i].count += 1;
    }
    Ok(out)
}

pub fn write_histogram_csv<W: std::io::Write>(bins: &[HistogramBin], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_low", "bin_high", "count"])?;
    for b in bins {
        w.write_record([b.low.to_string(), b.high.to_string(), b.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::ScorerKind;

    fn table(raw: &[f64]) -> ScoreTable {
        let ids = (0..raw.len()).map(|i| format!("img{i}")).collect();
        ScoreTable::new(ids, raw.to_vec(), ScorerKind::Gmm).unwrap()
    }

    #[test]
    fn min_max_normalization() {
        let t = normalize_scores(&table(&[-10.0, -5.0, 0.0])).unwrap();
        assert_eq!(t.normalized().unwrap(), &[0.0, 0.5, 1.0]);
        assert_eq!(t.raw(), &[-10.0, -5.0, 0.0]);
        let c = normalize_scores(&table(&[3.0, 3.0])).unwrap();
        assert_eq!(c.normalized().unwrap(), &[0.5, 0.5]);
        assert!(normalize_scores(&table(&[])).is_err());
    }

    #[test]
    fn extreme_range_does_not_overflow() {
        let t = normalize_scores(&table(&[-f64::MAX, 0.0, f64::MAX])).unwrap();
        assert_eq!(t.normalized().unwrap(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn joint_normalization_uses_union() {
        let mut ts = vec![table(&[0.0, 1.0]), table(&[2.0, 4.0])];
        normalize_jointly(&mut ts).unwrap();
        assert_eq!(ts[0].normalized().unwrap(), &[0.0, 0.25]);
        assert_eq!(ts[1].normalized().unwrap(), &[0.5, 1.0]);
    }

    #[test]
    fn quality_score_is_mean() {
        let t = normalize_scores(&table(&[-10.0, -5.0, 0.0])).unwrap();
        assert_eq!(quality_score(&t).unwrap(), 0.5);
        assert!(matches!(quality_score(&table(&[1.0])), Err(Error::MissingNormalization)));
    }

    fn pairs(list: &[(&str, &str, Winner)]) -> PairDataset {
        PairDataset::new(
            list.iter().map(|(a, b, w)| (a.to_string(), b.to_string(), *w)).collect(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn pair_credits() {
        let t = table(&[2.0, 1.0, 1.0]);
        let e = pair_accuracy(&t, &pairs(&[("img0", "img1", Winner::A)])).unwrap();
        assert_eq!(e.accuracy, 1.0);
        let e = pair_accuracy(&t, &pairs(&[("img1", "img2", Winner::B)])).unwrap();
        assert_eq!(e.accuracy, 0.5);
        let e = pair_accuracy(&t, &pairs(&[("img0", "img1", Winner::B)])).unwrap();
        assert_eq!(e.accuracy, 0.0);
    }

    #[test]
    fn missing_ids_are_listed() {
        let t = table(&[2.0]);
        match pair_accuracy(&t, &pairs(&[("img0", "x", Winner::A), ("y", "x", Winner::B)])) {
            Err(Error::MissingIds(ids)) => assert_eq!(ids, ["x", "y"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn self_pairs_rejected() {
        assert!(PairDataset::new(vec![("a".into(), "a".into(), Winner::A)], "").is_err());
    }

    #[test]
    fn pair_csv_round_trip() {
        let p = pairs(&[("a", "b", Winner::A), ("c", "d", Winner::B)]);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"id_a,id_b,winner\na,b,a\n"));
        assert_eq!(PairDataset::read_csv(&buf[..], "test").unwrap(), p);
        assert!(PairDataset::read_csv(&b"id_a,id_b,winner\na,b,c\n"[..], "").is_err());
    }

    #[test]
    fn histogram_edges() {
        let t = normalize_scores(&table(&[-10.0, -5.0, 0.0])).unwrap();
        let h = score_histogram(&t, 2).unwrap();
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), [1, 2]);
        let h = score_histogram(&t, 1).unwrap();
        assert_eq!(h[0].count, 3);
        assert!(score_histogram(&table(&[1.0]), 3).is_err());
        assert!(score_histogram(&t, 0).is_err());
    }

    #[test]
    fn histogram_uniform_grid() {
        let mut t = table(&vec![0.0; 1000]);
        t.set_normalized((0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect());
        let h = score_histogram(&t, 10).unwrap();
        assert!(h.iter().all(|b| b.count == 100));
        // Exact edges land in the bin they open.
        t.set_normalized((0..1000).map(|i| (i / 100) as f64 / 10.0).collect());
        let h = score_histogram(&t, 10).unwrap();
        assert!(h.iter().all(|b| b.count == 100), "{h:?}");
    }

    #[test]
    fn knn_diversity_with_exact_match() {
        let generated = FeatureMatrix::from_rows_auto_ids([[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let real = FeatureMatrix::from_rows_auto_ids([[1.0, 1.0]]).unwrap();
        let ds = diversity_score(&generated, &real, &DensityScorer::Knn { k: 1 }).unwrap();
        assert_eq!(ds, 0.5);
    }
}
