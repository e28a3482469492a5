//! Quality-ranked selection and hard-example loss weights.

use crate::error::{Error, Result};
use crate::scores::ScoreTable;

/// Ids sorted by raw score, best first; equal scores fall back to id order.
pub fn rank_by_score(table: &ScoreTable) -> Vec<String> {
    let raw = table.raw();
    let ids = table.ids();
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then_with(|| ids[a].cmp(&ids[b])));
    order.into_iter().map(|i| ids[i].clone()).collect()
}

/// Number of ids kept at `rate`, i.e. `ceil(rate · n)`.
pub fn pick_count(n: usize, rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "remaining rate must lie in (0, 1], got {rate}"
        )));
    }
    let exact = rate * n as f64;
    // Products like 0.7 · 10 come out a hair above the integer they denote.
    let snapped = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    Ok((snapped as usize).min(n))
}

/// The best `ceil(rate · n)` ids, in rank order.
pub fn pick_top(table: &ScoreTable, rate: f64) -> Result<Vec<String>> {
    if table.is_empty() {
        return Err(Error::InsufficientData("score table is empty".into()));
    }
    let keep = pick_count(table.len(), rate)?;
    let mut ranked = rank_by_score(table);
    ranked.truncate(keep);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhemConfig {
    /// Normalized scores strictly below this get the larger weight.
    pub t_q: f64,
    pub w_l: f64,
}

impl Default for OhemConfig {
    fn default() -> Self {
        Self { t_q: 0.2, w_l: 2.0 }
    }
}

impl OhemConfig {
    pub fn new(t_q: f64, w_l: f64) -> Result<Self> {
        if !(t_q > 0.0 && t_q < 1.0) {
            return Err(Error::InvalidArgument(format!("t_q must lie in (0, 1), got {t_q}")));
        }
        if !(w_l > 1.0 && w_l.is_finite()) {
            return Err(Error::InvalidArgument(format!("w_l must exceed 1, got {w_l}")));
        }
        Ok(Self { t_q, w_l })
    }
}

pub fn ohem_weight(normalized_score: f64, config: &OhemConfig) -> f64 {
    if normalized_score < config.t_q {
        config.w_l
    } else {
        1.0
    }
}

/// `(id, weight)` for each row of a normalized table, in table order.
pub fn ohem_weights(table: &ScoreTable, config: &OhemConfig) -> Result<Vec<(String, f64)>> {
    let normalized = table.normalized().ok_or(Error::MissingNormalization)?;
    Ok(table
        .ids()
        .iter()
        .zip(normalized)
        .map(|(id, &s)| (id.clone(), ohem_weight(s, config)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::ScorerKind;

    fn table(ids: &[&str], raw: &[f64]) -> ScoreTable {
        ScoreTable::new(ids.iter().map(|s| s.to_string()).collect(), raw.to_vec(), ScorerKind::Knn).unwrap()
    }

    #[test]
    fn ranking() {
        assert_eq!(rank_by_score(&table(&["a", "b", "c"], &[1.0, 3.0, 2.0])), ["b", "c", "a"]);
        assert_eq!(rank_by_score(&table(&["c", "a", "b"], &[0.0, 0.0, 0.0])), ["a", "b", "c"]);
    }

    #[test]
    fn pick_sizes() {
        let ids: Vec<String> = (0..10).map(|i| format!("{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let t = table(&refs, &(0..10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(pick_top(&t, 0.5).unwrap(), ["9", "8", "7", "6", "5"]);
        assert_eq!(pick_top(&t, 1.0).unwrap().len(), 10);
        assert_eq!(pick_top(&t, 0.7).unwrap().len(), 7);
        assert_eq!(pick_top(&t, 0.01).unwrap().len(), 1);
        assert_eq!(pick_top(&t, 0.55).unwrap().len(), 6);
        assert!(pick_top(&t, 0.0).is_err());
        assert!(pick_top(&t, 1.5).is_err());
    }

    #[test]
    fn ohem_step() {
        let c = OhemConfig::default();
        assert_eq!(ohem_weight(0.1, &c), 2.0);
        assert_eq!(ohem_weight(0.5, &c), 1.0);
        assert_eq!(ohem_weight(0.2, &c), 1.0);
        assert!(OhemConfig::new(0.0, 2.0).is_err());
        assert!(OhemConfig::new(0.2, 1.0).is_err());
    }

    #[test]
    fn weights_need_normalization() {
        let t = table(&["a"], &[1.0]);
        assert!(matches!(ohem_weights(&t, &OhemConfig::default()), Err(Error::MissingNormalization)));
    }
}
