//! The anomaly-score decomposition `L = D + A + M` and the uniform scoring
//! interface over VAE and GMM models.
//!
//! `M`, the square normalized distance, is the unregularized score: scoring
//! with it alone is robust to heterogeneous sample complexity, while the
//! full `L` is dominated by the complexity-tracking terms `D` and `A`.

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::tensor::Tensor;
use crate::vae::VaeModel;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// The decomposed anomaly score of one sample (or patch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// Regularization term: KL(q‖p) for the VAE, −log w_k for the GMM.
    pub d: f64,
    /// Log normalizing constant of the Gaussian likelihood.
    pub a: f64,
    /// Square normalized distance — the unregularized score.
    pub m: f64,
    /// Total: always d + a + m.
    pub l: f64,
}

impl ScoreBreakdown {
    pub fn new(d: f64, a: f64, m: f64) -> Result<Self> {
        let l = d + a + m;
        if !(d.is_finite() && a.is_finite() && m.is_finite() && l.is_finite()) {
            return Err(Error::non_finite("score breakdown"));
        }
        Ok(ScoreBreakdown { d, a, m, l })
    }

    pub fn select(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::L => self.l,
            ScoreKind::D => self.d,
            ScoreKind::A => self.a,
            ScoreKind::M => self.m,
        }
    }
}

/// Which component of the breakdown serves as the anomaly score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    L,
    D,
    A,
    M,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [ScoreKind::L, ScoreKind::D, ScoreKind::A, ScoreKind::M];
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScoreKind::L => "L",
            ScoreKind::D => "D",
            ScoreKind::A => "A",
            ScoreKind::M => "M",
        };
        f.write_str(s)
    }
}

impl FromStr for ScoreKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(ScoreKind::L),
            "D" | "d" => Ok(ScoreKind::D),
            "A" | "a" => Ok(ScoreKind::A),
            "M" | "m" => Ok(ScoreKind::M),
            other => Err(Error::Config(format!(
                "unknown score kind {other:?}; expected one of L, D, A, M"
            ))),
        }
    }
}

/// Returns the named component of a breakdown.
pub fn select(breakdown: &ScoreBreakdown, kind: ScoreKind) -> f64 {
    breakdown.select(kind)
}

/// Scores one input through a trained VAE: encode, take the posterior mean,
/// decode, evaluate the negative ELBO. Deterministic.
pub fn score_vae(model: &VaeModel, x: &Tensor) -> Result<ScoreBreakdown> {
    model.score(x)
}

/// Scores a feature vector through a fitted GMM at its MAP class.
pub fn score_gmm(model: &GmmModel, x: &[f64]) -> Result<ScoreBreakdown> {
    model.score(x)
}

/// One row of the per-patch score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: usize,
    pub patch_row: usize,
    pub patch_col: usize,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// 0 = normal, 1 = anomalous.
    pub label: u8,
    pub cluster_id: usize,
}

impl ScoreRow {
    pub fn breakdown(&self) -> ScoreBreakdown {
        ScoreBreakdown {
            d: self.d,
            a: self.a,
            m: self.m,
            l: self.l,
        }
    }
}

/// Writes score rows as CSV with the canonical column order.
pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    std::fs::write(path, scores_to_string(rows)?)?;
    Ok(())
}

/// Reads a score CSV produced by [`write_scores`].
pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let file = std::fs::File::open(path)?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(csv_err)?);
    }
    Ok(rows)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

/// Serializes rows to CSV text (deterministic bytes).
pub fn scores_to_string(rows: &[ScoreRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let buf = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_returns_named_component() {
        let b = ScoreBreakdown::new(1.0, 2.0, 3.0).unwrap();
        assert_eq!(b.l, 6.0);
        assert_eq!(select(&b, ScoreKind::M), 3.0);
        assert_eq!(select(&b, ScoreKind::L), 6.0);
        assert_eq!(select(&b, ScoreKind::D), 1.0);
        assert_eq!(select(&b, ScoreKind::A), 2.0);
    }

    #[test]
    fn breakdown_total_is_exact_sum() {
        let b = ScoreBreakdown::new(0.1, -7.3, 22.9).unwrap();
        assert_eq!(b.l, 0.1 + (-7.3) + 22.9);
    }

    #[test]
    fn non_finite_terms_are_rejected() {
        assert!(ScoreBreakdown::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(ScoreBreakdown::new(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn kind_parses_and_displays() {
        for kind in ScoreKind::ALL {
            assert_eq!(kind.to_string().parse::<ScoreKind>().unwrap(), kind);
        }
        assert!("Q".parse::<ScoreKind>().is_err());
    }

    #[test]
    fn score_csv_round_trip() {
        let rows = vec![
            ScoreRow {
                sample_id: 0,
                patch_row: 0,
                patch_col: 0,
                d: 1.25,
                a: -3.5,
                m: 10.0625,
                l: 1.25 - 3.5 + 10.0625,
                label: 0,
                cluster_id: 1,
            },
            ScoreRow {
                sample_id: 1,
                patch_row: 2,
                patch_col: 3,
                d: 0.0,
                a: 0.5,
                m: 0.25,
                l: 0.75,
                label: 1,
                cluster_id: 0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores(&path, &rows).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(rows, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,patch_row,patch_col,D,A,M,L,label,cluster_id"));
    }
}
