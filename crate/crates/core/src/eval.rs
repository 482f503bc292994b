//! ROC/AUC computation with exact tie handling, per-cluster score
//! statistics, patch-to-sample aggregation and heatmap rendering.

use crate::data::{sliding_crops, write_pgm, PatchGrid, PgmDepth};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// ROC curve from a full threshold sweep, with ties grouped, plus its area.
#[derive(Debug, Clone)]
pub struct RocCurve {
    /// (FPR, TPR) points from (0,0) to (1,1), nondecreasing in both
    /// coordinates.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over all distinct scores (higher score = more anomalous);
/// equal scores move together. The area accumulates in integer pair counts,
/// so it agrees with [`auc_pairwise_oracle`] to the last bit of the final
/// division.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0u64;
    let mut fp = 0u64;
    // Twice the area under the curve, in units of (pair count).
    let mut area2 = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut d_tp = 0u64;
        let mut d_fp = 0u64;
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                d_tp += 1;
            } else {
                d_fp += 1;
            }
            i += 1;
        }
        area2 += d_fp as f64 * (2 * tp + d_tp) as f64;
        tp += d_tp;
        fp += d_fp;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = area2 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// Exact O(n²) AUC: P(score_anom > score_norm) + ½·P(equal). The
/// independent oracle for [`roc_auc`].
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut wins = 0u64;
    let mut ties = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 1 {
                continue;
            }
            if si > sj {
                wins += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    Ok((2 * wins + ties) as f64 / (2.0 * pos as f64 * neg as f64))
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::non_finite("scores"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(
            "ROC needs both classes present".into(),
        ));
    }
    Ok((pos, neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateRule {
    /// Sample score = max over its patch scores. Thresholding the max is
    /// decision-equivalent to flagging a sample when any patch exceeds the
    /// threshold.
    Max,
}

/// Collapses per-patch scores to one score per sample.
pub fn aggregate_sample_scores(
    patch_scores: &[Vec<f64>],
    rule: AggregateRule,
) -> Result<Vec<f64>> {
    patch_scores
        .iter()
        .enumerate()
        .map(|(i, patches)| {
            if patches.is_empty() {
                return Err(Error::Data(format!("sample {i} has no patches")));
            }
            Ok(match rule {
                AggregateRule::Max => patches.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

/// Five-number summary with linear-interpolation percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxStats {
    pub p5: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p95: f64,
}

/// Per-cluster box statistics, separately for normal and anomalous scores.
#[derive(Debug, Clone)]
pub struct ClusterStats {
    pub clusters: BTreeMap<usize, ClusterClassStats>,
}

#[derive(Debug, Clone)]
pub struct ClusterClassStats {
    pub normal: Option<BoxStats>,
    pub anomalous: Option<BoxStats>,
    /// Median of all scores in the cluster (both classes pooled); the
    /// centering reference.
    pub pooled_median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    None,
    /// Subtract the per-cluster pooled median from every reported statistic.
    Median,
}

/// Linear-interpolation percentile of a sorted slice: rank p/100·(n−1).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn box_stats(values: &mut Vec<f64>, shift: f64) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    Some(BoxStats {
        p5: percentile(values, 5.0) - shift,
        q1: percentile(values, 25.0) - shift,
        median: percentile(values, 50.0) - shift,
        q3: percentile(values, 75.0) - shift,
        p95: percentile(values, 95.0) - shift,
    })
}

/// Box statistics per cluster and class, optionally median-centered for
/// display.
pub fn cluster_boxstats(
    scores: &[f64],
    labels: &[u8],
    cluster_ids: &[usize],
    center: Centering,
) -> Result<ClusterStats> {
    if scores.len() != labels.len() || scores.len() != cluster_ids.len() {
        return Err(Error::shape(
            "equal-length scores/labels/cluster_ids",
            format!("{}/{}/{}", scores.len(), labels.len(), cluster_ids.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Data("no scores".into()));
    }
    let mut grouped: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..scores.len() {
        let entry = grouped.entry(cluster_ids[i]).or_default();
        if labels[i] == 1 {
            entry.1.push(scores[i]);
        } else {
            entry.0.push(scores[i]);
        }
    }
    let mut clusters = BTreeMap::new();
    for (cid, (mut normal, mut anomalous)) in grouped {
        let mut pooled: Vec<f64> = normal.iter().chain(anomalous.iter()).copied().collect();
        pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        let pooled_median = percentile(&pooled, 50.0);
        let shift = match center {
            Centering::None => 0.0,
            Centering::Median => pooled_median,
        };
        clusters.insert(
            cid,
            ClusterClassStats {
                normal: box_stats(&mut normal, shift),
                anomalous: box_stats(&mut anomalous, shift),
                pooled_median,
            },
        );
    }
    Ok(ClusterStats { clusters })
}

/// Grid of per-position patch scores with a min-max-normalized copy.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub raw: Vec<f64>,
    /// (raw − min)/(max − min) when max > min, else all zeros.
    pub normalized: Vec<f64>,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl Heatmap {
    pub fn from_raw(rows: usize, cols: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} grid"),
                format!("{} scores", raw.len()),
            ));
        }
        let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let normalized = if raw_max > raw_min {
            raw.iter()
                .map(|v| (v - raw_min) / (raw_max - raw_min))
                .collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(Heatmap {
            rows,
            cols,
            raw,
            normalized,
            raw_min,
            raw_max,
        })
    }

    /// Cell index with the highest raw score (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.raw.iter().enumerate() {
            if v > self.raw[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }
}

/// Scores every sliding patch of the image and assembles the grid. The
/// scorer returns the already-selected score component for one patch.
pub fn render_heatmap(
    img: &Tensor,
    grid: &PatchGrid,
    mut scorer: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<Heatmap> {
    let crops = sliding_crops(img, grid)?;
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (rows, cols) = grid.dims(h, w);
    let mut raw = Vec::with_capacity(rows * cols);
    for (_, _, patch) in &crops {
        raw.push(scorer(patch)?);
    }
    Heatmap::from_raw(rows, cols, raw)
}

/// Writes the normalized heatmap as PGM with brighter pixels for lower
/// scores.
pub fn write_heatmap_pgm(path: &Path, map: &Heatmap) -> Result<()> {
    let inverted: Vec<f64> = map.normalized.iter().map(|v| 1.0 - v).collect();
    let img = Tensor::from_vec(vec![map.rows, map.cols], inverted)?;
    write_pgm(path, &img, PgmDepth::Eight)
}

/// Raw heatmap scores as CSV; the raw scale is recorded in a header comment
/// so normalized figures remain interpretable.
pub fn write_heatmap_csv(path: &Path, map: &Heatmap) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# raw_min={} raw_max={}", map.raw_min, map.raw_max);
    let _ = writeln!(out, "row,col,raw,normalized");
    for r in 0..map.rows {
        for c in 0..map.cols {
            let i = r * map.cols + c;
            let _ = writeln!(out, "{r},{c},{},{}", map.raw[i], map.normalized[i]);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// ROC points as CSV (fpr, tpr) with the AUC in a header comment.
pub fn write_roc_csv(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# auc={}", roc.auc);
    let _ = writeln!(out, "fpr,tpr");
    for (fpr, tpr) in &roc.points {
        let _ = writeln!(out, "{fpr},{tpr}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Cluster box statistics as CSV rows.
pub fn write_cluster_stats_csv(path: &Path, stats: &ClusterStats) -> Result<()> {
    let mut out = String::from("cluster_id,class,p5,q1,median,q3,p95\n");
    for (cid, cs) in &stats.clusters {
        for (name, bs) in [("normal", &cs.normal), ("anomalous", &cs.anomalous)] {
            if let Some(b) = bs {
                let _ = writeln!(
                    out,
                    "{cid},{name},{},{},{},{},{}",
                    b.p5, b.q1, b.median, b.q3, b.p95
                );
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A minimal gnuplot script plotting the named ROC CSVs.
pub fn gnuplot_roc_script(roc_files: &[(String, String)]) -> String {
    let mut s = String::from(
        "set xlabel 'false positive rate'\nset ylabel 'true positive rate'\n\
         set xrange [0:1]\nset yrange [0:1]\nset key bottom right\n",
    );
    let plots: Vec<String> = roc_files
        .iter()
        .map(|(file, title)| {
            format!("'{file}' using 1:2 with lines title '{title}'")
        })
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

#[cfg(test)]
mod tests;
