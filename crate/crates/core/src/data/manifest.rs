//! Dataset directories: PGM images plus a CSV manifest (path, label,
//! cluster_id) with forward-slash relative paths. Ground-truth erasure
//! masks of generated anomalies ride along as `<stem>.mask.pgm` and are
//! picked up when present.

use super::pgm::{read_pgm, write_pgm, PgmDepth};
use super::{Label, LabeledImage};
use crate::error::{Error, Result};
use crate::scoring::csv_err;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    label: u8,
    cluster_id: usize,
}

/// Companion descriptor written next to generated splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub seed: u64,
    pub erasure_size: usize,
    pub contamination: f64,
    pub train_count: usize,
    pub test_count: usize,
}

/// Writes images and the manifest into `dir` (created when missing).
pub fn save_dataset(dir: &Path, images: &[LabeledImage]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let name = format!("img_{i:05}.pgm");
        write_pgm(&dir.join(&name), &img.pixels, PgmDepth::Eight)?;
        if let Some(mask) = &img.anomaly_mask {
            let (h, w) = (img.height(), img.width());
            let data: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let mask_img = Tensor::from_vec(vec![h, w], data)?;
            write_pgm(
                &dir.join(format!("img_{i:05}.mask.pgm")),
                &mask_img,
                PgmDepth::Eight,
            )?;
        }
        rows.push(ManifestRow {
            path: name,
            label: match img.label {
                Label::Normal => 0,
                Label::Anomalous => 1,
            },
            cluster_id: img.cluster_id,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let buf = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(dir.join("manifest.csv"), buf)?;
    Ok(())
}

/// Loads a dataset directory through its manifest. Also the ingestion path
/// for user-supplied PGM images with a hand-written manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    let manifest = dir.join("manifest.csv");
    let file = std::fs::File::open(&manifest)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let row: ManifestRow = rec.map_err(csv_err)?;
        if row.path.contains('\\') {
            return Err(Error::Data(format!(
                "manifest path {:?} must use forward slashes",
                row.path
            )));
        }
        let pixels = read_pgm(&dir.join(&row.path))?;
        let mask_path = dir.join(format!(
            "{}.mask.pgm",
            row.path.trim_end_matches(".pgm")
        ));
        let anomaly_mask = if mask_path.exists() {
            let m = read_pgm(&mask_path)?;
            Some(m.data().iter().map(|&v| v > 0.5).collect())
        } else {
            None
        };
        out.push(LabeledImage {
            pixels,
            label: if row.label == 0 {
                Label::Normal
            } else {
                Label::Anomalous
            },
            cluster_id: row.cluster_id,
            anomaly_mask,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, inject_erasure, SynthSpec};

    #[test]
    fn dataset_directory_round_trips() {
        let spec = SynthSpec::benchmark(5, 4, 4);
        let mut images = generate_synthetic(&spec).unwrap();
        images[1] = inject_erasure(&images[1], 4, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &images).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), images.len());
        for (a, b) in images.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.cluster_id, b.cluster_id);
            assert_eq!(a.anomaly_mask.is_some(), b.anomaly_mask.is_some());
            for (x, y) in a.pixels.data().iter().zip(b.pixels.data()) {
                assert!((x - y).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
        // The recorded mask round-trips exactly.
        assert_eq!(images[1].anomaly_mask, back[1].anomaly_mask);
    }

    #[test]
    fn manifest_is_deterministic() {
        let spec = SynthSpec::benchmark(6, 3, 3);
        let images = generate_synthetic(&spec).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(d1.path(), &images).unwrap();
        save_dataset(d2.path(), &images).unwrap();
        assert_eq!(
            std::fs::read(d1.path().join("manifest.csv")).unwrap(),
            std::fs::read(d2.path().join("manifest.csv")).unwrap()
        );
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Data(_))
        ));
    }
}
