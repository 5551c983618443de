use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::datagen::NoiseKind;
use crate::metrics::avg_worst_accuracy;
use crate::{Error, Result};

/// One evaluated model at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    /// The experimental arm (strategy, ablation subset, predictor target or
    /// uncertainty measure).
    pub arm: String,
    /// `fused`, or `unimodal_<m>` for a single classifier head.
    pub model: String,
    pub noise_kind: NoiseKind,
    pub noise_degree: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub conflict_fraction: Option<f64>,
    pub conflict_accuracy: Option<f64>,
    pub aggregate_covariance: Option<f64>,
}

/// Accuracy over seeds for one (arm, model, noise) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub arm: String,
    pub model: String,
    pub noise_kind: NoiseKind,
    pub noise_degree: f64,
    pub runs: usize,
    pub avg: f64,
    pub worst: f64,
    pub stddev: f64,
}

/// Groups records by cell, in order of first appearance.
pub fn summarize(records: &[AccuracyRecord]) -> Result<Vec<SummaryRecord>> {
    let mut cells: Vec<(&AccuracyRecord, Vec<f64>)> = Vec::new();
    for r in records {
        let same = |c: &&mut (&AccuracyRecord, Vec<f64>)| {
            c.0.arm == r.arm
                && c.0.model == r.model
                && c.0.noise_kind == r.noise_kind
                && c.0.noise_degree.to_bits() == r.noise_degree.to_bits()
        };
        match cells.iter_mut().find(|c| same(c)) {
            Some(cell) => cell.1.push(r.accuracy),
            None => cells.push((r, vec![r.accuracy])),
        }
    }
    cells
        .into_iter()
        .map(|(r, accs)| {
            let s = avg_worst_accuracy(&accs)?;
            Ok(SummaryRecord {
                arm: r.arm.clone(),
                model: r.model.clone(),
                noise_kind: r.noise_kind,
                noise_degree: r.noise_degree,
                runs: accs.len(),
                avg: s.avg,
                worst: s.worst,
                stddev: s.stddev,
            })
        })
        .collect()
}

/// Looks up one summary cell.
pub fn find_summary<'a>(
    summary: &'a [SummaryRecord],
    arm: &str,
    model: &str,
    noise_degree: f64,
) -> Option<&'a SummaryRecord> {
    summary
        .iter()
        .find(|s| s.arm == arm && s.model == model && s.noise_degree == noise_degree)
}

/// Fixed six-digit decimal; missing values are `NA`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

/// A CSV table built in memory.
pub(crate) struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header).map_err(csv_error)?;
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(cells).map_err(csv_error)
    }

    pub fn finish(self) -> Result<Vec<u8>> {
        self.writer
            .into_inner()
            .map_err(|e| csv_error(e.into_error().into()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

pub(crate) fn summary_table(
    summary: &[SummaryRecord],
    arm_column: &str,
    with_model: bool,
) -> Result<Vec<u8>> {
    let mut header = vec![arm_column];
    if with_model {
        header.push("model");
    }
    header.extend([
        "noise_kind",
        "noise_degree",
        "runs",
        "avg_accuracy",
        "worst_accuracy",
        "std_accuracy",
    ]);
    let mut t = Table::new(&header)?;
    for s in summary {
        let mut row = vec![s.arm.clone()];
        if with_model {
            row.push(s.model.clone());
        }
        row.extend([
            s.noise_kind.as_str().to_string(),
            fmt_f64(s.noise_degree),
            s.runs.to_string(),
            fmt_f64(s.avg),
            fmt_f64(s.worst),
            fmt_f64(s.stddev),
        ]);
        t.row(row)?;
    }
    t.finish()
}

/// A named output file of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub contents: Vec<u8>,
}

impl Artifact {
    pub fn new(path: impl Into<String>, contents: Vec<u8>) -> Self {
        Self {
            path: path.into(),
            contents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written as `<command>_manifest.json` next to the outputs it lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Command stem, e.g. `sweep` or `compare_uncertainty`.
    pub command: String,
    /// The effective config with keys sorted; the output directory is left
    /// out so identical runs in different places have identical manifests.
    pub config: serde_json::Value,
    pub files: Vec<FileDigest>,
}

/// File name of the manifest for a command stem such as `sweep`.
pub fn manifest_file(stem: &str) -> String {
    format!("{stem}_manifest.json")
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, artifacts: &[Artifact]) -> Result<Self> {
        let echo = ExperimentConfig {
            output_dir: None,
            ..config.clone()
        };
        let config =
            serde_json::to_value(&echo).map_err(|e| Error::format("manifest", e.to_string()))?;
        Ok(Self {
            tool: "predfuse".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            files: artifacts
                .iter()
                .map(|a| FileDigest {
                    path: a.path.clone(),
                    bytes: a.contents.len() as u64,
                    sha256: hex::encode(Sha256::digest(&a.contents)),
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::format("manifest", e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format("manifest", e.to_string()))
    }

    /// Recomputes every listed digest under `dir`; returns the mismatching paths.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        let mut bad = Vec::new();
        for f in &self.files {
            let path = dir.join(&f.path);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if hex::encode(Sha256::digest(&bytes)) != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

/// Writes every artifact and the manifest under `dir`.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact], manifest: &RunManifest) -> Result<()> {
    let name = manifest_file(&manifest.command);
    let mut all: Vec<(&str, Vec<u8>)> = artifacts
        .iter()
        .map(|a| (a.path.as_str(), a.contents.clone()))
        .collect();
    all.push((&name, manifest.to_json()?));
    for (rel, contents) in all {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(arm: &str, degree: f64, seed: u64, accuracy: f64) -> AccuracyRecord {
        AccuracyRecord {
            arm: arm.into(),
            model: "fused".into(),
            noise_kind: NoiseKind::Gaussian,
            noise_degree: degree,
            seed,
            accuracy,
            conflict_fraction: None,
            conflict_accuracy: None,
            aggregate_covariance: None,
        }
    }

    #[test]
    fn summary_groups_cells_in_first_seen_order() {
        let records = [
            record("ccb", 0.0, 1, 0.8),
            record("ccb", 5.0, 1, 0.6),
            record("ccb", 0.0, 2, 0.9),
            record("equal_weight", 0.0, 1, 0.7),
        ];
        let s = summarize(&records).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(
            (s[0].arm.as_str(), s[0].noise_degree, s[0].runs),
            ("ccb", 0.0, 2)
        );
        assert!((s[0].avg - 0.85).abs() < 1e-12);
        assert_eq!(s[0].worst, 0.8);
        assert_eq!(s[1].noise_degree, 5.0);
        assert_eq!(s[2].arm, "equal_weight");
        assert!(find_summary(&s, "ccb", "fused", 5.0).is_some());
        assert!(find_summary(&s, "ccb", "fused", 10.0).is_none());
    }

    #[test]
    fn numbers_use_six_decimals() {
        assert_eq!(fmt_f64(0.5), "0.500000");
        assert_eq!(fmt_f64(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_opt(None), "NA");
        let mut t = Table::new(&["a", "b"]).unwrap();
        t.row([fmt_f64(2.0), fmt_opt(Some(0.25))]).unwrap();
        assert_eq!(
            String::from_utf8(t.finish().unwrap()).unwrap(),
            "a,b\n2.000000,0.250000\n"
        );
    }

    #[test]
    fn manifest_ignores_output_dir_and_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let artifacts = vec![Artifact::new("x/a.csv", b"a\n1\n".to_vec())];
        let mut config = ExperimentConfig::default();
        let m1 = RunManifest::new("sweep", &config, &artifacts).unwrap();
        config.output_dir = Some("elsewhere".into());
        let m2 = RunManifest::new("sweep", &config, &artifacts).unwrap();
        assert_eq!(m1.to_json().unwrap(), m2.to_json().unwrap());

        write_artifacts(dir.path(), &artifacts, &m1).unwrap();
        let loaded = RunManifest::load(dir.path().join(manifest_file("sweep"))).unwrap();
        assert_eq!(loaded, m1);
        assert!(loaded.verify(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("x/a.csv"), b"changed").unwrap();
        assert_eq!(
            loaded.verify(dir.path()).unwrap(),
            vec!["x/a.csv".to_string()]
        );
    }
}
