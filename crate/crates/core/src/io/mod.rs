//! File formats: NPY and CSV activations, versioned JSON artifacts, plot-ready
//! CSV tables, and checkpoint directories.

pub mod npy;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::DistanceMatrix;
use crate::cca::ActivationMatrix;
use crate::dynamics::CheckpointSeries;
use crate::error::{Error, Result};
use crate::similarity::DistanceReport;
use crate::tensor::Matrix;
use crate::toy_nets::TrainRun;

/// Version stamped into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses comma-separated reals. A first row containing any non-numeric
/// field is taken as a header and skipped; `#` lines are comments.
pub fn parse_csv_matrix(text: &str) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::ParseFailure {
                    line,
                    message: format!("not a number: {e}"),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyMatrix { rows: 0, cols: 0 });
    }
    Matrix::from_rows(&rows)
}

/// CSV with no header; values printed with round-trip precision.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.to_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads NPY (detected by magic bytes) or CSV. Rows are neurons unless
/// `transpose` is set.
pub fn load_matrix(path: impl AsRef<Path>, transpose: bool) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let m = if npy::is_npy(&bytes) {
        npy::parse_npy(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| {
            Error::UnsupportedFormat(format!("{} is neither NPY nor UTF-8 CSV", path.display()))
        })?;
        parse_csv_matrix(text)?
    };
    Ok(if transpose { m.transpose() } else { m })
}

pub fn load_activations(path: impl AsRef<Path>, transpose: bool) -> Result<ActivationMatrix> {
    ActivationMatrix::new(load_matrix(path, transpose)?)
}

/// `.csv` paths get CSV, everything else NPY `<f8`.
pub fn save_matrix_file(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        write_bytes(path, matrix_to_csv(m).as_bytes())
    } else {
        write_bytes(path, &npy::to_npy_bytes(m))
    }
}

pub fn save_activations(l: &ActivationMatrix, path: impl AsRef<Path>) -> Result<()> {
    save_matrix_file(l.matrix(), path)
}

/// Where an artifact came from: the fully resolved configuration and seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    #[serde(default)]
    pub spec: serde_json::Value,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl Provenance {
    pub fn new(spec: serde_json::Value, seeds: Vec<u64>) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec,
            seeds,
        }
    }
}

/// Versioned JSON envelope; the body's fields sit at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub kind: String,
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_artifact<T: Serialize>(
    path: impl AsRef<Path>,
    kind: &str,
    provenance: &Provenance,
    body: &T,
) -> Result<()> {
    let art = Artifact {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        provenance: provenance.clone(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&art)?;
    text.push('\n');
    write_bytes(path.as_ref(), text.as_bytes())
}

pub fn read_artifact<T: DeserializeOwned>(
    path: impl AsRef<Path>,
    kind: &str,
) -> Result<Artifact<T>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let art: Artifact<T> = serde_json::from_slice(&bytes)?;
    if art.schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "{}: schema_version {}, expected {SCHEMA_VERSION}",
            path.display(),
            art.schema_version
        )));
    }
    if art.kind != kind {
        return Err(Error::UnsupportedFormat(format!(
            "{}: holds a `{}`, expected `{kind}`",
            path.display(),
            art.kind
        )));
    }
    Ok(art)
}

pub fn save_report(
    report: &DistanceReport,
    provenance: &Provenance,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_artifact(path, "distance_report", provenance, report)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<Artifact<DistanceReport>> {
    read_artifact(path, "distance_report")
}

/// JSON artifact at `path`; a `.csv` sibling holds the labelled matrix.
pub fn save_matrix(
    d: &DistanceMatrix,
    provenance: &Provenance,
    path: impl AsRef<Path>,
) -> Result<PathBuf> {
    let path = path.as_ref();
    write_artifact(path, "distance_matrix", provenance, d)?;
    let csv_path = path.with_extension("csv");
    let mut t = Table::new(
        std::iter::once("label".to_string())
            .chain(d.labels().iter().cloned())
            .collect(),
    );
    for (i, label) in d.labels().iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..d.len()).map(|j| format!("{:?}", d.get(i, j))));
        t.push(row);
    }
    t.write(&csv_path, Some(provenance))?;
    Ok(csv_path)
}

pub fn load_matrix_artifact(path: impl AsRef<Path>) -> Result<Artifact<DistanceMatrix>> {
    read_artifact(path, "distance_matrix")
}

/// Plain CSV table. When provenance is given it is written as a leading
/// `#` comment line holding compact JSON.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self, provenance: Option<&Provenance>) -> Result<String> {
        let mut out = Vec::new();
        if let Some(p) = provenance {
            out.extend_from_slice(b"# ");
            out.extend_from_slice(serde_json::to_string(p)?.as_bytes());
            out.push(b'\n');
        }
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
        }
        Ok(String::from_utf8(out).expect("csv output is UTF-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
        write_bytes(path.as_ref(), self.to_csv(provenance)?.as_bytes())
    }
}

/// Formats a real with round-trip precision.
pub fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub step: u64,
    #[serde(default)]
    pub train_loss: Option<f64>,
    /// One file per layer, relative to the directory.
    pub layers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub entries: Vec<ManifestEntry>,
}

fn layer_file(step: u64, layer: usize) -> String {
    format!("step_{step:08}_layer_{layer}.npy")
}

/// Writes every checkpoint of a training run plus a manifest.
pub fn save_train_run(
    run: &TrainRun,
    dir: impl AsRef<Path>,
    provenance: &Provenance,
) -> Result<()> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(run.checkpoints.len());
    for c in &run.checkpoints {
        let mut files = Vec::new();
        for (l, act) in c.per_layer_activations.iter().enumerate() {
            let name = layer_file(c.step, l);
            save_activations(act, dir.join(&name))?;
            files.push(name);
        }
        entries.push(ManifestEntry {
            step: c.step,
            train_loss: Some(c.train_loss),
            layers: files,
        });
    }
    write_artifact(
        dir.join(MANIFEST_FILE),
        "checkpoints",
        provenance,
        &CheckpointManifest { entries },
    )
}

/// Writes a single-layer series plus a manifest.
pub fn save_checkpoint_series(
    series: &CheckpointSeries,
    dir: impl AsRef<Path>,
    provenance: &Provenance,
) -> Result<()> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(series.len());
    for (&step, act) in series.steps().iter().zip(series.activations()) {
        let name = layer_file(step, 0);
        save_activations(act, dir.join(&name))?;
        entries.push(ManifestEntry {
            step,
            train_loss: None,
            layers: vec![name],
        });
    }
    write_artifact(
        dir.join(MANIFEST_FILE),
        "checkpoints",
        provenance,
        &CheckpointManifest { entries },
    )
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    Ok(read_artifact(dir.as_ref().join(MANIFEST_FILE), "checkpoints")?.body)
}

/// Loads one layer of every checkpoint listed in the directory's manifest.
pub fn load_checkpoint_series(dir: impl AsRef<Path>, layer: usize) -> Result<CheckpointSeries> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let mut steps = Vec::with_capacity(manifest.entries.len());
    let mut acts = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let file = e.layers.get(layer).ok_or_else(|| {
            Error::invalid(format!(
                "checkpoint at step {} has no layer {layer}",
                e.step
            ))
        })?;
        steps.push(e.step);
        acts.push(load_activations(dir.join(file), false)?);
    }
    CheckpointSeries::new(steps, acts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{Metric, MetricConfig, WeightDirection};

    #[test]
    fn csv_examples() {
        let m = parse_csv_matrix("1,2,3\n4,5,6").unwrap();
        assert_eq!(m.to_rows(), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let h = parse_csv_matrix("a,b\n# note\n1, 2\n3,4\n").unwrap();
        assert_eq!(h.shape(), (2, 2));
        assert!(matches!(
            parse_csv_matrix("1,2\nx,4\n"),
            Err(Error::ParseFailure { line: 2, .. })
        ));
        assert!(matches!(parse_csv_matrix("1,2\n3\n"), Err(Error::Csv(_))));
        assert!(matches!(
            parse_csv_matrix("1,nan\n"),
            Err(Error::NonFiniteValue { .. })
        ));
        assert!(parse_csv_matrix("a,b\n").is_err());
        let m = Matrix::from_rows(&[[0.1, -2.5e-300], [1.0 / 3.0, 7.0]]).unwrap();
        assert_eq!(parse_csv_matrix(&matrix_to_csv(&m)).unwrap(), m);
    }

    #[test]
    fn activation_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let l = ActivationMatrix::from_rows(&[[1.0, 2.0, 3.5], [0.25, -1.0, 1e-17]]).unwrap();
        for name in ["a.npy", "a.csv", "noext"] {
            let p = dir.path().join(name);
            save_activations(&l, &p).unwrap();
            assert_eq!(load_activations(&p, false).unwrap(), l);
        }
        let t = load_activations(dir.path().join("a.npy"), true).unwrap();
        assert_eq!(t.matrix(), &l.matrix().transpose());
        assert!(matches!(
            load_activations(dir.path().join("missing.npy"), false),
            Err(Error::Io { .. })
        ));
        fs::write(dir.path().join("bin"), [0xff, 0xfe, 0x00]).unwrap();
        assert!(matches!(
            load_activations(dir.path().join("bin"), false),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn report_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let report = DistanceReport {
            metric: Metric::Pwcca,
            distance: 0.123_456_789_012_345_68,
            weights: Some(vec![0.7, 0.2, 0.1]),
            k_significant: Some(2),
            direction: Some(WeightDirection::L1Weighted),
            raw_distance: None,
            variance_fraction: None,
        };
        let prov = Provenance::new(serde_json::json!({"metric": "pwcca"}), vec![1, 2]);
        let p = dir.path().join("r.json");
        save_report(&report, &prov, &p).unwrap();
        let back = load_report(&p).unwrap();
        assert_eq!(back.body, report);
        assert_eq!(back.body.distance.to_bits(), report.distance.to_bits());
        assert_eq!(back.provenance, prov);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("0.12345678901234568"));
        assert!(load_matrix_artifact(&p).is_err());
    }

    #[test]
    fn matrix_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let layers: Vec<ActivationMatrix> = (0..3)
            .map(|s| {
                let mut r = crate::rng::seeded(s);
                ActivationMatrix::new(
                    Matrix::from_fn(3, 40, |_, _| crate::rng::standard_normal(&mut r)).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let d =
            crate::analysis::pairwise_distance_matrix(&layers, &MetricConfig::new(Metric::Pwcca))
                .unwrap();
        let prov = Provenance::new(serde_json::Value::Null, vec![]);
        let csv_path = save_matrix(&d, &prov, dir.path().join("m.json")).unwrap();
        assert_eq!(
            load_matrix_artifact(dir.path().join("m.json"))
                .unwrap()
                .body,
            d
        );
        let text = fs::read_to_string(csv_path).unwrap();
        assert!(text.starts_with("# {"));
        assert_eq!(text.lines().nth(1).unwrap(), "label,0,1,2");
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn checkpoint_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let acts: Vec<ActivationMatrix> = (0..3)
            .map(|s| {
                ActivationMatrix::from_rows(&[[s as f64, 1.0, 2.0], [3.0, 4.0, 5.0 + s as f64]])
                    .unwrap()
            })
            .collect();
        let series = CheckpointSeries::new(vec![0, 10, 100], acts).unwrap();
        let prov = Provenance::new(serde_json::Value::Null, vec![]);
        save_checkpoint_series(&series, dir.path(), &prov).unwrap();
        assert!(dir.path().join("step_00000010_layer_0.npy").exists());
        let back = load_checkpoint_series(dir.path(), 0).unwrap();
        assert_eq!(back, series);
        assert!(load_checkpoint_series(dir.path(), 1).is_err());
    }
}
