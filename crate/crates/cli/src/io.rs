//! File formats: JSON Lines pattern records and versioned JSON model files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use setproc::classify::Classifier;
use setproc::cluster_dp::DpHyper;
use setproc::cluster_em::FiniteMixture;
use setproc::novelty::NoveltyDetector;
use setproc::{PointPattern, PointProcessModel};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl PatternRecord {
    pub fn from_pattern(p: &PointPattern, label: Option<usize>) -> Self {
        Self {
            points: p.to_vecs(),
            label,
        }
    }
}

/// Patterns read from a record file, with their optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub dim: Option<usize>,
    pub patterns: Vec<PointPattern>,
    pub labels: Vec<Option<usize>>,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// All labels, or an error naming the first unlabeled record.
    pub fn require_labels(&self) -> CliResult<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| CliError::Data(format!("record {} has no label", i + 1))))
            .collect()
    }

    pub fn require_dim(&self) -> CliResult<usize> {
        self.dim
            .ok_or_else(|| CliError::Data("cannot infer the feature dimension: no record has points".into()))
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

/// Parses every non-blank line of a JSON Lines file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w).map_err(|e| CliError::Data(e.to_string()))?;
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(BufReader::new(open(path)?)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Converts records to patterns, checking a rectangular, consistent dimension.
pub fn records_to_set(records: Vec<PatternRecord>, expected_dim: Option<usize>) -> CliResult<PatternSet> {
    let mut dim = expected_dim;
    for (i, r) in records.iter().enumerate() {
        for p in &r.points {
            match dim {
                None => dim = Some(p.len()),
                Some(d) if d != p.len() => {
                    return Err(CliError::Data(format!(
                        "record {}: point of dimension {} where {d} was expected",
                        i + 1,
                        p.len()
                    )))
                }
                _ => {}
            }
        }
    }
    if dim == Some(0) {
        return Err(CliError::Data("points must have at least one coordinate".into()));
    }
    let mut patterns = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let pattern = match dim {
            Some(d) => PointPattern::new(d, &r.points).map_err(|e| CliError::Data(format!("record {}: {e}", i + 1)))?,
            None => PointPattern::empty(1)?,
        };
        patterns.push(pattern);
        labels.push(r.label);
    }
    Ok(PatternSet { dim, patterns, labels })
}

pub fn read_patterns(path: &Path, expected_dim: Option<usize>) -> CliResult<PatternSet> {
    records_to_set(read_jsonl(path)?, expected_dim)
}

/// Options and seed a model file was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub options: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, seed: Option<u64>, options: serde_json::Value) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            options,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "kebab-case")]
pub enum ModelPayload {
    IidCluster(PointProcessModel),
    PoissonPp(PointProcessModel),
    Classifier(Classifier),
    Mixture(FiniteMixture),
    Detector(NoveltyDetector),
    DpHyper(DpHyper),
}

impl ModelPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelPayload::IidCluster(_) => "iid-cluster",
            ModelPayload::PoissonPp(_) => "poisson-pp",
            ModelPayload::Classifier(_) => "classifier",
            ModelPayload::Mixture(_) => "mixture",
            ModelPayload::Detector(_) => "detector",
            ModelPayload::DpHyper(_) => "dp-hyper",
        }
    }

    /// Wraps a single point-process model under the matching kind.
    pub fn point_process(m: PointProcessModel) -> Self {
        if m.is_poisson() {
            ModelPayload::PoissonPp(m)
        } else {
            ModelPayload::IidCluster(m)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub payload: ModelPayload,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn new(payload: ModelPayload, provenance: Provenance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            payload,
            provenance,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let f: Self = read_json(path)?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(CliError::Data(format!(
                "{}: unsupported schema version {}",
                path.display(),
                f.schema_version
            )));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}
