//! Probing-set index, activation and concept vectors, and their on-disk formats.
//!
//! Matrices are stored inputs-as-rows and signals-as-columns. Two encodings
//! are supported:
//!
//! * CSV: header row whose first column is `input_id`, one signal per
//!   remaining column, decimal floats, no blank cells.
//! * Binary: magic `NGV1`, little-endian `u32` row and column counts, then a
//!   row-major little-endian `f32` payload. Ids and column names live in a JSON
//!   sidecar at `<file>.meta.json`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"NGV1";

/// The probing dataset: an ordered list of unique input ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingIndex {
    input_ids: Vec<String>,
    asset_uris: Vec<Option<String>>,
    positions: HashMap<String, usize>,
}

impl ProbingIndex {
    pub fn new(input_ids: Vec<String>) -> Result<Self> {
        if input_ids.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "probing set needs at least 2 inputs, got {}",
                input_ids.len()
            )));
        }
        let mut positions = HashMap::with_capacity(input_ids.len());
        for (i, id) in input_ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate input id `{id}`")));
            }
        }
        let asset_uris = vec![None; input_ids.len()];
        Ok(Self {
            input_ids,
            asset_uris,
            positions,
        })
    }

    pub fn size(&self) -> usize {
        self.input_ids.len()
    }

    pub fn input_ids(&self) -> &[String] {
        &self.input_ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.input_ids[index]
    }

    pub fn position(&self, input_id: &str) -> Option<usize> {
        self.positions.get(input_id).copied()
    }

    pub fn asset_uri(&self, index: usize) -> Option<&str> {
        self.asset_uris.get(index).and_then(|u| u.as_deref())
    }

    /// Attaches pass-through asset URIs. Ids not present in the index are ignored.
    pub fn set_asset_uris<I, K, V>(&mut self, uris: I)
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        for (id, uri) in uris {
            if let Some(&i) = self.positions.get(id.as_ref()) {
                self.asset_uris[i] = Some(uri.into());
            }
        }
    }
}

/// A neuron's activations over the probing set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationVector {
    pub neuron_id: String,
    pub values: Vec<f64>,
}

impl ActivationVector {
    pub fn new(neuron_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let neuron_id = neuron_id.into();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!(
                "activation `{neuron_id}` has a non-finite value at row {i}"
            )));
        }
        Ok(Self { neuron_id, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    CheapEstimator,
    Aggregated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::GroundTruth => "ground_truth",
            Provenance::CheapEstimator => "cheap_estimator",
            Provenance::Aggregated => "aggregated",
        }
    }
}

/// Per-input concept presence scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub concept_id: String,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl ConceptVector {
    pub fn new(
        concept_id: impl Into<String>,
        values: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        let concept_id = concept_id.into();
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Range(format!(
                    "concept `{concept_id}` row {i}: {v} is outside [0, 1]"
                )));
            }
            if provenance == Provenance::GroundTruth && v != 0.0 && v != 1.0 {
                return Err(Error::ProvenanceViolation(format!(
                    "ground-truth concept `{concept_id}` row {i} is {v}, expected 0 or 1"
                )));
            }
        }
        Ok(Self {
            concept_id,
            values,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Divide by `n`.
    Population,
    /// Divide by `n - 1`.
    Bessel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
    pub convention: Convention,
}

impl NormalizationStats {
    /// Mean and standard deviation of `values`. Fails with `DegenerateSignal`
    /// when the standard deviation is zero.
    pub fn compute(name: &str, values: &[f64], convention: Convention) -> Result<Self> {
        let n = values.len();
        let denom = match convention {
            Convention::Population => n,
            Convention::Bessel => n.saturating_sub(1),
        };
        if n == 0 || denom == 0 {
            return Err(Error::DegenerateSignal(name.to_string()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = (ss / denom as f64).sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::DegenerateSignal(name.to_string()));
        }
        Ok(Self {
            mean,
            std,
            convention,
        })
    }

    #[inline]
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn standardize_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&x| self.standardize(x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Bin,
}

impl MatrixFormat {
    /// `.bin` selects the binary encoding; anything else is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") => MatrixFormat::Bin,
            _ => MatrixFormat::Csv,
        }
    }
}

/// What the columns of a matrix file hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Activation,
    Concept(Provenance),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Signals {
    Activations(Vec<ActivationVector>),
    Concepts(Vec<ConceptVector>),
}

impl Signals {
    pub fn len(&self) -> usize {
        match self {
            Signals::Activations(v) => v.len(),
            Signals::Concepts(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_activations(self) -> Result<Vec<ActivationVector>> {
        match self {
            Signals::Activations(v) => Ok(v),
            Signals::Concepts(_) => Err(Error::Parse("expected activations, found concepts".into())),
        }
    }

    pub fn into_concepts(self) -> Result<Vec<ConceptVector>> {
        match self {
            Signals::Concepts(v) => Ok(v),
            Signals::Activations(_) => Err(Error::Parse("expected concepts, found activations".into())),
        }
    }

    fn columns(&self) -> Vec<(&str, &[f64])> {
        match self {
            Signals::Activations(v) => v
                .iter()
                .map(|a| (a.neuron_id.as_str(), a.values.as_slice()))
                .collect(),
            Signals::Concepts(v) => v
                .iter()
                .map(|c| (c.concept_id.as_str(), c.values.as_slice()))
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    input_ids: Vec<String>,
    columns: Vec<String>,
    kind: String,
    #[serde(default)]
    provenance: Option<Provenance>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Reads a matrix file and validates every column against `kind`.
pub fn load_matrix(path: &Path, format: MatrixFormat, kind: SignalKind) -> Result<(ProbingIndex, Signals)> {
    let (ids, names, columns) = match format {
        MatrixFormat::Csv => read_csv(path)?,
        MatrixFormat::Bin => read_bin(path, kind)?,
    };
    let index = ProbingIndex::new(ids)?;
    let signals = build_signals(names, columns, kind)?;
    Ok((index, signals))
}

pub fn load_activations(path: &Path) -> Result<(ProbingIndex, Vec<ActivationVector>)> {
    let (index, signals) = load_matrix(path, MatrixFormat::from_path(path), SignalKind::Activation)?;
    Ok((index, signals.into_activations()?))
}

pub fn load_concepts(path: &Path, provenance: Provenance) -> Result<(ProbingIndex, Vec<ConceptVector>)> {
    let (index, signals) = load_matrix(
        path,
        MatrixFormat::from_path(path),
        SignalKind::Concept(provenance),
    )?;
    Ok((index, signals.into_concepts()?))
}

fn build_signals(names: Vec<String>, columns: Vec<Vec<f64>>, kind: SignalKind) -> Result<Signals> {
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(Error::Parse(format!("duplicate column `{n}`")));
        }
    }
    Ok(match kind {
        SignalKind::Activation => Signals::Activations(
            names
                .into_iter()
                .zip(columns)
                .map(|(n, v)| ActivationVector::new(n, v))
                .collect::<Result<_>>()?,
        ),
        SignalKind::Concept(p) => Signals::Concepts(
            names
                .into_iter()
                .zip(columns)
                .map(|(n, v)| ConceptVector::new(n, v, p))
                .collect::<Result<_>>()?,
        ),
    })
}

type RawMatrix = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

fn read_csv(path: &Path) -> Result<RawMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0).map(str::trim) != Some("input_id") {
        return Err(Error::Parse(format!(
            "{}: first header column must be `input_id`",
            path.display()
        )));
    }
    if header.len() < 2 {
        return Err(Error::Parse(format!("{}: no signal columns", path.display())));
    }
    let names: Vec<String> = header.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if let Some(i) = names.iter().position(|n| n.is_empty()) {
        return Err(Error::Parse(format!("{}: header column {} is blank", path.display(), i + 1)));
    }
    let width = header.len();
    let mut ids = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = row + 2;
        if record.len() != width {
            return Err(Error::DimensionMismatch(format!(
                "{} line {line}: expected {width} cells, found {}",
                path.display(),
                record.len()
            )));
        }
        let id = record[0].trim();
        if id.is_empty() {
            return Err(Error::Parse(format!("{} line {line}: blank input_id", path.display())));
        }
        ids.push(id.to_string());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::Parse(format!(
                    "{} line {line}: blank cell in column `{}`",
                    path.display(),
                    names[j]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!("{} line {line}: `{cell}` is not a number", path.display()))
            })?;
            columns[j].push(v);
        }
    }
    Ok((ids, names, columns))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

fn read_bin(path: &Path, kind: SignalKind) -> Result<RawMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Parse(format!("{}: missing NGV1 header", path.display())));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::DimensionMismatch(format!(
            "{}: header says {rows}x{cols} but payload holds {} bytes",
            path.display(),
            payload.len()
        )));
    }
    let meta_path = sidecar_path(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Sidecar = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Parse(format!("{}: {e}", meta_path.display())))?;
    if meta.input_ids.len() != rows || meta.columns.len() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{}: sidecar lists {} ids and {} columns for a {rows}x{cols} payload",
            meta_path.display(),
            meta.input_ids.len(),
            meta.columns.len()
        )));
    }
    match (kind, meta.kind.as_str()) {
        (SignalKind::Activation, "activation") => {}
        (SignalKind::Concept(want), "concept") => {
            if let Some(have) = meta.provenance {
                if have != want {
                    return Err(Error::ProvenanceViolation(format!(
                        "{}: file holds {} concepts, expected {}",
                        path.display(),
                        have.as_str(),
                        want.as_str()
                    )));
                }
            }
        }
        (_, other) => {
            return Err(Error::Parse(format!(
                "{}: sidecar kind `{other}` does not match the requested signal kind",
                path.display()
            )))
        }
    }
    let mut columns = vec![Vec::with_capacity(rows); cols];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        columns[k % cols].push(v as f64);
    }
    Ok((meta.input_ids, meta.columns, columns))
}

/// Writes `signals` against `index`. The binary encoding stores `f32`, so
/// values round-trip bit-exactly only when they are representable in `f32`.
pub fn write_matrix(path: &Path, format: MatrixFormat, index: &ProbingIndex, signals: &Signals) -> Result<()> {
    let columns = signals.columns();
    for (name, values) in &columns {
        if values.len() != index.size() {
            return Err(Error::DimensionMismatch(format!(
                "column `{name}` has {} values, index has {}",
                values.len(),
                index.size()
            )));
        }
    }
    match format {
        MatrixFormat::Csv => write_csv(path, index, &columns),
        MatrixFormat::Bin => write_bin(path, index, signals, &columns),
    }
}

fn write_csv(path: &Path, index: &ProbingIndex, columns: &[(&str, &[f64])]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["input_id".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut row = Vec::with_capacity(columns.len() + 1);
    for i in 0..index.size() {
        row.clear();
        row.push(index.id(i).to_string());
        // `{}` on f64 prints the shortest string that parses back to the same bits.
        row.extend(columns.iter().map(|(_, v)| format!("{}", v[i])));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_bin(path: &Path, index: &ProbingIndex, signals: &Signals, columns: &[(&str, &[f64])]) -> Result<()> {
    let rows = index.size();
    let cols = columns.len();
    let mut buf = Vec::with_capacity(12 + rows * cols * 4);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for i in 0..rows {
        for (_, v) in columns {
            buf.extend_from_slice(&(v[i] as f32).to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let (kind, provenance) = match signals {
        Signals::Activations(_) => ("activation", None),
        Signals::Concepts(c) => ("concept", c.first().map(|c| c.provenance)),
    };
    let meta = Sidecar {
        input_ids: index.input_ids().to_vec(),
        columns: columns.iter().map(|(n, _)| n.to_string()).collect(),
        kind: kind.to_string(),
        provenance,
    };
    let meta_path = sidecar_path(path);
    let mut f = BufWriter::new(fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?);
    serde_json::to_writer(&mut f, &meta).map_err(|e| Error::Parse(e.to_string()))?;
    f.flush().map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// One invariant violation found by [`validate_workspace`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    DimensionMismatch { signal: String, expected: usize, actual: usize },
    NonFinite { signal: String, row: usize },
    RangeViolation { signal: String, row: usize, value: f64 },
    ProvenanceViolation { signal: String, row: usize, value: f64 },
    DuplicateSignal { signal: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.issues.into_iter().next() {
            None => Ok(()),
            Some(Issue::DimensionMismatch { signal, expected, actual }) => Err(Error::DimensionMismatch(
                format!("`{signal}` has length {actual}, expected {expected}"),
            )),
            Some(Issue::ProvenanceViolation { signal, row, value }) => Err(Error::ProvenanceViolation(
                format!("`{signal}` row {row} is {value}"),
            )),
            Some(Issue::NonFinite { signal, row }) => {
                Err(Error::Parse(format!("`{signal}` row {row} is not finite")))
            }
            Some(Issue::RangeViolation { signal, row, value }) => {
                Err(Error::Range(format!("`{signal}` row {row} is {value}")))
            }
            Some(Issue::DuplicateSignal { signal }) => Err(Error::Parse(format!("duplicate signal `{signal}`"))),
        }
    }
}

/// Checks every loaded vector against the index. Reports at most one issue of
/// each kind per vector.
pub fn validate_workspace(
    index: &ProbingIndex,
    activations: &[ActivationVector],
    concepts: &[ConceptVector],
) -> ValidationReport {
    let mut issues = Vec::new();
    let n = index.size();
    let mut seen = HashSet::new();
    for a in activations {
        if !seen.insert(("a", a.neuron_id.as_str())) {
            issues.push(Issue::DuplicateSignal { signal: a.neuron_id.clone() });
        }
        if a.len() != n {
            issues.push(Issue::DimensionMismatch {
                signal: a.neuron_id.clone(),
                expected: n,
                actual: a.len(),
            });
        }
        if let Some(row) = a.values.iter().position(|v| !v.is_finite()) {
            issues.push(Issue::NonFinite { signal: a.neuron_id.clone(), row });
        }
    }
    let mut seen_concepts = HashSet::new();
    for c in concepts {
        if !seen_concepts.insert((c.provenance, c.concept_id.as_str())) {
            issues.push(Issue::DuplicateSignal { signal: c.concept_id.clone() });
        }
        if c.len() != n {
            issues.push(Issue::DimensionMismatch {
                signal: c.concept_id.clone(),
                expected: n,
                actual: c.len(),
            });
        }
        if let Some((row, &value)) = c
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || !(0.0..=1.0).contains(*v))
        {
            issues.push(Issue::RangeViolation { signal: c.concept_id.clone(), row, value });
        } else if c.provenance == Provenance::GroundTruth {
            if let Some((row, &value)) = c.values.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
                issues.push(Issue::ProvenanceViolation { signal: c.concept_id.clone(), row, value });
            }
        }
    }
    ValidationReport { issues }
}

/// A validated set of vectors sharing one probing index.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub index: ProbingIndex,
    pub activations: Vec<ActivationVector>,
    pub concepts: Vec<ConceptVector>,
}

impl Workspace {
    pub fn new(
        index: ProbingIndex,
        activations: Vec<ActivationVector>,
        concepts: Vec<ConceptVector>,
    ) -> Result<Self> {
        validate_workspace(&index, &activations, &concepts).into_result()?;
        Ok(Self {
            index,
            activations,
            concepts,
        })
    }

    pub fn size(&self) -> usize {
        self.index.size()
    }

    pub fn activation(&self, neuron_id: &str) -> Result<&ActivationVector> {
        self.activations
            .iter()
            .find(|a| a.neuron_id == neuron_id)
            .ok_or_else(|| Error::UnknownNeuron(neuron_id.to_string()))
    }

    pub fn concept(&self, concept_id: &str, provenance: Provenance) -> Option<&ConceptVector> {
        self.concepts
            .iter()
            .find(|c| c.concept_id == concept_id && c.provenance == provenance)
    }

    pub fn concepts_with(&self, provenance: Provenance) -> impl Iterator<Item = &ConceptVector> {
        self.concepts.iter().filter(move |c| c.provenance == provenance)
    }
}

/// Requires that a second file describes the same inputs, in the same order.
pub fn ensure_same_index(expected: &ProbingIndex, other: &ProbingIndex, what: &str) -> Result<()> {
    if expected.input_ids() != other.input_ids() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: input ids differ from the activation file"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn parses_activation_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "a.csv", "input_id,n1,n2\nx0,1.5,-2\nx1,0,3\nx2,4.25,1e-3\n");
        let (index, acts) = load_activations(&p).unwrap();
        assert_eq!(index.size(), 3);
        assert_eq!(acts.len(), 2);
        assert_eq!(acts[0].neuron_id, "n1");
        assert_eq!(acts[0].values, vec![1.5, 0.0, 4.25]);
        assert_eq!(acts[1].values, vec![-2.0, 3.0, 0.001]);
        assert_eq!(index.position("x2"), Some(2));
    }

    #[test]
    fn concept_above_one_is_range_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "c.csv", "input_id,dog\nx0,0.5\nx1,1.2\n");
        let err = load_concepts(&p, Provenance::CheapEstimator).unwrap_err();
        assert!(matches!(err, Error::Range(_)), "{err:?}");
    }

    #[test]
    fn blank_cell_and_ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "a.csv", "input_id,n1,n2\nx0,1,\nx1,0,3\n");
        assert!(matches!(load_activations(&p).unwrap_err(), Error::Parse(_)));
        let p = write_file(dir.path(), "b.csv", "input_id,n1,n2\nx0,1\nx1,0,3\n");
        assert!(matches!(load_activations(&p).unwrap_err(), Error::DimensionMismatch(_)));
        let p = write_file(dir.path(), "c.csv", "id,n1\nx0,1\nx1,0\n");
        assert!(matches!(load_activations(&p).unwrap_err(), Error::Parse(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_activations(Path::new("/nonexistent/a.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn binary_matches_equivalent_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_file(
            dir.path(),
            "a.csv",
            "input_id,n1,n2\nx0,0.5,-1.25\nx1,2,3.75\nx2,-0.125,8\nx3,16,0.0625\n",
        );
        let (index, acts) = load_activations(&csv).unwrap();
        let bin = dir.path().join("a.bin");
        write_matrix(&bin, MatrixFormat::Bin, &index, &Signals::Activations(acts.clone())).unwrap();
        let raw = fs::read(&bin).unwrap();
        assert_eq!(&raw[..4], b"NGV1");
        assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 2);
        assert_eq!(raw.len(), 12 + 4 * 2 * 4);
        let (index2, acts2) = load_activations(&bin).unwrap();
        assert_eq!(index, index2);
        assert_eq!(acts, acts2);
    }

    #[test]
    fn binary_kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let index = ProbingIndex::new(vec!["a".into(), "b".into()]).unwrap();
        let c = ConceptVector::new("dog", vec![0.0, 1.0], Provenance::GroundTruth).unwrap();
        let bin = dir.path().join("c.bin");
        write_matrix(&bin, MatrixFormat::Bin, &index, &Signals::Concepts(vec![c])).unwrap();
        assert!(load_activations(&bin).is_err());
        assert!(matches!(
            load_concepts(&bin, Provenance::CheapEstimator).unwrap_err(),
            Error::ProvenanceViolation(_)
        ));
        assert!(load_concepts(&bin, Provenance::GroundTruth).is_ok());
    }

    #[test]
    fn index_rejects_duplicates_and_tiny_sets() {
        assert!(ProbingIndex::new(vec!["a".into()]).is_err());
        assert!(ProbingIndex::new(vec!["a".into(), "a".into()]).is_err());
        let mut idx = ProbingIndex::new(vec!["a".into(), "b".into()]).unwrap();
        idx.set_asset_uris([("b", "file:///b.png")]);
        assert_eq!(idx.asset_uri(1), Some("file:///b.png"));
        assert_eq!(idx.asset_uri(0), None);
    }

    #[test]
    fn validation_report_lists_each_violation() {
        let index = ProbingIndex::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let good = ActivationVector::new("n", vec![1.0, 2.0, 3.0]).unwrap();
        let gt = ConceptVector::new("dog", vec![0.0, 1.0, 0.0], Provenance::GroundTruth).unwrap();
        assert!(validate_workspace(&index, &[good.clone()], &[gt.clone()]).is_empty());

        let short = ActivationVector { neuron_id: "m".into(), values: vec![1.0, 2.0] };
        let report = validate_workspace(&index, &[good.clone(), short], &[gt.clone()]);
        assert_eq!(report.issues.len(), 1);
        assert!(matches!(report.issues[0], Issue::DimensionMismatch { actual: 2, .. }));

        let soft_gt = ConceptVector {
            concept_id: "cat".into(),
            values: vec![0.0, 0.5, 1.0],
            provenance: Provenance::GroundTruth,
        };
        let report = validate_workspace(&index, &[good], &[gt, soft_gt]);
        assert_eq!(report.issues.len(), 1);
        assert!(matches!(report.issues[0], Issue::ProvenanceViolation { row: 1, .. }));
    }

    #[test]
    fn normalization_conventions() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let pop = NormalizationStats::compute("v", &v, Convention::Population).unwrap();
        let bes = NormalizationStats::compute("v", &v, Convention::Bessel).unwrap();
        assert_eq!(pop.mean, 2.5);
        assert!((pop.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((bes.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(matches!(
            NormalizationStats::compute("k", &[2.0, 2.0], Convention::Population),
            Err(Error::DegenerateSignal(_))
        ));
    }
}
