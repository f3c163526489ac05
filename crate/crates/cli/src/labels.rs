use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use neurongauge_core::dataset::ProbingIndex;
use neurongauge_core::{Error, Result};

/// Reads a sparse label file `input_id,<col>...`. Empty cells are unlabeled.
/// Returns the column used and labels keyed by input position.
pub fn read_labels(path: &Path, index: &ProbingIndex, column: Option<&str>) -> Result<(String, HashMap<usize, f64>)> {
    let origin = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let parse_err = |e: csv::Error| Error::Parse(format!("{origin}: {e}"));
    let headers = rdr.headers().map_err(parse_err)?.clone();
    if headers.get(0) != Some("input_id") || headers.len() < 2 {
        return Err(Error::Parse(format!("{origin}: header must be `input_id,<concept>...`")));
    }
    let col = match column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownConcept(name.to_string()))?,
        None => 1,
    };
    let name = headers[col].to_string();
    let mut labels = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(parse_err)?;
        let id = &rec[0];
        let cell = rec.get(col).unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| Error::Parse(format!("{origin}:{}: `{cell}` is not a number", line + 2)))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Range(format!("{origin}:{}: label {v} outside [0, 1]", line + 2)));
        }
        let i = index
            .position(id)
            .ok_or_else(|| Error::InvalidArgument(format!("{origin}: unknown input `{id}`")))?;
        if labels.insert(i, v).is_some() {
            return Err(Error::Parse(format!("{origin}: input `{id}` labeled twice")));
        }
    }
    Ok((name, labels))
}

/// Writes labels in index order as `input_id,<concept>`.
pub fn write_labels<W: Write>(w: W, index: &ProbingIndex, concept: &str, labels: &HashMap<usize, f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(["input_id", concept]).map_err(err)?;
    let mut keys: Vec<usize> = labels.keys().copied().collect();
    keys.sort_unstable();
    for i in keys {
        out.write_record([index.id(i), &labels[&i].to_string()]).map_err(err)?;
    }
    out.flush().map_err(|e| Error::io("labels", e))
}
