//! Line-delimited JSON serialization of datasets: one segment per line.
//! The field names are documented in docs/schemas.md.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Dataset, Segment, Split};

pub fn write_dataset_jsonl(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for segment in &dataset.segments {
        serde_json::to_writer(&mut w, segment)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_dataset_jsonl(
    path: impl AsRef<Path>,
    split: Split,
    provenance: impl Into<String>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut segments = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let segment: Segment = serde_json::from_str(&line)?;
        segments.push(segment);
    }
    Ok(Dataset::new(segments, split, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::experiment::{build_experiment, ExperimentCounts, ExperimentId, ExperimentSpec};

    #[test]
    fn jsonl_round_trip() {
        let mut spec = ExperimentSpec::default_for(ExperimentId::I, 5);
        spec.counts = ExperimentCounts {
            train: 20,
            val: 5,
            test: 5,
        };
        let data = build_experiment(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        write_dataset_jsonl(&p, &data.train).unwrap();
        let back = read_dataset_jsonl(&p, Split::Train, "test").unwrap();
        assert_eq!(back.segments.len(), data.train.segments.len());
        for (i, (a, b)) in back.segments.iter().zip(&data.train.segments).enumerate() {
            assert_eq!(a, b, "segment {i} differs");
        }
    }
}
