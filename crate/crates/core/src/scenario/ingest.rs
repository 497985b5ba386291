//! Ingestion of externally recorded tracks from the comma-separated format
//! with columns track_id, frame_id, timestamp_ms, agent_type, x, y, vx, vy,
//! psi_rad, length, width. Only track identity, timestamps, and positions
//! are consumed here.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Point, Trajectory, DT};

const REQUIRED_COLUMNS: [&str; 11] = [
    "track_id",
    "frame_id",
    "timestamp_ms",
    "agent_type",
    "x",
    "y",
    "vx",
    "vy",
    "psi_rad",
    "length",
    "width",
];

/// Milliseconds per frame in the ingested format.
const FRAME_MS: i64 = 100;

/// Parse per-track position sequences sorted by timestamp. Tracks with a
/// gap of more than one frame are split into separate trajectories.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            why: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    for required in REQUIRED_COLUMNS {
        col(required)?;
    }
    let c_track = col("track_id")?;
    let c_ts = col("timestamp_ms")?;
    let c_x = col("x")?;
    let c_y = col("y")?;

    let mut rows: BTreeMap<String, Vec<(i64, f64, f64)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| Error::MalformedRow {
            line,
            why: e.to_string(),
        })?;
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::MalformedRow {
                line,
                why: format!("missing field {idx}"),
            })
        };
        let ts: i64 = field(c_ts)?.trim().parse().map_err(|e| Error::MalformedRow {
            line,
            why: format!("timestamp_ms: {e}"),
        })?;
        let x: f64 = field(c_x)?.trim().parse().map_err(|e| Error::MalformedRow {
            line,
            why: format!("x: {e}"),
        })?;
        let y: f64 = field(c_y)?.trim().parse().map_err(|e| Error::MalformedRow {
            line,
            why: format!("y: {e}"),
        })?;
        rows.entry(field(c_track)?.trim().to_string())
            .or_default()
            .push((ts, x, y));
    }

    let mut out = Vec::new();
    for (_track, mut samples) in rows {
        samples.sort_by_key(|&(ts, _, _)| ts);
        let mut current: Vec<Point> = Vec::new();
        let mut prev_ts: Option<i64> = None;
        for (ts, x, y) in samples {
            if let Some(prev) = prev_ts {
                if ts - prev > FRAME_MS {
                    if !current.is_empty() {
                        out.push(Trajectory::new(std::mem::take(&mut current), DT));
                    }
                }
            }
            current.push(Point::new(x, y));
            prev_ts = Some(ts);
        }
        if !current.is_empty() {
            out.push(Trajectory::new(current, DT));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width";

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{content}").unwrap();
        f
    }

    #[test]
    fn two_rows_one_track() {
        let f = write_csv(&format!(
            "{HEADER}\n1,1,100,car,0.0,0.0,1,0,0,4,2\n1,2,200,car,1.0,0.0,1,0,0,4,2"
        ));
        let tracks = ingest_csv(f.path()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[0].dt, DT);
    }

    #[test]
    fn out_of_order_rows_sorted() {
        let f = write_csv(&format!(
            "{HEADER}\n1,2,200,car,1.0,0.0,1,0,0,4,2\n1,1,100,car,0.0,0.0,1,0,0,4,2"
        ));
        let tracks = ingest_csv(f.path()).unwrap();
        assert_eq!(tracks[0].points[0].x, 0.0);
        assert_eq!(tracks[0].points[1].x, 1.0);
    }

    #[test]
    fn gap_splits_track() {
        let f = write_csv(&format!(
            "{HEADER}\n1,1,100,car,0.0,0.0,1,0,0,4,2\n1,2,200,car,1.0,0.0,1,0,0,4,2\n1,4,400,car,3.0,0.0,1,0,0,4,2"
        ));
        let tracks = ingest_csv(f.path()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].len(), 2);
        assert_eq!(tracks[1].len(), 1);
    }

    #[test]
    fn missing_column_named() {
        let f = write_csv("track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length\n");
        match ingest_csv(f.path()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "width"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write_csv(&format!(
            "{HEADER}\n1,1,100,car,0.0,0.0,1,0,0,4,2\n1,2,not_a_number,car,1.0,0.0,1,0,0,4,2"
        ));
        match ingest_csv(f.path()) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed row, got {other:?}"),
        }
    }
}
