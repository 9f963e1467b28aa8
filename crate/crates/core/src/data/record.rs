use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{EgmnError, Result};

/// One logged user-video interaction before encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub user_id: String,
    pub video_id: String,
    /// Video length in seconds.
    pub duration: f64,
    /// Context categoricals keyed by column name (hour, weekday, device...).
    pub context: BTreeMap<String, String>,
    /// Additional dense features keyed by column name.
    pub dense: BTreeMap<String, f64>,
    pub timestamp: Option<i64>,
    /// Observed watch time in seconds (the label).
    pub watch_time: f64,
}

/// Maps the columns of an interaction log onto [`FeatureRecord`] fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub user: String,
    pub video: String,
    pub duration: String,
    pub watch_time: String,
    pub timestamp: Option<String>,
    pub context: Vec<String>,
    pub dense: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            user: "user_id".into(),
            video: "video_id".into(),
            duration: "duration".into(),
            watch_time: "watch_time".into(),
            timestamp: None,
            context: vec![],
            dense: vec![],
        }
    }
}

impl ColumnMapping {
    /// Column names in file order used by [`write_csv`].
    pub fn header(&self) -> Vec<String> {
        let mut h = vec![self.user.clone(), self.video.clone(), self.duration.clone()];
        h.extend(self.timestamp.clone());
        h.extend(self.context.iter().cloned());
        h.extend(self.dense.iter().cloned());
        h.push(self.watch_time.clone());
        h
    }
}

/// A row that failed to parse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct LoadedCsv {
    pub records: Vec<FeatureRecord>,
    pub rejected: Vec<RowError>,
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>> {
    let f = BufReader::new(File::open(path)?);
    Ok(if is_gz(path) {
        Box::new(GzDecoder::new(f))
    } else {
        Box::new(f)
    })
}

/// Reads an interaction log. `.gz` files are decompressed transparently.
/// Malformed rows are collected in `rejected`; more than `max_row_errors`
/// of them is a data error.
pub fn load_csv(path: &Path, mapping: &ColumnMapping, max_row_errors: usize) -> Result<LoadedCsv> {
    read_csv(open_reader(path)?, mapping, max_row_errors)
}

pub fn read_csv<R: Read>(input: R, mapping: &ColumnMapping, max_row_errors: usize) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EgmnError::Schema(format!("missing required column {name:?}")))
    };
    let user = col(&mapping.user)?;
    let video = col(&mapping.video)?;
    let duration = col(&mapping.duration)?;
    let watch = col(&mapping.watch_time)?;
    let timestamp = mapping.timestamp.as_deref().map(col).transpose()?;
    let context = mapping
        .context
        .iter()
        .map(|c| Ok((c.clone(), col(c)?)))
        .collect::<Result<Vec<_>>>()?;
    let dense = mapping
        .dense
        .iter()
        .map(|c| Ok((c.clone(), col(c)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed = (|| -> std::result::Result<FeatureRecord, String> {
            let field = |i: usize| row.get(i).ok_or_else(|| format!("missing field {i}"));
            let num = |i: usize, name: &str| -> std::result::Result<f64, String> {
                let raw = field(i)?;
                let v: f64 = raw.parse().map_err(|_| format!("{name}: cannot parse {raw:?}"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("{name}: non-finite value {raw:?}"))
                }
            };
            let d = num(duration, &mapping.duration)?;
            if d <= 0.0 {
                return Err(format!("{}: duration must be > 0, got {d}", mapping.duration));
            }
            let ts = match timestamp {
                Some(i) => {
                    let raw = field(i)?;
                    Some(raw.parse::<i64>().map_err(|_| format!("timestamp: cannot parse {raw:?}"))?)
                }
                None => None,
            };
            Ok(FeatureRecord {
                user_id: field(user)?.to_string(),
                video_id: field(video)?.to_string(),
                duration: d,
                context: context
                    .iter()
                    .map(|(n, i)| Ok((n.clone(), field(*i)?.to_string())))
                    .collect::<std::result::Result<_, String>>()?,
                dense: dense
                    .iter()
                    .map(|(n, i)| Ok((n.clone(), num(*i, n)?)))
                    .collect::<std::result::Result<_, String>>()?,
                timestamp: ts,
                watch_time: num(watch, &mapping.watch_time)?,
            })
        })();
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => {
                rejected.push(RowError { line, message });
                if rejected.len() > max_row_errors {
                    let first = &rejected[0];
                    return Err(EgmnError::Data(format!(
                        "more than {max_row_errors} malformed rows (first at line {}: {})",
                        first.line, first.message
                    )));
                }
            }
        }
    }
    Ok(LoadedCsv { records, rejected })
}

/// Writes records with the mapping's header; `.gz` paths are compressed.
pub fn write_csv(path: &Path, records: &[FeatureRecord], mapping: &ColumnMapping) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if is_gz(path) {
        let mut gz = GzEncoder::new(f, Compression::default());
        write_records(&mut gz, records, mapping)?;
        gz.finish()?.flush()?;
    } else {
        let mut f = f;
        write_records(&mut f, records, mapping)?;
        f.flush()?;
    }
    Ok(())
}

pub fn write_records<W: Write>(out: W, records: &[FeatureRecord], mapping: &ColumnMapping) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(mapping.header())?;
    for r in records {
        let mut row = vec![r.user_id.clone(), r.video_id.clone(), r.duration.to_string()];
        if mapping.timestamp.is_some() {
            let ts = r
                .timestamp
                .ok_or_else(|| EgmnError::Data("record without timestamp for a timestamped mapping".into()))?;
            row.push(ts.to_string());
        }
        for c in &mapping.context {
            row.push(r.context.get(c).cloned().unwrap_or_default());
        }
        for c in &mapping.dense {
            let v = r
                .dense
                .get(c)
                .ok_or_else(|| EgmnError::Data(format!("record lacks dense feature {c:?}")))?;
            row.push(v.to_string());
        }
        row.push(r.watch_time.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV3: &str = "user_id,video_id,duration,watch_time\nu1,v1,30,12.5\nu2,v1,30,0.4\nu1,v2,15.5,15.5\n";

    #[test]
    fn loads_well_formed_rows() {
        let l = read_csv(CSV3.as_bytes(), &ColumnMapping::default(), 0).unwrap();
        assert_eq!(l.records.len(), 3);
        assert!(l.rejected.is_empty());
        assert_eq!(l.records[2].user_id, "u1");
        assert_eq!(l.records[2].duration, 15.5);
        assert_eq!(l.records[1].watch_time, 0.4);
    }

    #[test]
    fn bad_rows_are_rejected_with_line_numbers() {
        let data = "user_id,video_id,duration,watch_time\nu1,v1,30,abc\nu2,v1,30,4\nu3,v1,-1,4\n";
        let l = read_csv(data.as_bytes(), &ColumnMapping::default(), 10).unwrap();
        assert_eq!(l.records.len(), 1);
        assert_eq!(l.rejected.len(), 2);
        assert_eq!(l.rejected[0].line, 2);
        assert!(l.rejected[0].message.contains("abc"));
        assert_eq!(l.rejected[1].line, 4);
        assert!(matches!(
            read_csv(data.as_bytes(), &ColumnMapping::default(), 1),
            Err(EgmnError::Data(_))
        ));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let data = "user_id,video_id,watch_time\nu1,v1,3\n";
        assert!(matches!(
            read_csv(data.as_bytes(), &ColumnMapping::default(), 0),
            Err(EgmnError::Schema(_))
        ));
    }

    #[test]
    fn write_then_load_round_trips_including_gzip() {
        let mapping = ColumnMapping {
            timestamp: Some("ts".into()),
            context: vec!["hour".into()],
            dense: vec!["likes".into()],
            ..ColumnMapping::default()
        };
        let records: Vec<FeatureRecord> = (0..20)
            .map(|i| FeatureRecord {
                user_id: format!("u{}", i % 3),
                video_id: format!("v{}", i % 7),
                duration: 10.0 + i as f64 / 3.0,
                context: [("hour".to_string(), format!("h{}", i % 24))].into(),
                dense: [("likes".to_string(), (i as f64).sqrt())].into(),
                timestamp: Some(1000 + i),
                watch_time: 0.1 * i as f64 + 1.0 / 7.0,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        for name in ["r.csv", "r.csv.gz"] {
            let p = dir.path().join(name);
            write_csv(&p, &records, &mapping).unwrap();
            let back = load_csv(&p, &mapping, 0).unwrap();
            assert_eq!(back.records, records);
        }
    }
}
