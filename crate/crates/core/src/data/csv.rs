use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{DataError, Result, SeriesDataset, STEP_SECONDS};

pub const CSV_HEADER: &str = "timestamp,precipitation_mm,temperature_c,flow";

const TIMESTAMP_OUT: &str = "%Y-%m-%dT%H:%M:%S";

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_csv(BufReader::new(file))
}

/// Parses `timestamp,precipitation_mm,temperature_c,flow` rows. Line numbers in
/// errors count the header as line 1.
pub fn parse_csv(reader: impl BufRead) -> Result<SeriesDataset> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| DataError::Io(e.to_string()))?,
        None => return Err(DataError::Parse { line: 1, message: "missing header row".into() }),
    };
    let header = header.trim_start_matches('\u{feff}').trim_end_matches('\r');
    if header != CSV_HEADER {
        return Err(DataError::Parse {
            line: 1,
            message: format!("expected header `{CSV_HEADER}`, found `{header}`"),
        });
    }

    let mut ds = SeriesDataset {
        timestamps: Vec::new(),
        precipitation_mm: Vec::new(),
        temperature_c: Vec::new(),
        flow: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| DataError::Io(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let ts = parse_timestamp(fields[0]).ok_or_else(|| err(format!("bad timestamp `{}`", fields[0])))?;
        let num = |k: usize, name: &str| -> Result<f64> {
            let v: f64 = fields[k]
                .parse()
                .map_err(|_| err(format!("bad {name} value `{}`", fields[k])))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite {name} value")));
            }
            Ok(v)
        };
        let (p, t, q) = (num(1, "precipitation_mm")?, num(2, "temperature_c")?, num(3, "flow")?);
        if p < 0.0 {
            return Err(err(format!("negative precipitation_mm {p}")));
        }
        if q < 0.0 {
            return Err(err(format!("negative flow {q}")));
        }
        if let Some(prev) = ds.timestamps.last() {
            let gap = (ts - *prev).num_seconds();
            if gap != STEP_SECONDS {
                return Err(DataError::Format(format!(
                    "line {line_no}: expected a {STEP_SECONDS} s step after {prev}, found {gap} s"
                )));
            }
        }
        ds.timestamps.push(ts);
        ds.precipitation_mm.push(p);
        ds.temperature_c.push(t);
        ds.flow.push(q);
    }
    Ok(ds)
}

/// Writes the dataset with shortest round-trip float formatting, so the
/// output is a pure function of the values.
pub fn write_csv(ds: &SeriesDataset, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for i in 0..ds.len() {
        writeln!(
            out,
            "{},{},{},{}",
            ds.timestamps[i].format(TIMESTAMP_OUT),
            ds.precipitation_mm[i],
            ds.temperature_c[i],
            ds.flow[i]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SeriesDataset> {
        parse_csv(s.as_bytes())
    }

    #[test]
    fn three_rows() {
        let ds = parse(
            "timestamp,precipitation_mm,temperature_c,flow\n\
             2017-06-01T00:00:00,0,14.2,21.5\n\
             2017-06-01T00:05:00,0.4,14.1,22\n\
             2017-06-01T00:10:00,1.2,14.0,25.25\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.precipitation_mm, vec![0.0, 0.4, 1.2]);
        ds.validate().unwrap();
    }

    #[test]
    fn crlf_and_zulu_accepted() {
        let ds = parse(
            "timestamp,precipitation_mm,temperature_c,flow\r\n\
             2017-06-01T00:00:00Z,0,1,2\r\n\
             2017-06-01T00:05:00Z,0,1,2\r\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn negative_precipitation_names_row() {
        let err = parse(
            "timestamp,precipitation_mm,temperature_c,flow\n\
             2017-06-01T00:00:00,0,14,20\n\
             2017-06-01T00:05:00,-0.1,14,20\n",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn missing_step_is_format_error() {
        let err = parse(
            "timestamp,precipitation_mm,temperature_c,flow\n\
             2017-06-01T00:00:00,0,14,20\n\
             2017-06-01T00:10:00,0,14,20\n",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::Format(_)), "{err:?}");
    }

    #[test]
    fn malformed_rows() {
        let bad_num = parse("timestamp,precipitation_mm,temperature_c,flow\n2017-06-01T00:00:00,x,1,2\n");
        assert!(matches!(bad_num, Err(DataError::Parse { line: 2, .. })));
        let short = parse("timestamp,precipitation_mm,temperature_c,flow\n2017-06-01T00:00:00,1,2\n");
        assert!(matches!(short, Err(DataError::Parse { line: 2, .. })));
        let header = parse("time,p,t,q\n");
        assert!(matches!(header, Err(DataError::Parse { line: 1, .. })));
    }

    #[test]
    fn write_then_parse_is_exact() {
        let ds = parse(
            "timestamp,precipitation_mm,temperature_c,flow\n\
             2017-06-01T00:00:00,0.1,-3.3333333333333335,21.000000000000004\n\
             2017-06-01T00:05:00,0,1e-7,0\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice()).unwrap(), ds);
    }
}
