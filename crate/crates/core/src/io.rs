//! CSV and JSON persistence.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{LabelVector, ScoreMatrix};
use crate::scalar::Real;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    let (line, column) = match e.position() {
        Some(p) => (p.line() as usize, 0),
        None => (0, 0),
    };
    match e.kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            column: *len as usize + 1,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        _ => Error::Parse { line, column, message: e.to_string() },
    }
}

/// Reads a score CSV: a header of predictor names, then one row of M numbers per sample.
pub fn read_scores<T: Real, R: Read>(reader: R) -> Result<ScoreMatrix<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let m = names.len();
    let mut data: Vec<f64> = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(n + 2, |p| p.line() as usize);
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                column: c + 1,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, column: c + 1, message: format!("'{field}' is not finite") });
            }
            data.push(v);
        }
        n += 1;
    }
    let values = DMatrix::from_row_iterator(n, m, data.into_iter().map(T::lit));
    ScoreMatrix::new(values, names)
}

pub fn read_scores_file<T: Real>(path: &Path) -> Result<ScoreMatrix<T>> {
    let f = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_scores(f)
}

pub fn write_scores<T: Real, W: Write>(scores: &ScoreMatrix<T>, mut w: W) -> Result<()> {
    writeln!(w, "{}", scores.names().join(","))?;
    let v = scores.values();
    for r in 0..v.nrows() {
        let row: Vec<String> = (0..v.ncols()).map(|c| fmt_f64(v[(r, c)].as_f64())).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a single-column CSV with header `label`.
pub fn read_labels<R: Read>(reader: R) -> Result<LabelVector> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != ["label"] {
        return Err(Error::Parse { line: 1, column: 1, message: "expected a single 'label' header".into() });
    }
    let mut labels = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(idx + 2, |p| p.line() as usize);
        let l = match rec.get(0) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    message: format!("label {:?} is not 0 or 1", other.unwrap_or("")),
                })
            }
        };
        labels.push(l);
    }
    LabelVector::new(labels)
}

pub fn read_labels_file(path: &Path) -> Result<LabelVector> {
    let f = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_labels(f)
}

pub fn write_labels<W: Write>(labels: &LabelVector, mut w: W) -> Result<()> {
    writeln!(w, "label")?;
    for l in labels.labels() {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

/// Serializes to pretty JSON with a trailing newline.
pub fn to_json<S: serde::Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<D: serde::de::DeserializeOwned>(text: &str) -> Result<D> {
    serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), column: e.column(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_round_trip() {
        let v = DMatrix::from_fn(4, 2, |r, c| (r as f64 + 0.1) * (c as f64 + 1.0) / 3.0);
        let s = ScoreMatrix::new(v, vec!["a".into(), "b".into()]).unwrap();
        let mut buf = Vec::new();
        write_scores(&s, &mut buf).unwrap();
        let back: ScoreMatrix<f64> = read_scores(buf.as_slice()).unwrap();
        assert_eq!(back.values(), s.values());
        assert_eq!(back.names(), s.names());
    }

    #[test]
    fn parse_error_location() {
        let text = "a,b\n1,2\n3,x\n4,5\n6,7\n";
        match read_scores::<f64, _>(text.as_bytes()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        let ragged = "a,b\n1,2\n3\n";
        assert!(matches!(read_scores::<f64, _>(ragged.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn labels_round_trip_and_reject() {
        let l = LabelVector::new(vec![0, 1, 1, 0]).unwrap();
        let mut buf = Vec::new();
        write_labels(&l, &mut buf).unwrap();
        assert_eq!(read_labels(buf.as_slice()).unwrap(), l);
        assert!(matches!(read_labels("label\n0\n2\n".as_bytes()), Err(Error::Parse { line: 3, column: 1, .. })));
        assert!(read_labels("y\n0\n".as_bytes()).is_err());
    }

    #[test]
    fn seventeen_digits() {
        let s = fmt_f64(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }
}
