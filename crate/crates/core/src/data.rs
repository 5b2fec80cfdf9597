//! Observational datasets and CSV I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Observations `y_i` at design conditions `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if ys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let m = xs[0].len();
        if let Some(bad) = xs.iter().find(|x| x.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: bad.len(),
            });
        }
        Ok(Dataset { xs, ys })
    }

    /// Dataset with scalar design conditions.
    pub fn from_scalar(xs: &[f64], ys: Vec<f64>) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect(), ys)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// Number of design-condition columns.
    pub fn n_conditions(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    /// CSV text with header `x1,...,xm,y`; values keep full precision.
    pub fn to_csv_string(&self) -> String {
        let m = self.n_conditions();
        let mut s = String::new();
        for j in 1..=m {
            s.push_str(&format!("x{j},"));
        }
        s.push_str("y\n");
        for (x, y) in self.xs.iter().zip(&self.ys) {
            for v in x {
                s.push_str(&format!("{v:?},"));
            }
            s.push_str(&format!("{y:?}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

/// Reads a dataset with header `x1..xm,y` (the last column is the response).
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv_dataset(&text, &path.display().to_string())
}

pub fn parse_csv_dataset(text: &str, origin: &str) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(parse_err(1, "need at least one x column and a y column".into()));
    }
    let last = headers.len() - 1;
    if !headers[last].eq_ignore_ascii_case("y") {
        return Err(parse_err(1, format!("last column must be `y`, found `{}`", &headers[last])));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("column `{}`: non-numeric value `{f}`", &headers[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        ys.push(vals[last]);
        xs.push(vals[..last].to_vec());
    }
    if ys.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(xs, ys)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_rows() {
        let d = parse_csv_dataset("x1,y\n0.5,1.0\n1.5,-2\n", "t").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.xs[1], vec![1.5]);
        assert_eq!(d.ys[1], -2.0);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(parse_csv_dataset("x1,y\n", "t"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse_csv_dataset("x1,x2,y\n1,2,3\n4,oops,6\n", "t").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("x2"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(parse_csv_dataset("x1,y\n1,2\n3\n", "t").is_err());
        assert!(parse_csv_dataset("x1,z\n1,2\n", "t").is_err());
    }

    #[test]
    fn round_trip_full_precision() {
        let d = Dataset::new(
            vec![vec![0.1, 1e-300], vec![std::f64::consts::PI, -0.0]],
            vec![1.0 / 3.0, 2.0f64.sqrt()],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        assert_eq!(load_csv_dataset(&p).unwrap(), d);
    }
}
