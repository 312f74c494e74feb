use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const CSV_HEADER: [&str; 9] = ["problem", "dim", "method", "time_s", "rel_l2", "l_inf", "l1", "seed", "config"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Surrogate alone.
    SR,
    /// MLP on the original problem.
    MLP,
    /// Surrogate plus MLP correction.
    SCaSML,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::SR => "SR",
            Method::MLP => "MLP",
            Method::SCaSML => "SCaSML",
        })
    }
}

/// One line of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub problem: String,
    pub dim: usize,
    pub method: Method,
    pub time_s: f64,
    pub rel_l2: f64,
    pub l_inf: f64,
    pub l1: f64,
    pub seed: u64,
    /// Compact JSON describing the full run configuration.
    pub config: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json-lines" => Ok(ReportFormat::Jsonl),
            other => Err(invalid(format!("unknown report format `{other}` (expected csv or jsonl)"))),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<report>".into(),
            source,
        },
        other => Error::Malformed(format!("{other:?}")),
    }
}

/// Serializes `rows` to any writer.
pub fn write_report<W: Write>(rows: &[MetricsRow], writer: W, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
            w.write_record(CSV_HEADER).map_err(csv_error)?;
            for row in rows {
                w.serialize(row).map_err(csv_error)?;
            }
            w.flush().map_err(|source| Error::Io {
                path: "<report>".into(),
                source,
            })
        }
        ReportFormat::Jsonl => {
            let mut w = writer;
            for row in rows {
                let line = serde_json::to_string(row).map_err(|e| Error::Malformed(e.to_string()))?;
                writeln!(w, "{line}").map_err(|source| Error::Io {
                    path: "<report>".into(),
                    source,
                })?;
            }
            w.flush().map_err(|source| Error::Io {
                path: "<report>".into(),
                source,
            })
        }
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// Writes `rows` to `path`, replacing any existing file.
pub fn emit_report(rows: &[MetricsRow], path: &Path, format: ReportFormat) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_report(rows, BufWriter::new(file), format).map_err(|e| with_path(e, path))
}

/// Parses a report written by [`emit_report`].
pub fn read_report(path: &Path, format: ReportFormat) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_reader(file);
            let header = r.headers().map_err(|e| with_path(csv_error(e), path))?.clone();
            if header.iter().ne(CSV_HEADER) {
                return Err(Error::Malformed(format!("{}: unexpected header", path.display())));
            }
            r.deserialize()
                .map(|row| row.map_err(|e| with_path(csv_error(e), path)))
                .collect()
        }
        ReportFormat::Jsonl => BufReader::new(file)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
            .map(|line| {
                let line = line.map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<MetricsRow> {
        vec![
            MetricsRow {
                problem: "lcd".into(),
                dim: 10,
                method: Method::MLP,
                time_s: 0.125,
                rel_l2: 0.1 + 0.2,
                l_inf: 1.0 / 3.0,
                l1: 2.220446049250313e-16,
                seed: u64::MAX,
                config: r#"{"a":"x,y","b":"quote \" here"}"#.into(),
            },
            MetricsRow {
                problem: "vb".into(),
                dim: 20,
                method: Method::SCaSML,
                time_s: 0.0,
                rel_l2: 1e-300,
                l_inf: 7.0,
                l1: 0.1,
                seed: 3,
                config: "{}".into(),
            },
        ]
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for format in [ReportFormat::Csv, ReportFormat::Jsonl] {
            let path = dir.path().join("r");
            emit_report(&rows(), &path, format).unwrap();
            assert_eq!(read_report(&path, format).unwrap(), rows());
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_report(&[], &mut buf, ReportFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "problem,dim,method,time_s,rel_l2,l_inf,l1,seed,config\n");
    }

    #[test]
    fn jsonl_has_one_object_per_row() {
        let mut buf = Vec::new();
        write_report(&rows(), &mut buf, ReportFormat::Jsonl).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort();
        let mut expected = CSV_HEADER.to_vec();
        expected.sort();
        assert_eq!(keys, expected);
        assert_eq!(v["method"], "SCaSML");
    }

    #[test]
    fn io_errors_carry_the_path() {
        let err = emit_report(&rows(), Path::new("/nonexistent/dir/report.csv"), ReportFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/report.csv"));
    }
}
