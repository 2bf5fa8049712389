//! CSV ingestion.
//!
//! The header names a `d` column (capture count), `x:<name>` columns (always
//! observed), `y:<name>` columns (an empty cell marks a missing value) and an
//! optional `r` column (`1`/`0`, `true`/`false`) that is checked against the
//! `y` cells. Other columns are ignored.

use std::io::{Read, Write};
use std::path::Path;

use elcapture::{CaptureDataset, Observation};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}, column `{column}`: {message}")]
    Cell { line: u64, column: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    D,
    X,
    Y,
    R,
    Ignored,
}

fn role(name: &str) -> Role {
    match name.trim() {
        "d" => Role::D,
        "r" => Role::R,
        n if n.starts_with("x:") => Role::X,
        n if n.starts_with("y:") => Role::Y,
        _ => Role::Ignored,
    }
}

pub fn read_dataset_path(path: &Path) -> Result<CaptureDataset, InputError> {
    let file = std::fs::File::open(path).map_err(|source| InputError::Io { path: path.display().to_string(), source })?;
    read_dataset(file)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<CaptureDataset, InputError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let roles: Vec<Role> = headers.iter().map(role).collect();
    let count = |r: Role| roles.iter().filter(|&&x| x == r).count();
    if count(Role::D) != 1 {
        return Err(InputError::Header("exactly one `d` column is required".into()));
    }
    if count(Role::R) > 1 {
        return Err(InputError::Header("at most one `r` column is allowed".into()));
    }
    if count(Role::Y) == 0 {
        return Err(InputError::Header("at least one `y:<name>` column is required".into()));
    }
    let names = |r: Role| -> Vec<String> {
        headers.iter().zip(&roles).filter(|(_, &x)| x == r).map(|(h, _)| h.trim()[2..].to_string()).collect()
    };
    let (x_names, y_names) = (names(Role::X), names(Role::Y));

    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell_err = |col: usize, message: String| InputError::Cell { line, column: headers[col].trim().to_string(), message };
        let mut d = None;
        let mut x = Vec::with_capacity(x_names.len());
        let mut y = Vec::with_capacity(y_names.len());
        let mut r = None;
        for (col, (value, role)) in record.iter().zip(&roles).enumerate() {
            match role {
                Role::D => {
                    d = Some(value.parse::<u32>().map_err(|_| cell_err(col, format!("expected a non-negative integer, found {value:?}")))?)
                }
                Role::X => {
                    if value.is_empty() {
                        return Err(cell_err(col, "x covariates must be observed".into()));
                    }
                    x.push(value.parse::<f64>().map_err(|_| cell_err(col, format!("expected a number, found {value:?}")))?);
                }
                Role::Y => y.push(if value.is_empty() {
                    None
                } else {
                    Some(value.parse::<f64>().map_err(|_| cell_err(col, format!("expected a number or empty cell, found {value:?}")))?)
                }),
                Role::R => {
                    r = Some(match value.to_ascii_lowercase().as_str() {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        _ => return Err(cell_err(col, format!("expected 0/1, found {value:?}"))),
                    })
                }
                Role::Ignored => {}
            }
        }
        let d = d.ok_or_else(|| InputError::Cell { line, column: "d".into(), message: "missing value".into() })?;
        // Without an `r` column, a row counts as observed only when every y cell is filled.
        let r = r.unwrap_or_else(|| y.iter().all(Option::is_some));
        observations.push(Observation { d, x, y, r });
    }
    Ok(CaptureDataset::new(observations, x_names, y_names))
}

/// Writes `ds` in the layout accepted by [`read_dataset`], with an `r` column.
pub fn write_dataset<W: Write>(ds: &CaptureDataset, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["d".to_string()];
    header.extend(ds.x_names.iter().map(|n| format!("x:{n}")));
    header.extend(ds.y_names.iter().map(|n| format!("y:{n}")));
    header.push("r".into());
    out.write_record(&header)?;
    for o in ds.observations() {
        let mut row = vec![o.d.to_string()];
        row.extend(o.x.iter().map(f64::to_string));
        row.extend(o.y.iter().map(|v| v.map_or_else(String::new, |v| v.to_string())));
        row.push(u8::from(o.r).to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_missing_cells_and_infers_r() {
        let ds = read_dataset("d,x:a,y:b\n2,1.5,0.3\n1,0.5,\n".as_bytes()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.x_names, vec!["a"]);
        let obs = ds.observations();
        assert!(obs[0].r && !obs[1].r);
        assert_eq!(obs[1].y, vec![None]);
    }

    #[test]
    fn bad_count_names_line_and_column() {
        let err = read_dataset("d,y:b\n2,0.3\nabc,1\n".as_bytes()).unwrap_err();
        match err {
            InputError::Cell { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "d");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn explicit_r_is_kept_for_validation() {
        let ds = read_dataset("d,y:b,r\n2,0.3,0\n".as_bytes()).unwrap();
        assert!(!ds.observations()[0].r);
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = elcapture::generate(&elcapture::SimulationScenario::new(elcapture::ScenarioId::A), 3);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.observations(), ds.observations());
        assert_eq!(back.y_names, ds.y_names);
    }

    #[test]
    fn header_requires_d_and_y() {
        assert!(matches!(read_dataset("x:a,y:b\n1,2\n".as_bytes()), Err(InputError::Header(_))));
        assert!(matches!(read_dataset("d,x:a\n1,2\n".as_bytes()), Err(InputError::Header(_))));
    }
}
