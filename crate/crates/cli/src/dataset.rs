//! CSV ingestion for labelled tabular data.
//!
//! The header is `f0,f1,...,f{d-1},y`; labels must be `-1` or `1`. Row order
//! defines player ids.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use shapsel::mlcore::TabularDataset;
use shapsel::Error;

use crate::error::{AtStage, CliError, CliResult, Stage};

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

/// Parses a dataset from any reader.
pub fn read_csv_dataset<R: Read>(reader: R) -> shapsel::Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_error(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.last() != Some(&"y") {
        return Err(parse_error(1, "last column must be named y"));
    }
    let dim = cols.len() - 1;
    for (j, name) in cols[..dim].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(parse_error(
                1,
                format!("column {} must be named f{j}, found {name:?}", j + 1),
            ));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        for (j, field) in record.iter().take(dim).enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_error(line, format!("f{j} value {field:?} is not a number")))?;
            if !x.is_finite() {
                return Err(parse_error(line, format!("f{j} value {field:?} is not finite")));
            }
            features.push(x);
        }
        let y = match record[dim].trim() {
            "1" | "+1" => 1,
            "-1" => -1,
            other => return Err(parse_error(line, format!("label {other:?} must be -1 or 1"))),
        };
        labels.push(y);
    }
    TabularDataset::new(dim, features, labels)
}

pub fn load_csv_dataset(path: &Path) -> CliResult<TabularDataset> {
    let file = File::open(path).map_err(|e| CliError::io(Stage::Ingest, path, e))?;
    read_csv_dataset(file).at(Stage::Ingest)
}

/// Writes features with 17 significant digits, which round-trips every `f64`.
pub fn write_csv_dataset<W: Write>(d: &TabularDataset, writer: W) -> shapsel::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..d.dim()).map(|j| format!("f{j}")).collect();
    header.push("y".into());
    wtr.write_record(&header).map_err(csv_io)?;
    for r in 0..d.len() {
        let mut row: Vec<String> = d.row(r).iter().map(|x| format!("{x:.16e}")).collect();
        row.push(d.label(r).to_string());
        wtr.write_record(&row).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let text = "f0,f1,y\n0.5,1,1\n-2,3e-1,-1\n0,0,+1\n";
        let d = read_csv_dataset(text.as_bytes()).unwrap();
        assert_eq!((d.len(), d.dim()), (3, 2));
        assert_eq!(d.labels(), &[1, -1, 1]);
        assert_eq!(d.row(1), &[-2.0, 0.3]);
    }

    #[test]
    fn reports_bad_label_line() {
        let text = "f0,y\n1.0,1\n2.0,0\n";
        match read_csv_dataset(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(
            read_csv_dataset("x0,y\n1,1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_csv_dataset("f0,label\n1,1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn ragged_row() {
        assert!(matches!(
            read_csv_dataset("f0,f1,y\n1,2,1\n1,1\n".as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
