use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Opens `path` for reading; `-` is stdin.
pub fn open_input(path: &Path) -> CliResult<Box<dyn Read>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(io::stdin().lock()))
    } else {
        let f = File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

/// Opens `path` for writing; `-` is stdout.
pub fn open_output(path: &Path) -> CliResult<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        let f = File::create(path).map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

/// Rows of a numeric CSV file: one row per time step, one column per stream.
///
/// A first row that does not parse as numbers is taken as a header. Empty,
/// non-numeric or non-finite cells after that are errors.
pub struct CsvRows<R: Read> {
    reader: csv::Reader<R>,
    record: csv::StringRecord,
    line: u64,
    width: Option<usize>,
    first: bool,
}

impl<R: Read> CsvRows<R> {
    pub fn new(input: R) -> Self {
        Self {
            reader: csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .comment(Some(b'#'))
                .from_reader(input),
            record: csv::StringRecord::new(),
            line: 0,
            width: None,
            first: true,
        }
    }

    /// Next data row, or `None` at the end of input.
    pub fn next_row(&mut self) -> CliResult<Option<Vec<f64>>> {
        loop {
            if !self.reader.read_record(&mut self.record)? {
                return Ok(None);
            }
            self.line = self.record.position().map_or(self.line + 1, |p| p.line());
            let parsed: Vec<Option<f64>> = self
                .record
                .iter()
                .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            let first = std::mem::replace(&mut self.first, false);
            if first && !self.record.iter().any(|s| s.parse::<f64>().is_ok()) {
                self.width = Some(self.record.len());
                continue;
            }
            if let Some(w) = self.width {
                if w != parsed.len() {
                    return Err(CliError::input(format!(
                        "line {}: expected {w} columns, found {}",
                        self.line,
                        parsed.len()
                    )));
                }
            }
            self.width = Some(parsed.len());
            if let Some(c) = parsed.iter().position(Option::is_none) {
                return Err(CliError::input(format!(
                    "line {}, column {}: missing or non-numeric value {:?}",
                    self.line,
                    c + 1,
                    &self.record[c]
                )));
            }
            return Ok(Some(parsed.into_iter().flatten().collect()));
        }
    }
}

/// Whole CSV file as an `m × D` matrix.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let mut rows = CsvRows::new(open_input(path)?);
    let mut data = Vec::new();
    let mut ncols = 0;
    let mut nrows = 0;
    while let Some(r) = rows.next_row()? {
        ncols = r.len();
        data.extend(r);
        nrows += 1;
    }
    if nrows == 0 {
        return Err(CliError::input(format!("{} has no data rows", path.display())));
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let mut text = String::new();
    open_input(path)?.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn check_schema(found: &str, expected: &str, what: &str) -> CliResult<()> {
    if found == expected {
        Ok(())
    } else {
        Err(CliError::input(format!("{what}: schema \"{found}\" is not \"{expected}\"")))
    }
}
