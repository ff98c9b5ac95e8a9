//! Delimited-text datasets: one example per row, optional label first.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ssldro_core::data::{LabeledExample, UnlabeledExample};

use crate::error::{CliError, CliResult};

/// How to read a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub has_label: bool,
    pub delimiter: u8,
    /// Skip the first row.
    pub header: bool,
    /// Labels must be `-1` or `+1`; otherwise any real label is accepted.
    pub classification: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            has_label: true,
            delimiter: b',',
            header: false,
            classification: true,
        }
    }
}

impl CsvSchema {
    pub fn unlabeled(self) -> Self {
        CsvSchema {
            has_label: false,
            ..self
        }
    }
}

/// Rows of a file, labeled or not.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Labeled(Vec<LabeledExample>),
    Unlabeled(Vec<UnlabeledExample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Labeled(v) => v.len(),
            Dataset::Unlabeled(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_number(field: &str) -> Option<f64> {
    // Accept the typographic minus sign some exports use.
    let s = field.trim().replace('\u{2212}', "-");
    s.parse::<f64>().ok()
}

fn parse_label(field: &str, classification: bool) -> Result<f64, String> {
    let y = parse_number(field).ok_or_else(|| format!("label {field:?} is not a number"))?;
    if classification {
        if y == 1.0 || y == -1.0 {
            Ok(y)
        } else {
            Err(format!("label {field:?} is not -1 or +1"))
        }
    } else if y.is_finite() {
        Ok(y)
    } else {
        Err(format!("label {field:?} is not finite"))
    }
}

/// Parses a dataset from any reader. Row numbers in errors count data rows
/// from 1, not counting a skipped header.
pub fn read_dataset<R: Read>(reader: R, schema: CsvSchema, path: &Path) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .delimiter(schema.delimiter)
        .flexible(true)
        .from_reader(reader);
    let row_err = |row: usize, message: String| CliError::Row {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut width = None;
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| row_err(row, e.to_string()))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let mut fields = rec.iter();
        let y = if schema.has_label {
            let f = fields.next().unwrap_or("");
            Some(parse_label(f, schema.classification).map_err(|m| row_err(row, m))?)
        } else {
            None
        };
        let x = fields
            .map(|f| {
                parse_number(f).ok_or_else(|| row_err(row, format!("field {f:?} is not a number")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        if x.is_empty() {
            return Err(row_err(row, "no feature fields".into()));
        }
        match width {
            None => width = Some(x.len()),
            Some(w) if w != x.len() => {
                return Err(row_err(
                    row,
                    format!("expected {w} features, found {}", x.len()),
                ));
            }
            Some(_) => {}
        }
        match y {
            Some(y) => labeled.push(LabeledExample::new(x, y)),
            None => unlabeled.push(UnlabeledExample::new(x)),
        }
    }
    if width.is_none() {
        return Err(CliError::data(format!("{}: no data rows", path.display())));
    }
    Ok(if schema.has_label {
        Dataset::Labeled(labeled)
    } else {
        Dataset::Unlabeled(unlabeled)
    })
}

pub fn load_csv(path: &Path, schema: CsvSchema) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(std::io::BufReader::new(file), schema, path)
}

pub fn load_labeled(path: &Path, schema: CsvSchema) -> CliResult<Vec<LabeledExample>> {
    match load_csv(
        path,
        CsvSchema {
            has_label: true,
            ..schema
        },
    )? {
        Dataset::Labeled(v) => Ok(v),
        Dataset::Unlabeled(_) => unreachable!("labeled schema"),
    }
}

/// Loads predictors only. A labeled file can be read this way by setting
/// `has_label`, in which case the labels are dropped.
pub fn load_unlabeled(path: &Path, schema: CsvSchema) -> CliResult<Vec<UnlabeledExample>> {
    Ok(match load_csv(path, schema)? {
        Dataset::Labeled(v) => v
            .into_iter()
            .map(|ex| UnlabeledExample::new(ex.x))
            .collect(),
        Dataset::Unlabeled(v) => v,
    })
}

fn write_rows<W: Write, I>(writer: W, delimiter: u8, rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

/// Writes with the shortest decimal that round-trips each value exactly.
pub fn write_labeled<W: Write>(
    writer: W,
    delimiter: u8,
    data: &[LabeledExample],
) -> std::io::Result<()> {
    write_rows(
        writer,
        delimiter,
        data.iter().map(|ex| {
            std::iter::once(ex.y.to_string())
                .chain(ex.x.iter().map(f64::to_string))
                .collect()
        }),
    )
}

pub fn write_unlabeled<W: Write>(
    writer: W,
    delimiter: u8,
    data: &[UnlabeledExample],
) -> std::io::Result<()> {
    write_rows(
        writer,
        delimiter,
        data.iter()
            .map(|ex| ex.x.iter().map(f64::to_string).collect()),
    )
}
