use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use crate::CliError;

/// Raw CSV cells with the line number of each record.
pub struct Records {
    pub header: Option<Vec<String>>,
    pub rows: Vec<(usize, Vec<String>)>,
}

/// Numeric rows with one label per row.
pub struct Matrix {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Matrix {
    pub fn width(&self) -> Option<usize> {
        self.rows.first().map(Vec::len)
    }
}

fn numeric(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

pub fn read_source(path: Option<&Path>) -> Result<String, CliError> {
    let mut text = String::new();
    match path {
        Some(p) if p != Path::new("-") => {
            File::open(p)
                .and_then(|mut f| f.read_to_string(&mut text))
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
        }
        _ => {
            io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| CliError::Usage(format!("cannot read standard input: {e}")))?;
        }
    }
    Ok(text)
}

/// A first record counts as a header when it starts with `label`, or when
/// none of its cells are numeric and more records follow.
pub fn parse_records(text: &str) -> Result<Records, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("row {}: {e}", i + 1)))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((i + 1, rec.iter().map(str::to_owned).collect::<Vec<_>>()));
    }
    let is_header = rows.first().is_some_and(|(_, cells)| {
        cells[0].eq_ignore_ascii_case("label")
            || (rows.len() > 1 && cells.iter().all(|c| numeric(c).is_none()))
    });
    let header = if is_header {
        Some(rows.remove(0).1)
    } else {
        None
    };
    Ok(Records { header, rows })
}

impl Records {
    fn has_label_column(&self) -> bool {
        match &self.header {
            Some(h) => h[0].eq_ignore_ascii_case("label"),
            None => self
                .rows
                .first()
                .is_some_and(|(_, cells)| numeric(&cells[0]).is_none()),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header
            .as_ref()?
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
    }

    fn label(&self, index: usize, cells: &[String], labelled: bool) -> String {
        if labelled {
            cells[0].clone()
        } else {
            (index + 1).to_string()
        }
    }

    /// Every non-label cell must be numeric and every row equally long.
    pub fn into_matrix(self) -> Result<Matrix, CliError> {
        let labelled = self.has_label_column();
        let skip = usize::from(labelled);
        let mut labels = Vec::with_capacity(self.rows.len());
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(self.rows.len());
        for (index, (line, cells)) in self.rows.iter().enumerate() {
            let values = cells[skip..]
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    numeric(c).ok_or_else(|| {
                        CliError::Usage(format!(
                            "row {line}, column {}: non-numeric value '{c}'",
                            j + skip + 1
                        ))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if let Some(first) = rows.first() {
                if values.len() != first.len() {
                    return Err(CliError::Usage(format!(
                        "row {line} has {} values, expected {}",
                        values.len(),
                        first.len()
                    )));
                }
            }
            labels.push(self.label(index, cells, labelled));
            rows.push(values);
        }
        Ok(Matrix { labels, rows })
    }

    /// Labels and the values of one named column.
    pub fn named_column(&self, col: usize) -> Result<(Vec<String>, Vec<f64>), CliError> {
        let labelled = self.has_label_column();
        let mut labels = Vec::with_capacity(self.rows.len());
        let mut values = Vec::with_capacity(self.rows.len());
        for (index, (line, cells)) in self.rows.iter().enumerate() {
            let cell = cells.get(col).ok_or_else(|| {
                CliError::Usage(format!("row {line} is missing column {}", col + 1))
            })?;
            let v = numeric(cell).ok_or_else(|| {
                CliError::Usage(format!(
                    "row {line}, column {}: non-numeric value '{cell}'",
                    col + 1
                ))
            })?;
            labels.push(self.label(index, cells, labelled && col != 0));
            values.push(v);
        }
        Ok((labels, values))
    }
}
