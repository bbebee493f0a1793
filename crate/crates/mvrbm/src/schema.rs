//! Typed schemas, CSV ingestion, standardization, and one-hot encoding.
//!
//! A [`Schema`] is an ordered list of typed columns. Binary, Gaussian and count
//! columns occupy one encoded slot each; a nominal column of cardinality `C`
//! expands to `C` one-hot slots. Gaussian columns are standardized to zero mean
//! and unit variance before modeling; count columns stay integer so the Poisson
//! energy remains valid.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Column type. Nominal carries its category count `C >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Binary,
    Gaussian,
    Nominal(usize),
    Count,
}

impl ColumnKind {
    /// Number of encoded slots this column occupies.
    pub fn encoded_width(&self) -> usize {
        match self {
            ColumnKind::Nominal(c) => *c,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered list of typed columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema must have at least one column".into()));
        }
        for col in &columns {
            if let ColumnKind::Nominal(c) = col.kind {
                if c < 2 {
                    return Err(Error::Schema(format!(
                        "nominal column '{}' needs cardinality >= 2, got {}",
                        col.name, c
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name '{}'", col.name)));
            }
        }
        Ok(Schema { columns })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Total width of the one-hot encoded representation.
    pub fn encoded_width(&self) -> usize {
        self.columns.iter().map(|c| c.kind.encoded_width()).sum()
    }

    /// First encoded slot of column `i`.
    pub fn slot_offset(&self, i: usize) -> usize {
        self.columns[..i].iter().map(|c| c.kind.encoded_width()).sum()
    }

    /// Indices of gaussian columns.
    pub fn gaussian_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ColumnKind::Gaussian)
            .map(|(i, _)| i)
            .collect()
    }
}

/// One typed cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Binary(u8),
    Gaussian(f64),
    Nominal(usize),
    Count(u64),
}

impl Cell {
    /// Value as a real number; nominal cells return the category code.
    pub fn as_f64(&self) -> f64 {
        match *self {
            Cell::Binary(v) => f64::from(v),
            Cell::Gaussian(v) => v,
            Cell::Nominal(v) => v as f64,
            Cell::Count(v) => v as f64,
        }
    }

    fn check(&self, kind: &ColumnKind) -> bool {
        match (self, kind) {
            (Cell::Binary(v), ColumnKind::Binary) => *v <= 1,
            (Cell::Gaussian(v), ColumnKind::Gaussian) => v.is_finite(),
            (Cell::Nominal(v), ColumnKind::Nominal(c)) => v < c,
            (Cell::Count(_), ColumnKind::Count) => true,
            _ => false,
        }
    }
}

/// A column-typed record matrix with optional ground-truth outlier labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
    pub labels: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Vec<Cell>>, labels: Option<Vec<bool>>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Data(format!(
                    "row {} has {} cells, schema has {} columns",
                    r,
                    row.len(),
                    schema.len()
                )));
            }
            for (c, cell) in row.iter().enumerate() {
                if !cell.check(&schema.columns()[c].kind) {
                    return Err(Error::Data(format!(
                        "row {} column '{}': cell {:?} outside type domain",
                        r,
                        schema.columns()[c].name,
                        cell
                    )));
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != rows.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    rows.len()
                )));
            }
        }
        Ok(Dataset { schema, rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Per-gaussian-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    /// (column index, mean, standard deviation), one entry per gaussian column.
    pub entries: Vec<(usize, f64, f64)>,
}

/// Parse a schema file: one `name:kind[,cardinality]` entry per line.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut columns = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, kind_part) = line.split_once(':').ok_or_else(|| {
            Error::Schema(format!("line {}: expected `name:kind`, got '{}'", lineno + 1, line))
        })?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Schema(format!("line {}: empty column name", lineno + 1)));
        }
        let kind = match kind_part.trim() {
            "binary" => ColumnKind::Binary,
            "gaussian" => ColumnKind::Gaussian,
            "count" => ColumnKind::Count,
            other => {
                if let Some((kind_name, card)) = other.split_once(',') {
                    if kind_name.trim() != "nominal" {
                        return Err(Error::Schema(format!(
                            "line {}: unknown kind '{}'",
                            lineno + 1,
                            kind_name.trim()
                        )));
                    }
                    let c: usize = card.trim().parse().map_err(|_| {
                        Error::Schema(format!("line {}: bad cardinality '{}'", lineno + 1, card.trim()))
                    })?;
                    ColumnKind::Nominal(c)
                } else if other == "nominal" {
                    return Err(Error::Schema(format!(
                        "line {}: nominal column '{}' requires a cardinality",
                        lineno + 1,
                        name
                    )));
                } else {
                    return Err(Error::Schema(format!("line {}: unknown kind '{}'", lineno + 1, other)));
                }
            }
        };
        columns.push(ColumnSpec { name: name.to_string(), kind });
    }
    if columns.is_empty() {
        return Err(Error::Schema("empty schema file".into()));
    }
    Schema::new(columns)
}

/// Render a schema in the `name:kind[,cardinality]` file format.
pub fn write_schema(schema: &Schema) -> String {
    let mut out = String::new();
    for col in schema.columns() {
        match col.kind {
            ColumnKind::Binary => writeln!(out, "{}:binary", col.name).unwrap(),
            ColumnKind::Gaussian => writeln!(out, "{}:gaussian", col.name).unwrap(),
            ColumnKind::Count => writeln!(out, "{}:count", col.name).unwrap(),
            ColumnKind::Nominal(c) => writeln!(out, "{}:nominal,{}", col.name, c).unwrap(),
        }
    }
    out
}

fn parse_cell(text: &str, kind: &ColumnKind, row: usize, column: &str) -> Result<Cell> {
    let err = |message: String| Error::Csv {
        row,
        column: column.to_string(),
        message,
    };
    let text = text.trim();
    if text.is_empty() {
        return Err(err("missing cell".into()));
    }
    match kind {
        ColumnKind::Binary => match text {
            "0" => Ok(Cell::Binary(0)),
            "1" => Ok(Cell::Binary(1)),
            _ => Err(err(format!("binary cell must be 0 or 1, got '{}'", text))),
        },
        ColumnKind::Gaussian => {
            let v: f64 = text
                .parse()
                .map_err(|_| err(format!("not a number: '{}'", text)))?;
            if !v.is_finite() {
                return Err(err(format!("gaussian cell must be finite, got '{}'", text)));
            }
            Ok(Cell::Gaussian(v))
        }
        ColumnKind::Nominal(c) => {
            let v: usize = text
                .parse()
                .map_err(|_| err(format!("not a category code: '{}'", text)))?;
            if v >= *c {
                return Err(err(format!("nominal cell {} outside 0..{}", v, c)));
            }
            Ok(Cell::Nominal(v))
        }
        ColumnKind::Count => {
            let v: u64 = text
                .parse()
                .map_err(|_| err(format!("count cell must be a non-negative integer, got '{}'", text)))?;
            Ok(Cell::Count(v))
        }
    }
}

/// Load a header-first CSV under `schema`. Header names must match in order.
pub fn load_csv<R: BufRead>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty CSV: missing header".into()))??;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let expected: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
    if names != expected {
        return Err(Error::Data(format!(
            "header mismatch: expected {:?}, got {:?}",
            expected, names
        )));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != schema.len() {
            return Err(Error::Csv {
                row: idx + 1,
                column: String::new(),
                message: format!("expected {} cells, got {}", schema.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(schema.len());
        for (c, field) in fields.iter().enumerate() {
            let col = &schema.columns()[c];
            row.push(parse_cell(field, &col.kind, idx + 1, &col.name)?);
        }
        rows.push(row);
    }
    Dataset::new(schema.clone(), rows, None)
}

/// Write a dataset as CSV. Gaussian cells use shortest round-trip formatting,
/// so `load_csv(write_csv(d)) == d` exactly.
pub fn write_csv<W: Write>(data: &Dataset, writer: &mut W) -> Result<()> {
    let names: Vec<&str> = data.schema.columns().iter().map(|c| c.name.as_str()).collect();
    writeln!(writer, "{}", names.join(","))?;
    for row in &data.rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push(',');
            }
            match cell {
                Cell::Binary(v) => write!(line, "{}", v).unwrap(),
                Cell::Gaussian(v) => write!(line, "{}", v).unwrap(),
                Cell::Nominal(v) => write!(line, "{}", v).unwrap(),
                Cell::Count(v) => write!(line, "{}", v).unwrap(),
            }
        }
        writeln!(writer, "{}", line)?;
    }
    Ok(())
}

/// Fit per-gaussian-column mean and population (1/n) standard deviation.
/// Count columns are left alone: the Poisson energy needs integers.
pub fn fit_standardization(data: &Dataset) -> Result<StandardizationStats> {
    if data.is_empty() {
        return Err(Error::Data("cannot fit standardization on empty dataset".into()));
    }
    let n = data.len() as f64;
    let mut entries = Vec::new();
    for col in data.schema.gaussian_columns() {
        let mean = data.rows.iter().map(|r| r[col].as_f64()).sum::<f64>() / n;
        let var = data
            .rows
            .iter()
            .map(|r| {
                let d = r[col].as_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        if sd <= 0.0 {
            return Err(Error::Data(format!(
                "gaussian column '{}' has zero variance",
                data.schema.columns()[col].name
            )));
        }
        entries.push((col, mean, sd));
    }
    Ok(StandardizationStats { entries })
}

fn check_stats_compat(data: &Dataset, stats: &StandardizationStats) -> Result<()> {
    for &(col, _, _) in &stats.entries {
        if col >= data.schema.len() || data.schema.columns()[col].kind != ColumnKind::Gaussian {
            return Err(Error::Data(format!(
                "standardization stats refer to gaussian column {} absent from schema",
                col
            )));
        }
    }
    Ok(())
}

/// Replace each gaussian cell by `(x - mean) / sd`.
pub fn apply_standardization(data: &Dataset, stats: &StandardizationStats) -> Result<Dataset> {
    check_stats_compat(data, stats)?;
    let mut rows = data.rows.clone();
    for &(col, mean, sd) in &stats.entries {
        for row in &mut rows {
            if let Cell::Gaussian(v) = row[col] {
                row[col] = Cell::Gaussian((v - mean) / sd);
            }
        }
    }
    Dataset::new(data.schema.clone(), rows, data.labels.clone())
}

/// Undo [`apply_standardization`]: each gaussian cell becomes `x * sd + mean`.
pub fn invert_standardization(data: &Dataset, stats: &StandardizationStats) -> Result<Dataset> {
    check_stats_compat(data, stats)?;
    let mut rows = data.rows.clone();
    for &(col, mean, sd) in &stats.entries {
        for row in &mut rows {
            if let Cell::Gaussian(v) = row[col] {
                row[col] = Cell::Gaussian(v * sd + mean);
            }
        }
    }
    Dataset::new(data.schema.clone(), rows, data.labels.clone())
}

/// One-hot encode a record. Nominal cells expand to `C` indicator slots;
/// everything else passes through as one slot.
pub fn encode_record(row: &[Cell], schema: &Schema) -> Vec<f64> {
    let mut out = Vec::with_capacity(schema.encoded_width());
    for (cell, col) in row.iter().zip(schema.columns()) {
        match (cell, &col.kind) {
            (Cell::Nominal(v), ColumnKind::Nominal(c)) => {
                for slot in 0..*c {
                    out.push(if slot == *v { 1.0 } else { 0.0 });
                }
            }
            _ => out.push(cell.as_f64()),
        }
    }
    out
}

/// Seeded disjoint train/test split: `ceil(n * (1 - f))` train rows, rest test.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0,1), got {}",
            test_fraction
        )));
    }
    if data.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let n = data.len();
    let train_n = ((n as f64) * (1.0 - test_fraction)).ceil() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let take = |idx: &[usize]| -> Dataset {
        let rows = idx.iter().map(|&i| data.rows[i].clone()).collect();
        let labels = data
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        Dataset {
            schema: data.schema.clone(),
            rows,
            labels,
        }
    };
    Ok((take(&indices[..train_n]), take(&indices[train_n..])))
}
