//! CSV artifacts and their column schemas.

use crate::{HarnessError, Result};
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    /// Non-negative integer.
    Count,
    /// Finite float.
    Float,
    /// Finite float or empty (not yet available).
    OptFloat,
    /// Float in `[0, 1]`.
    Fraction,
    /// `0` or `1`.
    Flag,
    /// Free text without commas.
    Text,
}

#[derive(Clone, Copy, Debug)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [(&'static str, ColumnKind)],
}

use ColumnKind::*;

pub const TRAINING: Schema = Schema {
    name: "training",
    columns: &[
        ("step", Count),
        ("critic_loss", OptFloat),
        ("actor_loss", OptFloat),
        ("mean_q", OptFloat),
        ("episode_return", OptFloat),
        ("success_rate", Fraction),
    ],
};

pub const EPISODES: Schema = Schema {
    name: "episodes",
    columns: &[
        ("episode", Count),
        ("end_step", Count),
        ("length", Count),
        ("return", Float),
        ("coarse", Float),
        ("fine", Float),
        ("sparse_steps", Count),
        ("success", Flag),
        ("i_target", Count),
        ("i_reached", Count),
    ],
};

pub const PRETRAIN_LOSS: Schema = Schema { name: "pretrain_loss", columns: &[("step", Count), ("loss", Float)] };

/// One similarity matrix in long form.
pub const HEATMAP: Schema = Schema {
    name: "heatmap",
    columns: &[("encoder", Text), ("interval", Count), ("row", Count), ("col", Count), ("similarity", Float)],
};

pub const HEATMAP_SUMMARY: Schema = Schema {
    name: "heatmap_summary",
    columns: &[("encoder", Text), ("interval", Count), ("frames", Count), ("diag_mean", Float), ("margin", Float)],
};

pub const ABLATION: Schema = Schema {
    name: "ablation",
    columns: &[
        ("mode", Text),
        ("seed", Count),
        ("final_success", Fraction),
        ("auc", Fraction),
        ("path_deviation", Float),
        ("closest_approach", Float),
    ],
};

pub const ALL: [Schema; 6] = [TRAINING, EPISODES, PRETRAIN_LOSS, HEATMAP, HEATMAP_SUMMARY, ABLATION];

impl Schema {
    pub fn header(&self) -> Vec<&'static str> {
        self.columns.iter().map(|c| c.0).collect()
    }

    /// Finds the schema whose header matches exactly.
    pub fn detect(header: &[String]) -> Option<Schema> {
        ALL.into_iter().find(|s| s.columns.len() == header.len() && s.columns.iter().zip(header).all(|(c, h)| c.0 == h))
    }
}

fn check_cell(kind: ColumnKind, v: &str) -> bool {
    let float = || v.parse::<f64>().ok().filter(|x| x.is_finite());
    match kind {
        Count => v.parse::<u64>().is_ok(),
        Float => float().is_some(),
        OptFloat => v.is_empty() || float().is_some(),
        Fraction => float().is_some_and(|x| (0.0..=1.0).contains(&x)),
        Flag => v == "0" || v == "1",
        Text => !v.is_empty(),
    }
}

/// Checks a CSV file against `schema`: exact header, column count, and cell
/// types. Returns the number of data rows.
pub fn validate_file(path: &Path, schema: &Schema) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != schema.header() {
        return Err(HarnessError::Runtime(format!(
            "{}: header {header:?} does not match the {} schema",
            path.display(),
            schema.name
        )));
    }
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != schema.columns.len() {
            return Err(HarnessError::Runtime(format!("{}: row {} has {} fields", path.display(), i + 1, rec.len())));
        }
        for ((name, kind), v) in schema.columns.iter().zip(rec.iter()) {
            if !check_cell(*kind, v) {
                return Err(HarnessError::Runtime(format!(
                    "{}: row {} column {name}: bad value `{v}`",
                    path.display(),
                    i + 1
                )));
            }
        }
        rows += 1;
    }
    Ok(rows)
}

/// Validates a CSV by detecting its schema from the header.
pub fn validate_any(path: &Path) -> Result<(Schema, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let schema = Schema::detect(&header)
        .ok_or_else(|| HarnessError::Runtime(format!("{}: unknown CSV header {header:?}", path.display())))?;
    Ok((schema, validate_file(path, &schema)?))
}

/// Formats an optional float; `None` becomes an empty cell.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Append-only CSV writer that can be truncated back to a snapshot.
pub struct CsvLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvLog {
    /// Starts a fresh file with the schema header.
    pub fn create(path: &Path, schema: &Schema) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(schema.header())?;
        writer.flush()?;
        Ok(Self { path: path.to_path_buf(), writer })
    }

    /// Reopens a file for appending after cutting it to `len` bytes.
    pub fn resume(path: &Path, len: u64) -> Result<Self> {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(len)?;
        drop(file);
        let file = OpenOptions::new().append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(Self { path: path.to_path_buf(), writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    /// Flushes and reports the file length.
    pub fn sync(&mut self) -> Result<u64> {
        self.writer.flush()?;
        Ok(std::fs::metadata(&self.path)?.len())
    }
}
