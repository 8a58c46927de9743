use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{check_version, read, write, FORMAT_VERSION};
use crate::error::{Error, Result};

/// One row per time step with comma- or whitespace-separated values; blank
/// lines separate sequences; `#` starts a comment line.
pub fn parse_sequences(text: &str, path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("format_version=") {
                check_version(path, v.trim())?;
            }
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        let location = || {
            format!(
                "line {}, block {}, row {}",
                lineno + 1,
                blocks.len() + 1,
                current.len() + 1
            )
        };
        let values = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        location: location(),
                        message: format!("invalid number `{f}`"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    location: location(),
                    message: format!("ragged row: expected {w} values, found {}", values.len()),
                })
            }
            _ => {}
        }
        current.push(values);
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    if blocks.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: "document".into(),
            message: "no sequences".into(),
        });
    }
    let width = width.unwrap_or(0);
    Ok(blocks
        .into_iter()
        .map(|rows| DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
        .collect())
}

pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<DMatrix<f64>>> {
    let path = path.as_ref();
    parse_sequences(&read(path)?, path)
}

pub fn write_sequences(batch: &[DMatrix<f64>]) -> String {
    let mut s = format!("# format_version={FORMAT_VERSION}\n");
    for (j, seq) in batch.iter().enumerate() {
        if j > 0 {
            s.push('\n');
        }
        for row in seq.row_iter() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(s, "{}", fields.join(",")).unwrap();
        }
    }
    s
}

pub fn save_sequences(batch: &[DMatrix<f64>], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &write_sequences(batch))
}
