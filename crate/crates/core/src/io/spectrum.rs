use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_version, json_error, read, write, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::estimator::{SpectrumResult, TracePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumFormat {
    /// JSON document with config echo, per-sequence spectra, mean, std and
    /// per-sequence traces.
    Structured,
    /// Delimited table `t,lambda_1,…,lambda_k` of the batch-mean trace,
    /// closed by a `mean,…` row with the mean spectrum.
    Tabular,
}

impl std::str::FromStr for SpectrumFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" | "json" => Ok(SpectrumFormat::Structured),
            "tabular" | "csv" => Ok(SpectrumFormat::Tabular),
            other => Err(Error::Config(format!("unknown spectrum format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SpectrumDoc {
    format_version: String,
    #[serde(flatten)]
    result: SpectrumResult,
}

const MEAN_TOLERANCE: f64 = 1e-12;

fn tabular_header(k: usize) -> String {
    let mut s = String::from("t");
    for i in 1..=k {
        write!(s, ",lambda_{i}").unwrap();
    }
    s
}

fn tabular_row(label: &str, values: &[f64], out: &mut String) {
    out.push_str(label);
    for v in values {
        write!(out, ",{v}").unwrap();
    }
    out.push('\n');
}

pub fn spectrum_to_string(result: &SpectrumResult, format: SpectrumFormat) -> String {
    match format {
        SpectrumFormat::Structured => {
            let doc = SpectrumDoc {
                format_version: FORMAT_VERSION.to_string(),
                result: result.clone(),
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("spectrum serialize");
            s.push('\n');
            s
        }
        SpectrumFormat::Tabular => tabular_to_string(&result.mean_trace(), &result.mean),
    }
}

/// Tabular form: a version comment, a header, one row per trace point and a
/// final `mean` row.
pub fn tabular_to_string(trace: &[TracePoint], mean: &[f64]) -> String {
    let mut s = format!("# format_version={FORMAT_VERSION}\n");
    s.push_str(&tabular_header(mean.len()));
    s.push('\n');
    for p in trace {
        tabular_row(&p.t.to_string(), &p.lambdas, &mut s);
    }
    tabular_row("mean", mean, &mut s);
    s
}

pub fn save_spectrum(result: &SpectrumResult, path: impl AsRef<Path>, format: SpectrumFormat) -> Result<()> {
    write(path.as_ref(), &spectrum_to_string(result, format))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedSpectrum {
    Structured(SpectrumResult),
    Tabular { trace: Vec<TracePoint>, mean: Vec<f64> },
}

impl LoadedSpectrum {
    pub fn mean(&self) -> &[f64] {
        match self {
            LoadedSpectrum::Structured(r) => &r.mean,
            LoadedSpectrum::Tabular { mean, .. } => mean,
        }
    }

    /// Re-serializes in the format the spectrum was read from.
    pub fn to_file_string(&self) -> String {
        match self {
            LoadedSpectrum::Structured(r) => spectrum_to_string(r, SpectrumFormat::Structured),
            LoadedSpectrum::Tabular { trace, mean } => tabular_to_string(trace, mean),
        }
    }
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    }
}

fn parse_structured(text: &str, path: &Path) -> Result<SpectrumResult> {
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: Option<String>,
    }
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
    let version = probe
        .format_version
        .ok_or_else(|| parse_err(path, "document".into(), "missing format_version"))?;
    check_version(path, &version)?;
    let doc: SpectrumDoc = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
    let r = doc.result;

    let k = r.mean.len();
    if r.std.len() != k {
        return Err(parse_err(
            path,
            "std".into(),
            format!("expected {k} entries, found {}", r.std.len()),
        ));
    }
    for (j, row) in r.per_sequence.iter().enumerate() {
        if row.len() != k {
            return Err(parse_err(
                path,
                format!("per_sequence[{j}]"),
                format!("expected {k} entries, found {}", row.len()),
            ));
        }
    }
    if !r.per_sequence.is_empty() {
        for i in 0..k {
            let column: Vec<f64> = r.per_sequence.iter().map(|s| s[i]).collect();
            let (m, _) = crate::estimator::mean_std(&column);
            if (m - r.mean[i]).abs() > MEAN_TOLERANCE {
                return Err(parse_err(
                    path,
                    format!("mean[{i}]"),
                    format!("stored mean {} disagrees with per-sequence mean {m}", r.mean[i]),
                ));
            }
        }
    }
    Ok(r)
}

fn parse_tabular(text: &str, path: &Path) -> Result<LoadedSpectrum> {
    let mut header: Option<usize> = None;
    let mut trace = Vec::new();
    let mut mean = None;
    for (lineno, line) in text.lines().enumerate() {
        let loc = || format!("line {}", lineno + 1);
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("format_version=") {
                check_version(path, v.trim())?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(k) = header else {
            if fields[0] != "t" || fields.len() < 2 {
                return Err(parse_err(path, loc(), "expected header `t,lambda_1,...`"));
            }
            for (i, f) in fields[1..].iter().enumerate() {
                if *f != format!("lambda_{}", i + 1) {
                    return Err(parse_err(path, loc(), format!("unexpected column `{f}`")));
                }
            }
            header = Some(fields.len() - 1);
            continue;
        };
        if mean.is_some() {
            return Err(parse_err(path, loc(), "rows after the `mean` row"));
        }
        if fields.len() != k + 1 {
            return Err(parse_err(
                path,
                loc(),
                format!("expected {} fields, found {}", k + 1, fields.len()),
            ));
        }
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(path, loc(), format!("invalid number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if fields[0] == "mean" {
            mean = Some(values);
        } else {
            let t = fields[0]
                .parse::<usize>()
                .map_err(|_| parse_err(path, loc(), format!("invalid step `{}`", fields[0])))?;
            trace.push(TracePoint { t, lambdas: values });
        }
    }
    if header.is_none() {
        return Err(parse_err(path, "document".into(), "missing header row"));
    }
    let mean = mean.ok_or_else(|| parse_err(path, "document".into(), "missing `mean` row"))?;
    Ok(LoadedSpectrum::Tabular { trace, mean })
}

/// Loads either format; a leading `{` selects the structured one.
pub fn load_spectrum(path: impl AsRef<Path>) -> Result<LoadedSpectrum> {
    let path = path.as_ref();
    let text = read(path)?;
    if text.trim_start().starts_with('{') {
        parse_structured(&text, path).map(LoadedSpectrum::Structured)
    } else {
        parse_tabular(&text, path)
    }
}
