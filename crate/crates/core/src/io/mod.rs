//! Text interchange formats: weight files and spectrum files (JSON),
//! input-sequence files and tabular spectra (delimited text).
//!
//! Every document carries a `format_version` of the form `MAJOR.MINOR`;
//! loaders reject any major other than [`FORMAT_MAJOR`].

mod sequences;
mod spectrum;
mod weights;

use std::path::Path;

use crate::error::{Error, Result};

pub use sequences::{load_sequences, parse_sequences, save_sequences, write_sequences};
pub use spectrum::{
    load_spectrum, save_spectrum, spectrum_to_string, tabular_to_string, LoadedSpectrum, SpectrumFormat,
};
pub use weights::{load_weights, save_weights, weights_from_str, weights_to_string};

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_VERSION: &str = "1.0";

pub(crate) fn check_version(path: &Path, found: &str) -> Result<()> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major == Some(FORMAT_MAJOR) {
        Ok(())
    } else {
        Err(Error::Version {
            path: path.to_path_buf(),
            found: found.to_string(),
            supported: FORMAT_MAJOR,
        })
    }
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn json_error(path: &Path, err: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {}, column {}", err.line(), err.column()),
        message: err.to_string(),
    }
}
