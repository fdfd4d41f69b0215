use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::args::{Format, OutputArgs};
use crate::error::CliError;

fn io_error(context: &str, path: Option<&Path>) -> impl FnOnce(io::Error) -> CliError {
    let context = match path {
        Some(p) => format!("{context} {}", p.display()),
        None => context.to_string(),
    };
    move |source| CliError::Io { context, source }
}

/// Opens the destination: the given file, or standard output.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_error("cannot create", Some(p)))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Format(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_error("cannot write", path))
}

pub fn write_csv<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(sink(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Format(e.to_string()))?;
    }
    w.flush().map_err(io_error("cannot write", path))
}

/// Writes `json` or `rows` depending on the requested format.
pub fn emit<J: Serialize, R: Serialize>(out: &OutputArgs, json: &J, rows: &[R]) -> Result<(), CliError> {
    match out.format {
        Format::Json => write_json(json, out.out.as_deref()),
        Format::Csv => write_csv(rows, out.out.as_deref()),
    }
}
