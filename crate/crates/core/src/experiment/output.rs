use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::ExperimentError;

pub const HASH_PREFIX: &str = "# manifest_hash=";

pub type CsvOut = csv::Writer<BufWriter<File>>;

/// Opens a CSV for writing and emits the manifest-hash comment line.
pub fn create_csv(path: &Path, hash: &str) -> Result<CsvOut, ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HASH_PREFIX}{hash}")?;
    Ok(csv::WriterBuilder::new().from_writer(out))
}

pub fn finish(mut w: CsvOut) -> Result<(), ExperimentError> {
    w.flush()?;
    Ok(())
}

pub fn open_csv(path: &Path) -> Result<csv::Reader<BufReader<File>>, ExperimentError> {
    let file = File::open(path)
        .map_err(|e| ExperimentError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file)))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn fmt_na(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".to_string())
}

pub fn parse_opt(field: &str) -> Result<Option<f64>, ExperimentError> {
    let t = field.trim();
    if t.is_empty() || t == "NA" {
        return Ok(None);
    }
    t.parse()
        .map(Some)
        .map_err(|_| ExperimentError::Data(format!("not a number: {t:?}")))
}
