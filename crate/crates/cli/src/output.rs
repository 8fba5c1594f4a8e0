//! Result files.
//!
//! CSV files open with `#` metadata lines (version, command, run id and the
//! resolved config, one `# config| ` line per TOML line) followed by the fixed
//! header. JSON files hold an array of row objects; the metadata goes to a
//! `<stem>.meta.json` sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::OutputFormat;
use crate::error::CliError;

pub const HEADER: [&str; 13] = [
    "run_id",
    "lattice",
    "n_cells",
    "x",
    "alpha",
    "eta",
    "moments",
    "rvecs",
    "seed",
    "E",
    "observable",
    "value",
    "stderr",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub run_id: String,
    pub lattice: String,
    pub n_cells: usize,
    pub x: f64,
    pub alpha: f64,
    pub eta: f64,
    pub moments: String,
    pub rvecs: usize,
    pub seed: u64,
    #[serde(rename = "E")]
    pub energy: Option<f64>,
    pub observable: String,
    /// Empty when the quantity is undefined at this point (see the notes).
    pub value: Option<f64>,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub command: String,
    pub run_id: String,
    pub config_sha256: String,
    /// Resolved configuration, including any command-line overrides.
    pub config: String,
    pub notes: Vec<String>,
}

impl Metadata {
    pub fn new(command: &str, config: String, notes: Vec<String>) -> Self {
        let digest = Sha256::digest(config.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let run_id = Sha256::digest(format!("{command}\n{config}").as_bytes())
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect();
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            run_id,
            config_sha256: hex,
            config,
            notes,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn write(path: &Path, format: OutputFormat, meta: &Metadata, rows: &[Row]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    match format {
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            writeln!(buf, "# fbkubo {}", meta.version).unwrap();
            writeln!(buf, "# command: {}", meta.command).unwrap();
            writeln!(buf, "# run_id: {}", meta.run_id).unwrap();
            writeln!(buf, "# config_sha256: {}", meta.config_sha256).unwrap();
            for note in &meta.notes {
                writeln!(buf, "# note: {note}").unwrap();
            }
            for line in meta.config.lines() {
                writeln!(buf, "# config| {line}").unwrap();
            }
            {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
                w.write_record(HEADER).map_err(|e| io_err(path, e))?;
                for r in rows {
                    w.serialize(r).map_err(|e| io_err(path, e))?;
                }
                w.flush().map_err(|e| io_err(path, e))?;
            }
            fs::write(path, buf).map_err(|e| io_err(path, e))
        }
        OutputFormat::Json => {
            let body = serde_json::to_string_pretty(rows).map_err(|e| io_err(path, e))?;
            fs::write(path, body).map_err(|e| io_err(path, e))?;
            let side = sidecar_path(path);
            let meta = serde_json::to_string_pretty(meta).map_err(|e| io_err(&side, e))?;
            fs::write(&side, meta).map_err(|e| io_err(&side, e))
        }
    }
}

/// Reads a result file written by [`write`]; the format is taken from the
/// extension (`.json`, anything else is CSV).
pub fn read(path: &Path) -> Result<(Metadata, Vec<Row>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let rows: Vec<Row> = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        let side = sidecar_path(path);
        let meta_text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
        let meta = serde_json::from_str(&meta_text).map_err(|e| io_err(&side, e))?;
        return Ok((meta, rows));
    }
    let mut meta = Metadata {
        version: String::new(),
        command: String::new(),
        run_id: String::new(),
        config_sha256: String::new(),
        config: String::new(),
        notes: Vec::new(),
    };
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(v) = line.strip_prefix("# config| ") {
            meta.config.push_str(v);
            meta.config.push('\n');
        } else if let Some(v) = line.strip_prefix("# config|") {
            meta.config.push_str(v);
            meta.config.push('\n');
        } else if let Some(v) = line.strip_prefix("# fbkubo ") {
            meta.version = v.to_string();
        } else if let Some(v) = line.strip_prefix("# command: ") {
            meta.command = v.to_string();
        } else if let Some(v) = line.strip_prefix("# run_id: ") {
            meta.run_id = v.to_string();
        } else if let Some(v) = line.strip_prefix("# config_sha256: ") {
            meta.config_sha256 = v.to_string();
        } else if let Some(v) = line.strip_prefix("# note: ") {
            meta.notes.push(v.to_string());
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(io_err(path, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<Row>, _>>()
        .map_err(|e| io_err(path, e))?;
    Ok((meta, rows))
}
