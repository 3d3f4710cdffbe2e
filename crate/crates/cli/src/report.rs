use std::path::PathBuf;

use clap::ValueEnum;
use heisenclone_core::fmt::{format_float, round_json};
use heisenclone_core::{Error, ErrorKind};
use serde_json::{json, Map, Value};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Unsupported(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
            CliError::Unsupported(_) => "unsupported",
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => "validation",
                ErrorKind::Resource => "resource",
                ErrorKind::Numeric => "numeric",
            },
            _ => "validation",
        }
    }
}

pub fn emit_error(err: &CliError) {
    let message = match err {
        CliError::Usage(text) => text
            .lines()
            .take_while(|l| !l.trim().is_empty() && !l.starts_with("Usage:"))
            .map(|l| l.trim().trim_start_matches("error: "))
            .collect::<Vec<_>>()
            .join(" "),
        other => other.to_string(),
    };
    let body = json!({ "error": err.code(), "kind": err.kind(), "message": message });
    eprintln!("{body}");
}

/// Command output, renderable as JSON or CSV.
pub enum Report {
    /// One flat object.
    Record(Map<String, Value>),
    /// Rows of flat objects sharing `columns`, plus extra JSON fields and
    /// `# `-prefixed trailer lines for the CSV form.
    Table {
        columns: Vec<String>,
        rows: Vec<Map<String, Value>>,
        extra: Map<String, Value>,
        notes: Vec<String>,
    },
}

impl Report {
    pub fn render(self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Json => {
                let mut value = match self {
                    Report::Record(map) => Value::Object(map),
                    Report::Table { rows, mut extra, .. } => {
                        extra.insert("rows".into(), rows.into_iter().map(Value::Object).collect());
                        Value::Object(extra)
                    }
                };
                round_json(&mut value);
                Ok(format!("{value}\n"))
            }
            Format::Csv => {
                let (columns, rows, notes) = match self {
                    Report::Record(map) => (map.keys().cloned().collect(), vec![map], Vec::new()),
                    Report::Table { columns, rows, notes, .. } => (columns, rows, notes),
                };
                let mut w = csv::Writer::from_writer(Vec::new());
                let io = |e: csv::Error| CliError::Unsupported(format!("CSV write failed: {e}"));
                w.write_record(&columns).map_err(io)?;
                for row in &rows {
                    let cells = columns
                        .iter()
                        .map(|c| cell(row.get(c).unwrap_or(&Value::Null)))
                        .collect::<Result<Vec<_>, _>>()?;
                    w.write_record(cells).map_err(io)?;
                }
                let bytes = w
                    .into_inner()
                    .map_err(|e| CliError::Unsupported(format!("CSV write failed: {e}")))?;
                let mut text = String::from_utf8(bytes).expect("CSV output is UTF-8");
                for note in notes {
                    text.push_str("# ");
                    text.push_str(&note);
                    text.push('\n');
                }
                Ok(text)
            }
        }
    }
}

fn cell(v: &Value) -> Result<String, CliError> {
    Ok(match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.to_string(),
            (_, Some(u)) => u.to_string(),
            _ => format_float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => s.clone(),
        _ => {
            return Err(CliError::Unsupported(
                "this output has nested fields; use --format json".into(),
            ))
        }
    })
}

/// Converts a serializable value into a JSON object map.
pub fn to_map<T: serde::Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("report value serializes") {
        Value::Object(map) => map,
        other => {
            let mut map = Map::new();
            map.insert("value".into(), other);
            map
        }
    }
}
