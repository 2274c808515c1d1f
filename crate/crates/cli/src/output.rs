//! Output formatting: human tables to stdout, JSON/CSV to stdout or a file.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Json,
    Csv,
}

/// A command's renderable result in all three formats.
pub struct Rendered {
    pub human: String,
    pub json: serde_json::Value,
    pub csv: String,
}

pub fn emit(rendered: &Rendered, format: Format, output: Option<&PathBuf>) -> anyhow::Result<()> {
    let text = match format {
        Format::Human => rendered.human.clone(),
        Format::Json => format!("{:#}\n", rendered.json),
        Format::Csv => rendered.csv.clone(),
    };
    match output {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Quote a CSV field if it contains separators.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
