use std::path::{Path, PathBuf};

use callo::{Error, Result};
use clap::Args;
use serde::Serialize;

use crate::run::io;

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Output directory of an earlier run
    pub dir: PathBuf,
}

fn read(path: &Path) -> Result<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io(path, e)),
    }
}

/// Last non-empty value of a history column.
fn last_value(csv: &str, column: usize) -> Option<(String, String)> {
    csv.lines()
        .skip(1)
        .filter_map(|l| {
            let fields: Vec<&str> = l.split(',').collect();
            let v = fields.get(column)?;
            (!v.is_empty()).then(|| (fields[0].to_string(), v.to_string()))
        })
        .last()
}

/// Prints what an earlier run did and what it produced. Read-only.
pub fn run(args: &ReportArgs) -> Result<()> {
    let manifest_path = args.dir.join("run.json");
    let text = read(&manifest_path)?.ok_or_else(|| {
        Error::Validation(format!("{} has no run.json; not a callo run directory", args.dir.display()))
    })?;
    let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        format: "run manifest",
        reason: e.to_string(),
    })?;
    println!("command: {}", manifest["command"].as_str().unwrap_or("?"));
    println!("seed: {}", manifest["seed"]);
    if let Some(argv) = manifest["argv"].as_array() {
        let words: Vec<&str> = argv.iter().filter_map(|v| v.as_str()).collect();
        println!("argv: {}", words.join(" "));
    }
    if let Some(resolved) = manifest["resolved"].as_object() {
        for (key, value) in resolved {
            if value.is_number() || value.is_string() || value.is_boolean() {
                println!("{key}: {value}");
            }
        }
    }
    if let Some(history) = read(&args.dir.join("history.csv"))? {
        if let Some((step, loss)) = last_value(&history, 2) {
            println!("final step {step}: loss {loss}");
        }
        if let Some((step, acc)) = last_value(&history, 4) {
            println!("last train accuracy (step {step}): {acc}");
        }
        if let Some((step, acc)) = last_value(&history, 5) {
            println!("last validation accuracy (step {step}): {acc}");
        }
    }
    for table in ["report.csv", "summary.csv", "confusion.csv"] {
        if let Some(text) = read(&args.dir.join(table))? {
            println!("{table}:");
            print!("{text}");
        }
    }
    Ok(())
}
