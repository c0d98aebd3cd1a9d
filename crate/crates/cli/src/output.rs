use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ncs_core::scenario::Scenario;

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance line written at the top of every output file.
pub fn header(command: &str, sc: &Scenario, params: &str) -> String {
    format!(
        "ncs {VERSION} {command} scenario={} hash={} {params}",
        sc.name,
        sc.hash()
    )
}

/// `--out` if given (joined to the output directory when it has no
/// directory part), else `default` inside the output directory.
pub fn resolve(out_dir: &Option<PathBuf>, out: &Option<PathBuf>, default: &str) -> PathBuf {
    let dir = out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    match out {
        Some(p) if p.is_absolute() || p.parent().is_some_and(|d| !d.as_os_str().is_empty()) => p.clone(),
        Some(p) => dir.join(p),
        None => dir.join(default),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(d) = path.parent() {
        if !d.as_os_str().is_empty() {
            fs::create_dir_all(d)?;
        }
    }
    Ok(())
}

/// Writes `# header` followed by the CSV records.
pub fn write_csv<T: Serialize>(path: &Path, header_line: &str, rows: &[T]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path)?;
    writeln!(f, "# {header_line}")?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a CSV with explicit column names and numeric rows.
pub fn write_table(path: &Path, header_line: &str, columns: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path)?;
    writeln!(f, "# {header_line}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

/// Decision vector of a certified instance, with the data needed to
/// rebuild the LMI problem it belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessFile {
    pub scenario: String,
    pub scenario_hash: String,
    pub theorem: String,
    pub eta_m: f64,
    pub tau_m: f64,
    pub alpha: f64,
    pub disturbance: bool,
    pub status: String,
    pub min_margin: f64,
    pub x: Vec<f64>,
}

impl WitnessFile {
    pub fn write(&self, path: &Path, header_line: &str) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(self).map_err(ncs_core::NcsError::from)?;
        write_text(path, &format!("# {header_line}\n{body}\n"))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        serde_json::from_str(&body).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_paths() {
        let dir = Some(PathBuf::from("out"));
        assert_eq!(resolve(&dir, &None, "a.csv"), PathBuf::from("out/a.csv"));
        assert_eq!(
            resolve(&dir, &Some("b.csv".into()), "a.csv"),
            PathBuf::from("out/b.csv")
        );
        assert_eq!(
            resolve(&dir, &Some("x/b.csv".into()), "a.csv"),
            PathBuf::from("x/b.csv")
        );
        assert_eq!(resolve(&None, &None, "a.csv"), PathBuf::from("./a.csv"));
    }
}
