use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::{CellResult, ExperimentResult};
use super::ExpError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

pub const CSV_HEADER: [&str; 8] =
    ["mode", "labels_per_class", "edge_drop", "K", "alpha", "runs", "mean_acc", "std_acc"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn labels_field(c: &CellResult) -> String {
    c.cell.labels_per_class.map_or_else(|| "full".to_string(), |l| l.to_string())
}

/// One row per cell.
pub fn write_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<(), ExpError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for c in &result.cells {
        w.write_record([
            c.cell.mode.to_string(),
            labels_field(c),
            c.cell.edge_drop.to_string(),
            c.cell.clusters.to_string(),
            c.cell.alpha.to_string(),
            c.runs.len().to_string(),
            opt(c.mean_acc),
            opt(c.std_acc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

type Axis = (&'static str, fn(&CellResult) -> String);

const AXES: [Axis; 4] = [
    ("labels_per_class", labels_field),
    ("edge_drop", |c| c.cell.edge_drop.to_string()),
    ("k_mult", |c| c.cell.k_mult.to_string()),
    ("alpha", |c| c.cell.alpha.to_string()),
];

/// Accuracy against each grid axis that takes more than one value. A series
/// is a mode together with the values of the other varying axes.
fn write_plots(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, ExpError> {
    let varying: Vec<&Axis> = AXES
        .iter()
        .filter(|(_, get)| {
            let mut vals: Vec<String> = result.cells.iter().map(get).collect();
            vals.sort();
            vals.dedup();
            vals.len() > 1
        })
        .collect();
    let mut written = Vec::new();
    for &&(name, get) in &varying {
        let mut series: BTreeMap<String, Vec<[String; 3]>> = BTreeMap::new();
        for c in &result.cells {
            let (Some(mean), Some(std)) = (c.mean_acc, c.std_acc) else { continue };
            let mut key = c.cell.mode.to_string();
            for &&(other, get_other) in varying.iter().filter(|(n, _)| *n != name) {
                key.push_str(&format!(" {other}={}", get_other(c)));
            }
            series.entry(key).or_default().push([get(c), mean.to_string(), std.to_string()]);
        }
        let path = dir.join(format!("plot_{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["series", "x", "y", "err"])?;
        for (key, points) in &series {
            for [x, y, err] in points {
                w.write_record([key, x, y, err])?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `results.csv` or `results.json` into `dir`, plus one
/// `plot_<axis>.csv` (series, x, y, err) per varying axis. Returns the paths
/// written.
pub fn emit_results(
    result: &ExperimentResult,
    dir: impl AsRef<Path>,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, ExpError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let main = match format {
        OutputFormat::Csv => {
            let path = dir.join("results.csv");
            write_csv(result, fs::File::create(&path)?)?;
            path
        }
        OutputFormat::Json => {
            let path = dir.join("results.json");
            let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
            serde_json::to_writer_pretty(&mut f, result)?;
            f.write_all(b"\n")?;
            f.flush()?;
            path
        }
    };
    let mut written = vec![main];
    written.extend(write_plots(result, dir)?);
    Ok(written)
}
