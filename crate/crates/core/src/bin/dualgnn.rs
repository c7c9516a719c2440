use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dualgnn::expcli::{emit_results, run_experiment, DatasetSource, ExperimentSpec, OutputFormat};
use dualgnn::graphdata::{generate_sbm, save_graph};
use dualgnn::{Mode, Seed};

#[derive(Parser)]
#[command(name = "dualgnn", version, about = "Dual GNN node classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every cell of an experiment grid and write the results.
    Run(Box<RunArgs>),
    /// Write an SBM preset graph in the text graph format.
    GenSbm {
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags override the matching keys of `--config`.
#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `sbm:<preset>[:seed]` (presets: default, cliques) or a graph file.
    #[arg(long)]
    dataset: Option<String>,
    /// gcn, dual, prim-cluster, aux-cluster; comma-separated for several.
    #[arg(long, value_delimiter = ',')]
    mode: Option<Vec<Mode>>,
    /// Training labels per class, e.g. 2,3,5,10. Omit for the full split.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<usize>>,
    /// Edge drop rates, e.g. 0.25,0.5. Omit for the clean graph.
    #[arg(long, value_delimiter = ',')]
    edge_drop: Option<Vec<f64>>,
    /// Cluster count as a multiple of the class count.
    #[arg(long, value_delimiter = ',')]
    k_mult: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Label subsets / corrupted graphs per cell.
    #[arg(long)]
    structures: Option<usize>,
    /// Training runs per structure.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

impl RunArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentSpec::default(),
        };
        macro_rules! take {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = &self.$flag { spec.$field = v.clone(); })*
            };
        }
        take!(dataset => dataset, mode => modes, labels => labels_per_class, edge_drop => edge_drop,
              k_mult => k_mult, alpha => alpha, structures => structures, repeats => repeats,
              seed => seed, workers => workers);
        if let Some(e) = self.epochs {
            spec.train.epochs = e;
        }
        Ok(spec)
    }
}

fn run(args: RunArgs) -> Result<()> {
    let spec = args.spec()?;
    let result = run_experiment(&spec)?;
    let written = emit_results(&result, &args.out, args.format)?;
    for cell in &result.cells {
        let c = &cell.cell;
        let labels = c.labels_per_class.map_or("full".to_string(), |l| l.to_string());
        match (cell.mean_acc, cell.std_acc) {
            (Some(m), Some(s)) => println!(
                "{:<12} labels={labels:<4} drop={:<5} K={:<4} alpha={:<4} runs={:<3} acc={:.4} ± {:.4}",
                c.mode.as_str(),
                c.edge_drop,
                c.clusters,
                c.alpha,
                cell.runs.len(),
                m,
                s
            ),
            _ => println!(
                "{:<12} labels={labels:<4} drop={:<5} K={:<4} alpha={:<4} no successful runs",
                c.mode.as_str(),
                c.edge_drop,
                c.clusters,
                c.alpha
            ),
        }
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    if !result.failures.is_empty() {
        for f in &result.failures {
            eprintln!("failed: cell {} structure {} repeat {}: {}", f.cell, f.structure, f.repeat, f.message);
        }
        bail!("{} of the runs failed", result.failures.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(*args),
        Command::GenSbm { preset, seed, out } => {
            let cfg = DatasetSource::sbm_preset(&preset).with_context(|| format!("unknown preset {preset:?}"))?;
            save_graph(&generate_sbm(&cfg, Seed(seed))?, &out)?;
            Ok(())
        }
    }
}
