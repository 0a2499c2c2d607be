use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use exitlab_cli::config::{ExperimentConfig, ExperimentKind, Preset};
use exitlab_cli::experiments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentArg {
    Fig1,
    Fig2,
    Pathology,
    AlphaSweep,
    CovLimit,
    PdeCheck,
    Custom,
}

impl From<ExperimentArg> for ExperimentKind {
    fn from(value: ExperimentArg) -> Self {
        match value {
            ExperimentArg::Fig1 => ExperimentKind::Fig1,
            ExperimentArg::Fig2 => ExperimentKind::Fig2,
            ExperimentArg::Pathology => ExperimentKind::Pathology,
            ExperimentArg::AlphaSweep => ExperimentKind::AlphaSweep,
            ExperimentArg::CovLimit => ExperimentKind::CovLimit,
            ExperimentArg::PdeCheck => ExperimentKind::PdeCheck,
            ExperimentArg::Custom => ExperimentKind::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

/// Exit-problem simulation experiments: first-exit Monte Carlo, importance
/// sampling, control variates and risk-sensitive estimation.
#[derive(Debug, Parser)]
#[command(name = "exitlab", version, about)]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    experiment: ExperimentArg,

    /// JSON config file mirroring the ExperimentConfig schema. Overrides the
    /// preset entirely.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Base random seed (overrides config/preset).
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (overrides config/preset).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker thread count; results are identical for any value.
    #[arg(long)]
    workers: Option<usize>,

    /// Built-in parameter scale, used when no config file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let kind: ExperimentKind = cli.experiment.into();

    let (mut cfg, preset_label) = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            anyhow::ensure!(
                cfg.experiment == kind,
                "config file describes experiment '{}' but '{}' was requested",
                cfg.experiment.as_str(),
                kind.as_str()
            );
            (cfg, None)
        }
        None => {
            let preset = match cli.preset {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Paper => Preset::Paper,
            };
            (ExperimentConfig::preset(kind, preset), Some(preset.as_str()))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;

    let output = experiments::run(&cfg, preset_label, cli.workers)?;
    output
        .write_to(&cfg.output_dir)
        .with_context(|| format!("writing outputs to {}", cfg.output_dir.display()))?;

    println!(
        "{}: wrote summary.csv, runs.csv, manifest.json, plot.svg to {}",
        kind.as_str(),
        cfg.output_dir.display()
    );
    // Headline rows for a quick look.
    for line in output.summary.to_csv().lines().take(12) {
        println!("  {line}");
    }
    if output.summary.rows.len() > 11 {
        println!("  ... ({} rows total)", output.summary.rows.len());
    }
    Ok(())
}
