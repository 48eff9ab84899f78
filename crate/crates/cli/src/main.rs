use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use graphforget::graph::Perturbation;
use graphforget::harness::{emit_report, load_config, read_reports, run_experiment, run_sweep, SweepKind, SweepSpec};
use graphforget::metrics::MetricsReport;
use graphforget::{Error, Result};

#[derive(Parser)]
#[command(name = "graphforget", version, about = "Run graph unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Output {
    /// Directory holding on-disk datasets referenced by name in configs.
    #[arg(long, env = "GRAPH_UNLEARN_DATA")]
    data_dir: Option<PathBuf>,
    /// Results root; each run writes into a subdirectory named by its config digest.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, plus any sweeps listed in the config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Sweep request ratio or perturbation level.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        levels: Vec<f64>,
        /// Perturbation family for noise sweeps.
        #[arg(long, value_enum, default_value_t = Family::LabelNoise)]
        perturbation: Family,
        #[command(flatten)]
        output: Output,
    },
    /// Print the reports stored in a results directory.
    Report { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Ratio,
    Noise,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    LabelNoise,
    FeatureNoise,
    LabelSparsity,
    FeatureSparsity,
}

impl Family {
    fn perturbation(self) -> Perturbation {
        match self {
            Family::LabelNoise => Perturbation::LabelNoise(0.0),
            Family::FeatureNoise => Perturbation::FeatureNoise(0.0),
            Family::LabelSparsity => Perturbation::LabelSparsity(0.0),
            Family::FeatureSparsity => Perturbation::FeatureSparsity(0.0),
        }
    }
}

fn write_run(reports: &[MetricsReport], digest: &str, out: &Path) -> Result<()> {
    let dir = out.join(&digest[..16]);
    for path in emit_report(reports, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_reports(reports: &[MetricsReport]) {
    println!(
        "{:<10} {:<8} {:<6} {:<8} {:>6} {:>10} {:>10}  attacks",
        "method", "backbone", "task", "request", "level", "metric", "unlearn_s"
    );
    for r in reports {
        let attacks: Vec<String> = r
            .metrics
            .iter()
            .filter(|(k, _)| k.starts_with("mia") || k.starts_with("auc_"))
            .map(|(k, v)| format!("{k}={v:.4}"))
            .collect();
        println!(
            "{:<10} {:<8} {:<6} {:<8} {:>6} {:>10} {:>10.4}  {}",
            r.method,
            r.backbone,
            r.task,
            r.request,
            r.level,
            format!("{}={:.4}", r.primary, r.primary_value()),
            r.unlearn_seconds,
            attacks.join(" ")
        );
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load_config(&config)?;
            let data_dir = output.data_dir.as_deref();
            let mut reports = vec![run_experiment(&cfg, data_dir)?];
            for sweep in &cfg.sweeps {
                reports.extend(run_sweep(&cfg, sweep, data_dir)?);
            }
            print_reports(&reports);
            write_run(&reports, &cfg.digest(), &output.out)
        }
        Command::Sweep {
            config,
            kind,
            levels,
            perturbation,
            output,
        } => {
            let cfg = load_config(&config)?;
            let spec = SweepSpec {
                kind: match kind {
                    Kind::Ratio => SweepKind::Ratio,
                    Kind::Noise => SweepKind::Noise,
                },
                levels,
                perturbation: matches!(kind, Kind::Noise).then(|| perturbation.perturbation()),
            };
            let reports = run_sweep(&cfg, &spec, output.data_dir.as_deref())?;
            print_reports(&reports);
            let mut swept = cfg.clone();
            swept.sweeps = vec![spec];
            write_run(&reports, &swept.digest(), &output.out)
        }
        Command::Report { dir } => {
            let reports = read_reports(&dir)?;
            if reports.is_empty() {
                return Err(Error::EmptySet("reports"));
            }
            print_reports(&reports);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
