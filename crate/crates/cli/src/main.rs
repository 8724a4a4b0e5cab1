use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use improv_core::eval::{load_dataset, run_sweep, write_report, ContextMode, EvalRunner, SweepConfig};
use improv_core::gateway::ProviderKind;
use improv_core::media::synth::write_bench_fixtures;
use improv_core::{Gateway, MediaIngest, ProviderConfig, TemplateRegistry};

#[derive(Parser)]
#[command(name = "evalbench", version, about = "Motion-labeling benchmark over annotated clips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label every clip under each condition and write the reports.
    Run(RunArgs),
    /// Write the synthetic clip set and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSONL manifest of {id, video, label, title} objects.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1")]
    ratios: Vec<f64>,
    #[arg(long, default_value = "both")]
    context: ContextMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// mock or remote; defaults to IMPROV_PROVIDER, then mock.
    #[arg(long, env = "IMPROV_PROVIDER")]
    provider: Option<ProviderKind>,
    /// Required before any request leaves the machine.
    #[arg(long)]
    allow_network: bool,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Print the token estimate and stop.
    #[arg(long)]
    dry_run: bool,
}

fn run(args: RunArgs) -> Result<()> {
    if args.ratios.is_empty() || args.ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        bail!("--ratios must be positive numbers");
    }
    let mut config = ProviderConfig::from_env()?;
    if let Some(kind) = args.provider {
        if kind == ProviderKind::Mock {
            config = ProviderConfig {
                mock_fixtures: config.mock_fixtures,
                ..ProviderConfig::mock()
            };
        } else {
            config.kind = kind;
        }
    }
    let networked = config.kind == ProviderKind::Remote;

    let entries = load_dataset(&args.manifest)?;
    let registry = Arc::new(TemplateRegistry::builtin());
    let gateway = Gateway::from_config(config)?;
    let runner = EvalRunner::new(gateway, Arc::new(MediaIngest::mjpeg(registry))).with_workers(args.workers);
    let sweep = SweepConfig {
        ratios: args.ratios,
        context: args.context,
        seed: args.seed,
    };
    let conditions = sweep.conditions();
    let estimate = runner.estimate_tokens(&entries, &conditions)?;
    println!(
        "{} clips x {} conditions, estimated at most {estimate} tokens ({})",
        entries.len(),
        conditions.len(),
        if networked { "remote provider" } else { "mock provider" }
    );
    if args.dry_run {
        return Ok(());
    }
    if networked && !args.allow_network {
        bail!("the remote provider is selected; pass --allow-network to spend the tokens above");
    }

    let report = run_sweep(&runner, &entries, &sweep)?;
    let written = write_report(&report, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    for row in report.table1.iter().chain(&report.table2) {
        println!(
            "{:<16} avg {:.3}  med {:.3}  std {:.3}  tokens {:.1}  n={}",
            row.label, row.avg, row.med, row.std, row.avg_tkn_tot, row.n
        );
    }
    let excluded = report.records.iter().filter(|r| r.excluded).count();
    println!("{excluded} of {} records excluded", report.records.len());
    for condition in &report.empty {
        println!("no scored records for {}", condition.context_label());
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let result = match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Synth { out } => write_bench_fixtures(&out)
            .map(|manifest| println!("wrote {}", manifest.display()))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
