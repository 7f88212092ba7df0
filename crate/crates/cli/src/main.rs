use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scvae_cli::config::load_cells;
use scvae_cli::pipeline;
use scvae_cli::{CliError, CliResult, ModelChoice, RunConfig};

/// SCVAE / CNN-VAE anomaly detection experiments.
///
/// Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure, 5 I/O.
/// Failures print a JSON error document on stderr.
#[derive(Parser, Debug)]
#[command(name = "scvae", version)]
struct Cli {
    /// JSON run config (or grid config for `recipe`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset name: occupancy, ozone, cnc_a..cnc_d, synthetic_occupancy.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Time window.
    #[arg(long, global = true)]
    tw: Option<usize>,
    /// CNN_VAE, SCVAE, IF, LOF, OCSVM or EE.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; results land in `<out>/<config hash>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Fraction of windows flagged as anomalous.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Grid cells run in parallel by `recipe`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Let `consensus` run with other than the six-model ensemble.
    #[arg(long, global = true)]
    override_ensemble: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest, standardize and window a dataset into the cache.
    Prepare,
    /// Train a VAE and write its checkpoint and loss log.
    Train,
    /// Score every window; VAEs read the run's checkpoint unless one is given.
    Score {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// PRAUC report for labeled score files.
    Eval { scores: Vec<PathBuf> },
    /// Match-General agreement of the six-model ensemble.
    Consensus { scores: Vec<PathBuf> },
    /// Train and time SCVAE against CNN-VAE.
    Bench,
    /// Print the architecture stored in a checkpoint.
    Describe { checkpoint: PathBuf },
    /// Run prepare → train → score → eval for every cell of a config.
    Recipe,
}

fn cells(cli: &Cli) -> CliResult<Vec<RunConfig>> {
    let mut cells = match &cli.config {
        Some(path) => load_cells(path)?,
        None => vec![RunConfig::default()],
    };
    let model: Option<ModelChoice> = cli
        .model
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(CliError::usage)?;
    for c in &mut cells {
        if let Some(d) = &cli.dataset {
            c.dataset = d.clone();
        }
        if let Some(tw) = cli.tw {
            c.tw = tw;
        }
        if let Some(m) = model {
            c.model = m;
        }
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        if let Some(o) = &cli.out {
            c.out = o.clone();
        }
        if let Some(r) = cli.ratio {
            c.ratio = r;
        }
    }
    Ok(cells)
}

fn single(cli: &Cli) -> CliResult<RunConfig> {
    let mut c = cells(cli)?;
    if c.len() != 1 {
        return Err(CliError::usage(format!(
            "config describes {} runs; use `recipe` for grids",
            c.len()
        )));
    }
    Ok(c.remove(0))
}

fn run(cli: &Cli) -> CliResult<String> {
    let out = match &cli.command {
        Command::Prepare => pipeline::cmd_prepare(&single(cli)?)?,
        Command::Train => pipeline::cmd_train(&single(cli)?)?,
        Command::Score { checkpoint } => pipeline::cmd_score(&single(cli)?, checkpoint.as_deref())?,
        Command::Eval { scores } => pipeline::cmd_eval(scores)?,
        Command::Consensus { scores } => {
            let cfg = single(cli)?;
            pipeline::cmd_consensus(scores, cfg.ratio, cli.override_ensemble, &cfg.out)?
        }
        Command::Bench => pipeline::cmd_bench(&single(cli)?)?,
        Command::Describe { checkpoint } => return pipeline::cmd_describe(checkpoint),
        Command::Recipe => pipeline::cmd_recipe(&cells(cli)?, cli.jobs)?,
    };
    Ok(serde_json::to_string_pretty(&out).expect("reports serialize") + "\n")
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::to_string_pretty(&e.document()).expect("error document serializes")
    );
    ExitCode::from(e.kind.code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::usage(e.render().to_string().trim_end())),
    };
    match run(&cli) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
            {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => fail(&CliError::from(e)),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(&e),
    }
}
