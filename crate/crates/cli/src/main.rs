use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hashinv_core::harness::{self, ExperimentConfig};
use hashinv_core::Error;

#[derive(Parser)]
#[command(name = "hashinv", version, about = "Hash-center estimation and diffusion inversion on a synthetic hashing world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file overlaid on the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `attack.omega=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("master_seed={seed}"));
        }
        let cfg = ExperimentConfig::load(self.config.as_deref(), &overrides)?;
        let out = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world, hashed aux/private codes, and ground-truth centers.
    Gen(Common),
    /// Estimate centers (random, K-means, slice-fused) and align them to ground truth.
    Estimate(Common),
    /// Invert every slice-fused center with surrogate-guided diffusion.
    Attack(Common),
    /// Run gen, estimate, and attack in sequence.
    Run(Common),
    /// Rerun the pipeline once per value of one config parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config path to vary, e.g. `estimation.slice.r`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Skip the attack phase even for non-estimation parameters.
        #[arg(long)]
        no_attack: bool,
    },
    /// Aggregate finished run directories into report CSVs.
    Report {
        /// Run directories to merge.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where to write the report files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) => 2,
        Error::Io { .. } | Error::Json { .. } | Error::Parse { .. } => 3,
        Error::Invariant(_) | Error::State(_) | Error::Dimension { .. } | Error::Encoding(_) => 4,
    }
}

fn kind(e: &Error) -> &'static str {
    match exit_code(e) {
        2 => "config",
        3 => "io",
        _ => "internal",
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("HASHINV_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("HASHINV_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))
}

fn gen(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let s = harness::cmd_gen(cfg, out)?;
    println!(
        "gen: {} aux, {} private codes, private purity {:.4} -> {}",
        s.n_aux,
        s.n_priv,
        s.private_purity,
        out.display()
    );
    Ok(())
}

fn estimate(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let est = harness::cmd_estimate(cfg, out)?;
    for m in harness::pipeline::METHODS {
        let r = &est.reports[m];
        println!("estimate: {m:<7} mean aligned distance {:.4}, exact {}", r.mean_distance, r.exact_matches);
    }
    Ok(())
}

fn attack(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let a = harness::cmd_attack(cfg, out)?;
    let m = &a.metrics;
    println!(
        "attack: match {:.4} -> {:.4}, score {:.4} -> {:.4}, mAP {:.4}, {} queries",
        m.target_match_before, m.target_match_after, m.mean_score_before, m.mean_score_after, m.map, a.queries
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Gen(c) => {
            let (cfg, out) = c.load()?;
            gen(&cfg, &out)
        }
        Command::Estimate(c) => {
            let (cfg, out) = c.load()?;
            estimate(&cfg, &out)
        }
        Command::Attack(c) => {
            let (cfg, out) = c.load()?;
            attack(&cfg, &out)
        }
        Command::Run(c) => {
            let (cfg, out) = c.load()?;
            gen(&cfg, &out)?;
            estimate(&cfg, &out)?;
            if cfg.data.source == harness::DataSource::Mixture {
                attack(&cfg, &out)?;
            }
            Ok(())
        }
        Command::Sweep { common, param, values, no_attack } => {
            let (cfg, out) = common.load()?;
            let values = harness::sweep::parse_values(&values);
            let with_attack = !no_attack && harness::sweep::attacks_by_default(&param);
            print!("{}", harness::cmd_sweep(&cfg, &param, &values, with_attack, &out)?);
            Ok(())
        }
        Command::Report { runs, out } => {
            let dirs: Vec<&Path> = runs.iter().map(PathBuf::as_path).collect();
            print!("{}", harness::cmd_report(&dirs, &out)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("hashinv: error[{}]: {msg}", kind(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
