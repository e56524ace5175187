use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cdp::envs::{EnvKind, EnvSpec};
use cdp::harness::{run_comparison, run_experiment, ExperimentConfig};
use cdp::{Scalar, Strategy, TimingMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cdp", version, about = "Curiosity-driven prioritized replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(RunArgs),
    /// Run a strategy × seed grid and summarize it.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvName {
    Bitflip,
    Pointpush,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Timing {
    Wall,
    Disabled,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory that receives run outputs.
    #[arg(long, env = "CDP_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    #[arg(long, value_enum)]
    env: Option<EnvName>,
    /// Number of bits (bitflip only).
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    episodes_per_epoch: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    optimizer_steps: Option<usize>,
    #[arg(long)]
    replay_k: Option<usize>,
    #[arg(long)]
    store_relabeled: bool,
    #[arg(long)]
    max_components: Option<usize>,
    #[arg(long)]
    uniform_mix: Option<f64>,
    #[arg(long)]
    pearson_epoch: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    timing: Option<Timing>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to `<output-root>/<env>_<strategy>_seed<seed>`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_value = "uniform,per,cdp")]
    strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Grid cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Grid directory; defaults to `<output-root>/compare_<env>`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: cdp::CdpError| e.to_string())
}

fn load<T: Scalar>(common: &Common) -> cdp::Result<ExperimentConfig<T>> {
    let mut c = match &common.config {
        Some(path) => ExperimentConfig::from_json(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(env) = common.env {
        c.env = match env {
            EnvName::Bitflip => EnvSpec::bitflip(common.bits.unwrap_or(8)),
            EnvName::Pointpush => EnvSpec::pointpush(),
        };
    }
    if let (Some(bits), EnvKind::Bitflip { .. }) = (common.bits, c.env.kind) {
        c.env.kind = EnvKind::Bitflip { bits };
        if common.horizon.is_none() {
            c.env.horizon = bits;
        }
    }
    if let Some(h) = common.horizon {
        c.env.horizon = h;
    }
    if let Some(t) = common.tolerance {
        c.env.tolerance = T::c(t);
    }
    macro_rules! set {
        ($($field:expr => $value:expr),* $(,)?) => {
            $(if let Some(v) = $value { $field = v; })*
        };
    }
    set! {
        c.epochs => common.epochs,
        c.episodes_per_epoch => common.episodes_per_epoch,
        c.eval_episodes => common.eval_episodes,
        c.buffer_capacity => common.buffer_capacity,
        c.agent.batch_size => common.batch_size,
        c.agent.optimizer_steps_per_episode => common.optimizer_steps,
        c.her.replay_k => common.replay_k,
        c.vgmm.max_components => common.max_components,
        c.uniform_mix => common.uniform_mix.map(T::c),
        c.success_threshold => common.threshold,
    }
    if common.pearson_epoch.is_some() {
        c.pearson_epoch = common.pearson_epoch;
    }
    if common.store_relabeled {
        c.her.store_relabeled = true;
    }
    if let Some(t) = common.timing {
        c.timing = match t {
            Timing::Wall => TimingMode::Wall,
            Timing::Disabled => TimingMode::Disabled,
        };
    }
    Ok(c)
}

fn run<T: Scalar>(args: &RunArgs) -> cdp::Result<()> {
    let mut config = load::<T>(&args.common)?;
    if let Some(s) = args.strategy {
        config.strategy = s;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dir = args.output_dir.clone().unwrap_or_else(|| {
        args.common
            .output_root
            .join(format!("{}_{}_seed{}", config.env.name(), config.strategy, config.seed))
    });
    config.output_dir = Some(dir.clone());
    let outcome = run_experiment(&config)?;
    print!("{}", outcome.csv);
    log::info!("wrote {}", dir.display());
    Ok(())
}

fn compare<T: Scalar>(args: &CompareArgs) -> cdp::Result<()> {
    let mut config = load::<T>(&args.common)?;
    let dir = args
        .output_dir
        .clone()
        .unwrap_or_else(|| args.common.output_root.join(format!("compare_{}", config.env.name())));
    config.output_dir = Some(dir.clone());
    let comparison = run_comparison(&config, &args.strategies, &args.seeds, args.jobs)?;
    print!("{}", comparison.summary_csv());
    for cell in comparison.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("{} seed {} failed: {}", cell.strategy, cell.seed, cell.error.as_deref().unwrap_or_default());
    }
    log::info!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => match a.common.precision {
            Precision::F32 => run::<f32>(a),
            Precision::F64 => run::<f64>(a),
        },
        Command::Compare(a) => match a.common.precision {
            Precision::F32 => compare::<f32>(a),
            Precision::F64 => compare::<f64>(a),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
