use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use richpref::active::SelectionMode;
use richpref::formats::{answer_log_from_str, load_pool, save_pool};
use richpref::querygen::{build_pool_from_config, PoolConfig};
use richpref::runner::{
    read_belief_records, scatter, write_outputs, write_scatter_csv, Experiment, ExperimentConfig,
};
use richpref::simuser::{estimate_betas, BetaGrid, BetaPreset};
use richpref::{Rationality, RewardWeights};
use richpref_service::{ServiceConfig, SessionManager};

#[derive(Parser)]
#[command(
    name = "richpref",
    version,
    about = "Active reward learning from comparison and feature queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query pool commands.
    Pool {
        #[command(subcommand)]
        command: PoolCommand,
    },
    /// Run simulated learning sessions and write result tables.
    Run(RunArgs),
    /// Estimate comparison and feature rationality from an answer log.
    EstimateBeta(EstimateArgs),
    /// Export (dot with ground truth, probability) pairs from final beliefs.
    Scatter(ScatterArgs),
    /// Serve the session API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum PoolCommand {
    /// Build a pool and write it as JSON.
    Build(PoolArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolPreset {
    Desk,
    Full,
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: PoolPreset,
    /// Start from a PoolConfig JSON file instead of a preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    environments: Option<usize>,
    #[arg(long)]
    rewards: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Minimum position gap (lane widths) between paired trajectories.
    #[arg(long)]
    min_separation: Option<f64>,
    #[arg(long)]
    order_variants: Option<bool>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentPreset {
    /// Perfect users, rich vs comparison-only.
    Oracle,
    /// Noisy users with beta_f = 2.5.
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum BetaCPreset {
    /// 1.6 comparison-only, 5.65 rich.
    Pilot,
    /// 2 comparison-only, 5 rich.
    Second,
    /// 5 comparison-only, 2 rich.
    SecondAsLabeled,
}

impl BetaCPreset {
    fn preset(self) -> BetaPreset {
        match self {
            BetaCPreset::Pilot => BetaPreset::pilot(),
            BetaCPreset::Second => BetaPreset::figure(),
            BetaCPreset::SecondAsLabeled => BetaPreset::figure_as_labeled(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    /// 10 ground truths, 20 repetitions for noisy users.
    Desk,
    /// 20 ground truths, 100 repetitions for noisy users.
    Full,
}

fn parse_rationality(s: &str) -> Result<Rationality, String> {
    if matches!(s, "inf" | "infinity" | "∞") {
        return Ok(Rationality::INFINITE);
    }
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    Rationality::new(v).map_err(|e| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, value_enum, default_value = "noisy")]
    preset: ExperimentPreset,
    #[arg(long, value_enum, default_value = "pilot")]
    beta_c: BetaCPreset,
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    /// Start from an ExperimentConfig JSON file instead of a preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated: rich, comparison_only, rich_with_skip.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<SelectionMode>>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    ground_truths: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    hypotheses: Option<usize>,
    #[arg(long)]
    test_environments: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature rationality assumed by the learner.
    #[arg(long, value_parser = parse_rationality)]
    model_beta_f: Option<Rationality>,
    /// Feature rationality of the simulated users.
    #[arg(long, value_parser = parse_rationality)]
    user_beta_f: Option<Rationality>,
    /// Skip band assumed by skip-aware selection.
    #[arg(long)]
    model_epsilon: Option<f64>,
    /// Skip band of the simulated users; 0 disables skipping.
    #[arg(long)]
    user_epsilon: Option<f64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Answer log file.
    #[arg(long)]
    log: PathBuf,
    /// The answerer's reward weights, seven comma-separated numbers
    /// (normalized to unit length).
    #[arg(long, value_delimiter = ',', required = true)]
    theta: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    grid_min: f64,
    #[arg(long, default_value_t = 1e3)]
    grid_max: f64,
    #[arg(long, default_value_t = 4000)]
    grid_points: usize,
}

#[derive(Args)]
struct ScatterArgs {
    /// beliefs.jsonl from a run directory.
    #[arg(long)]
    beliefs: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Pool to serve, as NAME=PATH. Repeatable.
    #[arg(long = "pool", required = true)]
    pools: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory for session logs; sessions are in-memory only without it.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    budget: usize,
    #[arg(long, default_value_t = 500)]
    hypotheses: usize,
    #[arg(long, default_value_t = 1)]
    hypothesis_seed: u64,
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn pool_build(a: PoolArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<PoolConfig>(p)?,
        None => match a.preset {
            PoolPreset::Desk => PoolConfig::desk(),
            PoolPreset::Full => PoolConfig::full(),
        },
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.environments {
        cfg.environments = v;
    }
    if let Some(v) = a.rewards {
        cfg.rewards = v;
    }
    if let Some(v) = a.pool_size {
        cfg.pairing.pool_size = v;
    }
    if let Some(v) = a.min_separation {
        cfg.pairing.min_separation = v;
    }
    if let Some(v) = a.order_variants {
        cfg.pairing.order_variants = v;
    }
    let pool = build_pool_from_config(&cfg)?;
    save_pool(&a.out, &pool)?;
    println!(
        "wrote {} queries over {} environments to {} (config hash {})",
        pool.len(),
        pool.environments.len(),
        a.out.display(),
        pool.provenance.config_hash
    );
    Ok(ExitCode::SUCCESS)
}

fn experiment_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => {
            let mut c = match a.preset {
                ExperimentPreset::Oracle => ExperimentConfig::oracle(),
                ExperimentPreset::Noisy => ExperimentConfig::noisy(a.beta_c.preset()),
            };
            if let Scale::Full = a.scale {
                c.ground_truths = 20;
                if let ExperimentPreset::Noisy = a.preset {
                    c.repetitions = 100;
                }
            }
            c
        }
    };
    if let Some(m) = &a.modes {
        cfg.modes = m.clone();
    }
    macro_rules! set {
        ($($field:ident).+ = $v:expr) => {
            if let Some(v) = $v {
                cfg.$($field).+ = v;
            }
        };
    }
    set!(budget = a.budget);
    set!(ground_truths = a.ground_truths);
    set!(repetitions = a.repetitions);
    set!(hypotheses = a.hypotheses);
    set!(test_environments = a.test_environments);
    set!(seed = a.seed);
    set!(model.beta_f = a.model_beta_f);
    set!(user.beta_f = a.user_beta_f);
    set!(model.epsilon = a.model_epsilon);
    set!(user.epsilon = a.user_epsilon);
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let cfg = experiment_config(&a)?;
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(out) = &a.out else {
        bail!("--out is required unless --print-config is given")
    };
    let pool = load_pool(&a.pool).with_context(|| format!("loading {}", a.pool.display()))?;
    let exp = Experiment::new(cfg, &pool)?;
    let result = exp.run_suite();
    write_outputs(out, &exp, &result)?;
    for mode in &exp.config.modes {
        let mut line = format!("{mode}:");
        for metric in ["p_gt", "close_mass", "map_dot_gt", "regret"] {
            let v = result.final_values(*mode, metric);
            if !v.is_empty() {
                line.push_str(&format!(
                    " {metric} median {:.4}",
                    richpref::math::median(&v)
                ));
            }
        }
        println!("{line}");
    }
    println!(
        "{} runs, {} failed; tables in {}",
        result.runs.len() + result.failures.len(),
        result.failures.len(),
        out.display()
    );
    if result.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &result.failures {
            eprintln!(
                "failed: mode {} gt {} rep {}: {}",
                f.mode, f.gt, f.rep, f.error
            );
        }
        Ok(ExitCode::FAILURE)
    }
}

fn estimate(a: EstimateArgs) -> Result<ExitCode> {
    let text =
        fs::read_to_string(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let log = answer_log_from_str(&text)?;
    let values: [f64; 7] = a
        .theta
        .as_slice()
        .try_into()
        .context("--theta needs seven values")?;
    let theta = RewardWeights::normalized(values)?;
    let grid = BetaGrid {
        min: a.grid_min,
        max: a.grid_max,
        points: a.grid_points,
    };
    let (c, f) = estimate_betas(&log, &theta, &grid)?;
    let out = serde_json::json!({
        "answers": log.len(),
        "beta_c": c,
        "beta_f": match f {
            Ok(f) => serde_json::to_value(f)?,
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        },
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn scatter_cmd(a: ScatterArgs) -> Result<ExitCode> {
    let f =
        fs::File::open(&a.beliefs).with_context(|| format!("opening {}", a.beliefs.display()))?;
    let records = read_belief_records(BufReader::new(f))?;
    let rows = scatter(&records)?;
    write_scatter_csv(fs::File::create(&a.out)?, &rows)?;
    println!(
        "wrote {} rows for {} runs to {}",
        rows.len(),
        records.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> Result<ExitCode> {
    let mut pools = Vec::new();
    for spec in &a.pools {
        let Some((name, path)) = spec.split_once('=') else {
            bail!("--pool expects NAME=PATH, got {spec:?}")
        };
        let pool = load_pool(path.as_ref()).with_context(|| format!("loading {path}"))?;
        pools.push((name.to_string(), pool));
    }
    let cfg = ServiceConfig {
        default_budget: a.budget,
        hypotheses: a.hypotheses,
        hypothesis_seed: a.hypothesis_seed,
        data_dir: a.data_dir,
        ..ServiceConfig::default()
    };
    let (manager, skipped) = SessionManager::open(cfg, pools)?;
    for (id, e) in &skipped {
        eprintln!("session {id} not loaded: {e}");
    }
    println!("listening on http://{}", a.addr);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(richpref_service::serve(Arc::new(manager), a.addr))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pool {
            command: PoolCommand::Build(a),
        } => pool_build(a),
        Command::Run(a) => run(a),
        Command::EstimateBeta(a) => estimate(a),
        Command::Scatter(a) => scatter_cmd(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
