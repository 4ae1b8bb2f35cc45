use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retecs::agents::AgentKind;
use retecs::dataset::{load_dataset, synth_generate, write_canonical, LogFormat, SynthConfig};
use retecs::experiment::{compare_on, run_experiment_on, ExperimentConfig, DEFAULT_GROUP_SIZE};
use retecs::report::{write_comparison, write_run};
use retecs::rewards::RewardFunction;
use retecs::{Error, Result};

#[derive(Parser)]
#[command(
    name = "retecs",
    version,
    about = "Learned test case prioritization replayed over CI logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print test, commit, execution and failure counts of a log.
    Stats {
        path: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: LogFormat,
    },
    /// Generate a synthetic history in the canonical format.
    Synth(SynthArgs),
    /// Replay a log with one agent and write results.
    Run(RunArgs),
    /// Replay a log with one agent and several baselines, writing grouped differences.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Agent to compare against; repeatable.
        #[arg(long = "baseline", required = true)]
        baselines: Vec<AgentKind>,
        #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
        group_size: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tests: Option<usize>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    fail_fraction: Option<f64>,
    #[arg(long)]
    flip: Option<f64>,
    #[arg(long)]
    min_duration: Option<f64>,
    #[arg(long)]
    max_duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with experiment settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    format: Option<LogFormat>,
    #[arg(long)]
    agent: Option<AgentKind>,
    #[arg(long)]
    reward: Option<RewardFunction>,
    /// History length H.
    #[arg(long)]
    history: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    noise_decay: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
            }
            None => ExperimentConfig::default(),
        };
        let ac = &mut cfg.agent_config;
        macro_rules! apply {
            ($field:expr, $target:expr) => {
                if let Some(v) = $field.clone() {
                    $target = v;
                }
            };
        }
        apply!(self.reward, ac.reward);
        apply!(self.history, ac.history_length);
        apply!(self.hidden, ac.hidden_layers);
        apply!(self.noise, ac.noise_std);
        apply!(self.noise_decay, ac.noise_decay);
        apply!(self.learning_rate, ac.train.learning_rate);
        apply!(self.seed, ac.seed);
        apply!(self.format, cfg.format);
        apply!(self.agent, cfg.agent);
        apply!(self.budget, cfg.budget_ratio);
        apply!(self.iterations, cfg.iterations);
        if self.dataset.is_some() {
            cfg.dataset = self.dataset.clone();
        }
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        cfg.validate()?;
        if cfg.dataset.is_none() {
            return Err(Error::Config(
                "a dataset is required (--dataset or config file)".into(),
            ));
        }
        if cfg.output_dir.is_none() {
            return Err(Error::Config(
                "an output directory is required (--out or config file)".into(),
            ));
        }
        Ok(cfg)
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        test_count: args.tests.unwrap_or(d.test_count),
        cycle_count: args.cycles.unwrap_or(d.cycle_count),
        always_fail_fraction: args.fail_fraction.unwrap_or(d.always_fail_fraction),
        noise_flip_probability: args.flip.unwrap_or(d.noise_flip_probability),
        min_duration: args.min_duration.unwrap_or(d.min_duration),
        max_duration: args.max_duration.unwrap_or(d.max_duration),
        seed: args.seed.unwrap_or(d.seed),
    };
    let dataset = synth_generate(&cfg)?;
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let mut w = io::BufWriter::new(file);
            write_canonical(&dataset, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })
        }
        None => write_canonical(&dataset, io::stdout().lock()).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { path, format } => {
            let ds = load_dataset(&path, format)?;
            println!("{}", retecs::DatasetStats::CSV_HEADER);
            println!("{}", ds.stats().csv_row(ds.name()));
            Ok(())
        }
        Command::Synth(args) => synth(&args),
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let dataset = cfg.load_dataset()?;
            let result = run_experiment_on(&cfg, &dataset)?;
            let out = cfg.output_dir.as_ref().expect("resolved");
            write_run(out, &result)?;
            if let Some(t) = result.trend {
                eprintln!(
                    "{}: {} cycles x {} iterations, trend slope {:.6}, intercept {:.4}",
                    cfg.label(),
                    result.mean.len(),
                    cfg.iterations,
                    t.slope,
                    t.intercept
                );
            }
            Ok(())
        }
        Command::Compare {
            run,
            baselines,
            group_size,
        } => {
            let cfg = run.resolve()?;
            let baseline_cfgs: Vec<ExperimentConfig> = baselines
                .iter()
                .map(|&agent| ExperimentConfig {
                    agent,
                    ..cfg.clone()
                })
                .collect();
            let dataset = cfg.load_dataset()?;
            let result = compare_on(&cfg, &baseline_cfgs, &dataset, group_size)?;
            let out = cfg.output_dir.as_ref().expect("resolved");
            write_comparison(out, &result, group_size)?;
            for b in &result.baselines {
                eprintln!(
                    "{} vs {}: {} groups",
                    b.baseline.config.label(),
                    cfg.label(),
                    b.groups.len()
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = serde_json::to_string(&e.to_string()).unwrap_or_default();
            eprintln!("error kind={} message={message}", e.kind());
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
