use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use learnerlab::data::SynthKind;
use learnerlab::harness::config::strategy_from_kind;
use learnerlab::harness::{collapse_cmd, compare, count_params_cmd, train, Overrides, RunConfig};
use learnerlab::learner::LearnerInit;
use learnerlab::strategy::StrategySpec;
use learnerlab::{Error, Result};

#[derive(Parser)]
#[command(name = "learnerlab", version, about = "Learner modules, priming and baseline fine-tuning strategies on a micro transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over its seeds.
    Train {
        /// TOML run config; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Train several configurations on the same data and seeds and merge their curves.
    Compare {
        /// TOML run configs, one per method (at least two).
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Output directory for merged results.
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
        /// Comma-separated seeds applied to every config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Also write a gnuplot script for the epoch curves.
        #[arg(long)]
        plot: bool,
    },
    /// Fold learner modules into their host weights.
    Collapse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Seed for the random probe batches.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter totals and trained counts per phase.
    CountParams {
        #[arg(long, default_value = "micro")]
        preset: String,
        #[arg(long, default_value = "full")]
        strategy: String,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        priming: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        /// Write the CSV here instead of after the table on stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    name: Option<String>,
    /// full | bitfit | freeze_ffns | adapter_sequential | adapter_parallel | learner
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    priming: Option<usize>,
    #[arg(long, value_parser = parse_init)]
    learner_init: Option<LearnerInit>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Synthetic task: parity | keyword | linear_regression
    #[arg(long, value_parser = parse_task)]
    task: Option<SynthKind>,
    #[arg(long)]
    n_examples: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_checkpoints: bool,
    /// Checkpoint at the start of every epoch.
    #[arg(long)]
    epoch_checkpoints: bool,
}

fn parse_init(s: &str) -> std::result::Result<LearnerInit, String> {
    match s.replace('-', "_").as_str() {
        "random_p1" => Ok(LearnerInit::RandomP1),
        "zero" => Ok(LearnerInit::Zero),
        other => Err(format!("unknown learner init {other:?} (random_p1 or zero)")),
    }
}

fn parse_task(s: &str) -> std::result::Result<SynthKind, String> {
    s.replace('-', "_").parse().map_err(|e: Error| e.to_string())
}

impl RunFlags {
    fn overrides(self) -> Overrides {
        Overrides {
            preset: self.preset,
            name: self.name,
            strategy: self.strategy,
            rank: self.rank,
            priming: self.priming,
            learner_init: self.learner_init,
            hidden: self.hidden,
            scale: self.scale,
            epochs: self.epochs,
            seeds: self.seeds,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            task: self.task,
            n_examples: self.n_examples,
            data_seed: self.data_seed,
            output_dir: self.out,
            no_checkpoints: self.no_checkpoints,
            epoch_checkpoints: self.epoch_checkpoints,
        }
    }
}

fn load_or_default(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn count_spec(
    strategy: &str,
    rank: Option<usize>,
    priming: Option<usize>,
    hidden: Option<usize>,
    scale: Option<f64>,
) -> Result<StrategySpec> {
    let mut cfg = RunConfig {
        strategy: strategy_from_kind(strategy)?,
        ..RunConfig::default()
    };
    cfg.apply_overrides(&Overrides {
        rank,
        priming,
        hidden,
        scale,
        ..Overrides::default()
    })?;
    Ok(cfg.strategy)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, run } => {
            let mut cfg = load_or_default(config.as_ref())?;
            cfg.apply_overrides(&run.overrides())?;
            let out = train(&cfg)?;
            println!("{}: {} seed(s) -> {}", cfg.label(), out.records.len(), out.output_dir.display());
            for r in &out.records {
                let acc = r
                    .metric(cfg.epochs - 1, "train", "accuracy")
                    .map_or(String::new(), |a| format!(" train_accuracy {a:.4}"));
                let dev = r
                    .collapse_deviation
                    .map_or(String::new(), |d| format!(" collapse_deviation {d:e}"));
                println!("  seed {} final_loss {:.6}{acc}{dev}", r.seed, r.final_loss());
            }
            for t in out.records.first().map_or(&[][..], |r| &r.transitions[..]) {
                println!("  epoch {}: trained {} -> {}", t.epoch, t.old_trained, t.new_trained);
            }
        }
        Command::Compare {
            configs,
            out,
            seeds,
            epochs,
            plot,
        } => {
            let mut runs = Vec::with_capacity(configs.len());
            for path in &configs {
                let mut cfg = RunConfig::load(path)?;
                cfg.apply_overrides(&Overrides {
                    seeds: seeds.clone(),
                    epochs,
                    ..Overrides::default()
                })?;
                runs.push(cfg);
            }
            let report = compare(&runs, &out, plot)?;
            print!("{}", report.table());
            println!("results in {}", out.display());
        }
        Command::Collapse { input, output, seed } => {
            let r = collapse_cmd(&input, &output, seed)?;
            println!(
                "collapsed {} learners: {} -> {} params (baseline {}), max relative deviation {:e} over {} batches",
                r.learners, r.params_before, r.params_after, r.baseline_total, r.max_relative_deviation, r.batches
            );
        }
        Command::CountParams {
            preset,
            strategy,
            rank,
            priming,
            hidden,
            scale,
            epochs,
            csv,
        } => {
            let spec = count_spec(&strategy, rank, priming, hidden, scale)?;
            let table = count_params_cmd(&preset, &spec, epochs)?;
            print!("{}", table.text());
            match csv {
                Some(path) => fs::write(&path, table.csv()).map_err(|e| Error::Io { path, source: e })?,
                None => print!("\n{}", table.csv()),
            }
            if !table.all_pass() {
                return Err(Error::Tolerance("parameter counts outside published tolerance".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
