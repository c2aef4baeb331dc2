use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fcmli::analysis::{self, ThdOptions};
use fcmli::ann::{self, Batch, MlpModel, TrainConfig};
use fcmli::controller::{self, RunScript, TimeSeriesRun};
use fcmli::dataset::{self, Dataset, FeatureVariant, GenerateOptions, SplitSpec};
use fcmli::mpc::CostWeights;
use fcmli::plant;
use fcmli::recipes::{self, RecipeContext, RecipeSettings};
use fcmli::scenarios::{self, ScenarioConfig};

#[derive(Parser)]
#[command(name = "fcmli", version, about = "Flying-capacitor inverter MPC and neural imitation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice of the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for written artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run script (TOML). Overrides the scenario flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in scenario name (nominal, C1..C11, S1..S16).
        #[arg(long, default_value = "nominal")]
        scenario: String,
        #[arg(long, value_enum, default_value_t = ControllerArg::Mpc)]
        controller: ControllerArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "X2")]
        variant: FeatureVariant,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value = "run")]
        name: String,
    },
    /// Generate an expert-labelled dataset.
    GenDataset {
        #[command(flatten)]
        common: Common,
        /// Condition selector, e.g. `C1..C11` or `S2,S4`.
        #[arg(long, default_value = "C1..C11")]
        conditions: String,
        /// Scenario file (TOML, `[[scenario]]` tables) used instead of --conditions.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "X2")]
        variant: FeatureVariant,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        discard: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        lambda1: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda2: f64,
    },
    /// Shuffle and split a dataset 70/15/15.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the classifier on a split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Training configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a model on a labelled dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run a named experiment recipe.
    RunRecipe {
        name: String,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "X2")]
        variant: FeatureVariant,
        /// Recipe settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        conditions: Option<String>,
    },
    /// Harmonic distortion of one channel of a recorded run.
    Thd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "i_a")]
        channel: String,
        #[arg(long, default_value_t = 50.0)]
        f0: f64,
        /// Sample period; defaults to the run's metadata or 1 µs.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 5)]
        cycles: usize,
        #[arg(long, default_value_t = 100)]
        max_harmonic: usize,
    },
    /// Comparison table over recorded runs.
    Compare {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        cycles: usize,
        #[arg(long, default_value_t = 100)]
        max_harmonic: usize,
        /// Run CSV files, each with its metadata sidecar.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Mpc,
    Ann,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            config,
            scenario,
            controller,
            model,
            variant,
            duration,
            name,
        } => {
            let script = match config {
                Some(path) => RunScript::load(&path).with_context(|| format!("reading {}", path.display()))?,
                None => {
                    let mut sc = scenarios::builtin(&scenario)?.with_seed(common.seed);
                    if let Some(d) = duration {
                        sc = sc.with_duration(d);
                    }
                    match controller {
                        ControllerArg::Mpc => RunScript::mpc(sc),
                        ControllerArg::Ann => {
                            let Some(model) = model else { bail!("--controller ann needs --model") };
                            RunScript::ann(sc, model, variant)
                        }
                    }
                }
            };
            std::fs::create_dir_all(&common.out)?;
            let run = controller::run_closed_loop(&script)?;
            let (csv, meta) = run.save(&common.out, &name)?;
            println!("{}", csv.display());
            println!("{}", meta.display());
            if let Some(d) = &run.meta.diagnostic {
                bail!("simulation diverged: {d}");
            }
        }
        Command::GenDataset {
            common,
            conditions,
            config,
            variant,
            duration,
            discard,
            lambda1,
            lambda2,
        } => {
            let mut list: Vec<ScenarioConfig> = match config {
                Some(path) => scenarios::load_file(&path).with_context(|| format!("reading {}", path.display()))?,
                None => scenarios::select(&conditions)?,
            };
            for sc in &mut list {
                sc.seed = common.seed;
                if let Some(d) = duration {
                    sc.duration = d;
                }
                if let Some(d) = discard {
                    sc.discard = d;
                }
            }
            let opts = GenerateOptions {
                weights: CostWeights::new(lambda1, lambda2)?,
                seed: common.seed,
                ..GenerateOptions::new(variant)
            };
            let generated = dataset::generate_dataset(&list, &opts)?;
            std::fs::create_dir_all(&common.out)?;
            let data = common.out.join("dataset.csv");
            let manifest = common.out.join("manifest.toml");
            generated.dataset.save_csv(&data)?;
            generated.manifest.save(&manifest)?;
            println!("{} records -> {}", generated.dataset.len(), data.display());
            println!("{}", manifest.display());
            let aborted: Vec<&str> = generated
                .manifest
                .scenarios
                .iter()
                .filter(|s| s.diagnostic.is_some())
                .map(|s| s.config.id.as_str())
                .collect();
            if !aborted.is_empty() {
                bail!("aborted scenarios: {}", aborted.join(", "));
            }
        }
        Command::Split { common, input } => {
            let data = Dataset::load_csv(&input).with_context(|| format!("reading {}", input.display()))?;
            let (tr, va, te) = dataset::split_dataset(&data, &SplitSpec::with_seed(common.seed))?;
            std::fs::create_dir_all(&common.out)?;
            for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
                let path = common.out.join(format!("{name}.csv"));
                part.save_csv(&path)?;
                println!("{name}: {} -> {}", part.len(), path.display());
            }
        }
        Command::Train {
            common,
            train,
            val,
            test,
            config,
        } => {
            let mut cfg: TrainConfig = match config {
                Some(path) => toml::from_str(&std::fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                None => TrainConfig::default(),
            };
            cfg.seed = common.seed;
            let tr = Dataset::load_csv(&train)?;
            let va = Dataset::load_csv(&val)?;
            let (model, mut report) = ann::train(&tr, &va, &cfg)?;
            if let Some(test) = test {
                let te = Dataset::load_csv(&test)?;
                report.instances.test = te.len() as u64;
                report.test = Some(ann::evaluate(&model, &Batch::from_dataset(&te, &model.norm)));
            }
            std::fs::create_dir_all(&common.out)?;
            let model_path = common.out.join("model.txt");
            let report_path = common.out.join("report.toml");
            model.save(&model_path)?;
            std::fs::write(&report_path, report.to_toml()?)?;
            println!(
                "hidden {} val error {:.4} at epoch {} ({})",
                report.best_hidden, report.best_val_error, report.best_epoch, report.optimizer
            );
            if let Some(t) = &report.test {
                println!("test accuracy {:.4}", t.accuracy);
            }
            println!("{}", model_path.display());
        }
        Command::Eval { common, model, input } => {
            let model = MlpModel::load(&model).with_context(|| format!("reading {}", model.display()))?;
            let data = Dataset::load_csv(&input)?;
            if data.variant != model.variant {
                bail!("dataset variant {} does not match model variant {}", data.variant, model.variant);
            }
            let report = ann::evaluate(&model, &Batch::from_dataset(&data, &model.norm));
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("eval.toml");
            std::fs::write(&path, toml::to_string(&report)?)?;
            println!("accuracy {:.4} over {} records", report.accuracy, report.total);
            println!("{}", path.display());
        }
        Command::RunRecipe {
            name,
            common,
            model,
            variant,
            config,
            conditions,
        } => {
            let mut settings = match config {
                Some(path) => RecipeSettings::load(&path).with_context(|| format!("reading {}", path.display()))?,
                None => RecipeSettings::default(),
            };
            if let Some(c) = conditions {
                settings.conditions = c;
            }
            let ctx = RecipeContext {
                out_dir: common.out,
                seed: common.seed,
                model,
                variant,
                settings,
            };
            let out = recipes::run_recipe(&name, &ctx)?;
            print!("{}", out.summary);
            for a in &out.artifacts {
                println!("{}", a.display());
            }
        }
        Command::Thd {
            input,
            channel,
            f0,
            dt,
            cycles,
            max_harmonic,
        } => {
            let dt = dt.unwrap_or_else(|| sidecar_period(&input).unwrap_or(plant::SystemParams::default().plant_substep));
            let (_, values) = plant::read_csv_channel(&input, &channel)?;
            let report = analysis::thd(&values, dt, f0, cycles, max_harmonic)?;
            print!("{}", toml::to_string(&report)?);
        }
        Command::Compare {
            out,
            cycles,
            max_harmonic,
            runs,
        } => {
            let loaded = runs
                .iter()
                .map(|p| TimeSeriesRun::load(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let rows = analysis::compare_runs(&loaded, &ThdOptions { cycles, max_harmonic })?;
            match out {
                Some(path) => {
                    analysis::save_comparison_csv(&rows, &path)?;
                    println!("{}", path.display());
                }
                None => analysis::write_comparison_csv(&rows, std::io::stdout())?,
            }
        }
    }
    Ok(())
}

/// Sample period from the metadata sidecar of a run CSV, if there is one.
fn sidecar_period(csv: &Path) -> Option<f64> {
    let stem = csv.file_stem()?.to_str()?;
    let text = std::fs::read_to_string(csv.with_file_name(format!("{stem}.meta.toml"))).ok()?;
    let meta: controller::RunMeta = toml::from_str(&text).ok()?;
    Some(meta.sample_period)
}
