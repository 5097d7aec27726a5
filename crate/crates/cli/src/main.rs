//! `subgoal`: world and dataset generation, model training, static and
//! dynamic evaluation, and result export.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 model missing.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use subgoal_core::config::RunConfig;
use subgoal_core::dataset::{
    cvae_samples, derive_seed, estimator_samples, filter_training_set, generate_problems, label_problems,
    load_dataset, load_problems, save_dataset, save_problems,
};
use subgoal_core::pipeline::{
    eval_dynamic, eval_static, export_results, hard_subset, read_csv, sorted_rows, summarize, write_csv,
    DynamicScenario, EvalContext, EvalMode, EvalRow, Method, Models,
};
use subgoal_core::selection::{Policy, Variant};
use subgoal_core::time_estimator::{Family, TimeEstimatorModel};
use subgoal_core::world::Scene;
use subgoal_core::{CvaeModel, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "subgoal", version, about = "Learned subgoals and time-budgeted subgoal selection for arm planning")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs and default inputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate random obstacle worlds into <out-dir>/worlds.
    GenWorlds {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Generate planning problems and label waypoints with plan-cost samples.
    GenData {
        /// Directory of world files (default <out-dir>/worlds).
        #[arg(long)]
        worlds: Option<PathBuf>,
        /// Number of planning problems.
        #[arg(long)]
        count: Option<usize>,
        /// Planner runs per waypoint and direction.
        #[arg(long)]
        runs: Option<usize>,
        /// Waypoint records, JSON lines (default <out-dir>/data.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Problem file (default <out-dir>/problems.json).
        #[arg(long)]
        problems_out: Option<PathBuf>,
    },
    /// Train the subgoal CVAE on the filtered dataset.
    TrainCvae {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        problems: Option<PathBuf>,
        /// Filter budget in seconds.
        #[arg(long)]
        budget_seconds: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint (default <out-dir>/cvae.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a planning-cost estimator on top of a trained CVAE encoder.
    TrainTime {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        problems: Option<PathBuf>,
        #[arg(long)]
        cvae: Option<PathBuf>,
        #[arg(long, value_enum)]
        family: Option<FamilyArg>,
        /// Weight of the parameter-matching term.
        #[arg(long)]
        w: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint (default <out-dir>/time_<family>.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate variants on static problems and write a results table.
    EvalStatic {
        #[arg(long)]
        problems: Option<PathBuf>,
        #[command(flatten)]
        models: ModelArgs,
        #[command(flatten)]
        select: VariantArgs,
        /// Also run the direct planner.
        #[arg(long)]
        baseline: bool,
        #[arg(long, value_enum, default_value = "subgoal")]
        mode: ModeArg,
        /// Keep only problems that are hard for the direct planner.
        #[arg(long)]
        hard: bool,
        /// Use at most this many problems (after the hard filter).
        #[arg(long)]
        limit: Option<usize>,
        /// Results table (default <out-dir>/results.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the replanning loop among moving obstacles.
    EvalDynamic {
        /// Scenario file; the bundled crossing scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        models: ModelArgs,
        #[command(flatten)]
        select: VariantArgs,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Outcomes with traces (default <out-dir>/dynamic.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the sorted CSV and an SVG summary for a results table.
    Export {
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// CVAE checkpoint (default <out-dir>/cvae.ckpt).
    #[arg(long)]
    cvae: Option<PathBuf>,
    /// Normal estimator (default <out-dir>/time_normal.ckpt if present).
    #[arg(long)]
    time_normal: Option<PathBuf>,
    /// Log-normal estimator (default <out-dir>/time_lognormal.ckpt if present).
    #[arg(long)]
    time_lognormal: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VariantArgs {
    /// Variant names such as B-L-S, G-N-S, B-N, Random, Random-NS.
    #[arg(long = "variant")]
    variants: Vec<String>,
    /// Policy, composed with --family and --no-shaping into a variant.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, value_enum, default_value = "lognormal")]
    family: FamilyArg,
    #[arg(long)]
    no_shaping: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    Normal,
    Lognormal,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Normal => Family::Normal,
            FamilyArg::Lognormal => Family::Lognormal,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PolicyArg {
    Random,
    BestEffort,
    GoalOriented,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Subgoal,
    Goal,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::ModelMissing(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cli: &Cli, given: &Option<PathBuf>, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cli.out_dir.join(default))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    Ok(())
}

fn load_cvae(path: &Path) -> Result<CvaeModel> {
    if !path.exists() {
        return Err(Error::ModelMissing(format!("{} does not exist", path.display())));
    }
    CvaeModel::load(path).map_err(|e| match e {
        Error::ModelMissing(_) => e,
        other => Error::ModelMissing(format!("{}: {other}", path.display())),
    })
}

fn load_estimator(path: &Path) -> Result<TimeEstimatorModel> {
    TimeEstimatorModel::load(path).map_err(|e| Error::ModelMissing(format!("{}: {e}", path.display())))
}

fn load_models(cli: &Cli, args: &ModelArgs) -> Result<Models> {
    let cvae = load_cvae(&out_path(cli, &args.cvae, "cvae.ckpt"))?;
    let optional = |given: &Option<PathBuf>, default: &str| -> Result<Option<TimeEstimatorModel>> {
        match given {
            Some(p) if !p.exists() => Err(Error::ModelMissing(format!("{} does not exist", p.display()))),
            Some(p) => load_estimator(p).map(Some),
            None => {
                let p = cli.out_dir.join(default);
                if p.exists() {
                    load_estimator(&p).map(Some)
                } else {
                    Ok(None)
                }
            }
        }
    };
    Ok(Models {
        cvae,
        normal: optional(&args.time_normal, "time_normal.ckpt")?,
        lognormal: optional(&args.time_lognormal, "time_lognormal.ckpt")?,
    })
}

fn variants(cfg: &RunConfig, args: &VariantArgs) -> Result<Vec<Variant>> {
    let mut out: Vec<Variant> = args.variants.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    if let Some(p) = args.policy {
        let policy = match p {
            PolicyArg::Random => Policy::Random,
            PolicyArg::BestEffort => Policy::BestEffort,
            PolicyArg::GoalOriented => Policy::GoalOriented,
        };
        let shaping = if policy == Policy::Random {
            cfg.eval.random_shaping && !args.no_shaping
        } else {
            !args.no_shaping
        };
        out.push(Variant::new(policy, args.family.into(), shaping));
    }
    Ok(out)
}

fn print_summary(rows: &[EvalRow], t_d: f64) {
    println!("variant    rows  success  <=1x   <=2x   <=4x   mean_cost  std_cost  length");
    for s in summarize(rows, t_d) {
        println!(
            "{:<9} {:>5}  {:>7.3}  {:.3}  {:.3}  {:.3}  {:>9.0}  {:>8.0}  {:>6.2}",
            s.variant, s.rows, s.success_rate, s.within[0], s.within[1], s.within[2], s.mean_cost, s.std_cost, s.mean_length
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let seed = cfg.seed;
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::Io { path: cli.out_dir.clone(), source: e })?;
    match &cli.command {
        Command::GenWorlds { count } => {
            let count = count.unwrap_or(cfg.dataset.worlds);
            let worlds = subgoal_core::dataset::generate_worlds(&cfg.dataset.generator, count, derive_seed(seed, 1))?;
            let dir = cli.out_dir.join("worlds");
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            for w in &worlds {
                Scene { world: w.clone(), movers: Vec::new() }.save(&dir.join(format!("{}.json", w.name)))?;
            }
            println!("wrote {} worlds to {}", worlds.len(), dir.display());
        }
        Command::GenData { worlds, count, runs, out, problems_out } => {
            let dir = out_path(&cli, worlds, "worlds");
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::Io { path: dir.clone(), source: e })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Parse { path: dir, line: 0, message: "no world files".into() });
            }
            let worlds = files.iter().map(|p| Scene::load(p).map(|s| s.world)).collect::<Result<Vec<_>>>()?;
            let robot = cfg.robot()?;
            let params = cfg.planner();
            let problems = generate_problems(
                &robot,
                &worlds,
                count.unwrap_or(cfg.dataset.problems),
                &cfg.dataset.problem,
                &params,
                derive_seed(seed, 2),
            )?;
            let mut label = cfg.label_config();
            if let Some(r) = runs {
                label.runs = *r;
            }
            let records = label_problems(&robot, &problems, &label, &params, derive_seed(seed, 3))?;
            let (data_path, prob_path) = (out_path(&cli, out, "data.jsonl"), out_path(&cli, problems_out, "problems.json"));
            ensure_parent(&data_path)?;
            ensure_parent(&prob_path)?;
            save_problems(&problems, &prob_path)?;
            save_dataset(&records, &data_path)?;
            let kept = filter_training_set(&records, cfg.checks(cfg.dataset.budget_seconds), cfg.dataset.filter).len();
            println!(
                "{} problems -> {}; {} waypoint records ({} within the training budget) -> {}",
                problems.len(),
                prob_path.display(),
                records.len(),
                kept,
                data_path.display()
            );
        }
        Command::TrainCvae { data, problems, budget_seconds, epochs, out } => {
            let records = load_dataset(&out_path(&cli, data, "data.jsonl"))?;
            let problems = load_problems(&out_path(&cli, problems, "problems.json"))?;
            let budget = cfg.checks(budget_seconds.unwrap_or(cfg.dataset.budget_seconds));
            let kept = filter_training_set(&records, budget, cfg.dataset.filter);
            let shape = cfg.cvae_shape();
            let samples = cvae_samples(&kept, &problems, shape.k_max, shape.features.levels)?;
            let mut model = CvaeModel::new(cfg.robot()?, shape, derive_seed(seed, 4))?;
            let hist = model.train(&samples, epochs.unwrap_or(cfg.cvae.epochs), derive_seed(seed, 5), cfg.cvae_train())?;
            let path = out_path(&cli, out, "cvae.ckpt");
            ensure_parent(&path)?;
            model.save(&path)?;
            info!("cvae loss history {hist:?}");
            match (hist.first(), hist.last()) {
                (Some(a), Some(b)) => println!("trained on {} records: loss {a:.4} -> {b:.4}; wrote {}", kept.len(), path.display()),
                _ => println!("no epochs run; wrote {}", path.display()),
            }
        }
        Command::TrainTime { data, problems, cvae, family, w, epochs, out } => {
            let records = load_dataset(&out_path(&cli, data, "data.jsonl"))?;
            let problems = load_problems(&out_path(&cli, problems, "problems.json"))?;
            let base = load_cvae(&out_path(&cli, cvae, "cvae.ckpt"))?;
            let family = family.map(Family::from).unwrap_or(cfg.time.family);
            let rows = estimator_samples(&records, &problems)?;
            let stream = match family {
                Family::Normal => 6,
                Family::Lognormal => 8,
            };
            let mut est = TimeEstimatorModel::new(&base, family, w.unwrap_or(cfg.time.w), &cfg.time.hidden, derive_seed(seed, stream))?;
            let hist = est.train(&rows, epochs.unwrap_or(cfg.time.epochs), derive_seed(seed, stream + 1), cfg.time_train())?;
            let path = out.clone().unwrap_or_else(|| cli.out_dir.join(format!("time_{family}.ckpt")));
            ensure_parent(&path)?;
            est.save(&path)?;
            match (hist.first(), hist.last()) {
                (Some(a), Some(b)) => println!("{family} estimator on {} rows: loss {a:.4} -> {b:.4}; wrote {}", rows.len(), path.display()),
                _ => println!("no epochs run; wrote {}", path.display()),
            }
        }
        Command::EvalStatic { problems, models, select, baseline, mode, hard, limit, out } => {
            let mut methods: Vec<Method> = variants(&cfg, select)?.into_iter().map(Method::Subgoal).collect();
            if *baseline {
                methods.push(Method::Baseline);
            }
            if methods.is_empty() {
                return Err(Error::InvalidArgument("nothing to evaluate: pass --variant, --policy or --baseline".into()));
            }
            let models = load_models(&cli, models)?;
            let ctx = EvalContext::from_config(&cfg)?;
            let mut probs = load_problems(&out_path(&cli, problems, "problems.json"))?;
            if *hard {
                probs = hard_subset(&ctx, &probs, cfg.eval.hard_runs, cfg.checks(cfg.eval.hard_seconds))?;
            }
            if let Some(n) = limit {
                probs.truncate(*n);
            }
            let mode = match mode {
                ModeArg::Subgoal => EvalMode::Subgoal,
                ModeArg::Goal => EvalMode::Goal,
            };
            let mut rows = Vec::new();
            for m in methods {
                rows.extend(eval_static(&ctx, &probs, &models, m, mode)?.into_iter().map(|e| e.row));
            }
            let path = out_path(&cli, out, "results.csv");
            ensure_parent(&path)?;
            write_csv(&sorted_rows(&rows), &path)?;
            println!("{} problems, {} rows -> {}", probs.len(), rows.len(), path.display());
            print_summary(&rows, ctx.budget.t_d);
        }
        Command::EvalDynamic { scenario, models, select, runs, out } => {
            let mut vs = variants(&cfg, select)?;
            if vs.is_empty() {
                vs.push(Variant::new(Policy::GoalOriented, Family::Lognormal, true));
            }
            let models = load_models(&cli, models)?;
            let ctx = EvalContext::from_config(&cfg)?;
            let sc = match scenario {
                Some(p) => DynamicScenario::load(p)?,
                None => DynamicScenario::bundled(),
            };
            let mut docs = Vec::new();
            for v in vs {
                let mut ok = 0;
                for k in 0..*runs {
                    let run_seed = derive_seed(seed, k as u64);
                    let o = eval_dynamic(&ctx, &cfg.sim, &sc, &models, v, run_seed)?;
                    ok += o.success as usize;
                    docs.push(serde_json::json!({ "variant": v.name(), "seed": run_seed, "outcome": o }));
                }
                println!("{}: {ok}/{runs} runs reached the goal collision-free", v.name());
            }
            let path = out_path(&cli, out, "dynamic.json");
            ensure_parent(&path)?;
            let text = serde_json::to_string_pretty(&docs)?;
            std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!("wrote {}", path.display());
        }
        Command::Export { results } => {
            let rows = read_csv(&out_path(&cli, results, "results.csv"))?;
            export_results(&rows, cfg.budget()?.t_d, &cli.out_dir)?;
            println!(
                "wrote {} and {}",
                cli.out_dir.join("results.csv").display(),
                cli.out_dir.join("summary.svg").display()
            );
        }
    }
    Ok(())
}
