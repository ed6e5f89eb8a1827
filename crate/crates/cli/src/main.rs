//! `ppkernel` command-line tool.
//!
//! Exit codes: 0 ok, 2 usage or validation error, 3 I/O failure,
//! 4 basis cache inconsistent with the configuration, 5 numerical failure.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ppkernel::classify::{fit_with_ridge, loocv, predict, write_predictions_csv, DiscriminantKind, PriorPolicy};
use ppkernel::config::PipelineConfig;
use ppkernel::experiments::{
    experiment_scenarios, parse_seeds, render_report, run_scenario, simulate_scenario, write_replicates_csv,
    write_summary_csv, Scenario,
};
use ppkernel::kernel::{embed, export_field};
use ppkernel::mvstats::{full_report, write_results_csv, write_results_json, GroupedFeatures};
use ppkernel::pipeline::FeaturePipeline;
use ppkernel::pointpat::{load_patterns, save_patterns};
use ppkernel::spectral::FeatureTable;
use ppkernel::write_atomic;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ppkernel::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: ppkernel::Error,
    },
}

/// Attaches the input path to errors raised while reading it.
fn reading<T>(path: &Path, r: ppkernel::Result<T>) -> Result<T> {
    r.map_err(|source| match source {
        ppkernel::Error::Io(_) | ppkernel::Error::Csv(_) => CliError::Input {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Core(other),
    })
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) | CliError::Input { source: e, .. } => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &ppkernel::Error) -> u8 {
    use ppkernel::Error as E;
    match e {
        E::InvalidArgument(_)
        | E::Parse { .. }
        | E::OutsideWindow { .. }
        | E::DuplicatePatternId(_)
        | E::KernelMismatch
        | E::GridMismatch
        | E::DimensionMismatch { .. }
        | E::InsufficientData(_) => 2,
        E::Io(_) => 3,
        E::Csv(c) if c.is_io_error() => 3,
        E::Csv(_) => 2,
        E::Json(j) if j.is_io() => 3,
        E::Json(_) => 2,
        E::CacheMismatch(_) => 4,
        E::LoocvFold { source, .. } => core_exit_code(source),
        E::SingularSystem(_) | E::Residual { .. } | E::SingularCovariance { .. } | E::Decomposition(_) => 5,
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ppkernel", version, about = "Kernel-embedding analysis of planar point patterns")]
struct Cli {
    /// Increase log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a labelled scenario, or list the available scenarios.
    Simulate {
        /// Scenario name; `list` prints the available scenarios.
        scenario: String,
        #[command(flatten)]
        params: Params,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed, smooth and project every pattern of a pattern CSV.
    Features {
        patterns: PathBuf,
        #[command(flatten)]
        params: Params,
        /// Directory holding cached eigenbases (overrides `paths.cache`).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Box's M, MANOVA and per-coefficient ANOVA on a feature CSV.
    Anova {
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Fit a discriminant rule; predict a test table or run leave-one-out.
    Classify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, conflicts_with = "loocv", required_unless_present = "loocv")]
        test: Option<PathBuf>,
        #[arg(long)]
        loocv: bool,
        #[arg(long, value_enum, default_value_t = Kind::Lda)]
        kind: Kind,
        #[arg(long, value_enum, default_value_t = Priors::Sample)]
        priors: Priors,
        /// Covariance ridge for exploratory fits (0 disables it).
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
        /// Per-case predictions CSV.
        #[arg(long)]
        out: PathBuf,
        /// Summary CSV (`metric,value`); printed to stdout in any case.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Save the fitted model as JSON.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Re-run a simulation experiment over a list of seeds.
    Reproduce {
        /// `table2` or a single scenario name.
        experiment: String,
        /// Seed list such as `1..10` (inclusive) or `1,4,9`.
        #[arg(long, default_value = "1..10")]
        seeds: String,
        #[command(flatten)]
        params: Params,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a pattern's embedding (or its smoothed version) on the grid.
    ExportField {
        patterns: PathBuf,
        /// Pattern id; defaults to the first pattern.
        #[arg(long)]
        id: Option<String>,
        /// Export the grid-smoothed element instead of the raw embedding.
        #[arg(long)]
        smoothed: bool,
        #[command(flatten)]
        params: Params,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Kind {
    Lda,
    Qda,
}

impl From<Kind> for DiscriminantKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Lda => DiscriminantKind::Linear,
            Kind::Qda => DiscriminantKind::Quadratic,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Priors {
    Sample,
    Equal,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Preset {
    /// sigma 0.05, h 0.02, r 6
    Analysis,
    /// sigma 0.02, h 0.05, r 7
    Experiment,
}

/// Pipeline parameters: preset, then config file, then flags.
#[derive(Args, Debug)]
struct Params {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

impl Params {
    fn resolve(&self, default: Preset) -> Result<PipelineConfig> {
        let base = match self.preset.unwrap_or(default) {
            Preset::Analysis => PipelineConfig::default(),
            Preset::Experiment => PipelineConfig::experiment(),
        };
        let mut cfg = match &self.config {
            Some(path) => reading(path, PipelineConfig::load(path, base))?,
            None => base,
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.r {
            cfg.r = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.h {
            cfg.h = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn build_pipeline(cfg: PipelineConfig, cache: Option<&Path>) -> Result<FeaturePipeline> {
    Ok(match cache.or(cfg.cache_dir.clone().as_deref()).map(Path::to_path_buf) {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            FeaturePipeline::with_cache(cfg, &dir)?.0
        }
        None => FeaturePipeline::new(cfg)?,
    })
}

fn cmd_simulate(scenario: &str, params: &Params, out: Option<&Path>) -> Result<()> {
    if scenario == "list" {
        for s in Scenario::ALL {
            println!("{}\t{}", s.name(), s.description());
        }
        return Ok(());
    }
    let scenario: Scenario = scenario.parse()?;
    let cfg = params.resolve(Preset::Experiment)?;
    let out = out.ok_or_else(|| CliError::Usage("simulate needs --out".into()))?;
    let set = simulate_scenario(scenario, cfg.window, cfg.seed)?;
    save_patterns(&set, out)?;
    info!("wrote {} patterns of {} to {}", set.len(), scenario.name(), out.display());
    Ok(())
}

fn cmd_features(patterns: &Path, params: &Params, cache: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = params.resolve(Preset::Analysis)?;
    let set = reading(patterns, load_patterns(patterns))?;
    if set.window() != &cfg.window {
        return Err(CliError::Usage(format!(
            "pattern window {:?} differs from the configured window {:?}",
            set.window(),
            cfg.window
        )));
    }
    let pipe = build_pipeline(cfg, cache)?;
    let table = pipe.feature_table(&set)?;
    table.write(out)?;
    info!(
        "wrote {} feature rows (r = {}, basis {}) to {}",
        table.len(),
        pipe.config().r,
        pipe.basis().fingerprint(),
        out.display()
    );
    Ok(())
}

fn cmd_anova(features: &Path, out: &Path, json: Option<&Path>) -> Result<()> {
    let data = GroupedFeatures::from_table(&reading(features, FeatureTable::read(features))?)?;
    let results = full_report(&data)?;
    write_results_csv(&results, out)?;
    if let Some(path) = json {
        write_results_json(&results, path)?;
    }
    println!("{:<12} {:>12} {:>8} {:>8} {:>10}", "method", "statistic", "df1", "df2", "p_value");
    for r in &results {
        let df2 = r.df2.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<12} {:>12.4} {:>8} {:>8} {:>10.5}", r.method, r.statistic, r.df1, df2, r.p_value);
    }
    Ok(())
}

struct ClassifyArgs<'a> {
    train: &'a Path,
    test: Option<&'a Path>,
    loocv: bool,
    kind: DiscriminantKind,
    priors: PriorPolicy,
    ridge: f64,
    out: &'a Path,
    summary: Option<&'a Path>,
    model: Option<&'a Path>,
}

fn cmd_classify(a: ClassifyArgs<'_>) -> Result<()> {
    let train_table = reading(a.train, FeatureTable::read(a.train))?;
    let train = GroupedFeatures::from_table(&train_table)?;
    let classes = train.groups().to_vec();

    let (ids, truth, predictions, mode) = if a.loocv {
        if a.ridge > 0.0 {
            return Err(CliError::Usage("--ridge is not supported with --loocv".into()));
        }
        let res = loocv(&train, a.kind, &a.priors)?;
        (train_table.ids, train_table.labels, res.predictions, "loocv")
    } else {
        let test_path = a.test.expect("clap enforces --test or --loocv");
        let test = reading(test_path, FeatureTable::read(test_path))?;
        if test.order() != train.p() {
            return Err(CliError::Usage(format!(
                "test features have {} coefficients, training features {}",
                test.order(),
                train.p()
            )));
        }
        let known: BTreeSet<&str> = classes.iter().map(String::as_str).collect();
        if let Some(bad) = test.labels.iter().flatten().find(|l| !known.contains(l.as_str())) {
            return Err(CliError::Usage(format!("test class `{bad}` does not occur in the training data")));
        }
        let model = fit_with_ridge(&train, a.kind, &a.priors, a.ridge)?;
        if let Some(path) = a.model {
            model.save(path)?;
        }
        let preds = test.rows.iter().map(|x| predict(&model, x)).collect::<ppkernel::Result<Vec<_>>>()?;
        (test.ids, test.labels, preds, "test")
    };

    let labelled: Vec<bool> = truth
        .iter()
        .zip(&predictions)
        .filter_map(|(t, p)| t.as_ref().map(|t| *t == p.label))
        .collect();
    let errors = labelled.iter().filter(|ok| !**ok).count();
    let mut summary = format!("metric,value\nkind,{}\nmode,{mode}\nn,{}\nlabelled,{}\n", a.kind, predictions.len(), labelled.len());
    if !labelled.is_empty() {
        summary.push_str(&format!("errors,{errors}\nerror_rate,{}\n", errors as f64 / labelled.len() as f64));
    }

    write_predictions_csv(a.out, &classes, &ids, &truth, &predictions)?;
    if let Some(path) = a.summary {
        write_atomic(path, |w| std::io::Write::write_all(w, summary.as_bytes()))?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_reproduce(experiment: &str, seeds: &str, params: &Params, out: &Path) -> Result<()> {
    let scenarios = experiment_scenarios(experiment)?;
    let seeds = parse_seeds(seeds)?;
    let cfg = params.resolve(Preset::Experiment)?;
    let pipe = FeaturePipeline::new(cfg)?;
    let summaries = scenarios
        .iter()
        .map(|&s| {
            info!("running {} over {} seeds", s.name(), seeds.len());
            run_scenario(s, &pipe, &seeds)
        })
        .collect::<ppkernel::Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let report = render_report(&summaries, &pipe);
    write_atomic(&out.join("report.md"), |w| std::io::Write::write_all(w, report.as_bytes()))?;
    write_summary_csv(&summaries, &out.join("summary.csv"))?;
    write_replicates_csv(&summaries, &out.join("replicates.csv"))?;
    print!("{report}");
    Ok(())
}

fn cmd_export_field(patterns: &Path, id: Option<&str>, smoothed: bool, params: &Params, out: &Path) -> Result<()> {
    let cfg = params.resolve(Preset::Analysis)?;
    let set = reading(patterns, load_patterns(patterns))?;
    let index = match id {
        Some(id) => (0..set.len())
            .find(|&i| set.pattern_id(i) == id)
            .ok_or_else(|| CliError::Usage(format!("no pattern with id `{id}`")))?,
        None if set.is_empty() => return Err(CliError::Usage("pattern file is empty".into())),
        None => 0,
    };
    let pattern = &set.patterns()[index];
    if smoothed {
        let pipe = FeaturePipeline::new(cfg)?;
        let element = pipe.smooth(pattern)?;
        export_field(&element, pipe.grid(), out)?;
    } else {
        let grid = ppkernel::pointpat::make_grid(cfg.window, cfg.h)?;
        if pattern.window() != &cfg.window {
            return Err(CliError::Usage("pattern window differs from the configured window".into()));
        }
        export_field(&embed(pattern, &cfg.kernel()?), &grid, out)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, params, out } => cmd_simulate(&scenario, &params, out.as_deref()),
        Command::Features {
            patterns,
            params,
            cache,
            out,
        } => cmd_features(&patterns, &params, cache.as_deref(), &out),
        Command::Anova { features, out, json } => cmd_anova(&features, &out, json.as_deref()),
        Command::Classify {
            train,
            test,
            loocv,
            kind,
            priors,
            ridge,
            out,
            summary,
            model,
        } => cmd_classify(ClassifyArgs {
            train: &train,
            test: test.as_deref(),
            loocv,
            kind: kind.into(),
            priors: match priors {
                Priors::Sample => PriorPolicy::SampleProportions,
                Priors::Equal => PriorPolicy::Equal,
            },
            ridge,
            out: &out,
            summary: summary.as_deref(),
            model: model.as_deref(),
        }),
        Command::Reproduce {
            experiment,
            seeds,
            params,
            out,
        } => cmd_reproduce(&experiment, &seeds, &params, &out),
        Command::ExportField {
            patterns,
            id,
            smoothed,
            params,
            out,
        } => cmd_export_field(&patterns, id.as_deref(), smoothed, &params, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
