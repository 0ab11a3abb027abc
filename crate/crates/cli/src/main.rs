use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use optorc::cache::{read_cache, write_cache};
use optorc::classify::write_results;
use optorc::dataset::synth::{generate_dataset, SynthConfig};
use optorc::dataset::{load_manifest, make_split, Manifest, Split};
use optorc::experiment::{evaluate_sequences, fit_readout, run_states, split_sequences, rows_of};
use optorc::hog::HogConfig;
use optorc::pca::{self, fit_pca, transform_features, RowSubset};
use optorc::pipeline::{
    describe_artifacts, extract_features_to, run_pipeline, PipelineConfig, GRID_LOG, GRID_SPEC,
};
use optorc::readout::{self, RidgeLambda};
use optorc::reservoir::{ReservoirSpec, Variant};
use optorc::tuning::{describe_trial, run_grid, GridOptions, GridSpec};
use optorc::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "optorc", version, about = "Quantized photonic reservoir computer for human-action classification")]
struct Cli {
    /// Global seed; overrides the seed of commands and configs that use one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory for commands that produce several files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic six-action dataset (frames and manifest).
    Synth(SynthArgs),
    /// Re-draw the stratified train/test assignment of a manifest.
    Split(SplitArgs),
    /// Compute HOG descriptors for every frame of a manifest.
    ExtractHog(ExtractArgs),
    /// Fit or apply PCA.
    #[command(subcommand)]
    Pca(PcaCommand),
    /// Drive the reservoir with a feature stream.
    #[command(subcommand)]
    Reservoir(ReservoirCommand),
    /// Train the ridge readout on the Train split.
    Train(TrainArgs),
    /// Classify sequences and write the confusion matrix.
    Evaluate(EvaluateArgs),
    /// Exhaustive hyperparameter search.
    Gridsearch(GridArgs),
    /// Run the whole pipeline from a config file.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Summarize a pipeline or grid-search output directory.
    Describe { dir: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    subjects: u32,
    #[arg(long, default_value_t = 4)]
    repetitions: u32,
    #[arg(long, default_value_t = 24)]
    min_frames: usize,
    #[arg(long, default_value_t = 48)]
    max_frames: usize,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    #[arg(long, default_value_t = 3.0)]
    noise: f64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// HOG settings (TOML); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cell side in pixels; overrides the config file.
    #[arg(long)]
    cell: Option<usize>,
    /// Block side in cells.
    #[arg(long)]
    block: Option<usize>,
    /// Orientation bins over [0, 180).
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitOnArg {
    Train,
    All,
}

#[derive(Subcommand)]
enum PcaCommand {
    Fit {
        #[arg(long, alias = "in")]
        features: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Needed to select Train rows.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        pca_fit_on: FitOnArg,
    },
    Transform {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, alias = "in")]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReservoirCommand {
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, alias = "in")]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reset_per_sequence: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Intensity,
    Phase,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Intensity => Variant::Intensity,
            VariantArg::Phase => Variant::Phase,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    states: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `auto` or a non-negative number.
    #[arg(long, default_value = "auto")]
    lambda: RidgeLambda,
    /// Reservoir variant that produced the states.
    #[arg(long, value_enum, default_value = "intensity")]
    variant: VariantArg,
    #[arg(long, default_value_t = 1024)]
    intensity_levels: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    states: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Results directory (defaults to --out-dir or `results`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// PCA-reduced feature cache covering the whole manifest stream.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    resume: bool,
    /// Override the grid's validation fraction.
    #[arg(long)]
    validation_fraction: Option<f64>,
}

#[derive(Subcommand)]
enum PipelineCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Ignore existing caches.
        #[arg(long)]
        rebuild: bool,
    },
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> optorc::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn train_sequences_rows(manifest: &Manifest) -> Vec<usize> {
    rows_of(manifest, &split_sequences(manifest, Split::Train))
}

fn run(cli: &Cli) -> optorc::Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                subjects: a.subjects,
                repetitions: a.repetitions,
                min_frames: a.min_frames,
                max_frames: a.max_frames,
                train_fraction: a.train_fraction,
                noise_sigma: a.noise,
                seed: cli.seed.unwrap_or(SynthConfig::default().seed),
                ..SynthConfig::default()
            };
            let m = generate_dataset(&a.out, &cfg)?;
            let (tr, te) = m.split_counts();
            println!(
                "wrote {} sequences ({tr} train, {te} test), {} frames to {}",
                m.sequences.len(),
                m.frame_count(None),
                a.out.join("manifest.json").display()
            );
        }
        Command::Split(a) => {
            let mut m = load_manifest(&a.manifest)?;
            let seed = cli.seed.unwrap_or(m.split_seed);
            m.sequences = make_split(&m.sequences, a.train_fraction, seed);
            m.split_seed = seed;
            m.save(&a.out)?;
            let (tr, te) = m.split_counts();
            println!("{tr} train, {te} test sequences -> {}", a.out.display());
        }
        Command::ExtractHog(a) => {
            let manifest = load_manifest(&a.manifest)?;
            let mut cfg = match &a.config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    toml::from_str::<HogConfig>(&text).map_err(|e| Error::parse(p, e.to_string()))?
                }
                None => HogConfig::default(),
            };
            cfg.cell_size = a.cell.unwrap_or(cfg.cell_size);
            cfg.block_size = a.block.unwrap_or(cfg.block_size);
            cfg.num_bins = a.bins.unwrap_or(cfg.num_bins);
            let h = extract_features_to(&manifest, &cfg, &a.out)?;
            println!(
                "{} frames x {} features, layout {:?} -> {}",
                h.frame_count,
                h.feature_dim,
                h.layout,
                a.out.display()
            );
        }
        Command::Pca(PcaCommand::Fit {
            features,
            k,
            out,
            manifest,
            pca_fit_on,
        }) => {
            let x = read_cache(features)?;
            let rows: Vec<usize> = match (pca_fit_on, manifest) {
                (FitOnArg::All, _) => (0..x.rows).collect(),
                (FitOnArg::Train, Some(m)) => train_sequences_rows(&load_manifest(m)?),
                (FitOnArg::Train, None) => {
                    return Err(Error::Config(
                        "--pca-fit-on train needs --manifest (or pass --pca-fit-on all)".into(),
                    ))
                }
            };
            if rows.iter().any(|&r| r >= x.rows) {
                return Err(Error::Dimension("manifest streams more frames than the cache holds".into()));
            }
            let model = fit_pca(&RowSubset { inner: &x, indices: &rows }, *k)?;
            pca::save_model(out, &model)?;
            println!(
                "fitted {} -> {} on {} rows, {:.2}% of variance -> {}",
                model.dim(),
                model.k(),
                rows.len(),
                100.0 * model.explained_variance_ratio(),
                out.display()
            );
        }
        Command::Pca(PcaCommand::Transform { model, features, out }) => {
            let model = pca::load_model(model)?;
            let y = transform_features(&model, &read_cache(features)?)?;
            write_cache(out, &y)?;
            println!("{} x {} -> {}", y.rows, y.cols, out.display());
        }
        Command::Reservoir(ReservoirCommand::Run {
            spec,
            features,
            manifest,
            out,
            reset_per_sequence,
        }) => {
            let mut spec = ReservoirSpec::load(spec)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let x = read_cache(features)?;
            if spec.k != x.cols {
                return Err(Error::Dimension(format!(
                    "spec has K = {}, features have {} columns",
                    spec.k, x.cols
                )));
            }
            let manifest = load_manifest(manifest)?;
            let states = run_states(&spec.build()?, &manifest, &x, *reset_per_sequence)?;
            write_cache(out, &states)?;
            println!("{} steps x {} nodes -> {}", states.rows, states.cols, out.display());
        }
        Command::Train(a) => {
            let manifest = load_manifest(&a.manifest)?;
            let states = read_cache(&a.states)?;
            let model = fit_readout(
                &manifest,
                &states,
                &split_sequences(&manifest, Split::Train),
                a.lambda,
                a.variant.into(),
                a.intensity_levels,
            )?;
            readout::save_model(&a.out, &model)?;
            println!(
                "{} x {} readout, lambda {} -> {}",
                model.outputs(),
                model.inputs(),
                model.ridge_lambda,
                a.out.display()
            );
        }
        Command::Evaluate(a) => {
            let manifest = load_manifest(&a.manifest)?;
            let states = read_cache(&a.states)?;
            let model = readout::load_model(&a.model)?;
            let split = match a.split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let ev = evaluate_sequences(&manifest, &states, &model, &split_sequences(&manifest, split))?;
            let dir = a.out.clone().unwrap_or_else(|| out_dir(cli, "results"));
            write_results(&dir, &ev.decisions, &ev.truths, &ev.confusion)?;
            println!("{}", ev.confusion.summary_line());
        }
        Command::Gridsearch(a) => {
            let mut spec = GridSpec::load(&a.grid)?;
            if a.validation_fraction.is_some() {
                spec.validation_fraction = a.validation_fraction;
                spec.validate()?;
            }
            let manifest = load_manifest(&a.manifest)?;
            let features = read_cache(&a.features)?;
            let dir = out_dir(cli, "gridsearch");
            create_dir(&dir)?;
            spec.save(&dir.join(GRID_SPEC))?;
            let options = GridOptions {
                threads: cli.threads,
                log: Some(dir.join(GRID_LOG)),
                resume: a.resume,
            };
            let results = run_grid(&spec, &manifest, &features, &options)?;
            let failed = results.iter().filter(|r| !r.is_ok()).count();
            println!("{} trials ({failed} failed), log {}", results.len(), dir.join(GRID_LOG).display());
            let mut best = String::new();
            for r in results.iter().take(5) {
                let line = describe_trial(r);
                println!("  {line}");
                best.push_str(&line);
                best.push('\n');
            }
            let p = dir.join("best.txt");
            fs::write(&p, best).map_err(|e| Error::io(&p, e))?;
        }
        Command::Pipeline(PipelineCommand::Run { config, rebuild }) => {
            let mut cfg = PipelineConfig::load(config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(d) = &cli.out_dir {
                cfg.out_dir = d.clone();
            }
            if *rebuild {
                cfg.cache_policy = optorc::pipeline::CachePolicy::Rebuild;
            }
            let report = run_pipeline(&cfg)?;
            for s in &report.stages {
                println!("{:<10} {}{}", s.name, s.detail, if s.reused { " (cached)" } else { "" });
            }
            println!("{}", report.confusion.summary_line());
            println!("config digest {}", report.config_digest);
        }
        Command::Describe { dir } => print!("{}", describe_artifacts(dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
