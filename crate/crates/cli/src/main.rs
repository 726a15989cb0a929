use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use actimg_core::classify::{evaluate, svm_predict, svm_train, SvmModel, DEFAULT_EPOCHS, DEFAULT_REG_C};
use actimg_core::encoders::{EncoderKind, FilterKind};
use actimg_core::fusion::{TwoStageCcf, DEFAULT_RIDGE};
use actimg_core::imaging::{
    highboost_modality_with_gain, prewitt_magnitude_modality, prewitt_modality, read_png, write_png,
    DEFAULT_HIGH_BOOST_GAIN,
};
use actimg_core::ingest::{export_features, import_features, load_dataset, load_manifest};
use actimg_core::pipeline::{
    encode_dataset, extract_index, read_features, report_text, run_pipeline, write_features, write_images,
    PipelineConfig, StageError, SEED_ENV,
};
use actimg_core::synth::{demo_dataset, write_dataset, DemoSpec};
use actimg_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "actimg",
    version,
    about = "Activity images from inertial data, CCA fusion and SVM evaluation"
)]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic six-channel dataset and its manifest.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 104)]
        length: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Encode every window of a dataset into base, Prewitt and high-boost PNGs.
    Encode(ConfigArgs),
    /// Apply one spatial filter to a PNG.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// prewitt or highboost
        #[arg(long)]
        filter: String,
        /// Prewitt gradient magnitude instead of the single kernel
        #[arg(long)]
        magnitude: bool,
        #[arg(long, default_value_t = DEFAULT_HIGH_BOOST_GAIN)]
        gain: f64,
    },
    /// Baseline features from an encoded image index, one ITNS file per modality.
    Extract {
        /// index.csv written by `encode`
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage CCA fusion of base/prewitt/highboost features.
    Fuse {
        #[arg(long)]
        features_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Canonical dimension, default min(p, q, n - 1)
        #[arg(long)]
        cca_dim: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_RIDGE)]
        ridge: f64,
    },
    /// Train a one-vs-rest linear SVM on an ITNS feature file.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REG_C)]
        reg_c: f64,
        #[arg(long, default_value_t = DEFAULT_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a trained model on an ITNS feature file.
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Directory for report.txt and confusion.csv
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full run: encode, extract, fuse, and evaluate over repeated splits.
    Pipeline(ConfigArgs),
}

/// Config file plus per-key overrides. Precedence: file < II_SEED < flags.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    features_dir: Option<String>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    window_length: Option<String>,
    #[arg(long)]
    window_stride: Option<String>,
    #[arg(long)]
    mtf_bins: Option<String>,
    #[arg(long)]
    rp_percentile: Option<String>,
    #[arg(long)]
    channel_mode: Option<String>,
    #[arg(long)]
    gray_channel: Option<String>,
    #[arg(long)]
    prewitt_magnitude: Option<String>,
    #[arg(long)]
    highboost_gain: Option<String>,
    #[arg(long)]
    resize_height: Option<String>,
    #[arg(long)]
    resize_width: Option<String>,
    #[arg(long)]
    cca_dim: Option<String>,
    #[arg(long)]
    cca_ridge: Option<String>,
    #[arg(long)]
    svm_reg_c: Option<String>,
    #[arg(long)]
    svm_epochs: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    train_frac: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self, jobs: Option<usize>) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.apply_env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
        let jobs = jobs.map(|j| j.to_string());
        let overrides = [
            ("manifest", &self.manifest),
            ("output_dir", &self.out),
            ("features_dir", &self.features_dir),
            ("encoder", &self.encoder),
            ("window_length", &self.window_length),
            ("window_stride", &self.window_stride),
            ("mtf_bins", &self.mtf_bins),
            ("rp_percentile", &self.rp_percentile),
            ("channel_mode", &self.channel_mode),
            ("gray_channel", &self.gray_channel),
            ("prewitt_magnitude", &self.prewitt_magnitude),
            ("highboost_gain", &self.highboost_gain),
            ("resize_height", &self.resize_height),
            ("resize_width", &self.resize_width),
            ("cca_dim", &self.cca_dim),
            ("cca_ridge", &self.cca_ridge),
            ("svm_reg_c", &self.svm_reg_c),
            ("svm_epochs", &self.svm_epochs),
            ("repeats", &self.repeats),
            ("train_frac", &self.train_frac),
            ("seed", &self.seed),
            ("jobs", &jobs),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Plain(Error),
    Staged(StageError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Plain(e)
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Staged(e)
    }
}

impl Failure {
    fn report(&self) -> (String, ErrorClass) {
        match self {
            Failure::Plain(e) => (e.to_string(), e.class()),
            Failure::Staged(e) => (e.to_string(), e.class()),
        }
    }
}

/// Stdout writes that tolerate a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_owned(),
        source,
    })
}

fn run(cmd: Command, jobs: Option<usize>) -> Result<(), Failure> {
    match cmd {
        Command::Demo {
            out,
            classes,
            per_class,
            length,
            seed,
        } => {
            let spec = DemoSpec {
                classes,
                per_class,
                length,
                seed,
                ..Default::default()
            };
            let manifest = write_dataset(&demo_dataset(&spec)?, &out)?;
            emit(&format!("{}\n", manifest.display()));
        }
        Command::Encode(args) => {
            let cfg = args.resolve(jobs)?;
            if args.print_config {
                emit(&cfg.to_string());
                return Ok(());
            }
            let manifest = cfg
                .manifest
                .as_ref()
                .ok_or_else(|| Error::Config("encode needs --manifest".into()))?;
            let ds = load_dataset(&load_manifest(manifest)?)?;
            let windows = in_pool(cfg.jobs, || encode_dataset(&ds, &cfg))?;
            in_pool(cfg.jobs, || write_images(&windows, &cfg.output_dir))?;
            emit(&format!("{} windows, {} images\n", windows.len(), windows.len() * 3));
        }
        Command::Filter {
            input,
            out,
            filter,
            magnitude,
            gain,
        } => {
            let img = read_png(&input, EncoderKind::Gaf)?;
            let filtered = match filter.parse::<FilterKind>()? {
                FilterKind::None => img,
                FilterKind::Prewitt if magnitude => prewitt_magnitude_modality(&img),
                FilterKind::Prewitt => prewitt_modality(&img),
                FilterKind::HighBoost => highboost_modality_with_gain(&img, gain),
            };
            write_png(&filtered, &out)?;
        }
        Command::Extract { index, out } => {
            let features = in_pool(jobs, || extract_index(&index))?;
            write_features(&features, &out)?;
            emit(&format!(
                "{} rows x {} features per modality\n",
                features.modalities[0].rows(),
                features.modalities[0].dim()
            ));
        }
        Command::Fuse {
            features_dir,
            out,
            cca_dim,
            ridge,
        } => {
            let feats = read_features(&features_dir)?;
            let [a, b, c] = &feats.modalities[..] else {
                return Err(Error::Alignment("expected three modalities".into()).into());
            };
            let model = TwoStageCcf::fit(a, b, c, cca_dim, ridge)?;
            export_features(&model.transform(a, b, c)?, &out)?;
        }
        Command::Train {
            features,
            model,
            reg_c,
            epochs,
            seed,
        } => {
            let fm = import_features(&features, "features")?;
            let svm = in_pool(jobs, || svm_train(&fm, reg_c, epochs, seed))?;
            write_text(&model, &svm.to_text())?;
        }
        Command::Eval { features, model, out } => {
            let fm = import_features(&features, "features")?;
            let text = fs::read_to_string(&model).map_err(|source| match source.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(model.clone()),
                _ => Error::Io {
                    path: model.clone(),
                    source,
                },
            })?;
            let svm = SvmModel::from_text(&text, &model.display().to_string())?;
            let pred = svm_predict(&svm, &fm)?;
            let k = fm.labels().iter().chain(&svm.classes).max().map_or(0, |m| m + 1);
            let report = evaluate(&pred, fm.labels(), k)?;
            let names: Vec<String> = (0..k).map(|c| format!("class{c}")).collect();
            emit(&report.to_text());
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                write_text(&dir.join("report.txt"), &report.to_text())?;
                write_text(&dir.join("confusion.csv"), &report.confusion_csv(&names))?;
            }
        }
        Command::Pipeline(args) => {
            let cfg = args.resolve(jobs)?;
            if args.print_config {
                emit(&cfg.to_string());
                return Ok(());
            }
            let output = in_pool(cfg.jobs, || run_pipeline(&cfg))?;
            emit(&report_text(&output));
        }
    }
    Ok(())
}

fn in_pool<T: Send, E: Send + Into<Failure>>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, E> + Send,
) -> Result<T, Failure> {
    let result = match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    };
    result.map_err(Into::into)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs == Some(0) {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    match run(cli.command, cli.jobs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (msg, class) = f.report();
            eprintln!("error: {msg}");
            ExitCode::from(match class {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
