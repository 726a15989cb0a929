//! End-to-end run: windows -> activity images (three modalities) -> PNG files
//! -> baseline features -> two-stage fusion + SVM over repeated splits.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::classify::{confusion_csv, repeated_split_eval, EvalConfig, FusionMode, RepeatedReport};
use crate::encoders::{ActivityImage, ChannelMode, EncoderConfig, EncoderKind, FilterKind};
use crate::error::{Error, ErrorClass, Result};
use crate::features::{baseline_extract, stack_modalities, FeatureMatrix, MODALITY_ORDER};
use crate::imaging::{
    highboost_modality_with_gain, prewitt_magnitude_modality, prewitt_modality, quantize, read_png, resize_bicubic,
    write_png,
};
use crate::ingest::{export_features, import_features, load_dataset, load_manifest};
use crate::series::{window_series, LabeledDataset};

pub const SEED_ENV: &str = "II_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub encoder: EncoderKind,
    pub window_length: usize,
    pub window_stride: usize,
    pub mtf_bins: usize,
    pub rp_percentile: f64,
    pub channel_mode: ChannelMode,
    pub gray_channel: usize,
    pub prewitt_magnitude: bool,
    pub highboost_gain: f64,
    pub resize_height: usize,
    pub resize_width: usize,
    pub cca_dim: Option<usize>,
    pub cca_ridge: f64,
    pub svm_reg_c: f64,
    pub svm_epochs: usize,
    pub repeats: usize,
    pub train_frac: f64,
    pub seed: u64,
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub features_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let eval = EvalConfig::default();
        Self {
            encoder: enc.kind,
            window_length: crate::encoders::SIGNAL_IMAGE_LENGTH,
            window_stride: crate::encoders::SIGNAL_IMAGE_LENGTH,
            mtf_bins: enc.mtf_bins,
            rp_percentile: enc.rp_percentile,
            channel_mode: enc.channel_mode,
            gray_channel: enc.gray_channel,
            prewitt_magnitude: false,
            highboost_gain: crate::imaging::DEFAULT_HIGH_BOOST_GAIN,
            resize_height: 224,
            resize_width: 224,
            cca_dim: eval.cca_dim,
            cca_ridge: eval.ridge,
            svm_reg_c: eval.reg_c,
            svm_epochs: eval.epochs,
            repeats: eval.repeats,
            train_frac: eval.train_frac,
            seed: eval.seed,
            jobs: None,
            manifest: None,
            output_dir: PathBuf::from("out"),
            features_dir: None,
        }
    }
}

pub const CONFIG_KEYS: [&str; 22] = [
    "encoder",
    "window_length",
    "window_stride",
    "mtf_bins",
    "rp_percentile",
    "channel_mode",
    "gray_channel",
    "prewitt_magnitude",
    "highboost_gain",
    "resize_height",
    "resize_width",
    "cca_dim",
    "cca_ridge",
    "svm_reg_c",
    "svm_epochs",
    "repeats",
    "train_frac",
    "seed",
    "jobs",
    "manifest",
    "output_dir",
    "features_dir",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    /// Parse `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            seen.push(key);
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Set one key from its text form. Call [`PipelineConfig::validate`]
    /// after the last change.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "encoder" => self.encoder = value.parse()?,
            "window_length" => self.window_length = parse_value(key, value)?,
            "window_stride" => self.window_stride = parse_value(key, value)?,
            "mtf_bins" => self.mtf_bins = parse_value(key, value)?,
            "rp_percentile" => self.rp_percentile = parse_value(key, value)?,
            "channel_mode" => self.channel_mode = value.parse()?,
            "gray_channel" => self.gray_channel = parse_value(key, value)?,
            "prewitt_magnitude" => self.prewitt_magnitude = parse_value(key, value)?,
            "highboost_gain" => self.highboost_gain = parse_value(key, value)?,
            "resize_height" => self.resize_height = parse_value(key, value)?,
            "resize_width" => self.resize_width = parse_value(key, value)?,
            "cca_dim" => self.cca_dim = parse_auto(key, value)?,
            "cca_ridge" => self.cca_ridge = parse_value(key, value)?,
            "svm_reg_c" => self.svm_reg_c = parse_value(key, value)?,
            "svm_epochs" => self.svm_epochs = parse_value(key, value)?,
            "repeats" => self.repeats = parse_value(key, value)?,
            "train_frac" => self.train_frac = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "jobs" => self.jobs = parse_auto(key, value)?,
            "manifest" => self.manifest = opt_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "features_dir" => self.features_dir = opt_path(value),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Seed from the environment value, if any. Flags applied afterwards
    /// still win.
    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        match value {
            Some(v) => {
                self.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}: cannot parse '{v}'")))?;
                Ok(())
            }
            None => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.window_length < 2 {
            return fail(format!("window_length {} < 2", self.window_length));
        }
        if self.window_stride < 1 {
            return fail("window_stride must be at least 1".into());
        }
        if self.mtf_bins < 2 || self.mtf_bins > self.window_length {
            return fail(format!(
                "mtf_bins {} must lie in [2, window_length = {}]",
                self.mtf_bins, self.window_length
            ));
        }
        if !(self.rp_percentile > 0.0 && self.rp_percentile <= 100.0) {
            return fail(format!("rp_percentile {} outside (0, 100]", self.rp_percentile));
        }
        if !self.highboost_gain.is_finite() {
            return fail("highboost_gain must be finite".into());
        }
        if self.resize_height == 0 || self.resize_width == 0 {
            return fail("resize dimensions must be positive".into());
        }
        if self.cca_dim == Some(0) {
            return fail("cca_dim must be positive or auto".into());
        }
        if !(self.cca_ridge.is_finite() && self.cca_ridge >= 0.0) {
            return fail(format!("cca_ridge {} must be finite and >= 0", self.cca_ridge));
        }
        if !(self.svm_reg_c.is_finite() && self.svm_reg_c > 0.0) {
            return fail(format!("svm_reg_c {} must be positive", self.svm_reg_c));
        }
        if self.svm_epochs == 0 {
            return fail("svm_epochs must be at least 1".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return fail(format!("train_frac {} outside (0, 1)", self.train_frac));
        }
        if self.jobs == Some(0) {
            return fail("jobs must be positive or auto".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            kind: self.encoder,
            mtf_bins: self.mtf_bins,
            rp_percentile: self.rp_percentile,
            channel_mode: self.channel_mode,
            gray_channel: self.gray_channel,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            fusion: FusionMode::TwoStage,
            cca_dim: self.cca_dim,
            ridge: self.cca_ridge,
            reg_c: self.svm_reg_c,
            epochs: self.svm_epochs,
            repeats: self.repeats,
            train_frac: self.train_frac,
            seed: self.seed,
        }
    }
}

fn auto_or(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_owned(), |d| d.to_string())
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Every key, one per line, in a form [`PipelineConfig::parse`] reads back
/// to an identical value.
impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values = [
            self.encoder.to_string(),
            self.window_length.to_string(),
            self.window_stride.to_string(),
            self.mtf_bins.to_string(),
            self.rp_percentile.to_string(),
            self.channel_mode.to_string(),
            self.gray_channel.to_string(),
            self.prewitt_magnitude.to_string(),
            self.highboost_gain.to_string(),
            self.resize_height.to_string(),
            self.resize_width.to_string(),
            auto_or(self.cca_dim),
            self.cca_ridge.to_string(),
            self.svm_reg_c.to_string(),
            self.svm_epochs.to_string(),
            self.repeats.to_string(),
            self.train_frac.to_string(),
            self.seed.to_string(),
            auto_or(self.jobs),
            path_or_empty(&self.manifest),
            self.output_dir.display().to_string(),
            path_or_empty(&self.features_dir),
        ];
        for (key, value) in CONFIG_KEYS.iter().zip(values) {
            if value.is_empty() {
                writeln!(f, "{key} =")?;
            } else {
                writeln!(f, "{key} = {value}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Encode,
    Extract,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Encode => "encode",
            Stage::Extract => "extract",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn class(&self) -> ErrorClass {
        self.source.class()
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// The three modality images of one window.
#[derive(Debug, Clone)]
pub struct EncodedWindow {
    pub sample_id: String,
    pub window: usize,
    pub label: usize,
    /// Index of the source recording; windows of one recording share it.
    pub group: usize,
    /// Base, Prewitt, high-boost.
    pub images: [ActivityImage; 3],
}

impl EncodedWindow {
    pub fn file_name(&self, filter: FilterKind) -> String {
        let enc = self.images[0].encoder;
        format!("{}_{}_{}_{}.png", self.sample_id, self.window, enc, filter)
    }
}

/// Filter at native resolution, then resize each modality.
pub fn modality_images(base: ActivityImage, cfg: &PipelineConfig) -> Result<[ActivityImage; 3]> {
    let prewitt = if cfg.prewitt_magnitude {
        prewitt_magnitude_modality(&base)
    } else {
        prewitt_modality(&base)
    };
    let boost = highboost_modality_with_gain(&base, cfg.highboost_gain);
    let (h, w) = (cfg.resize_height, cfg.resize_width);
    Ok([
        resize_bicubic(&base, h, w)?,
        resize_bicubic(&prewitt, h, w)?,
        resize_bicubic(&boost, h, w)?,
    ])
}

pub fn encode_dataset(ds: &LabeledDataset, cfg: &PipelineConfig) -> Result<Vec<EncodedWindow>> {
    let enc = cfg.encoder_config();
    let mut jobs = Vec::new();
    for (group, sample) in ds.samples.iter().enumerate() {
        let label = sample
            .label
            .ok_or_else(|| Error::InvalidSeries(format!("sample {} has no label", sample.sample_id)))?;
        for (window, w) in window_series(sample, cfg.window_length, cfg.window_stride)?
            .into_iter()
            .enumerate()
        {
            jobs.push((group, label, window, w));
        }
    }
    jobs.into_par_iter()
        .map(|(group, label, window, w)| {
            let base = crate::encoders::encode_window(&w, &enc)?;
            Ok(EncodedWindow {
                sample_id: w.sample_id.clone(),
                window,
                label,
                group,
                images: modality_images(base, cfg)?,
            })
        })
        .collect()
}

/// Write one PNG per window and modality plus `index.csv`.
pub fn write_images(windows: &[EncodedWindow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    windows.par_iter().try_for_each(|w| -> Result<()> {
        for (img, filter) in w.images.iter().zip(FilterKind::ALL) {
            write_png(img, &dir.join(w.file_name(filter)))?;
        }
        Ok(())
    })?;
    let mut index = String::from("file,sample,window,label,group,encoder,filter\n");
    for w in windows {
        for (img, filter) in w.images.iter().zip(FilterKind::ALL) {
            let _ = writeln!(
                index,
                "{},{},{},{},{},{},{}",
                w.file_name(filter),
                w.sample_id,
                w.window,
                w.label,
                w.group,
                img.encoder,
                filter
            );
        }
    }
    let path = dir.join("index.csv");
    fs::write(&path, index).map_err(|e| Error::io(path, e))
}

/// Pixel values as they come back from an 8-bit PNG.
pub fn quantized(img: &ActivityImage) -> ActivityImage {
    let pixels = img.pixels().iter().map(|&v| f64::from(quantize(v)) / 255.0).collect();
    img.with_pixels(img.height(), img.width(), pixels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub file: String,
    pub sample: String,
    pub window: usize,
    pub label: usize,
    pub group: usize,
    pub encoder: EncoderKind,
    pub filter: FilterKind,
}

pub fn read_index(path: &Path) -> Result<Vec<IndexRow>> {
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(&ctx, format!("{other:?}")),
    })?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(&ctx, e.to_string()))?;
        let [file, sample, window, label, group, encoder, filter] = record.iter().collect::<Vec<_>>()[..] else {
            return Err(Error::format(&ctx, format!("row {}: expected 7 fields", i + 1)));
        };
        let num = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::format(&ctx, format!("row {}: bad number '{v}'", i + 1)))
        };
        rows.push(IndexRow {
            file: file.to_owned(),
            sample: sample.to_owned(),
            window: num(window)?,
            label: num(label)?,
            group: num(group)?,
            encoder: encoder
                .parse()
                .map_err(|_| Error::format(&ctx, format!("bad encoder '{encoder}'")))?,
            filter: filter
                .parse()
                .map_err(|_| Error::format(&ctx, format!("bad filter '{filter}'")))?,
        });
    }
    Ok(rows)
}

/// Baseline features per modality in [`MODALITY_ORDER`], with row labels and
/// group ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedFeatures {
    pub modalities: Vec<FeatureMatrix>,
    pub groups: Vec<usize>,
}

pub fn extract_windows(windows: &[EncodedWindow]) -> Result<ExtractedFeatures> {
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let modalities = (0..3)
        .map(|m| {
            let imgs: Vec<ActivityImage> = windows.par_iter().map(|w| quantized(&w.images[m])).collect();
            baseline_extract(&imgs, &labels, MODALITY_ORDER[m])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtractedFeatures {
        modalities,
        groups: windows.iter().map(|w| w.group).collect(),
    })
}

/// Extract from PNGs listed in an index written by [`write_images`].
pub fn extract_index(index_path: &Path) -> Result<ExtractedFeatures> {
    let dir = index_path.parent().unwrap_or(Path::new("."));
    let rows = read_index(index_path)?;
    let mut modalities = Vec::new();
    let mut groups = None;
    for (m, filter) in FilterKind::ALL.into_iter().enumerate() {
        let picked: Vec<&IndexRow> = rows.iter().filter(|r| r.filter == filter).collect();
        if picked.is_empty() {
            return Err(Error::format(
                index_path.display().to_string(),
                format!("no {} images", filter.modality()),
            ));
        }
        let imgs = picked
            .par_iter()
            .map(|r| read_png(&dir.join(&r.file), r.encoder))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = picked.iter().map(|r| r.label).collect();
        modalities.push(baseline_extract(&imgs, &labels, MODALITY_ORDER[m])?);
        let g: Vec<usize> = picked.iter().map(|r| r.group).collect();
        match &groups {
            None => groups = Some(g),
            Some(prev) if *prev != g => {
                return Err(Error::Alignment("modalities list different windows".into()));
            }
            Some(_) => {}
        }
    }
    Ok(ExtractedFeatures {
        modalities: stack_modalities(modalities)?,
        groups: groups.unwrap_or_default(),
    })
}

pub const GROUPS_FILE: &str = "groups.txt";

pub fn write_features(features: &ExtractedFeatures, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for fm in &features.modalities {
        export_features(fm, &dir.join(format!("{}.itns", fm.modality_tag)))?;
    }
    let groups: String = features.groups.iter().map(|g| format!("{g}\n")).collect();
    let path = dir.join(GROUPS_FILE);
    fs::write(&path, groups).map_err(|e| Error::io(path, e))
}

/// Read `base.itns`, `prewitt.itns` and `highboost.itns` (with label
/// sidecars) from `dir`. Without a groups file each row is its own group.
pub fn read_features(dir: &Path) -> Result<ExtractedFeatures> {
    let modalities = MODALITY_ORDER
        .iter()
        .map(|tag| import_features(&dir.join(format!("{tag}.itns")), tag))
        .collect::<Result<Vec<_>>>()?;
    let modalities = stack_modalities(modalities)?;
    let n = modalities[0].rows();
    let path = dir.join(GROUPS_FILE);
    let groups = match fs::read_to_string(&path) {
        Ok(text) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::format(path.display().to_string(), format!("bad group id '{l}'")))
            })
            .collect::<Result<Vec<_>>>()?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0..n).collect(),
        Err(e) => return Err(Error::io(path, e)),
    };
    Ok(ExtractedFeatures { modalities, groups })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: RepeatedReport,
    pub class_names: Vec<String>,
    pub windows: usize,
}

pub fn report_text(out: &PipelineOutput) -> String {
    let mut s = out.report.to_text();
    let _ = writeln!(s, "windows = {}", out.windows);
    let _ = writeln!(s, "classes = {}", out.class_names.join(" "));
    s
}

/// Run every stage. With `features_dir` set the encode and extract stages
/// are skipped and features are read from there instead.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineOutput, StageError> {
    cfg.validate().at(Stage::Config)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)
        .map_err(|e| Error::io(out, e))
        .at(Stage::Report)?;

    let manifest = match &cfg.manifest {
        Some(p) => Some(load_manifest(p).at(Stage::Ingest)?),
        None => None,
    };
    let features = match &cfg.features_dir {
        Some(dir) => read_features(dir).at(Stage::Extract)?,
        None => {
            let manifest = manifest
                .as_ref()
                .ok_or_else(|| Error::Config("either manifest or features_dir is required".into()))
                .at(Stage::Config)?;
            let ds = load_dataset(manifest).at(Stage::Ingest)?;
            let windows = encode_dataset(&ds, cfg).at(Stage::Encode)?;
            write_images(&windows, &out.join("images")).at(Stage::Encode)?;
            let features = extract_windows(&windows).at(Stage::Extract)?;
            write_features(&features, &out.join("features")).at(Stage::Extract)?;
            features
        }
    };

    let labels = features.modalities[0].labels();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let class_names = match &manifest {
        Some(m) if m.class_names.len() >= k => m.class_names.clone(),
        _ => (0..k).map(|c| format!("class{c}")).collect(),
    };
    let report =
        repeated_split_eval(&features.modalities, Some(&features.groups), k, &cfg.eval_config()).at(Stage::Evaluate)?;
    let output = PipelineOutput {
        report,
        class_names,
        windows: labels.len(),
    };

    let write = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    let seeds: String = output.report.seeds.iter().map(|s| format!("seed {s}\n")).collect();
    write("report.txt", report_text(&output)).at(Stage::Report)?;
    write(
        "confusion.csv",
        confusion_csv(&output.report.confusion, &output.class_names),
    )
    .at(Stage::Report)?;
    write("seeds.log", seeds).at(Stage::Report)?;
    write("config.txt", cfg.to_string()).at(Stage::Report)?;
    Ok(output)
}
