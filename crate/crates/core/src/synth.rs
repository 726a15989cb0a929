//! Seeded synthetic data: six-channel inertial recordings for demos, and
//! multimodal feature sets with a known shared class signal.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::series::{LabeledDataset, MultiSeries};

pub const DEMO_CHANNELS: [&str; 6] = ["ax", "ay", "az", "gx", "gy", "gz"];

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSpec {
    pub classes: usize,
    pub per_class: usize,
    pub length: usize,
    pub rate_hz: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 10,
            length: 104,
            rate_hz: 50.0,
            noise: 0.3,
            seed: 7,
        }
    }
}

/// Each class gets its own per-channel frequency and amplitude profile;
/// samples differ by random phase, amplitude jitter and white noise.
pub fn demo_dataset(spec: &DemoSpec) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let profiles: Vec<Vec<(f64, f64)>> = (0..spec.classes)
        .map(|_| {
            (0..6)
                .map(|_| (rng.random_range(0.5..4.0), rng.random_range(0.5..2.0)))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for i in 0..spec.per_class {
        for (class, profile) in profiles.iter().enumerate() {
            let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            let gains: Vec<f64> = (0..6).map(|_| rng.random_range(0.8..1.2)).collect();
            let values = DMatrix::from_fn(spec.length, 6, |t, c| {
                let (freq, amp) = profile[c];
                let time = t as f64 / spec.rate_hz;
                gains[c] * amp * (std::f64::consts::TAU * freq * time + phases[c]).sin()
            });
            let noisy = values.map(|v| v + spec.noise * rng.sample::<f64, _>(StandardNormal));
            samples.push(MultiSeries::new(
                noisy,
                spec.rate_hz,
                DEMO_CHANNELS.iter().map(|s| s.to_string()).collect(),
                Some(class),
                format!("c{class}_s{i:02}"),
            )?);
        }
    }
    LabeledDataset::new(samples, (0..spec.classes).map(|c| format!("class{c}")).collect())
}

/// Write each sample as `<dir>/<sample_id>.csv` and a manifest listing them.
/// Returns the manifest path.
pub fn write_dataset(ds: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rate = ds.samples.first().map_or(50.0, |s| s.rate_hz());
    let mut manifest = String::new();
    for name in &ds.class_names {
        let _ = writeln!(manifest, "class: {name}");
    }
    let _ = writeln!(manifest, "rate_hz: {rate}");
    let _ = writeln!(manifest, "path,label,subject");
    for s in &ds.samples {
        let file = format!("{}.csv", s.sample_id);
        let mut body = s.channel_names().join(",");
        body.push('\n');
        for row in s.values().row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            body.push_str(&cells.join(","));
            body.push('\n');
        }
        let path = dir.join(&file);
        fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        let label = s
            .label
            .ok_or_else(|| Error::InvalidSeries(format!("sample {} has no label", s.sample_id)))?;
        let _ = writeln!(manifest, "{file},{label},{}", s.sample_id);
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Three modalities observing one latent class signal through different
/// linear maps, each with its own independent isotropic noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSpec {
    pub classes: usize,
    pub per_class: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub class_spread: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for MultimodalSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 60,
            latent_dim: 4,
            feature_dim: 20,
            class_spread: 1.0,
            noise: 1.5,
            seed: 2024,
        }
    }
}

pub fn multimodal_features(spec: &MultimodalSpec) -> Result<Vec<FeatureMatrix>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let means = DMatrix::from_fn(spec.classes, spec.latent_dim, |_, _| {
        spec.class_spread * normal(&mut rng)
    });
    let maps: Vec<DMatrix<f64>> = (0..3)
        .map(|_| {
            DMatrix::from_fn(spec.latent_dim, spec.feature_dim, |_, _| normal(&mut rng))
                / (spec.latent_dim as f64).sqrt()
        })
        .collect();
    let n = spec.classes * spec.per_class;
    let labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    let signal = DMatrix::from_fn(n, spec.latent_dim, |i, j| means[(labels[i], j)]);
    ["base", "prewitt", "highboost"]
        .iter()
        .zip(&maps)
        .map(|(tag, map)| {
            let noise = DMatrix::from_fn(n, spec.feature_dim, |_, _| spec.noise * normal(&mut rng));
            FeatureMatrix::new(&signal * map + noise, labels.clone(), *tag)
        })
        .collect()
}
