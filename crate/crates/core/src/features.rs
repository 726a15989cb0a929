//! Per-modality feature matrices and the deterministic baseline extractor.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::encoders::ActivityImage;
use crate::error::{Error, Result};
use crate::imaging::resize_bicubic;

/// `n x p` features, one row per sample, with the aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    x: DMatrix<f64>,
    labels: Vec<usize>,
    pub modality_tag: String,
}

impl FeatureMatrix {
    pub fn new(x: DMatrix<f64>, labels: Vec<usize>, modality_tag: impl Into<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidShape(format!("feature matrix {n}x{p}")));
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch(format!("{} labels for {n} rows", labels.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidShape("non-finite feature value".into()));
        }
        Ok(Self {
            x,
            labels,
            modality_tag: modality_tag.into(),
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Vec<usize>) {
        (self.x, self.labels)
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            modality_tag: self.modality_tag.clone(),
        }
    }
}

pub const BASELINE_RESIZE: usize = 56;
pub const BASELINE_POOL: usize = 8;
/// 7 x 7 pooled cells x 3 channels, plus mean and standard deviation per channel.
pub const BASELINE_DIM: usize = (BASELINE_RESIZE / BASELINE_POOL).pow(2) * 3 + 6;

fn baseline_vector(img: &ActivityImage) -> Result<Vec<f64>> {
    let small = resize_bicubic(img, BASELINE_RESIZE, BASELINE_RESIZE)?;
    let cells = BASELINE_RESIZE / BASELINE_POOL;
    let area = (BASELINE_POOL * BASELINE_POOL) as f64;
    let mut out = Vec::with_capacity(BASELINE_DIM);
    for ch in 0..3 {
        for by in 0..cells {
            for bx in 0..cells {
                let mut acc = 0.0;
                for r in by * BASELINE_POOL..(by + 1) * BASELINE_POOL {
                    for c in bx * BASELINE_POOL..(bx + 1) * BASELINE_POOL {
                        acc += small.get(r, c, ch);
                    }
                }
                out.push(acc / area);
            }
        }
    }
    let count = (BASELINE_RESIZE * BASELINE_RESIZE) as f64;
    for ch in 0..3 {
        let vals = small.pixels().iter().skip(ch).step_by(3);
        let mean = vals.clone().sum::<f64>() / count;
        let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        out.push(mean);
        out.push(var.sqrt());
    }
    Ok(out)
}

/// Resize to 56 x 56, average-pool 8 x 8 blocks per channel (147 values,
/// channel-major), then append per-channel mean and standard deviation.
pub fn baseline_extract(images: &[ActivityImage], labels: &[usize], modality_tag: &str) -> Result<FeatureMatrix> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidShape("no images to extract".into()))?;
    let shape = (first.height(), first.width());
    if let Some(bad) = images.iter().find(|i| (i.height(), i.width()) != shape) {
        return Err(Error::Shape(format!(
            "image {} is {}x{}, expected {}x{}",
            bad.source_id,
            bad.height(),
            bad.width(),
            shape.0,
            shape.1
        )));
    }
    let rows: Vec<Vec<f64>> = images.par_iter().map(baseline_vector).collect::<Result<_>>()?;
    let x = DMatrix::from_fn(rows.len(), BASELINE_DIM, |r, c| rows[r][c]);
    FeatureMatrix::new(x, labels.to_vec(), modality_tag)
}

pub const MODALITY_ORDER: [&str; 3] = ["base", "prewitt", "highboost"];

/// Check that the runs describe the same samples. When every tag is one of
/// [`MODALITY_ORDER`] the runs are returned in that order, otherwise as given.
pub fn stack_modalities(runs: Vec<FeatureMatrix>) -> Result<Vec<FeatureMatrix>> {
    let Some(first) = runs.first() else {
        return Err(Error::Alignment("no modalities".into()));
    };
    for run in &runs[1..] {
        if run.rows() != first.rows() {
            return Err(Error::Alignment(format!(
                "{} has {} rows, {} has {}",
                run.modality_tag,
                run.rows(),
                first.modality_tag,
                first.rows()
            )));
        }
        if run.labels() != first.labels() {
            return Err(Error::Alignment(format!(
                "labels of {} differ from {}",
                run.modality_tag, first.modality_tag
            )));
        }
    }
    let rank = |tag: &str| MODALITY_ORDER.iter().position(|m| *m == tag);
    let mut runs = runs;
    if runs.iter().all(|r| rank(&r.modality_tag).is_some()) {
        runs.sort_by_key(|r| rank(&r.modality_tag));
    }
    Ok(runs)
}
