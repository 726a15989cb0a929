//! Raw multichannel recordings, unit rescaling and fixed-length windowing.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One recorded sample: `T` time steps by `C` sensor channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries {
    values: DMatrix<f64>,
    rate_hz: f64,
    channel_names: Vec<String>,
    pub label: Option<usize>,
    pub sample_id: String,
}

impl MultiSeries {
    pub fn new(
        values: DMatrix<f64>,
        rate_hz: f64,
        channel_names: Vec<String>,
        label: Option<usize>,
        sample_id: impl Into<String>,
    ) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InvalidSeries(format!(
                "need at least 2 time steps, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(Error::InvalidSeries("need at least one channel".into()));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidSeries(format!("sampling rate {rate_hz} is not positive")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite value at flat index {pos}")));
        }
        let channel_names = if channel_names.is_empty() {
            (0..values.ncols()).map(|c| format!("ch{}", c + 1)).collect()
        } else if channel_names.len() != values.ncols() {
            return Err(Error::InvalidSeries(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                values.ncols()
            )));
        } else {
            channel_names
        };
        Ok(Self {
            values,
            rate_hz,
            channel_names,
            label,
            sample_id: sample_id.into(),
        })
    }

    /// Build from row-major time steps, mostly for tests and generators.
    pub fn from_rows(rows: &[Vec<f64>], rate_hz: f64, label: Option<usize>, sample_id: &str) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidSeries("ragged rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
        Self::new(values, rate_hz, Vec::new(), label, sample_id)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.column(c).iter().copied().collect()
    }
}

/// A series affinely mapped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledSeries {
    pub values: Vec<f64>,
    pub min_raw: f64,
    pub max_raw: f64,
}

impl RescaledSeries {
    /// Map a unit value back to raw units. Only meaningful when `max_raw > min_raw`.
    pub fn invert(&self, v: f64) -> f64 {
        self.min_raw + v * (self.max_raw - self.min_raw)
    }
}

/// Min-max rescale into `[0, 1]`; a constant series maps to all `0.5`.
pub fn rescale_unit(series: &[f64]) -> Result<RescaledSeries> {
    if series.is_empty() {
        return Err(Error::InvalidSeries("empty series".into()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSeries("non-finite value".into()));
    }
    let (min, max) = series.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let values = if max > min {
        let span = max - min;
        series.iter().map(|&v| ((v - min) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.5; series.len()]
    };
    Ok(RescaledSeries {
        values,
        min_raw: min,
        max_raw: max,
    })
}

/// Start offsets: every `k * stride <= T - length`, plus `T - length` itself.
pub fn window_offsets(total: usize, length: usize, stride: usize) -> Vec<usize> {
    if total <= length {
        return vec![0];
    }
    let last = total - length;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

/// Cut a recording into fixed-length windows. Short recordings yield one
/// window padded by repeating the final row.
pub fn window_series(s: &MultiSeries, length: usize, stride: usize) -> Result<Vec<MultiSeries>> {
    if length < 2 {
        return Err(Error::Range(format!("window length {length} < 2")));
    }
    if stride < 1 {
        return Err(Error::Range("window stride must be at least 1".into()));
    }
    let total = s.len();
    let channels = s.channels();
    window_offsets(total, length, stride)
        .into_iter()
        .map(|start| {
            let values = DMatrix::from_fn(length, channels, |r, c| {
                let src = (start + r).min(total - 1);
                s.values[(src, c)]
            });
            Ok(MultiSeries {
                values,
                rate_hz: s.rate_hz,
                channel_names: s.channel_names.clone(),
                label: s.label,
                sample_id: s.sample_id.clone(),
            })
        })
        .collect()
}

/// Samples plus the class-name table their labels index into.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<MultiSeries>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<MultiSeries>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        for s in &samples {
            match s.label {
                Some(l) if l < k => {}
                Some(l) => {
                    return Err(Error::Range(format!(
                        "sample {} has label {l} but only {k} classes",
                        s.sample_id
                    )))
                }
                None => return Err(Error::Range(format!("sample {} has no label", s.sample_id))),
            }
        }
        Ok(Self { samples, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.unwrap_or(0)).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}
