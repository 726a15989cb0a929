//! Inertial window to activity image encoders: signal image (SI), Gramian
//! angular field (GAF), Markov transition field (MTF) and recurrence plot (RP).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::{rescale_unit, MultiSeries};

/// Row order of the signal image, 1-based channel numbers. Every channel is
/// adjacent to every other channel at least once.
pub const SIGNAL_IMAGE_ORDER: [usize; 24] = [1, 2, 3, 4, 5, 6, 1, 3, 5, 2, 4, 6, 1, 4, 2, 5, 3, 6, 1, 5, 2, 6, 1, 6];

pub const SIGNAL_IMAGE_LENGTH: usize = 52;
pub const DEFAULT_MTF_BINS: usize = 10;
pub const DEFAULT_RP_PERCENTILE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Si,
    Gaf,
    Mtf,
    Rp,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Si => "si",
            EncoderKind::Gaf => "gaf",
            EncoderKind::Mtf => "mtf",
            EncoderKind::Rp => "rp",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "si" => Ok(EncoderKind::Si),
            "gaf" => Ok(EncoderKind::Gaf),
            "mtf" => Ok(EncoderKind::Mtf),
            "rp" => Ok(EncoderKind::Rp),
            other => Err(Error::Config(format!(
                "unknown encoder '{other}' (expected si, gaf, mtf or rp)"
            ))),
        }
    }
}

/// Spatial filter applied after encoding; each one defines a modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    None,
    Prewitt,
    HighBoost,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::None, FilterKind::Prewitt, FilterKind::HighBoost];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::None => "none",
            FilterKind::Prewitt => "prewitt",
            FilterKind::HighBoost => "highboost",
        }
    }

    /// Name of the feature stream this filter produces.
    pub fn modality(self) -> &'static str {
        match self {
            FilterKind::None => "base",
            FilterKind::Prewitt => "prewitt",
            FilterKind::HighBoost => "highboost",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "base" => Ok(FilterKind::None),
            "prewitt" => Ok(FilterKind::Prewitt),
            "highboost" | "high-boost" => Ok(FilterKind::HighBoost),
            other => Err(Error::Config(format!("unknown filter '{other}'"))),
        }
    }
}

/// H x W x 3 image of unit-interval intensities, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    pub encoder: EncoderKind,
    pub filter: FilterKind,
    pub source_id: String,
}

impl ActivityImage {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        encoder: EncoderKind,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!("image {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidShape(format!(
                "{} pixel values for a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::InvalidShape("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
            encoder,
            filter: FilterKind::None,
            source_id: source_id.into(),
        })
    }

    /// One plane replicated into all three channels.
    pub fn from_gray(plane: &DMatrix<f64>, encoder: EncoderKind, source_id: impl Into<String>) -> Result<Self> {
        let (h, w) = plane.shape();
        let mut pixels = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                let v = plane[(r, c)];
                pixels.extend_from_slice(&[v, v, v]);
            }
        }
        Self::new(h, w, pixels, encoder, source_id)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.width + col) * 3 + channel]
    }

    pub fn plane(&self, channel: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.height, self.width, |r, c| self.get(r, c, channel))
    }

    /// Same metadata, new pixel buffer. Caller guarantees the unit range.
    pub(crate) fn with_pixels(&self, height: usize, width: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            height,
            width,
            pixels,
            encoder: self.encoder,
            filter: self.filter,
            source_id: self.source_id.clone(),
        }
    }
}

/// Signal image: the six channels stacked row by row in [`SIGNAL_IMAGE_ORDER`],
/// each row rescaled to `[0, 1]` on its own. Output is `24 x length`.
pub fn encode_signal_image(s: &MultiSeries, length: usize) -> Result<ActivityImage> {
    if s.channels() != 6 {
        return Err(Error::ChannelCount {
            expected: 6,
            got: s.channels(),
        });
    }
    if s.len() != length {
        return Err(Error::InvalidShape(format!(
            "window has {} rows, signal image length is {length}",
            s.len()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|c| rescale_unit(&s.channel(c)).map(|r| r.values))
        .collect::<Result<_>>()?;
    let plane = DMatrix::from_fn(SIGNAL_IMAGE_ORDER.len(), length, |r, t| {
        rows[SIGNAL_IMAGE_ORDER[r] - 1][t]
    });
    ActivityImage::from_gray(&plane, EncoderKind::Si, s.sample_id.clone())
}

/// Summation Gramian angular field of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct GafMatrix {
    pub g: DMatrix<f64>,
    /// Polar angles `arccos(x_s)`, in `[0, pi]`.
    pub phi: Vec<f64>,
    /// Polar radii `t / span`.
    pub radius: Vec<f64>,
    pub span: f64,
}

impl GafMatrix {
    /// Recover the rescaled series from the diagonal, `cos(2 phi) = 2 x^2 - 1`.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.g
            .diagonal()
            .iter()
            .map(|d| ((d + 1.0) / 2.0).max(0.0).sqrt())
            .collect()
    }
}

pub fn encode_gaf(series: &[f64]) -> Result<GafMatrix> {
    if series.len() < 2 {
        return Err(Error::InvalidSeries(format!("GAF needs n >= 2, got {}", series.len())));
    }
    let xs = rescale_unit(series)?.values;
    let n = xs.len();
    let comp: Vec<f64> = xs.iter().map(|x| (1.0 - x * x).max(0.0).sqrt()).collect();
    // x_l x_k - sqrt(1-x_l^2) sqrt(1-x_k^2) = cos(phi_l + phi_k)
    let g = DMatrix::from_fn(n, n, |l, k| (xs[l] * xs[k] - comp[l] * comp[k]).clamp(-1.0, 1.0));
    let span = n as f64;
    Ok(GafMatrix {
        g,
        phi: xs.iter().map(|x| x.acos()).collect(),
        radius: (0..n).map(|t| t as f64 / span).collect(),
        span,
    })
}

/// Markov transition field of one series over quantile bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MtfMatrix {
    pub m: DMatrix<f64>,
    /// Row-normalized transition matrix, `w[a][b]` = P(next bin b | bin a).
    pub w: DMatrix<f64>,
    pub bin_edges: Vec<f64>,
    pub bin_of: Vec<usize>,
}

/// Quantile bin assignment. Interior edges sit at order statistics
/// `sorted[k * n / q]`, and a value lands in the bin counting the edges at or
/// below it, so equal values always share a bin and the assignment only
/// depends on ranks.
pub fn quantile_bins(series: &[f64], q: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let n = series.len();
    if q < 2 || q > n {
        return Err(Error::BinCount { bins: q, len: n });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSeries("non-finite value".into()));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let interior: Vec<f64> = (1..q).map(|k| sorted[k * n / q]).collect();
    let bin_of = series.iter().map(|&x| interior.partition_point(|&e| e <= x)).collect();
    let mut edges = Vec::with_capacity(q + 1);
    edges.push(sorted[0]);
    edges.extend_from_slice(&interior);
    edges.push(sorted[n - 1]);
    Ok((edges, bin_of))
}

pub fn encode_mtf(series: &[f64], q: usize) -> Result<MtfMatrix> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InvalidSeries(format!("MTF needs n >= 2, got {n}")));
    }
    let (bin_edges, bin_of) = quantile_bins(series, q)?;
    let mut w = DMatrix::<f64>::zeros(q, q);
    for pair in bin_of.windows(2) {
        w[(pair[0], pair[1])] += 1.0;
    }
    for mut row in w.row_iter_mut() {
        let total: f64 = row.sum();
        if total > 0.0 {
            row /= total;
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| w[(bin_of[i], bin_of[j])]);
    Ok(MtfMatrix {
        m,
        w,
        bin_edges,
        bin_of,
    })
}

/// Thresholded recurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RpMatrix {
    pub r: DMatrix<f64>,
    pub epsilon: f64,
}

/// Euclidean distances between all pairs of rows (time steps).
pub fn pairwise_distances(window: &DMatrix<f64>) -> DMatrix<f64> {
    let t = window.nrows();
    let mut d = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in (i + 1)..t {
            let dist = window
                .row(i)
                .iter()
                .zip(window.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// `r[i][j] = 1` when rows `i` and `j` are within `epsilon`, distance zero included.
pub fn encode_rp(window: &DMatrix<f64>, epsilon: f64) -> Result<RpMatrix> {
    if window.nrows() < 2 {
        return Err(Error::InvalidSeries(format!("RP needs T >= 2, got {}", window.nrows())));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Range(format!("epsilon {epsilon} must be finite and >= 0")));
    }
    let d = pairwise_distances(window);
    Ok(RpMatrix {
        r: d.map(|v| if v <= epsilon { 1.0 } else { 0.0 }),
        epsilon,
    })
}

/// Linear-interpolated percentile of the off-diagonal pairwise distances.
pub fn epsilon_from_percentile(window: &DMatrix<f64>, pct: f64) -> Result<f64> {
    let t = window.nrows();
    if t < 2 {
        return Err(Error::InvalidSeries(format!(
            "need T >= 2 for a distance percentile, got {t}"
        )));
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::Range(format!("percentile {pct} outside (0, 100]")));
    }
    let d = pairwise_distances(window);
    let mut dists: Vec<f64> = (0..t)
        .flat_map(|i| ((i + 1)..t).map(move |j| (i, j)))
        .map(|(i, j)| d[(i, j)])
        .collect();
    dists.sort_by(f64::total_cmp);
    let pos = pct / 100.0 * (dists.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(dists[lo] + frac * (dists[hi] - dists[lo]))
}

/// How the per-channel matrices of a six-channel window become one RGB image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// Channels 1-3 as the RGB planes of the left tile, 4-6 of the right tile.
    TripletRgb,
    /// One matrix replicated into all three planes.
    Gray3,
}

impl ChannelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::TripletRgb => "triplet-rgb",
            ChannelMode::Gray3 => "gray3",
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet-rgb" => Ok(ChannelMode::TripletRgb),
            "gray3" => Ok(ChannelMode::Gray3),
            other => Err(Error::Config(format!("unknown channel mode '{other}'"))),
        }
    }
}

/// Square encodings that can be turned into an image plane.
pub trait UnitPlane {
    const KIND: EncoderKind;

    /// The matrix mapped into `[0, 1]`.
    fn unit_plane(&self) -> DMatrix<f64>;
}

impl UnitPlane for GafMatrix {
    const KIND: EncoderKind = EncoderKind::Gaf;

    fn unit_plane(&self) -> DMatrix<f64> {
        self.g.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
    }
}

impl UnitPlane for MtfMatrix {
    const KIND: EncoderKind = EncoderKind::Mtf;

    fn unit_plane(&self) -> DMatrix<f64> {
        self.m.map(|v| v.clamp(0.0, 1.0))
    }
}

impl UnitPlane for RpMatrix {
    const KIND: EncoderKind = EncoderKind::Rp;

    fn unit_plane(&self) -> DMatrix<f64> {
        self.r.clone()
    }
}

pub fn to_activity_image<M: UnitPlane>(raw: &[M], mode: ChannelMode, source_id: &str) -> Result<ActivityImage> {
    match mode {
        ChannelMode::Gray3 => {
            let [single] = raw else {
                return Err(Error::ChannelCount {
                    expected: 1,
                    got: raw.len(),
                });
            };
            ActivityImage::from_gray(&single.unit_plane(), M::KIND, source_id)
        }
        ChannelMode::TripletRgb => {
            if raw.len() != 6 {
                return Err(Error::ChannelCount {
                    expected: 6,
                    got: raw.len(),
                });
            }
            let planes: Vec<DMatrix<f64>> = raw.iter().map(UnitPlane::unit_plane).collect();
            let (h, w) = planes[0].shape();
            if planes.iter().any(|p| p.shape() != (h, w)) {
                return Err(Error::Shape("per-channel matrices differ in size".into()));
            }
            let mut pixels = Vec::with_capacity(h * 2 * w * 3);
            for r in 0..h {
                for tile in 0..2 {
                    for c in 0..w {
                        for ch in 0..3 {
                            pixels.push(planes[tile * 3 + ch][(r, c)]);
                        }
                    }
                }
            }
            ActivityImage::new(h, 2 * w, pixels, M::KIND, source_id)
        }
    }
}

/// Parameters that select and tune one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub mtf_bins: usize,
    pub rp_percentile: f64,
    pub channel_mode: ChannelMode,
    /// Channel used by `gray3` mode for the single-series encoders.
    pub gray_channel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Gaf,
            mtf_bins: DEFAULT_MTF_BINS,
            rp_percentile: DEFAULT_RP_PERCENTILE,
            channel_mode: ChannelMode::TripletRgb,
            gray_channel: 0,
        }
    }
}

fn rp_of(values: &DMatrix<f64>, pct: f64) -> Result<RpMatrix> {
    let eps = epsilon_from_percentile(values, pct)?;
    encode_rp(values, eps)
}

/// Encode one window with the configured encoder.
pub fn encode_window(window: &MultiSeries, cfg: &EncoderConfig) -> Result<ActivityImage> {
    let id = window.sample_id.as_str();
    let per_channel = |c: usize| -> DMatrix<f64> { window.values().columns(c, 1).into_owned() };
    match (cfg.kind, cfg.channel_mode) {
        (EncoderKind::Si, _) => encode_signal_image(window, window.len()),
        (_, ChannelMode::TripletRgb) if window.channels() != 6 => Err(Error::ChannelCount {
            expected: 6,
            got: window.channels(),
        }),
        (_, ChannelMode::Gray3) if cfg.gray_channel >= window.channels() => Err(Error::Range(format!(
            "gray channel {} but window has {} channels",
            cfg.gray_channel,
            window.channels()
        ))),
        (EncoderKind::Gaf, mode) => {
            let channels = selected_channels(mode, cfg.gray_channel);
            let mats = channels
                .map(|c| encode_gaf(&window.channel(c)))
                .collect::<Result<Vec<_>>>()?;
            to_activity_image(&mats, mode, id)
        }
        (EncoderKind::Mtf, mode) => {
            let channels = selected_channels(mode, cfg.gray_channel);
            let mats = channels
                .map(|c| encode_mtf(&window.channel(c), cfg.mtf_bins))
                .collect::<Result<Vec<_>>>()?;
            to_activity_image(&mats, mode, id)
        }
        (EncoderKind::Rp, ChannelMode::Gray3) => {
            // recurrence over all channels jointly
            let rp = rp_of(window.values(), cfg.rp_percentile)?;
            to_activity_image(&[rp], ChannelMode::Gray3, id)
        }
        (EncoderKind::Rp, ChannelMode::TripletRgb) => {
            let mats = (0..6)
                .map(|c| rp_of(&per_channel(c), cfg.rp_percentile))
                .collect::<Result<Vec<_>>>()?;
            to_activity_image(&mats, ChannelMode::TripletRgb, id)
        }
    }
}

fn selected_channels(mode: ChannelMode, gray_channel: usize) -> std::ops::Range<usize> {
    match mode {
        ChannelMode::TripletRgb => 0..6,
        ChannelMode::Gray3 => gray_channel..gray_channel + 1,
    }
}
