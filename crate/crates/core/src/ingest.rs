//! Dataset ingestion (CSV samples + manifest), stratified splitting and
//! feature-matrix files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::imaging::{read_tensor, write_tensor, Tensor};
use crate::series::{LabeledDataset, MultiSeries};

/// Read one sample: one comma-separated row per time step. A first row with
/// any non-numeric cell is taken as channel names.
pub fn load_csv_sample(path: &Path, rate_hz: f64) -> Result<MultiSeries> {
    let ctx = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut names = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(&ctx, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            names = record.iter().map(str::to_owned).collect();
            continue;
        }
        let width = if names.is_empty() {
            rows.first().map_or(parsed.len(), Vec::len)
        } else {
            names.len()
        };
        if parsed.len() != width {
            return Err(Error::format(
                &ctx,
                format!("line {}: {} cells, expected {width}", i + 1, parsed.len()),
            ));
        }
        let row = parsed
            .into_iter()
            .enumerate()
            .map(|(c, v)| {
                v.ok_or_else(|| Error::format(&ctx, format!("line {}: cell {} is not a number", i + 1, c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(&ctx, "no data rows"));
    }
    let cols = rows[0].len();
    let values = DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    MultiSeries::new(values, rate_hz, names, None, id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub rate_hz: f64,
}

/// Parse a manifest. Header block of `class: <name>` lines (label = order of
/// appearance) and one `rate_hz: <value>`, then `path,label,subject` rows.
/// Relative paths resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path, context: &str) -> Result<DatasetManifest> {
    let mut class_names = Vec::new();
    let mut rate_hz = None;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::format(context, format!("line {}: {msg}", lineno + 1));
        if let Some((key, value)) = line.split_once(':').filter(|_| !line.contains(',')) {
            if !entries.is_empty() {
                return Err(at(format!("header key '{}' after entries", key.trim())));
            }
            match key.trim() {
                "class" => class_names.push(value.trim().to_owned()),
                "rate_hz" => {
                    let r: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| at(format!("bad rate_hz '{}'", value.trim())))?;
                    if !(r.is_finite() && r > 0.0) {
                        return Err(at(format!("rate_hz must be positive, got {r}")));
                    }
                    rate_hz = Some(r);
                }
                other => return Err(at(format!("unknown header key '{other}'"))),
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields == ["path", "label", "subject"] {
            continue;
        }
        let [path, label, subject] = fields[..] else {
            return Err(at(format!("expected path,label,subject, got {} fields", fields.len())));
        };
        let label: usize = label.parse().map_err(|_| at(format!("bad label '{label}'")))?;
        if label >= class_names.len() {
            return Err(Error::Range(format!(
                "{context} line {}: label {label} but {} classes declared",
                lineno + 1,
                class_names.len()
            )));
        }
        let path = base_dir.join(path);
        if !seen.insert(path.clone()) {
            return Err(at(format!("duplicate path {}", path.display())));
        }
        entries.push(ManifestEntry {
            path,
            label,
            subject: subject.to_owned(),
        });
    }

    let rate_hz = rate_hz.ok_or_else(|| Error::format(context, "missing rate_hz"))?;
    if class_names.is_empty() {
        return Err(Error::format(context, "no class names"));
    }
    for (k, name) in class_names.iter().enumerate() {
        if !entries.iter().any(|e| e.label == k) {
            return Err(Error::Range(format!("class {k} ({name}) has no entries")));
        }
    }
    Ok(DatasetManifest {
        entries,
        class_names,
        rate_hz,
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = parse_manifest(&text, base, &path.display().to_string())?;
    if let Some(missing) = manifest.entries.iter().find(|e| !e.path.is_file()) {
        return Err(Error::MissingFile(missing.path.clone()));
    }
    Ok(manifest)
}

/// Load every sample of a manifest, in manifest order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<LabeledDataset> {
    let samples = manifest
        .entries
        .iter()
        .map(|e| {
            let mut s = load_csv_sample(&e.path, manifest.rate_hz)?;
            s.label = Some(e.label);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: HashSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    if ids.len() != samples.len() {
        return Err(Error::format("manifest", "sample file stems must be unique"));
    }
    LabeledDataset::new(samples, manifest.class_names.clone())
}

/// Stratified split of row indices. Each class contributes
/// `round(train_frac * size)` rows to training, kept within `[1, size - 1]`.
/// Both halves come back sorted.
pub fn split_indices(labels: &[usize], train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Range(format!("train fraction {train_frac} outside (0, 1)")));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Stratify(format!("class {class} has a single sample")));
        }
        members.shuffle(&mut rng);
        let n_train = ((train_frac * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(ds: &LabeledDataset, train_frac: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = split_indices(&ds.labels(), train_frac, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

/// Write the matrix as a rank-2 ITNS tensor at `path` and its labels, one per
/// line, to `<path>.labels`.
pub fn export_features(fm: &FeatureMatrix, path: &Path) -> Result<()> {
    write_tensor(&feature_tensor(fm), path)?;
    let labels: String = fm.labels().iter().map(|l| format!("{l}\n")).collect();
    let lp = labels_path(path);
    fs::write(&lp, labels).map_err(|e| Error::io(lp, e))
}

pub fn feature_tensor(fm: &FeatureMatrix) -> Tensor {
    let (n, p) = fm.x().shape();
    let data = (0..n)
        .flat_map(|r| (0..p).map(move |c| (r, c)))
        .map(|(r, c)| fm.x()[(r, c)])
        .collect();
    Tensor { dims: vec![n, p], data }
}

/// Read an ITNS feature matrix. Labels come from the `.labels` sidecar.
pub fn import_features(path: &Path, modality_tag: &str) -> Result<FeatureMatrix> {
    let lp = labels_path(path);
    let text = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
    let labels = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(lp.display().to_string(), format!("bad label '{l}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    import_features_with_labels(path, labels, modality_tag)
}

/// Read an ITNS feature matrix whose row labels are known from elsewhere.
pub fn import_features_with_labels(path: &Path, labels: Vec<usize>, modality_tag: &str) -> Result<FeatureMatrix> {
    let t = read_tensor(path)?;
    let [n, p] = t.dims[..] else {
        return Err(Error::InvalidShape(format!(
            "expected a rank-2 tensor, got dims {:?}",
            t.dims
        )));
    };
    if n == 0 || p == 0 {
        return Err(Error::InvalidShape(format!("feature tensor {n}x{p}")));
    }
    FeatureMatrix::new(DMatrix::from_row_slice(n, p, &t.data), labels, modality_tag)
}
