//! One-vs-rest linear SVM, evaluation metrics and the repeated-split harness.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::fusion::TwoStageCcf;
use crate::ingest::split_indices;

pub const DEFAULT_REG_C: f64 = 1.0;
pub const DEFAULT_EPOCHS: usize = 200;

/// Linear one-vs-rest model over z-scored features.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// `K x d` weights, one row per class.
    pub w: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub classes: Vec<usize>,
    /// Soft-margin `C`.
    pub reg_c: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn standardize(&self, row: impl Iterator<Item = f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            row.zip(self.feature_mean.iter().zip(&self.feature_scale))
                .map(|(v, (m, s))| (v - m) / s),
        )
    }

    /// `n x K` class scores.
    pub fn decision_scores(&self, fm: &FeatureMatrix) -> Result<DMatrix<f64>> {
        if fm.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} features, input has {}",
                self.dim(),
                fm.dim()
            )));
        }
        let k = self.classes.len();
        let mut scores = DMatrix::zeros(fm.rows(), k);
        for (i, row) in fm.x().row_iter().enumerate() {
            let z = self.standardize(row.iter().copied());
            for c in 0..k {
                scores[(i, c)] = self.w.row(c).transpose().dot(&z) + self.bias[c];
            }
        }
        Ok(scores)
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

impl SvmModel {
    /// Line-oriented text form; floats are written in shortest round-trip
    /// notation so [`SvmModel::from_text`] restores the model exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::from("svm 1\n");
        let classes: Vec<String> = self.classes.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "classes {}", classes.join(" "));
        let _ = writeln!(s, "reg_c {}", self.reg_c);
        let _ = writeln!(s, "mean {}", join(self.feature_mean.iter().copied()));
        let _ = writeln!(s, "scale {}", join(self.feature_scale.iter().copied()));
        let _ = writeln!(s, "bias {}", join(self.bias.iter().copied()));
        for row in self.w.row_iter() {
            let _ = writeln!(s, "w {}", join(row.iter().copied()));
        }
        s
    }

    pub fn from_text(text: &str, context: &str) -> Result<Self> {
        let bad = |msg: String| Error::format(context, msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("svm 1") {
            return Err(bad("not an svm model file".into()));
        }
        let mut field = |name: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing '{name}' line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected '{name}' line, got '{line}'")));
            }
            parts
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| bad(format!("bad number '{p}' in '{name}'")))
                })
                .collect()
        };
        let classes: Vec<usize> = field("classes")?
            .into_iter()
            .map(|c| {
                if c >= 0.0 && c.fract() == 0.0 {
                    Ok(c as usize)
                } else {
                    Err(bad(format!("bad class id {c}")))
                }
            })
            .collect::<Result<_>>()?;
        let reg_c = match field("reg_c")?[..] {
            [c] => c,
            _ => return Err(bad("reg_c takes one value".into())),
        };
        let feature_mean = field("mean")?;
        let feature_scale = field("scale")?;
        let bias = field("bias")?;
        let d = feature_mean.len();
        let rows = (0..classes.len()).map(|_| field("w")).collect::<Result<Vec<_>>>()?;
        if feature_scale.len() != d || bias.len() != classes.len() || rows.iter().any(|r| r.len() != d) {
            return Err(bad("inconsistent model dimensions".into()));
        }
        let w = DMatrix::from_fn(classes.len(), d, |r, c| rows[r][c]);
        Ok(Self {
            w,
            bias,
            classes,
            reg_c,
            feature_mean,
            feature_scale,
        })
    }
}

/// Pegasos subgradient descent on `lambda/2 |w|^2 + mean hinge` for one
/// binary problem, with step `1 / (lambda t)`. The bias rides along as a
/// constant feature and is regularized with the weights.
fn train_binary(x: &DMatrix<f64>, y: &[f64], lambda: f64, epochs: usize, rng: &mut ChaCha8Rng) -> (DVector<f64>, f64) {
    let (n, d) = x.shape();
    let rows: Vec<DVector<f64>> = x
        .row_iter()
        .map(|r| DVector::from_iterator(d + 1, r.iter().copied().chain(std::iter::once(1.0))))
        .collect();
    let mut w = DVector::zeros(d + 1);
    let radius = 1.0 / lambda.sqrt();
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let margin = y[i] * w.dot(&rows[i]);
            w *= 1.0 - eta * lambda;
            if margin < 1.0 {
                w.axpy(eta * y[i], &rows[i], 1.0);
            }
            let norm = w.norm();
            if norm > radius {
                w *= radius / norm;
            }
        }
    }
    let b = w[d];
    (w.rows(0, d).into_owned(), b)
}

/// Train one-vs-rest linear SVMs. `reg_c` is the usual soft-margin `C` of
/// `1/2 |w|^2 + C sum(hinge)`, i.e. `lambda = 1 / (C n)` in the per-sample
/// objective.
pub fn svm_train(fm: &FeatureMatrix, reg_c: f64, epochs: usize, seed: u64) -> Result<SvmModel> {
    if !(reg_c.is_finite() && reg_c > 0.0) {
        return Err(Error::Range(format!("reg_c {reg_c} must be positive")));
    }
    if epochs == 0 {
        return Err(Error::Range("epochs must be at least 1".into()));
    }
    let mut classes: Vec<usize> = fm.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::ClassCount(classes.len()));
    }

    let (n, d) = fm.x().shape();
    let mut feature_mean = Vec::with_capacity(d);
    let mut feature_scale = Vec::with_capacity(d);
    for col in fm.x().column_iter() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        feature_mean.push(mean);
        feature_scale.push(if sd > 1e-12 { sd } else { 1.0 });
    }
    let z = DMatrix::from_fn(n, d, |r, c| (fm.x()[(r, c)] - feature_mean[c]) / feature_scale[c]);
    let lambda = 1.0 / (reg_c * n as f64);

    let per_class: Vec<(DVector<f64>, f64)> = classes
        .par_iter()
        .enumerate()
        .map(|(k, &class)| {
            let y: Vec<f64> = fm
                .labels()
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            train_binary(&z, &y, lambda, epochs, &mut rng)
        })
        .collect();

    let mut w = DMatrix::zeros(classes.len(), d);
    let mut bias = Vec::with_capacity(classes.len());
    for (k, (wk, bk)) in per_class.into_iter().enumerate() {
        w.set_row(k, &wk.transpose());
        bias.push(bk);
    }
    Ok(SvmModel {
        w,
        bias,
        classes,
        reg_c,
        feature_mean,
        feature_scale,
    })
}

/// Highest-scoring class per row; ties go to the smaller class id.
pub fn svm_predict(model: &SvmModel, fm: &FeatureMatrix) -> Result<Vec<usize>> {
    let scores = model.decision_scores(fm)?;
    Ok(scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            model.classes[best]
        })
        .collect())
}

/// Binary outcome counts for one class treated as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    /// `(TP + TN) / (TP + TN + FP + FN)`
    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.tn + self.fp + self.fn_;
        if total == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / total as f64
        }
    }

    /// `TP / (TP + FP)`, 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision_per_class: Vec<f64>,
    pub macro_precision: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 { 0.0 } else { trace as f64 / total as f64 };
        let precision_per_class: Vec<f64> = (0..k).map(|c| Self::counts_for(&confusion, c).precision()).collect();
        let macro_precision = if k == 0 {
            0.0
        } else {
            precision_per_class.iter().sum::<f64>() / k as f64
        };
        Self {
            accuracy,
            precision_per_class,
            macro_precision,
            confusion,
        }
    }

    fn counts_for(confusion: &[Vec<u64>], class: usize) -> BinaryCounts {
        let total: u64 = confusion.iter().flatten().sum();
        let tp = confusion[class][class];
        let fp: u64 = confusion.iter().map(|row| row[class]).sum::<u64>() - tp;
        let fn_: u64 = confusion[class].iter().sum::<u64>() - tp;
        BinaryCounts {
            tp,
            tn: total - tp - fp - fn_,
            fp,
            fn_,
        }
    }

    /// One-vs-rest counts for `class`.
    pub fn binary_counts(&self, class: usize) -> BinaryCounts {
        Self::counts_for(&self.confusion, class)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy = {}", self.accuracy);
        let _ = writeln!(s, "macro_precision = {}", self.macro_precision);
        for (k, p) in self.precision_per_class.iter().enumerate() {
            let _ = writeln!(s, "precision.{k} = {p}");
        }
        s
    }

    pub fn confusion_csv(&self, class_names: &[String]) -> String {
        confusion_csv(&self.confusion, class_names)
    }
}

pub fn confusion_csv(confusion: &[Vec<u64>], class_names: &[String]) -> String {
    let name = |k: usize| class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
    let mut s = String::from("true\\pred");
    for k in 0..confusion.len() {
        s.push(',');
        s.push_str(&name(k));
    }
    s.push('\n');
    for (k, row) in confusion.iter().enumerate() {
        s.push_str(&name(k));
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn evaluate(pred: &[usize], truth: &[usize], k: usize) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::Range(format!("label {} outside {k} classes", p.max(t))));
        }
        confusion[t][p] += 1;
    }
    Ok(EvalReport::from_confusion(confusion))
}

/// Which features feed the classifier in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Two-stage CCF over the three modalities in order.
    TwoStage,
    /// A single modality, no fusion.
    Single(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub fusion: FusionMode,
    pub cca_dim: Option<usize>,
    pub ridge: f64,
    pub reg_c: f64,
    pub epochs: usize,
    pub repeats: usize,
    pub train_frac: f64,
    /// Split `i` uses seed `seed + i`.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMode::TwoStage,
            cca_dim: None,
            ridge: crate::fusion::DEFAULT_RIDGE,
            reg_c: DEFAULT_REG_C,
            epochs: DEFAULT_EPOCHS,
            repeats: 20,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_precision: f64,
    pub std_precision: f64,
    /// Confusion counts summed over all splits.
    pub confusion: Vec<Vec<u64>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl RepeatedReport {
    fn from_runs(seeds: Vec<u64>, runs: Vec<EvalReport>, k: usize) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let precs: Vec<f64> = runs.iter().map(|r| r.macro_precision).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        let (mean_precision, std_precision) = mean_std(&precs);
        let mut confusion = vec![vec![0u64; k]; k];
        for r in &runs {
            for (row, src) in confusion.iter_mut().zip(&r.confusion) {
                for (a, b) in row.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        Self {
            seeds,
            runs,
            mean_accuracy,
            std_accuracy,
            mean_precision,
            std_precision,
            confusion,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "repeats = {}", self.runs.len());
        let _ = writeln!(s, "mean_accuracy = {}", self.mean_accuracy);
        let _ = writeln!(s, "std_accuracy = {}", self.std_accuracy);
        let _ = writeln!(s, "mean_precision = {}", self.mean_precision);
        let _ = writeln!(s, "std_precision = {}", self.std_precision);
        for (seed, r) in self.seeds.iter().zip(&self.runs) {
            let _ = writeln!(
                s,
                "split.{seed} = accuracy {} precision {}",
                r.accuracy, r.macro_precision
            );
        }
        s
    }
}

/// Expand a group-level split to row indices.
fn rows_of(groups: &[usize], chosen: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; groups.iter().max().map_or(0, |m| m + 1)];
    for &g in chosen {
        mark[g] = true;
    }
    (0..groups.len()).filter(|&i| mark[groups[i]]).collect()
}

/// One split: fit on the training rows, score the held-out rows.
pub fn evaluate_split(
    modalities: &[FeatureMatrix],
    train: &[usize],
    test: &[usize],
    k: usize,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let pick = |rows: &[usize]| -> Vec<FeatureMatrix> { modalities.iter().map(|m| m.select_rows(rows)).collect() };
    let tr = pick(train);
    let te = pick(test);
    let (train_feats, test_feats) = match cfg.fusion {
        FusionMode::TwoStage => {
            let [a, b, c] = &tr[..] else {
                return Err(Error::Alignment(format!(
                    "two-stage fusion needs 3 modalities, got {}",
                    tr.len()
                )));
            };
            let model = TwoStageCcf::fit(a, b, c, cfg.cca_dim, cfg.ridge)?;
            (model.transform(a, b, c)?, model.transform(&te[0], &te[1], &te[2])?)
        }
        FusionMode::Single(m) => {
            let pos = tr
                .get(m)
                .ok_or_else(|| Error::Range(format!("modality {m} of {}", tr.len())))?;
            (pos.clone(), te[m].clone())
        }
    };
    let svm = svm_train(&train_feats, cfg.reg_c, cfg.epochs, seed)?;
    let pred = svm_predict(&svm, &test_feats)?;
    evaluate(&pred, test_feats.labels(), k)
}

/// Repeat stratified splits with seeds `seed, seed + 1, ...` and aggregate.
/// With `groups`, rows sharing a group id (windows of one recording) always
/// land on the same side of the split.
pub fn repeated_split_eval(
    modalities: &[FeatureMatrix],
    groups: Option<&[usize]>,
    k: usize,
    cfg: &EvalConfig,
) -> Result<RepeatedReport> {
    if cfg.repeats == 0 {
        return Err(Error::Range("repeats must be at least 1".into()));
    }
    let first = modalities
        .first()
        .ok_or_else(|| Error::Alignment("no modalities".into()))?;
    for m in modalities {
        if m.labels() != first.labels() {
            return Err(Error::Alignment(format!("labels of {} differ", m.modality_tag)));
        }
    }
    let labels = first.labels();
    let identity: Vec<usize>;
    let groups = match groups {
        Some(g) if g.len() != labels.len() => {
            return Err(Error::LengthMismatch(format!(
                "{} group ids for {} rows",
                g.len(),
                labels.len()
            )))
        }
        Some(g) => g,
        None => {
            identity = (0..labels.len()).collect();
            &identity
        }
    };
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut group_labels = vec![usize::MAX; n_groups];
    for (&g, &l) in groups.iter().zip(labels) {
        if group_labels[g] != usize::MAX && group_labels[g] != l {
            return Err(Error::Alignment(format!("group {g} mixes labels")));
        }
        group_labels[g] = l;
    }
    if group_labels.contains(&usize::MAX) {
        return Err(Error::Alignment("group ids must be contiguous from 0".into()));
    }

    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let (train_g, test_g) = split_indices(&group_labels, cfg.train_frac, seed)?;
            evaluate_split(
                modalities,
                &rows_of(groups, &train_g),
                &rows_of(groups, &test_g),
                k,
                cfg,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepeatedReport::from_runs(seeds, runs, k))
}
