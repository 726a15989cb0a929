//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use actimg_core::classify::{
    evaluate, repeated_split_eval, svm_predict, svm_train, EvalConfig, EvalReport, FusionMode, DEFAULT_EPOCHS,
    DEFAULT_REG_C,
};
use actimg_core::encoders::{
    encode_gaf, encode_mtf, encode_rp, encode_signal_image, epsilon_from_percentile, ActivityImage, EncoderKind,
    SIGNAL_IMAGE_ORDER,
};
use actimg_core::features::FeatureMatrix;
use actimg_core::fusion::{cca_fit, cca_transform, ccf_fuse};
use actimg_core::imaging::{correlate3x3, decode_tensor, encode_tensor, read_png, write_png, Kernel3x3, Tensor};
use actimg_core::series::{rescale_unit, MultiSeries};
use actimg_core::synth::{multimodal_features, MultimodalSpec};

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| normal(rng))
}

fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = rng.random_range(0.1..100.0);
    let offset = rng.random_range(-50.0..50.0);
    (0..n).map(|_| offset + scale * normal(rng)).collect()
}

fn gaf_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_rt) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(4..=64);
        let series = random_series(&mut rng, n);
        let gaf = encode_gaf(&series).map_err(|e| e.to_string())?;
        let xs = rescale_unit(&series).map_err(|e| e.to_string())?.values;
        let phi: Vec<f64> = xs.iter().map(|x| x.acos()).collect();
        for l in 0..n {
            for k in 0..n {
                worst = worst.max((gaf.g[(l, k)] - (phi[l] + phi[k]).cos()).abs());
            }
        }
        for (r, x) in gaf.reconstruct().iter().zip(&xs) {
            worst_rt = worst_rt.max((r - x).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("matrix deviates by {worst:e}"))?;
    ensure(worst_rt <= 1e-9, || format!("diagonal roundtrip off by {worst_rt:e}"))?;
    Ok(format!("max |dG| {worst:.1e}, roundtrip {worst_rt:.1e}"))
}

fn mtf_correctness() -> Check {
    let hand = encode_mtf(&[0.0, 0.0, 1.0, 1.0, 0.0, 1.0], 2).map_err(|e| e.to_string())?;
    let expected = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 2.0 / 3.0, 1.0 / 2.0, 1.0 / 2.0]);
    ensure(hand.w == expected, || format!("hand case w = {}", hand.w))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(10..=80);
        let q = rng.random_range(2..=10.min(n));
        let series = random_series(&mut rng, n);
        let mtf = encode_mtf(&series, q).map_err(|e| e.to_string())?;
        for row in mtf.w.row_iter() {
            let s: f64 = row.sum();
            if s != 0.0 {
                worst = worst.max((s - 1.0).abs());
            }
        }
        ensure(mtf.m.iter().all(|v| (0.0..=1.0).contains(v)), || {
            "m outside [0, 1]".into()
        })?;
        let warped: Vec<f64> = series.iter().map(|x| (x / 10.0).atan() * 7.0 + 3.0).collect();
        let again = encode_mtf(&warped, q).map_err(|e| e.to_string())?;
        ensure(again.m == mtf.m && again.w == mtf.w, || "not rank invariant".into())?;
    }
    ensure(worst <= 1e-12, || format!("row sum off by {worst:e}"))?;
    Ok(format!(
        "hand case exact, row sums within {worst:.1e}, rank invariant on 500 series"
    ))
}

fn brute_distances(w: &DMatrix<f64>) -> DMatrix<f64> {
    let t = w.nrows();
    DMatrix::from_fn(t, t, |i, j| {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if a == b {
            return 0.0;
        }
        (0..w.ncols())
            .map(|c| (w[(a, c)] - w[(b, c)]).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

fn rp_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..500 {
        let t = rng.random_range(4..=48);
        let c = rng.random_range(1..=6);
        let w = gaussian(&mut rng, t, c);
        let pct = rng.random_range(5.0..=100.0);
        let eps = epsilon_from_percentile(&w, pct).map_err(|e| e.to_string())?;
        let rp = encode_rp(&w, eps).map_err(|e| e.to_string())?;
        let oracle = brute_distances(&w).map(|d| if d <= eps { 1.0 } else { 0.0 });
        ensure(rp.r == oracle, || format!("case {case}: differs from brute force"))?;
        ensure(rp.r == rp.r.transpose(), || format!("case {case}: not symmetric"))?;
        ensure(rp.r.iter().all(|&v| v == 0.0 || v == 1.0), || {
            format!("case {case}: not binary")
        })?;
        ensure(eps > 0.0 && rp.r.diagonal().iter().all(|&v| v == 1.0), || {
            format!("case {case}: diagonal not 1")
        })?;
        for factor in [0.25, 2.0, 8.0] {
            let scaled = encode_rp(&(&w * factor), eps * factor).map_err(|e| e.to_string())?;
            ensure(scaled.r == rp.r, || {
                format!("case {case}: changes under scale {factor}")
            })?;
        }
    }
    Ok("500 windows match brute force, symmetric, binary, unit diagonal, scale invariant".into())
}

fn si_geometry() -> Check {
    for probe in 0..6 {
        let values = DMatrix::from_fn(52, 6, |t, c| if c == probe { t as f64 } else { (c + 1) as f64 });
        let s = MultiSeries::new(values, 50.0, vec![], None, "probe").map_err(|e| e.to_string())?;
        let img = encode_signal_image(&s, 52).map_err(|e| e.to_string())?;
        ensure(img.height() == 24 && img.width() == 52, || {
            format!("shape {}x{}", img.height(), img.width())
        })?;
        for (row, &ch) in SIGNAL_IMAGE_ORDER.iter().enumerate() {
            let is_ramp = img.get(row, 51, 0) == 1.0 && img.get(row, 0, 0) == 0.0;
            let is_flat = (0..52).all(|t| img.get(row, t, 0) == 0.5);
            ensure(if ch - 1 == probe { is_ramp } else { is_flat }, || {
                format!("row {row} does not carry channel {ch}")
            })?;
        }
    }
    let order: String = SIGNAL_IMAGE_ORDER.iter().map(|d| d.to_string()).collect();
    ensure(order == "123456135246142536152616", || format!("order {order}"))?;
    Ok("24x52, rows follow 123456135246142536152616".into())
}

fn filters() -> Check {
    let prewitt = Kernel3x3::prewitt();
    let boost = Kernel3x3::high_boost();
    for v in [0.0, 0.3, 0.5, 1.0] {
        let flat = vec![v; 7 * 9 * 3];
        let p = correlate3x3(7, 9, &flat, &prewitt);
        ensure(p.values.iter().all(|&x| x == 0.0), || {
            format!("prewitt on constant {v} not zero")
        })?;
        let h = correlate3x3(7, 9, &flat, &boost);
        ensure(h.values.iter().all(|&x| x == boost.sum() * v), || {
            format!("high-boost on constant {v} is not sum(K) * {v}")
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(3..20), rng.random_range(3..20));
        let x: Vec<f64> = (0..h * w * 3).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..h * w * 3).map(|_| rng.random()).collect();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        for k in [&prewitt, &boost] {
            let lhs = correlate3x3(h, w, &mix, k);
            let rx = correlate3x3(h, w, &x, k);
            let ry = correlate3x3(h, w, &y, k);
            for i in 0..lhs.values.len() {
                worst = worst.max((lhs.values[i] - (a * rx.values[i] + b * ry.values[i])).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("linearity off by {worst:e}"))?;

    let expected_p = [[-1.0, -1.0, -1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
    let expected_h = [[-1.0, -1.0, -1.0], [-1.0, 9.0, -1.0], [-1.0, -1.0, -1.0]];
    for (k, expected) in [(&prewitt, expected_p), (&boost, expected_h)] {
        let mut impulse = vec![0.0; 5 * 5 * 3];
        for ch in 0..3 {
            impulse[(2 * 5 + 2) * 3 + ch] = 1.0;
        }
        let r = correlate3x3(5, 5, &impulse, k);
        for (dr, row) in expected.iter().enumerate() {
            for (dc, &want) in row.iter().enumerate() {
                let got = r.values[((1 + dr) * 5 + 1 + dc) * 3];
                ensure(got == want, || {
                    format!("{} impulse at ({dr},{dc}) = {got}, want {want}", k.name)
                })?;
            }
        }
    }
    Ok(format!(
        "constants exact, linearity {worst:.1e}, impulse responses exact"
    ))
}

fn fm(x: DMatrix<f64>) -> FeatureMatrix {
    let n = x.nrows();
    FeatureMatrix::new(x, vec![0; n], "t").unwrap()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn cca() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let err = |e: actimg_core::Error| e.to_string();

    let mut worst_p = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(5..200);
        let x = gaussian(&mut rng, n, 1);
        let noise = gaussian(&mut rng, n, 1);
        let mix = rng.random_range(-2.0..2.0);
        let y = &x * mix + noise;
        let model = cca_fit(&fm(x.clone()), &fm(y.clone()), None, 0.0).map_err(err)?;
        let r = pearson(x.as_slice(), y.as_slice()).abs();
        worst_p = worst_p.max((model.corrs[0] - r).abs());
    }
    ensure(worst_p <= 1e-10, || format!("1-D case off Pearson by {worst_p:e}"))?;

    let mut worst_grid = 0.0f64;
    for _ in 0..5 {
        let n = 300;
        let x = gaussian(&mut rng, n, 2);
        let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = &x * m + gaussian(&mut rng, n, 2);
        let model = cca_fit(&fm(x.clone()), &fm(y.clone()), Some(1), 0.0).map_err(err)?;
        let mut best = 0.0f64;
        for i in 0..60 {
            let t = std::f64::consts::PI * i as f64 / 60.0;
            let u: Vec<f64> = x.row_iter().map(|r| r[0] * t.cos() + r[1] * t.sin()).collect();
            for j in 0..60 {
                let s = std::f64::consts::PI * j as f64 / 60.0;
                let v: Vec<f64> = y.row_iter().map(|r| r[0] * s.cos() + r[1] * s.sin()).collect();
                best = best.max(pearson(&u, &v).abs());
            }
        }
        worst_grid = worst_grid.max((model.corrs[0] - best).abs());
    }
    ensure(worst_grid <= 1e-3, || format!("grid oracle off by {worst_grid:e}"))?;

    let n = 400;
    let x = gaussian(&mut rng, n, 6);
    let y = x.columns(0, 4) * gaussian(&mut rng, 4, 5) + gaussian(&mut rng, n, 5);
    let (fx, fy) = (fm(x.clone()), fm(y.clone()));
    let model = cca_fit(&fx, &fy, None, 1e-4).map_err(err)?;
    let (xp, yp) = cca_transform(&model, &fx, &fy).map_err(err)?;
    let mut worst_var = 0.0f64;
    for m in [xp.x(), yp.x()] {
        for col in m.column_iter() {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            worst_var = worst_var.max((var - 1.0).abs());
        }
    }
    ensure(worst_var <= 1e-8, || format!("variate variance off by {worst_var:e}"))?;

    let z = ccf_fuse(&xp, &yp).map_err(err)?;
    let mut cx = x.clone();
    let mut cy = y.clone();
    for (j, mut c) in cx.column_iter_mut().enumerate() {
        c.add_scalar_mut(-model.mean_x[j]);
    }
    for (j, mut c) in cy.column_iter_mut().enumerate() {
        c.add_scalar_mut(-model.mean_y[j]);
    }
    let direct = cx * &model.a + cy * &model.b;
    let worst_z = (z.x() - direct).amax();
    ensure(worst_z <= 1e-10, || format!("fused features off by {worst_z:e}"))?;

    let exact = cca_fit(&fx, &fy, None, 0.0).map_err(err)?;
    let g = gaussian(&mut rng, 6, 6) + DMatrix::identity(6, 6) * 3.0;
    let h = gaussian(&mut rng, 5, 5) + DMatrix::identity(5, 5) * 3.0;
    let moved = cca_fit(&fm(&x * g), &fm(&y * h), None, 1e-14).map_err(err)?;
    let worst_inv = exact
        .corrs
        .iter()
        .zip(&moved.corrs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(worst_inv <= 1e-6, || {
        format!("not invariant under invertible maps: {worst_inv:e}")
    })?;

    let swapped = cca_fit(&fy, &fx, None, 0.0).map_err(err)?;
    let worst_swap = exact
        .corrs
        .iter()
        .zip(&swapped.corrs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(worst_swap <= 1e-10, || {
        format!("swap changes correlations by {worst_swap:e}")
    })?;

    Ok(format!(
        "pearson {worst_p:.1e}, grid {worst_grid:.1e}, variance {worst_var:.1e}, invariance {worst_inv:.1e}, fusion {worst_z:.1e}"
    ))
}

fn fusion_gain() -> Check {
    let mods = multimodal_features(&MultimodalSpec::default()).map_err(|e| e.to_string())?;
    let run = |fusion| {
        let cfg = EvalConfig {
            fusion,
            ..Default::default()
        };
        repeated_split_eval(&mods, None, 5, &cfg).map(|r| r.mean_accuracy)
    };
    let singles = (0..3)
        .map(|m| run(FusionMode::Single(m)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let fused = run(FusionMode::TwoStage).map_err(|e| e.to_string())?;
    let best = singles.iter().copied().fold(0.0, f64::max);
    let detail = format!(
        "base {:.3}, prewitt {:.3}, highboost {:.3}, two-stage {fused:.3}",
        singles[0], singles[1], singles[2]
    );
    ensure(fused - best >= 0.05, || {
        format!("gain {:.3} < 0.05 ({detail})", fused - best)
    })?;
    Ok(format!("gain {:+.3} ({detail})", fused - best))
}

/// Fourier-Motzkin check that some (w, b) in the plane satisfies
/// y_i (w . x_i + b) >= 1 for every point.
fn separable_2d(points: &[[f64; 2]], positive: &[bool]) -> bool {
    // eliminate b: w . (x_i - x_j) >= 2 for every positive i and negative j
    let mut rows: Vec<[f64; 2]> = Vec::new();
    for (p, _) in points.iter().zip(positive).filter(|(_, &s)| s) {
        for (q, _) in points.iter().zip(positive).filter(|(_, &s)| !s) {
            rows.push([p[0] - q[0], p[1] - q[1]]);
        }
    }
    // eliminate w2 from a1 w1 + a2 w2 >= 2
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut one_d: Vec<(f64, f64)> = Vec::new();
    let upper: Vec<&[f64; 2]> = rows.iter().filter(|r| r[1] > 0.0).collect();
    let lower: Vec<&[f64; 2]> = rows.iter().filter(|r| r[1] < 0.0).collect();
    for r in rows.iter().filter(|r| r[1] == 0.0) {
        one_d.push((r[0], 2.0));
    }
    // w2 >= (2 - a1 w1) / a2 for a2 > 0, w2 <= (2 - a1 w1) / a2 for a2 < 0
    for p in &upper {
        for q in &lower {
            // (2 - p0 w1) / p1 <= (2 - q0 w1) / q1, scaled by p1 (-q1) > 0
            one_d.push((p[1] * q[0] - q[1] * p[0], 2.0 * (p[1] - q[1])));
        }
    }
    for (c, d) in one_d {
        if c > 0.0 {
            lo = lo.max(d / c);
        } else if c < 0.0 {
            hi = hi.min(d / c);
        } else if d > 0.0 {
            return false;
        }
    }
    lo <= hi
}

fn svm() -> Check {
    let centres = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..15 {
            pts.push([c[0] + 0.6 * normal(&mut rng), c[1] + 0.6 * normal(&mut rng)]);
            labels.push(k);
        }
    }
    let xor = [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    ensure(!separable_2d(&xor, &[true, true, false, false]), || {
        "oracle accepts XOR".into()
    })?;
    ensure(separable_2d(&xor, &[true, false, true, false]), || {
        "oracle rejects a separable split".into()
    })?;
    for k in 0..3 {
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        ensure(separable_2d(&pts, &pos), || {
            format!("class {k} blobs not separable by the LP oracle")
        })?;
    }
    let x = DMatrix::from_fn(pts.len(), 2, |r, c| pts[r][c]);
    let data = FeatureMatrix::new(x, labels.clone(), "blobs").map_err(|e| e.to_string())?;
    let model = svm_train(&data, DEFAULT_REG_C, DEFAULT_EPOCHS, 0).map_err(|e| e.to_string())?;
    let pred = svm_predict(&model, &data).map_err(|e| e.to_string())?;
    let acc = evaluate(&pred, &labels, 3).map_err(|e| e.to_string())?.accuracy;
    ensure(acc == 1.0, || format!("training accuracy {acc}"))?;

    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let again = serial
        .install(|| svm_train(&data, DEFAULT_REG_C, DEFAULT_EPOCHS, 0))
        .map_err(|e| e.to_string())?;
    ensure(model.to_text() == again.to_text(), || {
        "same seed, different model".into()
    })?;

    let confusion = vec![vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]];
    let r = EvalReport::from_confusion(confusion.clone());
    ensure(r.accuracy == 12.0 / 16.0, || format!("accuracy {}", r.accuracy))?;
    let per = [5.0 / 7.0, 3.0 / 4.0, 4.0 / 5.0];
    ensure(r.precision_per_class == per, || {
        format!("precision {:?}", r.precision_per_class)
    })?;
    ensure(r.macro_precision == (per[0] + per[1] + per[2]) / 3.0, || {
        "macro precision".into()
    })?;
    let c1 = r.binary_counts(1);
    ensure((c1.tp, c1.tn, c1.fp, c1.fn_) == (3, 9, 1, 3), || {
        format!("binary counts {c1:?}")
    })?;
    ensure(c1.accuracy() == 12.0 / 16.0 && c1.precision() == 3.0 / 4.0, || {
        "binary identities".into()
    })?;
    let truth: Vec<usize> = confusion
        .iter()
        .enumerate()
        .flat_map(|(t, row)| {
            row.iter()
                .enumerate()
                .flat_map(move |(p, &n)| std::iter::repeat_n((t, p), n as usize))
        })
        .map(|(t, _)| t)
        .collect();
    let guessed: Vec<usize> = confusion
        .iter()
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .flat_map(|(p, &n)| std::iter::repeat_n(p, n as usize))
        })
        .collect();
    let rebuilt = evaluate(&guessed, &truth, 3).map_err(|e| e.to_string())?;
    ensure(rebuilt == r, || {
        "evaluate disagrees with the hand-built confusion".into()
    })?;
    let empty = EvalReport::from_confusion(vec![vec![2, 0], vec![3, 0]]);
    ensure(empty.precision_per_class == [0.4, 0.0], || {
        "never-predicted class precision".into()
    })?;
    Ok("blobs fit exactly, models byte-identical across thread counts, metric identities exact".into())
}

fn actimg(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_actimg"))
        .current_dir(dir)
        .env_remove("II_SEED")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pipeline_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (one, two) = (tmp.path().join("one"), tmp.path().join("two"));
    for d in [&one, &two] {
        fs::create_dir_all(d).map_err(|e| e.to_string())?;
        actimg(
            d,
            &[
                "demo",
                "--out",
                "data",
                "--classes",
                "3",
                "--per-class",
                "5",
                "--length",
                "104",
            ],
        )?;
        fs::write(
            d.join("run.cfg"),
            "manifest = data/manifest.csv\noutput_dir = run\nrepeats = 5\nsvm_epochs = 50\n",
        )
        .map_err(|e| e.to_string())?;
        actimg(d, &["pipeline", "--config", "run.cfg"])?;
    }
    actimg(
        &two,
        &["pipeline", "--config", "run.cfg", "--out", "serial", "--jobs", "1"],
    )?;

    let (a, b) = (tree(&one.join("run")), tree(&two.join("run")));
    let count = |ext: &str| a.iter().filter(|(n, _)| n.ends_with(ext)).count();
    ensure(count(".png") == 15 * 2 * 3 && count(".itns") == 3, || {
        format!("{} png, {} itns", count(".png"), count(".itns"))
    })?;
    ensure(a.iter().any(|(n, _)| n == "report.txt"), || "no report".into())?;
    let same = |x: &[(String, Vec<u8>)], y: &[(String, Vec<u8>)], what: &str| -> Result<(), String> {
        let names = |t: &[(String, Vec<u8>)]| t.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
        ensure(names(x) == names(y), || format!("{what}: different file sets"))?;
        for ((name, p), (_, q)) in x.iter().zip(y) {
            ensure(p == q, || format!("{what}: {name} differs"))?;
        }
        Ok(())
    };
    same(&a, &b, "rerun")?;
    // the echoed config records the thread count, everything else must match
    let without_config =
        |t: Vec<(String, Vec<u8>)>| t.into_iter().filter(|(n, _)| n != "config.txt").collect::<Vec<_>>();
    same(
        &without_config(a.clone()),
        &without_config(tree(&two.join("serial"))),
        "single thread",
    )?;
    Ok(format!(
        "{} files byte-identical across reruns and thread counts",
        a.len()
    ))
}

fn format_fidelity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let specials = [
        0.0,
        -0.0,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::MIN_POSITIVE / 8.0,
        f64::MAX,
        f64::NAN,
    ];
    for case in 0..200 {
        let rank = rng.random_range(0..=4);
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(0..=5)).collect();
        let numel = dims.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| {
                if rng.random_bool(0.1) {
                    specials[rng.random_range(0..specials.len())]
                } else {
                    f64::from_bits(rng.random::<u64>() >> 1) * if rng.random() { 1.0 } else { -1.0 }
                }
            })
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| e.to_string())?;
        let back = decode_tensor(&encode_tensor(&t).map_err(|e| e.to_string())?, "mem").map_err(|e| e.to_string())?;
        let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(back.dims == t.dims && bits(&back) == bits(&t), || {
            format!("tensor case {case} not exact")
        })?;
    }

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for case in 0..20 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let pixels: Vec<f64> = (0..h * w * 3).map(|_| rng.random()).collect();
        let img = ActivityImage::new(h, w, pixels, EncoderKind::Gaf, "x").map_err(|e| e.to_string())?;
        let path = tmp.path().join(format!("{case}.png"));
        write_png(&img, &path).map_err(|e| e.to_string())?;
        let back = read_png(&path, EncoderKind::Gaf).map_err(|e| e.to_string())?;
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1.0 / 510.0, || format!("png error {worst}"))?;
    Ok(format!("200 tensors bit-exact, png max error {worst:.5} <= 1/510"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("GAF equivalence", Duration::from_secs(10), gaf_equivalence),
        ("MTF correctness", Duration::from_secs(10), mtf_correctness),
        ("RP properties", Duration::from_secs(10), rp_properties),
        ("SI geometry", Duration::MAX, si_geometry),
        ("filters", Duration::MAX, filters),
        ("CCA", Duration::from_secs(30), cca),
        ("fusion gain", Duration::from_secs(120), fusion_gain),
        ("SVM", Duration::MAX, svm),
        ("end-to-end determinism", Duration::MAX, pipeline_determinism),
        ("format fidelity", Duration::MAX, format_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if result.is_ok() && elapsed > *limit {
            result = Err(format!("took {elapsed:.1?}, limit {limit:?}"));
        }
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {elapsed:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}; {elapsed:.2?})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
