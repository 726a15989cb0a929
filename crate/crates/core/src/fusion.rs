//! Canonical correlation analysis (CCA) and canonical correlation fusion (CCF).
//!
//! Both feature sets are centred and their covariances taken with `1/(n-1)`.
//! With ridge-regularized within-set covariances `Cxx + lx I` and `Cyy + ly I`
//! (each `l` a fraction of the block's mean variance), the whitened
//! cross-covariance
//!
//! ```text
//! T = (Cxx + lx I)^(-1/2) Cxy (Cyy + ly I)^(-1/2)
//! ```
//!
//! is decomposed as `T = U S V'`. The columns of `U` are the eigenvectors of
//! `(Cxx + lx I)^(-1/2) Cxy (Cyy + ly I)^(-1) Cyx (Cxx + lx I)^(-1/2)` and
//! `S^2` its eigenvalues. The projections `A = (Cxx + lx I)^(-1/2) U` and
//! `B = (Cyy + ly I)^(-1/2) V` are then rescaled so every canonical variate has
//! unit sample variance.
//!
//! Fusion adds the paired variates: `Z = X'A + Y'B`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const DEFAULT_RIDGE: f64 = 1e-4;

/// Below this fraction of the largest eigenvalue a covariance counts as singular.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    pub mean_x: DVector<f64>,
    pub mean_y: DVector<f64>,
    /// `p x d` projection of the first set.
    pub a: DMatrix<f64>,
    /// `q x d` projection of the second set.
    pub b: DMatrix<f64>,
    /// Sample correlations of the paired variates on the fitting data, descending.
    pub corrs: Vec<f64>,
    pub ridge: f64,
}

impl CcaModel {
    pub fn dim(&self) -> usize {
        self.corrs.len()
    }
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

/// `(C + lambda I)^(-1/2)` with `lambda = ridge * mean(diag C)`.
fn regularized_inv_sqrt(c: &DMatrix<f64>, ridge: f64, which: &str) -> Result<DMatrix<f64>> {
    let p = c.nrows();
    let lambda = ridge * c.trace() / p as f64;
    let reg = c + DMatrix::identity(p, p) * lambda;
    let eig = SymmetricEigen::new(reg);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max.is_nan() || max <= 0.0 || min <= SINGULAR_RTOL * max {
        return Err(Error::SingularCovariance(format!(
            "{which} covariance has eigenvalues in [{min:e}, {max:e}] at ridge {ridge}; use a positive ridge"
        )));
    }
    let inv_sqrt = DVector::from_iterator(p, eig.eigenvalues.iter().map(|&e| 1.0 / e.sqrt()));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose())
}

fn check_pair(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::Alignment(format!("{} rows vs {} rows", x.rows(), y.rows())));
    }
    if x.labels() != y.labels() {
        return Err(Error::Alignment("label vectors differ".into()));
    }
    Ok(())
}

/// Largest admissible number of canonical pairs.
pub fn max_cca_dim(p: usize, q: usize, n: usize) -> usize {
    p.min(q).min(n.saturating_sub(1))
}

/// Fit CCA on paired rows of `x` and `y`, keeping `d` pairs (default: all
/// `min(p, q, n - 1)`).
pub fn cca_fit(x: &FeatureMatrix, y: &FeatureMatrix, d: Option<usize>, ridge: f64) -> Result<CcaModel> {
    check_pair(x, y)?;
    let n = x.rows();
    if n < 3 {
        return Err(Error::InvalidShape(format!("CCA needs at least 3 samples, got {n}")));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::Range(format!("ridge {ridge} must be finite and >= 0")));
    }
    let (p, q) = (x.dim(), y.dim());
    let limit = max_cca_dim(p, q, n);
    let d = d.unwrap_or(limit);
    if d == 0 || d > limit {
        return Err(Error::Range(format!(
            "CCA dimension {d} outside [1, {limit}] for p={p}, q={q}, n={n}"
        )));
    }

    let mean_x = column_means(x.x());
    let mean_y = column_means(y.x());
    let xc = center(x.x(), &mean_x);
    let yc = center(y.x(), &mean_y);
    let scale = 1.0 / (n as f64 - 1.0);
    let cxx = xc.tr_mul(&xc) * scale;
    let cyy = yc.tr_mul(&yc) * scale;
    let cxy = xc.tr_mul(&yc) * scale;

    let kx = regularized_inv_sqrt(&cxx, ridge, "first")?;
    let ky = regularized_inv_sqrt(&cyy, ridge, "second")?;
    let t = &kx * &cxy * &ky;
    let svd = t.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });
    order.truncate(d);

    let mut a = DMatrix::zeros(p, d);
    let mut b = DMatrix::zeros(q, d);
    let mut corrs = Vec::with_capacity(d);
    for (k, &src) in order.iter().enumerate() {
        let mut ak = &kx * u.column(src);
        let mut bk = &ky * v_t.row(src).transpose();
        let var_a = (ak.transpose() * &cxx * &ak)[(0, 0)];
        let var_b = (bk.transpose() * &cyy * &bk)[(0, 0)];
        let usable = var_a > f64::MIN_POSITIVE && var_b > f64::MIN_POSITIVE;
        if var_a > f64::MIN_POSITIVE {
            ak /= var_a.sqrt();
        }
        if var_b > f64::MIN_POSITIVE {
            bk /= var_b.sqrt();
        }
        let corr = if usable {
            (ak.transpose() * &cxy * &bk)[(0, 0)].clamp(0.0, 1.0)
        } else {
            0.0
        };
        a.set_column(k, &ak);
        b.set_column(k, &bk);
        corrs.push(corr);
    }

    // regularization can perturb the order of the realized correlations
    let mut perm: Vec<usize> = (0..d).collect();
    perm.sort_by(|&i, &j| corrs[j].total_cmp(&corrs[i]).then(i.cmp(&j)));
    let a = a.select_columns(&perm);
    let b = b.select_columns(&perm);
    let corrs = perm.iter().map(|&i| corrs[i]).collect();

    Ok(CcaModel {
        mean_x,
        mean_y,
        a,
        b,
        corrs,
        ridge,
    })
}

/// Project both sets onto the canonical directions: `X' = (x - mean_x) A`.
pub fn cca_transform(model: &CcaModel, x: &FeatureMatrix, y: &FeatureMatrix) -> Result<(FeatureMatrix, FeatureMatrix)> {
    check_pair(x, y)?;
    if x.dim() != model.a.nrows() || y.dim() != model.b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {}+{} features, got {}+{}",
            model.a.nrows(),
            model.b.nrows(),
            x.dim(),
            y.dim()
        )));
    }
    let xp = center(x.x(), &model.mean_x) * &model.a;
    let yp = center(y.x(), &model.mean_y) * &model.b;
    Ok((
        FeatureMatrix::new(xp, x.labels().to_vec(), format!("{}'", x.modality_tag))?,
        FeatureMatrix::new(yp, y.labels().to_vec(), format!("{}'", y.modality_tag))?,
    ))
}

/// Canonical correlation fusion: elementwise sum of the paired variates.
pub fn ccf_fuse(xprime: &FeatureMatrix, yprime: &FeatureMatrix) -> Result<FeatureMatrix> {
    if xprime.x().shape() != yprime.x().shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            xprime.x().shape(),
            yprime.x().shape()
        )));
    }
    check_pair(xprime, yprime)?;
    FeatureMatrix::new(
        xprime.x() + yprime.x(),
        xprime.labels().to_vec(),
        format!(
            "{}+{}",
            xprime.modality_tag.trim_end_matches('\''),
            yprime.modality_tag.trim_end_matches('\'')
        ),
    )
}

/// Two chained CCF stages: `(m1 + m2)` then `+ m3`. Fitted on training rows
/// and applied unchanged to held-out rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageCcf {
    pub first: CcaModel,
    pub second: CcaModel,
}

impl TwoStageCcf {
    pub fn fit(
        f1: &FeatureMatrix,
        f2: &FeatureMatrix,
        f3: &FeatureMatrix,
        d: Option<usize>,
        ridge: f64,
    ) -> Result<Self> {
        check_pair(f1, f3)?;
        let first = cca_fit(f1, f2, d, ridge)?;
        let z12 = Self::stage(&first, f1, f2)?;
        let second = cca_fit(&z12, f3, d.map(|d| d.min(z12.dim())), ridge)?;
        Ok(Self { first, second })
    }

    fn stage(model: &CcaModel, x: &FeatureMatrix, y: &FeatureMatrix) -> Result<FeatureMatrix> {
        let (xp, yp) = cca_transform(model, x, y)?;
        ccf_fuse(&xp, &yp)
    }

    pub fn transform(&self, f1: &FeatureMatrix, f2: &FeatureMatrix, f3: &FeatureMatrix) -> Result<FeatureMatrix> {
        let z12 = Self::stage(&self.first, f1, f2)?;
        Self::stage(&self.second, &z12, f3)
    }
}

/// Fit both stages on the given rows and return their fused features.
pub fn ccf_two_stage(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    f3: &FeatureMatrix,
    d: Option<usize>,
    ridge: f64,
) -> Result<FeatureMatrix> {
    TwoStageCcf::fit(f1, f2, f3, d, ridge)?.transform(f1, f2, f3)
}
