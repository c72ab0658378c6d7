use nalgebra::{DMatrix, SymmetricEigen};

use super::MetricsError;

const SYMMETRY_TOL: f64 = 1e-8;
const NEGATIVE_TOL: f64 = 1e-6;

/// Sample mean and unbiased covariance of `n` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub n: usize,
    pub mu: Vec<f64>,
    /// `d × d`, symmetric.
    pub sigma: DMatrix<f64>,
    /// Extractor identity; distances between stats with different ids are refused.
    pub extractor: Option<String>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn with_extractor(mut self, id: impl Into<String>) -> Self {
        self.extractor = Some(id.into());
        self
    }
}

/// Neumaier summation over values sorted by `total_cmp`; the result does not
/// depend on the input order.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in v {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + comp
}

pub fn gaussian_stats(vectors: &[Vec<f64>]) -> Result<FeatureStats, MetricsError> {
    let n = vectors.len();
    if n < 2 {
        return Err(MetricsError::TooFewVectors(n));
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(MetricsError::DimMismatch(d, v.len()));
    }
    let mu: Vec<f64> = (0..d)
        .map(|k| ordered_sum(vectors.iter().map(|v| v[k]).collect()) / n as f64)
        .collect();
    let mut sigma = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s = ordered_sum(
                vectors
                    .iter()
                    .map(|v| (v[i] - mu[i]) * (v[j] - mu[j]))
                    .collect(),
            ) / (n - 1) as f64;
            sigma[(i, j)] = s;
            sigma[(j, i)] = s;
        }
    }
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(FeatureStats {
        n,
        mu,
        sigma,
        extractor: None,
    })
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), MetricsError> {
    let dev = (m - m.transpose()).amax();
    if dev > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(MetricsError::Asymmetric(dev));
    }
    Ok(())
}

fn eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, MetricsError> {
    SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000).ok_or(MetricsError::NonConvergent)
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues are
/// clamped to zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    if !m.is_square() {
        return Err(MetricsError::DimMismatch(m.nrows(), m.ncols()));
    }
    check_symmetric(m)?;
    let e = eigen(m)?;
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    let r = &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
///
/// Results in `(−1e-6, 0)` are rounding and become 0; anything more negative is
/// an error.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimMismatch(a.dim(), b.dim()));
    }
    if let (Some(x), Some(y)) = (&a.extractor, &b.extractor) {
        if x != y {
            return Err(MetricsError::ExtractorMismatch(x.clone(), y.clone()));
        }
    }
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y) * (x - y)).sum();
    check_symmetric(&b.sigma)?;
    let sa = matrix_sqrt_psd(&a.sigma)?;
    let inner = &sa * &b.sigma * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = eigen(&inner)?
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let d2 = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
    if d2 >= 0.0 {
        Ok(d2)
    } else if d2 > -NEGATIVE_TOL {
        Ok(0.0)
    } else {
        Err(MetricsError::NegativeDistance(d2))
    }
}
