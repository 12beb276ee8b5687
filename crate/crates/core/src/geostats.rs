//! Gaussian log-permeability fields from a truncated Karhunen–Loève expansion.
//!
//! The dense covariance matrix between cell centers is eigendecomposed once;
//! a realization is `log10 K = mean + Σ_i sqrt(λ_i) ξ_i v_i` with standard
//! normal `ξ_i` drawn from a ChaCha8 stream keyed by the sample seed, so a
//! seed reproduces the same field bit for bit on every platform.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fvm::{Grid, PermeabilityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Exponential,
    Matern,
}

impl CovarianceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovarianceKind::Exponential => "exponential",
            CovarianceKind::Matern => "matern",
        }
    }
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Self::Exponential),
            "matern" => Ok(Self::Matern),
            other => Err(Error::InvalidInput(format!("unknown covariance kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeostatConfig {
    pub covariance_kind: CovarianceKind,
    /// m
    pub correlation_length: f64,
    /// variance of log10 K
    pub variance: f64,
    /// mean of log10 K (K in m²)
    pub mean_log_perm: f64,
    pub n_modes: usize,
    /// Matérn ν; ignored for the exponential model.
    pub matern_smoothness: f64,
}

impl GeostatConfig {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.correlation_length > 0.0 && self.correlation_length.is_finite()) {
            problems.push(format!("correlation_length {} must be positive", self.correlation_length));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            problems.push(format!("variance {} must be non-negative", self.variance));
        }
        if !self.mean_log_perm.is_finite() {
            problems.push("mean_log_perm must be finite".to_string());
        }
        if self.n_modes < 1 || self.n_modes > grid.n_cells() {
            problems.push(format!("n_modes {} outside [1, {}]", self.n_modes, grid.n_cells()));
        }
        if self.covariance_kind == CovarianceKind::Matern && !(self.matern_smoothness > 0.0 && self.matern_smoothness.is_finite()) {
            problems.push(format!("matern_smoothness {} must be positive", self.matern_smoothness));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    /// Standard deviation used to normalize network inputs.
    pub fn input_std(&self) -> f64 {
        if self.variance > 0.0 {
            self.variance.sqrt()
        } else {
            1.0
        }
    }
}

/// Modified Bessel function of the second kind, `K_ν(x)` for `x > 0`, from
/// `∫_0^∞ exp(−x cosh t) cosh(ν t) dt` with the trapezoid rule (spectrally
/// accurate for this integrand).
pub(crate) fn bessel_k(nu: f64, x: f64) -> f64 {
    let h = 0.01;
    let mut sum = 0.5 * (-x).exp();
    let mut t: f64 = h;
    loop {
        let term = (-x * t.cosh()).exp() * (nu * t).cosh();
        sum += term;
        if term < 1e-18 * sum || t > 60.0 {
            break;
        }
        t += h;
    }
    sum * h
}

fn matern_correlation(nu: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        return (-d).exp();
    }
    if nu == 1.5 {
        let a = 3f64.sqrt() * d;
        return (1.0 + a) * (-a).exp();
    }
    if nu == 2.5 {
        let a = 5f64.sqrt() * d;
        return (1.0 + a + a * a / 3.0) * (-a).exp();
    }
    matern_general(nu, d)
}

fn matern_general(nu: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let a = (2.0 * nu).sqrt() * d;
    let c = 2f64.powf(1.0 - nu) / statrs::function::gamma::gamma(nu) * a.powf(nu) * bessel_k(nu, a);
    c.min(1.0)
}

/// Covariance at separation `r` (m).
pub fn covariance(kind: CovarianceKind, r: f64, correlation_length: f64, variance: f64, smoothness: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("separation {r} must be non-negative")));
    }
    if !(correlation_length > 0.0) {
        return Err(Error::InvalidInput(format!("correlation length {correlation_length} must be positive")));
    }
    let d = r / correlation_length;
    Ok(match kind {
        CovarianceKind::Exponential => variance * (-d).exp(),
        CovarianceKind::Matern => variance * matern_correlation(smoothness, d),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KLBasis {
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// One field of length `n_cells` per mode.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl KLBasis {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn captured_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Per-cell variance of the truncated expansion, Σ λ_i v_i².
    pub fn pointwise_variance(&self) -> Vec<f64> {
        let n = self.eigenvectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (l, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += l * x * x;
            }
        }
        out
    }
}

pub fn covariance_matrix(grid: &Grid, config: &GeostatConfig) -> Result<DMatrix<f64>> {
    let n = grid.n_cells();
    let centers: Vec<(f64, f64)> = (0..n).map(|c| grid.cell_center(c)).collect();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let r = ((centers[a].0 - centers[b].0).powi(2) + (centers[a].1 - centers[b].1).powi(2)).sqrt();
            let c = covariance(config.covariance_kind, r, config.correlation_length, config.variance, config.matern_smoothness)?;
            m[(a, b)] = c;
            m[(b, a)] = c;
        }
    }
    Ok(m)
}

pub fn build_kl_basis(grid: &Grid, config: &GeostatConfig) -> Result<KLBasis> {
    config.validate(grid)?;
    let cov = covariance_matrix(grid, config)?;
    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut eigenvalues = Vec::with_capacity(config.n_modes);
    let mut eigenvectors = Vec::with_capacity(config.n_modes);
    for &k in order.iter().take(config.n_modes) {
        let lam = eig.eigenvalues[k];
        if !lam.is_finite() || lam < -1e-8 * top.max(1e-300) {
            return Err(Error::Eigen(format!("covariance eigenvalue {lam} is significantly negative")));
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best })
            .1;
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues.push(lam.max(0.0));
        eigenvectors.push(v);
    }
    Ok(KLBasis { eigenvalues, eigenvectors })
}

/// log10 K for one realization.
pub fn sample_log_field(basis: &KLBasis, config: &GeostatConfig, seed: u64) -> Vec<f64> {
    let n = basis.eigenvectors.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![config.mean_log_perm; n];
    for (lam, v) in basis.eigenvalues.iter().zip(&basis.eigenvectors) {
        let xi: f64 = StandardNormal.sample(&mut rng);
        let w = lam.sqrt() * xi;
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

pub fn sample_field(basis: &KLBasis, config: &GeostatConfig, seed: u64) -> Result<PermeabilityField> {
    PermeabilityField::new(sample_log_field(basis, config, seed).into_iter().map(|l| 10f64.powf(l)).collect())
}
