//! Market inputs: return tables, estimated moments, the Cholesky factor of the
//! covariance, the equicorrelation covariance model and synthetic instances.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative jitter applied once when a covariance fails to factor.
const DEFAULT_JITTER_SCALE: f64 = 1e-8;

/// Per-period simple returns, one row per period and one column per asset.
#[derive(Debug, Clone)]
pub struct ReturnsTable {
    pub asset_ids: Vec<String>,
    pub data: DMatrix<f64>,
    pub frequency: String,
}

impl ReturnsTable {
    pub fn new(asset_ids: Vec<String>, data: DMatrix<f64>, frequency: impl Into<String>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 periods, got {}", data.nrows())));
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidInput("returns table has no assets".into()));
        }
        if asset_ids.len() != data.ncols() {
            return Err(Error::InvalidInput(format!("{} asset ids for {} columns", asset_ids.len(), data.ncols())));
        }
        for (j, col) in data.column_iter().enumerate() {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::MalformedRow { row: i + 1, msg: format!("non-finite return for asset '{}'", asset_ids[j]) });
            }
        }
        Ok(Self { asset_ids, data, frequency: frequency.into() })
    }

    /// Parses a CSV with a header row of asset ids and one row of decimal
    /// returns per period. Rows are numbered from 1 (the first data row).
    pub fn from_csv<R: Read>(reader: R, frequency: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
        let asset_ids: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let n = asset_ids.len();
        let mut values = Vec::new();
        let mut rows = 0;
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != n {
                return Err(Error::MalformedRow { row: i + 1, msg: format!("expected {} fields, found {}", n, record.len()) });
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                    row: i + 1,
                    msg: format!("field '{}' for asset '{}' is not a number", field, asset_ids[j]),
                })?;
                values.push(v);
            }
            rows += 1;
        }
        let data = DMatrix::from_row_slice(rows, n, &values);
        Self::new(asset_ids, data, frequency)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, frequency: &str) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv(file, frequency)
    }

    pub fn periods(&self) -> usize {
        self.data.nrows()
    }

    pub fn assets(&self) -> usize {
        self.data.ncols()
    }
}

/// Estimated mean vector and covariance with its Cholesky factor.
///
/// The factor is stored lower-triangular, `cov = L Lᵀ`. The solver works with
/// `W = Lᵀ`, so that `Wᵀ W = cov`; [`MarketModel::w_mul`] and
/// [`MarketModel::wt_mul`] apply `W` and `Wᵀ` without forming them.
#[derive(Debug, Clone)]
pub struct MarketModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketJson {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl MarketModel {
    /// Builds a model from a mean and a covariance. The covariance is
    /// symmetrized; if it does not factor, `1e-8 * trace / n` is added to the
    /// diagonal and the factorization is retried once.
    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty market".into()));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::InvalidInput(format!("covariance is {}x{}, mean has length {}", cov.nrows(), cov.ncols(), n)));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite market data".into()));
        }
        let cov = symmetrize(&cov);
        if let Some(chol) = cov.clone().cholesky() {
            return Ok(Self { mean, chol_lower: chol.unpack(), cov });
        }
        let jitter = DEFAULT_JITTER_SCALE * (cov.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        let jittered = &cov + DMatrix::identity(n, n) * jitter;
        match jittered.clone().cholesky() {
            Some(chol) => Ok(Self { mean, chol_lower: chol.unpack(), cov: jittered }),
            None => Err(Error::NotPositiveDefinite { min_eigenvalue: min_eigenvalue(&cov) }),
        }
    }

    /// Column means and the unbiased sample covariance plus `jitter * I`.
    pub fn estimate(returns: &ReturnsTable, jitter: f64) -> Result<Self> {
        if !(jitter >= 0.0) || !jitter.is_finite() {
            return Err(Error::InvalidInput(format!("jitter must be >= 0, got {jitter}")));
        }
        let t = returns.periods();
        let n = returns.assets();
        let data = &returns.data;
        let mean = DVector::from_iterator(n, data.column_iter().map(|c| c.sum() / t as f64));
        let mut centered = data.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let mut cov = centered.transpose() * &centered / (t as f64 - 1.0);
        for i in 0..n {
            cov[(i, i)] += jitter;
        }
        Self::from_moments(mean, cov)
    }

    pub fn from_json(json: &MarketJson) -> Result<Self> {
        let n = json.mean.len();
        if json.cov.len() != n || json.cov.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("cov must be {n}x{n} to match the mean vector")));
        }
        let flat: Vec<f64> = json.cov.iter().flatten().copied().collect();
        Self::from_moments(DVector::from_vec(json.mean.clone()), DMatrix::from_row_slice(n, n, &flat))
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let json: MarketJson = serde_json::from_str(&text)?;
        Self::from_json(&json)
    }

    pub fn to_json(&self) -> MarketJson {
        MarketJson {
            mean: self.mean.iter().copied().collect(),
            cov: self.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = cov`.
    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    /// `W x = Lᵀ x`.
    pub fn w_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol_lower.tr_mul(x)
    }

    /// `Wᵀ y = L y`.
    pub fn wt_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.chol_lower * y
    }

    /// `cov⁻¹ b` through two triangular solves.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.chol_lower.solve_lower_triangular_mut(&mut out);
        self.chol_lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.chol_lower.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `xᵀ cov x`, computed as `‖Lᵀx‖²` so it is never negative.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        self.w_mul(x).norm_squared()
    }

    /// Eigenvalues of the covariance in descending order.
    pub fn eigenvalues_desc(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.cov.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues_desc();
        ev[0] / ev[ev.len() - 1]
    }

    /// `‖WᵀW − cov‖_F / ‖cov‖_F`.
    pub fn factor_residual(&self) -> f64 {
        let recon = &self.chol_lower * self.chol_lower.transpose();
        (recon - &self.cov).norm() / self.cov.norm()
    }

    /// The market restricted to the given assets (in the given order).
    pub fn submarket(&self, idx: &[usize]) -> Result<Self> {
        let k = idx.len();
        let mean = DVector::from_iterator(k, idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(k, k, |a, b| self.cov[(idx[a], idx[b])]);
        Self::from_moments(mean, cov)
    }

    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.n() {
            return Err(Error::InvalidInput("mean length mismatch".into()));
        }
        Ok(Self { mean, cov: self.cov.clone(), chol_lower: self.chol_lower.clone() })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) })
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Equicorrelation covariance: variance `sigma²` on the diagonal and
/// covariance `rho * sigma²` everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCov {
    pub sigma: f64,
    pub rho: f64,
    pub n: usize,
}

impl ParamCov {
    pub fn new(sigma: f64, rho: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("dimension must be >= 1".into()));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        let lower = if n > 1 { -1.0 / (n as f64 - 1.0) } else { f64::NEG_INFINITY };
        if !(rho > lower && rho < 1.0) {
            return Err(Error::InvalidInput(format!("rho = {rho} outside ({lower}, 1) for n = {n}")));
        }
        Ok(Self { sigma, rho, n })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let s2 = self.sigma * self.sigma;
        DMatrix::from_fn(self.n, self.n, |i, j| if i == j { s2 } else { self.rho * s2 })
    }

    /// Nearest equicorrelation matrix in Frobenius norm. The diagonal and the
    /// off-diagonal entries are fitted by their means; `rho` is clamped to keep
    /// the result positive definite.
    pub fn fit(cov: &DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if n == 0 || cov.ncols() != n {
            return Err(Error::InvalidInput("covariance must be square and non-empty".into()));
        }
        let s2 = cov.diagonal().sum() / n as f64;
        if !(s2 > 0.0) {
            return Err(Error::InvalidInput(format!("fitted variance {s2} is not positive")));
        }
        let rho = if n > 1 {
            let off = (cov.sum() - cov.diagonal().sum()) / (n * (n - 1)) as f64;
            let lo = -1.0 / (n as f64 - 1.0) + 1e-6;
            let hi = 1.0 - 1e-6;
            (off / s2).clamp(lo, hi)
        } else {
            0.0
        };
        Self::new(s2.sqrt(), rho, n)
    }

    pub fn frobenius_residual(&self, cov: &DMatrix<f64>) -> f64 {
        (self.matrix() - cov).norm()
    }
}

/// Eigenvalue spectrum of a synthetic covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpectrumSpec {
    Explicit(Vec<f64>),
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

/// Distribution of a synthetic mean vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeanSpec {
    Zero,
    Constant(f64),
    Normal { mean: f64, sd: f64 },
    Explicit(Vec<f64>),
}

/// Synthetic market: `cov = Q diag(spectrum) Qᵀ` with a random orthogonal `Q`.
/// Deterministic in `seed`.
pub fn synth_market(seed: u64, n: usize, spectrum: &SpectrumSpec, mean: &MeanSpec) -> Result<MarketModel> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eig: Vec<f64> = match spectrum {
        SpectrumSpec::Explicit(v) => {
            if v.len() != n {
                return Err(Error::InvalidInput(format!("spectrum has {} values for n = {n}", v.len())));
            }
            v.clone()
        }
        SpectrumSpec::Uniform { lo, hi } => {
            check_range(*lo, *hi)?;
            let d = Uniform::new_inclusive(*lo, *hi).map_err(|e| Error::InvalidInput(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
        SpectrumSpec::LogUniform { lo, hi } => {
            check_range(*lo, *hi)?;
            let d = Uniform::new_inclusive(lo.ln(), hi.ln()).map_err(|e| Error::InvalidInput(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng).exp()).collect()
        }
    };
    if let Some(bad) = eig.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidInput(format!("non-positive eigenvalue {bad} in spectrum")));
    }

    let cov = if eig.iter().all(|&l| l == eig[0]) {
        DMatrix::identity(n, n) * eig[0]
    } else {
        let q = random_orthogonal(n, &mut rng);
        let scaled = DMatrix::from_fn(n, n, |i, j| q[(i, j)] * eig[j]);
        symmetrize(&(scaled * q.transpose()))
    };

    let mu = match mean {
        MeanSpec::Zero => DVector::zeros(n),
        MeanSpec::Constant(c) => DVector::from_element(n, *c),
        MeanSpec::Normal { mean, sd } => {
            let d = Normal::new(*mean, *sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
            DVector::from_iterator(n, (0..n).map(|_| d.sample(&mut rng)))
        }
        MeanSpec::Explicit(v) => {
            if v.len() != n {
                return Err(Error::InvalidInput("explicit mean length mismatch".into()));
            }
            DVector::from_vec(v.clone())
        }
    };
    MarketModel::from_moments(mu, cov)
}

/// One-factor market at monthly scale, shaped like industry portfolios:
/// market volatility 4.5%, betas in `[0.6, 1.4]`, idiosyncratic volatility in
/// `[2%, 5%]`, and mean `0.8% + 0.4%·β` plus uniform noise of ±0.4%.
pub fn factor_market(seed: u64, n: usize) -> Result<MarketModel> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = Uniform::new(0.6, 1.4).unwrap();
    let idio = Uniform::new(0.02, 0.05).unwrap();
    let noise = Uniform::new(-0.004, 0.004).unwrap();
    let b: Vec<f64> = (0..n).map(|_| beta.sample(&mut rng)).collect();
    let s: Vec<f64> = (0..n).map(|_| idio.sample(&mut rng)).collect();
    let market_var = 0.045f64 * 0.045;
    let cov = DMatrix::from_fn(n, n, |i, j| market_var * b[i] * b[j] + if i == j { s[i] * s[i] } else { 0.0 });
    let mean = DVector::from_iterator(n, b.iter().map(|bi| 0.008 + 0.004 * bi + noise.sample(&mut rng)));
    MarketModel::from_moments(mean, cov)
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("bad eigenvalue range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Haar-distributed orthogonal matrix from the QR factorization of a
/// Gaussian matrix, with the sign of `R`'s diagonal folded into `Q`.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let g = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Draws `periods` i.i.d. Gaussian return rows from the model.
pub fn sample_returns(model: &MarketModel, periods: usize, seed: u64) -> ReturnsTable {
    let n = model.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = DMatrix::zeros(periods, n);
    for t in 0..periods {
        let z = DVector::from_iterator(n, (0..n).map(|_| normal.sample(&mut rng)));
        let row = model.chol_lower() * z + model.mean();
        data.row_mut(t).copy_from(&row.transpose());
    }
    let ids = (0..n).map(|i| format!("A{i}")).collect();
    ReturnsTable { asset_ids: ids, data, frequency: "synthetic".into() }
}
