//! Universal kriging: polynomial trend, stationary product correlation,
//! generalized least squares trend estimate, best linear unbiased predictor and
//! its mean squared error.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrigingError {
    #[error("no design sites")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sites {0} and {1} coincide after normalization")]
    DuplicateSites(usize, usize),
    #[error("{n} sites cannot determine {p} trend coefficients")]
    UnderDetermined { n: usize, p: usize },
    #[error("ill-conditioned system: {0}")]
    Conditioning(String),
    #[error("invalid hyperparameters: {0}")]
    Theta(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
}

/// Regression basis evaluated on normalized inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrendBasis {
    #[default]
    Constant,
    Linear,
    Quadratic,
}

impl TrendBasis {
    pub fn size(self, q: usize) -> usize {
        match self {
            TrendBasis::Constant => 1,
            TrendBasis::Linear => 1 + q,
            TrendBasis::Quadratic => 1 + q + q * (q + 1) / 2,
        }
    }

    pub fn eval(self, x: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.size(x.len()));
        f.push(1.0);
        if self != TrendBasis::Constant {
            f.extend_from_slice(x);
        }
        if self == TrendBasis::Quadratic {
            for j in 0..x.len() {
                for k in j..x.len() {
                    f.push(x[j] * x[k]);
                }
            }
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Gaussian,
    Exponential,
    Linear,
    Cubic,
    Spline,
}

impl KernelKind {
    /// One-dimensional correlation at separation `d` with scale `theta`.
    pub fn corr_1d(self, theta: f64, d: f64) -> f64 {
        let a = d.abs();
        match self {
            KernelKind::Gaussian => (-theta * d * d).exp(),
            KernelKind::Exponential => (-theta * a).exp(),
            KernelKind::Linear => (1.0 - theta * a).max(0.0),
            KernelKind::Cubic => {
                let xi = (theta * a).min(1.0);
                1.0 - xi * xi * (3.0 - 2.0 * xi)
            }
            KernelKind::Spline => {
                let xi = theta * a;
                if xi <= 0.2 {
                    1.0 - xi * xi * (15.0 - 30.0 * xi)
                } else if xi < 1.0 {
                    1.25 * (1.0 - xi).powi(3)
                } else {
                    0.0
                }
            }
        }
    }

    /// Product correlation between two normalized points.
    pub fn corr(self, theta: &[f64], w: &[f64], x: &[f64]) -> f64 {
        if self == KernelKind::Gaussian {
            // one exponential keeps R(θ, x, x) exactly 1
            let s: f64 = theta.iter().zip(w.iter().zip(x)).map(|(t, (a, b))| t * (a - b) * (a - b)).sum();
            return (-s).exp();
        }
        theta.iter().zip(w.iter().zip(x)).map(|(&t, (a, b))| self.corr_1d(t, a - b)).product()
    }
}

/// How the correlation scales are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSpec {
    Fixed(Vec<f64>),
    /// Pattern search on log θ within `[lower, upper]` from `start` (scalars
    /// apply to every dimension).
    Optimize { lower: f64, upper: f64, start: f64 },
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Optimize { lower: 1e-2, upper: 20.0, start: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub basis: TrendBasis,
    pub kernel: KernelKind,
    pub theta: ThetaSpec,
    /// Standardize each input to zero mean and unit sample deviation before
    /// evaluating the kernel.
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            basis: TrendBasis::Constant,
            kernel: KernelKind::Gaussian,
            theta: ThetaSpec::default(),
            standardize: true,
        }
    }
}

pub const NUGGET_START: f64 = 1e-12;
pub const NUGGET_MAX: f64 = 1e-6;
const MIN_SITE_DISTANCE: f64 = 1e-8;

/// Fit diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct FitReport {
    /// `det(R)^{1/n} σ²` at the chosen θ; smaller is more likely.
    pub objective: f64,
    pub evaluations: usize,
    /// Per dimension: θ ended on its lower (-1) or upper (+1) bound, else 0.
    pub at_bound: Vec<i8>,
}

#[derive(Clone, Debug)]
struct Factors {
    chol_l: DMatrix<f64>,
    /// `L⁻¹F`.
    ft: DMatrix<f64>,
    /// Upper triangular factor of `L⁻¹F = QG`.
    g: DMatrix<f64>,
    beta: DVector<f64>,
    /// `R⁻¹(Y − Fβ)`.
    gamma: DVector<f64>,
    sigma2: f64,
    nugget: f64,
    log_det: f64,
}

/// Fitted surrogate. Immutable; safe to share across threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct KrigingModel {
    sites: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    responses: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    basis: TrendBasis,
    kernel: KernelKind,
    theta: Vec<f64>,
    factors: Factors,
    report: FitReport,
}

/// Serialized form. The factorization is recomputed on load from the stored
/// sites, θ and nugget, which reproduces it exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDocument {
    pub sites: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    pub basis: TrendBasis,
    pub kernel: KernelKind,
    pub theta: Vec<f64>,
    pub nugget: f64,
    pub normalization_mean: Vec<f64>,
    pub normalization_scale: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub report: FitReport,
}

impl From<KrigingModel> for ModelDocument {
    fn from(m: KrigingModel) -> Self {
        ModelDocument {
            beta: m.factors.beta.iter().copied().collect(),
            sigma2: m.factors.sigma2,
            nugget: m.factors.nugget,
            sites: m.sites,
            responses: m.responses,
            basis: m.basis,
            kernel: m.kernel,
            theta: m.theta,
            normalization_mean: m.mean,
            normalization_scale: m.scale,
            report: m.report,
        }
    }
}

impl TryFrom<ModelDocument> for KrigingModel {
    type Error = KrigingError;

    fn try_from(doc: ModelDocument) -> Result<Self, KrigingError> {
        let standardize = doc.normalization_mean.iter().any(|&m| m != 0.0) || doc.normalization_scale.iter().any(|&v| v != 1.0);
        let prep = Prepared::new(&doc.sites, &doc.responses, doc.basis, standardize)?;
        if prep.mean != doc.normalization_mean || prep.scale != doc.normalization_scale {
            return Err(KrigingError::Conditioning("stored normalization does not match the sites".into()));
        }
        check_theta(&doc.theta, prep.q)?;
        let factors = prep
            .factorize_with_nugget(doc.kernel, &doc.theta, doc.nugget)
            .ok_or_else(|| KrigingError::Conditioning(format!("stored nugget {} does not factorize", doc.nugget)))?;
        if factors.beta.iter().copied().collect::<Vec<_>>() != doc.beta || factors.sigma2 != doc.sigma2 {
            return Err(KrigingError::Conditioning("stored coefficients do not match the refit".into()));
        }
        Ok(prep.into_model(doc.kernel, doc.theta, factors, doc.report))
    }
}

struct Prepared {
    q: usize,
    sites: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    responses: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    basis: TrendBasis,
    f: DMatrix<f64>,
    y: DVector<f64>,
}

impl Prepared {
    fn new(sites: &[Vec<f64>], responses: &[f64], basis: TrendBasis, standardize: bool) -> Result<Self, KrigingError> {
        let n = sites.len();
        if n == 0 {
            return Err(KrigingError::Empty);
        }
        if responses.len() != n {
            return Err(KrigingError::Dimension { expected: n, got: responses.len() });
        }
        let q = sites[0].len();
        if q == 0 {
            return Err(KrigingError::Dimension { expected: 1, got: 0 });
        }
        for s in sites {
            if s.len() != q {
                return Err(KrigingError::Dimension { expected: q, got: s.len() });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(KrigingError::NonFinite("site"));
            }
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(KrigingError::NonFinite("response"));
        }
        let p = basis.size(q);
        if n < p {
            return Err(KrigingError::UnderDetermined { n, p });
        }
        let mut mean = vec![0.0; q];
        let mut scale = vec![1.0; q];
        for j in (0..q).filter(|_| standardize) {
            mean[j] = sites.iter().map(|s| s[j]).sum::<f64>() / n as f64;
            if n > 1 {
                let var = sites.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64;
                if var > 0.0 {
                    scale[j] = var.sqrt();
                }
            }
        }
        let normalized: Vec<Vec<f64>> =
            sites.iter().map(|s| (0..q).map(|j| (s[j] - mean[j]) / scale[j]).collect()).collect();
        for i in 0..n {
            for k in i + 1..n {
                let d2: f64 = (0..q).map(|j| (normalized[i][j] - normalized[k][j]).powi(2)).sum();
                if d2.sqrt() <= MIN_SITE_DISTANCE {
                    return Err(KrigingError::DuplicateSites(i, k));
                }
            }
        }
        let f = DMatrix::from_fn(n, p, |i, k| basis.eval(&normalized[i])[k]);
        let y = DVector::from_column_slice(responses);
        Ok(Prepared {
            q,
            sites: sites.to_vec(),
            normalized,
            responses: responses.to_vec(),
            mean,
            scale,
            basis,
            f,
            y,
        })
    }

    fn correlation(&self, kernel: KernelKind, theta: &[f64]) -> DMatrix<f64> {
        let n = self.normalized.len();
        let mut r = DMatrix::identity(n, n);
        for i in 0..n {
            for k in 0..i {
                let c = kernel.corr(theta, &self.normalized[i], &self.normalized[k]);
                r[(i, k)] = c;
                r[(k, i)] = c;
            }
        }
        r
    }

    fn factorize_with_nugget(&self, kernel: KernelKind, theta: &[f64], nugget: f64) -> Option<Factors> {
        let mut r = self.correlation(kernel, theta);
        for i in 0..r.nrows() {
            r[(i, i)] += nugget;
        }
        self.finish(r, nugget)
    }

    /// Cholesky with the smallest nugget from the ladder that succeeds.
    fn factorize(&self, kernel: KernelKind, theta: &[f64]) -> Result<Factors, KrigingError> {
        let base = self.correlation(kernel, theta);
        let mut nugget = NUGGET_START;
        while nugget <= NUGGET_MAX * (1.0 + 1e-9) {
            let mut r = base.clone();
            for i in 0..r.nrows() {
                r[(i, i)] += nugget;
            }
            if let Some(f) = self.finish(r, nugget) {
                return Ok(f);
            }
            nugget *= 10.0;
        }
        Err(KrigingError::Conditioning(format!(
            "correlation matrix not positive definite with nugget {NUGGET_MAX} (theta {theta:?})"
        )))
    }

    fn finish(&self, r: DMatrix<f64>, nugget: f64) -> Option<Factors> {
        let n = r.nrows();
        let chol: Cholesky<f64, Dyn> = Cholesky::new(r)?;
        let l = chol.l();
        let mut log_det = 0.0;
        for i in 0..n {
            let d = l[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            log_det += 2.0 * d.ln();
        }
        let ft = l.solve_lower_triangular(&self.f)?;
        let yt = l.solve_lower_triangular(&self.y)?;
        let qr = ft.clone().qr();
        let g = qr.r();
        let dmax = g.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dmin = g.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(dmin > 1e-10 * dmax) {
            return None;
        }
        let qty = qr.q().transpose() * &yt;
        let beta = g.solve_upper_triangular(&qty)?;
        let rho = &yt - &ft * &beta;
        let sigma2 = rho.dot(&rho) / n as f64;
        let gamma = l.transpose().solve_upper_triangular(&rho)?;
        if !(sigma2.is_finite() && beta.iter().all(|v| v.is_finite())) {
            return None;
        }
        Some(Factors { chol_l: l, ft, g, beta, gamma, sigma2, nugget, log_det })
    }

    fn objective(&self, kernel: KernelKind, theta: &[f64]) -> (f64, Option<Factors>) {
        match self.factorize(kernel, theta) {
            Ok(f) => ((f.log_det / self.normalized.len() as f64).exp() * f.sigma2, Some(f)),
            Err(_) => (f64::INFINITY, None),
        }
    }

    fn into_model(self, kernel: KernelKind, theta: Vec<f64>, factors: Factors, report: FitReport) -> KrigingModel {
        let q = self.q;
        let lower = (0..q).map(|j| self.sites.iter().map(|s| s[j]).fold(f64::INFINITY, f64::min)).collect();
        let upper = (0..q).map(|j| self.sites.iter().map(|s| s[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        KrigingModel {
            sites: self.sites,
            normalized: self.normalized,
            responses: self.responses,
            mean: self.mean,
            scale: self.scale,
            lower,
            upper,
            basis: self.basis,
            kernel,
            theta,
            factors,
            report,
        }
    }
}

fn check_theta(theta: &[f64], q: usize) -> Result<(), KrigingError> {
    if theta.len() != q {
        return Err(KrigingError::Dimension { expected: q, got: theta.len() });
    }
    if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(KrigingError::Theta(format!("all theta must be positive, got {theta:?}")));
    }
    Ok(())
}

/// Hooke–Jeeves pattern search minimizing `f` over the box `[lo, hi]`.
fn pattern_search(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64, usize) {
    let q = x0.len();
    let clamp = |x: &mut [f64]| {
        for j in 0..q {
            x[j] = x[j].clamp(lo[j], hi[j]);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        f(x)
    };
    let mut step: Vec<f64> = (0..q).map(|j| ((hi[j] - lo[j]) / 8.0).max(1e-3)).collect();
    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut fx = eval(&x);

    let explore = |base: &[f64], fbase: f64, step: &[f64], eval: &mut dyn FnMut(&[f64]) -> f64| {
        let mut y = base.to_vec();
        let mut fy = fbase;
        for j in 0..q {
            for dir in [1.0, -1.0] {
                let mut z = y.clone();
                z[j] = (z[j] + dir * step[j]).clamp(lo[j], hi[j]);
                if z[j] == y[j] {
                    continue;
                }
                let fz = eval(&z);
                if fz < fy {
                    y = z;
                    fy = fz;
                    break;
                }
            }
        }
        (y, fy)
    };

    for _ in 0..200 {
        let (mut y, mut fy) = explore(&x, fx, &step, &mut eval);
        if fy < fx {
            // pattern moves along the improving direction
            loop {
                let mut z: Vec<f64> = (0..q).map(|j| 2.0 * y[j] - x[j]).collect();
                clamp(&mut z);
                x = y.clone();
                fx = fy;
                let fz = eval(&z);
                let (w, fw) = explore(&z, fz, &step, &mut eval);
                if fw < fx {
                    y = w;
                    fy = fw;
                } else {
                    break;
                }
            }
        } else {
            for s in &mut step {
                *s *= 0.5;
            }
            if step.iter().all(|&s| s < 1e-3) {
                break;
            }
        }
    }
    (x, fx, evals)
}

/// Fits a kriging model to `sites` (n × q) and `responses`.
pub fn fit(sites: &[Vec<f64>], responses: &[f64], options: &FitOptions) -> Result<KrigingModel, KrigingError> {
    let prep = Prepared::new(sites, responses, options.basis, options.standardize)?;
    let q = prep.q;
    match &options.theta {
        ThetaSpec::Fixed(theta) => {
            check_theta(theta, q)?;
            let factors = prep.factorize(options.kernel, theta)?;
            let objective = (factors.log_det / sites.len() as f64).exp() * factors.sigma2;
            let report = FitReport { objective, evaluations: 1, at_bound: vec![0; q] };
            Ok(prep.into_model(options.kernel, theta.clone(), factors, report))
        }
        &ThetaSpec::Optimize { lower, upper, start } => {
            if !(lower > 0.0 && upper >= lower && upper.is_finite()) {
                return Err(KrigingError::Theta(format!("bad bounds [{lower}, {upper}]")));
            }
            if !(start > 0.0 && start.is_finite()) {
                return Err(KrigingError::Theta(format!("bad start {start}")));
            }
            let (llo, lhi) = (lower.ln(), upper.ln());
            let lo = vec![llo; q];
            let hi = vec![lhi; q];
            let starts = [start.ln().clamp(llo, lhi), 0.5 * (llo + lhi), llo + 0.25 * (lhi - llo)];
            let objective = |log_theta: &[f64]| {
                let theta: Vec<f64> = log_theta.iter().map(|v| v.exp()).collect();
                prep.objective(options.kernel, &theta).0
            };
            let results: Vec<(Vec<f64>, f64, usize)> = starts
                .par_iter()
                .map(|&s| pattern_search(&objective, &vec![s; q], &lo, &hi))
                .collect();
            let evaluations = results.iter().map(|r| r.2).sum();
            let mut best = 0;
            for (i, r) in results.iter().enumerate() {
                if r.1 < results[best].1 {
                    best = i;
                }
            }
            let log_theta = &results[best].0;
            if !results[best].1.is_finite() {
                return Err(KrigingError::Conditioning("no theta in bounds gives a usable factorization".into()));
            }
            let theta: Vec<f64> = log_theta.iter().map(|v| v.exp()).collect();
            let at_bound = log_theta
                .iter()
                .map(|&v| if v <= llo + 1e-9 { -1 } else if v >= lhi - 1e-9 { 1 } else { 0 })
                .collect();
            let factors = prep.factorize(options.kernel, &theta)?;
            let objective = (factors.log_det / sites.len() as f64).exp() * factors.sigma2;
            let report = FitReport { objective, evaluations, at_bound };
            Ok(prep.into_model(options.kernel, theta, factors, report))
        }
    }
}

/// Prediction at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    /// Mean squared error, clamped at zero.
    pub mse: f64,
    /// Mean squared error before clamping.
    pub mse_raw: f64,
    /// The point lies outside the bounding box of the sites.
    pub extrapolated: bool,
}

impl KrigingModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sites(&self) -> &[Vec<f64>] {
        &self.sites
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> &[f64] {
        self.factors.beta.as_slice()
    }

    pub fn sigma2(&self) -> f64 {
        self.factors.sigma2
    }

    pub fn nugget(&self) -> f64 {
        self.factors.nugget
    }

    pub fn basis(&self) -> TrendBasis {
        self.basis
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn is_extrapolation(&self, x: &[f64]) -> bool {
        x.iter().enumerate().any(|(j, v)| *v < self.lower[j] || *v > self.upper[j])
    }

    fn check(&self, x: &[f64]) -> Result<Vec<f64>, KrigingError> {
        if x.len() != self.dim() {
            return Err(KrigingError::Dimension { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KrigingError::NonFinite("prediction point"));
        }
        Ok(self.normalize(x))
    }

    /// Correlations with the sites and the self-correlation at `xn`. The
    /// nugget enters only where `xn` coincides with a site, which keeps the
    /// predictor an exact interpolator.
    fn correlations(&self, xn: &[f64]) -> (DVector<f64>, f64) {
        let mut self_corr = 1.0;
        let r = DVector::from_iterator(
            self.normalized.len(),
            self.normalized.iter().map(|s| {
                if s.as_slice() == xn {
                    self_corr = 1.0 + self.factors.nugget;
                    1.0 + self.factors.nugget
                } else {
                    self.kernel.corr(&self.theta, s, xn)
                }
            }),
        );
        (r, self_corr)
    }

    /// Best linear unbiased predictor.
    pub fn predict(&self, x: &[f64]) -> Result<f64, KrigingError> {
        let xn = self.check(x)?;
        let (r, _) = self.correlations(&xn);
        let f = DVector::from_vec(self.basis.eval(&xn));
        Ok(f.dot(&self.factors.beta) + r.dot(&self.factors.gamma))
    }

    pub fn predict_full(&self, x: &[f64]) -> Result<Prediction, KrigingError> {
        let xn = self.check(x)?;
        let (r, self_corr) = self.correlations(&xn);
        let f = DVector::from_vec(self.basis.eval(&xn));
        let value = f.dot(&self.factors.beta) + r.dot(&self.factors.gamma);
        let fx = &self.factors;
        let rt = fx
            .chol_l
            .solve_lower_triangular(&r)
            .ok_or_else(|| KrigingError::Conditioning("triangular solve failed".into()))?;
        let u = fx.ft.transpose() * &rt - f;
        let v = fx
            .g
            .transpose()
            .solve_lower_triangular(&u)
            .ok_or_else(|| KrigingError::Conditioning("trend block singular".into()))?;
        let mse_raw = fx.sigma2 * (self_corr + v.dot(&v) - rt.dot(&rt));
        Ok(Prediction { value, mse: mse_raw.max(0.0), mse_raw, extrapolated: self.is_extrapolation(x) })
    }

    pub fn predict_mse(&self, x: &[f64]) -> Result<f64, KrigingError> {
        Ok(self.predict_full(x)?.mse)
    }

    /// Predictions at many points, evaluated in parallel.
    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>, KrigingError> {
        xs.par_iter().map(|x| self.predict_full(x)).collect()
    }
}
