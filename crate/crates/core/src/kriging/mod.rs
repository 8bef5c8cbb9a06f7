//! Scalar-output kriging with anisotropic kernels.
//!
//! Inputs are mapped to the unit hypercube using the training-data bounds,
//! outputs are standardised, and the length scales maximise the concentrated
//! (profile) log-likelihood
//!
//! ```text
//! ln L(ℓ) = -½ (N ln σ̂²(ℓ) + ln |R(ℓ)|)
//! ```
//!
//! where `β̂` and `σ̂²` are the generalised-least-squares estimates given ℓ.
//! Several outputs can share one correlation model; their likelihoods add.

mod kernel;
pub mod search;

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::Kernel;

use crate::error::{Error, Result};
use search::{compass_search, SearchOptions};

/// Largest nugget tried before giving up on a factorization.
pub const MAX_NUGGET: f64 = 1e-4;
/// Floor on the profiled process variance (standardised units).
const MIN_SIGMA2: f64 = 1e-24;
const DUPLICATE_TOL: f64 = 1e-12;
/// Nuggets up to this size are treated as interpolating.
const INTERPOLATING_NUGGET: f64 = 1e-10;
/// Allowed training-point misfit of an interpolating model, standardised units.
const REPRODUCTION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    #[default]
    Constant,
    Linear,
    /// Caller-supplied basis functions (universal kriging).
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrigingConfig {
    pub kernel: Kernel,
    /// Length-scale search interval (normalised input units), searched in log10.
    pub theta_bounds: [f64; 2],
    pub nugget: f64,
    pub trend: Trend,
    pub n_restarts: usize,
    pub seed: u64,
    /// Likelihood evaluations allowed per restart.
    pub max_evals: usize,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        KrigingConfig {
            kernel: Kernel::SquaredExponential,
            theta_bounds: [1e-2, 1e2],
            nugget: 1e-10,
            trend: Trend::Constant,
            n_restarts: 3,
            seed: 0,
            max_evals: 400,
        }
    }
}

impl KrigingConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.theta_bounds;
        if !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
            return Err(Error::Config(format!("bad theta bounds [{lo}, {hi}]")));
        }
        if !(self.nugget >= 0.0) || !self.nugget.is_finite() {
            return Err(Error::Config(format!("bad nugget {}", self.nugget)));
        }
        if self.n_restarts == 0 {
            return Err(Error::Config("n_restarts must be at least 1".into()));
        }
        if self.max_evals == 0 {
            return Err(Error::Config("max_evals must be at least 1".into()));
        }
        Ok(())
    }
}

/// Training data after deduplication, normalisation and standardisation.
struct Prepared {
    n: usize,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Normalised inputs, row-major N × n.
    u: Vec<f64>,
    /// Squared coordinate differences for every pair i < j, row-major (pairs × n).
    sq: Vec<f64>,
    basis: DMatrix<f64>,
    custom: bool,
    ys: DMatrix<f64>,
    y_mean: Vec<f64>,
    y_std: Vec<f64>,
}

impl Prepared {
    fn new(x: &DMatrix<f64>, y: &DMatrix<f64>, custom: Option<&DMatrix<f64>>, trend: Trend) -> Result<Self> {
        let (n_pts, n) = x.shape();
        if y.nrows() != n_pts {
            return Err(Error::Shape {
                expected: n_pts,
                got: y.nrows(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidInput("inputs have zero dimensions".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite training data".into()));
        }
        if let Some(b) = custom {
            if b.nrows() != n_pts {
                return Err(Error::Shape {
                    expected: n_pts,
                    got: b.nrows(),
                });
            }
            if b.ncols() == 0 || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("bad trend basis".into()));
            }
        }
        // Drop exact repeats; repeats with different outputs are ill-posed.
        let mut keep = Vec::with_capacity(n_pts);
        for i in 0..n_pts {
            let dup = keep.iter().copied().find(|&j: &usize| {
                (0..n).all(|d| (x[(i, d)] - x[(j, d)]).abs() <= DUPLICATE_TOL)
            });
            match dup {
                None => keep.push(i),
                Some(j) => {
                    let same = (0..y.ncols()).all(|c| {
                        (y[(i, c)] - y[(j, c)]).abs() <= DUPLICATE_TOL * (1.0 + y[(j, c)].abs())
                    });
                    if !same {
                        return Err(Error::IllPosed(format!(
                            "training rows {j} and {i} share inputs but differ in output"
                        )));
                    }
                }
            }
        }
        let x = x.select_rows(&keep);
        let y = y.select_rows(&keep);
        let n_pts = keep.len();
        if n_pts < 2 {
            return Err(Error::IllPosed("need at least 2 distinct training points".into()));
        }
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for d in 0..n {
            let col = x.column(d);
            lower[d] = col.min();
            upper[d] = col.max();
            if upper[d] <= lower[d] {
                upper[d] = lower[d] + 1.0;
            }
        }
        let mut u = vec![0.0; n_pts * n];
        for i in 0..n_pts {
            for d in 0..n {
                u[i * n + d] = (x[(i, d)] - lower[d]) / (upper[d] - lower[d]);
            }
        }
        let mut sq = Vec::with_capacity(n_pts * (n_pts - 1) / 2 * n);
        for i in 0..n_pts {
            for j in (i + 1)..n_pts {
                for d in 0..n {
                    let diff = u[i * n + d] - u[j * n + d];
                    sq.push(diff * diff);
                }
            }
        }
        let basis = match (trend, custom) {
            (Trend::Custom, Some(b)) => b.select_rows(&keep),
            (Trend::Custom, None) => {
                return Err(Error::Config("custom trend requires basis values".into()))
            }
            (_, Some(_)) => {
                return Err(Error::Config("basis values given for a non-custom trend".into()))
            }
            (t, None) => DMatrix::from_fn(n_pts, trend_len(t, n), |i, c| {
                if c == 0 {
                    1.0
                } else {
                    u[i * n + c - 1]
                }
            }),
        };
        let q = y.ncols();
        let mut y_mean = vec![0.0; q];
        let mut y_std = vec![1.0; q];
        let mut ys = y.clone();
        for c in 0..q {
            let col = y.column(c);
            let m = col.mean();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n_pts as f64;
            let s = var.sqrt();
            y_mean[c] = m;
            y_std[c] = if s > 0.0 && s.is_finite() { s } else { 1.0 };
            for i in 0..n_pts {
                ys[(i, c)] = (y[(i, c)] - m) / y_std[c];
            }
        }
        Ok(Prepared {
            n,
            x,
            y,
            lower,
            upper,
            u,
            sq,
            basis,
            custom: trend == Trend::Custom,
            ys,
            y_mean,
            y_std,
        })
    }

    fn n_pts(&self) -> usize {
        self.x.nrows()
    }

    /// Correlation matrix without nugget.
    fn correlation(&self, kernel: Kernel, theta: &[f64]) -> DMatrix<f64> {
        let n_pts = self.n_pts();
        let inv: Vec<f64> = theta.iter().map(|l| 1.0 / (l * l)).collect();
        let mut r = DMatrix::<f64>::identity(n_pts, n_pts);
        let mut pair = 0;
        for i in 0..n_pts {
            for j in (i + 1)..n_pts {
                let row = &self.sq[pair * self.n..(pair + 1) * self.n];
                let h2: f64 = row.iter().zip(&inv).map(|(s, w)| s * w).sum();
                let c = kernel.corr(h2);
                r[(i, j)] = c;
                r[(j, i)] = c;
                pair += 1;
            }
        }
        r
    }
}

fn trend_len(t: Trend, n: usize) -> usize {
    match t {
        Trend::Constant => 1,
        Trend::Linear => n + 1,
        Trend::Custom => 0,
    }
}

/// Cholesky factor of `R + nugget·I`, escalating the nugget tenfold on failure.
fn factorize(base: &DMatrix<f64>, nugget: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let mut nug = nugget;
    loop {
        let mut r = base.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += nug;
        }
        if let Some(c) = Cholesky::new(r) {
            return Some((c, nug));
        }
        if nug >= MAX_NUGGET {
            return None;
        }
        nug = if nug == 0.0 { 1e-12 } else { (nug * 10.0).min(MAX_NUGGET) };
    }
}

struct Gls {
    beta: DMatrix<f64>,
    sigma2: Vec<f64>,
    log_likelihood: f64,
    /// Largest entry of `R⁻¹(y − Fβ)` over all outputs.
    gamma_max: f64,
}

fn gls(chol: &Cholesky<f64, Dyn>, basis: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<Gls> {
    let l = chol.l_dirty();
    let n_pts = ys.nrows() as f64;
    let ft = l.solve_lower_triangular(basis).ok_or_else(|| Error::Numerical("triangular solve".into()))?;
    let yt = l.solve_lower_triangular(ys).ok_or_else(|| Error::Numerical("triangular solve".into()))?;
    let qr = ft.clone().qr();
    let rr = qr.r();
    let scale = rr.diagonal().amax();
    if rr.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) || scale == 0.0 {
        return Err(Error::IllPosed("trend basis is rank deficient at the training points".into()));
    }
    let beta = rr
        .solve_upper_triangular(&(qr.q().transpose() * &yt))
        .ok_or_else(|| Error::Numerical("trend solve".into()))?;
    let resid = yt - &ft * &beta;
    let sigma2: Vec<f64> = resid
        .column_iter()
        .map(|c| (c.norm_squared() / n_pts).max(MIN_SIGMA2))
        .collect();
    let gamma_max = l
        .tr_solve_lower_triangular(&resid)
        .map(|g| g.amax())
        .unwrap_or(f64::INFINITY);
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let q = ys.ncols() as f64;
    let log_likelihood =
        -0.5 * (n_pts * sigma2.iter().map(|s| s.ln()).sum::<f64>() + q * logdet);
    Ok(Gls {
        beta,
        sigma2,
        log_likelihood,
        gamma_max,
    })
}

fn log_likelihood(prep: &Prepared, kernel: Kernel, theta: &[f64], nugget: f64) -> Option<f64> {
    let base = prep.correlation(kernel, theta);
    let (chol, nug) = factorize(&base, nugget)?;
    let g = gls(&chol, &prep.basis, &prep.ys).ok()?;
    // An interpolating model must stay one: the nugget shifts training
    // predictions by `nug · γ_i` (standardised units).
    if nugget <= INTERPOLATING_NUGGET && nug * g.gamma_max > REPRODUCTION_TOL {
        return None;
    }
    Some(g.log_likelihood)
}

/// Start points for the restarts: the box centre, then stratified random draws.
fn start_points(n: usize, restarts: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![vec![0.5 * (lo + hi); n]];
    let m = restarts.saturating_sub(1);
    if m > 0 {
        let perms: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut p: Vec<usize> = (0..m).collect();
                for i in (1..m).rev() {
                    p.swap(i, rng.random_range(0..=i));
                }
                p
            })
            .collect();
        for s in 0..m {
            starts.push(
                (0..n)
                    .map(|d| lo + (hi - lo) * (perms[d][s] as f64 + rng.random::<f64>()) / m as f64)
                    .collect(),
            );
        }
    }
    starts
}

fn fit_theta(prep: &Prepared, config: &KrigingConfig) -> Vec<f64> {
    let lo = config.theta_bounds[0].log10();
    let hi = config.theta_bounds[1].log10();
    let n = prep.n;
    let starts = start_points(n, config.n_restarts, lo, hi, config.seed);
    let opts = SearchOptions {
        initial_step: (hi - lo) / 4.0,
        min_step: 1e-2,
        max_evals: config.max_evals,
    };
    let lo_v = vec![lo; n];
    let hi_v = vec![hi; n];
    let results: Vec<_> = starts
        .par_iter()
        .map(|s| {
            let objective = |p: &[f64]| {
                let theta: Vec<f64> = p.iter().map(|v| 10f64.powf(*v)).collect();
                match log_likelihood(prep, config.kernel, &theta, config.nugget) {
                    Some(ll) => -ll,
                    None => f64::INFINITY,
                }
            };
            // Shorter length scales condition R better; halve toward the
            // lower corner until the start is usable.
            let mut start = s.clone();
            for _ in 0..30 {
                if objective(&start).is_finite() {
                    break;
                }
                start.iter_mut().for_each(|v| *v = lo + 0.5 * (*v - lo));
            }
            compass_search(objective, &start, &lo_v, &hi_v, opts)
        })
        .collect();
    let best = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    if best.value.is_finite() {
        best.x.iter().map(|v| 10f64.powf(*v)).collect()
    } else {
        vec![config.theta_bounds[0]; n]
    }
}

/// Fitted kriging predictor for one scalar output.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    config: KrigingConfig,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x_train: DMatrix<f64>,
    y_train: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    theta: Vec<f64>,
    beta: Vec<f64>,
    process_variance: f64,
    nugget: f64,
    basis: Option<DMatrix<f64>>,
    log_likelihood: f64,
    u_train: Arc<Vec<f64>>,
    chol: Arc<Cholesky<f64, Dyn>>,
    gamma: Vec<f64>,
}

/// Stored state of a model, sufficient to rebuild it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingParts {
    pub config: KrigingConfig,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x_train: DMatrix<f64>,
    pub y_train: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub process_variance: f64,
    pub nugget: f64,
    pub basis: Option<DMatrix<f64>>,
}

pub fn fit_kriging(x: &DMatrix<f64>, y: &[f64], config: &KrigingConfig) -> Result<KrigingModel> {
    let y = DMatrix::from_column_slice(y.len(), 1, y);
    Ok(fit_impl(x, &y, None, config, None)?.remove(0))
}

/// Universal kriging with caller-supplied trend basis values at the training points
/// (`config.trend` must be [`Trend::Custom`]).
pub fn fit_kriging_with_basis(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: &DMatrix<f64>,
    config: &KrigingConfig,
) -> Result<KrigingModel> {
    let y = DMatrix::from_column_slice(y.len(), 1, y);
    Ok(fit_impl(x, &y, Some(basis), config, None)?.remove(0))
}

/// One model per column of `y`, all sharing a single set of length scales.
pub fn fit_kriging_shared(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    basis: Option<&DMatrix<f64>>,
    config: &KrigingConfig,
) -> Result<Vec<KrigingModel>> {
    fit_impl(x, y, basis, config, None)
}

/// Fit with fixed length scales (no likelihood search).
pub fn fit_kriging_fixed(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: Option<&DMatrix<f64>>,
    config: &KrigingConfig,
    theta: &[f64],
) -> Result<KrigingModel> {
    let y = DMatrix::from_column_slice(y.len(), 1, y);
    Ok(fit_impl(x, &y, basis, config, Some(theta))?.remove(0))
}

fn fit_impl(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    basis: Option<&DMatrix<f64>>,
    config: &KrigingConfig,
    theta: Option<&[f64]>,
) -> Result<Vec<KrigingModel>> {
    config.validate()?;
    if y.ncols() == 0 {
        return Err(Error::EmptyInput("no outputs to fit"));
    }
    let prep = Prepared::new(x, y, basis, config.trend)?;
    let theta = match theta {
        Some(t) => {
            if t.len() != prep.n || t.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput("bad fixed length scales".into()));
            }
            t.to_vec()
        }
        None => fit_theta(&prep, config),
    };
    let base = prep.correlation(config.kernel, &theta);
    let (chol, nugget) = factorize(&base, config.nugget).ok_or(Error::Conditioning { nugget: MAX_NUGGET })?;
    let g = gls(&chol, &prep.basis, &prep.ys)?;
    let chol = Arc::new(chol);
    let u_train = Arc::new(prep.u.clone());
    let q = y.ncols();
    let per_output_ll = g.log_likelihood / q as f64;
    let gammas = (0..q)
        .map(|c| {
            let beta: Vec<f64> = g.beta.column(c).iter().copied().collect();
            weights(&chol, &prep.ys.column(c).into_owned(), &prep.basis, &beta).map(|w| w.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(gammas
        .into_iter()
        .enumerate()
        .map(|(c, gamma)| KrigingModel {
            config: config.clone(),
            lower: prep.lower.clone(),
            upper: prep.upper.clone(),
            x_train: prep.x.clone(),
            y_train: prep.y.column(c).iter().copied().collect(),
            y_mean: prep.y_mean[c],
            y_std: prep.y_std[c],
            theta: theta.clone(),
            beta: g.beta.column(c).iter().copied().collect(),
            process_variance: g.sigma2[c],
            nugget,
            basis: prep.custom.then(|| prep.basis.clone()),
            log_likelihood: per_output_ll,
            u_train: u_train.clone(),
            chol: chol.clone(),
            gamma,
        })
        .collect())
}

/// Kriging weights `R⁻¹(y − Fβ)` and the profiled variance for one output.
fn weights(
    chol: &Cholesky<f64, Dyn>,
    ys: &DVector<f64>,
    basis: &DMatrix<f64>,
    beta: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let l = chol.l_dirty();
    let resid = ys - basis * DVector::from_column_slice(beta);
    let w = l
        .solve_lower_triangular(&resid)
        .ok_or_else(|| Error::Numerical("triangular solve".into()))?;
    let gamma = l
        .tr_solve_lower_triangular(&w)
        .ok_or_else(|| Error::Numerical("triangular solve".into()))?;
    Ok((gamma.iter().copied().collect(), w.norm_squared() / ys.len() as f64))
}

impl KrigingModel {
    /// Rebuilds a model from stored parameters, recomputing the factorization.
    pub fn from_parts(parts: KrigingParts) -> Result<Self> {
        parts.config.validate()?;
        let (n_pts, n) = parts.x_train.shape();
        let bad_len = parts.y_train.len() != n_pts
            || parts.lower.len() != n
            || parts.upper.len() != n
            || parts.theta.len() != n;
        if bad_len {
            return Err(Error::Format("inconsistent kriging model dimensions".into()));
        }
        let y = DMatrix::from_column_slice(n_pts, 1, &parts.y_train);
        let mut u = vec![0.0; n_pts * n];
        for i in 0..n_pts {
            for d in 0..n {
                u[i * n + d] = (parts.x_train[(i, d)] - parts.lower[d]) / (parts.upper[d] - parts.lower[d]);
            }
        }
        let basis = match (&parts.basis, parts.config.trend) {
            (Some(b), Trend::Custom) => b.clone(),
            (None, t) if t != Trend::Custom => DMatrix::from_fn(n_pts, trend_len(t, n), |i, c| {
                if c == 0 {
                    1.0
                } else {
                    u[i * n + c - 1]
                }
            }),
            _ => return Err(Error::Format("trend basis inconsistent with trend kind".into())),
        };
        if basis.ncols() != parts.beta.len() || basis.nrows() != n_pts {
            return Err(Error::Format("trend coefficient count mismatch".into()));
        }
        let mut sq = Vec::with_capacity(n_pts * n_pts.saturating_sub(1) / 2 * n);
        for i in 0..n_pts {
            for j in (i + 1)..n_pts {
                for d in 0..n {
                    sq.push((u[i * n + d] - u[j * n + d]).powi(2));
                }
            }
        }
        let ys = y.map(|v| (v - parts.y_mean) / parts.y_std);
        let prep = Prepared {
            n,
            x: parts.x_train.clone(),
            y,
            lower: parts.lower.clone(),
            upper: parts.upper.clone(),
            u,
            sq,
            basis,
            custom: parts.config.trend == Trend::Custom,
            ys,
            y_mean: vec![parts.y_mean],
            y_std: vec![parts.y_std],
        };
        let base = prep.correlation(parts.config.kernel, &parts.theta);
        let mut r = base;
        for i in 0..n_pts {
            r[(i, i)] += parts.nugget;
        }
        let chol = Cholesky::new(r).ok_or(Error::Conditioning { nugget: parts.nugget })?;
        let (gamma, s2) = weights(&chol, &prep.ys.column(0).into_owned(), &prep.basis, &parts.beta)?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_likelihood = -0.5 * (n_pts as f64 * s2.max(MIN_SIGMA2).ln() + logdet);
        Ok(KrigingModel {
            config: parts.config,
            lower: parts.lower,
            upper: parts.upper,
            x_train: parts.x_train,
            y_train: parts.y_train,
            y_mean: parts.y_mean,
            y_std: parts.y_std,
            theta: parts.theta,
            beta: parts.beta,
            process_variance: parts.process_variance,
            nugget: parts.nugget,
            basis: parts.basis,
            log_likelihood,
            u_train: Arc::new(prep.u),
            chol: Arc::new(chol),
            gamma,
        })
    }

    pub fn to_parts(&self) -> KrigingParts {
        KrigingParts {
            config: self.config.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            x_train: self.x_train.clone(),
            y_train: self.y_train.clone(),
            y_mean: self.y_mean,
            y_std: self.y_std,
            theta: self.theta.clone(),
            beta: self.beta.clone(),
            process_variance: self.process_variance,
            nugget: self.nugget,
            basis: self.basis.clone(),
        }
    }

    pub fn config(&self) -> &KrigingConfig {
        &self.config
    }

    pub fn n_dims(&self) -> usize {
        self.lower.len()
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn y_train(&self) -> &[f64] {
        &self.y_train
    }

    /// Normalisation bounds `(lower, upper)` per input dimension.
    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    /// Length scales in normalised input units.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Trend coefficients, acting on standardised outputs.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Output standardisation `(mean, std)`.
    pub fn output_scale(&self) -> (f64, f64) {
        (self.y_mean, self.y_std)
    }

    /// Process variance in output units.
    pub fn process_variance(&self) -> f64 {
        self.process_variance * self.y_std * self.y_std
    }

    /// Nugget actually used after escalation.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Concentrated log-likelihood (standardised outputs) at the fitted length scales.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Concentrated log-likelihood of this model's training data at other length scales.
    pub fn log_likelihood_at(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.n_dims() {
            return Err(Error::Shape {
                expected: self.n_dims(),
                got: theta.len(),
            });
        }
        let y = DMatrix::from_column_slice(self.y_train.len(), 1, &self.y_train);
        let prep = Prepared::new(&self.x_train, &y, self.basis.as_ref(), self.config.trend)?;
        log_likelihood(&prep, self.config.kernel, theta, self.config.nugget)
            .ok_or(Error::Conditioning { nugget: MAX_NUGGET })
    }

    fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_dims() {
            return Err(Error::Shape {
                expected: self.n_dims(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite prediction input".into()));
        }
        Ok(x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| (v - l) / (h - l))
            .collect())
    }

    fn trend_row(&self, u: &[f64], custom: Option<&[f64]>) -> Result<Vec<f64>> {
        match (self.config.trend, custom) {
            (Trend::Constant, None) => Ok(vec![1.0]),
            (Trend::Linear, None) => Ok(std::iter::once(1.0).chain(u.iter().copied()).collect()),
            (Trend::Custom, Some(f)) if f.len() == self.beta.len() => Ok(f.to_vec()),
            (Trend::Custom, Some(f)) => Err(Error::Shape {
                expected: self.beta.len(),
                got: f.len(),
            }),
            (Trend::Custom, None) => Err(Error::Config("model needs trend basis values to predict".into())),
            (_, Some(_)) => Err(Error::Config("trend basis values given to a non-custom model".into())),
        }
    }

    fn corr_vector(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n_dims();
        let inv: Vec<f64> = self.theta.iter().map(|l| 1.0 / (l * l)).collect();
        self.u_train
            .chunks_exact(n)
            .map(|ui| {
                let h2: f64 = ui
                    .iter()
                    .zip(u)
                    .zip(&inv)
                    .map(|((a, b), w)| (b - a) * (b - a) * w)
                    .sum();
                self.config.kernel.corr(h2)
            })
            .collect()
    }

    fn mean_from(&self, f: &[f64], r: &[f64]) -> f64 {
        let trend: f64 = f.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let local: f64 = r.iter().zip(&self.gamma).map(|(a, b)| a * b).sum();
        self.y_mean + self.y_std * (trend + local)
    }

    fn variance_from(&self, r: &[f64]) -> f64 {
        let rv = DVector::from_column_slice(r);
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&rv)
            .expect("factor has a nonzero diagonal");
        let s = 1.0 - w.norm_squared();
        self.process_variance * self.y_std * self.y_std * s.max(0.0)
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let u = self.normalize(x)?;
        let f = self.trend_row(&u, None)?;
        Ok(self.mean_from(&f, &self.corr_vector(&u)))
    }

    /// Predictive mean and variance.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let u = self.normalize(x)?;
        let f = self.trend_row(&u, None)?;
        let r = self.corr_vector(&u);
        Ok((self.mean_from(&f, &r), self.variance_from(&r)))
    }

    pub fn predict_with_basis(&self, x: &[f64], basis: &[f64]) -> Result<(f64, f64)> {
        let u = self.normalize(x)?;
        let f = self.trend_row(&u, Some(basis))?;
        let r = self.corr_vector(&u);
        Ok((self.mean_from(&f, &r), self.variance_from(&r)))
    }

    pub fn predict_mean_with_basis(&self, x: &[f64], basis: &[f64]) -> Result<f64> {
        let u = self.normalize(x)?;
        let f = self.trend_row(&u, Some(basis))?;
        Ok(self.mean_from(&f, &self.corr_vector(&u)))
    }

    /// Mean and its gradient with respect to `x` (original units).
    pub fn predict_mean_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.mean_gradient_impl(x, None)
    }

    /// As [`KrigingModel::predict_mean_gradient`] for a custom-trend model:
    /// `basis` holds the basis values at `x`, `basis_grad` their gradients
    /// (`p × n`, original units).
    pub fn predict_mean_gradient_with_basis(
        &self,
        x: &[f64],
        basis: &[f64],
        basis_grad: &DMatrix<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        self.mean_gradient_impl(x, Some((basis, basis_grad)))
    }

    pub fn predict_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_mean_gradient(x)?.1)
    }

    fn mean_gradient_impl(
        &self,
        x: &[f64],
        custom: Option<(&[f64], &DMatrix<f64>)>,
    ) -> Result<(f64, Vec<f64>)> {
        let n = self.n_dims();
        let u = self.normalize(x)?;
        let f = self.trend_row(&u, custom.map(|c| c.0))?;
        let inv: Vec<f64> = self.theta.iter().map(|l| 1.0 / (l * l)).collect();
        let mut local = 0.0;
        // Gradient in normalised coordinates of the local (kernel) part.
        let mut g_local = vec![0.0; n];
        for (ui, &gi) in self.u_train.chunks_exact(n).zip(&self.gamma) {
            let mut h2 = 0.0;
            for d in 0..n {
                let diff = u[d] - ui[d];
                h2 += diff * diff * inv[d];
            }
            let (k, slope) = self.config.kernel.corr_and_slope(h2);
            local += gi * k;
            let s = gi * slope;
            for d in 0..n {
                g_local[d] += s * (u[d] - ui[d]) * inv[d];
            }
        }
        let trend: f64 = f.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let mean = self.y_mean + self.y_std * (trend + local);
        let mut grad = vec![0.0; n];
        for d in 0..n {
            let span = self.upper[d] - self.lower[d];
            let mut gd = g_local[d] / span;
            match (self.config.trend, custom) {
                (Trend::Linear, _) => gd += self.beta[d + 1] / span,
                (Trend::Custom, Some((_, fg))) => {
                    if fg.nrows() != self.beta.len() || fg.ncols() != n {
                        return Err(Error::Shape {
                            expected: self.beta.len() * n,
                            got: fg.nrows() * fg.ncols(),
                        });
                    }
                    gd += (0..self.beta.len()).map(|p| self.beta[p] * fg[(p, d)]).sum::<f64>();
                }
                _ => {}
            }
            grad[d] = self.y_std * gd;
        }
        Ok((mean, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(x.len(), 1, x)
    }

    #[test]
    fn constant_output_predicts_constant() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.7, 0.2]);
        let m = fit_kriging(&x, &[3.5; 4], &KrigingConfig::default()).unwrap();
        for p in [[0.5, 0.5], [3.0, -2.0], [0.1, 0.9]] {
            assert!((m.predict_mean(&p).unwrap() - 3.5).abs() < 1e-8);
            assert!(m.predict_gradient(&p).unwrap().iter().all(|g| g.abs() < 1e-8));
        }
    }

    #[test]
    fn interpolates_small_1d_data() {
        let x = col(&[0.0, 1.0, 0.5]);
        let y = [0.0, 1.0, 0.25];
        let m = fit_kriging(&x, &y, &KrigingConfig::default()).unwrap();
        for (i, yi) in y.iter().enumerate() {
            let (mu, var) = m.predict(&[x[(i, 0)]]).unwrap();
            assert!((mu - yi).abs() < 1e-6, "{mu} vs {yi}");
            assert!(var <= 1e-8);
        }
    }

    #[test]
    fn conflicting_duplicates_rejected() {
        let x = col(&[0.0, 0.5, 0.5, 1.0]);
        let err = fit_kriging(&x, &[0.0, 1.0, 2.0, 3.0], &KrigingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::IllPosed(_)));
        // Consistent repeats are merged.
        let m = fit_kriging(&x, &[0.0, 1.0, 1.0, 3.0], &KrigingConfig::default()).unwrap();
        assert_eq!(m.n_train(), 3);
    }

    #[test]
    fn non_finite_input_rejected() {
        let x = col(&[0.0, 0.5, 1.0]);
        let m = fit_kriging(&x, &[0.0, 1.0, 0.0], &KrigingConfig::default()).unwrap();
        assert!(matches!(m.predict(&[f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(m.predict(&[0.1, 0.2]), Err(Error::Shape { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = KrigingConfig {
            theta_bounds: [0.0, 1.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = KrigingConfig {
            n_restarts: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn custom_trend_requires_basis() {
        let x = col(&[0.0, 0.5, 1.0]);
        let cfg = KrigingConfig {
            trend: Trend::Custom,
            ..Default::default()
        };
        assert!(fit_kriging(&x, &[0.0, 1.0, 0.0], &cfg).is_err());
        let basis = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.5, 1.0, 1.0]);
        let m = fit_kriging_with_basis(&x, &[0.0, 1.0, 0.0], &basis, &cfg).unwrap();
        assert!(m.predict(&[0.3]).is_err());
        assert!(m.predict_with_basis(&[0.3], &[1.0, 0.3]).is_ok());
    }

    #[test]
    fn parts_round_trip_is_exact() {
        let x = DMatrix::from_fn(12, 2, |i, d| ((i * 7 + d * 3) % 11) as f64 / 10.0);
        let y: Vec<f64> = (0..12).map(|i| (x[(i, 0)] * 3.0).sin() + x[(i, 1)]).collect();
        let m = fit_kriging(&x, &y, &KrigingConfig::default()).unwrap();
        let back = KrigingModel::from_parts(m.to_parts()).unwrap();
        for p in [[0.33, 0.71], [0.9, 0.05]] {
            assert_eq!(m.predict(&p).unwrap(), back.predict(&p).unwrap());
        }
    }
}
