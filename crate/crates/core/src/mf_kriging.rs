//! Two-step multi-fidelity kriging over POD latent coordinates.
//!
//! For every latent coordinate `j`:
//!
//! 1. a kriging model `f_L,j` is fitted to the low-fidelity latents;
//! 2. the high-fidelity latents are fitted by universal kriging whose trend
//!    basis is `[1, f_L,j(x)]`, so the scaling `ρ_j` and the discrepancy
//!    intercept come out of the same generalised-least-squares solve, and the
//!    residual process is the discrepancy `δ_j`.
//!
//! Predictions are `ẑ_H,j(x) = ρ_j f_L,j(x) + δ_j(x)` with variance
//! `ρ_j² σ²_L,j(x) + σ²_δ,j(x)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kriging::{
    fit_kriging, fit_kriging_shared, fit_kriging_with_basis, KrigingConfig, KrigingModel, Trend,
};
use crate::pod::PodBasis;
use crate::surrogate::FieldSurrogate;

/// Low- and high-fidelity training data in latent space, with the HF design
/// nested in the LF design.
#[derive(Debug, Clone)]
pub struct FidelityDataset {
    x_lf: DMatrix<f64>,
    z_lf: DMatrix<f64>,
    x_hf: DMatrix<f64>,
    z_hf: DMatrix<f64>,
    hf_in_lf: Vec<usize>,
}

impl FidelityDataset {
    pub fn new(
        x_lf: DMatrix<f64>,
        z_lf: DMatrix<f64>,
        x_hf: DMatrix<f64>,
        z_hf: DMatrix<f64>,
        hf_in_lf: Vec<usize>,
    ) -> Result<Self> {
        let (n_l, n) = x_lf.shape();
        let n_h = x_hf.nrows();
        if z_lf.nrows() != n_l || z_hf.nrows() != n_h || hf_in_lf.len() != n_h {
            return Err(Error::NestedDesign("row counts disagree".into()));
        }
        if x_hf.ncols() != n || z_lf.ncols() != z_hf.ncols() || z_lf.ncols() == 0 {
            return Err(Error::NestedDesign("column counts disagree".into()));
        }
        if n_h < 2 || n_l < n_h {
            return Err(Error::NestedDesign(format!(
                "need N_L >= N_H >= 2, got N_L={n_l}, N_H={n_h}"
            )));
        }
        for (h, &l) in hf_in_lf.iter().enumerate() {
            if l >= n_l || x_hf.row(h) != x_lf.row(l) {
                return Err(Error::NestedDesign(format!(
                    "HF row {h} does not match LF row {l}"
                )));
            }
        }
        Ok(FidelityDataset {
            x_lf,
            z_lf,
            x_hf,
            z_hf,
            hf_in_lf,
        })
    }

    pub fn k(&self) -> usize {
        self.z_lf.ncols()
    }

    pub fn x_lf(&self) -> &DMatrix<f64> {
        &self.x_lf
    }

    pub fn z_lf(&self) -> &DMatrix<f64> {
        &self.z_lf
    }

    pub fn x_hf(&self) -> &DMatrix<f64> {
        &self.x_hf
    }

    pub fn z_hf(&self) -> &DMatrix<f64> {
        &self.z_hf
    }

    pub fn hf_in_lf(&self) -> &[usize] {
        &self.hf_in_lf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RhoMode {
    /// Estimated jointly with the discrepancy trend.
    #[default]
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MfOptions {
    pub rho: RhoMode,
    /// One pooled ρ for all latent coordinates.
    pub shared_rho: bool,
    /// One set of LF length scales for all latent coordinates.
    pub shared_theta: bool,
}

/// How the discrepancy model consumes the LF prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeltaTrend {
    /// Universal kriging on `[1, (f_L − shift) / scale]`.
    Scaled { shift: f64, scale: f64 },
    /// Constant-trend kriging on `z_H − ρ f_L` with ρ given.
    Offset,
}

#[derive(Debug, Clone)]
pub struct LatentFusion {
    lf: KrigingModel,
    delta: KrigingModel,
    rho: f64,
    trend: DeltaTrend,
    rho_fallback: bool,
}

impl LatentFusion {
    pub fn from_parts(
        lf: KrigingModel,
        delta: KrigingModel,
        rho: f64,
        trend: DeltaTrend,
        rho_fallback: bool,
    ) -> Result<Self> {
        let expect_custom = matches!(trend, DeltaTrend::Scaled { .. });
        if (delta.config().trend == Trend::Custom) != expect_custom {
            return Err(Error::Format("discrepancy trend does not match its model".into()));
        }
        if lf.n_dims() != delta.n_dims() {
            return Err(Error::Format("LF and discrepancy input dimensions differ".into()));
        }
        Ok(LatentFusion {
            lf,
            delta,
            rho,
            trend,
            rho_fallback,
        })
    }

    pub fn lf_model(&self) -> &KrigingModel {
        &self.lf
    }

    pub fn delta_model(&self) -> &KrigingModel {
        &self.delta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn trend(&self) -> DeltaTrend {
        self.trend
    }

    /// True when ρ could not be identified and defaulted to 1.
    pub fn rho_fallback(&self) -> bool {
        self.rho_fallback
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (f, var_l) = self.lf.predict(x)?;
        let (mean, var_d) = match self.trend {
            DeltaTrend::Scaled { shift, scale } => self
                .delta
                .predict_with_basis(x, &[1.0, (f - shift) / scale])?,
            DeltaTrend::Offset => {
                let (d, v) = self.delta.predict(x)?;
                (self.rho * f + d, v)
            }
        };
        Ok((mean, self.rho * self.rho * var_l + var_d))
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let f = self.lf.predict_mean(x)?;
        match self.trend {
            DeltaTrend::Scaled { shift, scale } => {
                self.delta.predict_mean_with_basis(x, &[1.0, (f - shift) / scale])
            }
            DeltaTrend::Offset => Ok(self.rho * f + self.delta.predict_mean(x)?),
        }
    }

    /// Discrepancy `δ(x) = ẑ_H(x) − ρ f_L(x)`.
    pub fn discrepancy(&self, x: &[f64]) -> Result<f64> {
        let f = self.lf.predict_mean(x)?;
        Ok(self.predict_mean(x)? - self.rho * f)
    }

    pub fn mean_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, gf) = self.lf.predict_mean_gradient(x)?;
        match self.trend {
            DeltaTrend::Scaled { shift, scale } => {
                let n = gf.len();
                let mut bg = DMatrix::zeros(2, n);
                for d in 0..n {
                    bg[(1, d)] = gf[d] / scale;
                }
                self.delta
                    .predict_mean_gradient_with_basis(x, &[1.0, (f - shift) / scale], &bg)
            }
            DeltaTrend::Offset => {
                let (d, gd) = self.delta.predict_mean_gradient(x)?;
                let g = gf.iter().zip(&gd).map(|(a, b)| self.rho * a + b).collect();
                Ok((self.rho * f + d, g))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiFidelityModel {
    dims: Vec<LatentFusion>,
    basis: Arc<PodBasis>,
}

fn fit_offset(
    x_hf: &DMatrix<f64>,
    z: &[f64],
    f_hf: &[f64],
    rho: f64,
    config: &KrigingConfig,
) -> Result<KrigingModel> {
    let resid: Vec<f64> = z.iter().zip(f_hf).map(|(a, b)| a - rho * b).collect();
    let cfg = KrigingConfig {
        trend: Trend::Constant,
        ..config.clone()
    };
    fit_kriging(x_hf, &resid, &cfg)
}

/// Second stage for one latent coordinate.
fn fit_delta(
    lf: KrigingModel,
    x_hf: &DMatrix<f64>,
    z: &[f64],
    config: &KrigingConfig,
    rho: RhoMode,
) -> Result<LatentFusion> {
    let n_h = x_hf.nrows();
    let f_hf: Vec<f64> = (0..n_h)
        .map(|i| {
            let xi: Vec<f64> = x_hf.row(i).iter().copied().collect();
            lf.predict_mean(&xi)
        })
        .collect::<Result<_>>()?;
    if let RhoMode::Fixed(r) = rho {
        let delta = fit_offset(x_hf, z, &f_hf, r, config)?;
        return LatentFusion::from_parts(lf, delta, r, DeltaTrend::Offset, false);
    }
    let shift = f_hf.iter().sum::<f64>() / n_h as f64;
    let scale = (f_hf.iter().map(|f| (f - shift).powi(2)).sum::<f64>() / n_h as f64).sqrt();
    if !(scale > 1e-12 * (1.0 + shift.abs())) {
        log::warn!("LF predictions are constant over the HF design; falling back to rho = 1");
        let delta = fit_offset(x_hf, z, &f_hf, 1.0, config)?;
        return LatentFusion::from_parts(lf, delta, 1.0, DeltaTrend::Offset, true);
    }
    let basis = DMatrix::from_fn(n_h, 2, |i, c| if c == 0 { 1.0 } else { (f_hf[i] - shift) / scale });
    let cfg = KrigingConfig {
        trend: Trend::Custom,
        ..config.clone()
    };
    let delta = fit_kriging_with_basis(x_hf, z, &basis, &cfg)?;
    let (_, y_std) = delta.output_scale();
    let rho = delta.beta()[1] * y_std / scale;
    LatentFusion::from_parts(lf, delta, rho, DeltaTrend::Scaled { shift, scale }, false)
}

/// Fits the two-step multi-fidelity model on every latent coordinate.
pub fn fit_mf(
    data: &FidelityDataset,
    basis: Arc<PodBasis>,
    config: &KrigingConfig,
    opts: MfOptions,
) -> Result<MultiFidelityModel> {
    let k = data.k();
    if basis.k() != k {
        return Err(Error::Shape {
            expected: basis.k(),
            got: k,
        });
    }
    let lf_models = if opts.shared_theta {
        fit_kriging_shared(&data.x_lf, &data.z_lf, None, config)?
    } else {
        (0..k)
            .into_par_iter()
            .map(|j| {
                let y: Vec<f64> = data.z_lf.column(j).iter().copied().collect();
                fit_kriging(&data.x_lf, &y, config)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let fit_all = |lf_models: Vec<KrigingModel>, mode: RhoMode| -> Result<Vec<LatentFusion>> {
        lf_models
            .into_par_iter()
            .enumerate()
            .map(|(j, lf)| {
                let z: Vec<f64> = data.z_hf.column(j).iter().copied().collect();
                fit_delta(lf, &data.x_hf, &z, config, mode)
            })
            .collect()
    };
    let mut dims = fit_all(lf_models, opts.rho)?;
    if opts.shared_rho && opts.rho == RhoMode::Estimate {
        let rho = pooled_rho(data, &dims)?;
        let lf_models = dims.into_iter().map(|d| d.lf).collect();
        dims = fit_all(lf_models, RhoMode::Fixed(rho))?;
    }
    Ok(MultiFidelityModel { dims, basis })
}

/// Least-squares slope of centred HF latents on centred LF predictions, pooled
/// over all latent coordinates.
fn pooled_rho(data: &FidelityDataset, dims: &[LatentFusion]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, d) in dims.iter().enumerate() {
        let f: Vec<f64> = (0..data.x_hf.nrows())
            .map(|i| {
                let xi: Vec<f64> = data.x_hf.row(i).iter().copied().collect();
                d.lf.predict_mean(&xi)
            })
            .collect::<Result<_>>()?;
        let z = data.z_hf.column(j);
        let fm = f.iter().sum::<f64>() / f.len() as f64;
        let zm = z.mean();
        for (fi, zi) in f.iter().zip(z.iter()) {
            num += (fi - fm) * (zi - zm);
            den += (fi - fm).powi(2);
        }
    }
    Ok(if den > 0.0 { num / den } else { 1.0 })
}

impl MultiFidelityModel {
    pub fn from_parts(dims: Vec<LatentFusion>, basis: Arc<PodBasis>) -> Result<Self> {
        if dims.len() != basis.k() {
            return Err(Error::Shape {
                expected: basis.k(),
                got: dims.len(),
            });
        }
        if dims.is_empty() {
            return Err(Error::EmptyInput("no latent coordinates"));
        }
        let (lo, hi) = dims[0].lf.bounds();
        let n = lo.len();
        if dims.iter().any(|d| d.lf.n_dims() != n || d.lf.bounds() != (lo, hi)) {
            return Err(Error::Format("latent models disagree on input normalisation".into()));
        }
        Ok(MultiFidelityModel { dims, basis })
    }

    pub fn dims(&self) -> &[LatentFusion] {
        &self.dims
    }

    pub fn rho(&self) -> Vec<f64> {
        self.dims.iter().map(|d| d.rho).collect()
    }
}

impl FieldSurrogate for MultiFidelityModel {
    fn n_inputs(&self) -> usize {
        self.dims[0].lf.n_dims()
    }

    fn basis(&self) -> &Arc<PodBasis> {
        &self.basis
    }

    fn predict_latent(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pairs = self
            .dims
            .iter()
            .map(|d| d.predict(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(pairs.into_iter().unzip())
    }

    fn predict_latent_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.dims.iter().map(|d| d.predict_mean(x)).collect()
    }

    fn latent_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = self.n_inputs();
        let mut jac = DMatrix::zeros(self.dims.len(), n);
        let mut z = Vec::with_capacity(self.dims.len());
        for (j, d) in self.dims.iter().enumerate() {
            let (mean, grad) = d.mean_gradient(x)?;
            z.push(mean);
            for c in 0..n {
                jac[(j, c)] = grad[c];
            }
        }
        Ok((z, jac))
    }
}
