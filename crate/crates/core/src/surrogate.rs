//! Field surrogates: a latent-space predictor plus the POD basis that maps
//! latent coordinates back to grid fields.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field_grid::GridField;
use crate::kriging::{fit_kriging, fit_kriging_shared, KrigingConfig, KrigingModel};
use crate::mf_kriging::MultiFidelityModel;
use crate::pod::PodBasis;

/// Anything that predicts POD latent coordinates from a design vector.
pub trait FieldSurrogate: Send + Sync {
    /// Input (design) dimension.
    fn n_inputs(&self) -> usize;

    fn basis(&self) -> &Arc<PodBasis>;

    fn k(&self) -> usize {
        self.basis().k()
    }

    /// Latent means and variances at `x`.
    fn predict_latent(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    fn predict_latent_mean(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Latent means and their Jacobian (`k × n`) at `x`.
    fn latent_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)>;

    fn predict_field(&self, x: &[f64]) -> Result<GridField> {
        let z = self.predict_latent_mean(x)?;
        self.basis().reconstruct_field(&z)
    }
}

/// One independent kriging model per latent coordinate, trained on a single
/// fidelity level.
#[derive(Debug, Clone)]
pub struct SingleFidelityModel {
    models: Vec<KrigingModel>,
    basis: Arc<PodBasis>,
}

impl SingleFidelityModel {
    /// Fits `z[:, j]` against `x` for every latent coordinate `j`.
    pub fn fit(
        x: &DMatrix<f64>,
        z: &DMatrix<f64>,
        basis: Arc<PodBasis>,
        config: &KrigingConfig,
        shared_theta: bool,
    ) -> Result<Self> {
        if z.ncols() != basis.k() {
            return Err(Error::Shape {
                expected: basis.k(),
                got: z.ncols(),
            });
        }
        let models = if shared_theta {
            fit_kriging_shared(x, z, None, config)?
        } else {
            (0..z.ncols())
                .into_par_iter()
                .map(|j| {
                    let y: Vec<f64> = z.column(j).iter().copied().collect();
                    fit_kriging(x, &y, config)
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(SingleFidelityModel { models, basis })
    }

    pub fn from_parts(models: Vec<KrigingModel>, basis: Arc<PodBasis>) -> Result<Self> {
        if models.len() != basis.k() {
            return Err(Error::Shape {
                expected: basis.k(),
                got: models.len(),
            });
        }
        if models.windows(2).any(|w| w[0].n_dims() != w[1].n_dims()) {
            return Err(Error::Format("latent models disagree on input dimension".into()));
        }
        Ok(SingleFidelityModel { models, basis })
    }

    pub fn models(&self) -> &[KrigingModel] {
        &self.models
    }
}

impl FieldSurrogate for SingleFidelityModel {
    fn n_inputs(&self) -> usize {
        self.models[0].n_dims()
    }

    fn basis(&self) -> &Arc<PodBasis> {
        &self.basis
    }

    fn predict_latent(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pairs = self
            .models
            .iter()
            .map(|m| m.predict(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(pairs.into_iter().unzip())
    }

    fn predict_latent_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.predict_mean(x)).collect()
    }

    fn latent_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = self.n_inputs();
        let mut jac = DMatrix::zeros(self.models.len(), n);
        let mut z = Vec::with_capacity(self.models.len());
        for (j, m) in self.models.iter().enumerate() {
            let (mean, grad) = m.predict_mean_gradient(x)?;
            z.push(mean);
            for d in 0..n {
                jac[(j, d)] = grad[d];
            }
        }
        Ok((z, jac))
    }
}

/// A trained surrogate of either kind.
#[derive(Debug, Clone)]
pub enum Surrogate {
    Single(SingleFidelityModel),
    Multi(MultiFidelityModel),
}

impl Surrogate {
    fn inner(&self) -> &dyn FieldSurrogate {
        match self {
            Surrogate::Single(m) => m,
            Surrogate::Multi(m) => m,
        }
    }
}

impl FieldSurrogate for Surrogate {
    fn n_inputs(&self) -> usize {
        self.inner().n_inputs()
    }

    fn basis(&self) -> &Arc<PodBasis> {
        self.inner().basis()
    }

    fn predict_latent(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.inner().predict_latent(x)
    }

    fn predict_latent_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner().predict_latent_mean(x)
    }

    fn latent_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.inner().latent_jacobian(x)
    }
}
