use serde::{Deserialize, Serialize};

/// Stationary anisotropic correlation kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    SquaredExponential,
    Matern52,
}

impl Kernel {
    /// Correlation at scaled squared distance `h2 = Σ (Δ_d / ℓ_d)²`.
    #[inline]
    pub fn corr(self, h2: f64) -> f64 {
        match self {
            Kernel::SquaredExponential => (-0.5 * h2).exp(),
            Kernel::Matern52 => {
                let s5h = (5.0 * h2).sqrt();
                (1.0 + s5h + 5.0 * h2 / 3.0) * (-s5h).exp()
            }
        }
    }

    /// Correlation and the factor `g` with `∂k/∂x_d = g · Δ_d / ℓ_d²`.
    #[inline]
    pub fn corr_and_slope(self, h2: f64) -> (f64, f64) {
        match self {
            Kernel::SquaredExponential => {
                let k = (-0.5 * h2).exp();
                (k, -k)
            }
            Kernel::Matern52 => {
                let s5h = (5.0 * h2).sqrt();
                let e = (-s5h).exp();
                let k = (1.0 + s5h + 5.0 * h2 / 3.0) * e;
                (k, -5.0 / 3.0 * (1.0 + s5h) * e)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::SquaredExponential => "squared-exponential",
            Kernel::Matern52 => "matern-5/2",
        }
    }
}
