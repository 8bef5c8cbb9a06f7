//! Temperature-uniformity design problem over a field surrogate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Evaluation, Problem};
use crate::doe::DesignSpace;
use crate::error::{Error, Result};
use crate::evaluation::{qoi_values, QoiSummary};
use crate::surrogate::FieldSurrogate;

/// The two field-QoI constraints come first in the constraint vector.
pub const FIELD_QOI_CONSTRAINTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscThresholds {
    /// Upper limit on the mean temperature (°C).
    pub mean_max: f64,
    /// Upper limit on the maximum temperature (°C).
    pub max_max: f64,
    /// Right-hand side of `CR1 + CR2 ≤ ·`.
    pub cr_sum_max: f64,
    /// Soft-max sharpness is this value divided by the reference field range.
    pub softmax_scale: f64,
}

impl Default for EscThresholds {
    fn default() -> Self {
        EscThresholds {
            mean_max: 17.0,
            max_max: 21.5,
            cr_sum_max: 10.0,
            softmax_scale: 50.0,
        }
    }
}

impl EscThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mean_max", self.mean_max),
            ("max_max", self.max_max),
            ("cr_sum_max", self.cr_sum_max),
            ("softmax_scale", self.softmax_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("threshold {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Values of the two field-QoI constraints.
    pub fn qoi_constraints(&self, mean: f64, max: f64) -> [f64; FIELD_QOI_CONSTRAINTS] {
        [mean - self.mean_max, max - self.max_max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Central differences with step `1e-6` of each variable's range.
    FiniteDifference,
}

/// Minimise `3σ_T` subject to `μ_T ≤ mean_max`, `max(T) ≤ max_max` (soft-max),
/// `CR1 ≤ CR2`, `CR1 + CR2 ≤ cr_sum_max`, `W2 ≤ W1` and `F1 ≤ W2 − 2`.
pub struct EscProblem {
    surrogate: Arc<dyn FieldSurrogate>,
    space: DesignSpace,
    thresholds: EscThresholds,
    gradient: GradientMode,
    beta: f64,
    mode_means: DVector<f64>,
    idx: [usize; 5],
}

/// Field QoIs with the smoothed maximum used by the constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldQoi {
    #[serde(flatten)]
    pub summary: QoiSummary,
    pub soft_max: f64,
}

struct QoiGrad {
    q: FieldQoi,
    /// Derivatives of (3σ, μ, soft max) with respect to the latent vector.
    dz: [DVector<f64>; 3],
}

impl EscProblem {
    /// The soft-max sharpness is fixed from the predicted field range at
    /// `reference`.
    pub fn new(
        surrogate: Arc<dyn FieldSurrogate>,
        space: DesignSpace,
        thresholds: EscThresholds,
        reference: &[f64],
    ) -> Result<Self> {
        thresholds.validate()?;
        if surrogate.n_inputs() != space.dim() {
            return Err(Error::Shape {
                expected: space.dim(),
                got: surrogate.n_inputs(),
            });
        }
        let find = |n: &str| {
            space
                .index_of(n)
                .ok_or_else(|| Error::Config(format!("design space lacks variable {n}")))
        };
        let idx = [find("CR1")?, find("CR2")?, find("W1")?, find("W2")?, find("F1")?];
        let modes = surrogate.basis().modes();
        let m = modes.nrows() as f64;
        let mode_means = DVector::from_fn(modes.ncols(), |j, _| modes.column(j).sum() / m);
        let mut p = EscProblem {
            surrogate,
            space,
            thresholds,
            gradient: GradientMode::Analytic,
            beta: 1.0,
            mode_means,
            idx,
        };
        let field = p.field(reference)?;
        let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Numerical(format!("reference field range {range} is degenerate")));
        }
        p.beta = thresholds.softmax_scale / range;
        Ok(p)
    }

    pub fn with_gradient(mut self, mode: GradientMode) -> Self {
        self.gradient = mode;
        self
    }

    pub fn thresholds(&self) -> &EscThresholds {
        &self.thresholds
    }

    /// Soft-max sharpness in 1/°C.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn surrogate(&self) -> &Arc<dyn FieldSurrogate> {
        &self.surrogate
    }

    fn field(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.surrogate.predict_latent_mean(x)?;
        self.surrogate.basis().reconstruct(&z)
    }

    /// Predicted QoIs at `x`.
    pub fn qoi(&self, x: &[f64]) -> Result<FieldQoi> {
        Ok(self.field_qoi(&self.field(x)?))
    }

    pub fn field_qoi(&self, y: &[f64]) -> FieldQoi {
        let summary = qoi_values(y);
        FieldQoi {
            summary,
            soft_max: soft_max(y, self.beta),
        }
    }

    fn qoi_with_latent_grad(&self, z: &[f64]) -> Result<QoiGrad> {
        let basis = self.surrogate.basis();
        let y = basis.reconstruct(z)?;
        let q = self.field_qoi(&y);
        let modes = basis.modes();
        let m = y.len() as f64;
        let mu = q.summary.mean;
        let dev = DVector::from_iterator(y.len(), y.iter().map(|v| v - mu));
        let d_sigma = if q.summary.std > 0.0 {
            modes.transpose() * &dev / (m * q.summary.std)
        } else {
            DVector::zeros(modes.ncols())
        };
        let ymax = q.summary.max;
        let mut w = DVector::from_iterator(y.len(), y.iter().map(|v| (self.beta * (v - ymax)).exp()));
        let total = w.sum();
        w /= total;
        let d_soft = modes.transpose() * w;
        Ok(QoiGrad {
            q,
            dz: [d_sigma * 3.0, self.mode_means.clone(), d_soft],
        })
    }

    fn linear_part(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let [cr1, cr2, w1, w2, f1] = self.idx;
        let n = x.len();
        let rows: [(Vec<(usize, f64)>, f64); 4] = [
            (vec![(cr1, 1.0), (cr2, -1.0)], 0.0),
            (vec![(cr1, 1.0), (cr2, 1.0)], self.thresholds.cr_sum_max),
            (vec![(w2, 1.0), (w1, -1.0)], 0.0),
            (vec![(f1, 1.0), (w2, -1.0)], -2.0),
        ];
        let mut g = Vec::with_capacity(4);
        let mut jac = DMatrix::zeros(4, n);
        for (r, (terms, rhs)) in rows.iter().enumerate() {
            let mut v = -rhs;
            for &(i, a) in terms {
                v += a * x[i];
                jac[(r, i)] += a;
            }
            g.push(v);
        }
        (g, jac)
    }
}

/// `max(y) + ln Σ exp(β (y_i − max(y))) / β`, an upper bound on `max(y)`.
pub fn soft_max(y: &[f64], beta: f64) -> f64 {
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = y.iter().map(|v| (beta * (v - ymax)).exp()).sum();
    ymax + s.ln() / beta
}

impl Problem for EscProblem {
    fn space(&self) -> &DesignSpace {
        &self.space
    }

    fn n_constraints(&self) -> usize {
        6
    }

    fn constraint_names(&self) -> Vec<String> {
        [
            "mean_T",
            "max_T",
            "CR1<=CR2",
            "CR1+CR2<=limit",
            "W2<=W1",
            "F1<=W2-2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn linear_constraints(&self) -> Vec<bool> {
        vec![false, false, true, true, true, true]
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let n = x.len();
        let (q, grads) = match self.gradient {
            GradientMode::Analytic => {
                let (z, jz) = self.surrogate.latent_jacobian(x)?;
                let qg = self.qoi_with_latent_grad(&z)?;
                let jt = jz.transpose();
                let grads: Vec<DVector<f64>> = qg.dz.iter().map(|d| &jt * d).collect();
                (qg.q, grads)
            }
            GradientMode::FiniteDifference => {
                let q = self.qoi(x)?;
                let mut grads = vec![DVector::zeros(n); 3];
                for d in 0..n {
                    let h = 1e-6 * (self.space.upper()[d] - self.space.lower()[d]);
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[d] = (x[d] + h).min(self.space.upper()[d]);
                    xm[d] = (x[d] - h).max(self.space.lower()[d]);
                    let (qp, qm) = (self.qoi(&xp)?, self.qoi(&xm)?);
                    let span = xp[d] - xm[d];
                    grads[0][d] = (qp.summary.three_sigma - qm.summary.three_sigma) / span;
                    grads[1][d] = (qp.summary.mean - qm.summary.mean) / span;
                    grads[2][d] = (qp.soft_max - qm.soft_max) / span;
                }
                (q, grads)
            }
        };
        let (lin_g, lin_j) = self.linear_part(x);
        let mut g = self.thresholds.qoi_constraints(q.summary.mean, q.soft_max).to_vec();
        g.extend(lin_g);
        let mut jac = DMatrix::zeros(6, n);
        for d in 0..n {
            jac[(0, d)] = grads[1][d];
            jac[(1, d)] = grads[2][d];
        }
        jac.view_mut((2, 0), (4, n)).copy_from(&lin_j);
        Ok(Evaluation {
            f: q.summary.three_sigma,
            grad: grads[0].iter().copied().collect(),
            g,
            jac,
        })
    }
}
