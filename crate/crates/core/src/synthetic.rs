//! Analytic two-fidelity wafer temperature fields.
//!
//! The high-fidelity field on a disc of radius `R` is, with `p = x / R`,
//! `t = |p|²`, `s = |p|`, `φ = atan2(p_y, p_x)` and `v = u − 0.5` the centred
//! unit-cube design (`CR1, CR2, H1, H2, W1, W2, F1`):
//!
//! ```text
//! T_H = m + a (t − 0.5) + b (t⁴ − 0.2) − c G(0, −0.35; w) + h G(−0.1, 0.82; 0.12 + 0.03 v7)
//!       + e t cos(2φ + 5s + 2 v6)
//! G(cx, cy; w) = exp(−|p − (cx, cy)|² / (2 w²))
//!
//! m = 17.72 + 0.8 v3 + 0.6 v4 − 1.9 v2 − 0.4 (v1 + 0.2)² + 0.4 v5 v6 + 0.3 sin(π v7)
//! a = 3.3 + 4.0 (v1 + 0.15)² − 2.2 v2 + 2.5 (v3 + 0.1)² − 0.9 v4 + 0.8 v1 v3 + 0.5 v6
//! b = 1.2 − 1.0 v2 + 1.0 v4 + 1.0 (v5 − 0.2)²
//! c = 1.7 + 1.4 v3 − 0.9 v5 + 2.0 (v7 + 0.1)² + 0.5 v1
//! w = 0.13 + 0.04 v6
//! h = 4.3 + 5.6 (v7 − 0.1)² − 0.9 v6 + 0.6 v4² − 2.6 v2
//! e = 0.45 + 0.2 v5 − 0.15 v2
//! ```
//!
//! The low-fidelity field is `T_L = α(d) T_H + β (t − 0.5)` with
//! `α(d) = α₀ (1 + γ (0.03 v3 − 0.02 v7 + 0.04 v1 v2))`.
//!
//! Both fields live on quasi-random native meshes (Halton points mapped onto
//! the disc); the seed only rotates and shifts the node set.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doe::DesignSpace;
use crate::error::{Error, Result};
use crate::evaluation::CostModel;
use crate::field_grid::{Disc, Fidelity, GridField, GridSpec, NearestMap, ScatteredField, StandardGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscProblemConfig {
    /// Wafer radius in mm.
    pub radius: f64,
    pub grid: GridSpec,
    /// Perturbs native mesh node placement only.
    pub seed: u64,
    /// Nominal LF/HF scale factor α₀.
    pub alpha0: f64,
    /// Multiplier γ on the design dependence of α.
    pub alpha_variation: f64,
    /// Amplitude β of the radial LF bias.
    pub bias_amplitude: f64,
    pub hf_nodes: usize,
    pub lf_nodes: usize,
    pub cost: CostModel,
}

impl Default for DiscProblemConfig {
    fn default() -> Self {
        DiscProblemConfig {
            radius: 150.0,
            grid: GridSpec::default(),
            seed: 0,
            alpha0: 1.4,
            alpha_variation: 1.0,
            bias_amplitude: 1.2,
            hf_nodes: 90_000,
            lf_nodes: 250_000,
            cost: CostModel::default(),
        }
    }
}

impl DiscProblemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::Config(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if !self.alpha_variation.is_finite() || !self.bias_amplitude.is_finite() {
            return Err(Error::Config("alpha_variation and bias_amplitude must be finite".into()));
        }
        if self.hf_nodes == 0 || self.lf_nodes == 0 {
            return Err(Error::Config("native meshes need at least one node".into()));
        }
        self.cost.validate()
    }

    pub fn disc(&self) -> Disc {
        Disc {
            cx: 0.0,
            cy: 0.0,
            radius: self.radius,
        }
    }
}

/// Radical inverse of `i` in `base`.
pub fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `n` low-discrepancy nodes over the disc. The seed applies a
/// Cranley–Patterson shift to the Halton sequence and a rotation.
pub fn disc_mesh(n: usize, radius: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s1, s2): (f64, f64) = (rng.random(), rng.random());
    let rot = 2.0 * PI * rng.random::<f64>();
    (0..n as u64)
        .map(|i| {
            let u1 = (halton(i + 1, 2) + s1).fract();
            let u2 = (halton(i + 1, 3) + s2).fract();
            let r = radius * u1.sqrt();
            let th = 2.0 * PI * u2 + rot;
            [r * th.cos(), r * th.sin()]
        })
        .collect()
}

/// Per-design coefficients of the analytic field.
#[derive(Debug, Clone, Copy)]
struct Coeffs {
    m: f64,
    a: f64,
    b: f64,
    c: f64,
    w: f64,
    h: f64,
    hw: f64,
    e: f64,
    phase: f64,
}

impl Coeffs {
    fn new(u: &[f64]) -> Self {
        let v: Vec<f64> = u.iter().map(|x| x - 0.5).collect();
        let (v1, v2, v3, v4, v5, v6, v7) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
        Coeffs {
            m: 17.72 + 0.8 * v3 + 0.6 * v4 - 1.9 * v2 - 0.4 * (v1 + 0.2).powi(2)
                + 0.4 * v5 * v6
                + 0.3 * (PI * v7).sin(),
            a: 3.3 + 4.0 * (v1 + 0.15).powi(2) - 2.2 * v2 + 2.5 * (v3 + 0.1).powi(2) - 0.9 * v4
                + 0.8 * v1 * v3
                + 0.5 * v6,
            b: 1.2 - 1.0 * v2 + 1.0 * v4 + 1.0 * (v5 - 0.2).powi(2),
            c: 1.7 + 1.4 * v3 - 0.9 * v5 + 2.0 * (v7 + 0.1).powi(2) + 0.5 * v1,
            w: 0.13 + 0.04 * v6,
            h: 4.3 + 5.6 * (v7 - 0.1).powi(2) - 0.9 * v6 + 0.6 * v4 * v4 - 2.6 * v2,
            hw: 0.12 + 0.03 * v7,
            e: 0.45 + 0.2 * v5 - 0.15 * v2,
            phase: 2.0 * v6,
        }
    }

    fn eval(&self, px: f64, py: f64) -> f64 {
        let t = px * px + py * py;
        let s = t.sqrt();
        let phi = py.atan2(px);
        let g = |cx: f64, cy: f64, w: f64| (-((px - cx).powi(2) + (py - cy).powi(2)) / (2.0 * w * w)).exp();
        self.m + self.a * (t - 0.5) + self.b * (t.powi(4) - 0.2) - self.c * g(0.0, -0.35, self.w)
            + self.h * g(-0.1, 0.82, self.hw)
            + self.e * t * (2.0 * phi + 5.0 * s + self.phase).cos()
    }
}

fn alpha(u: &[f64], cfg: &DiscProblemConfig) -> f64 {
    let v: Vec<f64> = u.iter().map(|x| x - 0.5).collect();
    cfg.alpha0 * (1.0 + cfg.alpha_variation * (0.03 * v[2] - 0.02 * v[6] + 0.04 * v[0] * v[1]))
}

/// Evaluates the field of the given fidelity at physical points.
fn values_at(d: &[f64], fidelity: Fidelity, cfg: &DiscProblemConfig, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    let space = DesignSpace::esc();
    if d.len() != space.dim() || d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDomain(format!("expected 7 finite design values, got {d:?}")));
    }
    space.check(d)?;
    let u = space.to_unit(d);
    let co = Coeffs::new(&u);
    let r = cfg.radius;
    let out = match fidelity {
        Fidelity::High => points.iter().map(|p| co.eval(p[0] / r, p[1] / r)).collect(),
        Fidelity::Low => {
            let al = alpha(&u, cfg);
            points
                .iter()
                .map(|p| {
                    let (px, py) = (p[0] / r, p[1] / r);
                    al * co.eval(px, py) + cfg.bias_amplitude * (px * px + py * py - 0.5)
                })
                .collect()
        }
    };
    Ok(out)
}

/// High-fidelity field on its native mesh.
pub fn hf_field(d: &[f64], cfg: &DiscProblemConfig) -> Result<ScatteredField> {
    let mesh = disc_mesh(cfg.hf_nodes, cfg.radius, cfg.seed);
    let v = values_at(d, Fidelity::High, cfg, &mesh)?;
    ScatteredField::new(mesh, v, Fidelity::High)
}

/// Low-fidelity field on its (denser) native mesh.
pub fn lf_field(d: &[f64], cfg: &DiscProblemConfig) -> Result<ScatteredField> {
    let mesh = disc_mesh(cfg.lf_nodes, cfg.radius, lf_mesh_seed(cfg.seed));
    let v = values_at(d, Fidelity::Low, cfg, &mesh)?;
    ScatteredField::new(mesh, v, Fidelity::Low)
}

fn lf_mesh_seed(seed: u64) -> u64 {
    seed ^ 0x4c46_4d45_5348
}

/// Both native meshes with their resampling operators onto the standard grid.
/// Grid fields are produced by evaluating only the mesh nodes that feed a grid
/// cell, which gives the same result as simulate-then-regrid.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    config: DiscProblemConfig,
    grid: Arc<StandardGrid>,
    hf_points: Vec<[f64; 2]>,
    lf_points: Vec<[f64; 2]>,
}

impl SyntheticProblem {
    pub fn new(config: DiscProblemConfig) -> Result<Self> {
        config.validate()?;
        let grid = Arc::new(config.grid.build(&config.disc())?);
        let hf_mesh = disc_mesh(config.hf_nodes, config.radius, config.seed);
        let lf_mesh = disc_mesh(config.lf_nodes, config.radius, lf_mesh_seed(config.seed));
        let pick = |mesh: &[[f64; 2]]| -> Result<Vec<[f64; 2]>> {
            let map = NearestMap::new(mesh, grid.clone())?;
            Ok(map.sources().iter().map(|&s| mesh[s as usize]).collect())
        };
        Ok(SyntheticProblem {
            hf_points: pick(&hf_mesh)?,
            lf_points: pick(&lf_mesh)?,
            config,
            grid,
        })
    }

    pub fn config(&self) -> &DiscProblemConfig {
        &self.config
    }

    pub fn grid(&self) -> &Arc<StandardGrid> {
        &self.grid
    }

    pub fn grid_field(&self, d: &[f64], fidelity: Fidelity) -> Result<GridField> {
        let pts = match fidelity {
            Fidelity::High => &self.hf_points,
            Fidelity::Low => &self.lf_points,
        };
        GridField::new(self.grid.clone(), values_at(d, fidelity, &self.config, pts)?)
    }

    /// Grid fields for every row of `designs`, in row order.
    pub fn grid_fields(&self, designs: &[Vec<f64>], fidelity: Fidelity) -> Result<Vec<GridField>> {
        designs.par_iter().map(|d| self.grid_field(d, fidelity)).collect()
    }
}

/// Box centre with `F1` lowered to satisfy `F1 ≤ W2 − 2`.
pub fn reference_design() -> Vec<f64> {
    let space = DesignSpace::esc();
    let mut x = space.center();
    x[6] = x[6].min(x[5] - 2.0);
    x
}
