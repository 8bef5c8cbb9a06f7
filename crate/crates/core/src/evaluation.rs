//! Field quantities of interest, validation error metrics, cost accounting
//! and the hold-out convergence study.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_grid::GridField;
use crate::kriging::KrigingConfig;
use crate::mf_kriging::{fit_mf, FidelityDataset, MfOptions};
use crate::pod::{compute_pod_with, PodOptions, RankSelection, SnapshotMatrix};
use crate::surrogate::{FieldSurrogate, SingleFidelityModel, Surrogate};

/// Guard applied to the truth in relative errors.
pub const REL_ERR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoiSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub three_sigma: f64,
    pub max: f64,
}

pub fn qoi(field: &GridField) -> QoiSummary {
    qoi_values(field.values())
}

pub fn qoi_values(values: &[f64]) -> QoiSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    QoiSummary {
        mean,
        std,
        three_sigma: 3.0 * std,
        max,
    }
}

/// Root mean square error over a set of fields, averaging the per-field mean
/// square error.
pub fn rmse(predictions: &[GridField], truths: &[GridField]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::EmptyInput("no fields to compare"));
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(truths) {
        if !crate::field_grid::same_grid(p.grid(), t.grid()) {
            return Err(Error::GridMismatch);
        }
        total += mean_square(p.values(), t.values());
    }
    Ok((total / truths.len() as f64).sqrt())
}

/// Same as [`rmse`] for row-stacked fields.
pub fn rmse_rows(predictions: &DMatrix<f64>, truths: &DMatrix<f64>) -> Result<f64> {
    if predictions.shape() != truths.shape() {
        return Err(Error::Shape {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    if truths.nrows() == 0 || truths.ncols() == 0 {
        return Err(Error::EmptyInput("no fields to compare"));
    }
    let m = truths.ncols() as f64;
    let total: f64 = (0..truths.nrows())
        .map(|i| {
            predictions
                .row(i)
                .iter()
                .zip(truths.row(i).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / m
        })
        .sum();
    Ok((total / truths.nrows() as f64).sqrt())
}

fn mean_square(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `|pred − truth| / |truth|`, with the denominator floored.
pub fn relative_error(pred: f64, truth: f64) -> f64 {
    let den = truth.abs();
    if den < REL_ERR_FLOOR {
        log::warn!("relative error against near-zero truth {truth:e}");
    }
    (pred - truth).abs() / den.max(REL_ERR_FLOOR)
}

/// Seconds per evaluation at each fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub t_lf: f64,
    pub t_hf: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            t_lf: 44.27,
            t_hf: 919.4,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_lf > 0.0 && self.t_hf > 0.0 && self.t_lf.is_finite() && self.t_hf.is_finite()) {
            return Err(Error::Config(format!(
                "evaluation times must be positive, got LF {} and HF {}",
                self.t_lf, self.t_hf
            )));
        }
        Ok(())
    }
}

/// Data generation cost in units of one LF evaluation.
pub fn equivalent_cost(n_lf: usize, n_hf: usize, cost: &CostModel) -> f64 {
    n_lf as f64 + n_hf as f64 * (cost.t_hf / cost.t_lf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LF")]
    Lf,
    #[serde(rename = "HF")]
    Hf,
    #[serde(rename = "MF")]
    Mf,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lf => "LF",
            Method::Hf => "HF",
            Method::Mf => "MF",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LF" => Ok(Method::Lf),
            "HF" => Ok(Method::Hf),
            "MF" => Ok(Method::Mf),
            _ => Err(Error::Config(format!("unknown method {s}"))),
        }
    }
}

/// Regridded snapshots at every design point. HF rows map onto LF rows.
#[derive(Debug, Clone)]
pub struct FieldDataset {
    x: DMatrix<f64>,
    lf: SnapshotMatrix,
    hf: SnapshotMatrix,
    hf_rows: Vec<usize>,
}

impl FieldDataset {
    pub fn new(x: DMatrix<f64>, lf: SnapshotMatrix, hf: SnapshotMatrix, hf_rows: Vec<usize>) -> Result<Self> {
        if lf.n_snapshots() != x.nrows() {
            return Err(Error::Shape {
                expected: x.nrows(),
                got: lf.n_snapshots(),
            });
        }
        if hf.n_snapshots() != hf_rows.len() {
            return Err(Error::Shape {
                expected: hf_rows.len(),
                got: hf.n_snapshots(),
            });
        }
        if !crate::field_grid::same_grid(lf.grid(), hf.grid()) {
            return Err(Error::GridMismatch);
        }
        let mut seen = vec![false; x.nrows()];
        for &r in &hf_rows {
            if r >= x.nrows() || std::mem::replace(&mut seen[r], true) {
                return Err(Error::NestedDesign(format!("HF row map entry {r} is invalid")));
            }
        }
        Ok(FieldDataset { x, lf, hf, hf_rows })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn lf(&self) -> &SnapshotMatrix {
        &self.lf
    }

    pub fn hf(&self) -> &SnapshotMatrix {
        &self.hf
    }

    pub fn hf_rows(&self) -> &[usize] {
        &self.hf_rows
    }

    pub fn n_lf(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_hf(&self) -> usize {
        self.hf_rows.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSettings {
    /// Latent dimension.
    pub k: usize,
    pub center: bool,
    pub kriging: KrigingConfig,
    pub mf: MfOptions,
    /// Training sets larger than this share one set of length scales across
    /// latent coordinates.
    pub shared_theta_above: usize,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        SurrogateSettings {
            k: 20,
            center: false,
            kriging: KrigingConfig::default(),
            mf: MfOptions::default(),
            shared_theta_above: 200,
        }
    }
}

impl SurrogateSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        self.kriging.validate()
    }
}

/// Training subset: `lf` indexes dataset rows, `hf` indexes HF pool entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingSet {
    pub lf: Vec<usize>,
    pub hf: Vec<usize>,
}

fn rows_of(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    x.select_rows(rows.iter())
}

/// Builds the POD basis and latent surrogate for one method.
pub fn train_surrogate(
    data: &FieldDataset,
    method: Method,
    set: &TrainingSet,
    settings: &SurrogateSettings,
) -> Result<Surrogate> {
    let single = |x: DMatrix<f64>, snaps: SnapshotMatrix| -> Result<Surrogate> {
        let basis = Arc::new(pod_for(&snaps, settings)?);
        let z = basis.project_rows(&snaps)?;
        let shared = x.nrows() > settings.shared_theta_above;
        let m = SingleFidelityModel::fit(&x, &z, basis, &settings.kriging, shared)?;
        Ok(Surrogate::Single(m))
    };
    match method {
        Method::Lf => {
            if set.lf.is_empty() {
                return Err(Error::Size("LF method needs LF training rows".into()));
            }
            single(rows_of(&data.x, &set.lf), data.lf.select_rows(&set.lf)?)
        }
        Method::Hf => {
            if set.hf.is_empty() {
                return Err(Error::Size("HF method needs HF training rows".into()));
            }
            let rows: Vec<usize> = set.hf.iter().map(|&h| data.hf_rows[h]).collect();
            single(rows_of(&data.x, &rows), data.hf.select_rows(&set.hf)?)
        }
        Method::Mf => {
            let lf_snaps = data.lf.select_rows(&set.lf)?;
            let hf_snaps = data.hf.select_rows(&set.hf)?;
            let both = SnapshotMatrix::from_rows(
                data.lf.grid().clone(),
                stack(lf_snaps.data(), hf_snaps.data()),
            )?;
            let basis = Arc::new(pod_for(&both, settings)?);
            let z_lf = basis.project_rows(&lf_snaps)?;
            let z_hf = basis.project_rows(&hf_snaps)?;
            let hf_in_lf = set
                .hf
                .iter()
                .map(|&h| {
                    let row = data.hf_rows[h];
                    set.lf.iter().position(|&l| l == row).ok_or_else(|| {
                        Error::NestedDesign(format!("HF design row {row} is not in the LF training set"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let x_lf = rows_of(&data.x, &set.lf);
            let x_hf = rows_of(&x_lf, &hf_in_lf);
            let fd = FidelityDataset::new(x_lf, z_lf, x_hf, z_hf, hf_in_lf)?;
            let opts = MfOptions {
                shared_theta: settings.mf.shared_theta || set.lf.len() > settings.shared_theta_above,
                ..settings.mf
            };
            Ok(Surrogate::Multi(fit_mf(&fd, basis, &settings.kriging, opts)?))
        }
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn pod_for(snaps: &SnapshotMatrix, settings: &SurrogateSettings) -> Result<crate::pod::PodBasis> {
    let k = settings.k.min(snaps.n_snapshots()).min(snaps.m_i());
    compute_pod_with(
        snaps,
        PodOptions {
            rank: RankSelection::Fixed(k),
            center: settings.center,
        },
    )
}

/// Mean relative QoI errors over a validation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct QoiErrors {
    pub max: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rmse: f64,
    pub rel_err: QoiErrors,
    pub n_val: usize,
}

/// Predicts the given HF pool entries and scores them against the truth.
pub fn validate<S: FieldSurrogate + ?Sized>(
    model: &S,
    data: &FieldDataset,
    hf_entries: &[usize],
) -> Result<ValidationReport> {
    if hf_entries.is_empty() {
        return Err(Error::EmptyInput("empty validation set"));
    }
    let basis = model.basis();
    let truth = data.hf.select_rows(hf_entries)?;
    let mut pred = DMatrix::zeros(hf_entries.len(), truth.m_i());
    let mut errs = QoiErrors::default();
    for (i, &h) in hf_entries.iter().enumerate() {
        let x: Vec<f64> = data.x.row(data.hf_rows[h]).iter().copied().collect();
        let z = model.predict_latent_mean(&x)?;
        let field = basis.reconstruct(&z)?;
        let t: Vec<f64> = truth.data().row(i).iter().copied().collect();
        let (qp, qt) = (qoi_values(&field), qoi_values(&t));
        errs.max += relative_error(qp.max, qt.max);
        errs.mean += relative_error(qp.mean, qt.mean);
        errs.sigma += relative_error(qp.std, qt.std);
        pred.row_mut(i).copy_from_slice(&field);
    }
    let n = hf_entries.len() as f64;
    Ok(ValidationReport {
        rmse: rmse_rows(&pred, truth.data())?,
        rel_err: QoiErrors {
            max: errs.max / n,
            mean: errs.mean / n,
            sigma: errs.sigma / n,
        },
        n_val: hf_entries.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    pub holdout: usize,
    pub repeats: usize,
    pub seed: u64,
    pub cost: CostModel,
    pub surrogate: SurrogateSettings,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings {
            holdout: 30,
            repeats: 3,
            seed: 0,
            cost: CostModel::default(),
            surrogate: SurrogateSettings::default(),
        }
    }
}

/// One line of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: Method,
    pub n_lf: usize,
    pub n_hf: usize,
    pub cost: f64,
    pub avg_rmse: f64,
    pub rel_err_max: f64,
    pub rel_err_mean: f64,
    pub rel_err_sigma: f64,
}

/// HF pool entries held out for validation, drawn once per study.
pub fn validation_split(n_hf: usize, holdout: usize, seed: u64) -> Result<Vec<usize>> {
    if holdout == 0 || holdout >= n_hf {
        return Err(Error::Size(format!(
            "cannot hold out {holdout} of {n_hf} HF points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5eed_0f_7a11));
    let mut idx: Vec<usize> = (0..n_hf).collect();
    idx.shuffle(&mut rng);
    let mut val = idx[..holdout].to_vec();
    val.sort_unstable();
    Ok(val)
}

/// SplitMix64 finaliser over `a ^ b`; used to derive independent stream seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws a training set for `(n_lf, n_hf)` avoiding the validation entries.
/// For MF the HF rows are part of the LF set.
pub fn draw_training_set(
    data: &FieldDataset,
    method: Method,
    n_lf: usize,
    n_hf: usize,
    validation: &[usize],
    seed: u64,
) -> Result<TrainingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut banned = vec![false; data.n_lf()];
    for &v in validation {
        banned[data.hf_rows[v]] = true;
    }
    let hf_pool: Vec<usize> = (0..data.n_hf()).filter(|h| !validation.contains(h)).collect();
    let lf_pool: Vec<usize> = (0..data.n_lf()).filter(|&r| !banned[r]).collect();
    let pick = |pool: &[usize], n: usize, rng: &mut ChaCha8Rng, what: &str| -> Result<Vec<usize>> {
        if n > pool.len() {
            return Err(Error::Size(format!(
                "{what}: requested {n} training points, only {} available",
                pool.len()
            )));
        }
        let mut p = pool.to_vec();
        p.shuffle(rng);
        p.truncate(n);
        Ok(p)
    };
    match method {
        Method::Lf => Ok(TrainingSet {
            lf: pick(&lf_pool, n_lf, &mut rng, "LF")?,
            hf: Vec::new(),
        }),
        Method::Hf => Ok(TrainingSet {
            lf: Vec::new(),
            hf: pick(&hf_pool, n_hf, &mut rng, "HF")?,
        }),
        Method::Mf => {
            if n_lf < n_hf {
                return Err(Error::Size(format!(
                    "MF needs at least as many LF ({n_lf}) as HF ({n_hf}) points"
                )));
            }
            let hf = pick(&hf_pool, n_hf, &mut rng, "HF")?;
            let mut lf: Vec<usize> = hf.iter().map(|&h| data.hf_rows[h]).collect();
            let rest: Vec<usize> = lf_pool.iter().copied().filter(|r| !lf.contains(r)).collect();
            lf.extend(pick(&rest, n_lf - n_hf, &mut rng, "LF")?);
            Ok(TrainingSet { lf, hf })
        }
    }
}

/// Trains `repeats` models per size on seeded random draws and averages their
/// validation errors. `sizes` lists `(n_lf, n_hf)` pairs.
pub fn convergence_study(
    data: &FieldDataset,
    method: Method,
    sizes: &[(usize, usize)],
    settings: &StudySettings,
) -> Result<Vec<StudyRow>> {
    settings.surrogate.validate()?;
    settings.cost.validate()?;
    if settings.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let validation = validation_split(data.n_hf(), settings.holdout, settings.seed)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &(n_lf, n_hf) in sizes {
        let (n_lf, n_hf) = match method {
            Method::Lf => (n_lf, 0),
            Method::Hf => (0, n_hf),
            Method::Mf => (n_lf, n_hf),
        };
        let reports = (0..settings.repeats)
            .into_par_iter()
            .map(|r| {
                let tag = mix(mix(method as u64, n_lf as u64), mix(n_hf as u64, r as u64));
                let set = draw_training_set(data, method, n_lf, n_hf, &validation, mix(settings.seed, tag))?;
                let model = train_surrogate(data, method, &set, &settings.surrogate)?;
                validate(&model, data, &validation)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&ValidationReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        rows.push(StudyRow {
            method,
            n_lf,
            n_hf,
            cost: equivalent_cost(n_lf, n_hf, &settings.cost),
            avg_rmse: avg(&|r| r.rmse),
            rel_err_max: avg(&|r| r.rel_err.max),
            rel_err_mean: avg(&|r| r.rel_err.mean),
            rel_err_sigma: avg(&|r| r.rel_err.sigma),
        });
        log::info!(
            "{method} n_lf={n_lf} n_hf={n_hf}: avg RMSE {:.5}",
            rows.last().map(|r| r.avg_rmse).unwrap_or(f64::NAN)
        );
    }
    Ok(rows)
}

/// Relative RMSE reduction of each MF row against the HF curve linearly
/// interpolated at the same equivalent cost. MF rows outside the HF cost range
/// are skipped.
pub fn matched_cost_reduction(hf: &[StudyRow], mf: &[StudyRow]) -> Vec<(f64, f64)> {
    let mut curve: Vec<(f64, f64)> = hf.iter().map(|r| (r.cost, r.avg_rmse)).collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    for r in mf {
        let Some(w) = curve.windows(2).find(|w| w[0].0 <= r.cost && r.cost <= w[1].0) else {
            continue;
        };
        let t = if w[1].0 > w[0].0 {
            (r.cost - w[0].0) / (w[1].0 - w[0].0)
        } else {
            0.0
        };
        let hf_rmse = w[0].1 + t * (w[1].1 - w[0].1);
        out.push((r.cost, 1.0 - r.avg_rmse / hf_rmse));
    }
    out
}

pub fn write_study_csv<W: std::io::Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_study_csv<R: std::io::Read>(input: R) -> Result<Vec<StudyRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}
