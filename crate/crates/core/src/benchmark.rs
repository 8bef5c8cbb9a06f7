//! End-to-end driver over the synthetic disc problem: DoE, simulation,
//! regridding, convergence studies and surrogate-based optimisation.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::doe::{lhs, nested_subset, DesignSpace, SubsetStrategy};
use crate::error::{Error, Result};
use crate::evaluation::{
    convergence_study, equivalent_cost, matched_cost_reduction, mix, qoi, train_surrogate, CostModel, FieldDataset,
    Method, QoiSummary, StudyRow, StudySettings, SurrogateSettings, TrainingSet,
};
use crate::field_grid::Fidelity;
use crate::optimizer::{
    best_feasible, least_violation, multistart, multistart_runs, EscProblem, EscThresholds, FieldQoi, OptResult,
    SqpOptions, FIELD_QOI_CONSTRAINTS,
};
use crate::pod::SnapshotMatrix;
use crate::surrogate::FieldSurrogate;
use crate::synthetic::{reference_design, DiscProblemConfig, SyntheticProblem};

/// Size of the simulated data pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSpec {
    pub n_lf: usize,
    pub n_hf: usize,
    pub strategy: SubsetStrategy,
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec {
            n_lf: 1500,
            n_hf: 150,
            strategy: SubsetStrategy::FirstN,
        }
    }
}

/// Simulates an LHS pool: LF at every design, HF at the nested subset.
pub fn generate_dataset(problem: &SyntheticProblem, pool: &PoolSpec, seed: u64) -> Result<FieldDataset> {
    let space = DesignSpace::esc();
    let x = lhs(&space, pool.n_lf, seed)?;
    let hf_rows = nested_subset(&x, pool.n_hf, pool.strategy)?;
    dataset_from_designs(problem, x, hf_rows)
}

pub fn dataset_from_designs(problem: &SyntheticProblem, x: DMatrix<f64>, hf_rows: Vec<usize>) -> Result<FieldDataset> {
    let designs: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let lf = problem.grid_fields(&designs, Fidelity::Low)?;
    let hf_designs: Vec<Vec<f64>> = hf_rows.iter().map(|&r| designs[r].clone()).collect();
    let hf = problem.grid_fields(&hf_designs, Fidelity::High)?;
    let to_matrix = |fields: &[crate::field_grid::GridField]| {
        let m = problem.grid().m_i();
        DMatrix::from_fn(fields.len(), m, |i, j| fields[i].values()[j])
    };
    let lf = SnapshotMatrix::from_rows(problem.grid().clone(), to_matrix(&lf))?;
    let hf = SnapshotMatrix::from_rows(problem.grid().clone(), to_matrix(&hf))?;
    FieldDataset::new(x, lf, hf, hf_rows)
}

/// Sizes and settings of the three convergence studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyPlan {
    pub hf_sizes: Vec<usize>,
    pub lf_sizes: Vec<usize>,
    /// LF count used with every entry of `mf_hf_sizes`.
    pub mf_lf: usize,
    pub mf_hf_sizes: Vec<usize>,
    pub settings: StudySettings,
}

impl Default for StudyPlan {
    fn default() -> Self {
        StudyPlan {
            hf_sizes: vec![20, 40, 60, 80, 100],
            lf_sizes: vec![20, 100, 200, 400, 800],
            mf_lf: 100,
            mf_hf_sizes: vec![20, 40, 60, 80, 100],
            settings: StudySettings::default(),
        }
    }
}

impl StudyPlan {
    pub fn sizes(&self, method: Method) -> Vec<(usize, usize)> {
        match method {
            Method::Lf => self.lf_sizes.iter().map(|&n| (n, 0)).collect(),
            Method::Hf => self.hf_sizes.iter().map(|&n| (0, n)).collect(),
            Method::Mf => self.mf_hf_sizes.iter().map(|&n| (self.mf_lf, n)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub lf: Vec<StudyRow>,
    pub hf: Vec<StudyRow>,
    pub mf: Vec<StudyRow>,
    /// `(cost, 1 − RMSE_MF / RMSE_HF)` at matched equivalent cost.
    pub reductions: Vec<(f64, f64)>,
    pub mean_reduction: f64,
}

/// Runs the LF, HF and MF convergence studies on one dataset.
pub fn run_studies(data: &FieldDataset, plan: &StudyPlan) -> Result<StudyReport> {
    let run = |m| convergence_study(data, m, &plan.sizes(m), &plan.settings);
    let lf = run(Method::Lf)?;
    let hf = run(Method::Hf)?;
    let mf = run(Method::Mf)?;
    let reductions = matched_cost_reduction(&hf, &mf);
    let mean_reduction = if reductions.is_empty() {
        f64::NAN
    } else {
        reductions.iter().map(|r| r.1).sum::<f64>() / reductions.len() as f64
    };
    Ok(StudyReport {
        lf,
        hf,
        mf,
        reductions,
        mean_reduction,
    })
}

/// One surrogate configuration to optimise with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationRun {
    pub method: Method,
    #[serde(default)]
    pub n_lf: usize,
    #[serde(default)]
    pub n_hf: usize,
}

/// Surrogate-based design optimisation repeated over independent datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationPlan {
    pub runs: Vec<OptimizationRun>,
    pub draws: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub surrogate: SurrogateSettings,
    pub thresholds: EscThresholds,
    pub sqp: SqpOptions,
    pub cost: CostModel,
}

impl Default for OptimizationPlan {
    fn default() -> Self {
        let run = |method, n_lf, n_hf| OptimizationRun { method, n_lf, n_hf };
        OptimizationPlan {
            runs: vec![run(Method::Lf, 100, 0), run(Method::Hf, 0, 80), run(Method::Mf, 100, 60)],
            draws: 3,
            n_starts: 8,
            seed: 0,
            surrogate: SurrogateSettings::default(),
            thresholds: EscThresholds::default(),
            sqp: SqpOptions::default(),
            cost: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub method: Method,
    pub n_lf: usize,
    pub n_hf: usize,
    pub cost: f64,
    pub draw: usize,
    pub result: OptResult,
    pub predicted: FieldQoi,
    pub truth: QoiSummary,
    /// Field-QoI constraint values of the true HF field at `x_star`.
    pub truth_constraints: [f64; FIELD_QOI_CONSTRAINTS],
    /// Relative reduction of the true `3σ` against the reference design.
    pub improvement: f64,
}

impl OptimizationOutcome {
    pub fn truth_feasible(&self) -> bool {
        self.truth_constraints.iter().all(|&g| g <= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub reference: Vec<f64>,
    pub reference_truth: QoiSummary,
    pub outcomes: Vec<OptimizationOutcome>,
}

/// Multistart SQP on the ESC problem from the reference design.
pub fn optimize_esc(
    model: Arc<dyn FieldSurrogate>,
    thresholds: EscThresholds,
    n_starts: usize,
    seed: u64,
    sqp: &SqpOptions,
) -> Result<(EscProblem, OptResult)> {
    let reference = reference_design();
    let esc = EscProblem::new(model, DesignSpace::esc(), thresholds, &reference)?;
    let (result, _) = multistart(&esc, &reference, n_starts, seed, sqp)?;
    Ok((esc, result))
}

/// For each run and draw: simulates a fresh nested dataset, trains the
/// surrogate, optimises from the reference design and scores the optimum on
/// the true HF field.
pub fn run_optimization(problem: &SyntheticProblem, plan: &OptimizationPlan) -> Result<OptimizationReport> {
    plan.thresholds.validate()?;
    plan.cost.validate()?;
    if plan.draws == 0 {
        return Err(Error::Config("draws must be at least 1".into()));
    }
    let reference = reference_design();
    let reference_truth = qoi(&problem.grid_field(&reference, Fidelity::High)?);
    let mut outcomes = Vec::with_capacity(plan.draws * plan.runs.len());
    for run in &plan.runs {
        let (n_lf, n_hf) = match run.method {
            Method::Lf => (run.n_lf, 0),
            Method::Hf => (0, run.n_hf),
            Method::Mf => (run.n_lf, run.n_hf),
        };
        for draw in 0..plan.draws {
            let seed = mix(plan.seed, draw as u64);
            let pool = PoolSpec {
                n_lf: n_lf.max(n_hf).max(2),
                n_hf: n_hf.max(2),
                strategy: SubsetStrategy::FirstN,
            };
            let data = generate_dataset(problem, &pool, seed)?;
            let set = TrainingSet {
                lf: if n_lf > 0 { (0..data.n_lf()).collect() } else { Vec::new() },
                hf: if n_hf > 0 { (0..data.n_hf()).collect() } else { Vec::new() },
            };
            let model: Arc<dyn FieldSurrogate> = Arc::new(train_surrogate(&data, run.method, &set, &plan.surrogate)?);
            let esc = EscProblem::new(model, DesignSpace::esc(), plan.thresholds, &reference)?;
            let runs = multistart_runs(&esc, &reference, plan.n_starts, seed, &plan.sqp)?;
            let result = match best_feasible(&runs, plan.sqp.feas_tol) {
                Some(r) => r.clone(),
                None => {
                    let r = least_violation(&runs).expect("multistart returns at least one run").clone();
                    log::warn!(
                        "{} draw {draw}: surrogate admits no feasible design, keeping violation {:.3e}",
                        run.method,
                        r.max_violation()
                    );
                    r
                }
            };
            let predicted = esc.qoi(&result.x_star)?;
            let truth = qoi(&problem.grid_field(&result.x_star, Fidelity::High)?);
            let outcome = OptimizationOutcome {
                method: run.method,
                n_lf,
                n_hf,
                cost: equivalent_cost(n_lf, n_hf, &plan.cost),
                draw,
                predicted,
                truth_constraints: plan.thresholds.qoi_constraints(truth.mean, truth.max),
                improvement: 1.0 - truth.three_sigma / reference_truth.three_sigma,
                truth,
                result,
            };
            log::info!(
                "{} draw {draw}: 3σ {:.4} (true {:.4}), improvement {:.1} %",
                run.method,
                outcome.predicted.summary.three_sigma,
                outcome.truth.three_sigma,
                100.0 * outcome.improvement
            );
            outcomes.push(outcome);
        }
    }
    Ok(OptimizationReport {
        reference,
        reference_truth,
        outcomes,
    })
}

/// Whole benchmark: problem, data pool, studies and optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub problem: DiscProblemConfig,
    pub pool: PoolSpec,
    pub seed: u64,
    pub study: StudyPlan,
    pub optimization: OptimizationPlan,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            problem: DiscProblemConfig::default(),
            pool: PoolSpec::default(),
            seed: 0,
            study: StudyPlan::default(),
            optimization: OptimizationPlan::default(),
        }
    }
}

impl BenchmarkConfig {
    /// Coarser grid and meshes, a pool just large enough for the study sizes
    /// and a single likelihood restart. Runs in a few minutes on one core.
    pub fn desk() -> Self {
        let mut cfg = BenchmarkConfig {
            problem: DiscProblemConfig {
                grid: crate::field_grid::GridSpec {
                    nx: 100,
                    ny: 100,
                    mask: true,
                },
                hf_nodes: 20_000,
                lf_nodes: 50_000,
                ..DiscProblemConfig::default()
            },
            pool: PoolSpec {
                n_lf: 830,
                n_hf: 130,
                strategy: SubsetStrategy::FirstN,
            },
            ..BenchmarkConfig::default()
        };
        cfg.study.settings.surrogate.kriging.n_restarts = 1;
        cfg.optimization.surrogate.kriging.n_restarts = 1;
        cfg
    }

    /// Propagates the top-level seed into the study and optimisation plans.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.study.settings.seed = seed;
        self.optimization.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub studies: StudyReport,
    pub optimization: OptimizationReport,
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let problem = SyntheticProblem::new(cfg.problem.clone())?;
    let data = generate_dataset(&problem, &cfg.pool, cfg.seed)?;
    let studies = run_studies(&data, &cfg.study)?;
    let optimization = run_optimization(&problem, &cfg.optimization)?;
    Ok(BenchmarkReport { studies, optimization })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_grid::GridSpec;

    fn tiny() -> BenchmarkConfig {
        let mut cfg = BenchmarkConfig {
            problem: DiscProblemConfig {
                grid: GridSpec {
                    nx: 24,
                    ny: 24,
                    mask: true,
                },
                hf_nodes: 2_000,
                lf_nodes: 4_000,
                ..DiscProblemConfig::default()
            },
            pool: PoolSpec {
                n_lf: 60,
                n_hf: 24,
                strategy: SubsetStrategy::FirstN,
            },
            study: StudyPlan {
                hf_sizes: vec![6, 12],
                lf_sizes: vec![10, 30],
                mf_lf: 20,
                mf_hf_sizes: vec![6, 10],
                ..StudyPlan::default()
            },
            optimization: OptimizationPlan {
                runs: vec![OptimizationRun {
                    method: Method::Mf,
                    n_lf: 20,
                    n_hf: 8,
                }],
                draws: 1,
                n_starts: 2,
                ..OptimizationPlan::default()
            },
            ..BenchmarkConfig::default()
        };
        cfg.study.settings.holdout = 8;
        cfg.study.settings.repeats = 2;
        cfg.study.settings.surrogate.k = 4;
        cfg.study.settings.surrogate.kriging.n_restarts = 1;
        cfg.optimization.surrogate = cfg.study.settings.surrogate.clone();
        cfg
    }

    #[test]
    fn nested_pool_matches_generator() {
        let cfg = tiny();
        let problem = SyntheticProblem::new(cfg.problem.clone()).unwrap();
        let data = generate_dataset(&problem, &cfg.pool, 5).unwrap();
        assert_eq!((data.n_lf(), data.n_hf()), (60, 24));
        let h = 7;
        let x: Vec<f64> = data.x().row(data.hf_rows()[h]).iter().copied().collect();
        let truth = problem.grid_field(&x, Fidelity::High).unwrap();
        assert_eq!(data.hf().data().row(h).iter().copied().collect::<Vec<_>>(), truth.values());
    }

    #[test]
    fn smoke_run_is_deterministic() {
        let cfg = tiny().seeded(11);
        let a = run_benchmark(&cfg).unwrap();
        assert_eq!(a.studies.hf.len(), 2);
        assert_eq!(a.studies.lf.len(), 2);
        assert_eq!(a.studies.mf.len(), 2);
        assert_eq!(a.optimization.outcomes.len(), 1);
        assert!(a.studies.hf.iter().all(|r| r.avg_rmse.is_finite() && r.avg_rmse > 0.0));
        assert!(a.optimization.outcomes[0].result.max_violation() <= 1e-6);
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
