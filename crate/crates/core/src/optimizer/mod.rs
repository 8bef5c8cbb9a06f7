//! Bound- and inequality-constrained local minimisation by sequential
//! quadratic programming, plus the electrostatic-chuck design problem.
//!
//! The solver works in unit-cube coordinates. Each iteration solves a convex
//! QP model with a damped BFGS Hessian, falls back to an elastic QP when the
//! linearised constraints are inconsistent, and backtracks on an L1 merit
//! function.

mod esc;
pub mod qp;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doe::{lhs_with, DesignSpace};
use crate::error::{Error, Result};

pub use esc::{soft_max, EscProblem, EscThresholds, FieldQoi, GradientMode, FIELD_QOI_CONSTRAINTS};
use qp::{nnls, solve_qp, QpStatus};

/// Objective and constraint values with gradients at one point, in the
/// problem's own (physical) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub grad: Vec<f64>,
    /// Constraint values `g_i(x)`; feasible when `≤ 0`.
    pub g: Vec<f64>,
    /// `n_constraints × n` Jacobian.
    pub jac: DMatrix<f64>,
}

/// A bounded, inequality-constrained minimisation problem.
pub trait Problem: Sync {
    fn space(&self) -> &DesignSpace;

    fn n_constraints(&self) -> usize;

    fn constraint_names(&self) -> Vec<String> {
        (0..self.n_constraints()).map(|i| format!("g{i}")).collect()
    }

    /// Flags constraints that are affine in `x`.
    fn linear_constraints(&self) -> Vec<bool> {
        vec![false; self.n_constraints()]
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;
}

type ScalarFn = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync>;

struct ConstraintFn {
    name: String,
    linear: bool,
    f: ScalarFn,
}

/// Problem assembled from closures returning `(value, gradient)`.
pub struct OptimizationProblem {
    space: DesignSpace,
    objective: ScalarFn,
    constraints: Vec<ConstraintFn>,
}

impl OptimizationProblem {
    pub fn new<F>(space: DesignSpace, objective: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        OptimizationProblem {
            space,
            objective: Box::new(objective),
            constraints: Vec::new(),
        }
    }

    /// Adds `g(x) ≤ 0`.
    pub fn constraint<F>(mut self, name: &str, g: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        self.constraints.push(ConstraintFn {
            name: name.to_string(),
            linear: false,
            f: Box::new(g),
        });
        self
    }

    /// Adds `aᵀx ≤ b`.
    pub fn linear(mut self, name: &str, a: Vec<f64>, b: f64) -> Self {
        self.constraints.push(ConstraintFn {
            name: name.to_string(),
            linear: true,
            f: Box::new(move |x: &[f64]| {
                let v = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() - b;
                (v, a.clone())
            }),
        });
        self
    }
}

impl Problem for OptimizationProblem {
    fn space(&self) -> &DesignSpace {
        &self.space
    }

    fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn constraint_names(&self) -> Vec<String> {
        self.constraints.iter().map(|c| c.name.clone()).collect()
    }

    fn linear_constraints(&self) -> Vec<bool> {
        self.constraints.iter().map(|c| c.linear).collect()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let (f, grad) = (self.objective)(x);
        let n = x.len();
        let mut g = Vec::with_capacity(self.constraints.len());
        let mut jac = DMatrix::zeros(self.constraints.len(), n);
        for (i, c) in self.constraints.iter().enumerate() {
            let (v, dv) = (c.f)(x);
            g.push(v);
            for d in 0..n {
                jac[(i, d)] = dv[d];
            }
        }
        Ok(Evaluation { f, grad, g, jac })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqpOptions {
    /// Step-size and optimality tolerance, in unit-cube coordinates.
    pub tol: f64,
    /// Largest accepted constraint violation at convergence.
    pub feas_tol: f64,
    /// Largest accepted KKT residual at convergence.
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl Default for SqpOptions {
    fn default() -> Self {
        SqpOptions {
            tol: 1e-7,
            feas_tol: 1e-7,
            kkt_tol: 1e-5,
            max_iter: 200,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub max_violation: f64,
    /// Merit at the previous iterate, with the penalties used in this step.
    pub merit_before: f64,
    pub merit: f64,
    pub step: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub constraint_values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Lagrangian-gradient residual in unit-cube coordinates.
    pub kkt_residual: f64,
    pub trace: Vec<TraceEntry>,
}

impl OptResult {
    pub fn max_violation(&self) -> f64 {
        max_violation(&self.constraint_values)
    }
}

fn max_violation(g: &[f64]) -> f64 {
    g.iter().copied().fold(0.0, f64::max)
}

/// Problem evaluated in unit-cube coordinates.
struct Scaled<'a, P: Problem + ?Sized> {
    problem: &'a P,
    width: Vec<f64>,
}

struct Point {
    u: DVector<f64>,
    x: Vec<f64>,
    f: f64,
    grad: DVector<f64>,
    g: DVector<f64>,
    jac: DMatrix<f64>,
}

impl<'a, P: Problem + ?Sized> Scaled<'a, P> {
    fn new(problem: &'a P) -> Self {
        let s = problem.space();
        let width = s.lower().iter().zip(s.upper()).map(|(l, u)| u - l).collect();
        Scaled { problem, width }
    }

    fn to_x(&self, u: &DVector<f64>) -> Vec<f64> {
        let s = self.problem.space();
        (0..u.len())
            .map(|i| {
                if u[i] >= 1.0 {
                    s.upper()[i]
                } else {
                    s.lower()[i] + u[i] * self.width[i]
                }
            })
            .collect()
    }

    fn eval(&self, u: DVector<f64>) -> Result<Point> {
        let x = self.to_x(&u);
        let e = self.problem.evaluate(&x)?;
        let n = u.len();
        let m = self.problem.n_constraints();
        if e.grad.len() != n || e.g.len() != m || e.jac.shape() != (m, n) {
            return Err(Error::InvalidInput("problem evaluation has inconsistent shapes".into()));
        }
        let grad = DVector::from_fn(n, |i, _| e.grad[i] * self.width[i]);
        let jac = DMatrix::from_fn(m, n, |r, c| e.jac[(r, c)] * self.width[c]);
        Ok(Point {
            u,
            x,
            f: e.f,
            grad,
            g: DVector::from_vec(e.g),
            jac,
        })
    }
}

fn finite_point(p: &Point) -> bool {
    p.f.is_finite() && p.grad.iter().chain(p.g.iter()).chain(p.jac.iter()).all(|v| v.is_finite())
}

fn merit(p: &Point, mu: &DVector<f64>) -> f64 {
    p.f + p.g.iter().zip(mu.iter()).map(|(g, m)| m * g.max(0.0)).sum::<f64>()
}

/// QP step with constraint and bound multipliers.
struct Step {
    p: DVector<f64>,
    lambda: DVector<f64>,
}

/// Solves the SQP subproblem at `pt`; retries with an elastic slack when the
/// linearisation is inconsistent.
fn qp_step(pt: &Point, b: &DMatrix<f64>, mu_max: f64) -> Result<Step> {
    let n = pt.u.len();
    let m = pt.g.len();
    // columns: constraints, lower bounds, upper bounds
    let mut c = DMatrix::zeros(n, m + 2 * n);
    let mut rhs = DVector::zeros(m + 2 * n);
    for i in 0..m {
        for d in 0..n {
            c[(d, i)] = -pt.jac[(i, d)];
        }
        rhs[i] = pt.g[i];
    }
    for d in 0..n {
        c[(d, m + d)] = 1.0;
        rhs[m + d] = -pt.u[d];
        c[(d, m + n + d)] = -1.0;
        rhs[m + n + d] = pt.u[d] - 1.0;
    }
    match solve_qp(b, &pt.grad, &c, &rhs)? {
        Ok(s) => {
            return Ok(Step {
                p: s.x,
                lambda: s.lambda.rows(0, m).into_owned(),
            })
        }
        Err(QpStatus::Infeasible) => log::debug!("inconsistent linearisation, using elastic QP"),
    }
    let penalty = 100.0 * (1.0 + mu_max);
    let mut be = DMatrix::zeros(n + 1, n + 1);
    be.view_mut((0, 0), (n, n)).copy_from(b);
    be[(n, n)] = 1e-6 * (1.0 + b.diagonal().amax());
    let mut ae = DVector::zeros(n + 1);
    ae.rows_mut(0, n).copy_from(&pt.grad);
    ae[n] = penalty;
    let mut ce = DMatrix::zeros(n + 1, m + 2 * n + 1);
    ce.view_mut((0, 0), (n, m + 2 * n)).copy_from(&c);
    for i in 0..m {
        ce[(n, i)] = 1.0;
    }
    ce[(n, m + 2 * n)] = 1.0;
    let mut re = DVector::zeros(m + 2 * n + 1);
    re.rows_mut(0, m + 2 * n).copy_from(&rhs);
    match solve_qp(&be, &ae, &ce, &re)? {
        Ok(s) => Ok(Step {
            p: s.x.rows(0, n).into_owned(),
            lambda: s.lambda.rows(0, m).into_owned(),
        }),
        Err(_) => Err(Error::Numerical("elastic QP is infeasible".into())),
    }
}

/// Lagrangian-gradient residual at `x` in unit-cube coordinates, with
/// non-negative multipliers on the constraints and bounds that are active
/// within `act_tol`, fitted by non-negative least squares.
pub fn kkt_residual<P: Problem + ?Sized>(problem: &P, x: &[f64], act_tol: f64) -> Result<f64> {
    let sc = Scaled::new(problem);
    let u = DVector::from_vec(problem.space().to_unit(x));
    let pt = sc.eval(u)?;
    Ok(kkt_at(&pt, act_tol))
}

fn kkt_at(pt: &Point, act_tol: f64) -> f64 {
    let n = pt.u.len();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..pt.g.len() {
        if pt.g[i] >= -act_tol {
            cols.push(pt.jac.row(i).transpose());
        }
    }
    for d in 0..n {
        if pt.u[d] <= 1e-9 {
            let mut e = DVector::zeros(n);
            e[d] = -1.0;
            cols.push(e);
        }
        if pt.u[d] >= 1.0 - 1e-9 {
            let mut e = DVector::zeros(n);
            e[d] = 1.0;
            cols.push(e);
        }
    }
    let a = DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
    let lam = nnls(&a, &(-&pt.grad));
    (&pt.grad + &a * &lam).amax()
}

fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = s.dot(y);
    let y = if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy = s.dot(&y);
    if !(sy > 1e-300) {
        return;
    }
    *b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
    let bt = b.transpose();
    *b = (&*b + bt) * 0.5;
}

/// Local SQP minimisation from `x0`.
pub fn minimize_constrained<P: Problem + ?Sized>(problem: &P, x0: &[f64], opts: &SqpOptions) -> Result<OptResult> {
    if !(opts.tol > 0.0) || !(opts.feas_tol > 0.0) || !(opts.kkt_tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Config("tolerances must be positive and max_iter at least 1".into()));
    }
    let space = problem.space();
    if x0.len() != space.dim() || !space.contains(x0) {
        return Err(Error::InvalidStart(format!("start {x0:?} is outside the bounds")));
    }
    let sc = Scaled::new(problem);
    let n = x0.len();
    let m = problem.n_constraints();
    let u0 = DVector::from_vec(space.to_unit(x0)).map(|v| v.clamp(0.0, 1.0));
    let mut pt = sc.eval(u0)?;
    if !finite_point(&pt) {
        return Err(Error::InvalidStart("objective or constraints are not finite at the start".into()));
    }
    let mut b = DMatrix::identity(n, n);
    let mut mu = DVector::zeros(m);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resets = 0;
    let mut best: Option<(f64, Vec<f64>, DVector<f64>)> = None;
    let note_best = |pt: &Point, best: &mut Option<(f64, Vec<f64>, DVector<f64>)>| {
        let v = max_violation(pt.g.as_slice());
        if v <= opts.feas_tol && best.as_ref().is_none_or(|b| pt.f < b.0) {
            *best = Some((pt.f, pt.x.clone(), pt.g.clone()));
        }
    };
    note_best(&pt, &mut best);
    while iterations < opts.max_iter {
        iterations += 1;
        let step = match qp_step(&pt, &b, mu.amax()) {
            Ok(s) => s,
            Err(Error::Numerical(_)) => {
                b = DMatrix::identity(n, n);
                qp_step(&pt, &b, mu.amax())?
            }
            Err(e) => return Err(e),
        };
        let step_norm = step.p.amax();
        let viol = max_violation(pt.g.as_slice());
        if step_norm <= opts.tol && viol <= opts.feas_tol {
            converged = kkt_at(&pt, opts.feas_tol.max(1e-9)) <= opts.kkt_tol;
            if converged {
                break;
            }
        }
        for i in 0..m {
            let l = step.lambda[i].abs();
            mu[i] = if l > mu[i] { l } else { 0.5 * (mu[i] + l) };
        }
        let phi0 = merit(&pt, &mu);
        let d = pt.grad.dot(&step.p) - pt.g.iter().zip(mu.iter()).map(|(g, m)| m * g.max(0.0)).sum::<f64>();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-10 {
            let u = (&pt.u + &step.p * alpha).map(|v| v.clamp(0.0, 1.0));
            let cand = sc.eval(u)?;
            if finite_point(&cand) {
                let phi = merit(&cand, &mu);
                if phi <= phi0 + 1e-4 * alpha * d.min(0.0) {
                    accepted = Some((cand, phi));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((next, phi)) = accepted else {
            if step_norm <= opts.tol {
                break;
            }
            resets += 1;
            if resets > 3 {
                log::debug!("line search failed repeatedly at iteration {iterations}");
                break;
            }
            b = DMatrix::identity(n, n);
            continue;
        };
        let s = &next.u - &pt.u;
        let lag = |q: &Point| &q.grad + q.jac.transpose() * &step.lambda;
        let y = lag(&next) - lag(&pt);
        damped_bfgs(&mut b, &s, &y);
        trace.push(TraceEntry {
            iter: iterations,
            x: next.x.clone(),
            f: next.f,
            max_violation: max_violation(next.g.as_slice()),
            merit_before: phi0,
            merit: phi,
            step: s.amax(),
            alpha,
        });
        let small = s.amax() <= opts.tol * 1e-3 && (next.f - pt.f).abs() <= 1e-15 * (1.0 + pt.f.abs());
        pt = next;
        note_best(&pt, &mut best);
        if small && max_violation(pt.g.as_slice()) <= opts.feas_tol {
            converged = kkt_at(&pt, opts.feas_tol.max(1e-9)) <= opts.kkt_tol;
            if converged {
                break;
            }
        }
    }
    let kkt = kkt_at(&pt, opts.feas_tol.max(1e-9));
    // a stalled line search can still sit on a KKT point
    converged = converged || (max_violation(pt.g.as_slice()) <= opts.feas_tol && kkt <= opts.kkt_tol);
    if !converged {
        // fall back to the best feasible iterate seen
        if let Some((f, x, g)) = best {
            if f < pt.f || max_violation(pt.g.as_slice()) > opts.feas_tol {
                let u = DVector::from_vec(space.to_unit(&x));
                let kkt = sc.eval(u).map(|p| kkt_at(&p, opts.feas_tol.max(1e-9)))?;
                return Ok(OptResult {
                    x_star: x,
                    f_star: f,
                    constraint_values: g.iter().copied().collect(),
                    converged: false,
                    iterations,
                    kkt_residual: kkt,
                    trace,
                });
            }
        }
    }
    Ok(OptResult {
        x_star: pt.x.clone(),
        f_star: pt.f,
        constraint_values: pt.g.iter().copied().collect(),
        converged,
        iterations,
        kkt_residual: kkt,
        trace,
    })
}

/// Runs [`minimize_constrained`] from `x0` and from `n_starts − 1` LHS points
/// that satisfy the affine constraints; returns the best feasible result
/// (lowest objective, then lowest KKT residual).
pub fn multistart<P: Problem + ?Sized>(
    problem: &P,
    x0: &[f64],
    n_starts: usize,
    seed: u64,
    opts: &SqpOptions,
) -> Result<(OptResult, Vec<OptResult>)> {
    let results = multistart_runs(problem, x0, n_starts, seed, opts)?;
    let best = best_feasible(&results, opts.feas_tol).cloned().ok_or_else(|| {
        let worst: Vec<String> = results.iter().map(|r| format!("{:.3e}", r.max_violation())).collect();
        Error::InfeasibleStart(format!(
            "no start reached a feasible point; max violations [{}]",
            worst.join(", ")
        ))
    })?;
    Ok((best, results))
}

/// Every local run of a multistart, in start order (the first is `x0`).
/// Starts other than the first that fail are logged and dropped.
pub fn multistart_runs<P: Problem + ?Sized>(
    problem: &P,
    x0: &[f64],
    n_starts: usize,
    seed: u64,
    opts: &SqpOptions,
) -> Result<Vec<OptResult>> {
    if n_starts == 0 {
        return Err(Error::Config("need at least one start".into()));
    }
    let starts = feasible_starts(problem, x0, n_starts, seed)?;
    let runs: Vec<Result<OptResult>> = starts
        .par_iter()
        .map(|s| minimize_constrained(problem, s, opts))
        .collect();
    let mut results = Vec::with_capacity(runs.len());
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(r) => results.push(r),
            Err(e) if i == 0 => return Err(e),
            Err(e) => log::warn!("start {i} failed: {e}"),
        }
    }
    Ok(results)
}

/// Lowest objective among runs within `feas_tol`.
pub fn best_feasible(results: &[OptResult], feas_tol: f64) -> Option<&OptResult> {
    results
        .iter()
        .filter(|r| r.max_violation() <= feas_tol)
        .min_by(|a, b| a.f_star.total_cmp(&b.f_star).then(a.kkt_residual.total_cmp(&b.kkt_residual)))
}

/// Smallest constraint violation, ties broken by objective.
pub fn least_violation(results: &[OptResult]) -> Option<&OptResult> {
    results
        .iter()
        .min_by(|a, b| a.max_violation().total_cmp(&b.max_violation()).then(a.f_star.total_cmp(&b.f_star)))
}

fn feasible_starts<P: Problem + ?Sized>(problem: &P, x0: &[f64], n_starts: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut starts = vec![x0.to_vec()];
    if n_starts == 1 {
        return Ok(starts);
    }
    let linear = problem.linear_constraints();
    let space = problem.space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = 64 * n_starts;
    let cand = lhs_with(space, pool, &mut rng)?;
    for row in cand.row_iter() {
        let x: Vec<f64> = row.iter().copied().collect();
        let ok = !linear.iter().any(|&l| l) || {
            let e = problem.evaluate(&x)?;
            e.g.iter().zip(&linear).all(|(g, &l)| !l || *g <= 0.0)
        };
        if ok {
            starts.push(x);
            if starts.len() == n_starts {
                return Ok(starts);
            }
        }
    }
    Err(Error::InfeasibleStart(format!(
        "only {} of {n_starts} starts satisfy the affine constraints after {pool} draws",
        starts.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(lo: Vec<f64>, hi: Vec<f64>) -> DesignSpace {
        let names = (0..lo.len()).map(|i| format!("x{i}")).collect();
        DesignSpace::new(names, lo, hi).unwrap()
    }

    #[test]
    fn active_lower_bound_constraint() {
        let p = OptimizationProblem::new(space(vec![-3.0], vec![3.0]), |x| (x[0] * x[0], vec![2.0 * x[0]]))
            .linear("x>=1", vec![-1.0], -1.0);
        let r = minimize_constrained(&p, &[2.5], &SqpOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x_star[0] - 1.0).abs() < 1e-6 && (r.f_star - 1.0).abs() < 1e-6);
        assert!(r.kkt_residual <= 1e-5);
    }

    #[test]
    fn active_linear_constraint() {
        let p = OptimizationProblem::new(space(vec![0.0; 2], vec![3.0; 2]), |x| {
            (
                (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
                vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 1.0)],
            )
        })
        .linear("sum", vec![1.0, 1.0], 2.0);
        let r = minimize_constrained(&p, &[0.2, 0.3], &SqpOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x_star[0] - 1.5).abs() < 1e-6 && (r.x_star[1] - 0.5).abs() < 1e-6);
        assert!((r.f_star - 0.5).abs() < 1e-6);
    }

    #[test]
    fn inactive_constraint_interior_optimum() {
        let p = OptimizationProblem::new(space(vec![-5.0; 2], vec![5.0; 2]), |x| {
            let f = (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2) + x[0] * x[1];
            (f, vec![2.0 * (x[0] - 1.0) + x[1], 20.0 * (x[1] + 0.5) + x[0]])
        })
        .constraint("circle", |x| (x[0] * x[0] + x[1] * x[1] - 16.0, vec![2.0 * x[0], 2.0 * x[1]]));
        let r = minimize_constrained(&p, &[-3.0, 2.0], &SqpOptions::default()).unwrap();
        // stationary point: 2x + y = 2, x + 20y = -10
        let xs = [50.0 / 39.0, -22.0 / 39.0];
        assert!(r.converged);
        assert!((r.x_star[0] - xs[0]).abs() < 1e-6 && (r.x_star[1] - xs[1]).abs() < 1e-6);
        assert!(r.constraint_values[0] < 0.0);
    }

    #[test]
    fn nonlinear_constraint_from_infeasible_start() {
        // min x + y on the disc x² + y² ≤ 2
        let p = OptimizationProblem::new(space(vec![-3.0; 2], vec![3.0; 2]), |x| (x[0] + x[1], vec![1.0, 1.0]))
            .constraint("disc", |x| (x[0] * x[0] + x[1] * x[1] - 2.0, vec![2.0 * x[0], 2.0 * x[1]]));
        let r = minimize_constrained(&p, &[2.9, 2.9], &SqpOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x_star[0] + 1.0).abs() < 1e-6 && (r.x_star[1] + 1.0).abs() < 1e-6);
        for t in &r.trace {
            assert!(t.merit <= t.merit_before + 1e-12);
        }
    }

    #[test]
    fn inconsistent_linearisation_uses_elastic_step() {
        // x² ≥ 4 linearised at x = 0.1 only asks for x ≥ 20.05, outside the box
        let p = OptimizationProblem::new(space(vec![-3.0], vec![3.0]), |x| ((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)]))
            .constraint("outside", |x| (4.0 - x[0] * x[0], vec![-2.0 * x[0]]));
        let r = minimize_constrained(&p, &[0.1], &SqpOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x_star[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_starts() {
        let p = OptimizationProblem::new(space(vec![0.0], vec![1.0]), |x| (1.0 / x[0], vec![-1.0 / (x[0] * x[0])]));
        assert!(matches!(
            minimize_constrained(&p, &[0.0], &SqpOptions::default()),
            Err(Error::InvalidStart(_))
        ));
        assert!(matches!(
            minimize_constrained(&p, &[2.0], &SqpOptions::default()),
            Err(Error::InvalidStart(_))
        ));
    }

    #[test]
    fn multistart_single_equals_plain_run() {
        let p = OptimizationProblem::new(space(vec![0.0; 2], vec![3.0; 2]), |x| {
            (
                (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2),
                vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 1.0)],
            )
        })
        .linear("sum", vec![1.0, 1.0], 2.0);
        let opts = SqpOptions::default();
        let single = minimize_constrained(&p, &[0.2, 0.3], &opts).unwrap();
        let (best, all) = multistart(&p, &[0.2, 0.3], 1, 5, &opts).unwrap();
        assert_eq!(best, single);
        assert_eq!(all.len(), 1);
        let (_, all) = multistart(&p, &[0.2, 0.3], 6, 5, &opts).unwrap();
        assert_eq!(all.len(), 6);
        for r in &all {
            assert!((r.x_star[0] - 1.5).abs() < 1e-4 && (r.x_star[1] - 0.5).abs() < 1e-4);
        }
    }
}
