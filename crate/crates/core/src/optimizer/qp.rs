//! Dense strictly convex quadratic programming and non-negative least squares.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Solution of `min ½ xᵀGx + aᵀx  s.t.  Cᵀx ≥ b`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint column, zero when inactive.
    pub lambda: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Infeasible,
}

/// Goldfarb–Idnani dual active-set method. `g` must be positive definite and
/// `c` holds one constraint normal per column.
pub fn solve_qp(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<std::result::Result<QpSolution, QpStatus>> {
    let n = g.nrows();
    let m = c.ncols();
    if g.ncols() != n || a.len() != n || c.nrows() != n || b.len() != m {
        return Err(Error::InvalidInput("inconsistent QP dimensions".into()));
    }
    let chol = Cholesky::new(g.clone())
        .ok_or_else(|| Error::Numerical("QP Hessian is not positive definite".into()))?;
    let ginv_n = |v: &DVector<f64>| chol.solve(v);
    let mut x = -chol.solve(a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let scale = 1.0 + c.column_iter().map(|col| col.amax()).fold(0.0, f64::max);
    let max_iter = 10 * (n + m) + 50;
    let mut iter = 0;
    let slack = |x: &DVector<f64>, i: usize| c.column(i).dot(x) - b[i];
    loop {
        iter += 1;
        if iter > max_iter {
            return Err(Error::Numerical("QP active-set iteration limit".into()));
        }
        // most violated constraint, relative to its normal
        let mut p = None;
        let mut worst = 0.0;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let norm = c.column(i).norm().max(1e-300);
            let s = slack(&x, i) / norm;
            if s < -1e-12 * (1.0 + b[i].abs() / norm) && s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            let mut lambda = DVector::zeros(m);
            for (k, &i) in active.iter().enumerate() {
                lambda[i] = u[k];
            }
            return Ok(Ok(QpSolution {
                x,
                lambda,
                iterations: iter,
            }));
        };
        let np: DVector<f64> = c.column(p).into_owned();
        let mut u_p = 0.0;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::Numerical("QP active-set iteration limit".into()));
            }
            // step directions from the current active set
            let q = active.len();
            let ginv_np = ginv_n(&np);
            let (z, r) = if q == 0 {
                (ginv_np.clone(), DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(n, q, |row, k| c[(row, active[k])]);
                let ginv_nm = chol.solve(&nmat);
                let s = nmat.transpose() * &ginv_nm;
                let rhs = nmat.transpose() * &ginv_np;
                let r = match s.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => s
                        .lu()
                        .solve(&rhs)
                        .ok_or_else(|| Error::Numerical("degenerate QP active set".into()))?,
                };
                (&ginv_np - &ginv_nm * &r, r)
            };
            let zn = z.dot(&np);
            let t2 = if z.amax() <= 1e-14 * scale * (1.0 + ginv_np.amax()) || zn <= 0.0 {
                f64::INFINITY
            } else {
                -slack(&x, p) / zn
            };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(Err(QpStatus::Infeasible));
            }
            for k in 0..q {
                u[k] -= t * r[k];
            }
            u_p += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                break;
            }
            let k = drop.expect("finite dual step has a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }
}

/// Lawson–Hanson non-negative least squares `min ‖A x − b‖, x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + a.amax() * b.amax()) * n as f64;
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else {
            break;
        };
        passive[j] = true;
        for _ in 0..3 * n + 10 {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, k| a[(r, idx[k])]);
            let s_sub = least_squares(&sub, b);
            if s_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = s_sub[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if s_sub[k] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - s_sub[k]));
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (s_sub[k] - x[j]);
                if x[j] <= 1e-15 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}

/// Minimum-norm least squares via SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(1e-300);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}
