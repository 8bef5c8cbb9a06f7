use std::sync::Arc;

use mfpod::field_grid::{Rect, StandardGrid};
use mfpod::kriging::{fit_kriging, fit_kriging_fixed, KrigingModel};
use mfpod::mf_kriging::{DeltaTrend, MfOptions, RhoMode};
use mfpod::optimizer::kkt_residual;
use mfpod::{
    fit_mf, minimize_constrained, DesignSpace, FidelityDataset, KrigingConfig, OptimizationProblem, PodBasis,
    SqpOptions,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Universal kriging mean written out densely: GLS trend plus the
/// correlation-weighted residual, squared-exponential kernel.
struct DenseKriging {
    u: DMatrix<f64>,
    theta: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    beta: DVector<f64>,
    weights: DVector<f64>,
}

impl DenseKriging {
    fn new(x: &DMatrix<f64>, y: &[f64], f: &DMatrix<f64>, like: &KrigingModel) -> Self {
        let (lo, hi) = like.bounds();
        let (lower, upper) = (lo.to_vec(), hi.to_vec());
        let u = DMatrix::from_fn(x.nrows(), x.ncols(), |i, d| (x[(i, d)] - lower[d]) / (upper[d] - lower[d]));
        let theta = like.theta().to_vec();
        let n = x.nrows();
        let r = DMatrix::from_fn(n, n, |i, j| {
            let k = corr(&u.row(i).iter().copied().collect::<Vec<_>>(), &u.row(j).iter().copied().collect::<Vec<_>>(), &theta);
            if i == j {
                k + like.nugget()
            } else {
                k
            }
        });
        let lu = r.lu();
        let y = DVector::from_column_slice(y);
        let ri_f = lu.solve(f).unwrap();
        let ri_y = lu.solve(&y).unwrap();
        let beta = (f.transpose() * &ri_f).lu().solve(&(f.transpose() * &ri_y)).unwrap();
        let weights = lu.solve(&(&y - f * &beta)).unwrap();
        DenseKriging {
            u,
            theta,
            lower,
            upper,
            beta,
            weights,
        }
    }

    fn mean(&self, x: &[f64], f: &[f64]) -> f64 {
        let u: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(d, v)| (v - self.lower[d]) / (self.upper[d] - self.lower[d]))
            .collect();
        let trend: f64 = f.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        let local: f64 = (0..self.u.nrows())
            .map(|i| corr(&self.u.row(i).iter().copied().collect::<Vec<_>>(), &u, &self.theta) * self.weights[i])
            .sum();
        trend + local
    }
}

fn corr(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let h2: f64 = a.iter().zip(b).zip(theta).map(|((p, q), l)| ((p - q) / l).powi(2)).sum();
    (-0.5 * h2).exp()
}

fn ones(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0)
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, dim, |_, _| rng.random_range(0.0..1.0))
}

fn smooth(x: &[f64], j: usize) -> f64 {
    let s: f64 = x.iter().enumerate().map(|(d, v)| (1.0 + d as f64 + j as f64) * v).sum();
    s.sin() + 0.5 * x[0] * x[0] - 0.2 * j as f64
}

fn cfg() -> KrigingConfig {
    KrigingConfig {
        n_restarts: 1,
        ..KrigingConfig::default()
    }
}

#[test]
fn kriging_mean_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let dim = rng.random_range(1..=3);
        let x = random_points(&mut rng, 15, dim);
        let y: Vec<f64> = (0..15).map(|i| 10.0 + 3.0 * smooth(&row(&x, i), 0)).collect();
        let model = fit_kriging(&x, &y, &cfg()).unwrap();
        let oracle = DenseKriging::new(&x, &y, &ones(15), &model);
        for _ in 0..10 {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.1..1.1)).collect();
            let a = model.predict_mean(&p).unwrap();
            let b = oracle.mean(&p, &[1.0]);
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn fixed_length_scales_are_used_verbatim() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_points(&mut rng, 12, 2);
    let y: Vec<f64> = (0..12).map(|i| smooth(&row(&x, i), 1)).collect();
    let model = fit_kriging_fixed(&x, &y, None, &cfg(), &[0.3, 0.7]).unwrap();
    assert_eq!(model.theta(), &[0.3, 0.7]);
    let oracle = DenseKriging::new(&x, &y, &ones(12), &model);
    for p in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.05]] {
        assert!((model.predict_mean(&p).unwrap() - oracle.mean(&p, &[1.0])).abs() < 1e-9);
    }
}

fn nested(rng: &mut ChaCha8Rng, n_l: usize, n_h: usize, dim: usize, hf: impl Fn(&[f64], usize, f64) -> f64) -> FidelityDataset {
    let x_lf = random_points(rng, n_l, dim);
    let z_lf = DMatrix::from_fn(n_l, 2, |i, j| smooth(&row(&x_lf, i), j));
    let idx: Vec<usize> = (0..n_h).map(|i| (i * 7) % n_l).collect();
    let x_hf = x_lf.select_rows(&idx);
    let z_hf = DMatrix::from_fn(n_h, 2, |i, j| hf(&row(&x_hf, i), j, z_lf[(idx[i], j)]));
    FidelityDataset::new(x_lf, z_lf, x_hf, z_hf, idx).unwrap()
}

fn identity_basis(k: usize) -> Arc<PodBasis> {
    let r = Rect {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };
    let nx = k.max(2);
    let grid = Arc::new(StandardGrid::from_mask(nx, 2, r, (0..2 * nx).map(|i| i < k).collect()).unwrap());
    let modes = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 });
    Arc::new(PodBasis::from_parts(grid, modes, vec![1.0; k], None).unwrap())
}

/// Rebuilds both stages of the multi-fidelity predictor from dense solves
/// using the fitted length scales, then compares means and ρ.
#[test]
fn multi_fidelity_matches_dense_two_stage_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = nested(&mut rng, 24, 10, 2, |x, j, zl| 1.7 * zl + 0.3 * x[1] - 0.1 * j as f64 + 0.05 * (4.0 * x[0]).cos());
    let m = fit_mf(&data, identity_basis(2), &cfg(), MfOptions::default()).unwrap();
    for (j, d) in m.dims().iter().enumerate() {
        let lf_y: Vec<f64> = data.z_lf().column(j).iter().copied().collect();
        let lf = DenseKriging::new(data.x_lf(), &lf_y, &ones(24), d.lf_model());
        let f_h: Vec<f64> = (0..10).map(|i| lf.mean(&row(data.x_hf(), i), &[1.0])).collect();
        let DeltaTrend::Scaled { shift, scale } = d.trend() else {
            panic!("estimated rho uses the scaled trend");
        };
        let basis = DMatrix::from_fn(10, 2, |i, c| if c == 0 { 1.0 } else { (f_h[i] - shift) / scale });
        let hf_y: Vec<f64> = data.z_hf().column(j).iter().copied().collect();
        let delta = DenseKriging::new(data.x_hf(), &hf_y, &basis, d.delta_model());
        let rho = delta.beta[1] / scale;
        assert!((rho - d.rho()).abs() < 1e-8 * (1.0 + rho.abs()), "rho {rho} vs {}", d.rho());
        for _ in 0..10 {
            let p: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
            let f = lf.mean(&p, &[1.0]);
            let want = delta.mean(&p, &[1.0, (f - shift) / scale]);
            let got = d.predict_mean(&p).unwrap();
            assert!((got - want).abs() < 1e-7 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }
}

#[test]
fn fixed_rho_matches_offset_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = nested(&mut rng, 20, 8, 2, |x, _, zl| 0.8 * zl + x[0]);
    let opts = MfOptions {
        rho: RhoMode::Fixed(0.8),
        ..MfOptions::default()
    };
    let m = fit_mf(&data, identity_basis(2), &cfg(), opts).unwrap();
    for (j, d) in m.dims().iter().enumerate() {
        assert_eq!(d.rho(), 0.8);
        assert!(matches!(d.trend(), DeltaTrend::Offset));
        let lf_y: Vec<f64> = data.z_lf().column(j).iter().copied().collect();
        let lf = DenseKriging::new(data.x_lf(), &lf_y, &ones(20), d.lf_model());
        let resid: Vec<f64> = (0..8)
            .map(|i| data.z_hf()[(i, j)] - 0.8 * lf.mean(&row(data.x_hf(), i), &[1.0]))
            .collect();
        let delta = DenseKriging::new(data.x_hf(), &resid, &ones(8), d.delta_model());
        for p in [[0.2, 0.3], [0.7, 0.9], [0.5, 0.1]] {
            let want = 0.8 * lf.mean(&p, &[1.0]) + delta.mean(&p, &[1.0]);
            assert!((d.predict_mean(&p).unwrap() - want).abs() < 1e-7 * (1.0 + want.abs()));
        }
    }
}

/// Smallest `‖∇f + Aλ‖∞` with `λ ≥ 0`, by enumerating column subsets.
fn enumerated_kkt(grad: &DVector<f64>, cols: &[DVector<f64>]) -> f64 {
    let mut best = grad.amax();
    for mask in 1u32..(1 << cols.len()) {
        let pick: Vec<&DVector<f64>> = (0..cols.len()).filter(|i| mask >> i & 1 == 1).map(|i| &cols[i]).collect();
        let a = DMatrix::from_fn(grad.len(), pick.len(), |r, c| pick[c][r]);
        if let Ok(l) = a.clone().svd(true, true).solve(&(-grad), 1e-12) {
            if l.iter().all(|v| *v >= -1e-12) {
                best = best.min((grad + &a * l).amax());
            }
        }
    }
    best
}

#[test]
fn sqp_solutions_pass_enumerated_kkt_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let space = DesignSpace::new(vec!["a".into(), "b".into(), "c".into()], vec![0.0; 3], vec![2.0; 3]).unwrap();
    for _ in 0..20 {
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..3.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
        // keep the cut intersecting the ball so the problem stays feasible
        let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let b = a.iter().sum::<f64>() - 1.5f64.sqrt() * a_norm + rng.random_range(0.2..1.5);
        let (cc, ww) = (c.clone(), w.clone());
        let p = OptimizationProblem::new(space.clone(), move |x| {
            let f = (0..3).map(|i| ww[i] * (x[i] - cc[i]).powi(2)).sum();
            (f, (0..3).map(|i| 2.0 * ww[i] * (x[i] - cc[i])).collect())
        })
        .linear("cut", a.clone(), b)
        .constraint("ball", |x| {
            let r: f64 = x.iter().map(|v| (v - 1.0).powi(2)).sum();
            (r - 1.5, x.iter().map(|v| 2.0 * (v - 1.0)).collect())
        });
        let r = minimize_constrained(&p, &[0.1, 0.1, 0.1], &SqpOptions::default()).unwrap();
        assert!(r.converged, "not converged at {:?}", r.x_star);
        assert!(r.max_violation() <= 1e-7);
        let x = &r.x_star;
        // unit-cube coordinates: everything scales by the width 2
        let grad = DVector::from_fn(3, |i, _| 2.0 * 2.0 * w[i] * (x[i] - c[i]));
        let g_ball: f64 = x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() - 1.5;
        let g_cut: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - b;
        let mut cols = Vec::new();
        if g_cut >= -1e-6 {
            cols.push(DVector::from_fn(3, |i, _| 2.0 * a[i]));
        }
        if g_ball >= -1e-6 {
            cols.push(DVector::from_fn(3, |i, _| 2.0 * 2.0 * (x[i] - 1.0)));
        }
        for d in 0..3 {
            if x[d] <= 1e-9 {
                cols.push(DVector::from_fn(3, |i, _| if i == d { -1.0 } else { 0.0 }));
            }
            if x[d] >= 2.0 - 1e-9 {
                cols.push(DVector::from_fn(3, |i, _| if i == d { 1.0 } else { 0.0 }));
            }
        }
        let oracle = enumerated_kkt(&grad, &cols);
        assert!(oracle <= 1e-5, "oracle KKT {oracle} at {x:?}");
        let own = kkt_residual(&p, x, 1e-6).unwrap();
        assert!((own - oracle).abs() <= 1e-6, "{own} vs {oracle}");
    }
}
