use std::sync::Arc;

use mfpod::doe::{lhs, nested_subset, stratum, DesignSpace, SubsetStrategy};
use mfpod::evaluation::{equivalent_cost, qoi_values, CostModel};
use mfpod::field_grid::{interpolate_nearest, Fidelity, Rect, ScatteredField, StandardGrid};
use mfpod::io::{read_grid_field, write_grid_field};
use mfpod::kriging::fit_kriging;
use mfpod::pod::{compute_pod, SnapshotMatrix};
use mfpod::KrigingConfig;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn space(dim: usize) -> DesignSpace {
    let names = (0..dim).map(|i| format!("x{i}")).collect();
    let lower = (0..dim).map(|i| -(i as f64)).collect();
    let upper = (0..dim).map(|i| 1.0 + 2.0 * i as f64).collect();
    DesignSpace::new(names, lower, upper).unwrap()
}

fn unit_grid(nx: usize, ny: usize) -> Arc<StandardGrid> {
    let r = Rect {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };
    Arc::new(StandardGrid::build(nx, ny, r, None).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lhs_fills_every_stratum_once(dim in 1usize..6, n in 1usize..40, seed in any::<u64>()) {
        let s = space(dim);
        let x = lhs(&s, n, seed).unwrap();
        prop_assert_eq!(x.shape(), (n, dim));
        for d in 0..dim {
            let mut seen = vec![false; n];
            for i in 0..n {
                let v = x[(i, d)];
                prop_assert!(v >= s.lower()[d] && v <= s.upper()[d]);
                let k = stratum(&s, d, n, v);
                prop_assert!(!seen[k]);
                seen[k] = true;
            }
        }
    }

    #[test]
    fn nested_subsets_are_distinct_rows(n in 2usize..30, frac in 0.05f64..1.0, seed in any::<u64>(), maximin in any::<bool>()) {
        let x = lhs(&space(3), n, seed).unwrap();
        let n_h = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let strategy = if maximin { SubsetStrategy::Maximin } else { SubsetStrategy::FirstN };
        let idx = nested_subset(&x, n_h, strategy).unwrap();
        prop_assert_eq!(idx.len(), n_h);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n_h);
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn pod_modes_are_orthonormal_and_full_rank_reconstructs(
        rows in 2usize..7,
        vals in prop::collection::vec(-5.0f64..5.0, 7 * 9),
    ) {
        let grid = unit_grid(3, 3);
        let a = DMatrix::from_fn(rows, 9, |i, j| vals[i * 9 + j]);
        let snaps = SnapshotMatrix::from_rows(grid, a.clone()).unwrap();
        let k = rows.min(9);
        let b = compute_pod(&snaps, k).unwrap();
        let gram = b.modes().transpose() * b.modes();
        let sv = b.singular_values();
        for i in 0..k {
            for j in 0..k {
                let want = if i == j && sv[i] > 1e-9 { 1.0 } else if i == j { gram[(i, i)] } else { 0.0 };
                prop_assert!((gram[(i, j)] - want).abs() < 1e-8);
            }
        }
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        if sv[k - 1] > 1e-6 * sv[0] {
            for i in 0..rows {
                let row: Vec<f64> = a.row(i).iter().copied().collect();
                let z = b.project(&row).unwrap();
                let back = b.reconstruct(z.as_slice()).unwrap();
                for (p, q) in back.iter().zip(&row) {
                    prop_assert!((p - q).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn nearest_values_come_from_the_sources(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -50.0f64..50.0), 1..40),
    ) {
        let points: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let values: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let field = ScatteredField::new(points, values.clone(), Fidelity::High).unwrap();
        let g = interpolate_nearest(&field, unit_grid(6, 5)).unwrap();
        prop_assert!(g.values().iter().all(|v| values.contains(v)));
    }

    #[test]
    fn grid_files_round_trip_bit_exactly(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 12)) {
        let grid = unit_grid(4, 3);
        let field = mfpod::GridField::new(grid.clone(), vals).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.grid");
        write_grid_field(&path, &field).unwrap();
        let back = read_grid_field(&path, Some(&grid)).unwrap();
        prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        field.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn qoi_is_shift_equivariant(vals in prop::collection::vec(-10.0f64..10.0, 1..50), c in -100.0f64..100.0) {
        let a = qoi_values(&vals);
        let shifted: Vec<f64> = vals.iter().map(|v| v + c).collect();
        let b = qoi_values(&shifted);
        prop_assert!((b.mean - a.mean - c).abs() < 1e-9);
        prop_assert!((b.max - a.max - c).abs() < 1e-9);
        prop_assert!((b.three_sigma - a.three_sigma).abs() < 1e-7);
        prop_assert!((a.three_sigma - 3.0 * a.std).abs() < 1e-12);
    }

    #[test]
    fn equivalent_cost_is_additive(n_l in 0usize..2000, n_h in 0usize..300, t_lf in 0.1f64..100.0, ratio in 1.0f64..50.0) {
        let cost = CostModel { t_lf, t_hf: t_lf * ratio };
        let total = equivalent_cost(n_l, n_h, &cost);
        let parts = equivalent_cost(n_l, 0, &cost) + equivalent_cost(0, n_h, &cost);
        prop_assert!((total - parts).abs() <= 1e-9 * (1.0 + total));
        prop_assert_eq!(equivalent_cost(n_l, 0, &cost), n_l as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kriging_interpolates_with_small_variance(
        n in 3usize..15,
        seed in any::<u64>(),
        a in 0.5f64..4.0,
    ) {
        let x = lhs(&space(2), n, seed).unwrap();
        let y: Vec<f64> = (0..n).map(|i| (a * x[(i, 0)]).sin() + 0.1 * x[(i, 1)] * x[(i, 1)]).collect();
        let cfg = KrigingConfig { n_restarts: 1, ..KrigingConfig::default() };
        let m = fit_kriging(&x, &y, &cfg).unwrap();
        let var_scale = y.iter().map(|v| v * v).sum::<f64>() / n as f64 + 1.0;
        for i in 0..n {
            let p = [x[(i, 0)], x[(i, 1)]];
            let (mean, var) = m.predict(&p).unwrap();
            prop_assert!((mean - y[i]).abs() <= 1e-6, "row {} misfit {}", i, mean - y[i]);
            prop_assert!((-1e-12..=1e-8 * var_scale).contains(&var));
        }
    }
}
