//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use mfpod::benchmark::{generate_dataset, PoolSpec};
use mfpod::evaluation::{train_surrogate, SurrogateSettings, TrainingSet};
use mfpod::field_grid::{GridSpec, StandardGrid};
use mfpod::synthetic::{DiscProblemConfig, SyntheticProblem};
use mfpod::{FieldDataset, Method, SnapshotMatrix, SubsetStrategy, Surrogate};
use nalgebra::DMatrix;

/// Synthetic disc problem on an `n × n` grid with the given mesh sizes.
pub fn problem(n: usize, lf_nodes: usize, hf_nodes: usize) -> SyntheticProblem {
    SyntheticProblem::new(DiscProblemConfig {
        grid: GridSpec { nx: n, ny: n, mask: true },
        lf_nodes,
        hf_nodes,
        ..DiscProblemConfig::default()
    })
    .expect("valid bench problem")
}

pub fn dataset(problem: &SyntheticProblem, n_lf: usize, n_hf: usize) -> FieldDataset {
    let pool = PoolSpec {
        n_lf,
        n_hf,
        strategy: SubsetStrategy::FirstN,
    };
    generate_dataset(problem, &pool, 1).expect("bench dataset")
}

pub fn surrogate(data: &FieldDataset, method: Method, k: usize) -> Surrogate {
    let set = TrainingSet {
        lf: if method == Method::Hf { Vec::new() } else { (0..data.n_lf()).collect() },
        hf: if method == Method::Lf { Vec::new() } else { (0..data.n_hf()).collect() },
    };
    let settings = SurrogateSettings {
        k,
        kriging: mfpod::KrigingConfig {
            n_restarts: 1,
            ..Default::default()
        },
        ..SurrogateSettings::default()
    };
    train_surrogate(data, method, &set, &settings).expect("bench surrogate")
}

/// Smooth low-rank snapshots on `grid`, `rows` of them.
pub fn snapshots(grid: Arc<StandardGrid>, rows: usize) -> SnapshotMatrix {
    let m = grid.m_i();
    let data = DMatrix::from_fn(rows, m, |i, j| {
        let (a, b) = (i as f64 / rows as f64, j as f64 / m as f64);
        (3.0 * a + 7.0 * b).sin() + a * b + 0.1 * (11.0 * a * b).cos()
    });
    SnapshotMatrix::from_rows(grid, data).expect("bench snapshots")
}
