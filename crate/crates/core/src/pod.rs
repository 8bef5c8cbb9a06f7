//! Proper orthogonal decomposition of grid-field snapshots.
//!
//! Snapshots are rows of `A` (N × m_I). The retained spatial modes are the
//! leading right singular vectors of `A`, computed through the eigen
//! decomposition of the smaller Gram matrix (`AAᵀ` when N ≤ m_I, else `AᵀA`)
//! and re-orthonormalised afterwards.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::field_grid::{same_grid, GridField, StandardGrid};

/// Default cumulative-energy threshold for automatic rank selection.
pub const DEFAULT_ENERGY: f64 = 0.9999;

#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    grid: Arc<StandardGrid>,
}

impl SnapshotMatrix {
    pub fn from_rows(grid: Arc<StandardGrid>, data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() != grid.m_i() {
            return Err(Error::Shape {
                expected: grid.m_i(),
                got: data.ncols(),
            });
        }
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("snapshot matrix has no rows"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite snapshot entry".into()));
        }
        Ok(SnapshotMatrix { data, grid })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn grid(&self) -> &Arc<StandardGrid> {
        &self.grid
    }

    pub fn n_snapshots(&self) -> usize {
        self.data.nrows()
    }

    pub fn m_i(&self) -> usize {
        self.data.ncols()
    }

    /// Rows `rows` of this matrix, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("row selection is empty"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_snapshots()) {
            return Err(Error::Size(format!("row {bad} out of range")));
        }
        Ok(SnapshotMatrix {
            data: self.data.select_rows(rows),
            grid: self.grid.clone(),
        })
    }
}

/// Stacks fields as rows, in order.
pub fn assemble_snapshots(fields: &[GridField]) -> Result<SnapshotMatrix> {
    let first = fields.first().ok_or(Error::EmptyInput("no fields to assemble"))?;
    let grid = first.grid().clone();
    if fields.iter().any(|f| !same_grid(f.grid(), &grid)) {
        return Err(Error::GridMismatch);
    }
    let m = grid.m_i();
    let data = DMatrix::from_fn(fields.len(), m, |i, j| fields[i].values()[j]);
    SnapshotMatrix::from_rows(grid, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankSelection {
    Fixed(usize),
    /// Smallest k whose cumulative energy fraction reaches the threshold.
    Energy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PodOptions {
    pub rank: RankSelection,
    pub center: bool,
}

impl Default for PodOptions {
    fn default() -> Self {
        PodOptions {
            rank: RankSelection::Energy(DEFAULT_ENERGY),
            center: false,
        }
    }
}

/// Truncated POD basis: orthonormal spatial modes plus the full singular spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    grid: Arc<StandardGrid>,
    modes: DMatrix<f64>,
    singular_values: Vec<f64>,
    mean: Option<Vec<f64>>,
}

impl PodBasis {
    pub fn from_parts(
        grid: Arc<StandardGrid>,
        modes: DMatrix<f64>,
        singular_values: Vec<f64>,
        mean: Option<Vec<f64>>,
    ) -> Result<Self> {
        let m = grid.m_i();
        if modes.nrows() != m {
            return Err(Error::Shape {
                expected: m,
                got: modes.nrows(),
            });
        }
        let k = modes.ncols();
        if k == 0 || k > singular_values.len().min(m) {
            return Err(Error::InvalidRank {
                k,
                max: singular_values.len().min(m),
            });
        }
        if let Some(mu) = &mean {
            if mu.len() != m {
                return Err(Error::Shape {
                    expected: m,
                    got: mu.len(),
                });
            }
        }
        Ok(PodBasis {
            grid,
            modes,
            singular_values,
            mean,
        })
    }

    pub fn grid(&self) -> &Arc<StandardGrid> {
        &self.grid
    }

    /// `m_I × k` matrix of orthonormal modes.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    pub fn k(&self) -> usize {
        self.modes.ncols()
    }

    pub fn m_i(&self) -> usize {
        self.modes.nrows()
    }

    /// Cumulative energy fraction captured by the first `k` modes.
    pub fn energy_fraction(&self, k: usize) -> f64 {
        energy_fraction(&self.singular_values, k)
    }

    /// Latent coordinates minimising `‖y − z V_kᵀ‖₂`.
    pub fn project(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.m_i() {
            return Err(Error::Shape {
                expected: self.m_i(),
                got: y.len(),
            });
        }
        let mut v = DVector::from_column_slice(y);
        if let Some(mu) = &self.mean {
            v -= DVector::from_column_slice(mu);
        }
        Ok(self.modes.tr_mul(&v))
    }

    /// Latent coordinates of every snapshot row (N × k).
    pub fn project_rows(&self, snapshots: &SnapshotMatrix) -> Result<DMatrix<f64>> {
        if snapshots.m_i() != self.m_i() {
            return Err(Error::Shape {
                expected: self.m_i(),
                got: snapshots.m_i(),
            });
        }
        match &self.mean {
            None => Ok(snapshots.data() * &self.modes),
            Some(mu) => {
                let mut a = snapshots.data().clone();
                for (j, mut col) in a.column_iter_mut().enumerate() {
                    col.add_scalar_mut(-mu[j]);
                }
                Ok(a * &self.modes)
            }
        }
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.k() {
            return Err(Error::Shape {
                expected: self.k(),
                got: z.len(),
            });
        }
        let mut y = &self.modes * DVector::from_column_slice(z);
        if let Some(mu) = &self.mean {
            y += DVector::from_column_slice(mu);
        }
        Ok(y.as_slice().to_vec())
    }

    pub fn reconstruct_field(&self, z: &[f64]) -> Result<GridField> {
        GridField::new(self.grid.clone(), self.reconstruct(z)?)
    }

    /// Same basis restricted to its first `k` modes.
    pub fn truncated(&self, k: usize) -> Result<PodBasis> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidRank { k, max: self.k() });
        }
        Ok(PodBasis {
            grid: self.grid.clone(),
            modes: self.modes.columns(0, k).into_owned(),
            singular_values: self.singular_values.clone(),
            mean: self.mean.clone(),
        })
    }
}

pub fn energy_fraction(singular_values: &[f64], k: usize) -> f64 {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1.0;
    }
    singular_values.iter().take(k).map(|s| s * s).sum::<f64>() / total
}

/// Smallest k (≥ 1) whose cumulative energy reaches `threshold`.
pub fn select_rank(singular_values: &[f64], threshold: f64) -> usize {
    let n = singular_values.len().max(1);
    (1..=n)
        .find(|&k| energy_fraction(singular_values, k) >= threshold)
        .unwrap_or(n)
}

/// Thin SVD pieces of an N × m matrix: singular values (all min(N, m)) and the
/// first `k` right singular vectors, orthonormal, sign-normalised.
fn thin_right_svd(a: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let (n, m) = a.shape();
    let r = n.min(m);
    let mut modes = DMatrix::<f64>::zeros(m, k);
    let sigma: Vec<f64>;
    if n <= m {
        // Eigenpairs of AAᵀ give left vectors; right vectors follow as Aᵀu/σ.
        let gram = a * a.transpose();
        let (vals, vecs) = sorted_eigen(gram);
        sigma = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let scale = sigma.first().copied().unwrap_or(0.0);
        for j in 0..k {
            if sigma[j] > scale * 1e-12 && sigma[j] > 0.0 {
                let v = a.tr_mul(&vecs.column(j)) / sigma[j];
                modes.set_column(j, &v);
            }
        }
    } else {
        let gram = a.tr_mul(a);
        let (vals, vecs) = sorted_eigen(gram);
        sigma = vals.iter().take(r).map(|&l| l.max(0.0).sqrt()).collect();
        for j in 0..k {
            modes.set_column(j, &vecs.column(j));
        }
    }
    orthonormalize_columns(&mut modes);
    // Singular values of the retained modes from the refined vectors.
    let mut sigma = sigma;
    for j in 0..k {
        sigma[j] = (a * modes.column(j)).norm();
    }
    for i in 1..sigma.len() {
        sigma[i] = sigma[i].min(sigma[i - 1]);
    }
    for mut col in modes.column_iter_mut() {
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    (sigma, modes)
}

/// Eigen decomposition sorted by decreasing eigenvalue.
fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Two-pass modified Gram–Schmidt. Columns that vanish (rank deficiency)
/// are replaced by unit vectors orthogonal to the preceding columns.
fn orthonormalize_columns(q: &mut DMatrix<f64>) {
    let (m, k) = q.shape();
    let mut next_unit = 0usize;
    for j in 0..k {
        let mut v = q.column(j).into_owned();
        let norm0 = v.norm();
        for _ in 0..2 {
            for p in 0..j {
                let c = q.column(p).dot(&v);
                v.axpy(-c, &q.column(p), 1.0);
            }
        }
        let mut norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-8 * norm0 {
            // Complete the basis with the first unit vector that survives.
            loop {
                assert!(next_unit < m, "cannot complete orthonormal basis");
                let mut e = DVector::<f64>::zeros(m);
                e[next_unit] = 1.0;
                next_unit += 1;
                for _ in 0..2 {
                    for p in 0..j {
                        let c = q.column(p).dot(&e);
                        e.axpy(-c, &q.column(p), 1.0);
                    }
                }
                let n = e.norm();
                if n > 0.5 {
                    v = e;
                    norm = n;
                    break;
                }
            }
        }
        q.set_column(j, &(v / norm));
    }
}

fn centered(snapshots: &SnapshotMatrix) -> (DMatrix<f64>, Vec<f64>) {
    let a = snapshots.data();
    let n = a.nrows() as f64;
    let mean: Vec<f64> = a.column_iter().map(|c| c.sum() / n).collect();
    let mut c = a.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (c, mean)
}

/// POD of `snapshots` keeping `k` modes, uncentered.
pub fn compute_pod(snapshots: &SnapshotMatrix, k: usize) -> Result<PodBasis> {
    compute_pod_with(
        snapshots,
        PodOptions {
            rank: RankSelection::Fixed(k),
            center: false,
        },
    )
}

pub fn compute_pod_with(snapshots: &SnapshotMatrix, opts: PodOptions) -> Result<PodBasis> {
    let max = snapshots.n_snapshots().min(snapshots.m_i());
    if let RankSelection::Fixed(k) = opts.rank {
        if k == 0 || k > max {
            return Err(Error::InvalidRank { k, max });
        }
    }
    let (owned, mean) = if opts.center {
        let (c, mu) = centered(snapshots);
        (Some(c), Some(mu))
    } else {
        (None, None)
    };
    let a = owned.as_ref().unwrap_or(snapshots.data());
    let k = match opts.rank {
        RankSelection::Fixed(k) => k,
        RankSelection::Energy(t) => {
            // Spectrum first, then the modes for the chosen rank.
            let (sigma, _) = thin_right_svd(a, 0);
            select_rank(&sigma, t).min(max)
        }
    };
    let (sigma, modes) = thin_right_svd(a, k);
    PodBasis::from_parts(snapshots.grid().clone(), modes, sigma, mean)
}

/// Frobenius norm of `A − proj_k(A)` for each requested rank, computed
/// incrementally by deflating the residual one mode at a time.
fn residual_norms(
    snapshots: &SnapshotMatrix,
    basis: &PodBasis,
    ks: &[usize],
) -> Result<Vec<f64>> {
    let kmax = ks.iter().copied().max().unwrap_or(0);
    if kmax > basis.k() {
        return Err(Error::InvalidRank {
            k: kmax,
            max: basis.k(),
        });
    }
    let mut res = snapshots.data().clone();
    if let Some(mu) = basis.mean() {
        for (j, mut col) in res.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mu[j]);
        }
    }
    let mut norms = vec![0.0; kmax + 1];
    norms[0] = res.norm();
    for j in 0..kmax {
        let v = basis.modes().column(j);
        let z = &res * v;
        res.ger(-1.0, &z, &v, 1.0);
        norms[j + 1] = res.norm();
    }
    Ok(ks.iter().map(|&k| norms[k]).collect())
}

/// `‖A − A V_k V_kᵀ‖_F` (centered if the basis is).
pub fn projection_error(snapshots: &SnapshotMatrix, basis: &PodBasis) -> Result<f64> {
    Ok(residual_norms(snapshots, basis, &[basis.k()])?[0])
}

/// RMSE between snapshots and their rank-k reconstructions, for each k.
pub fn reconstruction_error_curve(
    snapshots: &SnapshotMatrix,
    ks: &[usize],
    center: bool,
) -> Result<Vec<(usize, f64)>> {
    let max = snapshots.n_snapshots().min(snapshots.m_i());
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > max) {
        return Err(Error::InvalidRank { k: bad, max });
    }
    let kmax = ks.iter().copied().max().ok_or(Error::EmptyInput("no ranks requested"))?;
    let basis = compute_pod_with(
        snapshots,
        PodOptions {
            rank: RankSelection::Fixed(kmax),
            center,
        },
    )?;
    let denom = (snapshots.n_snapshots() * snapshots.m_i()) as f64;
    let norms = residual_norms(snapshots, &basis, ks)?;
    Ok(ks
        .iter()
        .zip(norms)
        .map(|(&k, n)| (k, n / denom.sqrt()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_grid::Rect;

    fn snaps(rows: &[&[f64]]) -> SnapshotMatrix {
        let m = rows[0].len();
        let g = grid_for(m);
        let data = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        SnapshotMatrix::from_rows(g, data).unwrap()
    }

    fn grid_for(m: usize) -> Arc<StandardGrid> {
        // Mask an (m+?)-cell grid down to exactly m cells.
        let nx = m.max(2);
        let mut mask = vec![false; nx * 2];
        for c in mask.iter_mut().take(m) {
            *c = true;
        }
        let r = Rect {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        };
        Arc::new(StandardGrid::from_mask(nx, 2, r, mask).unwrap())
    }

    #[test]
    fn assemble_keeps_row_order() {
        let g = grid_for(2);
        let a = GridField::new(g.clone(), vec![1.0, 2.0]).unwrap();
        let b = GridField::new(g, vec![3.0, 4.0]).unwrap();
        let s = assemble_snapshots(&[a.clone(), b]).unwrap();
        assert_eq!(s.data(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let single = assemble_snapshots(&[a]).unwrap();
        assert_eq!(single.data().shape(), (1, 2));
    }

    #[test]
    fn assemble_rejects_mixed_grids() {
        let a = GridField::new(grid_for(2), vec![1.0, 2.0]).unwrap();
        let b = GridField::new(grid_for(3), vec![3.0, 4.0, 5.0]).unwrap();
        assert!(matches!(assemble_snapshots(&[a, b]), Err(Error::GridMismatch)));
        assert!(matches!(assemble_snapshots(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn rank_one_matrix() {
        let s = snaps(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let b = compute_pod(&s, 1).unwrap();
        assert!((b.singular_values()[0] - 5.0).abs() < 1e-12);
        assert!(b.singular_values()[1].abs() < 1e-7);
        for row in 0..2 {
            let y: Vec<f64> = s.data().row(row).iter().copied().collect();
            let back = b.reconstruct(b.project(&y).unwrap().as_slice()).unwrap();
            for (u, v) in y.iter().zip(&back) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        // Full rank requested on a rank-deficient matrix still yields an orthonormal basis.
        let b2 = compute_pod(&s, 2).unwrap();
        let gram = b2.modes().tr_mul(b2.modes());
        assert!((gram - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn identity_and_orthogonal_rows() {
        let s = snaps(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = compute_pod(&s, 2).unwrap();
        assert!((b.singular_values()[0] - 1.0).abs() < 1e-12);
        assert!((b.singular_values()[1] - 1.0).abs() < 1e-12);

        let s = snaps(&[&[3.0, 0.0, 0.0], &[0.0, 0.0, 4.0]]);
        let b = compute_pod(&s, 2).unwrap();
        assert!((b.singular_values()[0] - 4.0).abs() < 1e-12);
        assert!((b.singular_values()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_rank() {
        let s = snaps(&[&[1.0, 2.0, 3.0]]);
        assert!(matches!(compute_pod(&s, 0), Err(Error::InvalidRank { .. })));
        assert!(matches!(compute_pod(&s, 2), Err(Error::InvalidRank { .. })));
    }

    #[test]
    fn project_mode_and_orthogonal_vector() {
        let s = snaps(&[&[3.0, 0.0, 0.0], &[0.0, 4.0, 0.0]]);
        let b = compute_pod(&s, 2).unwrap();
        let mode0: Vec<f64> = b.modes().column(0).iter().map(|v| v * 2.5).collect();
        let z = b.project(&mode0).unwrap();
        assert!((z[0] - 2.5).abs() < 1e-12 && z[1].abs() < 1e-12);
        let z = b.project(&[0.0, 0.0, 7.0]).unwrap();
        assert!(z.amax() < 1e-12);
        assert!(matches!(b.project(&[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(b.reconstruct(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn sign_convention() {
        let s = snaps(&[&[-1.0, -3.0, 0.5], &[-2.0, -1.0, 0.2]]);
        let b = compute_pod(&s, 2).unwrap();
        for col in b.modes().column_iter() {
            let big = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn energy_rank_selection() {
        assert_eq!(select_rank(&[10.0, 1.0, 0.01], 0.995), 2);
        assert_eq!(select_rank(&[10.0, 0.0, 0.0], 0.9999), 1);
        let s = snaps(&[&[1.0, 2.0, 0.0], &[2.0, 4.0, 0.0], &[0.0, 0.0, 1e-3]]);
        let b = compute_pod_with(&s, PodOptions::default()).unwrap();
        assert_eq!(b.k(), 1);
    }

    #[test]
    fn centered_basis_reconstructs_mean() {
        let s = snaps(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        let b = compute_pod_with(
            &s,
            PodOptions {
                rank: RankSelection::Fixed(1),
                center: true,
            },
        )
        .unwrap();
        let y = b.reconstruct(&[0.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn exact_rank_curve_hits_zero() {
        let s = snaps(&[
            &[1.0, 0.0, 2.0, 1.0],
            &[0.0, 1.0, 1.0, 3.0],
            &[1.0, 1.0, 3.0, 4.0],
            &[2.0, 1.0, 5.0, 5.0],
        ]);
        let curve = reconstruction_error_curve(&s, &[1, 2, 3, 4], false).unwrap();
        assert!(curve[1].1 < 1e-10, "{curve:?}");
        assert!(curve[3].1 <= curve[0].1);
    }
}
