//! Scattered field snapshots and their mapping onto a shared masked grid.
//!
//! Every snapshot, whatever mesh it was produced on, is resampled onto one
//! [`StandardGrid`] by nearest-neighbour lookup. Only cells whose centre lies
//! inside the wafer disc take part; they are stored in row-major order
//! (rows along `y`, columns along `x`).

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fidelity {
    #[serde(rename = "LF")]
    Low,
    #[serde(rename = "HF")]
    High,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Low => "LF",
            Fidelity::High => "HF",
        })
    }
}

/// Field values on a native (unstructured) mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteredField {
    points: Vec<[f64; 2]>,
    values: Vec<f64>,
    fidelity: Fidelity,
}

impl ScatteredField {
    pub fn new(points: Vec<[f64; 2]>, values: Vec<f64>, fidelity: Fidelity) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("scattered field has no points"));
        }
        if points.len() != values.len() {
            return Err(Error::Shape {
                expected: points.len(),
                got: values.len(),
            });
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidInput("non-finite mesh coordinate".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite field value".into()));
        }
        Ok(ScatteredField {
            points,
            values,
            fidelity,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fidelity(&self) -> Fidelity {
        self.fidelity
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads a `x,y,value` CSV file.
    pub fn read_csv(path: impl AsRef<Path>, fidelity: Fidelity) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().map(str::trim).collect();
        if cols != ["x", "y", "value"] {
            return Err(Error::Format(format!(
                "expected header `x,y,value`, found `{}`",
                cols.join(",")
            )));
        }
        let mut points = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number `{}`: {e}", &record[i])))
            };
            points.push([parse(0)?, parse(1)?]);
            values.push(parse(2)?);
        }
        ScatteredField::new(points, values, fidelity)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "value"])?;
        for (p, v) in self.points.iter().zip(&self.values) {
            w.write_record([p[0].to_string(), p[1].to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn bounding_square(disc: &Disc) -> Self {
        Rect {
            x_min: disc.cx - disc.radius,
            x_max: disc.cx + disc.radius,
            y_min: disc.cy - disc.radius,
            y_max: disc.cy + disc.radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Declarative grid description: resolution plus whether cells outside the
/// disc are masked out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub mask: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 300,
            ny: 300,
            mask: true,
        }
    }
}

impl GridSpec {
    /// Grid over the square bounding `disc`.
    pub fn build(&self, disc: &Disc) -> Result<StandardGrid> {
        StandardGrid::build(
            self.nx,
            self.ny,
            Rect::bounding_square(disc),
            self.mask.then_some(*disc),
        )
    }
}

/// Cartesian cell-centred grid with a boolean mask of active cells.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardGrid {
    nx: usize,
    ny: usize,
    domain: Rect,
    mask: Vec<bool>,
    active: Vec<usize>,
}

impl StandardGrid {
    /// Builds an `nx × ny` grid over `domain`. With a disc, only cells whose
    /// centre lies within the disc are active; without one, all cells are.
    pub fn build(nx: usize, ny: usize, domain: Rect, disc: Option<Disc>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidDomain(format!("grid must be at least 2x2, got {nx}x{ny}")));
        }
        if let Some(d) = disc {
            if !(d.radius > 0.0) || !d.cx.is_finite() || !d.cy.is_finite() {
                return Err(Error::InvalidDomain(format!("bad disc {d:?}")));
            }
        }
        let probe = StandardGrid {
            nx,
            ny,
            domain,
            mask: Vec::new(),
            active: Vec::new(),
        };
        probe.check_domain()?;
        let mut mask = vec![true; nx * ny];
        if let Some(d) = disc {
            for j in 0..ny {
                for i in 0..nx {
                    let [x, y] = probe.cell_center(i, j);
                    let dist = ((x - d.cx).powi(2) + (y - d.cy).powi(2)).sqrt();
                    mask[j * nx + i] = dist <= d.radius;
                }
            }
        }
        StandardGrid::from_mask(nx, ny, domain, mask)
    }

    pub fn from_mask(nx: usize, ny: usize, domain: Rect, mask: Vec<bool>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidDomain(format!("grid must be at least 2x2, got {nx}x{ny}")));
        }
        if mask.len() != nx * ny {
            return Err(Error::Shape {
                expected: nx * ny,
                got: mask.len(),
            });
        }
        let active: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
        let grid = StandardGrid {
            nx,
            ny,
            domain,
            mask,
            active,
        };
        grid.check_domain()?;
        if grid.active.is_empty() {
            return Err(Error::InvalidDomain("mask selects no cells".into()));
        }
        Ok(grid)
    }

    fn check_domain(&self) -> Result<()> {
        let r = &self.domain;
        let finite = [r.x_min, r.x_max, r.y_min, r.y_max].iter().all(|v| v.is_finite());
        if !finite || !(r.x_min < r.x_max) || !(r.y_min < r.y_max) {
            return Err(Error::InvalidDomain(format!("degenerate rectangle {r:?}")));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of active cells (`m_I`).
    pub fn m_i(&self) -> usize {
        self.active.len()
    }

    /// Row-major linear indices (`j * nx + i`) of the active cells.
    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let r = &self.domain;
        let dx = (r.x_max - r.x_min) / self.nx as f64;
        let dy = (r.y_max - r.y_min) / self.ny as f64;
        [r.x_min + (i as f64 + 0.5) * dx, r.y_min + (j as f64 + 0.5) * dy]
    }

    /// Centres of the active cells, in storage order.
    pub fn active_centers(&self) -> Vec<[f64; 2]> {
        self.active
            .iter()
            .map(|&c| self.cell_center(c % self.nx, c / self.nx))
            .collect()
    }
}

/// Field values on the active cells of a [`StandardGrid`].
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<StandardGrid>,
    values: Vec<f64>,
}

impl PartialEq for GridField {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

pub(crate) fn same_grid(a: &Arc<StandardGrid>, b: &Arc<StandardGrid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl GridField {
    pub fn new(grid: Arc<StandardGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.m_i() {
            return Err(Error::Shape {
                expected: grid.m_i(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite grid value".into()));
        }
        Ok(GridField { grid, values })
    }

    /// Builds a field from a full `nx*ny` row-major array, keeping active cells.
    pub fn from_dense(grid: Arc<StandardGrid>, dense: &[f64]) -> Result<Self> {
        if dense.len() != grid.nx * grid.ny {
            return Err(Error::Shape {
                expected: grid.nx * grid.ny,
                got: dense.len(),
            });
        }
        let values = grid.active.iter().map(|&c| dense[c]).collect();
        GridField::new(grid, values)
    }

    /// Inverse of [`GridField::flatten`].
    pub fn unflatten(grid: Arc<StandardGrid>, values: &[f64]) -> Result<Self> {
        GridField::new(grid, values.to_vec())
    }

    pub fn grid(&self) -> &Arc<StandardGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Fixed linearisation used for snapshot assembly.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Samples this field at its own active cell centres.
    pub fn to_scattered(&self, fidelity: Fidelity) -> ScatteredField {
        ScatteredField {
            points: self.grid.active_centers(),
            values: self.values.clone(),
            fidelity,
        }
    }
}

/// Precomputed nearest-neighbour resampling operator from one native mesh to
/// a grid. Fields produced on the same mesh can reuse it.
#[derive(Debug, Clone)]
pub struct NearestMap {
    grid: Arc<StandardGrid>,
    source_len: usize,
    source: Vec<u32>,
}

impl NearestMap {
    pub fn new(points: &[[f64; 2]], grid: Arc<StandardGrid>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("no source points to interpolate from"));
        }
        let tree = KdTree::new(points);
        let source = grid
            .active_centers()
            .into_iter()
            .map(|c| tree.nearest(c).expect("non-empty tree") as u32)
            .collect();
        Ok(NearestMap {
            grid,
            source_len: points.len(),
            source,
        })
    }

    pub fn grid(&self) -> &Arc<StandardGrid> {
        &self.grid
    }

    /// Index of the source point feeding each active cell.
    pub fn sources(&self) -> &[u32] {
        &self.source
    }

    pub fn apply(&self, values: &[f64]) -> Result<GridField> {
        if values.len() != self.source_len {
            return Err(Error::Shape {
                expected: self.source_len,
                got: values.len(),
            });
        }
        let out = self.source.iter().map(|&s| values[s as usize]).collect();
        GridField::new(self.grid.clone(), out)
    }
}

/// Nearest-neighbour regridding of a scattered field onto `grid`.
pub fn interpolate_nearest(field: &ScatteredField, grid: Arc<StandardGrid>) -> Result<GridField> {
    NearestMap::new(&field.points, grid)?.apply(&field.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> Rect {
        Rect {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    #[test]
    fn wafer_grid_area_ratio() {
        let disc = Disc {
            cx: 0.0,
            cy: 0.0,
            radius: 150.0,
        };
        let g = StandardGrid::build(300, 300, Rect::bounding_square(&disc), Some(disc)).unwrap();
        let expected = std::f64::consts::PI / 4.0 * 90_000.0;
        assert!((g.m_i() as f64 - expected).abs() / expected < 2e-3, "m_I = {}", g.m_i());
    }

    #[test]
    fn covering_disc_keeps_all_cells() {
        let disc = Disc {
            cx: 0.5,
            cy: 0.5,
            radius: 10.0,
        };
        let g = StandardGrid::build(2, 2, unit(), Some(disc)).unwrap();
        assert_eq!(g.m_i(), 4);
    }

    #[test]
    fn small_disc_keeps_central_cells() {
        let disc = Disc {
            cx: 0.5,
            cy: 0.5,
            radius: 0.3,
        };
        let g = StandardGrid::build(4, 4, unit(), Some(disc)).unwrap();
        assert_eq!(g.m_i(), 4);
        assert_eq!(g.active_cells(), &[5, 6, 9, 10]);
    }

    #[test]
    fn degenerate_domain_rejected() {
        let flat = Rect {
            x_min: 0.0,
            x_max: 0.0,
            y_min: 0.0,
            y_max: 1.0,
        };
        assert!(matches!(
            StandardGrid::build(4, 4, flat, None),
            Err(Error::InvalidDomain(_))
        ));
        assert!(StandardGrid::build(1, 4, unit(), None).is_err());
    }

    #[test]
    fn single_point_fills_grid() {
        let g = Arc::new(StandardGrid::build(5, 5, unit(), None).unwrap());
        let f = ScatteredField::new(vec![[0.3, 0.9]], vec![5.0], Fidelity::High).unwrap();
        let out = interpolate_nearest(&f, g).unwrap();
        assert!(out.values().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn two_points_tie_break() {
        // 2x2 over [-0.5, 1.5]^2 puts centres at (0,0), (1,0), (0,1), (1,1).
        let r = Rect {
            x_min: -0.5,
            x_max: 1.5,
            y_min: -0.5,
            y_max: 1.5,
        };
        let g = Arc::new(StandardGrid::build(2, 2, r, None).unwrap());
        let f = ScatteredField::new(vec![[0.0, 0.0], [1.0, 1.0]], vec![1.0, 3.0], Fidelity::Low)
            .unwrap();
        let out = interpolate_nearest(&f, g).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0, 1.0, 3.0]);
    }

    #[test]
    fn empty_field_rejected() {
        assert!(matches!(
            ScatteredField::new(vec![], vec![], Fidelity::Low),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn flatten_row_major_and_masked() {
        let full = Arc::new(StandardGrid::build(2, 2, unit(), None).unwrap());
        let f = GridField::from_dense(full, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.flatten(), vec![1.0, 2.0, 3.0, 4.0]);

        let masked = Arc::new(
            StandardGrid::from_mask(2, 2, unit(), vec![true, false, true, true]).unwrap(),
        );
        let f = GridField::from_dense(masked, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.flatten(), vec![1.0, 3.0, 4.0]);
    }

    #[test]
    fn points_at_centres_reproduce_values() {
        let disc = Disc {
            cx: 0.5,
            cy: 0.5,
            radius: 0.5,
        };
        let g = Arc::new(StandardGrid::build(17, 13, unit(), Some(disc)).unwrap());
        let vals: Vec<f64> = (0..g.m_i()).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = GridField::new(g.clone(), vals).unwrap();
        let again = interpolate_nearest(&f.to_scattered(Fidelity::High), g).unwrap();
        assert_eq!(again, f);
    }

    proptest! {
        #[test]
        fn flatten_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let g = Arc::new(StandardGrid::build(4, 3, unit(), None).unwrap());
            let f = GridField::new(g.clone(), vals).unwrap();
            prop_assert_eq!(GridField::unflatten(g, &f.flatten()).unwrap(), f);
        }

        #[test]
        fn nearest_never_extrapolates(
            pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, -50.0f64..50.0), 1..40)
        ) {
            let g = Arc::new(StandardGrid::build(9, 7, unit(), None).unwrap());
            let (points, values): (Vec<_>, Vec<_>) =
                pts.iter().map(|&(x, y, v)| ([x, y], v)).unzip();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let f = ScatteredField::new(points, values, Fidelity::Low).unwrap();
            let a = interpolate_nearest(&f, g.clone()).unwrap();
            let b = interpolate_nearest(&f, g).unwrap();
            prop_assert!(a.values().iter().all(|&v| v >= lo && v <= hi));
            prop_assert_eq!(a, b);
        }
    }
}
