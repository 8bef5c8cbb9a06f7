//! File formats: binary grid-field, POD and kriging containers, JSON
//! manifests for surrogates and datasets, and CSV design tables.
//!
//! Binary containers start with a 16-byte header (8-byte magic, `u32`
//! version, `u32` kind) and store all numbers little-endian.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::doe::DesignSpace;
use crate::error::{Error, Result};
use crate::evaluation::{CostModel, FieldDataset};
use crate::field_grid::{Fidelity, GridField, GridSpec, Rect, StandardGrid};
use crate::kriging::{KrigingConfig, KrigingModel, KrigingParts};
use crate::mf_kriging::{DeltaTrend, LatentFusion, MultiFidelityModel};
use crate::pod::{PodBasis, SnapshotMatrix};
use crate::surrogate::{FieldSurrogate, SingleFidelityModel, Surrogate};

const GRID_MAGIC: &[u8; 8] = b"MFPDGRID";
const KRIG_MAGIC: &[u8; 8] = b"MFPDKRIG";
const VERSION: u32 = 1;
const KIND_FIELD: u32 = 1;
const KIND_POD: u32 = 2;
const KIND_KRIGING: u32 = 3;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 8], kind: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(kind)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 8], kind: u32) -> Result<()> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let k = r.read_u32::<LE>()?;
    if k != kind {
        return Err(Error::Format(format!("expected container kind {kind}, found {k}")));
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for &x in v {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn read_len<R: Read>(r: &mut R, limit: usize) -> Result<usize> {
    let n = r.read_u64::<LE>()?;
    if n > limit as u64 {
        return Err(Error::Format(format!("length {n} exceeds limit {limit}")));
    }
    Ok(n as usize)
}

const MAX_LEN: usize = 1 << 32;

fn write_grid<W: Write>(w: &mut W, g: &StandardGrid) -> Result<()> {
    w.write_u64::<LE>(g.nx() as u64)?;
    w.write_u64::<LE>(g.ny() as u64)?;
    let d = g.domain();
    write_f64s(w, &[d.x_min, d.x_max, d.y_min, d.y_max])?;
    let mut bytes = vec![0u8; g.mask().len().div_ceil(8)];
    for (i, &on) in g.mask().iter().enumerate() {
        if on {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_grid<R: Read>(r: &mut R) -> Result<StandardGrid> {
    let nx = read_len(r, 1 << 20)?;
    let ny = read_len(r, 1 << 20)?;
    let b = read_f64s(r, 4)?;
    let cells = nx
        .checked_mul(ny)
        .filter(|&c| c <= MAX_LEN)
        .ok_or_else(|| Error::Format("grid too large".into()))?;
    let mut bytes = vec![0u8; cells.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    let mask = (0..cells).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    let domain = Rect {
        x_min: b[0],
        x_max: b[1],
        y_min: b[2],
        y_max: b[3],
    };
    StandardGrid::from_mask(nx, ny, domain, mask)
}

pub fn write_grid_field(path: impl AsRef<Path>, field: &GridField) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_header(&mut w, GRID_MAGIC, KIND_FIELD)?;
    write_grid(&mut w, field.grid())?;
    write_f64s(&mut w, field.values())?;
    w.flush()?;
    Ok(())
}

/// Reads a grid field. When `grid` is given and describes the same grid, the
/// field shares it.
pub fn read_grid_field(path: impl AsRef<Path>, grid: Option<&Arc<StandardGrid>>) -> Result<GridField> {
    let mut r = open(path.as_ref())?;
    read_header(&mut r, GRID_MAGIC, KIND_FIELD)?;
    let g = read_grid(&mut r)?;
    let g = match grid {
        Some(shared) if **shared == g => shared.clone(),
        Some(_) => return Err(Error::GridMismatch),
        None => Arc::new(g),
    };
    let values = read_f64s(&mut r, g.m_i())?;
    GridField::new(g, values)
}

pub fn write_pod(path: impl AsRef<Path>, basis: &PodBasis) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_header(&mut w, GRID_MAGIC, KIND_POD)?;
    write_grid(&mut w, basis.grid())?;
    w.write_u64::<LE>(basis.k() as u64)?;
    w.write_u64::<LE>(basis.singular_values().len() as u64)?;
    w.write_u8(basis.mean().is_some() as u8)?;
    write_f64s(&mut w, basis.singular_values())?;
    if let Some(mu) = basis.mean() {
        write_f64s(&mut w, mu)?;
    }
    write_f64s(&mut w, basis.modes().as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_pod(path: impl AsRef<Path>) -> Result<PodBasis> {
    let mut r = open(path.as_ref())?;
    read_header(&mut r, GRID_MAGIC, KIND_POD)?;
    let grid = Arc::new(read_grid(&mut r)?);
    let m = grid.m_i();
    let k = read_len(&mut r, m)?;
    let n_sv = read_len(&mut r, MAX_LEN)?;
    let centered = r.read_u8()? == 1;
    let sv = read_f64s(&mut r, n_sv)?;
    let mean = if centered { Some(read_f64s(&mut r, m)?) } else { None };
    let modes = DMatrix::from_vec(m, k, read_f64s(&mut r, m * k)?);
    PodBasis::from_parts(grid, modes, sv, mean)
}

fn write_matrix<W: Write>(w: &mut W, a: &DMatrix<f64>) -> Result<()> {
    w.write_u64::<LE>(a.nrows() as u64)?;
    w.write_u64::<LE>(a.ncols() as u64)?;
    write_f64s(w, a.as_slice())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let rows = read_len(r, MAX_LEN)?;
    let cols = read_len(r, MAX_LEN)?;
    Ok(DMatrix::from_vec(rows, cols, read_f64s(r, rows * cols)?))
}

/// Kriging model container: JSON-encoded config, then bounds, training data
/// and hyperparameters. The factorisation is recomputed on load.
pub fn write_kriging(path: impl AsRef<Path>, model: &KrigingModel) -> Result<()> {
    let p = model.to_parts();
    let mut w = create(path.as_ref())?;
    write_header(&mut w, KRIG_MAGIC, KIND_KRIGING)?;
    let cfg = serde_json::to_vec(&p.config)?;
    w.write_u64::<LE>(cfg.len() as u64)?;
    w.write_all(&cfg)?;
    write_matrix(&mut w, &p.x_train)?;
    write_f64s(&mut w, &p.y_train)?;
    write_f64s(&mut w, &p.lower)?;
    write_f64s(&mut w, &p.upper)?;
    write_f64s(&mut w, &p.theta)?;
    write_f64s(&mut w, &[p.y_mean, p.y_std, p.process_variance, p.nugget])?;
    w.write_u64::<LE>(p.beta.len() as u64)?;
    write_f64s(&mut w, &p.beta)?;
    match &p.basis {
        Some(b) => {
            w.write_u8(1)?;
            write_matrix(&mut w, b)?;
        }
        None => w.write_u8(0)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_kriging(path: impl AsRef<Path>) -> Result<KrigingModel> {
    let mut r = open(path.as_ref())?;
    read_header(&mut r, KRIG_MAGIC, KIND_KRIGING)?;
    let len = read_len(&mut r, 1 << 20)?;
    let mut cfg = vec![0u8; len];
    r.read_exact(&mut cfg)?;
    let config: KrigingConfig = serde_json::from_slice(&cfg)?;
    let x_train = read_matrix(&mut r)?;
    let (n_pts, n) = x_train.shape();
    let y_train = read_f64s(&mut r, n_pts)?;
    let lower = read_f64s(&mut r, n)?;
    let upper = read_f64s(&mut r, n)?;
    let theta = read_f64s(&mut r, n)?;
    let s = read_f64s(&mut r, 4)?;
    let nb = read_len(&mut r, MAX_LEN)?;
    let beta = read_f64s(&mut r, nb)?;
    let basis = match r.read_u8()? {
        0 => None,
        1 => Some(read_matrix(&mut r)?),
        f => return Err(Error::Format(format!("bad basis flag {f}"))),
    };
    KrigingModel::from_parts(KrigingParts {
        config,
        lower,
        upper,
        x_train,
        y_train,
        y_mean: s[0],
        y_std: s[1],
        theta,
        beta,
        process_variance: s[2],
        nugget: s[3],
        basis,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FusionEntry {
    lf: String,
    delta: String,
    rho: f64,
    trend: DeltaTrend,
    rho_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum SurrogateBody {
    Single { models: Vec<String> },
    Multi { dims: Vec<FusionEntry> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurrogateManifest {
    format: String,
    version: u32,
    basis: String,
    #[serde(flatten)]
    body: SurrogateBody,
}

const SURROGATE_FORMAT: &str = "mfpod-surrogate";

fn sibling(manifest: &Path, suffix: &str) -> (PathBuf, String) {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = format!("{stem}.{suffix}");
    let dir = manifest.parent().unwrap_or(Path::new(""));
    (dir.join(&name), name)
}

fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new("")).join(rel)
}

/// Writes a JSON manifest plus its basis and per-coordinate kriging files,
/// all next to `path` and prefixed with its stem.
pub fn save_surrogate(path: impl AsRef<Path>, model: &Surrogate) -> Result<()> {
    let path = path.as_ref();
    let (basis_path, basis_name) = sibling(path, "pod");
    let (basis, body) = match model {
        Surrogate::Single(m) => {
            let mut names = Vec::new();
            for (j, km) in m.models().iter().enumerate() {
                let (p, n) = sibling(path, &format!("z{j}.krg"));
                write_kriging(&p, km)?;
                names.push(n);
            }
            (FieldSurrogate::basis(m).clone(), SurrogateBody::Single { models: names })
        }
        Surrogate::Multi(m) => {
            let mut dims = Vec::new();
            for (j, d) in m.dims().iter().enumerate() {
                let (lp, ln) = sibling(path, &format!("z{j}.lf.krg"));
                let (dp, dn) = sibling(path, &format!("z{j}.delta.krg"));
                write_kriging(&lp, d.lf_model())?;
                write_kriging(&dp, d.delta_model())?;
                dims.push(FusionEntry {
                    lf: ln,
                    delta: dn,
                    rho: d.rho(),
                    trend: d.trend(),
                    rho_fallback: d.rho_fallback(),
                });
            }
            (FieldSurrogate::basis(m).clone(), SurrogateBody::Multi { dims })
        }
    };
    write_pod(&basis_path, &basis)?;
    let manifest = SurrogateManifest {
        format: SURROGATE_FORMAT.into(),
        version: VERSION,
        basis: basis_name,
        body,
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_surrogate(path: impl AsRef<Path>) -> Result<Surrogate> {
    let path = path.as_ref();
    let manifest: SurrogateManifest = serde_json::from_reader(open(path)?)?;
    if manifest.format != SURROGATE_FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "not a version {VERSION} surrogate manifest: {}",
            path.display()
        )));
    }
    let basis = Arc::new(read_pod(resolve(path, &manifest.basis))?);
    match manifest.body {
        SurrogateBody::Single { models } => {
            let models = models
                .iter()
                .map(|m| read_kriging(resolve(path, m)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Surrogate::Single(SingleFidelityModel::from_parts(models, basis)?))
        }
        SurrogateBody::Multi { dims } => {
            let dims = dims
                .iter()
                .map(|d| {
                    LatentFusion::from_parts(
                        read_kriging(resolve(path, &d.lf))?,
                        read_kriging(resolve(path, &d.delta))?,
                        d.rho,
                        d.trend,
                        d.rho_fallback,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Surrogate::Multi(MultiFidelityModel::from_parts(dims, basis)?))
        }
    }
}

/// Design table: `index` followed by one column per variable.
pub fn write_designs<W: Write>(out: W, space: &DesignSpace, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != space.dim() {
        return Err(Error::Shape {
            expected: space.dim(),
            got: x.ncols(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend(space.names().iter().cloned());
    w.write_record(&header)?;
    for (i, row) in x.row_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a design table, checking its columns against `space` and that the
/// index column counts up from zero.
pub fn read_designs<R: Read>(input: R, space: &DesignSpace) -> Result<DMatrix<f64>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut expect = vec!["index".to_string()];
    expect.extend(space.names().iter().cloned());
    if header != expect {
        return Err(Error::Format(format!("design table header {header:?}, expected {expect:?}")));
    }
    let mut vals = Vec::new();
    let mut n = 0;
    for rec in rd.records() {
        let rec = rec?;
        let idx: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad index {:?}", &rec[0])))?;
        if idx != n {
            return Err(Error::Format(format!("design index {idx} out of order, expected {n}")));
        }
        for f in rec.iter().skip(1) {
            vals.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {f:?} in design {n}")))?,
            );
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("design table has no rows"));
    }
    Ok(DMatrix::from_row_slice(n, space.dim(), &vals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    /// Row of the design table.
    pub row: usize,
    pub fidelity: Fidelity,
    pub path: String,
}

/// Description of a nested two-fidelity dataset on disk. Paths are relative
/// to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub space: DesignSpace,
    pub design_table: String,
    pub fields: Vec<FieldEntry>,
    pub cost: CostModel,
    pub grid: GridSpec,
    pub doe_seed: u64,
    pub mesh_seed: u64,
}

const DATASET_FORMAT: &str = "mfpod-dataset";

impl DatasetManifest {
    pub fn new(space: DesignSpace, design_table: String, grid: GridSpec, cost: CostModel) -> Self {
        DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: VERSION,
            space,
            design_table,
            fields: Vec::new(),
            cost,
            grid,
            doe_seed: 0,
            mesh_seed: 0,
        }
    }
}

pub fn write_dataset_manifest(path: impl AsRef<Path>, m: &DatasetManifest) -> Result<()> {
    let mut w = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut w, m)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_reader(open(path.as_ref())?)?;
    if m.format != DATASET_FORMAT || m.version != VERSION {
        return Err(Error::Format(format!(
            "not a version {VERSION} dataset manifest: {}",
            path.as_ref().display()
        )));
    }
    Ok(m)
}

/// Loads a dataset: every design row needs an LF field; HF fields define the
/// nested subset in the order listed.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetManifest, FieldDataset)> {
    let path = path.as_ref();
    let m = read_dataset_manifest(path)?;
    let x = read_designs(open(&resolve(path, &m.design_table))?, &m.space)?;
    let n = x.nrows();
    let mut lf: Vec<Option<&FieldEntry>> = vec![None; n];
    let mut hf = Vec::new();
    for e in &m.fields {
        if e.row >= n {
            return Err(Error::Format(format!("field {} refers to missing design row {}", e.path, e.row)));
        }
        match e.fidelity {
            Fidelity::Low => {
                if lf[e.row].replace(e).is_some() {
                    return Err(Error::Format(format!("duplicate LF field for row {}", e.row)));
                }
            }
            Fidelity::High => hf.push(e),
        }
    }
    if let Some(r) = lf.iter().position(|e| e.is_none()) {
        return Err(Error::NestedDesign(format!("design row {r} has no LF field")));
    }
    let mut grid: Option<Arc<StandardGrid>> = None;
    let mut load = |e: &FieldEntry| -> Result<GridField> {
        let f = read_grid_field(resolve(path, &e.path), grid.as_ref())?;
        grid.get_or_insert_with(|| f.grid().clone());
        Ok(f)
    };
    let lf_fields = lf.iter().flatten().map(|e| load(e)).collect::<Result<Vec<_>>>()?;
    let hf_fields = hf.iter().map(|e| load(e)).collect::<Result<Vec<_>>>()?;
    let hf_rows = hf.iter().map(|e| e.row).collect();
    let grid = grid.ok_or(Error::EmptyInput("dataset has no fields"))?;
    let to_snap = |fields: &[GridField]| -> Result<SnapshotMatrix> {
        let mi = grid.m_i();
        SnapshotMatrix::from_rows(
            grid.clone(),
            DMatrix::from_fn(fields.len(), mi, |i, j| fields[i].values()[j]),
        )
    };
    let data = FieldDataset::new(x, to_snap(&lf_fields)?, to_snap(&hf_fields)?, hf_rows)?;
    Ok((m, data))
}

/// Writes every snapshot of `data` as a grid-field file under `dir` and
/// returns the matching manifest entries.
pub fn save_dataset(
    path: impl AsRef<Path>,
    space: &DesignSpace,
    data: &FieldDataset,
    mut manifest: DatasetManifest,
) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new(""));
    write_designs(create(&dir.join(&manifest.design_table))?, space, data.x())?;
    manifest.fields.clear();
    let grid = data.lf().grid().clone();
    let mut put = |row: usize, fid: Fidelity, values: Vec<f64>| -> Result<()> {
        let rel = format!("fields/{}_{row:05}.grid", fid.to_string().to_lowercase());
        write_grid_field(dir.join(&rel), &GridField::new(grid.clone(), values)?)?;
        manifest.fields.push(FieldEntry {
            row,
            fidelity: fid,
            path: rel,
        });
        Ok(())
    };
    for r in 0..data.n_lf() {
        put(r, Fidelity::Low, data.lf().data().row(r).iter().copied().collect())?;
    }
    for (h, &r) in data.hf_rows().iter().enumerate() {
        put(r, Fidelity::High, data.hf().data().row(h).iter().copied().collect())?;
    }
    write_dataset_manifest(path, &manifest)?;
    Ok(manifest)
}
