use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mfpod::benchmark::{
    dataset_from_designs, optimize_esc, run_optimization, run_studies, BenchmarkConfig, OptimizationReport,
    StudyReport,
};
use mfpod::doe::nested_subset;
use mfpod::evaluation::{
    draw_training_set, qoi, train_surrogate, validate, validation_split, write_study_csv, StudyRow,
};
use mfpod::field_grid::ScatteredField;
use mfpod::io::{
    load_dataset, load_surrogate, read_dataset_manifest, read_designs, save_dataset, save_surrogate,
    write_dataset_manifest, write_designs, write_grid_field, write_pod, DatasetManifest, FieldEntry,
};
use mfpod::optimizer::Problem;
use mfpod::pod::{compute_pod_with, reconstruction_error_curve, PodOptions, RankSelection};
use mfpod::synthetic::{hf_field, lf_field, SyntheticProblem};
use mfpod::{interpolate_nearest, lhs, DesignSpace, Error, Fidelity, FieldSurrogate, Method, Result};
use serde::Serialize;

use crate::{config, Cmd, Common};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_space(path: Option<&Path>) -> Result<DesignSpace> {
    match path {
        None => Ok(DesignSpace::esc()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn run(cmd: Cmd, common: &Common) -> Result<()> {
    let mut cfg = config::load(common.preset, common.config.as_deref())?;
    if common.no_mask {
        cfg.problem.grid.mask = false;
    }
    match cmd {
        Cmd::Doe { n, space, seed, out } => {
            let space = read_space(space.as_deref())?;
            let x = lhs(&space, n, seed.unwrap_or(cfg.seed))?;
            let mut w = create(&out)?;
            write_designs(&mut w, &space, &x)?;
            w.flush()?;
            Ok(())
        }
        Cmd::Simulate {
            designs,
            n_hf,
            strategy,
            out_dir,
            native,
        } => simulate(&cfg, &designs, n_hf, strategy.into(), &out_dir, native),
        Cmd::Regrid {
            data,
            input,
            fidelity,
            out,
        } => match (data, input) {
            (Some(data), _) => regrid_dataset(&cfg, &data, &out),
            (None, Some(input)) => {
                let grid = Arc::new(cfg.problem.grid.build(&cfg.problem.disc())?);
                let field = ScatteredField::read_csv(&input, fidelity.into())?;
                write_grid_field(&out, &interpolate_nearest(&field, grid)?)
            }
            (None, None) => Err(Error::Config("regrid needs --data or --input".into())),
        },
        Cmd::Pod {
            data,
            fidelity,
            k,
            center,
            out,
            curve,
            curve_max,
        } => {
            let (_, ds) = load_dataset(&data)?;
            let snaps = match mfpod::Fidelity::from(fidelity) {
                Fidelity::Low => ds.lf(),
                Fidelity::High => ds.hf(),
            };
            let rank = match k {
                Some(k) => RankSelection::Fixed(k),
                None => PodOptions::default().rank,
            };
            let basis = compute_pod_with(snaps, PodOptions { rank, center })?;
            write_pod(&out, &basis)?;
            if let Some(curve) = curve {
                let max = snaps.n_snapshots().min(snaps.m_i()).min(curve_max);
                let ks: Vec<usize> = (1..=max).collect();
                let mut w = csv::Writer::from_writer(create(&curve)?);
                w.write_record(["k", "rmse"]).map_err(Error::from)?;
                for (k, e) in reconstruction_error_curve(snaps, &ks, center)? {
                    w.write_record([k.to_string(), format!("{e:?}")]).map_err(Error::from)?;
                }
                w.flush()?;
            }
            Ok(())
        }
        Cmd::Train {
            data,
            method,
            n_lf,
            n_hf,
            holdout,
            seed,
            out,
        } => {
            let (_, ds) = load_dataset(&data)?;
            let settings = &cfg.study.settings;
            let seed = seed.unwrap_or(settings.seed);
            let holdout = holdout.unwrap_or(settings.holdout);
            let val = validation_split(ds.n_hf(), holdout, seed)?;
            let n_hf = n_hf.unwrap_or(ds.n_hf() - val.len());
            let n_lf = n_lf.unwrap_or(ds.n_lf() - val.len());
            let set = draw_training_set(&ds, method, n_lf, n_hf, &val, seed)?;
            let model = train_surrogate(&ds, method, &set, &settings.surrogate)?;
            save_surrogate(&out, &model)
        }
        Cmd::Validate {
            model,
            data,
            holdout,
            seed,
            out,
        } => {
            let (_, ds) = load_dataset(&data)?;
            let settings = &cfg.study.settings;
            let val = validation_split(
                ds.n_hf(),
                holdout.unwrap_or(settings.holdout),
                seed.unwrap_or(settings.seed),
            )?;
            let m = load_surrogate(&model)?;
            let report = validate(&m, &ds, &val)?;
            write_json(out.as_deref(), &report)
        }
        Cmd::Study {
            data,
            seed,
            out_dir,
            no_optimize,
        } => {
            let cfg = match seed {
                Some(s) => cfg.seeded(s),
                None => cfg,
            };
            study(&cfg, data.as_deref(), &out_dir, no_optimize)
        }
        Cmd::Optimize {
            surrogate,
            starts,
            seed,
            out,
            trace,
            truth,
        } => {
            let plan = &cfg.optimization;
            let model: Arc<dyn FieldSurrogate> = Arc::new(load_surrogate(&surrogate)?);
            let (esc, result) = optimize_esc(model, plan.thresholds, starts, seed.unwrap_or(plan.seed), &plan.sqp)?;
            let predicted = esc.qoi(&result.x_star)?;
            let truth = if truth {
                let problem = SyntheticProblem::new(cfg.problem.clone())?;
                Some(qoi(&problem.grid_field(&result.x_star, Fidelity::High)?))
            } else {
                None
            };
            if let Some(path) = trace {
                write_trace(&path, &result)?;
            }
            let out_json = OptimizeOutput {
                x_star: &result.x_star,
                f_star: result.f_star,
                constraint_names: esc.constraint_names(),
                constraint_values: &result.constraint_values,
                converged: result.converged,
                iterations: result.iterations,
                kkt_residual: result.kkt_residual,
                predicted,
                truth,
            };
            write_json(out.as_deref(), &out_json)
        }
        Cmd::Report { dir, dump_config } => {
            if dump_config {
                print!("{}", config::to_toml(&cfg)?);
                return Ok(());
            }
            let dir = dir.ok_or_else(|| Error::Config("report needs --dir".into()))?;
            report(&dir)
        }
    }
}

#[derive(Serialize)]
struct OptimizeOutput<'a> {
    x_star: &'a [f64],
    f_star: f64,
    constraint_names: Vec<String>,
    constraint_values: &'a [f64],
    converged: bool,
    iterations: usize,
    kkt_residual: f64,
    predicted: mfpod::optimizer::FieldQoi,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<mfpod::QoiSummary>,
}

fn write_trace(path: &Path, r: &mfpod::OptResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let n = r.x_star.len();
    let mut header: Vec<String> = ["iter", "f", "max_violation", "merit", "step", "alpha"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for t in &r.trace {
        let mut rec = vec![
            t.iter.to_string(),
            format!("{:?}", t.f),
            format!("{:?}", t.max_violation),
            format!("{:?}", t.merit),
            format!("{:?}", t.step),
            format!("{:?}", t.alpha),
        ];
        rec.extend(t.x.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(
    cfg: &BenchmarkConfig,
    designs: &Path,
    n_hf: usize,
    strategy: mfpod::SubsetStrategy,
    out_dir: &Path,
    native: bool,
) -> Result<()> {
    let space = DesignSpace::esc();
    let x = read_designs(File::open(designs)?, &space)?;
    let hf_rows = nested_subset(&x, n_hf, strategy)?;
    let mut manifest = DatasetManifest::new(space.clone(), "designs.csv".into(), cfg.problem.grid, cfg.problem.cost);
    manifest.doe_seed = cfg.seed;
    manifest.mesh_seed = cfg.problem.seed;
    let path = out_dir.join("manifest.json");
    if !native {
        let problem = SyntheticProblem::new(cfg.problem.clone())?;
        let data = dataset_from_designs(&problem, x, hf_rows)?;
        save_dataset(&path, &space, &data, manifest)?;
        return Ok(());
    }
    cfg.problem.validate()?;
    let mut w = create(&out_dir.join("designs.csv"))?;
    write_designs(&mut w, &space, &x)?;
    w.flush()?;
    let mut put = |row: usize, fid: Fidelity| -> Result<()> {
        let d: Vec<f64> = x.row(row).iter().copied().collect();
        let field = match fid {
            Fidelity::Low => lf_field(&d, &cfg.problem)?,
            Fidelity::High => hf_field(&d, &cfg.problem)?,
        };
        let rel = format!("native/{}_{row:05}.csv", fid.to_string().to_lowercase());
        let p = out_dir.join(&rel);
        fs::create_dir_all(p.parent().unwrap_or(out_dir))?;
        field.write_csv(&p)?;
        manifest.fields.push(FieldEntry {
            row,
            fidelity: fid,
            path: rel,
        });
        Ok(())
    };
    for r in 0..x.nrows() {
        put(r, Fidelity::Low)?;
    }
    for &r in &hf_rows {
        put(r, Fidelity::High)?;
    }
    write_dataset_manifest(&path, &manifest)
}

fn regrid_dataset(cfg: &BenchmarkConfig, data: &Path, out: &Path) -> Result<()> {
    let mut m = read_dataset_manifest(data)?;
    let grid = Arc::new(m.grid.build(&cfg.problem.disc())?);
    let src_dir = data.parent().unwrap_or(Path::new("")).to_path_buf();
    let dst_dir = out.parent().unwrap_or(Path::new("")).to_path_buf();
    let designs = fs::read(src_dir.join(&m.design_table))?;
    let mut w = create(&dst_dir.join(&m.design_table))?;
    w.write_all(&designs)?;
    w.flush()?;
    for e in &mut m.fields {
        let field = ScatteredField::read_csv(src_dir.join(&e.path), e.fidelity)?;
        let rel = PathBuf::from("fields").join(
            Path::new(&e.path)
                .with_extension("grid")
                .file_name()
                .ok_or_else(|| Error::Format(format!("bad field path {}", e.path)))?,
        );
        write_grid_field(dst_dir.join(&rel), &interpolate_nearest(&field, grid.clone())?)?;
        e.path = rel.to_string_lossy().replace('\\', "/");
    }
    write_dataset_manifest(out, &m)
}

fn write_rows(path: &Path, rows: &[StudyRow]) -> Result<()> {
    write_study_csv(rows, create(path)?)
}

fn study(cfg: &BenchmarkConfig, data: Option<&Path>, out_dir: &Path, no_optimize: bool) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), config::to_toml(cfg)?)?;
    let (dataset, problem) = match data {
        Some(p) => (load_dataset(p)?.1, None),
        None => {
            let problem = SyntheticProblem::new(cfg.problem.clone())?;
            let ds = mfpod::benchmark::generate_dataset(&problem, &cfg.pool, cfg.seed)?;
            (ds, Some(problem))
        }
    };
    let studies = run_studies(&dataset, &cfg.study)?;
    write_study_outputs(out_dir, &studies)?;
    if let (Some(problem), false) = (problem, no_optimize) {
        let opt = run_optimization(&problem, &cfg.optimization)?;
        write_json(Some(&out_dir.join("optimization.json")), &opt)?;
    }
    Ok(())
}

fn write_study_outputs(dir: &Path, s: &StudyReport) -> Result<()> {
    write_rows(&dir.join("study_lf.csv"), &s.lf)?;
    write_rows(&dir.join("study_hf.csv"), &s.hf)?;
    write_rows(&dir.join("study_mf.csv"), &s.mf)?;
    let all: Vec<StudyRow> = s.lf.iter().chain(&s.hf).chain(&s.mf).cloned().collect();
    write_rows(&dir.join("study.csv"), &all)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("reductions.csv"))?);
    w.write_record(["cost", "reduction"])?;
    for (c, r) in &s.reductions {
        w.write_record([format!("{c:?}"), format!("{r:?}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    method: Method,
    n_lf: usize,
    n_hf: usize,
    avg_data_generation_cost: f64,
    avg_true_three_sigma: f64,
    avg_improvement: f64,
    avg_violated_constraints: f64,
    draws: usize,
}

fn summarize(opt: &OptimizationReport) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, usize, usize)> = Vec::new();
    for o in &opt.outcomes {
        let k = (o.method, o.n_lf, o.n_hf);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, n_lf, n_hf)| {
            let os: Vec<_> = opt
                .outcomes
                .iter()
                .filter(|o| (o.method, o.n_lf, o.n_hf) == (method, n_lf, n_hf))
                .collect();
            let n = os.len() as f64;
            let avg = |f: &dyn Fn(&&mfpod::benchmark::OptimizationOutcome) -> f64| os.iter().map(f).sum::<f64>() / n;
            SummaryRow {
                method,
                n_lf,
                n_hf,
                avg_data_generation_cost: avg(&|o| o.cost),
                avg_true_three_sigma: avg(&|o| o.truth.three_sigma),
                avg_improvement: avg(&|o| o.improvement),
                avg_violated_constraints: avg(&|o| o.truth_constraints.iter().filter(|&&g| g > 0.0).count() as f64),
                draws: os.len(),
            }
        })
        .collect()
}

fn report(dir: &Path) -> Result<()> {
    let rows = mfpod::evaluation::read_study_csv(File::open(dir.join("study.csv"))?)?;
    let mut out = String::new();
    out.push_str("Convergence\n");
    out.push_str(&format!(
        "{:<6} {:>6} {:>6} {:>10} {:>12} {:>10} {:>10} {:>10}\n",
        "method", "n_lf", "n_hf", "cost", "avg_rmse", "err_max", "err_mean", "err_sigma"
    ));
    for r in &rows {
        out.push_str(&format!(
            "{:<6} {:>6} {:>6} {:>10.1} {:>12.6} {:>10.3e} {:>10.3e} {:>10.3e}\n",
            r.method.as_str(),
            r.n_lf,
            r.n_hf,
            r.cost,
            r.avg_rmse,
            r.rel_err_max,
            r.rel_err_mean,
            r.rel_err_sigma
        ));
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    write_rows(&dir.join("convergence_by_cost.csv"), &sorted)?;
    let opt_path = dir.join("optimization.json");
    if opt_path.exists() {
        let opt: OptimizationReport = serde_json::from_reader(File::open(&opt_path)?)?;
        let summary = summarize(&opt);
        let mut w = csv::Writer::from_writer(create(&dir.join("summary.csv"))?);
        for s in &summary {
            w.serialize(s)?;
        }
        w.flush()?;
        out.push_str(&format!(
            "\nOptimisation (reference true 3σ {:.4})\n",
            opt.reference_truth.three_sigma
        ));
        out.push_str(&format!(
            "{:<6} {:>6} {:>6} {:>28} {:>18} {:>20}\n",
            "method", "n_lf", "n_hf", "Avg. data generation cost", "Avg. improvement", "Avg. violated consts"
        ));
        for s in &summary {
            out.push_str(&format!(
                "{:<6} {:>6} {:>6} {:>28.0} {:>17.1}% {:>20.2}\n",
                s.method.as_str(),
                s.n_lf,
                s.n_hf,
                s.avg_data_generation_cost,
                100.0 * s.avg_improvement,
                s.avg_violated_constraints
            ));
        }
    }
    fs::write(dir.join("summary.txt"), &out)?;
    print!("{out}");
    Ok(())
}
