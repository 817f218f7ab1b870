//! Pipeline dispatch for experiment configs, run manifests, convergence
//! studies and the smallness probe.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cgo::{remainder_decay_table, CgoParams, LadderSpec};
use crate::config::{LoadedConfig, PipelineSpec, RecoveryMode, Resolved};
use crate::control::{hum_control, runge_approximate, ControlProblem, HumOptions};
use crate::error::{Error, Result};
use crate::field::{fmt, BoundaryTrace, FieldKind, SpaceTimeField};
use crate::geometry::{minimal_time, Grid, GridSpec, Subset};
use crate::inversion::{
    fd_linearize, flux_gap, nonuniqueness_demo, probe_delta, probe_directions, recover_initial_active, recover_initial_passive,
    recover_potential, recover_taylor_coefficient, simultaneous_recover, stability_probe, ActiveOptions, DeltaProbe,
    LinearizationStencil, PassiveOptions, PassiveProblem, PassiveResult, SimultaneousConfig,
};
use crate::measurement::{active_dn, passive_dn, Scenario, SyntheticOracle};
use crate::semilinear::{Expr, Nonlinearity};
use crate::wave::{energy, l2_norm, solve_linear, wave_energy, Region, WaveOperator};

/// Outcome of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub pipeline: String,
    pub out_dir: PathBuf,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    /// For the suite pipeline: whether every check passed.
    pub passed: Option<bool>,
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    pipeline: &'a str,
    seed: u64,
    version: &'a str,
    config: String,
    workers: usize,
    grid: &'a GridSpec,
    /// SHA-256 over the per-file digests of every CSV output, in path order.
    csv_digest: String,
    metrics: &'a BTreeMap<String, f64>,
    notes: &'a [String],
    outputs: Vec<OutputEntry>,
    config_source: &'a str,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Digest of all CSV files below `dir`, independent of file timestamps.
pub fn csv_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for p in files_under(dir)? {
        if p.extension().is_some_and(|e| e == "csv") {
            let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            h.update(rel.as_bytes());
            h.update(sha256_hex(&std::fs::read(&p)?).as_bytes());
        }
    }
    Ok(format!("{:x}", h.finalize()))
}

fn write_manifest(loaded: &LoadedConfig, summary: &RunSummary) -> Result<()> {
    let dir = &summary.out_dir;
    let mut outputs = Vec::new();
    for p in files_under(dir)? {
        let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
        if rel == "manifest.toml" {
            continue;
        }
        outputs.push(OutputEntry { file: rel, sha256: sha256_hex(&std::fs::read(&p)?) });
    }
    let cfg = &loaded.config;
    let manifest = Manifest {
        name: cfg.name.as_deref().unwrap_or(""),
        pipeline: &summary.pipeline,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        config: loaded.path.display().to_string(),
        workers: rayon::current_num_threads(),
        grid: &cfg.grid,
        csv_digest: csv_digest(dir)?,
        metrics: &summary.metrics,
        notes: &summary.notes,
        outputs,
        config_source: &loaded.source,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

fn write_metrics(dir: &Path, metrics: &BTreeMap<String, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in metrics {
        w.write_record([k.as_str(), &fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured pipeline into `out_dir`, then writes `summary.csv`
/// and `manifest.toml`.
pub fn run_experiment(loaded: &LoadedConfig, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let cfg = &loaded.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pipeline = cfg.pipeline.name().to_string();
    let mut summary = RunSummary { pipeline: pipeline.clone(), out_dir: out_dir.to_path_buf(), metrics: BTreeMap::new(), notes: Vec::new(), passed: None };
    if let PipelineSpec::Suite { only } = &cfg.pipeline {
        let checks = crate::suite::run_checks(only, Some(out_dir))?;
        crate::suite::write_table(&checks, &out_dir.join("suite.csv"))?;
        for c in &checks {
            summary.metrics.insert(format!("criterion_{:02}", c.id), if c.passed { 1.0 } else { 0.0 });
            summary.notes.push(c.line());
        }
        summary.passed = Some(checks.iter().all(|c| c.passed));
    } else {
        let r = cfg.resolve(&mut rng).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        dispatch(&cfg.pipeline, &r, cfg.seed, out_dir, &mut summary).map_err(|e| match e {
            Error::Stage { .. } | Error::Config(_) => e,
            other => other.in_stage(pipeline.clone()),
        })?;
    }
    write_metrics(out_dir, &summary.metrics)?;
    write_manifest(loaded, &summary)?;
    Ok(summary)
}

fn expr_trace(grid: &Arc<Grid>, subset: Subset, source: &str) -> Result<BoundaryTrace> {
    let e = Expr::parse(source)?;
    let tr = BoundaryTrace::dirichlet_from_fn(grid.clone(), subset, |x, t| e.eval(x, t).unwrap_or(f64::NAN));
    if tr.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("boundary expression `{source}` is not finite everywhere")));
    }
    Ok(tr)
}

fn expr_field(grid: &Arc<Grid>, kind: FieldKind, source: &str) -> Result<SpaceTimeField> {
    let e = Expr::parse(source)?;
    let mut values = Vec::with_capacity(grid.n_levels() * grid.n_nodes());
    for l in 0..grid.n_levels() {
        let t = grid.time(l);
        for n in 0..grid.n_nodes() {
            values.push(e.eval(&grid.coord(n), t)?);
        }
    }
    SpaceTimeField::from_values(grid.clone(), kind, values)
}

/// `f_u` along the solution with the configured data and no input.
fn background_coefficient(r: &Resolved, order: usize) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let sc = scenario(r)?;
    let (u, _) = sc.solve(None)?;
    let q = r.nonlinearity.bind(&r.grid)?.nth_field(order, &u, FieldKind::Potential);
    Ok((u, q))
}

fn scenario(r: &Resolved) -> Result<Scenario> {
    Scenario::new(r.grid.clone(), r.sigma.clone(), r.nonlinearity.clone(), r.phi.clone(), r.psi.clone())
}

fn oracle(r: &Resolved, noise: f64, seed: u64) -> Result<SyntheticOracle> {
    let o = SyntheticOracle::new(scenario(r)?);
    Ok(if noise > 0.0 { o.with_noise(noise, seed) } else { o })
}

fn write_state_csv(path: &Path, grid: &Grid, cols: &[(&str, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = ["x", "y"][..grid.dim()].to_vec();
    header.extend(cols.iter().map(|c| c.0));
    w.write_record(&header)?;
    for n in 0..grid.n_nodes() {
        let x = grid.coord(n);
        let mut row: Vec<String> = (0..grid.dim()).map(|a| fmt(x[a])).collect();
        row.extend(cols.iter().map(|c| fmt(c.1[n])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn rel_l2(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let w = grid.node_weights();
    let e: f64 = (0..a.len()).map(|i| w[i] * (a[i] - b[i]).powi(2)).sum();
    let n: f64 = (0..a.len()).map(|i| w[i] * b[i] * b[i]).sum();
    if n > 0.0 {
        (e / n).sqrt()
    } else {
        e.sqrt()
    }
}

fn passive_options(reg: f64, max_cg: usize, tol: f64) -> PassiveOptions {
    PassiveOptions { reg, max_cg, tol, ..PassiveOptions::default() }
}

fn record_passive(summary: &mut RunSummary, res: &PassiveResult) {
    summary.metrics.insert("cg_iterations".into(), res.cg_iterations as f64);
    summary.metrics.insert("sweeps".into(), res.sweeps as f64);
    summary.metrics.insert("relative_misfit".into(), res.relative_misfit);
    if let Some(e) = res.rel_error {
        summary.metrics.insert("rel_error".into(), e);
    }
    if let Some(c) = res.certificate {
        summary.metrics.insert("certificate".into(), c);
    }
    summary.notes.extend(res.warnings.iter().cloned());
}

fn dispatch(spec: &PipelineSpec, r: &Resolved, seed: u64, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let grid = &r.grid;
    let m = &mut summary.metrics;
    match spec {
        PipelineSpec::Forward { boundary } => {
            let h = boundary.as_deref().map(|b| expr_trace(grid, Subset::Gamma0, b)).transpose()?;
            let sc = scenario(r)?;
            let (u, report) = sc.solve(h.as_ref())?;
            u.write_wfld(&out.join("field.wfld"))?;
            let op = sc.operator()?;
            op.flux_trace(&u, Subset::Gamma0)?.write_csv(&out.join("flux.csv"))?;
            let mut w = csv::Writer::from_path(out.join("energy.csv"))?;
            w.write_record(["t", "energy", "wave_energy"])?;
            let mut we = Vec::new();
            for l in 0..grid.n_levels() {
                let e = wave_energy(&u, &r.sigma, l)?;
                we.push(e);
                w.write_record([fmt(grid.time(l)), fmt(energy(&u, &r.sigma, l)?), fmt(e)])?;
            }
            w.flush()?;
            m.insert("iterations".into(), report.iterations as f64);
            m.insert("max_amplitude".into(), report.max_amplitude);
            if we[0] > 0.0 {
                let drift = we.iter().map(|e| (e - we[0]).abs()).fold(0.0, f64::max) / we[0];
                m.insert("wave_energy_drift".into(), drift);
            }
        }
        PipelineSpec::Passive {} => {
            let rec = passive_dn(&scenario(r)?)?;
            rec.write_dir(&out.join("record"))?;
            m.insert("flux_l2".into(), rec.flux.l2_norm()?);
        }
        PipelineSpec::Active { boundary } => {
            let h = expr_trace(grid, Subset::Gamma0, boundary)?;
            let rec = active_dn(&scenario(r)?, &h)?;
            rec.write_dir(&out.join("record"))?;
            m.insert("flux_l2".into(), rec.flux.l2_norm()?);
        }
        PipelineSpec::Stability { pairs, modes } => {
            let (_, q) = background_coefficient(r, 1)?;
            let problem = PassiveProblem { grid: grid.clone(), sigma: r.sigma.clone(), nonlinearity: r.nonlinearity.clone(), dirichlet: None };
            let probe = stability_probe(&problem, Some(&q), *pairs, *modes, seed)?;
            let mut w = csv::Writer::from_path(out.join("ratios.csv"))?;
            w.write_record(["pair", "ratio"])?;
            for (k, v) in probe.ratios.iter().enumerate() {
                w.write_record([k.to_string(), fmt(*v)])?;
            }
            w.flush()?;
            m.insert("spread".into(), probe.spread);
        }
        PipelineSpec::Control { penalty, tol, max_cg } => {
            let (_, q) = background_coefficient(r, 1)?;
            let op = WaveOperator::new(grid.clone(), r.sigma.clone())?;
            let z = vec![0.0; grid.n_nodes()];
            let res = hum_control(
                &op,
                ControlProblem { potential: Some(&q), source: None, phi: &r.phi, psi: &r.psi, target: (&z, &z) },
                HumOptions { penalty: *penalty, tol: *tol, max_cg: *max_cg },
            )?;
            res.control.write_csv(&out.join("control.csv"))?;
            res.write_log(&out.join("cg_log.csv"))?;
            m.insert("cg_iterations".into(), res.cg_iterations as f64);
            m.insert("terminal_error".into(), res.terminal_error);
            m.insert("initial_energy".into(), res.initial_energy);
            summary.notes.extend(res.flags.iter().cloned());
        }
        PipelineSpec::Runge { window, target, sizes, tol } => {
            let (_, q) = background_coefficient(r, 1)?;
            let op = WaveOperator::new(grid.clone(), r.sigma.clone())?;
            let v = expr_field(grid, FieldKind::Solution, target)?;
            let mut w = csv::Writer::from_path(out.join("runge.csv"))?;
            w.write_record(["m", "basis_size", "rel_error", "reached"])?;
            for &size in sizes {
                let res = runge_approximate(&op, Some(&q), &v, (window[0], window[1]), size, *tol)?;
                w.write_record([size.to_string(), res.basis_size.to_string(), fmt(res.rel_error), res.reached.to_string()])?;
                m.insert(format!("rel_error_{}", res.basis_size), res.rel_error);
            }
            w.flush()?;
        }
        PipelineSpec::Cgo { x0, window, taus, cells_per_tau, sign, harmonic, potential } => {
            let table = cgo_table(grid, x0, *window, taus, *cells_per_tau, *sign, *harmonic, potential.as_deref())?;
            table.write_csv(&out.join("decay.csv"))?;
            m.insert("decreasing".into(), if table.decreasing { 1.0 } else { 0.0 });
            for row in &table.rows {
                m.insert(format!("remainder_tau_{}", row.tau), row.remainder_l2);
            }
        }
        PipelineSpec::Linearize { eps, scheme, index, probes } => {
            let rows = linearization_ladder(r, eps, *scheme, index, *probes)?;
            let mut w = csv::Writer::from_path(out.join("linearize.csv"))?;
            w.write_record(["eps", "rel_error"])?;
            for (e, err) in &rows {
                w.write_record([fmt(*e), fmt(*err)])?;
            }
            w.flush()?;
            m.insert("slope".into(), loglog_slope(&rows));
        }
        PipelineSpec::RecoverQ(spec) => {
            spec.check_keys("recover-q")?;
            let (_, q) = background_coefficient(r, 1)?;
            let o = oracle(r, spec.noise, seed)?;
            let res = recover_potential(&o, &r.sigma, &spec.stencil(grid, 1, 1e-3)?, &spec.basis(grid)?, spec.reg)?.with_truth(q)?;
            res.write(out)?;
            recovery_metrics(m, &res);
        }
        PipelineSpec::RecoverTaylor(spec) => {
            spec.check_keys("recover-taylor")?;
            let k = spec.order.unwrap_or(2);
            let o = oracle(r, spec.noise, seed)?;
            let basis = spec.basis(grid)?;
            let mut lower = vec![recover_potential(&o, &r.sigma, &spec.stencil(grid, 1, 1e-3)?, &basis, spec.reg).map_err(|e| e.in_stage("potential"))?.recovered];
            let mut last = None;
            for j in 2..=k {
                let st = spec.stencil(grid, j, 1e-2)?;
                let res = recover_taylor_coefficient(&o, &r.sigma, j, &lower, &st, &basis, spec.reg).map_err(|e| e.in_stage(format!("taylor-{j}")))?;
                lower.push(res.recovered.clone());
                last = Some(res);
            }
            let (_, truth) = background_coefficient(r, k)?;
            let res = last.ok_or_else(|| Error::Config("recover-taylor needs order >= 2".into()))?.with_truth(truth)?;
            res.write(out)?;
            recovery_metrics(m, &res);
        }
        PipelineSpec::RecoverInitial { mode, reg, max_cg, tol, t_star, eps, tail } => {
            let opts = passive_options(*reg, *max_cg, *tol);
            let (phi, psi, res) = match mode {
                RecoveryMode::Passive => {
                    let rec = passive_dn(&scenario(r)?)?;
                    let problem = PassiveProblem { grid: grid.clone(), sigma: r.sigma.clone(), nonlinearity: r.nonlinearity.clone(), dirichlet: None };
                    let mut res = recover_initial_passive(&problem, &rec.flux, &opts)?;
                    let gap = flux_gap(&problem, &res.phi, &res.psi, &rec.flux, opts.solve)?;
                    res.certify(grid, (&r.phi, &r.psi), gap)?;
                    (res.phi.clone(), res.psi.clone(), res)
                }
                RecoveryMode::Active => {
                    let ts = match t_star {
                        Some(t) => *t,
                        None => minimal_time(grid, grid.x0().ok_or_else(|| Error::Config("active recovery needs grid.x0 or t_star".into()))?)?,
                    };
                    let e = eps.unwrap_or(0.2);
                    let after = tail.as_ref().map(|t| t.build()).transpose()?.unwrap_or_else(Nonlinearity::zero);
                    let truth = Nonlinearity::spliced(r.nonlinearity.clone(), after, ts + e);
                    let sc = Scenario::new(grid.clone(), r.sigma.clone(), truth, r.phi.clone(), r.psi.clone())?;
                    let mut o = ActiveOptions::new(ts, e);
                    o.passive = opts;
                    let res = recover_initial_active(&SyntheticOracle::new(sc), &r.sigma, &r.nonlinearity, &o)?;
                    res.control.write_csv(&out.join("control.csv"))?;
                    m.insert("outer_iterations".into(), res.outer_iterations as f64);
                    m.insert("post_window_flux".into(), res.post_window_flux);
                    (res.phi, res.psi, res.passive)
                }
            };
            write_state_csv(&out.join("recovered.csv"), grid, &[("phi", &phi), ("psi", &psi), ("phi_true", &r.phi), ("psi_true", &r.psi)])?;
            let mut w = csv::Writer::from_path(out.join("objective.csv"))?;
            w.write_record(["iteration", "objective"])?;
            for (k, v) in res.objective_history.iter().enumerate() {
                w.write_record([k.to_string(), fmt(*v)])?;
            }
            w.flush()?;
            record_passive(summary, &res);
            summary.metrics.insert("phi_rel_l2_error".into(), rel_l2(grid, &phi, &r.phi));
        }
        PipelineSpec::Simultaneous(spec) => {
            spec.check_keys("simultaneous")?;
            let max_order = spec.max_order.unwrap_or(2);
            let o = oracle(r, spec.noise, seed)?;
            let higher = if max_order >= 2 {
                let st = spec.stencil(grid, max_order, 1e-2)?;
                Some(st.clone().with_eps(spec.higher_eps.unwrap_or(1e-2))?)
            } else {
                None
            };
            let config = SimultaneousConfig {
                stencil: spec.stencil(grid, 1, 1e-3)?,
                higher_stencil: higher,
                basis: spec.basis(grid)?,
                max_order,
                reg: spec.reg,
                passive: PassiveOptions::default(),
            };
            let res = simultaneous_recover(&o, &r.sigma, &config)?;
            let (_, q) = background_coefficient(r, 1)?;
            let q_err = res.coefficients[0].clone().with_truth(q)?.rel_l2_error.unwrap_or(f64::NAN);
            for (k, c) in res.coefficients.iter().enumerate() {
                c.write(&out.join(format!("order_{}", k + 1)))?;
            }
            write_state_csv(&out.join("recovered.csv"), grid, &[("phi", &res.phi), ("psi", &res.psi), ("phi_true", &r.phi), ("psi_true", &r.psi)])?;
            let m = &mut summary.metrics;
            m.insert("q_rel_l2_error".into(), q_err);
            m.insert("phi_rel_l2_error".into(), rel_l2(grid, &res.phi, &r.phi));
            summary.notes.extend(res.notes.iter().cloned());
        }
        PipelineSpec::Nonuniqueness { collar } => {
            let demo = nonuniqueness_demo(grid, &r.sigma, *collar)?;
            for (k, rec) in demo.passive.iter().enumerate() {
                rec.write_dir(&out.join(format!("system_{}", k + 1)))?;
            }
            write_state_csv(&out.join("initial.csv"), grid, &[("phi_1", &demo.scenarios[0].phi), ("phi_2", &demo.scenarios[1].phi)])?;
            m.insert("flux_norm_1".into(), demo.flux_norms[0]);
            m.insert("flux_norm_2".into(), demo.flux_norms[1]);
            m.insert("initial_distance".into(), demo.initial_distance);
            m.insert("source_distance".into(), demo.source_distance);
        }
        PipelineSpec::Suite { .. } => unreachable!("handled by run_experiment"),
    }
    Ok(())
}

fn recovery_metrics(m: &mut BTreeMap<String, f64>, res: &crate::inversion::RecoveryResult) {
    if let Some(e) = res.rel_l2_error {
        m.insert("rel_l2_error".into(), e);
    }
    m.insert("condition".into(), res.diagnostics.condition);
    m.insert("relative_misfit".into(), res.diagnostics.relative_misfit);
    m.insert("iterations".into(), res.diagnostics.iterations as f64);
    m.insert("cancellation_ratio".into(), res.diagnostics.cancellation_ratio);
}

#[allow(clippy::too_many_arguments)]
fn cgo_table(
    grid: &Grid,
    x0: &[f64],
    window: [f64; 2],
    taus: &[f64],
    cells_per_tau: f64,
    sign: f64,
    harmonic: u32,
    potential: Option<&str>,
) -> Result<crate::cgo::DecayTable> {
    let spec = LadderSpec { extents: grid.extents().to_vec(), window: (window[0], window[1]), cells_per_tau, cfl: grid.cfl_factor() };
    let q = potential.map(Expr::parse).transpose()?;
    let qf = |x: &crate::geometry::Point, t: f64| q.as_ref().map_or(0.0, |e| e.eval(x, t).unwrap_or(f64::NAN));
    let mut params = CgoParams::new(taus[0], sign, x0);
    params.harmonic = harmonic;
    remainder_decay_table(&spec, &qf, taus, &params)
}

/// Relative error of the finite-difference linearization against the
/// linearized equations, one row per step size.
pub fn linearization_ladder(r: &Resolved, eps: &[f64], scheme: Option<crate::inversion::Scheme>, index: &[usize], probes: usize) -> Result<Vec<(f64, f64)>> {
    let grid = &r.grid;
    if !(1..=2).contains(&index.len()) {
        return Err(Error::Config("linearize supports one or two direction indices".into()));
    }
    let dirs = probe_directions(grid, probes, 1, grid.t_final())?;
    if let Some(&bad) = index.iter().find(|&&i| i >= dirs.len()) {
        return Err(Error::Config(format!("direction index {bad} out of range ({} directions)", dirs.len())));
    }
    let sc = scenario(r)?;
    let (u, q) = background_coefficient(r, 1)?;
    let v: Vec<SpaceTimeField> = index.iter().map(|&i| solve_linear(grid, &r.sigma, Some(&q), None, Some(&dirs[i]), None, None)).collect::<Result<_>>()?;
    let exact = if index.len() == 1 {
        v[0].clone()
    } else {
        let fuu = r.nonlinearity.bind(grid)?.nth_field(2, &u, FieldKind::Potential);
        let mut src = SpaceTimeField::zeros(grid.clone(), FieldKind::Source);
        for (k, s) in src.values_mut().iter_mut().enumerate() {
            *s = -fuu.values()[k] * v[0].values()[k] * v[1].values()[k];
        }
        solve_linear(grid, &r.sigma, Some(&q), Some(&src), None, None, None)?
    };
    let norm = l2_norm(&exact, Region::SpaceTime)?;
    let mut rows = Vec::new();
    for &e in eps {
        let mut st = LinearizationStencil::new(dirs.clone(), e, index.len())?;
        if let Some(s) = scheme {
            st = st.with_scheme(s);
        }
        let d = fd_linearize(&sc, &st, index)?;
        let err = l2_norm(&d.sub(&exact)?, Region::SpaceTime)?;
        rows.push((e, if norm > 0.0 { err / norm } else { err }));
    }
    Ok(rows)
}

/// Least-squares slope of `log err` against `log eps`.
pub fn loglog_slope(rows: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.0 > 0.0 && r.1 > 0.0).map(|r| (r.0.ln(), r.1.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub dt: f64,
    pub error: f64,
    /// `log(e_prev / e) / log(h_prev / h)`; NaN on the first row.
    pub observed_order: f64,
}

pub fn write_convergence(rows: &[ConvergenceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["nx", "dt", "error", "observed_order"])?;
    for r in rows {
        w.write_record([r.nx.to_string(), fmt(r.dt), fmt(r.error), fmt(r.observed_order)])?;
    }
    w.flush()?;
    Ok(())
}

fn with_orders(mut rows: Vec<ConvergenceRow>, h: &[f64]) -> Vec<ConvergenceRow> {
    for i in 1..rows.len() {
        rows[i].observed_order = (rows[i - 1].error / rows[i].error).ln() / (h[i - 1] / h[i]).ln();
    }
    rows
}

/// Refines the config's grid over `levels` (cell counts along the first axis,
/// or `tau` values for the cgo pipeline) and tabulates the error per level.
pub fn convergence_study(loaded: &LoadedConfig, levels: &[usize]) -> Result<Vec<ConvergenceRow>> {
    if levels.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two levels".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("levels must be increasing".into()));
    }
    let cfg = &loaded.config;
    if let PipelineSpec::Cgo { x0, window, cells_per_tau, sign, harmonic, potential, .. } = &cfg.pipeline {
        let grid = cfg.grid.build()?;
        let taus: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
        let table = cgo_table(&grid, x0, *window, &taus, *cells_per_tau, *sign, *harmonic, potential.as_deref())?;
        let mut rows = Vec::new();
        let mut h = Vec::new();
        for row in &table.rows {
            let dx = (grid.extents()[0][1] - grid.extents()[0][0]) / row.nx as f64;
            let dxmin = grid.extents().iter().map(|e| (e[1] - e[0]) / (cells_per_tau * row.tau * (e[1] - e[0])).round()).fold(f64::INFINITY, f64::min);
            let nt = ((window[1] - window[0]) / (grid.cfl_factor() * dxmin) - 1e-9).ceil();
            rows.push(ConvergenceRow { nx: row.nx, dt: (window[1] - window[0]) / nt, error: row.remainder_l2, observed_order: f64::NAN });
            h.push(dx);
        }
        return Ok(with_orders(rows, &h));
    }
    let spec = &cfg.grid;
    let refine = |nx0: usize| -> Result<Arc<Grid>> {
        let scale = nx0 as f64 / spec.nx[0] as f64;
        let nx: Vec<usize> = spec.nx.iter().map(|&n| (n as f64 * scale).round() as usize).collect();
        let nt = (spec.nt as f64 * scale).ceil() as usize;
        let mut s = spec.clone();
        s.nx = nx;
        s.nt = nt;
        let mut g = s.build()?;
        if cfg.gamma0 == crate::config::Gamma0Choice::All {
            g = g.with_gamma0_faces(&g.faces());
        }
        Ok(Arc::new(g))
    };
    let resolve_on = |grid: Arc<Grid>| -> Result<Resolved> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sigma = Arc::new(cfg.sigma.build(&grid)?);
        let nonlinearity = cfg.nonlinearity.as_ref().map(|s| s.build()).transpose()?.unwrap_or_else(Nonlinearity::zero);
        let phi = cfg.initial.phi.build(&grid, &mut rng)?;
        let psi = cfg.initial.psi.build(&grid, &mut rng)?;
        Ok(Resolved { grid, sigma, nonlinearity, phi, psi })
    };
    let mut rows = Vec::new();
    let mut h = Vec::new();
    match &cfg.pipeline {
        PipelineSpec::Forward { boundary: None } => {
            let exact = exact_eigenmode(cfg)?;
            let mut finals = Vec::new();
            for &l in levels {
                let r = resolve_on(refine(l)?)?;
                let (u, _) = scenario(&r)?.solve(None)?;
                let err = match &exact {
                    Some(f) => (0..r.grid.n_levels())
                        .flat_map(|lv| (0..r.grid.n_nodes()).map(move |n| (lv, n)))
                        .map(|(lv, n)| (u.at(lv, n) - f(&r.grid.coord(n), r.grid.time(lv))).abs())
                        .fold(0.0, f64::max),
                    None => f64::NAN,
                };
                rows.push(ConvergenceRow { nx: l, dt: r.grid.dt(), error: err, observed_order: f64::NAN });
                h.push(r.grid.dx()[0]);
                finals.push((r.grid.clone(), u.level(r.grid.nt()).to_vec()));
            }
            if exact.is_none() {
                // self-convergence against the finest level at shared nodes
                let (fg, fu) = finals.last().expect("levels").clone();
                for (k, (g, u)) in finals.iter().enumerate() {
                    let ratio = fg.nx()[0] / g.nx()[0];
                    if ratio * g.nx()[0] != fg.nx()[0] {
                        return Err(Error::InvalidArgument("self-convergence needs levels dividing the finest".into()));
                    }
                    let err = (0..g.n_nodes())
                        .map(|n| {
                            let idx = g.multi_index(n);
                            (u[n] - fu[fg.node_at([idx[0] * ratio, idx[1] * ratio])]).abs()
                        })
                        .fold(0.0, f64::max);
                    rows[k].error = err;
                }
                rows.pop();
                h.pop();
            }
        }
        PipelineSpec::RecoverInitial { mode: RecoveryMode::Passive, reg, max_cg, tol, .. } => {
            for &l in levels {
                let r = resolve_on(refine(l)?)?;
                let rec = passive_dn(&scenario(&r)?)?;
                let problem = PassiveProblem { grid: r.grid.clone(), sigma: r.sigma.clone(), nonlinearity: r.nonlinearity.clone(), dirichlet: None };
                let res = recover_initial_passive(&problem, &rec.flux, &passive_options(*reg, *max_cg, *tol))?;
                rows.push(ConvergenceRow { nx: l, dt: r.grid.dt(), error: rel_l2(&r.grid, &res.phi, &r.phi), observed_order: f64::NAN });
                h.push(r.grid.dx()[0]);
            }
        }
        other => return Err(Error::Config(format!("convergence study not available for pipeline `{}`", other.name()))),
    }
    Ok(with_orders(rows, &h))
}

type ExactFn = Box<dyn Fn(&crate::geometry::Point, f64) -> f64>;

/// Closed-form standing wave when the config is an eigenmode of the constant
/// coefficient problem at rest.
fn exact_eigenmode(cfg: &crate::config::ExperimentConfig) -> Result<Option<ExactFn>> {
    use crate::config::{ShapeSpec, SigmaSpec};
    let zero_nl = cfg.nonlinearity.as_ref().map(|s| s.build()).transpose()?.is_none_or(|n| n.is_zero());
    let (ShapeSpec::Eigenmode { mode, amplitude }, ShapeSpec::Zero, SigmaSpec::Constant(c), true) =
        (&cfg.initial.phi, &cfg.initial.psi, &cfg.sigma, zero_nl)
    else {
        return Ok(None);
    };
    let ext = cfg.grid.extents.clone();
    let k: Vec<f64> = mode.iter().zip(&ext).map(|(&m, e)| m as f64 * std::f64::consts::PI / (e[1] - e[0])).collect();
    let omega = (c * k.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let a = *amplitude;
    Ok(Some(Box::new(move |x, t| a * (0..k.len()).map(|i| (k[i] * (x[i] - ext[i][0])).sin()).product::<f64>() * (omega * t).cos())))
}

/// Smallness probe along the first probe direction of the config's grid.
pub fn probe_delta_for(loaded: &LoadedConfig, lo: f64, hi: f64, steps: usize) -> Result<DeltaProbe> {
    let cfg = &loaded.config;
    let r = cfg.resolve(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let dir = probe_directions(&r.grid, 4, 1, r.grid.t_final())?.remove(0);
    probe_delta(&scenario(&r)?, &dir, lo, hi, steps)
}
