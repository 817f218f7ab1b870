//! Initial-data recovery from boundary fluxes: passive least squares with
//! adjoint gradients, the empirical stability probe, and the active pipeline
//! that first steers the state to rest.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{drive_to_zero_then_freeze, observability_ratio, HumOptions};
use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, FieldKind, SpaceTimeField};
use crate::geometry::{minimal_time, Conductivity, Grid, Subset};
use crate::measurement::{MeasurementOracle, Scenario};
use crate::semilinear::{solve_semilinear_bound, Data, Nonlinearity, SolveOptions};
use crate::wave::{h1_l2_norm, l2_norm, LinearInputs, Region, WaveOperator};

/// Known part of a passive problem: everything except `(phi, psi)`.
#[derive(Debug, Clone)]
pub struct PassiveProblem {
    pub grid: Arc<Grid>,
    pub sigma: Arc<Conductivity>,
    pub nonlinearity: Nonlinearity,
    /// Known Dirichlet input; `None` for a purely passive record.
    pub dirichlet: Option<BoundaryTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveOptions {
    pub reg: f64,
    pub max_cg: usize,
    /// Relative preconditioned residual at which CG stops.
    pub tol: f64,
    pub max_sweeps: usize,
    pub solve: SolveOptions,
}

impl Default for PassiveOptions {
    fn default() -> Self {
        PassiveOptions { reg: 1e-8, max_cg: 300, tol: 1e-8, max_sweeps: 10, solve: SolveOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct PassiveResult {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// CG objective `1/2 ||F x - d||^2 + reg/2 ||x||_E^2` per iteration, all sweeps.
    pub objective_history: Vec<f64>,
    pub cg_iterations: usize,
    pub sweeps: usize,
    /// `||flux(phi, psi) - observed|| / ||observed||`.
    pub relative_misfit: f64,
    /// `||(phi^, psi^) - (phi, psi)||_{H1 x L2} / ||flux gap||` when a truth is given.
    pub certificate: Option<f64>,
    pub rel_error: Option<f64>,
    pub warnings: Vec<String>,
}

impl PassiveResult {
    /// Attaches the relative `H1 x L2` error and the stability certificate.
    pub fn certify(&mut self, grid: &Arc<Grid>, truth: (&[f64], &[f64]), flux_gap: f64) -> Result<()> {
        let du: Vec<f64> = self.phi.iter().zip(truth.0).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = self.psi.iter().zip(truth.1).map(|(a, b)| a - b).collect();
        let err = h1_l2_norm(grid, &du, &dv)?;
        let norm = h1_l2_norm(grid, truth.0, truth.1)?;
        self.rel_error = Some(if norm > 0.0 { err / norm } else { err });
        self.certificate = Some(err / flux_gap.max(f64::MIN_POSITIVE));
        Ok(())
    }
}

/// Linear map `(phi, psi) -> flux on Gamma_0` with a frozen potential, its
/// transpose and the energy metric on interior nodes.
struct FluxMap<'a> {
    op: &'a WaveOperator,
    potential: &'a SpaceTimeField,
    interior: Vec<bool>,
    weights: Vec<f64>,
    diag: Vec<f64>,
}

impl<'a> FluxMap<'a> {
    fn new(op: &'a WaveOperator, potential: &'a SpaceTimeField, weights: Vec<f64>) -> FluxMap<'a> {
        let grid = op.grid().clone();
        let nn = grid.n_nodes();
        let interior: Vec<bool> = (0..nn).map(|i| !grid.is_boundary(i)).collect();
        let mut map = FluxMap { op, potential, interior, weights, diag: vec![0.0; nn] };
        // the metric couples only axis neighbours, so parity classes probe its diagonal
        let zero = vec![0.0; nn];
        let dim = grid.dim();
        for color in 0..(1usize << dim) {
            let e: Vec<f64> = (0..nn)
                .map(|i| {
                    let idx = grid.multi_index(i);
                    let c = (0..dim).map(|a| (idx[a] % 2) << a).sum::<usize>();
                    if c == color { 1.0 } else { 0.0 }
                })
                .collect();
            let me = map.metric(&e, &zero).0;
            for i in 0..nn {
                if e[i] == 1.0 {
                    map.diag[i] = me[i];
                }
            }
        }
        map
    }

    fn apply(&self, phi: &[f64], psi: &[f64]) -> Result<BoundaryTrace> {
        let u = self.op.forward(&LinearInputs { potential: Some(self.potential), phi: Some(phi), psi: Some(psi), ..Default::default() })?;
        self.op.flux_trace(&u, Subset::Gamma0)
    }

    /// Gradient of `1/2 ||F x - d||^2_W` in Euclidean coordinates given `F x - d`.
    fn transpose_weighted(&self, r: &BoundaryTrace) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.op.grid();
        let mut wr = r.clone();
        let tw = grid.time_weights(0, grid.nt());
        let np = wr.n_points();
        for (l, w) in tw.iter().enumerate() {
            let row = wr.level_mut(l);
            for k in 0..np {
                row[k] *= w * self.weights[k];
            }
        }
        let mut ubar = vec![0.0; grid.n_levels() * grid.n_nodes()];
        self.op.flux_trace_transpose(&wr, &mut ubar);
        let ct = self.op.transpose(Some(self.potential), &ubar)?;
        Ok((self.mask(ct.phi), self.mask(ct.psi)))
    }

    fn mask(&self, mut v: Vec<f64>) -> Vec<f64> {
        v.iter_mut().zip(&self.interior).for_each(|(x, &i)| if !i { *x = 0.0 });
        v
    }

    fn metric(&self, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mu, mv) = self.op.energy_matrix_apply(u, v);
        (self.mask(mu), self.mask(mv))
    }

    /// Inverse of the energy metric on interior nodes by inner conjugate gradients.
    fn metric_solve(&self, bu: &[f64], bv: &[f64]) -> (Vec<f64>, Vec<f64>) {
        // the velocity block is diagonal
        let w = self.op.grid().node_weights();
        let xv: Vec<f64> = bv.iter().zip(&w).zip(&self.interior).map(|((b, w), &i)| if i { b / w } else { 0.0 }).collect();
        let n = bu.len();
        let diag = &self.diag;
        let zero = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut r = self.mask(bu.to_vec());
        let bnorm = norm(&r);
        if bnorm == 0.0 {
            return (x, xv);
        }
        let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| if *d > 0.0 { r / d } else { 0.0 }).collect();
        let mut p = z.clone();
        let mut rz = dotp(&r, &z);
        for _ in 0..4 * n {
            let ap = self.metric(&p, &zero).0;
            let alpha = rz / dotp(&p, &ap);
            x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
            if norm(&r) <= 1e-13 * bnorm {
                break;
            }
            z = r.iter().zip(diag).map(|(r, d)| if *d > 0.0 { r / d } else { 0.0 }).collect();
            let rz_new = dotp(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        (x, xv)
    }
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn norm(a: &[f64]) -> f64 {
    dotp(a, a).sqrt()
}

/// Preconditioned CG on `(F^T W F + reg M) x = F^T W d` with the energy
/// metric `M` as preconditioner; warm-started from `x0`.
fn cgnr(
    map: &FluxMap<'_>,
    d: &BoundaryTrace,
    x0: (Vec<f64>, Vec<f64>),
    opts: &PassiveOptions,
    history: &mut Vec<f64>,
) -> Result<((Vec<f64>, Vec<f64>), usize)> {
    let reg = opts.reg;
    let normal = |u: &[f64], v: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let f = map.apply(u, v)?;
        let (mut gu, mut gv) = map.transpose_weighted(&f)?;
        let (mu, mv) = map.metric(u, v);
        gu.iter_mut().zip(&mu).for_each(|(g, m)| *g += reg * m);
        gv.iter_mut().zip(&mv).for_each(|(g, m)| *g += reg * m);
        Ok((gu, gv))
    };
    let (bu, bv) = map.transpose_weighted(d)?;
    let dd = d.dot(d)?;
    let (mut xu, mut xv) = (map.mask(x0.0), map.mask(x0.1));
    let (au, av) = normal(&xu, &xv)?;
    let mut ru: Vec<f64> = bu.iter().zip(&au).map(|(b, a)| b - a).collect();
    let mut rv: Vec<f64> = bv.iter().zip(&av).map(|(b, a)| b - a).collect();
    let objective = |xu: &[f64], xv: &[f64], ru: &[f64], rv: &[f64]| {
        // 1/2 x^T A x - b^T x + 1/2 d^T W d with A x = b - r
        0.5 * dd - 0.5 * (dotp(xu, &bu) + dotp(xv, &bv)) - 0.5 * (dotp(xu, ru) + dotp(xv, rv))
    };
    history.push(objective(&xu, &xv, &ru, &rv));
    let (mut zu, mut zv) = map.metric_solve(&ru, &rv);
    let mut rz = dotp(&ru, &zu) + dotp(&rv, &zv);
    let r0 = rz.max(0.0).sqrt();
    let bz = {
        let (zbu, zbv) = map.metric_solve(&bu, &bv);
        (dotp(&bu, &zbu) + dotp(&bv, &zbv)).max(0.0).sqrt()
    };
    if bz == 0.0 || r0 <= opts.tol * bz {
        return Ok(((xu, xv), 0));
    }
    let (mut pu, mut pv) = (zu.clone(), zv.clone());
    let mut iterations = 0;
    for it in 1..=opts.max_cg {
        iterations = it;
        let (qu, qv) = normal(&pu, &pv)?;
        let pq = dotp(&pu, &qu) + dotp(&pv, &qv);
        if !(pq > 0.0) {
            return Err(Error::Stagnation { iteration: it, residual: rz.max(0.0).sqrt() / bz });
        }
        let alpha = rz / pq;
        xu.iter_mut().zip(&pu).for_each(|(x, p)| *x += alpha * p);
        xv.iter_mut().zip(&pv).for_each(|(x, p)| *x += alpha * p);
        ru.iter_mut().zip(&qu).for_each(|(r, q)| *r -= alpha * q);
        rv.iter_mut().zip(&qv).for_each(|(r, q)| *r -= alpha * q);
        history.push(objective(&xu, &xv, &ru, &rv));
        (zu, zv) = map.metric_solve(&ru, &rv);
        let rz_new = dotp(&ru, &zu) + dotp(&rv, &zv);
        let rel = rz_new.max(0.0).sqrt() / bz;
        if rel <= opts.tol {
            break;
        }
        if it >= 10 {
            let old = history[history.len() - 11];
            let now = history[history.len() - 1];
            if old - now <= 1e-12 * old.abs().max(f64::MIN_POSITIVE) && rel > 1e-3 {
                return Err(Error::Stagnation { iteration: it, residual: rel });
            }
        }
        let beta = rz_new / rz;
        rz = rz_new;
        pu.iter_mut().zip(&zu).for_each(|(p, z)| *p = z + beta * *p);
        pv.iter_mut().zip(&zv).for_each(|(p, z)| *p = z + beta * *p);
    }
    Ok(((xu, xv), iterations))
}

/// Least-squares recovery of `(phi, psi)` from the flux on the observation
/// boundary. Nonlinear problems freeze the quotient potential along the
/// current trajectory and re-solve (at most `max_sweeps` sweeps).
pub fn recover_initial_passive(problem: &PassiveProblem, observed: &BoundaryTrace, opts: &PassiveOptions) -> Result<PassiveResult> {
    let grid = &problem.grid;
    if !observed.grid().same_layout(grid) || observed.subset() != Subset::Gamma0 {
        return Err(Error::GridMismatch("observed flux must be a Gamma_0 trace on the problem grid".into()));
    }
    if !(opts.reg >= 0.0) {
        return Err(Error::InvalidArgument(format!("regularization must be non-negative, got {}", opts.reg)));
    }
    let mut warnings = Vec::new();
    if let Some(x0) = grid.x0() {
        let t_star = minimal_time(grid, x0)?;
        if grid.t_final() - grid.t_start() <= t_star {
            let msg = format!("horizon {} does not exceed the minimal time {t_star}: uniqueness not guaranteed", grid.t_final());
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let op = WaveOperator::new(grid.clone(), problem.sigma.clone())?;
    let bound = problem.nonlinearity.bind(grid)?;
    let nn = grid.n_nodes();
    let mut x = (vec![0.0; nn], vec![0.0; nn]);
    let mut traj = SpaceTimeField::zeros(grid.clone(), FieldKind::Solution);
    let mut history = Vec::new();
    let mut cg_total = 0;
    let mut sweeps = 0;
    let affine = problem.nonlinearity.is_affine();
    for sweep in 1..=opts.max_sweeps.max(1) {
        sweeps = sweep;
        let mut pot = SpaceTimeField::zeros(grid.clone(), FieldKind::Potential);
        let mut src = SpaceTimeField::zeros(grid.clone(), FieldKind::Source);
        for l in 0..grid.n_levels() {
            let row = traj.level(l).to_vec();
            for i in 0..nn {
                pot.level_mut(l)[i] = bound.quotient(l, i, row[i]);
                src.level_mut(l)[i] = -bound.eval(l, i, 0.0);
            }
        }
        // affine part: response to the known input and source from rest
        let offset = op.forward(&LinearInputs {
            potential: Some(&pot),
            source: Some(&src),
            dirichlet: problem.dirichlet.as_ref(),
            ..Default::default()
        })?;
        let offset = op.flux_trace(&offset, Subset::Gamma0)?;
        let d = observed.combined(-1.0, &offset)?;
        let map = FluxMap::new(&op, &pot, d.weights().to_vec());
        let (nx, its) = cgnr(&map, &d, x, opts, &mut history).map_err(|e| e.in_stage(format!("sweep {sweep}")))?;
        x = nx;
        cg_total += its;
        if affine {
            break;
        }
        let (u, _) = solve_semilinear_bound(
            &op,
            &bound,
            Data { dirichlet: problem.dirichlet.as_ref(), phi: Some(&x.0), psi: Some(&x.1) },
            opts.solve,
        )
        .map_err(|e| e.in_stage(format!("sweep {sweep} forward solve")))?;
        let change = l2_norm(&u.sub(&traj)?, Region::SpaceTime)?;
        let size = l2_norm(&u, Region::SpaceTime)?;
        traj = u;
        if change <= 1e-6 * size.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let (u, _) = solve_semilinear_bound(
        &op,
        &bound,
        Data { dirichlet: problem.dirichlet.as_ref(), phi: Some(&x.0), psi: Some(&x.1) },
        opts.solve,
    )?;
    let model = op.flux_trace(&u, Subset::Gamma0)?;
    let gap = model.combined(-1.0, observed)?.l2_norm()?;
    let obs_norm = observed.l2_norm()?;
    Ok(PassiveResult {
        phi: x.0,
        psi: x.1,
        objective_history: history,
        cg_iterations: cg_total,
        sweeps,
        relative_misfit: if obs_norm > 0.0 { gap / obs_norm } else { gap },
        certificate: None,
        rel_error: None,
        warnings,
    })
}

/// Flux-gap norm of a recovered pair against an observed record.
pub fn flux_gap(problem: &PassiveProblem, phi: &[f64], psi: &[f64], observed: &BoundaryTrace, solve: SolveOptions) -> Result<f64> {
    let op = WaveOperator::new(problem.grid.clone(), problem.sigma.clone())?;
    let (u, _) = crate::semilinear::solve_semilinear(
        &op,
        &problem.nonlinearity,
        Data { dirichlet: problem.dirichlet.as_ref(), phi: Some(phi), psi: Some(psi) },
        solve,
    )?;
    op.flux_trace(&u, Subset::Gamma0)?.combined(-1.0, observed)?.l2_norm()
}

/// Random smooth initial data: sine modes with decaying random amplitudes.
pub fn random_initial_data(grid: &Grid, modes: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let ext = grid.extents().to_vec();
    let dim = grid.dim();
    let mut draw = |scale: f64| -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 1..=modes {
            for k in 1..=(if dim == 2 { modes } else { 1 }) {
                let a: f64 = rng.gen_range(-1.0..1.0);
                out.push((j, k, scale * a / (j * k) as f64));
            }
        }
        out
    };
    let pm = draw(1.0);
    let vm = draw(std::f64::consts::PI);
    let eval = |m: &[(usize, usize, f64)]| -> Vec<f64> {
        (0..grid.n_nodes())
            .map(|n| {
                let c = grid.coord(n);
                let s = |a: usize, j: usize| (j as f64 * std::f64::consts::PI * (c[a] - ext[a][0]) / (ext[a][1] - ext[a][0])).sin();
                m.iter().map(|&(j, k, a)| a * s(0, j) * if dim == 2 { s(1, k) } else { 1.0 }).sum()
            })
            .collect()
    };
    (eval(&pm), eval(&vm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityProbe {
    /// `||(phi1 - phi2, psi1 - psi2)||_{H1 x L2} / ||flux1 - flux2||` per pair.
    pub ratios: Vec<f64>,
    /// Largest over smallest ratio.
    pub spread: f64,
}

/// Empirical stability constants of the linear passive map over random pairs.
pub fn stability_probe(problem: &PassiveProblem, potential: Option<&SpaceTimeField>, pairs: usize, modes: usize, seed: u64) -> Result<StabilityProbe> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("stability probe needs at least one pair".into()));
    }
    let op = WaveOperator::new(problem.grid.clone(), problem.sigma.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
        .map(|_| {
            let a = random_initial_data(&problem.grid, modes, &mut rng);
            let b = random_initial_data(&problem.grid, modes, &mut rng);
            let du = a.0.iter().zip(&b.0).map(|(x, y)| x - y).collect();
            let dv = a.1.iter().zip(&b.1).map(|(x, y)| x - y).collect();
            (du, dv)
        })
        .collect();
    // the flux of a difference is the difference of fluxes for a linear map
    let obs = observability_ratio(&op, potential, &samples)?;
    let max = obs.ratios.iter().copied().fold(0.0, f64::max);
    let min = obs.ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(StabilityProbe { spread: if min > 0.0 { max / min } else { f64::INFINITY }, ratios: obs.ratios })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveOptions {
    pub t_star: f64,
    pub eps: f64,
    pub hum: HumOptions,
    pub passive: PassiveOptions,
    pub max_outer: usize,
    /// Relative change of the estimate at which the outer loop stops.
    pub tol: f64,
    /// Allowed flux after the switch time, relative to the whole record.
    pub post_window_tol: f64,
}

impl ActiveOptions {
    pub fn new(t_star: f64, eps: f64) -> ActiveOptions {
        ActiveOptions {
            t_star,
            eps,
            hum: HumOptions::default(),
            passive: PassiveOptions::default(),
            max_outer: 6,
            tol: 1e-3,
            post_window_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActiveResult {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub control: BoundaryTrace,
    pub outer_iterations: usize,
    /// Relative change of the estimate per outer iteration.
    pub changes: Vec<f64>,
    /// Observed flux after the switch time over the whole observed flux.
    pub post_window_flux: f64,
    pub passive: PassiveResult,
}

fn post_window_ratio(flux: &BoundaryTrace, switch_level: usize) -> Result<f64> {
    let total = flux.l2_norm()?;
    if total == 0.0 {
        return Ok(0.0);
    }
    let grid = flux.grid();
    let tw = grid.time_weights(switch_level, grid.nt());
    let np = flux.n_points();
    let mut s = 0.0;
    for (l, w) in (switch_level..=grid.nt()).zip(tw) {
        for k in 0..np {
            s += w * flux.weights()[k] * flux.at(l, k).powi(2);
        }
    }
    Ok(s.sqrt() / total)
}

/// Active recovery: the part of the nonlinearity active up to
/// `t_star + eps` is known; the rest is not. Each outer iteration steers the
/// current estimate to rest at the switch time, queries the oracle with that
/// control, and re-solves the passive problem on the part of the record
/// before the switch time. Steering models the unknown tail by zero.
pub fn recover_initial_active(
    oracle: &dyn MeasurementOracle,
    sigma: &Arc<Conductivity>,
    known: &Nonlinearity,
    opts: &ActiveOptions,
) -> Result<ActiveResult> {
    let grid = oracle.grid().clone();
    let t_switch = opts.t_star + opts.eps;
    if !(opts.eps > 0.0) || t_switch >= grid.t_final() {
        return Err(Error::InvalidArgument(format!("switch time {t_switch} must lie inside the horizon")));
    }
    let model = Nonlinearity::spliced(known.clone(), Nonlinearity::zero(), t_switch);
    let nn = grid.n_nodes();
    let mut est = (vec![0.0; nn], vec![0.0; nn]);
    let mut changes = Vec::new();
    let mut last = None;
    for it in 1..=opts.max_outer.max(1) {
        let scenario = Scenario::new(grid.clone(), sigma.clone(), model.clone(), est.0.clone(), est.1.clone())?;
        let freeze = drive_to_zero_then_freeze(&scenario, opts.t_star, opts.eps, opts.hum).map_err(|e| e.in_stage(format!("control {it}")))?;
        let record = oracle.active(&freeze.control).map_err(|e| e.in_stage(format!("measurement {it}")))?;
        // only the record up to the switch time is explained by the known part
        let n = freeze.switch_level;
        let observed = record.flux.window(0, n)?;
        let problem = PassiveProblem {
            grid: observed.grid().clone(),
            sigma: sigma.clone(),
            nonlinearity: known.clone(),
            dirichlet: Some(freeze.control.window(0, n)?),
        };
        let res = recover_initial_passive(&problem, &observed, &opts.passive).map_err(|e| e.in_stage(format!("inversion {it}")))?;
        let du: Vec<f64> = res.phi.iter().zip(&est.0).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = res.psi.iter().zip(&est.1).map(|(a, b)| a - b).collect();
        let change = h1_l2_norm(&grid, &du, &dv)?;
        let size = h1_l2_norm(&grid, &res.phi, &res.psi)?;
        let rel = if size > 0.0 { change / size } else { change };
        changes.push(rel);
        log::debug!("active outer {it}: relative change {rel:e}");
        est = (res.phi.clone(), res.psi.clone());
        let post = post_window_ratio(&record.flux, freeze.switch_level)?;
        last = Some((freeze.control, res, post));
        if rel <= opts.tol {
            break;
        }
    }
    let (control, passive, post) = last.expect("at least one outer iteration");
    if post > opts.post_window_tol {
        return Err(Error::NotConverged { iterations: changes.len(), residual: post }.in_stage("post-window flux suppression"));
    }
    Ok(ActiveResult { phi: est.0, psi: est.1, control, outer_iterations: changes.len(), changes, post_window_flux: post, passive })
}
