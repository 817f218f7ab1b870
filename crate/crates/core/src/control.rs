//! Observability ratios, penalized HUM boundary control and the Runge
//! approximation by boundary-control least squares.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{fmt, BoundaryTrace, FieldKind, SpaceTimeField};
use crate::geometry::{minimal_time, Grid, Subset};
use crate::measurement::Scenario;
use crate::semilinear::{Data, solve_semilinear_bound};
use crate::wave::{
    field_dot, h1_l2_norm, state_energy, leapfrog_state, leapfrog_state_transpose, window_levels, LinearInputs, WaveOperator,
};

/// Observability ratios `||(phi, psi)||_{H^1 x L^2} / ||flux||_{L^2(Gamma_0 x (0,T))}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observability {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Indices of samples whose flux vanished (ratio `+inf`).
    pub failures: Vec<usize>,
}

/// Fluxes at or below this size count as vanishing.
pub const ZERO_FLUX: f64 = 1e-10;

pub fn observability_ratio(
    op: &WaveOperator,
    potential: Option<&SpaceTimeField>,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<Observability> {
    let grid = op.grid();
    let mut ratios = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for (k, (phi, psi)) in samples.iter().enumerate() {
        let data = h1_l2_norm(grid, phi, psi)?;
        if data == 0.0 {
            return Err(Error::InvalidArgument(format!("observability sample {k} is zero")));
        }
        let u = op.forward(&LinearInputs { potential, phi: Some(phi), psi: Some(psi), ..Default::default() })?;
        let flux = op.flux_trace(&u, Subset::Gamma0)?.l2_norm()?;
        if flux <= ZERO_FLUX {
            failures.push(k);
            ratios.push(f64::INFINITY);
        } else {
            ratios.push(data / flux);
        }
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(Observability { ratios, max_ratio, failures })
}

/// Settings for [`hum_control`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumOptions {
    pub penalty: f64,
    pub tol: f64,
    pub max_cg: usize,
}

impl Default for HumOptions {
    fn default() -> Self {
        HumOptions { penalty: 1e6, tol: 1e-12, max_cg: 200 }
    }
}

/// A flat functional below this relative residual counts as converged.
pub const STAGNATION_RESIDUAL: f64 = 1e-3;

/// One CG log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStep {
    pub iteration: usize,
    pub functional: f64,
    pub terminal_error: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct ControlResult {
    /// Dirichlet control on the observation boundary.
    pub control: BoundaryTrace,
    /// Energy of the achieved-minus-target terminal state.
    pub terminal_error: f64,
    /// Energy of the initial state.
    pub initial_energy: f64,
    pub cg_iterations: usize,
    /// Values of the penalized functional, one per iteration (index 0 is the zero control).
    pub residual_history: Vec<f64>,
    pub log: Vec<CgStep>,
    pub flags: Vec<String>,
}

impl ControlResult {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "functional", "terminal_error", "residual"])?;
        for s in &self.log {
            w.write_record(&[s.iteration.to_string(), fmt(s.functional), fmt(s.terminal_error), fmt(s.residual)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Data of a linear control problem: steer `(phi, psi)` to `target` at the
/// grid's final time with Dirichlet control on the observation boundary.
#[derive(Debug, Clone, Copy)]
pub struct ControlProblem<'a> {
    pub potential: Option<&'a SpaceTimeField>,
    pub source: Option<&'a SpaceTimeField>,
    pub phi: &'a [f64],
    pub psi: &'a [f64],
    pub target: (&'a [f64], &'a [f64]),
}

struct HumMaps<'a> {
    op: &'a WaveOperator,
    potential: Option<&'a SpaceTimeField>,
    gamma0: Vec<usize>,
    /// Position of each observation node among all boundary nodes.
    bpos: Vec<usize>,
    weights: Vec<f64>,
}

impl HumMaps<'_> {
    fn trace(&self, x: &[f64], level0: Option<&[f64]>) -> BoundaryTrace {
        let grid = self.op.grid();
        let mut h = BoundaryTrace::dirichlet(grid.clone(), Subset::Gamma0);
        let ng = self.gamma0.len();
        if let Some(l0) = level0 {
            h.level_mut(0).copy_from_slice(l0);
        }
        for n in 1..=grid.nt() {
            h.level_mut(n).copy_from_slice(&x[(n - 1) * ng..n * ng]);
        }
        h
    }

    fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.trace(x, None);
        let u = self.op.forward(&LinearInputs { potential: self.potential, dirichlet: Some(&h), ..Default::default() })?;
        Ok(leapfrog_state(&u))
    }

    fn adjoint(&self, yu: &[f64], yv: &[f64]) -> Result<Vec<f64>> {
        let grid = self.op.grid();
        let nn = grid.n_nodes();
        let mut ubar = vec![0.0; grid.n_levels() * nn];
        leapfrog_state_transpose(grid, yu, yv, &mut ubar);
        let ct = self.op.transpose(self.potential, &ubar)?;
        let nb = self.op.boundary_nodes().len();
        let ng = self.gamma0.len();
        let mut out = vec![0.0; grid.nt() * ng];
        for n in 1..=grid.nt() {
            for k in 0..ng {
                out[(n - 1) * ng + k] = ct.dirichlet[n * nb + self.bpos[k]];
            }
        }
        Ok(out)
    }
}

fn dotw(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Penalized HUM: minimizes
/// `1/2 ||h||^2 + penalty/2 ||(u(T), u_t(T)) - target||_E^2`
/// over controls on the observation boundary by conjugate gradients,
/// with gradients from the exact discrete adjoint.
pub fn hum_control(op: &WaveOperator, problem: ControlProblem<'_>, opts: HumOptions) -> Result<ControlResult> {
    let grid = op.grid().clone();
    if let Some(x0) = grid.x0() {
        let tstar = minimal_time(&grid, x0)?;
        if grid.t_final() < tstar {
            log::warn!("control horizon {} is below the minimal time {tstar:.4}", grid.t_final());
        }
    }
    let gamma0 = grid.nodes_in(Subset::Gamma0);
    if gamma0.is_empty() {
        return Err(Error::EmptyRegion("no observation boundary for the control".into()));
    }
    let bpos: Vec<usize> = gamma0.iter().map(|n| op.boundary_nodes().binary_search(n).expect("boundary node")).collect();
    let ng = gamma0.len();
    let xw = BoundaryTrace::dirichlet(grid.clone(), Subset::Gamma0).weights().to_vec();
    let tw = grid.time_weights(0, grid.nt());
    let mut weights = vec![0.0; grid.nt() * ng];
    for n in 1..=grid.nt() {
        for k in 0..ng {
            weights[(n - 1) * ng + k] = tw[n] * xw[k];
        }
    }
    let maps = HumMaps { op, potential: problem.potential, gamma0, bpos, weights };

    // Uncontrolled terminal mismatch, with the level-0 boundary value fixed by phi.
    let l0: Vec<f64> = maps.gamma0.iter().map(|&n| problem.phi[n]).collect();
    let h0 = maps.trace(&vec![0.0; grid.nt() * ng], Some(&l0));
    let u0 = op.forward(&LinearInputs {
        potential: problem.potential,
        source: problem.source,
        dirichlet: Some(&h0),
        phi: Some(problem.phi),
        psi: Some(problem.psi),
    })?;
    let (su, sv) = leapfrog_state(&u0);
    let mut mu: Vec<f64> = su.iter().zip(problem.target.0).map(|(a, b)| a - b).collect();
    let mut mv: Vec<f64> = sv.iter().zip(problem.target.1).map(|(a, b)| a - b).collect();
    let initial_energy = state_energy(op, problem.phi, problem.psi);

    let p = opts.penalty;
    let energy_of = |mu: &[f64], mv: &[f64]| state_energy(op, mu, mv);
    let (gu, gv) = op.energy_matrix_apply(&mu, &mv);
    let b: Vec<f64> = maps.adjoint(&gu, &gv)?.into_iter().map(|v| -p * v).collect();

    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&maps.weights).map(|(r, w)| r / w).collect();
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let rz0 = rz;
    let mut log = Vec::new();
    let functional = |x: &[f64], mu: &[f64], mv: &[f64]| 0.5 * dotw(&maps.weights, x, x) + p * energy_of(mu, mv);
    log.push(CgStep { iteration: 0, functional: functional(&x, &mu, &mv), terminal_error: energy_of(&mu, &mv), residual: 1.0 });
    let mut iterations = 0;
    if rz0 > 0.0 {
        for it in 1..=opts.max_cg {
            let (lu, lv) = maps.forward(&d)?;
            let (mlu, mlv) = op.energy_matrix_apply(&lu, &lv);
            let ltml = maps.adjoint(&mlu, &mlv)?;
            let bd: Vec<f64> = (0..n).map(|i| maps.weights[i] * d[i] + p * ltml[i]).collect();
            let dbd = dot(&d, &bd);
            if dbd <= 0.0 {
                break;
            }
            let alpha = rz / dbd;
            for i in 0..n {
                x[i] += alpha * d[i];
                r[i] -= alpha * bd[i];
            }
            for i in 0..mu.len() {
                mu[i] += alpha * lu[i];
                mv[i] += alpha * lv[i];
            }
            z = r.iter().zip(&maps.weights).map(|(r, w)| r / w).collect();
            let rz_new = dot(&r, &z);
            let rel = (rz_new.max(0.0) / rz0).sqrt();
            iterations = it;
            log.push(CgStep { iteration: it, functional: functional(&x, &mu, &mv), terminal_error: energy_of(&mu, &mv), residual: rel });
            if rel < opts.tol {
                break;
            }
            if it >= 10 {
                let (j_old, j_new) = (log[it - 10].functional, log[it].functional);
                if j_old - j_new < 1e-3 * j_old {
                    if rel > STAGNATION_RESIDUAL {
                        return Err(Error::Stagnation { iteration: it, residual: rel });
                    }
                    break;
                }
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                d[i] = z[i] + beta * d[i];
            }
        }
    }

    let control = maps.trace(&x, Some(&l0));
    // Recompute the achieved state with a fresh solve rather than the CG recurrence.
    let u = op.forward(&LinearInputs {
        potential: problem.potential,
        source: problem.source,
        dirichlet: Some(&control),
        phi: Some(problem.phi),
        psi: Some(problem.psi),
    })?;
    let (au, av) = leapfrog_state(&u);
    let eu: Vec<f64> = au.iter().zip(problem.target.0).map(|(a, b)| a - b).collect();
    let ev: Vec<f64> = av.iter().zip(problem.target.1).map(|(a, b)| a - b).collect();
    let terminal_error = energy_of(&eu, &ev);
    let mut flags = Vec::new();
    if initial_energy > 0.0 && terminal_error > 0.1 * initial_energy {
        flags.push("likely uncontrollable horizon".to_string());
    }
    let history = log.iter().map(|s| s.functional).collect();
    Ok(ControlResult { control, terminal_error, initial_energy, cg_iterations: iterations, residual_history: history, log, flags })
}

/// Result of [`drive_to_zero_then_freeze`].
#[derive(Debug, Clone)]
pub struct FreezeResult {
    /// Control on the full horizon, zero after the switch time.
    pub control: BoundaryTrace,
    /// Last level of the controlled interval.
    pub switch_level: usize,
    /// HUM result of the final outer sweep.
    pub hum: ControlResult,
    pub sweeps: usize,
}

/// Steers the scenario to rest at `t_star + eps` and switches the control off
/// afterwards. Nonlinear scenarios are handled by an outer loop that freezes
/// the quotient potential along the current trajectory (at most 10 sweeps).
pub fn drive_to_zero_then_freeze(scenario: &Scenario, t_star: f64, eps: f64, opts: HumOptions) -> Result<FreezeResult> {
    let grid = scenario.grid.clone();
    let t_switch = t_star + eps;
    if t_switch <= grid.t_start() || t_switch > grid.t_final() {
        return Err(Error::InvalidArgument(format!("switch time {t_switch} outside the horizon")));
    }
    let n_end = ((t_switch - grid.t_start()) / grid.dt()).round() as usize;
    let short = Arc::new(grid.truncated(n_end)?);
    let op = WaveOperator::new(short.clone(), scenario.sigma.clone())?;
    let bound = scenario.nonlinearity.bind(&short)?;
    let nn = grid.n_nodes();
    let zero = vec![0.0; nn];
    let linear = scenario.nonlinearity.is_affine();

    let mut traj = SpaceTimeField::zeros(short.clone(), FieldKind::Solution);
    let mut result = None;
    let mut sweeps = 0;
    for sweep in 1..=10 {
        sweeps = sweep;
        let mut pot = SpaceTimeField::zeros(short.clone(), FieldKind::Potential);
        let mut src = SpaceTimeField::zeros(short.clone(), FieldKind::Source);
        for l in 0..short.n_levels() {
            let row = traj.level(l).to_vec();
            for i in 0..nn {
                pot.level_mut(l)[i] = bound.quotient(l, i, row[i]);
                src.level_mut(l)[i] = -bound.eval(l, i, 0.0);
            }
        }
        let hum = hum_control(
            &op,
            ControlProblem {
                potential: Some(&pot),
                source: Some(&src),
                phi: &scenario.phi,
                psi: &scenario.psi,
                target: (&zero, &zero),
            },
            opts,
        )?;
        let (u, _) = solve_semilinear_bound(
            &op,
            &bound,
            Data { dirichlet: Some(&hum.control), phi: Some(&scenario.phi), psi: Some(&scenario.psi) },
            scenario.options,
        )?;
        let change = crate::wave::l2_norm(&u.sub(&traj)?, crate::wave::Region::SpaceTime)?;
        let size = crate::wave::l2_norm(&u, crate::wave::Region::SpaceTime)?;
        traj = u;
        result = Some(hum);
        if linear || change <= 1e-8 * size.max(1e-300) {
            break;
        }
    }
    let hum = result.expect("at least one sweep");
    let control = hum.control.extended_to(grid)?;
    Ok(FreezeResult { control, switch_level: n_end, hum, sweeps })
}

/// Cubic B-spline with knots `start, start + h, ..., start + 4h`.
pub fn cubic_bspline(t: f64, start: f64, h: f64) -> f64 {
    let u = (t - start) / h;
    if u <= 0.0 || u >= 4.0 {
        0.0
    } else if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        let v = u - 1.0;
        (1.0 + 3.0 * v + 3.0 * v * v - 3.0 * v * v * v) / 6.0
    } else if u < 3.0 {
        let v = 3.0 - u;
        (1.0 + 3.0 * v + 3.0 * v * v - 3.0 * v * v * v) / 6.0
    } else {
        let v = 4.0 - u;
        v * v * v / 6.0
    }
}

/// Spatial boundary modes: one per boundary node in 1D; per face, the first
/// `modes_per_face` cosines along the face in 2D.
pub fn boundary_modes(grid: &Arc<Grid>, modes_per_face: usize) -> Vec<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for face in grid.faces() {
        let nodes = grid.face_nodes(face);
        if grid.dim() == 1 {
            out.push(vec![(nodes[0], 1.0)]);
            continue;
        }
        let along = 1 - face.axis;
        let [a, b] = grid.extents()[along];
        for k in 0..modes_per_face {
            out.push(
                nodes
                    .iter()
                    .map(|&n| {
                        let s = (grid.coord(n)[along] - a) / (b - a);
                        (n, (k as f64 * std::f64::consts::PI * s).cos())
                    })
                    .collect(),
            );
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RungeResult {
    /// Global solution `V` on the whole grid.
    pub field: SpaceTimeField,
    /// Relative L2 error on the window.
    pub rel_error: f64,
    pub basis_size: usize,
    pub reached: bool,
    pub coefficients: Vec<f64>,
}

/// Boundary inputs `mode(x) * B_j(t)` with `m` cubic B-splines at spacing `t2 / m`
/// whose supports start at `t >= 0`; every input vanishes to second order at `t = 0`.
pub fn runge_basis(grid: &Arc<Grid>, t2: f64, m: usize, modes_per_face: usize) -> Vec<BoundaryTrace> {
    let modes = boundary_modes(grid, modes_per_face);
    let h = (t2 - grid.t_start()) / m as f64;
    let mut out = Vec::new();
    for mode in &modes {
        for j in 0..m {
            let mut tr = BoundaryTrace::dirichlet(grid.clone(), Subset::All);
            let pos: Vec<(usize, f64)> = mode
                .iter()
                .map(|&(node, v)| (tr.points().iter().position(|p| p.node == node).expect("boundary node"), v))
                .collect();
            for l in 0..grid.n_levels() {
                let b = cubic_bspline(grid.time(l), grid.t_start() + j as f64 * h, h);
                if b != 0.0 {
                    let row = tr.level_mut(l);
                    for &(k, v) in &pos {
                        row[k] += v * b;
                    }
                }
            }
            out.push(tr);
        }
    }
    out
}

/// Least-squares fit of a local solution `v` on the window `[t1, t2]` by global
/// solutions with zero Cauchy data driven by the boundary basis of [`runge_basis`].
/// `v` lives on the full grid; only its window levels are used.
pub fn runge_approximate(
    op: &WaveOperator,
    potential: Option<&SpaceTimeField>,
    v: &SpaceTimeField,
    window: (f64, f64),
    m: usize,
    tol: f64,
) -> Result<RungeResult> {
    let grid = op.grid().clone();
    let (t1, t2) = window;
    if !(grid.t_start() < t1 && t1 < t2 && t2 <= grid.t_final() + 1e-12) {
        return Err(Error::InvalidArgument(format!("window ({t1}, {t2}) must lie inside the horizon")));
    }
    v.check_same_grid(&SpaceTimeField::zeros(grid.clone(), FieldKind::Solution))?;
    let (n0, n1) = window_levels(&grid, t1, t2)?;
    let basis = runge_basis(&grid, t2, m, 2);
    let cols: Vec<SpaceTimeField> = basis
        .iter()
        .map(|g| op.forward(&LinearInputs { potential, dirichlet: Some(g), ..Default::default() }))
        .collect::<Result<_>>()?;
    let k = cols.len();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..k {
        for j in 0..=i {
            let g = field_dot(&cols[i], &cols[j], n0, n1)?;
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
        rhs[i] = field_dot(&cols[i], v, n0, n1)?;
    }
    let vv = field_dot(v, v, n0, n1)?;
    let coef = if vv == 0.0 {
        DVector::zeros(k)
    } else {
        let svd = gram.clone().svd(true, true);
        let smax = svd.singular_values.max();
        svd.solve(&rhs, 1e-14 * smax).map_err(|e| Error::InvalidArgument(e.to_string()))?
    };
    let mut field = SpaceTimeField::zeros(grid.clone(), FieldKind::Solution);
    for (c, col) in coef.iter().zip(&cols) {
        field.add_scaled(*c, col)?;
    }
    let err = field_dot(&field.sub(v)?, &field.sub(v)?, n0, n1)?.max(0.0).sqrt();
    let rel_error = if vv > 0.0 { err / vv.sqrt() } else { err };
    let reached = rel_error <= tol;
    if !reached {
        log::warn!("approximation not reached: relative error {rel_error:.3e} with {k} basis inputs");
    }
    Ok(RungeResult { field, rel_error, basis_size: k, reached, coefficients: coef.iter().copied().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_1d, tag_gamma0, Conductivity, Face, Side};
    use std::f64::consts::PI;

    fn op_1d(nx: usize, t: f64, both: bool) -> WaveOperator {
        let g = tag_gamma0(&grid_1d(0.0, 1.0, nx, t, 0.5).unwrap(), &[-0.5]).unwrap();
        let g = if both {
            g.with_gamma0_faces(&[Face { axis: 0, side: Side::Low }, Face { axis: 0, side: Side::High }])
        } else {
            g
        };
        let g = Arc::new(g);
        let s = Arc::new(Conductivity::identity(&g));
        WaveOperator::new(g, s).unwrap()
    }

    fn bump(grid: &Grid, c: f64, w: f64) -> Vec<f64> {
        (0..grid.n_nodes())
            .map(|n| {
                let r = (grid.coord(n)[0] - c) / w;
                if r.abs() < 1.0 {
                    (1.0 - r * r).powi(3)
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn bspline_partition_of_unity() {
        for t in [4.0, 4.3, 5.7, 6.99] {
            let s: f64 = (0..8).map(|j| cubic_bspline(t, j as f64, 1.0)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(cubic_bspline(0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn observability_short_time_fails() {
        let op = op_1d(100, 0.5, false);
        let z = vec![0.0; op.grid().n_nodes()];
        let s = vec![(bump(op.grid(), 0.15, 0.1), z.clone())];
        let obs = observability_ratio(&op, None, &s).unwrap();
        assert_eq!(obs.failures, vec![0]);
        assert!(observability_ratio(&op, None, &[(z.clone(), z)]).is_err());
    }

    #[test]
    fn observability_scale_invariant() {
        let op = op_1d(100, 2.5, false);
        let z = vec![0.0; op.grid().n_nodes()];
        let b = bump(op.grid(), 0.4, 0.2);
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let o = observability_ratio(&op, None, &[(b, z.clone()), (b2, z)]).unwrap();
        assert!(o.failures.is_empty());
        assert!((o.ratios[0] - o.ratios[1]).abs() < 1e-10 * o.ratios[0]);
    }

    #[test]
    fn hum_zero_problem() {
        let op = op_1d(40, 2.5, true);
        let z = vec![0.0; op.grid().n_nodes()];
        let r = hum_control(&op, ControlProblem { potential: None, source: None, phi: &z, psi: &z, target: (&z, &z) }, HumOptions::default())
            .unwrap();
        assert_eq!(r.cg_iterations, 0);
        assert!(r.control.is_zero());
        assert_eq!(r.terminal_error, 0.0);
    }

    #[test]
    fn hum_is_linear_in_data() {
        let op = op_1d(40, 2.5, true);
        let z = vec![0.0; op.grid().n_nodes()];
        let phi: Vec<f64> = (0..op.grid().n_nodes()).map(|n| (PI * op.grid().coord(n)[0]).sin()).collect();
        let phi2: Vec<f64> = phi.iter().map(|v| 3.0 * v).collect();
        let opts = HumOptions::default();
        let run = |phi: &[f64]| hum_control(&op, ControlProblem { potential: None, source: None, phi, psi: &z, target: (&z, &z) }, opts);
        let (a, b) = (run(&phi).unwrap(), run(&phi2).unwrap());
        let diff = b.control.combined(-3.0, &a.control).unwrap().l2_norm().unwrap();
        assert!(diff < 1e-6 * b.control.l2_norm().unwrap(), "{diff} {} {} {}", b.control.l2_norm().unwrap(), a.cg_iterations, b.cg_iterations);
        for w in a.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn hum_short_horizon_is_flagged() {
        let op = op_1d(40, 0.5, true);
        let z = vec![0.0; op.grid().n_nodes()];
        let phi: Vec<f64> = (0..op.grid().n_nodes()).map(|n| (PI * op.grid().coord(n)[0]).sin()).collect();
        let r = hum_control(&op, ControlProblem { potential: None, source: None, phi: &phi, psi: &z, target: (&z, &z) }, HumOptions { max_cg: 60, ..Default::default() });
        match r {
            Ok(r) => {
                assert!(r.terminal_error > 0.1 * r.initial_energy);
                assert!(r.flags.iter().any(|f| f.contains("uncontrollable")));
            }
            Err(e) => assert!(matches!(e, Error::Stagnation { .. })),
        }
    }

    #[test]
    fn runge_exact_and_zero() {
        let op = op_1d(60, 2.0, true);
        let g = op.grid().clone();
        let basis = runge_basis(&g, 2.0, 4, 2);
        assert_eq!(basis.len(), 8);
        let v = op.forward(&LinearInputs { dirichlet: Some(&basis[3]), ..Default::default() }).unwrap();
        let r = runge_approximate(&op, None, &v, (1.2, 2.0), 4, 1e-8).unwrap();
        assert!(r.rel_error < 1e-8, "{}", r.rel_error);
        let z = SpaceTimeField::zeros(g, FieldKind::Solution);
        let r0 = runge_approximate(&op, None, &z, (1.2, 2.0), 4, 1e-8).unwrap();
        assert_eq!(r0.field.max_abs(), 0.0);
    }
}
