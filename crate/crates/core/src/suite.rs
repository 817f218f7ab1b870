//! Built-in acceptance checks behind the `suite` pipeline. Each check runs at
//! desk scale and reports the measured quantity next to its threshold.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cgo::{build_cgo, remainder_decay_table, transport_residual, CgoParams, LadderSpec};
use crate::config::LoadedConfig;
use crate::control::{hum_control, observability_ratio, runge_approximate, ControlProblem, HumOptions};
use crate::error::{Error, Result};
use crate::field::{fmt, ComplexField, FieldKind, SpaceTimeField};
use crate::geometry::{grid_1d, grid_2d, tag_gamma0, Conductivity, Grid};
use crate::inversion::{
    fd_linearize, integral_identity, nonuniqueness_demo, probe_directions, random_initial_data, recover_initial_active,
    recover_initial_passive, recover_potential, recover_taylor_coefficient, simultaneous_recover, stability_probe, ActiveOptions,
    LinearizationStencil, PassiveOptions, PassiveProblem, RecoveryBasis, Scheme, SimultaneousConfig, TestField,
};
use crate::measurement::{passive_dn, Scenario, SyntheticOracle};
use crate::pipelines::{csv_digest, loglog_slope, run_experiment};
use crate::semilinear::{solve_direct, solve_semilinear, Coefficient, Data, Nonlinearity, SolveOptions};
use crate::wave::{h1_l2_norm, l2_norm, solve_linear, wave_energy, LinearInputs, Region, WaveOperator};

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
    pub threshold: &'static str,
    pub seconds: f64,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {}  (need {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.threshold
        )
    }
}

pub const NAMES: [&str; 17] = [
    "forward eigenmode",
    "energy conservation",
    "fixed point vs direct",
    "trivial solution",
    "observability",
    "HUM controllability",
    "Runge approximation",
    "CGO construction",
    "linearization ladder",
    "integral identity",
    "potential recovery",
    "Taylor coefficient",
    "passive initial data",
    "active initial data",
    "simultaneous recovery",
    "non-uniqueness",
    "determinism",
];

const THRESHOLDS: [&str; 17] = [
    "max err <= 5e-3 at nx=200, order in [1.8, 2.2]",
    "drift <= 1e-2",
    "L2(Q) gap <= 1e-5 for s, sin s, s^3",
    "norm <= 1e-12",
    "T=2.5 all finite, T=0.5 flagged",
    "E(T) <= 1e-4 E(0) within 200 iterations",
    "err <= 0.05 at size 32, monotone",
    "transport order in [1.8, 2.2], remainder non-increasing, zero data",
    "slopes 1 +- 0.3 and 2 +- 0.3; mixed O(eps)",
    "|I| <= 1e-8 scale",
    "err <= 0.1; in-span err <= 1e-6",
    "f_uu within 20%; linear <= 1e-6",
    "err <= 5%, spread <= 20",
    "err <= 10%, tails agree within 2%",
    "q within 20%, data within 10%",
    "fluxes <= 1e-10, distance >= 0.1",
    "identical CSV digests",
];

type Outcome = Result<(bool, String)>;

/// Runs the checks listed in `only` (all when empty).
pub fn run_checks(only: &[u8], out: Option<&Path>) -> Result<Vec<Check>> {
    if let Some(bad) = only.iter().find(|&&i| i == 0 || i > 17) {
        return Err(Error::Config(format!("no acceptance criterion {bad}")));
    }
    let mut checks = Vec::new();
    for id in 1..=17u8 {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = match id {
            1 => forward_eigenmode(),
            2 => energy_conservation(),
            3 => fixed_point_vs_direct(),
            4 => trivial_solution(),
            5 => observability(),
            6 => hum(),
            7 => runge(),
            8 => cgo(),
            9 => linearization(),
            10 => identity(),
            11 => potential(),
            12 => taylor(),
            13 => passive(),
            14 => active(),
            15 => simultaneous(),
            16 => nonuniqueness(),
            _ => determinism(out),
        };
        let (passed, measured) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        let k = id as usize - 1;
        let c = Check { id, name: NAMES[k], passed, measured, threshold: THRESHOLDS[k], seconds: start.elapsed().as_secs_f64() };
        log::info!("{}", c.line());
        checks.push(c);
    }
    Ok(checks)
}

/// `id,name,passed,measured,threshold`; timings are left out so reruns match.
pub fn write_table(checks: &[Check], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "name", "passed", "measured", "threshold"])?;
    for c in checks {
        w.write_record([c.id.to_string(), c.name.to_string(), c.passed.to_string(), c.measured.clone(), c.threshold.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn unit(nx: usize, t: f64) -> Arc<Grid> {
    let g = grid_1d(0.0, 1.0, nx, t, 0.5).expect("valid grid");
    Arc::new(g.with_gamma0_faces(&g.faces()))
}

fn right_end(nx: usize, t: f64) -> Arc<Grid> {
    Arc::new(tag_gamma0(&grid_1d(0.0, 1.0, nx, t, 0.5).expect("valid grid"), &[-0.5]).expect("x0 outside"))
}

fn sigma(g: &Grid) -> Arc<Conductivity> {
    Arc::new(Conductivity::identity(g))
}

fn sine(g: &Grid, a: f64) -> Vec<f64> {
    (0..g.n_nodes()).map(|n| a * (PI * g.coord(n)[0]).sin()).collect()
}

fn rel(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let w = grid.node_weights();
    let e: f64 = (0..a.len()).map(|i| w[i] * (a[i] - b[i]).powi(2)).sum();
    let n: f64 = (0..a.len()).map(|i| w[i] * b[i] * b[i]).sum();
    (e / n).sqrt()
}

fn forward_eigenmode() -> Outcome {
    let mut errs = Vec::new();
    for nx in [50, 100, 200] {
        let g = unit(nx, 2.0);
        let op = WaveOperator::new(g.clone(), sigma(&g))?;
        let phi = sine(&g, 1.0);
        let u = op.forward(&LinearInputs { phi: Some(&phi), ..Default::default() })?;
        let mut err: f64 = 0.0;
        for l in 0..g.n_levels() {
            let c = (PI * g.time(l)).cos();
            for n in 0..g.n_nodes() {
                err = err.max((u.at(l, n) - phi[n] * c).abs());
            }
        }
        errs.push((1.0 / nx as f64, err));
    }
    let order = loglog_slope(&errs);
    let ok = errs[2].1 <= 5e-3 && (1.8..=2.2).contains(&order);
    Ok((ok, format!("err {:.3e}, order {order:.3}", errs[2].1)))
}

fn energy_conservation() -> Outcome {
    let g = unit(200, 3.0);
    let s = sigma(&g);
    let op = WaveOperator::new(g.clone(), s.clone())?;
    let phi: Vec<f64> = (0..g.n_nodes()).map(|n| (PI * g.coord(n)[0]).sin() + 0.5 * (3.0 * PI * g.coord(n)[0]).sin()).collect();
    let u = op.forward(&LinearInputs { phi: Some(&phi), ..Default::default() })?;
    let e0 = wave_energy(&u, &s, 0)?;
    let mut drift: f64 = 0.0;
    for l in 0..g.n_levels() {
        drift = drift.max((wave_energy(&u, &s, l)? - e0).abs() / e0);
    }
    Ok((drift <= 1e-2, format!("drift {drift:.3e}")))
}

fn fixed_point_vs_direct() -> Outcome {
    let g = unit(100, 2.0);
    let op = WaveOperator::new(g.clone(), sigma(&g))?;
    let mut worst: f64 = 0.0;
    for (nl, amp) in [(Nonlinearity::linear(1.0), 1.0), (Nonlinearity::sine(1.0), 0.5), (Nonlinearity::cubic(1.0), 0.1)] {
        let phi = sine(&g, amp);
        let data = Data { phi: Some(&phi), ..Default::default() };
        let (u, _) = solve_semilinear(&op, &nl, data, SolveOptions::default())?;
        let v = solve_direct(&op, &nl, data, 1e6)?;
        worst = worst.max(l2_norm(&u.sub(&v)?, Region::SpaceTime)?);
    }
    Ok((worst <= 1e-5, format!("max gap {worst:.3e}")))
}

fn trivial_solution() -> Outcome {
    let g = unit(100, 2.0);
    let op = WaveOperator::new(g.clone(), sigma(&g))?;
    let mut worst: f64 = 0.0;
    for nl in [Nonlinearity::cubic(1.0), Nonlinearity::sine(2.0), Nonlinearity::taylor(vec![0.0.into(), 1.0.into(), (-1.0).into()])] {
        let (u, _) = solve_semilinear(&op, &nl, Data::default(), SolveOptions::default())?;
        worst = worst.max(l2_norm(&u, Region::SpaceTime)?);
    }
    Ok((worst <= 1e-12, format!("norm {worst:.1e}")))
}

fn observability() -> Outcome {
    let long = right_end(100, 2.5);
    let op = WaveOperator::new(long.clone(), sigma(&long))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<_> = (0..20).map(|_| random_initial_data(&long, 4, &mut rng)).collect();
    let obs = observability_ratio(&op, None, &samples)?;
    let finite = obs.failures.is_empty() && obs.ratios.iter().all(|r| r.is_finite());
    let short = right_end(100, 0.5);
    let op = WaveOperator::new(short.clone(), sigma(&short))?;
    let bump: Vec<f64> = (0..short.n_nodes())
        .map(|n| {
            let r = (short.coord(n)[0] - 0.15) / 0.1;
            if r.abs() < 1.0 {
                (1.0 - r * r).powi(3)
            } else {
                0.0
            }
        })
        .collect();
    let flagged = observability_ratio(&op, None, &[(bump, vec![0.0; short.n_nodes()])])?.failures == vec![0];
    Ok((finite && flagged, format!("max ratio {:.3e}, short horizon flagged: {flagged}", obs.max_ratio)))
}

fn hum() -> Outcome {
    let g = unit(100, 2.5);
    let op = WaveOperator::new(g.clone(), sigma(&g))?;
    let z = vec![0.0; g.n_nodes()];
    let phi = sine(&g, 1.0);
    let r = hum_control(&op, ControlProblem { potential: None, source: None, phi: &phi, psi: &z, target: (&z, &z) }, HumOptions::default())?;
    let ratio = r.terminal_error / r.initial_energy;
    Ok((ratio <= 1e-4 && r.cg_iterations <= 200, format!("ratio {ratio:.3e} after {} iterations", r.cg_iterations)))
}

fn runge() -> Outcome {
    let g = tag_gamma0(&grid_1d(0.0, 1.0, 100, 3.2, 0.5)?, &[-0.1])?;
    let g = Arc::new(g.with_gamma0_faces(&g.faces()));
    let op = WaveOperator::new(g.clone(), sigma(&g))?;
    let v = SpaceTimeField::from_fn(g.clone(), FieldKind::Solution, |x, t| (PI * (x[0] - t)).sin());
    let mut errs = Vec::new();
    let mut size = 0;
    for m in [4, 8, 16] {
        let r = runge_approximate(&op, None, &v, (2.4, 3.2), m, 0.05)?;
        errs.push(r.rel_error);
        size = r.basis_size;
    }
    let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
    let last = *errs.last().expect("three sizes");
    Ok((last <= 0.05 && monotone && size == 32, format!("errors {:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2])))
}

fn cgo() -> Outcome {
    let p = CgoParams::new(4.0, 1.0, &[-0.5, 0.5]);
    let res = |n: usize| -> Result<f64> { transport_residual(&grid_2d([0.0, 1.0], [0.0, 1.0], [n, n], 1.0, 0.5)?.with_time_start(1.0), &p) };
    let order = (res(32)? / res(64)?).log2();
    let spec = LadderSpec { extents: vec![[0.0, 1.0], [0.0, 1.0]], window: (1.0, 1.5), cells_per_tau: 4.0, cfl: 0.5 };
    let q = |x: &crate::geometry::Point, _t: f64| (-10.0 * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).exp();
    let table = remainder_decay_table(&spec, &q, &[8.0, 16.0, 32.0], &CgoParams::new(8.0, 1.0, &[-0.5, 0.5]))?;
    let decreasing = table.rows.windows(2).all(|w| w[1].remainder_l2 <= w[0].remainder_l2);
    let g = Arc::new(grid_2d([0.0, 1.0], [0.0, 1.0], [32, 32], 0.5, 0.5)?.with_time_start(1.0));
    let qf = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |x, t| q(x, t));
    let s = build_cgo(&g, Some(&qf), &CgoParams::new(8.0, -1.0, &[-0.5, 0.5]))?;
    let boundary = g.boundary_nodes();
    let zero_data = [&s.remainder.re, &s.remainder.im].iter().all(|part| {
        part.level(0).iter().all(|&v| v == 0.0) && (0..g.n_levels()).all(|l| boundary.iter().all(|&b| part.at(l, b) == 0.0))
    });
    let r: Vec<String> = table.rows.iter().map(|r| format!("{:.2e}", r.remainder_l2)).collect();
    Ok(((1.8..=2.2).contains(&order) && decreasing && zero_data, format!("transport order {order:.3}, remainders {}", r.join(" "))))
}

fn linearization() -> Outcome {
    let g = unit(60, 1.5);
    let s = sigma(&g);
    let sc = Scenario::at_rest(g.clone(), s.clone(), Nonlinearity::taylor(vec![0.0.into(), 0.0.into(), 1.0.into()]));
    let dirs = probe_directions(&g, 3, 1, 1.5)?;
    let v0 = solve_linear(&g, &s, None, None, Some(&dirs[0]), None, None)?;
    let v2 = solve_linear(&g, &s, None, None, Some(&dirs[2]), None, None)?;
    let n0 = l2_norm(&v0, Region::SpaceTime)?;
    let ladder = [4e-2, 2e-2, 1e-2];
    let mut slopes = Vec::new();
    for scheme in [Scheme::Forward, Scheme::Central] {
        let mut rows = Vec::new();
        for e in ladder {
            let st = LinearizationStencil::new(dirs.clone(), e, 1)?.with_scheme(scheme);
            let d = fd_linearize(&sc, &st, &[0])?;
            rows.push((e, l2_norm(&d.sub(&v0)?, Region::SpaceTime)? / n0));
        }
        slopes.push(loglog_slope(&rows));
    }
    let mut src = SpaceTimeField::zeros(g.clone(), FieldKind::Source);
    for (k, x) in src.values_mut().iter_mut().enumerate() {
        *x = -2.0 * v0.values()[k] * v2.values()[k];
    }
    let w = solve_linear(&g, &s, None, Some(&src), None, None, None)?;
    let wn = l2_norm(&w, Region::SpaceTime)?;
    let mut mixed = Vec::new();
    for e in ladder {
        let st = LinearizationStencil::new(dirs.clone(), e, 2)?.with_scheme(Scheme::Forward);
        let d = fd_linearize(&sc, &st, &[0, 2])?;
        mixed.push((e, l2_norm(&d.sub(&w)?, Region::SpaceTime)? / wn));
    }
    let mixed_slope = loglog_slope(&mixed);
    let ok = (slopes[0] - 1.0).abs() <= 0.3 && (slopes[1] - 2.0).abs() <= 0.3 && (mixed_slope - 1.0).abs() <= 0.3;
    Ok((ok, format!("forward {:.3}, central {:.3}, mixed {mixed_slope:.3}", slopes[0], slopes[1])))
}

fn identity() -> Outcome {
    let g = unit(100, 1.0);
    let s = sigma(&g);
    let phi = sine(&g, 0.1);
    let psi = vec![0.0; g.n_nodes()];
    // the same system, once with an expression coefficient and once sampled
    let expr = Coefficient::Expr(Arc::new(crate::semilinear::Expr::parse("1 + x")?));
    let sampled = Coefficient::Field(Arc::new(SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |x, _| 1.0 + x[0])));
    let mut qs = Vec::new();
    for c in [expr, sampled] {
        let nl = Nonlinearity::taylor(vec![0.0.into(), c, 0.5.into()]);
        let sc = Scenario::new(g.clone(), s.clone(), nl.clone(), phi.clone(), psi.clone())?;
        let (u, _) = sc.solve(None)?;
        qs.push(nl.bind(&g)?.nth_field(1, &u, FieldKind::Potential));
    }
    let delta = qs[0].sub(&qs[1])?;
    let dirs = probe_directions(&g, 3, 1, 1.0)?;
    let v = solve_linear(&g, &s, Some(&qs[0]), None, Some(&dirs[1]), None, None)?;
    let c = build_cgo(&g, None, &CgoParams::new(8.0, -1.0, &[-0.5]))?;
    let mut re = c.principal.re.clone();
    re.add_scaled(1.0, &c.remainder.re)?;
    let mut im = c.principal.im.clone();
    im.add_scaled(1.0, &c.remainder.im)?;
    let cgo = ComplexField::new(re.clone(), im.clone())?;
    let value: Complex64 = integral_identity(&delta, &[TestField::Real(&v), TestField::Complex(&cgo)], (0.2, 0.8))?;
    let scale = l2_norm(&qs[0], Region::SpaceTime)? * l2_norm(&v, Region::SpaceTime)? * (l2_norm(&re, Region::SpaceTime)?.powi(2) + l2_norm(&im, Region::SpaceTime)?.powi(2)).sqrt();
    let r = value.norm() / scale;
    Ok((r <= 1e-8, format!("|I| / scale = {r:.1e}")))
}

const WINDOW: (f64, f64) = (2.4, 3.4);

fn recovery_grid(nx: usize) -> Result<Arc<Grid>> {
    let g = tag_gamma0(&grid_1d(0.0, 1.0, nx, 3.6, 0.5)?, &[-0.1])?;
    Ok(Arc::new(g.with_gamma0_faces(&g.faces())))
}

fn potential() -> Outcome {
    let g = recovery_grid(50)?;
    let s = sigma(&g);
    let dirs = probe_directions(&g, 8, 1, 3.6)?;
    let st = LinearizationStencil::new(dirs, 1e-3, 1)?;
    let truth = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |x, _| 1.0 + x[0]).masked_to_window(WINDOW.0, WINDOW.1);
    let o = SyntheticOracle::new(Scenario::at_rest(g.clone(), s.clone(), Nonlinearity::taylor(vec![0.0.into(), Coefficient::Field(Arc::new(truth.clone()))])));
    let e1 = recover_potential(&o, &s, &st, &RecoveryBasis::new(&g, 8, 4, WINDOW)?, 1e-6)?.with_truth(truth)?.rel_l2_error.unwrap_or(f64::NAN);
    let small = RecoveryBasis::new(&g, 2, 2, WINDOW)?;
    let in_span = small.synthesize(&[0.7, -0.3, 0.4, 0.2]);
    let o = SyntheticOracle::new(Scenario::at_rest(g.clone(), s.clone(), Nonlinearity::taylor(vec![0.0.into(), Coefficient::Field(Arc::new(in_span.clone()))])));
    let e2 = recover_potential(&o, &s, &st, &small, 1e-14)?.with_truth(in_span)?.rel_l2_error.unwrap_or(f64::NAN);
    Ok((e1 <= 0.1 && e2 <= 1e-6, format!("err {e1:.3e}, in-span {e2:.3e}")))
}

fn taylor() -> Outcome {
    let g = recovery_grid(50)?;
    let s = sigma(&g);
    let basis = RecoveryBasis::new(&g, 8, 4, WINDOW)?;
    let st = LinearizationStencil::new(probe_directions(&g, 8, 1, 3.6)?, 1e-2, 2)?;
    let zero = SpaceTimeField::zeros(g.clone(), FieldKind::Potential);
    let quad = Nonlinearity::taylor(vec![0.0.into(), 0.0.into(), 1.0.into()]).with_window(WINDOW.0, WINDOW.1);
    let two = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |_, _| 2.0).masked_to_window(WINDOW.0, WINDOW.1);
    let o = SyntheticOracle::new(Scenario::at_rest(g.clone(), s.clone(), quad));
    let e = recover_taylor_coefficient(&o, &s, 2, &[zero], &st, &basis, 1e-6)?.with_truth(two)?.rel_l2_error.unwrap_or(f64::NAN);
    let one = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |_, _| 1.0).masked_to_window(WINDOW.0, WINDOW.1);
    let o = SyntheticOracle::new(Scenario::at_rest(g.clone(), s.clone(), Nonlinearity::linear(1.0).with_window(WINDOW.0, WINDOW.1)));
    let floor = recover_taylor_coefficient(&o, &s, 2, &[one], &st, &basis, 1e-6)?.recovered.max_abs();
    Ok((e <= 0.2 && floor <= 1e-6, format!("f_uu err {e:.3e}, linear max {floor:.1e}")))
}

fn passive() -> Outcome {
    let g = unit(200, 2.5);
    let s = sigma(&g);
    let phi = sine(&g, 1.0);
    let psi = vec![0.0; g.n_nodes()];
    let nl = Nonlinearity::linear(1.0);
    let rec = passive_dn(&Scenario::new(g.clone(), s.clone(), nl.clone(), phi.clone(), psi.clone())?)?;
    let problem = PassiveProblem { grid: g.clone(), sigma: s, nonlinearity: nl, dirichlet: None };
    let r = recover_initial_passive(&problem, &rec.flux, &PassiveOptions::default())?;
    let du: Vec<f64> = r.phi.iter().zip(&phi).map(|(a, b)| a - b).collect();
    let err = h1_l2_norm(&g, &du, &r.psi)? / h1_l2_norm(&g, &phi, &psi)?;
    let q = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |_, _| 1.0);
    let spread = stability_probe(&problem, Some(&q), 10, 4, 11)?.spread;
    Ok((err <= 0.05 && spread <= 20.0, format!("err {err:.3e}, spread {spread:.3}")))
}

fn active() -> Outcome {
    let g = right_end(100, 4.0);
    let s = sigma(&g);
    let phi = sine(&g, 0.1);
    let known = Nonlinearity::linear(0.5);
    let mut runs = Vec::new();
    for tail in [Nonlinearity::cubic(1.0), Nonlinearity::taylor(vec![0.0.into(), 1.0.into(), 2.0.into()])] {
        let truth = Nonlinearity::spliced(known.clone(), tail, 3.2);
        let sc = Scenario::new(g.clone(), s.clone(), truth, phi.clone(), vec![0.0; g.n_nodes()])?;
        runs.push(recover_initial_active(&SyntheticOracle::new(sc), &s, &known, &ActiveOptions::new(3.0, 0.2))?.phi);
    }
    let err = rel(&g, &runs[0], &phi);
    let agree = rel(&g, &runs[1], &runs[0]);
    Ok((err <= 0.1 && agree <= 0.02, format!("err {err:.3e}, tails differ by {agree:.1e}")))
}

fn simultaneous() -> Outcome {
    let g = recovery_grid(50)?;
    let s = sigma(&g);
    let phi = sine(&g, 0.01);
    let nl = Nonlinearity::taylor(vec![0.0.into(), 0.0.into(), 1.0.into()]).with_window(WINDOW.0, WINDOW.1);
    let sc = Scenario::new(g.clone(), s.clone(), nl.clone(), phi.clone(), vec![0.0; g.n_nodes()])?;
    let (bg, _) = sc.solve(None)?;
    let q = nl.bind(&g)?.nth_field(1, &bg, FieldKind::Potential);
    let dirs = probe_directions(&g, 8, 1, 3.6)?;
    let config = SimultaneousConfig {
        stencil: LinearizationStencil::new(dirs.clone(), 1e-3, 1)?,
        higher_stencil: Some(LinearizationStencil::new(dirs, 1e-2, 2)?),
        basis: RecoveryBasis::new(&g, 8, 4, WINDOW)?,
        max_order: 2,
        reg: 1e-6,
        passive: PassiveOptions::default(),
    };
    let r = simultaneous_recover(&SyntheticOracle::new(sc), &s, &config)?;
    let qe = r.coefficients[0].clone().with_truth(q)?.rel_l2_error.unwrap_or(f64::NAN);
    let pe = rel(&g, &r.phi, &phi);
    Ok((qe <= 0.2 && pe <= 0.1, format!("q err {qe:.3e}, phi err {pe:.3e}")))
}

fn nonuniqueness() -> Outcome {
    let g = right_end(100, 2.0);
    let d = nonuniqueness_demo(&g, &sigma(&g), 0.2)?;
    let flux = d.flux_norms[0].max(d.flux_norms[1]);
    Ok((flux <= 1e-10 && d.initial_distance >= 0.1, format!("flux {flux:.1e}, distance {:.3}", d.initial_distance)))
}

const DETERMINISM_CONFIGS: [(&str, &str); 3] = [
    (
        "stability",
        r#"
seed = 42
gamma0 = "all"
[grid]
dim = 1
extents = [[0.0, 1.0]]
nx = [60]
nt = 300
T = 2.5
[nonlinearity]
kind = "linear"
c = 1.0
[pipeline]
kind = "stability"
"#,
    ),
    (
        "noisy-potential",
        r#"
seed = 7
gamma0 = "all"
[grid]
dim = 1
extents = [[0.0, 1.0]]
nx = [30]
nt = 216
T = 3.6
x0 = [-0.1]
[nonlinearity]
kind = "taylor"
coefficients = ["1 + x"]
window = [2.4, 3.4]
[pipeline]
kind = "recover-q"
window = [2.4, 3.4]
n_space = 4
probes = 6
noise = 0.01
"#,
    ),
    (
        "random-forward",
        r#"
seed = 3
[grid]
dim = 1
extents = [[0.0, 1.0]]
nx = [80]
nt = 320
T = 2.0
x0 = [-0.5]
[nonlinearity]
kind = "sine"
c = 1.0
[initial.phi]
kind = "random"
modes = 5
amplitude = 0.2
[pipeline]
kind = "forward"
"#,
    ),
];

fn determinism(out: Option<&Path>) -> Outcome {
    let root: PathBuf = match out {
        Some(d) => d.join("determinism"),
        None => std::env::temp_dir().join(format!("waveinv-determinism-{}", std::process::id())),
    };
    let mut mismatched = Vec::new();
    for (name, src) in DETERMINISM_CONFIGS {
        let loaded = LoadedConfig::from_source(src.to_string(), Path::new(name))?;
        let mut digests = Vec::new();
        for run in ["a", "b"] {
            let dir = root.join(name).join(run);
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            run_experiment(&loaded, &dir)?;
            digests.push(csv_digest(&dir)?);
        }
        if digests[0] != digests[1] {
            mismatched.push(name);
        }
    }
    if out.is_none() {
        std::fs::remove_dir_all(&root).ok();
    }
    Ok((mismatched.is_empty(), if mismatched.is_empty() { "3 pipelines rerun, digests identical".into() } else { format!("mismatch in {mismatched:?}") }))
}

/// Formats a float for the suite table.
pub fn short(v: f64) -> String {
    fmt(v)
}
