//! Browser bindings for three small demos: a 1D semilinear wave simulation,
//! a HUM control that brings a standing wave to rest, and a 2D CGO solution.
//!
//! The plain functions return `Result<_, String>` and are tested natively;
//! the `#[wasm_bindgen]` wrappers turn errors into JS exceptions.

use std::f64::consts::PI;
use std::sync::Arc;

use wasm_bindgen::prelude::*;
use waveinv::cgo::{build_cgo, CgoParams};
use waveinv::control::{hum_control, ControlProblem, HumOptions};
use waveinv::field::{FieldKind, SpaceTimeField};
use waveinv::geometry::{grid_1d, grid_2d, tag_gamma0, Conductivity, Grid};
use waveinv::semilinear::{solve_semilinear, Data, Nonlinearity, SolveOptions};
use waveinv::wave::{LinearInputs, WaveOperator};

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Space-time samples of a 1D solution, frames in time order.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Frames {
    x: Vec<f64>,
    values: Vec<f64>,
    times: Vec<f64>,
    energy: Vec<f64>,
    note: String,
}

#[wasm_bindgen]
impl Frames {
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    /// Row-major `(frame, node)`.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }
    pub fn energy(&self) -> Vec<f64> {
        self.energy.clone()
    }
    pub fn note(&self) -> String {
        self.note.clone()
    }
    pub fn n_frames(&self) -> usize {
        self.times.len()
    }
}

fn unit_grid(nx: usize, t_final: f64, observe_both: bool) -> Result<Arc<Grid>, String> {
    let g = grid_1d(0.0, 1.0, nx, t_final, 0.5).map_err(err)?;
    let g = if observe_both { g.with_gamma0_faces(&g.faces()) } else { tag_gamma0(&g, &[-0.5]).map_err(err)? };
    Ok(Arc::new(g))
}

/// Staggered leapfrog energy between levels `l - 1` and `l`: conserved exactly
/// by the scheme, and zero once the last two levels are at rest.
fn level_energy(op: &WaveOperator, u: &SpaceTimeField, l: usize) -> f64 {
    let g = u.grid();
    let (a, b) = if l == 0 { (0, 1) } else { (l - 1, l) };
    let w = g.node_weights();
    let dt = g.dt();
    let kinetic: f64 = u.level(b).iter().zip(u.level(a)).zip(&w).map(|((p, q), w)| w * ((p - q) / dt).powi(2)).sum();
    0.5 * (kinetic + op.gradient_product(u.level(b), u.level(a)))
}

fn frames_of(op: &WaveOperator, u: &SpaceTimeField, max_frames: usize, note: String) -> Result<Frames, String> {
    let g = u.grid();
    let nl = g.n_levels();
    let stride = nl.div_ceil(max_frames.max(2)).max(1);
    let mut order: Vec<usize> = (0..g.n_nodes()).collect();
    order.sort_by(|&a, &b| g.coord(a)[0].total_cmp(&g.coord(b)[0]));
    let mut values = Vec::new();
    let mut times = Vec::new();
    let mut energy = Vec::new();
    let mut levels: Vec<usize> = (0..nl).step_by(stride).collect();
    if levels.last() != Some(&(nl - 1)) {
        levels.push(nl - 1);
    }
    for l in levels {
        values.extend(order.iter().map(|&n| u.at(l, n)));
        times.push(g.time(l));
        energy.push(level_energy(op, u, l));
    }
    Ok(Frames { x: order.iter().map(|&n| g.coord(n)[0]).collect(), values, times, energy, note })
}

/// `u_tt - u_xx + c u^3 = 0` on (0, 1) from `(a sin(k pi x), 0)`.
pub fn simulate_cubic(nx: usize, t_final: f64, c: f64, amplitude: f64, mode: u32, max_frames: usize) -> Result<Frames, String> {
    let g = unit_grid(nx, t_final, true)?;
    let sigma = Arc::new(Conductivity::identity(&g));
    let op = WaveOperator::new(g.clone(), sigma.clone()).map_err(err)?;
    let phi: Vec<f64> = (0..g.n_nodes()).map(|n| amplitude * (mode as f64 * PI * g.coord(n)[0]).sin()).collect();
    let nl = if c == 0.0 { Nonlinearity::zero() } else { Nonlinearity::cubic(c) };
    let (u, report) = solve_semilinear(&op, &nl, Data { phi: Some(&phi), ..Default::default() }, SolveOptions::default()).map_err(err)?;
    frames_of(&op, &u, max_frames, format!("fixed point converged in {} iterations", report.iterations))
}

/// HUM control driving `(sin(pi x), 0)` to rest; returns the controlled solution.
pub fn control_to_rest(nx: usize, t_final: f64, both_ends: bool, max_frames: usize) -> Result<Frames, String> {
    let g = unit_grid(nx, t_final, both_ends)?;
    let sigma = Arc::new(Conductivity::identity(&g));
    let op = WaveOperator::new(g.clone(), sigma.clone()).map_err(err)?;
    let phi: Vec<f64> = (0..g.n_nodes()).map(|n| (PI * g.coord(n)[0]).sin()).collect();
    let z = vec![0.0; g.n_nodes()];
    let r = hum_control(&op, ControlProblem { potential: None, source: None, phi: &phi, psi: &z, target: (&z, &z) }, HumOptions::default())
        .map_err(err)?;
    let u = op
        .forward(&LinearInputs { phi: Some(&phi), dirichlet: Some(&r.control), ..Default::default() })
        .map_err(err)?;
    let note = format!("{} CG iterations, terminal/initial energy {:.2e}", r.cg_iterations, r.terminal_error / r.initial_energy);
    frames_of(&op, &u, max_frames, note)
}

/// Real part of a 2D CGO solution at the last level, row-major `ny x nx` (y fastest last).
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct CgoImage {
    n: usize,
    re: Vec<f64>,
    remainder_l2: f64,
}

#[wasm_bindgen]
impl CgoImage {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn re(&self) -> Vec<f64> {
        self.re.clone()
    }
    pub fn remainder_l2(&self) -> f64 {
        self.remainder_l2
    }
}

/// CGO solution of `u_tt - Laplace u + q u = 0` with a Gaussian potential of
/// strength `q_amp`, centre `x0 = (-0.5, 0.5)`, on the unit square.
pub fn cgo_snapshot(tau: f64, n: usize, q_amp: f64) -> Result<CgoImage, String> {
    let g = Arc::new(grid_2d([0.0, 1.0], [0.0, 1.0], [n, n], 0.5, 0.5).map_err(err)?.with_time_start(1.0));
    let q = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |x, _| q_amp * (-10.0 * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).exp());
    let s = build_cgo(&g, Some(&q), &CgoParams::new(tau, 1.0, &[-0.5, 0.5])).map_err(err)?;
    let last = g.nt();
    let mut re = vec![0.0; g.n_nodes()];
    for node in 0..g.n_nodes() {
        let [i, j] = g.multi_index(node);
        re[j * (n + 1) + i] = s.principal.re.at(last, node) + s.remainder.re.at(last, node);
    }
    Ok(CgoImage { n: n + 1, re, remainder_l2: s.remainder_l2 })
}

#[wasm_bindgen]
pub fn simulate(nx: usize, t_final: f64, c: f64, amplitude: f64, mode: u32) -> Result<Frames, JsError> {
    simulate_cubic(nx, t_final, c, amplitude, mode, 120).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn control(nx: usize, t_final: f64, both_ends: bool) -> Result<Frames, JsError> {
    control_to_rest(nx, t_final, both_ends, 120).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cgo(tau: f64, n: usize, q_amp: f64) -> Result<CgoImage, JsError> {
    cgo_snapshot(tau, n, q_amp).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_simulation_conserves_energy() {
        let f = simulate_cubic(80, 2.0, 0.0, 1.0, 1, 50).unwrap();
        assert_eq!(f.values.len(), f.n_frames() * f.x.len());
        let e0 = f.energy[0];
        assert!(f.energy.iter().all(|e| (e - e0).abs() < 1e-2 * e0));
        assert_eq!(*f.times.last().unwrap(), 2.0);
    }

    #[test]
    fn frames_are_sorted_in_x() {
        let f = simulate_cubic(30, 1.0, 1.0, 0.5, 2, 10).unwrap();
        assert!(f.x.windows(2).all(|w| w[0] < w[1]));
        assert!(f.n_frames() <= 12);
    }

    #[test]
    fn control_reaches_rest_with_long_horizon() {
        let f = control_to_rest(60, 2.5, true, 40).unwrap();
        let last = &f.values[(f.n_frames() - 1) * f.x.len()..];
        assert!(last.iter().all(|v| v.abs() < 1e-3), "{}", f.note);
        assert!(*f.energy.last().unwrap() < 1e-4 * f.energy[0]);
    }

    #[test]
    fn cgo_image_has_square_shape() {
        let c = cgo_snapshot(8.0, 24, 1.0).unwrap();
        assert_eq!(c.re.len(), c.n * c.n);
        assert!(c.remainder_l2.is_finite() && c.re.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bad_grid_is_reported() {
        assert!(simulate_cubic(1, 1.0, 0.0, 1.0, 1, 10).is_err());
    }
}
