//! Two systems with different initial data and sources whose passive
//! records both vanish: states supported away from a boundary collar.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{FieldKind, SpaceTimeField};
use crate::geometry::{Conductivity, Grid};
use crate::measurement::{passive_dn, MeasurementRecord, Scenario};
use crate::semilinear::Nonlinearity;
use crate::wave::{l2_norm, Region, WaveOperator};

#[derive(Debug, Clone)]
pub struct NonuniquenessDemo {
    pub scenarios: [Scenario; 2],
    pub passive: [MeasurementRecord; 2],
    pub flux_norms: [f64; 2],
    /// `||phi_1 - phi_2||_{L2}`.
    pub initial_distance: f64,
    /// `||F_1 - F_2||_{L2(Q)}`.
    pub source_distance: f64,
    pub collar: f64,
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Smooth bump supported on the box shrunk by `collar` on every side.
fn interior_bump(grid: &Grid, collar: f64, p: &[f64; 2]) -> f64 {
    (0..grid.dim())
        .map(|a| {
            let [lo, hi] = grid.extents()[a];
            let (l, h) = (lo + collar, hi - collar);
            bump((2.0 * p[a] - l - h) / (h - l))
        })
        .product()
}

/// Builds `u_j = B(x) E_j(t)` with `E_1 = cos(pi t)`, `E_2 = -exp(-t)`, and the
/// sources `F_j = -D_tt u_j + A u_j` from the discrete operators, so the
/// solver reproduces `u_j` exactly and the boundary collar stays at rest.
pub fn nonuniqueness_demo(grid: &Arc<Grid>, sigma: &Arc<Conductivity>, collar: f64) -> Result<NonuniquenessDemo> {
    if !(collar > 0.0) {
        return Err(Error::InvalidArgument(format!("collar width must be positive, got {collar}")));
    }
    let min_cells = (0..grid.dim()).map(|a| collar / grid.dx()[a]).fold(f64::INFINITY, f64::min);
    if min_cells < 3.0 {
        return Err(Error::GridTooCoarse(format!("collar spans {min_cells:.2} cells, need at least 3")));
    }
    if (0..grid.dim()).any(|a| {
        let [lo, hi] = grid.extents()[a];
        hi - lo <= 2.0 * collar
    }) {
        return Err(Error::InvalidArgument(format!("collar {collar} leaves no interior")));
    }
    let op = WaveOperator::new(grid.clone(), sigma.clone())?;
    let envelopes: [(fn(f64) -> f64, f64); 2] = [(|t| (std::f64::consts::PI * t).cos(), 0.0), (|t| -(-t).exp(), 1.0)];
    let shape: Vec<f64> = (0..grid.n_nodes()).map(|n| interior_bump(grid, collar, &grid.coord(n))).collect();
    let lap = op.laplacian(&shape);
    let dt = grid.dt();
    let nn = grid.n_nodes();

    let mut scenarios = Vec::new();
    let mut sources = Vec::new();
    for (env, dpsi) in envelopes {
        let e = |l: usize| env(grid.t_start() + l as f64 * dt);
        let phi: Vec<f64> = shape.iter().map(|b| b * e(0)).collect();
        let psi: Vec<f64> = shape.iter().map(|b| b * dpsi).collect();
        let mut f = SpaceTimeField::zeros(grid.clone(), FieldKind::Source);
        for l in 0..grid.n_levels() {
            // K^n = D_tt u^n - A u^n and f = -K; the first step uses its own Taylor form
            let dtt = if l == 0 { 2.0 * (e(1) - e(0) - dt * dpsi) / (dt * dt) } else { (e(l + 1) - 2.0 * e(l) + e(l - 1)) / (dt * dt) };
            let row = f.level_mut(l);
            for i in 0..nn {
                row[i] = -(shape[i] * dtt - lap[i] * e(l));
            }
        }
        sources.push(f.clone());
        let nl = Nonlinearity::source(f);
        scenarios.push(Scenario::new(grid.clone(), sigma.clone(), nl, phi, psi)?.labelled(format!("collar-{}", scenarios.len() + 1)));
    }
    let passive = [passive_dn(&scenarios[0])?, passive_dn(&scenarios[1])?];
    let flux_norms = [passive[0].flux.l2_norm()?, passive[1].flux.l2_norm()?];
    let w = grid.node_weights();
    let initial_distance = (0..nn).map(|i| w[i] * (scenarios[0].phi[i] - scenarios[1].phi[i]).powi(2)).sum::<f64>().sqrt();
    let source_distance = l2_norm(&sources[0].sub(&sources[1])?, Region::SpaceTime)?;
    let s2 = scenarios.pop().expect("two scenarios");
    let s1 = scenarios.pop().expect("two scenarios");
    Ok(NonuniquenessDemo { scenarios: [s1, s2], passive, flux_norms, initial_distance, source_distance, collar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_1d, tag_gamma0};

    fn grid(nx: usize) -> Arc<Grid> {
        Arc::new(tag_gamma0(&grid_1d(0.0, 1.0, nx, 2.0, 0.5).unwrap(), &[-0.5]).unwrap())
    }

    #[test]
    fn collar_states_are_invisible() {
        let g = grid(100);
        let s = Arc::new(Conductivity::identity(&g));
        let d = nonuniqueness_demo(&g, &s, 0.2).unwrap();
        assert!(d.flux_norms.iter().all(|&f| f <= 1e-10), "{:?}", d.flux_norms);
        assert!(d.initial_distance >= 0.1, "{}", d.initial_distance);
        assert!(d.source_distance > 0.0);
        // the solver reproduces the constructed state
        let (u, _) = d.scenarios[0].solve(None).unwrap();
        let t = g.t_final();
        let x = 0.5;
        let n = g.nx()[0] / 2;
        let exact = interior_bump(&g, 0.2, &[x, 0.0]) * (std::f64::consts::PI * t).cos();
        assert!((u.at(g.nt(), n) - exact).abs() < 1e-9);
    }

    #[test]
    fn degenerate_collar_rejected() {
        let g = grid(50);
        let s = Arc::new(Conductivity::identity(&g));
        assert!(nonuniqueness_demo(&g, &s, 0.0).is_err());
        assert!(nonuniqueness_demo(&g, &s, 0.01).is_err());
    }

    #[test]
    fn variable_conductivity_variant() {
        let g = crate::geometry::build_grid(&[[0.0, 1.0]], &[100], 2.0, 400, 0.9).unwrap();
        let g = Arc::new(tag_gamma0(&g, &[-0.5]).unwrap());
        let s = Arc::new(Conductivity::isotropic(&g, |p| 1.0 + 0.5 * p[0]));
        let d = nonuniqueness_demo(&g, &s, 0.2).unwrap();
        assert!(d.flux_norms.iter().all(|&f| f <= 1e-10));
        assert!(d.initial_distance >= 0.1);
    }
}
