//! Explicit leapfrog solver for
//! `u_tt - div(sigma grad u) + a u = K` with Dirichlet data, its exact
//! discrete transpose, conormal traces, energies and quadrature norms.
//!
//! Scheme (interior nodes, `A` the symmetric 5/3-point conductivity stencil):
//!
//! ```text
//! u^0     = phi                       (boundary: h^0)
//! u^1     = phi + dt psi + dt^2/2 (A u^0 - a^0 u^0 + K^0)
//! u^{n+1} = 2 u^n - u^{n-1} + dt^2 (A u^n - a^n u^n + K^n)
//! ```
//!
//! Boundary nodes take `h^{n+1}` at every step.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, FieldKind, Quantity, SpaceTimeField};
use crate::geometry::{Conductivity, Face, Grid, Side, Subset};

/// Inputs of a linear solve. `None` means zero.
#[derive(Default, Clone, Copy)]
pub struct LinearInputs<'a> {
    pub potential: Option<&'a SpaceTimeField>,
    pub source: Option<&'a SpaceTimeField>,
    pub dirichlet: Option<&'a BoundaryTrace>,
    pub phi: Option<&'a [f64]>,
    pub psi: Option<&'a [f64]>,
}

/// Cotangents produced by [`WaveOperator::transpose`].
#[derive(Debug, Clone)]
pub struct LinearCotangents {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// `(level, node)` layout.
    pub source: Vec<f64>,
    /// `(level, boundary node)` layout, boundary nodes in [`WaveOperator::boundary_nodes`] order.
    pub dirichlet: Vec<f64>,
}

/// Tolerance on `|h(x, 0) - phi(x)|` at boundary nodes.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

/// Precomputed stencil for one grid and conductivity.
#[derive(Debug, Clone)]
pub struct WaveOperator {
    grid: Arc<Grid>,
    sigma: Arc<Conductivity>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    /// Per interior node: `(axis, stride, minus coefficient, plus coefficient)` for each axis.
    coef: Vec<[(usize, f64, f64); 2]>,
    /// Couplings from interior nodes into boundary rows of the transpose:
    /// `(boundary position, interior node, coefficient)`.
    boundary_couplings: Vec<(usize, usize, f64)>,
}

impl WaveOperator {
    pub fn new(grid: Arc<Grid>, sigma: Arc<Conductivity>) -> Result<WaveOperator> {
        sigma.check_grid(&grid)?;
        sigma.check_positive()?;
        grid.check_cfl(sigma.max())?;
        let dim = grid.dim();
        let interior = grid.interior_nodes();
        let boundary = grid.boundary_nodes();
        let mut coef = Vec::with_capacity(interior.len());
        for &node in &interior {
            let mut c = [(0usize, 0.0, 0.0); 2];
            for axis in 0..dim {
                let s = grid.stride(axis);
                let h2 = grid.dx()[axis].powi(2);
                let sm = 0.5 * (sigma.at(node, axis) + sigma.at(node - s, axis)) / h2;
                let sp = 0.5 * (sigma.at(node, axis) + sigma.at(node + s, axis)) / h2;
                c[axis] = (s, sm, sp);
            }
            coef.push(c);
        }
        let mut boundary_couplings = Vec::new();
        for (bpos, &b) in boundary.iter().enumerate() {
            let idx = grid.multi_index(b);
            for axis in 0..dim {
                let s = grid.stride(axis);
                let h2 = grid.dx()[axis].powi(2);
                let n = grid.nx()[axis];
                for (nbr_ok, nbr) in [(idx[axis] > 0, b.wrapping_sub(s)), (idx[axis] < n, b + s)] {
                    if nbr_ok && !grid.is_boundary(nbr) {
                        let c = 0.5 * (sigma.at(b, axis) + sigma.at(nbr, axis)) / h2;
                        boundary_couplings.push((bpos, nbr, c));
                    }
                }
            }
        }
        Ok(WaveOperator { grid, sigma, interior, boundary, coef, boundary_couplings })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn sigma(&self) -> &Arc<Conductivity> {
        &self.sigma
    }
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    /// `(A u)` on interior nodes, written into `out` at those nodes.
    #[inline]
    fn apply_stencil(&self, u: &[f64], out: &mut [f64]) {
        let dim = self.grid.dim();
        for (k, &i) in self.interior.iter().enumerate() {
            let ui = u[i];
            let mut acc = 0.0;
            for &(s, cm, cp) in &self.coef[k][..dim] {
                acc += cp * (u[i + s] - ui) - cm * (ui - u[i - s]);
            }
            out[i] = acc;
        }
    }

    /// Applies the stencil to a full nodal vector (boundary rows left at zero).
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_stencil(u, &mut out);
        out
    }

    /// `A^T p` for `p` supported on interior nodes, over all nodes.
    fn apply_stencil_transpose(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.apply_stencil(p, out);
        for &(bpos, nbr, c) in &self.boundary_couplings {
            out[self.boundary[bpos]] += c * p[nbr];
        }
    }

    fn check_inputs(&self, inputs: &LinearInputs<'_>) -> Result<()> {
        let nn = self.grid.n_nodes();
        for f in [inputs.potential, inputs.source].into_iter().flatten() {
            if !f.grid().same_layout(&self.grid) {
                return Err(Error::GridMismatch("coefficient field does not match solver grid".into()));
            }
            if !f.is_finite() {
                return Err(Error::NonFinite("coefficient field".into()));
            }
        }
        if let Some(h) = inputs.dirichlet {
            if !h.grid().same_layout(&self.grid) || h.quantity() != Quantity::Dirichlet {
                return Err(Error::GridMismatch("Dirichlet trace does not match solver grid".into()));
            }
        }
        for v in [inputs.phi, inputs.psi].into_iter().flatten() {
            if v.len() != nn {
                return Err(Error::Shape(format!("initial data has {} entries, grid has {nn} nodes", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("initial data".into()));
            }
        }
        Ok(())
    }

    /// Forward leapfrog solve.
    pub fn forward(&self, inputs: &LinearInputs<'_>) -> Result<SpaceTimeField> {
        self.check_inputs(inputs)?;
        let grid = &self.grid;
        let nn = grid.n_nodes();
        let nt = grid.nt();
        let dt = grid.dt();
        let dt2 = dt * dt;
        let nb = self.boundary.len();
        let mut out = SpaceTimeField::zeros(grid.clone(), FieldKind::Solution);
        let u = out.values_mut();
        let mut hb = vec![0.0; nb];

        // level 0
        if let Some(phi) = inputs.phi {
            u[..nn].copy_from_slice(phi);
        }
        if let Some(h) = inputs.dirichlet {
            h.node_values(0, &self.boundary, &mut hb);
        }
        for (k, &b) in self.boundary.iter().enumerate() {
            let gap = (u[b] - hb[k]).abs();
            if gap > COMPATIBILITY_TOL {
                return Err(Error::Incompatible { node: b, gap });
            }
            u[b] = hb[k];
        }

        let mut lap = vec![0.0; nn];
        let pot = inputs.potential.map(|f| f.values());
        let src = inputs.source.map(|f| f.values());

        // level 1
        {
            let (u0, rest) = u.split_at_mut(nn);
            let u1 = &mut rest[..nn];
            self.apply_stencil(u0, &mut lap);
            for &i in &self.interior {
                let mut r = lap[i];
                if let Some(a) = pot {
                    r -= a[i] * u0[i];
                }
                if let Some(k) = src {
                    r += k[i];
                }
                let psi = inputs.psi.map_or(0.0, |p| p[i]);
                u1[i] = u0[i] + dt * psi + 0.5 * dt2 * r;
            }
            if let Some(h) = inputs.dirichlet {
                h.node_values(1, &self.boundary, &mut hb);
            }
            for (k, &b) in self.boundary.iter().enumerate() {
                u1[b] = hb[k];
            }
        }

        for n in 1..nt {
            let (past, future) = u.split_at_mut((n + 1) * nn);
            let um = &past[(n - 1) * nn..n * nn];
            let uc = &past[n * nn..(n + 1) * nn];
            let up = &mut future[..nn];
            self.apply_stencil(uc, &mut lap);
            let off = n * nn;
            for &i in &self.interior {
                let mut r = lap[i];
                if let Some(a) = pot {
                    r -= a[off + i] * uc[i];
                }
                if let Some(k) = src {
                    r += k[off + i];
                }
                up[i] = 2.0 * uc[i] - um[i] + dt2 * r;
            }
            if let Some(h) = inputs.dirichlet {
                h.node_values(n + 1, &self.boundary, &mut hb);
            }
            for (k, &b) in self.boundary.iter().enumerate() {
                up[b] = hb[k];
            }
        }
        Ok(out)
    }

    /// Exact transpose of [`forward`](Self::forward) with respect to the plain
    /// Euclidean pairing of all inputs and of the `(level, node)` output.
    pub fn transpose(&self, potential: Option<&SpaceTimeField>, u_bar: &[f64]) -> Result<LinearCotangents> {
        let grid = &self.grid;
        let nn = grid.n_nodes();
        let nt = grid.nt();
        let nl = nt + 1;
        if u_bar.len() != nl * nn {
            return Err(Error::Shape(format!("cotangent has {} entries, expected {}", u_bar.len(), nl * nn)));
        }
        if let Some(p) = potential {
            if !p.grid().same_layout(grid) {
                return Err(Error::GridMismatch("potential does not match solver grid".into()));
            }
        }
        let pot = potential.map(|f| f.values());
        let dt = grid.dt();
        let dt2 = dt * dt;
        let nb = self.boundary.len();
        let mut g = u_bar.to_vec();
        let mut k_bar = vec![0.0; nl * nn];
        let mut h_bar = vec![0.0; nl * nb];
        let mut phi_bar = vec![0.0; nn];
        let mut psi_bar = vec![0.0; nn];
        let mut p = vec![0.0; nn];
        let mut atp = vec![0.0; nn];

        for n in (1..nt).rev() {
            let next = (n + 1) * nn;
            for (k, &b) in self.boundary.iter().enumerate() {
                h_bar[(n + 1) * nb + k] += g[next + b];
            }
            for &i in &self.interior {
                p[i] = g[next + i];
            }
            self.apply_stencil_transpose(&p, &mut atp);
            let cur = n * nn;
            let prev = (n - 1) * nn;
            for i in 0..nn {
                g[cur + i] += dt2 * atp[i];
            }
            for &i in &self.interior {
                let a = pot.map_or(0.0, |a| a[cur + i]);
                g[cur + i] += 2.0 * p[i] - dt2 * a * p[i];
                g[prev + i] -= p[i];
                k_bar[cur + i] += dt2 * p[i];
            }
        }

        // first step
        for (k, &b) in self.boundary.iter().enumerate() {
            h_bar[nb + k] += g[nn + b];
        }
        for &i in &self.interior {
            p[i] = g[nn + i];
        }
        self.apply_stencil_transpose(&p, &mut atp);
        for i in 0..nn {
            g[i] += 0.5 * dt2 * atp[i];
        }
        for &i in &self.interior {
            let a = pot.map_or(0.0, |a| a[i]);
            phi_bar[i] += p[i];
            psi_bar[i] += dt * p[i];
            g[i] -= 0.5 * dt2 * a * p[i];
            k_bar[i] += 0.5 * dt2 * p[i];
        }
        // level 0
        for &i in &self.interior {
            phi_bar[i] += g[i];
        }
        for (k, &b) in self.boundary.iter().enumerate() {
            h_bar[k] += g[b];
        }
        Ok(LinearCotangents { phi: phi_bar, psi: psi_bar, source: k_bar, dirichlet: h_bar })
    }

    /// Stencil coefficients of the conormal flux at a face node:
    /// flux = sum_j c_j u[node_j].
    pub fn flux_stencil(&self, face: Face, node: usize) -> [(usize, f64); 3] {
        let axis = face.axis;
        let s = self.grid.stride(axis);
        let h = self.grid.dx()[axis];
        let sg = self.sigma.at(node, axis);
        match face.side {
            // nu = -1: -sigma * (-3u0 + 4u1 - u2) / 2h
            Side::Low => [(node, 3.0 * sg / (2.0 * h)), (node + s, -4.0 * sg / (2.0 * h)), (node + 2 * s, sg / (2.0 * h))],
            // nu = +1: sigma * (3uN - 4uN-1 + uN-2) / 2h
            Side::High => [(node, 3.0 * sg / (2.0 * h)), (node - s, -4.0 * sg / (2.0 * h)), (node - 2 * s, sg / (2.0 * h))],
        }
    }

    /// Conormal flux `sigma grad u . nu` on the faces of `subset`.
    pub fn flux_trace(&self, u: &SpaceTimeField, subset: Subset) -> Result<BoundaryTrace> {
        if !u.grid().same_layout(&self.grid) {
            return Err(Error::GridMismatch("field does not match solver grid".into()));
        }
        let mut tr = BoundaryTrace::flux(self.grid.clone(), subset);
        if tr.n_points() == 0 {
            return Err(Error::EmptyRegion(format!("no boundary faces tagged {subset:?}")));
        }
        let stencils: Vec<[(usize, f64); 3]> =
            tr.points().iter().map(|p| self.flux_stencil(p.face.expect("flux point has a face"), p.node)).collect();
        for level in 0..self.grid.n_levels() {
            let row = u.level(level);
            let out = tr.level_mut(level);
            for (k, st) in stencils.iter().enumerate() {
                out[k] = st.iter().map(|&(j, c)| c * row[j]).sum();
            }
        }
        Ok(tr)
    }

    /// Adds the transpose of [`flux_trace`](Self::flux_trace) applied to
    /// `trace_bar` into a `(level, node)` cotangent.
    pub fn flux_trace_transpose(&self, trace_bar: &BoundaryTrace, u_bar: &mut [f64]) {
        let nn = self.grid.n_nodes();
        for (k, p) in trace_bar.points().iter().enumerate() {
            let st = self.flux_stencil(p.face.expect("flux point has a face"), p.node);
            for level in 0..self.grid.n_levels() {
                let v = trace_bar.at(level, k);
                if v != 0.0 {
                    for &(j, c) in &st {
                        u_bar[level * nn + j] += c * v;
                    }
                }
            }
        }
    }

    /// Symmetric energy pairing of two states:
    /// `sum w (v1 v2 + u1 u2) + sum_edges w sigma grad u1 . grad u2`.
    pub fn energy_product(&self, a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> f64 {
        let w = self.grid.node_weights();
        let mut s = 0.0;
        for i in 0..w.len() {
            s += w[i] * (a.1[i] * b.1[i] + a.0[i] * b.0[i]);
        }
        s + self.gradient_product(a.0, b.0)
    }

    /// Applies the matrix of [`energy_product`](Self::energy_product) to a state.
    pub fn energy_matrix_apply(&self, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = self.grid.node_weights();
        let mut ou: Vec<f64> = (0..w.len()).map(|i| w[i] * u[i]).collect();
        let ov: Vec<f64> = (0..w.len()).map(|i| w[i] * v[i]).collect();
        self.for_each_edge(|i, j, c| {
            let d = c * (u[j] - u[i]);
            ou[j] += d;
            ou[i] -= d;
        });
        (ou, ov)
    }

    /// `integral sigma grad u1 . grad u2` with edge differences and
    /// trapezoid weights across the edge direction.
    pub fn gradient_product(&self, u1: &[f64], u2: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each_edge(|i, j, c| s += c * (u1[j] - u1[i]) * (u2[j] - u2[i]));
        s
    }

    /// Calls `f(i, j, c)` for every grid edge `i -> j`; `c = w_edge sigma_half / h^2`.
    fn for_each_edge(&self, mut f: impl FnMut(usize, usize, f64)) {
        let grid = &self.grid;
        let dim = grid.dim();
        for node in 0..grid.n_nodes() {
            let idx = grid.multi_index(node);
            for axis in 0..dim {
                if idx[axis] == grid.nx()[axis] {
                    continue;
                }
                let s = grid.stride(axis);
                let h = grid.dx()[axis];
                let mut w = h;
                if dim == 2 {
                    let o = 1 - axis;
                    let n = grid.nx()[o];
                    w *= if idx[o] == 0 || idx[o] == n { 0.5 * grid.dx()[o] } else { grid.dx()[o] };
                }
                let sig = 0.5 * (self.sigma.at(node, axis) + self.sigma.at(node + s, axis));
                f(node, node + s, w * sig / (h * h));
            }
        }
    }
}

/// Spec-level entry point for the linear solve.
pub fn solve_linear(
    grid: &Arc<Grid>,
    sigma: &Arc<Conductivity>,
    potential: Option<&SpaceTimeField>,
    source: Option<&SpaceTimeField>,
    dirichlet: Option<&BoundaryTrace>,
    phi: Option<&[f64]>,
    psi: Option<&[f64]>,
) -> Result<SpaceTimeField> {
    let op = WaveOperator::new(grid.clone(), sigma.clone())?;
    op.forward(&LinearInputs { potential, source, dirichlet, phi, psi })
}

fn reversed_levels(f: &SpaceTimeField) -> SpaceTimeField {
    let nn = f.n_nodes();
    let nl = f.n_levels();
    let mut out = f.clone();
    for n in 0..nl {
        out.level_mut(n).copy_from_slice(&f.values()[(nl - 1 - n) * nn..(nl - n) * nn]);
    }
    out
}

/// Backward wave equation `v_tt - div(sigma grad v) + q v = f`, zero
/// Dirichlet data, terminal data `(v(T), v_t(T))`. Returned forward in time.
pub fn solve_backward(
    grid: &Arc<Grid>,
    sigma: &Arc<Conductivity>,
    potential: Option<&SpaceTimeField>,
    source: Option<&SpaceTimeField>,
    terminal: (&[f64], &[f64]),
) -> Result<SpaceTimeField> {
    let op = WaveOperator::new(grid.clone(), sigma.clone())?;
    let pot = potential.map(reversed_levels);
    let src = source.map(reversed_levels);
    let vt: Vec<f64> = terminal.1.iter().map(|v| -v).collect();
    let rev = op.forward(&LinearInputs {
        potential: pot.as_ref(),
        source: src.as_ref(),
        dirichlet: None,
        phi: Some(terminal.0),
        psi: Some(&vt),
    })?;
    Ok(reversed_levels(&rev))
}

/// `sigma grad u . nu` on the faces of `subset`.
pub fn neumann_trace(field: &SpaceTimeField, sigma: &Arc<Conductivity>, subset: Subset) -> Result<BoundaryTrace> {
    if field.kind() != FieldKind::Solution {
        return Err(Error::InvalidArgument(format!("flux of a {:?} field", field.kind())));
    }
    let op = WaveOperator::new(field.grid().clone(), sigma.clone())?;
    op.flux_trace(field, subset)
}

/// `(u(T), u_t(T))` with a second-order one-sided time derivative.
pub fn terminal_state(u: &SpaceTimeField) -> (Vec<f64>, Vec<f64>) {
    let nt = u.grid().nt();
    (u.level(nt).to_vec(), u.time_derivative(nt))
}

/// `(u^N, (u^N - u^{N-1}) / dt)`: the last two leapfrog levels, so a zero
/// value means the solution stays at rest afterwards. The velocity is only
/// first-order accurate; use [`terminal_state`] for reporting.
pub fn leapfrog_state(u: &SpaceTimeField) -> (Vec<f64>, Vec<f64>) {
    let nt = u.grid().nt();
    let dt = u.grid().dt();
    let v = u.level(nt).iter().zip(u.level(nt - 1)).map(|(a, b)| (a - b) / dt).collect();
    (u.level(nt).to_vec(), v)
}

/// Adds the transpose of [`leapfrog_state`] to a `(level, node)` cotangent.
pub fn leapfrog_state_transpose(grid: &Grid, bar_u: &[f64], bar_v: &[f64], u_bar: &mut [f64]) {
    let nn = grid.n_nodes();
    let nt = grid.nt();
    let dt = grid.dt();
    for i in 0..nn {
        u_bar[nt * nn + i] += bar_u[i] + bar_v[i] / dt;
        u_bar[(nt - 1) * nn + i] -= bar_v[i] / dt;
    }
}

/// `E(t) = 1/2 int (u_t^2 + sigma grad u . grad u + u^2)` at a level.
pub fn energy(field: &SpaceTimeField, sigma: &Arc<Conductivity>, level: usize) -> Result<f64> {
    energy_parts(field, sigma, level).map(|(k, g, m)| 0.5 * (k + g + m))
}

/// The conserved part `1/2 int (u_t^2 + sigma grad u . grad u)`.
pub fn wave_energy(field: &SpaceTimeField, sigma: &Arc<Conductivity>, level: usize) -> Result<f64> {
    energy_parts(field, sigma, level).map(|(k, g, _)| 0.5 * (k + g))
}

fn energy_parts(field: &SpaceTimeField, sigma: &Arc<Conductivity>, level: usize) -> Result<(f64, f64, f64)> {
    let grid = field.grid();
    if level > grid.nt() {
        return Err(Error::InvalidArgument(format!("level {level} beyond {}", grid.nt())));
    }
    let op = WaveOperator::new(grid.clone(), sigma.clone())?;
    let ut = field.time_derivative(level);
    let u = field.level(level);
    let w = grid.node_weights();
    let kinetic: f64 = (0..w.len()).map(|i| w[i] * ut[i] * ut[i]).sum();
    let mass: f64 = (0..w.len()).map(|i| w[i] * u[i] * u[i]).sum();
    Ok((kinetic, op.gradient_product(u, u), mass))
}

/// Energy of an explicit state `(u, u_t)`.
pub fn state_energy(op: &WaveOperator, u: &[f64], v: &[f64]) -> f64 {
    0.5 * op.energy_product((u, v), (u, v))
}

/// Quadrature region for [`l2_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// All of `Omega x (0, T)`.
    SpaceTime,
    /// `Omega x [t1, t2]` (levels whose time lies in the window).
    Window(f64, f64),
    /// `Omega` at one level.
    Level(usize),
}

/// Trapezoid-rule L2 norm of a field over a region.
pub fn l2_norm(field: &SpaceTimeField, region: Region) -> Result<f64> {
    let grid = field.grid();
    let w = grid.node_weights();
    let level_sq = |n: usize| -> f64 { field.level(n).iter().zip(&w).map(|(v, w)| w * v * v).sum() };
    let (n0, n1) = match region {
        Region::Level(n) => {
            if n > grid.nt() {
                return Err(Error::EmptyRegion(format!("level {n} beyond {}", grid.nt())));
            }
            return Ok(level_sq(n).sqrt());
        }
        Region::SpaceTime => (0, grid.nt()),
        Region::Window(t1, t2) => window_levels(grid, t1, t2)?,
    };
    let tw = grid.time_weights(n0, n1);
    Ok((n0..=n1).zip(tw).map(|(n, wt)| wt * level_sq(n)).sum::<f64>().sqrt())
}

/// Levels whose time lies in `[t1, t2]` (with a small tolerance).
pub fn window_levels(grid: &Grid, t1: f64, t2: f64) -> Result<(usize, usize)> {
    let tol = 1e-9 * grid.dt();
    let n0 = ((t1 - grid.t_start() - tol) / grid.dt()).ceil().max(0.0) as usize;
    let n1f = ((t2 - grid.t_start() + tol) / grid.dt()).floor();
    if n1f < 0.0 || t2 < t1 {
        return Err(Error::EmptyRegion(format!("window [{t1}, {t2}] holds no levels")));
    }
    let n1 = (n1f as usize).min(grid.nt());
    if n0 >= n1 {
        return Err(Error::EmptyRegion(format!("window [{t1}, {t2}] holds fewer than two levels")));
    }
    Ok((n0, n1))
}

/// Trapezoid inner product of two fields over `Omega x [levels n0..=n1]`.
pub fn field_dot(a: &SpaceTimeField, b: &SpaceTimeField, n0: usize, n1: usize) -> Result<f64> {
    a.check_same_grid(b)?;
    let grid = a.grid();
    let w = grid.node_weights();
    let tw = grid.time_weights(n0, n1);
    let mut s = 0.0;
    for (n, wt) in (n0..=n1).zip(tw) {
        let la = a.level(n);
        let lb = b.level(n);
        let mut acc = 0.0;
        for i in 0..w.len() {
            acc += w[i] * la[i] * lb[i];
        }
        s += wt * acc;
    }
    Ok(s)
}

/// Discrete `H^1 x L^2` norm of a state: `sqrt(int |grad u|^2 + u^2 + v^2)`.
pub fn h1_l2_norm(grid: &Arc<Grid>, u: &[f64], v: &[f64]) -> Result<f64> {
    let op = WaveOperator::new(grid.clone(), Arc::new(Conductivity::identity(grid)))?;
    Ok(op.energy_product((u, v), (u, v)).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, grid_1d, tag_gamma0};
    use std::f64::consts::PI;

    fn unit(nx: usize, t: f64) -> Arc<Grid> {
        Arc::new(grid_1d(0.0, 1.0, nx, t, 0.5).unwrap())
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = unit(50, 1.0);
        let s = Arc::new(Conductivity::identity(&g));
        let u = solve_linear(&g, &s, None, None, None, None, None).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigenmode_at_unit_time() {
        let g = unit(200, 1.0);
        let s = Arc::new(Conductivity::identity(&g));
        let phi: Vec<f64> = (0..g.n_nodes()).map(|n| (PI * g.coord(n)[0]).sin()).collect();
        let u = solve_linear(&g, &s, None, None, None, Some(&phi), None).unwrap();
        let last = u.level(g.nt());
        let err = (0..g.n_nodes()).map(|n| (last[n] + phi[n]).abs()).fold(0.0, f64::max);
        assert!(err < 5e-3 && err > 0.0, "{err}");
    }

    #[test]
    fn incompatible_boundary_rejected() {
        let g = Arc::new(tag_gamma0(&grid_1d(0.0, 1.0, 20, 1.0, 0.5).unwrap(), &[-0.5]).unwrap());
        let s = Arc::new(Conductivity::identity(&g));
        let h = BoundaryTrace::dirichlet_from_fn(g.clone(), Subset::Gamma0, |_, _| 1.0);
        let err = solve_linear(&g, &s, None, None, Some(&h), None, None).unwrap_err();
        assert!(matches!(err, Error::Incompatible { .. }));
    }

    #[test]
    fn cfl_checked_against_sigma() {
        let g = unit(50, 1.0);
        let s = Arc::new(Conductivity::constant(&g, 9.0));
        assert!(matches!(WaveOperator::new(g, s), Err(Error::Cfl { .. })));
    }

    #[test]
    fn transpose_matches_dot_product_test() {
        let g0 = build_grid(&[[0.0, 1.0], [0.0, 0.8]], &[9, 7], 0.6, 20, 0.9).unwrap();
        let g = Arc::new(g0.with_gamma0_faces(&g0.faces()));
        let s = Arc::new(Conductivity::isotropic(&g, |p| 1.0 + 0.3 * p[0] + 0.2 * p[1]));
        let op = WaveOperator::new(g.clone(), s).unwrap();
        let nn = g.n_nodes();
        let nl = g.n_levels();
        let pot = SpaceTimeField::from_values(g.clone(), FieldKind::Potential, pseudo(nl * nn, 1)).unwrap();
        let src = SpaceTimeField::from_values(g.clone(), FieldKind::Source, pseudo(nl * nn, 2)).unwrap();
        let mut phi = pseudo(nn, 3);
        let psi = pseudo(nn, 4);
        let mut h = BoundaryTrace::dirichlet(g.clone(), Subset::All);
        let hv = pseudo(h.values().len(), 5);
        h.values_mut().copy_from_slice(&hv);
        for (k, p) in h.points().iter().enumerate() {
            phi[p.node] = h.at(0, k);
        }
        let u = op
            .forward(&LinearInputs { potential: Some(&pot), source: Some(&src), dirichlet: Some(&h), phi: Some(&phi), psi: Some(&psi) })
            .unwrap();
        let ubar = pseudo(nl * nn, 6);
        let lhs: f64 = u.values().iter().zip(&ubar).map(|(a, b)| a * b).sum();
        let ct = op.transpose(Some(&pot), &ubar).unwrap();
        let interior = op.interior_nodes();
        let mut rhs = 0.0;
        for &i in interior {
            rhs += ct.phi[i] * phi[i] + ct.psi[i] * psi[i];
        }
        rhs += ct.source.iter().zip(src.values()).map(|(a, b)| a * b).sum::<f64>();
        let nb = op.boundary_nodes().len();
        let mut hb = vec![0.0; nb];
        for n in 0..nl {
            h.node_values(n, op.boundary_nodes(), &mut hb);
            rhs += (0..nb).map(|k| ct.dirichlet[n * nb + k] * hb[k]).sum::<f64>();
        }
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn flux_of_linear_profile() {
        let g = Arc::new(build_grid(&[[0.0, 1.0]], &[20], 0.5, 40, 0.9).unwrap().with_gamma0_faces(&[
            Face { axis: 0, side: Side::Low },
            Face { axis: 0, side: Side::High },
        ]));
        let s = Arc::new(Conductivity::constant(&g, 2.0));
        let u = SpaceTimeField::from_fn(g.clone(), FieldKind::Solution, |x, _| x[0]);
        let tr = neumann_trace(&u, &s, Subset::Gamma0).unwrap();
        for level in 0..g.n_levels() {
            for (k, p) in tr.points().iter().enumerate() {
                let expect = if p.face.unwrap().side == Side::High { 2.0 } else { -2.0 };
                assert!((tr.at(level, k) - expect).abs() < 1e-12);
            }
        }
        let z = SpaceTimeField::zeros(g.clone(), FieldKind::Solution);
        assert!(neumann_trace(&z, &s, Subset::Gamma0).unwrap().is_zero());
        let pot = SpaceTimeField::zeros(g, FieldKind::Potential);
        assert!(neumann_trace(&pot, &s, Subset::Gamma0).is_err());
    }

    #[test]
    fn flux_of_eigenmode() {
        let g = Arc::new(tag_gamma0(&grid_1d(0.0, 1.0, 200, 2.0, 0.5).unwrap(), &[-0.5]).unwrap());
        let s = Arc::new(Conductivity::identity(&g));
        let u = SpaceTimeField::from_fn(g.clone(), FieldKind::Solution, |x, t| (PI * x[0]).sin() * (PI * t).cos());
        let tr = neumann_trace(&u, &s, Subset::Gamma0).unwrap();
        let mut err: f64 = 0.0;
        for level in 0..g.n_levels() {
            err = err.max((tr.at(level, 0) + PI * (PI * g.time(level)).cos()).abs());
        }
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn energy_homogeneity_and_zero() {
        let g = unit(60, 1.0);
        let s = Arc::new(Conductivity::identity(&g));
        let u = SpaceTimeField::from_fn(g.clone(), FieldKind::Solution, |x, t| (PI * x[0]).sin() * (PI * t).cos());
        let e1 = energy(&u, &s, 10).unwrap();
        let e2 = energy(&u.scaled(2.0), &s, 10).unwrap();
        assert!((e2 - 4.0 * e1).abs() < 1e-12 * e2);
        let z = SpaceTimeField::zeros(g, FieldKind::Solution);
        assert_eq!(energy(&z, &s, 3).unwrap(), 0.0);
    }

    #[test]
    fn norms() {
        let g = Arc::new(grid_1d(0.0, 1.0, 200, 1.0, 0.5).unwrap());
        let one = SpaceTimeField::from_fn(g.clone(), FieldKind::Source, |_, _| 1.0);
        assert!((l2_norm(&one, Region::SpaceTime).unwrap() - 1.0).abs() < 1e-12);
        let s = SpaceTimeField::from_fn(g.clone(), FieldKind::Solution, |x, _| (PI * x[0]).sin());
        assert!((l2_norm(&s, Region::Level(0)).unwrap() - 0.5f64.sqrt()).abs() < 1e-4);
        let n1 = l2_norm(&s, Region::SpaceTime).unwrap();
        assert!((l2_norm(&s.scaled(2.0), Region::SpaceTime).unwrap() - 2.0 * n1).abs() < 1e-12);
        assert!(matches!(l2_norm(&s, Region::Window(0.5, 0.5)), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn backward_zero_terminal_is_zero() {
        let g = unit(40, 1.0);
        let s = Arc::new(Conductivity::identity(&g));
        let z = vec![0.0; g.n_nodes()];
        let v = solve_backward(&g, &s, None, None, (&z, &z)).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }
}
