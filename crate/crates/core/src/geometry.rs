//! Discrete space-time domains, the observation boundary and the weight
//! function used by the Carleman-type condition on the conductivity.
//!
//! Domains are intervals (1D) or axis-aligned rectangles (2D). Nodes are
//! numbered with axis 0 fastest. A boundary *face* is one side of the box; in
//! 1D a face is a single node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial point; unused trailing coordinates are zero.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn normal_sign(&self) -> f64 {
        match self.side {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Gamma0,
    Complement,
}

/// Selects part of the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Gamma0,
    Complement,
    All,
}

impl Subset {
    pub fn contains(&self, tag: BoundaryTag) -> bool {
        match self {
            Subset::All => true,
            Subset::Gamma0 => tag == BoundaryTag::Gamma0,
            Subset::Complement => tag == BoundaryTag::Complement,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: Vec<[f64; 2]>,
    nx: Vec<usize>,
    nt: usize,
    t_start: f64,
    t_final: f64,
    dx: Vec<f64>,
    dt: f64,
    cfl_factor: f64,
    x0: Option<Vec<f64>>,
    face_tags: Vec<(Face, BoundaryTag)>,
    boundary_tags: BTreeMap<usize, BoundaryTag>,
}

/// Serializable grid block as it appears in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub extents: Vec<[f64; 2]>,
    pub nx: Vec<usize>,
    pub nt: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

fn default_cfl() -> f64 {
    0.5
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        if self.extents.len() != self.dim || self.nx.len() != self.dim {
            return Err(Error::Config(format!(
                "grid: dim = {} but {} extents and {} nx entries",
                self.dim,
                self.extents.len(),
                self.nx.len()
            )));
        }
        let grid = build_grid(&self.extents, &self.nx, self.t_final, self.nt, self.cfl)?;
        match &self.x0 {
            Some(x0) => tag_gamma0(&grid, x0),
            None => Ok(grid),
        }
    }
}

/// Builds a tensor-product grid. `extents` and `nx` have one entry per axis.
pub fn build_grid(extents: &[[f64; 2]], nx: &[usize], t_final: f64, nt: usize, cfl_factor: f64) -> Result<Grid> {
    let dim = extents.len();
    if dim == 0 || dim > 2 || nx.len() != dim {
        return Err(Error::InvalidArgument(format!("spatial dimension must be 1 or 2 (got {dim})")));
    }
    for (axis, e) in extents.iter().enumerate() {
        if !(e[1] > e[0]) || !e[0].is_finite() || !e[1].is_finite() {
            return Err(Error::InvalidExtent { axis, lo: e[0], hi: e[1] });
        }
    }
    if let Some(n) = nx.iter().find(|&&n| n < 4) {
        return Err(Error::GridTooCoarse(format!("nx = {n} < 4")));
    }
    if nt < 4 {
        return Err(Error::GridTooCoarse(format!("nt = {nt} < 4")));
    }
    if !(t_final > 0.0) {
        return Err(Error::InvalidArgument(format!("final time must be positive (got {t_final})")));
    }
    if !(cfl_factor > 0.0 && cfl_factor < 1.0) {
        return Err(Error::InvalidArgument(format!("cfl factor must lie in (0, 1) (got {cfl_factor})")));
    }
    let dx: Vec<f64> = extents.iter().zip(nx).map(|(e, &n)| (e[1] - e[0]) / n as f64).collect();
    let dt = t_final / nt as f64;
    let dx_min = dx.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = dt / dx_min;
    if ratio > cfl_factor * (1.0 + 1e-12) {
        return Err(Error::Cfl { ratio, bound: cfl_factor });
    }
    let mut grid = Grid {
        dim,
        extents: extents.to_vec(),
        nx: nx.to_vec(),
        nt,
        t_start: 0.0,
        t_final,
        dx,
        dt,
        cfl_factor,
        x0: None,
        face_tags: Vec::new(),
        boundary_tags: BTreeMap::new(),
    };
    let faces = grid.faces();
    grid.face_tags = faces.into_iter().map(|f| (f, BoundaryTag::Complement)).collect();
    grid.rebuild_node_tags();
    Ok(grid)
}

/// Convenience for 1D grids on `[a, b]`; picks the smallest `nt` with `dt <= cfl * dx`.
pub fn grid_1d(a: f64, b: f64, nx: usize, t_final: f64, cfl: f64) -> Result<Grid> {
    let dx = (b - a) / nx as f64;
    let nt = (t_final / (cfl * dx) - 1e-9).ceil().max(4.0) as usize;
    build_grid(&[[a, b]], &[nx], t_final, nt, cfl)
}

/// Convenience for 2D grids; picks `nt` so that `dt <= cfl * dx_min`.
pub fn grid_2d(ex: [f64; 2], ey: [f64; 2], nx: [usize; 2], t_final: f64, cfl: f64) -> Result<Grid> {
    let dx = ((ex[1] - ex[0]) / nx[0] as f64).min((ey[1] - ey[0]) / nx[1] as f64);
    let nt = (t_final / (cfl * dx) - 1e-9).ceil().max(4.0) as usize;
    build_grid(&[ex, ey], &nx, t_final, nt, cfl)
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn extents(&self) -> &[[f64; 2]] {
        &self.extents
    }
    pub fn nx(&self) -> &[usize] {
        &self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn n_levels(&self) -> usize {
        self.nt + 1
    }
    pub fn dx(&self) -> &[f64] {
        &self.dx
    }
    pub fn dx_min(&self) -> f64 {
        self.dx.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn cfl_factor(&self) -> f64 {
        self.cfl_factor
    }
    pub fn x0(&self) -> Option<&[f64]> {
        self.x0.as_deref()
    }
    pub fn boundary_tags(&self) -> &BTreeMap<usize, BoundaryTag> {
        &self.boundary_tags
    }
    pub fn face_tags(&self) -> &[(Face, BoundaryTag)] {
        &self.face_tags
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            extents: self.extents.clone(),
            nx: self.nx.clone(),
            nt: self.nt,
            t_final: self.t_final,
            x0: self.x0.clone(),
            cfl: self.cfl_factor,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.iter().map(|n| n + 1).product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.nx[0] + 1
        }
    }

    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        if self.dim == 1 {
            [node, 0]
        } else {
            let n0 = self.nx[0] + 1;
            [node % n0, node / n0]
        }
    }

    pub fn node_at(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] + (self.nx[0] + 1) * idx[1]
        }
    }

    pub fn coord(&self, node: usize) -> Point {
        let idx = self.multi_index(node);
        let mut p = [0.0; 2];
        for axis in 0..self.dim {
            p[axis] = self.extents[axis][0] + idx[axis] as f64 * self.dx[axis];
        }
        p
    }

    pub fn time(&self, level: usize) -> f64 {
        self.t_start + level as f64 * self.dt
    }

    /// Index of the level nearest to `t`, clamped to the grid.
    pub fn level_of(&self, t: f64) -> usize {
        let k = ((t - self.t_start) / self.dt).round();
        k.clamp(0.0, self.nt as f64) as usize
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        (0..self.dim).any(|a| idx[a] == 0 || idx[a] == self.nx[a])
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| !self.is_boundary(n)).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| self.is_boundary(n)).collect()
    }

    pub fn faces(&self) -> Vec<Face> {
        let mut out = Vec::with_capacity(2 * self.dim);
        for axis in 0..self.dim {
            out.push(Face { axis, side: Side::Low });
            out.push(Face { axis, side: Side::High });
        }
        out
    }

    /// Nodes on a face, ordered along the face.
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        let fixed = match face.side {
            Side::Low => 0,
            Side::High => self.nx[face.axis],
        };
        if self.dim == 1 {
            return vec![fixed];
        }
        let other = 1 - face.axis;
        (0..=self.nx[other])
            .map(|k| {
                let mut idx = [0usize; 2];
                idx[face.axis] = fixed;
                idx[other] = k;
                self.node_at(idx)
            })
            .collect()
    }

    /// Trapezoid weights along a face (1 for the single node of a 1D face).
    pub fn face_weights(&self, face: Face) -> Vec<f64> {
        if self.dim == 1 {
            return vec![1.0];
        }
        let other = 1 - face.axis;
        let n = self.nx[other];
        let h = self.dx[other];
        (0..=n).map(|k| if k == 0 || k == n { 0.5 * h } else { h }).collect()
    }

    pub fn face_tag(&self, face: Face) -> BoundaryTag {
        self.face_tags
            .iter()
            .find(|(f, _)| *f == face)
            .map(|(_, t)| *t)
            .unwrap_or(BoundaryTag::Complement)
    }

    pub fn faces_in(&self, subset: Subset) -> Vec<Face> {
        self.face_tags.iter().filter(|(_, t)| subset.contains(*t)).map(|(f, _)| *f).collect()
    }

    /// Boundary nodes carrying a tag selected by `subset`.
    pub fn nodes_in(&self, subset: Subset) -> Vec<usize> {
        self.boundary_tags.iter().filter(|(_, t)| subset.contains(**t)).map(|(n, _)| *n).collect()
    }

    /// Trapezoid weights of the spatial nodes (product rule).
    pub fn node_weights(&self) -> Vec<f64> {
        let axis_w = |axis: usize, k: usize| {
            let n = self.nx[axis];
            if k == 0 || k == n {
                0.5 * self.dx[axis]
            } else {
                self.dx[axis]
            }
        };
        (0..self.n_nodes())
            .map(|node| {
                let idx = self.multi_index(node);
                (0..self.dim).map(|a| axis_w(a, idx[a])).product()
            })
            .collect()
    }

    /// Trapezoid weights in time over levels `n0..=n1`, indexed from `n0`.
    pub fn time_weights(&self, n0: usize, n1: usize) -> Vec<f64> {
        (n0..=n1)
            .map(|n| if n0 == n1 { 0.0 } else if n == n0 || n == n1 { 0.5 * self.dt } else { self.dt })
            .collect()
    }

    /// A grid over the first `n_end + 1` levels of this one.
    pub fn truncated(&self, n_end: usize) -> Result<Grid> {
        if n_end == 0 || n_end > self.nt {
            return Err(Error::InvalidArgument(format!("cannot truncate to {n_end} of {} steps", self.nt)));
        }
        let mut g = self.clone();
        g.nt = n_end;
        g.t_final = self.t_start + n_end as f64 * self.dt;
        Ok(g)
    }

    /// A grid covering levels `n0..=n1` of this one, with time origin at level `n0`.
    pub fn time_window(&self, n0: usize, n1: usize) -> Result<Grid> {
        if n1 <= n0 || n1 > self.nt {
            return Err(Error::InvalidArgument(format!("bad time window [{n0}, {n1}] of {} steps", self.nt)));
        }
        let mut g = self.clone();
        g.t_start = self.time(n0);
        g.nt = n1 - n0;
        g.t_final = self.time(n1);
        Ok(g)
    }

    /// Shifts the time axis so that level 0 sits at `t0`.
    pub fn with_time_start(&self, t0: f64) -> Grid {
        let mut g = self.clone();
        g.t_final = t0 + (self.t_final - self.t_start);
        g.t_start = t0;
        g
    }

    /// Same spatial layout, a different time axis.
    pub fn with_time(&self, t_final: f64, nt: usize) -> Result<Grid> {
        let mut g = build_grid(&self.extents, &self.nx, t_final, nt, self.cfl_factor)?;
        g.x0 = self.x0.clone();
        g.face_tags = self.face_tags.clone();
        g.rebuild_node_tags();
        Ok(g)
    }

    /// Explicit face tagging, e.g. both endpoints of an interval.
    pub fn with_gamma0_faces(&self, faces: &[Face]) -> Grid {
        let mut g = self.clone();
        for (f, t) in g.face_tags.iter_mut() {
            *t = if faces.contains(f) { BoundaryTag::Gamma0 } else { BoundaryTag::Complement };
        }
        g.rebuild_node_tags();
        g
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.nx == other.nx
            && self.nt == other.nt
            && self.extents == other.extents
            && (self.dt - other.dt).abs() <= 1e-14 * self.dt
    }

    pub fn contains_closed(&self, p: &[f64]) -> bool {
        (0..self.dim).all(|a| p[a] >= self.extents[a][0] && p[a] <= self.extents[a][1])
    }

    /// Leapfrog stability: `dt^2 * sigma_max * sum_k 1/dx_k^2 <= 1`.
    pub fn check_cfl(&self, sigma_max: f64) -> Result<()> {
        let s: f64 = self.dx.iter().map(|h| 1.0 / (h * h)).sum();
        let ratio = self.dt * (sigma_max * s).sqrt();
        if ratio > 1.0 {
            return Err(Error::Cfl { ratio, bound: 1.0 });
        }
        let simple = self.dt * sigma_max.sqrt() / self.dx_min();
        if simple > self.cfl_factor * (1.0 + 1e-12) {
            return Err(Error::Cfl { ratio: simple, bound: self.cfl_factor });
        }
        Ok(())
    }

    fn rebuild_node_tags(&mut self) {
        let mut tags = BTreeMap::new();
        for node in self.boundary_nodes() {
            tags.insert(node, BoundaryTag::Complement);
        }
        for (face, tag) in self.face_tags.clone() {
            if tag == BoundaryTag::Gamma0 {
                for n in self.face_nodes(face) {
                    tags.insert(n, BoundaryTag::Gamma0);
                }
            }
        }
        self.boundary_tags = tags;
    }
}

fn check_outside(grid: &Grid, x0: &[f64]) -> Result<()> {
    if x0.len() != grid.dim() {
        return Err(Error::InvalidArgument(format!("x0 has {} coordinates, grid is {}D", x0.len(), grid.dim())));
    }
    if grid.contains_closed(x0) {
        return Err(Error::PointInsideDomain(x0.to_vec()));
    }
    Ok(())
}

/// Tags a face as observation boundary iff `(x - x0) . nu > 0` on it. On an
/// axis-aligned face the sign is constant, and for a diagonal conductivity
/// `sigma grad d . nu` has the same sign.
pub fn tag_gamma0(grid: &Grid, x0: &[f64]) -> Result<Grid> {
    check_outside(grid, x0)?;
    let mut g = grid.clone();
    for (face, tag) in g.face_tags.iter_mut() {
        let plane = match face.side {
            Side::Low => g.extents[face.axis][0],
            Side::High => g.extents[face.axis][1],
        };
        let s = (plane - x0[face.axis]) * face.normal_sign();
        *tag = if s > 0.0 { BoundaryTag::Gamma0 } else { BoundaryTag::Complement };
    }
    g.x0 = Some(x0.to_vec());
    g.rebuild_node_tags();
    Ok(g)
}

/// `T_* = 2 max |x - x0|` over the grid nodes.
pub fn minimal_time(grid: &Grid, x0: &[f64]) -> Result<f64> {
    check_outside(grid, x0)?;
    let mut best: f64 = 0.0;
    for node in 0..grid.n_nodes() {
        let p = grid.coord(node);
        let r: f64 = (0..grid.dim()).map(|a| (p[a] - x0[a]).powi(2)).sum::<f64>().sqrt();
        best = best.max(r);
    }
    Ok(2.0 * best)
}

/// Diagonal conductivity field, one entry per node and axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Conductivity {
    dim: usize,
    values: Vec<f64>,
}

impl Conductivity {
    pub fn constant(grid: &Grid, c: f64) -> Conductivity {
        Conductivity { dim: grid.dim(), values: vec![c; grid.n_nodes() * grid.dim()] }
    }

    pub fn identity(grid: &Grid) -> Conductivity {
        Conductivity::constant(grid, 1.0)
    }

    /// Isotropic `sigma(x) I`.
    pub fn isotropic(grid: &Grid, f: impl Fn(&Point) -> f64) -> Conductivity {
        Conductivity::diagonal(grid, |p| [f(p), f(p)])
    }

    pub fn diagonal(grid: &Grid, f: impl Fn(&Point) -> [f64; 2]) -> Conductivity {
        let dim = grid.dim();
        let mut values = Vec::with_capacity(grid.n_nodes() * dim);
        for node in 0..grid.n_nodes() {
            let d = f(&grid.coord(node));
            values.extend_from_slice(&d[..dim]);
        }
        Conductivity { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    #[inline]
    pub fn at(&self, node: usize, axis: usize) -> f64 {
        self.values[node * self.dim + axis]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_positive(&self) -> Result<()> {
        for (k, &v) in self.values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NotPositiveDefinite { node: k / self.dim, axis: k % self.dim, value: v });
            }
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.dim != grid.dim() || self.n_nodes() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "conductivity has {} nodes in {}D, grid has {} nodes in {}D",
                self.n_nodes(),
                self.dim,
                grid.n_nodes(),
                grid.dim()
            )));
        }
        Ok(())
    }
}

/// `d(x) = |x - x0|^2` sampled on the grid, with its exact gradient.
#[derive(Debug, Clone)]
pub struct WeightFunction {
    pub x0: Vec<f64>,
    pub values: Vec<f64>,
    pub gradient: Vec<Point>,
}

impl WeightFunction {
    pub fn new(grid: &Grid, x0: &[f64]) -> Result<WeightFunction> {
        check_outside(grid, x0)?;
        let mut values = Vec::with_capacity(grid.n_nodes());
        let mut gradient = Vec::with_capacity(grid.n_nodes());
        for node in 0..grid.n_nodes() {
            let p = grid.coord(node);
            let mut d = 0.0;
            let mut g = [0.0; 2];
            for a in 0..grid.dim() {
                d += (p[a] - x0[a]).powi(2);
                g[a] = 2.0 * (p[a] - x0[a]);
            }
            if g.iter().map(|v| v * v).sum::<f64>() <= 0.0 {
                return Err(Error::CriticalPoint(node));
            }
            values.push(d);
            gradient.push(g);
        }
        Ok(WeightFunction { x0: x0.to_vec(), values, gradient })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionH {
    pub rho0_estimate: f64,
    pub holds: bool,
}

/// Threshold above which the sampled estimate counts as a positive `rho0`.
pub const CONDITION_H_MARGIN: f64 = 0.05;

/// Second-order derivative of nodal values along `axis` (one-sided at the ends).
fn axis_derivative(grid: &Grid, values: &[f64], node: usize, axis: usize) -> f64 {
    let idx = grid.multi_index(node);
    let n = grid.nx()[axis];
    let h = grid.dx()[axis];
    let s = grid.stride(axis);
    let k = idx[axis];
    if k == 0 {
        (-3.0 * values[node] + 4.0 * values[node + s] - values[node + 2 * s]) / (2.0 * h)
    } else if k == n {
        (3.0 * values[node] - 4.0 * values[node - s] + values[node - 2 * s]) / (2.0 * h)
    } else {
        (values[node + s] - values[node - s]) / (2.0 * h)
    }
}

/// Minimum over nodes and sampled unit vectors of the quadratic form of the
/// conductivity condition divided by `xi^T sigma xi`.
///
/// For diagonal `sigma = diag(s_k)` the form reduces to
/// `M_ij = 2 s_i d_i(s_j d_j d) - delta_ij sum_k (d_k s_i) s_k d_k d`.
pub fn check_condition_h(sigma: &Conductivity, weight: &WeightFunction, grid: &Grid) -> Result<ConditionH> {
    sigma.check_grid(grid)?;
    sigma.check_positive()?;
    let dim = grid.dim();
    let nn = grid.n_nodes();

    // flux_j = s_j * d_j d at every node
    let flux: Vec<Vec<f64>> = (0..dim)
        .map(|j| (0..nn).map(|n| sigma.at(n, j) * weight.gradient[n][j]).collect())
        .collect();
    let sig: Vec<Vec<f64>> = (0..dim).map(|i| (0..nn).map(|n| sigma.at(n, i)).collect()).collect();

    let mut directions: Vec<Point> = Vec::new();
    if dim == 1 {
        directions.push([1.0, 0.0]);
    } else {
        directions.push([1.0, 0.0]);
        directions.push([0.0, 1.0]);
        for k in 0..16 {
            let th = std::f64::consts::PI * k as f64 / 16.0;
            directions.push([th.cos(), th.sin()]);
        }
    }

    let mut rho = f64::INFINITY;
    for node in 0..nn {
        let mut m = [[0.0; 2]; 2];
        for i in 0..dim {
            for j in 0..dim {
                m[i][j] = 2.0 * sigma.at(node, i) * axis_derivative(grid, &flux[j], node, i);
            }
            let mut corr = 0.0;
            for k in 0..dim {
                corr += axis_derivative(grid, &sig[i], node, k) * sigma.at(node, k) * weight.gradient[node][k];
            }
            m[i][i] -= corr;
        }
        for xi in &directions {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..dim {
                den += sigma.at(node, i) * xi[i] * xi[i];
                for j in 0..dim {
                    num += 0.5 * (m[i][j] + m[j][i]) * xi[i] * xi[j];
                }
            }
            rho = rho.min(num / den);
        }
    }
    Ok(ConditionH { rho0_estimate: rho, holds: rho > CONDITION_H_MARGIN })
}
