//! Finite bases for unknown coefficients and boundary probe directions.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::control::cubic_bspline;
use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, FieldKind, SpaceTimeField};
use crate::geometry::{Grid, Subset};
use crate::wave::{field_dot, window_levels};

/// Clamped B-splines of degree `min(3, n - 1)` on `[t1, t2]`, evaluated at `t`.
/// The functions sum to one on the interval and vanish outside it.
pub fn clamped_bsplines(t: f64, t1: f64, t2: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if n == 0 || t < t1 || t > t2 {
        return out;
    }
    let p = (n - 1).min(3);
    let inner = n - p - 1;
    let mut knots = vec![t1; p + 1];
    for j in 1..=inner {
        knots.push(t1 + (t2 - t1) * j as f64 / (inner + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(t2, p + 1));
    if t >= t2 {
        out[n - 1] = 1.0;
        return out;
    }
    // degree-0 functions on the knot spans
    let m = knots.len() - 1;
    let mut b: Vec<f64> = (0..m).map(|i| if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 }).collect();
    for d in 1..=p {
        let mut next = vec![0.0; m - d];
        for i in 0..m - d {
            let l = knots[i + d] - knots[i];
            let r = knots[i + d + 1] - knots[i + 1];
            let a = if l > 0.0 { (t - knots[i]) / l * b[i] } else { 0.0 };
            let c = if r > 0.0 { (knots[i + d + 1] - t) / r * b[i + 1] } else { 0.0 };
            next[i] = a + c;
        }
        b = next;
    }
    out.copy_from_slice(&b[..n]);
    out
}

/// Tensor basis: cosines in space (per axis) times clamped B-splines on a time window.
#[derive(Debug, Clone)]
pub struct RecoveryBasis {
    grid: Arc<Grid>,
    n_space: usize,
    n_time: usize,
    window: (f64, f64),
    functions: Vec<SpaceTimeField>,
}

impl RecoveryBasis {
    /// `n_space` cosines per axis and `n_time` splines on `window`.
    pub fn new(grid: &Arc<Grid>, n_space: usize, n_time: usize, window: (f64, f64)) -> Result<RecoveryBasis> {
        if n_space == 0 || n_time == 0 {
            return Err(Error::InvalidArgument("basis needs at least one function per factor".into()));
        }
        let (t1, t2) = window;
        window_levels(grid, t1, t2)?;
        let dim = grid.dim();
        let ext = grid.extents().to_vec();
        let mut space: Vec<[usize; 2]> = Vec::new();
        if dim == 1 {
            space.extend((0..n_space).map(|j| [j, 0]));
        } else {
            for k in 0..n_space {
                for j in 0..n_space {
                    space.push([j, k]);
                }
            }
        }
        let tol = 1e-9 * grid.dt();
        let times: Vec<Vec<f64>> = (0..grid.n_levels())
            .map(|l| {
                let t = grid.time(l);
                if t < t1 - tol || t > t2 + tol {
                    vec![0.0; n_time]
                } else {
                    clamped_bsplines(t.clamp(t1, t2), t1, t2, n_time)
                }
            })
            .collect();
        let mut functions = Vec::with_capacity(space.len() * n_time);
        for s in &space {
            let shape: Vec<f64> = (0..grid.n_nodes())
                .map(|n| {
                    let c = grid.coord(n);
                    (0..dim)
                        .map(|a| {
                            let [lo, hi] = ext[a];
                            (s[a] as f64 * PI * (c[a] - lo) / (hi - lo)).cos()
                        })
                        .product()
                })
                .collect();
            for j in 0..n_time {
                let mut f = SpaceTimeField::zeros(grid.clone(), FieldKind::Potential);
                for (l, b) in times.iter().enumerate() {
                    if b[j] != 0.0 {
                        f.level_mut(l).iter_mut().zip(&shape).for_each(|(v, s)| *v = s * b[j]);
                    }
                }
                functions.push(f);
            }
        }
        Ok(RecoveryBasis { grid: grid.clone(), n_space, n_time, window, functions })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn len(&self) -> usize {
        self.functions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
    pub fn window(&self) -> (f64, f64) {
        self.window
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.n_space, self.n_time)
    }
    pub fn functions(&self) -> &[SpaceTimeField] {
        &self.functions
    }

    pub fn synthesize(&self, coefficients: &[f64]) -> SpaceTimeField {
        let mut out = SpaceTimeField::zeros(self.grid.clone(), FieldKind::Potential);
        for (c, f) in coefficients.iter().zip(&self.functions) {
            if *c != 0.0 {
                out.add_scaled(*c, f).expect("same grid");
            }
        }
        out
    }

    /// Gram matrix in `L2(Omega x window)`, row-major.
    pub fn gram(&self) -> Result<Vec<f64>> {
        let (n0, n1) = window_levels(&self.grid, self.window.0, self.window.1)?;
        let n = self.len();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = field_dot(&self.functions[i], &self.functions[j], n0, n1)?;
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        Ok(g)
    }
}

/// Dirichlet probes on the observation boundary: per face and cosine mode,
/// `m` cubic B-splines in time at spacing `t_end / m`. Each vanishes near `t = 0`.
pub fn probe_directions(grid: &Arc<Grid>, m: usize, modes_per_face: usize, t_end: f64) -> Result<Vec<BoundaryTrace>> {
    if m == 0 || t_end <= grid.t_start() {
        return Err(Error::InvalidArgument("probe directions need m >= 1 and a positive horizon".into()));
    }
    let h = (t_end - grid.t_start()) / m as f64;
    let mut out = Vec::new();
    let template = BoundaryTrace::dirichlet(grid.clone(), Subset::Gamma0);
    if template.n_points() == 0 {
        return Err(Error::EmptyRegion("no observation boundary".into()));
    }
    for face in grid.faces_in(Subset::Gamma0) {
        let nodes = grid.face_nodes(face);
        let modes = if grid.dim() == 1 { 1 } else { modes_per_face.max(1) };
        for k in 0..modes {
            let profile: Vec<(usize, f64)> = nodes
                .iter()
                .map(|&node| {
                    let pos = template.points().iter().position(|p| p.node == node).expect("face node on Gamma0");
                    let v = if grid.dim() == 1 {
                        1.0
                    } else {
                        let along = 1 - face.axis;
                        let [a, b] = grid.extents()[along];
                        (k as f64 * PI * (grid.coord(node)[along] - a) / (b - a)).cos()
                    };
                    (pos, v)
                })
                .collect();
            for j in 0..m {
                let mut tr = template.clone();
                for l in 0..grid.n_levels() {
                    let b = cubic_bspline(grid.time(l), grid.t_start() + j as f64 * h, h);
                    if b != 0.0 {
                        let row = tr.level_mut(l);
                        for &(pos, v) in &profile {
                            row[pos] = v * b;
                        }
                    }
                }
                out.push(tr);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_1d, grid_2d};

    #[test]
    fn splines_partition_unity() {
        for n in 1..8 {
            for k in 0..=40 {
                let t = 1.0 + k as f64 / 40.0;
                let s: f64 = clamped_bsplines(t, 1.0, 2.0, n).iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "n={n} t={t} sum={s}");
            }
            assert!(clamped_bsplines(0.99, 1.0, 2.0, n).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn basis_is_window_supported() {
        let g = Arc::new(grid_1d(0.0, 1.0, 20, 2.0, 0.5).unwrap());
        let b = RecoveryBasis::new(&g, 3, 4, (0.5, 1.5)).unwrap();
        assert_eq!(b.len(), 12);
        for f in b.functions() {
            for l in 0..g.n_levels() {
                let t = g.time(l);
                if !(0.5 - 1e-9..=1.5 + 1e-9).contains(&t) {
                    assert!(f.level(l).iter().all(|&v| v == 0.0));
                }
            }
        }
        let gram = b.gram().unwrap();
        assert!((0..12).all(|i| gram[i * 12 + i] > 0.0));
        let g2 = Arc::new(grid_2d([0.0, 1.0], [0.0, 1.0], [8, 8], 1.0, 0.5).unwrap());
        assert_eq!(RecoveryBasis::new(&g2, 2, 2, (0.2, 0.8)).unwrap().len(), 8);
    }

    #[test]
    fn probes_vanish_at_start() {
        let g = Arc::new(grid_1d(0.0, 1.0, 20, 2.0, 0.5).unwrap());
        let g = Arc::new(g.with_gamma0_faces(&g.faces()));
        let p = probe_directions(&g, 4, 1, 2.0).unwrap();
        assert_eq!(p.len(), 8);
        for tr in &p {
            assert!(tr.level(0).iter().all(|&v| v == 0.0));
            assert!(!tr.is_zero());
        }
    }
}
