//! Finite-difference derivatives of the solution map in small boundary
//! parameters, and space-time integral identities.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, ComplexField, FieldKind, SpaceTimeField};
use crate::measurement::{MeasurementOracle, Scenario};
use crate::wave::window_levels;

/// Smallest accepted step.
pub const MIN_STEP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Forward,
    Central,
}

/// Directions `g_l`, step `eps`, highest order and difference scheme.
#[derive(Debug, Clone)]
pub struct LinearizationStencil {
    pub directions: Vec<BoundaryTrace>,
    pub eps: f64,
    pub order: usize,
    pub scheme: Scheme,
}

/// One stencil point: input `eps * sum_d k_d g_d` and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Corner {
    pub multiples: Vec<i64>,
    pub weight: f64,
}

impl LinearizationStencil {
    /// Central differences up to order 2, forward corners for orders 3 and 4.
    pub fn new(directions: Vec<BoundaryTrace>, eps: f64, order: usize) -> Result<LinearizationStencil> {
        let scheme = if order <= 2 { Scheme::Central } else { Scheme::Forward };
        let s = LinearizationStencil { directions, eps, order, scheme };
        s.validate()?;
        Ok(s)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> LinearizationStencil {
        self.scheme = scheme;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Result<LinearizationStencil> {
        self.eps = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.eps)));
        }
        if self.eps < MIN_STEP {
            return Err(Error::StepTooSmall(self.eps));
        }
        if self.order == 0 || self.order > 4 {
            return Err(Error::InvalidArgument(format!("order {} not in 1..=4", self.order)));
        }
        let first = self.directions.first().ok_or_else(|| Error::InvalidArgument("no directions".into()))?;
        for (k, g) in self.directions.iter().enumerate() {
            g.check_compatible(first)?;
            if g.is_zero() {
                return Err(Error::InvalidArgument(format!("direction {k} is zero")));
            }
            if g.level(0).iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument(format!("direction {k} is nonzero at t = 0")));
            }
        }
        Ok(())
    }

    /// Solver-tolerance to `eps^M` ratio, a rough bound on relative cancellation error.
    pub fn cancellation_ratio(&self, solver_tol: f64, m: usize) -> f64 {
        solver_tol / self.eps.powi(m as i32)
    }

    /// Stencil points for the mixed derivative in the indexed directions.
    /// Points with equal inputs are merged.
    pub fn corners(&self, multi_index: &[usize]) -> Result<Vec<Corner>> {
        let m = multi_index.len();
        if m == 0 || m > self.order {
            return Err(Error::InvalidArgument(format!("multi-index length {m} not in 1..={}", self.order)));
        }
        if let Some(&d) = multi_index.iter().find(|&&d| d >= self.directions.len()) {
            return Err(Error::InvalidArgument(format!("direction {d} out of range")));
        }
        let nd = self.directions.len();
        let mut acc: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for mask in 0..(1usize << m) {
            let mut k = vec![0i64; nd];
            let weight = match self.scheme {
                Scheme::Forward => {
                    let mut ones = 0;
                    for (p, &d) in multi_index.iter().enumerate() {
                        if mask >> p & 1 == 1 {
                            k[d] += 1;
                            ones += 1;
                        }
                    }
                    let sign = if (m - ones).is_multiple_of(2) { 1.0 } else { -1.0 };
                    sign / self.eps.powi(m as i32)
                }
                Scheme::Central => {
                    let mut sign = 1.0;
                    for (p, &d) in multi_index.iter().enumerate() {
                        if mask >> p & 1 == 1 {
                            k[d] += 1;
                        } else {
                            k[d] -= 1;
                            sign = -sign;
                        }
                    }
                    sign / (2.0 * self.eps).powi(m as i32)
                }
            };
            *acc.entry(k).or_insert(0.0) += weight;
        }
        let scale = match self.scheme {
            Scheme::Forward => 1.0 / self.eps.powi(m as i32),
            Scheme::Central => 1.0 / (2.0 * self.eps).powi(m as i32),
        };
        Ok(acc
            .into_iter()
            .filter(|(_, w)| w.abs() > 0.5 * scale)
            .map(|(multiples, weight)| Corner { multiples, weight })
            .collect())
    }

    /// Boundary input of a stencil point.
    pub fn input(&self, corner: &Corner) -> BoundaryTrace {
        let mut h = self.directions[0].zeros_like();
        for (d, &k) in corner.multiples.iter().enumerate() {
            if k != 0 {
                let s = self.eps * k as f64;
                h.values_mut().iter_mut().zip(self.directions[d].values()).for_each(|(a, b)| *a += s * b);
            }
        }
        h
    }
}

/// Mixed finite-difference derivative of `u(.; eps)` at `eps = 0`.
pub fn fd_linearize(scenario: &Scenario, stencil: &LinearizationStencil, multi_index: &[usize]) -> Result<SpaceTimeField> {
    stencil.validate()?;
    let corners = stencil.corners(multi_index)?;
    let ratio = stencil.cancellation_ratio(scenario.options.tol, multi_index.len());
    log::debug!("fd_linearize: {} corners, cancellation ratio {ratio:e}", corners.len());
    let solves: Vec<Result<SpaceTimeField>> = corners
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let h = stencil.input(c);
            scenario.solve(Some(&h)).map(|(u, _)| u).map_err(|e| e.in_stage(format!("stencil point {k}")))
        })
        .collect();
    let mut out = SpaceTimeField::zeros(scenario.grid.clone(), FieldKind::Solution);
    for (c, u) in corners.iter().zip(solves) {
        out.add_scaled(c.weight, &u?)?;
    }
    Ok(out)
}

/// Finite-difference derivative of full input-output records.
#[derive(Debug, Clone)]
pub struct LinearizedRecord {
    pub flux: BoundaryTrace,
    pub final_state: (Vec<f64>, Vec<f64>),
}

/// Same stencil as [`fd_linearize`], applied to oracle records.
pub fn fd_linearize_oracle(
    oracle: &dyn MeasurementOracle,
    stencil: &LinearizationStencil,
    multi_index: &[usize],
) -> Result<LinearizedRecord> {
    stencil.validate()?;
    let corners = stencil.corners(multi_index)?;
    let records: Vec<_> = corners
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let h = stencil.input(c);
            oracle.full_io(Some(&h)).map_err(|e| e.in_stage(format!("stencil point {k}")))
        })
        .collect();
    let mut flux: Option<BoundaryTrace> = None;
    let nn = oracle.grid().n_nodes();
    let mut fu = vec![0.0; nn];
    let mut fv = vec![0.0; nn];
    for (c, r) in corners.iter().zip(records) {
        let r = r?;
        let (u, v) = r.final_state.ok_or_else(|| Error::InvalidArgument("oracle record lacks a final state".into()))?;
        match &mut flux {
            None => flux = Some(r.flux.scaled(c.weight)),
            Some(f) => *f = f.combined(c.weight, &r.flux)?,
        }
        fu.iter_mut().zip(&u).for_each(|(a, b)| *a += c.weight * b);
        fv.iter_mut().zip(&v).for_each(|(a, b)| *a += c.weight * b);
    }
    Ok(LinearizedRecord { flux: flux.expect("at least one corner"), final_state: (fu, fv) })
}

/// Set partitions of `mask` (a bit set) into blocks; blocks are bit sets.
pub fn set_partitions(mask: u32) -> Vec<Vec<u32>> {
    if mask == 0 {
        return vec![Vec::new()];
    }
    let low = mask & mask.wrapping_neg();
    let rest = mask & !low;
    let mut out = Vec::new();
    // every block containing the lowest element
    let mut sub = rest;
    loop {
        let block = low | sub;
        for mut p in set_partitions(rest & !sub) {
            p.insert(0, block);
            out.push(p);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Factor of an integral identity.
#[derive(Debug, Clone, Copy)]
pub enum TestField<'a> {
    Real(&'a SpaceTimeField),
    Complex(&'a ComplexField),
}

impl TestField<'_> {
    fn grid(&self) -> &std::sync::Arc<crate::geometry::Grid> {
        match self {
            TestField::Real(f) => f.grid(),
            TestField::Complex(f) => f.grid(),
        }
    }
    fn at(&self, level: usize, node: usize) -> Complex64 {
        match self {
            TestField::Real(f) => Complex64::new(f.at(level, node), 0.0),
            TestField::Complex(f) => f.at(level, node),
        }
    }
}

/// Trapezoid value of `int_{t1}^{t2} int_Omega delta * prod(tests) dx dt`.
pub fn integral_identity(delta: &SpaceTimeField, tests: &[TestField<'_>], window: (f64, f64)) -> Result<Complex64> {
    let grid = delta.grid();
    let (t1, t2) = window;
    let tol = 1e-9 * grid.dt();
    if t1 < grid.t_start() - tol || t2 > grid.t_final() + tol || t2 <= t1 {
        return Err(Error::InvalidArgument(format!(
            "window [{t1}, {t2}] not inside [{}, {}]",
            grid.t_start(),
            grid.t_final()
        )));
    }
    if tests.len() < 2 {
        return Err(Error::InvalidArgument("integral identity needs at least two test solutions".into()));
    }
    for t in tests {
        if !t.grid().same_layout(grid) {
            return Err(Error::GridMismatch("test solution does not match the delta field grid".into()));
        }
    }
    let (n0, n1) = window_levels(grid, t1, t2)?;
    let w = grid.node_weights();
    let tw = grid.time_weights(n0, n1);
    let mut total = Complex64::new(0.0, 0.0);
    for (n, wt) in (n0..=n1).zip(tw) {
        let row = delta.level(n);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..w.len() {
            if row[i] == 0.0 {
                continue;
            }
            let mut p = Complex64::new(w[i] * row[i], 0.0);
            for t in tests {
                p *= t.at(n, i);
            }
            acc += p;
        }
        total += acc * wt;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_1d, Conductivity, Grid};
    use crate::inversion::basis::probe_directions;
    use crate::semilinear::Nonlinearity;
    use crate::wave::{l2_norm, solve_linear, Region};
    use std::sync::Arc;

    fn setup(nx: usize, t: f64, nl: Nonlinearity) -> (Scenario, Vec<BoundaryTrace>) {
        let g = grid_1d(0.0, 1.0, nx, t, 0.5).unwrap();
        let g: Arc<Grid> = Arc::new(g.with_gamma0_faces(&g.faces()));
        let s = Arc::new(Conductivity::identity(&g));
        let dirs = probe_directions(&g, 3, 1, t).unwrap();
        (Scenario::at_rest(g, s, nl), dirs)
    }

    #[test]
    fn corner_counts_and_weights() {
        let (_, dirs) = setup(10, 1.0, Nonlinearity::zero());
        let st = LinearizationStencil::new(dirs.clone(), 1e-3, 4).unwrap();
        let fwd = st.clone().with_scheme(Scheme::Forward);
        assert_eq!(fwd.corners(&[0, 1, 2]).unwrap().len(), 8);
        assert_eq!(st.corners(&[0]).unwrap().len(), 2);
        // repeated index: u(2e) - 2u(0) + u(-2e)
        let c = st.corners(&[1, 1]).unwrap();
        assert_eq!(c.len(), 3);
        let sum: f64 = c.iter().map(|c| c.weight).sum();
        assert!(sum.abs() < 1e-6);
        assert!(matches!(LinearizationStencil::new(dirs.clone(), 1e-9, 1), Err(Error::StepTooSmall(_))));
        assert!(LinearizationStencil::new(dirs, 1e-3, 5).is_err());
    }

    #[test]
    fn partitions_are_bell_numbers() {
        assert_eq!(set_partitions(0b1).len(), 1);
        assert_eq!(set_partitions(0b11).len(), 2);
        assert_eq!(set_partitions(0b111).len(), 5);
        assert_eq!(set_partitions(0b1111).len(), 15);
        for p in set_partitions(0b1011) {
            assert_eq!(p.iter().fold(0, |a, b| a | b), 0b1011);
        }
    }

    #[test]
    fn linear_first_order_matches_linear_solve() {
        let (sc, dirs) = setup(40, 1.5, Nonlinearity::linear(2.0));
        let st = LinearizationStencil::new(dirs.clone(), 1e-2, 1).unwrap();
        let v = fd_linearize(&sc, &st, &[1]).unwrap();
        let pot = SpaceTimeField::from_fn(sc.grid.clone(), FieldKind::Potential, |_, _| 2.0);
        let exact = solve_linear(&sc.grid, &sc.sigma, Some(&pot), None, Some(&dirs[1]), None, None).unwrap();
        let err = l2_norm(&v.sub(&exact).unwrap(), Region::SpaceTime).unwrap();
        assert!(err < 1e-9 * l2_norm(&exact, Region::SpaceTime).unwrap());
    }

    #[test]
    fn quadratic_second_order_matches_w_equation() {
        let (sc, dirs) = setup(40, 1.5, Nonlinearity::taylor(vec![0.0.into(), 0.0.into(), 1.0.into()]));
        let v1 = solve_linear(&sc.grid, &sc.sigma, None, None, Some(&dirs[0]), None, None).unwrap();
        let v2 = solve_linear(&sc.grid, &sc.sigma, None, None, Some(&dirs[2]), None, None).unwrap();
        let mut src = SpaceTimeField::zeros(sc.grid.clone(), FieldKind::Source);
        src.values_mut().iter_mut().zip(v1.values().iter().zip(v2.values())).for_each(|(s, (a, b))| *s = -2.0 * a * b);
        let w = solve_linear(&sc.grid, &sc.sigma, None, Some(&src), None, None, None).unwrap();
        let wn = l2_norm(&w, Region::SpaceTime).unwrap();
        let mut errs = Vec::new();
        for eps in [1e-1, 5e-2] {
            let st = LinearizationStencil::new(dirs.clone(), eps, 2).unwrap().with_scheme(Scheme::Forward);
            let d = fd_linearize(&sc, &st, &[0, 2]).unwrap();
            errs.push(l2_norm(&d.sub(&w).unwrap(), Region::SpaceTime).unwrap() / wn);
        }
        assert!(errs[0] < 0.2, "{errs:?}");
        // first order in eps
        let ratio = errs[0] / errs[1];
        assert!((1.6..2.4).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn identity_of_zero_delta_vanishes() {
        let (sc, _) = setup(20, 1.0, Nonlinearity::zero());
        let d = SpaceTimeField::zeros(sc.grid.clone(), FieldKind::Potential);
        let a = SpaceTimeField::from_fn(sc.grid.clone(), FieldKind::Solution, |x, t| x[0] + t);
        let v = integral_identity(&d, &[TestField::Real(&a), TestField::Real(&a)], (0.2, 0.8)).unwrap();
        assert_eq!(v, Complex64::new(0.0, 0.0));
        assert!(integral_identity(&d, &[TestField::Real(&a)], (0.2, 0.8)).is_err());
        assert!(integral_identity(&d, &[TestField::Real(&a), TestField::Real(&a)], (0.2, 1.8)).is_err());
    }

    #[test]
    fn identity_quadrature_of_polynomial() {
        let g = Arc::new(grid_1d(0.0, 1.0, 200, 1.0, 0.5).unwrap());
        let d = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |_, _| 1.0);
        let a = SpaceTimeField::from_fn(g.clone(), FieldKind::Solution, |x, _| x[0]);
        let b = SpaceTimeField::from_fn(g.clone(), FieldKind::Solution, |_, t| t);
        let v = integral_identity(&d, &[TestField::Real(&a), TestField::Real(&b)], (0.0, 1.0)).unwrap();
        assert!((v.re - 0.25).abs() < 1e-4 && v.im == 0.0);
    }
}
