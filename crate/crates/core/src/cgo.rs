//! Complex geometrical optics solutions `a e^{i s tau (|x - x0| + t)} + R` of
//! `v_tt - Laplace v + q v = 0`.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{fmt, ComplexField, FieldKind, SpaceTimeField};
use crate::geometry::{build_grid, Conductivity, Grid, Point};
use crate::wave::{l2_norm, window_levels, LinearInputs, Region, WaveOperator};

/// Distance to the base point.
pub fn phase(x: &[f64], x0: &[f64]) -> f64 {
    x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Quintic smoothstep `6u^5 - 15u^4 + 10u^3` on `[0, 1]`.
fn smoothstep(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let v = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
        let d = 30.0 * u * u * (1.0 - u) * (1.0 - u);
        let dd = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
        (v, d, dd)
    }
}

/// `C^2` cutoff: rises on `[lo, lo + ramp]`, equals one, falls on `[hi - ramp, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub lo: f64,
    pub hi: f64,
    pub ramp: f64,
}

impl Cutoff {
    pub fn new(lo: f64, hi: f64, ramp: f64) -> Result<Cutoff> {
        if !(ramp > 0.0 && hi - lo >= 2.0 * ramp) {
            return Err(Error::InvalidArgument(format!("cutoff [{lo}, {hi}] cannot hold two ramps of width {ramp}")));
        }
        Ok(Cutoff { lo, hi, ramp })
    }

    /// Value and first two derivatives.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        let (a, da, dda) = smoothstep((s - self.lo) / self.ramp);
        let (b, db, ddb) = smoothstep((self.hi - s) / self.ramp);
        let r = self.ramp;
        let (da, dda) = (da / r, dda / (r * r));
        let (db, ddb) = (-db / r, ddb / (r * r));
        (a * b, da * b + a * db, dda * b + 2.0 * da * db + a * ddb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgoParams {
    pub tau: f64,
    /// `+1` or `-1`.
    pub sign: f64,
    pub x0: Vec<f64>,
    pub mu: f64,
    /// `None` picks a cutoff whose plateau covers `r + t` over the window.
    pub cutoff: Option<Cutoff>,
    /// Angular profile `cos(m theta)` (2D only).
    pub harmonic: u32,
}

impl CgoParams {
    pub fn new(tau: f64, sign: f64, x0: &[f64]) -> CgoParams {
        CgoParams { tau, sign, x0: x0.to_vec(), mu: 1.0, cutoff: None, harmonic: 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.tau.abs() <= 1.0 {
            return Err(Error::InvalidArgument(format!("|tau| must exceed 1, got {}", self.tau)));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::InvalidArgument("phase sign must be +1 or -1".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidArgument("decay rate mu must be positive".into()));
        }
        Ok(())
    }

    fn resolved_cutoff(&self, grid: &Grid) -> Result<Cutoff> {
        if let Some(c) = self.cutoff {
            return Ok(c);
        }
        let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
        for n in 0..grid.n_nodes() {
            let r = phase(&grid.coord(n)[..grid.dim()], &self.x0);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
        }
        let ramp = 0.5;
        Cutoff::new(rmin + grid.t_start() - ramp, rmax + grid.t_final() + ramp, ramp)
    }
}

/// Amplitude and its wave-operator image `a_tt - Laplace a` at one point.
#[derive(Debug, Clone, Copy)]
struct Amp {
    a: f64,
    box_a: f64,
}

fn amp_at(x: &[f64], t: f64, p: &CgoParams, chi: &Cutoff, dim: usize) -> Result<Amp> {
    let r = phase(x, &p.x0);
    if r < 1e-9 {
        return Err(Error::InvalidArgument("amplitude evaluated at the base point".into()));
    }
    let s = r + t;
    let (c, _, _) = chi.eval(s);
    let f = (-0.5 * p.mu * s).exp() * c;
    let k = 0.5 * (dim as f64 - 1.0);
    let (h, m2) = if dim == 2 && p.harmonic > 0 {
        let th = (x[1] - p.x0[1]).atan2(x[0] - p.x0[0]);
        (((p.harmonic as f64) * th).cos(), (p.harmonic as f64).powi(2))
    } else {
        (1.0, 0.0)
    };
    let a = f * r.powf(-k) * h;
    // a_tt - Laplace a = F r^{-k-2} h (m^2 - k^2) for F = F(r + t).
    let box_a = if dim == 1 { 0.0 } else { f * r.powf(-k - 2.0) * h * (m2 - k * k) };
    Ok(Amp { a, box_a })
}

/// `a(x, t) = e^{-mu (r + t)/2} chi(r + t) r^{-(n-1)/2} h(theta)`.
pub fn amplitude(x: &[f64], t: f64, params: &CgoParams, grid: &Grid) -> Result<f64> {
    let chi = params.resolved_cutoff(grid)?;
    Ok(amp_at(x, t, params, &chi, grid.dim())?.a)
}

#[derive(Debug, Clone)]
pub struct CgoSolution {
    pub principal: ComplexField,
    pub remainder: ComplexField,
    pub params: CgoParams,
    pub remainder_l2: f64,
}

/// Grid restricted to the levels of `[t1, t2]`.
pub fn window_grid(grid: &Grid, t1: f64, t2: f64) -> Result<Arc<Grid>> {
    let (n0, n1) = window_levels(grid, t1, t2)?;
    Ok(Arc::new(grid.time_window(n0, n1)?))
}

/// Points-per-wavelength limit: `dx tau <= 2 pi / 10`.
pub const RESOLUTION_LIMIT: f64 = std::f64::consts::TAU / 10.0;

pub fn check_resolution(grid: &Grid, tau: f64) -> Result<()> {
    let dx = grid.dx().iter().copied().fold(0.0, f64::max);
    let product = dx * tau.abs();
    if product > RESOLUTION_LIMIT * (1.0 + 1e-12) {
        return Err(Error::Resolution { product, limit: RESOLUTION_LIMIT });
    }
    Ok(())
}

/// Builds the CGO on `grid`, whose time range is the window `(t1, t2)`.
/// The remainder has zero Cauchy data at `t1` and zero Dirichlet data.
pub fn build_cgo(grid: &Arc<Grid>, q: Option<&SpaceTimeField>, params: &CgoParams) -> Result<CgoSolution> {
    params.validate()?;
    if params.x0.len() != grid.dim() {
        return Err(Error::Shape("base point dimension differs from the grid".into()));
    }
    if grid.contains_closed(&params.x0) {
        return Err(Error::PointInsideDomain(params.x0.clone()));
    }
    check_resolution(grid, params.tau)?;
    let chi = params.resolved_cutoff(grid)?;
    let dim = grid.dim();
    let nn = grid.n_nodes();
    let coords: Vec<Point> = (0..nn).map(|i| grid.coord(i)).collect();
    let mut pr = SpaceTimeField::zeros(grid.clone(), FieldKind::Solution);
    let mut pi = SpaceTimeField::zeros(grid.clone(), FieldKind::Solution);
    let mut kr = SpaceTimeField::zeros(grid.clone(), FieldKind::Source);
    let mut ki = SpaceTimeField::zeros(grid.clone(), FieldKind::Source);
    for l in 0..grid.n_levels() {
        let t = grid.time(l);
        for i in 0..nn {
            let x = &coords[i][..dim];
            let amp = amp_at(x, t, params, &chi, dim)?;
            let ph = params.sign * params.tau * (phase(x, &params.x0) + t);
            let (s, c) = ph.sin_cos();
            let qa = q.map_or(0.0, |q| q.at(l, i));
            let src = amp.box_a + qa * amp.a;
            pr.level_mut(l)[i] = amp.a * c;
            pi.level_mut(l)[i] = amp.a * s;
            kr.level_mut(l)[i] = -src * c;
            ki.level_mut(l)[i] = -src * s;
        }
    }
    let op = WaveOperator::new(grid.clone(), Arc::new(Conductivity::identity(grid)))?;
    let solve = |k: &SpaceTimeField| op.forward(&LinearInputs { potential: q, source: Some(k), ..Default::default() });
    let (rr, ri) = rayon::join(|| solve(&kr), || solve(&ki));
    let (rr, ri) = (rr?, ri?);
    let l2 = (l2_norm(&rr, Region::SpaceTime)?.powi(2) + l2_norm(&ri, Region::SpaceTime)?.powi(2)).sqrt();
    Ok(CgoSolution {
        principal: ComplexField::new(pr, pi)?,
        remainder: ComplexField::new(rr, ri)?,
        params: params.clone(),
        remainder_l2: l2,
    })
}

/// Max over interior nodes and levels of the centered-difference value of
/// `2 a_t - 2 grad eta . grad a - (Laplace eta) a`.
pub fn transport_residual(grid: &Grid, params: &CgoParams) -> Result<f64> {
    let chi = params.resolved_cutoff(grid)?;
    let dim = grid.dim();
    let nn = grid.n_nodes();
    let mut a = vec![0.0; grid.n_levels() * nn];
    for l in 0..grid.n_levels() {
        for i in 0..nn {
            a[l * nn + i] = amp_at(&grid.coord(i)[..dim], grid.time(l), params, &chi, dim)?.a;
        }
    }
    let dt = grid.dt();
    let interior = grid.interior_nodes();
    let mut worst: f64 = 0.0;
    for l in 1..grid.nt() {
        for &i in &interior {
            let x = grid.coord(i);
            let r = phase(&x[..dim], &params.x0);
            let at = (a[(l + 1) * nn + i] - a[(l - 1) * nn + i]) / (2.0 * dt);
            let mut grad_dot = 0.0;
            for axis in 0..dim {
                let s = grid.stride(axis);
                let h = grid.dx()[axis];
                let da = (a[l * nn + i + s] - a[l * nn + i - s]) / (2.0 * h);
                grad_dot += da * (x[axis] - params.x0[axis]) / r;
            }
            let lap_eta = (dim as f64 - 1.0) / r;
            let res = 2.0 * at - 2.0 * grad_dot - lap_eta * a[l * nn + i];
            worst = worst.max(res.abs());
        }
    }
    Ok(worst)
}

/// Max interior residual of `principal + remainder` under the discrete
/// operator, scaled by `tau^2` for comparison across a ladder.
pub fn pde_residual(sol: &CgoSolution, q: Option<&SpaceTimeField>) -> Result<f64> {
    let grid = sol.principal.re.grid().clone();
    let op = WaveOperator::new(grid.clone(), Arc::new(Conductivity::identity(&grid)))?;
    let dt2 = grid.dt().powi(2);
    let mut worst: f64 = 0.0;
    for part in [(&sol.principal.re, &sol.remainder.re), (&sol.principal.im, &sol.remainder.im)] {
        let mut v = part.0.clone();
        v.add_scaled(1.0, part.1)?;
        for l in 1..grid.nt() {
            let lap = op.laplacian(v.level(l));
            for &i in op.interior_nodes() {
                let utt = (v.at(l + 1, i) - 2.0 * v.at(l, i) + v.at(l - 1, i)) / dt2;
                let qv = q.map_or(0.0, |q| q.at(l, i)) * v.at(l, i);
                worst = worst.max((utt - lap[i] + qv).abs());
            }
        }
    }
    Ok(worst)
}

/// One row of a decay table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRow {
    pub tau: f64,
    pub nx: usize,
    pub remainder_l2: f64,
    pub points_per_wavelength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// True iff `remainder_l2` is non-increasing within 5% slack.
    pub decreasing: bool,
}

impl DecayTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau", "nx", "remainder_l2", "points_per_wavelength"])?;
        for r in &self.rows {
            w.write_record(&[fmt(r.tau), r.nx.to_string(), fmt(r.remainder_l2), fmt(r.points_per_wavelength)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Window geometry for a decay ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderSpec {
    pub extents: Vec<[f64; 2]>,
    pub window: (f64, f64),
    /// Cells per unit length per unit of tau; `nx = cells_per_tau * tau * length`.
    pub cells_per_tau: f64,
    pub cfl: f64,
}

/// Remainder norms along a `tau` ladder, refining the grid with `tau` so the
/// points per wavelength stay fixed. `q` is evaluated at `(x, t)`.
pub fn remainder_decay_table(
    spec: &LadderSpec,
    q: &(dyn Fn(&Point, f64) -> f64 + Sync),
    taus: &[f64],
    params: &CgoParams,
) -> Result<DecayTable> {
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("tau ladder must be increasing".into()));
    }
    let rows: Vec<DecayRow> = taus
        .par_iter()
        .map(|&tau| -> Result<DecayRow> {
            let nx: Vec<usize> = spec.extents.iter().map(|e| ((e[1] - e[0]) * spec.cells_per_tau * tau).round() as usize).collect();
            let dxmin = spec.extents.iter().zip(&nx).map(|(e, &n)| (e[1] - e[0]) / n as f64).fold(f64::INFINITY, f64::min);
            let (t1, t2) = spec.window;
            let nt = ((t2 - t1) / (spec.cfl * dxmin) - 1e-9).ceil() as usize;
            let g = build_grid(&spec.extents, &nx, t2 - t1, nt, spec.cfl)?;
            let g = Arc::new(g.with_time_start(t1));
            let qf = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |x, t| q(x, t));
            let qref = (qf.max_abs() > 0.0).then_some(&qf);
            let p = CgoParams { tau, ..params.clone() };
            let sol = build_cgo(&g, qref, &p)?;
            let dx = g.dx().iter().copied().fold(0.0, f64::max);
            Ok(DecayRow { tau, nx: nx[0], remainder_l2: sol.remainder_l2, points_per_wavelength: std::f64::consts::TAU / (tau * dx) })
        })
        .collect::<Result<_>>()?;
    let decreasing = rows.windows(2).all(|w| w[1].remainder_l2 <= 1.05 * w[0].remainder_l2);
    Ok(DecayTable { rows, decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_1d, grid_2d};

    #[test]
    fn phase_values() {
        assert_eq!(phase(&[1.0], &[-0.5]), 1.5);
        assert!((phase(&[1.0, 1.0], &[-0.5, 0.5]) - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(phase(&[0.2, 0.3], &[0.2, 0.3]), 0.0);
    }

    #[test]
    fn amplitude_plug_in() {
        let g = grid_2d([0.0, 1.0], [0.0, 1.0], [8, 8], 1.0, 0.5).unwrap();
        let mut p = CgoParams::new(10.0, 1.0, &[-3.5, 0.0]);
        p.mu = 1e-300;
        p.cutoff = Some(Cutoff::new(-100.0, 100.0, 1.0).unwrap());
        let a = amplitude(&[0.5, 0.0], 0.0, &p, &g).unwrap();
        assert!((a - 0.5).abs() < 1e-14);
        let g1 = grid_1d(0.0, 1.0, 8, 1.0, 0.5).unwrap();
        let mut p1 = CgoParams::new(10.0, 1.0, &[-0.5]);
        p1.cutoff = Some(Cutoff::new(-100.0, 100.0, 1.0).unwrap());
        let a1 = amplitude(&[1.0], 0.5, &p1, &g1).unwrap();
        assert!((a1 - (-0.5f64 * 2.0).exp()).abs() < 1e-14);
    }

    #[test]
    fn cutoff_derivatives() {
        let c = Cutoff::new(0.0, 3.0, 1.0).unwrap();
        let h = 1e-5;
        for s in [0.3, 0.7, 1.5, 2.4] {
            let (v, d, dd) = c.eval(s);
            let (vp, dp, _) = c.eval(s + h);
            let (vm, dm, _) = c.eval(s - h);
            assert!(((vp - vm) / (2.0 * h) - d).abs() < 1e-8);
            assert!(((dp - dm) / (2.0 * h) - dd).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(Cutoff::new(0.0, 1.0, 0.6).is_err());
    }

    #[test]
    fn box_of_amplitude_matches_finite_differences() {
        let g = grid_2d([0.0, 1.0], [0.0, 1.0], [8, 8], 1.0, 0.5).unwrap();
        let mut p = CgoParams::new(4.0, 1.0, &[-0.5, 0.3]);
        p.harmonic = 2;
        let chi = p.resolved_cutoff(&g).unwrap();
        let h = 1e-3;
        let x = [0.4, 0.6];
        let t = 0.3;
        let a = |x: &[f64], t: f64| amp_at(x, t, &p, &chi, 2).unwrap().a;
        let att = (a(&x, t + h) - 2.0 * a(&x, t) + a(&x, t - h)) / (h * h);
        let lap = (a(&[x[0] + h, x[1]], t) + a(&[x[0] - h, x[1]], t) + a(&[x[0], x[1] + h], t) + a(&[x[0], x[1] - h], t)
            - 4.0 * a(&x, t))
            / (h * h);
        let exact = amp_at(&x, t, &p, &chi, 2).unwrap().box_a;
        assert!((att - lap - exact).abs() < 1e-4, "{} vs {exact}", att - lap);
    }

    #[test]
    fn transport_residual_second_order() {
        let p = CgoParams::new(4.0, 1.0, &[-0.5, 0.5]);
        let res = |n: usize| {
            let g = grid_2d([0.0, 1.0], [0.0, 1.0], [n, n], 1.0, 0.5).unwrap().with_time_start(1.0);
            transport_residual(&g, &p).unwrap()
        };
        let (r1, r2) = (res(32), res(64));
        let ratio = r1 / r2;
        assert!((3.5..4.5).contains(&ratio), "{r1} {r2} {ratio}");
    }

    #[test]
    fn cutoff_outside_window_gives_zero() {
        let g = Arc::new(grid_1d(0.0, 1.0, 80, 1.0, 0.5).unwrap().with_time_start(1.0));
        let mut p = CgoParams::new(8.0, 1.0, &[-0.5]);
        p.cutoff = Some(Cutoff::new(10.0, 12.0, 0.5).unwrap());
        let s = build_cgo(&g, None, &p).unwrap();
        assert_eq!(s.principal.re.max_abs(), 0.0);
        assert_eq!(s.remainder_l2, 0.0);
    }

    #[test]
    fn remainder_zero_cauchy_and_boundary_data() {
        let g = Arc::new(grid_2d([0.0, 1.0], [0.0, 1.0], [32, 32], 0.5, 0.5).unwrap().with_time_start(1.0));
        let q = SpaceTimeField::from_fn(g.clone(), FieldKind::Potential, |x, _| (-(x[0] - 0.5).powi(2) * 10.0).exp());
        let s = build_cgo(&g, Some(&q), &CgoParams::new(8.0, -1.0, &[-0.5, 0.5])).unwrap();
        for part in [&s.remainder.re, &s.remainder.im] {
            assert!(part.level(0).iter().all(|&v| v == 0.0));
            for l in 0..g.n_levels() {
                for b in g.boundary_nodes() {
                    assert_eq!(part.at(l, b), 0.0);
                }
            }
        }
        assert!(s.remainder_l2 > 0.0);
        assert!(pde_residual(&s, Some(&q)).unwrap().is_finite());
    }

    #[test]
    fn under_resolved_rejected() {
        let g = Arc::new(grid_1d(0.0, 1.0, 20, 1.0, 0.5).unwrap());
        let r = build_cgo(&g, None, &CgoParams::new(40.0, 1.0, &[-0.5]));
        assert!(matches!(r, Err(Error::Resolution { .. })));
    }

    #[test]
    fn single_entry_ladder_is_trivially_decreasing() {
        let spec = LadderSpec { extents: vec![[0.0, 1.0]], window: (1.0, 1.5), cells_per_tau: 4.0, cfl: 0.5 };
        let t = remainder_decay_table(&spec, &|_, _| 0.0, &[8.0], &CgoParams::new(8.0, 1.0, &[-0.5])).unwrap();
        assert!(t.decreasing);
        assert_eq!(t.rows.len(), 1);
    }
}
