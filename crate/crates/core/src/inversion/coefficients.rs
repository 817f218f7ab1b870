//! Recovery of the linearized potential and higher Taylor coefficients of the
//! nonlinearity from input-output records, by Tikhonov least squares on a
//! finite space-time basis.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{fmt, FieldKind, SpaceTimeField};
use crate::geometry::{Conductivity, Subset};
use crate::measurement::MeasurementOracle;
use crate::wave::{l2_norm, terminal_state, LinearInputs, Region, WaveOperator};

use super::basis::RecoveryBasis;
use super::linearize::{fd_linearize_oracle, set_partitions, LinearizationStencil, LinearizedRecord};

/// Normal equations with a condition estimate above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;
const MAX_GAUSS_NEWTON: usize = 12;
const GAUSS_NEWTON_TOL: f64 = 1e-10;
const MAX_TUPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LCurvePoint {
    pub lambda: f64,
    pub residual: f64,
    pub solution_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RecoveryDiagnostics {
    pub iterations: usize,
    /// Data residual over data norm at the solution.
    pub relative_misfit: f64,
    pub condition: f64,
    pub cancellation_ratio: f64,
    pub equations: usize,
    pub lcurve: Vec<LCurvePoint>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub recovered: SpaceTimeField,
    pub coefficients: Vec<f64>,
    pub truth: Option<SpaceTimeField>,
    pub rel_l2_error: Option<f64>,
    pub regularization: f64,
    pub window: (f64, f64),
    pub diagnostics: RecoveryDiagnostics,
}

impl RecoveryResult {
    /// Attaches a reference field and the relative L2 error on the basis window.
    pub fn with_truth(mut self, truth: SpaceTimeField) -> Result<RecoveryResult> {
        self.recovered.check_same_grid(&truth)?;
        let region = Region::Window(self.window.0, self.window.1);
        let err = l2_norm(&self.recovered.sub(&truth)?, region)?;
        let norm = l2_norm(&truth, region)?;
        self.rel_l2_error = Some(if norm > 0.0 { err / norm } else { err });
        self.truth = Some(truth);
        Ok(self)
    }

    /// Writes `recovered.wfld`, `lcurve.csv` and, with a truth, `truth.wfld`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.recovered.write_wfld(&dir.join("recovered.wfld"))?;
        if let Some(t) = &self.truth {
            t.write_wfld(&dir.join("truth.wfld"))?;
        }
        let mut w = csv::Writer::from_path(dir.join("lcurve.csv"))?;
        w.write_record(["lambda", "residual", "solution_norm"])?;
        for p in &self.diagnostics.lcurve {
            w.write_record(&[fmt(p.lambda), fmt(p.residual), fmt(p.solution_norm)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weighted sampling of a solution: conormal flux on the whole boundary
/// (trapezoid in space and time) followed by the final state.
pub(crate) struct Observer {
    op: WaveOperator,
    flux_w: Vec<f64>,
    node_w: Vec<f64>,
}

impl Observer {
    pub(crate) fn new(op: WaveOperator) -> Result<Observer> {
        let grid = op.grid().clone();
        let template = crate::field::BoundaryTrace::flux(grid.clone(), Subset::All);
        let tw = grid.time_weights(0, grid.nt());
        let mut flux_w = Vec::with_capacity(tw.len() * template.n_points());
        for w in &tw {
            flux_w.extend(template.weights().iter().map(|p| (w * p).sqrt()));
        }
        let node_w = grid.node_weights().iter().map(|w| w.sqrt()).collect();
        Ok(Observer { op, flux_w, node_w })
    }

    pub(crate) fn op(&self) -> &WaveOperator {
        &self.op
    }

    fn assemble(&self, flux: &[f64], state: &(Vec<f64>, Vec<f64>)) -> Vec<f64> {
        let mut out: Vec<f64> = flux.iter().zip(&self.flux_w).map(|(v, w)| v * w).collect();
        out.extend(state.0.iter().zip(&self.node_w).map(|(v, w)| v * w));
        out.extend(state.1.iter().zip(&self.node_w).map(|(v, w)| v * w));
        out
    }

    pub(crate) fn observe(&self, u: &SpaceTimeField) -> Result<Vec<f64>> {
        let flux = self.op.flux_trace(u, Subset::All)?;
        Ok(self.assemble(flux.values(), &terminal_state(u)))
    }

    pub(crate) fn observe_record(&self, r: &LinearizedRecord) -> Result<Vec<f64>> {
        if r.flux.subset() != Subset::All || r.flux.values().len() != self.flux_w.len() {
            return Err(Error::GridMismatch("record flux must cover the whole boundary on the solver grid".into()));
        }
        Ok(self.assemble(r.flux.values(), &r.final_state))
    }
}

fn product(fields: &[&SpaceTimeField], kind: FieldKind) -> SpaceTimeField {
    let mut out = SpaceTimeField::zeros(fields[0].grid().clone(), kind);
    out.values_mut().iter_mut().for_each(|v| *v = 1.0);
    for f in fields {
        out.values_mut().iter_mut().zip(f.values()).for_each(|(a, b)| *a *= b);
    }
    out
}

/// Partial normal equations of one block of rows.
struct Normal {
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
    rr: f64,
    dd: f64,
    rows: usize,
}

impl Normal {
    fn zeros(n: usize) -> Normal {
        Normal { jtj: DMatrix::zeros(n, n), jtr: DVector::zeros(n), rr: 0.0, dd: 0.0, rows: 0 }
    }

    fn from_columns(cols: &[Vec<f64>], r: &[f64], d: &[f64]) -> Normal {
        let n = cols.len();
        let mut out = Normal::zeros(n);
        for i in 0..n {
            out.jtr[i] = dot(&cols[i], r);
            for j in i..n {
                let v = dot(&cols[i], &cols[j]);
                out.jtj[(i, j)] = v;
                out.jtj[(j, i)] = v;
            }
        }
        out.rr = dot(r, r);
        out.dd = dot(d, d);
        out.rows = r.len();
        out
    }

    fn add(&mut self, other: &Normal) {
        self.jtj += &other.jtj;
        self.jtr += &other.jtr;
        self.rr += other.rr;
        self.dd += other.dd;
        self.rows += other.rows;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Solves `(J^T J + lambda G) x = rhs` with a condition check.
fn solve_regularized(jtj: &DMatrix<f64>, gram: &DMatrix<f64>, lambda: f64, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let a = jtj + gram * lambda;
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let x = a.cholesky().map(|c| c.solve(rhs)).unwrap_or_else(|| {
        // indefinite by round-off: fall back to the eigen decomposition
        let inv = eig.eigenvalues.map(|v| 1.0 / v);
        &eig.eigenvectors * DVector::from_iterator(inv.len(), inv.iter().zip(eig.eigenvectors.tr_mul(rhs).iter()).map(|(a, b)| a * b))
    });
    Ok((x, cond))
}

/// L-curve of the linear problem `min ||J c - r||^2 + lambda c^T G c` around `lambda`.
fn lcurve(normal: &Normal, gram: &DMatrix<f64>, lambda: f64) -> Vec<LCurvePoint> {
    let mut out = Vec::new();
    let base = if lambda > 0.0 { lambda } else { 1e-12 };
    for p in -3..=3 {
        let l = base * 10f64.powi(p);
        if let Ok((c, _)) = solve_regularized(&normal.jtj, gram, l, &normal.jtr) {
            let res2 = normal.rr - 2.0 * c.dot(&normal.jtr) + c.dot(&(&normal.jtj * &c));
            let norm2 = c.dot(&(gram * &c));
            out.push(LCurvePoint { lambda: l, residual: res2.max(0.0).sqrt(), solution_norm: norm2.max(0.0).sqrt() });
        }
    }
    out
}

fn check_reg(reg: f64) -> Result<()> {
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(Error::InvalidArgument(format!("regularization must be non-negative, got {reg}")));
    }
    Ok(())
}

fn observer_for(oracle: &dyn MeasurementOracle, sigma: &Arc<Conductivity>, basis: &RecoveryBasis) -> Result<Observer> {
    if !basis.grid().same_layout(oracle.grid()) {
        return Err(Error::GridMismatch("basis grid differs from the oracle grid".into()));
    }
    Observer::new(WaveOperator::new(oracle.grid().clone(), sigma.clone())?)
}

/// First-order linearized records for every direction, weighted.
fn linearized_data(oracle: &dyn MeasurementOracle, obs: &Observer, stencil: &LinearizationStencil) -> Result<Vec<Vec<f64>>> {
    (0..stencil.directions.len())
        .into_par_iter()
        .map(|l| {
            let r = fd_linearize_oracle(oracle, stencil, &[l]).map_err(|e| e.in_stage(format!("linearization {l}")))?;
            obs.observe_record(&r)
        })
        .collect()
}

/// Recovers `q = f_u(x, t, u~)` on the basis window from first-order
/// linearized input-output data by regularized Gauss-Newton.
pub fn recover_potential(
    oracle: &dyn MeasurementOracle,
    sigma: &Arc<Conductivity>,
    stencil: &LinearizationStencil,
    basis: &RecoveryBasis,
    reg: f64,
) -> Result<RecoveryResult> {
    check_reg(reg)?;
    stencil.validate()?;
    let obs = observer_for(oracle, sigma, basis)?;
    let data = linearized_data(oracle, &obs, stencil)?;
    let gram = DMatrix::from_row_slice(basis.len(), basis.len(), &basis.gram()?);
    let nb = basis.len();
    let mut c = DVector::zeros(nb);
    let mut normal = Normal::zeros(nb);
    let mut cond = 0.0;
    let mut iterations = 0;
    let mut last = DVector::zeros(nb);
    for it in 1..=MAX_GAUSS_NEWTON {
        iterations = it;
        let q = basis.synthesize(c.as_slice());
        let blocks: Vec<Result<Normal>> = (0..stencil.directions.len())
            .into_par_iter()
            .map(|l| {
                let op = obs.op();
                let v = op.forward(&LinearInputs {
                    potential: Some(&q),
                    dirichlet: Some(&stencil.directions[l]),
                    ..Default::default()
                })?;
                let model = obs.observe(&v)?;
                let r: Vec<f64> = data[l].iter().zip(&model).map(|(d, m)| d - m).collect();
                let cols = basis
                    .functions()
                    .iter()
                    .map(|b| {
                        let src = product(&[b, &v], FieldKind::Source).scaled(-1.0);
                        let s = op.forward(&LinearInputs { potential: Some(&q), source: Some(&src), ..Default::default() })?;
                        obs.observe(&s)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Normal::from_columns(&cols, &r, &data[l]))
            })
            .collect();
        normal = Normal::zeros(nb);
        for b in blocks {
            normal.add(&b?);
        }
        let rhs = &normal.jtr - &gram * &c * reg;
        let (delta, k) = solve_regularized(&normal.jtj, &gram, reg, &rhs)?;
        cond = k;
        c += &delta;
        last = delta.clone();
        log::debug!("potential Gauss-Newton {it}: |delta| {:e}, misfit {:e}", delta.norm(), normal.rr.sqrt());
        if delta.norm() <= GAUSS_NEWTON_TOL * (1.0 + c.norm()) {
            break;
        }
    }
    let recovered = basis.synthesize(c.as_slice());
    // misfit after the last step, from the linear model
    let rr = normal.rr - 2.0 * last.dot(&normal.jtr) + last.dot(&(&normal.jtj * &last));
    let diagnostics = RecoveryDiagnostics {
        iterations,
        relative_misfit: if normal.dd > 0.0 { (rr.max(0.0) / normal.dd).sqrt() } else { rr.max(0.0).sqrt() },
        condition: cond,
        cancellation_ratio: stencil.cancellation_ratio(crate::semilinear::SolveOptions::default().tol, 1),
        equations: normal.rows,
        lcurve: lcurve(&normal, &gram, reg),
        notes: Vec::new(),
    };
    Ok(RecoveryResult {
        recovered,
        coefficients: c.as_slice().to_vec(),
        truth: None,
        rel_l2_error: None,
        regularization: reg,
        window: basis.window(),
        diagnostics,
    })
}

/// Multisets of size `k` over `n` directions, thinned evenly to at most `cap`.
pub fn direction_tuples(n: usize, k: usize, cap: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for d in start..n {
            cur.push(d);
            rec(d, n, k, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut all);
    if all.len() <= cap {
        return all;
    }
    let m = all.len();
    (0..cap).map(|i| all[i * m / cap].clone()).collect()
}

/// Recovers `d^k f / du^k (x, t, u~)` given the coefficients of orders `1..k`
/// (`lower[j - 1]` holds order `j`). The k-th mixed linearization is matched
/// after subtracting the response to all lower-order interaction terms.
pub fn recover_taylor_coefficient(
    oracle: &dyn MeasurementOracle,
    sigma: &Arc<Conductivity>,
    k: usize,
    lower: &[SpaceTimeField],
    stencil: &LinearizationStencil,
    basis: &RecoveryBasis,
    reg: f64,
) -> Result<RecoveryResult> {
    check_reg(reg)?;
    stencil.validate()?;
    if !(2..=4).contains(&k) {
        return Err(Error::InvalidArgument(format!("Taylor order {k} not in 2..=4")));
    }
    if k > stencil.order {
        return Err(Error::InvalidArgument(format!("stencil order {} below requested order {k}", stencil.order)));
    }
    if lower.len() < k - 1 {
        return Err(Error::InvalidArgument(format!("missing lower coefficients: need {}, got {}", k - 1, lower.len())));
    }
    for c in lower {
        if !c.grid().same_layout(oracle.grid()) {
            return Err(Error::GridMismatch("lower coefficient grid differs from the oracle grid".into()));
        }
    }
    let obs = observer_for(oracle, sigma, basis)?;
    let op = obs.op();
    let q = &lower[0];
    let dirs = &stencil.directions;
    let v: Vec<SpaceTimeField> = dirs
        .par_iter()
        .map(|g| op.forward(&LinearInputs { potential: Some(q), dirichlet: Some(g), ..Default::default() }))
        .collect::<Result<_>>()?;
    let tuples = direction_tuples(dirs.len(), k, MAX_TUPLES);
    let gram = DMatrix::from_row_slice(basis.len(), basis.len(), &basis.gram()?);
    let nb = basis.len();
    let full = (1u32 << k) - 1;

    let blocks: Vec<Result<Normal>> = tuples
        .par_iter()
        .map(|tuple| {
            let rec = fd_linearize_oracle(oracle, stencil, tuple).map_err(|e| e.in_stage(format!("linearization {tuple:?}")))?;
            let observed = obs.observe_record(&rec)?;
            // w_B for every proper subset with at least two elements, by size
            let mut w: Vec<Option<SpaceTimeField>> = vec![None; 1 << k];
            for (p, &d) in tuple.iter().enumerate() {
                w[1 << p] = Some(v[d].clone());
            }
            let mut masks: Vec<u32> = (1..full).filter(|m| m.count_ones() >= 2).collect();
            masks.sort_by_key(|m| m.count_ones());
            let source_of = |mask: u32, w: &Vec<Option<SpaceTimeField>>| -> Option<SpaceTimeField> {
                let top = mask.count_ones() as usize;
                let mut src: Option<SpaceTimeField> = None;
                for part in set_partitions(mask) {
                    let blocks = part.len();
                    // the full set leaves out its all-singleton split, which carries the unknown
                    if blocks < 2 || (mask == full && blocks == top) {
                        continue;
                    }
                    let factors: Vec<&SpaceTimeField> = part.iter().map(|b| w[*b as usize].as_ref().expect("lower block")).collect();
                    let mut term = product(&factors, FieldKind::Source);
                    term.values_mut().iter_mut().zip(lower[blocks - 1].values()).for_each(|(a, c)| *a *= -c);
                    match &mut src {
                        None => src = Some(term),
                        Some(s) => s.add_scaled(1.0, &term).expect("same grid"),
                    }
                }
                src
            };
            for &mask in &masks {
                let src = source_of(mask, &w).expect("subsets of size >= 2 have a split");
                w[mask as usize] =
                    Some(op.forward(&LinearInputs { potential: Some(q), source: Some(&src), ..Default::default() })?);
            }
            let model_lower = match source_of(full, &w) {
                Some(src) => obs.observe(&op.forward(&LinearInputs { potential: Some(q), source: Some(&src), ..Default::default() })?)?,
                None => vec![0.0; observed.len()],
            };
            let r: Vec<f64> = observed.iter().zip(&model_lower).map(|(a, b)| a - b).collect();
            let vs: Vec<&SpaceTimeField> = tuple.iter().map(|&d| &v[d]).collect();
            let pv = product(&vs, FieldKind::Source);
            let cols = basis
                .functions()
                .iter()
                .map(|b| {
                    let src = product(&[b, &pv], FieldKind::Source).scaled(-1.0);
                    let s = op.forward(&LinearInputs { potential: Some(q), source: Some(&src), ..Default::default() })?;
                    obs.observe(&s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Normal::from_columns(&cols, &r, &observed))
        })
        .collect();
    let mut normal = Normal::zeros(nb);
    for b in blocks {
        normal.add(&b?);
    }
    let (c, cond) = solve_regularized(&normal.jtj, &gram, reg, &normal.jtr)?;
    let rr = normal.rr - 2.0 * c.dot(&normal.jtr) + c.dot(&(&normal.jtj * &c));
    let diagnostics = RecoveryDiagnostics {
        iterations: 1,
        relative_misfit: if normal.dd > 0.0 { (rr.max(0.0) / normal.dd).sqrt() } else { rr.max(0.0).sqrt() },
        condition: cond,
        cancellation_ratio: stencil.cancellation_ratio(crate::semilinear::SolveOptions::default().tol, k),
        equations: normal.rows,
        lcurve: lcurve(&normal, &gram, reg),
        notes: vec![format!("{} direction tuples", tuples.len())],
    };
    Ok(RecoveryResult {
        recovered: basis.synthesize(c.as_slice()),
        coefficients: c.as_slice().to_vec(),
        truth: None,
        rel_l2_error: None,
        regularization: reg,
        window: basis.window(),
        diagnostics,
    })
}
