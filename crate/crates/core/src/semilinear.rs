//! Nonlinearities `f(x, t, s)` and the semilinear solve
//! `u_tt - div(sigma grad u) + f(x, t, u) = 0`.

use std::sync::Arc;

use evalexpr::{ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes, Function, HashMapContext, Node, Value};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, FieldKind, SpaceTimeField};
use crate::geometry::{Grid, Point, Subset};
use crate::wave::{l2_norm, LinearInputs, Region, WaveOperator};

/// Growth class declared for a nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClass {
    Lipschitz,
    LogSuperlinear,
    Polynomial,
}

/// A coefficient `c(x, t)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Expr(Arc<Expr>),
    /// Samples on some grid, looked up by node and nearest time level; zero outside its time range.
    Field(Arc<SpaceTimeField>),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Expr(e) => write!(f, "Expr({:?})", e.source),
            Coefficient::Field(_) => write!(f, "Field(..)"),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::Constant(c)
    }
}

/// Expression in `x`, `y`, `t` with `sin`, `cos`, `exp`, `sqrt` and `^`.
pub struct Expr {
    source: String,
    node: Node<DefaultNumericTypes>,
}

fn math_fn(f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| Ok(Value::Float(f(arg.as_number()?))))
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr> {
        let node = evalexpr::build_operator_tree::<DefaultNumericTypes>(source)
            .map_err(|e| Error::Config(format!("cannot parse expression `{source}`: {e}")))?;
        let e = Expr { source: source.to_string(), node };
        e.eval(&[0.3, 0.7], 0.1)?;
        Ok(e)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn context(x: &Point, t: f64) -> HashMapContext<DefaultNumericTypes> {
        let mut ctx = HashMapContext::new();
        for (name, f) in [("sin", f64::sin as fn(f64) -> f64), ("cos", f64::cos), ("exp", f64::exp), ("sqrt", f64::sqrt)] {
            ctx.set_function(name.into(), math_fn(f)).expect("mutable context");
        }
        for (name, v) in [("x", x[0]), ("y", x[1]), ("t", t), ("pi", std::f64::consts::PI)] {
            ctx.set_value(name.into(), Value::Float(v)).expect("mutable context");
        }
        ctx
    }

    pub fn eval(&self, x: &Point, t: f64) -> Result<f64> {
        let ctx = Self::context(x, t);
        let v = self
            .node
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::Config(format!("cannot evaluate `{}`: {e}", self.source)))?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("expression `{}` at x={x:?}, t={t}", self.source)));
        }
        Ok(v)
    }
}

/// Shape of `f` in `s`.
#[derive(Debug, Clone)]
pub enum Law {
    Zero,
    /// `c s`
    Linear(f64),
    /// `c s^3`
    Cubic(f64),
    /// `c sin(s)`
    Sine(f64),
    /// `sum_k c_k(x, t) s^k`; entry `k` holds `c_k`, so entry 0 is a source term.
    Taylor(Vec<Coefficient>),
    /// `before` for `t < switch`, `after` from `switch` on.
    Spliced { before: Box<Nonlinearity>, after: Box<Nonlinearity>, switch: f64 },
}

/// Nonlinearity with an optional time support window.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    pub law: Law,
    pub window: Option<(f64, f64)>,
    pub growth: Option<GrowthClass>,
}

/// Admissibility metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    pub support_window: Option<(f64, f64)>,
    pub f_zero_is_zero: bool,
    pub growth_class: GrowthClass,
}

impl Nonlinearity {
    pub fn new(law: Law) -> Nonlinearity {
        Nonlinearity { law, window: None, growth: None }
    }
    pub fn zero() -> Nonlinearity {
        Self::new(Law::Zero)
    }
    pub fn linear(c: f64) -> Nonlinearity {
        Self::new(Law::Linear(c))
    }
    pub fn cubic(c: f64) -> Nonlinearity {
        Self::new(Law::Cubic(c))
    }
    pub fn sine(c: f64) -> Nonlinearity {
        Self::new(Law::Sine(c))
    }
    pub fn taylor(coefficients: Vec<Coefficient>) -> Nonlinearity {
        Self::new(Law::Taylor(coefficients))
    }
    /// `f(x, t, s) = F(x, t)`, independent of `s`.
    pub fn source(field: SpaceTimeField) -> Nonlinearity {
        Self::taylor(vec![Coefficient::Field(Arc::new(field))])
    }
    pub fn spliced(before: Nonlinearity, after: Nonlinearity, switch: f64) -> Nonlinearity {
        Self::new(Law::Spliced { before: Box::new(before), after: Box::new(after), switch })
    }
    pub fn with_window(mut self, t1: f64, t2: f64) -> Nonlinearity {
        self.window = Some((t1, t2));
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.law, Law::Zero)
    }

    /// True when `(f(s) - f(0)) / s` does not depend on `s`.
    pub fn is_affine(&self) -> bool {
        match &self.law {
            Law::Zero | Law::Linear(_) => true,
            Law::Taylor(c) => c.len() <= 2,
            Law::Spliced { before, after, .. } => before.is_affine() && after.is_affine(),
            Law::Cubic(_) | Law::Sine(_) => false,
        }
    }

    pub fn admissibility(&self) -> Admissibility {
        Admissibility {
            support_window: self.window,
            f_zero_is_zero: self.f_zero_is_zero(),
            growth_class: self.growth.unwrap_or_else(|| self.inferred_growth()),
        }
    }

    fn f_zero_is_zero(&self) -> bool {
        match &self.law {
            Law::Taylor(c) => match c.first() {
                None => true,
                Some(Coefficient::Constant(v)) => *v == 0.0,
                Some(Coefficient::Field(f)) => f.max_abs() == 0.0,
                Some(Coefficient::Expr(_)) => false,
            },
            Law::Spliced { before, after, .. } => before.f_zero_is_zero() && after.f_zero_is_zero(),
            _ => true,
        }
    }

    fn inferred_growth(&self) -> GrowthClass {
        match &self.law {
            Law::Zero | Law::Linear(_) | Law::Sine(_) => GrowthClass::Lipschitz,
            Law::Cubic(_) => GrowthClass::Polynomial,
            Law::Taylor(c) if c.len() <= 2 => GrowthClass::Lipschitz,
            Law::Taylor(_) => GrowthClass::Polynomial,
            Law::Spliced { before, after, .. } => {
                if before.inferred_growth() == GrowthClass::Lipschitz && after.inferred_growth() == GrowthClass::Lipschitz {
                    GrowthClass::Lipschitz
                } else {
                    GrowthClass::Polynomial
                }
            }
        }
    }

    /// Samples every coefficient on `grid`.
    pub fn bind(&self, grid: &Arc<Grid>) -> Result<BoundNonlinearity> {
        let nn = grid.n_nodes();
        let nl = grid.n_levels();
        let active: Vec<bool> = (0..nl)
            .map(|n| {
                let t = grid.time(n);
                self.window.is_none_or(|(a, b)| t >= a - 1e-12 && t <= b + 1e-12)
            })
            .collect();
        let law = match &self.law {
            Law::Zero => BoundLaw::Zero,
            Law::Linear(c) => BoundLaw::Linear(*c),
            Law::Cubic(c) => BoundLaw::Cubic(*c),
            Law::Sine(c) => BoundLaw::Sine(*c),
            Law::Taylor(coefs) => {
                let mut out = Vec::with_capacity(coefs.len());
                for c in coefs {
                    out.push(match c {
                        Coefficient::Constant(v) => BoundCoef::Constant(*v),
                        Coefficient::Expr(e) => {
                            let mut v = vec![0.0; nl * nn];
                            let coords: Vec<Point> = (0..nn).map(|i| grid.coord(i)).collect();
                            for n in 0..nl {
                                let t = grid.time(n);
                                for i in 0..nn {
                                    v[n * nn + i] = e.eval(&coords[i], t)?;
                                }
                            }
                            BoundCoef::Values(v)
                        }
                        Coefficient::Field(f) => BoundCoef::Values(resample(f, grid)?),
                    });
                }
                BoundLaw::Taylor(out)
            }
            Law::Spliced { before, after, switch } => {
                let split = (0..nl).find(|&n| grid.time(n) >= *switch - 1e-12).unwrap_or(nl);
                BoundLaw::Spliced { before: Box::new(before.bind(grid)?), after: Box::new(after.bind(grid)?), split }
            }
        };
        Ok(BoundNonlinearity { law, active, nn })
    }
}

fn resample(f: &SpaceTimeField, grid: &Grid) -> Result<Vec<f64>> {
    let src = f.grid();
    if src.n_nodes() != grid.n_nodes() || src.nx() != grid.nx() {
        return Err(Error::GridMismatch("coefficient field has a different spatial layout".into()));
    }
    let nn = grid.n_nodes();
    let mut v = vec![0.0; grid.n_levels() * nn];
    let tol = 1e-9 * src.dt();
    for n in 0..grid.n_levels() {
        let t = grid.time(n);
        if t < src.t_start() - tol || t > src.t_final() + tol {
            continue;
        }
        let m = (((t - src.t_start()) / src.dt()).round() as usize).min(src.nt());
        v[n * nn..(n + 1) * nn].copy_from_slice(f.level(m));
    }
    Ok(v)
}

#[derive(Debug, Clone)]
enum BoundCoef {
    Constant(f64),
    Values(Vec<f64>),
}

impl BoundCoef {
    #[inline]
    fn at(&self, idx: usize) -> f64 {
        match self {
            BoundCoef::Constant(c) => *c,
            BoundCoef::Values(v) => v[idx],
        }
    }
}

#[derive(Debug, Clone)]
enum BoundLaw {
    Zero,
    Linear(f64),
    Cubic(f64),
    Sine(f64),
    Taylor(Vec<BoundCoef>),
    Spliced { before: Box<BoundNonlinearity>, after: Box<BoundNonlinearity>, split: usize },
}

/// A nonlinearity sampled on one grid; evaluation by `(level, node, s)`.
#[derive(Debug, Clone)]
pub struct BoundNonlinearity {
    law: BoundLaw,
    active: Vec<bool>,
    nn: usize,
}

fn falling(k: usize, n: usize) -> f64 {
    ((k - n + 1)..=k).map(|j| j as f64).product()
}

impl BoundNonlinearity {
    /// `d^n f / ds^n` at `(level, node, s)`; `n = 0` is `f` itself.
    pub fn nth(&self, n: usize, level: usize, node: usize, s: f64) -> f64 {
        if !self.active[level] {
            return 0.0;
        }
        let idx = level * self.nn + node;
        match &self.law {
            BoundLaw::Zero => 0.0,
            BoundLaw::Linear(c) => match n {
                0 => c * s,
                1 => *c,
                _ => 0.0,
            },
            BoundLaw::Cubic(c) => match n {
                0 => c * s * s * s,
                1 => 3.0 * c * s * s,
                2 => 6.0 * c * s,
                3 => 6.0 * c,
                _ => 0.0,
            },
            BoundLaw::Sine(c) => c * (s + n as f64 * std::f64::consts::FRAC_PI_2).sin(),
            BoundLaw::Taylor(coefs) => {
                let mut acc = 0.0;
                for k in (n..coefs.len()).rev() {
                    acc = acc * s + falling(k, n) * coefs[k].at(idx);
                }
                acc
            }
            BoundLaw::Spliced { before, after, split } => {
                if level < *split {
                    before.nth(n, level, node, s)
                } else {
                    after.nth(n, level, node, s)
                }
            }
        }
    }

    pub fn eval(&self, level: usize, node: usize, s: f64) -> f64 {
        self.nth(0, level, node, s)
    }

    pub fn deriv(&self, level: usize, node: usize, s: f64) -> f64 {
        self.nth(1, level, node, s)
    }

    /// `g(s) = (f(s) - f(0)) / s`, with `g(0) = f'(0)`.
    pub fn quotient(&self, level: usize, node: usize, s: f64) -> f64 {
        if !self.active[level] {
            return 0.0;
        }
        let idx = level * self.nn + node;
        match &self.law {
            BoundLaw::Zero => 0.0,
            BoundLaw::Linear(c) => *c,
            BoundLaw::Cubic(c) => c * s * s,
            BoundLaw::Sine(c) => {
                if s.abs() < 1e-4 {
                    c * (1.0 - s * s / 6.0)
                } else {
                    c * s.sin() / s
                }
            }
            BoundLaw::Taylor(coefs) => {
                let mut acc = 0.0;
                for k in (1..coefs.len()).rev() {
                    acc = acc * s + coefs[k].at(idx);
                }
                acc
            }
            BoundLaw::Spliced { before, after, split } => {
                if level < *split {
                    before.quotient(level, node, s)
                } else {
                    after.quotient(level, node, s)
                }
            }
        }
    }

    /// Field of `d^n f/ds^n (x, t, u(x, t))`.
    pub fn nth_field(&self, n: usize, u: &SpaceTimeField, kind: FieldKind) -> SpaceTimeField {
        let nn = u.n_nodes();
        let mut out = SpaceTimeField::zeros(u.grid().clone(), kind);
        let v = out.values_mut();
        for l in 0..u.n_levels() {
            let row = u.level(l);
            for i in 0..nn {
                v[l * nn + i] = self.nth(n, l, i, row[i]);
            }
        }
        out
    }
}

/// Solver controls for [`solve_semilinear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub blowup_cap: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: 50, blowup_cap: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub max_amplitude: f64,
}

/// Initial and boundary data of a forward problem.
#[derive(Debug, Clone, Copy, Default)]
pub struct Data<'a> {
    pub dirichlet: Option<&'a BoundaryTrace>,
    pub phi: Option<&'a [f64]>,
    pub psi: Option<&'a [f64]>,
}

fn picard_coefficients(bound: &BoundNonlinearity, z: &SpaceTimeField) -> (SpaceTimeField, SpaceTimeField) {
    let grid = z.grid().clone();
    let nn = z.n_nodes();
    let mut a = SpaceTimeField::zeros(grid.clone(), FieldKind::Potential);
    let mut k = SpaceTimeField::zeros(grid, FieldKind::Source);
    let (av, kv) = (a.values_mut(), k.values_mut());
    for l in 0..z.n_levels() {
        let row = z.level(l);
        for i in 0..nn {
            av[l * nn + i] = bound.quotient(l, i, row[i]);
            kv[l * nn + i] = -bound.eval(l, i, 0.0);
        }
    }
    (a, k)
}

/// One application of the fixed-point map `z -> u`, where `u` solves the
/// linear problem with potential `g(x, t, z)` and source `-f(x, t, 0)`.
pub fn picard_map(op: &WaveOperator, bound: &BoundNonlinearity, z: &SpaceTimeField, data: Data<'_>) -> Result<SpaceTimeField> {
    if !z.is_finite() {
        return Err(Error::NonFinite("Picard iterate".into()));
    }
    if !z.grid().same_layout(op.grid()) {
        return Err(Error::GridMismatch("iterate does not match solver grid".into()));
    }
    let (a, k) = picard_coefficients(bound, z);
    op.forward(&LinearInputs { potential: Some(&a), source: Some(&k), dirichlet: data.dirichlet, phi: data.phi, psi: data.psi })
}

/// Fixed-point solve of the semilinear problem. The first iterate uses `z = 0`.
pub fn solve_semilinear(
    op: &WaveOperator,
    nl: &Nonlinearity,
    data: Data<'_>,
    opts: SolveOptions,
) -> Result<(SpaceTimeField, SolveReport)> {
    if opts.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let bound = nl.bind(op.grid())?;
    solve_semilinear_bound(op, &bound, data, opts)
}

pub fn solve_semilinear_bound(
    op: &WaveOperator,
    bound: &BoundNonlinearity,
    data: Data<'_>,
    opts: SolveOptions,
) -> Result<(SpaceTimeField, SolveReport)> {
    let zero = SpaceTimeField::zeros(op.grid().clone(), FieldKind::Solution);
    let mut u = picard_map(op, bound, &zero, data)?;
    let mut history = Vec::new();
    let mut amp = check_amplitude(&u, opts.blowup_cap, 0)?;
    for it in 1..=opts.max_iter {
        let next = picard_map(op, bound, &u, data)?;
        amp = check_amplitude(&next, opts.blowup_cap, it)?;
        let diff = l2_norm(&next.sub(&u)?, Region::SpaceTime)?;
        let norm = l2_norm(&next, Region::SpaceTime)?;
        let res = if norm > 0.0 { diff / norm } else { diff };
        history.push(res.max(f64::MIN_POSITIVE));
        u = next;
        if res < opts.tol {
            log::debug!("fixed point converged in {it} iterations (residual {res:e})");
            return Ok((u, SolveReport { converged: true, iterations: it, residual_history: history, max_amplitude: amp }));
        }
    }
    let residual = history.last().copied().unwrap_or(f64::INFINITY);
    let _ = amp;
    Err(Error::NotConverged { iterations: opts.max_iter, residual })
}

fn check_amplitude(u: &SpaceTimeField, cap: f64, iteration: usize) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::BlowUp { amplitude: f64::INFINITY, cap, iteration });
    }
    let amp = u.max_abs();
    if amp > cap {
        return Err(Error::BlowUp { amplitude: amp, cap, iteration });
    }
    Ok(amp)
}

/// Explicit nonlinear leapfrog with `f(u^n)` evaluated pointwise.
pub fn solve_direct(op: &WaveOperator, nl: &Nonlinearity, data: Data<'_>, blowup_cap: f64) -> Result<SpaceTimeField> {
    let grid = op.grid().clone();
    let bound = nl.bind(&grid)?;
    let nn = grid.n_nodes();
    let dt = grid.dt();
    let dt2 = dt * dt;
    let interior = op.interior_nodes().to_vec();
    let boundary = op.boundary_nodes().to_vec();
    let mut out = SpaceTimeField::zeros(grid.clone(), FieldKind::Solution);
    let mut hb = vec![0.0; boundary.len()];
    let set_boundary = |u: &mut [f64], level: usize, hb: &mut Vec<f64>| {
        if let Some(h) = data.dirichlet {
            h.node_values(level, &boundary, hb);
        }
        for (k, &b) in boundary.iter().enumerate() {
            u[b] = hb[k];
        }
    };
    {
        let u0 = out.level_mut(0);
        if let Some(phi) = data.phi {
            u0.copy_from_slice(phi);
        }
        set_boundary(u0, 0, &mut hb);
    }
    let u0 = out.level(0).to_vec();
    let lap = op.laplacian(&u0);
    {
        let u1 = out.level_mut(1);
        for &i in &interior {
            let psi = data.psi.map_or(0.0, |p| p[i]);
            u1[i] = u0[i] + dt * psi + 0.5 * dt2 * (lap[i] - bound.eval(0, i, u0[i]));
        }
        set_boundary(u1, 1, &mut hb);
    }
    for n in 1..grid.nt() {
        let cur = out.level(n).to_vec();
        let lap = op.laplacian(&cur);
        let prev = out.level(n - 1).to_vec();
        let next = out.level_mut(n + 1);
        for &i in &interior {
            next[i] = 2.0 * cur[i] - prev[i] + dt2 * (lap[i] - bound.eval(n, i, cur[i]));
        }
        set_boundary(next, n + 1, &mut hb);
        let amp = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !amp.is_finite() || amp > blowup_cap {
            return Err(Error::BlowUp { amplitude: amp, cap: blowup_cap, iteration: n + 1 });
        }
    }
    let _ = nn;
    Ok(out)
}

/// Norms behind the a-priori estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBound {
    /// `max_t (||u||_{H^1} + ||u_t||_{L^2})`.
    pub solution_norm: f64,
    /// `||sigma grad u . nu||_{L^2(Sigma)}`.
    pub flux_norm: f64,
    /// `||phi||_{H^1} + ||psi||_{L^2} + ||h||_{L^2(Sigma)}`.
    pub data_norm: f64,
}

impl EnergyBound {
    pub fn total(&self) -> f64 {
        self.solution_norm + self.flux_norm
    }
}

/// Solves and evaluates the solution and flux norms bounded in terms of the data.
pub fn estimate_energy_bound(op: &WaveOperator, nl: &Nonlinearity, data: Data<'_>, opts: SolveOptions) -> Result<EnergyBound> {
    if nl.admissibility().growth_class == GrowthClass::LogSuperlinear {
        return Err(Error::InvalidArgument("energy bound needs a Lipschitz or polynomial nonlinearity".into()));
    }
    let grid = op.grid().clone();
    let (u, _) = solve_semilinear(op, nl, data, opts)?;
    let mut solution_norm: f64 = 0.0;
    for l in 0..grid.n_levels() {
        let ut = u.time_derivative(l);
        let s = crate::wave::h1_l2_norm(&grid, u.level(l), &vec![0.0; grid.n_nodes()])?
            + crate::wave::h1_l2_norm(&grid, &vec![0.0; grid.n_nodes()], &ut)?;
        solution_norm = solution_norm.max(s);
    }
    let flux_norm = op.flux_trace(&u, Subset::All)?.l2_norm()?;
    let nn = grid.n_nodes();
    let z = vec![0.0; nn];
    let data_norm = crate::wave::h1_l2_norm(&grid, data.phi.unwrap_or(&z), &z)?
        + crate::wave::h1_l2_norm(&grid, &z, data.psi.unwrap_or(&z))?
        + match data.dirichlet {
            Some(h) => h.l2_norm()?,
            None => 0.0,
        };
    Ok(EnergyBound { solution_norm, flux_norm, data_norm })
}

/// A Taylor coefficient as written in a config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Number(f64),
    Expr(String),
}

/// Config form of a nonlinearity.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub kind: String,
    #[serde(default)]
    pub c: Option<f64>,
    /// Taylor coefficients `c_1, c_2, ...` (the `s^0` term is not configurable).
    #[serde(default)]
    pub coefficients: Vec<CoefficientSpec>,
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub growth: Option<GrowthClass>,
}

impl NonlinearitySpec {
    pub fn build(&self) -> Result<Nonlinearity> {
        let c = || self.c.ok_or_else(|| Error::Config(format!("nonlinearity `{}` needs a coefficient `c`", self.kind)));
        let law = match self.kind.as_str() {
            "zero" => Law::Zero,
            "linear" => Law::Linear(c()?),
            "cubic" => Law::Cubic(c()?),
            "sine" => Law::Sine(c()?),
            "taylor" => {
                if self.coefficients.is_empty() {
                    return Err(Error::Config("taylor nonlinearity needs `coefficients`".into()));
                }
                let mut coefs = vec![Coefficient::Constant(0.0)];
                for spec in &self.coefficients {
                    coefs.push(match spec {
                        CoefficientSpec::Number(v) => Coefficient::Constant(*v),
                        CoefficientSpec::Expr(s) => match s.trim().parse::<f64>() {
                            Ok(v) => Coefficient::Constant(v),
                            Err(_) => Coefficient::Expr(Arc::new(Expr::parse(s)?)),
                        },
                    });
                }
                Law::Taylor(coefs)
            }
            other => return Err(Error::Config(format!("unknown nonlinearity kind `{other}`"))),
        };
        if let Some([t1, t2]) = self.window {
            if t2 < t1 {
                return Err(Error::Config(format!("nonlinearity window [{t1}, {t2}] is reversed")));
            }
        }
        Ok(Nonlinearity { law, window: self.window.map(|[a, b]| (a, b)), growth: self.growth })
    }
}
