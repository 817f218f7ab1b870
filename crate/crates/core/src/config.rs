//! Experiment configuration files (TOML). Unknown keys are rejected and parse
//! errors carry the line and column of the offending key.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Conductivity, Grid, GridSpec};
use crate::inversion::{LinearizationStencil, RecoveryBasis, Scheme};
use crate::semilinear::{Expr, Nonlinearity, NonlinearitySpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; relative paths resolve against the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub grid: GridSpec,
    /// Which faces observe and control.
    #[serde(default)]
    pub gamma0: Gamma0Choice,
    #[serde(default)]
    pub sigma: SigmaSpec,
    #[serde(default)]
    pub nonlinearity: Option<NonlinearitySpec>,
    #[serde(default)]
    pub initial: InitialSpec,
    pub pipeline: PipelineSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma0Choice {
    /// Faces tagged by the weight `|x - x0|^2` (requires `grid.x0`).
    #[default]
    FromX0,
    All,
}

/// `sigma = 1.5`, `sigma = "1 + 0.5*x"` or `sigma = { diagonal = ["1", "2"] }`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Constant(f64),
    Expression(String),
    Diagonal {
        diagonal: Vec<String>,
    },
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Constant(1.0)
    }
}

impl SigmaSpec {
    pub fn build(&self, grid: &Grid) -> Result<Conductivity> {
        let c = match self {
            SigmaSpec::Constant(c) => Conductivity::constant(grid, *c),
            SigmaSpec::Expression(s) => {
                let e = Expr::parse(s)?;
                node_values(grid, &e)?;
                Conductivity::isotropic(grid, |p| e.eval(p, 0.0).unwrap_or(f64::NAN))
            }
            SigmaSpec::Diagonal { diagonal } => {
                if diagonal.len() != grid.dim() {
                    return Err(Error::Config(format!("sigma.diagonal needs {} entries", grid.dim())));
                }
                let es: Vec<Expr> = diagonal.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?;
                for e in &es {
                    node_values(grid, e)?;
                }
                Conductivity::diagonal(grid, |p| [es[0].eval(p, 0.0).unwrap_or(f64::NAN), es.get(1).map_or(0.0, |e| e.eval(p, 0.0).unwrap_or(f64::NAN))])
            }
        };
        c.check_positive()?;
        Ok(c)
    }
}

fn node_values(grid: &Grid, e: &Expr) -> Result<Vec<f64>> {
    (0..grid.n_nodes()).map(|n| e.eval(&grid.coord(n), 0.0)).collect()
}

/// Named initial shapes.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeSpec {
    #[default]
    Zero,
    /// Product of `sin(k pi (x - a) / L)` over axes.
    Eigenmode {
        mode: Vec<u32>,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude * (1 - r^2)^3` with `r = |x - center| / width`.
    Bump {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Expression {
        expr: String,
    },
    /// Sine modes with random amplitudes drawn from the run's seed.
    Random {
        modes: usize,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ShapeSpec {
    pub fn build(&self, grid: &Grid, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let nn = grid.n_nodes();
        let dim = grid.dim();
        let ext = grid.extents();
        let sine = |a: usize, k: f64, x: f64| (k * std::f64::consts::PI * (x - ext[a][0]) / (ext[a][1] - ext[a][0])).sin();
        let mut v: Vec<f64> = match self {
            ShapeSpec::Zero => vec![0.0; nn],
            ShapeSpec::Eigenmode { mode, amplitude } => {
                if mode.len() != dim || mode.contains(&0) {
                    return Err(Error::Config(format!("eigenmode needs {dim} positive mode numbers")));
                }
                (0..nn)
                    .map(|n| {
                        let x = grid.coord(n);
                        amplitude * (0..dim).map(|a| sine(a, mode[a] as f64, x[a])).product::<f64>()
                    })
                    .collect()
            }
            ShapeSpec::Bump { center, width, amplitude } => {
                if center.len() != dim || !(*width > 0.0) {
                    return Err(Error::Config(format!("bump needs a {dim}-point center and positive width")));
                }
                (0..nn)
                    .map(|n| {
                        let x = grid.coord(n);
                        let r = ((0..dim).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>()).sqrt() / width;
                        if r < 1.0 {
                            amplitude * (1.0 - r * r).powi(3)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            ShapeSpec::Expression { expr } => node_values(grid, &Expr::parse(expr)?)?,
            ShapeSpec::Random { modes, amplitude } => {
                let amps: Vec<f64> = (0..modes.pow(dim as u32)).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (0..nn)
                    .map(|n| {
                        let x = grid.coord(n);
                        let mut s = 0.0;
                        for (k, a) in amps.iter().enumerate() {
                            let j = (k % modes + 1) as f64;
                            let l = (k / modes + 1) as f64;
                            let y = if dim == 2 { sine(1, l, x[1]) / l } else { 1.0 };
                            s += a * sine(0, j, x[0]) / j * y;
                        }
                        amplitude * s
                    })
                    .collect()
            }
        };
        // keep the boundary at rest so zero Dirichlet data stays compatible
        for b in grid.boundary_nodes() {
            v[b] = 0.0;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub phi: ShapeSpec,
    #[serde(default)]
    pub psi: ShapeSpec,
}

/// Window and basis of a coefficient recovery.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySpec {
    pub window: [f64; 2],
    #[serde(default = "default_space")]
    pub n_space: usize,
    #[serde(default = "default_time")]
    pub n_time: usize,
    /// Number of time bumps per boundary mode in the probe family.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_one_usize")]
    pub modes_per_face: usize,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default = "default_reg")]
    pub reg: f64,
    /// Relative RMS flux noise.
    #[serde(default)]
    pub noise: f64,
    /// Taylor order (recover-taylor only).
    #[serde(default)]
    pub order: Option<usize>,
    /// Highest order (simultaneous only).
    #[serde(default)]
    pub max_order: Option<usize>,
    /// Step for orders two and up (simultaneous only).
    #[serde(default)]
    pub higher_eps: Option<f64>,
}

fn default_space() -> usize {
    8
}
fn default_time() -> usize {
    4
}
fn default_probes() -> usize {
    8
}
fn default_one_usize() -> usize {
    1
}
fn default_reg() -> f64 {
    1e-6
}

impl RecoverySpec {
    /// Rejects keys that belong to a different recovery pipeline.
    pub fn check_keys(&self, pipeline: &str) -> Result<()> {
        let stray = match pipeline {
            "recover-q" => [("order", self.order.is_some()), ("max_order", self.max_order.is_some()), ("higher_eps", self.higher_eps.is_some())],
            "recover-taylor" => [("order", self.order.is_none()), ("max_order", self.max_order.is_some()), ("higher_eps", self.higher_eps.is_some())],
            _ => [("order", self.order.is_some()), ("max_order", false), ("higher_eps", false)],
        };
        for (key, bad) in stray {
            if bad {
                let what = if key == "order" && pipeline == "recover-taylor" { "requires" } else { "does not take" };
                return Err(Error::Config(format!("pipeline `{pipeline}` {what} `{key}`")));
            }
        }
        Ok(())
    }

    pub fn basis(&self, grid: &Arc<Grid>) -> Result<RecoveryBasis> {
        RecoveryBasis::new(grid, self.n_space, self.n_time, (self.window[0], self.window[1]))
    }

    pub fn stencil(&self, grid: &Arc<Grid>, order: usize, default_eps: f64) -> Result<LinearizationStencil> {
        let dirs = crate::inversion::probe_directions(grid, self.probes, self.modes_per_face, grid.t_final())?;
        let mut st = LinearizationStencil::new(dirs, self.eps.unwrap_or(default_eps), order)?;
        if let Some(s) = self.scheme {
            st = st.with_scheme(s);
        }
        Ok(st)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryMode {
    Passive,
    Active,
}

/// Pipeline selector with its parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PipelineSpec {
    Forward {
        /// Dirichlet input `h(x, t)` on the observation boundary.
        #[serde(default)]
        boundary: Option<String>,
    },
    Passive {},
    Active {
        boundary: String,
    },
    Stability {
        #[serde(default = "default_pairs")]
        pairs: usize,
        #[serde(default = "default_modes")]
        modes: usize,
    },
    Control {
        #[serde(default = "default_penalty")]
        penalty: f64,
        #[serde(default = "default_cg_tol")]
        tol: f64,
        #[serde(default = "default_max_cg")]
        max_cg: usize,
    },
    Runge {
        window: [f64; 2],
        /// Target local solution `v(x, t)`.
        #[serde(default = "default_target")]
        target: String,
        #[serde(default = "default_sizes")]
        sizes: Vec<usize>,
        #[serde(default = "default_runge_tol")]
        tol: f64,
    },
    Cgo {
        x0: Vec<f64>,
        window: [f64; 2],
        #[serde(default = "default_taus")]
        taus: Vec<f64>,
        #[serde(default = "default_cells_per_tau")]
        cells_per_tau: f64,
        #[serde(default = "one")]
        sign: f64,
        #[serde(default)]
        harmonic: u32,
        /// Potential `q(x, t)` of the CGO equation.
        #[serde(default)]
        potential: Option<String>,
    },
    Linearize {
        #[serde(default = "default_ladder")]
        eps: Vec<f64>,
        #[serde(default)]
        scheme: Option<Scheme>,
        /// Direction indices; their count is the order (1 or 2).
        #[serde(default = "default_index")]
        index: Vec<usize>,
        #[serde(default = "default_lin_probes")]
        probes: usize,
    },
    RecoverQ(RecoverySpec),
    RecoverTaylor(RecoverySpec),
    RecoverInitial {
        #[serde(default = "default_mode")]
        mode: RecoveryMode,
        #[serde(default = "default_passive_reg")]
        reg: f64,
        #[serde(default = "default_passive_max_cg")]
        max_cg: usize,
        #[serde(default = "default_passive_tol")]
        tol: f64,
        /// Active mode: control horizon and switch offset.
        #[serde(default)]
        t_star: Option<f64>,
        #[serde(default)]
        eps: Option<f64>,
        /// Active mode: the unknown part of the nonlinearity after the switch.
        #[serde(default)]
        tail: Option<NonlinearitySpec>,
    },
    Simultaneous(RecoverySpec),
    Nonuniqueness {
        #[serde(default = "default_collar")]
        collar: f64,
    },
    Suite {
        /// Criterion numbers to run; all when empty.
        #[serde(default)]
        only: Vec<u8>,
    },
}

fn default_pairs() -> usize {
    10
}
fn default_modes() -> usize {
    4
}
fn default_penalty() -> f64 {
    1e6
}
fn default_cg_tol() -> f64 {
    1e-12
}
fn default_max_cg() -> usize {
    200
}
fn default_target() -> String {
    "sin(pi*(x - t))".into()
}
fn default_sizes() -> Vec<usize> {
    vec![4, 8, 16]
}
fn default_runge_tol() -> f64 {
    0.05
}
fn default_taus() -> Vec<f64> {
    vec![8.0, 16.0, 32.0]
}
fn default_cells_per_tau() -> f64 {
    4.0
}
fn default_ladder() -> Vec<f64> {
    vec![4e-2, 2e-2, 1e-2]
}
fn default_index() -> Vec<usize> {
    vec![0]
}
fn default_lin_probes() -> usize {
    3
}
fn default_mode() -> RecoveryMode {
    RecoveryMode::Passive
}
fn default_passive_reg() -> f64 {
    1e-8
}
fn default_passive_max_cg() -> usize {
    300
}
fn default_passive_tol() -> f64 {
    1e-8
}
fn default_collar() -> f64 {
    0.2
}

impl PipelineSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineSpec::Forward { .. } => "forward",
            PipelineSpec::Passive {} => "passive",
            PipelineSpec::Active { .. } => "active",
            PipelineSpec::Stability { .. } => "stability",
            PipelineSpec::Control { .. } => "control",
            PipelineSpec::Runge { .. } => "runge",
            PipelineSpec::Cgo { .. } => "cgo",
            PipelineSpec::Linearize { .. } => "linearize",
            PipelineSpec::RecoverQ(_) => "recover-q",
            PipelineSpec::RecoverTaylor(_) => "recover-taylor",
            PipelineSpec::RecoverInitial { .. } => "recover-initial",
            PipelineSpec::Simultaneous(_) => "simultaneous",
            PipelineSpec::Nonuniqueness { .. } => "nonuniqueness",
            PipelineSpec::Suite { .. } => "suite",
        }
    }
}

/// Parsed config together with its source text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
    pub path: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<LoadedConfig> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        LoadedConfig::from_source(source, path)
    }

    /// A config whose text did not come from disk; `path` anchors messages and outputs.
    pub fn from_source(source: String, path: &Path) -> Result<LoadedConfig> {
        let config = parse_config(&source, &path.display().to_string())?;
        Ok(LoadedConfig { config, source, path: path.to_path_buf() })
    }

    /// The configured output directory, or `<config stem>.out` next to the file.
    pub fn output_dir(&self) -> PathBuf {
        let base = self.path.parent().unwrap_or(Path::new("."));
        match &self.config.output {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => base.join(p),
            None => base.join(format!("{}.out", self.path.file_stem().and_then(|s| s.to_str()).unwrap_or("run"))),
        }
    }
}

/// Parses a config, prefixing errors with `origin:line:column`.
pub fn parse_config(source: &str, origin: &str) -> Result<ExperimentConfig> {
    toml::from_str::<ExperimentConfig>(source).map_err(|e| {
        let msg = e.message().to_string();
        match e.span() {
            Some(span) => {
                let (line, col) = line_col(source, span.start);
                Error::Config(format!("{origin}:{line}:{col}: {msg}"))
            }
            None => Error::Config(format!("{origin}: {msg}")),
        }
    })
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

/// Everything a pipeline needs, resolved from a config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub grid: Arc<Grid>,
    pub sigma: Arc<Conductivity>,
    pub nonlinearity: Nonlinearity,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl ExperimentConfig {
    pub fn resolve(&self, rng: &mut ChaCha8Rng) -> Result<Resolved> {
        let mut grid = self.grid.build()?;
        if self.gamma0 == Gamma0Choice::All {
            grid = grid.with_gamma0_faces(&grid.faces());
        } else if self.grid.x0.is_none() && !matches!(self.pipeline, PipelineSpec::Cgo { .. } | PipelineSpec::Suite { .. }) {
            return Err(Error::Config("grid.x0 is required unless gamma0 = \"all\"".into()));
        }
        let grid = Arc::new(grid);
        let sigma = Arc::new(self.sigma.build(&grid)?);
        let nonlinearity = match &self.nonlinearity {
            Some(spec) => spec.build()?,
            None => Nonlinearity::zero(),
        };
        let phi = self.initial.phi.build(&grid, rng)?;
        let psi = self.initial.psi.build(&grid, rng)?;
        Ok(Resolved { grid, sigma, nonlinearity, phi, psi })
    }
}
