//! Boundary measurements: passive and active Dirichlet-to-Neumann records and
//! the input-output map with final-time observations.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{write_wfld, BoundaryTrace, SpaceTimeField, WfldData};
use crate::geometry::{BoundaryTag, Conductivity, Grid, Subset};
use crate::semilinear::{solve_semilinear, Data, Nonlinearity, SolveOptions, SolveReport};
use crate::wave::{terminal_state, WaveOperator};

/// Forward problem without its boundary input.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Arc<Grid>,
    pub sigma: Arc<Conductivity>,
    pub nonlinearity: Nonlinearity,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub label: String,
    pub options: SolveOptions,
}

impl Scenario {
    pub fn new(grid: Arc<Grid>, sigma: Arc<Conductivity>, nonlinearity: Nonlinearity, phi: Vec<f64>, psi: Vec<f64>) -> Result<Scenario> {
        let nn = grid.n_nodes();
        if phi.len() != nn || psi.len() != nn {
            return Err(Error::Shape(format!("initial data must have {nn} entries")));
        }
        Ok(Scenario { grid, sigma, nonlinearity, phi, psi, label: String::new(), options: SolveOptions::default() })
    }

    /// Zero initial data.
    pub fn at_rest(grid: Arc<Grid>, sigma: Arc<Conductivity>, nonlinearity: Nonlinearity) -> Scenario {
        let nn = grid.n_nodes();
        Scenario::new(grid, sigma, nonlinearity, vec![0.0; nn], vec![0.0; nn]).expect("sizes match")
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Scenario {
        self.label = label.into();
        self
    }

    pub fn operator(&self) -> Result<WaveOperator> {
        WaveOperator::new(self.grid.clone(), self.sigma.clone())
    }

    /// Semilinear solve with Dirichlet input `h`.
    pub fn solve(&self, h: Option<&BoundaryTrace>) -> Result<(SpaceTimeField, SolveReport)> {
        let op = self.operator()?;
        solve_semilinear(&op, &self.nonlinearity, Data { dirichlet: h, phi: Some(&self.phi), psi: Some(&self.psi) }, self.options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Passive,
    Active,
    FullIo,
}

/// One input/output pair.
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub kind: RecordKind,
    pub label: String,
    pub input: BoundaryTrace,
    pub flux: BoundaryTrace,
    pub final_state: Option<(Vec<f64>, Vec<f64>)>,
    pub report: SolveReport,
}

/// Rejects inputs that are nonzero off the observation boundary.
pub fn check_input_support(h: &BoundaryTrace) -> Result<()> {
    let tags = h.grid().boundary_tags();
    for (k, p) in h.points().iter().enumerate() {
        if tags.get(&p.node) == Some(&BoundaryTag::Complement) && (0..h.grid().n_levels()).any(|l| h.at(l, k) != 0.0) {
            return Err(Error::InputOffGamma0(p.node));
        }
    }
    Ok(())
}

fn measure(scenario: &Scenario, h: Option<&BoundaryTrace>, kind: RecordKind) -> Result<MeasurementRecord> {
    if let Some(h) = h {
        if !h.grid().same_layout(&scenario.grid) {
            return Err(Error::GridMismatch("input trace does not match scenario grid".into()));
        }
        check_input_support(h)?;
    }
    let (u, report) = scenario.solve(h)?;
    let subset = if kind == RecordKind::FullIo { Subset::All } else { Subset::Gamma0 };
    let flux = scenario.operator()?.flux_trace(&u, subset)?;
    let input = match h {
        Some(h) => h.clone(),
        None => BoundaryTrace::dirichlet(scenario.grid.clone(), Subset::Gamma0),
    };
    let final_state = (kind == RecordKind::FullIo).then(|| terminal_state(&u));
    Ok(MeasurementRecord { kind, label: scenario.label.clone(), input, flux, final_state, report })
}

/// Flux on the observation boundary with zero boundary input.
pub fn passive_dn(scenario: &Scenario) -> Result<MeasurementRecord> {
    measure(scenario, None, RecordKind::Passive)
}

/// Flux on the observation boundary for input `h` supported there.
pub fn active_dn(scenario: &Scenario, h: &BoundaryTrace) -> Result<MeasurementRecord> {
    measure(scenario, Some(h), RecordKind::Active)
}

/// Flux on the whole boundary plus `(u(T), u_t(T))`.
pub fn full_io_map(scenario: &Scenario, h: Option<&BoundaryTrace>) -> Result<MeasurementRecord> {
    measure(scenario, h, RecordKind::FullIo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordDistance {
    pub flux_l2: f64,
    pub final_l2: Option<f64>,
}

/// L2 distance of two final states `(u, u_t)` with trapezoid weights.
pub fn state_distance(grid: &Grid, a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> f64 {
    let w = grid.node_weights();
    let mut s = 0.0;
    for i in 0..w.len() {
        s += w[i] * ((a.0[i] - b.0[i]).powi(2) + (a.1[i] - b.1[i]).powi(2));
    }
    s.sqrt()
}

pub fn record_distance(r1: &MeasurementRecord, r2: &MeasurementRecord) -> Result<RecordDistance> {
    let diff = r1.flux.combined(-1.0, &r2.flux)?;
    let flux_l2 = diff.l2_norm()?;
    let final_l2 = match (&r1.final_state, &r2.final_state) {
        (Some(a), Some(b)) => Some(state_distance(r1.flux.grid(), a, b)),
        _ => None,
    };
    Ok(RecordDistance { flux_l2, final_l2 })
}

#[derive(Serialize)]
struct RecordMeta<'a> {
    kind: RecordKind,
    label: &'a str,
    input_l2: f64,
    flux_l2: f64,
    converged: bool,
    iterations: usize,
    max_amplitude: f64,
    grid: crate::geometry::GridSpec,
}

impl MeasurementRecord {
    /// Writes `meta.toml`, `input.csv`, `flux.csv` and, when present, `final_state.wfld`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = RecordMeta {
            kind: self.kind,
            label: &self.label,
            input_l2: self.input.l2_norm().unwrap_or(0.0),
            flux_l2: self.flux.l2_norm()?,
            converged: self.report.converged,
            iterations: self.report.iterations,
            max_amplitude: self.report.max_amplitude,
            grid: self.flux.grid().spec(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("meta.toml"), text)?;
        self.input.write_csv(&dir.join("input.csv"))?;
        self.flux.write_csv(&dir.join("flux.csv"))?;
        if let Some((u, v)) = &self.final_state {
            let grid = self.flux.grid();
            let mut shape = vec![2u32];
            shape.extend(grid.nx().iter().rev().map(|&n| n as u32 + 1));
            let mut data = u.clone();
            data.extend_from_slice(v);
            write_wfld(&dir.join("final_state.wfld"), &shape, WfldData::Real(&data))?;
        }
        Ok(())
    }
}

/// Access to boundary measurements of an unknown system.
pub trait MeasurementOracle: Sync {
    fn grid(&self) -> &Arc<Grid>;
    fn passive(&self) -> Result<MeasurementRecord>;
    fn active(&self, h: &BoundaryTrace) -> Result<MeasurementRecord>;
    fn full_io(&self, h: Option<&BoundaryTrace>) -> Result<MeasurementRecord>;
}

/// Oracle backed by a known scenario, with an optional input bound and flux noise.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    scenario: Scenario,
    delta: Option<f64>,
    noise: Option<(f64, u64)>,
}

impl SyntheticOracle {
    pub fn new(scenario: Scenario) -> SyntheticOracle {
        SyntheticOracle { scenario, delta: None, noise: None }
    }

    /// Rejects inputs whose max-norm exceeds `delta`.
    pub fn with_input_bound(mut self, delta: f64) -> SyntheticOracle {
        self.delta = Some(delta);
        self
    }

    /// Adds Gaussian noise of relative RMS size `level` to every flux.
    /// The draw is seeded by `seed` and the input values, so repeated queries agree.
    pub fn with_noise(mut self, level: f64, seed: u64) -> SyntheticOracle {
        self.noise = Some((level, seed));
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn check_bound(&self, h: Option<&BoundaryTrace>) -> Result<()> {
        if let (Some(d), Some(h)) = (self.delta, h) {
            let norm = h.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm > d {
                return Err(Error::InputTooLarge { norm, bound: d });
            }
        }
        Ok(())
    }

    fn perturb(&self, mut rec: MeasurementRecord) -> MeasurementRecord {
        if let Some((level, seed)) = self.noise {
            let mut hasher = Sha256::new();
            hasher.update(seed.to_le_bytes());
            for v in rec.input.values() {
                hasher.update(v.to_le_bytes());
            }
            let digest = hasher.finalize();
            let mut key = [0u8; 32];
            key.copy_from_slice(&digest);
            let mut rng = ChaCha8Rng::from_seed(key);
            let vals = rec.flux.values_mut();
            let rms = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len().max(1) as f64).sqrt();
            for v in vals.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += level * rms * z;
            }
        }
        rec
    }
}

impl MeasurementOracle for SyntheticOracle {
    fn grid(&self) -> &Arc<Grid> {
        &self.scenario.grid
    }
    fn passive(&self) -> Result<MeasurementRecord> {
        passive_dn(&self.scenario).map(|r| self.perturb(r))
    }
    fn active(&self, h: &BoundaryTrace) -> Result<MeasurementRecord> {
        self.check_bound(Some(h))?;
        active_dn(&self.scenario, h).map(|r| self.perturb(r))
    }
    fn full_io(&self, h: Option<&BoundaryTrace>) -> Result<MeasurementRecord> {
        self.check_bound(h)?;
        full_io_map(&self.scenario, h).map(|r| self.perturb(r))
    }
}
