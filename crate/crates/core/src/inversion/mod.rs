//! Inverse pipelines: higher-order linearization, coefficient recovery,
//! initial-data recovery and the non-uniqueness construction.

pub mod basis;
pub mod coefficients;
pub mod initial;
pub mod linearize;
pub mod nonunique;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, FieldKind, SpaceTimeField};
use crate::geometry::Conductivity;
use crate::measurement::{MeasurementOracle, Scenario};
use crate::semilinear::{Coefficient, Nonlinearity};

pub use basis::{clamped_bsplines, probe_directions, RecoveryBasis};
pub use coefficients::{direction_tuples, recover_potential, recover_taylor_coefficient, LCurvePoint, RecoveryDiagnostics, RecoveryResult};
pub use initial::{
    flux_gap, random_initial_data, recover_initial_active, recover_initial_passive, stability_probe, ActiveOptions, ActiveResult,
    PassiveOptions, PassiveProblem, PassiveResult, StabilityProbe,
};
pub use linearize::{fd_linearize, fd_linearize_oracle, integral_identity, LinearizationStencil, LinearizedRecord, Scheme, TestField};
pub use nonunique::{nonuniqueness_demo, NonuniquenessDemo};

/// Default bound on boundary inputs accepted by a small-data oracle.
pub const DEFAULT_DELTA: f64 = 1e-2;

/// Settings of [`simultaneous_recover`].
#[derive(Debug, Clone)]
pub struct SimultaneousConfig {
    pub stencil: LinearizationStencil,
    /// Stencil for orders two and up; defaults to `stencil`.
    pub higher_stencil: Option<LinearizationStencil>,
    pub basis: RecoveryBasis,
    /// Highest Taylor order to recover (at least 1).
    pub max_order: usize,
    pub reg: f64,
    pub passive: PassiveOptions,
}

#[derive(Debug, Clone)]
pub struct SimultaneousResult {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Entry `k - 1` holds the order-`k` coefficient along the background.
    pub coefficients: Vec<RecoveryResult>,
    pub passive: PassiveResult,
    pub notes: Vec<String>,
}

/// Recovers `f_u, f_uu, ...` along the background and then `(phi, psi)` from
/// the passive record, using the recovered first-order coefficient as the
/// potential of the background equation.
pub fn simultaneous_recover(oracle: &dyn MeasurementOracle, sigma: &Arc<Conductivity>, config: &SimultaneousConfig) -> Result<SimultaneousResult> {
    if config.max_order == 0 || config.max_order > 4 {
        return Err(Error::InvalidArgument(format!("order {} not in 1..=4", config.max_order)));
    }
    let q = recover_potential(oracle, sigma, &config.stencil, &config.basis, config.reg).map_err(|e| e.in_stage("potential"))?;
    let mut coefficients = vec![q];
    let higher = config.higher_stencil.as_ref().unwrap_or(&config.stencil);
    for k in 2..=config.max_order {
        let lower: Vec<SpaceTimeField> = coefficients.iter().map(|c| c.recovered.clone()).collect();
        let c = recover_taylor_coefficient(oracle, sigma, k, &lower, higher, &config.basis, config.reg)
            .map_err(|e| e.in_stage(format!("taylor-{k}")))?;
        coefficients.push(c);
    }
    let record = oracle.passive().map_err(|e| e.in_stage("passive record"))?;
    let potential = coefficients[0].recovered.clone().with_kind(FieldKind::Potential);
    let problem = PassiveProblem {
        grid: oracle.grid().clone(),
        sigma: sigma.clone(),
        nonlinearity: Nonlinearity::taylor(vec![Coefficient::Constant(0.0), Coefficient::Field(Arc::new(potential))]),
        dirichlet: None,
    };
    let passive = recover_initial_passive(&problem, &record.flux, &config.passive).map_err(|e| e.in_stage("initial-data"))?;
    let notes = vec![
        "background potential approximated by the recovered first-order coefficient".to_string(),
        format!("passive misfit {:e}", passive.relative_misfit),
    ];
    Ok(SimultaneousResult { phi: passive.phi.clone(), psi: passive.psi.clone(), coefficients, passive, notes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaProbe {
    /// Largest amplitude found at which the fixed point converges.
    pub delta: f64,
    /// Smallest amplitude found at which it fails (`inf` if none).
    pub failed_at: f64,
    pub evaluations: usize,
}

/// Bisects (in log scale) the amplitude `s` of the input `s * direction`
/// between `lo` and `hi` for the largest value at which the scenario's
/// fixed-point solve still converges.
pub fn probe_delta(scenario: &Scenario, direction: &BoundaryTrace, lo: f64, hi: f64, steps: usize) -> Result<DeltaProbe> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidArgument(format!("bad probe bracket [{lo}, {hi}]")));
    }
    let scale = direction.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::InvalidArgument("probe direction is zero".into()));
    }
    let unit = direction.scaled(1.0 / scale);
    let converges = |s: f64| -> Result<bool> {
        match scenario.solve(Some(&unit.scaled(s))) {
            Ok(_) => Ok(true),
            Err(e) if e.is_numerical() => Ok(false),
            Err(e) => Err(e),
        }
    };
    let mut evaluations = 2;
    if !converges(lo)? {
        return Ok(DeltaProbe { delta: 0.0, failed_at: lo, evaluations: 1 });
    }
    if converges(hi)? {
        return Ok(DeltaProbe { delta: hi, failed_at: f64::INFINITY, evaluations });
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..steps {
        let m = (a * b).sqrt();
        evaluations += 1;
        if converges(m)? {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(DeltaProbe { delta: a, failed_at: b, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::grid_1d;

    #[test]
    fn delta_probe_brackets_blowup() {
        let g = grid_1d(0.0, 1.0, 40, 2.0, 0.5).unwrap();
        let g = Arc::new(g.with_gamma0_faces(&g.faces()));
        let s = Arc::new(Conductivity::identity(&g));
        let sc = Scenario::at_rest(g.clone(), s, Nonlinearity::taylor(vec![0.0.into(), 0.0.into(), 0.0.into(), (-1.0).into()]));
        let dir = probe_directions(&g, 2, 1, 2.0).unwrap().remove(0);
        let p = probe_delta(&sc, &dir, 1e-3, 1e3, 20).unwrap();
        assert!(p.delta > 1e-3 && p.delta < p.failed_at && p.failed_at < 1e3, "{p:?}");
        assert!(p.failed_at / p.delta < 1.01);
        let easy = Scenario::at_rest(g.clone(), Arc::new(Conductivity::identity(&g)), Nonlinearity::zero());
        assert_eq!(probe_delta(&easy, &dir, 1e-3, 1e3, 5).unwrap().failed_at, f64::INFINITY);
    }

    #[test]
    fn simultaneous_quadratic_background() {
        use crate::geometry::tag_gamma0;
        use crate::measurement::SyntheticOracle;
        let (t1, t2) = (2.4, 3.4);
        let g = tag_gamma0(&grid_1d(0.0, 1.0, 30, 3.6, 0.5).unwrap(), &[-0.1]).unwrap();
        let g = Arc::new(g.with_gamma0_faces(&g.faces()));
        let s = Arc::new(Conductivity::identity(&g));
        let phi: Vec<f64> = (0..g.n_nodes()).map(|n| 0.01 * (std::f64::consts::PI * g.coord(n)[0]).sin()).collect();
        let nl = Nonlinearity::taylor(vec![0.0.into(), 0.0.into(), 1.0.into()]).with_window(t1, t2);
        let sc = Scenario::new(g.clone(), s.clone(), nl.clone(), phi.clone(), vec![0.0; g.n_nodes()]).unwrap();
        let (bg, _) = sc.solve(None).unwrap();
        let q = nl.bind(&g).unwrap().nth_field(1, &bg, FieldKind::Potential);
        let dirs = probe_directions(&g, 6, 1, 3.6).unwrap();
        let cfg = SimultaneousConfig {
            stencil: LinearizationStencil::new(dirs, 1e-3, 1).unwrap(),
            higher_stencil: None,
            basis: RecoveryBasis::new(&g, 6, 4, (t1, t2)).unwrap(),
            max_order: 1,
            reg: 1e-6,
            passive: PassiveOptions::default(),
        };
        let r = simultaneous_recover(&SyntheticOracle::new(sc), &s, &cfg).unwrap();
        let err = r.coefficients[0].clone().with_truth(q).unwrap().rel_l2_error.unwrap();
        assert!(err < 0.2, "{err}");
        let w = g.node_weights();
        let e: f64 = (0..phi.len()).map(|i| w[i] * (r.phi[i] - phi[i]).powi(2)).sum::<f64>().sqrt();
        let n: f64 = (0..phi.len()).map(|i| w[i] * phi[i].powi(2)).sum::<f64>().sqrt();
        assert!(e / n < 0.1, "{}", e / n);
    }
}
