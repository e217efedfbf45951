//! Sequential global programming: separable model, brute-force
//! per-element subproblems and the outer loop with step-size control.

pub mod filter;
pub mod model;
pub mod space;
pub mod subproblem;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adjoint::{self, ElementSensitivity};
use crate::error::{Error, Result};
use crate::macrofem::{MacroProblem, MacroState};
use filter::DensityFilter;
use model::SeparableModel;
use space::{DesignSpace, DesignState};
use subproblem::{solve_subproblem, BisectionConfig};

/// Growth of the globalization weight after a rejected candidate:
/// `Λ_g ← max(growth · Λ_g, initial_factor · |J| / mean ‖A^k‖²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalizationSchedule {
    pub initial_factor: f64,
    pub growth: f64,
    pub max_retries: usize,
}

impl Default for GlobalizationSchedule {
    fn default() -> Self {
        Self {
            initial_factor: 1e-3,
            growth: 10.0,
            max_retries: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lambda_phi: f64,
    pub lambda_psi: f64,
    pub lambda_xi: f64,
    /// Upper bound on the mean solid fraction.
    pub rho_bar: Option<f64>,
    pub k_max: usize,
    /// Filter radius in element lengths.
    pub filter_radius: f64,
    /// Stop once the accepted decrease is at most this.
    pub epsilon_j: f64,
    pub bisection: BisectionConfig,
    pub globalization: GlobalizationSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda_phi: 1.0,
            lambda_psi: 0.0,
            lambda_xi: 0.0,
            rho_bar: None,
            k_max: 50,
            filter_radius: 1.3,
            epsilon_j: 0.0,
            bisection: BisectionConfig::default(),
            globalization: GlobalizationSchedule::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda_phi > 0.0) {
            return bad("lambda_phi must be positive");
        }
        if self.k_max < 1 {
            return bad("k_max must be at least 1");
        }
        if !(self.filter_radius > 0.0) {
            return bad("filter_radius must be positive");
        }
        if !(self.lambda_xi >= 0.0) || !self.lambda_psi.is_finite() {
            return bad("lambda_xi must be non-negative and lambda_psi finite");
        }
        if let Some(r) = self.rho_bar {
            if !(r > 0.0 && r <= 1.0) {
                return bad("rho_bar must lie in (0, 1]");
            }
        }
        if !(self.bisection.tolerance > 0.0) || !(self.globalization.growth > 1.0) {
            return bad("bisection tolerance must be positive and globalization growth above 1");
        }
        Ok(())
    }
}

/// State, sensitivities and merit of one design.
#[derive(Debug)]
pub struct Evaluation {
    pub state: MacroState,
    pub sens: Vec<ElementSensitivity>,
    pub xi: f64,
    /// `Λ_Φ Φ + Λ_Ψ Ψ + Λ_Ξ Ξ`.
    pub merit: f64,
}

pub fn evaluate_design(
    problem: &MacroProblem,
    design: &DesignState,
    filter: &DensityFilter,
    cfg: &OptimizerConfig,
) -> Result<Evaluation> {
    let mats = design.materials();
    let (state, _, sens) = adjoint::evaluate(problem, &mats, cfg.lambda_phi, cfg.lambda_psi)?;
    let xi = filter.regularization(&design.labels());
    let merit = adjoint::physical_cost(&state, cfg.lambda_phi, cfg.lambda_psi) + cfg.lambda_xi * xi;
    Ok(Evaluation {
        state,
        sens,
        xi,
        merit,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub merit: f64,
    pub compliance: f64,
    pub flux: f64,
    pub xi: f64,
    pub rho: f64,
    /// Globalization weight of the accepted subproblem.
    pub lambda_g: f64,
    pub lambda_rho: f64,
    /// Rejected candidates before acceptance.
    pub rejections: usize,
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The subproblem returned the incumbent.
    NoChange,
    /// The accepted decrease was at most `ε_J`.
    Converged,
    /// No descent within the retry budget; the incumbent is returned.
    NonDescent,
    MaxIterations,
}

#[derive(Debug)]
pub struct OptimizationResult {
    pub design: DesignState,
    pub evaluation: Evaluation,
    pub history: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Decrease of the last attempted step, `J^k − J_candidate`.
    pub j_diff: f64,
}

impl OptimizationResult {
    pub fn iterations(&self) -> usize {
        self.history.last().map_or(0, |r| r.k)
    }
}

pub type Observer<'a> = &'a mut dyn FnMut(&IterationRecord, &DesignState, &Evaluation);

fn record(
    k: usize,
    ev: &Evaluation,
    d: &DesignState,
    lambda_g: f64,
    lambda_rho: f64,
    rejections: usize,
    t0: Instant,
) -> IterationRecord {
    IterationRecord {
        k,
        merit: ev.merit,
        compliance: ev.state.compliance,
        flux: ev.state.flux,
        xi: ev.xi,
        rho: d.rho_mean(),
        lambda_g,
        lambda_rho,
        rejections,
        wall_time: t0.elapsed().as_secs_f64(),
    }
}

/// Outer loop: state and adjoint solve, model build, subproblem solve;
/// retries with a growing `Λ_g` until the merit does not increase.
pub fn optimize(
    problem: &MacroProblem,
    space: &DesignSpace,
    initial: DesignState,
    cfg: &OptimizerConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<OptimizationResult> {
    cfg.validate()?;
    if initial.len() != problem.num_elements() {
        return Err(Error::Config(format!(
            "initial design has {} elements, mesh has {}",
            initial.len(),
            problem.num_elements()
        )));
    }
    let t0 = Instant::now();
    let filter = DensityFilter::new(&problem.mesh, cfg.filter_radius);
    let mut design = initial;
    design.snap_keys(space);
    let mut ev = evaluate_design(problem, &design, &filter, cfg)?;
    let mut history = vec![record(0, &ev, &design, 0.0, 0.0, 0, t0)];
    if let Some(obs) = observer.as_mut() {
        obs(&history[0], &design, &ev);
    }
    let sched = &cfg.globalization;
    let mut stop = StopReason::MaxIterations;
    let mut j_diff = f64::INFINITY;

    'outer: for k in 1..=cfg.k_max {
        let mut model = SeparableModel::build(&design, &ev.sens, &filter, cfg.lambda_xi, ev.merit)?;
        let mean_a = design
            .elements
            .iter()
            .map(|e| e.point.a.to_matrix().norm_squared())
            .sum::<f64>()
            / design.len() as f64;
        let mut lg0 = sched.initial_factor * ev.merit.abs() / mean_a;
        if !(lg0 > 0.0) {
            lg0 = sched.initial_factor;
        }
        let mut accepted = None;
        for attempt in 0..=sched.max_retries {
            model.lambda_g = if attempt == 0 {
                0.0
            } else {
                (sched.growth * model.lambda_g).max(lg0)
            };
            let ts = Instant::now();
            let sol = solve_subproblem(&model, space, cfg.rho_bar, &cfg.bisection)?;
            let scan_s = ts.elapsed().as_secs_f64();
            let cand = DesignState::from_keys(space, &sol.keys);
            if cand.same_candidates(&design) {
                stop = StopReason::NoChange;
                j_diff = 0.0;
                break 'outer;
            }
            let ts = Instant::now();
            let ev_c = evaluate_design(problem, &cand, &filter, cfg)?;
            j_diff = ev.merit - ev_c.merit;
            log::debug!(
                "k={k} attempt={attempt} lambda_g={:.3e} merit={:.6e} diff={:.3e} subproblem {scan_s:.3}s evaluation {:.3}s",
                model.lambda_g,
                ev_c.merit,
                j_diff,
                ts.elapsed().as_secs_f64()
            );
            if j_diff >= 0.0 {
                accepted = Some((cand, ev_c, model.lambda_g, sol.lambda_rho, attempt));
                break;
            }
        }
        let Some((cand, ev_c, lg, lr, rejections)) = accepted else {
            stop = StopReason::NonDescent;
            break;
        };
        design = cand;
        ev = ev_c;
        let rec = record(k, &ev, &design, lg, lr, rejections, t0);
        log::info!(
            "k={k} J={:.6e} Phi={:.6e} Psi={:.6e} Xi={:.4e} rho={:.4}",
            rec.merit,
            rec.compliance,
            rec.flux,
            rec.xi,
            rec.rho
        );
        if let Some(obs) = observer.as_mut() {
            obs(&rec, &design, &ev);
        }
        history.push(rec);
        if j_diff <= cfg.epsilon_j {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(OptimizationResult {
        design,
        evaluation: ev,
        history,
        stop,
        j_diff,
    })
}

/// Shortest round-trip decimal form, stable across runs.
fn num(x: f64) -> String {
    format!("{x:e}")
}

/// History rows without wall time so that reruns are byte-identical.
pub fn write_history_csv(
    w: &mut impl Write,
    header: &str,
    history: &[IterationRecord],
) -> Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "k,J,Phi,Psi,Xi,rho,Lambda_g,lambda_rho,rejections")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            num(r.merit),
            num(r.compliance),
            num(r.flux),
            num(r.xi),
            num(r.rho),
            num(r.lambda_g),
            num(r.lambda_rho),
            r.rejections
        )?;
    }
    Ok(())
}

pub fn write_timing_csv(w: &mut impl Write, history: &[IterationRecord]) -> Result<()> {
    writeln!(w, "k,wall_time_s")?;
    for r in history {
        writeln!(w, "{},{:.6}", r.k, r.wall_time)?;
    }
    Ok(())
}

/// One row per element: type index, parameters, angle and grid key.
pub fn write_design_csv(w: &mut impl Write, header: &str, design: &DesignState) -> Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "element,type,alpha0,alpha1,phi,rho,grid,angle")?;
    for (e, d) in design.elements.iter().enumerate() {
        let a1 = d.alpha.get(1).map_or(String::new(), |v| num(*v));
        let (g, j) = d.key.map_or((String::new(), String::new()), |k| {
            (k.grid.to_string(), k.angle.to_string())
        });
        writeln!(
            w,
            "{e},{},{},{a1},{},{},{g},{j}",
            d.cell_type.index(),
            num(d.alpha[0]),
            num(d.phi),
            num(d.point.rho)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalogue::tests::small_catalogue;
    use crate::catalogue::DesignGridSpec;
    use crate::macrofem::{BoundarySpec, Face, MeshSpec, Patch};
    use crate::micro::CellType;
    use space::MaterialModel;

    fn problem() -> MacroProblem {
        let spec = BoundarySpec {
            clamped: vec![Patch::whole(Face::XMin)],
            traction_patches: vec![Patch::band(Face::YMax, 0, Some(3.0), None)],
            traction: [0.0, -1.0, 0.0],
            inflow: vec![Patch::band(Face::YMax, 0, None, Some(1.0))],
            p_inflow: 1.0,
            outflow: vec![Patch::band(Face::YMin, 0, Some(3.0), None)],
            p_outflow: 0.5,
        };
        MacroProblem::new(
            MeshSpec {
                nx: 4,
                ny: 3,
                nz: 1,
                h: [1.0; 3],
            },
            spec,
        )
        .unwrap()
    }

    fn setup(types: &[CellType], angles: usize) -> (MacroProblem, DesignSpace, DesignState) {
        let cat = small_catalogue();
        let mm = MaterialModel {
            permeability_scale: 20.0,
            ..MaterialModel::default()
        };
        let grid = DesignGridSpec {
            cross_radii: [6, 6],
            angles,
            sphere_radii: 6,
        };
        let space = DesignSpace::from_catalogue(cat, &grid, types, &mm).unwrap();
        let p = problem();
        let init = DesignState::homogeneous(
            cat,
            &mm,
            p.num_elements(),
            CellType::Cross3D,
            &[0.15, 0.15],
            0.0,
        )
        .unwrap();
        (p, space, init)
    }

    #[test]
    fn accepted_merits_never_increase() {
        let (p, space, init) = setup(&[CellType::Cross3D], 8);
        let cfg = OptimizerConfig {
            lambda_psi: -10.0,
            k_max: 15,
            ..OptimizerConfig::default()
        };
        let res = optimize(&p, &space, init, &cfg, None).unwrap();
        assert!(res.history.windows(2).all(|w| w[1].merit <= w[0].merit));
        assert!(res.history.len() >= 2);
        assert!(res.stop != StopReason::MaxIterations || res.history.len() == 16);
    }

    #[test]
    fn fixed_point_stops_after_one_iteration() {
        let (p, space, init) = setup(&[CellType::Cross3D], 1);
        let cfg = OptimizerConfig::default();
        let first = optimize(&p, &space, init, &cfg, None).unwrap();
        assert!(matches!(
            first.stop,
            StopReason::NoChange | StopReason::Converged | StopReason::NonDescent
        ));
        let again = optimize(&p, &space, first.design.clone(), &cfg, None).unwrap();
        if first.stop == StopReason::NoChange {
            assert_eq!(again.stop, StopReason::NoChange);
            assert_eq!(again.history.len(), 1);
            assert_eq!(again.design, first.design);
        }
    }

    #[test]
    fn resource_bound_is_respected() {
        let (p, space, init) = setup(&[CellType::Cross3D, CellType::SphereVoid], 4);
        let cfg = OptimizerConfig {
            rho_bar: Some(0.8),
            k_max: 8,
            ..OptimizerConfig::default()
        };
        let res = optimize(&p, &space, init, &cfg, None).unwrap();
        for r in &res.history[1..] {
            assert!(r.rho <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn history_csv_is_stable() {
        let (p, space, init) = setup(&[CellType::Cross3D], 4);
        let cfg = OptimizerConfig {
            lambda_psi: -5.0,
            k_max: 4,
            ..OptimizerConfig::default()
        };
        let run = || {
            let res = optimize(&p, &space, init.clone(), &cfg, None).unwrap();
            let mut buf = Vec::new();
            write_history_csv(&mut buf, "test", &res.history).unwrap();
            buf
        };
        let a = run();
        assert_eq!(a, run());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# test\nk,J,Phi,Psi,Xi,rho,Lambda_g,lambda_rho,rejections\n0,"));
    }
}
