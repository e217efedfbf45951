//! Verification suite behind the `check` subcommand.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint;
use crate::catalogue::{Catalogue, DesignGridSpec};
use crate::config::{CheckConfig, RunConfig};
use crate::error::Result;
use crate::macrofem::{ElementMaterial, MacroProblem, MeshSpec};
use crate::micro::{self, CellSolverOptions, CellType, UnitCellGeometry};
use crate::sgp::evaluate_design;
use crate::sgp::filter::DensityFilter;
use crate::sgp::model::SeparableModel;
use crate::sgp::space::{
    element_material, CandidateKey, DesignSpace, DesignState, ElementDesign, GridPoint,
    MaterialModel, TypeCandidates,
};
use crate::sgp::subproblem::{solve_subproblem, BisectionConfig};
use crate::tensors::{Frobenius, Mat3, Mat6, SymMatrix3, SymTensor4};

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

fn outcome(name: &str, measured: f64, tolerance: f64, t0: Instant) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed: measured.is_finite() && measured <= tolerance,
        measured,
        tolerance,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn random_dir6(rng: &mut ChaCha8Rng) -> SymTensor4 {
    SymTensor4::from_matrix(&Mat6::from_fn(|_, _| rng.random_range(-1.0..1.0)))
}

fn random_dir3(rng: &mut ChaCha8Rng) -> SymMatrix3 {
    SymMatrix3::from_matrix(&Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
}

/// Random on-box cells of the admissible types with random rotations.
pub fn random_design(
    cat: &Catalogue,
    model: &MaterialModel,
    types: &[CellType],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DesignState> {
    let elements = (0..n)
        .map(|_| {
            let t = types[rng.random_range(0..types.len())];
            let (lo, hi) = t.bounds();
            let alpha: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| rng.random_range(*l..*h))
                .collect();
            let phi = if t == CellType::Cross3D {
                rng.random_range(0.0..std::f64::consts::PI)
            } else {
                0.0
            };
            let point = model.point(cat, t, &alpha, phi)?;
            Ok(ElementDesign {
                cell_type: t,
                alpha,
                phi,
                key: None,
                point,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignState { elements })
}

/// `max |fd − an| / max |an|` over a family of directional derivatives.
fn family_error(pairs: &[(f64, f64)]) -> f64 {
    let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let err = pairs.iter().map(|p| (p.0 - p.1).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// Directional central differences of `Λ_Φ Φ + Λ_Ψ Ψ` against the adjoint
/// sensitivities, per element and tensor. Returns the errors for `A`, `B`
/// and `K`.
pub fn gradient_errors(
    problem: &MacroProblem,
    mats: &[ElementMaterial],
    lambda_phi: f64,
    lambda_psi: f64,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 3]> {
    let (_, _, sens) = adjoint::evaluate(problem, mats, lambda_phi, lambda_psi)?;
    let cost = |m: &[ElementMaterial]| -> Result<f64> {
        let s = problem.solve_state(m)?;
        Ok(adjoint::physical_cost(&s, lambda_phi, lambda_psi))
    };
    let mut fam: [Vec<(f64, f64)>; 3] = Default::default();
    for e in 0..mats.len() {
        let m = mats[e];
        let da = random_dir6(rng).scale(m.a.max_abs());
        let db = random_dir3(rng).scale(m.b.max_abs().max(m.a.max_abs() * 1e-3));
        let dk = random_dir3(rng).scale(m.k.max_abs());
        for (f, apply) in [
            (
                0,
                &(|x: &mut ElementMaterial, t: f64| x.a = m.a.add(&da.scale(t)))
                    as &dyn Fn(&mut ElementMaterial, f64),
            ),
            (1, &|x: &mut ElementMaterial, t: f64| {
                x.b = m.b.add(&db.scale(t))
            }),
            (2, &|x: &mut ElementMaterial, t: f64| {
                x.k = m.k.add(&dk.scale(t))
            }),
        ] {
            let mut plus = mats.to_vec();
            let mut minus = mats.to_vec();
            apply(&mut plus[e], step);
            apply(&mut minus[e], -step);
            let fd = (cost(&plus)? - cost(&minus)?) / (2.0 * step);
            let an = match f {
                0 => sens[e].a.frobenius(&da),
                1 => sens[e].b.frobenius(&db),
                _ => sens[e].k.frobenius(&dk),
            };
            fam[f].push((fd, an));
        }
    }
    Ok([
        family_error(&fam[0]),
        family_error(&fam[1]),
        family_error(&fam[2]),
    ])
}

/// Zeroth-order gap and first-order errors of the model built at a random
/// design.
pub fn model_errors(
    problem: &MacroProblem,
    design: &DesignState,
    opt: &crate::sgp::OptimizerConfig,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, [f64; 3])> {
    let filter = DensityFilter::new(&problem.mesh, opt.filter_radius);
    let ev = evaluate_design(problem, design, &filter, opt)?;
    let model = SeparableModel::build(design, &ev.sens, &filter, opt.lambda_xi, ev.merit)?;
    let zeroth = (model.value(design)? - ev.merit).abs() / (1.0 + ev.merit.abs());
    let mut fam: [Vec<(f64, f64)>; 3] = Default::default();
    for (e, d) in design.elements.iter().enumerate() {
        let p = d.point;
        let da = random_dir6(rng).scale(p.a.max_abs());
        let dk = random_dir3(rng).scale(p.k.max_abs());
        let db = random_dir3(rng).scale(p.b.max_abs());
        let fd = |q: &dyn Fn(f64) -> crate::catalogue::MaterialPoint| -> Result<f64> {
            Ok(
                (model.element_value(e, &q(step))? - model.element_value(e, &q(-step))?)
                    / (2.0 * step),
            )
        };
        fam[0].push((
            fd(&|t| crate::catalogue::MaterialPoint {
                a: p.a.add(&da.scale(t)),
                ..p
            })?,
            ev.sens[e].a.frobenius(&da),
        ));
        if !p.b.is_zero() {
            fam[1].push((
                fd(&|t| crate::catalogue::MaterialPoint {
                    b: p.b.add(&db.scale(t)),
                    ..p
                })?,
                ev.sens[e].b.frobenius(&db),
            ));
        }
        fam[2].push((
            fd(&|t| crate::catalogue::MaterialPoint {
                k: p.k.add(&dk.scale(t)),
                ..p
            })?,
            ev.sens[e].k.frobenius(&dk),
        ));
    }
    Ok((
        zeroth,
        [
            family_error(&fam[0]),
            family_error(&fam[1]),
            family_error(&fam[2]),
        ],
    ))
}

/// Number of random small instances where the separable scan and joint
/// enumeration of the model disagree.
pub fn enumeration_mismatches(
    cat: &Catalogue,
    cfg: &RunConfig,
    instances: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let mut mismatches = 0;
    for inst in 0..instances {
        let n_el = 2 + inst % 2;
        let problem = MacroProblem::new(
            MeshSpec {
                nx: n_el,
                ny: 1,
                nz: 1,
                h: [1.0; 3],
            },
            cfg.check.boundary.clone(),
        )?;
        let mut types = Vec::new();
        for &t in &cfg.cell_types {
            let pts = random_design(cat, &cfg.material, &[t], 4, rng)?
                .elements
                .into_iter()
                .map(|d| {
                    GridPoint::new(d.alpha.clone(), cfg.material.point(cat, t, &d.alpha, 0.0)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let angles: Vec<f64> = if t == CellType::Cross3D {
                vec![0.0, 0.7, 2.0]
            } else {
                vec![0.0]
            };
            types.push(TypeCandidates::new(t, pts, &angles));
        }
        let space = DesignSpace::new(types)?;
        let design = random_design(cat, &cfg.material, &cfg.cell_types, n_el, rng)?;
        let opt = crate::sgp::OptimizerConfig {
            lambda_xi: 0.1,
            ..cfg.optimizer.clone()
        };
        let filter = DensityFilter::new(&problem.mesh, opt.filter_radius);
        let ev = evaluate_design(&problem, &design, &filter, &opt)?;
        let model = SeparableModel::build(&design, &ev.sens, &filter, opt.lambda_xi, ev.merit)?;
        let sol = solve_subproblem(&model, &space, None, &BisectionConfig::default())?;

        let all: Vec<CandidateKey> = space
            .types
            .iter()
            .enumerate()
            .flat_map(|(s, tc)| {
                (0..tc.points.len()).flat_map(move |g| {
                    (0..tc.angles.len()).map(move |j| CandidateKey {
                        slot: s,
                        grid: g,
                        angle: j,
                    })
                })
            })
            .collect();
        let mut best = (Vec::new(), f64::INFINITY);
        let mut combo = vec![0usize; n_el];
        'enumerate: loop {
            let keys: Vec<CandidateKey> = combo.iter().map(|&i| all[i]).collect();
            let v = model.value(&DesignState::from_keys(&space, &keys))?;
            if v < best.1 {
                best = (keys, v);
            }
            for c in combo.iter_mut() {
                *c += 1;
                if *c < all.len() {
                    continue 'enumerate;
                }
                *c = 0;
            }
            break;
        }
        if sol.keys != best.0 {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Smallest Kelvin eigenvalue of any node stiffness relative to its
/// largest, and the smallest mapped permeability eigenvalue on the grid.
pub fn catalogue_spd_margins(
    cat: &Catalogue,
    grid: &DesignGridSpec,
    model: &MaterialModel,
) -> Result<(f64, f64)> {
    let mut a_min = f64::INFINITY;
    for t in &cat.tables {
        for s in &t.samples {
            let ev = s.coeffs.a.kelvin_eigenvalues();
            a_min = a_min.min(ev[0] / ev[5].abs().max(f64::MIN_POSITIVE));
        }
    }
    let mut k_min = f64::INFINITY;
    for t in cat.cell_types() {
        for alpha in grid.radii(t) {
            let c = cat.interpolate_coefficients(t, &alpha)?;
            let ev = c.a.kelvin_eigenvalues();
            a_min = a_min.min(ev[0] / ev[5].abs().max(f64::MIN_POSITIVE));
            k_min = k_min.min(model.map(t, &alpha, &c).k.eigenvalues()[0]);
        }
    }
    Ok((a_min, k_min))
}

pub fn run_checks(cat: &Catalogue, cfg: &RunConfig) -> Result<Vec<CheckOutcome>> {
    let ck: &CheckConfig = &cfg.check;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();

    let t0 = Instant::now();
    let (a_margin, k_min) = catalogue_spd_margins(cat, &cfg.design_grid, &cfg.material)?;
    out.push(CheckOutcome {
        name: "catalogue stiffness SPD (min relative Kelvin eigenvalue)".into(),
        passed: a_margin > 0.0,
        measured: a_margin,
        tolerance: 0.0,
        seconds: t0.elapsed().as_secs_f64(),
    });
    let floor = cfg.material.permeability_floor;
    out.push(CheckOutcome {
        name: "mapped permeability above floor".into(),
        passed: k_min >= floor * (1.0 - 1e-12),
        measured: k_min,
        tolerance: floor,
        seconds: 0.0,
    });
    if out.iter().any(|c| !c.passed) {
        return Ok(out);
    }

    let problem = MacroProblem::new(ck.mesh, ck.boundary.clone())?;
    let n = problem.num_elements();
    let types: Vec<CellType> = cfg.cell_types.clone();
    let design = random_design(cat, &cfg.material, &types, n, &mut rng)?;
    let mats: Vec<ElementMaterial> = design
        .elements
        .iter()
        .map(|d| element_material(&d.point))
        .collect();
    let t0 = Instant::now();
    let (lp, ls) = (
        cfg.optimizer.lambda_phi,
        if cfg.optimizer.lambda_psi == 0.0 {
            -1.0
        } else {
            cfg.optimizer.lambda_psi
        },
    );
    let g = gradient_errors(&problem, &mats, lp, ls, ck.fd_step, &mut rng)?;
    for (name, v) in ["A", "B", "K"].iter().zip(g) {
        out.push(outcome(
            &format!("adjoint gradient vs central differences, d/d{name}"),
            v,
            ck.gradient_tol,
            t0,
        ));
    }

    let t0 = Instant::now();
    let opt = crate::sgp::OptimizerConfig {
        lambda_psi: ls,
        lambda_xi: 0.05,
        ..cfg.optimizer.clone()
    };
    let (zeroth, first) = model_errors(&problem, &design, &opt, ck.fd_step, &mut rng)?;
    out.push(outcome(
        "model zeroth-order gap",
        zeroth,
        ck.model_zeroth_tol,
        t0,
    ));
    for (name, v) in ["A", "B", "K"].iter().zip(first) {
        out.push(outcome(
            &format!("model first-order error, d/d{name}"),
            v,
            ck.model_first_tol,
            t0,
        ));
    }

    let t0 = Instant::now();
    let mism = enumeration_mismatches(cat, cfg, ck.enumeration_instances, &mut rng)?;
    out.push(outcome(
        "separable scan vs joint enumeration (mismatches)",
        mism as f64,
        0.0,
        t0,
    ));

    if ck.cell_resolution > 0 {
        let t0 = Instant::now();
        let spec = &cfg.catalogue.build;
        let geom = UnitCellGeometry::new(CellType::Cross3D, vec![0.15, 0.15], spec.base)?;
        let opts = CellSolverOptions {
            rel_tol: spec.rel_tol,
            max_iter: spec.max_iter,
        };
        let (_, diag) = micro::homogenize(&geom, ck.cell_resolution, spec.gamma, &opts)?;
        out.push(outcome(
            "coupling tensor dual-formula gap",
            diag.c_dual_gap,
            ck.dual_tol,
            t0,
        ));
    }
    Ok(out)
}
