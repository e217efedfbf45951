//! Adjoint fields and per-element sensitivities of
//! `J_phys = Λ_Φ Φ + Λ_Ψ Ψ` with respect to the element tensors.
//!
//! The three adjoints do not depend on the weights:
//!
//! ```text
//! a(v, θ̃)  = −g(v)
//! c(q, q̃₁) = b(q, θ̃)
//! c(q, q̃₂) = c(q, p̃)
//! ```
//!
//! for all admissible `v` and `q`.

use rayon::prelude::*;

use crate::error::Result;
use crate::hex8;
use crate::macrofem::{ElementMaterial, MacroProblem, MacroState};
use crate::tensors::{SymMatrix3, SymTensor4};

#[derive(Clone, Debug)]
pub struct AdjointBundle {
    pub theta: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
}

/// `∂J_phys/∂A_e`, `∂J_phys/∂B_e`, `∂J_phys/∂K_e`, symmetrized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementSensitivity {
    pub a: SymTensor4,
    pub b: SymMatrix3,
    pub k: SymMatrix3,
}

pub fn solve_adjoints(
    problem: &MacroProblem,
    mats: &[ElementMaterial],
    state: &MacroState,
) -> Result<AdjointBundle> {
    let bd = &problem.boundary;
    let mut theta: Vec<f64> = bd
        .load
        .iter()
        .zip(&bd.clamped)
        .map(|(g, &f)| if f { 0.0 } else { -g })
        .collect();
    state.operators.elasticity.solve_in_place(&mut theta);

    let mut q1 = problem.coupling_transpose_apply(mats, &theta);
    let mut q2 = problem.darcy_apply(mats, &bd.lift);
    for n in 0..q1.len() {
        if bd.pressure_fixed[n] {
            q1[n] = 0.0;
            q2[n] = 0.0;
        }
    }
    state.operators.darcy.solve_in_place(&mut q1);
    state.operators.darcy.solve_in_place(&mut q2);
    Ok(AdjointBundle { theta, q1, q2 })
}

fn sym_outer6(x: &[f64; 6], y: &[f64; 6], w: f64, acc: &mut [f64; 21]) {
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            acc[k] += 0.5 * w * (x[i] * y[j] + x[j] * y[i]);
            k += 1;
        }
    }
}

fn sym_outer3(x: &[f64; 3], y: &[f64; 3], w: f64, acc: &mut [f64; 6]) {
    const IJ: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    for (k, &(i, j)) in IJ.iter().enumerate() {
        acc[k] += 0.5 * w * (x[i] * y[j] + x[j] * y[i]);
    }
}

/// Gauss-point accumulation of the sensitivity tensors.
pub fn element_sensitivities(
    problem: &MacroProblem,
    state: &MacroState,
    bundle: &AdjointBundle,
    lambda_phi: f64,
    lambda_psi: f64,
) -> Vec<ElementSensitivity> {
    let h = problem.mesh.spec.h;
    let w = h[0] * h[1] * h[2] / 8.0;
    let lift = &problem.boundary.lift;
    let pts = hex8::gauss_points();
    (0..problem.num_elements())
        .into_par_iter()
        .map(|e| {
            let ue = problem.element_displacements(e, &state.u);
            let te = problem.element_displacements(e, &bundle.theta);
            let pe = problem.element_nodal(e, &state.total_pressure);
            let q1 = problem.element_nodal(e, &bundle.q1);
            let q2 = problem.element_nodal(e, &bundle.q2);
            let lt = problem.element_nodal(e, lift);
            let mut ga = [0.0; 21];
            let mut gb = [0.0; 6];
            let mut gk = [0.0; 6];
            for xi in &pts {
                let n = hex8::shape(xi);
                let grads = hex8::shape_gradients(xi, &h);
                let bm = hex8::strain_matrix(&grads);
                let strain = |v: &[f64; 24]| -> [f64; 6] {
                    std::array::from_fn(|r| (0..24).map(|c| bm[r][c] * v[c]).sum())
                };
                let grad = |v: &[f64; 8]| -> [f64; 3] {
                    std::array::from_fn(|d| (0..8).map(|a| grads[a][d] * v[a]).sum())
                };
                let eu = strain(&ue);
                let et = strain(&te);
                sym_outer6(&eu, &et, lambda_phi * w, &mut ga);

                // tensor strain of θ̃ against δB
                let p: f64 = (0..8).map(|a| n[a] * pe[a]).sum();
                let s = -lambda_phi * w * p;
                gb[0] += s * et[0];
                gb[3] += s * et[1];
                gb[5] += s * et[2];
                gb[4] += s * 0.5 * et[3];
                gb[2] += s * 0.5 * et[4];
                gb[1] += s * 0.5 * et[5];

                let gp = grad(&pe);
                sym_outer3(&gp, &grad(&q1), lambda_phi * w, &mut gk);
                sym_outer3(&gp, &grad(&q2), lambda_psi * w, &mut gk);
                sym_outer3(&grad(&lt), &gp, -lambda_psi * w, &mut gk);
            }
            ElementSensitivity {
                a: SymTensor4::from_upper(ga),
                b: SymMatrix3::from_upper(gb),
                k: SymMatrix3::from_upper(gk),
            }
        })
        .collect()
}

/// Physical cost `Λ_Φ Φ + Λ_Ψ Ψ`.
pub fn physical_cost(state: &MacroState, lambda_phi: f64, lambda_psi: f64) -> f64 {
    lambda_phi * state.compliance + lambda_psi * state.flux
}

/// Solves state and adjoints and returns the sensitivities.
pub fn evaluate(
    problem: &MacroProblem,
    mats: &[ElementMaterial],
    lambda_phi: f64,
    lambda_psi: f64,
) -> Result<(MacroState, AdjointBundle, Vec<ElementSensitivity>)> {
    let state = problem.solve_state(mats)?;
    let bundle = solve_adjoints(problem, mats, &state)?;
    let sens = element_sensitivities(problem, &state, &bundle, lambda_phi, lambda_psi);
    Ok((state, bundle, sens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macrofem::{BoundarySpec, Face, MeshSpec, Patch};
    use crate::tensors::Frobenius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_problem() -> MacroProblem {
        let spec = BoundarySpec {
            clamped: vec![Patch::whole(Face::XMin)],
            traction_patches: vec![Patch::band(Face::YMax, 0, Some(2.0), None)],
            traction: [0.0, -1.0, 0.3],
            inflow: vec![Patch::band(Face::YMax, 0, None, Some(1.0))],
            p_inflow: 1.0,
            outflow: vec![Patch::band(Face::YMin, 0, Some(2.0), None)],
            p_outflow: 0.5,
        };
        MacroProblem::new(
            MeshSpec {
                nx: 3,
                ny: 2,
                nz: 1,
                h: [1.0; 3],
            },
            spec,
        )
        .unwrap()
    }

    fn random_materials(rng: &mut ChaCha8Rng, n: usize) -> Vec<ElementMaterial> {
        (0..n)
            .map(|_| {
                let g = nalgebra::Matrix6::from_fn(|_, _| rng.random_range(-0.5..0.5));
                let a = SymTensor4::from_matrix(
                    &(g.transpose() * g + nalgebra::Matrix6::identity() * 2.0),
                );
                let g3 = nalgebra::Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
                let b = SymMatrix3::from_matrix(
                    &(g3.transpose() * g3 + nalgebra::Matrix3::identity() * 0.4),
                );
                let g3 = nalgebra::Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
                let k = SymMatrix3::from_matrix(
                    &(g3.transpose() * g3 + nalgebra::Matrix3::identity() * 0.2),
                );
                ElementMaterial { a, b, k }
            })
            .collect()
    }

    #[test]
    fn zero_load_and_equal_pressures_leave_only_q2() {
        let mut p = small_problem();
        p.boundary.load.iter_mut().for_each(|v| *v = 0.0);
        p.boundary.pbar.iter_mut().for_each(|v| {
            if *v != 0.0 {
                *v = 0.8
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mats = random_materials(&mut rng, p.num_elements());
        let (state, bundle, sens) = evaluate(&p, &mats, 1.0, -2.0).unwrap();
        assert!(bundle.theta.iter().all(|v| *v == 0.0));
        assert!(bundle.q1.iter().all(|v| *v == 0.0));
        assert!(bundle.q2.iter().any(|v| v.abs() > 1e-6));
        assert!(state.flux.abs() < 1e-12);
        assert!(sens
            .iter()
            .all(|s| s.a.max_abs() == 0.0 && s.b.max_abs() == 0.0));
    }

    #[test]
    fn sensitivities_are_linear_in_the_weights() {
        let p = small_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mats = random_materials(&mut rng, p.num_elements());
        let (state, bundle, _) = evaluate(&p, &mats, 1.0, 0.0).unwrap();
        let s_phi = element_sensitivities(&p, &state, &bundle, 1.0, 0.0);
        let s_psi = element_sensitivities(&p, &state, &bundle, 0.0, 1.0);
        let s = element_sensitivities(&p, &state, &bundle, 2.0, -3.0);
        for e in 0..s.len() {
            let comb = s_phi[e].k.scale(2.0).add(&s_psi[e].k.scale(-3.0));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((comb.get(i, j) - s[e].k.get(i, j)).abs() < 1e-12);
                }
            }
            assert!(s_psi[e].a.max_abs() == 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = small_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mats = random_materials(&mut rng, p.num_elements());
        let (lp, ls) = (1.0, -4.0);
        let (_, _, sens) = evaluate(&p, &mats, lp, ls).unwrap();
        let cost = |m: &[ElementMaterial]| physical_cost(&p.solve_state(m).unwrap(), lp, ls);
        let eps = 1e-5;
        for e in [0, 4] {
            let da = SymTensor4::from_matrix(
                &nalgebra::Matrix6::from_fn(|i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0)
                    .symmetric_part(),
            );
            let db = SymMatrix3::from_upper([0.3, -0.2, 0.1, 0.5, 0.7, -0.4]);
            let dk = SymMatrix3::from_upper([0.2, 0.1, -0.3, 0.4, 0.05, 0.6]);
            let mut plus = mats.clone();
            let mut minus = mats.clone();
            plus[e].a = mats[e].a.add(&da.scale(eps));
            minus[e].a = mats[e].a.add(&da.scale(-eps));
            let fd = (cost(&plus) - cost(&minus)) / (2.0 * eps);
            let an = sens[e].a.frobenius(&da);
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
                "A: {fd} vs {an}"
            );

            let mut plus = mats.clone();
            let mut minus = mats.clone();
            plus[e].b = mats[e].b.add(&db.scale(eps));
            minus[e].b = mats[e].b.add(&db.scale(-eps));
            let fd = (cost(&plus) - cost(&minus)) / (2.0 * eps);
            let an = sens[e].b.frobenius(&db);
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
                "B: {fd} vs {an}"
            );

            let mut plus = mats.clone();
            let mut minus = mats.clone();
            plus[e].k = mats[e].k.add(&dk.scale(eps));
            minus[e].k = mats[e].k.add(&dk.scale(-eps));
            let fd = (cost(&plus) - cost(&minus)) / (2.0 * eps);
            let an = sens[e].k.frobenius(&dk);
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
                "K: {fd} vs {an}"
            );
        }
    }
}
