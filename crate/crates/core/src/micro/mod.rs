//! Offline phase: periodic cell problems on voxelized unit cells and the
//! effective Biot coefficients they define.

pub mod elastic;
pub mod geometry;
pub mod stencil;
pub mod stokes;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensors::{Mat6, SymMatrix3, SymTensor4};
use elastic::{SolidProblem, SolverOptions};
use geometry::VoxelGrid;
use stokes::StokesProblem;

pub use elastic::SolverOptions as CellSolverOptions;
pub use geometry::{voxelize, BaseMaterial, CellType, UnitCellGeometry};

/// Effective coefficients of one unit cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedCoefficients {
    pub a: SymTensor4,
    pub c: SymMatrix3,
    pub n: f64,
    pub k: SymMatrix3,
    pub porosity: f64,
    pub b: SymMatrix3,
    pub m: f64,
    pub a_undrained: SymTensor4,
}

/// Consistency measures of a homogenization run.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// Relative gap between the divergence and energy forms of `C`.
    pub c_dual_gap: f64,
    /// Relative gap between the energy and surface forms of `N`.
    pub n_dual_gap: f64,
    /// Relative gap between velocity-average and dissipation forms of `K_ii`.
    pub k_dual_gap: f64,
    pub divergence_residual: f64,
    pub elastic_iterations: Vec<usize>,
    pub stokes_iterations: Vec<usize>,
    pub fluid_percolates: bool,
}

/// The strain and pressure correctors on the solid phase.
pub struct ElasticCorrectors {
    pub omega: Vec<Vec<f64>>,
    pub omega_p: Vec<f64>,
    pub iterations: Vec<usize>,
}

fn rel_gap(a: f64, b: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

pub fn solve_elastic_correctors(
    problem: &SolidProblem<'_>,
    opts: &SolverOptions,
) -> Result<ElasticCorrectors> {
    problem.grid().check_solid_percolation()?;
    let scale = problem.load_scale();
    let mut omega = Vec::with_capacity(6);
    let mut iterations = Vec::with_capacity(7);
    for i in 0..6 {
        let (w, rep) = problem.solve(&problem.strain_load(i), scale, opts)?;
        iterations.push(rep.iterations);
        omega.push(w);
    }
    let (omega_p, rep) = problem.solve(
        &problem.interface_load(),
        scale * problem.grid().resolution() as f64,
        opts,
    )?;
    iterations.push(rep.iterations);
    Ok(ElasticCorrectors {
        omega,
        omega_p,
        iterations,
    })
}

/// Homogenizes a voxel cell with base stiffness `d` and fluid
/// compressibility `gamma`.
pub fn homogenize_grid(
    grid: &VoxelGrid,
    d: &SymTensor4,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<(HomogenizedCoefficients, Diagnostics)> {
    let problem = SolidProblem::new(grid, &d.to_matrix());
    let corr = solve_elastic_correctors(&problem, opts)?;
    let ke = problem.element_stiffness();
    let dv = problem.divergence_weights();
    let pis: Vec<[f64; 24]> = (0..6).map(|i| problem.macro_strain_field(i)).collect();

    let mut a = Mat6::zeros();
    let mut c_div = [0.0; 6];
    let mut c_energy = [0.0; 6];
    let mut n_energy = 0.0;
    for e in (0..grid.len()).filter(|&e| grid.is_solid(e)) {
        let mut w = [[0.0; 24]; 6];
        for i in 0..6 {
            let om = problem.gather(&corr.omega[i], e);
            for r in 0..24 {
                w[i][r] = om[r] + pis[i][r];
            }
            c_div[i] -= (0..24).map(|r| dv[r] * om[r]).sum::<f64>();
        }
        let wp = problem.gather(&corr.omega_p, e);
        let mut kwp = [0.0; 24];
        for r in 0..24 {
            kwp[r] = (0..24).map(|c| ke[r * 24 + c] * wp[c]).sum();
        }
        n_energy += (0..24).map(|r| wp[r] * kwp[r]).sum::<f64>();
        for i in 0..6 {
            c_energy[i] += (0..24).map(|r| pis[i][r] * kwp[r]).sum::<f64>();
        }
        for j in 0..6 {
            let mut kw = [0.0; 24];
            for r in 0..24 {
                kw[r] = (0..24).map(|c| ke[r * 24 + c] * w[j][c]).sum();
            }
            for i in 0..=j {
                a[(i, j)] += (0..24).map(|r| w[i][r] * kw[r]).sum::<f64>();
            }
        }
    }
    for j in 0..6 {
        for i in 0..j {
            a[(j, i)] = a[(i, j)];
        }
    }
    let a = SymTensor4::from_matrix(&a);
    let fp = problem.interface_load();
    let n_surface: f64 = fp.iter().zip(&corr.omega_p).map(|(f, w)| f * w).sum();

    let porosity = grid.porosity();
    let (k, k_gap, div_res, stokes_iters, percolates) = if grid.fluid_count() == 0 {
        (SymMatrix3::zeros(), 0.0, 0.0, Vec::new(), false)
    } else {
        let sp = StokesProblem::new(grid)?;
        let perm = sp.permeability(opts)?;
        let kscale = perm.k.max_abs();
        let gap = (0..3)
            .map(|i| rel_gap(perm.k.get(i, i), perm.dissipation[i], kscale))
            .fold(0.0, f64::max);
        let iters = perm.fields.iter().map(|f| f.report.iterations).collect();
        let percolates = grid.phase_connectivity(false).percolates();
        if !percolates {
            log::debug!(
                "fluid phase does not percolate; permeability {:.3e}",
                kscale
            );
        }
        (perm.k, gap, perm.divergence_residual, iters, percolates)
    };

    let c_scale = c_div
        .iter()
        .chain(&c_energy)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let c_gap = (0..6)
        .map(|i| rel_gap(c_div[i], c_energy[i], c_scale))
        .fold(0.0, f64::max);
    let c = SymMatrix3::from_voigt(&c_div);
    let b = c.add(&SymMatrix3::identity().scale(porosity));
    let m = n_energy + porosity * gamma;
    let bv = b.to_voigt();
    let mut a_undrained = a;
    if m > 0.0 {
        let mut au = a.to_matrix();
        for i in 0..6 {
            for j in 0..6 {
                au[(i, j)] += bv[i] * bv[j] / m;
            }
        }
        a_undrained = SymTensor4::from_matrix(&au);
    }
    let diag = Diagnostics {
        c_dual_gap: c_gap,
        n_dual_gap: rel_gap(n_energy, n_surface, n_energy.abs().max(n_surface.abs())),
        k_dual_gap: k_gap,
        divergence_residual: div_res,
        elastic_iterations: corr.iterations,
        stokes_iterations: stokes_iters,
        fluid_percolates: percolates,
    };
    let coeffs = HomogenizedCoefficients {
        a,
        c,
        n: n_energy,
        k,
        porosity,
        b,
        m,
        a_undrained,
    };
    Ok((coeffs, diag))
}

/// Voxelizes and homogenizes a parameterized cell.
pub fn homogenize(
    geom: &UnitCellGeometry,
    resolution: usize,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<(HomogenizedCoefficients, Diagnostics)> {
    let grid = voxelize(geom, resolution)?;
    homogenize_grid(&grid, &geom.base.stiffness(), gamma, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_pore_cell_recovers_base_material() {
        let d = SymTensor4::isotropic(3.9, 0.34);
        let grid = VoxelGrid::all_solid(8);
        let (h, diag) = homogenize_grid(&grid, &d, 0.0, &SolverOptions::default()).unwrap();
        let rel = h.a.sub(&d).max_abs() / d.max_abs();
        assert!(rel <= 1e-8, "{rel}");
        assert!(h.c.is_zero() && h.k.is_zero());
        assert_eq!(h.n, 0.0);
        assert_eq!(h.porosity, 0.0);
        assert_eq!(h.a_undrained, h.a);
        assert!(diag.elastic_iterations.iter().all(|&i| i == 0));
    }

    #[test]
    fn sphere_void_coefficients_are_consistent() {
        let geom = UnitCellGeometry::new(CellType::SphereVoid, vec![0.3], BaseMaterial::default())
            .unwrap();
        let (h, diag) = homogenize(&geom, 12, 0.0, &SolverOptions::default()).unwrap();
        assert!(h.a.is_spd());
        assert!(h.n > 0.0);
        assert!(diag.c_dual_gap <= 1e-6, "{}", diag.c_dual_gap);
        assert!(diag.n_dual_gap <= 1e-6, "{}", diag.n_dual_gap);
        assert!(h.k.max_abs() <= 1e-8);
        assert!(!diag.fluid_percolates);
        let bb = h.b.upper();
        let cc = h.c.upper();
        for i in [0, 3, 5] {
            assert_eq!(bb[i], cc[i] + h.porosity);
        }
        for i in [1, 2, 4] {
            assert_eq!(bb[i], cc[i]);
        }
    }

    #[test]
    fn correctors_are_invariant_under_stiffness_scaling() {
        let geom =
            UnitCellGeometry::new(CellType::Cross3D, vec![0.15, 0.2], BaseMaterial::default())
                .unwrap();
        let grid = voxelize(&geom, 8).unwrap();
        let d = SymTensor4::isotropic(3.9, 0.34);
        let opts = SolverOptions {
            rel_tol: 1e-12,
            max_iter: 2000,
        };
        let p1 = SolidProblem::new(&grid, &d.to_matrix());
        let p2 = SolidProblem::new(&grid, &d.scale(7.5).to_matrix());
        let c1 = solve_elastic_correctors(&p1, &opts).unwrap();
        let c2 = solve_elastic_correctors(&p2, &opts).unwrap();
        for i in 0..6 {
            let scale = c1.omega[i].iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let diff = c1.omega[i]
                .iter()
                .zip(&c2.omega[i])
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(diff <= 1e-8 * scale.max(1e-300), "{i}: {diff}");
        }
    }
}
