//! Periodic Stokes flow in the pore phase on a staggered voxel grid.
//!
//! Pressure lives on fluid voxels. The velocity component `d` lives on the
//! face between voxel `c` and `c + e_d` (stored at index `c`) and is an
//! unknown only when both voxels are fluid; all other faces carry zero
//! normal velocity. Tangential no-slip uses a mirrored ghost value at the
//! wall half a voxel away. All equations are scaled by the voxel volume so
//! that the saddle-point system
//!
//! ```text
//! [ A  G ] [u]   [f]
//! [ Gᵀ 0 ] [p] = [0]
//! ```
//!
//! is symmetric, with `uᵀ A u` the discrete viscous dissipation.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::linalg::{dot, minres, CgReport};
use crate::micro::elastic::SolverOptions;
use crate::micro::geometry::VoxelGrid;
use crate::micro::stencil::{slot, BlockStencil, Multigrid, DIAG_SLOT};
use crate::tensors::SymMatrix3;

/// Velocity and pressure of one unit-forcing solve.
#[derive(Clone, Debug)]
pub struct StokesField {
    /// `velocity[d][c]`: component `d` on the `+d` face of voxel `c`.
    pub velocity: [Vec<f64>; 3],
    pub pressure: Vec<f64>,
    pub report: CgReport,
}

#[derive(Clone, Debug)]
pub struct PermeabilityResult {
    pub k: SymMatrix3,
    /// Dissipation `ψ^jᵀ A ψ^j` per forcing direction.
    pub dissipation: [f64; 3],
    /// Largest discrete divergence relative to the velocity scale.
    pub divergence_residual: f64,
    pub fields: Vec<StokesField>,
}

pub struct StokesProblem<'g> {
    grid: &'g VoxelGrid,
    h: f64,
    face_active: [Vec<bool>; 3],
    momentum: [Multigrid<1>; 3],
}

impl<'g> StokesProblem<'g> {
    pub fn new(grid: &'g VoxelGrid) -> Result<Self> {
        if grid.fluid_count() == 0 {
            return Err(Error::NoFluidPhase);
        }
        let n = grid.resolution();
        let h = 1.0 / n as f64;
        let face_active: [Vec<bool>; 3] = std::array::from_fn(|d| {
            (0..grid.len())
                .map(|c| !grid.is_solid(c) && !grid.is_solid(grid.neighbor(c, d, true)))
                .collect()
        });
        let momentum = std::array::from_fn(|d| {
            let mut op = BlockStencil::<1>::zeros(n);
            for c in (0..grid.len()).filter(|&c| face_active[d][c]) {
                let mut diag = 0.0;
                for m in 0..3 {
                    for forward in [false, true] {
                        let nb = grid.neighbor(c, m, forward);
                        if face_active[d][nb] {
                            diag += h;
                            let step = if forward { 1 } else { -1 };
                            let mut off = [0i64; 3];
                            off[m] = step;
                            op.block_mut(c, slot(off[0], off[1], off[2]))[0] -= h;
                        } else if m == d {
                            diag += h;
                        } else {
                            diag += 2.0 * h;
                        }
                    }
                }
                op.block_mut(c, DIAG_SLOT)[0] += diag;
            }
            let active = op.pin_inactive();
            Multigrid::new(op, active)
        });
        Ok(Self {
            grid,
            h,
            face_active,
            momentum,
        })
    }

    /// `(G p)_d` on every face: `h² (p_{c+e_d} − p_c)` on active faces.
    fn gradient(&self, p: &[f64], out: &mut [Vec<f64>; 3]) {
        let h2 = self.h * self.h;
        for d in 0..3 {
            for c in 0..self.grid.len() {
                out[d][c] = if self.face_active[d][c] {
                    h2 * (p[self.grid.neighbor(c, d, true)] - p[c])
                } else {
                    0.0
                };
            }
        }
    }

    /// `Gᵀ u` on voxels.
    fn gradient_transpose(&self, u: &[Vec<f64>; 3], out: &mut [f64]) {
        let h2 = self.h * self.h;
        out.iter_mut().for_each(|v| *v = 0.0);
        for d in 0..3 {
            for c in (0..self.grid.len()).filter(|&c| self.face_active[d][c]) {
                let v = h2 * u[d][c];
                out[self.grid.neighbor(c, d, true)] += v;
                out[c] -= v;
            }
        }
    }

    /// Unit body force along `dir`, solved as one saddle-point system by
    /// MINRES with a block preconditioner: a multigrid V-cycle per velocity
    /// component and the scaled identity on fluid pressures.
    pub fn solve_direction(&self, dir: usize, opts: &SolverOptions) -> Result<StokesField> {
        let nc = self.grid.len();
        let h3 = self.h.powi(3);
        let mut b = vec![0.0; 4 * nc];
        for c in (0..nc).filter(|&c| self.face_active[dir][c]) {
            b[dir * nc + c] = h3;
        }
        let scratch: RefCell<([Vec<f64>; 3], [Vec<f64>; 3])> = RefCell::new((
            std::array::from_fn(|_| vec![0.0; nc]),
            std::array::from_fn(|_| vec![0.0; nc]),
        ));
        let apply = |x: &[f64], y: &mut [f64]| {
            let mut s = scratch.borrow_mut();
            let (gp, u) = &mut *s;
            self.gradient(&x[3 * nc..], gp);
            for d in 0..3 {
                u[d].copy_from_slice(&x[d * nc..(d + 1) * nc]);
                self.momentum[d]
                    .fine()
                    .apply(&u[d], &mut y[d * nc..(d + 1) * nc]);
                for c in 0..nc {
                    y[d * nc + c] += gp[d][c];
                }
            }
            self.gradient_transpose(u, &mut y[3 * nc..]);
        };
        let inv_h3 = 1.0 / h3;
        let precond = |r: &[f64], z: &mut [f64]| {
            for d in 0..3 {
                self.momentum[d]
                    .precondition(&r[d * nc..(d + 1) * nc], &mut z[d * nc..(d + 1) * nc]);
            }
            for c in 0..nc {
                z[3 * nc + c] = if self.grid.is_solid(c) {
                    0.0
                } else {
                    r[3 * nc + c] * inv_h3
                };
            }
        };
        let mut x = vec![0.0; 4 * nc];
        let report = minres(apply, precond, &b, &mut x, opts.rel_tol, 4 * opts.max_iter)?;
        let mut p = x.split_off(3 * nc);
        let velocity: [Vec<f64>; 3] = std::array::from_fn(|d| x[d * nc..(d + 1) * nc].to_vec());
        let fluid_n = self.grid.fluid_count() as f64;
        let mean = (0..nc)
            .filter(|&c| !self.grid.is_solid(c))
            .map(|c| p[c])
            .sum::<f64>()
            / fluid_n;
        for c in 0..nc {
            p[c] = if self.grid.is_solid(c) {
                0.0
            } else {
                p[c] - mean
            };
        }
        Ok(StokesField {
            velocity,
            pressure: p,
            report,
        })
    }

    fn dissipation(&self, u: &[Vec<f64>; 3]) -> f64 {
        let mut total = 0.0;
        let mut y = vec![0.0; self.grid.len()];
        for d in 0..3 {
            self.momentum[d].fine().apply(&u[d], &mut y);
            total += dot(&u[d], &y);
        }
        total
    }

    /// Permeability `K_ij = ⟨ψ^j_i⟩` from three unit-forcing solves.
    pub fn permeability(&self, opts: &SolverOptions) -> Result<PermeabilityResult> {
        let fields: Vec<StokesField> = (0..3)
            .map(|j| self.solve_direction(j, opts))
            .collect::<Result<_>>()?;
        let h3 = self.h.powi(3);
        let mut m = [[0.0; 3]; 3];
        for (j, fj) in fields.iter().enumerate() {
            for (i, row) in m.iter_mut().enumerate() {
                row[j] = fj.velocity[i].iter().sum::<f64>() * h3;
            }
        }
        let k = SymMatrix3::from_matrix(&nalgebra::Matrix3::from_fn(|i, j| {
            0.5 * (m[i][j] + m[j][i])
        }));
        let dissipation = std::array::from_fn(|j| self.dissipation(&fields[j].velocity));
        let mut div = vec![0.0; self.grid.len()];
        let vmax = fields
            .iter()
            .flat_map(|f| f.velocity.iter().flatten())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut dmax: f64 = 0.0;
        for fj in &fields {
            self.gradient_transpose(&fj.velocity, &mut div);
            dmax = div.iter().fold(dmax, |a, &b| a.max(b.abs()));
        }
        let worst = if vmax > 0.0 {
            dmax / (self.h * self.h * vmax)
        } else {
            0.0
        };
        Ok(PermeabilityResult {
            k,
            dissipation,
            divergence_residual: worst,
            fields,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Square duct of side `w` voxels along x through an `n³` cell.
    fn duct(n: usize, w: usize) -> VoxelGrid {
        let mut mask = vec![true; n * n * n];
        for k in 0..w {
            for j in 0..w {
                for i in 0..n {
                    mask[i + n * (j + n * k)] = false;
                }
            }
        }
        VoxelGrid::from_mask(n, mask).unwrap()
    }

    #[test]
    fn duct_flow_is_axial_and_divergence_free() {
        let g = duct(8, 4);
        let sp = StokesProblem::new(&g).unwrap();
        let r = sp.permeability(&SolverOptions::default()).unwrap();
        assert!(r.k.get(0, 0) > 0.0);
        assert!(r.k.get(1, 1).abs() < 1e-12 && r.k.get(2, 2).abs() < 1e-12);
        assert!(r.divergence_residual < 1e-8);
        assert!((r.dissipation[0] - r.k.get(0, 0)).abs() <= 1e-8 * r.k.get(0, 0));
    }

    #[test]
    fn slit_matches_discrete_poiseuille() {
        // planar channel of width w voxels; discrete profile is the exact
        // solution of the 1-D second-difference equation with half-cell walls
        let n = 8;
        let w = 4;
        let mut mask = vec![true; n * n * n];
        for k in 0..w {
            for j in 0..n {
                for i in 0..n {
                    mask[i + n * (j + n * k)] = false;
                }
            }
        }
        let g = VoxelGrid::from_mask(n, mask).unwrap();
        let h = 1.0 / n as f64;
        let sp = StokesProblem::new(&g).unwrap();
        let field = sp.solve_direction(0, &SolverOptions::default()).unwrap();
        // tridiagonal: (2 + wall) u_k − u_{k±1} = h², wall term 1 extra at ends
        let mut a = nalgebra::DMatrix::zeros(w, w);
        for k in 0..w {
            a[(k, k)] = 2.0;
            if k > 0 {
                a[(k, k - 1)] = -1.0;
            }
            if k + 1 < w {
                a[(k, k + 1)] = -1.0;
            }
        }
        a[(0, 0)] += 1.0;
        a[(w - 1, w - 1)] += 1.0;
        let b = nalgebra::DVector::from_element(w, h * h);
        let prof = a.lu().solve(&b).unwrap();
        for k in 0..w {
            let u = field.velocity[0][n * n * k];
            assert!((u - prof[k]).abs() < 1e-10, "layer {k}: {u} vs {}", prof[k]);
        }
    }

    #[test]
    fn closed_pore_has_no_flow() {
        let n = 8;
        let mut mask = vec![true; n * n * n];
        for k in 2..6 {
            for j in 2..6 {
                for i in 2..6 {
                    mask[i + n * (j + n * k)] = false;
                }
            }
        }
        let g = VoxelGrid::from_mask(n, mask).unwrap();
        let r = StokesProblem::new(&g)
            .unwrap()
            .permeability(&SolverOptions::default())
            .unwrap();
        assert!(r.k.max_abs() <= 1e-12);
    }

    #[test]
    fn no_fluid_is_an_error() {
        assert!(matches!(
            StokesProblem::new(&VoxelGrid::all_solid(8)),
            Err(Error::NoFluidPhase)
        ));
    }
}
