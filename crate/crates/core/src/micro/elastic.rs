//! Periodic voxel elasticity: the six strain correctors and the pressure
//! corrector on the solid phase.

use crate::error::Result;
use crate::hex8;
use crate::linalg::{norm, CgReport};
use crate::micro::geometry::VoxelGrid;
use crate::micro::stencil::{slot, BlockStencil, Multigrid};
use crate::tensors::{Mat6, VOIGT_PAIRS};

/// Solver settings shared by all cell problems.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 2000,
        }
    }
}

/// Assembled periodic stiffness of the solid voxels with its multigrid
/// preconditioner.
pub struct SolidProblem<'g> {
    grid: &'g VoxelGrid,
    h: f64,
    ke: Vec<f64>,
    mg: Multigrid<3>,
}

/// Global node of local node `a` of voxel `e`.
#[inline]
pub fn element_node(n: usize, e: usize, a: usize) -> usize {
    let o = hex8::node_offset(a);
    let (i, j, k) = (e % n, (e / n) % n, e / (n * n));
    (i + o[0]) % n + n * ((j + o[1]) % n + n * ((k + o[2]) % n))
}

impl<'g> SolidProblem<'g> {
    pub fn new(grid: &'g VoxelGrid, d: &Mat6) -> Self {
        let n = grid.resolution();
        let h = 1.0 / n as f64;
        let ke = hex8::stiffness(d, &[h, h, h]);
        let mut op = BlockStencil::<3>::zeros(n);
        for e in (0..grid.len()).filter(|&e| grid.is_solid(e)) {
            for a in 0..8 {
                let oa = hex8::node_offset(a);
                let na = element_node(n, e, a);
                for b in 0..8 {
                    let ob = hex8::node_offset(b);
                    let s = slot(
                        ob[0] as i64 - oa[0] as i64,
                        ob[1] as i64 - oa[1] as i64,
                        ob[2] as i64 - oa[2] as i64,
                    );
                    let blk = op.block_mut(na, s);
                    for r in 0..3 {
                        for c in 0..3 {
                            blk[r * 3 + c] += ke[(3 * a + r) * 24 + 3 * b + c];
                        }
                    }
                }
            }
        }
        let active = op.pin_inactive();
        let mg = Multigrid::new(op, active);
        Self { grid, h, ke, mg }
    }

    pub fn element_stiffness(&self) -> &[f64] {
        &self.ke
    }

    pub fn grid(&self) -> &VoxelGrid {
        self.grid
    }

    /// Nodes touched by at least one solid voxel.
    pub fn active(&self) -> &[bool] {
        self.mg.fine_active()
    }

    pub fn dofs(&self) -> usize {
        3 * self.grid.len()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mg.fine().apply(x, y);
    }

    /// Nodal values of the affine field `Π^I` on one voxel (relative to
    /// its corner), for Voigt slot `I` with unit tensor strain.
    pub fn macro_strain_field(&self, voigt: usize) -> [f64; 24] {
        let (i, j) = VOIGT_PAIRS[voigt];
        let mut u = [0.0; 24];
        for a in 0..8 {
            let o = hex8::node_offset(a);
            let x = [
                o[0] as f64 * self.h,
                o[1] as f64 * self.h,
                o[2] as f64 * self.h,
            ];
            if i == j {
                u[3 * a + i] = x[i];
            } else {
                u[3 * a + i] = 0.5 * x[j];
                u[3 * a + j] = 0.5 * x[i];
            }
        }
        u
    }

    /// Assembled load `−Σ_e kₑ π^I` of the strain corrector `I`.
    pub fn strain_load(&self, voigt: usize) -> Vec<f64> {
        let pi = self.macro_strain_field(voigt);
        let mut fe = [0.0; 24];
        for r in 0..24 {
            fe[r] = -(0..24).map(|c| self.ke[r * 24 + c] * pi[c]).sum::<f64>();
        }
        let n = self.grid.resolution();
        let mut f = vec![0.0; self.dofs()];
        for e in (0..self.grid.len()).filter(|&e| self.grid.is_solid(e)) {
            for a in 0..8 {
                let na = element_node(n, e, a);
                for c in 0..3 {
                    f[3 * na + c] += fe[3 * a + c];
                }
            }
        }
        f
    }

    /// Interface load `∫_Γ v·n dS` with `n` the outward normal of the
    /// solid, assembled face by face over solid–fluid voxel pairs.
    pub fn interface_load(&self) -> Vec<f64> {
        let n = self.grid.resolution();
        let w = self.h * self.h / 4.0;
        let mut f = vec![0.0; self.dofs()];
        for e in (0..self.grid.len()).filter(|&e| self.grid.is_solid(e)) {
            for axis in 0..3 {
                for forward in [false, true] {
                    if self.grid.is_solid(self.grid.neighbor(e, axis, forward)) {
                        continue;
                    }
                    let side = usize::from(forward);
                    let sign = if forward { 1.0 } else { -1.0 };
                    for a in (0..8).filter(|&a| hex8::node_offset(a)[axis] == side) {
                        f[3 * element_node(n, e, a) + axis] += sign * w;
                    }
                }
            }
        }
        f
    }

    /// Element vector of `∫ₑ div v` per local dof.
    pub fn divergence_weights(&self) -> [f64; 24] {
        let mut dv = [0.0; 24];
        let w = self.h * self.h / 4.0;
        for a in 0..8 {
            let o = hex8::node_offset(a);
            for c in 0..3 {
                dv[3 * a + c] = if o[c] == 1 { w } else { -w };
            }
        }
        dv
    }

    /// Solves `K x = f` with the mean displacement of active nodes pinned
    /// to zero. Loads negligible against `scale` give the zero field.
    pub fn solve(
        &self,
        f: &[f64],
        scale: f64,
        opts: &SolverOptions,
    ) -> Result<(Vec<f64>, CgReport)> {
        let mut x = vec![0.0; f.len()];
        if norm(f) <= 1e-13 * scale {
            return Ok((
                x,
                CgReport {
                    iterations: 0,
                    relative_residual: 0.0,
                },
            ));
        }
        let rep = self.mg.solve(f, &mut x, opts.rel_tol, opts.max_iter)?;
        let active = self.mg.fine_active();
        let count = active.iter().filter(|&&a| a).count().max(1) as f64;
        let mut mean = [0.0; 3];
        for (node, _) in active.iter().enumerate().filter(|(_, &a)| a) {
            for c in 0..3 {
                mean[c] += x[3 * node + c];
            }
        }
        for (node, &a) in active.iter().enumerate() {
            for c in 0..3 {
                x[3 * node + c] = if a {
                    x[3 * node + c] - mean[c] / count
                } else {
                    0.0
                };
            }
        }
        Ok((x, rep))
    }

    /// Gathers the 24 element dofs of voxel `e` from a global field.
    #[inline]
    pub fn gather(&self, x: &[f64], e: usize) -> [f64; 24] {
        let n = self.grid.resolution();
        let mut out = [0.0; 24];
        for a in 0..8 {
            let na = element_node(n, e, a);
            out[3 * a..3 * a + 3].copy_from_slice(&x[3 * na..3 * na + 3]);
        }
        out
    }

    /// Reference size of a strain load, used to detect vanishing loads.
    pub fn load_scale(&self) -> f64 {
        let solid = (0..self.grid.len())
            .filter(|&e| self.grid.is_solid(e))
            .count() as f64;
        let kmax = self.ke.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        kmax * self.h * solid.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micro::geometry::{voxelize, BaseMaterial, CellType, UnitCellGeometry};
    use crate::tensors::SymTensor4;

    #[test]
    fn strain_loads_are_self_equilibrated() {
        let g = voxelize(
            &UnitCellGeometry::new(CellType::Cross3D, vec![0.15, 0.2], BaseMaterial::default())
                .unwrap(),
            8,
        )
        .unwrap();
        let d = SymTensor4::isotropic(3.9, 0.34).to_matrix();
        let p = SolidProblem::new(&g, &d);
        for i in 0..6 {
            let f = p.strain_load(i);
            for c in 0..3 {
                let s: f64 = (0..g.len()).map(|node| f[3 * node + c]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
        let fp = p.interface_load();
        for c in 0..3 {
            assert!((0..g.len()).map(|node| fp[3 * node + c]).sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn interface_load_equals_divergence_assembly() {
        let g = voxelize(
            &UnitCellGeometry::new(CellType::SphereVoid, vec![0.3], BaseMaterial::default())
                .unwrap(),
            8,
        )
        .unwrap();
        let d = SymTensor4::isotropic(1.0, 0.3).to_matrix();
        let p = SolidProblem::new(&g, &d);
        let dv = p.divergence_weights();
        let mut f = vec![0.0; p.dofs()];
        for e in (0..g.len()).filter(|&e| g.is_solid(e)) {
            for a in 0..8 {
                let na = element_node(8, e, a);
                for c in 0..3 {
                    f[3 * na + c] += dv[3 * a + c];
                }
            }
        }
        let fp = p.interface_load();
        for (a, b) in f.iter().zip(&fp) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stencil_operator_matches_element_assembly() {
        let g = voxelize(
            &UnitCellGeometry::new(CellType::SphereVoid, vec![0.35], BaseMaterial::default())
                .unwrap(),
            8,
        )
        .unwrap();
        let d = SymTensor4::isotropic(2.0, 0.25).to_matrix();
        let p = SolidProblem::new(&g, &d);
        let x: Vec<f64> = (0..p.dofs())
            .map(|i| {
                if p.active()[i / 3] {
                    ((i * 37) % 11) as f64 * 0.1
                } else {
                    0.0
                }
            })
            .collect();
        let mut y = vec![0.0; p.dofs()];
        p.apply(&x, &mut y);
        let mut y2 = vec![0.0; p.dofs()];
        let ke = p.element_stiffness();
        for e in (0..g.len()).filter(|&e| g.is_solid(e)) {
            let xe = p.gather(&x, e);
            for a in 0..8 {
                let na = element_node(8, e, a);
                for r in 0..3 {
                    y2[3 * na + r] += (0..24)
                        .map(|c| ke[(3 * a + r) * 24 + c] * xe[c])
                        .sum::<f64>();
                }
            }
        }
        for (a, b) in y.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
