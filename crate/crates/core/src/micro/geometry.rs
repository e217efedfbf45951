//! Parameterized unit-cell geometries and their voxelization.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tensors::SymTensor4;

/// Fixed radius of the z-channel of a [`CellType::Cross3D`] cell.
pub const CROSS_RZ: f64 = 0.15;
/// Fixed radius of the central sphere of a [`CellType::Cross3D`] cell.
pub const CROSS_SPHERE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellType {
    /// Three orthogonal cylindrical channels joined by a central sphere.
    /// Parameters `(r_x, r_y)`: `r_x` is the radius of the channel whose
    /// axis is the x-axis.
    Cross3D,
    /// A single closed spherical void of radius `r_s`.
    SphereVoid,
}

impl CellType {
    /// One-based index used in files and reports.
    pub fn index(self) -> usize {
        match self {
            CellType::Cross3D => 1,
            CellType::SphereVoid => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(CellType::Cross3D),
            2 => Ok(CellType::SphereVoid),
            _ => Err(Error::InvalidParams(format!("unknown cell type index {i}"))),
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            CellType::Cross3D => 2,
            CellType::SphereVoid => 1,
        }
    }

    /// Parameter box `(lower, upper)`.
    pub fn bounds(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            CellType::Cross3D => (vec![0.08, 0.08], vec![0.22, 0.22]),
            CellType::SphereVoid => (vec![0.1], vec![0.4]),
        }
    }

    pub fn check_params(self, alpha: &[f64]) -> Result<()> {
        let (lo, hi) = self.bounds();
        if alpha.len() != lo.len() {
            return Err(Error::InvalidParams(format!(
                "{:?} expects {} parameters, got {}",
                self,
                lo.len(),
                alpha.len()
            )));
        }
        let tol = 1e-12;
        for (k, &a) in alpha.iter().enumerate() {
            if !(a >= lo[k] - tol && a <= hi[k] + tol) {
                return Err(Error::InvalidParams(format!(
                    "parameter {k} = {a} outside [{}, {}] for {:?}",
                    lo[k], hi[k], self
                )));
            }
        }
        Ok(())
    }
}

/// Isotropic base material of the solid skeleton.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseMaterial {
    pub young: f64,
    pub poisson: f64,
}

impl Default for BaseMaterial {
    fn default() -> Self {
        Self {
            young: 3.9,
            poisson: 0.34,
        }
    }
}

impl BaseMaterial {
    pub fn stiffness(&self) -> SymTensor4 {
        SymTensor4::isotropic(self.young, self.poisson)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitCellGeometry {
    pub cell_type: CellType,
    pub params: Vec<f64>,
    pub base: BaseMaterial,
}

impl UnitCellGeometry {
    pub fn new(cell_type: CellType, params: Vec<f64>, base: BaseMaterial) -> Result<Self> {
        cell_type.check_params(&params)?;
        Ok(Self {
            cell_type,
            params,
            base,
        })
    }

    /// Whether the point `x` (unit-cube coordinates) lies in the pore set.
    pub fn is_fluid(&self, x: [f64; 3]) -> bool {
        let d = [x[0] - 0.5, x[1] - 0.5, x[2] - 0.5];
        let sq = [d[0] * d[0], d[1] * d[1], d[2] * d[2]];
        match self.cell_type {
            CellType::Cross3D => {
                let (rx, ry) = (self.params[0], self.params[1]);
                sq[1] + sq[2] < rx * rx
                    || sq[0] + sq[2] < ry * ry
                    || sq[0] + sq[1] < CROSS_RZ * CROSS_RZ
                    || sq[0] + sq[1] + sq[2] < CROSS_SPHERE * CROSS_SPHERE
            }
            CellType::SphereVoid => {
                let r = self.params[0];
                sq[0] + sq[1] + sq[2] < r * r
            }
        }
    }
}

/// Periodic voxel grid; voxel `(i, j, k)` has linear index `i + n(j + nk)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    n: usize,
    solid: Vec<bool>,
}

impl VoxelGrid {
    pub fn from_mask(n: usize, solid: Vec<bool>) -> Result<Self> {
        if n < 2 || solid.len() != n * n * n {
            return Err(Error::InvalidParams(format!(
                "mask of length {} is not {n}³",
                solid.len()
            )));
        }
        if !solid.iter().any(|&s| s) {
            return Err(Error::InvalidParams("voxel grid has no solid voxel".into()));
        }
        Ok(Self { n, solid })
    }

    pub fn all_solid(n: usize) -> Self {
        Self {
            n,
            solid: vec![true; n * n * n],
        }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.solid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solid.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        [
            idx % self.n,
            (idx / self.n) % self.n,
            idx / (self.n * self.n),
        ]
    }

    #[inline]
    pub fn is_solid(&self, idx: usize) -> bool {
        self.solid[idx]
    }

    pub fn mask(&self) -> &[bool] {
        &self.solid
    }

    pub fn fluid_count(&self) -> usize {
        self.solid.iter().filter(|&&s| !s).count()
    }

    pub fn porosity(&self) -> f64 {
        self.fluid_count() as f64 / self.solid.len() as f64
    }

    pub fn solid_fraction(&self) -> f64 {
        1.0 - self.porosity()
    }

    /// Periodic neighbour of voxel `idx` shifted by `±1` along `axis`.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> usize {
        let mut c = self.coords(idx);
        c[axis] = if forward {
            (c[axis] + 1) % self.n
        } else {
            (c[axis] + self.n - 1) % self.n
        };
        self.index(c[0], c[1], c[2])
    }

    /// Connected components of the phase selected by `solid` under
    /// face adjacency, and for each component the set of axes along which it
    /// wraps around the periodic cell.
    pub fn phase_connectivity(&self, solid: bool) -> PhaseConnectivity {
        let n = self.n as i64;
        let total = self.solid.len();
        let mut label = vec![usize::MAX; total];
        let mut shift = vec![[0i64; 3]; total];
        let mut components = 0;
        let mut percolating = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..total {
            if self.solid[start] != solid || label[start] != usize::MAX {
                continue;
            }
            let comp = components;
            components += 1;
            let mut wraps = [false; 3];
            label[start] = comp;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                let c = self.coords(v);
                for axis in 0..3 {
                    for step in [-1i64, 1] {
                        let raw = c[axis] as i64 + step;
                        let wrapped = raw.rem_euclid(n);
                        let crossing = (raw - wrapped) / n;
                        let mut nc = c;
                        nc[axis] = wrapped as usize;
                        let w = self.index(nc[0], nc[1], nc[2]);
                        if self.solid[w] != solid {
                            continue;
                        }
                        let mut s = shift[v];
                        s[axis] += crossing;
                        if label[w] == usize::MAX {
                            label[w] = comp;
                            shift[w] = s;
                            queue.push_back(w);
                        } else {
                            for (a, wrap) in wraps.iter_mut().enumerate() {
                                if s[a] != shift[w][a] {
                                    *wrap = true;
                                }
                            }
                        }
                    }
                }
            }
            percolating.push(wraps);
        }
        PhaseConnectivity {
            components,
            wraps: percolating,
        }
    }

    /// Fails unless the solid phase is a single component wrapping along
    /// all three axes.
    pub fn check_solid_percolation(&self) -> Result<()> {
        let pc = self.phase_connectivity(true);
        let wraps = pc.wraps.first().copied().unwrap_or([false; 3]);
        let missing: Vec<usize> = (0..3).filter(|&a| !wraps[a]).collect();
        if pc.components != 1 || !missing.is_empty() {
            return Err(Error::DisconnectedSolid {
                axes: missing,
                components: pc.components,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PhaseConnectivity {
    pub components: usize,
    pub wraps: Vec<[bool; 3]>,
}

impl PhaseConnectivity {
    /// True when some component wraps along every axis.
    pub fn percolates(&self) -> bool {
        self.wraps.iter().any(|w| w.iter().all(|&x| x))
    }
}

/// A voxel is fluid iff its center lies in the pore set.
pub fn voxelize(geom: &UnitCellGeometry, n: usize) -> Result<VoxelGrid> {
    if n < 8 {
        return Err(Error::InvalidParams(format!(
            "resolution {n} below the minimum of 8"
        )));
    }
    geom.cell_type.check_params(&geom.params)?;
    let h = 1.0 / n as f64;
    let mut solid = vec![true; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let x = [
                    (i as f64 + 0.5) * h,
                    (j as f64 + 0.5) * h,
                    (k as f64 + 0.5) * h,
                ];
                solid[i + n * (j + n * k)] = !geom.is_fluid(x);
            }
        }
    }
    VoxelGrid::from_mask(n, solid)
}
