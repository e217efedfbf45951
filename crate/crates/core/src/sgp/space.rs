//! Mapping from homogenized coefficients to macroscopic element materials,
//! candidate tables over the design grids, and the per-element design.

use serde::{Deserialize, Serialize};

use crate::catalogue::{
    reg_label, Catalogue, DesignGridSpec, InterpolatedCoefficients, MaterialPoint,
};
use crate::error::{Error, Result};
use crate::macrofem::ElementMaterial;
use crate::micro::CellType;
use crate::tensors::{
    rotate_elasticity_by, rotate_s3_by, spd_inverse, spd_inverse3, voigt_strain_rotation,
    voigt_stress_rotation, z_rotation, Mat3, Mat6, SymMatrix3, SymTensor4,
};

/// How catalogue coefficients become the macroscopic `(A, B, K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialModel {
    /// Factor on the homogenized permeability of channel cells.
    pub permeability_scale: f64,
    /// Isotropic permeability assigned to closed-pore cells.
    pub permeability_floor: f64,
    /// Use the undrained stiffness for closed-pore cells.
    pub undrained_type2: bool,
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            permeability_scale: 1.0,
            permeability_floor: 1e-3,
            undrained_type2: false,
        }
    }
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.permeability_scale > 0.0) || !(self.permeability_floor > 0.0) {
            return Err(Error::Config(
                "permeability scale and floor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Unrotated macroscopic material of a cell.
    pub fn map(&self, t: CellType, alpha: &[f64], c: &InterpolatedCoefficients) -> MaterialPoint {
        let label = reg_label(t, alpha, 0.0);
        match t {
            CellType::Cross3D => MaterialPoint {
                a: c.a,
                b: c.b,
                k: floor_eigenvalues(&c.k.scale(self.permeability_scale), self.permeability_floor),
                rho: c.rho,
                label,
            },
            CellType::SphereVoid => MaterialPoint {
                a: if self.undrained_type2 {
                    c.a_undrained
                } else {
                    c.a
                },
                b: SymMatrix3::zeros(),
                k: SymMatrix3::identity().scale(self.permeability_floor),
                rho: c.rho,
                label,
            },
        }
    }

    /// Material of a cell with parameters `alpha` rotated by `phi` about z.
    pub fn point(
        &self,
        cat: &Catalogue,
        t: CellType,
        alpha: &[f64],
        phi: f64,
    ) -> Result<MaterialPoint> {
        let c = cat.interpolate_coefficients(t, alpha)?;
        if !c.a.is_spd() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: c.a.kelvin_eigenvalues()[0],
            });
        }
        Ok(rotate_point(&self.map(t, alpha, &c), t, alpha, phi))
    }
}

/// Shifts `k` by a multiple of the identity so that its smallest
/// eigenvalue is at least `floor`.
pub fn floor_eigenvalues(k: &SymMatrix3, floor: f64) -> SymMatrix3 {
    let min = k.eigenvalues()[0];
    if min >= floor {
        *k
    } else {
        k.add(&SymMatrix3::identity().scale(floor - min))
    }
}

pub fn rotate_point(p: &MaterialPoint, t: CellType, alpha: &[f64], phi: f64) -> MaterialPoint {
    if phi == 0.0 {
        return MaterialPoint {
            label: reg_label(t, alpha, 0.0),
            ..*p
        };
    }
    MaterialPoint {
        a: rotate_elasticity_by(&p.a, phi),
        b: rotate_s3_by(&p.b, phi),
        k: rotate_s3_by(&p.k, phi),
        rho: p.rho,
        label: reg_label(t, alpha, phi),
    }
}

pub fn element_material(p: &MaterialPoint) -> ElementMaterial {
    ElementMaterial {
        a: p.a,
        b: p.b,
        k: p.k,
    }
}

/// Unrotated grid sample with cached inverses. A missing inverse marks a
/// singular tensor.
#[derive(Clone, Debug)]
pub struct GridPoint {
    pub alpha: Vec<f64>,
    pub point: MaterialPoint,
    pub inv_a: SymTensor4,
    pub inv_b: Option<SymMatrix3>,
    pub inv_k: Option<SymMatrix3>,
}

impl GridPoint {
    pub fn new(alpha: Vec<f64>, point: MaterialPoint) -> Result<Self> {
        let inv_a = spd_inverse(&point.a)?;
        let inv_b = if point.b.is_zero() {
            None
        } else {
            spd_inverse3(&point.b).ok()
        };
        let inv_k = if point.k.is_zero() {
            None
        } else {
            spd_inverse3(&point.k).ok()
        };
        Ok(Self {
            alpha,
            point,
            inv_a,
            inv_b,
            inv_k,
        })
    }
}

/// Rotation operators for one sampled angle.
#[derive(Clone, Debug)]
pub struct AngleOps {
    pub phi: f64,
    /// Stress-form Voigt rotation.
    pub q: Mat6,
    /// Strain-form Voigt rotation.
    pub n: Mat6,
    pub r: Mat3,
}

impl AngleOps {
    pub fn new(phi: f64) -> Self {
        Self {
            phi,
            q: voigt_stress_rotation(phi),
            n: voigt_strain_rotation(phi),
            r: z_rotation(phi),
        }
    }
}

/// Basis size of trigonometric polynomials of degree 4 in the angle.
/// Every angle-dependent model term has at most this degree: Voigt
/// rotations are quadratic in `(cos φ, sin φ)`, 3×3 rotations linear, and
/// the regularization is quadratic in `sin 2φ`.
pub const HARMONICS: usize = 9;

/// `[1, cos φ, sin φ, cos 2φ, sin 2φ, …, sin 4φ]`.
pub fn harmonic_basis(phi: f64) -> [f64; HARMONICS] {
    std::array::from_fn(|h| {
        let m = h.div_ceil(2) as f64;
        match h {
            0 => 1.0,
            _ if h % 2 == 1 => (m * phi).cos(),
            _ => (m * phi).sin(),
        }
    })
}

/// Sample angles at which a degree-4 polynomial is fitted exactly.
pub fn harmonic_samples() -> [f64; HARMONICS] {
    std::array::from_fn(|s| 2.0 * std::f64::consts::PI * s as f64 / HARMONICS as f64)
}

/// `coef_h = Σ_s W[h][s] f(φ_s)` recovers the basis coefficients of `f`.
pub fn harmonic_fit_weights() -> [[f64; HARMONICS]; HARMONICS] {
    let phis = harmonic_samples();
    let n = HARMONICS as f64;
    std::array::from_fn(|h| {
        std::array::from_fn(|s| {
            if h == 0 {
                1.0 / n
            } else {
                2.0 / n * harmonic_basis(phis[s])[h]
            }
        })
    })
}

/// Sampled data for evaluating many angles through harmonic coefficients.
#[derive(Clone, Debug)]
pub struct Harmonics {
    pub samples: Vec<AngleOps>,
    /// Label component `l` at sample `s`: `[l][s][g]`.
    pub labels: Vec<Vec<Vec<f64>>>,
    /// Basis values at each candidate angle.
    pub basis: Vec<[f64; HARMONICS]>,
}

/// Grid data stored by component so that the scan over grid points runs
/// on contiguous slices. Missing inverses are stored as zeros with a zero
/// mask entry.
#[derive(Clone, Debug, Default)]
pub struct Columns {
    pub a: Vec<Vec<f64>>,
    pub inv_a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub inv_b: Vec<Vec<f64>>,
    pub has_inv_b: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub inv_k: Vec<Vec<f64>>,
    pub has_inv_k: Vec<f64>,
    /// `‖A_{g,j}‖²` at `[j][g]`.
    pub norm_sq: Vec<Vec<f64>>,
    /// Label component `l` at `[l][j][g]`.
    pub labels: Vec<Vec<Vec<f64>>>,
}

fn columns<const N: usize>(rows: impl Iterator<Item = [f64; N]>, n: usize) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(n); N];
    for r in rows {
        for (c, v) in cols.iter_mut().zip(r) {
            c.push(v);
        }
    }
    cols
}

/// All candidates of one cell type: grid points × angles.
#[derive(Clone, Debug)]
pub struct TypeCandidates {
    pub cell_type: CellType,
    pub points: Vec<GridPoint>,
    pub angles: Vec<AngleOps>,
    pub cols: Columns,
    /// Present when there are more angles than harmonics.
    pub harmonics: Option<Harmonics>,
}

impl TypeCandidates {
    pub fn new(cell_type: CellType, points: Vec<GridPoint>, angles: &[f64]) -> Self {
        assert!(!angles.is_empty() && !points.is_empty());
        let angles: Vec<AngleOps> = angles.iter().map(|&p| AngleOps::new(p)).collect();
        let n = points.len();
        let zero6 = [0.0; 6];
        let cols = Columns {
            a: columns(points.iter().map(|g| *g.point.a.upper()), n),
            inv_a: columns(points.iter().map(|g| *g.inv_a.upper()), n),
            b: columns(points.iter().map(|g| *g.point.b.upper()), n),
            inv_b: columns(
                points.iter().map(|g| g.inv_b.map_or(zero6, |m| *m.upper())),
                n,
            ),
            has_inv_b: points
                .iter()
                .map(|g| if g.inv_b.is_some() { 1.0 } else { 0.0 })
                .collect(),
            k: columns(points.iter().map(|g| *g.point.k.upper()), n),
            inv_k: columns(
                points.iter().map(|g| g.inv_k.map_or(zero6, |m| *m.upper())),
                n,
            ),
            has_inv_k: points
                .iter()
                .map(|g| if g.inv_k.is_some() { 1.0 } else { 0.0 })
                .collect(),
            norm_sq: angles
                .iter()
                .map(|op| {
                    points
                        .iter()
                        .map(|g| {
                            let a = g.point.a.to_matrix();
                            (op.q * a * op.q.transpose()).norm_squared()
                        })
                        .collect()
                })
                .collect(),
            labels: (0..3)
                .map(|l| {
                    angles
                        .iter()
                        .map(|op| {
                            points
                                .iter()
                                .map(|g| reg_label(cell_type, &g.alpha, op.phi)[l])
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        };
        let harmonics = (angles.len() > HARMONICS).then(|| {
            let samples: Vec<AngleOps> = harmonic_samples()
                .iter()
                .map(|&p| AngleOps::new(p))
                .collect();
            Harmonics {
                labels: (0..3)
                    .map(|l| {
                        samples
                            .iter()
                            .map(|op| {
                                points
                                    .iter()
                                    .map(|g| reg_label(cell_type, &g.alpha, op.phi)[l])
                                    .collect()
                            })
                            .collect()
                    })
                    .collect(),
                basis: angles.iter().map(|op| harmonic_basis(op.phi)).collect(),
                samples,
            }
        });
        Self {
            cell_type,
            points,
            angles,
            cols,
            harmonics,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() * self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn norm_sq(&self, g: usize, j: usize) -> f64 {
        self.cols.norm_sq[j][g]
    }

    pub fn label(&self, g: usize, j: usize) -> [f64; 3] {
        std::array::from_fn(|l| self.cols.labels[l][j][g])
    }

    pub fn point(&self, g: usize, j: usize) -> MaterialPoint {
        let gp = &self.points[g];
        rotate_point(&gp.point, self.cell_type, &gp.alpha, self.angles[j].phi)
    }
}

/// Identifies a candidate: type slot in the design space, grid index and
/// angle index. The derived order is the tie-breaking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidateKey {
    pub slot: usize,
    pub grid: usize,
    pub angle: usize,
}

/// The admissible cell types with their candidate tables, ordered by type
/// index.
#[derive(Clone, Debug)]
pub struct DesignSpace {
    pub types: Vec<TypeCandidates>,
}

impl DesignSpace {
    pub fn new(mut types: Vec<TypeCandidates>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Config("design space has no cell types".into()));
        }
        types.sort_by_key(|t| t.cell_type.index());
        if types.windows(2).any(|w| w[0].cell_type == w[1].cell_type) {
            return Err(Error::Config("duplicate cell type in design space".into()));
        }
        Ok(Self { types })
    }

    /// Candidate tables from a catalogue. `angles = 1` in `grid` disables
    /// rotation.
    pub fn from_catalogue(
        cat: &Catalogue,
        grid: &DesignGridSpec,
        cell_types: &[CellType],
        model: &MaterialModel,
    ) -> Result<Self> {
        let mut types = Vec::new();
        for &t in cell_types {
            let points = grid
                .radii(t)
                .into_iter()
                .map(|alpha| GridPoint::new(alpha.clone(), model.point(cat, t, &alpha, 0.0)?))
                .collect::<Result<Vec<_>>>()?;
            let angles: Vec<f64> = (0..grid.angle_count(t)).map(|j| grid.angle(j)).collect();
            types.push(TypeCandidates::new(t, points, &angles));
        }
        Self::new(types)
    }

    pub fn num_candidates(&self) -> usize {
        self.types.iter().map(|t| t.len()).sum()
    }

    pub fn slot_of(&self, t: CellType) -> Option<usize> {
        self.types.iter().position(|c| c.cell_type == t)
    }

    pub fn candidate(&self, key: CandidateKey) -> ElementDesign {
        let tc = &self.types[key.slot];
        let gp = &tc.points[key.grid];
        ElementDesign {
            cell_type: tc.cell_type,
            alpha: gp.alpha.clone(),
            phi: tc.angles[key.angle].phi,
            key: Some(key),
            point: tc.point(key.grid, key.angle),
        }
    }

    /// Range of solid fractions over all candidates.
    pub fn rho_range(&self) -> (f64, f64) {
        self.types
            .iter()
            .flat_map(|t| t.points.iter().map(|g| g.point.rho))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r), hi.max(r))
            })
    }
}

/// Design of one element. `key` is `None` for designs off the design grid
/// such as an initial guess.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementDesign {
    pub cell_type: CellType,
    pub alpha: Vec<f64>,
    pub phi: f64,
    pub key: Option<CandidateKey>,
    pub point: MaterialPoint,
}

/// Per-element design with cached materials.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignState {
    pub elements: Vec<ElementDesign>,
}

impl DesignState {
    /// Every element gets the same cell, possibly off the design grid.
    pub fn homogeneous(
        cat: &Catalogue,
        model: &MaterialModel,
        n_elements: usize,
        t: CellType,
        alpha: &[f64],
        phi: f64,
    ) -> Result<Self> {
        let point = model.point(cat, t, alpha, phi)?;
        let e = ElementDesign {
            cell_type: t,
            alpha: alpha.to_vec(),
            phi,
            key: None,
            point,
        };
        Ok(Self {
            elements: vec![e; n_elements],
        })
    }

    pub fn from_keys(space: &DesignSpace, keys: &[CandidateKey]) -> Self {
        Self {
            elements: keys.iter().map(|&k| space.candidate(k)).collect(),
        }
    }

    /// Attaches grid keys to elements that coincide with a candidate.
    pub fn snap_keys(&mut self, space: &DesignSpace) {
        for e in &mut self.elements {
            if e.key.is_some() {
                continue;
            }
            let Some(slot) = space.slot_of(e.cell_type) else {
                continue;
            };
            let tc = &space.types[slot];
            let g = tc.points.iter().position(|p| p.alpha == e.alpha);
            let j = tc.angles.iter().position(|a| a.phi == e.phi);
            if let (Some(grid), Some(angle)) = (g, j) {
                e.key = Some(CandidateKey { slot, grid, angle });
            }
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn materials(&self) -> Vec<ElementMaterial> {
        self.elements
            .iter()
            .map(|e| element_material(&e.point))
            .collect()
    }

    pub fn labels(&self) -> Vec<[f64; 3]> {
        self.elements.iter().map(|e| e.point.label).collect()
    }

    pub fn rho_values(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.point.rho).collect()
    }

    /// Mean solid fraction; elements have equal volume.
    pub fn rho_mean(&self) -> f64 {
        self.elements.iter().map(|e| e.point.rho).sum::<f64>() / self.len() as f64
    }

    pub fn keys(&self) -> Vec<Option<CandidateKey>> {
        self.elements.iter().map(|e| e.key).collect()
    }

    /// Same candidate in every element. Off-grid elements never match.
    pub fn same_candidates(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .elements
                .iter()
                .zip(&other.elements)
                .all(|(a, b)| a.key.is_some() && a.key == b.key)
    }

    /// Fraction of elements of cell type `t`.
    pub fn type_fraction(&self, t: CellType) -> f64 {
        self.elements.iter().filter(|e| e.cell_type == t).count() as f64 / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalogue::tests::small_catalogue;
    use crate::tensors::{rotate_compliance, Frobenius};

    #[test]
    fn type2_mapping_is_decoupled_and_floored() {
        let cat = small_catalogue();
        let m = MaterialModel {
            permeability_scale: 50.0,
            ..MaterialModel::default()
        };
        let p = m.point(cat, CellType::SphereVoid, &[0.3], 0.0).unwrap();
        assert!(p.b.is_zero());
        assert_eq!(p.k, SymMatrix3::identity().scale(1e-3));
        assert_eq!(p.label, [-1.0; 3]);
        let gp = GridPoint::new(vec![0.3], p).unwrap();
        assert!(gp.inv_b.is_none());
        assert!((gp.inv_k.unwrap().get(0, 0) - 1e3).abs() < 1e-6);

        let c = cat
            .interpolate_coefficients(CellType::Cross3D, &[0.1, 0.2])
            .unwrap();
        let q = m.point(cat, CellType::Cross3D, &[0.1, 0.2], 0.0).unwrap();
        assert_eq!(q.k, c.k.scale(50.0));
        let thin = m.point(cat, CellType::Cross3D, &[0.08, 0.08], 0.0).unwrap();
        assert!(thin.k.eigenvalues()[0] >= 1e-3 * (1.0 - 1e-12));
        assert_eq!(q.b, c.b);
    }

    #[test]
    fn undrained_flag_switches_type2_stiffness() {
        let cat = small_catalogue();
        let m = MaterialModel {
            undrained_type2: true,
            ..MaterialModel::default()
        };
        let c = cat
            .interpolate_coefficients(CellType::SphereVoid, &[0.3])
            .unwrap();
        let p = m.point(cat, CellType::SphereVoid, &[0.3], 0.0).unwrap();
        assert_eq!(p.a, c.a_undrained);
    }

    #[test]
    fn candidates_follow_grid_order_and_rotation() {
        let cat = small_catalogue();
        let grid = DesignGridSpec {
            cross_radii: [3, 4],
            angles: 6,
            sphere_radii: 5,
        };
        let space = DesignSpace::from_catalogue(
            cat,
            &grid,
            &[CellType::SphereVoid, CellType::Cross3D],
            &MaterialModel::default(),
        )
        .unwrap();
        assert_eq!(space.types[0].cell_type, CellType::Cross3D);
        assert_eq!(space.num_candidates(), 12 * 6 + 5);
        let key = CandidateKey {
            slot: 0,
            grid: 7,
            angle: 2,
        };
        let d = space.candidate(key);
        let tc = &space.types[0];
        assert_eq!(d.alpha, grid.radii(CellType::Cross3D)[7]);
        let inv = rotate_compliance(&tc.points[7].inv_a, d.phi);
        let prod = inv.to_matrix() * d.point.a.to_matrix();
        assert!((prod - Mat6::identity()).abs().max() < 1e-9);
        let a = d.point.a.to_matrix();
        assert!((tc.norm_sq(7, 2) - a.frobenius(&a)).abs() < 1e-9 * tc.norm_sq(7, 2));
        assert_eq!(tc.label(7, 2), d.point.label);
    }

    #[test]
    fn snapping_recovers_grid_keys() {
        let cat = small_catalogue();
        let grid = DesignGridSpec {
            cross_radii: [3, 3],
            angles: 4,
            sphere_radii: 3,
        };
        let model = MaterialModel::default();
        let space = DesignSpace::from_catalogue(cat, &grid, &[CellType::Cross3D], &model).unwrap();
        let on = grid.radii(CellType::Cross3D)[4].clone();
        let mut s = DesignState::homogeneous(cat, &model, 3, CellType::Cross3D, &on, grid.angle(1))
            .unwrap();
        s.snap_keys(&space);
        assert!(s.elements.iter().all(|e| e.key
            == Some(CandidateKey {
                slot: 0,
                grid: 4,
                angle: 1
            })));
        let mut off =
            DesignState::homogeneous(cat, &model, 3, CellType::Cross3D, &[0.151, 0.15], 0.0)
                .unwrap();
        off.snap_keys(&space);
        assert!(off.keys().iter().all(Option::is_none));
        assert!(!off.same_candidates(&off));
    }
}
