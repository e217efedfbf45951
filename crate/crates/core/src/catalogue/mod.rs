//! Offline material catalogue: homogenized node samples per cell type,
//! their interpolants, regularization labels and the discrete design grids.

pub mod interp;
pub mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::micro::{
    self, BaseMaterial, CellSolverOptions, CellType, HomogenizedCoefficients, UnitCellGeometry,
};
use crate::tensors::{
    rotate_compliance, rotate_elasticity_by, rotate_s3_by, spd_inverse, spd_inverse3, SymMatrix3,
    SymTensor4,
};
use interp::{Hermite1, Hermite2};

/// Number of interpolated scalar fields: `A` (21), `B` (6), `K` (6), `ρ_m`
/// (1) and `A_U` (21).
pub const FIELDS: usize = 55;

/// Effective data of one material: `(A, B, K, ρ_m, R)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialPoint {
    pub a: SymTensor4,
    pub b: SymMatrix3,
    pub k: SymMatrix3,
    pub rho: f64,
    pub label: [f64; 3],
}

/// Regularization label of a cell with parameters `alpha` and rotation
/// `phi`.
pub fn reg_label(cell_type: CellType, alpha: &[f64], phi: f64) -> [f64; 3] {
    match cell_type {
        CellType::Cross3D => {
            let (lo, hi) = cell_type.bounds();
            [
                (alpha[0] - lo[0]) / (hi[0] - lo[0]),
                (alpha[1] - lo[1]) / (hi[1] - lo[1]),
                (2.0 * phi).sin(),
            ]
        }
        CellType::SphereVoid => [-1.0, -1.0, -1.0],
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Offline build settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogueSpec {
    pub base: BaseMaterial,
    /// Voxels per axis for the cell problems.
    pub resolution: usize,
    /// Voxels per axis for the solid fraction `ρ_m`.
    pub volume_resolution: usize,
    pub gamma: f64,
    pub cell_types: Vec<CellType>,
    /// Node counts per parameter of the Cross3D cell.
    pub cross_nodes: [usize; 2],
    pub sphere_nodes: usize,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CatalogueSpec {
    fn default() -> Self {
        Self {
            base: BaseMaterial::default(),
            resolution: 32,
            volume_resolution: 128,
            gamma: 0.0,
            cell_types: vec![CellType::Cross3D, CellType::SphereVoid],
            cross_nodes: [11, 11],
            sphere_nodes: 30,
            rel_tol: 1e-10,
            max_iter: 2000,
        }
    }
}

impl CatalogueSpec {
    pub fn node_axes(&self, t: CellType) -> Vec<Vec<f64>> {
        let (lo, hi) = t.bounds();
        match t {
            CellType::Cross3D => {
                vec![
                    linspace(lo[0], hi[0], self.cross_nodes[0]),
                    linspace(lo[1], hi[1], self.cross_nodes[1]),
                ]
            }
            CellType::SphereVoid => vec![linspace(lo[0], hi[0], self.sphere_nodes)],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.resolution < 8 || self.volume_resolution < 8 {
            return Err(Error::Config("resolutions must be at least 8".into()));
        }
        if self.cross_nodes.iter().any(|&n| n < 2) || self.sphere_nodes < 2 {
            return Err(Error::Config(
                "every node axis needs at least 2 samples".into(),
            ));
        }
        if self.cell_types.is_empty() {
            return Err(Error::Config("no cell types requested".into()));
        }
        Ok(())
    }
}

/// One homogenized node sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSample {
    pub alpha: Vec<f64>,
    pub coeffs: HomogenizedCoefficients,
    pub rho: f64,
}

impl NodeSample {
    fn fields(&self) -> [f64; FIELDS] {
        let mut v = [0.0; FIELDS];
        v[..21].copy_from_slice(self.coeffs.a.upper());
        v[21..27].copy_from_slice(self.coeffs.b.upper());
        v[27..33].copy_from_slice(self.coeffs.k.upper());
        v[33] = self.rho;
        v[34..55].copy_from_slice(self.coeffs.a_undrained.upper());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Interpolant {
    One(Hermite1),
    Two(Hermite2),
}

/// Node samples and interpolant of one cell type.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeTable {
    pub cell_type: CellType,
    pub axes: Vec<Vec<f64>>,
    /// Samples with the first parameter varying fastest.
    pub samples: Vec<NodeSample>,
    interp: Interpolant,
}

impl TypeTable {
    pub fn new(cell_type: CellType, axes: Vec<Vec<f64>>, samples: Vec<NodeSample>) -> Result<Self> {
        let expected: usize = axes.iter().map(Vec::len).product();
        if axes.len() != cell_type.n_params() || samples.len() != expected {
            return Err(Error::Malformed(format!(
                "{:?}: {} axes and {} samples do not form a node grid",
                cell_type,
                axes.len(),
                samples.len()
            )));
        }
        let mut columns = vec![Vec::with_capacity(samples.len()); FIELDS];
        for s in &samples {
            for (f, v) in s.fields().iter().enumerate() {
                columns[f].push(*v);
            }
        }
        let interp = match axes.len() {
            1 => Interpolant::One(Hermite1::new(axes[0].clone(), columns)),
            _ => Interpolant::Two(Hermite2::new(axes[0].clone(), axes[1].clone(), columns)),
        };
        Ok(Self {
            cell_type,
            axes,
            samples,
            interp,
        })
    }

    fn eval_fields(&self, alpha: &[f64]) -> [f64; FIELDS] {
        let mut out = [0.0; FIELDS];
        match &self.interp {
            Interpolant::One(h) => h.eval(alpha[0], &mut out),
            Interpolant::Two(h) => h.eval([alpha[0], alpha[1]], &mut out),
        }
        out
    }
}

/// Interpolated coefficients including the undrained stiffness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolatedCoefficients {
    pub a: SymTensor4,
    pub b: SymMatrix3,
    pub k: SymMatrix3,
    pub rho: f64,
    pub a_undrained: SymTensor4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Catalogue {
    pub spec: CatalogueSpec,
    pub tables: Vec<TypeTable>,
}

impl Catalogue {
    pub fn table(&self, t: CellType) -> Option<&TypeTable> {
        self.tables.iter().find(|tb| tb.cell_type == t)
    }

    pub fn cell_types(&self) -> Vec<CellType> {
        self.tables.iter().map(|t| t.cell_type).collect()
    }

    pub fn interpolate_coefficients(
        &self,
        t: CellType,
        alpha: &[f64],
    ) -> Result<InterpolatedCoefficients> {
        let table = self
            .table(t)
            .ok_or_else(|| Error::Config(format!("catalogue has no {t:?} table")))?;
        let (lo, hi) = t.bounds();
        let inside = alpha.len() == lo.len()
            && alpha
                .iter()
                .enumerate()
                .all(|(k, &a)| a >= lo[k] - 1e-12 && a <= hi[k] + 1e-12);
        if !inside {
            return Err(Error::OutOfBox {
                cell_type: t.index(),
                alpha: alpha.to_vec(),
            });
        }
        let v = table.eval_fields(alpha);
        let a = SymTensor4::from_upper(v[..21].try_into().expect("21 entries"));
        let b = SymMatrix3::from_upper(v[21..27].try_into().expect("6 entries"));
        let k = SymMatrix3::from_upper(v[27..33].try_into().expect("6 entries"));
        let a_undrained = SymTensor4::from_upper(v[34..55].try_into().expect("21 entries"));
        Ok(InterpolatedCoefficients {
            a,
            b,
            k,
            rho: v[33],
            a_undrained,
        })
    }

    /// Unrotated material point; `A` is checked to be SPD.
    pub fn interpolate(&self, t: CellType, alpha: &[f64]) -> Result<MaterialPoint> {
        let c = self.interpolate_coefficients(t, alpha)?;
        if !c.a.is_spd() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: c.a.kelvin_eigenvalues()[0],
            });
        }
        Ok(MaterialPoint {
            a: c.a,
            b: c.b,
            k: c.k,
            rho: c.rho,
            label: reg_label(t, alpha, 0.0),
        })
    }
}

/// Progress callback: `(cell type, alpha, seconds)`.
pub type Progress<'a> = &'a (dyn Fn(CellType, &[f64], f64) + Sync);

fn homogenize_node(spec: &CatalogueSpec, t: CellType, alpha: &[f64]) -> Result<NodeSample> {
    let wrap = |e: Error| Error::NodeFailure {
        cell_type: t.index(),
        alpha: alpha.to_vec(),
        source: Box::new(e),
    };
    let geom = UnitCellGeometry::new(t, alpha.to_vec(), spec.base).map_err(wrap)?;
    let opts = CellSolverOptions {
        rel_tol: spec.rel_tol,
        max_iter: spec.max_iter,
    };
    let (coeffs, _) = micro::homogenize(&geom, spec.resolution, spec.gamma, &opts).map_err(wrap)?;
    let rho = micro::voxelize(&geom, spec.volume_resolution)
        .map_err(wrap)?
        .solid_fraction();
    Ok(NodeSample {
        alpha: alpha.to_vec(),
        coeffs,
        rho,
    })
}

/// Mirror image of a Cross3D sample under the exchange of x and y.
fn swap_xy(s: &NodeSample) -> NodeSample {
    const P6: [usize; 6] = [1, 0, 2, 4, 3, 5];
    let t4 = |a: &SymTensor4| {
        let m = a.to_matrix();
        SymTensor4::from_matrix(&crate::tensors::Mat6::from_fn(|i, j| m[(P6[i], P6[j])]))
    };
    let t2 = |b: &SymMatrix3| {
        let m = b.to_matrix();
        const P3: [usize; 3] = [1, 0, 2];
        SymMatrix3::from_matrix(&crate::tensors::Mat3::from_fn(|i, j| m[(P3[i], P3[j])]))
    };
    let c = &s.coeffs;
    NodeSample {
        alpha: vec![s.alpha[1], s.alpha[0]],
        coeffs: HomogenizedCoefficients {
            a: t4(&c.a),
            c: t2(&c.c),
            n: c.n,
            k: t2(&c.k),
            porosity: c.porosity,
            b: t2(&c.b),
            m: c.m,
            a_undrained: t4(&c.a_undrained),
        },
        rho: s.rho,
    }
}

/// Homogenizes every node of every requested cell type.
///
/// Cross3D nodes with `r_x > r_y` are obtained from their mirror images,
/// which keeps the table exactly symmetric under the exchange of x and y.
pub fn build_catalogue(spec: &CatalogueSpec, progress: Option<Progress<'_>>) -> Result<Catalogue> {
    spec.validate()?;
    let mut tables = Vec::new();
    for &t in &spec.cell_types {
        let axes = spec.node_axes(t);
        let grid_points: Vec<Vec<f64>> = match t {
            CellType::Cross3D => {
                let mut pts = Vec::new();
                for &y in &axes[1] {
                    for &x in &axes[0] {
                        pts.push(vec![x, y]);
                    }
                }
                pts
            }
            CellType::SphereVoid => axes[0].iter().map(|&r| vec![r]).collect(),
        };
        let symmetric = t == CellType::Cross3D && axes[0] == axes[1];
        let nx = axes[0].len();
        let todo: Vec<usize> = (0..grid_points.len())
            .filter(|&k| !symmetric || k % nx <= k / nx)
            .collect();
        let solved: Vec<(usize, NodeSample)> = todo
            .par_iter()
            .map(|&k| {
                let start = std::time::Instant::now();
                let s = homogenize_node(spec, t, &grid_points[k])?;
                if let Some(cb) = progress {
                    cb(t, &grid_points[k], start.elapsed().as_secs_f64());
                }
                Ok((k, s))
            })
            .collect::<Result<_>>()?;
        let mut samples: Vec<Option<NodeSample>> = vec![None; grid_points.len()];
        for (k, s) in solved {
            samples[k] = Some(s);
        }
        if symmetric {
            for k in 0..grid_points.len() {
                let (i, j) = (k % nx, k / nx);
                if i > j {
                    let mirror = samples[j + nx * i].as_ref().map(swap_xy);
                    samples[k] = mirror;
                }
            }
        }
        let samples = samples
            .into_iter()
            .map(|s| s.expect("every node solved"))
            .collect();
        tables.push(TypeTable::new(t, axes, samples)?);
    }
    Ok(Catalogue {
        spec: spec.clone(),
        tables,
    })
}

/// Design grid sizes for the online phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignGridSpec {
    pub cross_radii: [usize; 2],
    /// Rotation samples `φ_j = jπ/angles`, `j < angles`; 1 disables rotation.
    pub angles: usize,
    pub sphere_radii: usize,
}

impl Default for DesignGridSpec {
    fn default() -> Self {
        Self {
            cross_radii: [28, 28],
            angles: 180,
            sphere_radii: 60,
        }
    }
}

impl DesignGridSpec {
    pub fn angle(&self, j: usize) -> f64 {
        j as f64 * PI / self.angles as f64
    }

    pub fn radii(&self, t: CellType) -> Vec<Vec<f64>> {
        let (lo, hi) = t.bounds();
        match t {
            CellType::Cross3D => {
                let ax = linspace(lo[0], hi[0], self.cross_radii[0]);
                let ay = linspace(lo[1], hi[1], self.cross_radii[1]);
                let mut pts = Vec::with_capacity(ax.len() * ay.len());
                for &x in &ax {
                    for &y in &ay {
                        pts.push(vec![x, y]);
                    }
                }
                pts
            }
            CellType::SphereVoid => linspace(lo[0], hi[0], self.sphere_radii)
                .into_iter()
                .map(|r| vec![r])
                .collect(),
        }
    }

    pub fn angle_count(&self, t: CellType) -> usize {
        match t {
            CellType::Cross3D => self.angles.max(1),
            CellType::SphereVoid => 1,
        }
    }
}

/// A design-grid candidate with cached inverses.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalogueEntry {
    pub cell_type: CellType,
    pub alpha: Vec<f64>,
    pub grid_index: usize,
    pub angle_index: usize,
    pub phi: f64,
    pub point: MaterialPoint,
    pub inv_a: SymTensor4,
    pub inv_b: Option<SymMatrix3>,
    pub inv_k: Option<SymMatrix3>,
}

/// All candidates of one cell type ordered by radii (lexicographic), then
/// angle. Rotated tensors and inverses come from the unrotated ones.
pub fn enumerate_design_grid(
    cat: &Catalogue,
    t: CellType,
    grid: &DesignGridSpec,
) -> Result<Vec<CatalogueEntry>> {
    let radii = grid.radii(t);
    let na = grid.angle_count(t);
    let mut out = Vec::with_capacity(radii.len() * na);
    for (gi, alpha) in radii.iter().enumerate() {
        let p = cat.interpolate(t, alpha)?;
        let inv_a = spd_inverse(&p.a)?;
        let inv_b = spd_inverse3(&p.b).ok();
        let inv_k = spd_inverse3(&p.k).ok();
        for j in 0..na {
            let phi = grid.angle(j);
            let point = if j == 0 {
                p
            } else {
                MaterialPoint {
                    a: rotate_elasticity_by(&p.a, phi),
                    b: rotate_s3_by(&p.b, phi),
                    k: rotate_s3_by(&p.k, phi),
                    rho: p.rho,
                    label: reg_label(t, alpha, phi),
                }
            };
            out.push(CatalogueEntry {
                cell_type: t,
                alpha: alpha.clone(),
                grid_index: gi,
                angle_index: j,
                phi,
                point,
                inv_a: if j == 0 {
                    inv_a
                } else {
                    rotate_compliance(&inv_a, phi)
                },
                inv_b: inv_b.map(|m| if j == 0 { m } else { rotate_s3_by(&m, phi) }),
                inv_k: inv_k.map(|m| if j == 0 { m } else { rotate_s3_by(&m, phi) }),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::sync::OnceLock;

    /// A small catalogue shared by the tests of this crate.
    pub(crate) fn small_catalogue() -> &'static Catalogue {
        static CAT: OnceLock<Catalogue> = OnceLock::new();
        CAT.get_or_init(|| {
            let spec = CatalogueSpec {
                resolution: 8,
                volume_resolution: 32,
                cross_nodes: [3, 3],
                sphere_nodes: 4,
                ..CatalogueSpec::default()
            };
            build_catalogue(&spec, None).unwrap()
        })
    }

    #[test]
    fn labels_at_box_corners() {
        assert_eq!(
            reg_label(CellType::Cross3D, &[0.08, 0.08], 0.0),
            [0.0, 0.0, 0.0]
        );
        let l = reg_label(CellType::Cross3D, &[0.22, 0.22], PI / 4.0);
        assert!(
            (l[0] - 1.0).abs() < 1e-14 && (l[1] - 1.0).abs() < 1e-14 && (l[2] - 1.0).abs() < 1e-15
        );
        assert_eq!(
            reg_label(CellType::SphereVoid, &[0.3], 1.0),
            [-1.0, -1.0, -1.0]
        );
    }

    #[test]
    fn interpolation_is_exact_at_nodes() {
        let cat = small_catalogue();
        for table in &cat.tables {
            for s in &table.samples {
                let c = cat
                    .interpolate_coefficients(table.cell_type, &s.alpha)
                    .unwrap();
                assert_eq!(c.a, s.coeffs.a);
                assert_eq!(c.b, s.coeffs.b);
                assert_eq!(c.k, s.coeffs.k);
                assert_eq!(c.rho, s.rho);
            }
        }
    }

    #[test]
    fn mirrored_nodes_are_consistent() {
        let cat = small_catalogue();
        let t = cat.table(CellType::Cross3D).unwrap();
        let s01 = &t.samples[1];
        let s10 = &t.samples[3];
        assert_eq!(s01.alpha, vec![s10.alpha[1], s10.alpha[0]]);
        assert_eq!(s01.coeffs.a.get(0, 0), s10.coeffs.a.get(1, 1));
        assert_eq!(s01.coeffs.k.get(0, 0), s10.coeffs.k.get(1, 1));
        assert_eq!(s01.rho, s10.rho);
    }

    #[test]
    fn out_of_box_is_rejected() {
        let cat = small_catalogue();
        assert!(matches!(
            cat.interpolate(CellType::Cross3D, &[0.05, 0.1]),
            Err(Error::OutOfBox { cell_type: 1, .. })
        ));
        assert!(cat.interpolate(CellType::SphereVoid, &[0.41]).is_err());
    }

    #[test]
    fn design_grid_counts_and_unrotated_entries() {
        let cat = small_catalogue();
        let grid = DesignGridSpec {
            cross_radii: [4, 3],
            angles: 6,
            sphere_radii: 5,
        };
        let e1 = enumerate_design_grid(cat, CellType::Cross3D, &grid).unwrap();
        assert_eq!(e1.len(), 4 * 3 * 6);
        let e2 = enumerate_design_grid(cat, CellType::SphereVoid, &grid).unwrap();
        assert_eq!(e2.len(), 5);
        for e in e1.iter().filter(|e| e.angle_index == 0) {
            assert_eq!(
                e.point.a,
                cat.interpolate(CellType::Cross3D, &e.alpha).unwrap().a
            );
        }
        for e in &e1 {
            let prod = e.point.a.to_matrix() * e.inv_a.to_matrix();
            assert!((prod - crate::tensors::Mat6::identity()).norm() < 1e-10);
        }
        assert_eq!(
            DesignGridSpec::default().radii(CellType::Cross3D).len() * 180,
            141_120
        );
        assert_eq!(
            DesignGridSpec::default().radii(CellType::SphereVoid).len(),
            60
        );
    }

    #[test]
    fn sphere_solid_fraction_decreases_with_radius() {
        let t = small_catalogue().table(CellType::SphereVoid).unwrap();
        for w in t.samples.windows(2) {
            assert!(w[1].rho < w[0].rho);
        }
    }
}
