//! JSON run configuration shared by all subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalogue::io::content_hash;
use crate::catalogue::{CatalogueSpec, DesignGridSpec};
use crate::error::{Error, Result};
use crate::macrofem::{BoundarySpec, Face, MeshSpec, Patch};
use crate::micro::CellType;
use crate::sgp::space::MaterialModel;
use crate::sgp::OptimizerConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogueConfig {
    /// Catalogue read by `optimize`, `pareto` and `check`.
    pub path: PathBuf,
    /// Offline build settings used by `homogenize`.
    pub build: CatalogueSpec,
}

impl Default for CatalogueConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("runs/catalogue/catalogue.psgp"),
            build: CatalogueSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementChoice {
    pub cell_type: CellType,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDesign {
    Homogeneous(ElementChoice),
    PerElement { elements: Vec<ElementChoice> },
}

impl Default for InitialDesign {
    fn default() -> Self {
        InitialDesign::Homogeneous(ElementChoice {
            cell_type: CellType::Cross3D,
            alpha: vec![0.15, 0.15],
            phi: 0.0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParetoConfig {
    pub lambda_psi: Vec<f64>,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            lambda_psi: vec![-3.0, -5.0, -10.0, -15.0, -30.0, -60.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Field dump period in accepted iterations; 0 writes only the initial
    /// and final fields.
    pub dump_every: usize,
    /// Also write VTK XML files.
    pub vtk_xml: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/out"),
            dump_every: 0,
            vtk_xml: false,
        }
    }
}

/// Settings of the verification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    pub mesh: MeshSpec,
    pub boundary: BoundarySpec,
    /// Central difference step, relative to each tensor's magnitude.
    pub fd_step: f64,
    pub gradient_tol: f64,
    pub model_zeroth_tol: f64,
    pub model_first_tol: f64,
    pub enumeration_instances: usize,
    /// Resolution of the single-cell dual-formula check; 0 skips it.
    pub cell_resolution: usize,
    pub dual_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            mesh: MeshSpec {
                nx: 3,
                ny: 2,
                nz: 1,
                h: [1.0; 3],
            },
            boundary: BoundarySpec {
                clamped: vec![Patch::whole(Face::XMin)],
                traction_patches: vec![Patch::band(Face::YMax, 0, Some(2.0), None)],
                traction: [0.0, -1.0, 0.0],
                inflow: vec![Patch::band(Face::YMax, 0, None, Some(1.0))],
                p_inflow: 1.0,
                outflow: vec![Patch::band(Face::YMin, 0, Some(2.0), None)],
                p_outflow: 0.5,
            },
            fd_step: 1e-5,
            gradient_tol: 1e-5,
            model_zeroth_tol: 1e-12,
            model_first_tol: 1e-6,
            enumeration_instances: 20,
            cell_resolution: 16,
            dual_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub name: String,
    pub catalogue: CatalogueConfig,
    pub mesh: MeshSpec,
    pub boundary: BoundarySpec,
    pub material: MaterialModel,
    pub design_grid: DesignGridSpec,
    /// Admissible cell types of the optimization.
    pub cell_types: Vec<CellType>,
    pub initial: InitialDesign,
    pub optimizer: OptimizerConfig,
    pub pareto: ParetoConfig,
    pub output: OutputConfig,
    pub seed: u64,
    pub check: CheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "run".into(),
            catalogue: CatalogueConfig::default(),
            mesh: MeshSpec::default(),
            boundary: BoundarySpec::default(),
            material: MaterialModel {
                permeability_scale: 1500.0,
                ..MaterialModel::default()
            },
            design_grid: DesignGridSpec::default(),
            cell_types: vec![CellType::Cross3D],
            initial: InitialDesign::default(),
            optimizer: OptimizerConfig {
                lambda_psi: -10.0,
                ..OptimizerConfig::default()
            },
            pareto: ParetoConfig::default(),
            output: OutputConfig::default(),
            seed: 0,
            check: CheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Short hash of the canonical serialization. Output settings are
    /// excluded: they do not change any computed value.
    pub fn hash(&self) -> String {
        let computed = RunConfig {
            output: OutputConfig::default(),
            ..self.clone()
        };
        content_hash(
            serde_json::to_string(&computed)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Header line for output files.
    pub fn header(&self) -> String {
        format!(
            "porosgp {} config {} sha256 {}",
            env!("CARGO_PKG_VERSION"),
            self.name,
            self.hash()
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.mesh.nx == 0
            || self.mesh.ny == 0
            || self.mesh.nz == 0
            || self.mesh.h.iter().any(|&h| !(h > 0.0))
        {
            return bad("mesh needs positive element counts and sizes".into());
        }
        if self.cell_types.is_empty() {
            return bad("cell_types must not be empty".into());
        }
        let g = &self.design_grid;
        if g.cross_radii.iter().any(|&n| n < 1) || g.sphere_radii < 1 || g.angles < 1 {
            return bad("design grid sizes must be at least 1".into());
        }
        let check_choice = |c: &ElementChoice| -> Result<()> {
            c.cell_type.check_params(&c.alpha)?;
            if !c.phi.is_finite() {
                return Err(Error::Config("initial angle must be finite".into()));
            }
            Ok(())
        };
        match &self.initial {
            InitialDesign::Homogeneous(c) => check_choice(c)?,
            InitialDesign::PerElement { elements } => {
                let n = self.mesh.nx * self.mesh.ny * self.mesh.nz;
                if elements.len() != n {
                    return bad(format!(
                        "per-element initial design has {} entries, mesh has {n}",
                        elements.len()
                    ));
                }
                elements.iter().try_for_each(check_choice)?;
            }
        }
        self.material.validate()?;
        self.optimizer.validate()?;
        if self.pareto.lambda_psi.iter().any(|v| !v.is_finite()) {
            return bad("pareto weights must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
    }

    #[test]
    fn hash_ignores_output_settings_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        b.output.dump_every = 3;
        assert_eq!(a.hash(), b.hash());
        b.optimizer.lambda_psi = -5.0;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn partial_configs_take_defaults() {
        let c = RunConfig::from_json(r#"{"schema_version": 1, "optimizer": {"lambda_psi": -3.0}}"#)
            .unwrap();
        assert_eq!(c.optimizer.lambda_psi, -3.0);
        assert_eq!(c.optimizer.k_max, 50);
        assert_eq!(c.mesh, MeshSpec::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_json(r#"{"schema_version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema_version": 1, "bogus": 1}"#).is_err());
        assert!(
            RunConfig::from_json(r#"{"schema_version": 1, "optimizer": {"lambda_phi": 0.0}}"#)
                .is_err()
        );
        let bad_init = r#"{"schema_version": 1, "initial": {"kind": "homogeneous", "cell_type": "Cross3D", "alpha": [0.5, 0.1]}}"#;
        assert!(RunConfig::from_json(bad_init).is_err());
    }
}
