//! Python bindings: cell homogenization, catalogue lookup and the
//! command-level entry points of `porosgp`.

use pyo3::prelude::*;

#[pymodule]
mod porosgp_py {
    use std::path::PathBuf;

    use pyo3::exceptions::{PyRuntimeError, PyValueError};
    use pyo3::prelude::*;
    use pyo3::types::PyDict;

    use porosgp::app;
    use porosgp::catalogue::{self, io};
    use porosgp::config::RunConfig;
    use porosgp::micro::{self, BaseMaterial, CellSolverOptions, CellType, UnitCellGeometry};
    use porosgp::tensors::{SymMatrix3, SymTensor4};

    fn err(e: porosgp::Error) -> PyErr {
        match e {
            porosgp::Error::Config(_)
            | porosgp::Error::InvalidParams(_)
            | porosgp::Error::OutOfBox { .. } => PyValueError::new_err(e.to_string()),
            _ => PyRuntimeError::new_err(e.to_string()),
        }
    }

    fn cell_type(name: &str) -> PyResult<CellType> {
        match name {
            "Cross3D" => Ok(CellType::Cross3D),
            "SphereVoid" => Ok(CellType::SphereVoid),
            _ => Err(PyValueError::new_err(format!(
                "unknown cell type {name:?} (expected \"Cross3D\" or \"SphereVoid\")"
            ))),
        }
    }

    fn config(json: Option<&str>) -> PyResult<RunConfig> {
        match json {
            Some(text) => RunConfig::from_json(text).map_err(err),
            None => Ok(RunConfig::default()),
        }
    }

    /// Voigt 6×6 as nested lists.
    fn mat6(t: &SymTensor4) -> Vec<Vec<f64>> {
        let m = t.to_matrix();
        (0..6)
            .map(|i| (0..6).map(|j| m[(i, j)]).collect())
            .collect()
    }

    fn mat3(t: &SymMatrix3) -> Vec<Vec<f64>> {
        let m = t.to_matrix();
        (0..3)
            .map(|i| (0..3).map(|j| m[(i, j)]).collect())
            .collect()
    }

    /// Default run configuration as JSON.
    #[pyfunction]
    fn default_config() -> PyResult<String> {
        RunConfig::default().to_json().map_err(err)
    }

    /// Homogenizes one parameterized cell on an `n³` voxel grid and returns
    /// the effective coefficients.
    #[pyfunction]
    #[pyo3(signature = (cell_type_name, params, resolution=16, gamma=0.0, young=3.9, poisson=0.34))]
    fn homogenize_cell<'py>(
        py: Python<'py>,
        cell_type_name: &str,
        params: Vec<f64>,
        resolution: usize,
        gamma: f64,
        young: f64,
        poisson: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let t = cell_type(cell_type_name)?;
        let geom =
            UnitCellGeometry::new(t, params, BaseMaterial { young, poisson }).map_err(err)?;
        let (h, diag) = py
            .detach(|| micro::homogenize(&geom, resolution, gamma, &CellSolverOptions::default()))
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("A", mat6(&h.a))?;
        d.set_item("C", mat3(&h.c))?;
        d.set_item("K", mat3(&h.k))?;
        d.set_item("B", mat3(&h.b))?;
        d.set_item("N", h.n)?;
        d.set_item("M", h.m)?;
        d.set_item("porosity", h.porosity)?;
        d.set_item("A_undrained", mat6(&h.a_undrained))?;
        d.set_item("diagnostics", format!("{diag:?}"))?;
        Ok(d)
    }

    /// A material catalogue loaded from disk.
    #[pyclass(frozen)]
    struct Catalogue {
        inner: catalogue::Catalogue,
    }

    #[pymethods]
    impl Catalogue {
        #[new]
        fn new(path: PathBuf) -> PyResult<Self> {
            Ok(Self {
                inner: io::load(&path).map_err(err)?,
            })
        }

        fn cell_types(&self) -> Vec<String> {
            self.inner
                .cell_types()
                .iter()
                .map(|t| format!("{t:?}"))
                .collect()
        }

        /// Interpolated unrotated material at parameters `alpha`.
        fn interpolate<'py>(
            &self,
            py: Python<'py>,
            cell_type_name: &str,
            alpha: Vec<f64>,
        ) -> PyResult<Bound<'py, PyDict>> {
            let p = self
                .inner
                .interpolate(cell_type(cell_type_name)?, &alpha)
                .map_err(err)?;
            let d = PyDict::new(py);
            d.set_item("A", mat6(&p.a))?;
            d.set_item("B", mat3(&p.b))?;
            d.set_item("K", mat3(&p.k))?;
            d.set_item("rho", p.rho)?;
            d.set_item("label", p.label.to_vec())?;
            Ok(d)
        }
    }

    /// Builds the catalogue described by the config and returns its path.
    #[pyfunction]
    #[pyo3(signature = (config_json=None))]
    fn homogenize(py: Python<'_>, config_json: Option<&str>) -> PyResult<PathBuf> {
        let cfg = config(config_json)?;
        py.detach(|| app::cmd_homogenize(&cfg)).map_err(err)
    }

    /// Runs one optimization, writes its outputs and returns the summary.
    #[pyfunction]
    #[pyo3(signature = (config_json=None))]
    fn optimize<'py>(py: Python<'py>, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = config(config_json)?;
        let s = py.detach(|| app::cmd_optimize(&cfg)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("name", s.name)?;
        d.set_item("config_hash", s.config_hash)?;
        d.set_item("Phi", s.compliance)?;
        d.set_item("Psi", s.flux)?;
        d.set_item("J", s.merit)?;
        d.set_item("Xi", s.xi)?;
        d.set_item("rho", s.rho)?;
        d.set_item("iterations", s.iterations)?;
        d.set_item("stop", format!("{:?}", s.stop))?;
        d.set_item("j_diff", s.j_diff)?;
        d.set_item("seconds", s.seconds)?;
        Ok(d)
    }

    /// Runs the verification suite; returns `(name, passed, measured,
    /// tolerance)` per check.
    #[pyfunction]
    #[pyo3(signature = (config_json=None))]
    fn check(py: Python<'_>, config_json: Option<&str>) -> PyResult<Vec<(String, bool, f64, f64)>> {
        let cfg = config(config_json)?;
        let report = py.detach(|| app::cmd_check(&cfg)).map_err(err)?;
        Ok(report
            .into_iter()
            .map(|c| (c.name, c.passed, c.measured, c.tolerance))
            .collect())
    }
}
