//! Subcommand implementations behind the command-line tool.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::catalogue::{self, io as catio, Catalogue};
use crate::checks::{run_checks, CheckOutcome};
use crate::config::{InitialDesign, RunConfig};
use crate::error::{Error, Result};
use crate::macrofem::vtk::{self, FieldSet};
use crate::macrofem::MacroProblem;
use crate::micro::CellType;
use crate::sgp::space::{DesignSpace, DesignState, ElementDesign};
use crate::sgp::{self, Evaluation, IterationRecord, OptimizationResult, StopReason};

/// Command-line overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dump_every: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.dump_every {
            cfg.output.dump_every = d;
        }
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Builds the catalogue, writes it with a node dump into the output
/// directory and returns the catalogue path.
pub fn cmd_homogenize(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let progress = |t: CellType, alpha: &[f64], secs: f64| {
        println!("node {:?} alpha {:?}: {:.2} s", t, alpha, secs);
    };
    let cat = catalogue::build_catalogue(&cfg.catalogue.build, Some(&progress))?;
    let path = dir.join("catalogue.psgp");
    catio::save(&cat, &path)?;
    let mut w = create_file(&dir.join("nodes.csv"))?;
    catio::write_nodes_csv(&cat, &mut w)?;
    w.flush()?;
    Ok(path)
}

/// Everything an optimization run needs.
pub struct Setup {
    pub catalogue: Catalogue,
    pub problem: MacroProblem,
    pub space: DesignSpace,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let catalogue = catio::load(&cfg.catalogue.path).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!(
                "cannot read catalogue {}: {io}",
                cfg.catalogue.path.display()
            )),
            e => e,
        })?;
        Self::with_catalogue(cfg, catalogue)
    }

    pub fn with_catalogue(cfg: &RunConfig, catalogue: Catalogue) -> Result<Self> {
        let problem = MacroProblem::new(cfg.mesh, cfg.boundary.clone())?;
        let space = DesignSpace::from_catalogue(
            &catalogue,
            &cfg.design_grid,
            &cfg.cell_types,
            &cfg.material,
        )?;
        Ok(Self {
            catalogue,
            problem,
            space,
        })
    }

    pub fn initial_design(&self, cfg: &RunConfig) -> Result<DesignState> {
        let n = self.problem.num_elements();
        let mm = &cfg.material;
        match &cfg.initial {
            InitialDesign::Homogeneous(c) => {
                DesignState::homogeneous(&self.catalogue, mm, n, c.cell_type, &c.alpha, c.phi)
            }
            InitialDesign::PerElement { elements } => {
                let elements = elements
                    .iter()
                    .map(|c| {
                        let point = mm.point(&self.catalogue, c.cell_type, &c.alpha, c.phi)?;
                        Ok(ElementDesign {
                            cell_type: c.cell_type,
                            alpha: c.alpha.clone(),
                            phi: c.phi,
                            key: None,
                            point,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(DesignState { elements })
            }
        }
    }

    pub fn run(
        &self,
        cfg: &RunConfig,
        observer: Option<sgp::Observer<'_>>,
    ) -> Result<OptimizationResult> {
        sgp::optimize(
            &self.problem,
            &self.space,
            self.initial_design(cfg)?,
            &cfg.optimizer,
            observer,
        )
    }
}

/// Nodal and element fields of a design.
pub fn design_fields(problem: &MacroProblem, design: &DesignState, ev: &Evaluation) -> FieldSet {
    let mats = design.materials();
    let mut f = FieldSet::default();
    f.point_vector("displacement", &ev.state.u)
        .point_scalar("total_pressure", ev.state.total_pressure.clone())
        .point_scalar("pressure", ev.state.p.clone())
        .cell_scalar(
            "cell_type",
            design
                .elements
                .iter()
                .map(|e| e.cell_type.index() as f64)
                .collect(),
        )
        .cell_scalar(
            "alpha0",
            design.elements.iter().map(|e| e.alpha[0]).collect(),
        )
        .cell_scalar(
            "alpha1",
            design
                .elements
                .iter()
                .map(|e| *e.alpha.get(1).unwrap_or(&e.alpha[0]))
                .collect(),
        )
        .cell_scalar("phi", design.elements.iter().map(|e| e.phi).collect())
        .cell_scalar("rho_m", design.rho_values())
        .cell_scalar("energy", problem.element_energy(&mats, &ev.state.u))
        .cell_vector(
            "velocity",
            problem.element_velocity(&mats, &ev.state.total_pressure),
        );
    f
}

fn write_fields(
    dir: &Path,
    tag: &str,
    cfg: &RunConfig,
    problem: &MacroProblem,
    design: &DesignState,
    ev: &Evaluation,
) -> Result<()> {
    let f = design_fields(problem, design, ev);
    vtk::write_legacy(
        &dir.join(format!("fields_{tag}.vtk")),
        &problem.mesh,
        &f,
        &cfg.header(),
    )?;
    if cfg.output.vtk_xml {
        vtk::write_xml(&dir.join(format!("fields_{tag}.vtu")), &problem.mesh, &f)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub config_hash: String,
    pub compliance: f64,
    pub flux: f64,
    pub merit: f64,
    pub xi: f64,
    pub rho: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub j_diff: f64,
    pub seconds: f64,
}

pub fn summarize(cfg: &RunConfig, res: &OptimizationResult, seconds: f64) -> RunSummary {
    let last = res.history.last().expect("history has the initial record");
    RunSummary {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        compliance: last.compliance,
        flux: last.flux,
        merit: last.merit,
        xi: last.xi,
        rho: last.rho,
        iterations: last.k,
        stop: res.stop,
        j_diff: res.j_diff,
        seconds,
    }
}

/// Writes history, timing and design CSVs plus a JSON summary.
pub fn write_run_outputs(
    dir: &Path,
    cfg: &RunConfig,
    res: &OptimizationResult,
    summary: &RunSummary,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let header = cfg.header();
    let mut w = create_file(&dir.join("history.csv"))?;
    sgp::write_history_csv(&mut w, &header, &res.history)?;
    w.flush()?;
    let mut w = create_file(&dir.join("timing.csv"))?;
    sgp::write_timing_csv(&mut w, &res.history)?;
    w.flush()?;
    let mut w = create_file(&dir.join("design.csv"))?;
    sgp::write_design_csv(&mut w, &header, &res.design)?;
    w.flush()?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary)?,
    )?;
    Ok(())
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<RunSummary> {
    let t0 = Instant::now();
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json()?)?;
    let setup = Setup::new(cfg)?;
    let every = cfg.output.dump_every;
    let mut dump_error = None;
    let mut observer = |r: &IterationRecord, d: &DesignState, ev: &Evaluation| {
        let due = r.k == 0 || (every > 0 && r.k.is_multiple_of(every));
        if due && dump_error.is_none() {
            let tag = if r.k == 0 {
                "init".to_string()
            } else {
                format!("{:03}", r.k)
            };
            if let Err(e) = write_fields(&dir, &tag, cfg, &setup.problem, d, ev) {
                dump_error = Some(e);
            }
        }
    };
    let res = setup.run(cfg, Some(&mut observer))?;
    if let Some(e) = dump_error {
        return Err(e);
    }
    write_fields(
        &dir,
        "final",
        cfg,
        &setup.problem,
        &res.design,
        &res.evaluation,
    )?;
    let summary = summarize(cfg, &res, t0.elapsed().as_secs_f64());
    write_run_outputs(&dir, cfg, &res, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParetoPoint {
    pub lambda_psi: f64,
    pub compliance: f64,
    pub flux: f64,
    pub iterations: usize,
    pub stop: Option<StopReason>,
    pub error: Option<String>,
}

/// One cold-started run per weight; a failing point is recorded and the
/// sweep continues.
pub fn pareto_sweep(
    cfg: &RunConfig,
    setup: &Setup,
) -> Vec<(ParetoPoint, Option<OptimizationResult>)> {
    cfg.pareto
        .lambda_psi
        .iter()
        .map(|&lp| {
            let mut c = cfg.clone();
            c.optimizer.lambda_psi = lp;
            match setup.run(&c, None) {
                Ok(res) => {
                    let last = res.history.last().expect("initial record");
                    let p = ParetoPoint {
                        lambda_psi: lp,
                        compliance: last.compliance,
                        flux: last.flux,
                        iterations: last.k,
                        stop: Some(res.stop),
                        error: None,
                    };
                    (p, Some(res))
                }
                Err(e) => {
                    log::warn!("pareto point {lp} failed: {e}");
                    let p = ParetoPoint {
                        lambda_psi: lp,
                        compliance: f64::NAN,
                        flux: f64::NAN,
                        iterations: 0,
                        stop: None,
                        error: Some(e.to_string()),
                    };
                    (p, None)
                }
            }
        })
        .collect()
}

pub fn cmd_pareto(cfg: &RunConfig) -> Result<Vec<ParetoPoint>> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json()?)?;
    let setup = Setup::new(cfg)?;
    let results = pareto_sweep(cfg, &setup);
    let mut w = create_file(&dir.join("pareto.csv"))?;
    writeln!(w, "# {}", cfg.header())?;
    writeln!(w, "lambda_psi,Phi,Psi,iterations,stop,error")?;
    for (p, res) in &results {
        let stop = p.stop.map(|s| format!("{s:?}")).unwrap_or_default();
        let err = p.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            w,
            "{:e},{:e},{:e},{},{},{}",
            p.lambda_psi, p.compliance, p.flux, p.iterations, stop, err
        )?;
        if let Some(res) = res {
            let sub = dir.join(format!("lambda_psi_{}", p.lambda_psi));
            let mut c = cfg.clone();
            c.optimizer.lambda_psi = p.lambda_psi;
            write_run_outputs(&sub, &c, res, &summarize(&c, res, 0.0))?;
        }
    }
    w.flush()?;
    Ok(results.into_iter().map(|(p, _)| p).collect())
}

pub fn cmd_check(cfg: &RunConfig) -> Result<Vec<CheckOutcome>> {
    let cat = catio::load(&cfg.catalogue.path)?;
    run_checks(&cat, cfg)
}
