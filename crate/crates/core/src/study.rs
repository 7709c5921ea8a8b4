//! Convergence studies: problem registry, configuration, the per-level
//! pipeline and table/plot-data emission.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    norm_errors, point_errors, rate_table, ConvergenceReport, ExactSolution, GradNorm, LevelErrors,
    Rates,
};
use crate::fvcore::{
    assemble_system, control_volume_flux, default_load_order, Discretization, FvError, FvSystem,
    TrialField,
};
use crate::linsolve::{inf_norm, solve_direct, solve_iterative, Solution, SolveError};
use crate::meshdual::build_uniform_mesh;
use crate::polyquad::MAX_ORDER;

/// Tolerance of the registration self-consistency check.
pub const REGISTRY_TOLERANCE: f64 = 1e-5;

/// Bound on `max |flux + load| / ||b||_inf` accepted after a solve.
pub const CONSERVATION_BOUND: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("problem id {0:?} is already registered")]
    Duplicate(String),
    #[error("problem {id:?} fails the -Lap u = f check: max deviation {deviation:.3e}")]
    Inconsistent { id: String, deviation: f64 },
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure at k={k}, N={n}: {source}")]
    Solver {
        k: usize,
        n: usize,
        source: SolveError,
    },
    #[error("discretization failure at k={k}, N={n}: {source}")]
    Discretization { k: usize, n: usize, source: FvError },
    #[error("numerical check failed at k={k}, N={n}: {what}")]
    Acceptance { k: usize, n: usize, what: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl StudyError {
    /// Process exit code: 1 numerical failure, 2 configuration, 3 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            StudyError::Config(_) | StudyError::Io { .. } => 2,
            StudyError::Solver { .. } => 3,
            StudyError::Acceptance { .. } | StudyError::Discretization { .. } => 1,
        }
    }
}

/// A registered test problem on the unit square.
#[derive(Debug, Clone)]
pub struct Problem {
    pub id: String,
    pub description: String,
    pub solution: ExactSolution,
}

#[derive(Debug, Default)]
pub struct ProblemRegistry {
    problems: BTreeMap<String, Problem>,
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with the shipped problems: `paper`, `polynomial`, `separable`
    /// and `zero`.
    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        for (id, desc, sol) in [
            (
                "paper",
                "sin(pi x) sin(2 pi y) exp(x - 0.5 + y^2)",
                paper_solution(),
            ),
            ("polynomial", "x(1-x) y(1-y)", polynomial_solution()),
            ("separable", "sin(pi x) sin(pi y)", separable_solution()),
            (
                "zero",
                "u = 0",
                ExactSolution::new(|_, _| 0.0, |_, _| [0.0, 0.0], |_, _| 0.0),
            ),
        ] {
            reg.register(id, desc, sol)
                .expect("shipped problems are consistent");
        }
        reg
    }

    /// Adds a problem after checking `-Lap u = f` by finite differences at
    /// 100 random points.
    pub fn register(
        &mut self,
        id: &str,
        description: &str,
        solution: ExactSolution,
    ) -> Result<(), RegistryError> {
        if self.problems.contains_key(id) {
            return Err(RegistryError::Duplicate(id.to_string()));
        }
        let deviation = solution.laplacian_defect([0.0, 1.0, 0.0, 1.0], 100, 0x5eed);
        if !(deviation <= REGISTRY_TOLERANCE) {
            return Err(RegistryError::Inconsistent {
                id: id.to_string(),
                deviation,
            });
        }
        self.problems.insert(
            id.to_string(),
            Problem {
                id: id.to_string(),
                description: description.to_string(),
                solution,
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.problems.keys().map(String::as_str)
    }
}

/// `u = sin(pi x) sin(2 pi y) e^{x - 0.5 + y^2}` with its source term.
pub fn paper_solution() -> ExactSolution {
    ExactSolution::new(
        |x, y| (PI * x).sin() * (2.0 * PI * y).sin() * (x - 0.5 + y * y).exp(),
        |x, y| {
            let e = (x - 0.5 + y * y).exp();
            let (sx, cx) = (PI * x).sin_cos();
            let (sy, cy) = (2.0 * PI * y).sin_cos();
            [
                e * sy * (PI * cx + sx),
                e * sx * (2.0 * PI * cy + 2.0 * y * sy),
            ]
        },
        |x, y| {
            let (sx, cx) = (PI * x).sin_cos();
            let (sy, cy) = (2.0 * PI * y).sin_cos();
            ((5.0 * PI * PI - 4.0 * y * y - 3.0) * sx * sy
                - 8.0 * PI * y * sx * cy
                - 2.0 * PI * cx * sy)
                * (x - 0.5 + y * y).exp()
        },
    )
}

pub fn polynomial_solution() -> ExactSolution {
    ExactSolution::new(
        |x, y| x * (1.0 - x) * y * (1.0 - y),
        |x, y| {
            [
                (1.0 - 2.0 * x) * y * (1.0 - y),
                x * (1.0 - x) * (1.0 - 2.0 * y),
            ]
        },
        |x, y| 2.0 * y * (1.0 - y) + 2.0 * x * (1.0 - x),
    )
}

pub fn separable_solution() -> ExactSolution {
    ExactSolution::new(
        |x, y| (PI * x).sin() * (PI * y).sin(),
        |x, y| {
            [
                PI * (PI * x).cos() * (PI * y).sin(),
                PI * (PI * x).sin() * (PI * y).cos(),
            ]
        },
        |x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Md,
    Plot,
}

/// Study parameters. Level `s` runs the uniform `2^s x 2^s` mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub problem: String,
    pub k: Vec<usize>,
    pub levels: Vec<u32>,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
    /// Load quadrature points per direction; `k + 2` when absent.
    pub load_quad: Option<usize>,
    pub grad_norm: GradNorm,
    pub out: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            problem: "paper".into(),
            k: vec![3, 4],
            levels: (1..=5).collect(),
            solver: SolverKind::Direct,
            tol: 1e-12,
            max_iter: 20_000,
            load_quad: None,
            grad_norm: GradNorm::L1,
            out: PathBuf::from("study_out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Md, OutputFormat::Plot],
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self, StudyError> {
        serde_json::from_str(text).map_err(|e| StudyError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = std::fs::read_to_string(path).map_err(|source| StudyError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self, registry: &ProblemRegistry) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::Config(m));
        if registry.get(&self.problem).is_none() {
            let known: Vec<&str> = registry.ids().collect();
            return bad(format!(
                "unknown problem {:?} (known: {})",
                self.problem,
                known.join(", ")
            ));
        }
        if self.k.is_empty() || self.k.iter().any(|&k| !(1..=MAX_ORDER).contains(&k)) {
            return bad(format!(
                "k values must lie in 1..={MAX_ORDER}, got {:?}",
                self.k
            ));
        }
        if self.levels.is_empty() || self.levels.iter().any(|&s| s == 0 || s > 10) {
            return bad(format!("levels must lie in 1..=10, got {:?}", self.levels));
        }
        if !self.levels.windows(2).all(|w| w[0] + 1 == w[1]) {
            return bad(format!(
                "levels must be consecutive and ascending, got {:?}",
                self.levels
            ));
        }
        if !(self.tol >= 1e-14) {
            return bad(format!("tolerance {} below 1e-14", self.tol));
        }
        if let Some(q) = self.load_quad {
            if let Some(&k) = self.k.iter().find(|&&k| q < k + 1) {
                return bad(format!("load quadrature {q} below k + 1 for k = {k}"));
            }
        }
        if self.formats.is_empty() {
            return bad("no output formats selected".into());
        }
        Ok(())
    }

    pub fn load_order(&self, k: usize) -> usize {
        self.load_quad.unwrap_or_else(|| default_load_order(k))
    }
}

/// Solver settings for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub kind: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            kind: SolverKind::Direct,
            tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

/// Everything produced by one assembled-and-solved level.
#[derive(Debug, Clone)]
pub struct SolvedLevel {
    pub disc: Discretization,
    pub system: FvSystem,
    pub solution: Solution,
    pub u_h: TrialField,
}

impl SolvedLevel {
    /// `max_P |flux(u_h, K_P*) + b_P| / ||b||_inf`, fluxes evaluated from the
    /// field gradient.
    pub fn conservation_defect(&self) -> f64 {
        let dof = self.disc.dof();
        let worst = (0..dof.len())
            .into_par_iter()
            .map(|eq| {
                let (ix, iy) = dof.node(eq);
                (control_volume_flux(&self.disc, &self.u_h, ix, iy) + self.system.rhs[eq]).abs()
            })
            .reduce(|| 0.0, f64::max);
        let b = inf_norm(&self.system.rhs);
        if b > 0.0 {
            worst / b
        } else {
            worst
        }
    }
}

/// Assembles and solves the `n x n` unit-square problem with degree `k`.
pub fn solve_level(
    solution: &ExactSolution,
    k: usize,
    n: usize,
    load_quad: usize,
    settings: SolverSettings,
) -> Result<SolvedLevel, StudyError> {
    let disc_err = |source| StudyError::Discretization { k, n, source };
    let mesh =
        build_uniform_mesh(0.0, 1.0, 0.0, 1.0, n, n).map_err(|e| disc_err(FvError::from(e)))?;
    let disc = Discretization::new(mesh, k).map_err(disc_err)?;
    let system =
        assemble_system(&disc, |x, y| solution.source(x, y), load_quad).map_err(disc_err)?;
    let solved = match settings.kind {
        SolverKind::Direct => solve_direct(&system.matrix, &system.rhs),
        SolverKind::Iterative => {
            solve_iterative(&system.matrix, &system.rhs, settings.tol, settings.max_iter)
        }
    }
    .map_err(|source| StudyError::Solver { k, n, source })?;
    let u_h = TrialField::from_interior(&disc, &solved.x).map_err(disc_err)?;
    Ok(SolvedLevel {
        disc,
        system,
        solution: solved,
        u_h,
    })
}

/// Errors of a solved level; `q` is the norm quadrature order.
pub fn measure_level(level: &SolvedLevel, solution: &ExactSolution, norm: GradNorm) -> LevelErrors {
    let disc = &level.disc;
    let pe = point_errors(disc, &level.u_h, solution, norm);
    let (l2, h1) = norm_errors(disc, &level.u_h, solution, disc.degree() + 3);
    LevelErrors {
        n: disc.mesh().nx(),
        h: disc.mesh().h(),
        e_g: pe.e_g,
        e_l: pe.e_l,
        e_n: pe.e_n,
        l2,
        h1,
        residual: level
            .system
            .matrix
            .relative_residual(&level.solution.x, &level.system.rhs),
    }
}

/// Report for one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub k: usize,
    pub report: ConvergenceReport,
    pub max_conservation_defect: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub problem: String,
    pub reports: Vec<DegreeReport>,
    pub files: Vec<PathBuf>,
}

fn report_from_levels(levels: Vec<LevelErrors>) -> ConvergenceReport {
    if levels.len() < 2 {
        let rates = vec![Rates::default(); levels.len()];
        ConvergenceReport { levels, rates }
    } else {
        rate_table(levels).expect("levels halve by construction")
    }
}

/// Runs every `(k, level)` pair, independent runs in parallel, and writes
/// the requested files. Output is identical for identical configurations.
pub fn run_study(
    config: &StudyConfig,
    registry: &ProblemRegistry,
) -> Result<StudyOutcome, StudyError> {
    config.validate(registry)?;
    let problem = registry.get(&config.problem).expect("validated");
    let settings = SolverSettings {
        kind: config.solver,
        tol: config.tol,
        max_iter: config.max_iter,
    };
    let runs: Vec<(usize, u32)> = config
        .k
        .iter()
        .flat_map(|&k| config.levels.iter().map(move |&s| (k, s)))
        .collect();
    let results: Vec<Result<(LevelErrors, f64), StudyError>> = runs
        .par_iter()
        .map(|&(k, s)| {
            let n = 1usize << s;
            let level = solve_level(&problem.solution, k, n, config.load_order(k), settings)?;
            let errors = measure_level(&level, &problem.solution, config.grad_norm);
            let defect = level.conservation_defect();
            if !(errors.residual <= settings.tol.max(1e-12)) {
                return Err(StudyError::Acceptance {
                    k,
                    n,
                    what: format!(
                        "re-verified residual {:.3e} above tolerance",
                        errors.residual
                    ),
                });
            }
            if !(defect <= CONSERVATION_BOUND) {
                return Err(StudyError::Acceptance {
                    k,
                    n,
                    what: format!("local conservation defect {defect:.3e}"),
                });
            }
            Ok((errors, defect))
        })
        .collect();

    let mut by_k: BTreeMap<usize, (Vec<LevelErrors>, f64)> = BTreeMap::new();
    for ((k, _), r) in runs.iter().zip(results) {
        let (errors, defect) = r?;
        let entry = by_k.entry(*k).or_default();
        entry.0.push(errors);
        entry.1 = entry.1.max(defect);
    }
    let reports: Vec<DegreeReport> = config
        .k
        .iter()
        .map(|k| {
            let (levels, defect) = by_k.remove(k).unwrap_or_default();
            DegreeReport {
                k: *k,
                report: report_from_levels(levels),
                max_conservation_defect: defect,
            }
        })
        .collect();

    let files = write_outputs(config, &reports)?;
    Ok(StudyOutcome {
        problem: config.problem.clone(),
        reports,
        files,
    })
}

fn write_outputs(
    config: &StudyConfig,
    reports: &[DegreeReport],
) -> Result<Vec<PathBuf>, StudyError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StudyError::Io { path, source }
    };
    std::fs::create_dir_all(&config.out).map_err(io(&config.out))?;
    let mut files = Vec::new();
    for r in reports {
        let stem = format!("{}_k{}", config.problem, r.k);
        let mut formats = config.formats.clone();
        formats.sort();
        formats.dedup();
        for fmt in formats {
            let (ext, body) = match fmt {
                OutputFormat::Csv => ("csv", csv_table(&r.report)),
                OutputFormat::Md => ("md", markdown_table(&config.problem, r.k, &r.report)),
                OutputFormat::Plot => ("dat", plot_data(r.k, &r.report)),
            };
            let path = config.out.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(io(&path))?;
            files.push(path);
        }
    }
    Ok(files)
}

fn sci(v: f64) -> String {
    format!("{v:.5e}")
}

fn opt_sci(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

pub const CSV_HEADER: &str = "N,h,e_G,e_L,e_N,L2,H1,rate_G,rate_L,rate_N,residual";

/// One row per level; absent rates are empty cells.
pub fn csv_table(report: &ConvergenceReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (lv, rt) in report.levels.iter().zip(&report.rates) {
        let cells = [
            lv.n.to_string(),
            sci(lv.h),
            sci(lv.e_g),
            sci(lv.e_l),
            sci(lv.e_n),
            sci(lv.l2),
            sci(lv.h1),
            opt_sci(rt.g),
            opt_sci(rt.l),
            opt_sci(rt.n),
            sci(lv.residual),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn markdown_table(problem: &str, k: usize, report: &ConvergenceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## {problem}, k = {k}\n");
    let _ = writeln!(
        out,
        "| N | e_G | rate | e_L | rate | e_N | rate | L2 | rate | H1 | rate |"
    );
    let _ = writeln!(
        out,
        "|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|"
    );
    let r = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "---".into());
    let e = |v: f64| format!("{v:.3e}");
    for (lv, rt) in report.levels.iter().zip(&report.rates) {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            lv.n,
            e(lv.e_g),
            r(rt.g),
            e(lv.e_l),
            r(rt.l),
            e(lv.e_n),
            r(rt.n),
            e(lv.l2),
            r(rt.l2),
            e(lv.h1),
            r(rt.h1)
        );
    }
    out
}

/// `log10 h` vs `log10 e` per error kind, one block per series separated by
/// blank lines. Errors at or below the roundoff floor are left out.
pub fn plot_data(k: usize, report: &ConvergenceReport) -> String {
    type Getter = fn(&LevelErrors) -> f64;
    let series: [(&str, Getter); 5] = [
        ("e_G", |l| l.e_g),
        ("e_L", |l| l.e_l),
        ("e_N", |l| l.e_n),
        ("L2", |l| l.l2),
        ("H1", |l| l.h1),
    ];
    let mut out = String::new();
    for (i, (name, get)) in series.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# series {name} k={k}");
        let _ = writeln!(out, "# log10(h) log10(error)");
        for lv in &report.levels {
            let e = get(lv);
            if e > crate::analysis::ROUNDOFF_FLOOR {
                let _ = writeln!(out, "{:.6} {:.6}", lv.h.log10(), e.log10());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_problems_are_consistent() {
        let reg = ProblemRegistry::with_defaults();
        for id in ["paper", "polynomial", "separable", "zero"] {
            let p = reg.get(id).unwrap();
            assert!(
                p.solution.laplacian_defect([0.0, 1.0, 0.0, 1.0], 100, 99) <= REGISTRY_TOLERANCE
            );
        }
    }

    #[test]
    fn registration_rejects_duplicates_and_inconsistent_sources() {
        let mut reg = ProblemRegistry::with_defaults();
        assert!(matches!(
            reg.register("paper", "", paper_solution()),
            Err(RegistryError::Duplicate(_))
        ));
        let wrong = ExactSolution::new(|x, y| x * y * (1.0 - x), |_, _| [0.0, 0.0], |_, _| 1.0);
        match reg.register("wrong", "", wrong) {
            Err(RegistryError::Inconsistent { deviation, .. }) => assert!(deviation > 0.5),
            other => panic!("expected rejection, got {other:?}"),
        }
        assert!(reg.get("wrong").is_none());
        reg.register("sep2", "", separable_solution()).unwrap();
        assert!(reg.get("sep2").is_some());
    }

    #[test]
    fn config_defaults_and_validation() {
        let reg = ProblemRegistry::with_defaults();
        let c = StudyConfig::default();
        c.validate(&reg).unwrap();
        let parsed =
            StudyConfig::from_json(r#"{"k": [2], "levels": [1, 2], "solver": "iterative"}"#)
                .unwrap();
        assert_eq!(parsed.k, vec![2]);
        assert_eq!(parsed.solver, SolverKind::Iterative);
        assert_eq!(parsed.problem, "paper");
        assert!(StudyConfig::from_json(r#"{"bogus": 1}"#).is_err());
        for bad in [
            r#"{"k": [13]}"#,
            r#"{"k": []}"#,
            r#"{"levels": [3, 2]}"#,
            r#"{"levels": [0]}"#,
            r#"{"problem": "nope"}"#,
            r#"{"tol": 1e-16}"#,
            r#"{"k": [4], "load_quad": 4}"#,
        ] {
            let c = StudyConfig::from_json(bad).unwrap();
            let err = c.validate(&reg).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn csv_format() {
        let levels = vec![
            LevelErrors {
                n: 2,
                h: 0.5,
                e_g: 1e-2,
                e_l: 1e-3,
                e_n: 1e-4,
                l2: 1e-3,
                h1: 1e-2,
                residual: 1e-16,
            },
            LevelErrors {
                n: 4,
                h: 0.25,
                e_g: 2.5e-3,
                e_l: 1e-4,
                e_n: 5e-13,
                l2: 1e-4,
                h1: 5e-3,
                residual: 0.0,
            },
        ];
        let csv = csv_table(&rate_table(levels).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "2,5.00000e-1,1.00000e-2,1.00000e-3,1.00000e-4,1.00000e-3,1.00000e-2,,,,1.00000e-16"
        );
        let cells: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(cells[7], "2.00000e0");
        assert_eq!(cells[9], "");
    }
}
