//! Experiment runner: flop model, error metrics, timed off-line/on-line
//! phases and CSV/SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deim::{build_deim_set_with, max_over_time, term_rank, DeimSet};
use crate::error::{check_len, Result, RomError};
use crate::grid::{parse_grid_spec, Grid, PhysicalConstants};
use crate::linsolve::LinearSolverKind;
use crate::operators::build_operators;
use crate::pod::{build_state_bases, ModeSelector, PodBasis};
use crate::rom::{
    build_tensor_coefficients, run_rom, standard_pod_nonlinear, tensorial_nonlinear, ReducedSpace, ReducedState,
    RomEngine, RomMode, TensorCoefficients,
};
use crate::solver::{run_full, RecordFlags, SnapshotSet, SolverConfig};
use crate::swe::{grammeltvedt_initial_state, CoriolisField, FieldState, NonlinearTerm, Var};

/// `(n, k, m, p)` configurations of the standard operation-count table.
pub const FLOP_CASES: [(u64, u64, u64, u32); 8] = [
    (1_000, 10, 10, 2),
    (1_000, 10, 10, 3),
    (1_000, 10, 10, 4),
    (10_000, 30, 50, 2),
    (10_000, 30, 50, 3),
    (100_000, 50, 100, 2),
    (100_000, 50, 100, 3),
    (100_000, 50, 100, 4),
];

/// Operation count of one reduced nonlinear-term evaluation of degree `p`.
pub fn flop_count(mode: RomMode, n: u64, k: u64, m: Option<u64>, p: u32) -> Result<u64> {
    if n == 0 || k == 0 || p < 2 {
        return Err(RomError::InvalidInput(format!("flop model needs n, k >= 1 and p >= 2 (n={n}, k={k}, p={p})")));
    }
    let p64 = p as u64;
    Ok(match mode {
        RomMode::StandardPod => p64 * k * n + (p64 - 1) * n + k * n,
        RomMode::PodDeim => {
            let m = m
                .filter(|&m| m >= 1)
                .ok_or_else(|| RomError::InvalidInput("the POD/DEIM flop count needs m >= 1".into()))?;
            p64 * k * m + (p64 - 1) * m + k * m
        }
        RomMode::TensorialPod => 3 * k.pow(p + 1) - k,
    })
}

/// `(1/Nt) sum_t |full_t - rom_t| / |full_t|` over the columns.
pub fn relative_error_series(full: &DMatrix<f64>, rom: &DMatrix<f64>) -> Result<f64> {
    check_len("trajectory rows", full.nrows(), rom.nrows())?;
    check_len("trajectory columns", full.ncols(), rom.ncols())?;
    if full.ncols() == 0 {
        return Err(RomError::InvalidInput("empty trajectory".into()));
    }
    let mut sum = 0.0;
    for t in 0..full.ncols() {
        let reference = full.column(t).norm();
        if reference == 0.0 {
            return Err(RomError::ZeroNormReference(t));
        }
        sum += (full.column(t) - rom.column(t)).norm() / reference;
    }
    Ok(sum / full.ncols() as f64)
}

pub fn relative_errors(full: &[DMatrix<f64>; 3], rom: &[DMatrix<f64>; 3]) -> Result<[f64; 3]> {
    Ok([
        relative_error_series(&full[0], &rom[0])?,
        relative_error_series(&full[1], &rom[1])?,
        relative_error_series(&full[2], &rom[2])?,
    ])
}

/// Root mean square difference of every variable.
pub fn rmse_final(full: &FieldState, rom: &FieldState) -> Result<[f64; 3]> {
    check_len("state length", full.len(), rom.len())?;
    let n = full.len().max(1) as f64;
    Ok(Var::ALL.map(|v| ((full.field(v) - rom.field(v)).norm_squared() / n).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[serde(rename = "24h")]
    Day,
    #[serde(rename = "3h")]
    ThreeHours,
    Custom { dt: f64, nt: usize },
}

impl Window {
    pub fn dt(self) -> f64 {
        match self {
            Window::Day => 960.0,
            Window::ThreeHours => 120.0,
            Window::Custom { dt, .. } => dt,
        }
    }

    pub fn nt(self) -> usize {
        match self {
            Window::Day | Window::ThreeHours => 91,
            Window::Custom { nt, .. } => nt,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "24h" => Ok(Window::Day),
            "3h" => Ok(Window::ThreeHours),
            _ => Err(RomError::Config(format!("unknown window {s:?} (expected 24h or 3h)"))),
        }
    }
}

/// A benchmark mode: the full model or one of the reduced models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RunMode {
    Full,
    Rom(RomMode),
}

impl RunMode {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(RunMode::Full);
        }
        RomMode::parse(s)
            .map(RunMode::Rom)
            .ok_or_else(|| RomError::Config(format!("unknown mode {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Full => "full",
            RunMode::Rom(m) => m.name(),
        }
    }
}

fn default_window() -> Window {
    Window::ThreeHours
}

fn default_true() -> bool {
    true
}

fn default_grids() -> Vec<String> {
    vec!["31x23".into()]
}

fn default_modes() -> Vec<String> {
    RomMode::ALL.iter().map(|m| m.name().to_string()).collect()
}

fn default_m() -> Vec<usize> {
    vec![70]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_grids")]
    pub grids: Vec<String>,
    #[serde(default = "default_window")]
    pub window: Window,
    /// Overrides the window's time step.
    pub dt: Option<f64>,
    /// Overrides the window's step count.
    pub nt: Option<usize>,
    /// Fixed number of modes; takes precedence over `gamma`.
    pub k: Option<usize>,
    pub gamma: Option<f64>,
    #[serde(default = "default_m")]
    pub m: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_true")]
    pub centering: bool,
    #[serde(default = "default_true")]
    pub timed_serial: bool,
    #[serde(default)]
    pub linear_solver: LinearSolverKind,
    #[serde(default)]
    pub literal_height: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grids: default_grids(),
            window: default_window(),
            dt: None,
            nt: None,
            k: None,
            gamma: None,
            m: default_m(),
            modes: default_modes(),
            seed: 0,
            out: default_out(),
            centering: true,
            timed_serial: true,
            linear_solver: LinearSolverKind::default(),
            literal_height: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| RomError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RomError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn run_modes(&self) -> Result<Vec<RunMode>> {
        self.modes.iter().map(|s| RunMode::parse(s)).collect()
    }

    pub fn grid_list(&self) -> Result<Vec<Grid>> {
        let c = PhysicalConstants::default();
        self.grids
            .iter()
            .map(|g| {
                let (nx, ny) = parse_grid_spec(g).map_err(|e| RomError::Config(e.to_string()))?;
                Grid::new(nx, ny, c.length_x, c.length_y).map_err(|e| RomError::Config(e.to_string()))
            })
            .collect()
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt.unwrap_or(self.window.dt()),
            nt: self.nt.unwrap_or(self.window.nt()),
            linear_solver: self.linear_solver,
            ..Default::default()
        }
    }

    pub fn selector(&self) -> ModeSelector {
        match (self.k, self.gamma) {
            (Some(k), _) => ModeSelector::Fixed(k),
            (None, Some(g)) => ModeSelector::Energy(g),
            (None, None) => ModeSelector::Fixed(20),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let modes = self.run_modes()?;
        self.grid_list()?;
        if self.grids.is_empty() {
            return Err(RomError::Config("no grid sizes given".into()));
        }
        if modes.contains(&RunMode::Rom(RomMode::PodDeim)) && self.m.is_empty() {
            return Err(RomError::Config("pod-deim needs at least one m".into()));
        }
        if self.m.contains(&0) {
            return Err(RomError::Config("m must be positive".into()));
        }
        if self.k == Some(0) {
            return Err(RomError::Config("k must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(RomError::Config(format!("gamma must lie in (0, 1], got {g}")));
            }
        }
        self.solver_config().validate().map_err(|e| RomError::Config(e.to_string()))
    }
}

/// One row of `run_report.csv`. Times in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub grid: String,
    pub n: usize,
    pub mode: String,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub status: String,
    pub detail: String,
    /// Full model run that produced the snapshots.
    pub snapshot_s: f64,
    /// SVD of the state snapshots.
    pub pod_s: f64,
    /// Coefficient tensors (projected or DEIM-sampled).
    pub tensor_s: f64,
    /// SVD of the nonlinear-term snapshots.
    pub deim_svd_s: f64,
    /// Interpolation points and projectors.
    pub deim_points_s: f64,
    pub offline_s: f64,
    pub online_s: f64,
    /// Time spent in the nonlinear terms during the on-line run.
    pub nonlinear_s: f64,
    /// Lifting and metrics.
    pub post_s: f64,
    pub total_s: f64,
    pub err_u: Option<f64>,
    pub err_v: Option<f64>,
    pub err_phi: Option<f64>,
    pub rmse_u: Option<f64>,
    pub rmse_v: Option<f64>,
    pub rmse_phi: Option<f64>,
    pub flops: Option<u64>,
}

impl RunReport {
    pub fn new(grid: &Grid, mode: RunMode) -> Self {
        Self {
            grid: format!("{}x{}", grid.nx, grid.ny),
            n: grid.n(),
            mode: mode.name().into(),
            k: None,
            m: None,
            status: "ok".into(),
            detail: String::new(),
            snapshot_s: 0.0,
            pod_s: 0.0,
            tensor_s: 0.0,
            deim_svd_s: 0.0,
            deim_points_s: 0.0,
            offline_s: 0.0,
            online_s: 0.0,
            nonlinear_s: 0.0,
            post_s: 0.0,
            total_s: 0.0,
            err_u: None,
            err_v: None,
            err_phi: None,
            rmse_u: None,
            rmse_v: None,
            rmse_phi: None,
            flops: None,
        }
    }

    pub fn fail(&mut self, e: &RomError) {
        self.status = match e {
            RomError::NonConvergence { .. } => "nonconvergence",
            RomError::RankExceeded { .. } => "rank-exceeded",
            _ => "error",
        }
        .into();
        self.detail = e.to_string();
    }

    pub fn errors(&self) -> Option<[f64; 3]> {
        Some([self.err_u?, self.err_v?, self.err_phi?])
    }
}

/// One row of `spectra.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub grid: String,
    /// `variable` or `term`.
    pub kind: String,
    pub name: String,
    pub index: usize,
    pub singular_value: f64,
}

/// One row of `deim_points.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeimPointRecord {
    pub grid: String,
    pub m: usize,
    pub term: String,
    /// Selection order, starting at 1.
    pub order: usize,
    pub node: usize,
    pub ix: usize,
    pub iy: usize,
    pub x_m: f64,
    pub y_m: f64,
    /// Maximum over time of `|term|` at this node.
    pub max_abs: f64,
    /// Largest value of that field over the whole grid.
    pub field_max: f64,
}

/// One row of `deim_fields.csv`: the max-over-time field of a term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeimFieldRecord {
    pub grid: String,
    pub term: String,
    pub node: usize,
    pub ix: usize,
    pub iy: usize,
    pub max_abs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub reports: Vec<RunReport>,
    pub spectra: Vec<SpectrumRecord>,
    pub deim_points: Vec<DeimPointRecord>,
    pub deim_fields: Vec<DeimFieldRecord>,
}

impl ExperimentResult {
    fn extend(&mut self, other: ExperimentResult) {
        self.reports.extend(other.reports);
        self.spectra.extend(other.spectra);
        self.deim_points.extend(other.deim_points);
        self.deim_fields.extend(other.deim_fields);
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

struct GridContext {
    ops: crate::operators::DifferenceOperators,
    coriolis: CoriolisField,
    ic: FieldState,
}

fn grid_context(grid: Grid, literal: bool) -> Result<GridContext> {
    let consts = PhysicalConstants::default();
    let ops = build_operators(&grid);
    let coriolis = CoriolisField::new(&grid, &consts);
    let ic = grammeltvedt_initial_state(&ops, &coriolis, &consts, literal)?;
    Ok(GridContext { ops, coriolis, ic })
}

/// Runs a reduced model from `ic` and fills the timing and error fields of
/// `report` against the recorded full trajectory.
pub fn evaluate_rom(
    report: &mut RunReport,
    engine: &RomEngine,
    ic: &FieldState,
    full: &SnapshotSet,
    cfg: &SolverConfig,
) -> Result<()> {
    let states = full
        .states
        .as_ref()
        .ok_or_else(|| RomError::InvalidInput("reference snapshots hold no states".into()))?;
    let t = Instant::now();
    let z0 = engine.space.project_initial(ic)?;
    let run = run_rom(engine, &z0, cfg);
    report.online_s = secs(t);
    let run = run?;
    report.nonlinear_s = run.timings.nonlinear;
    let t = Instant::now();
    let lifted = run.lift(&engine.space);
    let errs = relative_errors(states, &lifted)?;
    let final_rom = engine.space.lift(&run.final_state());
    let final_full = full.state_at(full.nt() - 1).expect("states recorded");
    let rmse = rmse_final(&final_full, &final_rom)?;
    report.post_s = secs(t);
    [report.err_u, report.err_v, report.err_phi] = errs.map(Some);
    [report.rmse_u, report.rmse_v, report.rmse_phi] = rmse.map(Some);
    Ok(())
}

pub fn finish(report: &mut RunReport) {
    report.offline_s = report.pod_s + report.tensor_s + report.deim_svd_s + report.deim_points_s;
}

/// Everything for one grid: full run, bases, each requested reduced model.
pub fn run_grid(grid: Grid, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let modes = cfg.run_modes()?;
    let solver_cfg = cfg.solver_config();
    let ctx = grid_context(grid, cfg.literal_height)?;
    let grid_name = format!("{}x{}", grid.nx, grid.ny);
    let mut result = ExperimentResult::default();

    let want_deim = modes.contains(&RunMode::Rom(RomMode::PodDeim));
    let record = RecordFlags {
        states: true,
        nonlinear: want_deim,
    };
    let t = Instant::now();
    let full = match run_full(&ctx.ic, &solver_cfg, &ctx.ops, &ctx.coriolis, record) {
        Ok(f) => f,
        Err(e) => {
            let mut r = RunReport::new(&grid, RunMode::Full);
            r.fail(&e);
            result.reports.push(r);
            return Ok(result);
        }
    };
    let snapshot_s = secs(t);
    if modes.contains(&RunMode::Full) {
        let mut r = RunReport::new(&grid, RunMode::Full);
        r.online_s = snapshot_s;
        r.total_s = snapshot_s;
        result.reports.push(r);
    }
    let rom_modes: Vec<RomMode> = modes
        .iter()
        .filter_map(|m| match m {
            RunMode::Rom(r) => Some(*r),
            RunMode::Full => None,
        })
        .collect();
    if rom_modes.is_empty() {
        return Ok(result);
    }

    let states = full.snapshots.states.as_ref().expect("states recorded");
    let t = Instant::now();
    let bases = build_state_bases(states, cfg.selector(), cfg.centering);
    let pod_s = secs(t);
    let bases = match bases {
        Ok(b) => b,
        Err(e) => {
            for mode in rom_modes {
                let mut r = RunReport::new(&grid, RunMode::Rom(mode));
                r.snapshot_s = snapshot_s;
                r.fail(&e);
                result.reports.push(r);
            }
            return Ok(result);
        }
    };
    for (v, b) in Var::ALL.iter().zip(&bases) {
        push_spectrum(&mut result, &grid_name, "variable", v.name(), &b.spectrum);
    }
    let k = bases[0].k();
    let space = ReducedSpace::new(bases, &ctx.ops, &ctx.coriolis)?;

    let mut projected = None;
    let mut projected_s = 0.0;
    for mode in rom_modes {
        match mode {
            RomMode::StandardPod | RomMode::TensorialPod => {
                // built once and shared; each report is charged the full build
                if projected.is_none() {
                    let t = Instant::now();
                    projected = Some(build_tensor_coefficients(&space));
                    projected_s = secs(t);
                }
                let start = Instant::now();
                let mut r = RunReport::new(&grid, RunMode::Rom(mode));
                r.k = Some(k);
                r.snapshot_s = snapshot_s;
                r.pod_s = pod_s;
                r.tensor_s = projected_s;
                let tensors = projected.clone().expect("tensors built");
                let engine = if mode == RomMode::StandardPod {
                    RomEngine::standard(space.clone(), tensors)
                } else {
                    RomEngine::tensorial(space.clone(), tensors)
                };
                if let Err(e) = evaluate_rom(&mut r, &engine, &ctx.ic, &full.snapshots, &solver_cfg) {
                    r.fail(&e);
                }
                r.flops = flop_count(mode, grid.n() as u64, k as u64, None, 2).ok();
                finish(&mut r);
                r.total_s = secs(start) + snapshot_s + pod_s + projected_s;
                result.reports.push(r);
            }
            RomMode::PodDeim => {
                let terms = full.snapshots.nonlinear.as_ref().expect("nonlinear terms recorded");
                let t = Instant::now();
                let ranks = terms.each_ref().map(term_rank);
                let deim_svd_s = secs(t);
                for term in NonlinearTerm::ALL {
                    push_spectrum(
                        &mut result,
                        &grid_name,
                        "term",
                        term.name(),
                        &crate::deim::term_basis(&terms[term.index()]).1,
                    );
                    push_fields(&mut result, &grid, term, &terms[term.index()]);
                }
                for &m in &cfg.m {
                    let start = Instant::now();
                    let mut r = RunReport::new(&grid, RunMode::Rom(mode));
                    r.k = Some(k);
                    r.m = Some(m);
                    r.snapshot_s = snapshot_s;
                    r.pod_s = pod_s;
                    r.deim_svd_s = deim_svd_s;
                    let ms = ranks.map(|rank| m.min(rank));
                    let t = Instant::now();
                    match build_deim_set_with(&space, terms, ms) {
                        Ok(set) => {
                            r.deim_points_s = secs(t);
                            if ms.iter().any(|&x| x < m) {
                                r.detail = format!("m capped at term ranks {ms:?}");
                            }
                            push_points(&mut result, &grid, m, &set, terms);
                            let t = Instant::now();
                            let engine = RomEngine::pod_deim(space.clone(), set);
                            r.tensor_s = secs(t);
                            if let Err(e) = evaluate_rom(&mut r, &engine, &ctx.ic, &full.snapshots, &solver_cfg) {
                                r.fail(&e);
                            }
                        }
                        Err(e) => r.fail(&e),
                    }
                    r.flops = flop_count(mode, grid.n() as u64, k as u64, Some(m as u64), 2).ok();
                    finish(&mut r);
                    r.total_s = secs(start) + snapshot_s + pod_s + deim_svd_s;
                    result.reports.push(r);
                }
            }
        }
    }
    Ok(result)
}

fn push_spectrum(result: &mut ExperimentResult, grid: &str, kind: &str, name: &str, spectrum: &[f64]) {
    let values: Vec<f64> = if kind == "variable" {
        spectrum.iter().map(|l| l.max(0.0).sqrt()).collect()
    } else {
        spectrum.to_vec()
    };
    for (i, s) in values.into_iter().enumerate() {
        result.spectra.push(SpectrumRecord {
            grid: grid.into(),
            kind: kind.into(),
            name: name.into(),
            index: i + 1,
            singular_value: s,
        });
    }
}

fn push_fields(result: &mut ExperimentResult, grid: &Grid, term: NonlinearTerm, snaps: &DMatrix<f64>) {
    let field = max_over_time(snaps);
    let name = format!("{}x{}", grid.nx, grid.ny);
    for (node, &v) in field.iter().enumerate() {
        result.deim_fields.push(DeimFieldRecord {
            grid: name.clone(),
            term: term.name().into(),
            node,
            ix: node % grid.nx,
            iy: node / grid.nx,
            max_abs: v,
        });
    }
}

fn push_points(result: &mut ExperimentResult, grid: &Grid, m: usize, set: &DeimSet, terms: &[DMatrix<f64>; 6]) {
    let name = format!("{}x{}", grid.nx, grid.ny);
    for op in &set.operators {
        let field = max_over_time(&terms[op.term.index()]);
        let field_max = field.max();
        for (order, &node) in op.points.iter().enumerate() {
            let (ix, iy) = grid.coords(node);
            result.deim_points.push(DeimPointRecord {
                grid: name.clone(),
                m,
                term: op.term.name().into(),
                order: order + 1,
                node,
                ix,
                iy,
                x_m: grid.x(ix),
                y_m: grid.y(iy),
                max_abs: field[node],
                field_max,
            });
        }
    }
}

/// Runs every grid of the configuration; failures become report rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let grids = cfg.grid_list()?;
    let mut out = ExperimentResult::default();
    if cfg.timed_serial || grids.len() < 2 {
        for g in grids {
            out.extend(run_grid(g, cfg)?);
        }
    } else {
        let results: Vec<Result<ExperimentResult>> = std::thread::scope(|s| {
            let handles: Vec<_> = grids.iter().map(|&g| s.spawn(move || run_grid(g, cfg))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            out.extend(r?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotFormat {
    Csv,
    SvgLine,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Reads back the CSV files written by [`emit_plot_data`]; missing files are empty.
pub fn load_result(dir: &Path) -> Result<ExperimentResult> {
    Ok(ExperimentResult {
        reports: read_csv(&dir.join("run_report.csv"))?,
        spectra: read_csv(&dir.join("spectra.csv"))?,
        deim_points: read_csv(&dir.join("deim_points.csv"))?,
        deim_fields: read_csv(&dir.join("deim_fields.csv"))?,
    })
}

fn csv_err(e: csv::Error) -> RomError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RomError::Io(io),
        other => RomError::Format(format!("{other:?}")),
    }
}

/// One row of `timing_vs_n.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub n: usize,
    pub grid: String,
    pub mode: String,
    pub m: Option<usize>,
    pub offline_s: f64,
    pub online_s: f64,
}

pub fn timing_records(reports: &[RunReport]) -> Vec<TimingRecord> {
    let mut rows: Vec<TimingRecord> = reports
        .iter()
        .filter(|r| r.status == "ok")
        .map(|r| TimingRecord {
            n: r.n,
            grid: r.grid.clone(),
            mode: r.mode.clone(),
            m: r.m,
            offline_s: r.offline_s,
            online_s: r.online_s,
        })
        .collect();
    rows.sort_by(|a, b| (a.n, &a.mode, a.m).cmp(&(b.n, &b.mode, b.m)));
    rows
}

/// Writes the result files into `dir`; returns their paths.
pub fn emit_plot_data(result: &ExperimentResult, format: PlotFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    if result.reports.is_empty() {
        return Err(RomError::NothingToPlot);
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        PlotFormat::Csv => {
            let files: [(&str, &dyn Fn(&Path) -> Result<()>); 5] = [
                ("run_report.csv", &|p| write_csv(p, &result.reports)),
                ("spectra.csv", &|p| write_csv(p, &result.spectra)),
                ("deim_points.csv", &|p| write_csv(p, &result.deim_points)),
                ("deim_fields.csv", &|p| write_csv(p, &result.deim_fields)),
                ("timing_vs_n.csv", &|p| write_csv(p, &timing_records(&result.reports))),
            ];
            for (name, f) in files {
                let p = dir.join(name);
                f(&p)?;
                written.push(p);
            }
        }
        PlotFormat::SvgLine => {
            let p = dir.join("timing_vs_n.svg");
            fs::write(&p, timing_svg(&timing_records(&result.reports)))?;
            written.push(p);
            let p = dir.join("spectra.svg");
            fs::write(&p, spectra_svg(&result.spectra))?;
            written.push(p);
        }
    }
    Ok(written)
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// Minimal line chart; `log_x`/`log_y` plot log10 of the coordinate.
fn line_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_x: bool, log_y: bool) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let xl = if log_x { format!("log10 {xlabel}") } else { xlabel.to_string() };
    let yl = if log_y { format!("log10 {ylabel}") } else { ylabel.to_string() };
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xl}</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{yl}</text>"#, h / 2.0, h / 2.0);
    for (val, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{val:.3}</text>"#, sx(val), h - pad + 15.0);
    }
    for val in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{val:.3}</text>"#, pad - 5.0, sy(val) + 4.0);
    }
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| (tx(x), ty(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - pad - 150.0,
            pad + 14.0 * i as f64,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

fn timing_svg(rows: &[TimingRecord]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let label = match r.m {
            Some(m) => format!("{} m={m}", r.mode),
            None => r.mode.clone(),
        };
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((r.n as f64, r.online_s)),
            None => series.push(Series {
                label,
                points: vec![(r.n as f64, r.online_s)],
            }),
        }
    }
    line_svg("On-line time vs n", "n", "seconds", &series, true, true)
}

fn spectra_svg(rows: &[SpectrumRecord]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let label = format!("{} {} {}", r.grid, r.kind, r.name);
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((r.index as f64, r.singular_value)),
            None => series.push(Series {
                label,
                points: vec![(r.index as f64, r.singular_value)],
            }),
        }
    }
    line_svg("Singular values", "index", "singular value", &series, false, true)
}

/// Random orthonormal bases of size `k` on `grid` (zero means).
pub fn random_space(grid: Grid, k: usize, seed: u64) -> Result<ReducedSpace> {
    let consts = PhysicalConstants::default();
    let ops = build_operators(&grid);
    let coriolis = CoriolisField::new(&grid, &consts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = [(); 3].map(|_| {
        let a = DMatrix::from_fn(grid.n(), k, |_, _| rng.random_range(-1.0..1.0));
        PodBasis {
            trial: a.qr().q(),
            test: None,
            mean: DVector::zeros(grid.n()),
            spectrum: Vec::new(),
            gamma: None,
        }
    });
    ReducedSpace::new(bases, &ops, &coriolis)
}

pub fn random_reduced_state(k: usize, rng: &mut ChaCha8Rng) -> ReducedState {
    let mut r = || DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
    ReducedState {
        u: r(),
        v: r(),
        phi: r(),
        time: 0.0,
    }
}

/// Median seconds per call of `f`, from `batches` batches sized to run at
/// least `min_batch_s` each.
pub fn median_time(mut f: impl FnMut(), batches: usize, min_batch_s: f64) -> f64 {
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        if secs(t) >= min_batch_s || reps >= 1 << 20 {
            break;
        }
        reps *= 2;
    }
    let mut samples: Vec<f64> = (0..batches.max(1))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            secs(t) / reps as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Per-evaluation cost of all six reduced nonlinear terms at one grid size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub n: usize,
    pub k: usize,
    pub standard_s: f64,
    pub tensorial_s: f64,
}

/// Nonlinear-phase timings on several grids, measured round-robin so that
/// background load hits every grid alike. Each entry is the median of
/// `rounds` batches, after a few untimed warm-up rounds.
pub fn nonlinear_phase_sweep(grids: &[Grid], k: usize, seed: u64, rounds: usize) -> Result<Vec<PhaseTiming>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let z = random_reduced_state(k, &mut rng);
    let setups = grids
        .iter()
        .map(|&g| {
            let space = random_space(g, k, seed)?;
            let tensors = build_tensor_coefficients(&space);
            Ok((space, tensors))
        })
        .collect::<Result<Vec<_>>>()?;
    let standard = |s: &ReducedSpace| {
        let v: f64 = NonlinearTerm::ALL
            .iter()
            .map(|&term| standard_pod_nonlinear(term, &z, s).expect("sizes match")[0])
            .sum();
        std::hint::black_box(v);
    };
    let tensorial = |t: &TensorCoefficients| {
        let v: f64 = NonlinearTerm::ALL
            .iter()
            .map(|&term| tensorial_nonlinear(term, &z, t).expect("sizes match")[0])
            .sum();
        std::hint::black_box(v);
    };
    let standard_s = round_robin_median(&setups, rounds, |(s, _)| standard(s));
    let tensorial_s = round_robin_median(&setups, rounds, |(_, t)| tensorial(t));
    Ok(grids
        .iter()
        .zip(standard_s.into_iter().zip(tensorial_s))
        .map(|(g, (standard_s, tensorial_s))| PhaseTiming {
            n: g.n(),
            k,
            standard_s,
            tensorial_s,
        })
        .collect())
}

/// Median per-call time of `f` on each item. The items are timed in turn in
/// short batches, so slow or fast spells of the machine fall on all of them.
fn round_robin_median<T>(items: &[T], rounds: usize, f: impl Fn(&T)) -> Vec<f64> {
    // batch sizes are fixed once so every round does the same work
    let reps: Vec<usize> = items.iter().map(|x| calibrate(|| f(x), 0.002)).collect();
    let warmup = (rounds / 4).max(2);
    let mut samples = vec![Vec::with_capacity(rounds); items.len()];
    for round in 0..warmup + rounds.max(1) {
        for (i, x) in items.iter().enumerate() {
            let clock = Instant::now();
            (0..reps[i]).for_each(|_| f(x));
            if round >= warmup {
                samples[i].push(secs(clock) / reps[i] as f64);
            }
        }
    }
    samples
        .into_iter()
        .map(|mut s| {
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        })
        .collect()
}

/// Repetitions of `f` that take at least `min_s` seconds.
fn calibrate(mut f: impl FnMut(), min_s: f64) -> usize {
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        if secs(t) >= min_s || reps >= 1 << 20 {
            return reps;
        }
        reps *= 2;
    }
}

/// Off-line tensor construction: summing over all `n` rows versus over `m` sampled rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildTiming {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub projected_s: f64,
    pub sampled_s: f64,
}

pub fn tensor_build_timing(grid: Grid, k: usize, m: usize, seed: u64, batches: usize) -> Result<BuildTiming> {
    let space = random_space(grid, k, seed)?;
    // a random orthonormal term basis stands in for real snapshots
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1);
    let v = DMatrix::from_fn(grid.n(), m, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let points = crate::deim::deim_select_points(&v)?;
    let ops: Vec<_> = NonlinearTerm::ALL
        .iter()
        .map(|&t| crate::deim::build_deim_operator(t, &space, v.clone(), points.clone()))
        .collect::<Result<_>>()?;
    let set = DeimSet {
        operators: ops,
        spectra: Vec::new(),
    };
    let projected_s = median_time(
        || {
            std::hint::black_box(build_tensor_coefficients(&space));
        },
        batches,
        0.02,
    );
    let sampled_s = median_time(
        || {
            std::hint::black_box(set.tensor_coefficients(&space.coriolis));
        },
        batches,
        0.02,
    );
    Ok(BuildTiming {
        n: grid.n(),
        k,
        m,
        projected_s,
        sampled_s,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        let dx = x.ln() - mx;
        (a + dx * (y.ln() - my), b + dx * dx)
    });
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flop_rows() {
        assert_eq!(flop_count(RomMode::StandardPod, 1000, 10, None, 2).unwrap(), 31_000);
        assert_eq!(flop_count(RomMode::PodDeim, 100_000, 50, Some(100), 2).unwrap(), 15_100);
        assert_eq!(flop_count(RomMode::TensorialPod, 1, 30, None, 3).unwrap(), 2_429_970);
        assert_eq!(flop_count(RomMode::TensorialPod, 1, 50, None, 4).unwrap(), 937_499_950);
        assert!(flop_count(RomMode::PodDeim, 10, 2, None, 2).is_err());
        assert!(flop_count(RomMode::StandardPod, 10, 2, None, 1).is_err());
    }

    #[test]
    fn relative_error_cases() {
        let a = DMatrix::from_fn(4, 3, |i, j| 1.0 + i as f64 + 2.0 * j as f64);
        assert_eq!(relative_error_series(&a, &a).unwrap(), 0.0);
        assert!((relative_error_series(&a, &(&a * 2.0)).unwrap() - 1.0).abs() < 1e-15);
        let mut z = a.clone();
        z.column_mut(1).fill(0.0);
        assert!(matches!(relative_error_series(&z, &a), Err(RomError::ZeroNormReference(1))));
        assert!(relative_error_series(&a, &DMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn rmse_constant_offset() {
        let s = FieldState::at_rest(5, 3.0);
        let mut t = s.clone();
        t.u.add_scalar_mut(-0.25);
        let r = rmse_final(&s, &t).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-15 && r[1] == 0.0 && r[2] == 0.0);
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_toml_str("grids = [\"9x7\"]\nwindow = \"24h\"\nk = 5\nmodes = [\"full\"]\n").unwrap();
        assert_eq!(cfg.solver_config().dt, 960.0);
        assert_eq!(cfg.selector(), ModeSelector::Fixed(5));
        assert!(ExperimentConfig::from_toml_str("modes = [\"bogus\"]").is_err());
        assert!(ExperimentConfig::from_toml_str("modes = [\"pod-deim\"]\nm = []").is_err());
        assert!(ExperimentConfig::from_toml_str("colour = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("grids = [\"2x7\"]").is_err());
        let custom = ExperimentConfig::from_toml_str("window = { custom = { dt = 60.0, nt = 4 } }").unwrap();
        assert_eq!(custom.solver_config().nt, 4);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.5))).collect();
        assert!((loglog_slope(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn nothing_to_plot() {
        let dir = std::env::temp_dir();
        assert!(matches!(
            emit_plot_data(&ExperimentResult::default(), PlotFormat::Csv, &dir),
            Err(RomError::NothingToPlot)
        ));
    }
}
