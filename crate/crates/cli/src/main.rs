use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use swe_rom::bench::{
    emit_plot_data, evaluate_rom, finish, flop_count, load_result, run_experiment, ExperimentConfig, PlotFormat,
    RunMode, RunReport, Window, FLOP_CASES,
};
use swe_rom::deim::{build_deim_set_with, term_rank, DeimSet};
use swe_rom::grid::PhysicalConstants;
use swe_rom::io;
use swe_rom::operators::build_operators;
use swe_rom::pod::build_state_bases;
use swe_rom::rom::{build_tensor_coefficients, ReducedSpace, RomEngine, RomMode};
use swe_rom::solver::{run_full, RecordFlags};
use swe_rom::swe::{grammeltvedt_initial_state, CoriolisField, NonlinearTerm, Var};
use swe_rom::{Result, RomError};

#[derive(Parser)]
#[command(name = "swe-rom", version, about = "Reduced-order models of the 2D shallow water equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full model and write a snapshot file.
    RunFull(Common),
    /// Build bases, tensors and DEIM operators from a snapshot file.
    BuildRom(Common),
    /// Run a reduced model from previously built artifacts.
    RunRom(Common),
    /// Full experiment sweep with CSV and SVG output.
    Bench(Common),
    /// Print the operation-count model.
    Flops(FlopArgs),
    /// Render plots from the CSV files of a previous bench run.
    ExportPlots(PlotArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid size such as 31x23; repeat or comma-separate for a sweep.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<String>,
    /// Integration window: 24h (dt 960 s) or 3h (dt 120 s), 91 steps each.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    nt: Option<usize>,
    /// Number of POD modes.
    #[arg(long)]
    k: Option<usize>,
    /// Energy fraction used to pick k when --k is absent.
    #[arg(long)]
    gamma: Option<f64>,
    /// DEIM point counts, comma-separated.
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    /// full, standard-pod, tensorial-pod, pod-deim; comma-separated.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run sweep entries one after another (timing without contention).
    #[arg(long)]
    timed_serial: bool,
    /// Snapshot file (defaults to OUT/snapshots.swesnap).
    #[arg(long)]
    snapshots: Option<PathBuf>,
}

#[derive(Args)]
struct FlopArgs {
    /// Method; all three when absent.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    k: Option<u64>,
    #[arg(long)]
    m: Option<u64>,
    #[arg(long, default_value_t = 2)]
    p: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    SvgLine,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding the CSV files of a bench run.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "svg-line")]
    format: Format,
}

fn config_from(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if !c.grid.is_empty() {
        cfg.grids = c.grid.clone();
    }
    if let Some(w) = &c.window {
        cfg.window = Window::parse(w)?;
    }
    if c.dt.is_some() {
        cfg.dt = c.dt;
    }
    if c.nt.is_some() {
        cfg.nt = c.nt;
    }
    if c.k.is_some() {
        cfg.k = c.k;
    }
    if c.gamma.is_some() {
        cfg.gamma = c.gamma;
        if c.k.is_none() {
            cfg.k = None;
        }
    }
    if !c.m.is_empty() {
        cfg.m = c.m.clone();
    }
    if !c.mode.is_empty() {
        cfg.modes = c.mode.clone();
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.timed_serial {
        cfg.timed_serial = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn snapshot_path(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    c.snapshots.clone().unwrap_or_else(|| cfg.out.join("snapshots.swesnap"))
}

fn basis_path(dir: &Path, v: Var) -> PathBuf {
    dir.join(format!("basis_{}.podbas", v.name()))
}

fn deim_path(dir: &Path, t: NonlinearTerm) -> PathBuf {
    dir.join(format!("deim_{}.deimop", t.name()))
}

fn run_full_cmd(c: &Common) -> Result<()> {
    let cfg = config_from(c)?;
    let grid = cfg.grid_list()?[0];
    let consts = PhysicalConstants::default();
    let ops = build_operators(&grid);
    let coriolis = CoriolisField::new(&grid, &consts);
    let ic = grammeltvedt_initial_state(&ops, &coriolis, &consts, cfg.literal_height)?;
    let solver = cfg.solver_config();
    let run = run_full(&ic, &solver, &ops, &coriolis, RecordFlags::ALL)?;
    std::fs::create_dir_all(&cfg.out)?;
    let path = snapshot_path(c, &cfg);
    io::save_snapshots(&path, &run.snapshots)?;
    let iters: usize = run.steps.iter().map(|s| s.half[0].iterations + s.half[1].iterations).sum();
    let cfl = run.steps.iter().map(|s| s.cfl).fold(0.0, f64::max);
    println!("grid {}x{} n={} dt={} nt={}", grid.nx, grid.ny, grid.n(), solver.dt, solver.nt);
    println!("newton iterations {iters}, max cfl indicator {cfl:.3}, cfl warnings {}", run.cfl_warnings());
    println!(
        "time: total {:.3}s assembly {:.3}s factorization {:.3}s solve {:.3}s",
        run.timings.total, run.timings.assembly, run.timings.factorization, run.timings.solve
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn build_rom_cmd(c: &Common) -> Result<()> {
    let cfg = config_from(c)?;
    let snaps = io::load_snapshots(&snapshot_path(c, &cfg))?;
    let states = snaps
        .states
        .as_ref()
        .ok_or_else(|| RomError::InvalidInput("snapshot file holds no states".into()))?;
    let bases = build_state_bases(states, cfg.selector(), cfg.centering)?;
    let consts = PhysicalConstants::default();
    let ops = build_operators(&snaps.grid);
    let coriolis = CoriolisField::new(&snaps.grid, &consts);
    std::fs::create_dir_all(&cfg.out)?;
    for (v, b) in Var::ALL.iter().zip(&bases) {
        io::save_basis(&basis_path(&cfg.out, *v), *v, b)?;
    }
    let k = bases[0].k();
    let space = ReducedSpace::new(bases, &ops, &coriolis)?;
    io::save_tensors(&cfg.out.join("tensors.tpodcf"), &build_tensor_coefficients(&space))?;
    println!("k = {k}");
    if let (Some(terms), Some(&m)) = (snaps.nonlinear.as_ref(), cfg.m.first()) {
        let ms = terms.each_ref().map(|t| term_rank(t).min(m));
        let set = build_deim_set_with(&space, terms, ms)?;
        for op in &set.operators {
            io::save_deim(&deim_path(&cfg.out, op.term), op)?;
            println!("{}: m = {}, cond(P^T V) = {:.3e}", op.term.name(), op.m(), op.condition);
        }
    }
    println!("wrote artifacts to {}", cfg.out.display());
    Ok(())
}

fn run_rom_cmd(c: &Common) -> Result<()> {
    let cfg = config_from(c)?;
    let mode = match cfg.run_modes()?.first() {
        Some(RunMode::Rom(m)) => *m,
        _ => return Err(RomError::Config("run-rom needs --mode standard-pod, tensorial-pod or pod-deim".into())),
    };
    let snaps = io::load_snapshots(&snapshot_path(c, &cfg))?;
    let grid = snaps.grid;
    let consts = PhysicalConstants::default();
    let ops = build_operators(&grid);
    let coriolis = CoriolisField::new(&grid, &consts);
    let ic = grammeltvedt_initial_state(&ops, &coriolis, &consts, cfg.literal_height)?;
    let mut bases = Vec::new();
    for v in Var::ALL {
        let (tag, b) = io::load_basis(&basis_path(&cfg.out, v))?;
        if tag != v {
            return Err(RomError::Format(format!("basis file for {} holds {}", v.name(), tag.name())));
        }
        bases.push(b);
    }
    let space = ReducedSpace::new(bases.try_into().expect("three bases"), &ops, &coriolis)?;
    let engine = match mode {
        RomMode::PodDeim => {
            let operators = NonlinearTerm::ALL
                .iter()
                .map(|&t| io::load_deim(&deim_path(&cfg.out, t)))
                .collect::<Result<Vec<_>>>()?;
            RomEngine::pod_deim(
                space,
                DeimSet {
                    operators,
                    spectra: Vec::new(),
                },
            )
        }
        RomMode::StandardPod => RomEngine::standard(space, io::load_tensors(&cfg.out.join("tensors.tpodcf"))?),
        RomMode::TensorialPod => RomEngine::tensorial(space, io::load_tensors(&cfg.out.join("tensors.tpodcf"))?),
    };
    let mut solver = cfg.solver_config();
    if c.dt.is_none() && c.window.is_none() && c.config.is_none() {
        solver.dt = snaps.dt;
    }
    if c.nt.is_none() && c.window.is_none() && c.config.is_none() {
        solver.nt = snaps.nt();
    }
    if solver.nt != snaps.nt() {
        return Err(RomError::Config(format!(
            "run-rom compares against {} snapshots but nt = {}",
            snaps.nt(),
            solver.nt
        )));
    }
    let mut report = RunReport::new(&grid, RunMode::Rom(mode));
    report.k = Some(engine.k());
    report.m = engine.deim.as_ref().map(|d| d.operators[0].m());
    evaluate_rom(&mut report, &engine, &ic, &snaps, &solver)?;
    finish(&mut report);
    println!(
        "{} k={} on-line {:.4}s (nonlinear terms {:.4}s)",
        mode.name(),
        engine.k(),
        report.online_s,
        report.nonlinear_s
    );
    let errs = report.errors().expect("errors computed");
    println!("relative error u {:.3e} v {:.3e} phi {:.3e}", errs[0], errs[1], errs[2]);
    Ok(())
}

fn bench_cmd(c: &Common) -> Result<()> {
    let cfg = config_from(c)?;
    let result = run_experiment(&cfg)?;
    let mut files = emit_plot_data(&result, PlotFormat::Csv, &cfg.out)?;
    files.extend(emit_plot_data(&result, PlotFormat::SvgLine, &cfg.out)?);
    println!("{:<8} {:<14} {:>4} {:>4} {:>10} {:>10} {:>10} {:>10} {:>10}  status", "grid", "mode", "k", "m", "offline_s", "online_s", "err_u", "err_v", "err_phi");
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3e}"));
    for r in &result.reports {
        println!(
            "{:<8} {:<14} {:>4} {:>4} {:>10.4} {:>10.4} {:>10} {:>10} {:>10}  {}",
            r.grid,
            r.mode,
            r.k.map_or("-".into(), |k| k.to_string()),
            r.m.map_or("-".into(), |m| m.to_string()),
            r.offline_s,
            r.online_s,
            fmt(r.err_u),
            fmt(r.err_v),
            fmt(r.err_phi),
            r.status
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn flops_cmd(a: &FlopArgs) -> Result<()> {
    let modes = match &a.mode {
        Some(s) => vec![RomMode::parse(s).ok_or_else(|| RomError::Config(format!("unknown mode {s:?}")))?],
        None => RomMode::ALL.to_vec(),
    };
    let cases: Vec<(u64, u64, Option<u64>, u32)> = match (a.n, a.k) {
        (Some(n), Some(k)) => vec![(n, k, a.m, a.p)],
        (None, None) => FLOP_CASES.iter().map(|&(n, k, m, p)| (n, k, Some(m), p)).collect(),
        _ => return Err(RomError::Config("give both --n and --k, or neither for the standard cases".into())),
    };
    let header: Vec<&str> = modes.iter().map(|m| m.name()).collect();
    println!("n,k,m,p,{}", header.join(","));
    for (n, k, m, p) in cases {
        let counts = modes
            .iter()
            .map(|&mode| flop_count(mode, n, k, m, p).map(|c| c.to_string()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| RomError::Config(e.to_string()))?;
        println!("{n},{k},{},{p},{}", m.map_or(String::new(), |m| m.to_string()), counts.join(","));
    }
    Ok(())
}

fn export_cmd(a: &PlotArgs) -> Result<()> {
    let result = load_result(&a.out)?;
    let format = match a.format {
        Format::Csv => PlotFormat::Csv,
        Format::SvgLine => PlotFormat::SvgLine,
    };
    for f in emit_plot_data(&result, format, &a.out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::RunFull(c) => run_full_cmd(c),
        Command::BuildRom(c) => build_rom_cmd(c),
        Command::RunRom(c) => run_rom_cmd(c),
        Command::Bench(c) => bench_cmd(c),
        Command::Flops(a) => flops_cmd(a),
        Command::ExportPlots(a) => export_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
