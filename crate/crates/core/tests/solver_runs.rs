use swe_rom::grid::{Grid, PhysicalConstants};
use swe_rom::operators::{build_operators, DifferenceOperators};
use swe_rom::solver::{run_full, RecordFlags, SolverConfig};
use swe_rom::swe::{grammeltvedt_initial_state, CoriolisField, FieldState};

fn setup(nx: usize, ny: usize) -> (DifferenceOperators, CoriolisField, FieldState) {
    let c = PhysicalConstants::default();
    let g = Grid::new(nx, ny, c.length_x, c.length_y).unwrap();
    let ops = build_operators(&g);
    let f = CoriolisField::new(&g, &c);
    let ic = grammeltvedt_initial_state(&ops, &f, &c, false).unwrap();
    (ops, f, ic)
}

#[test]
fn three_hour_run_converges_every_step() {
    let (ops, f, ic) = setup(31, 23);
    let cfg = SolverConfig::default();
    let run = run_full(&ic, &cfg, &ops, &f, RecordFlags::ALL).unwrap();
    assert_eq!(run.steps.len(), 91);
    assert_eq!(run.cfl_warnings(), 0);
    for s in &run.steps {
        for h in s.half {
            assert!(h.residual <= cfg.newton_tol, "step {}: {h:?}", s.step);
            assert!(h.iterations <= cfg.newton_max_iters);
        }
    }
    // scheduled refactorizations fall on every sixth step
    for s in run.steps.iter().filter(|s| s.step % cfg.lu_refresh_every == 0) {
        assert!(s.half.iter().all(|h| h.refactorized), "step {}", s.step);
    }
    let states = run.snapshots.states.as_ref().unwrap();
    for t in 0..91 {
        assert!(ops.grid.y_boundary_nodes().all(|l| states[1][(l, t)] == 0.0));
    }
    assert!((run.final_state.time - 91.0 * 120.0).abs() < 1e-9);
}

#[test]
fn day_window_stays_bounded() {
    let (ops, f, ic) = setup(31, 23);
    let cfg = SolverConfig { dt: 960.0, ..SolverConfig::default() };
    let run = run_full(&ic, &cfg, &ops, &f, RecordFlags { states: true, nonlinear: false }).unwrap();
    let phi = &run.snapshots.states.as_ref().unwrap()[2];
    assert!(phi.iter().all(|x| x.is_finite()));
    assert!(phi.amax() <= 1.5 * ic.phi.amax());
    // total geopotential drifts by less than half a percent
    let total = |p: &nalgebra::DVector<f64>| p.sum();
    let drift = (total(&run.final_state.phi) - total(&ic.phi)).abs() / total(&ic.phi);
    assert!(drift < 5e-3, "{drift}");
}

#[test]
fn more_steps_extend_the_same_trajectory() {
    let (ops, f, ic) = setup(15, 11);
    let short = run_full(&ic, &SolverConfig { nt: 5, ..SolverConfig::default() }, &ops, &f, RecordFlags::ALL).unwrap();
    let long = run_full(&ic, &SolverConfig { nt: 9, ..SolverConfig::default() }, &ops, &f, RecordFlags::ALL).unwrap();
    let (a, b) = (short.snapshots.states.unwrap(), long.snapshots.states.unwrap());
    for v in 0..3 {
        assert_eq!(a[v].columns(0, 5), b[v].columns(0, 5));
    }
}
