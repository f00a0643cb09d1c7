use swingreach::grid::GridSpec;
use swingreach::hjsolver::{DisturbanceBound, SolveConfig};
use swingreach::plant::{RelayStatus, SafeBounds, SmibParams, State};
use swingreach::reachability::{safe_set_grid, ReachAnalysis, DEFAULT_BALL_RADII};

#[test]
fn fault_start_is_outside_the_open_region_only() {
    let analysis = ReachAnalysis::new(GridSpec::default(), SmibParams::default(), SolveConfig::default()).unwrap();
    let x0 = State::new(-0.5, 13.0);
    let open = analysis.stability_region(RelayStatus::Open, 3.0, DEFAULT_BALL_RADII).unwrap();
    let closed = analysis.stability_region(RelayStatus::Closed, 3.0, DEFAULT_BALL_RADII).unwrap();
    assert!(!open.contains(x0).unwrap());
    assert!(closed.contains(x0).unwrap());
}

#[test]
fn attack_start_separates_the_invariant_sets() {
    let p = SmibParams::default();
    let safe = SafeBounds::nominal(&p).unwrap();
    let analysis = ReachAnalysis::new(safe_set_grid(&safe, 0.3, 201).unwrap(), p, SolveConfig::default()).unwrap();
    let b = DisturbanceBound::symmetric(0.2).unwrap();
    let x0 = State::new(1.2, 6.0);
    let open = analysis.invariant_set(&safe, RelayStatus::Open, b, 3.0).unwrap();
    let closed = analysis.invariant_set(&safe, RelayStatus::Closed, b, 3.0).unwrap();
    assert!(open.value_at(x0) < 0.0);
    // Closed sits on the boundary (the point is on the omega edge of S).
    assert!(closed.value_at(x0) > open.value_at(x0) + 0.1);
}
