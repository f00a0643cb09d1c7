use std::fmt::Write as _;
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use serde_json::json;
use swingreach::attack::{
    emptiness_sweep, region_based_plan, run_coordinated, run_optimal_attack, AttackPolicy, CoordinatedPlan,
};
use swingreach::grid::pointwise_min;
use swingreach::hitl::{
    run_controller_endpoint, run_loopback, run_plant_endpoint, run_spoof_proxy, tamper_log_jsonl, CommandRecord,
    DOverride, Link, LoopbackScenario, PlantConfig, SpoofRule,
};
use swingreach::hjsolver::{DisturbanceBound, SolveConfig};
use swingreach::plant::{simulate, RelayStatus, State, Trajectory};
use swingreach::reachability::{ReachAnalysis, SetResult};

use crate::config::{OverrideConfig, PolicyConfig, ScenarioConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;

/// Per-coordinate tolerance for the wire-versus-in-process comparison.
pub const LOCKSTEP_TOLERANCE: f64 = 1e-9;

fn state([d, w]: [f64; 2]) -> State {
    State::new(d, w)
}

fn wide_analysis(cfg: &ScenarioConfig, solver: SolveConfig) -> CliResult<ReachAnalysis> {
    Ok(ReachAnalysis::new(cfg.grid, cfg.params, solver)?)
}

fn set_analysis(cfg: &ScenarioConfig, solver: SolveConfig) -> CliResult<ReachAnalysis> {
    Ok(ReachAnalysis::new(cfg.set_grid_spec()?, cfg.params, solver)?)
}

fn write_set(out: &Output, prefix: &str, set: &SetResult) -> CliResult<()> {
    let meta = set.metadata();
    out.write(&format!("{prefix}.csv"), &set.value_field.to_csv(), &meta)?;
    out.write(&format!("{prefix}_contour.json"), &set.boundary.to_json(), &meta)?;
    for (t, field) in &set.snapshots {
        out.write(&format!("{prefix}_t{t}.csv"), &field.to_csv(), json!({ "snapshot_time": t, "set": meta }))?;
    }
    Ok(())
}

fn trajectory_details(tr: &Trajectory, cfg: &ScenarioConfig) -> CliResult<serde_json::Value> {
    let safe = cfg.safe_bounds()?;
    let last = tr.last().map(|s| s.state);
    Ok(json!({
        "samples": tr.samples.len(),
        "divergent": tr.divergent,
        "first_exit": tr.first_exit(&safe),
        "final_state": last,
    }))
}

/// Disturbance for simulations and the HITL controller. `KeepOut` solves the
/// invariant set of the safe set under `relay` first.
fn build_policy(cfg: &ScenarioConfig, policy: PolicyConfig, relay: RelayStatus) -> CliResult<AttackPolicy> {
    Ok(match policy {
        PolicyConfig::Zero => AttackPolicy::zero(cfg.params),
        PolicyConfig::Constant(d) => AttackPolicy::constant(d, cfg.params, cfg.dbound),
        PolicyConfig::KeepOut => {
            let analysis = set_analysis(cfg, cfg.solve_config())?;
            let inv = analysis.invariant_set(&cfg.safe_bounds()?, relay, cfg.dbound, cfg.horizon)?;
            AttackPolicy::keep_out(&inv.value_field, cfg.params, cfg.dbound)
        }
    })
}

pub fn stability(cfg: &ScenarioConfig, out: &Output) -> CliResult<()> {
    let analysis = wide_analysis(cfg, cfg.solve_config())?;
    for &relay in &cfg.relays {
        let region = analysis.stability_region(relay, cfg.horizon, cfg.radii())?;
        write_set(out, &format!("stability_{}", relay.label()), &region)?;
        println!(
            "stability {}: horizon {} s, converged_at {}, member nodes {}",
            relay.label(),
            cfg.horizon,
            fmt_opt(region.converged_at),
            region.value_field.count_nonnegative()
        );
    }
    Ok(())
}

pub fn invariant(cfg: &ScenarioConfig, out: &Output) -> CliResult<()> {
    let mut solver = cfg.solve_config();
    solver.snapshot_times.insert(0, 0.0);
    let analysis = set_analysis(cfg, solver)?;
    let safe = cfg.safe_bounds()?;
    let mut inv_fields = Vec::new();
    for &relay in &cfg.relays {
        let inv = analysis.invariant_set(&safe, relay, cfg.dbound, cfg.horizon)?;
        let viab = analysis.viability_set(&safe, relay, cfg.dbound, cfg.horizon)?;
        write_set(out, &format!("inv_{}", relay.label()), &inv)?;
        write_set(out, &format!("viab_{}", relay.label()), &viab)?;
        for set in [&inv, &viab] {
            let m = set.metadata();
            println!(
                "{:?} {}: bound [{}, {}], horizon {} s, {}, member nodes {}",
                m.kind,
                relay.label(),
                m.dbound.d_l,
                m.dbound.d_h,
                m.horizon,
                if m.empty { "empty" } else { "nonempty" },
                m.member_nodes
            );
        }
        inv_fields.push(inv.value_field);
    }
    if let [a, b] = inv_fields.as_slice() {
        let both = pointwise_min(a, b)?;
        let members = both.count_nonnegative();
        out.write("inv_intersection.csv", &both.to_csv(), json!({ "member_nodes": members }))?;
        println!("intersection: member nodes {members}");
    }
    Ok(())
}

pub fn simulate_cmd(cfg: &ScenarioConfig, out: &Output) -> CliResult<()> {
    let sim = &cfg.simulation;
    for &relay in &cfg.relays {
        let policy = build_policy(cfg, sim.policy, relay)?;
        for (k, x0) in sim.x0.iter().enumerate() {
            let tr = simulate(state(*x0), &cfg.params, |_, x| policy.disturbance(x), |_| relay, sim.horizon, sim.dt)?;
            let details = trajectory_details(&tr, cfg)?;
            println!("simulate x0 {x0:?} {}: {details}", relay.label());
            out.write(&format!("sim_{k}_{}.csv", relay.label()), &tr.to_csv(), details)?;
        }
    }
    Ok(())
}

pub fn attack(cfg: &ScenarioConfig, out: &Output) -> CliResult<()> {
    let a = &cfg.attack;
    for &relay in &cfg.relays {
        let policy = build_policy(cfg, PolicyConfig::KeepOut, relay)?;
        for (k, x0) in a.x0.iter().enumerate() {
            let tr = run_optimal_attack(state(*x0), relay, &policy, a.horizon, a.dt)?;
            let details = trajectory_details(&tr, cfg)?;
            println!("optimal attack x0 {x0:?} {}: {details}", relay.label());
            out.write(&format!("attack_{k}_{}.csv", relay.label()), &tr.to_csv(), details)?;
        }
    }
    if !a.coordinated {
        return Ok(());
    }
    let bound = DisturbanceBound::symmetric(a.coordinated_bound)?;
    let analysis = wide_analysis(cfg, cfg.solve_config())?;
    let (plan, region) = region_based_plan(&analysis, bound, a.region_horizon, a.policy_horizon, cfg.radii())?;
    write_set(out, "coordinated_region", &region)?;
    let x0 = cfg.coordinated_start()?;
    for (name, phase2) in [("coordinated_open", RelayStatus::Open), ("coordinated_control", RelayStatus::Closed)] {
        let plan = CoordinatedPlan { phase2_relay: phase2, ..plan.clone() };
        let run = run_coordinated(&plan, x0, a.coordinated_horizon, a.dt)?;
        let mut details = trajectory_details(&run.trajectory, cfg)?;
        details["switch_time"] = json!(run.switch_time);
        details["phase2_relay"] = json!(phase2);
        details["bound"] = json!(a.coordinated_bound);
        println!("{name}: switch at {} s, final state {}", fmt_opt(run.switch_time), details["final_state"]);
        out.write(&format!("{name}.csv"), &run.trajectory.to_csv(), details)?;
    }
    Ok(())
}

pub fn sweep(cfg: &ScenarioConfig, out: &Output) -> CliResult<()> {
    let solver = SolveConfig { stop_at_convergence: true, snapshot_times: Vec::new(), ..cfg.solve_config() };
    let analysis = set_analysis(cfg, solver)?;
    let safe = cfg.safe_bounds()?;
    let bounds = cfg.sweep.bounds();
    for &relay in &cfg.relays {
        let report = emptiness_sweep(&analysis, &safe, relay, &bounds, cfg.sweep.horizon)?;
        println!(
            "sweep {}: first empty bound {}, monotone {}",
            relay.label(),
            fmt_opt(report.threshold),
            report.monotone
        );
        out.write_json(&format!("sweep_{}.json", relay.label()), &report, json!({ "bounds": bounds }))?;
    }
    Ok(())
}

fn spoof_rules(cfg: &ScenarioConfig) -> CliResult<Vec<SpoofRule>> {
    let mut keep_out = None;
    let mut rules = Vec::new();
    for r in &cfg.hitl.rules {
        let d = match r.d {
            OverrideConfig::Keep => DOverride::Keep,
            OverrideConfig::Constant(d) => DOverride::Constant(d),
            OverrideConfig::KeepOut => {
                if keep_out.is_none() {
                    keep_out = Some(build_policy(cfg, PolicyConfig::KeepOut, cfg.hitl.relay)?);
                }
                DOverride::Policy(keep_out.clone().expect("just built"))
            }
        };
        rules.push(SpoofRule::new(r.t0, r.t1, d, r.relay)?);
    }
    Ok(rules)
}

fn plant_config(cfg: &ScenarioConfig, realtime: bool) -> PlantConfig {
    let h = &cfg.hitl;
    PlantConfig { params: cfg.params, x0: state(h.x0), dt: h.dt, horizon: h.horizon, realtime: realtime || h.realtime }
}

fn timeout(cfg: &ScenarioConfig) -> Duration {
    Duration::from_secs_f64(cfg.hitl.timeout_s)
}

fn commands_csv(commands: &[CommandRecord]) -> String {
    let mut s = String::from("seq,t,d,relay\n");
    for c in commands {
        let _ = writeln!(s, "{},{},{},{}", c.seq, c.t, c.d, c.relay.as_flag());
    }
    s
}

fn max_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    if a.samples.len() != b.samples.len() {
        return f64::INFINITY;
    }
    a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x.state.delta - y.state.delta).abs().max((x.state.omega - y.state.omega).abs()))
        .fold(0.0, f64::max)
}

/// Plant, controller and proxy in one process over loopback TCP. Without
/// spoof rules the wire trajectory is compared against the in-process run.
pub fn hitl(cfg: &ScenarioConfig, out: &Output, realtime: bool) -> CliResult<()> {
    let h = &cfg.hitl;
    let policy = build_policy(cfg, h.policy, h.relay)?;
    let rules = spoof_rules(cfg)?;
    let spoofing = !rules.is_empty();
    let relay = h.relay;
    let wire_policy = policy.clone();
    let run = run_loopback(LoopbackScenario {
        plant: plant_config(cfg, realtime),
        policy: Box::new(move |_, x| wire_policy.disturbance(x)),
        relay_schedule: Box::new(move |_| relay),
        proxy: Some((rules, cfg.dbound)),
        timeout: timeout(cfg),
    })?;
    let mut details = trajectory_details(&run.plant.trajectory, cfg)?;
    details["aborted"] = json!(run.plant.aborted);
    details["stop_reason"] = json!(run.plant.stop_reason);
    details["tamper_records"] = json!(run.tamper.len());
    let gap = if spoofing {
        None
    } else {
        let local = simulate(state(h.x0), &cfg.params, |_, x| policy.disturbance(x), |_| relay, h.horizon, h.dt)?;
        Some(max_gap(&run.plant.trajectory, &local))
    };
    details["max_gap_to_in_process"] = json!(gap);
    out.write("hitl_plant.csv", &run.plant.trajectory.to_csv(), &details)?;
    out.write("hitl_commands.csv", &commands_csv(&run.controller.commands), json!({ "bye": run.controller.bye }))?;
    out.write("hitl_tamper.jsonl", &tamper_log_jsonl(&run.tamper), json!({ "records": run.tamper.len() }))?;
    println!("hitl: {details}");
    if run.plant.aborted {
        return Err(CliError::Failed(format!("run aborted: {}", run.plant.stop_reason.unwrap_or_default())));
    }
    match gap {
        Some(g) if g > LOCKSTEP_TOLERANCE => {
            Err(CliError::Failed(format!("wire trajectory differs from in-process run by {g:e}")))
        }
        Some(g) => {
            println!("determinism check passed (max gap {g:e})");
            Ok(())
        }
        None => Ok(()),
    }
}

fn listen(addr: &str) -> CliResult<TcpListener> {
    let listener = TcpListener::bind(addr).map_err(|e| CliError::Config(format!("cannot listen on {addr}: {e}")))?;
    println!("listening on {}", listener.local_addr()?);
    Ok(listener)
}

/// Connects, retrying until the peer is up or `timeout` has passed.
fn connect(addr: &str, timeout: Duration) -> CliResult<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() >= timeout => {
                return Err(CliError::Failed(format!("cannot connect to {addr}: {e}")));
            }
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

pub fn hitl_plant(cfg: &ScenarioConfig, out: &Output, addr: &str, realtime: bool) -> CliResult<()> {
    let listener = listen(addr)?;
    let (stream, peer) = listener.accept()?;
    log::info!("controller side connected from {peer}");
    let mut link = Link::tcp(stream, timeout(cfg))?;
    let run = run_plant_endpoint(&plant_config(cfg, realtime), &mut link)?;
    let mut details = trajectory_details(&run.trajectory, cfg)?;
    details["aborted"] = json!(run.aborted);
    details["stop_reason"] = json!(run.stop_reason);
    out.write("plant.csv", &run.trajectory.to_csv(), &details)?;
    println!("plant: {details}");
    if run.aborted {
        return Err(CliError::Failed(format!("run aborted: {}", run.stop_reason.unwrap_or_default())));
    }
    Ok(())
}

pub fn hitl_controller(cfg: &ScenarioConfig, out: &Output, addr: &str) -> CliResult<()> {
    let h = &cfg.hitl;
    let policy = build_policy(cfg, h.policy, h.relay)?;
    let mut link = Link::tcp(connect(addr, timeout(cfg))?, timeout(cfg))?;
    let relay = h.relay;
    let log = run_controller_endpoint(&cfg.params, h.dt, |_, x| policy.disturbance(x), |_| relay, &mut link)?;
    out.write("controller.csv", &commands_csv(&log.commands), json!({ "bye": log.bye, "commands": log.commands.len() }))?;
    println!("controller: {} commands, bye {:?}", log.commands.len(), log.bye);
    Ok(())
}

pub fn hitl_proxy(cfg: &ScenarioConfig, out: &Output, listen_addr: &str, plant_addr: &str) -> CliResult<()> {
    let rules = spoof_rules(cfg)?;
    let mut plant = Link::tcp(connect(plant_addr, timeout(cfg))?, timeout(cfg))?;
    let listener = listen(listen_addr)?;
    let (stream, peer) = listener.accept()?;
    log::info!("controller connected from {peer}");
    let mut controller = Link::tcp(stream, timeout(cfg))?;
    let tamper = run_spoof_proxy(&rules, cfg.dbound, &mut plant, &mut controller)?;
    out.write("tamper.jsonl", &tamper_log_jsonl(&tamper), json!({ "records": tamper.len(), "rules": rules.len() }))?;
    println!("proxy: {} tamper records", tamper.len());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x}"))
}
