//! Bang-bang attack synthesis from value-function gradients, the coordinated
//! PLC + relay attack, and disturbance-bound sweeps.
//!
//! With `f(x, d) = f_x(x) + f_d(x) d` and `f_d = (0, 1/M)`, the switching
//! test `dV/dx . f_d <= 0` reduces to the sign of `dV/d omega`:
//!
//! * keep-out (`d1*`, drives the state out of the invariant set):
//!   `d_h` if `dV1/d omega <= 0`, else `d_l`;
//! * keep-in (`d2*`, holds the state in the viability set):
//!   `d_l` if `dV2/d omega <= 0`, else `d_h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_central, Ellipse, ScalarField};
use crate::hjsolver::DisturbanceBound;
use crate::plant::{equilibria, simulate, RelayStatus, SafeBounds, SmibParams, State, Trajectory};
use crate::reachability::{ReachAnalysis, SetResult};

/// Gradient of a value field, precomputed on the nodes and bilinearly
/// interpolated in between.
#[derive(Debug, Clone)]
pub struct ValueGradient {
    d_delta: ScalarField,
    d_omega: ScalarField,
}

impl ValueGradient {
    pub fn from_field(field: &ScalarField) -> Self {
        let (d_delta, d_omega) = gradient_central(field);
        Self { d_delta, d_omega }
    }

    /// Gradient at `state`; errors outside the grid.
    pub fn at(&self, state: State) -> Result<(f64, f64)> {
        Ok((
            self.d_delta.interpolate(state.delta, state.omega)?,
            self.d_omega.interpolate(state.delta, state.omega)?,
        ))
    }

    /// Gradient at the grid point nearest to `state`.
    pub fn at_clamped(&self, state: State) -> (f64, f64) {
        self.at(self.clamp(state)).expect("clamped into the grid")
    }

    fn clamp(&self, state: State) -> State {
        let s = self.d_omega.spec();
        State::new(
            state.delta.clamp(s.delta_min, s.delta_max),
            state.omega.clamp(s.omega_min, s.omega_max),
        )
    }
}

// dV/dx . f_d with f_d = (0, 1/M)
fn switching_term(grad: (f64, f64), params: &SmibParams) -> f64 {
    grad.1 / params.m
}

fn keep_out_choice(term: f64, dbound: &DisturbanceBound) -> f64 {
    if term <= 0.0 {
        dbound.d_h
    } else {
        dbound.d_l
    }
}

fn keep_in_choice(term: f64, dbound: &DisturbanceBound) -> f64 {
    if term <= 0.0 {
        dbound.d_l
    } else {
        dbound.d_h
    }
}

/// Optimal disturbance pushing the state out of the invariant set.
pub fn d_star_keep_out(
    state: State,
    v1: &ValueGradient,
    params: &SmibParams,
    dbound: &DisturbanceBound,
) -> Result<f64> {
    Ok(keep_out_choice(switching_term(v1.at(state)?, params), dbound))
}

/// Optimal disturbance holding the state inside the viability set.
pub fn d_star_keep_in(
    state: State,
    v2: &ValueGradient,
    params: &SmibParams,
    dbound: &DisturbanceBound,
) -> Result<f64> {
    Ok(keep_in_choice(switching_term(v2.at(state)?, params), dbound))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    KeepOut,
    KeepIn,
    Constant(f64),
    Zero,
}

/// Disturbance generator. Emitted values always lie in `dbound`.
#[derive(Debug, Clone)]
pub struct AttackPolicy {
    pub mode: AttackMode,
    pub dbound: DisturbanceBound,
    pub params: SmibParams,
    gradient: Option<ValueGradient>,
}

impl AttackPolicy {
    pub fn keep_out(value_field: &ScalarField, params: SmibParams, dbound: DisturbanceBound) -> Self {
        Self {
            mode: AttackMode::KeepOut,
            dbound,
            params,
            gradient: Some(ValueGradient::from_field(value_field)),
        }
    }

    pub fn keep_in(value_field: &ScalarField, params: SmibParams, dbound: DisturbanceBound) -> Self {
        Self {
            mode: AttackMode::KeepIn,
            dbound,
            params,
            gradient: Some(ValueGradient::from_field(value_field)),
        }
    }

    pub fn constant(d: f64, params: SmibParams, dbound: DisturbanceBound) -> Self {
        Self { mode: AttackMode::Constant(d), dbound, params, gradient: None }
    }

    pub fn zero(params: SmibParams) -> Self {
        Self { mode: AttackMode::Zero, dbound: DisturbanceBound::zero(), params, gradient: None }
    }

    /// Disturbance at `state`. Gradient lookups outside the grid use the
    /// nearest grid point.
    pub fn disturbance(&self, state: State) -> f64 {
        match self.mode {
            AttackMode::Zero => 0.0,
            AttackMode::Constant(d) => self.dbound.clamp(d),
            AttackMode::KeepOut | AttackMode::KeepIn => {
                let grad = self.gradient.as_ref().expect("gradient policies carry a field").at_clamped(state);
                let term = switching_term(grad, &self.params);
                if self.mode == AttackMode::KeepOut {
                    keep_out_choice(term, &self.dbound)
                } else {
                    keep_in_choice(term, &self.dbound)
                }
            }
        }
    }
}

/// Simulates under the keep-out (or any) policy, re-evaluated at every step.
pub fn run_optimal_attack(
    x0: State,
    relay: RelayStatus,
    policy: &AttackPolicy,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    simulate(x0, &policy.params, |_, x| policy.disturbance(x), |_| relay, horizon, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub bound: f64,
    pub empty: bool,
    pub max_value: f64,
    pub member_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub relay: RelayStatus,
    pub horizon: f64,
    pub entries: Vec<SweepEntry>,
    /// Smallest bound whose invariant set is empty.
    pub threshold: Option<f64>,
    /// Every bound at or above the threshold is empty.
    pub monotone: bool,
}

/// Invariant-set emptiness over a list of ascending symmetric bounds.
pub fn emptiness_sweep(
    analysis: &ReachAnalysis,
    safe: &SafeBounds,
    relay: RelayStatus,
    bounds: &[f64],
    horizon: f64,
) -> Result<SweepReport> {
    if bounds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("sweep bounds must be strictly ascending".into()));
    }
    let mut entries = Vec::with_capacity(bounds.len());
    for &b in bounds {
        let set = analysis.invariant_set(safe, relay, DisturbanceBound::symmetric(b)?, horizon)?;
        let entry = SweepEntry {
            bound: b,
            empty: set.is_empty(),
            max_value: set.value_field.max(),
            member_nodes: set.value_field.count_nonnegative(),
        };
        log::info!(
            "sweep relay={} |d|<={b:.3}: empty={} max V={:.4}",
            relay.label(),
            entry.empty,
            entry.max_value
        );
        entries.push(entry);
    }
    Ok(summarize_sweep(relay, horizon, entries))
}

pub fn summarize_sweep(relay: RelayStatus, horizon: f64, entries: Vec<SweepEntry>) -> SweepReport {
    let first = entries.iter().position(|e| e.empty);
    let threshold = first.map(|k| entries[k].bound);
    let monotone = first.is_none_or(|k| entries[k..].iter().all(|e| e.empty));
    SweepReport { relay, horizon, entries, threshold, monotone }
}

/// When the coordinated attack stops injecting and opens the relay.
#[derive(Debug, Clone)]
pub enum SwitchPredicate {
    /// At a fixed time.
    AtTime(f64),
    /// As soon as the region's value drops below `-margin`.
    LeaveRegion { field: ScalarField, margin: f64 },
    Never,
}

impl SwitchPredicate {
    fn fires(&self, t: f64, state: State) -> bool {
        match self {
            SwitchPredicate::AtTime(ts) => t >= *ts,
            SwitchPredicate::LeaveRegion { field, margin } => {
                field.interpolate(state.delta, state.omega).map_or(true, |v| v < -margin)
            }
            SwitchPredicate::Never => false,
        }
    }
}

/// Phase 1: relay closed, `phase1` drives the disturbance. Once `switch`
/// fires, phase 2 stops injecting (`d = 0`) and commands `phase2_relay`.
#[derive(Debug, Clone)]
pub struct CoordinatedPlan {
    pub phase1: AttackPolicy,
    pub switch: SwitchPredicate,
    pub phase2_relay: RelayStatus,
}

/// Margin for a switch on leaving a stability region: half the magnitude of
/// the target value at the unstable equilibrium. The computed region is
/// eroded by a cell or two along the separatrix near the saddle, so a
/// zero-level test fires while the state is still in the true basin.
pub fn saddle_margin(params: &SmibParams, relay: RelayStatus, ball_radii: (f64, f64)) -> Result<f64> {
    let eq = equilibria(params, relay)?;
    let ball = Ellipse::new((eq.stable.delta, eq.stable.omega), ball_radii)?;
    Ok(0.5 * ball.signed_distance(eq.unstable.delta, eq.unstable.omega).abs())
}

/// Region-based coordinated plan: with the relay closed, inject d1* driven
/// by the invariant set of the relay-open stability region (under closed
/// dynamics), then open the relay once the state is clearly outside it.
/// Returns the plan together with the stability region it targets.
pub fn region_based_plan(
    analysis: &ReachAnalysis,
    dbound: DisturbanceBound,
    region_horizon: f64,
    policy_horizon: f64,
    ball_radii: (f64, f64),
) -> Result<(CoordinatedPlan, SetResult)> {
    let region = analysis.stability_region(RelayStatus::Open, region_horizon, ball_radii)?;
    let hold = analysis.invariant_of(&region.value_field, RelayStatus::Closed, dbound, policy_horizon)?;
    let margin = saddle_margin(&analysis.params, RelayStatus::Open, ball_radii)?;
    let plan = CoordinatedPlan {
        phase1: AttackPolicy::keep_out(&hold.value_field, analysis.params, dbound),
        switch: SwitchPredicate::LeaveRegion { field: region.value_field.clone(), margin },
        phase2_relay: RelayStatus::Open,
    };
    Ok((plan, region))
}

#[derive(Debug, Clone)]
pub struct CoordinatedRun {
    pub trajectory: Trajectory,
    pub switch_time: Option<f64>,
}

impl CoordinatedRun {
    /// True when the switch never fired; the trajectory is then the full
    /// phase-1 run.
    pub fn switch_missed(&self) -> bool {
        self.switch_time.is_none()
    }
}

pub fn run_coordinated(plan: &CoordinatedPlan, x0: State, horizon: f64, dt: f64) -> Result<CoordinatedRun> {
    // The switch is latched on the state seen at the start of a step, so the
    // disturbance and relay for that step already belong to phase 2.
    let switch_time = std::cell::Cell::new(None::<f64>);
    let switched = |t: f64, x: State| -> bool {
        if switch_time.get().is_none() && plan.switch.fires(t, x) {
            switch_time.set(Some(t));
        }
        switch_time.get().is_some()
    };
    let trajectory = simulate(
        x0,
        &plan.phase1.params,
        |t, x| if switched(t, x) { 0.0 } else { plan.phase1.disturbance(x) },
        |_| if switch_time.get().is_some() { plan.phase2_relay } else { RelayStatus::Closed },
        horizon,
        dt,
    )?;
    let switch_time = switch_time.get();
    if switch_time.is_none() {
        log::warn!("coordinated switch never fired within {horizon} s");
    }
    Ok(CoordinatedRun { trajectory, switch_time })
}
