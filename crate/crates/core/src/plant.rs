//! Single-machine infinite-bus swing dynamics with a relay-switched local load.
//!
//! ```text
//! d(delta)/dt = omega
//! M d(omega)/dt = P_m - D omega - P_E sin(delta) - P_L [relay closed] + d
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmibParams {
    /// Rotor inertia, s^2/rad.
    pub m: f64,
    /// Damping coefficient.
    pub d: f64,
    /// Mechanical power input, p.u.
    pub p_m: f64,
    /// Maximum transferred electrical power, p.u.
    pub p_e: f64,
    /// Local load behind the relay, p.u.
    pub p_l: f64,
}

impl Default for SmibParams {
    fn default() -> Self {
        Self { m: 0.026, d: 0.12, p_m: 1.0, p_e: 1.35, p_l: 0.4 }
    }
}

impl SmibParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.d, self.p_m, self.p_e, self.p_l];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        if self.m <= 0.0 {
            return Err(Error::InvalidParams(format!("inertia must be positive, got {}", self.m)));
        }
        if self.d < 0.0 {
            return Err(Error::InvalidParams(format!("damping must be >= 0, got {}", self.d)));
        }
        if self.p_e <= 0.0 {
            return Err(Error::InvalidParams(format!("P_E must be positive, got {}", self.p_e)));
        }
        if self.p_l < 0.0 {
            return Err(Error::InvalidParams(format!("P_L must be >= 0, got {}", self.p_l)));
        }
        Ok(())
    }

    /// Load seen by the machine for the given relay position.
    pub fn active_load(&self, relay: RelayStatus) -> f64 {
        match relay {
            RelayStatus::Closed => self.p_l,
            RelayStatus::Open => 0.0,
        }
    }

    /// `P_m - active load`.
    pub fn net_power(&self, relay: RelayStatus) -> f64 {
        self.p_m - self.active_load(relay)
    }

    /// Undisturbed acceleration torque `P_m - D w - P_E sin(delta) - load`.
    #[inline]
    pub fn accel_power(&self, state: State, relay: RelayStatus) -> f64 {
        self.net_power(relay) - self.d * state.omega - self.p_e * state.delta.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayStatus {
    Closed,
    Open,
}

impl RelayStatus {
    pub fn as_flag(self) -> u8 {
        match self {
            RelayStatus::Closed => 1,
            RelayStatus::Open => 0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RelayStatus::Closed => "closed",
            RelayStatus::Open => "open",
        }
    }
}

impl std::str::FromStr for RelayStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "closed" | "close" | "1" => Ok(RelayStatus::Closed),
            "open" | "0" => Ok(RelayStatus::Open),
            other => Err(Error::Parse(format!("unknown relay status `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    /// Rotor angle, rad.
    pub delta: f64,
    /// Angular velocity deviation, rad/s.
    pub omega: f64,
}

impl State {
    pub const fn new(delta: f64, omega: f64) -> Self {
        Self { delta, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.omega.is_finite()
    }

    fn axpy(self, a: f64, k: (f64, f64)) -> Self {
        Self { delta: self.delta + a * k.0, omega: self.omega + a * k.1 }
    }
}

/// Rectangular operating envelope around a nominal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeBounds {
    pub delta_n: f64,
    pub omega_n: f64,
    pub delta_half_width: f64,
    pub omega_half_width: f64,
}

impl SafeBounds {
    /// Nominal point at the closed-relay stable equilibrium, half-widths
    /// pi/2 rad and 6 rad/s.
    pub fn nominal(params: &SmibParams) -> Result<Self> {
        let eq = equilibria(params, RelayStatus::Closed)?;
        Ok(Self {
            delta_n: eq.stable.delta,
            omega_n: 0.0,
            delta_half_width: std::f64::consts::FRAC_PI_2,
            omega_half_width: 6.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_half_width > 0.0 && self.omega_half_width > 0.0) {
            return Err(Error::InvalidParams("safe-set half-widths must be positive".into()));
        }
        if !(self.delta_n.is_finite() && self.omega_n.is_finite()) {
            return Err(Error::InvalidParams("safe-set nominal point must be finite".into()));
        }
        Ok(())
    }

    pub fn delta_range(&self) -> (f64, f64) {
        (self.delta_n - self.delta_half_width, self.delta_n + self.delta_half_width)
    }

    pub fn omega_range(&self) -> (f64, f64) {
        (self.omega_n - self.omega_half_width, self.omega_n + self.omega_half_width)
    }
}

pub fn in_safe_set(state: State, bounds: &SafeBounds) -> bool {
    let dd = state.delta - bounds.delta_n;
    let dw = state.omega - bounds.omega_n;
    (-bounds.delta_half_width..=bounds.delta_half_width).contains(&dd)
        && (-bounds.omega_half_width..=bounds.omega_half_width).contains(&dw)
}

/// Time derivative (d delta/dt, d omega/dt).
#[inline]
pub fn rhs(state: State, params: &SmibParams, relay: RelayStatus, d: f64) -> (f64, f64) {
    (state.omega, (params.accel_power(state, relay) + d) / params.m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibria {
    pub stable: State,
    pub unstable: State,
}

/// Stable and unstable equilibria of the undisturbed system.
pub fn equilibria(params: &SmibParams, relay: RelayStatus) -> Result<Equilibria> {
    params.validate()?;
    let net = params.net_power(relay);
    if net.abs() > params.p_e {
        return Err(Error::NoEquilibrium { net, limit: params.p_e });
    }
    let base = (net / params.p_e).asin();
    let stable = State::new(base, 0.0);
    let unstable = State::new(std::f64::consts::PI - base, 0.0);
    debug_assert!(max_real_eigenvalue(params, stable) <= 0.0 || params.d == 0.0);
    Ok(Equilibria { stable, unstable })
}

/// Largest real part of the Jacobian eigenvalues at `state`.
///
/// The Jacobian is `[[0, 1], [-P_E cos(delta)/M, -D/M]]`.
pub fn max_real_eigenvalue(params: &SmibParams, state: State) -> f64 {
    let a = -params.p_e * state.delta.cos() / params.m;
    let b = -params.d / params.m;
    // lambda^2 - b lambda - a = 0
    let disc = b * b + 4.0 * a;
    if disc >= 0.0 {
        (b + disc.sqrt()) / 2.0
    } else {
        b / 2.0
    }
}

/// One classical RK4 step with `d` and the relay held over the step.
#[inline]
pub fn rk4_step(state: State, params: &SmibParams, relay: RelayStatus, d: f64, dt: f64) -> State {
    let k1 = rhs(state, params, relay, d);
    let k2 = rhs(state.axpy(0.5 * dt, k1), params, relay, d);
    let k3 = rhs(state.axpy(0.5 * dt, k2), params, relay, d);
    let k4 = rhs(state.axpy(dt, k3), params, relay, d);
    State {
        delta: state.delta + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        omega: state.omega + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    /// Disturbance applied from `t` over the following step.
    pub d: f64,
    pub relay: RelayStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Set when integration hit a non-finite state and stopped early.
    pub divergent: bool,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        self.samples.iter().map(|s| s.state)
    }

    /// Time of the first sample outside `bounds`, if any.
    pub fn first_exit(&self, bounds: &SafeBounds) -> Option<f64> {
        self.samples.iter().find(|s| !in_safe_set(s.state, bounds)).map(|s| s.t)
    }

    pub fn stays_in(&self, bounds: &SafeBounds) -> bool {
        !self.divergent && self.first_exit(bounds).is_none()
    }

    /// CSV with columns `t,delta,omega,d,relay` (relay 1 = closed).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,delta,omega,d,relay\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.t,
                s.state.delta,
                s.state.omega,
                s.d,
                s.relay.as_flag()
            );
        }
        out
    }

    /// Attack-signal CSV with columns `t,d`.
    pub fn signal_csv(&self) -> String {
        let mut out = String::from("t,d\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{}", s.t, s.d);
        }
        out
    }
}

/// Number of integration steps for horizon `horizon` at step `dt`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) * (1.0 + 1e-12)).floor() as usize
}

/// Fixed-step RK4 simulation. `d_policy(t, x)` and `relay_schedule(t)` are
/// sampled at the start of each step (policy first) and held over it. The trajectory holds
/// `floor(T/dt) + 1` samples unless a non-finite state truncates it.
pub fn simulate(
    x0: State,
    params: &SmibParams,
    mut d_policy: impl FnMut(f64, State) -> f64,
    mut relay_schedule: impl FnMut(f64) -> RelayStatus,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= dt) {
        return Err(Error::InvalidParams(format!("horizon {horizon} shorter than dt {dt}")));
    }
    let steps = step_count(horizon, dt);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut state = x0;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let d = d_policy(t, state);
        let relay = relay_schedule(t);
        samples.push(Sample { t, state, d, relay });
        if k == steps {
            break;
        }
        let next = rk4_step(state, params, relay, d, dt);
        if !next.is_finite() {
            log::warn!("simulation diverged at t = {t}");
            return Ok(Trajectory { samples, divergent: true });
        }
        state = next;
    }
    Ok(Trajectory { samples, divergent: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    // Independent Newton iteration on P_net = P_E sin(delta).
    fn newton_root(net: f64, p_e: f64, mut x: f64) -> f64 {
        for _ in 0..60 {
            x -= (p_e * x.sin() - net) / (p_e * x.cos());
        }
        x
    }

    #[test]
    fn rhs_at_origin() {
        let p = SmibParams::default();
        let (a, b) = rhs(State::new(0.0, 0.0), &p, RelayStatus::Closed, 0.0);
        assert_eq!(a, 0.0);
        assert_abs_diff_eq!(b, 0.6 / 0.026, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 23.0769, epsilon = 1e-4);
    }

    #[test]
    fn rhs_vanishes_at_equilibrium() {
        let p = SmibParams::default();
        let delta = newton_root(0.6, 1.35, 0.3);
        assert_abs_diff_eq!(delta, 0.4606, epsilon = 1e-4);
        let (a, b) = rhs(State::new(delta, 0.0), &p, RelayStatus::Closed, 0.0);
        assert_eq!(a, 0.0);
        assert!(b.abs() <= 1e-9);
    }

    #[test]
    fn delta_rate_is_omega() {
        let p = SmibParams::default();
        for relay in [RelayStatus::Open, RelayStatus::Closed] {
            assert_eq!(rhs(State::new(1.7, 5.0), &p, relay, 0.3).0, 5.0);
        }
    }

    #[test]
    fn relay_shifts_acceleration_by_load() {
        let p = SmibParams::default();
        for (x, d) in [(State::new(0.3, -2.0), 0.1), (State::new(-2.0, 11.0), -0.5)] {
            let c = rhs(x, &p, RelayStatus::Closed, d);
            let o = rhs(x, &p, RelayStatus::Open, d);
            assert_eq!(c.0 - o.0, 0.0);
            assert_abs_diff_eq!(c.1 - o.1, -p.p_l / p.m, epsilon = 1e-12);
        }
    }

    #[test]
    fn equilibria_examples() {
        let p = SmibParams::default();
        let closed = equilibria(&p, RelayStatus::Closed).unwrap();
        assert_abs_diff_eq!(closed.stable.delta, newton_root(0.6, 1.35, 0.3), epsilon = 1e-12);
        assert_abs_diff_eq!(closed.unstable.delta, PI - closed.stable.delta, epsilon = 1e-15);
        let open = equilibria(&p, RelayStatus::Open).unwrap();
        assert_abs_diff_eq!(open.stable.delta, newton_root(1.0, 1.35, 0.5), epsilon = 1e-12);
        assert_abs_diff_eq!(open.stable.delta, 0.83417, epsilon = 1e-5);

        let balanced = SmibParams { p_m: 0.4, ..p };
        assert_eq!(equilibria(&balanced, RelayStatus::Closed).unwrap().stable.delta, 0.0);
    }

    #[test]
    fn equilibrium_stability_classification() {
        let p = SmibParams::default();
        for relay in [RelayStatus::Open, RelayStatus::Closed] {
            let eq = equilibria(&p, relay).unwrap();
            let (a, b) = rhs(eq.stable, &p, relay, 0.0);
            assert!(a.hypot(b) <= 1e-9);
            assert!(max_real_eigenvalue(&p, eq.stable) < 0.0);
            assert!(max_real_eigenvalue(&p, eq.unstable) > 0.0);
        }
    }

    #[test]
    fn no_equilibrium_when_overloaded() {
        let p = SmibParams { p_m: 2.0, ..SmibParams::default() };
        assert!(matches!(
            equilibria(&p, RelayStatus::Open),
            Err(Error::NoEquilibrium { .. })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = SmibParams { m: 0.0, ..SmibParams::default() };
        assert!(bad.validate().is_err());
        let bad = SmibParams { d: -1.0, ..SmibParams::default() };
        assert!(bad.validate().is_err());
        let bad = SmibParams { p_e: 0.0, ..SmibParams::default() };
        assert!(equilibria(&bad, RelayStatus::Closed).is_err());
    }

    #[test]
    fn equilibrium_is_fixed_point_of_simulation() {
        let p = SmibParams::default();
        let x0 = equilibria(&p, RelayStatus::Closed).unwrap().stable;
        let traj = simulate(x0, &p, |_, _| 0.0, |_| RelayStatus::Closed, 5.0, 1e-3).unwrap();
        assert_eq!(traj.samples.len(), 5001);
        let last = traj.last().unwrap().state;
        assert!((last.delta - x0.delta).abs() <= 1e-6);
        assert!(last.omega.abs() <= 1e-6);
    }

    #[test]
    fn sample_count_and_spacing() {
        let p = SmibParams::default();
        let traj = simulate(State::default(), &p, |_, _| 0.0, |_| RelayStatus::Open, 1.0, 0.3).unwrap();
        assert_eq!(traj.samples.len(), 4);
        assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!(simulate(State::default(), &p, |_, _| 0.0, |_| RelayStatus::Open, 1.0, 0.0).is_err());
        assert!(simulate(State::default(), &p, |_, _| 0.0, |_| RelayStatus::Open, 1e-4, 1e-3).is_err());
    }

    #[test]
    fn non_finite_state_truncates() {
        let p = SmibParams::default();
        let traj = simulate(
            State::default(),
            &p,
            |t, _| if t > 0.05 { f64::INFINITY } else { 0.0 },
            |_| RelayStatus::Closed,
            1.0,
            0.01,
        )
        .unwrap();
        assert!(traj.divergent);
        assert!(traj.samples.len() < 101);
    }

    #[test]
    fn safe_set_membership() {
        let b = SafeBounds { delta_n: 0.46, omega_n: 0.0, delta_half_width: FRAC_PI_2, omega_half_width: 6.0 };
        assert!(in_safe_set(State::new(0.46, 0.0), &b));
        assert!(in_safe_set(State::new(0.46 + FRAC_PI_2, 0.0), &b));
        assert!(!in_safe_set(State::new(0.46, 6.01), &b));
        assert!(!in_safe_set(State::new(0.46 - FRAC_PI_2 - 1e-9, 0.0), &b));
    }

    #[test]
    fn nominal_bounds_center_on_closed_equilibrium() {
        let p = SmibParams::default();
        let b = SafeBounds::nominal(&p).unwrap();
        assert_abs_diff_eq!(b.delta_n, (0.6f64 / 1.35).asin(), epsilon = 1e-15);
        assert_eq!(b.omega_half_width, 6.0);
    }

    #[test]
    fn trajectory_csv_columns() {
        let p = SmibParams::default();
        let traj = simulate(State::default(), &p, |_, _| 0.0, |_| RelayStatus::Closed, 0.002, 0.001).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,delta,omega,d,relay"));
        assert_eq!(lines.next(), Some("0,0,0,0,1"));
        assert_eq!(csv.lines().count(), 4);
    }
}
