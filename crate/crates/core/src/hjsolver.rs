//! Backward-in-time solver for the freezing Hamilton-Jacobi terminal-value
//! problem
//!
//! ```text
//! dV/dt + min{0, ext_{d in [d_l, d_h]} dV/dx . f(x, d)} = 0,   V(x, T) = l(x)
//! ```
//!
//! where `ext` is `inf` (every disturbance, invariant sets) or `sup` (some
//! disturbance, viability sets). Time runs in elapsed backward time
//! `tau = T - t`, so each explicit step is `V <- V + dtau * min{0, H^}`.
//!
//! The vector field is any planar field affine in the scalar disturbance,
//! `f(x, d) = a(x) + g(x) d`, supplied through [`PlanarDynamics`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::plant::{RelayStatus, SmibParams, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceBound {
    pub d_l: f64,
    pub d_h: f64,
}

impl DisturbanceBound {
    pub fn new(d_l: f64, d_h: f64) -> Result<Self> {
        let b = Self { d_l, d_h };
        b.validate()?;
        Ok(b)
    }

    /// `[-b, b]`.
    pub fn symmetric(b: f64) -> Result<Self> {
        Self::new(-b.abs(), b.abs())
    }

    pub const fn zero() -> Self {
        Self { d_l: 0.0, d_h: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_l.is_finite() && self.d_h.is_finite()) || self.d_l > self.d_h {
            return Err(Error::InvalidParams(format!(
                "disturbance bound [{}, {}] is not an interval",
                self.d_l, self.d_h
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.d_l.abs().max(self.d_h.abs())
    }

    pub fn clamp(&self, d: f64) -> f64 {
        d.clamp(self.d_l, self.d_h)
    }

    pub fn contains(&self, d: f64) -> bool {
        (self.d_l..=self.d_h).contains(&d)
    }

    pub fn contains_bound(&self, other: &DisturbanceBound) -> bool {
        self.d_l <= other.d_l && other.d_h <= self.d_h
    }
}

impl Default for DisturbanceBound {
    fn default() -> Self {
        Self { d_l: -0.2, d_h: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    /// Worst case over disturbances (invariance).
    Inf,
    /// Best case over disturbances (viability).
    Sup,
}

impl Quantifier {
    /// Extremum of `c * d` over the interval.
    #[inline]
    fn pick(self, c: f64, bound: &DisturbanceBound) -> f64 {
        let lo = c * bound.d_l;
        let hi = c * bound.d_h;
        match self {
            Quantifier::Inf => lo.min(hi),
            Quantifier::Sup => lo.max(hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Dimension-by-dimension Godunov flux. Requires the disturbance to enter
    /// a single axis at each node.
    #[default]
    Upwind,
    /// Central gradient with global Lax-Friedrichs dissipation.
    LaxFriedrichs,
}

/// Planar vector field `f(x, d) = drift(x) + gain(x) d`.
pub trait PlanarDynamics {
    fn drift(&self, delta: f64, omega: f64) -> [f64; 2];

    fn disturbance_gain(&self, delta: f64, omega: f64) -> [f64; 2];

    /// Upper bounds on `|f_i|` over the grid box and the disturbance interval.
    fn speed_bounds(&self, spec: &GridSpec, dbound: &DisturbanceBound) -> [f64; 2];
}

/// The swing equation for a fixed relay position.
#[derive(Debug, Clone, Copy)]
pub struct SmibDynamics {
    pub params: SmibParams,
    pub relay: RelayStatus,
}

impl SmibDynamics {
    pub fn new(params: SmibParams, relay: RelayStatus) -> Self {
        Self { params, relay }
    }
}

impl PlanarDynamics for SmibDynamics {
    #[inline]
    fn drift(&self, delta: f64, omega: f64) -> [f64; 2] {
        [omega, self.params.accel_power(State::new(delta, omega), self.relay) / self.params.m]
    }

    #[inline]
    fn disturbance_gain(&self, _delta: f64, _omega: f64) -> [f64; 2] {
        [0.0, 1.0 / self.params.m]
    }

    fn speed_bounds(&self, spec: &GridSpec, dbound: &DisturbanceBound) -> [f64; 2] {
        let (a_d, a_w) = lf_dissipation(&self.params, self.relay, dbound, spec);
        [a_d, a_w]
    }
}

/// Constant advection field, used to check the scheme against exact transport.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFlow {
    pub velocity: [f64; 2],
}

impl PlanarDynamics for ConstantFlow {
    fn drift(&self, _delta: f64, _omega: f64) -> [f64; 2] {
        self.velocity
    }

    fn disturbance_gain(&self, _delta: f64, _omega: f64) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn speed_bounds(&self, _spec: &GridSpec, _dbound: &DisturbanceBound) -> [f64; 2] {
        [self.velocity[0].abs(), self.velocity[1].abs()]
    }
}

/// Quantified `p . f(x, d)` over `d in [d_l, d_h]` for the swing equation.
///
/// `f` is affine in `d` with gain `(0, 1/M)`, so the extremum sits at an
/// endpoint chosen by the sign of `p_omega`.
pub fn hamiltonian(
    grad: (f64, f64),
    state: State,
    params: &SmibParams,
    relay: RelayStatus,
    dbound: &DisturbanceBound,
    quantifier: Quantifier,
) -> f64 {
    let dynamics = SmibDynamics::new(*params, relay);
    let a = dynamics.drift(state.delta, state.omega);
    let g = dynamics.disturbance_gain(state.delta, state.omega);
    full_hamiltonian([grad.0, grad.1], a, g, dbound, quantifier)
}

#[inline]
fn full_hamiltonian(
    p: [f64; 2],
    a: [f64; 2],
    g: [f64; 2],
    dbound: &DisturbanceBound,
    quantifier: Quantifier,
) -> f64 {
    p[0] * a[0] + p[1] * a[1] + quantifier.pick(p[0] * g[0] + p[1] * g[1], dbound)
}

/// Lax-Friedrichs speed bounds `(alpha_delta, alpha_omega)`: the largest
/// `|d delta/dt|` and `|d omega/dt|` over the grid box and disturbance
/// interval, bounded term by term.
pub fn lf_dissipation(
    params: &SmibParams,
    relay: RelayStatus,
    dbound: &DisturbanceBound,
    spec: &GridSpec,
) -> (f64, f64) {
    let w_max = spec.max_abs_omega();
    let alpha_delta = w_max;
    let alpha_omega = (params.net_power(relay).abs()
        + params.d * w_max
        + params.p_e * max_abs_sin(spec.delta_min, spec.delta_max)
        + dbound.max_abs())
        / params.m;
    (alpha_delta, alpha_omega)
}

fn max_abs_sin(lo: f64, hi: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    // a peak of |sin| sits at pi/2 + k pi
    let k = ((lo - FRAC_PI_2) / PI).ceil();
    if FRAC_PI_2 + k * PI <= hi {
        1.0
    } else {
        lo.sin().abs().max(hi.sin().abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Horizon `T`, s.
    pub horizon: f64,
    /// Courant number in (0, 1].
    pub cfl: f64,
    /// Max-node change per second of backward time below which the solution
    /// counts as converged.
    pub convergence_eps: f64,
    /// Spacing of convergence checks, s.
    pub check_interval: f64,
    /// Backward times at which to keep a copy of the field.
    pub snapshot_times: Vec<f64>,
    /// Stop integrating at the first converged check.
    pub stop_at_convergence: bool,
    /// Cap on the time step, s. Solves sharing a cap take identical steps.
    pub max_dt: Option<f64>,
    pub scheme: Scheme,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            cfl: 0.5,
            convergence_eps: 1e-3,
            check_interval: 0.1,
            snapshot_times: Vec::new(),
            stop_at_convergence: false,
            max_dt: None,
            scheme: Scheme::Upwind,
        }
    }
}

impl SolveConfig {
    pub fn with_horizon(horizon: f64) -> Self {
        Self { horizon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParams(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidParams(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::InvalidParams("convergence eps must be positive".into()));
        }
        if !(self.check_interval > 0.0) {
            return Err(Error::InvalidParams("check interval must be positive".into()));
        }
        if self.snapshot_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidParams("snapshot times must be finite and >= 0".into()));
        }
        if self.max_dt.is_some_and(|dt| !(dt > 0.0)) {
            return Err(Error::InvalidParams("max dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Value at the end of the run: the full horizon, or the convergence time
    /// when stopping early.
    pub final_field: ScalarField,
    /// Requested snapshots that were reached, in increasing time.
    pub snapshots: Vec<(f64, ScalarField)>,
    pub converged_at: Option<f64>,
    /// Backward time actually integrated.
    pub reached: f64,
    /// `(check time, max-node change per second since the previous check)`.
    pub change_rates: Vec<(f64, f64)>,
    pub steps: usize,
}

impl SolveResult {
    pub fn snapshot(&self, time: f64) -> Option<&ScalarField> {
        self.snapshots.iter().find(|(t, _)| (t - time).abs() < 1e-9).map(|(_, f)| f)
    }
}

/// Per-node drift and gain, sampled once for a grid.
#[derive(Debug, Clone)]
pub struct Discretization {
    spec: GridSpec,
    drift: Vec<[f64; 2]>,
    gain: Vec<[f64; 2]>,
    alpha: [f64; 2],
    dbound: DisturbanceBound,
    quantifier: Quantifier,
    scheme: Scheme,
}

impl Discretization {
    pub fn new<D: PlanarDynamics + ?Sized>(
        spec: GridSpec,
        dynamics: &D,
        dbound: DisturbanceBound,
        quantifier: Quantifier,
        scheme: Scheme,
    ) -> Result<Self> {
        spec.validate()?;
        dbound.validate()?;
        let mut drift = Vec::with_capacity(spec.len());
        let mut gain = Vec::with_capacity(spec.len());
        for i in 0..spec.n_delta {
            for j in 0..spec.n_omega {
                let (d, w) = spec.node(i, j);
                let g = dynamics.disturbance_gain(d, w);
                if scheme == Scheme::Upwind && g[0] != 0.0 && g[1] != 0.0 {
                    return Err(Error::Unsupported(
                        "upwind scheme needs the disturbance on a single axis per node".into(),
                    ));
                }
                drift.push(dynamics.drift(d, w));
                gain.push(g);
            }
        }
        let alpha = dynamics.speed_bounds(&spec, &dbound);
        Ok(Self { spec, drift, gain, alpha, dbound, quantifier, scheme })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn alpha(&self) -> [f64; 2] {
        self.alpha
    }

    /// Largest step with `dt (alpha_delta/h_delta + alpha_omega/h_omega) <= cfl`.
    pub fn stable_dt(&self, cfl: f64) -> f64 {
        let rate = self.alpha[0] / self.spec.h_delta() + self.alpha[1] / self.spec.h_omega();
        if rate > 0.0 {
            cfl / rate
        } else {
            f64::INFINITY
        }
    }

    /// Numerical Hamiltonian at every node, before the freezing `min{0, .}`.
    pub fn numerical_hamiltonian(&self, v: &ScalarField) -> Result<Vec<f64>> {
        if v.spec() != &self.spec {
            return Err(Error::GridMismatch("field does not match discretization".into()));
        }
        let mut out = vec![0.0; self.spec.len()];
        self.fill_hamiltonian(v.values(), &mut out);
        Ok(out)
    }

    fn fill_hamiltonian(&self, v: &[f64], out: &mut [f64]) {
        let s = &self.spec;
        let (nd, nw) = (s.n_delta, s.n_omega);
        let (inv_hd, inv_hw) = (1.0 / s.h_delta(), 1.0 / s.h_omega());
        for i in 0..nd {
            for j in 0..nw {
                let k = i * nw + j;
                let c = v[k];
                // zero-gradient ghost layer
                let dm = if i > 0 { (c - v[k - nw]) * inv_hd } else { 0.0 };
                let dp = if i + 1 < nd { (v[k + nw] - c) * inv_hd } else { 0.0 };
                let wm = if j > 0 { (c - v[k - 1]) * inv_hw } else { 0.0 };
                let wp = if j + 1 < nw { (v[k + 1] - c) * inv_hw } else { 0.0 };
                let a = self.drift[k];
                let g = self.gain[k];
                out[k] = match self.scheme {
                    Scheme::Upwind => {
                        godunov_axis(dm, dp, a[0], g[0], &self.dbound, self.quantifier)
                            + godunov_axis(wm, wp, a[1], g[1], &self.dbound, self.quantifier)
                    }
                    Scheme::LaxFriedrichs => {
                        let p = [0.5 * (dm + dp), 0.5 * (wm + wp)];
                        full_hamiltonian(p, a, g, &self.dbound, self.quantifier)
                            + 0.5 * self.alpha[0] * (dp - dm)
                            + 0.5 * self.alpha[1] * (wp - wm)
                    }
                };
            }
        }
    }

    /// One explicit step `V <- V + dt min{0, H^}`. Fails if `dt` exceeds the
    /// CFL bound for `cfl`.
    pub fn step_backward(&self, v: &ScalarField, dt: f64, cfl: f64) -> Result<ScalarField> {
        let bound = self.stable_dt(cfl);
        if !(dt >= 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, bound });
        }
        let ham = self.numerical_hamiltonian(v)?;
        let values = v.values().iter().zip(&ham).map(|(x, h)| x + dt * h.min(0.0)).collect();
        Ok(ScalarField::from_raw(self.spec, values))
    }
}

/// Godunov flux along one axis for `V_tau = H(p)` with
/// `H(p) = p a + ext_d (p g d)`, piecewise linear with its kink at `p = 0`:
/// the max of `H` over `[p-, p+]` when `p- <= p+`, else the min over `[p+, p-]`.
#[inline]
fn godunov_axis(
    pm: f64,
    pp: f64,
    a: f64,
    g: f64,
    dbound: &DisturbanceBound,
    quantifier: Quantifier,
) -> f64 {
    let h = |p: f64| p * a + quantifier.pick(p * g, dbound);
    let (hm, hp) = (h(pm), h(pp));
    if pm <= pp {
        let m = hm.max(hp);
        if pm <= 0.0 && pp >= 0.0 {
            m.max(0.0)
        } else {
            m
        }
    } else {
        let m = hm.min(hp);
        if pp <= 0.0 && pm >= 0.0 {
            m.min(0.0)
        } else {
            m
        }
    }
}

/// Solves for a general affine-in-`d` planar field.
pub fn solve_with<D: PlanarDynamics + ?Sized>(
    terminal: &ScalarField,
    dynamics: &D,
    dbound: DisturbanceBound,
    quantifier: Quantifier,
    config: &SolveConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let disc = Discretization::new(*terminal.spec(), dynamics, dbound, quantifier, config.scheme)?;
    run(&disc, terminal, config)
}

/// Solves the swing-equation problem for one relay position.
pub fn solve(
    terminal: &ScalarField,
    params: &SmibParams,
    relay: RelayStatus,
    dbound: DisturbanceBound,
    quantifier: Quantifier,
    config: &SolveConfig,
) -> Result<SolveResult> {
    params.validate()?;
    solve_with(terminal, &SmibDynamics::new(*params, relay), dbound, quantifier, config)
}

fn run(disc: &Discretization, terminal: &ScalarField, config: &SolveConfig) -> Result<SolveResult> {
    let spec = *disc.spec();
    let dt_max = config.max_dt.unwrap_or(f64::INFINITY).min(disc.stable_dt(config.cfl));
    let horizon = config.horizon;

    let mut snap_times: Vec<f64> =
        config.snapshot_times.iter().copied().filter(|t| *t <= horizon + 1e-12).collect();
    snap_times.sort_by(f64::total_cmp);
    snap_times.dedup();

    let mut v = terminal.values().to_vec();
    let mut ham = vec![0.0; v.len()];
    let mut snapshots = Vec::new();
    let mut next_snap = 0;
    while next_snap < snap_times.len() && snap_times[next_snap] <= 0.0 {
        snapshots.push((snap_times[next_snap], terminal.clone()));
        next_snap += 1;
    }

    let mut last_check = v.clone();
    let mut check_idx = 1usize;
    let mut change_rates = Vec::new();
    let mut converged_at = None;
    let mut tau = 0.0;
    let mut steps = 0usize;

    while tau < horizon - 1e-12 {
        let next_check = check_idx as f64 * config.check_interval;
        let mut target = horizon.min(next_check);
        if next_snap < snap_times.len() {
            target = target.min(snap_times[next_snap]);
        }
        let dt = (target - tau).min(dt_max);

        disc.fill_hamiltonian(&v, &mut ham);
        let mut finite = true;
        for (x, h) in v.iter_mut().zip(&ham) {
            *x += dt * h.min(0.0);
            finite &= x.is_finite();
        }
        steps += 1;
        tau = if target - tau <= dt_max { target } else { tau + dt };
        if !finite {
            return Err(Error::Blowup { step: steps, time: tau });
        }

        while next_snap < snap_times.len() && snap_times[next_snap] <= tau + 1e-12 {
            snapshots.push((snap_times[next_snap], ScalarField::from_raw(spec, v.clone())));
            next_snap += 1;
        }

        if tau >= next_check - 1e-12 {
            let elapsed = tau - (check_idx - 1) as f64 * config.check_interval;
            let change = v
                .iter()
                .zip(&last_check)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let rate = change / elapsed;
            change_rates.push((tau, rate));
            log::debug!("tau = {tau:.3} s, max change rate {rate:.3e}/s");
            if converged_at.is_none() && rate < config.convergence_eps {
                converged_at = Some(tau);
                if config.stop_at_convergence {
                    break;
                }
            }
            last_check.copy_from_slice(&v);
            check_idx += 1;
        }
    }

    Ok(SolveResult {
        final_field: ScalarField::from_raw(spec, v),
        snapshots,
        converged_at,
        reached: tau,
        change_rates,
        steps,
    })
}

/// First check time at which the max-node change per unit time between
/// successive snapshots drops below `eps`.
pub fn first_converged(snapshots: &[(f64, ScalarField)], eps: f64) -> Option<f64> {
    snapshots.windows(2).find_map(|w| {
        let (t0, a) = (&w[0].0, &w[0].1);
        let (t1, b) = (&w[1].0, &w[1].1);
        let dt = t1 - t0;
        let change = a.max_abs_diff(b).ok()?;
        let rate = if dt > 0.0 { change / dt } else if change == 0.0 { 0.0 } else { f64::INFINITY };
        (rate < eps).then_some(*t1)
    })
}
