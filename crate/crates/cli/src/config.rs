use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swingreach::grid::GridSpec;
use swingreach::hjsolver::{DisturbanceBound, Scheme, SolveConfig};
use swingreach::plant::{equilibria, RelayStatus, SafeBounds, SmibParams, State};
use swingreach::reachability::safe_set_grid;

use crate::error::{CliError, CliResult};

/// Everything a run needs. Missing keys fall back to the defaults below,
/// so an empty file (or no file) reproduces the reference scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub params: SmibParams,
    /// Grid for stability regions and the coordinated attack.
    pub grid: GridSpec,
    /// Grid for invariant/viability sets: the safe set padded by `margin`.
    pub set_grid: SetGridConfig,
    /// Defaults to the closed-relay equilibrium with half-widths pi/2 and 6.
    pub safe: Option<SafeBounds>,
    pub dbound: DisturbanceBound,
    pub relays: Vec<RelayStatus>,
    /// Backward horizon for set computations, s.
    pub horizon: f64,
    pub snapshots: Vec<f64>,
    /// Stability-ball radii (delta, omega).
    pub ball_radii: [f64; 2],
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    pub attack: AttackConfig,
    pub sweep: SweepConfig,
    pub hitl: HitlConfig,
    pub out: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            params: SmibParams::default(),
            grid: GridSpec::default(),
            set_grid: SetGridConfig::default(),
            safe: None,
            dbound: DisturbanceBound { d_l: -0.2, d_h: 0.2 },
            relays: vec![RelayStatus::Open, RelayStatus::Closed],
            horizon: 3.0,
            snapshots: vec![1.5, 3.0],
            ball_radii: [0.1, 0.5],
            solver: SolverConfig::default(),
            simulation: SimulationConfig::default(),
            attack: AttackConfig::default(),
            sweep: SweepConfig::default(),
            hitl: HitlConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetGridConfig {
    pub margin: f64,
    pub nodes: usize,
}

impl Default for SetGridConfig {
    fn default() -> Self {
        Self { margin: 0.3, nodes: 201 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub cfl: f64,
    pub convergence_eps: f64,
    pub check_interval: f64,
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self { cfl: d.cfl, convergence_eps: d.convergence_eps, check_interval: d.check_interval, scheme: d.scheme }
    }
}

/// Disturbance source for simulations and the HITL controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyConfig {
    Zero,
    Constant(f64),
    /// d1* from the invariant set of the safe set under the configured bound.
    KeepOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub x0: Vec<[f64; 2]>,
    pub dt: f64,
    pub horizon: f64,
    pub policy: PolicyConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { x0: vec![[-0.5, 13.0]], dt: 1e-3, horizon: 10.0, policy: PolicyConfig::Zero }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub x0: Vec<[f64; 2]>,
    pub dt: f64,
    pub horizon: f64,
    pub coordinated: bool,
    pub coordinated_bound: f64,
    pub region_horizon: f64,
    pub policy_horizon: f64,
    /// Start of the coordinated run; defaults to the closed-relay equilibrium.
    pub coordinated_x0: Option<[f64; 2]>,
    pub coordinated_horizon: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            x0: vec![[1.2, 6.0]],
            dt: 1e-3,
            horizon: 3.0,
            coordinated: true,
            coordinated_bound: 0.65,
            region_horizon: 3.0,
            policy_horizon: 3.0,
            coordinated_x0: None,
            coordinated_horizon: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub horizon: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { start: 0.1, stop: 0.7, step: 0.05, horizon: 3.0 }
    }
}

impl SweepConfig {
    /// `start, start + step, ..., stop`, rounded to 1e-9 so that `0.1 + 8 *
    /// 0.05` prints as `0.5`.
    pub fn bounds(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| ((self.start + k as f64 * self.step) * 1e9).round() / 1e9).collect()
    }
}

/// Replacement disturbance inside a spoof window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideConfig {
    Keep,
    Constant(f64),
    KeepOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub t0: f64,
    #[serde(default = "infinity")]
    pub t1: f64,
    #[serde(default = "keep")]
    pub d: OverrideConfig,
    #[serde(default)]
    pub relay: Option<RelayStatus>,
}

fn infinity() -> f64 {
    f64::INFINITY
}

fn keep() -> OverrideConfig {
    OverrideConfig::Keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitlConfig {
    pub x0: [f64; 2],
    pub dt: f64,
    pub horizon: f64,
    /// Relay commanded by the honest controller.
    pub relay: RelayStatus,
    pub policy: PolicyConfig,
    pub timeout_s: f64,
    pub realtime: bool,
    pub rules: Vec<RuleConfig>,
}

impl Default for HitlConfig {
    fn default() -> Self {
        Self {
            x0: [1.2, 6.0],
            dt: 1e-3,
            horizon: 3.0,
            relay: RelayStatus::Open,
            policy: PolicyConfig::KeepOut,
            timeout_s: 5.0,
            realtime: false,
            rules: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn safe_bounds(&self) -> CliResult<SafeBounds> {
        match self.safe {
            Some(s) => Ok(s),
            None => SafeBounds::nominal(&self.params).map_err(config_err),
        }
    }

    pub fn set_grid_spec(&self) -> CliResult<GridSpec> {
        safe_set_grid(&self.safe_bounds()?, self.set_grid.margin, self.set_grid.nodes).map_err(config_err)
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            horizon: self.horizon,
            cfl: self.solver.cfl,
            convergence_eps: self.solver.convergence_eps,
            check_interval: self.solver.check_interval,
            snapshot_times: self.snapshots.clone(),
            scheme: self.solver.scheme,
            ..SolveConfig::default()
        }
    }

    pub fn radii(&self) -> (f64, f64) {
        (self.ball_radii[0], self.ball_radii[1])
    }

    pub fn coordinated_start(&self) -> CliResult<State> {
        match self.attack.coordinated_x0 {
            Some([d, w]) => Ok(State::new(d, w)),
            None => Ok(equilibria(&self.params, RelayStatus::Closed).map_err(config_err)?.stable),
        }
    }

    /// Checks everything that can be checked before running, so that bad
    /// input is reported as a configuration error rather than a failed run.
    pub fn validate(&self) -> CliResult<()> {
        self.params.validate().map_err(config_err)?;
        self.grid.validate().map_err(config_err)?;
        self.set_grid_spec()?;
        self.safe_bounds()?.validate().map_err(config_err)?;
        self.dbound.validate().map_err(config_err)?;
        self.solve_config().validate().map_err(config_err)?;
        if self.relays.is_empty() {
            return Err(CliError::Config("relays must not be empty".into()));
        }
        for (name, v) in [
            ("ball_radii[0]", self.ball_radii[0]),
            ("ball_radii[1]", self.ball_radii[1]),
            ("simulation.dt", self.simulation.dt),
            ("attack.dt", self.attack.dt),
            ("attack.coordinated_bound", self.attack.coordinated_bound),
            ("sweep.step", self.sweep.step),
            ("hitl.dt", self.hitl.dt),
            ("hitl.timeout_s", self.hitl.timeout_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("simulation.horizon", self.simulation.horizon),
            ("attack.horizon", self.attack.horizon),
            ("attack.region_horizon", self.attack.region_horizon),
            ("attack.policy_horizon", self.attack.policy_horizon),
            ("attack.coordinated_horizon", self.attack.coordinated_horizon),
            ("sweep.horizon", self.sweep.horizon),
            ("hitl.horizon", self.hitl.horizon),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0 <= self.sweep.start && self.sweep.start <= self.sweep.stop) {
            return Err(CliError::Config("sweep needs 0 <= start <= stop".into()));
        }
        if self.hitl.horizon < self.hitl.dt {
            return Err(CliError::Config("hitl.horizon must be at least one step".into()));
        }
        for (i, r) in self.hitl.rules.iter().enumerate() {
            if r.t0.is_nan() || r.t1.is_nan() || r.t0 > r.t1 {
                return Err(CliError::Config(format!("hitl.rules[{i}]: window [{}, {}] is empty", r.t0, r.t1)));
            }
        }
        Ok(())
    }
}

fn config_err(e: swingreach::Error) -> CliError {
    CliError::Config(e.to_string())
}
