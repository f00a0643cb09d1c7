//! Invariant, viability and reach sets, and the stability region, as
//! superlevel sets `{x | V(x) >= 0}` of Hamilton-Jacobi value functions.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{
    extract_zero_contour, pointwise_min, pointwise_neg, signed_distance_ellipse,
    signed_distance_rect, Contour, GridSpec, ScalarField,
};
use crate::hjsolver::{self, DisturbanceBound, Quantifier, SolveConfig, SolveResult};
use crate::plant::{equilibria, RelayStatus, SafeBounds, SmibParams, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Invariant,
    Viability,
    Reach,
    StabilityRegion,
}

#[derive(Debug, Clone)]
pub struct SetResult {
    pub value_field: ScalarField,
    pub boundary: Contour,
    pub kind: SetKind,
    pub horizon: f64,
    pub relay: RelayStatus,
    pub dbound: DisturbanceBound,
    pub converged_at: Option<f64>,
    /// Value field at the requested snapshot times, already in this set's sign
    /// convention.
    pub snapshots: Vec<(f64, ScalarField)>,
    pub change_rates: Vec<(f64, f64)>,
}

/// Metadata record written next to each set dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetadata {
    pub kind: SetKind,
    pub horizon: f64,
    pub relay: RelayStatus,
    pub dbound: DisturbanceBound,
    pub converged_at: Option<f64>,
    pub empty: bool,
    pub member_nodes: usize,
    pub grid: GridSpec,
}

impl SetResult {
    fn from_solve(
        solved: SolveResult,
        negate: bool,
        kind: SetKind,
        horizon: f64,
        relay: RelayStatus,
        dbound: DisturbanceBound,
    ) -> Self {
        let flip = |f: ScalarField| if negate { pointwise_neg(&f) } else { f };
        let value_field = flip(solved.final_field);
        let boundary = extract_zero_contour(&value_field);
        let snapshots = solved.snapshots.into_iter().map(|(t, f)| (t, flip(f))).collect();
        Self {
            value_field,
            boundary,
            kind,
            horizon,
            relay,
            dbound,
            converged_at: solved.converged_at,
            snapshots,
            change_rates: solved.change_rates,
        }
    }

    /// Membership of an arbitrary point by interpolated value (`>= 0` is inside).
    pub fn contains(&self, state: State) -> Result<bool> {
        Ok(self.value_field.interpolate(state.delta, state.omega)? >= 0.0)
    }

    /// Interpolated value, with the query clamped onto the grid box.
    pub fn value_at(&self, state: State) -> f64 {
        let s = self.value_field.spec();
        let d = state.delta.clamp(s.delta_min, s.delta_max);
        let w = state.omega.clamp(s.omega_min, s.omega_max);
        self.value_field.interpolate(d, w).expect("clamped into the grid")
    }

    pub fn is_empty(&self) -> bool {
        is_empty(self)
    }

    pub fn snapshot(&self, time: f64) -> Option<&ScalarField> {
        self.snapshots.iter().find(|(t, _)| (t - time).abs() < 1e-9).map(|(_, f)| f)
    }

    pub fn metadata(&self) -> SetMetadata {
        SetMetadata {
            kind: self.kind,
            horizon: self.horizon,
            relay: self.relay,
            dbound: self.dbound,
            converged_at: self.converged_at,
            empty: self.is_empty(),
            member_nodes: self.value_field.count_nonnegative(),
            grid: *self.value_field.spec(),
        }
    }
}

/// True iff no grid node has value `>= 0`.
pub fn is_empty(result: &SetResult) -> bool {
    result.value_field.values().iter().all(|v| *v < 0.0)
}

/// First snapshot time at which the max-node change per unit time since the
/// previous snapshot is below `eps`.
pub fn converged(snapshots: &[(f64, ScalarField)], eps: f64) -> Option<f64> {
    hjsolver::first_converged(snapshots, eps)
}

/// Grid tightly enclosing the safe set with a margin on every side.
/// Invariant and viability sets lie inside the safe set, so nothing outside
/// this box affects their sign.
pub fn safe_set_grid(safe: &SafeBounds, margin: f64, n: usize) -> Result<GridSpec> {
    let (dl, dh) = safe.delta_range();
    let (wl, wh) = safe.omega_range();
    GridSpec::square((dl - margin, dh + margin), (wl - margin, wh + margin), n)
}

pub fn safe_set_field(grid: GridSpec, safe: &SafeBounds) -> Result<ScalarField> {
    safe.validate()?;
    signed_distance_rect(grid, safe.delta_range(), safe.omega_range())
}

/// Grid, plant and solver settings shared by a family of set computations.
#[derive(Debug, Clone)]
pub struct ReachAnalysis {
    pub grid: GridSpec,
    pub params: SmibParams,
    pub solver: SolveConfig,
}

impl ReachAnalysis {
    pub fn new(grid: GridSpec, params: SmibParams, solver: SolveConfig) -> Result<Self> {
        grid.validate()?;
        params.validate()?;
        solver.validate()?;
        Ok(Self { grid, params, solver })
    }

    fn config(&self, horizon: f64) -> SolveConfig {
        SolveConfig { horizon, ..self.solver.clone() }
    }

    fn solve_kind(
        &self,
        terminal: &ScalarField,
        relay: RelayStatus,
        dbound: DisturbanceBound,
        quantifier: Quantifier,
        horizon: f64,
    ) -> Result<SolveResult> {
        hjsolver::solve(terminal, &self.params, relay, dbound, quantifier, &self.config(horizon))
    }

    /// States that stay in the safe set for every admissible disturbance.
    pub fn invariant_set(
        &self,
        safe: &SafeBounds,
        relay: RelayStatus,
        dbound: DisturbanceBound,
        horizon: f64,
    ) -> Result<SetResult> {
        let l = safe_set_field(self.grid, safe)?;
        let solved = self.solve_kind(&l, relay, dbound, Quantifier::Inf, horizon)?;
        Ok(SetResult::from_solve(solved, false, SetKind::Invariant, horizon, relay, dbound))
    }

    /// States that stay in the nonnegative region of `target` for every
    /// admissible disturbance.
    pub fn invariant_of(
        &self,
        target: &ScalarField,
        relay: RelayStatus,
        dbound: DisturbanceBound,
        horizon: f64,
    ) -> Result<SetResult> {
        let solved = self.solve_kind(target, relay, dbound, Quantifier::Inf, horizon)?;
        Ok(SetResult::from_solve(solved, false, SetKind::Invariant, horizon, relay, dbound))
    }

    /// States from which some admissible disturbance keeps the state safe.
    pub fn viability_set(
        &self,
        safe: &SafeBounds,
        relay: RelayStatus,
        dbound: DisturbanceBound,
        horizon: f64,
    ) -> Result<SetResult> {
        let l = safe_set_field(self.grid, safe)?;
        let solved = self.solve_kind(&l, relay, dbound, Quantifier::Sup, horizon)?;
        Ok(SetResult::from_solve(solved, false, SetKind::Viability, horizon, relay, dbound))
    }

    /// States from which some disturbance drives the state into the target
    /// within the horizon, as the complement of the invariant set of the
    /// target's complement.
    pub fn reach_set(
        &self,
        target: &ScalarField,
        relay: RelayStatus,
        dbound: DisturbanceBound,
        horizon: f64,
    ) -> Result<SetResult> {
        self.reach_kind(target, relay, dbound, horizon, SetKind::Reach)
    }

    fn reach_kind(
        &self,
        target: &ScalarField,
        relay: RelayStatus,
        dbound: DisturbanceBound,
        horizon: f64,
        kind: SetKind,
    ) -> Result<SetResult> {
        let complement = pointwise_neg(target);
        let solved = self.solve_kind(&complement, relay, dbound, Quantifier::Inf, horizon)?;
        Ok(SetResult::from_solve(solved, true, kind, horizon, relay, dbound))
    }

    /// Undisturbed reach set of a small ellipse around the stable equilibrium.
    pub fn stability_region(
        &self,
        relay: RelayStatus,
        horizon: f64,
        ball_radii: (f64, f64),
    ) -> Result<SetResult> {
        let target = self.stability_target(relay, ball_radii)?;
        self.reach_kind(&target, relay, DisturbanceBound::zero(), horizon, SetKind::StabilityRegion)
    }

    pub fn stability_target(&self, relay: RelayStatus, ball_radii: (f64, f64)) -> Result<ScalarField> {
        let eq = equilibria(&self.params, relay)?;
        signed_distance_ellipse(self.grid, (eq.stable.delta, eq.stable.omega), ball_radii)
    }
}

/// Default stability-ball radii (rad, rad/s).
pub const DEFAULT_BALL_RADII: (f64, f64) = (0.1, 0.5);

/// Intersection of two invariant sets, e.g. the relay-open and relay-closed
/// sets, as a pointwise minimum of their value fields.
pub fn intersection(a: &SetResult, b: &SetResult) -> Result<ScalarField> {
    pointwise_min(&a.value_field, &b.value_field)
}
