//! Uniform 2-D grid over the (delta, omega) plane and the scalar fields that live on it.
//!
//! Node values are stored delta-major: the value at delta index `i` and omega
//! index `j` sits at `values[i * n_omega + j]`. The CSV dump follows the same
//! order, one row per delta index.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub delta_min: f64,
    pub delta_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_delta: usize,
    pub n_omega: usize,
}

impl Default for GridSpec {
    /// delta in [-pi, 2pi], omega in [-20, 20], 201 x 201 nodes.
    fn default() -> Self {
        Self {
            delta_min: -std::f64::consts::PI,
            delta_max: 2.0 * std::f64::consts::PI,
            omega_min: -20.0,
            omega_max: 20.0,
            n_delta: 201,
            n_omega: 201,
        }
    }
}

impl GridSpec {
    pub fn new(
        delta: (f64, f64),
        omega: (f64, f64),
        n_delta: usize,
        n_omega: usize,
    ) -> Result<Self> {
        let spec = Self {
            delta_min: delta.0,
            delta_max: delta.1,
            omega_min: omega.0,
            omega_max: omega.1,
            n_delta,
            n_omega,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Square grid with `n` nodes per axis over the given box.
    pub fn square(delta: (f64, f64), omega: (f64, f64), n: usize) -> Result<Self> {
        Self::new(delta, omega, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.delta_min, self.delta_max, self.omega_min, self.omega_max];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidGrid("bounds must be finite".into()));
        }
        if self.n_delta < 3 || self.n_omega < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {} x {}",
                self.n_delta, self.n_omega
            )));
        }
        if self.delta_min >= self.delta_max || self.omega_min >= self.omega_max {
            return Err(Error::InvalidGrid(format!(
                "empty box delta [{}, {}] omega [{}, {}]",
                self.delta_min, self.delta_max, self.omega_min, self.omega_max
            )));
        }
        Ok(())
    }

    pub fn h_delta(&self) -> f64 {
        (self.delta_max - self.delta_min) / (self.n_delta - 1) as f64
    }

    pub fn h_omega(&self) -> f64 {
        (self.omega_max - self.omega_min) / (self.n_omega - 1) as f64
    }

    pub fn h_max(&self) -> f64 {
        self.h_delta().max(self.h_omega())
    }

    pub fn len(&self) -> usize {
        self.n_delta * self.n_omega
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_omega + j
    }

    #[inline]
    pub fn delta_at(&self, i: usize) -> f64 {
        if i == self.n_delta - 1 {
            self.delta_max
        } else {
            self.delta_min + i as f64 * self.h_delta()
        }
    }

    #[inline]
    pub fn omega_at(&self, j: usize) -> f64 {
        if j == self.n_omega - 1 {
            self.omega_max
        } else {
            self.omega_min + j as f64 * self.h_omega()
        }
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.delta_at(i), self.omega_at(j))
    }

    pub fn contains(&self, delta: f64, omega: f64) -> bool {
        (self.delta_min..=self.delta_max).contains(&delta)
            && (self.omega_min..=self.omega_max).contains(&omega)
    }

    pub fn max_abs_omega(&self) -> f64 {
        self.omega_min.abs().max(self.omega_max.abs())
    }
}

/// Node values of a level-set function on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at node {k}")));
        }
        Ok(Self { spec, values })
    }

    /// Builds a field by evaluating `f(delta, omega)` at every node.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        spec.validate()?;
        let mut values = Vec::with_capacity(spec.len());
        for i in 0..spec.n_delta {
            let delta = spec.delta_at(i);
            for j in 0..spec.n_omega {
                values.push(f(delta, spec.omega_at(j)));
            }
        }
        Self::from_values(spec, values)
    }

    // Solver-internal constructor; caller guarantees length and finiteness.
    pub(crate) fn from_raw(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of nodes with value >= 0.
    pub fn count_nonnegative(&self) -> usize {
        self.values.iter().filter(|v| **v >= 0.0).count()
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    /// Bilinear interpolation; exact at nodes and for affine fields.
    pub fn interpolate(&self, delta: f64, omega: f64) -> Result<f64> {
        let s = &self.spec;
        if !s.contains(delta, omega) {
            return Err(Error::OutOfBounds { delta, omega });
        }
        let (i, tx) = cell_coord(delta, s.delta_min, s.h_delta(), s.n_delta);
        let (j, ty) = cell_coord(omega, s.omega_min, s.h_omega(), s.n_omega);
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        let lo = v00 + tx * (v10 - v00);
        let hi = v01 + tx * (v11 - v01);
        Ok(lo + ty * (hi - lo))
    }

    /// Writes the field in the grid CSV format.
    pub fn to_csv(&self) -> String {
        let s = &self.spec;
        let mut out = String::with_capacity(self.values.len() * 20);
        out.push_str("delta_min,delta_max,omega_min,omega_max,n_delta,n_omega\n");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.delta_min, s.delta_max, s.omega_min, s.omega_max, s.n_delta, s.n_omega
        );
        for row in self.values.chunks(s.n_omega) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty field csv".into()))?;
        if header.trim() != "delta_min,delta_max,omega_min,omega_max,n_delta,n_omega" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let meta = lines
            .next()
            .ok_or_else(|| Error::Parse("missing grid line".into()))?;
        let parts: Vec<&str> = meta.trim().split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Parse(format!("bad grid line `{meta}`")));
        }
        let num = |k: usize| -> Result<f64> {
            parts[k]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{}`: {e}", parts[k])))
        };
        let count = |k: usize| -> Result<usize> {
            parts[k]
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("`{}`: {e}", parts[k])))
        };
        let spec = GridSpec::new((num(0)?, num(1)?), (num(2)?, num(3)?), count(4)?, count(5)?)?;
        let mut values = Vec::with_capacity(spec.len());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{t}`: {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != spec.n_omega {
                return Err(Error::Parse(format!(
                    "row has {} values, expected {}",
                    row.len(),
                    spec.n_omega
                )));
            }
            values.extend(row);
        }
        Self::from_values(spec, values)
    }
}

// Cell index and fractional offset of `x` along one axis; the last node maps
// into the last cell.
fn cell_coord(x: f64, min: f64, h: f64, n: usize) -> (usize, f64) {
    let u = (x - min) / h;
    let i = (u.floor().max(0.0) as usize).min(n - 2);
    (i, (u - i as f64).clamp(0.0, 1.0))
}

pub fn make_field(spec: GridSpec, fill: f64) -> Result<ScalarField> {
    spec.validate()?;
    ScalarField::from_values(spec, vec![fill; spec.len()])
}

/// Exact Euclidean signed distance to an axis-aligned rectangle,
/// positive inside and zero on the boundary.
pub fn signed_distance_rect(
    spec: GridSpec,
    delta: (f64, f64),
    omega: (f64, f64),
) -> Result<ScalarField> {
    let rect = Rect::new(delta, omega)?;
    ScalarField::from_fn(spec, |d, w| rect.signed_distance(d, w))
}

/// Axis-aligned rectangle in the state plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub delta: (f64, f64),
    pub omega: (f64, f64),
}

impl Rect {
    pub fn new(delta: (f64, f64), omega: (f64, f64)) -> Result<Self> {
        if !(delta.0 < delta.1 && omega.0 < omega.1) {
            return Err(Error::InvalidShape(format!(
                "degenerate rectangle delta [{}, {}] omega [{}, {}]",
                delta.0, delta.1, omega.0, omega.1
            )));
        }
        Ok(Self { delta, omega })
    }

    pub fn signed_distance(&self, d: f64, w: f64) -> f64 {
        let qx = (self.delta.0 - d).max(d - self.delta.1);
        let qy = (self.omega.0 - w).max(w - self.omega.1);
        let outside = qx.max(0.0).hypot(qy.max(0.0));
        let inside = qx.max(qy).min(0.0);
        -(outside + inside)
    }
}

/// Normalized-radius approximation of the signed distance to an ellipse:
/// `r (1 - rho)` with `rho` the elliptical radius and `r` the geometric-mean
/// radius. Sign and zero level set are exact; magnitude is only exact for
/// circles.
pub fn signed_distance_ellipse(
    spec: GridSpec,
    center: (f64, f64),
    radii: (f64, f64),
) -> Result<ScalarField> {
    let e = Ellipse::new(center, radii)?;
    ScalarField::from_fn(spec, |d, w| e.signed_distance(d, w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub radii: (f64, f64),
}

impl Ellipse {
    pub fn new(center: (f64, f64), radii: (f64, f64)) -> Result<Self> {
        if !(radii.0 > 0.0 && radii.1 > 0.0) || !radii.0.is_finite() || !radii.1.is_finite() {
            return Err(Error::InvalidShape(format!(
                "ellipse radii must be positive, got ({}, {})",
                radii.0, radii.1
            )));
        }
        Ok(Self { center, radii })
    }

    pub fn signed_distance(&self, d: f64, w: f64) -> f64 {
        let rho = ((d - self.center.0) / self.radii.0).hypot((w - self.center.1) / self.radii.1);
        (self.radii.0 * self.radii.1).sqrt() * (1.0 - rho)
    }
}

/// Discrete gradient: central differences in the interior, one-sided at the
/// boundary nodes. Returns (d/d delta, d/d omega).
pub fn gradient_central(field: &ScalarField) -> (ScalarField, ScalarField) {
    let s = *field.spec();
    let (hd, hw) = (s.h_delta(), s.h_omega());
    let mut gd = vec![0.0; s.len()];
    let mut gw = vec![0.0; s.len()];
    for i in 0..s.n_delta {
        for j in 0..s.n_omega {
            let k = s.index(i, j);
            gd[k] = if i == 0 {
                (field.at(1, j) - field.at(0, j)) / hd
            } else if i == s.n_delta - 1 {
                (field.at(i, j) - field.at(i - 1, j)) / hd
            } else {
                (field.at(i + 1, j) - field.at(i - 1, j)) / (2.0 * hd)
            };
            gw[k] = if j == 0 {
                (field.at(i, 1) - field.at(i, 0)) / hw
            } else if j == s.n_omega - 1 {
                (field.at(i, j) - field.at(i, j - 1)) / hw
            } else {
                (field.at(i, j + 1) - field.at(i, j - 1)) / (2.0 * hw)
            };
        }
    }
    (ScalarField::from_raw(s, gd), ScalarField::from_raw(s, gw))
}

pub fn pointwise_min(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    a.check_same_grid(b)?;
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x.min(*y)).collect();
    Ok(ScalarField::from_raw(a.spec, values))
}

pub fn pointwise_neg(a: &ScalarField) -> ScalarField {
    ScalarField::from_raw(a.spec, a.values.iter().map(|v| -v).collect())
}

/// Zero level set as a list of polylines, each a sequence of (delta, omega).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Contour {
    pub polylines: Vec<Vec<[f64; 2]>>,
}

impl Contour {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn vertices(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.polylines.iter().flatten()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("contour serializes")
    }
}

// A crossing lives on a unique grid edge: horizontal edges join (i, j)-(i+1, j),
// vertical edges join (i, j)-(i, j+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum EdgeId {
    AlongDelta(usize, usize),
    AlongOmega(usize, usize),
}

/// Marching squares on the sign pattern `value >= 0`, with linear
/// interpolation of the crossing along each cell edge. Saddle cells are
/// resolved by the sign of the cell-center average.
pub fn extract_zero_contour(field: &ScalarField) -> Contour {
    let s = *field.spec();
    let inside = |v: f64| v >= 0.0;

    let crossing = |e: EdgeId| -> [f64; 2] {
        let (i0, j0, i1, j1) = match e {
            EdgeId::AlongDelta(i, j) => (i, j, i + 1, j),
            EdgeId::AlongOmega(i, j) => (i, j, i, j + 1),
        };
        let (a, b) = (field.at(i0, j0), field.at(i1, j1));
        let t = if a == b { 0.5 } else { (a / (a - b)).clamp(0.0, 1.0) };
        let (d0, w0) = s.node(i0, j0);
        let (d1, w1) = s.node(i1, j1);
        [d0 + t * (d1 - d0), w0 + t * (w1 - w0)]
    };

    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
    for i in 0..s.n_delta - 1 {
        for j in 0..s.n_omega - 1 {
            // corners counter-clockwise: (i,j) (i+1,j) (i+1,j+1) (i,j+1)
            let v = [field.at(i, j), field.at(i + 1, j), field.at(i + 1, j + 1), field.at(i, j + 1)];
            let edges = [
                EdgeId::AlongDelta(i, j),
                EdgeId::AlongOmega(i + 1, j),
                EdgeId::AlongDelta(i, j + 1),
                EdgeId::AlongOmega(i, j),
            ];
            let cut: Vec<usize> = (0..4)
                .filter(|&k| inside(v[k]) != inside(v[(k + 1) % 4]))
                .collect();
            match cut.len() {
                0 => {}
                2 => segments.push((edges[cut[0]], edges[cut[1]])),
                4 => {
                    let center_inside = inside(v.iter().sum::<f64>() / 4.0);
                    // Pair each crossing with its neighbour so the centre stays
                    // connected to the corners sharing its sign.
                    if center_inside == inside(v[0]) {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => unreachable!("sign changes around a cell come in pairs"),
            }
        }
    }

    let mut incident: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        incident.entry(*a).or_default().push(k);
        incident.entry(*b).or_default().push(k);
    }

    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    let walk = |start_seg: usize, from: EdgeId, used: &mut Vec<bool>| -> Vec<EdgeId> {
        let mut chain = vec![from];
        let mut seg = start_seg;
        let mut at = from;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            chain.push(next);
            at = next;
            match incident[&at].iter().find(|&&k| !used[k]) {
                Some(&k) => seg = k,
                None => break,
            }
        }
        chain
    };

    // Open chains first (start at edges with a single incident segment), then loops.
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by_key(|&k| {
        let (a, b) = segments[k];
        let open = incident[&a].len() == 1 || incident[&b].len() == 1;
        (!open, k)
    });
    for k in order {
        if used[k] {
            continue;
        }
        let (a, b) = segments[k];
        let start = if incident[&b].len() == 1 && incident[&a].len() != 1 { b } else { a };
        let chain = walk(k, start, &mut used);
        polylines.push(chain.into_iter().map(&crossing).collect());
    }
    Contour { polylines }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit3() -> GridSpec {
        GridSpec::square((0.0, 1.0), (0.0, 1.0), 3).unwrap()
    }

    #[test]
    fn make_field_fills() {
        let f = make_field(unit3(), 0.0).unwrap();
        assert_eq!(f.values(), &[0.0; 9]);
        let big = make_field(GridSpec::default(), 1.0).unwrap();
        assert_eq!(big.values().len(), 40401);
        assert!(big.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn rejects_small_or_empty_grids() {
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 2, 3).is_err());
        assert!(GridSpec::new((1.0, 1.0), (0.0, 1.0), 3, 3).is_err());
        assert!(GridSpec::new((0.0, 1.0), (2.0, -1.0), 3, 3).is_err());
        let bad = GridSpec { n_delta: 2, ..unit3() };
        assert!(make_field(bad, 0.0).is_err());
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(ScalarField::from_values(unit3(), v).is_err());
        assert!(ScalarField::from_values(unit3(), vec![0.0; 8]).is_err());
    }

    // Oracle: distance to the boundary by dense sampling of its perimeter.
    fn sampled_boundary_distance(r: &Rect, d: f64, w: f64, n: usize) -> f64 {
        let mut best = f64::INFINITY;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let xd = r.delta.0 + t * (r.delta.1 - r.delta.0);
            let xw = r.omega.0 + t * (r.omega.1 - r.omega.0);
            for (pd, pw) in [(xd, r.omega.0), (xd, r.omega.1), (r.delta.0, xw), (r.delta.1, xw)] {
                best = best.min((d - pd).hypot(w - pw));
            }
        }
        best
    }

    #[test]
    fn rect_distance_examples() {
        let r = Rect::new((-FRAC_PI_2, FRAC_PI_2), (-6.0, 6.0)).unwrap();
        assert_abs_diff_eq!(r.signed_distance(0.0, 0.0), 1.5707963267948966, epsilon = 1e-12);
        assert_abs_diff_eq!(
            r.signed_distance(0.0, 0.0),
            sampled_boundary_distance(&r, 0.0, 0.0, 200_000),
            epsilon = 1e-6
        );
        assert_eq!(r.signed_distance(FRAC_PI_2, 0.0), 0.0);
        assert_abs_diff_eq!(
            r.signed_distance(FRAC_PI_2 + 1.0, 7.0),
            -(2.0f64).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rect_matches_sampling_oracle() {
        let r = Rect::new((-FRAC_PI_2, FRAC_PI_2), (-6.0, 6.0)).unwrap();
        let pts = [(0.3, 2.0), (-1.0, -5.5), (2.5, 0.0), (2.5, 8.0), (-3.0, -9.0), (0.0, 6.5)];
        for (d, w) in pts {
            let sd = r.signed_distance(d, w);
            let oracle = sampled_boundary_distance(&r, d, w, 400_000);
            assert_abs_diff_eq!(sd.abs(), oracle, epsilon = 1e-6);
        }
    }

    #[test]
    fn rect_gradient_is_unit_off_medial_axis() {
        let spec = GridSpec::square((-3.0, 3.0), (-8.0, 8.0), 241).unwrap();
        let f = signed_distance_rect(spec, (-FRAC_PI_2, FRAC_PI_2), (-6.0, 6.0)).unwrap();
        let r = Rect::new((-FRAC_PI_2, FRAC_PI_2), (-6.0, 6.0)).unwrap();
        let eps = 1e-6;
        // Away from the medial axis the finite-difference gradient of the exact
        // distance has unit norm.
        for (d, w) in [(1.2, 0.0), (2.4, 1.0), (0.0, 7.0), (2.5, 7.5), (-2.0, -7.0), (0.5, -5.0)] {
            let gd = (r.signed_distance(d + eps, w) - r.signed_distance(d - eps, w)) / (2.0 * eps);
            let gw = (r.signed_distance(d, w + eps) - r.signed_distance(d, w - eps)) / (2.0 * eps);
            assert_abs_diff_eq!(gd.hypot(gw), 1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(
                f.interpolate(d, w).unwrap().abs(),
                sampled_boundary_distance(&r, d, w, 100_000),
                epsilon = 0.05
            );
        }
    }

    #[test]
    fn degenerate_rect_errors() {
        assert!(signed_distance_rect(unit3(), (1.0, 1.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn ellipse_examples() {
        let c = Ellipse::new((0.0, 0.0), (1.0, 1.0)).unwrap();
        assert_eq!(c.signed_distance(0.0, 0.0), 1.0);
        assert_eq!(c.signed_distance(1.0, 0.0), 0.0);
        let e = Ellipse::new((0.4606, 0.0), (0.1, 0.5)).unwrap();
        assert_abs_diff_eq!(e.signed_distance(0.4606, 0.5), 0.0, epsilon = 1e-15);
        assert!(e.signed_distance(0.4606, 0.6) < 0.0);
        assert!(Ellipse::new((0.0, 0.0), (0.0, 1.0)).is_err());
        assert!(signed_distance_ellipse(unit3(), (0.0, 0.0), (1.0, -1.0)).is_err());
    }

    #[test]
    fn gradient_of_linear_fields() {
        let spec = GridSpec::new((-1.0, 2.0), (0.0, 5.0), 7, 9).unwrap();
        let f = ScalarField::from_fn(spec, |d, _| d).unwrap();
        let (gd, gw) = gradient_central(&f);
        assert!(gd.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(gw.values().iter().all(|v| v.abs() < 1e-12));
        let f = ScalarField::from_fn(spec, |_, w| w).unwrap();
        let (gd, gw) = gradient_central(&f);
        assert!(gd.values().iter().all(|v| v.abs() < 1e-12));
        assert!(gw.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gradient_of_square_is_central_difference() {
        let spec = GridSpec::new((0.0, 2.0), (0.0, 2.0), 3, 3).unwrap();
        let f = ScalarField::from_fn(spec, |d, _| d * d).unwrap();
        let (gd, _) = gradient_central(&f);
        assert_eq!(gd.at(1, 1), 2.0);
        assert_eq!(gd.at(0, 0), 1.0);
        assert_eq!(gd.at(2, 0), 3.0);
    }

    #[test]
    fn interpolation_examples() {
        let spec = GridSpec::square((0.0, 2.0), (0.0, 2.0), 3).unwrap();
        let f = ScalarField::from_fn(spec, |d, w| d + w).unwrap();
        assert_abs_diff_eq!(f.interpolate(0.25, 0.75).unwrap(), 1.0, epsilon = 1e-15);
        let g = ScalarField::from_fn(spec, |d, w| (d * 3.0).sin() + w * w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (d, w) = spec.node(i, j);
                assert_eq!(g.interpolate(d, w).unwrap(), g.at(i, j));
            }
        }
        let five = make_field(spec, 5.0).unwrap();
        assert_eq!(five.interpolate(1.37, 0.2).unwrap(), 5.0);
        assert!(matches!(f.interpolate(2.1, 0.0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn contour_of_vertical_line() {
        let spec = GridSpec::square((0.0, 1.0), (0.0, 1.0), 11).unwrap();
        let f = ScalarField::from_fn(spec, |d, _| d - 0.55).unwrap();
        let c = extract_zero_contour(&f);
        assert_eq!(c.polylines.len(), 1);
        assert_eq!(c.polylines[0].len(), 11);
        for v in c.vertices() {
            assert_abs_diff_eq!(v[0], 0.55, epsilon = 1e-12);
        }
    }

    #[test]
    fn contour_at_grid_line() {
        let spec = GridSpec::square((0.0, 1.0), (0.0, 1.0), 5).unwrap();
        let f = ScalarField::from_fn(spec, |d, _| d - 0.5).unwrap();
        let c = extract_zero_contour(&f);
        assert_eq!(c.polylines.len(), 1);
        assert!(c.vertices().all(|v| (v[0] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn uniform_sign_gives_empty_contour() {
        let f = make_field(unit3(), 2.0).unwrap();
        assert!(extract_zero_contour(&f).is_empty());
        let f = make_field(unit3(), -2.0).unwrap();
        assert!(extract_zero_contour(&f).is_empty());
    }

    #[test]
    fn circle_contour_closes_near_unit_circle() {
        let spec = GridSpec::square((-2.0, 2.0), (-2.0, 2.0), 161).unwrap();
        let f = ScalarField::from_fn(spec, |d, w| 1.0 - d * d - w * w).unwrap();
        let c = extract_zero_contour(&f);
        assert_eq!(c.polylines.len(), 1);
        let line = &c.polylines[0];
        assert_eq!(line.first(), line.last(), "closed loop");
        let h = spec.h_max();
        for v in line {
            assert!((v[0].hypot(v[1]) - 1.0).abs() <= h);
        }
        let diag = spec.h_delta().hypot(spec.h_omega());
        for pair in line.windows(2) {
            let step = (pair[0][0] - pair[1][0]).hypot(pair[0][1] - pair[1][1]);
            assert!(step <= diag + 1e-12);
        }
    }

    #[test]
    fn contour_vertices_are_zero_for_edge_linear_fields() {
        let spec = GridSpec::new((-1.0, 3.0), (-2.0, 2.0), 23, 17).unwrap();
        let f = ScalarField::from_fn(spec, |d, w| 0.7 * d - 1.3 * w + 0.2).unwrap();
        let c = extract_zero_contour(&f);
        assert!(!c.is_empty());
        for v in c.vertices() {
            assert!(spec.contains(v[0], v[1]));
            assert!(f.interpolate(v[0], v[1]).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn saddle_cell_gives_two_segments() {
        let spec = GridSpec::square((0.0, 1.0), (0.0, 1.0), 3).unwrap();
        // checkerboard corners on the centre cell pattern
        let f = ScalarField::from_fn(spec, |d, w| (d - 0.5) * (w - 0.5) + 0.01).unwrap();
        let c = extract_zero_contour(&f);
        assert_eq!(c.polylines.len(), 2);
    }

    #[test]
    fn min_and_neg() {
        let ones = make_field(unit3(), 1.0).unwrap();
        let neg = make_field(unit3(), -1.0).unwrap();
        assert_eq!(pointwise_min(&ones, &neg).unwrap(), neg);
        let g = ScalarField::from_fn(unit3(), |d, w| d - 2.0 * w).unwrap();
        assert_eq!(pointwise_neg(&pointwise_neg(&g)), g);
        let other = make_field(GridSpec::square((0.0, 2.0), (0.0, 1.0), 3).unwrap(), 0.0).unwrap();
        assert!(pointwise_min(&ones, &other).is_err());
    }

    #[test]
    fn min_is_intersection() {
        let spec = GridSpec::square((-3.0, 3.0), (-3.0, 3.0), 31).unwrap();
        let a = signed_distance_rect(spec, (-1.0, 1.0), (-1.0, 1.0)).unwrap();
        let b = signed_distance_rect(spec, (2.0, 3.0), (-1.0, 1.0)).unwrap();
        let m = pointwise_min(&a, &b).unwrap();
        assert!(m.interpolate(0.0, 0.0).unwrap() < 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let spec = GridSpec::new((-PI, 2.0 * PI), (-20.0, 20.0), 5, 4).unwrap();
        let f = ScalarField::from_fn(spec, |d, w| d.sin() * w + 1.0 / 3.0).unwrap();
        let text = f.to_csv();
        assert!(text.starts_with("delta_min,delta_max,omega_min,omega_max,n_delta,n_omega\n"));
        assert_eq!(text.lines().count(), 2 + 5);
        assert_eq!(ScalarField::from_csv(&text).unwrap(), f);
        assert!(ScalarField::from_csv("nope\n").is_err());
    }

    #[test]
    fn contour_json_shape() {
        let c = Contour { polylines: vec![vec![[0.0, 1.0], [0.5, 1.5]]] };
        assert_eq!(c.to_json(), "[[[0.0,1.0],[0.5,1.5]]]");
    }
}
