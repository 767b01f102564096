//! Multi-scale spatio-temporal Geyer saturation model.
//!
//! The unnormalised density is
//!
//! ```text
//! f(x) ∝ Π_{(x,t) ∈ x} λ(x,t) Π_j γ_j^{min(s_j, n_j((x,t); x))}
//! ```
//!
//! where `n_j((x,t); x)` counts the *other* events of `x` inside the
//! cylinder `(r_j, q_j)` centred at `(x,t)`. Neighbour counts are index
//! based: a coincident duplicate is another event and is counted.
//!
//! Every conditional intensity is evaluated as `λ(u) exp(Σ_j S_j log γ_j)`
//! with `S` the change in saturated counts when `u` joins the configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cylinder_count, EventPoint, NeighborIndex, PointPattern, SpacetimeWindow};

/// Irregular part of one interaction scale: radii and saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleShape {
    pub r: f64,
    pub q: f64,
    pub s: f64,
}

impl ScaleShape {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidParameter(format!("r = {} must be positive", self.r)));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q = {} must be positive", self.q)));
        }
        if self.s.is_nan() || self.s < 0.0 {
            return Err(Error::InvalidParameter(format!("s = {} must be non-negative", self.s)));
        }
        Ok(())
    }

    #[inline]
    fn saturate(&self, n: u32) -> f64 {
        (n as f64).min(self.s)
    }
}

/// One Geyer component: interaction `gamma` acting on cylinder counts
/// saturated at `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleComponent {
    pub gamma: f64,
    pub r: f64,
    pub q: f64,
    pub s: f64,
}

impl ScaleComponent {
    pub fn shape(&self) -> ScaleShape {
        ScaleShape {
            r: self.r,
            q: self.q,
            s: self.s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma = {} must be positive",
                self.gamma
            )));
        }
        self.shape().validate()
    }
}

/// First-order trend `λ(x,t) = β μ(x,t)`.
///
/// `Grid` holds a piecewise-constant raster of `μ` over an
/// `nx × ny × nt` partition of the window, stored with x varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrendFunction {
    Constant { beta: f64 },
    Grid { beta: f64, dims: [usize; 3], values: Vec<f64> },
}

impl TrendFunction {
    pub fn constant(beta: f64) -> Self {
        TrendFunction::Constant { beta }
    }

    pub fn validate(&self) -> Result<()> {
        let beta = self.beta();
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta = {beta} must be positive")));
        }
        if let TrendFunction::Grid { dims, values, .. } = self {
            if dims.contains(&0) {
                return Err(Error::InvalidParameter("trend raster dims must be positive".into()));
            }
            let n = dims[0] * dims[1] * dims[2];
            if values.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "trend raster has {} values, expected {n}",
                    values.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "trend raster value {v} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        match self {
            TrendFunction::Constant { beta } | TrendFunction::Grid { beta, .. } => *beta,
        }
    }

    /// The parameter-free factor `μ(x,t)`.
    pub fn mu(&self, window: &SpacetimeWindow, p: &EventPoint) -> f64 {
        match self {
            TrendFunction::Constant { .. } => 1.0,
            TrendFunction::Grid { dims, values, .. } => {
                let lows = window.lows();
                let lengths = window.lengths();
                let coords = [p.x, p.y, p.t];
                let mut idx = [0usize; 3];
                for d in 0..3 {
                    let k = ((coords[d] - lows[d]) / lengths[d] * dims[d] as f64).floor();
                    idx[d] = if k <= 0.0 {
                        0
                    } else {
                        (k as usize).min(dims[d] - 1)
                    };
                }
                values[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])]
            }
        }
    }

    pub fn lambda(&self, window: &SpacetimeWindow, p: &EventPoint) -> f64 {
        self.beta() * self.mu(window, p)
    }

    pub fn sup_mu(&self) -> f64 {
        match self {
            TrendFunction::Constant { .. } => 1.0,
            TrendFunction::Grid { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TrendFunction::Constant { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeyerModel {
    pub window: SpacetimeWindow,
    pub trend: TrendFunction,
    pub scales: Vec<ScaleComponent>,
}

impl GeyerModel {
    pub fn new(window: SpacetimeWindow, trend: TrendFunction, scales: Vec<ScaleComponent>) -> Result<Self> {
        let m = GeyerModel { window, trend, scales };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.trend.validate()?;
        if self.scales.is_empty() {
            return Err(Error::InvalidParameter("model needs at least one scale".into()));
        }
        for (j, s) in self.scales.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::InvalidParameter(format!("scale {}: {e}", j + 1)))?;
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<ScaleShape> {
        self.scales.iter().map(ScaleComponent::shape).collect()
    }

    pub fn log_gammas(&self) -> Vec<f64> {
        self.scales.iter().map(|s| s.gamma.ln()).collect()
    }

    /// `log λ(u) + Σ_j θ_j S_j`, with `log 0 = -∞`.
    pub(crate) fn log_intensity_from_stats(&self, u: &EventPoint, stats: &[f64]) -> f64 {
        let lam = self.trend.lambda(&self.window, u);
        if lam <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lam.ln()
            + self
                .scales
                .iter()
                .zip(stats)
                .map(|(c, s)| if *s == 0.0 { 0.0 } else { s * c.gamma.ln() })
                .sum::<f64>()
    }
}

/// Neighbour bookkeeping for a configuration: a grid index plus, for every
/// event and scale, the number of other events in its cylinder.
#[derive(Debug, Clone)]
pub struct InteractionState {
    shapes: Vec<ScaleShape>,
    r_max: f64,
    q_max: f64,
    index: NeighborIndex,
    counts: Vec<u32>,
}

impl InteractionState {
    pub fn new(window: SpacetimeWindow, shapes: Vec<ScaleShape>) -> Result<Self> {
        for s in &shapes {
            s.validate()?;
        }
        let lengths = window.lengths();
        let (r_max, q_max) = if shapes.is_empty() {
            (lengths[0].max(lengths[1]), lengths[2])
        } else {
            (
                shapes.iter().map(|s| s.r).fold(0.0, f64::max),
                shapes.iter().map(|s| s.q).fold(0.0, f64::max),
            )
        };
        let index = NeighborIndex::empty(window, r_max, q_max)?;
        Ok(InteractionState {
            shapes,
            r_max,
            q_max,
            index,
            counts: Vec::new(),
        })
    }

    pub fn from_pattern(pattern: &PointPattern, shapes: Vec<ScaleShape>) -> Result<Self> {
        let mut st = Self::new(*pattern.window(), shapes)?;
        let m = st.shapes.len();
        for p in pattern.points() {
            st.index.insert(*p);
        }
        st.counts = vec![0; pattern.len() * m];
        for i in 0..pattern.len() {
            let c = pattern.points()[i];
            let mut row = vec![0u32; m];
            st.index.for_each_candidate(&c, st.r_max, st.q_max, |k, a| {
                if k != i {
                    for (j, sh) in st.shapes.iter().enumerate() {
                        if a.within(&c, sh.r, sh.q) {
                            row[j] += 1;
                        }
                    }
                }
            });
            st.counts[i * m..(i + 1) * m].copy_from_slice(&row);
        }
        Ok(st)
    }

    pub fn n_scales(&self) -> usize {
        self.shapes.len()
    }

    pub fn shapes(&self) -> &[ScaleShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn points(&self) -> &[EventPoint] {
        self.index.points()
    }

    pub fn window(&self) -> &SpacetimeWindow {
        self.index.window()
    }

    /// Neighbour count of event `i` at scale `j`.
    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.shapes.len() + j]
    }

    /// `Σ_i min(s_j, n_j(i))` for every scale.
    pub fn saturated_totals(&self) -> Vec<f64> {
        let m = self.shapes.len();
        let mut tot = vec![0.0; m];
        for i in 0..self.len() {
            for (j, sh) in self.shapes.iter().enumerate() {
                tot[j] += sh.saturate(self.counts[i * m + j]);
            }
        }
        tot
    }

    /// Statistics for adding `u` (not a member) to the configuration.
    pub fn birth_stats(&self, u: &EventPoint, out: &mut [f64]) {
        let m = self.shapes.len();
        debug_assert_eq!(out.len(), m);
        let mut own = vec![0u32; m];
        out.iter_mut().for_each(|v| *v = 0.0);
        self.index.for_each_candidate(u, self.r_max, self.q_max, |k, a| {
            for (j, sh) in self.shapes.iter().enumerate() {
                if a.within(u, sh.r, sh.q) {
                    own[j] += 1;
                    let n = self.counts[k * m + j];
                    out[j] += sh.saturate(n + 1) - sh.saturate(n);
                }
            }
        });
        for (j, sh) in self.shapes.iter().enumerate() {
            out[j] += sh.saturate(own[j]);
        }
    }

    /// Statistics of member `i` relative to the configuration without it.
    pub fn member_stats(&self, i: usize, out: &mut [f64]) {
        let m = self.shapes.len();
        debug_assert_eq!(out.len(), m);
        let u = self.index.points()[i];
        out.iter_mut().for_each(|v| *v = 0.0);
        self.index.for_each_candidate(&u, self.r_max, self.q_max, |k, a| {
            if k == i {
                return;
            }
            for (j, sh) in self.shapes.iter().enumerate() {
                if a.within(&u, sh.r, sh.q) {
                    let n = self.counts[k * m + j];
                    out[j] += sh.saturate(n) - sh.saturate(n - 1);
                }
            }
        });
        for (j, sh) in self.shapes.iter().enumerate() {
            out[j] += sh.saturate(self.counts[i * m + j]);
        }
    }

    pub fn insert(&mut self, u: EventPoint) -> usize {
        let m = self.shapes.len();
        let mut own = vec![0u32; m];
        let counts = &mut self.counts;
        let shapes = &self.shapes;
        self.index.for_each_candidate(&u, self.r_max, self.q_max, |k, a| {
            for (j, sh) in shapes.iter().enumerate() {
                if a.within(&u, sh.r, sh.q) {
                    own[j] += 1;
                    counts[k * m + j] += 1;
                }
            }
        });
        self.counts.extend_from_slice(&own);
        self.index.insert(u)
    }

    /// Removes member `i`; the last member takes over index `i`.
    pub fn swap_remove(&mut self, i: usize) -> EventPoint {
        let m = self.shapes.len();
        let u = self.index.points()[i];
        let counts = &mut self.counts;
        let shapes = &self.shapes;
        self.index.for_each_candidate(&u, self.r_max, self.q_max, |k, a| {
            if k == i {
                return;
            }
            for (j, sh) in shapes.iter().enumerate() {
                if a.within(&u, sh.r, sh.q) {
                    counts[k * m + j] -= 1;
                }
            }
        });
        let last = self.index.len() - 1;
        if i != last {
            for j in 0..m {
                self.counts[i * m + j] = self.counts[last * m + j];
            }
        }
        self.counts.truncate(last * m);
        self.index.swap_remove(i)
    }
}

fn check_pattern(model: &GeyerModel, pattern: &PointPattern) -> Result<()> {
    for p in pattern.points() {
        model.window.check(p)?;
    }
    Ok(())
}

/// `Σ_{(x,t)} [log λ(x,t) + Σ_j min(s_j, n_j) log γ_j]`, normalising constant omitted.
/// Returns `-∞` when some event has zero trend.
pub fn log_density_unnormalized(model: &GeyerModel, pattern: &PointPattern) -> Result<f64> {
    check_pattern(model, pattern)?;
    if pattern.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in pattern.points() {
        let lam = model.trend.lambda(&model.window, p);
        if lam <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += lam.ln();
    }
    let st = InteractionState::from_pattern(pattern, model.shapes())?;
    for (tot, c) in st.saturated_totals().iter().zip(&model.scales) {
        if *tot != 0.0 {
            total += tot * c.gamma.ln();
        }
    }
    Ok(total)
}

/// Sufficient statistic vector `S(u, x)`: for `u ∉ x` the change from `x` to
/// `x ∪ u`, for `u ∈ x` the change from `x \ u` to `x`.
pub fn sufficient_statistics(model: &GeyerModel, pattern: &PointPattern, point: &EventPoint) -> Result<Vec<f64>> {
    check_pattern(model, pattern)?;
    model.window.check(point)?;
    let st = InteractionState::from_pattern(pattern, model.shapes())?;
    let mut out = vec![0.0; model.scales.len()];
    match pattern.position(point) {
        Some(i) => st.member_stats(i, &mut out),
        None => st.birth_stats(point, &mut out),
    }
    Ok(out)
}

/// Log Papangelou conditional intensity; `-∞` encodes a zero intensity,
/// including the `0/0 := 0` case.
pub fn log_papangelou(model: &GeyerModel, pattern: &PointPattern, point: &EventPoint) -> Result<f64> {
    let stats = sufficient_statistics(model, pattern, point)?;
    let member = pattern.position(point);
    let base_zero = pattern
        .points()
        .iter()
        .enumerate()
        .any(|(i, p)| Some(i) != member && model.trend.lambda(&model.window, p) <= 0.0);
    if base_zero {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(model.log_intensity_from_stats(point, &stats))
}

pub fn papangelou(model: &GeyerModel, pattern: &PointPattern, point: &EventPoint) -> Result<f64> {
    Ok(log_papangelou(model, pattern, point)?.exp())
}

/// Conditional intensity of the spatio-temporal Strauss process, `λ γ^{n(C)}`,
/// counting events other than `point` itself.
pub fn strauss_papangelou(
    lambda: f64,
    gamma: f64,
    r: f64,
    q: f64,
    pattern: &PointPattern,
    point: &EventPoint,
) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Strauss gamma = {gamma} must lie in (0, 1]"
        )));
    }
    pattern.window().check(point)?;
    let n = cylinder_count(pattern, point, r, q, true)?;
    Ok(lambda * gamma.powi(n as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model1() -> GeyerModel {
        GeyerModel::new(
            SpacetimeWindow::unit(),
            TrendFunction::constant(70.0),
            vec![
                ScaleComponent { gamma: 0.5, r: 0.1, q: 0.05, s: 1.0 },
                ScaleComponent { gamma: 1.5, r: 0.11, q: 0.1, s: 2.0 },
            ],
        )
        .unwrap()
    }

    fn pat(points: &[(f64, f64, f64)]) -> PointPattern {
        PointPattern::new(
            SpacetimeWindow::unit(),
            points.iter().map(|&(x, y, t)| EventPoint::new(x, y, t)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_pattern_has_zero_log_density() {
        let p = PointPattern::empty(SpacetimeWindow::unit());
        assert_eq!(log_density_unnormalized(&model1(), &p).unwrap(), 0.0);
    }

    #[test]
    fn zero_saturation_is_poisson() {
        let mut m = model1();
        for s in &mut m.scales {
            s.s = 0.0;
        }
        let p = pat(&[(0.1, 0.1, 0.1), (0.12, 0.1, 0.1), (0.5, 0.5, 0.5), (0.51, 0.5, 0.52), (0.9, 0.2, 0.3)]);
        let ld = log_density_unnormalized(&m, &p).unwrap();
        assert!((ld - 5.0 * 70f64.ln()).abs() < 1e-12);
        let probe = EventPoint::new(0.11, 0.1, 0.1);
        assert!((papangelou(&m, &p, &probe).unwrap() - 70.0).abs() < 1e-10);
    }

    #[test]
    fn far_probe_has_zero_statistics() {
        let m = model1();
        let p = pat(&[(0.1, 0.1, 0.1)]);
        let s = sufficient_statistics(&m, &p, &EventPoint::new(0.8, 0.8, 0.8)).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_statistics() {
        // One event, probe inside both cylinders: own count 1 plus one increment.
        let m = model1();
        let p = pat(&[(0.5, 0.5, 0.5)]);
        let u = EventPoint::new(0.52, 0.5, 0.51);
        assert_eq!(sufficient_statistics(&m, &p, &u).unwrap(), vec![2.0, 2.0]);
        // As a member, the same event sees the mirror image.
        let p2 = pat(&[(0.5, 0.5, 0.5), (0.52, 0.5, 0.51)]);
        assert_eq!(sufficient_statistics(&m, &p2, &u).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn saturation_caps_increments() {
        // Probe joins a cluster of three mutually close events with s1 = 1:
        // own term min(1,3) = 1 and every neighbour is already saturated.
        let m = model1();
        let p = pat(&[(0.5, 0.5, 0.5), (0.51, 0.5, 0.5), (0.5, 0.51, 0.5)]);
        let u = EventPoint::new(0.505, 0.505, 0.5);
        let s = sufficient_statistics(&m, &p, &u).unwrap();
        assert_eq!(s[0], 1.0);
        // s2 = 2: neighbours have count 2 already, own term min(2,3) = 2.
        assert_eq!(s[1], 2.0);
    }

    #[test]
    fn outside_probe_is_domain_error() {
        let m = model1();
        let p = pat(&[(0.5, 0.5, 0.5)]);
        assert!(matches!(
            papangelou(&m, &p, &EventPoint::new(0.5, 0.5, 1.5)),
            Err(Error::OutsideWindow { .. })
        ));
    }

    #[test]
    fn zero_trend_gives_zero_intensity() {
        let w = SpacetimeWindow::unit();
        let m = GeyerModel::new(
            w,
            TrendFunction::Grid { beta: 10.0, dims: [2, 1, 1], values: vec![0.0, 1.0] },
            vec![ScaleComponent { gamma: 2.0, r: 0.1, q: 0.1, s: 1.0 }],
        )
        .unwrap();
        let p = pat(&[(0.75, 0.5, 0.5)]);
        assert_eq!(papangelou(&m, &p, &EventPoint::new(0.25, 0.5, 0.5)).unwrap(), 0.0);
        assert!(papangelou(&m, &p, &EventPoint::new(0.8, 0.5, 0.5)).unwrap() > 0.0);
        // A zero-trend event makes the density vanish: 0/0 := 0 for births.
        let bad = pat(&[(0.25, 0.5, 0.5)]);
        assert_eq!(log_density_unnormalized(&m, &bad).unwrap(), f64::NEG_INFINITY);
        assert_eq!(papangelou(&m, &bad, &EventPoint::new(0.8, 0.5, 0.5)).unwrap(), 0.0);
    }

    #[test]
    fn strauss_baseline() {
        let p = pat(&[(0.5, 0.5, 0.5), (0.55, 0.5, 0.5), (0.9, 0.9, 0.9)]);
        let u = EventPoint::new(0.52, 0.5, 0.5);
        assert_eq!(strauss_papangelou(70.0, 1.0, 0.1, 0.1, &p, &u).unwrap(), 70.0);
        assert!((strauss_papangelou(70.0, 0.5, 0.1, 0.1, &p, &u).unwrap() - 17.5).abs() < 1e-12);
        let empty = PointPattern::empty(SpacetimeWindow::unit());
        assert_eq!(strauss_papangelou(70.0, 0.3, 0.1, 0.1, &empty, &u).unwrap(), 70.0);
        assert!(strauss_papangelou(70.0, 1.2, 0.1, 0.1, &p, &u).is_err());
    }

    #[test]
    fn grid_trend_lookup() {
        let w = SpacetimeWindow::unit();
        let t = TrendFunction::Grid { beta: 2.0, dims: [2, 2, 1], values: vec![1.0, 2.0, 3.0, 4.0] };
        t.validate().unwrap();
        assert_eq!(t.lambda(&w, &EventPoint::new(0.1, 0.1, 0.5)), 2.0);
        assert_eq!(t.lambda(&w, &EventPoint::new(0.9, 0.1, 0.5)), 4.0);
        assert_eq!(t.lambda(&w, &EventPoint::new(0.1, 0.9, 0.5)), 6.0);
        assert_eq!(t.lambda(&w, &EventPoint::new(1.0, 1.0, 1.0)), 8.0);
        let bad = TrendFunction::Grid { beta: 2.0, dims: [2, 2, 1], values: vec![1.0] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn state_insert_remove_matches_rebuild() {
        let m = model1();
        let p = pat(&[(0.5, 0.5, 0.5), (0.52, 0.5, 0.51), (0.45, 0.47, 0.45), (0.1, 0.1, 0.1)]);
        let mut st = InteractionState::from_pattern(&p, m.shapes()).unwrap();
        st.insert(EventPoint::new(0.49, 0.51, 0.5));
        st.swap_remove(1);
        let rebuilt = PointPattern::new(SpacetimeWindow::unit(), st.points().to_vec()).unwrap();
        let fresh = InteractionState::from_pattern(&rebuilt, m.shapes()).unwrap();
        assert_eq!(st.counts, fresh.counts);
    }
}
