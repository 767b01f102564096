//! Space-time windows, event patterns and cylindrical neighbourhood counting.
//!
//! A cylinder of spatial radius `r` and temporal half-height `q` centred at
//! `(u, v)` contains every event `(a, b)` with `||u - a|| <= r` and
//! `|v - b| <= q`. Both tests are inclusive. No edge correction is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular observation domain `S x T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacetimeWindow {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub t: [f64; 2],
}

impl SpacetimeWindow {
    pub fn new(x: [f64; 2], y: [f64; 2], t: [f64; 2]) -> Result<Self> {
        let w = SpacetimeWindow { x, y, t };
        w.validate()?;
        Ok(w)
    }

    pub fn unit() -> Self {
        SpacetimeWindow {
            x: [0.0, 1.0],
            y: [0.0, 1.0],
            t: [0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [("x", self.x), ("y", self.y), ("t", self.t)] {
            if !(iv[0].is_finite() && iv[1].is_finite()) || iv[1] <= iv[0] {
                return Err(Error::InvalidParameter(format!(
                    "window {name} range [{}, {}] must be finite with positive length",
                    iv[0], iv[1]
                )));
            }
        }
        Ok(())
    }

    pub fn lengths(&self) -> [f64; 3] {
        [
            self.x[1] - self.x[0],
            self.y[1] - self.y[0],
            self.t[1] - self.t[0],
        ]
    }

    pub fn lows(&self) -> [f64; 3] {
        [self.x[0], self.y[0], self.t[0]]
    }

    pub fn volume(&self) -> f64 {
        let [a, b, c] = self.lengths();
        a * b * c
    }

    pub fn contains(&self, p: &EventPoint) -> bool {
        p.x >= self.x[0]
            && p.x <= self.x[1]
            && p.y >= self.y[0]
            && p.y <= self.y[1]
            && p.t >= self.t[0]
            && p.t <= self.t[1]
    }

    /// Maps unit-cube coordinates onto the window.
    pub fn from_unit(&self, ux: f64, uy: f64, ut: f64) -> EventPoint {
        let [lx, ly, lt] = self.lengths();
        EventPoint::new(
            self.x[0] + ux * lx,
            self.y[0] + uy * ly,
            self.t[0] + ut * lt,
        )
    }

    pub(crate) fn check(&self, p: &EventPoint) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideWindow {
                x: p.x,
                y: p.y,
                t: p.t,
            })
        }
    }
}

/// A single event: planar location `(x, y)` and occurrence time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl EventPoint {
    pub const fn new(x: f64, y: f64, t: f64) -> Self {
        EventPoint { x, y, t }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    /// Inclusive cylinder membership test.
    #[inline]
    pub fn within(&self, other: &EventPoint, r: f64, q: f64) -> bool {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy <= r * r && (self.t - other.t).abs() <= q
    }
}

/// A finite set of events observed in a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    window: SpacetimeWindow,
    points: Vec<EventPoint>,
}

impl PointPattern {
    pub fn new(window: SpacetimeWindow, points: Vec<EventPoint>) -> Result<Self> {
        window.validate()?;
        for p in &points {
            if !p.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite event coordinates ({}, {}, {})",
                    p.x, p.y, p.t
                )));
            }
            window.check(p)?;
        }
        Ok(PointPattern { window, points })
    }

    pub fn empty(window: SpacetimeWindow) -> Self {
        PointPattern {
            window,
            points: Vec::new(),
        }
    }

    pub fn window(&self) -> &SpacetimeWindow {
        &self.window
    }

    pub fn points(&self) -> &[EventPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the first entry coordinate-identical to `p`.
    pub fn position(&self, p: &EventPoint) -> Option<usize> {
        self.points.iter().position(|a| a == p)
    }

    pub fn with_point(&self, p: EventPoint) -> Result<PointPattern> {
        self.window.check(&p)?;
        let mut points = self.points.clone();
        points.push(p);
        Ok(PointPattern {
            window: self.window,
            points,
        })
    }

    pub fn without_index(&self, i: usize) -> PointPattern {
        let mut points = self.points.clone();
        points.remove(i);
        PointPattern {
            window: self.window,
            points,
        }
    }

    pub(crate) fn from_parts_unchecked(window: SpacetimeWindow, points: Vec<EventPoint>) -> Self {
        PointPattern { window, points }
    }
}

fn check_radii(r: f64, q: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("spatial radius r = {r} must be positive")));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::InvalidParameter(format!("temporal radius q = {q} must be positive")));
    }
    Ok(())
}

/// Number of pattern entries inside the cylinder of radius `r`, half-height
/// `q` centred at `center`. With `exclude_center`, entries equal to `center`
/// are skipped (all of them, if duplicated).
pub fn cylinder_count(
    pattern: &PointPattern,
    center: &EventPoint,
    r: f64,
    q: f64,
    exclude_center: bool,
) -> Result<usize> {
    check_radii(r, q)?;
    Ok(pattern
        .points
        .iter()
        .filter(|a| !(exclude_center && *a == center) && a.within(center, r, q))
        .count())
}

const MAX_CELLS_PER_AXIS: usize = 64;
const RANGE_PAD: f64 = 1e-9;

/// Uniform space-time grid over the window with cells at least
/// `(r_max, r_max, q_max)` in size.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    window: SpacetimeWindow,
    r_max: f64,
    q_max: f64,
    dims: [usize; 3],
    cell: [f64; 3],
    cells: Vec<Vec<usize>>,
    points: Vec<EventPoint>,
}

impl NeighborIndex {
    pub fn new(pattern: &PointPattern, r_max: f64, q_max: f64) -> Result<Self> {
        let mut index = Self::empty(*pattern.window(), r_max, q_max)?;
        for p in pattern.points() {
            index.insert(*p);
        }
        Ok(index)
    }

    pub fn empty(window: SpacetimeWindow, r_max: f64, q_max: f64) -> Result<Self> {
        check_radii(r_max, q_max)?;
        window.validate()?;
        let lengths = window.lengths();
        let sizes = [r_max, r_max, q_max];
        let mut dims = [1usize; 3];
        let mut cell = [0.0; 3];
        for d in 0..3 {
            let n = (lengths[d] / sizes[d]).floor();
            dims[d] = if n.is_finite() && n >= 1.0 {
                (n as usize).min(MAX_CELLS_PER_AXIS)
            } else {
                1
            };
            cell[d] = lengths[d] / dims[d] as f64;
        }
        Ok(NeighborIndex {
            window,
            r_max,
            q_max,
            dims,
            cell,
            cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
            points: Vec::new(),
        })
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn window(&self) -> &SpacetimeWindow {
        &self.window
    }

    pub fn points(&self) -> &[EventPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn axis_cell(&self, d: usize, c: f64) -> usize {
        let lo = self.window.lows()[d];
        let k = ((c - lo) / self.cell[d]).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.dims[d] - 1)
        }
    }

    fn axis_range(&self, d: usize, c: f64, half: f64) -> (usize, usize) {
        let lo = self.window.lows()[d];
        let clamp = |v: f64| -> usize {
            if v <= 0.0 {
                0
            } else {
                (v as usize).min(self.dims[d] - 1)
            }
        };
        let a = ((c - half - lo) / self.cell[d] - RANGE_PAD).floor();
        let b = ((c + half - lo) / self.cell[d] + RANGE_PAD).floor();
        (clamp(a), clamp(b))
    }

    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    fn cell_of(&self, p: &EventPoint) -> usize {
        self.flat(
            self.axis_cell(0, p.x),
            self.axis_cell(1, p.y),
            self.axis_cell(2, p.t),
        )
    }

    /// Visits every indexed point whose grid cell intersects the bounding
    /// box of the cylinder. The visited set is a superset of the cylinder.
    pub fn for_each_candidate<F: FnMut(usize, &EventPoint)>(
        &self,
        center: &EventPoint,
        r: f64,
        q: f64,
        mut f: F,
    ) {
        let (x0, x1) = self.axis_range(0, center.x, r);
        let (y0, y1) = self.axis_range(1, center.y, r);
        let (t0, t1) = self.axis_range(2, center.t, q);
        for k in t0..=t1 {
            for j in y0..=y1 {
                for i in x0..=x1 {
                    for &idx in &self.cells[self.flat(i, j, k)] {
                        f(idx, &self.points[idx]);
                    }
                }
            }
        }
    }

    /// Same contract as [`cylinder_count`] over the indexed points.
    pub fn count(&self, center: &EventPoint, r: f64, q: f64, exclude_center: bool) -> Result<usize> {
        check_radii(r, q)?;
        let mut n = 0;
        self.for_each_candidate(center, r, q, |_, a| {
            if !(exclude_center && a == center) && a.within(center, r, q) {
                n += 1;
            }
        });
        Ok(n)
    }

    /// Count over the indexed points with `removed[i] == true` treated as absent.
    pub fn count_masked(
        &self,
        center: &EventPoint,
        r: f64,
        q: f64,
        exclude_center: bool,
        removed: &[bool],
    ) -> Result<usize> {
        check_radii(r, q)?;
        if removed.len() != self.points.len() {
            return Err(Error::Contract(format!(
                "mask length {} does not match {} indexed points",
                removed.len(),
                self.points.len()
            )));
        }
        let mut n = 0;
        self.for_each_candidate(center, r, q, |idx, a| {
            if !removed[idx] && !(exclude_center && a == center) && a.within(center, r, q) {
                n += 1;
            }
        });
        Ok(n)
    }

    pub(crate) fn insert(&mut self, p: EventPoint) -> usize {
        let idx = self.points.len();
        let c = self.cell_of(&p);
        self.points.push(p);
        self.cells[c].push(idx);
        idx
    }

    /// Removes point `i`; the last point takes over index `i`.
    pub(crate) fn swap_remove(&mut self, i: usize) -> EventPoint {
        let last = self.points.len() - 1;
        let ci = self.cell_of(&self.points[i]);
        let pos = self.cells[ci]
            .iter()
            .position(|&k| k == i)
            .expect("indexed point missing from its cell");
        self.cells[ci].swap_remove(pos);
        if i != last {
            let cl = self.cell_of(&self.points[last]);
            for k in self.cells[cl].iter_mut() {
                if *k == last {
                    *k = i;
                    break;
                }
            }
        }
        self.points.swap_remove(i)
    }
}
