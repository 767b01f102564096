//! Quadrature schemes over the space-time window.
//!
//! Data events always come first, followed by dummy points. The counting
//! scheme partitions the window into equal cells and gives every point the
//! weight `v / n_k`, cell volume over the number of points sharing its cell.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EventPoint, PointPattern, SpacetimeWindow};
use crate::model::{InteractionState, ScaleShape, TrendFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureGrid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    #[serde(default = "one")]
    pub dummy_per_cell: usize,
}

/// Cap on the range-resolving part of the automatic grid.
pub const MAX_AUTO_CELLS: usize = 64;

fn one() -> usize {
    1
}

impl QuadratureGrid {
    pub fn new(nx: usize, ny: usize, nt: usize, dummy_per_cell: usize) -> Result<Self> {
        let g = QuadratureGrid { nx, ny, nt, dummy_per_cell };
        g.validate()?;
        Ok(g)
    }

    /// `ceil((4n)^{1/3})` cells per axis with one dummy each, so the dummy
    /// count is roughly four times the number of events.
    pub fn auto(n_points: usize) -> Self {
        let k = ((4 * n_points.max(1)) as f64).cbrt().ceil() as usize;
        QuadratureGrid {
            nx: k,
            ny: k,
            nt: k,
            dummy_per_cell: 1,
        }
    }

    /// The finer of [`auto`](Self::auto) and a grid whose cells are at most
    /// half the smallest interaction range along each axis (`r` in space,
    /// `q` in time), with the range part capped at [`MAX_AUTO_CELLS`] per
    /// axis.
    pub fn resolving(window: &SpacetimeWindow, n_points: usize, shapes: &[ScaleShape]) -> Self {
        let base = Self::auto(n_points);
        let l = window.lengths();
        let r_min = shapes.iter().map(|s| s.r).fold(f64::INFINITY, f64::min);
        let q_min = shapes.iter().map(|s| s.q).fold(f64::INFINITY, f64::min);
        let need = |len: f64, range: f64, floor: usize| {
            let k = if range.is_finite() && range > 0.0 {
                ((2.0 * len / range).ceil() as usize).min(MAX_AUTO_CELLS)
            } else {
                1
            };
            k.max(floor)
        };
        QuadratureGrid {
            nx: need(l[0], r_min, base.nx),
            ny: need(l[1], r_min, base.ny),
            nt: need(l[2], q_min, base.nt),
            dummy_per_cell: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nt == 0 || self.dummy_per_cell == 0 {
            return Err(Error::InvalidParameter(format!(
                "quadrature grid {}x{}x{} with {} dummies per cell must be positive",
                self.nx, self.ny, self.nt, self.dummy_per_cell
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub(crate) fn cell_of(&self, window: &SpacetimeWindow, p: &EventPoint) -> usize {
        let lows = window.lows();
        let lengths = window.lengths();
        let dims = [self.nx, self.ny, self.nt];
        let coords = [p.x, p.y, p.t];
        let mut idx = [0usize; 3];
        for d in 0..3 {
            let k = ((coords[d] - lows[d]) / lengths[d] * dims[d] as f64).floor();
            idx[d] = if k <= 0.0 { 0 } else { (k as usize).min(dims[d] - 1) };
        }
        idx[0] + self.nx * (idx[1] + self.ny * idx[2])
    }
}

/// How a scheme should be built for pseudo-likelihood fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    #[default]
    Auto,
    Fixed(QuadratureGrid),
}

impl GridSpec {
    pub fn resolve(&self, window: &SpacetimeWindow, n_points: usize, shapes: &[ScaleShape]) -> QuadratureGrid {
        match self {
            GridSpec::Auto => QuadratureGrid::resolving(window, n_points, shapes),
            GridSpec::Fixed(g) => *g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureScheme {
    pub window: SpacetimeWindow,
    pub points: Vec<EventPoint>,
    pub is_data: Vec<bool>,
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
    pub n_data: usize,
}

impl QuadratureScheme {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_dummy(&self) -> usize {
        self.points.len() - self.n_data
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Writes `x,y,t,is_data,weight,S_1..S_m`.
    pub fn write_csv<W: Write>(&self, design: &DMatrix<f64>, mut w: W) -> Result<()> {
        if design.nrows() != self.len() {
            return Err(Error::Contract(format!(
                "design has {} rows, scheme has {} points",
                design.nrows(),
                self.len()
            )));
        }
        write!(w, "x,y,t,is_data,weight")?;
        for j in 0..design.ncols() {
            write!(w, ",S_{}", j + 1)?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            let p = &self.points[k];
            write!(w, "{},{},{},{},{}", p.x, p.y, p.t, self.is_data[k] as u8, self.weights[k])?;
            for j in 0..design.ncols() {
                write!(w, ",{}", design[(k, j)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

// Additive recurrence based on the plastic number; offset 0 is the cell centre.
const R3: [f64; 3] = [0.754_877_666_246_692_7, 0.569_840_290_998_053_3, 0.430_159_709_001_946_7];

fn stratified_offset(i: usize) -> [f64; 3] {
    let mut o = [0.0; 3];
    for d in 0..3 {
        o[d] = (0.5 + i as f64 * R3[d]).fract();
    }
    o
}

fn log_mu(mu: &TrendFunction, window: &SpacetimeWindow, p: &EventPoint) -> f64 {
    let v = mu.mu(window, p);
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Counting-weight scheme on an `nx × ny × nt` grid with deterministic
/// stratified dummies. Offsets are `log μ`.
pub fn counting_weights(pattern: &PointPattern, grid: QuadratureGrid, mu: &TrendFunction) -> Result<QuadratureScheme> {
    grid.validate()?;
    let window = *pattern.window();
    let lengths = window.lengths();
    let lows = window.lows();
    let cell = [
        lengths[0] / grid.nx as f64,
        lengths[1] / grid.ny as f64,
        lengths[2] / grid.nt as f64,
    ];
    let volume = window.volume() / grid.n_cells() as f64;

    let mut points: Vec<EventPoint> = pattern.points().to_vec();
    let mut cells: Vec<usize> = points.iter().map(|p| grid.cell_of(&window, p)).collect();
    for k in 0..grid.nt {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let flat = i + grid.nx * (j + grid.ny * k);
                for s in 0..grid.dummy_per_cell {
                    let o = stratified_offset(s);
                    let p = EventPoint::new(
                        lows[0] + (i as f64 + o[0]) * cell[0],
                        lows[1] + (j as f64 + o[1]) * cell[1],
                        lows[2] + (k as f64 + o[2]) * cell[2],
                    );
                    points.push(p);
                    cells.push(flat);
                }
            }
        }
    }
    let mut occupancy = vec![0usize; grid.n_cells()];
    for &c in &cells {
        occupancy[c] += 1;
    }
    let weights = cells.iter().map(|&c| volume / occupancy[c] as f64).collect();
    let offsets = points.iter().map(|p| log_mu(mu, &window, p)).collect();
    let n_data = pattern.len();
    let mut is_data = vec![true; n_data];
    is_data.resize(points.len(), false);
    Ok(QuadratureScheme {
        window,
        points,
        is_data,
        weights,
        offsets,
        n_data,
    })
}

/// Data events plus a Poisson(`rho`) dummy pattern. Weights are 1 and
/// offsets are `log(μ / ρ)`.
pub fn poisson_dummies<R: Rng + ?Sized>(
    pattern: &PointPattern,
    rho: f64,
    mu: &TrendFunction,
    rng: &mut R,
) -> Result<QuadratureScheme> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("dummy intensity rho = {rho} must be positive")));
    }
    let window = *pattern.window();
    let mean = rho * window.volume();
    let n_dummy = Poisson::new(mean)
        .map_err(|e| Error::InvalidParameter(format!("dummy intensity: {e}")))?
        .sample(rng) as usize;
    let mut points: Vec<EventPoint> = pattern.points().to_vec();
    for _ in 0..n_dummy {
        points.push(window.from_unit(rng.random(), rng.random(), rng.random()));
    }
    let log_rho = rho.ln();
    let offsets = points.iter().map(|p| log_mu(mu, &window, p) - log_rho).collect();
    let n_data = pattern.len();
    let mut is_data = vec![true; n_data];
    is_data.resize(points.len(), false);
    Ok(QuadratureScheme {
        window,
        weights: vec![1.0; points.len()],
        points,
        is_data,
        offsets,
        n_data,
    })
}

/// Sufficient statistics at every quadrature point: the member form
/// `S(x_i, x \ x_i)` for data rows, the birth form `S(u, x)` for dummies.
pub fn design_matrix(shapes: &[ScaleShape], scheme: &QuadratureScheme, source: &PointPattern) -> Result<DMatrix<f64>> {
    if scheme.window != *source.window() {
        return Err(Error::Contract("scheme and pattern windows differ".into()));
    }
    if scheme.n_data != source.len() || scheme.points[..scheme.n_data] != *source.points() {
        return Err(Error::Contract(
            "scheme data points do not reproduce the source pattern".into(),
        ));
    }
    let m = shapes.len();
    let st = InteractionState::from_pattern(source, shapes.to_vec())?;
    let mut design = DMatrix::zeros(scheme.len(), m);
    let mut row = vec![0.0; m];
    for k in 0..scheme.len() {
        if k < scheme.n_data {
            st.member_stats(k, &mut row);
        } else {
            st.birth_stats(&scheme.points[k], &mut row);
        }
        for j in 0..m {
            design[(k, j)] = row[j];
        }
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> SpacetimeWindow {
        SpacetimeWindow::unit()
    }

    #[test]
    fn single_cell_single_dummy() {
        let p = PointPattern::empty(unit());
        let s = counting_weights(&p, QuadratureGrid::new(1, 1, 1, 1).unwrap(), &TrendFunction::constant(1.0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.weights, vec![1.0]);
        assert_eq!(s.points[0], EventPoint::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn eight_equal_cells() {
        let p = PointPattern::empty(unit());
        let s = counting_weights(&p, QuadratureGrid::new(2, 2, 2, 1).unwrap(), &TrendFunction::constant(1.0)).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.weights.iter().all(|&w| w == 0.125));
        assert!(s.is_data.iter().all(|d| !d));
    }

    #[test]
    fn data_share_cell_weight() {
        let p = PointPattern::new(unit(), vec![EventPoint::new(0.1, 0.1, 0.1), EventPoint::new(0.2, 0.2, 0.2)]).unwrap();
        let s = counting_weights(&p, QuadratureGrid::new(2, 2, 2, 1).unwrap(), &TrendFunction::constant(1.0)).unwrap();
        assert_eq!(s.n_data, 2);
        assert!(s.is_data[0] && s.is_data[1] && !s.is_data[2]);
        assert!((s.weights[0] - 0.125 / 3.0).abs() < 1e-15);
        assert!((s.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stratified_dummies_stay_in_cell() {
        let p = PointPattern::empty(unit());
        let g = QuadratureGrid::new(3, 2, 4, 5).unwrap();
        let s = counting_weights(&p, g, &TrendFunction::constant(1.0)).unwrap();
        assert_eq!(s.len(), 3 * 2 * 4 * 5);
        for (k, pt) in s.points.iter().enumerate() {
            assert_eq!(g.cell_of(&unit(), pt), k / 5);
        }
        assert!((s.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auto_grid_size() {
        assert_eq!(QuadratureGrid::auto(70).nx, 7);
        assert_eq!(QuadratureGrid::auto(2).nx, 2);
        assert_eq!(QuadratureGrid::auto(0).nx, 2);
        let shapes = [
            ScaleShape { r: 0.1, q: 0.05, s: 1.0 },
            ScaleShape { r: 0.11, q: 0.1, s: 2.0 },
        ];
        let g = QuadratureGrid::resolving(&SpacetimeWindow::unit(), 70, &shapes);
        assert_eq!((g.nx, g.ny, g.nt), (20, 20, 40));
        let g = QuadratureGrid::resolving(&SpacetimeWindow::unit(), 70, &[]);
        assert_eq!((g.nx, g.ny, g.nt), (7, 7, 7));
        let g = QuadratureGrid::resolving(&SpacetimeWindow::unit(), 70, &[ScaleShape { r: 1e-4, q: 1.0, s: 1.0 }]);
        assert_eq!((g.nx, g.ny, g.nt), (64, 64, 7));
    }

    #[test]
    fn poisson_offsets_and_order() {
        let p = PointPattern::new(unit(), vec![EventPoint::new(0.3, 0.3, 0.3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = poisson_dummies(&p, 40.0, &TrendFunction::constant(5.0), &mut rng).unwrap();
        assert_eq!(s.points[0], p.points()[0]);
        assert!(s.n_dummy() > 0);
        assert!(s.offsets.iter().all(|&o| (o + 40f64.ln()).abs() < 1e-15));
        assert!(s.weights.iter().all(|&w| w == 1.0));
        assert!(poisson_dummies(&p, 0.0, &TrendFunction::constant(1.0), &mut rng).is_err());
    }

    #[test]
    fn tiny_rho_gives_data_only() {
        let p = PointPattern::new(unit(), vec![EventPoint::new(0.3, 0.3, 0.3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = poisson_dummies(&p, 1e-12, &TrendFunction::constant(1.0), &mut rng).unwrap();
        assert_eq!(s.n_dummy(), 0);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn design_for_isolated_points_is_zero() {
        let p = PointPattern::new(unit(), vec![EventPoint::new(0.05, 0.05, 0.05), EventPoint::new(0.95, 0.95, 0.95)]).unwrap();
        let shapes = [ScaleShape { r: 0.1, q: 0.05, s: 1.0 }];
        let mut s = counting_weights(&p, QuadratureGrid::new(1, 1, 1, 1).unwrap(), &TrendFunction::constant(1.0)).unwrap();
        let d = design_matrix(&shapes, &s, &p).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        s.points.swap(0, 1);
        assert!(matches!(design_matrix(&shapes, &s, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn dummy_inside_data_cylinder() {
        let p = PointPattern::new(unit(), vec![EventPoint::new(0.5, 0.5, 0.5)]).unwrap();
        let s = QuadratureScheme {
            window: unit(),
            points: vec![EventPoint::new(0.5, 0.5, 0.5), EventPoint::new(0.52, 0.5, 0.5)],
            is_data: vec![true, false],
            weights: vec![0.5, 0.5],
            offsets: vec![0.0, 0.0],
            n_data: 1,
        };
        let d = design_matrix(&[ScaleShape { r: 0.1, q: 0.05, s: 1.0 }], &s, &p).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(d[(1, 0)], 2.0);
    }

    #[test]
    fn csv_export_header() {
        let p = PointPattern::new(unit(), vec![EventPoint::new(0.5, 0.5, 0.5)]).unwrap();
        let s = counting_weights(&p, QuadratureGrid::new(1, 1, 1, 1).unwrap(), &TrendFunction::constant(1.0)).unwrap();
        let d = design_matrix(&[ScaleShape { r: 0.1, q: 0.1, s: 1.0 }], &s, &p).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,t,is_data,weight,S_1");
        assert_eq!(lines[1], "0.5,0.5,0.5,1,0.5,0");
        assert_eq!(lines[2], "0.5,0.5,0.5,0,0.5,2");
    }
}
