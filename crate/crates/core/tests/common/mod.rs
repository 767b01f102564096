//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use stgeyer::geometry::{EventPoint, PointPattern, SpacetimeWindow};
use stgeyer::model::{GeyerModel, ScaleComponent, TrendFunction};

pub fn within(a: &EventPoint, b: &EventPoint, r: f64, q: f64) -> bool {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy <= r * r && (a.t - b.t).abs() <= q
}

/// Neighbour count of `pts[i]` by index, all pairs.
pub fn brute_count(pts: &[EventPoint], i: usize, r: f64, q: f64) -> usize {
    (0..pts.len())
        .filter(|&k| k != i && within(&pts[i], &pts[k], r, q))
        .count()
}

/// `Σ log λ(x_i) + Σ_j log γ_j Σ_i min(s_j, n_ij)` by direct enumeration.
pub fn brute_log_density(model: &GeyerModel, pts: &[EventPoint]) -> f64 {
    let mut total = 0.0;
    for p in pts {
        total += model.trend.lambda(&model.window, p).ln();
    }
    for sc in &model.scales {
        let mut sat = 0.0;
        for i in 0..pts.len() {
            sat += (brute_count(pts, i, sc.r, sc.q) as f64).min(sc.s);
        }
        total += sc.gamma.ln() * sat;
    }
    total
}

/// `f(x ∪ u) / f(x)` from the brute-force density.
pub fn brute_papangelou(model: &GeyerModel, pts: &[EventPoint], u: &EventPoint) -> f64 {
    let mut with = pts.to_vec();
    with.push(*u);
    (brute_log_density(model, &with) - brute_log_density(model, pts)).exp()
}

/// Statistic `S_j(u, x)` as a difference of saturated totals.
pub fn brute_statistic(pts: &[EventPoint], u: &EventPoint, r: f64, q: f64, s: f64) -> f64 {
    let total = |v: &[EventPoint]| -> f64 {
        (0..v.len())
            .map(|i| (brute_count(v, i, r, q) as f64).min(s))
            .sum()
    };
    let mut with = pts.to_vec();
    with.push(*u);
    total(&with) - total(pts)
}

pub fn random_points<R: Rng>(rng: &mut R, w: &SpacetimeWindow, n: usize) -> Vec<EventPoint> {
    (0..n)
        .map(|_| w.from_unit(rng.random(), rng.random(), rng.random()))
        .collect()
}

pub fn random_model<R: Rng>(rng: &mut R, w: SpacetimeWindow) -> GeyerModel {
    let m = rng.random_range(1..=3);
    let scales = (0..m)
        .map(|_| ScaleComponent {
            gamma: rng.random_range(0.2..2.0),
            r: rng.random_range(0.05..0.3),
            q: rng.random_range(0.05..0.3),
            s: rng.random_range(0..4) as f64,
        })
        .collect();
    GeyerModel::new(w, TrendFunction::constant(rng.random_range(10.0..100.0)), scales).unwrap()
}

pub fn model_1() -> GeyerModel {
    geyer_two_scale(0.5, 1.5)
}

pub fn model_2() -> GeyerModel {
    geyer_two_scale(0.2, 1.2)
}

pub fn geyer_two_scale(g1: f64, g2: f64) -> GeyerModel {
    GeyerModel::new(
        SpacetimeWindow::unit(),
        TrendFunction::constant(70.0),
        vec![
            ScaleComponent { gamma: g1, r: 0.1, q: 0.05, s: 1.0 },
            ScaleComponent { gamma: g2, r: 0.11, q: 0.1, s: 2.0 },
        ],
    )
    .unwrap()
}

pub fn pattern(w: SpacetimeWindow, pts: Vec<EventPoint>) -> PointPattern {
    PointPattern::new(w, pts).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fam {
    Poisson,
    Logistic,
}

/// `Σ w (y η - b(η))` on plain vectors.
pub fn dense_objective(f: Fam, y: &[f64], x: &[Vec<f64>], w: &[f64], off: &[f64], th: &[f64]) -> f64 {
    let mut t = 0.0;
    for k in 0..y.len() {
        let eta: f64 = off[k] + x[k].iter().zip(th).map(|(a, b)| a * b).sum::<f64>();
        let b = match f {
            Fam::Poisson => eta.exp(),
            Fam::Logistic => {
                if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
        };
        t += w[k] * (y[k] * eta - b);
    }
    t
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Damped Newton on the exact objective, run until the step is at
/// round-off level.
pub fn dense_newton(f: Fam, y: &[f64], x: &[Vec<f64>], w: &[f64], off: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut th = vec![0.0; p];
    for _ in 0..500 {
        let mut g = vec![0.0; p];
        let mut h = vec![vec![0.0; p]; p];
        for k in 0..y.len() {
            let eta: f64 = off[k] + x[k].iter().zip(&th).map(|(a, b)| a * b).sum::<f64>();
            let (m, v) = match f {
                Fam::Poisson => (eta.exp(), eta.exp()),
                Fam::Logistic => {
                    let pr = 1.0 / (1.0 + (-eta).exp());
                    (pr, pr * (1.0 - pr))
                }
            };
            for a in 0..p {
                g[a] += w[k] * (y[k] - m) * x[k][a];
                for b in 0..p {
                    h[a][b] += w[k] * v * x[k][a] * x[k][b];
                }
            }
        }
        let step = solve(h, g);
        let base = dense_objective(f, y, x, w, off, &th);
        let mut t = 1.0;
        let mut next: Vec<f64>;
        loop {
            next = th.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            if dense_objective(f, y, x, w, off, &next) >= base - 1e-12 * base.abs() || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        let moved = th
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        th = next;
        if moved < 1e-14 * (1.0 + th.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    th
}

/// Mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Batch-means standard error of the mean of an autocorrelated series.
pub fn batch_means_se(v: &[f64], n_batches: usize) -> (f64, f64) {
    let b = v.len() / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|i| v[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let (m, se) = mean_se(&means);
    let overall = v[..b * n_batches].iter().sum::<f64>() / (b * n_batches) as f64;
    debug_assert!((overall - m).abs() < 1e-9 * (1.0 + m.abs()));
    (m, se)
}
