//! Birth-death Metropolis-Hastings sampling.
//!
//! Each transition draws `y1, y2 ~ U[0,1)` first. `y1 <= 1/2` proposes a
//! birth at a uniform location, accepted when `y2 < r` with
//! `r = |W| / (n + 1) · λ(u | x)`. Otherwise a uniformly chosen event is
//! proposed for deletion and removed when `y2 < 1 / r` with
//! `r = |W| / n · λ(x_i | x)`. A death proposal on the empty pattern is a
//! no-op.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EventPoint, PointPattern};
use crate::model::{GeyerModel, InteractionState};

pub const DEFAULT_THIN: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Empty,
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub n_steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub initial: InitialState,
    #[serde(default = "default_thin")]
    pub thin: u64,
}

fn default_thin() -> u64 {
    DEFAULT_THIN
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be positive".into()));
        }
        if self.burn_in > self.n_steps {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) exceeds n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be positive".into()));
        }
        if let InitialState::Poisson { rate } = self.initial {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "initial Poisson rate {rate} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Birth,
    Death,
}

impl Move {
    pub fn as_str(&self) -> &'static str {
        match self {
            Move::Birth => "birth",
            Move::Death => "death",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub mv: Move,
    pub accepted: bool,
    /// `log r` of the proposal; `None` for a death proposed on the empty pattern.
    pub log_hastings: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceCounts {
    pub birth_proposed: u64,
    pub birth_accepted: u64,
    pub death_proposed: u64,
    pub death_accepted: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcTrace {
    /// Point count after each step.
    pub counts: Vec<u32>,
    pub moves: Vec<Move>,
    pub accepted: Vec<bool>,
    pub acceptance: AcceptanceCounts,
    pub burn_in: u64,
    pub thin: u64,
    pub final_pattern: PointPattern,
}

impl McmcTrace {
    /// Counts after burn-in, every `thin` steps.
    pub fn thinned_counts(&self) -> Vec<u32> {
        let start = self.burn_in as usize;
        (start..self.counts.len())
            .filter(|k| (k + 1 - start).is_multiple_of(self.thin as usize))
            .map(|k| self.counts[k])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,n_points,move,accepted")?;
        for k in 0..self.counts.len() {
            writeln!(
                w,
                "{},{},{},{}",
                k + 1,
                self.counts[k],
                self.moves[k].as_str(),
                self.accepted[k]
            )?;
        }
        Ok(())
    }
}

/// Chain state for one model: the configuration plus its neighbour counts.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    model: &'a GeyerModel,
    state: InteractionState,
    zero_trend: usize,
    log_volume: f64,
    scratch: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a GeyerModel, initial: &PointPattern) -> Result<Self> {
        model.validate()?;
        if initial.window() != &model.window {
            return Err(Error::Contract("initial pattern window differs from model window".into()));
        }
        let state = InteractionState::from_pattern(initial, model.shapes())?;
        let zero_trend = initial
            .points()
            .iter()
            .filter(|p| model.trend.lambda(&model.window, p) <= 0.0)
            .count();
        Ok(Sampler {
            model,
            state,
            zero_trend,
            log_volume: model.window.volume().ln(),
            scratch: vec![0.0; model.scales.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn pattern(&self) -> PointPattern {
        PointPattern::from_parts_unchecked(self.model.window, self.state.points().to_vec())
    }

    /// `log r` for a birth at `u`.
    pub fn log_birth_ratio(&mut self, u: &EventPoint) -> f64 {
        if self.zero_trend > 0 {
            return f64::NEG_INFINITY;
        }
        self.state.birth_stats(u, &mut self.scratch);
        let lp = self.model.log_intensity_from_stats(u, &self.scratch);
        self.log_volume - ((self.state.len() + 1) as f64).ln() + lp
    }

    /// `log r` of the reverse birth for member `i`, `log(|W| λ(x_i | x \ x_i) / n)`;
    /// the death is accepted with probability `min(1, 1/r)`.
    pub fn log_death_ratio(&mut self, i: usize) -> f64 {
        let u = self.state.points()[i];
        if self.zero_trend > 0 {
            // Either f(x) = 0 or f(x \ u) = 0 as well; both give 0 by convention.
            return f64::NEG_INFINITY;
        }
        self.state.member_stats(i, &mut self.scratch);
        let lp = self.model.log_intensity_from_stats(&u, &self.scratch);
        self.log_volume - (self.state.len() as f64).ln() + lp
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StepOutcome {
        let y1: f64 = rng.random();
        let y2: f64 = rng.random();
        if y1 <= 0.5 {
            let u = self
                .model
                .window
                .from_unit(rng.random(), rng.random(), rng.random());
            let log_r = self.log_birth_ratio(&u);
            let accepted = y2.ln() < log_r;
            if accepted {
                self.state.insert(u);
            }
            StepOutcome {
                mv: Move::Birth,
                accepted,
                log_hastings: Some(log_r),
            }
        } else {
            if self.state.is_empty() {
                return StepOutcome {
                    mv: Move::Death,
                    accepted: false,
                    log_hastings: None,
                };
            }
            let i = rng.random_range(0..self.state.len());
            let log_r = self.log_death_ratio(i);
            let accepted = y2.ln() < -log_r;
            if accepted {
                let u = self.state.swap_remove(i);
                if self.model.trend.lambda(&self.model.window, &u) <= 0.0 {
                    self.zero_trend -= 1;
                }
            }
            StepOutcome {
                mv: Move::Death,
                accepted,
                log_hastings: Some(log_r),
            }
        }
    }
}

/// One transition from `pattern`.
pub fn mh_step<R: Rng + ?Sized>(model: &GeyerModel, pattern: &PointPattern, rng: &mut R) -> Result<PointPattern> {
    let mut s = Sampler::new(model, pattern)?;
    s.step(rng);
    Ok(s.pattern())
}

pub fn initial_pattern<R: Rng + ?Sized>(model: &GeyerModel, initial: InitialState, rng: &mut R) -> Result<PointPattern> {
    match initial {
        InitialState::Empty => Ok(PointPattern::empty(model.window)),
        InitialState::Poisson { rate } => {
            let mean = rate * model.window.volume();
            let n = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::InvalidParameter(format!("initial Poisson rate: {e}")))?
                    .sample(rng) as usize
            } else {
                0
            };
            let pts = (0..n)
                .map(|_| model.window.from_unit(rng.random(), rng.random(), rng.random()))
                .collect();
            Ok(PointPattern::from_parts_unchecked(model.window, pts))
        }
    }
}

/// Runs `config.n_steps` transitions from the configured initial state.
pub fn run_chain(model: &GeyerModel, config: &McmcConfig) -> Result<McmcTrace> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = initial_pattern(model, config.initial, &mut rng)?;
    let mut sampler = Sampler::new(model, &start)?;
    let n = config.n_steps as usize;
    let mut counts = Vec::with_capacity(n);
    let mut moves = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut acc = AcceptanceCounts::default();
    for _ in 0..n {
        let out = sampler.step(&mut rng);
        match out.mv {
            Move::Birth => {
                acc.birth_proposed += 1;
                acc.birth_accepted += out.accepted as u64;
            }
            Move::Death => {
                acc.death_proposed += 1;
                acc.death_accepted += out.accepted as u64;
            }
        }
        counts.push(sampler.len() as u32);
        moves.push(out.mv);
        accepted.push(out.accepted);
    }
    Ok(McmcTrace {
        counts,
        moves,
        accepted,
        acceptance: acc,
        burn_in: config.burn_in,
        thin: config.thin,
        final_pattern: sampler.pattern(),
    })
}

/// SplitMix64 mixing of a master seed with a stream index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent chains with seeds derived from `(config.seed, chain index)`.
pub fn run_chains(model: &GeyerModel, config: &McmcConfig, n_chains: usize) -> Result<Vec<McmcTrace>> {
    (0..n_chains)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.seed = derive_seed(config.seed, i as u64);
            run_chain(model, &c)
        })
        .collect()
}
