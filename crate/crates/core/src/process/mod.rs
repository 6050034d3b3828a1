//! Inhomogeneous channel sequences: prefix compositions, ergodic averages and
//! mixing diagnostics.
//!
//! Compositions start at index 0. The forward prefix is
//! `Φ_n ∘ ⋯ ∘ Φ_0` and the backward prefix is `Φ_0 ∘ ⋯ ∘ Φ_n`.

mod diameter;
mod nesting;
mod schedule;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::channel::SuperOperatorMatrix;
use crate::dobrushin::{md_certified_bound_with, md_scalar_bound, MdEstimate, NetConfig};
use crate::error::{Error, Result};
use crate::opalg::{self, DensityOperator};

pub use diameter::{diameter_estimate, qubit_diameter};
pub use nesting::{nesting_check, NestingConfig, NestingReport, NestingStatus};
pub use schedule::{GeneratedRule, ProcessSchedule, ScheduleKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// Memoized prefix compositions of one schedule in one direction.
#[derive(Clone, Debug)]
pub struct PrefixCache {
    direction: Direction,
    prefixes: Vec<SuperOperatorMatrix>,
}

impl PrefixCache {
    pub fn new(direction: Direction) -> Self {
        PrefixCache {
            direction,
            prefixes: Vec::new(),
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    /// Prefix `Φ^{(t)}_{0,n}`, extending the cache as needed.
    pub fn get(&mut self, sched: &ProcessSchedule, n: usize) -> Result<&SuperOperatorMatrix> {
        while self.prefixes.len() <= n {
            let k = self.prefixes.len();
            let step = sched.superoperator(k)?;
            let next = match self.prefixes.last() {
                None => step,
                Some(prev) => match self.direction {
                    Direction::Forward => step.compose(prev),
                    Direction::Backward => prev.compose(&step),
                },
            };
            self.prefixes.push(next);
        }
        Ok(&self.prefixes[n])
    }
}

fn prefix_in(sched: &ProcessSchedule, n: usize, cache: &mut PrefixCache, dir: Direction) -> Result<SuperOperatorMatrix> {
    if cache.direction() != dir {
        return Err(Error::InvalidParameter(format!(
            "expected a {} prefix cache, got {}",
            dir.as_str(),
            cache.direction().as_str()
        )));
    }
    cache.get(sched, n).cloned()
}

/// `Φ_n ∘ ⋯ ∘ Φ_0`.
pub fn forward_prefix(sched: &ProcessSchedule, n: usize, cache: &mut PrefixCache) -> Result<SuperOperatorMatrix> {
    prefix_in(sched, n, cache, Direction::Forward)
}

/// `Φ_0 ∘ ⋯ ∘ Φ_n`.
pub fn backward_prefix(sched: &ProcessSchedule, n: usize, cache: &mut PrefixCache) -> Result<SuperOperatorMatrix> {
    prefix_in(sched, n, cache, Direction::Backward)
}

/// Cesàro mean `(1/(n+1)) Σ_{k=0}^{n} Φ^{(t)}_{0,k}`.
pub fn ergodic_average(sched: &ProcessSchedule, n: usize, direction: Direction) -> Result<SuperOperatorMatrix> {
    let mut cache = PrefixCache::new(direction);
    let mut sum = SuperOperatorMatrix::zeros(sched.dim());
    for k in 0..=n {
        sum = sum.add(cache.get(sched, k)?);
    }
    Ok(sum.scale(1.0 / (n + 1) as f64))
}

/// How per-channel Markov-Dobrushin bounds are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MdEstimator {
    Certified { epsilon: f64, max_evaluations: usize },
    Sampled { samples: usize, restarts: usize, seed: u64 },
}

impl Default for MdEstimator {
    fn default() -> Self {
        MdEstimator::Certified {
            epsilon: 5e-3,
            max_evaluations: crate::dobrushin::DEFAULT_MAX_EVALUATIONS,
        }
    }
}

impl MdEstimator {
    pub fn estimate(&self, ch: &crate::channel::KrausChannel) -> Result<MdEstimate> {
        match *self {
            MdEstimator::Certified {
                epsilon,
                max_evaluations,
            } => md_certified_bound_with(
                ch,
                &NetConfig {
                    epsilon,
                    max_evaluations,
                },
            ),
            MdEstimator::Sampled { samples, restarts, seed } => md_scalar_bound(ch, samples, restarts, seed),
        }
    }
}

/// Lazily computed `Tr κ̂_j` along a schedule, shared across periodic repeats.
#[derive(Clone, Debug)]
pub struct KappaProfile {
    estimator: MdEstimator,
    values: HashMap<usize, f64>,
}

impl KappaProfile {
    pub fn new(estimator: MdEstimator) -> Self {
        KappaProfile {
            estimator,
            values: HashMap::new(),
        }
    }

    pub fn trace_bound(&mut self, sched: &ProcessSchedule, j: usize) -> Result<f64> {
        let key = sched.canonical_index(j);
        if let Some(v) = self.values.get(&key) {
            return Ok(*v);
        }
        let v = self.estimator.estimate(&sched.channel(j)?)?.trace_lower_bound;
        self.values.insert(key, v);
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProductBound {
    /// `Π_{j∈range} (1 - Tr κ̂_j)`.
    pub bound: f64,
    /// Number of `j` in range with `Tr κ̂_j >= r`.
    pub big_n: usize,
    pub mu: f64,
    /// `2 μ^{N}`.
    pub two_mu_pow_bign: f64,
}

fn product_over(
    sched: &ProcessSchedule,
    range: std::ops::RangeInclusive<usize>,
    threshold_r: f64,
    profile: &mut KappaProfile,
) -> Result<ProductBound> {
    check_threshold(threshold_r)?;
    let mut bound = 1.0;
    let mut big_n = 0;
    for j in range {
        let t = profile.trace_bound(sched, j)?;
        bound *= (1.0 - t).clamp(0.0, 1.0);
        if t >= threshold_r {
            big_n += 1;
        }
    }
    let mu = 1.0 - threshold_r;
    Ok(ProductBound {
        bound,
        big_n,
        mu,
        two_mu_pow_bign: 2.0 * mu.powi(big_n as i32),
    })
}

fn check_threshold(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("threshold r must lie in (0, 1), got {r}")))
    }
}

/// Contraction bound for `Φ^{(t)}_{0,n}` from the channels `0..=n`.
pub fn md_product_bound(
    sched: &ProcessSchedule,
    n: usize,
    threshold_r: f64,
    profile: &mut KappaProfile,
) -> Result<ProductBound> {
    product_over(sched, 0..=n, threshold_r, profile)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicBound {
    pub c: f64,
    pub mu: f64,
    pub value: f64,
    pub j_star: usize,
    pub trace_kappa: f64,
}

/// Envelope `C μ^n` for a periodic schedule, with `μ = (1 - Tr κ̂_{j*})^{1/p}`
/// and `C = 2 (1 - Tr κ̂_{j*})^{-s/p}`, `s = n mod p`. When `j_star` is
/// `None` the channel with the largest bound in the period is used.
pub fn periodic_bound(
    sched: &ProcessSchedule,
    n: usize,
    j_star: Option<usize>,
    profile: &mut KappaProfile,
) -> Result<PeriodicBound> {
    let p = sched
        .period()
        .ok_or_else(|| Error::InvalidParameter("periodic bound needs a periodic schedule".into()))?;
    let (j, t) = match j_star {
        Some(j) => (j % p, profile.trace_bound(sched, j)?),
        None => {
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..p {
                let t = profile.trace_bound(sched, j)?;
                if t > best.1 {
                    best = (j, t);
                }
            }
            best
        }
    };
    if t <= 0.0 {
        return Err(Error::NoContractiveChannel);
    }
    let q = (1.0 - t).clamp(0.0, 1.0);
    let pf = p as f64;
    let s = (n % p) as f64;
    let mu = q.powf(1.0 / pf);
    if q == 0.0 {
        // the replace-like channel collapses the image after its first use
        let value = if n >= j { 0.0 } else { 2.0 };
        return Ok(PeriodicBound {
            c: 2.0,
            mu,
            value,
            j_star: j,
            trace_kappa: t,
        });
    }
    let c = 2.0 * q.powf(-s / pf);
    Ok(PeriodicBound {
        c,
        mu,
        value: c * mu.powi(n as i32),
        j_star: j,
        trace_kappa: t,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingConfig {
    pub directions: Vec<Direction>,
    pub diameter_samples: usize,
    pub seed: u64,
    pub threshold_r: f64,
    pub estimator: MdEstimator,
    /// Forward nesting check per row; `None` disables it.
    pub nesting: Option<NestingConfig>,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig {
            directions: vec![Direction::Forward, Direction::Backward],
            diameter_samples: 256,
            seed: 0,
            threshold_r: 0.25,
            estimator: MdEstimator::default(),
            nesting: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingRow {
    pub n: usize,
    pub direction: Direction,
    pub diameter: f64,
    pub md_product_bound: f64,
    pub big_n: usize,
    pub mu: f64,
    pub two_mu_pow_bign: f64,
    pub nesting: Option<NestingStatus>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingReport {
    pub rows: Vec<MixingRow>,
}

impl MixingReport {
    pub fn rows_for(&self, direction: Direction) -> impl Iterator<Item = &MixingRow> {
        self.rows.iter().filter(move |r| r.direction == direction)
    }

    /// `sup_n diameter(n) / μ^n`, the smallest constant `C` that makes the
    /// measured diameters fit `C μ^n`.
    pub fn measured_c(&self, direction: Direction, mu: f64) -> f64 {
        self.rows_for(direction)
            .map(|r| r.diameter / mu.powi(r.n as i32))
            .fold(0.0, f64::max)
    }
}

/// Diagnostics for `n = 0..=n_max` in each configured direction.
pub fn mixing_report(sched: &ProcessSchedule, n_max: usize, config: &MixingConfig) -> Result<MixingReport> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    check_threshold(config.threshold_r)?;
    let mut profile = KappaProfile::new(config.estimator);
    let mut rows = Vec::new();
    for &dir in &config.directions {
        let mut cache = PrefixCache::new(dir);
        let mut bound = 1.0;
        let mut big_n = 0usize;
        let mu = 1.0 - config.threshold_r;
        for n in 0..=n_max {
            let t = profile.trace_bound(sched, n)?;
            bound *= (1.0 - t).clamp(0.0, 1.0);
            if t >= config.threshold_r {
                big_n += 1;
            }
            let prefix = cache.get(sched, n)?.clone();
            let diameter = diameter_estimate(&prefix, config.diameter_samples, config.seed ^ n as u64)?;
            let nesting = match (&config.nesting, dir) {
                (Some(nc), Direction::Forward) if sched.len().is_none_or(|l| n + 1 < l) => Some(nesting_check(sched, n, nc, &mut cache)?.status),
                _ => None,
            };
            rows.push(MixingRow {
                n,
                direction: dir,
                diameter,
                md_product_bound: bound,
                big_n,
                mu,
                two_mu_pow_bign: 2.0 * mu.powi(big_n as i32),
                nesting,
            });
        }
    }
    Ok(MixingReport { rows })
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub direction: Direction,
    /// `Φ^{(t)}_{0,n}(ρ_0)` for `n = 0..=n_max`.
    pub states: Vec<DensityOperator>,
    /// `Z_0 = ρ_0`, `Z_n = Φ_n(Z_{n-1})`.
    pub reference: Vec<DensityOperator>,
    /// `‖states[n] - reference[n]‖_TV`.
    pub alignment: Vec<f64>,
}

impl Trajectory {
    /// `‖states[n+1] - states[n]‖_TV` for consecutive outputs.
    pub fn increments(&self) -> Vec<f64> {
        self.states
            .windows(2)
            .map(|w| opalg::trace_norm_hermitian(&(w[1].matrix() - w[0].matrix())))
            .collect()
    }
}

fn as_density(m: crate::opalg::ComplexMatrix) -> Result<DensityOperator> {
    let h = crate::opalg::HermitianOperator::symmetrize(m)?;
    DensityOperator::from_hermitian_with_tol(h, 1e-9, 1e-9)
}

pub fn trajectory(sched: &ProcessSchedule, rho0: &DensityOperator, n_max: usize, direction: Direction) -> Result<Trajectory> {
    if rho0.dim() != sched.dim() {
        return Err(Error::DimensionMismatch {
            expected: sched.dim(),
            got: rho0.dim(),
        });
    }
    let mut cache = PrefixCache::new(direction);
    let mut states = Vec::with_capacity(n_max + 1);
    let mut reference = Vec::with_capacity(n_max + 1);
    let mut alignment = Vec::with_capacity(n_max + 1);
    let mut z = rho0.clone();
    for n in 0..=n_max {
        let state = match direction {
            Direction::Forward if n == 0 => sched.channel(0)?.apply(rho0)?,
            Direction::Forward => sched.channel(n)?.apply(&states[n - 1])?,
            Direction::Backward => as_density(cache.get(sched, n)?.apply(rho0.matrix()))?,
        };
        if n > 0 {
            z = sched.channel(n)?.apply(&z)?;
        }
        alignment.push(opalg::trace_norm_hermitian(&(state.matrix() - z.matrix())));
        states.push(state);
        reference.push(z.clone());
    }
    Ok(Trajectory {
        direction,
        states,
        reference,
        alignment,
    })
}

/// Envelope `2 μ^{N}` for the trajectory alignment at step `n`, counting
/// channels `1..=n` (those shared by `Z_n` and `Φ^{(f)}_{0,n}`).
pub fn trajectory_envelope(
    sched: &ProcessSchedule,
    n: usize,
    threshold_r: f64,
    profile: &mut KappaProfile,
) -> Result<ProductBound> {
    if n == 0 {
        check_threshold(threshold_r)?;
        return Ok(ProductBound {
            bound: 1.0,
            big_n: 0,
            mu: 1.0 - threshold_r,
            two_mu_pow_bign: 2.0,
        });
    }
    product_over(sched, 1..=n, threshold_r, profile)
}
