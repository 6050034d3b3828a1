//! Image-inclusion test `Φ_{0,n+1}(𝔖) ⊆ Φ_{0,n}(𝔖)` on sampled states.
//!
//! For a target `τ = Φ_{0,n+1}(ρ)` we look for a density operator `σ` with
//! `Φ_{0,n}(σ) = τ` by Dykstra's alternating projections between the affine
//! solution set and the set of density operators. Hermitian matrices are
//! handled in an orthonormal real basis so both projections are Euclidean in
//! the Frobenius metric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Direction, PrefixCache, ProcessSchedule};
use crate::channel::SuperOperatorMatrix;
use crate::error::{Error, Result};
use crate::opalg::{self, ComplexMatrix, DensityOperator, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NestingStatus {
    Nested,
    Violated,
    Inconclusive,
}

impl NestingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NestingStatus::Nested => "nested",
            NestingStatus::Violated => "violated",
            NestingStatus::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestingConfig {
    pub samples: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for NestingConfig {
    fn default() -> Self {
        NestingConfig {
            samples: 8,
            tol: 1e-6,
            max_iters: 5000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestingReport {
    pub status: NestingStatus,
    /// Largest Frobenius distance between the two projected iterates.
    pub worst_residual: f64,
    pub iterations: usize,
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Coordinates of a Hermitian matrix: diagonal, then `√2 Re`, `√2 Im` of the
/// strict upper triangle.
pub(crate) fn herm_to_real(h: &ComplexMatrix) -> DVector<f64> {
    let d = h.nrows();
    let mut v = Vec::with_capacity(d * d);
    for k in 0..d {
        v.push(h[(k, k)].re);
    }
    for k in 0..d {
        for l in k + 1..d {
            v.push(std::f64::consts::SQRT_2 * h[(k, l)].re);
            v.push(std::f64::consts::SQRT_2 * h[(k, l)].im);
        }
    }
    DVector::from_vec(v)
}

pub(crate) fn real_to_herm(v: &DVector<f64>, d: usize) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(d, d);
    for k in 0..d {
        h[(k, k)] = C64::new(v[k], 0.0);
    }
    let mut idx = d;
    for k in 0..d {
        for l in k + 1..d {
            let z = C64::new(v[idx] * SQRT_HALF, v[idx + 1] * SQRT_HALF);
            h[(k, l)] = z;
            h[(l, k)] = z.conj();
            idx += 2;
        }
    }
    h
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Frobenius projection of a Hermitian matrix onto the density operators.
pub(crate) fn project_density(h: &ComplexMatrix) -> ComplexMatrix {
    let (values, vectors) = opalg::hermitian_eigen(h);
    let w = project_simplex(&values);
    let d = h.nrows();
    let mut out = ComplexMatrix::zeros(d, d);
    for (j, &wj) in w.iter().enumerate() {
        if wj > 0.0 {
            let v = vectors.column(j);
            out += (v * v.adjoint()) * C64::new(wj, 0.0);
        }
    }
    out
}

/// Affine set `{x : L x = t}` with `L` the real matrix of `Φ` plus the trace
/// functional.
struct AffineSet {
    pinv: DMatrix<f64>,
    lmat: DMatrix<f64>,
    target: DVector<f64>,
}

impl AffineSet {
    fn new(map: &SuperOperatorMatrix, target: &ComplexMatrix) -> Result<(Self, f64)> {
        let d = map.dim();
        let n = d * d;
        let mut lmat = DMatrix::<f64>::zeros(n + 1, n);
        for c in 0..n {
            let mut e = DVector::<f64>::zeros(n);
            e[c] = 1.0;
            let image = herm_to_real(&map.apply(&real_to_herm(&e, d)));
            lmat.view_mut((0, c), (n, 1)).copy_from(&image);
            if c < d {
                lmat[(n, c)] = 1.0;
            }
        }
        let mut t = herm_to_real(target).as_slice().to_vec();
        t.push(1.0);
        let target = DVector::from_vec(t);
        let pinv = lmat
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
        let consistency = (&lmat * (&pinv * &target) - &target).norm();
        Ok((AffineSet { pinv, lmat, target }, consistency))
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.pinv * (&self.lmat * x - &self.target)
    }
}

/// Final gap between the two iterates, iterations used, and whether the
/// iterates settled within the budget.
fn dykstra(set: &AffineSet, d: usize, tol: f64, max_iters: usize) -> (f64, usize, bool) {
    let n = d * d;
    let mut x = herm_to_real(&ComplexMatrix::identity(d, d).map(|z| z / d as f64));
    let mut p = DVector::<f64>::zeros(n);
    let mut q = DVector::<f64>::zeros(n);
    let mut gap = f64::INFINITY;
    for it in 1..=max_iters {
        let y = set.project(&(&x + &p));
        p = &x + &p - &y;
        let z = herm_to_real(&project_density(&real_to_herm(&(&y + &q), d)));
        q = &y + &q - &z;
        let step = (&z - &x).norm();
        gap = (&y - &z).norm();
        x = z;
        if gap <= 0.1 * tol {
            return (gap, it, true);
        }
        if step < 1e-13 {
            return (gap, it, true);
        }
    }
    (gap, max_iters, false)
}

/// Tests whether sampled images under `Φ_{0,n+1}` lie in `Φ_{0,n}(𝔖)`.
pub fn nesting_check(
    sched: &ProcessSchedule,
    n: usize,
    config: &NestingConfig,
    cache: &mut PrefixCache,
) -> Result<NestingReport> {
    if cache.direction() != Direction::Forward {
        return Err(Error::InvalidParameter("nesting check needs a forward prefix cache".into()));
    }
    let d = sched.dim();
    let outer = cache.get(sched, n)?.clone();
    let next = cache.get(sched, n + 1)?.clone();
    let mut states = vec![DensityOperator::maximally_mixed(d)];
    states.extend(
        opalg::sample_pure_states(d, config.samples.max(1), config.seed)?
            .iter()
            .map(DensityOperator::from_pure),
    );
    let mut worst = 0.0f64;
    let mut iterations = 0;
    let mut all_converged = true;
    for rho in &states {
        let target = next.apply(rho.matrix());
        let (set, consistency) = AffineSet::new(&outer, &target)?;
        if consistency > config.tol {
            // no Hermitian preimage at all
            return Ok(NestingReport {
                status: NestingStatus::Violated,
                worst_residual: consistency,
                iterations,
            });
        }
        let (gap, its, converged) = dykstra(&set, d, config.tol, config.max_iters);
        iterations += its;
        worst = worst.max(gap);
        if converged && gap > config.tol {
            return Ok(NestingReport {
                status: NestingStatus::Violated,
                worst_residual: worst,
                iterations,
            });
        }
        all_converged &= converged || gap <= config.tol;
    }
    let status = if all_converged {
        NestingStatus::Nested
    } else {
        NestingStatus::Inconclusive
    };
    Ok(NestingReport {
        status,
        worst_residual: worst,
        iterations,
    })
}
