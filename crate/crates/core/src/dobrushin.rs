//! Markov-Dobrushin constants of quantum channels and the classical Dobrushin
//! coefficient.
//!
//! Apart from channels with a constant image, where `κ_Φ` is that image, only
//! the scalar part `c* I` of the operator infimum `κ_Φ` is computed, with
//! `c* = inf_ξ λ_min(Φ(ξξ*))` over unit vectors. Any lower bound on `Tr κ_Φ`
//! yields a valid contraction factor `1 - Tr κ̂`.
//!
//! The certified estimator combines two facts:
//!
//! * `λ_min(Φ(ξξ*)) = min_η <conj(ξ)⊗η, C conj(ξ)⊗η>` for the Choi matrix `C`,
//!   so `λ_min(C)` bounds `c*` from below (exactly for depolarizing, replace
//!   and unitary channels).
//! * `ξ -> λ_min(Φ(ξξ*))` is 1-Lipschitz in the Euclidean distance of unit
//!   vectors, which drives a branch-and-bound search over hyperspherical
//!   coordinates of the pure-state manifold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::KrausChannel;
use crate::error::{Error, Result};
use crate::opalg::{self, ComplexMatrix, ComplexVector, HermitianOperator, PureState, C64};

/// Largest dimension accepted by the certified estimator.
pub const MAX_CERTIFIED_DIM: usize = 4;
pub const DEFAULT_MAX_EVALUATIONS: usize = 20_000;
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Safety margin subtracted from certified eigenvalue bounds to absorb
/// eigensolver rounding.
const ROUNDING_MARGIN: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;
const CONSTANT_IMAGE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MdMethod {
    ScalarSampled,
    ScalarCertifiedNet,
    Analytic,
}

impl MdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MdMethod::ScalarSampled => "scalar-sampled",
            MdMethod::ScalarCertifiedNet => "scalar-certified-net",
            MdMethod::Analytic => "analytic",
        }
    }
}

/// Estimate of `Tr κ_Φ`.
#[derive(Clone, Debug)]
pub struct MdEstimate {
    pub trace_lower_bound: f64,
    /// Scalar witness `c I` with `c = trace_lower_bound / d`.
    pub witness: Option<HermitianOperator>,
    pub method: MdMethod,
    pub sample_count: usize,
    pub net_resolution: Option<f64>,
    /// `d` times the gap between the best value found and the certified bound.
    pub slack: f64,
    /// `d` times the smallest `λ_min(Φ(ξξ*))` actually observed.
    pub trace_upper_estimate: f64,
}

impl MdEstimate {
    pub fn contraction_coefficient(&self) -> f64 {
        md_contraction_coefficient(self)
    }
}

pub fn md_contraction_coefficient(est: &MdEstimate) -> f64 {
    (1.0 - est.trace_lower_bound).clamp(0.0, 1.0)
}

/// `λ_min(Φ(ξξ*))` with the image assembled as `Σ_i (K_i ξ)(K_i ξ)*`.
fn lambda_min_image(ch: &KrausChannel, xi: &ComplexVector) -> f64 {
    let d = ch.dim();
    let mut image = ComplexMatrix::zeros(d, d);
    for k in ch.kraus() {
        let v = k * xi;
        image.gerc(C64::new(1.0, 0.0), &v, &v, C64::new(1.0, 0.0));
    }
    opalg::min_eigenvalue(&image)
}

fn scalar_witness(d: usize, trace_bound: f64) -> Option<HermitianOperator> {
    Some(HermitianOperator::identity(d).scale(trace_bound / d as f64))
}

fn require_tp(ch: &KrausChannel) -> Result<()> {
    if ch.is_trace_preserving() {
        Ok(())
    } else {
        Err(Error::NotTracePreserving {
            residual: ch.tp_residual(),
        })
    }
}

/// Smallest eigenvalue of the Choi matrix, a lower bound on `c*`.
pub fn choi_floor(ch: &KrausChannel) -> f64 {
    ch.choi().min_eigenvalue()
}

/// The common image `σ` when `Φ(X) = Tr(X) σ`; then `κ_Φ = σ` and
/// `Tr κ_Φ = 1` exactly.
pub fn constant_image(ch: &KrausChannel) -> Option<ComplexMatrix> {
    let d = ch.dim();
    let sigma = ch.apply_matrix(&opalg::matrix_unit(d, 0, 0));
    for k in 0..d {
        for l in 0..d {
            let image = ch.apply_matrix(&opalg::matrix_unit(d, k, l));
            let expected = if k == l { sigma.clone() } else { ComplexMatrix::zeros(d, d) };
            if (image - expected).norm() > CONSTANT_IMAGE_TOL {
                return None;
            }
        }
    }
    Some(sigma)
}

fn constant_image_estimate(ch: &KrausChannel, sigma: ComplexMatrix, eps: Option<f64>) -> MdEstimate {
    MdEstimate {
        trace_lower_bound: 1.0,
        witness: HermitianOperator::symmetrize(sigma).ok(),
        method: MdMethod::Analytic,
        sample_count: ch.dim() * ch.dim(),
        net_resolution: eps,
        slack: 0.0,
        trace_upper_estimate: 1.0,
    }
}

fn sphere_point(x: &[f64]) -> ComplexVector {
    let d = x.len() / 2;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    ComplexVector::from_fn(d, |k, _| C64::new(x[2 * k], x[2 * k + 1]) / norm)
}

fn to_real(xi: &ComplexVector) -> Vec<f64> {
    xi.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Projected gradient descent of `λ_min(Φ(ξξ*))` on the unit sphere of
/// `C^d ≅ R^{2d}`; gradients by central differences.
fn refine(ch: &KrausChannel, start: &ComplexVector, iters: usize) -> (f64, ComplexVector) {
    let f = |x: &[f64]| lambda_min_image(ch, &sphere_point(x));
    let mut x = to_real(start);
    let mut fx = f(&x);
    let mut step = 0.1;
    for _ in 0..iters {
        let mut grad = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += FD_STEP;
            b[i] -= FD_STEP;
            grad[i] = (f(&a) - f(&b)) / (2.0 * FD_STEP);
        }
        // tangent projection: remove the radial component
        let radial: f64 = grad.iter().zip(&x).map(|(g, v)| g * v).sum();
        for (g, v) in grad.iter_mut().zip(&x) {
            *g -= radial * v;
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-10 {
            break;
        }
        let mut improved = false;
        while step > 1e-10 {
            let mut y: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v - step * g / gnorm).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.iter_mut().for_each(|v| *v /= n);
            let fy = f(&y);
            if fy < fx - 1e-15 {
                x = y;
                fx = fy;
                step *= 1.5;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (fx, sphere_point(&x))
}

/// Heuristic estimate of `Tr κ_Φ` from Haar samples refined by projected
/// gradient descent. The result approximates the infimum from above and is
/// not a certified bound.
pub fn md_scalar_bound(ch: &KrausChannel, samples: usize, restarts: usize, seed: u64) -> Result<MdEstimate> {
    require_tp(ch)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be positive".into()));
    }
    if let Some(sigma) = constant_image(ch) {
        return Ok(constant_image_estimate(ch, sigma, None));
    }
    let d = ch.dim();
    let states = opalg::sample_pure_states(d, samples, seed)?;
    let mut values: Vec<(f64, usize)> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| (lambda_min_image(ch, s.vector()), i))
        .collect();
    values.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let starts: Vec<usize> = values.iter().take(restarts).map(|v| v.1).collect();
    let refined: Vec<f64> = starts
        .par_iter()
        .map(|&i| refine(ch, states[i].vector(), 200).0)
        .collect();
    let best = refined.into_iter().fold(values[0].0, f64::min);
    let bound = (d as f64 * best).clamp(0.0, 1.0);
    Ok(MdEstimate {
        trace_lower_bound: bound,
        witness: scalar_witness(d, bound),
        method: MdMethod::ScalarSampled,
        sample_count: samples,
        net_resolution: None,
        slack: 0.0,
        trace_upper_estimate: d as f64 * best,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    pub epsilon: f64,
    pub max_evaluations: usize,
}

impl NetConfig {
    pub fn new(epsilon: f64) -> Self {
        NetConfig {
            epsilon,
            max_evaluations: DEFAULT_MAX_EVALUATIONS,
        }
    }
}

/// Axis-aligned box in hyperspherical angle coordinates.
#[derive(Clone, Debug)]
struct AngleBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    center_value: f64,
    lower: f64,
    id: usize,
}

impl PartialEq for AngleBox {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for AngleBox {}

impl PartialOrd for AngleBox {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AngleBox {
    // max-heap on the negated lower bound: smallest bound pops first
    fn cmp(&self, other: &Self) -> Ordering {
        other.lower.total_cmp(&self.lower).then(other.id.cmp(&self.id))
    }
}

/// Unit vector of `R^{n}` with first coordinate `cos θ_1 >= 0`, mapped to
/// `C^d` with a real nonnegative first amplitude (`n = 2d - 1`).
fn angles_to_state(theta: &[f64], d: usize) -> ComplexVector {
    let n = 2 * d - 1;
    let mut x = vec![0.0; n];
    let mut s = 1.0;
    for i in 0..n - 1 {
        x[i] = s * theta[i].cos();
        s *= theta[i].sin();
    }
    x[n - 1] = s;
    ComplexVector::from_fn(d, |k, _| {
        if k == 0 {
            C64::new(x[0], 0.0)
        } else {
            C64::new(x[2 * k - 1], x[2 * k])
        }
    })
}

fn max_abs_sin(lo: f64, hi: f64) -> f64 {
    let hits_peak = [FRAC_PI_2, 3.0 * FRAC_PI_2].iter().any(|&p| lo <= p && p <= hi);
    if hits_peak {
        1.0
    } else {
        lo.sin().abs().max(hi.sin().abs())
    }
}

/// Bound on the Euclidean distance from the box center to any point of the
/// box, using `ds² = dθ_1² + sin²θ_1 dθ_2² + ...`.
fn box_radius(lo: &[f64], hi: &[f64]) -> f64 {
    let mut w = 1.0;
    let mut r2 = 0.0;
    for i in 0..lo.len() {
        let h = 0.5 * (hi[i] - lo[i]);
        r2 += (w * h) * (w * h);
        w *= max_abs_sin(lo[i], hi[i]);
    }
    r2.sqrt()
}

fn split_axis(lo: &[f64], hi: &[f64]) -> usize {
    let mut w = 1.0;
    let mut best = (0, -1.0);
    for i in 0..lo.len() {
        let extent = w * (hi[i] - lo[i]);
        if extent > best.1 {
            best = (i, extent);
        }
        w *= max_abs_sin(lo[i], hi[i]);
    }
    best.0
}

struct Search<'a> {
    ch: &'a KrausChannel,
    d: usize,
    floor: f64,
    evaluations: usize,
    next_id: usize,
    best: f64,
}

impl Search<'_> {
    fn make_box(&mut self, lo: Vec<f64>, hi: Vec<f64>) -> AngleBox {
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let value = lambda_min_image(self.ch, &angles_to_state(&center, self.d));
        self.evaluations += 1;
        self.best = self.best.min(value);
        let lower = (value - box_radius(&lo, &hi)).max(self.floor);
        self.next_id += 1;
        AngleBox {
            lo,
            hi,
            center_value: value,
            lower,
            id: self.next_id,
        }
    }
}

fn initial_boxes(search: &mut Search<'_>, epsilon: f64, budget: usize) -> Vec<AngleBox> {
    let m = 2 * search.d - 2;
    let ranges: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            if i == 0 {
                (0.0, FRAC_PI_2)
            } else if i + 1 == m {
                (0.0, 2.0 * PI)
            } else {
                (0.0, PI)
            }
        })
        .collect();
    // coarse start of about 0.5 rad per piece, coarser when the budget is small
    let mut width = 0.5f64.max(4.0 * epsilon);
    let mut pieces: Vec<usize>;
    loop {
        pieces = ranges.iter().map(|(a, b)| (((b - a) / width).ceil() as usize).max(1)).collect();
        if pieces.iter().product::<usize>() * 4 <= budget.max(4) || pieces.iter().all(|&p| p == 1) {
            break;
        }
        width *= 2.0;
    }
    let total: usize = pieces.iter().product();
    let mut boxes = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut lo = Vec::with_capacity(m);
        let mut hi = Vec::with_capacity(m);
        for (i, &(a, b)) in ranges.iter().enumerate() {
            let k = rem % pieces[i];
            rem /= pieces[i];
            let step = (b - a) / pieces[i] as f64;
            lo.push(a + k as f64 * step);
            hi.push(a + (k + 1) as f64 * step);
        }
        boxes.push(search.make_box(lo, hi));
    }
    boxes
}

/// Certified lower bound on `Tr κ_Φ` with the default evaluation budget.
pub fn md_certified_bound(ch: &KrausChannel, epsilon: f64) -> Result<MdEstimate> {
    md_certified_bound_with(ch, &NetConfig::new(epsilon))
}

/// Certified lower bound on `Tr κ_Φ`.
///
/// Refines boxes until the certified minimum is within `2ε` of the best value
/// seen or the evaluation budget is spent. The returned bound is valid at any
/// stopping point; `slack` reports the gap actually achieved.
pub fn md_certified_bound_with(ch: &KrausChannel, config: &NetConfig) -> Result<MdEstimate> {
    require_tp(ch)?;
    let d = ch.dim();
    if d > MAX_CERTIFIED_DIM {
        return Err(Error::SizeGuard(format!(
            "certified bound supports d <= {MAX_CERTIFIED_DIM}, got {d}"
        )));
    }
    let eps = config.epsilon;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 0.5), got {eps}")));
    }
    if let Some(sigma) = constant_image(ch) {
        return Ok(constant_image_estimate(ch, sigma, Some(eps)));
    }
    let df = d as f64;
    let floor = choi_floor(ch);
    let target_gap = 2.0 * eps;

    if d == 1 {
        // every channel on M_1 is the identity on the single state
        let v = ch.apply_matrix(&opalg::identity(1))[(0, 0)].re;
        let bound = (v - ROUNDING_MARGIN).clamp(0.0, 1.0);
        return Ok(MdEstimate {
            trace_lower_bound: bound,
            witness: scalar_witness(1, bound),
            method: MdMethod::Analytic,
            sample_count: 1,
            net_resolution: Some(eps),
            slack: 0.0,
            trace_upper_estimate: v,
        });
    }

    let mut search = Search {
        ch,
        d,
        floor,
        evaluations: 0,
        next_id: 0,
        best: f64::INFINITY,
    };
    // basis states are cheap, informative probes for the upper value
    for i in 0..d {
        search.best = search.best.min(lambda_min_image(ch, PureState::basis(d, i).vector()));
        search.evaluations += 1;
    }

    let mut heap: BinaryHeap<AngleBox> = initial_boxes(&mut search, eps, config.max_evaluations).into_iter().collect();
    let mut lower = floor;
    let mut analytic = false;
    if search.best - floor <= 1e-9 {
        analytic = true;
    } else {
        while let Some(top) = heap.peek() {
            lower = top.lower;
            if search.best - lower <= target_gap || search.evaluations + 2 > config.max_evaluations {
                break;
            }
            let b = heap.pop().expect("peeked");
            if b.center_value - b.lower <= 0.0 {
                // box already tight at the Choi floor
                lower = b.lower;
                heap.push(b);
                break;
            }
            let axis = split_axis(&b.lo, &b.hi);
            let mid = 0.5 * (b.lo[axis] + b.hi[axis]);
            let mut left_hi = b.hi.clone();
            left_hi[axis] = mid;
            let mut right_lo = b.lo.clone();
            right_lo[axis] = mid;
            let left = search.make_box(b.lo.clone(), left_hi);
            let right = search.make_box(right_lo, b.hi.clone());
            heap.push(left);
            heap.push(right);
        }
        if let Some(top) = heap.peek() {
            lower = lower.min(top.lower);
        }
    }
    let lower = lower.max(floor).min(search.best);
    let bound = (df * (lower - ROUNDING_MARGIN)).clamp(0.0, 1.0);
    Ok(MdEstimate {
        trace_lower_bound: bound,
        witness: scalar_witness(d, bound),
        method: if analytic { MdMethod::Analytic } else { MdMethod::ScalarCertifiedNet },
        sample_count: search.evaluations,
        net_resolution: Some(eps),
        slack: df * (search.best - lower).max(0.0),
        trace_upper_estimate: df * search.best,
    })
}

/// Row-stochastic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix {
    rows: Vec<Vec<f64>>,
}

/// Checks that a row is a probability vector of the given length.
pub fn check_probability_row(row: &[f64], len: usize) -> Result<()> {
    if row.len() != len {
        return Err(Error::InvalidStochastic(format!("row has {} entries, expected {len}", row.len())));
    }
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidStochastic(format!("entry {v} is not a nonnegative number")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidStochastic(format!("row sums to {sum}, expected 1")));
    }
    Ok(())
}

impl StochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::InvalidStochastic("matrix has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            check_probability_row(row, d).map_err(|e| match e {
                Error::InvalidStochastic(m) => Error::InvalidStochastic(format!("row {i}: {m}")),
                other => other,
            })?;
        }
        Ok(StochasticMatrix { rows })
    }

    pub fn identity(d: usize) -> Self {
        let rows = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        StochasticMatrix { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    /// `self · other`.
    pub fn product(&self, other: &StochasticMatrix) -> Result<StochasticMatrix> {
        let d = self.dim();
        if other.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: other.dim(),
            });
        }
        let rows = (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|k| self.rows[i][k] * other.rows[k][j]).sum()).collect())
            .collect();
        Ok(StochasticMatrix { rows })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector {
    weights: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidStochastic("empty probability vector".into()));
        }
        check_probability_row(&weights, weights.len())?;
        Ok(ProbabilityVector { weights })
    }

    pub fn point(d: usize, i: usize) -> Self {
        let mut weights = vec![0.0; d];
        weights[i] = 1.0;
        ProbabilityVector { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Row-vector product `μ Π`.
    pub fn evolve(&self, pi: &StochasticMatrix) -> Result<ProbabilityVector> {
        let d = self.dim();
        if pi.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: pi.dim() });
        }
        let weights = (0..d).map(|j| (0..d).map(|i| self.weights[i] * pi.get(i, j)).sum()).collect();
        Ok(ProbabilityVector { weights })
    }

    pub fn l1_distance(&self, other: &ProbabilityVector) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Dobrushin coefficient `δ(Π) = ½ max_{i,i'} Σ_j |Π_ij - Π_i'j|`.
pub fn classical_dobrushin(pi: &StochasticMatrix) -> f64 {
    let d = pi.dim();
    let mut worst = 0.0f64;
    for i in 0..d {
        for k in i + 1..d {
            let s: f64 = (0..d).map(|j| (pi.get(i, j) - pi.get(k, j)).abs()).sum();
            worst = worst.max(0.5 * s);
        }
    }
    worst.clamp(0.0, 1.0)
}

/// Channel with Kraus operators `√Π_ij |j><i|`, acting as `diag(μ) -> diag(μΠ)`.
pub fn embed_classical(pi: &StochasticMatrix) -> Result<KrausChannel> {
    let d = pi.dim();
    let mut kraus = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let p = pi.get(i, j);
            if p > 0.0 {
                let mut k = ComplexMatrix::zeros(d, d);
                k[(j, i)] = C64::new(p.sqrt(), 0.0);
                kraus.push(k);
            }
        }
    }
    KrausChannel::new(kraus, crate::channel::TpCheck::Strict)
}

/// Transition matrix at step `k` of the two-state chain that is weakly but
/// not strongly ergodic: rows `(2^-n, 1 - 2^-n)` at `k = 2n` and
/// `(1 - 1/(2n+1), 1/(2n+1))` at `k = 2n + 1`.
pub fn exp1_matrix(k: usize) -> StochasticMatrix {
    let n = (k / 2) as i32;
    let row = if k.is_multiple_of(2) {
        let a = 2f64.powi(-n);
        vec![a, 1.0 - a]
    } else {
        let b = 1.0 / (2 * n + 1) as f64;
        vec![1.0 - b, b]
    };
    StochasticMatrix {
        rows: vec![row.clone(), row],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::TpCheck;
    use crate::opalg::DensityOperator;
    use crate::rng;

    fn random_channel(d: usize, seed: u64) -> KrausChannel {
        let mut r = rng::seeded(seed);
        KrausChannel::haar(d, 2, &mut r).unwrap()
    }

    #[test]
    fn choi_floor_matches_depolarizing() {
        for d in 2..=3 {
            let ch = KrausChannel::depolarizing(d, 0.4).unwrap();
            assert!((choi_floor(&ch) - 0.4 / d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_bound_examples() {
        let d = 2;
        let replace = KrausChannel::replace(&DensityOperator::maximally_mixed(d)).unwrap();
        let e = md_scalar_bound(&replace, 64, 2, 1).unwrap();
        assert!((e.trace_lower_bound - 1.0).abs() < 1e-9);
        assert_eq!(e.method, MdMethod::Analytic);

        let u = KrausChannel::haar_unitary(d, &mut rng::seeded(4)).unwrap();
        let e = md_scalar_bound(&u, 64, 2, 1).unwrap();
        assert!(e.trace_lower_bound.abs() < 1e-9);

        for p in [0.2, 0.5, 0.8] {
            let ch = KrausChannel::depolarizing(2, p).unwrap();
            let e = md_scalar_bound(&ch, 128, 3, 2).unwrap();
            assert_eq!(e.method, MdMethod::ScalarSampled);
            assert!((e.trace_lower_bound - p).abs() < 1e-3);
        }
    }

    #[test]
    fn certified_depolarizing_window() {
        let ch = KrausChannel::depolarizing(2, 0.5).unwrap();
        let e = md_certified_bound(&ch, 1e-2).unwrap();
        assert!(e.trace_lower_bound >= 0.46 && e.trace_lower_bound <= 0.5);
        assert_eq!(e.method, MdMethod::Analytic);
    }

    #[test]
    fn certified_unitary_and_replace() {
        let u = KrausChannel::haar_unitary(3, &mut rng::seeded(9)).unwrap();
        assert_eq!(md_certified_bound(&u, 1e-2).unwrap().trace_lower_bound, 0.0);

        let sigma = DensityOperator::diagonal(&[0.5, 0.3, 0.2]).unwrap();
        let ch = KrausChannel::replace(&sigma).unwrap();
        let eps = 1e-2;
        let e = md_certified_bound(&ch, eps).unwrap();
        assert!(e.trace_lower_bound >= 3.0 * (0.2 - 2.0 * eps));
        // constant image: κ = σ itself
        assert!((e.trace_lower_bound - 1.0).abs() < 1e-9);
        assert_eq!(e.method, MdMethod::Analytic);
        let s = md_scalar_bound(&ch, 16, 1, 0).unwrap();
        assert!((s.trace_lower_bound - 1.0).abs() < 1e-9);
    }

    #[test]
    fn certified_bound_below_sampled_minimum() {
        for seed in 0..6 {
            let d = 2 + (seed as usize % 2);
            let base = random_channel(d, seed);
            let ch = base.mix(&KrausChannel::depolarizing(d, 1.0).unwrap(), 0.6).unwrap();
            let cert = md_certified_bound(&ch, 5e-3).unwrap();
            let sampled = md_scalar_bound(&ch, 400, 4, seed + 100).unwrap();
            assert!(cert.trace_lower_bound <= sampled.trace_upper_estimate + 1e-12);
            assert!(cert.trace_lower_bound > 0.0);
        }
    }

    #[test]
    fn certified_d2_reaches_target_gap() {
        let base = random_channel(2, 11);
        let ch = base.mix(&KrausChannel::depolarizing(2, 1.0).unwrap(), 0.5).unwrap();
        let eps = 5e-3;
        let e = md_certified_bound_with(
            &ch,
            &NetConfig {
                epsilon: eps,
                max_evaluations: 200_000,
            },
        )
        .unwrap();
        assert!(e.slack <= 2.0 * 2.0 * eps + 1e-12, "slack {}", e.slack);
    }

    #[test]
    fn angle_boxes_are_sound() {
        // the radius bound dominates actual distances from the center
        let mut r = rng::seeded(3);
        use rand::Rng;
        for d in 2..=4 {
            let m = 2 * d - 2;
            for _ in 0..200 {
                let lo: Vec<f64> = (0..m).map(|_| r.random_range(0.0..1.5)).collect();
                let hi: Vec<f64> = lo.iter().map(|a| a + r.random_range(0.0..0.3)).collect();
                let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
                let p: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| r.random_range(*a..=*b)).collect();
                let dist = (angles_to_state(&c, d) - angles_to_state(&p, d)).norm();
                assert!(dist <= box_radius(&lo, &hi) + 1e-12);
            }
        }
    }

    #[test]
    fn angles_give_unit_vectors() {
        let s = angles_to_state(&[0.3, 1.2, 2.0, 4.0], 3);
        assert!((s.norm() - 1.0).abs() < 1e-14);
        assert!(s[0].im == 0.0 && s[0].re >= 0.0);
    }

    #[test]
    fn certified_rejects_bad_inputs() {
        let ch = KrausChannel::depolarizing(5, 0.5).unwrap();
        assert!(matches!(md_certified_bound(&ch, 1e-2), Err(Error::SizeGuard(_))));
        let ch = KrausChannel::depolarizing(2, 0.5).unwrap();
        assert!(md_certified_bound(&ch, 0.0).is_err());
        assert!(md_certified_bound(&ch, 0.5).is_err());
        let non_tp = KrausChannel::new(vec![opalg::identity(2) * C64::new(2.0, 0.0)], TpCheck::Off).unwrap();
        assert!(md_certified_bound(&non_tp, 1e-2).is_err());
    }

    #[test]
    fn contraction_coefficient_examples() {
        let mk = |t| MdEstimate {
            trace_lower_bound: t,
            witness: None,
            method: MdMethod::Analytic,
            sample_count: 0,
            net_resolution: None,
            slack: 0.0,
            trace_upper_estimate: t,
        };
        assert_eq!(md_contraction_coefficient(&mk(1.0)), 0.0);
        assert_eq!(md_contraction_coefficient(&mk(0.0)), 1.0);
        let ch = KrausChannel::depolarizing(2, 0.3).unwrap();
        let e = md_certified_bound(&ch, 1e-2).unwrap();
        assert!((e.contraction_coefficient() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn dobrushin_examples() {
        let equal = StochasticMatrix::new(vec![vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        assert_eq!(classical_dobrushin(&equal), 0.0);
        assert_eq!(classical_dobrushin(&StochasticMatrix::identity(2)), 1.0);
        for k in 0..10 {
            assert!(classical_dobrushin(&exp1_matrix(k)) < 1e-15);
        }
    }

    #[test]
    fn exp1_entries() {
        assert_eq!(exp1_matrix(0).rows()[0], vec![1.0, 0.0]);
        assert_eq!(exp1_matrix(1).rows()[0], vec![0.0, 1.0]);
        assert_eq!(exp1_matrix(4).rows()[1], vec![0.25, 0.75]);
        let m = exp1_matrix(3);
        let r = &m.rows()[0];
        assert!((r[0] - 2.0 / 3.0).abs() < 1e-15 && (r[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stochastic_validation() {
        assert!(StochasticMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.4]]).is_err());
        assert!(StochasticMatrix::new(vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(StochasticMatrix::new(vec![vec![1.0], vec![1.0]]).is_err());
        assert!(ProbabilityVector::new(vec![0.2, 0.8]).is_ok());
    }

    #[test]
    fn embedding_intertwines() {
        let pi = StochasticMatrix::new(vec![vec![0.1, 0.6, 0.3], vec![0.5, 0.5, 0.0], vec![0.0, 0.2, 0.8]]).unwrap();
        let ch = embed_classical(&pi).unwrap();
        assert!(ch.is_trace_preserving());
        let mu = ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let out = ch.apply(&DensityOperator::diagonal(mu.weights()).unwrap()).unwrap();
        let expect = mu.evolve(&pi).unwrap();
        for i in 0..3 {
            assert!((out.matrix()[(i, i)].re - expect.weights()[i]).abs() < 1e-15);
        }
        let id = embed_classical(&StochasticMatrix::identity(3)).unwrap();
        let rho = DensityOperator::diagonal(&[0.6, 0.3, 0.1]).unwrap();
        assert!((id.apply(&rho).unwrap().matrix() - rho.matrix()).norm() < 1e-15);
    }

    #[test]
    fn embedded_exp1_forward_products() {
        let mu = ProbabilityVector::new(vec![0.35, 0.65]).unwrap();
        let mut classical = mu.clone();
        let mut rho = DensityOperator::diagonal(mu.weights()).unwrap();
        for k in 0..12 {
            let pi = exp1_matrix(k);
            classical = classical.evolve(&pi).unwrap();
            rho = embed_classical(&pi).unwrap().apply(&rho).unwrap();
            for i in 0..2 {
                assert!((rho.matrix()[(i, i)].re - classical.weights()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn md_inequality_on_random_triples() {
        let mut r = rng::seeded(21);
        for t in 0..40 {
            let d = 2 + t % 3;
            let ch = KrausChannel::haar(d, d, &mut r)
                .unwrap()
                .mix(&KrausChannel::depolarizing(d, 1.0).unwrap(), 0.5)
                .unwrap();
            let est = md_certified_bound_with(
                &ch,
                &NetConfig {
                    epsilon: 1e-2,
                    max_evaluations: 2000,
                },
            )
            .unwrap();
            let rho = DensityOperator::random(d, d, &mut r);
            let sigma = DensityOperator::random(d, 1, &mut r);
            let lhs = opalg::tv_norm(&(ch.apply(&rho).unwrap().matrix() - ch.apply(&sigma).unwrap().matrix())).unwrap();
            let rhs = opalg::tv_norm(&(rho.matrix() - sigma.matrix())).unwrap();
            assert!(lhs <= est.contraction_coefficient() * rhs + 1e-9);
        }
    }
}
