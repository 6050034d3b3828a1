//! Periodic-boundary matrix product states with site-dependent tensors.
//!
//! Sites are numbered from 1. The state on `n` sites has amplitudes
//! `Ψ(i_1..i_n) = Tr(A^{[1]}_{i_1} ⋯ A^{[n]}_{i_n})`, with `i_1` the most
//! significant digit of the flat index. After gauge fixing
//! `Σ_i A_i A_i* = I` at every site, so the site map
//! `Φ_k(M) = Σ_i A_i* M A_i` is a channel with Kraus operators `A_i*`.
//!
//! Superoperators follow the column-stacking convention of
//! [`crate::channel`]: `M -> B M C` is `C^T ⊗ B`. With `S_k` the matrix of
//! `Φ_k` and `X̂` the window map of an observable on sites `a..=b`,
//!
//! `<Ψ|X|Ψ> = Tr(S_n ⋯ S_{b+1} X̂ S_{a-1} ⋯ S_1)`, `<Ψ|Ψ> = Tr(S_n ⋯ S_1)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{KrausChannel, SuperOperatorMatrix, TpCheck};
use crate::error::{Error, Result};
use crate::opalg::{self, ComplexMatrix, DensityOperator, C64};
use crate::process::MdEstimator;
use crate::rng;

pub const GAUGE_TOL: f64 = 1e-9;
pub const MIN_GAUGE_EIGENVALUE: f64 = 1e-10;
/// Largest number of amplitudes enumerated by brute force.
pub const MAX_BRUTEFORCE_AMPLITUDES: usize = 1 << 20;
/// Largest local Hilbert-space dimension `m^L` of an observable window.
pub const MAX_WINDOW_STATES: usize = 256;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bruteforce,
    Transfer,
}

/// Gauged tensor train. `sites[k-1][i]` is `A^{[k]}_i`.
#[derive(Clone, Debug)]
pub struct MpsTensorTrain {
    bond_dim: usize,
    phys_dim: usize,
    sites: Vec<Vec<ComplexMatrix>>,
    gauge_residuals: Vec<f64>,
}

fn gauge_residual(tensors: &[ComplexMatrix]) -> f64 {
    let d = tensors[0].nrows();
    let mut s = ComplexMatrix::zeros(d, d);
    for a in tensors {
        s += a * a.adjoint();
    }
    (s - opalg::identity(d)).norm()
}

fn check_shapes(sites: &[Vec<ComplexMatrix>]) -> Result<(usize, usize)> {
    let first = sites
        .first()
        .and_then(|s| s.first())
        .ok_or_else(|| Error::InvalidParameter("tensor train needs at least one site with one tensor".into()))?;
    let d = opalg::check_square(first)?;
    let m = sites[0].len();
    for site in sites {
        if site.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: site.len() });
        }
        for a in site {
            if opalg::check_square(a)? != d {
                return Err(Error::DimensionMismatch { expected: d, got: a.nrows() });
            }
            if a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::NonFinite);
            }
        }
    }
    Ok((d, m))
}

/// Replaces `A_i` by `S^{-1/2} A_i` with `S = Σ_i A_i A_i*` at every site.
pub fn gauge_fix(raw: Vec<Vec<ComplexMatrix>>) -> Result<MpsTensorTrain> {
    let (d, m) = check_shapes(&raw)?;
    let mut sites = Vec::with_capacity(raw.len());
    let mut residuals = Vec::with_capacity(raw.len());
    for (k, site) in raw.into_iter().enumerate() {
        let mut s = ComplexMatrix::zeros(d, d);
        for a in &site {
            s += a * a.adjoint();
        }
        let (values, vectors) = opalg::hermitian_eigen(&s);
        if values[0] <= MIN_GAUGE_EIGENVALUE {
            return Err(Error::SingularGauge {
                site: k + 1,
                min_eig: values[0],
            });
        }
        let mut inv_sqrt = ComplexMatrix::zeros(d, d);
        for (j, &v) in values.iter().enumerate() {
            let col = vectors.column(j);
            inv_sqrt += (col * col.adjoint()) * C64::new(1.0 / v.sqrt(), 0.0);
        }
        let fixed: Vec<ComplexMatrix> = site.iter().map(|a| &inv_sqrt * a).collect();
        residuals.push(gauge_residual(&fixed));
        sites.push(fixed);
    }
    Ok(MpsTensorTrain {
        bond_dim: d,
        phys_dim: m,
        sites,
        gauge_residuals: residuals,
    })
}

impl MpsTensorTrain {
    /// Accepts tensors that already satisfy the gauge condition.
    pub fn from_gauged(sites: Vec<Vec<ComplexMatrix>>, check: TpCheck) -> Result<Self> {
        let (d, m) = check_shapes(&sites)?;
        let residuals: Vec<f64> = sites.iter().map(|s| gauge_residual(s)).collect();
        if let Some((k, r)) = residuals.iter().enumerate().find(|(_, r)| **r > GAUGE_TOL) {
            match check {
                TpCheck::Strict => {
                    return Err(Error::InvalidParameter(format!(
                        "site {} violates the gauge condition by {r:.3e}",
                        k + 1
                    )))
                }
                TpCheck::Warn => log::warn!("site {} violates the gauge condition by {r:.3e}", k + 1),
                TpCheck::Off => {}
            }
        }
        Ok(MpsTensorTrain {
            bond_dim: d,
            phys_dim: m,
            sites,
            gauge_residuals: residuals,
        })
    }

    /// Seeded Gaussian tensors, gauge fixed, then mixed with the completely
    /// depolarizing site map at weight `beta` by appending the `d²` tensors
    /// `√(β/d) |k><l|`. With `beta > 0` the physical dimension becomes
    /// `m + d²`.
    pub fn random(bond_dim: usize, phys_dim: usize, n: usize, seed: u64, beta: f64) -> Result<Self> {
        if bond_dim == 0 || phys_dim == 0 || n == 0 {
            return Err(Error::InvalidParameter("random train needs positive bond_dim, phys_dim and n".into()));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1), got {beta}")));
        }
        let d = bond_dim;
        let raw: Vec<Vec<ComplexMatrix>> = (1..=n)
            .map(|k| {
                let mut r = rng::stream(seed, k as u64);
                (0..phys_dim)
                    .map(|_| ComplexMatrix::from_fn(d, d, |_, _| rng::complex_gaussian(&mut r)))
                    .collect()
            })
            .collect();
        let train = gauge_fix(raw)?;
        if beta == 0.0 {
            return Ok(train);
        }
        let keep = C64::new((1.0 - beta).sqrt(), 0.0);
        let noise = C64::new((beta / d as f64).sqrt(), 0.0);
        let sites = train
            .sites
            .into_iter()
            .map(|site| {
                let mut out: Vec<ComplexMatrix> = site.into_iter().map(|a| a * keep).collect();
                for k in 0..d {
                    for l in 0..d {
                        out.push(opalg::matrix_unit(d, k, l) * noise);
                    }
                }
                out
            })
            .collect();
        Self::from_gauged(sites, TpCheck::Strict)
    }

    /// Random tensors drawn with a caller-supplied generator, gauge fixed.
    pub fn random_with<R: Rng + ?Sized>(bond_dim: usize, phys_dim: usize, n: usize, rng: &mut R) -> Result<Self> {
        let raw = (0..n)
            .map(|_| {
                (0..phys_dim)
                    .map(|_| ComplexMatrix::from_fn(bond_dim, bond_dim, |_, _| rng::complex_gaussian(rng)))
                    .collect()
            })
            .collect();
        gauge_fix(raw)
    }

    pub fn bond_dim(&self) -> usize {
        self.bond_dim
    }

    pub fn phys_dim(&self) -> usize {
        self.phys_dim
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn gauge_residuals(&self) -> &[f64] {
        &self.gauge_residuals
    }

    /// Tensors `A^{[k]}_i`, `k` from 1.
    pub fn site(&self, k: usize) -> &[ComplexMatrix] {
        &self.sites[k - 1]
    }

    /// First `n` sites.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        self.check_length(n)?;
        Ok(MpsTensorTrain {
            bond_dim: self.bond_dim,
            phys_dim: self.phys_dim,
            sites: self.sites[..n].to_vec(),
            gauge_residuals: self.gauge_residuals[..n].to_vec(),
        })
    }

    fn check_length(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidParameter(format!(
                "requested {n} sites from a train of length {}",
                self.len()
            )));
        }
        Ok(())
    }

    fn site_superop(&self, k: usize) -> SuperOperatorMatrix {
        let kraus: Vec<ComplexMatrix> = self.site(k).iter().map(|a| a.adjoint()).collect();
        SuperOperatorMatrix::from_kraus(self.bond_dim, &kraus)
    }

    /// `S_hi ⋯ S_lo`, the map `Φ_hi ∘ ⋯ ∘ Φ_lo`; identity when `lo > hi`.
    fn composed(&self, lo: usize, hi: usize) -> SuperOperatorMatrix {
        let mut acc = SuperOperatorMatrix::identity(self.bond_dim);
        for k in lo..=hi {
            acc = self.site_superop(k).compose(&acc);
        }
        acc
    }
}

/// `M -> Σ_i A_i* M A_i` at site `k`.
pub fn site_channel(train: &MpsTensorTrain, k: usize, check: TpCheck) -> Result<KrausChannel> {
    train.check_length(k)?;
    KrausChannel::new(train.site(k).iter().map(|a| a.adjoint()).collect(), check)
}

fn flat_len(m: usize, n: usize, limit: usize) -> Result<usize> {
    let mut total = 1usize;
    for _ in 0..n {
        total = total
            .checked_mul(m)
            .filter(|t| *t <= limit)
            .ok_or_else(|| Error::SizeGuard(format!("{m}^{n} exceeds the limit {limit}")))?;
    }
    Ok(total)
}

fn digits(mut idx: usize, m: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for k in (0..n).rev() {
        out[k] = idx % m;
        idx /= m;
    }
    out
}

/// `Tr(A^{[1]}_{i_1} ⋯ A^{[n]}_{i_n})` for every multi-index.
pub fn amplitudes_bruteforce(train: &MpsTensorTrain, n: usize) -> Result<Vec<C64>> {
    train.check_length(n)?;
    let m = train.phys_dim;
    let total = flat_len(m, n, MAX_BRUTEFORCE_AMPLITUDES)?;
    Ok((0..total)
        .into_par_iter()
        .map(|idx| {
            let ix = digits(idx, m, n);
            let mut p = train.site(1)[ix[0]].clone();
            for (k, &i) in ix.iter().enumerate().skip(1) {
                p = &p * &train.site(k + 1)[i];
            }
            opalg::trace(&p)
        })
        .collect())
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// `<Ψ_n|Ψ_n>`.
pub fn norm_squared(train: &MpsTensorTrain, n: usize, method: Method) -> Result<f64> {
    match method {
        Method::Bruteforce => {
            let amps = amplitudes_bruteforce(train, n)?;
            Ok(kahan_sum(amps.iter().map(|z| z.norm_sqr())))
        }
        Method::Transfer => {
            train.check_length(n)?;
            Ok(train.composed(1, n).trace().re)
        }
    }
}

/// Observable on the sites `a..=b` in the product basis `|i_a ⋯ i_b>`.
#[derive(Clone, Debug)]
pub struct LocalObservable {
    window: (usize, usize),
    phys_dim: usize,
    matrix: ComplexMatrix,
}

impl LocalObservable {
    pub fn new(window: (usize, usize), phys_dim: usize, matrix: ComplexMatrix) -> Result<Self> {
        let (a, b) = window;
        if a == 0 || b < a {
            return Err(Error::InvalidParameter(format!("invalid window [{a}, {b}]; sites start at 1")));
        }
        let states = flat_len(phys_dim, b - a + 1, MAX_WINDOW_STATES)?;
        if matrix.nrows() != states || matrix.ncols() != states {
            return Err(Error::DimensionMismatch {
                expected: states,
                got: matrix.nrows(),
            });
        }
        Ok(LocalObservable {
            window,
            phys_dim,
            matrix,
        })
    }

    pub fn identity(window: (usize, usize), phys_dim: usize) -> Result<Self> {
        let states = flat_len(phys_dim, window.1.saturating_sub(window.0) + 1, MAX_WINDOW_STATES)?;
        Self::new(window, phys_dim, opalg::identity(states))
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn window_len(&self) -> usize {
        self.window.1 - self.window.0 + 1
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        opalg::hermiticity_residual(&self.matrix) <= tol
    }
}

/// Map `M -> Σ_{ij} <i|X|j> A_i* M A_j` over window multi-indices.
#[derive(Clone, Debug)]
pub struct ObservableTransferMap {
    window: (usize, usize),
    map: SuperOperatorMatrix,
}

impl ObservableTransferMap {
    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn superoperator(&self) -> &SuperOperatorMatrix {
        &self.map
    }
}

fn check_observable(train: &MpsTensorTrain, x: &LocalObservable, n: usize) -> Result<()> {
    if x.phys_dim != train.phys_dim {
        return Err(Error::DimensionMismatch {
            expected: train.phys_dim,
            got: x.phys_dim,
        });
    }
    if x.window.1 > n {
        return Err(Error::InvalidParameter(format!(
            "observable window [{}, {}] exceeds {n} sites",
            x.window.0, x.window.1
        )));
    }
    train.check_length(n)
}

pub fn observable_transfer(train: &MpsTensorTrain, x: &LocalObservable) -> Result<ObservableTransferMap> {
    check_observable(train, x, train.len())?;
    let (a, b) = x.window;
    let m = train.phys_dim;
    let len = x.window_len();
    let states = flat_len(m, len, MAX_WINDOW_STATES)?;
    let products: Vec<ComplexMatrix> = (0..states)
        .map(|idx| {
            let ix = digits(idx, m, len);
            let mut p = train.site(a)[ix[0]].clone();
            for (off, &i) in ix.iter().enumerate().skip(1) {
                p = &p * &train.site(a + off)[i];
            }
            p
        })
        .collect();
    let d = train.bond_dim;
    let mut acc = ComplexMatrix::zeros(d * d, d * d);
    for (i, pi) in products.iter().enumerate() {
        let left = pi.adjoint();
        for (j, pj) in products.iter().enumerate() {
            let w = x.matrix[(i, j)];
            if w != ZERO {
                acc += pj.transpose().kronecker(&left) * w;
            }
        }
    }
    Ok(ObservableTransferMap {
        window: (a, b),
        map: SuperOperatorMatrix::from_matrix(d, acc)?,
    })
}

/// `φ_n(X) = <Ψ_n|X|Ψ_n> / <Ψ_n|Ψ_n>`.
pub fn expectation(train: &MpsTensorTrain, x: &LocalObservable, n: usize, method: Method) -> Result<C64> {
    check_observable(train, x, n)?;
    match method {
        Method::Bruteforce => expectation_bruteforce(train, x, n),
        Method::Transfer => {
            let xhat = observable_transfer(train, x)?;
            Ok(transfer_ratio(train, &xhat, n))
        }
    }
}

fn transfer_ratio(train: &MpsTensorTrain, xhat: &ObservableTransferMap, n: usize) -> C64 {
    let (a, b) = xhat.window;
    let anchored = xhat.map.compose(&train.composed(1, a - 1));
    let num = train.composed(b + 1, n).compose(&anchored).trace();
    let den = train.composed(1, n).trace();
    num / den
}

fn expectation_bruteforce(train: &MpsTensorTrain, x: &LocalObservable, n: usize) -> Result<C64> {
    let amps = amplitudes_bruteforce(train, n)?;
    let m = train.phys_dim;
    let (a, b) = x.window;
    let len = x.window_len();
    let w = m.pow(len as u32);
    let right = m.pow((n - b) as u32);
    let left = m.pow((a - 1) as u32);
    let terms: Vec<C64> = (0..left * right)
        .into_par_iter()
        .map(|outer| {
            let (l, r) = (outer / right, outer % right);
            let at = |win: usize| amps[(l * w + win) * right + r];
            let mut s = ZERO;
            for i in 0..w {
                let ci = at(i).conj();
                if ci == ZERO {
                    continue;
                }
                for j in 0..w {
                    s += ci * x.matrix[(i, j)] * at(j);
                }
            }
            s
        })
        .collect();
    let re = kahan_sum(terms.iter().map(|z| z.re));
    let im = kahan_sum(terms.iter().map(|z| z.im));
    let norm = kahan_sum(amps.iter().map(|z| z.norm_sqr()));
    Ok(C64::new(re, im) / norm)
}

/// `φ_n(X)` for `n = b..=n_max` by transfer contraction.
pub fn phi_sequence(train: &MpsTensorTrain, x: &LocalObservable, n_max: usize) -> Result<Vec<(usize, C64)>> {
    check_observable(train, x, n_max)?;
    let xhat = observable_transfer(train, x)?;
    let b = x.window.1;
    Ok((b..=n_max).map(|n| (n, transfer_ratio(train, &xhat, n))).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailDirection {
    /// `Φ_{b+q} ∘ ⋯ ∘ Φ_{b+1}`, the composition that appears in `φ_n`.
    #[default]
    Forward,
    /// `Φ_{b+1} ∘ ⋯ ∘ Φ_{b+q}`, whose images are nested in `q`.
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    /// Uniform contraction threshold `r`; `μ = 1 - r`.
    pub threshold_r: f64,
    pub estimator: MdEstimator,
    #[serde(default)]
    pub tail: TailDirection,
}

impl Default for LimitConfig {
    fn default() -> Self {
        LimitConfig {
            threshold_r: 0.25,
            estimator: MdEstimator::default(),
            tail: TailDirection::Forward,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LimitState {
    /// `Tr(X̂ ∘ Φ_{1,a-1} (ρ̂_∞))`.
    pub value: C64,
    /// `2 μ^{N(q)}` over the tail sites `b+1..=b+q`.
    pub error_bar: f64,
    /// Whether the last tail increment stayed within the previous error bar.
    pub converged: bool,
    /// Whether every tail site met the threshold `r`.
    pub certified: bool,
    pub rho: DensityOperator,
    pub tail_len: usize,
    /// `‖ρ̂(q) - ρ̂(q-1)‖_TV` for `q = 2..=tail_len`.
    pub increments: Vec<f64>,
    /// `2 μ^{N(q)}` for `q = 1..=tail_len`.
    pub error_bars: Vec<f64>,
}

/// Limit estimate using only the first `n` sites of the train.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitPoint {
    pub n: usize,
    pub value: C64,
    pub error_bar: f64,
    pub increment: Option<f64>,
    pub converged: bool,
    pub certified: bool,
}

struct TailSweep {
    points: Vec<LimitPoint>,
    rho: ComplexMatrix,
}

fn sweep_tail(train: &MpsTensorTrain, x: &LocalObservable, config: &LimitConfig) -> Result<TailSweep> {
    check_observable(train, x, train.len())?;
    let r = config.threshold_r;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold r must lie in (0, 1), got {r}")));
    }
    let (a, b) = x.window;
    if train.len() == b {
        return Err(Error::InvalidParameter("limit estimate needs at least one site after the window".into()));
    }
    let d = train.bond_dim;
    let mu = 1.0 - r;
    let xhat = observable_transfer(train, x)?;
    let anchored = xhat.map.compose(&train.composed(1, a - 1));
    let seed = ComplexMatrix::identity(d, d) / C64::new(d as f64, 0.0);
    let mut rho = seed.clone();
    let mut backward = SuperOperatorMatrix::identity(d);
    let mut big_n = 0usize;
    let mut certified = true;
    let mut prev_bar = f64::INFINITY;
    let mut points = Vec::with_capacity(train.len() - b);
    for k in b + 1..=train.len() {
        let ch = site_channel(train, k, TpCheck::Strict)?;
        if config.estimator.estimate(&ch)?.trace_lower_bound >= r {
            big_n += 1;
        } else {
            certified = false;
        }
        let next = match config.tail {
            TailDirection::Forward => ch.apply_matrix(&rho),
            TailDirection::Backward => {
                backward = backward.compose(&ch.to_superoperator());
                backward.apply(&seed)
            }
        };
        let increment = if k > b + 1 { Some(opalg::tv_norm(&(&next - &rho))?) } else { None };
        rho = next;
        let error_bar = 2.0 * mu.powi(big_n as i32);
        points.push(LimitPoint {
            n: k,
            value: opalg::trace(&anchored.apply(&rho)),
            error_bar,
            increment,
            converged: increment.is_some_and(|inc| inc <= prev_bar + 1e-15),
            certified,
        });
        prev_bar = error_bar;
    }
    if !certified {
        log::warn!("tail sites fall below the contraction threshold {r}; limit estimate is heuristic");
    }
    Ok(TailSweep { points, rho })
}

/// Estimates `φ_∞(X)` from every tail `b+1..=n`, `n` up to the train length.
pub fn limit_sequence(train: &MpsTensorTrain, x: &LocalObservable, config: &LimitConfig) -> Result<Vec<LimitPoint>> {
    Ok(sweep_tail(train, x, config)?.points)
}

/// Estimates `φ_∞(X)` from the tail sites after the window of `X`.
pub fn limit_state(train: &MpsTensorTrain, x: &LocalObservable, config: &LimitConfig) -> Result<LimitState> {
    let sweep = sweep_tail(train, x, config)?;
    let last = *sweep.points.last().expect("tail is nonempty");
    let rho = DensityOperator::from_hermitian_with_tol(opalg::HermitianOperator::symmetrize(sweep.rho)?, 1e-9, 1e-9)?;
    Ok(LimitState {
        value: last.value,
        error_bar: last.error_bar,
        converged: last.converged,
        certified: last.certified,
        rho,
        tail_len: sweep.points.len(),
        increments: sweep.points.iter().filter_map(|p| p.increment).collect(),
        error_bars: sweep.points.iter().map(|p| p.error_bar).collect(),
    })
}
