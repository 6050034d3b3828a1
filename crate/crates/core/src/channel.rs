//! Quantum channels in Kraus form together with their superoperator and Choi
//! representations.
//!
//! Vectorization convention: `vec` stacks columns, so `vec(|k><l|)` has its
//! single 1 at index `l*d + k` and `vec(A X B) = (B^T ⊗ A) vec(X)`. The channel
//! `X -> Σ K X K*` is therefore represented by `Σ conj(K) ⊗ K`. Every
//! superoperator in this crate uses this convention.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opalg::{self, check_square, hermitian_eigen, ComplexMatrix, DensityOperator, HermitianOperator, C64};
use crate::rng;

/// Frobenius tolerance on `Σ K*K - I` for trace preservation.
pub const TP_TOL: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// How strictly a constructor enforces trace preservation. Partial MPS
/// products and dual maps are completely positive but not trace preserving,
/// so they are built with `Off`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TpCheck {
    #[default]
    Strict,
    Warn,
    Off,
}

pub fn vectorize(x: &ComplexMatrix) -> DVector<C64> {
    DVector::from_column_slice(x.as_slice())
}

pub fn unvectorize(v: &DVector<C64>, d: usize) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(d, d, v.as_slice())
}

/// Clock-and-shift operators `X^a Z^b`, an orthogonal unitary basis of `M_d`.
pub fn weyl_operators(d: usize) -> Vec<ComplexMatrix> {
    let omega = |k: usize| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / d as f64);
    let mut ops = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            // (X^a Z^b)|j> = omega^{bj} |j + a>
            let mut w = ComplexMatrix::zeros(d, d);
            for j in 0..d {
                w[((j + a) % d, j)] = omega((b * j) % d);
            }
            ops.push(w);
        }
    }
    ops
}

fn completeness_residual(dim: usize, kraus: &[ComplexMatrix]) -> f64 {
    let mut s = ComplexMatrix::zeros(dim, dim);
    for k in kraus {
        s += k.adjoint() * k;
    }
    (s - opalg::identity(dim)).norm()
}

/// Completely positive map `X -> Σ_i K_i X K_i*`.
#[derive(Clone, Debug)]
pub struct KrausChannel {
    dim: usize,
    kraus: Vec<ComplexMatrix>,
    tp_residual: f64,
}

impl KrausChannel {
    pub fn new(kraus: Vec<ComplexMatrix>, check: TpCheck) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidChannel("empty Kraus list".into()))?;
        let dim = check_square(first)?;
        for k in &kraus {
            let d = check_square(k)?;
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: d });
            }
            if k.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::NonFinite);
            }
        }
        let tp_residual = completeness_residual(dim, &kraus);
        if tp_residual > TP_TOL {
            match check {
                TpCheck::Strict => return Err(Error::NotTracePreserving { residual: tp_residual }),
                TpCheck::Warn => log::warn!("Kraus operators violate completeness by {tp_residual:.3e}"),
                TpCheck::Off => {}
            }
        }
        Ok(KrausChannel { dim, kraus, tp_residual })
    }

    pub fn identity(d: usize) -> Self {
        KrausChannel {
            dim: d,
            kraus: vec![opalg::identity(d)],
            tp_residual: 0.0,
        }
    }

    pub fn unitary(u: ComplexMatrix) -> Result<Self> {
        let d = check_square(&u)?;
        let defect = (u.adjoint() * &u - opalg::identity(d)).norm();
        if defect > TP_TOL {
            return Err(Error::InvalidChannel(format!("matrix is not unitary (defect {defect:.3e})")));
        }
        Self::new(vec![u], TpCheck::Strict)
    }

    /// `rho -> (1-p) rho + p Tr(rho) I/d`, realized with Weyl operators.
    pub fn depolarizing(d: usize, p: f64) -> Result<Self> {
        if d == 0 || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("depolarizing needs d >= 1 and p in [0,1], got d={d}, p={p}")));
        }
        let dd = (d * d) as f64;
        let mut kraus = Vec::with_capacity(d * d);
        for (idx, w) in weyl_operators(d).into_iter().enumerate() {
            let weight = if idx == 0 { 1.0 - p + p / dd } else { p / dd };
            if weight > 0.0 {
                kraus.push(w * C64::new(weight.sqrt(), 0.0));
            }
        }
        Self::new(kraus, TpCheck::Strict)
    }

    /// `rho -> Tr(rho) sigma`.
    pub fn replace(sigma: &DensityOperator) -> Result<Self> {
        let d = sigma.dim();
        let (values, vectors) = hermitian_eigen(sigma.matrix());
        let mut kraus = Vec::new();
        for (j, &s) in values.iter().enumerate() {
            if s <= 1e-15 {
                continue;
            }
            let v = vectors.column(j).into_owned() * C64::new(s.sqrt(), 0.0);
            for i in 0..d {
                let mut k = ComplexMatrix::zeros(d, d);
                k.set_column(i, &v);
                kraus.push(k);
            }
        }
        Self::new(kraus, TpCheck::Strict)
    }

    /// Haar-random channel with `k` Kraus operators: the blocks of a random
    /// `(d k) x d` isometry obtained by QR of a complex Gaussian matrix.
    pub fn haar<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::InvalidParameter("haar channel needs d >= 1 and k >= 1".into()));
        }
        let g = ComplexMatrix::from_fn(d * k, d, |_, _| rng::complex_gaussian(rng));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        // fix the phase freedom of QR so the isometry is Haar distributed
        for j in 0..d {
            let rjj = r[(j, j)];
            let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
            let mut col = q.column_mut(j);
            col *= phase;
        }
        let kraus = (0..k).map(|i| q.rows(i * d, d).into_owned()).collect();
        Self::new(kraus, TpCheck::Strict)
    }

    pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        Self::haar(d, 1, rng)
    }

    /// Convex combination `(1-w) self + w other`.
    pub fn mix(&self, other: &KrausChannel, w: f64) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidParameter(format!("mixing weight {w} outside [0,1]")));
        }
        let a = C64::new((1.0 - w).sqrt(), 0.0);
        let b = C64::new(w.sqrt(), 0.0);
        let kraus = self
            .kraus
            .iter()
            .map(|k| k * a)
            .chain(other.kraus.iter().map(|k| k * b))
            .collect();
        Self::new(kraus, TpCheck::Off)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn tp_residual(&self) -> f64 {
        self.tp_residual
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.tp_residual <= TP_TOL
    }

    /// Action on an arbitrary operator.
    pub fn apply_matrix(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for k in &self.kraus {
            out += k * x * k.adjoint();
        }
        out
    }

    pub fn apply(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: rho.dim() });
        }
        let out = HermitianOperator::symmetrize(self.apply_matrix(rho.matrix()))?;
        DensityOperator::from_hermitian_with_tol(out, 1e-9, 1e-9)
    }

    /// Hilbert-Schmidt dual `X -> Σ K* X K`, itself in Kraus form with
    /// operators `K*`. Unital exactly when `self` is trace preserving.
    pub fn dual(&self) -> KrausChannel {
        let kraus: Vec<_> = self.kraus.iter().map(|k| k.adjoint()).collect();
        let tp_residual = completeness_residual(self.dim, &kraus);
        KrausChannel { dim: self.dim, kraus, tp_residual }
    }

    /// `outer ∘ inner` with Kraus operators `K_i L_j`. When the product list
    /// would exceed `d^4` operators the composition goes through the
    /// superoperator and is re-expanded into at most `d^2` Kraus operators.
    pub fn compose(outer: &KrausChannel, inner: &KrausChannel) -> Result<KrausChannel> {
        if outer.dim != inner.dim {
            return Err(Error::DimensionMismatch { expected: outer.dim, got: inner.dim });
        }
        let d = outer.dim;
        let count = outer.kraus.len() * inner.kraus.len();
        if count > d.pow(4) {
            let s = outer.to_superoperator().compose(&inner.to_superoperator());
            return KrausChannel::from_superoperator(&s);
        }
        let mut kraus = Vec::with_capacity(count);
        for k in &outer.kraus {
            for l in &inner.kraus {
                kraus.push(k * l);
            }
        }
        let tp_residual = completeness_residual(d, &kraus);
        Ok(KrausChannel { dim: d, kraus, tp_residual })
    }

    /// Minimal Kraus form read off the Choi eigendecomposition.
    pub fn reduce(&self) -> Result<KrausChannel> {
        KrausChannel::from_choi_matrix(self.dim, &self.choi().matrix)
    }

    pub fn from_superoperator(s: &SuperOperatorMatrix) -> Result<KrausChannel> {
        let choi = s.choi()?;
        KrausChannel::from_choi_matrix(s.dim, &choi.matrix)
    }

    fn from_choi_matrix(d: usize, choi: &HermitianOperator) -> Result<KrausChannel> {
        let (values, vectors) = hermitian_eigen(choi.matrix());
        let top = values.last().copied().unwrap_or(0.0).max(0.0);
        if values[0] < -1e-9 * top.max(1.0) {
            return Err(Error::InvalidChannel(format!(
                "map is not completely positive (Choi eigenvalue {:.3e})",
                values[0]
            )));
        }
        let cutoff = 1e-14 * top.max(1e-300);
        let mut kraus = Vec::new();
        for (j, &l) in values.iter().enumerate() {
            if l <= cutoff {
                continue;
            }
            let v = vectors.column(j).into_owned() * C64::new(l.sqrt(), 0.0);
            kraus.push(unvectorize(&v, d));
        }
        if kraus.is_empty() {
            kraus.push(ComplexMatrix::zeros(d, d));
        }
        let tp_residual = completeness_residual(d, &kraus);
        Ok(KrausChannel { dim: d, kraus, tp_residual })
    }

    /// `Σ conj(K) ⊗ K`.
    pub fn to_superoperator(&self) -> SuperOperatorMatrix {
        SuperOperatorMatrix::from_kraus(self.dim, &self.kraus)
    }

    /// Unnormalized Choi matrix `Σ_{kl} |k><l| ⊗ Φ(|k><l|)`, equal to
    /// `Σ_i vec(K_i) vec(K_i)*` for Kraus operators `K_i`.
    pub fn choi(&self) -> ChoiMatrix {
        let n = self.dim * self.dim;
        let mut m = ComplexMatrix::zeros(n, n);
        for k in &self.kraus {
            let v = vectorize(k);
            m += &v * v.adjoint();
        }
        ChoiMatrix {
            dim: self.dim,
            matrix: HermitianOperator::symmetrize(m).expect("square finite"),
        }
    }

    /// Superoperator trace computed as `Σ_i |Tr K_i|^2`.
    pub fn superop_trace(&self) -> f64 {
        self.kraus.iter().map(|k| opalg::trace(k).norm_sqr()).sum()
    }

    /// Superoperator trace from its definition `Σ_{kl} <e_k| Φ(e_k e_l*) |e_l>`.
    pub fn superop_trace_by_basis(&self) -> C64 {
        let d = self.dim;
        let mut total = ZERO;
        for k in 0..d {
            for l in 0..d {
                total += self.apply_matrix(&opalg::matrix_unit(d, k, l))[(k, l)];
            }
        }
        total
    }
}

/// Matrix of a linear map on `M_d` acting on column-stacked operators.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperOperatorMatrix {
    dim: usize,
    matrix: ComplexMatrix,
}

impl SuperOperatorMatrix {
    pub fn identity(d: usize) -> Self {
        SuperOperatorMatrix {
            dim: d,
            matrix: opalg::identity(d * d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        SuperOperatorMatrix {
            dim: d,
            matrix: ComplexMatrix::zeros(d * d, d * d),
        }
    }

    pub fn from_matrix(d: usize, matrix: ComplexMatrix) -> Result<Self> {
        if matrix.nrows() != d * d || matrix.ncols() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: matrix.nrows(),
            });
        }
        Ok(SuperOperatorMatrix { dim: d, matrix })
    }

    pub fn from_kraus(d: usize, kraus: &[ComplexMatrix]) -> Self {
        let mut m = ComplexMatrix::zeros(d * d, d * d);
        for k in kraus {
            m += k.map(|z| z.conj()).kronecker(k);
        }
        SuperOperatorMatrix { dim: d, matrix: m }
    }

    /// Map `M -> B M C` in matrix form `C^T ⊗ B`.
    pub fn sandwich(b: &ComplexMatrix, c: &ComplexMatrix) -> Self {
        SuperOperatorMatrix {
            dim: b.nrows(),
            matrix: c.transpose().kronecker(b),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        unvectorize(&(&self.matrix * vectorize(x)), self.dim)
    }

    /// Action of the Hilbert-Schmidt adjoint map.
    pub fn apply_adjoint(&self, y: &ComplexMatrix) -> ComplexMatrix {
        unvectorize(&(self.matrix.adjoint() * vectorize(y)), self.dim)
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &SuperOperatorMatrix) -> SuperOperatorMatrix {
        SuperOperatorMatrix {
            dim: self.dim,
            matrix: &self.matrix * &inner.matrix,
        }
    }

    pub fn adjoint(&self) -> SuperOperatorMatrix {
        SuperOperatorMatrix {
            dim: self.dim,
            matrix: self.matrix.adjoint(),
        }
    }

    /// Superoperator trace; equals the matrix trace in this representation.
    pub fn trace(&self) -> C64 {
        opalg::trace(&self.matrix)
    }

    pub fn scale(&self, s: f64) -> SuperOperatorMatrix {
        SuperOperatorMatrix {
            dim: self.dim,
            matrix: &self.matrix * C64::new(s, 0.0),
        }
    }

    pub fn add(&self, other: &SuperOperatorMatrix) -> SuperOperatorMatrix {
        SuperOperatorMatrix {
            dim: self.dim,
            matrix: &self.matrix + &other.matrix,
        }
    }

    /// Frobenius norm of `Φ*(I) - I`; zero for trace-preserving maps.
    pub fn tp_residual(&self) -> f64 {
        let d = self.dim;
        (self.apply_adjoint(&opalg::identity(d)) - opalg::identity(d)).norm()
    }

    pub fn rank(&self, tol: f64) -> usize {
        self.matrix.clone().svd(false, false).rank(tol)
    }

    pub fn choi(&self) -> Result<ChoiMatrix> {
        let d = self.dim;
        // C[(k,a),(l,b)] = Φ(|k><l|)_{ab} = S[b d + a, l d + k]
        let m = ComplexMatrix::from_fn(d * d, d * d, |r, c| {
            let (k, a) = (r / d, r % d);
            let (l, b) = (c / d, c % d);
            self.matrix[(b * d + a, l * d + k)]
        });
        Ok(ChoiMatrix {
            dim: d,
            matrix: HermitianOperator::with_tolerance(m, 1e-8)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ChoiMatrix {
    dim: usize,
    matrix: HermitianOperator,
}

impl ChoiMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &HermitianOperator {
        &self.matrix
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.min_eigenvalue()
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// Partial trace over the output leg: `Σ_a C[(k,a),(l,a)] = Tr Φ(|k><l|)`.
    pub fn partial_trace_output(&self) -> ComplexMatrix {
        let d = self.dim;
        let c = self.matrix.matrix();
        ComplexMatrix::from_fn(d, d, |k, l| (0..d).map(|a| c[(k * d + a, l * d + a)]).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::{tv_norm, PureState};
    use proptest::prelude::*;

    fn max_abs(a: &ComplexMatrix) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_channel(d: usize, k: usize, seed: u64) -> KrausChannel {
        KrausChannel::haar(d, k, &mut rng::seeded(seed)).unwrap()
    }

    fn basis(d: usize) -> Vec<ComplexMatrix> {
        let mut out = Vec::new();
        for k in 0..d {
            for l in 0..d {
                out.push(opalg::matrix_unit(d, k, l));
            }
        }
        out
    }

    fn same_map(a: &KrausChannel, b: &KrausChannel, tol: f64) -> bool {
        basis(a.dim()).iter().all(|e| max_abs(&(a.apply_matrix(e) - b.apply_matrix(e))) < tol)
    }

    fn choi_by_definition(ch: &KrausChannel) -> ComplexMatrix {
        let d = ch.dim();
        let mut m = ComplexMatrix::zeros(d * d, d * d);
        for k in 0..d {
            for l in 0..d {
                m += opalg::matrix_unit(d, k, l).kronecker(&ch.apply_matrix(&opalg::matrix_unit(d, k, l)));
            }
        }
        m
    }

    #[test]
    fn apply_examples() {
        let sigma = DensityOperator::random(3, 2, &mut rng::seeded(3));
        let rho = DensityOperator::random(3, 3, &mut rng::seeded(4));
        let rep = KrausChannel::replace(&sigma).unwrap();
        assert!(max_abs(&(rep.apply(&rho).unwrap().matrix() - sigma.matrix())) < 1e-12);

        let u = random_channel(3, 1, 8);
        let umat = &u.kraus()[0];
        let expected = umat * rho.matrix() * umat.adjoint();
        assert!(max_abs(&(u.apply(&rho).unwrap().matrix() - expected)) < 1e-12);

        let dep = KrausChannel::depolarizing(2, 0.5).unwrap();
        let out = dep.apply(&DensityOperator::basis(2, 0)).unwrap();
        let expected = DensityOperator::diagonal(&[0.75, 0.25]).unwrap();
        assert!(max_abs(&(out.matrix() - expected.matrix())) < 1e-12);

        assert!(matches!(dep.apply(&rho), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_non_tp_in_strict_mode() {
        let k = opalg::identity(2) * C64::new(0.5, 0.0);
        assert!(matches!(
            KrausChannel::new(vec![k.clone()], TpCheck::Strict),
            Err(Error::NotTracePreserving { .. })
        ));
        assert!(KrausChannel::new(vec![k.clone()], TpCheck::Warn).is_ok());
        let ch = KrausChannel::new(vec![k], TpCheck::Off).unwrap();
        assert!(!ch.is_trace_preserving());
        assert!(KrausChannel::new(vec![], TpCheck::Off).is_err());
    }

    #[test]
    fn dual_examples() {
        let d = 3;
        let sigma = DensityOperator::random(d, 3, &mut rng::seeded(11));
        let x = ComplexMatrix::from_fn(d, d, |_, _| rng::complex_gaussian(&mut rng::seeded(12)));
        let x = &x + ComplexMatrix::from_fn(d, d, |i, j| C64::new((i + 2 * j) as f64, i as f64));
        let dual = KrausChannel::replace(&sigma).unwrap().dual();
        let expected = opalg::identity(d) * opalg::trace(&(sigma.matrix() * &x));
        assert!(max_abs(&(dual.apply_matrix(&x) - expected)) < 1e-12);

        let id = KrausChannel::identity(d).dual();
        assert!(max_abs(&(id.apply_matrix(&x) - &x)) < 1e-15);
    }

    #[test]
    fn compose_examples() {
        let ch = random_channel(2, 3, 21);
        let c = KrausChannel::compose(&KrausChannel::identity(2), &ch).unwrap();
        assert!(same_map(&c, &ch, 1e-12));

        let sigma = DensityOperator::random(2, 2, &mut rng::seeded(22));
        let rep = KrausChannel::replace(&sigma).unwrap();
        assert!(same_map(&KrausChannel::compose(&rep, &ch).unwrap(), &rep, 1e-12));

        for (p, q) in [(0.3, 0.5), (0.1, 0.9)] {
            let c = KrausChannel::compose(
                &KrausChannel::depolarizing(3, p).unwrap(),
                &KrausChannel::depolarizing(3, q).unwrap(),
            )
            .unwrap();
            let expected = KrausChannel::depolarizing(3, 1.0 - (1.0 - p) * (1.0 - q)).unwrap();
            assert!(same_map(&c, &expected, 1e-12));
        }
    }

    #[test]
    fn compose_switches_to_superoperator_past_d4() {
        // 9 * 9 = 81 > 2^4 Kraus products
        let a = KrausChannel::depolarizing(2, 0.3).unwrap();
        let b = KrausChannel::compose(&random_channel(2, 3, 5), &random_channel(2, 3, 6)).unwrap();
        assert_eq!(b.kraus().len(), 9);
        let c = KrausChannel::compose(&b, &KrausChannel::compose(&a, &b).unwrap()).unwrap();
        assert!(c.kraus().len() <= 4);
        let direct = b.to_superoperator().compose(&a.to_superoperator()).compose(&b.to_superoperator());
        assert!(max_abs(&(c.to_superoperator().matrix() - direct.matrix())) < 1e-10);
        assert!(c.is_trace_preserving());
    }

    #[test]
    fn superoperator_examples() {
        let s = KrausChannel::identity(3).to_superoperator();
        assert!(max_abs(&(s.matrix() - opalg::identity(9))) < 1e-15);

        let sigma = DensityOperator::random(3, 3, &mut rng::seeded(30));
        assert_eq!(KrausChannel::replace(&sigma).unwrap().to_superoperator().rank(1e-10), 1);

        let p = 0.4;
        let dep = KrausChannel::depolarizing(2, p).unwrap().to_superoperator();
        // the depolarizing superoperator (1-p) Id + p |vec I><vec I|/d is Hermitian
        assert!(opalg::hermiticity_residual(dep.matrix()) < 1e-14);
        let ev = opalg::hermitian_eigenvalues(dep.matrix());
        let expected = [1.0 - p, 1.0 - p, 1.0 - p, 1.0];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-10, "{ev:?}");
        }
    }

    #[test]
    fn superoperator_matches_apply_on_basis() {
        let ch = random_channel(3, 2, 40);
        let s = ch.to_superoperator();
        for e in basis(3) {
            assert!(max_abs(&(s.apply(&e) - ch.apply_matrix(&e))) < 1e-12);
        }
    }

    #[test]
    fn choi_examples() {
        let id = KrausChannel::identity(2).choi();
        assert!((id.matrix().trace() - 2.0).abs() < 1e-14);
        let ev = id.matrix().eigenvalues();
        assert!(ev[..3].iter().all(|l| l.abs() < 1e-12) && (ev[3] - 2.0).abs() < 1e-12);

        let dep = KrausChannel::depolarizing(3, 1.0).unwrap().choi();
        assert!(max_abs(&(dep.matrix().matrix() - opalg::identity(9) * C64::new(1.0 / 3.0, 0.0))) < 1e-12);
        assert!((dep.matrix().trace() - 3.0).abs() < 1e-12);

        let ch = random_channel(3, 4, 41);
        let choi = ch.choi();
        assert!(choi.is_psd(1e-9));
        assert!(max_abs(&(choi.partial_trace_output() - opalg::identity(3))) < 1e-10);
        assert!(max_abs(&(choi.matrix().matrix() - choi_by_definition(&ch))) < 1e-12);
        let via_superop = ch.to_superoperator().choi().unwrap();
        assert!(max_abs(&(via_superop.matrix().matrix() - choi.matrix().matrix())) < 1e-12);
    }

    #[test]
    fn superop_trace_examples() {
        assert!((KrausChannel::identity(2).superop_trace() - 4.0).abs() < 1e-15);
        let u = random_channel(3, 1, 50);
        let tr_u = opalg::trace(&u.kraus()[0]).norm_sqr();
        assert!((u.superop_trace() - tr_u).abs() < 1e-12);
        assert!((u.superop_trace_by_basis().re - tr_u).abs() < 1e-12);
        let dep = KrausChannel::depolarizing(2, 0.5).unwrap();
        assert!((dep.superop_trace() - 2.5).abs() < 1e-12);
        assert!((dep.superop_trace_by_basis().re - 2.5).abs() < 1e-12);
        assert!((dep.to_superoperator().trace().re - 2.5).abs() < 1e-12);
    }

    #[test]
    fn reduce_keeps_the_map() {
        let c = KrausChannel::compose(&random_channel(2, 4, 60), &random_channel(2, 4, 61)).unwrap();
        let r = c.reduce().unwrap();
        assert!(r.kraus().len() <= 4);
        assert!(same_map(&c, &r, 1e-10));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tp_iff_dual_unital(d in 1usize..4, k in 1usize..4, s in 0u64..1000, scale in 0.5f64..1.5) {
            let ch = random_channel(d, k, s);
            let scaled: Vec<_> = ch.kraus().iter().map(|m| m * C64::new(scale, 0.0)).collect();
            let ch2 = KrausChannel::new(scaled, TpCheck::Off).unwrap();
            let unital_defect = (ch2.dual().apply_matrix(&opalg::identity(d)) - opalg::identity(d)).norm();
            prop_assert_eq!(unital_defect <= 1e-9, ch2.is_trace_preserving());
            prop_assert!((unital_defect - ch2.tp_residual()).abs() < 1e-12);
        }

        #[test]
        fn hilbert_schmidt_duality(d in 1usize..4, k in 1usize..4, s in 0u64..1000) {
            let ch = random_channel(d, k, s);
            let mut r = rng::seeded(s + 77);
            let rho = DensityOperator::random(d, d, &mut r);
            let x = ComplexMatrix::from_fn(d, d, |_, _| rng::complex_gaussian(&mut r));
            let lhs = opalg::trace(&(x.adjoint() * ch.apply(&rho).unwrap().matrix()));
            let rhs = opalg::trace(&(ch.dual().apply_matrix(&x).adjoint() * rho.matrix()));
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn tv_contractive(d in 1usize..5, k in 1usize..4, s in 0u64..1000) {
            let ch = random_channel(d, k, s);
            let mut r = rng::seeded(s + 99);
            let rho = DensityOperator::from_pure(&PureState::random(d, &mut r));
            let sigma = DensityOperator::random(d, 2, &mut r);
            let before = tv_norm(&(rho.matrix() - sigma.matrix())).unwrap();
            let after = tv_norm(&(ch.apply(&rho).unwrap().matrix() - ch.apply(&sigma).unwrap().matrix())).unwrap();
            prop_assert!(after <= before + 1e-10);
        }

        #[test]
        fn superop_homomorphism(d in 1usize..4, s in 0u64..1000) {
            let a = random_channel(d, 2, s);
            let b = random_channel(d, 3, s + 1);
            let composed = KrausChannel::compose(&a, &b).unwrap().to_superoperator();
            let product = a.to_superoperator().compose(&b.to_superoperator());
            prop_assert!(max_abs(&(composed.matrix() - product.matrix())) < 1e-9);
            let rho = DensityOperator::random(d, d, &mut rng::seeded(s + 2));
            let lhs = KrausChannel::compose(&a, &b).unwrap().apply(&rho).unwrap();
            let rhs = a.apply(&b.apply(&rho).unwrap()).unwrap();
            prop_assert!(max_abs(&(lhs.matrix() - rhs.matrix())) < 1e-10);
        }

        #[test]
        fn superop_trace_two_paths(d in 1usize..5, k in 1usize..5, s in 0u64..1000) {
            let ch = random_channel(d, k, s);
            let by_kraus = ch.superop_trace();
            let by_basis = ch.superop_trace_by_basis();
            prop_assert!((by_kraus - by_basis.re).abs() < 1e-10 && by_basis.im.abs() < 1e-10);
            prop_assert!((ch.to_superoperator().trace().re - by_kraus).abs() < 1e-10);
        }
    }
}
