//! Operator algebra on `M_d(C)`: Hermitian and Jordan decompositions, the
//! total-variation norm, the Löwner order and pure-state sampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PURE_NORM_TOL: f64 = 1e-12;
/// Eigenvalues below this magnitude are treated as zero in the Jordan split.
pub const EIGEN_ZERO: f64 = 1e-12;

const I: C64 = C64::new(0.0, 1.0);

pub fn identity(d: usize) -> ComplexMatrix {
    ComplexMatrix::identity(d, d)
}

/// `|i><j|` in dimension `d`.
pub fn matrix_unit(d: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d, d);
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

pub fn outer(u: &ComplexVector, v: &ComplexVector) -> ComplexMatrix {
    u * v.adjoint()
}

pub fn trace(a: &ComplexMatrix) -> C64 {
    a.diagonal().sum()
}

pub fn check_square(a: &ComplexMatrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

fn check_finite(a: &ComplexMatrix) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// `max_{ij} |a_ij - conj(a_ji)|`.
pub fn hermiticity_residual(a: &ComplexMatrix) -> f64 {
    let d = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i..d {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

fn symmetrized(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues of a Hermitian matrix in ascending order. Only the Hermitian
/// part of `a` is used.
pub fn hermitian_eigenvalues(a: &ComplexMatrix) -> Vec<f64> {
    match a.nrows() {
        0 => Vec::new(),
        1 => vec![a[(0, 0)].re],
        2 => {
            let p = a[(0, 0)].re;
            let s = a[(1, 1)].re;
            let q = (a[(0, 1)] + a[(1, 0)].conj()) * 0.5;
            let mean = 0.5 * (p + s);
            let rad = (0.5 * (p - s)).hypot(q.norm());
            vec![mean - rad, mean + rad]
        }
        _ => {
            let mut ev: Vec<f64> = symmetrized(a).symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev
        }
    }
}

pub fn min_eigenvalue(a: &ComplexMatrix) -> f64 {
    hermitian_eigenvalues(a)[0]
}

/// Eigendecomposition of the Hermitian part of `a`: ascending eigenvalues
/// and the matching orthonormal eigenvectors as columns.
pub fn hermitian_eigen(a: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let d = a.nrows();
    let eig = SymmetricEigen::new(symmetrized(a));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = ComplexMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Self-adjoint operator. Construction symmetrizes the input and records how
/// far it was from Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
    residual: f64,
}

impl HermitianOperator {
    pub fn new(a: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(a, HERMITICITY_TOL)
    }

    pub fn with_tolerance(a: ComplexMatrix, tol: f64) -> Result<Self> {
        let h = Self::symmetrize(a)?;
        if h.residual > tol {
            return Err(Error::NotHermitian {
                residual: h.residual,
                tol,
            });
        }
        Ok(h)
    }

    /// Takes `(a + a*)/2` unconditionally.
    pub fn symmetrize(a: ComplexMatrix) -> Result<Self> {
        check_square(&a)?;
        check_finite(&a)?;
        let residual = hermiticity_residual(&a);
        Ok(HermitianOperator {
            matrix: symmetrized(&a),
            residual,
        })
    }

    pub fn zeros(d: usize) -> Self {
        HermitianOperator {
            matrix: ComplexMatrix::zeros(d, d),
            residual: 0.0,
        }
    }

    pub fn identity(d: usize) -> Self {
        HermitianOperator {
            matrix: identity(d),
            residual: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix).re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    pub fn scale(&self, s: f64) -> Self {
        HermitianOperator {
            matrix: &self.matrix * C64::new(s, 0.0),
            residual: self.residual * s.abs(),
        }
    }

    /// `(G + G*)/2` for a complex Gaussian `G`.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let g = ComplexMatrix::from_fn(d, d, |_, _| crate::rng::complex_gaussian(rng));
        HermitianOperator {
            matrix: (&g + g.adjoint()) * C64::new(0.5, 0.0),
            residual: 0.0,
        }
    }
}

/// Trace-one positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    op: HermitianOperator,
}

impl DensityOperator {
    pub fn new(a: ComplexMatrix) -> Result<Self> {
        Self::from_hermitian(HermitianOperator::new(a)?)
    }

    pub fn from_hermitian(op: HermitianOperator) -> Result<Self> {
        Self::from_hermitian_with_tol(op, PSD_TOL, TRACE_TOL)
    }

    pub fn from_hermitian_with_tol(op: HermitianOperator, psd_tol: f64, trace_tol: f64) -> Result<Self> {
        let tr = op.trace();
        if (tr - 1.0).abs() > trace_tol {
            return Err(Error::NotDensity(format!("trace {tr} differs from 1")));
        }
        let lmin = op.min_eigenvalue();
        if lmin < -psd_tol {
            return Err(Error::NotDensity(format!("smallest eigenvalue {lmin:.3e}")));
        }
        Ok(DensityOperator { op })
    }

    pub fn maximally_mixed(d: usize) -> Self {
        DensityOperator {
            op: HermitianOperator::identity(d).scale(1.0 / d as f64),
        }
    }

    /// `|i><i|`.
    pub fn basis(d: usize, i: usize) -> Self {
        DensityOperator {
            op: HermitianOperator {
                matrix: matrix_unit(d, i, i),
                residual: 0.0,
            },
        }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        DensityOperator {
            op: HermitianOperator {
                matrix: psi.projector(),
                residual: 0.0,
            },
        }
    }

    /// Diagonal state with the given probability weights.
    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        let d = weights.len();
        let m = ComplexMatrix::from_fn(d, d, |i, j| if i == j { C64::new(weights[i], 0.0) } else { C64::new(0.0, 0.0) });
        Self::new(m)
    }

    /// Random state `G G* / Tr(G G*)` with `G` a `d x rank` complex Gaussian.
    pub fn random<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> Self {
        let g = ComplexMatrix::from_fn(d, rank.max(1), |_, _| rng::complex_gaussian(rng));
        let p = &g * g.adjoint();
        let tr = trace(&p).re;
        DensityOperator {
            op: HermitianOperator::symmetrize(p / C64::new(tr, 0.0)).expect("square finite"),
        }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        self.op.matrix()
    }

    pub fn hermitian(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.op.into_matrix()
    }
}

/// Unit vector in `C^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    vector: ComplexVector,
}

impl PureState {
    pub fn new(vector: ComplexVector) -> Result<Self> {
        let n = vector.norm();
        if (n - 1.0).abs() > PURE_NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        Ok(PureState { vector })
    }

    pub fn normalized(vector: ComplexVector) -> Result<Self> {
        let n = vector.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NotNormalized(n));
        }
        Ok(PureState {
            vector: vector / C64::new(n, 0.0),
        })
    }

    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = ComplexVector::zeros(d);
        v[i] = C64::new(1.0, 0.0);
        PureState { vector: v }
    }

    /// Haar-distributed pure state: normalized complex Gaussian, redrawn while
    /// the raw norm is below 1e-8.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        loop {
            let v = ComplexVector::from_fn(d, |_, _| rng::complex_gaussian(rng));
            let n = v.norm();
            if n >= 1e-8 {
                return PureState {
                    vector: v / C64::new(n, 0.0),
                };
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &ComplexVector {
        &self.vector
    }

    pub fn projector(&self) -> ComplexMatrix {
        outer(&self.vector, &self.vector)
    }
}

/// `(Re(a), Im(a))` with `Re(a) = (a + a*)/2` and `Im(a) = (a - a*)/(2i)`.
pub fn hermitian_parts(a: &ComplexMatrix) -> Result<(HermitianOperator, HermitianOperator)> {
    check_square(a)?;
    check_finite(a)?;
    let adj = a.adjoint();
    let re = (a + &adj) * C64::new(0.5, 0.0);
    let im = (a - &adj) / (I * 2.0);
    Ok((HermitianOperator::symmetrize(re)?, HermitianOperator::symmetrize(im)?))
}

/// Jordan decomposition `b = pos - neg` into PSD parts with disjoint support.
pub fn jordan_decomposition(b: &HermitianOperator) -> Result<(HermitianOperator, HermitianOperator)> {
    if b.residual() > HERMITICITY_TOL {
        return Err(Error::NotHermitian {
            residual: b.residual(),
            tol: HERMITICITY_TOL,
        });
    }
    let d = b.dim();
    let (values, vectors) = hermitian_eigen(b.matrix());
    let mut pos = ComplexMatrix::zeros(d, d);
    let mut neg = ComplexMatrix::zeros(d, d);
    for (k, &lambda) in values.iter().enumerate() {
        if lambda.abs() < EIGEN_ZERO {
            continue;
        }
        let v = vectors.column(k).into_owned();
        let p = outer(&v, &v);
        if lambda > 0.0 {
            pos += p * C64::new(lambda, 0.0);
        } else {
            neg += p * C64::new(-lambda, 0.0);
        }
    }
    Ok((HermitianOperator::symmetrize(pos)?, HermitianOperator::symmetrize(neg)?))
}

/// Sum of absolute eigenvalues of the Hermitian part of `h`.
pub fn trace_norm_hermitian(h: &ComplexMatrix) -> f64 {
    hermitian_eigenvalues(h).iter().map(|l| l.abs()).sum()
}

/// Total-variation norm `Tr(Re(a)_+ + Re(a)_-) + Tr(Im(a)_+ + Im(a)_-)`.
pub fn tv_norm(a: &ComplexMatrix) -> Result<f64> {
    check_square(a)?;
    let adj = a.adjoint();
    let re = (a + &adj) * C64::new(0.5, 0.0);
    let im = (a - &adj) / (I * 2.0);
    let mut total = trace_norm_hermitian(&re);
    // exactly Hermitian inputs have an identically zero imaginary part
    if im.iter().any(|z| *z != C64::new(0.0, 0.0)) {
        total += trace_norm_hermitian(&im);
    }
    Ok(total)
}

/// `a <= b` in the Löwner order: `lambda_min(b - a) >= -tol`.
pub fn op_leq(a: &HermitianOperator, b: &HermitianOperator, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(min_eigenvalue(&(b.matrix() - a.matrix())) >= -tol)
}

/// `count` Haar-random pure states in `C^d`, deterministic in `seed`.
pub fn sample_pure_states(d: usize, count: usize, seed: u64) -> Result<Vec<PureState>> {
    if d == 0 || count == 0 {
        return Err(Error::InvalidParameter(format!(
            "sample_pure_states needs d >= 1 and count >= 1 (got d={d}, count={count})"
        )));
    }
    let mut rng = rng::seeded(seed);
    Ok((0..count).map(|_| PureState::random(d, &mut rng)).collect())
}
