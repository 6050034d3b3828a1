//! Diameter `sup_{ρ,σ} ‖Φ(ρ) - Φ(σ)‖_TV` of the image of the state space.
//!
//! The distance is convex in each argument, so the supremum is attained on
//! pure pairs. Sampled pairs are refined by an ascent that alternates between
//! the optimal Helstrom measurement `W = P₊ - P₋` of the current image
//! difference and the extreme eigenvectors of the dual image `Φ*(W)`.

use rayon::prelude::*;

use crate::channel::SuperOperatorMatrix;
use crate::error::{Error, Result};
use crate::opalg::{self, ComplexMatrix, ComplexVector, C64};

const REFINED_PAIRS: usize = 4;
const ASCENT_ITERS: usize = 100;

fn pair_distance(map: &SuperOperatorMatrix, u: &ComplexVector, v: &ComplexVector) -> f64 {
    let delta = map.apply(&(opalg::outer(u, u) - opalg::outer(v, v)));
    opalg::trace_norm_hermitian(&delta)
}

fn ascend(map: &SuperOperatorMatrix, u: &ComplexVector, v: &ComplexVector) -> f64 {
    let d = map.dim();
    let mut u = u.clone();
    let mut v = v.clone();
    let mut best = pair_distance(map, &u, &v);
    for _ in 0..ASCENT_ITERS {
        let delta = map.apply(&(opalg::outer(&u, &u) - opalg::outer(&v, &v)));
        let (values, vectors) = opalg::hermitian_eigen(&delta);
        let mut w = ComplexMatrix::zeros(d, d);
        for (j, &l) in values.iter().enumerate() {
            let col = vectors.column(j);
            let sign = if l >= 0.0 { 1.0 } else { -1.0 };
            w += (col * col.adjoint()) * C64::new(sign, 0.0);
        }
        let g = map.apply_adjoint(&w);
        let (_, gvec) = opalg::hermitian_eigen(&g);
        let nu = gvec.column(d - 1).into_owned();
        let nv = gvec.column(0).into_owned();
        let value = pair_distance(map, &nu, &nv);
        if value <= best + 1e-15 {
            break;
        }
        best = value;
        u = nu;
        v = nv;
    }
    best
}

/// Sampled lower estimate of the diameter of `map(𝔖)`, clamped to `[0, 2]`.
pub fn diameter_estimate(map: &SuperOperatorMatrix, samples: usize, seed: u64) -> Result<f64> {
    let d = map.dim();
    if d == 1 {
        return Ok(0.0);
    }
    let states = opalg::sample_pure_states(d, 2 * samples.max(1), seed)?;
    let mut pairs: Vec<(ComplexVector, ComplexVector)> = states
        .chunks(2)
        .map(|c| (c[0].vector().clone(), c[1].vector().clone()))
        .collect();
    // computational basis pairs are cheap deterministic starts
    for i in 1..d {
        pairs.push((opalg::PureState::basis(d, 0).vector().clone(), opalg::PureState::basis(d, i).vector().clone()));
    }
    let mut scored: Vec<(f64, usize)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (u, v))| (pair_distance(map, u, v), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let refined: Vec<f64> = scored
        .iter()
        .take(REFINED_PAIRS)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(_, i)| ascend(map, &pairs[*i].0, &pairs[*i].1))
        .collect();
    let best = refined.into_iter().fold(scored[0].0, f64::max);
    Ok(best.clamp(0.0, 2.0))
}

/// Exact diameter of a trace-preserving, Hermiticity-preserving qubit map:
/// `2 σ_max(T)` for the Bloch matrix `T_ij = ½ Tr(σ_i Φ(σ_j))`.
pub fn qubit_diameter(map: &SuperOperatorMatrix) -> Result<f64> {
    if map.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: map.dim(),
        });
    }
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let paulis = [
        ComplexMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        ComplexMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        ComplexMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    ];
    let t = nalgebra::DMatrix::<f64>::from_fn(3, 3, |a, b| 0.5 * opalg::trace(&(&paulis[a] * map.apply(&paulis[b]))).re);
    let smax = t.singular_values().iter().copied().fold(0.0, f64::max);
    Ok((2.0 * smax).clamp(0.0, 2.0))
}
