//! Dense matrix primitives shared by the reservoir and the RLS filter.
//!
//! Matrices are plain `ndarray` arrays in 64-bit floating point. Column
//! vectors are represented as [`Vector`] (`Array1<f64>`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

/// Iteration cap for [`spectral_radius`].
pub const POWER_ITERATION_MAX: usize = 10_000;
/// Relative change of the eigenvalue estimate treated as converged.
pub const POWER_ITERATION_TOL: f64 = 1e-10;

const POWER_START_SEED: u64 = 0x005e_ed0f_ca11;
// Consecutive converged iterations required before stopping.
const POWER_STABLE_ROUNDS: usize = 3;
// Below this normalized Gram determinant the two-term fit is ill-posed.
const KRYLOV_DEGENERACY: f64 = 1e-8;

/// Output of one Sherman–Morrison step.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneUpdateResult {
    pub p_next: Matrix,
    /// `v = P u`
    pub v: Vector,
    /// Gain `g = v / (lambda + v^T u)`.
    pub g: Vector,
}

/// Rank-one update of an inverse autocorrelation matrix.
///
/// Given `p = A^{-1}`, returns the inverse of `lambda * A + u u^T` without
/// forming `A`. The result is symmetrized to keep rounding drift out of the
/// recursion.
pub fn rank_one_inverse_update(p: &Matrix, u: &Vector, lambda: f64) -> Result<RankOneUpdateResult> {
    let mut p_next = p.clone();
    let (v, g) = rank_one_inverse_update_in_place(&mut p_next, u.view(), lambda)?;
    Ok(RankOneUpdateResult { p_next, v, g })
}

/// In-place form of [`rank_one_inverse_update`]; returns `(v, g)`.
pub fn rank_one_inverse_update_in_place(
    p: &mut Matrix,
    u: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<(Vector, Vector)> {
    let (rows, cols) = p.dim();
    if rows != cols {
        return Err(Error::dim("rank_one_inverse_update: p", "square", format!("{rows}x{cols}")));
    }
    if u.len() != rows {
        return Err(Error::dim("rank_one_inverse_update: u", rows, u.len()));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!("forgetting factor {lambda} outside (0, 1]")));
    }

    let v = p.dot(&u);
    let denom = lambda + v.dot(&u);
    let g = &v / denom;
    if !denom.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("rank_one_inverse_update: gain"));
    }

    let inv_lambda = 1.0 / lambda;
    for i in 0..rows {
        let gi = g[i];
        let mut row = p.row_mut(i);
        Zip::from(&mut row).and(&v).for_each(|pij, &vj| {
            *pij = (*pij - gi * vj) * inv_lambda;
        });
    }
    symmetrize(p);
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("rank_one_inverse_update: p"));
    }
    Ok((v, g))
}

/// Replaces `m` by `(m + m^T) / 2`. `m` must be square.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

/// Sign function with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Power iteration from a fixed pseudo-random start vector. At each step the
/// two most recent Krylov vectors are fitted with a second-order recurrence
/// `W²x ≈ a·Wx + b·x`, whose roots capture a dominant complex-conjugate or
/// `±` pair that plain power iteration would oscillate on. When the fit is
/// degenerate (the iterate has settled on a real eigenvector) the Rayleigh
/// quotient is used instead.
pub fn spectral_radius(w: &Matrix) -> Result<f64> {
    let n = w.nrows();
    if n != w.ncols() {
        return Err(Error::dim("spectral_radius", "square", format!("{}x{}", n, w.ncols())));
    }
    if n == 0 || w.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroSpectralRadius);
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("spectral_radius: input"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_START_SEED);
    let mut x: Vector = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = x.dot(&x).sqrt();
    x /= norm;
    let mut y = w.dot(&x);

    let mut estimate = f64::NAN;
    let mut stable = 0;
    for _ in 0..POWER_ITERATION_MAX {
        let ny = y.dot(&y).sqrt();
        if ny == 0.0 {
            // Nilpotent direction: the radius is zero.
            return Err(Error::ZeroSpectralRadius);
        }
        let z = w.dot(&y);
        let next = krylov_estimate(x.view(), y.view(), z.view());

        if next.is_finite() && estimate.is_finite() && (next - estimate).abs() <= POWER_ITERATION_TOL * next.abs() {
            stable += 1;
            if stable >= POWER_STABLE_ROUNDS {
                return Ok(next);
            }
        } else {
            stable = 0;
        }
        estimate = next;

        x = y / ny;
        y = z / ny;
    }
    if estimate.is_finite() && estimate > 0.0 {
        Ok(estimate)
    } else {
        Err(Error::ZeroSpectralRadius)
    }
}

fn krylov_estimate(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> f64 {
    let xx = x.dot(&x);
    let xy = x.dot(&y);
    let yy = y.dot(&y);
    let det = yy * xx - xy * xy;
    if det > KRYLOV_DEGENERACY * yy * xx {
        let yz = y.dot(&z);
        let xz = x.dot(&z);
        // [yy xy; xy xx] [a; b] = [yz; xz]
        let a = (yz * xx - xz * xy) / det;
        let b = (yy * xz - xy * yz) / det;
        let disc = a * a + 4.0 * b;
        if disc >= 0.0 {
            let s = disc.sqrt();
            0.5 * (a + s).abs().max((a - s).abs())
        } else {
            (-b).sqrt()
        }
    } else {
        (xy / xx).abs()
    }
}

/// Rescales `w` so its spectral radius equals `target`.
pub fn spectral_scale(w: &Matrix, target: f64) -> Result<Matrix> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidConfig(format!("target spectral radius {target} must be positive")));
    }
    let radius = spectral_radius(w)?;
    Ok(w * (target / radius))
}

/// Relative Frobenius distance `‖a − b‖_F / max(‖b‖_F, 1e-300)`.
pub fn relative_frobenius(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let diff: f64 = Zip::from(&a).and(&b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y));
    let base: f64 = b.iter().map(|x| x * x).sum();
    diff.sqrt() / base.sqrt().max(1e-300)
}

/// Serde adapter writing a matrix as `{ "rows", "cols", "data" }` with
/// row-major `data`.
pub mod serde_matrix {
    use super::Matrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Record {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        Record {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let r = Record::deserialize(d)?;
        Matrix::from_shape_vec((r.rows, r.cols), r.data).map_err(D::Error::custom)
    }
}

/// Serde adapter writing a vector as a plain JSON array.
pub mod serde_vector {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.iter().copied().collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from(Vec::<f64>::deserialize(d)?))
    }
}
