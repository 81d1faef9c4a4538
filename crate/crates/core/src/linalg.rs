//! Small dense complex linear algebra used by the spectral modules.
//!
//! Matrices here are tiny (at most 6x6 in the Evans problem, 3x3 for the
//! inviscid symbol), so everything is built on nalgebra's complex Schur
//! form plus back-substitution for eigenvectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(c)
}

/// Eigen-decomposition `A = V diag(values) V^{-1}` of a diagonalizable matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<C64>,
    /// Right eigenvectors as unit-norm columns.
    pub vectors: CMat,
    /// `V^{-1}`; its rows are the dual (left) eigenvectors.
    pub dual: CMat,
}

impl Eigen {
    pub fn new(m: &CMat) -> Result<Self> {
        let n = m.nrows();
        let scale = m.norm().max(f64::MIN_POSITIVE);
        let (q, t) = m.clone().schur().unpack();
        let values: Vec<C64> = (0..n).map(|k| t[(k, k)]).collect();
        let mut vectors = CMat::zeros(n, n);
        for k in 0..n {
            let mut x = CVec::zeros(n);
            x[k] = c(1.0);
            for j in (0..k).rev() {
                let mut s = C64::new(0.0, 0.0);
                for l in (j + 1)..=k {
                    s += t[(j, l)] * x[l];
                }
                let mut den = t[(j, j)] - values[k];
                if den.norm() < 1e-14 * scale {
                    den = c(1e-14 * scale);
                }
                x[j] = -s / den;
            }
            let v = &q * x;
            let nv = v.norm();
            vectors.set_column(k, &(v / c(nv)));
        }
        let dual = vectors
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Conditioning("defective eigenvector basis".into()))?;
        Ok(Self { values, vectors, dual })
    }

    /// Condition number proxy `|V| |V^{-1}|` (Frobenius).
    pub fn condition(&self) -> f64 {
        self.vectors.norm() * self.dual.norm()
    }

    /// Spectral projector onto the span of the eigenvectors in `idx`.
    pub fn projector(&self, idx: &[usize]) -> CMat {
        let n = self.values.len();
        let mut p = CMat::zeros(n, n);
        for &k in idx {
            p += self.vectors.column(k) * self.dual.row(k);
        }
        p
    }

    /// Indices sorted by decreasing real part.
    pub fn order_by_real_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].re.total_cmp(&self.values[a].re));
        idx
    }

    /// Derivative of eigenvalue `k` when the matrix moves in direction `dm`.
    pub fn eigenvalue_derivative(&self, k: usize, dm: &CMat) -> C64 {
        let r = self.vectors.column(k);
        let l = self.dual.row(k);
        (l * dm * r)[(0, 0)]
    }
}

/// Follow a spectral group of `m(s)` from `s = 0` to `s = 1`.
///
/// `select` picks the group at `s = 0`; membership is then transported by
/// nearest-neighbour matching with adaptive steps. Eigenvalues inside one
/// group may meet freely; a near-meeting between the group and its
/// complement aborts with the parameter value where it happened.
pub fn follow_group<F, S>(m: F, select: S) -> std::result::Result<(Eigen, Vec<usize>), f64>
where
    F: Fn(f64) -> CMat,
    S: FnOnce(&Eigen) -> Vec<usize>,
{
    let mut e = Eigen::new(&m(0.0)).map_err(|_| 0.0)?;
    let mut member: Vec<bool> = vec![false; e.values.len()];
    for k in select(&e) {
        member[k] = true;
    }
    let count = member.iter().filter(|b| **b).count();
    let mut s = 0.0;
    let mut h: f64 = 0.125;
    while s < 1.0 {
        let step = h.min(1.0 - s);
        let next = Eigen::new(&m(s + step));
        let matched = next.as_ref().ok().and_then(|ne| {
            let mut out = Vec::with_capacity(ne.values.len());
            for w in &ne.values {
                let d_in = e.values.iter().zip(&member).filter(|(_, m)| **m).map(|(v, _)| (v - w).norm()).fold(f64::INFINITY, f64::min);
                let d_out = e.values.iter().zip(&member).filter(|(_, m)| !**m).map(|(v, _)| (v - w).norm()).fold(f64::INFINITY, f64::min);
                let (near, far) = if d_in < d_out { (d_in, d_out) } else { (d_out, d_in) };
                if near > 0.3 * far {
                    return None;
                }
                out.push(d_in < d_out);
            }
            (out.iter().filter(|b| **b).count() == count).then_some(out)
        });
        match (next, matched) {
            (Ok(ne), Some(mm)) => {
                e = ne;
                member = mm;
                s += step;
                h = (2.0 * step).min(0.25);
            }
            _ => {
                h = 0.5 * step;
                if h < 1e-7 {
                    return Err(s);
                }
            }
        }
    }
    let idx = (0..member.len()).filter(|&k| member[k]).collect();
    Ok((e, idx))
}

/// Why a spectral splitting could not be continued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitFailure {
    /// Wrong number of eigenvalues on the requested side of the axis.
    Count(usize),
    /// The group met its complement at this frequency.
    Collision(C64),
}

/// Eigenvalues of `m_at(λ)` split by the sign of their real part, with the
/// split analytically continued to `Re λ ≤ 0`.
///
/// For `Re λ > 0` with every eigenvalue clearly off the imaginary axis the
/// group is read off directly. Otherwise it is selected at
/// `i Im λ + scale/2` and followed horizontally to `λ`, so the result is the
/// continuation from the right half-plane. Returns the decomposition and
/// the indices with negative (or positive) real part.
pub fn continued_split<F>(m_at: F, lambda: C64, scale: f64, count: usize, negative: bool) -> std::result::Result<(Eigen, Vec<usize>), SplitFailure>
where
    F: Fn(C64) -> CMat,
{
    let pick = |e: &Eigen| -> Vec<usize> {
        (0..e.values.len()).filter(|&k| (e.values[k].re < 0.0) == negative).collect()
    };
    if lambda.re > 0.0 {
        if let Ok(e) = Eigen::new(&m_at(lambda)) {
            let radius = e.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if e.values.iter().all(|z| z.re.abs() > 1e-8 * radius.max(1e-300)) && radius > 0.0 {
                let idx = pick(&e);
                if idx.len() != count {
                    return Err(SplitFailure::Count(idx.len()));
                }
                return Ok((e, idx));
            }
        }
    }
    let start = C64::new(0.5 * scale, lambda.im);
    let path = |s: f64| start + (lambda - start) * s;
    let mut bad_count = None;
    let out = follow_group(
        |s| m_at(path(s)),
        |e| {
            let idx = pick(e);
            if idx.len() != count {
                bad_count = Some(idx.len());
            }
            idx
        },
    );
    if let Some(k) = bad_count {
        return Err(SplitFailure::Count(k));
    }
    out.map_err(|s| SplitFailure::Collision(path(s)))
}

/// Scale a vector to unit norm with its first significant entry real-positive.
pub fn normalize_phase(v: &mut CVec) {
    let nv = v.norm();
    if nv == 0.0 {
        return;
    }
    *v /= c(nv);
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-8) {
        let phase = first.conj() / c(first.norm());
        *v *= phase;
    }
}

/// Real eigen-decomposition of a real matrix with real spectrum.
///
/// Returns `None` if any eigenvalue has an imaginary part larger than
/// `1e-9` times the spectral radius.
pub fn real_eigen(m: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let e = Eigen::new(&to_complex(m)).ok()?;
    let radius = e.values.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    if e.values.iter().any(|z| z.im.abs() > 1e-9 * radius) {
        return None;
    }
    let n = m.nrows();
    let mut vecs = DMatrix::zeros(n, n);
    for k in 0..n {
        // Rotate the (possibly complex-phased) eigenvector onto the real line.
        let mut v = e.vectors.column(k).into_owned();
        normalize_phase(&mut v);
        let mut r = DVector::from_iterator(n, v.iter().map(|z| z.re));
        let nr = r.norm();
        r /= nr;
        vecs.set_column(k, &r);
    }
    Some((e.values.iter().map(|z| z.re).collect(), vecs))
}

/// Determinant of a small complex matrix.
pub fn det(m: &CMat) -> C64 {
    match m.nrows() {
        0 => c(1.0),
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => m.clone().lu().determinant(),
    }
}

/// Solve a small real least-squares problem `min |A x - b|` via SVD,
/// returning the solution and the condition number of `A`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let x = svd
        .solve(b, 1e-14 * smax)
        .map_err(|e| Error::Fit(e.to_string()))?;
    Ok((x, cond))
}

/// Complex least squares with real design matrix (fits real and imaginary
/// parts independently).
pub fn least_squares_complex(a: &DMatrix<f64>, b: &[C64]) -> Result<(Vec<C64>, f64)> {
    let re = DVector::from_iterator(b.len(), b.iter().map(|z| z.re));
    let im = DVector::from_iterator(b.len(), b.iter().map(|z| z.im));
    let (xr, cond) = least_squares(a, &re)?;
    let (xi, _) = least_squares(a, &im)?;
    Ok((xr.iter().zip(xi.iter()).map(|(&r, &i)| C64::new(r, i)).collect(), cond))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_reconstructs_matrix() {
        let m = CMat::from_row_slice(
            3,
            3,
            &[
                c(1.0),
                C64::new(0.5, 0.2),
                c(0.0),
                c(-0.3),
                C64::new(2.0, 1.0),
                c(0.7),
                c(0.1),
                c(0.0),
                C64::new(-1.0, 0.5),
            ],
        );
        let e = Eigen::new(&m).unwrap();
        let d = CMat::from_diagonal(&CVec::from_vec(e.values.clone()));
        let rec = &e.vectors * d * &e.dual;
        assert!((rec - &m).norm() < 1e-12);
        let all: Vec<usize> = (0..3).collect();
        assert!((e.projector(&all) - CMat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent() {
        let m = CMat::from_row_slice(2, 2, &[c(2.0), c(1.0), c(0.0), c(-1.0)]);
        let e = Eigen::new(&m).unwrap();
        let p = e.projector(&[e.order_by_real_desc()[0]]);
        assert!((&p * &p - &p).norm() < 1e-13);
        assert!((p.trace() - c(1.0)).norm() < 1e-13);
    }

    #[test]
    fn eigenvalue_derivative_matches_difference() {
        let m = CMat::from_row_slice(2, 2, &[c(1.0), c(2.0), c(0.5), c(-1.0)]);
        let dm = CMat::from_row_slice(2, 2, &[c(0.3), c(0.0), c(1.0), c(0.2)]);
        let e = Eigen::new(&m).unwrap();
        let h = 1e-6;
        let ep = Eigen::new(&(&m + &dm * c(h))).unwrap();
        for k in 0..2 {
            let fd = ep
                .values
                .iter()
                .map(|z| (z - e.values[k]) / h)
                .min_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap();
            assert!((fd - e.eigenvalue_derivative(k, &dm)).norm() < 1e-4);
        }
    }

    #[test]
    fn follow_group_tracks_crossing_real_parts() {
        // Eigenvalues i(1 - s) + s and -i... : real parts cross, labels follow
        // continuity rather than ordering.
        let m = |s: f64| {
            CMat::from_diagonal(&CVec::from_vec(vec![C64::new(1.0 - 2.0 * s, 1.0), C64::new(2.0 * s - 1.0, -1.0)]))
        };
        let (e, idx) = follow_group(m, |e| vec![e.order_by_real_desc()[0]]).unwrap();
        assert_eq!(idx.len(), 1);
        assert!((e.values[idx[0]] - C64::new(-1.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn follow_group_reports_collision() {
        let m = |s: f64| CMat::from_diagonal(&CVec::from_vec(vec![c(1.0 - 2.0 * s), c(0.0)]));
        assert!(follow_group(m, |_| vec![0]).is_err());
    }

    #[test]
    fn phase_normalization() {
        let mut v = CVec::from_vec(vec![C64::new(0.0, 2.0), c(1.0)]);
        normalize_phase(&mut v);
        assert!((v.norm() - 1.0).abs() < 1e-15);
        assert!(v[0].im.abs() < 1e-15 && v[0].re > 0.0);
    }
}
