//! Reference spectra that share nothing with the library's Evans machinery:
//! the single-mode linearization about the closed-form scalar Burgers
//! profile on a truncated window, discretized by fourth-order differences
//! with Dirichlet ends and solved by a dense eigensolver.

use cellshock::C64;
use nalgebra::DMatrix;

/// `L_ξ v = v'' − (ū v)' − iξ (c + (d + ε)ū) v − ξ² v` with `ū = −tanh(x/2)`.
pub struct ScalarModeOperator {
    pub x: Vec<f64>,
    h: f64,
    ubar: Vec<f64>,
    b: Vec<f64>,
}

impl ScalarModeOperator {
    pub fn new(c: f64, d: f64, eps: f64, half_length: f64, interior: usize) -> Self {
        let h = 2.0 * half_length / (interior + 1) as f64;
        let x: Vec<f64> = (1..=interior).map(|i| -half_length + i as f64 * h).collect();
        let ubar: Vec<f64> = x.iter().map(|x| -(0.5 * x).tanh()).collect();
        let b = ubar.iter().map(|u| c + (d + eps) * u).collect();
        Self { x, h, ubar, b }
    }

    pub fn matrix(&self, xi: f64) -> DMatrix<C64> {
        let n = self.x.len();
        let h = self.h;
        let mut m = DMatrix::<C64>::zeros(n, n);
        let d2: [(isize, f64); 5] = [(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)];
        let d1: [(isize, f64); 4] = [(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)];
        for i in 0..n {
            let near_edge = i < 2 || i + 2 >= n;
            let mut put = |j: isize, v: C64| {
                if j >= 0 && (j as usize) < n {
                    m[(i, j as usize)] += v;
                }
            };
            let ii = i as isize;
            if near_edge {
                put(ii - 1, C64::new(1.0 / (h * h), 0.0));
                put(ii, C64::new(-2.0 / (h * h), 0.0));
                put(ii + 1, C64::new(1.0 / (h * h), 0.0));
                for (s, w) in [(-1isize, -0.5), (1, 0.5)] {
                    let j = ii + s;
                    if j >= 0 && (j as usize) < n {
                        put(j, C64::new(-w * self.ubar[j as usize] / h, 0.0));
                    }
                }
            } else {
                for (s, w) in d2 {
                    put(ii + s, C64::new(w / (12.0 * h * h), 0.0));
                }
                for (s, w) in d1 {
                    put(ii + s, C64::new(-w * self.ubar[(ii + s) as usize] / (12.0 * h), 0.0));
                }
            }
            m[(i, i)] += C64::new(-xi * xi, -xi * self.b[i]);
        }
        m
    }

    pub fn eigenvalues(&self, xi: f64) -> Vec<C64> {
        let schur = self.matrix(xi).schur();
        schur.eigenvalues().expect("complex Schur form is triangular").iter().copied().collect()
    }
}

/// Eigenvalue of `L_ξ` closest to `target`.
pub fn nearest(values: &[C64], target: C64) -> C64 {
    *values.iter().min_by(|a, b| (*a - target).norm().total_cmp(&(*b - target).norm())).unwrap()
}

/// Complex least-squares polynomial fit `Σ_{j<degree+1} c_j ξ^j` by SVD.
pub fn poly_fit(xs: &[f64], ys: &[C64], degree: usize) -> Vec<C64> {
    let a = DMatrix::<C64>::from_fn(xs.len(), degree + 1, |i, j| C64::new(xs[i].powi(j as i32), 0.0));
    let b = nalgebra::DVector::<C64>::from_column_slice(ys);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).expect("SVD solve").iter().copied().collect()
}

/// Eigenvalue of `L_ξ` nearest to `shift` by shifted inverse iteration on
/// the dense LU factors, finished with a Rayleigh quotient.
pub fn nearest_eigenvalue(op: &ScalarModeOperator, xi: f64, shift: C64) -> C64 {
    let a = op.matrix(xi);
    let n = a.nrows();
    let shifted = &a - DMatrix::<C64>::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut v = nalgebra::DVector::<C64>::from_fn(n, |i, _| C64::new(1.0 + 0.1 * (i % 7) as f64, 0.05 * (i % 3) as f64));
    let mut estimate = shift;
    for _ in 0..200 {
        let w = lu.solve(&v).expect("shift coincides with an eigenvalue");
        let nrm = w.norm();
        v = w / C64::new(nrm, 0.0);
        let next = (v.adjoint() * &a * &v)[(0, 0)];
        let done = (next - estimate).norm() < 1e-14 * (1.0 + next.norm());
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

/// Discrete eigenvalue branch leaving `λ = 0` as `−icξ`, continued by
/// linear extrapolation, and the cubic fit of `λ(ξ)` over `xis`.
pub fn scalar_branch(c: f64, d: f64, eps: f64, xis: &[f64], half_length: f64, interior: usize) -> (Vec<C64>, Vec<C64>) {
    let op = ScalarModeOperator::new(c, d, eps, half_length, interior);
    let mut lambdas: Vec<C64> = Vec::with_capacity(xis.len());
    for (j, &xi) in xis.iter().enumerate() {
        let guess = match j {
            0 => C64::new(-xi * xi, -c * xi),
            1 => lambdas[0] * (xi / xis[0]),
            _ => lambdas[j - 1] + (lambdas[j - 1] - lambdas[j - 2]) * ((xi - xis[j - 1]) / (xis[j - 1] - xis[j - 2])),
        };
        lambdas.push(nearest_eigenvalue(&op, xi, guess));
    }
    let coef = poly_fit(xis, &lambdas, 3);
    (lambdas, coef)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn branch_xis() -> Vec<f64> {
        (0..9).map(|j| 0.02 + 0.01 * j as f64).collect()
    }

    #[test]
    fn translation_eigenvalue_is_near_zero() {
        let op = ScalarModeOperator::new(0.4, 0.7, 0.0, 14.0, 420);
        let l = nearest(&op.eigenvalues(0.0), C64::new(0.0, 0.0));
        assert!(l.norm() < 1e-4, "{l}");
        let refined = nearest_eigenvalue(&op, 0.0, C64::new(0.01, 0.0));
        assert!((refined - l).norm() < 1e-10, "{refined} {l}");
    }

    #[test]
    fn constant_transverse_speed_gives_exact_branch() {
        // With d + ε = 0 the profile derivative is an eigenfunction for every ξ:
        // λ(ξ) = −icξ − ξ².
        // The discrete translation eigenvalue is not exactly zero; the branch
        // carries the same offset.
        let op = ScalarModeOperator::new(0.4, 0.0, 0.0, 14.0, 420);
        let offset = nearest_eigenvalue(&op, 0.0, C64::new(0.0, 0.0));
        let (lambdas, coef) = scalar_branch(0.4, 0.0, 0.0, &branch_xis(), 14.0, 420);
        for (xi, l) in branch_xis().iter().zip(&lambdas) {
            let exact = C64::new(-xi * xi, -0.4 * xi) + offset;
            assert!((l - exact).norm() < 1e-9, "{xi} {l} {exact}");
        }
        assert!((coef[2] + 1.0).norm() < 1e-5, "{coef:?}");
    }
}
