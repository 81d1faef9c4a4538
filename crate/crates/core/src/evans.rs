//! Viscous Evans function `D(ξ, λ)` for the eigenvalue problem
//! `λw = w'' − (A¹w)' − iξA²w − ξ²w` about a standing profile.
//!
//! The equation is written in the flux variable `(w, y = w' − A¹w)`:
//!
//! ```text
//! w' = A¹ w + y
//! y' = ((λ + ξ²) I + iξ A²) w
//! ```
//!
//! and the n-dimensional decaying subspaces are transported as points of
//! the n-th exterior power of `C^{2n}`. Both sides are renormalized by the
//! sum of their selected eigenvalues and joined at a matching point with
//! the exact Abel factor, so the value is independent of the window and of
//! the matching point.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::ExteriorPower;
use crate::linalg::{c, continued_split, to_complex, CMat, CVec, SplitFailure, C64, I};
use crate::lopatinski::Lopatinski;
use crate::ode::{integrate, OdeOptions, Stepper};
use crate::profiles::ShockProfile;
use crate::spectral::{winding_number, SpectralFunction};
use crate::systems::{sorted_real_eigen, FluxSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Cartesian,
    Polar,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvansValue {
    pub xi: f64,
    pub lambda: C64,
    pub value: C64,
    pub rho: f64,
    pub xi0: f64,
    pub lambda0: C64,
    pub mode: EvalMode,
}

#[derive(Debug, Clone, Copy)]
pub struct EvansOptions {
    pub rtol: f64,
    /// Where the two sides are joined.
    pub matching_point: f64,
}

impl Default for EvansOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, matching_point: 0.0 }
    }
}

/// Evans function of one profile. Cheap to share between threads.
pub struct EvansFunction {
    sys: Arc<dyn FluxSystem>,
    profile: Arc<ShockProfile>,
    eps: f64,
    n: usize,
    ext: ExteriorPower,
    a1_end: [CMat; 2],
    a2_end: [CMat; 2],
    /// Reference frames (2n x n) at the origin of frequency space.
    refs: [CMat; 2],
    pub opts: EvansOptions,
}

/// Coefficients of the first-order system at fixed `(ξ, λ)`.
pub struct LinearizedSystem<'a> {
    evans: &'a EvansFunction,
    pub xi: f64,
    pub lambda: C64,
    pub g_minus: CMat,
    pub g_plus: CMat,
}

impl LinearizedSystem<'_> {
    /// `G(x; ξ, λ)`, evaluated through the interpolated profile.
    pub fn g(&self, x: f64) -> CMat {
        let u = self.evans.profile.eval(x);
        let e = self.evans.eps;
        let sys = &self.evans.sys;
        first_order(&to_complex(&sys.df1(e, &u)), &to_complex(&sys.df2(e, &u)), self.xi, self.lambda)
    }
}

fn first_order(a1: &CMat, a2: &CMat, xi: f64, lambda: C64) -> CMat {
    let n = a1.nrows();
    let mut g = CMat::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n, n)).copy_from(a1);
    let low = CMat::identity(n, n) * (lambda + xi * xi) + a2 * (I * xi);
    g.view_mut((n, 0), (n, n)).copy_from(&low);
    for i in 0..n {
        g[(i, n + i)] = c(1.0);
    }
    g
}

impl EvansFunction {
    pub fn new(sys: Arc<dyn FluxSystem>, profile: Arc<ShockProfile>) -> Result<Self> {
        Self::with_options(sys, profile, EvansOptions::default())
    }

    pub fn with_options(sys: Arc<dyn FluxSystem>, profile: Arc<ShockProfile>, opts: EvansOptions) -> Result<Self> {
        let eps = profile.eps;
        let n = sys.dim();
        let (um, up) = sys.end_states(eps);
        let mut a1_end = Vec::new();
        let mut a2_end = Vec::new();
        let mut refs = Vec::new();
        for (k, u) in [&um, &up].into_iter().enumerate() {
            let a1 = sys.df1(eps, u);
            let (vals, vecs) = sorted_real_eigen(&a1).ok_or_else(|| Error::Hypothesis("axial Jacobian lacks a real eigenbasis".into()))?;
            let inv = a1.clone().try_inverse().ok_or_else(|| Error::Hypothesis("characteristic end state".into()))?;
            // Fast modes leave the rest point (positive speeds at −∞,
            // negative at +∞); slow modes sit in the kernel directions
            // (A⁻¹r, −r) of the outgoing characteristics.
            let fast_sign = if k == 0 { 1.0 } else { -1.0 };
            let mut frame = Vec::new();
            for (j, &a) in vals.iter().enumerate() {
                let r = vecs.column(j).into_owned();
                if a * fast_sign > 0.0 {
                    let mut v = DVector::zeros(2 * n);
                    v.rows_mut(0, n).copy_from(&r);
                    frame.push(v);
                }
            }
            for (j, &a) in vals.iter().enumerate() {
                let r = vecs.column(j).into_owned();
                if a * fast_sign < 0.0 {
                    let mut v = DVector::zeros(2 * n);
                    v.rows_mut(0, n).copy_from(&(&inv * &r));
                    v.rows_mut(n, n).copy_from(&(-&r));
                    frame.push(v);
                }
            }
            refs.push(to_complex(&nalgebra::DMatrix::from_columns(&frame)));
            a1_end.push(to_complex(&a1));
            a2_end.push(to_complex(&sys.df2(eps, u)));
        }
        Ok(Self {
            eps,
            n,
            ext: ExteriorPower::new(2 * n, n),
            a1_end: [a1_end[0].clone(), a1_end[1].clone()],
            a2_end: [a2_end[0].clone(), a2_end[1].clone()],
            refs: [refs[0].clone(), refs[1].clone()],
            sys,
            profile,
            opts,
        })
    }

    pub fn profile(&self) -> &ShockProfile {
        &self.profile
    }

    pub fn system(&self) -> &dyn FluxSystem {
        self.sys.as_ref()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn linearized(&self, xi: f64, lambda: C64) -> LinearizedSystem<'_> {
        LinearizedSystem {
            evans: self,
            xi,
            lambda,
            g_minus: first_order(&self.a1_end[0], &self.a2_end[0], xi, lambda),
            g_plus: first_order(&self.a1_end[1], &self.a2_end[1], xi, lambda),
        }
    }

    /// Initial frame on side `k` and the sum of its selected eigenvalues.
    fn initial_frame(&self, k: usize, lin: &LinearizedSystem<'_>) -> Result<(CMat, C64)> {
        let (xi, lambda) = (lin.xi, lin.lambda);
        let scale = (xi * xi + lambda.norm_sqr()).sqrt();
        if scale == 0.0 {
            return Ok((self.refs[k].clone(), c(0.0)));
        }
        let (a1, a2) = (&self.a1_end[k], &self.a2_end[k]);
        let (e, sel) = continued_split(|l| first_order(a1, a2, xi, l), lambda, scale, self.n, k == 1).map_err(|f| {
            let at = match f {
                SplitFailure::Count(_) => lambda,
                SplitFailure::Collision(z) => z,
            };
            Error::Splitting { xi, re: at.re, im: at.im }
        })?;
        let mu: C64 = sel.iter().map(|&j| e.values[j]).sum();
        Ok((e.projector(&sel) * &self.refs[k], mu))
    }

    fn transport(&self, lin: &LinearizedSystem<'_>, y0: CVec, mu: C64, from: f64, to: f64) -> Result<CVec> {
        let scale = y0.camax().max(f64::MIN_POSITIVE);
        let opts = OdeOptions { rtol: self.opts.rtol, atol: 1e-3 * self.opts.rtol * scale, ..OdeOptions::default() };
        let mut st = Stepper::new(from, y0, opts);
        let mut rhs = |x: f64, y: &CVec| -> CVec { self.ext.apply(&lin.g(x), y) - y * mu };
        st.advance(&mut rhs, to)?;
        if !st.y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::Conditioning("Evans transport overflowed".into()));
        }
        Ok(st.y)
    }

    /// `∫₀^x tr A¹(ū(s)) ds`.
    fn trace_integral(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let f = |s: f64, _: &DVector<f64>| DVector::from_element(1, self.sys.df1(self.eps, &self.profile.eval(s)).trace());
        Ok(integrate(f, 0.0, DVector::zeros(1), x, OdeOptions { rtol: 1e-13, atol: 1e-14, ..OdeOptions::default() })?[0])
    }

    pub fn evans(&self, xi: f64, lambda: C64) -> Result<EvansValue> {
        Ok(EvansValue { xi, lambda, value: self.value(xi, lambda)?, rho: (xi * xi + lambda.norm_sqr()).sqrt(), xi0: 0.0, lambda0: c(0.0), mode: EvalMode::Cartesian })
            .map(|mut v| {
                if v.rho > 0.0 {
                    v.xi0 = xi / v.rho;
                    v.lambda0 = lambda / v.rho;
                }
                v
            })
    }

    fn value(&self, xi: f64, lambda: C64) -> Result<C64> {
        let lin = self.linearized(xi, lambda);
        let x_end = self.profile.half_length();
        let xm = self.opts.matching_point;
        let (w_minus, mu_minus) = self.initial_frame(0, &lin)?;
        let (w_plus, mu_plus) = self.initial_frame(1, &lin)?;
        let y_minus = self.transport(&lin, self.ext.wedge_columns(&w_minus), mu_minus, -x_end, xm)?;
        let y_plus = self.transport(&lin, self.ext.wedge_columns(&w_plus), mu_plus, x_end, xm)?;
        let pairing = self.ext.pairing(&y_minus, &y_plus);
        let correction = ((mu_minus + mu_plus) * xm - self.trace_integral(xm)?).exp();
        Ok(pairing * correction)
    }

    /// `D(ρξ₀, ρλ₀)` for a unit direction; exactly zero at `ρ = 0`.
    pub fn polar_evans(&self, rho: f64, xi0: f64, lambda0: C64) -> Result<EvansValue> {
        let norm = (xi0 * xi0 + lambda0.norm_sqr()).sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("polar direction has norm {norm}, expected 1")));
        }
        if rho < 0.0 {
            return Err(Error::Invalid("negative polar radius".into()));
        }
        let value = if rho == 0.0 { c(0.0) } else { self.value(rho * xi0, lambda0 * rho)? };
        Ok(EvansValue { xi: rho * xi0, lambda: lambda0 * rho, value, rho, xi0, lambda0, mode: EvalMode::Polar })
    }

    /// `∂_ρ D` at `ρ = 0` along a unit direction: Richardson extrapolation
    /// of the difference quotients `D(h)/h` and `D(h/2)/(h/2)`.
    pub fn polar_slope(&self, xi0: f64, lambda0: C64, h: f64) -> Result<C64> {
        let s1 = self.polar_evans(h, xi0, lambda0)?.value / h;
        let s2 = self.polar_evans(0.5 * h, xi0, lambda0)?.value / (0.5 * h);
        Ok(s2 * 2.0 - s1)
    }

    pub fn winding_count(&self, xi: f64, contour: &[C64]) -> Result<i64> {
        winding_number(self, xi, contour)
    }
}

impl SpectralFunction for EvansFunction {
    fn eval(&self, xi: f64, lambda: C64) -> Result<C64> {
        self.value(xi, lambda)
    }
}

/// Five generic unit directions `(ξ₀, λ₀)` with `Re λ₀ ≥ 0`.
pub fn default_directions() -> Vec<(f64, C64)> {
    let raw = [
        (0.0, C64::new(1.0, 0.0)),
        (0.6, C64::new(0.8, 0.0)),
        (0.5, C64::new(0.6, 0.55)),
        (-0.7, C64::new(0.4, 0.3)),
        (0.35, C64::new(0.8, -0.45)),
    ];
    raw.iter()
        .map(|&(x, l)| {
            let nrm = (x * x + l.norm_sqr()).sqrt();
            (x / nrm, l / nrm)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaEstimate {
    /// `∂_ρ D / Δ` at the reference (first) direction.
    pub gamma: C64,
    /// Largest relative deviation of the other directions from `gamma`.
    pub spread: f64,
    pub per_direction: Vec<(f64, C64, C64)>,
}

/// Transversality constant `γ = ∂_ρ D|_{ρ=0} / Δ(ξ₀, λ₀)`, compared across
/// directions.
pub fn gamma_transversality(evans: &EvansFunction, lop: &Lopatinski, directions: &[(f64, C64)], h: f64) -> Result<GammaEstimate> {
    if directions.is_empty() {
        return Err(Error::Invalid("no directions given".into()));
    }
    let ratios: Vec<(f64, C64, C64)> = directions
        .par_iter()
        .map(|&(x0, l0)| -> Result<(f64, C64, C64)> {
            let delta = lop.value(x0, l0)?;
            let slope = evans.polar_slope(x0, l0, h)?;
            let scale = lop.value(0.0, c(1.0))?.norm().max(1e-300);
            if delta.norm() < 1e-8 * scale {
                return Err(Error::DegenerateRoot(format!(
                    "Lopatinski determinant vanishes at direction ({x0}, {l0}); choose another direction"
                )));
            }
            Ok((x0, l0, slope / delta))
        })
        .collect::<Result<_>>()?;
    let gamma = ratios[0].2;
    let spread = ratios.iter().map(|r| (r.2 - gamma).norm() / gamma.norm()).fold(0.0, f64::max);
    Ok(GammaEstimate { gamma, spread, per_direction: ratios })
}

pub fn write_evans_csv(path: &Path, values: &[EvansValue]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["re_lambda", "im_lambda", "xi", "re_D", "im_D"])?;
    for v in values {
        w.write_record(&[v.lambda.re.to_string(), v.lambda.im.to_string(), v.xi.to_string(), v.value.re.to_string(), v.value.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::solve_profile;
    use crate::systems::ScalarBurgers;
    use crate::linalg::Eigen;

    fn burgers() -> EvansFunction {
        let sys: Arc<dyn FluxSystem> = Arc::new(ScalarBurgers { c: 0.7, d: 0.4 });
        let profile = Arc::new(solve_profile(sys.as_ref(), 0.0, 20.0, 2000).unwrap());
        EvansFunction::new(sys, profile).unwrap()
    }

    #[test]
    fn splitting_at_large_lambda() {
        let e = burgers();
        let lin = e.linearized(0.3, c(10.0));
        for g in [&lin.g_minus, &lin.g_plus] {
            let eig = Eigen::new(g).unwrap();
            assert_eq!(eig.values.iter().filter(|z| z.re < 0.0).count(), 1);
        }
        assert!((lin.g(-20.0) - &lin.g_minus).norm() <= 1e-6 * lin.g_minus.norm());
        assert!((lin.g(20.0) - &lin.g_plus).norm() <= 1e-6 * lin.g_plus.norm());
    }

    #[test]
    fn translation_zero_and_polar_origin() {
        let e = burgers();
        let slope = e.polar_slope(0.0, c(1.0), 1e-3).unwrap();
        let d0 = e.evans(0.0, c(0.0)).unwrap().value;
        assert!(d0.norm() <= 1e-10 * slope.norm(), "D(0,0) = {d0}");
        assert_eq!(e.polar_evans(0.0, 0.6, c(0.8)).unwrap().value, c(0.0));
    }

    #[test]
    fn polar_matches_cartesian() {
        let e = burgers();
        let p = e.polar_evans(0.5, 0.6, c(0.8)).unwrap().value;
        let q = e.evans(0.3, c(0.4)).unwrap().value;
        assert!((p - q).norm() <= 1e-8 * q.norm());
    }

    #[test]
    fn matching_point_independence() {
        let sys: Arc<dyn FluxSystem> = Arc::new(ScalarBurgers { c: 0.7, d: 0.4 });
        let profile = Arc::new(solve_profile(sys.as_ref(), 0.0, 20.0, 2000).unwrap());
        let base = EvansFunction::new(sys.clone(), profile.clone()).unwrap();
        let moved = EvansFunction::with_options(sys, profile, EvansOptions { matching_point: 5.0, ..EvansOptions::default() }).unwrap();
        for (xi, l) in [(0.4, C64::new(0.3, 0.2)), (0.0, c(0.7)), (1.0, C64::new(0.1, -0.5))] {
            let a = base.eval(xi, l).unwrap();
            let b = moved.eval(xi, l).unwrap();
            assert!((a - b).norm() <= 1e-8 * a.norm(), "{a} vs {b}");
        }
    }

    #[test]
    fn analytic_in_lambda() {
        let e = burgers();
        let (xi, l, h) = (0.5, C64::new(0.4, 0.3), 1e-4);
        let dx = (e.eval(xi, l + h).unwrap() - e.eval(xi, l - h).unwrap()) / (2.0 * h);
        let dy = (e.eval(xi, l + I * h).unwrap() - e.eval(xi, l - I * h).unwrap()) / (2.0 * h);
        assert!((dy - I * dx).norm() <= 1e-6 * dx.norm().max(1.0));
    }

    #[test]
    fn conjugation_symmetry_in_modulus() {
        let e = burgers();
        let a = e.eval(0.4, C64::new(0.3, 0.7)).unwrap();
        let b = e.eval(-0.4, C64::new(0.3, -0.7)).unwrap();
        assert!((a.norm() - b.norm()).abs() <= 1e-8 * a.norm());
    }
}
