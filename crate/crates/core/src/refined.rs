//! Low-frequency expansion of the neutral root branch
//! `λ*(ξ) = iτ*ξ − βξ² + δξ³ + O(ξ⁴)` and the critical curve `ε = 𝓔(ξ)`
//! on which it crosses the imaginary axis.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::evans::{EvansFunction, EvansOptions};
use crate::linalg::{least_squares_complex, C64, I};
use crate::lopatinski::{Lopatinski, ScanOptions};
use crate::profiles::{solve_profile_with, ProfileOptions};
use crate::spectral::{circle, newton_root, winding_number, SpectralFamily, SpectralFunction};
use crate::systems::{check_eps, FluxSystem};

pub(crate) fn ser_c64<S: Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RefinedCoefficients {
    pub eps: f64,
    pub tau_star: f64,
    #[serde(serialize_with = "ser_c64")]
    pub beta: C64,
    #[serde(serialize_with = "ser_c64")]
    pub delta: C64,
    pub d_eps_re_beta: f64,
    pub fit_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RefinedOptions {
    /// Base radial step for the `ρ` differences.
    pub h: f64,
    pub xi_max: f64,
    /// Number of branch samples on `(0, xi_max]`.
    pub samples: usize,
    /// Check each branch root with a small winding contour.
    pub verify_unique: bool,
}

impl Default for RefinedOptions {
    fn default() -> Self {
        Self { h: 1e-2, xi_max: 0.2, samples: 10, verify_unique: true }
    }
}

/// `g(ρ, λ₀) = D(ρ, ρλ₀)/ρ` along `ξ₀ = 1`.
fn radial_quotient(f: &dyn SpectralFunction, rho: f64, lambda0: C64) -> Result<C64> {
    Ok(f.eval(rho, lambda0 * rho)? / rho)
}

/// Refined coefficient `β = D_ρρ / (2 D_ρλ)` at `(ξ₀, λ₀) = (1, iτ*)`.
///
/// Along `ξ₀ = 1` write `D(ρ, ρλ₀) = ρ g(ρ, λ₀)`. The neutral root of
/// `g(0, ·)` moves as `λ₀(ρ) = iτ* − ρ g_ρ/g_λ`, so matching the `−ξ²β`
/// term gives `β = g_ρ/g_λ = D_ρρ/(2D_ρλ)`. Both derivatives are taken from
/// samples at `ρ = h, h/2, h/4` with two levels of Richardson extrapolation;
/// `g_λ` uses a centered difference along the imaginary direction.
pub fn beta_coefficient(f: &dyn SpectralFunction, tau: f64, h: f64) -> Result<C64> {
    let l0 = I * tau;
    let k = 1e-2 * h.max(1e-3).sqrt();
    let rhos = [h, 0.5 * h, 0.25 * h];
    let rows: Vec<(C64, C64, C64)> = rhos
        .par_iter()
        .map(|&r| -> Result<(C64, C64, C64)> {
            Ok((
                radial_quotient(f, r, l0)?,
                radial_quotient(f, r, l0 + I * k)?,
                radial_quotient(f, r, l0 - I * k)?,
            ))
        })
        .collect::<Result<_>>()?;
    // g(ρ, iτ*) = g_ρ ρ + O(ρ²), since g(0, iτ*) = γΔ(1, iτ*) = 0.
    let g_rho = richardson_const([rows[0].0 / rhos[0], rows[1].0 / rhos[1], rows[2].0 / rhos[2]]);
    // ∂_λ along the imaginary direction: (g(λ+ik) − g(λ−ik)) / (2ik).
    let dl = |r: &(C64, C64, C64)| (r.1 - r.2) / (I * (2.0 * k));
    let g_lambda = richardson_const([dl(&rows[0]), dl(&rows[1]), dl(&rows[2])]);
    let scale = radial_quotient(f, h, l0 + 1.0)?.norm();
    if g_lambda.norm() <= 1e-8 * scale {
        return Err(Error::DegenerateRoot(format!("∂_λ D vanishes at τ* = {tau}: the neutral root is not simple")));
    }
    Ok(g_rho / g_lambda)
}

/// Extrapolate `v(ρ) = v₀ + v₁ρ + v₂ρ² + …` sampled at `h, h/2, h/4` to `ρ = 0`.
fn richardson_const(v: [C64; 3]) -> C64 {
    let a = v[1] * 2.0 - v[0];
    let b = v[2] * 2.0 - v[1];
    (b * 4.0 - a) / 3.0
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BranchSample {
    pub xi: f64,
    #[serde(serialize_with = "ser_c64")]
    pub lambda: C64,
}

/// Uniform grid of `count` points on `(0, xi_max]`.
pub fn branch_grid(xi_max: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|j| xi_max * j as f64 / count as f64).collect()
}

/// Continue the root `λ*(ξ)` of `D(ξ, ·)` that leaves the origin as `iτ*ξ`.
pub fn root_branch(f: &dyn SpectralFunction, tau: f64, xis: &[f64], verify_unique: bool) -> Result<Vec<BranchSample>> {
    let mut out: Vec<BranchSample> = Vec::with_capacity(xis.len());
    let mut last_good = 0.0;
    for &xi in xis {
        let guess = match out.len() {
            0 => I * (tau * xi),
            1 => out[0].lambda * (xi / out[0].xi),
            n => {
                // Quadratic extrapolation through the last three roots.
                let (p0, p1, p2) = (&out[n.saturating_sub(3).min(n - 2)], &out[n - 2], &out[n - 1]);
                if n >= 3 {
                    let (x0, x1, x2) = (p0.xi, p1.xi, p2.xi);
                    let l0 = (xi - x1) * (xi - x2) / ((x0 - x1) * (x0 - x2));
                    let l1 = (xi - x0) * (xi - x2) / ((x1 - x0) * (x1 - x2));
                    let l2 = (xi - x0) * (xi - x1) / ((x2 - x0) * (x2 - x1));
                    p0.lambda * l0 + p1.lambda * l1 + p2.lambda * l2
                } else {
                    p2.lambda + (p2.lambda - p1.lambda) * ((xi - p2.xi) / (p2.xi - p1.xi))
                }
            }
        };
        let root = newton_root(f, xi, guess, 1e-13, 40).map_err(|_| Error::BranchLost { last_xi: last_good })?;
        let drift = (root - guess).norm();
        if drift > 0.2 * xi.abs() * (1.0 + tau.abs()) {
            return Err(Error::BranchLost { last_xi: last_good });
        }
        if verify_unique {
            let radius = 0.1 * xi.abs() * (1.0 + tau.abs());
            let count = winding_number(f, xi, &circle(root, radius, 16))?;
            if count != 1 {
                return Err(Error::DegenerateRoot(format!("{count} roots within {radius:e} of λ = {root} at ξ = {xi}")));
            }
        }
        last_good = xi;
        out.push(BranchSample { xi, lambda: root });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct BranchFit {
    pub tau: f64,
    pub beta: C64,
    pub delta: C64,
    /// RMS fit residual relative to the largest sample modulus.
    pub residual: f64,
    pub condition: f64,
}

/// Least-squares fit `λ = c₁ξ + c₂ξ² + … + c₆ξ⁶` with free complex
/// coefficients; `c₁ = iτ*`, `c₂ = −β`, `c₃ = δ`. Samples on both signs of
/// ξ separate the odd and even terms far better than a one-sided grid.
pub fn fit_branch(samples: &[BranchSample]) -> Result<BranchFit> {
    const DEGREE: usize = 6;
    if samples.len() < 8 {
        return Err(Error::Fit(format!("{} branch samples, need at least 8", samples.len())));
    }
    let xmax = samples.iter().map(|s| s.xi.abs()).fold(0.0, f64::max);
    let a = DMatrix::from_fn(samples.len(), DEGREE, |i, j| (samples[i].xi / xmax).powi(j as i32 + 1));
    let b: Vec<C64> = samples.iter().map(|s| s.lambda).collect();
    let (coef, condition) = least_squares_complex(&a, &b)?;
    if condition > 1e8 {
        return Err(Error::Fit(format!("condition number {condition:e}; use a smaller xi_max")));
    }
    let c: Vec<C64> = coef.iter().enumerate().map(|(j, z)| z / xmax.powi(j as i32 + 1)).collect();
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let rss: f64 = samples
        .iter()
        .map(|s| {
            let fit: C64 = (0..DEGREE).map(|j| c[j] * s.xi.powi(j as i32 + 1)).sum();
            (fit - s.lambda).norm_sqr()
        })
        .sum();
    Ok(BranchFit {
        tau: c[0].im,
        beta: -c[1],
        delta: c[2],
        residual: (rss / samples.len() as f64).sqrt() / scale,
        condition,
    })
}

/// `δ` from the cubic term of the branch fit, with its residual.
pub fn delta_coefficient(f: &dyn SpectralFunction, tau: f64, opts: &RefinedOptions) -> Result<(C64, f64)> {
    let grid = branch_grid(opts.xi_max, opts.samples);
    let mut samples = root_branch(f, tau, &grid, opts.verify_unique)?;
    let neg: Vec<f64> = grid.iter().map(|x| -x).collect();
    samples.extend(root_branch(f, tau, &neg, opts.verify_unique)?);
    let fit = fit_branch(&samples)?;
    Ok((fit.delta, fit.residual))
}

/// Centered `ε` step used for `∂_ε` differences.
pub fn eps_step(range: (f64, f64)) -> f64 {
    1e-3 * (range.1 - range.0)
}

pub fn beta_at(family: &dyn SpectralFamily, eps: f64, h: f64) -> Result<C64> {
    let tau = family.neutral_root(eps)?;
    beta_coefficient(family.member(eps)?.as_ref(), tau, h)
}

/// Centered difference of `Re β` in `ε`; one-sided at the ends of the range.
pub fn d_eps_re_beta(family: &dyn SpectralFamily, eps: f64, h: f64) -> Result<f64> {
    let range = family.epsilon_range();
    let s = eps_step(range);
    let lo = (eps - s).max(range.0);
    let hi = (eps + s).min(range.1);
    Ok((beta_at(family, hi, h)?.re - beta_at(family, lo, h)?.re) / (hi - lo))
}

pub fn refined_coefficients(family: &dyn SpectralFamily, eps: f64, opts: &RefinedOptions) -> Result<RefinedCoefficients> {
    let tau = family.neutral_root(eps)?;
    let f = family.member(eps)?;
    let beta = beta_coefficient(f.as_ref(), tau, opts.h)?;
    let (delta, fit_residual) = delta_coefficient(f.as_ref(), tau, opts)?;
    Ok(RefinedCoefficients { eps, tau_star: tau, beta, delta, d_eps_re_beta: d_eps_re_beta(family, eps, opts.h)?, fit_residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalCurve {
    /// Parameter where `Re β` vanishes.
    pub eps_c: f64,
    pub tau_star: f64,
    #[serde(serialize_with = "ser_c64")]
    pub delta: C64,
    pub d_eps_re_beta: f64,
    /// `(ξ, 𝓔(ξ), Im λ*)` on the curve.
    pub samples: Vec<(f64, f64, f64)>,
    /// Least-squares slope of `𝓔(ξ) − ε_c` through the origin.
    pub slope: f64,
    /// `Re δ / ∂_ε Re β`, absent when `Re δ` is not generic.
    pub predicted_slope: Option<f64>,
}

impl CriticalCurve {
    /// Linear interpolation of `𝓔` (linear through `(0, ε_c)` below the grid).
    pub fn eps_at(&self, xi: f64) -> Option<f64> {
        let xi = xi.abs();
        let mut prev = (0.0, self.eps_c);
        for &(x, e, _) in &self.samples {
            if xi <= x {
                return Some(prev.1 + (e - prev.1) * (xi - prev.0) / (x - prev.0));
            }
            prev = (x, e);
        }
        None
    }
}

/// Locate `ε_c` with `Re β(ε_c) = 0` by a sweep over the family range
/// followed by secant refinement.
pub fn beta_crossing(family: &dyn SpectralFamily, h: f64, sweep: usize) -> Result<f64> {
    let (lo, hi) = family.epsilon_range();
    let pts: Vec<f64> = (0..sweep).map(|j| lo + (hi - lo) * (j as f64 + 0.5) / sweep as f64).collect();
    let vals: Vec<Result<f64>> = pts.par_iter().map(|&e| beta_at(family, e, h).map(|b| b.re)).collect();
    let mut bracket = None;
    for j in 1..pts.len() {
        if let (Ok(a), Ok(b)) = (&vals[j - 1], &vals[j]) {
            if a.signum() != b.signum() {
                bracket = Some((pts[j - 1], *a, pts[j], *b));
                break;
            }
        }
    }
    let (mut a, mut fa, mut b, mut fb) =
        bracket.ok_or_else(|| Error::NotApplicable("Re β does not change sign over the parameter range".into()))?;
    // Illinois iteration keeps the bracket.
    let tol = 1e-10 * (hi - lo);
    let mut side = 0;
    for _ in 0..60 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = beta_at(family, c, h)?.re;
        if fc == 0.0 || (b - a).abs() < tol {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < tol {
            return Ok(0.5 * (a + b));
        }
    }
    Ok(0.5 * (a + b))
}

/// Solve `Re λ*(ξ; ε) = 0` in `ε` for every `ξ` on the grid.
pub fn critical_curve(family: &dyn SpectralFamily, xis: &[f64], opts: &RefinedOptions) -> Result<CriticalCurve> {
    let eps_c = beta_crossing(family, opts.h, 12)?;
    let coeffs = refined_coefficients(family, eps_c, opts)?;
    let generic = coeffs.delta.re.abs() > 1e-4 * coeffs.delta.norm();
    let predicted_slope = generic.then(|| coeffs.delta.re / coeffs.d_eps_re_beta);
    let slope_guess = coeffs.delta.re / coeffs.d_eps_re_beta;
    let range = family.epsilon_range();

    let mut samples: Vec<(f64, f64, f64)> = Vec::new();
    // Warm starts: ε and λ along the curve.
    let mut prev: Option<(f64, f64, C64)> = None;
    for &xi in xis {
        let (eps0, lam0) = match prev {
            Some((x, e, l)) => (eps_c + (e - eps_c) * xi / x, l * (xi / x)),
            None => (eps_c + slope_guess * xi, I * (coeffs.tau_star * xi) + coeffs.delta * xi.powi(3) - C64::new(0.0, coeffs.beta.im) * xi * xi),
        };
        let (eps, lam) = solve_neutral(family, xi, eps0, lam0, range)?;
        samples.push((xi, eps, lam.im));
        prev = Some((xi, eps, lam));
    }
    let num: f64 = samples.iter().map(|(x, e, _)| x * (e - eps_c)).sum();
    let den: f64 = samples.iter().map(|(x, _, _)| x * x).sum();
    Ok(CriticalCurve {
        eps_c,
        tau_star: coeffs.tau_star,
        delta: coeffs.delta,
        d_eps_re_beta: coeffs.d_eps_re_beta,
        samples,
        slope: num / den,
        predicted_slope,
    })
}

/// Secant iteration in `ε` on `Re λ*(ξ; ε)` with warm-started Newton in λ.
fn solve_neutral(family: &dyn SpectralFamily, xi: f64, eps0: f64, lam0: C64, range: (f64, f64)) -> Result<(f64, C64)> {
    let root_at = |eps: f64, guess: C64| -> Result<C64> {
        check_range(eps, range)?;
        let f = family.member(eps)?;
        newton_root(f.as_ref(), xi, guess, 1e-13, 40).map_err(|_| Error::BranchLost { last_xi: xi })
    };
    let step = eps_step(range).max(1e-6);
    let (mut e0, mut e1) = (eps0, eps0 + step);
    let mut l0 = root_at(e0, lam0)?;
    let mut l1 = root_at(e1, l0)?;
    for _ in 0..40 {
        if l1.re == l0.re {
            break;
        }
        let e2 = e1 - l1.re * (e1 - e0) / (l1.re - l0.re);
        let l2 = root_at(e2, l1 + (l1 - l0) * ((e2 - e1) / (e1 - e0)))?;
        e0 = e1;
        l0 = l1;
        e1 = e2;
        l1 = l2;
        if (e1 - e0).abs() < 1e-12 * (range.1 - range.0) || l1.re.abs() < 1e-15 {
            return Ok((e1, l1));
        }
    }
    if l1.re.abs() < 1e-10 {
        Ok((e1, l1))
    } else {
        Err(Error::BranchLost { last_xi: xi })
    }
}

fn check_range(eps: f64, range: (f64, f64)) -> Result<()> {
    if eps < range.0 || eps > range.1 || !eps.is_finite() {
        return Err(Error::Domain { value: eps, lo: range.0, hi: range.1 });
    }
    Ok(())
}

pub fn write_branch_csv(path: &Path, samples: &[BranchSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["xi", "re_lambda", "im_lambda"])?;
    for s in samples {
        w.write_record(&[s.xi.to_string(), s.lambda.re.to_string(), s.lambda.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// The Evans functions of a [`FluxSystem`] family, with profiles solved on
/// demand and cached per parameter value.
pub struct EvansFamily {
    sys: Arc<dyn FluxSystem>,
    pub profile_opts: ProfileOptions,
    pub evans_opts: EvansOptions,
    /// Preferred neutral root when Δ has several admissible ones.
    pub tau_hint: Option<f64>,
    cache: Mutex<HashMap<u64, Arc<EvansFunction>>>,
}

impl EvansFamily {
    pub fn new(sys: Arc<dyn FluxSystem>) -> Self {
        Self {
            sys,
            profile_opts: ProfileOptions::default(),
            evans_opts: EvansOptions::default(),
            tau_hint: None,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn system(&self) -> &Arc<dyn FluxSystem> {
        &self.sys
    }

    pub fn evans(&self, eps: f64) -> Result<Arc<EvansFunction>> {
        check_eps(self.sys.as_ref(), eps)?;
        if let Some(e) = self.cache.lock().unwrap().get(&eps.to_bits()) {
            return Ok(e.clone());
        }
        let profile = Arc::new(solve_profile_with(self.sys.as_ref(), eps, &self.profile_opts)?);
        let e = Arc::new(EvansFunction::with_options(self.sys.clone(), profile, self.evans_opts)?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() > 256 {
            cache.clear();
        }
        cache.insert(eps.to_bits(), e.clone());
        Ok(e)
    }
}

impl SpectralFamily for EvansFamily {
    fn epsilon_range(&self) -> (f64, f64) {
        self.sys.epsilon_range()
    }

    fn member(&self, eps: f64) -> Result<Arc<dyn SpectralFunction>> {
        Ok(self.evans(eps)?)
    }

    fn neutral_root(&self, eps: f64) -> Result<f64> {
        let lop = Lopatinski::new(self.sys.as_ref(), eps)?;
        let roots: Vec<f64> = lop.imaginary_root_scan(1.0, &ScanOptions::default())?.into_iter().filter(|r| r.admissible()).map(|r| r.tau).collect();
        let pick = match self.tau_hint {
            Some(t) => roots.iter().copied().min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs())),
            None => roots.iter().copied().filter(|t| *t > 0.0).min_by(|a, b| a.total_cmp(b)).or(roots.first().copied()),
        };
        pick.ok_or_else(|| Error::NotApplicable(format!("no simple imaginary root of the Lopatinski determinant at ε = {eps}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SyntheticFamily;

    fn planted() -> SyntheticFamily {
        SyntheticFamily { tau: 0.8, beta0: [0.3, -0.1], beta1: [-1.0, 0.2], delta: [-0.4, 0.2], scale: [1.3, -0.4] }
    }

    #[test]
    fn synthetic_beta_and_branch() {
        let fam = planted();
        let f = fam.at(0.0);
        let beta = beta_coefficient(&f, fam.tau, 1e-2).unwrap();
        assert!((beta - C64::new(0.3, -0.1)).norm() < 1e-6, "{beta}");
        let samples = root_branch(&f, fam.tau, &branch_grid(0.2, 10), true).unwrap();
        let fit = fit_branch(&samples).unwrap();
        assert!((fit.tau - 0.8).abs() < 1e-8);
        assert!((fit.beta - C64::new(0.3, -0.1)).norm() < 1e-8);
        assert!((fit.delta - C64::new(-0.4, 0.2)).norm() < 1e-7);
    }

    #[test]
    fn scale_invariance() {
        let fam = planted();
        let mut scaled = fam;
        scaled.scale = [7.3 * fam.scale[0], 7.3 * fam.scale[1]];
        let a = beta_coefficient(&fam.at(0.1), fam.tau, 1e-2).unwrap();
        let b = beta_coefficient(&scaled.at(0.1), fam.tau, 1e-2).unwrap();
        assert!((a - b).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn synthetic_critical_curve() {
        let fam = planted();
        let xis = branch_grid(0.1, 5);
        let curve = critical_curve(&fam, &xis, &RefinedOptions::default()).unwrap();
        // Re β(ε) = 0.3 − ε vanishes at 0.3; Re λ* = −ξ² Re β + ξ³ Re δ.
        assert!((curve.eps_c - 0.3).abs() < 1e-8);
        let want = fam.critical_slope();
        for &(xi, e, _) in &curve.samples {
            assert!((e - (0.3 + want * xi)).abs() < 1e-6);
        }
        assert!((curve.slope - want).abs() < 1e-6);
    }
}
