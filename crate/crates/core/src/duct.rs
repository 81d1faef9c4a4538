//! Channel spectra in a duct of half-width `M` and the cascade of transverse
//! Hopf bifurcations they predict.
//!
//! Periodicity in `x₂` with period `2M` restricts the transverse frequency
//! to `ξ_k = πk/M`; the spectrum of the front in the duct is the union over
//! `k` of the zeros of `D(ξ_k, ·)`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{C64, I};
use crate::refined::{critical_curve, ser_c64, CriticalCurve, RefinedOptions};
use crate::spectral::{newton_root, roots_in_rect, Rect, SpectralFamily, SpectralFunction};

/// `ξ_k = πk/M` for `k = 0..=k_max`.
pub fn transverse_frequencies(m: f64, k_max: usize) -> Result<Vec<f64>> {
    check_width(m)?;
    Ok((0..=k_max).map(|k| PI * k as f64 / m).collect())
}

fn check_width(m: f64) -> Result<()> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Invalid(format!("duct half-width must be positive, got {m}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    /// `k = 0`: the front moves back and forth without cross-duct structure.
    Longitudinal,
    /// `k ≠ 0`: cellular modes varying across the duct.
    Transverse,
}

pub fn classify_mode(k: i64) -> ModeClass {
    if k == 0 {
        ModeClass::Longitudinal
    } else {
        ModeClass::Transverse
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChannelEigenvalue {
    pub k: i64,
    pub xi: f64,
    #[serde(serialize_with = "ser_c64")]
    pub lambda: C64,
    pub class: ModeClass,
}

/// Search window for [`channel_spectrum`]: a rectangle, optionally with a
/// small disk removed (typically the translation zero at the origin).
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub rect: Rect,
    pub exclude: Option<(C64, f64)>,
}

impl Window {
    pub fn rect(rect: Rect) -> Self {
        Self { rect, exclude: None }
    }

    fn keeps(&self, z: C64) -> bool {
        self.rect.contains(z) && self.exclude.is_none_or(|(c, r)| (z - c).norm() > r)
    }
}

/// Zeros of `D(ξ_k, ·)` in the window for every `k` in `ks` (negative `k`
/// allowed). For each `k > 0` in the list the mirror `−k` is added, so the
/// output carries both labels of every transverse pair.
pub fn channel_spectrum(f: &dyn SpectralFunction, m: f64, ks: &[i64], window: &Window) -> Result<Vec<ChannelEigenvalue>> {
    check_width(m)?;
    let mut labels: Vec<i64> = ks.iter().flat_map(|&k| if k == 0 { vec![0] } else { vec![k, -k] }).collect();
    labels.sort_unstable();
    labels.dedup();
    let per_k: Vec<Vec<ChannelEigenvalue>> = labels
        .par_iter()
        .map(|&k| -> Result<Vec<ChannelEigenvalue>> {
            let xi = PI * k as f64 / m;
            Ok(roots_in_rect(f, xi, window.rect)?
                .into_iter()
                .filter(|z| window.keeps(*z))
                .map(|lambda| ChannelEigenvalue { k, xi, lambda, class: classify_mode(k) })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<ChannelEigenvalue> = per_k.into_iter().flatten().collect();
    out.sort_by(|a, b| a.k.cmp(&b.k).then(b.lambda.re.total_cmp(&a.lambda.re)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CascadeMethod {
    Asymptotic,
    Direct,
}

/// Nondegeneracy of the crossing: `∂_ε Re λ > 0` and `Im λ ≠ 0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HopfCheck {
    pub d_eps_re_lambda: f64,
    pub im_lambda: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadeEvent {
    pub k: usize,
    /// Preferred value: direct when available.
    pub eps_k: f64,
    pub method: CascadeMethod,
    pub eps_k_asymptotic: Option<f64>,
    pub eps_k_direct: Option<f64>,
    /// `|asymptotic − direct| / |direct|` when both exist.
    pub deviation: Option<f64>,
    /// Imaginary part of the crossing eigenvalue with label `+k`.
    pub im_lambda_k: f64,
    /// `2π/|Im λ_k|`.
    pub period_k: f64,
    pub hopf: Option<HopfCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadePrediction {
    #[serde(rename = "M")]
    pub m: f64,
    /// Upper end of the scanned parameter range.
    pub eps_max: f64,
    pub events: Vec<CascadeEvent>,
    /// Slope of the linear fit of the critical curve through `(0, ε_c)`.
    pub slope: Option<f64>,
    /// Largest relative deviation of asymptotic `eps_k` from `ε_c + slope·ξ_k`.
    pub linear_deviation: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct CascadeOptions {
    pub k_max: usize,
    pub eps_max: f64,
    pub asymptotic: bool,
    pub direct: bool,
    /// Bisection tolerance as a fraction of the parameter range.
    pub bisection_tol: f64,
    /// Number of ε samples used to bracket a direct crossing.
    pub scan: usize,
    pub refined: RefinedOptions,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self { k_max: 3, eps_max: f64::INFINITY, asymptotic: true, direct: true, bisection_tol: 1e-4, scan: 24, refined: RefinedOptions::default() }
    }
}

/// Predict the parameter values `ε_k(M)` where the `±k` pair crosses the
/// imaginary axis, by interpolating the critical curve (asymptotic) and by
/// bisection on the channel spectrum (direct).
pub fn cascade(family: &dyn SpectralFamily, m: f64, opts: &CascadeOptions, curve: Option<&CriticalCurve>) -> Result<CascadePrediction> {
    check_width(m)?;
    let range = family.epsilon_range();
    let eps_cap = opts.eps_max.min(range.1);
    let xis: Vec<f64> = transverse_frequencies(m, opts.k_max)?.into_iter().skip(1).collect();

    let owned;
    let curve = match (opts.asymptotic, curve) {
        (false, _) => None,
        (true, Some(c)) => Some(c),
        (true, None) => match critical_curve(family, &xis, &opts.refined) {
            Ok(c) => {
                owned = c;
                Some(&owned)
            }
            Err(Error::NotApplicable(_)) => None,
            Err(e) => return Err(e),
        },
    };

    let events: Vec<Option<CascadeEvent>> = xis
        .par_iter()
        .enumerate()
        .map(|(j, &xi)| -> Result<Option<CascadeEvent>> {
            let k = j + 1;
            let asym = curve.and_then(|c| c.eps_at(xi)).filter(|e| *e <= eps_cap);
            let direct = if opts.direct { direct_crossing(family, xi, eps_cap, opts)? } else { None };
            let (eps_k, method, lambda_hint) = match (direct, asym) {
                (Some((e, l)), _) => (e, CascadeMethod::Direct, Some(l)),
                (None, Some(e)) => (e, CascadeMethod::Asymptotic, None),
                (None, None) => return Ok(None),
            };
            let lambda = match lambda_hint {
                Some(l) => l,
                None => {
                    let im = curve
                        .and_then(|c| c.samples.iter().find(|s| (s.0 - xi).abs() < 1e-12 * xi).map(|s| s.2))
                        .unwrap_or(family.neutral_root(eps_k)? * xi);
                    newton_root(family.member(eps_k)?.as_ref(), xi, I * im, 1e-13, 60)?
                }
            };
            let hopf = hopf_check(family, xi, eps_k, lambda).ok();
            let deviation = match (asym, direct) {
                (Some(a), Some((d, _))) => Some((a - d).abs() / d.abs().max(1e-300)),
                _ => None,
            };
            Ok(Some(CascadeEvent {
                k,
                eps_k,
                method,
                eps_k_asymptotic: asym,
                eps_k_direct: direct.map(|d| d.0),
                deviation,
                im_lambda_k: lambda.im,
                period_k: 2.0 * PI / lambda.im.abs(),
                hopf,
            }))
        })
        .collect::<Result<_>>()?;
    let mut events: Vec<CascadeEvent> = events.into_iter().flatten().collect();
    events.sort_by(|a, b| a.eps_k.total_cmp(&b.eps_k));

    let (slope, linear_deviation) = match curve {
        Some(c) => {
            let dev = events
                .iter()
                .filter_map(|e| {
                    let a = e.eps_k_asymptotic?;
                    let lin = c.eps_c + c.slope * PI * e.k as f64 / m;
                    Some((a - lin).abs() / a.abs().max(1e-300))
                })
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
            (Some(c.slope), dev)
        }
        None => (None, None),
    };
    Ok(CascadePrediction { m, eps_max: eps_cap, events, slope, linear_deviation })
}

/// Rectangle around the imaginary axis where the neutral pair of mode
/// `ξ` is looked for. The left edge stays at `−ξ²/2`, clear of the
/// essential spectrum of the viscous end states.
fn axis_window(tau: f64, xi: f64) -> Rect {
    let im = tau * xi;
    let half = 0.5 * im.abs().max(xi);
    Rect { re_min: -0.5 * xi * xi, re_max: 0.25 * im.abs().max(xi), im_min: im - half, im_max: im + half }
}

/// Largest real part of the roots near the imaginary axis, or `None`
/// when the window is empty.
fn axis_growth(family: &dyn SpectralFamily, xi: f64, eps: f64) -> Result<Option<C64>> {
    let tau = family.neutral_root(eps)?;
    let f = family.member(eps)?;
    let roots = roots_in_rect(f.as_ref(), xi, axis_window(tau, xi))?;
    Ok(roots.into_iter().max_by(|a, b| a.re.total_cmp(&b.re)))
}

fn unstable(root: &Option<C64>) -> bool {
    root.is_some_and(|z| z.re > 0.0)
}

/// First stable-to-unstable transition of mode `ξ` in the parameter
/// range, by a coarse scan followed by bisection.
fn direct_crossing(family: &dyn SpectralFamily, xi: f64, eps_cap: f64, opts: &CascadeOptions) -> Result<Option<(f64, C64)>> {
    let range = family.epsilon_range();
    let span = range.1 - range.0;
    let lo = range.0 + 1e-3 * span;
    let hi = eps_cap.min(range.1 - 1e-3 * span);
    if hi <= lo {
        return Ok(None);
    }
    let n = opts.scan.max(2);
    let pts: Vec<f64> = (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect();
    let vals: Vec<Option<C64>> = pts.par_iter().map(|&e| axis_growth(family, xi, e)).collect::<Result<_>>()?;
    let Some(j) = (1..n).find(|&j| !unstable(&vals[j - 1]) && unstable(&vals[j])) else {
        return Ok(None);
    };
    let (mut a, mut b) = (pts[j - 1], pts[j]);
    let mut root_b = vals[j].expect("unstable sample has a root");
    let tol = opts.bisection_tol * span;
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let g = axis_growth(family, xi, mid)?;
        if unstable(&g) {
            b = mid;
            root_b = g.expect("unstable sample has a root");
        } else {
            a = mid;
        }
    }
    let eps = 0.5 * (a + b);
    let lambda = newton_root(family.member(eps)?.as_ref(), xi, root_b, 1e-13, 60).unwrap_or(root_b);
    Ok(Some((eps, lambda)))
}

/// `∂_ε Re λ` by Newton continuation of the crossing root to `ε ± s`.
pub fn hopf_check(family: &dyn SpectralFamily, xi: f64, eps: f64, lambda: C64) -> Result<HopfCheck> {
    let range = family.epsilon_range();
    let s = 1e-3 * (range.1 - range.0);
    let (lo, hi) = ((eps - s).max(range.0), (eps + s).min(range.1));
    let root = |e: f64| newton_root(family.member(e)?.as_ref(), xi, lambda, 1e-13, 60);
    let (rl, rh) = (root(lo)?, root(hi)?);
    let d = (rh.re - rl.re) / (hi - lo);
    Ok(HopfCheck { d_eps_re_lambda: d, im_lambda: lambda.im, ok: d > 0.0 && lambda.im.abs() > 1e-8 * (1.0 + lambda.norm()) })
}

pub fn write_cascade_csv(path: &Path, pred: &CascadePrediction) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "eps_k_asym", "eps_k_direct", "im_lambda_k", "period_k"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in &pred.events {
        w.write_record(&[e.k.to_string(), opt(e.eps_k_asymptotic), opt(e.eps_k_direct), e.im_lambda_k.to_string(), e.period_k.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
