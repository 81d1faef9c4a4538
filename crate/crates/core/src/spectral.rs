//! Analytic spectral functions `D(ξ, λ)` and root finding in the λ-plane:
//! argument-principle winding numbers, Newton polishing and recursive
//! rectangle subdivision.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, I};

/// A function analytic in λ whose zeros are the spectrum at transverse
/// frequency ξ.
pub trait SpectralFunction: Send + Sync {
    fn eval(&self, xi: f64, lambda: C64) -> Result<C64>;
}

/// A one-parameter family `ε ↦ D_ε`, together with the neutral inviscid
/// root `τ*(ε)` at `ξ₀ = 1` that seeds the refined analysis.
pub trait SpectralFamily: Send + Sync {
    fn epsilon_range(&self) -> (f64, f64);
    fn member(&self, eps: f64) -> Result<Arc<dyn SpectralFunction>>;
    fn neutral_root(&self, eps: f64) -> Result<f64>;
}

/// Manufactured spectral function with a planted low-frequency root
/// `λ*(ξ) = iτξ − β(ε)ξ² + δξ³`:
///
/// `D = k·(λ − iτξ + β(ε)ξ² − δξ³)(1 + 0.2λ + 0.1iξ)`, `β(ε) = β₀ + β₁ε`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticFamily {
    pub tau: f64,
    pub beta0: [f64; 2],
    pub beta1: [f64; 2],
    pub delta: [f64; 2],
    /// Overall constant factor; coefficient extraction must not see it.
    pub scale: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct Synthetic {
    pub tau: f64,
    pub beta: C64,
    pub delta: C64,
    pub scale: C64,
}

impl SpectralFunction for Synthetic {
    fn eval(&self, xi: f64, lambda: C64) -> Result<C64> {
        let first = lambda - I * (self.tau * xi) + self.beta * (xi * xi) - self.delta * (xi * xi * xi);
        let second = C64::new(1.0, 0.0) + lambda * 0.2 + I * (0.1 * xi);
        Ok(self.scale * first * second)
    }
}

fn cplx(v: [f64; 2]) -> C64 {
    C64::new(v[0], v[1])
}

impl SyntheticFamily {
    pub fn at(&self, eps: f64) -> Synthetic {
        Synthetic {
            tau: self.tau,
            beta: cplx(self.beta0) + cplx(self.beta1) * eps,
            delta: cplx(self.delta),
            scale: cplx(self.scale),
        }
    }

    /// Exact slope of the critical curve `Re δ / ∂_ε Re β`.
    pub fn critical_slope(&self) -> f64 {
        self.delta[0] / self.beta1[0]
    }
}

impl SpectralFamily for SyntheticFamily {
    fn epsilon_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
    fn member(&self, eps: f64) -> Result<Arc<dyn SpectralFunction>> {
        Ok(Arc::new(self.at(eps)))
    }
    fn neutral_root(&self, _eps: f64) -> Result<f64> {
        Ok(self.tau)
    }
}

/// Winding number of `D(ξ, ·)` around a closed polyline (the last vertex
/// connects back to the first).
///
/// Edges are refined until consecutive arguments differ by less than π/4.
pub fn winding_number(f: &dyn SpectralFunction, xi: f64, contour: &[C64]) -> Result<i64> {
    if contour.len() < 3 {
        return Err(Error::Invalid("contour needs at least three vertices".into()));
    }
    let per_edge = 8;
    let mut pts = Vec::with_capacity(contour.len() * per_edge);
    for k in 0..contour.len() {
        let (a, b) = (contour[k], contour[(k + 1) % contour.len()]);
        for j in 0..per_edge {
            pts.push(a + (b - a) * (j as f64 / per_edge as f64));
        }
    }
    let vals: Vec<C64> = pts.par_iter().map(|&l| f.eval(xi, l)).collect::<Result<_>>()?;
    let scale = vals.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = 1e-8 * scale;
    let perimeter: f64 = (0..contour.len()).map(|k| (contour[(k + 1) % contour.len()] - contour[k]).norm()).sum();
    let check = |z: C64, at: C64| -> Result<()> {
        if z.norm() <= floor || !z.re.is_finite() {
            Err(Error::RootOnContour(format!("|D| = {:e} at λ = {}{:+}i", z.norm(), at.re, at.im)))
        } else {
            Ok(())
        }
    };
    for (z, l) in vals.iter().zip(&pts) {
        check(*z, *l)?;
    }
    let mut total = 0.0;
    for k in 0..pts.len() {
        let next = (k + 1) % pts.len();
        total += arg_increment(f, xi, pts[k], vals[k], pts[next], vals[next], 0, perimeter, &check)?;
    }
    Ok((total / (2.0 * std::f64::consts::PI)).round() as i64)
}

#[allow(clippy::too_many_arguments)]
fn arg_increment(
    f: &dyn SpectralFunction,
    xi: f64,
    a: C64,
    fa: C64,
    b: C64,
    fb: C64,
    depth: usize,
    perimeter: f64,
    check: &dyn Fn(C64, C64) -> Result<()>,
) -> Result<f64> {
    let d = (fb / fa).arg();
    if d.abs() < std::f64::consts::FRAC_PI_4 || depth > 14 || (b - a).norm() < 1e-12 * perimeter {
        return Ok(d);
    }
    let m = (a + b) * 0.5;
    let fm = f.eval(xi, m)?;
    check(fm, m)?;
    Ok(arg_increment(f, xi, a, fa, m, fm, depth + 1, perimeter, check)?
        + arg_increment(f, xi, m, fm, b, fb, depth + 1, perimeter, check)?)
}

/// Newton iteration on `D(ξ, ·)` with a centered-difference derivative.
pub fn newton_root(f: &dyn SpectralFunction, xi: f64, guess: C64, tol: f64, max_iter: usize) -> Result<C64> {
    let mut l = guess;
    for _ in 0..max_iter {
        let h = 1e-6 * (1.0 + l.norm());
        let v = f.eval(xi, l)?;
        let d = (f.eval(xi, l + h)? - f.eval(xi, l - h)?) / (2.0 * h);
        if d.norm() == 0.0 || !d.re.is_finite() {
            return Err(Error::DegenerateRoot(format!("vanishing derivative at λ = {l}")));
        }
        let step = v / d;
        l -= step;
        if step.norm() <= tol * (1.0 + l.norm()) {
            return Ok(l);
        }
    }
    Err(Error::BranchLost { last_xi: xi })
}

/// Axis-aligned rectangle in the λ-plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re_min, self.im_min),
            C64::new(self.re_max, self.im_min),
            C64::new(self.re_max, self.im_max),
            C64::new(self.re_min, self.im_max),
        ]
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.re_min && z.re <= self.re_max && z.im >= self.im_min && z.im <= self.im_max
    }

    fn size(&self) -> f64 {
        (self.re_max - self.re_min).max(self.im_max - self.im_min)
    }

    fn center(&self) -> C64 {
        C64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    /// Quarter the rectangle, splitting at a slightly off-center point
    /// shifted by `skew` (fraction of the width).
    fn quarter(&self, skew: f64) -> [Rect; 4] {
        let xm = self.re_min + (0.5 + skew) * (self.re_max - self.re_min);
        let ym = self.im_min + (0.5 + skew) * (self.im_max - self.im_min);
        [
            Rect { re_min: self.re_min, re_max: xm, im_min: self.im_min, im_max: ym },
            Rect { re_min: xm, re_max: self.re_max, im_min: self.im_min, im_max: ym },
            Rect { re_min: xm, re_max: self.re_max, im_min: ym, im_max: self.im_max },
            Rect { re_min: self.re_min, re_max: xm, im_min: ym, im_max: self.im_max },
        ]
    }

    fn inflate(&self, t: f64) -> Rect {
        let (w, h) = (self.re_max - self.re_min, self.im_max - self.im_min);
        Rect { re_min: self.re_min - t * w, re_max: self.re_max + t * w, im_min: self.im_min - t * h, im_max: self.im_max + t * h }
    }
}

/// All roots of `D(ξ, ·)` in `rect`, with multiplicity, by winding-number
/// subdivision followed by Newton polishing.
pub fn roots_in_rect(f: &dyn SpectralFunction, xi: f64, rect: Rect) -> Result<Vec<C64>> {
    // A root on the outer boundary is handled by nudging the window.
    let mut r = rect;
    for attempt in 0..4 {
        match winding_number(f, xi, &r.corners()) {
            Ok(count) => return subdivide(f, xi, r, count, 0, rect.size()),
            Err(Error::RootOnContour(_)) if attempt < 3 => r = r.inflate(0.0123 * (attempt + 1) as f64),
            Err(e) => return Err(e),
        }
    }
    Err(Error::RootOnContour("could not move the window boundary off a root".into()))
}

fn subdivide(f: &dyn SpectralFunction, xi: f64, rect: Rect, count: i64, depth: usize, top: f64) -> Result<Vec<C64>> {
    if count <= 0 {
        return Ok(vec![]);
    }
    if count == 1 {
        if let Ok(z) = newton_root(f, xi, rect.center(), 1e-13, 60) {
            if rect.inflate(1e-6).contains(z) {
                return Ok(vec![z]);
            }
        }
    }
    if depth > 24 || rect.size() < 1e-9 * top.max(1e-300) {
        let z = newton_root(f, xi, rect.center(), 1e-13, 60).unwrap_or(rect.center());
        return Ok(vec![z; count as usize]);
    }
    for skew in [0.0, 0.0173, -0.0291, 0.0417] {
        let quads = rect.quarter(skew);
        let counts: Result<Vec<i64>> = quads.iter().map(|q| winding_number(f, xi, &q.corners())).collect();
        match counts {
            Ok(cs) => {
                let mut out = Vec::new();
                for (q, c) in quads.iter().zip(cs) {
                    out.extend(subdivide(f, xi, *q, c, depth + 1, top)?);
                }
                return Ok(out);
            }
            Err(Error::RootOnContour(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RootOnContour("subdivision lines kept hitting roots".into()))
}

/// Closed polyline approximating a circle.
pub fn circle(center: C64, radius: f64, points: usize) -> Vec<C64> {
    (0..points)
        .map(|k| center + C64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / points as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Poly(Vec<C64>);
    impl SpectralFunction for Poly {
        fn eval(&self, _xi: f64, l: C64) -> Result<C64> {
            Ok(self.0.iter().map(|r| l - r).product())
        }
    }

    #[test]
    fn winding_counts_multiplicity() {
        let f = Poly(vec![C64::new(0.1, 0.1), C64::new(0.1, 0.1), C64::new(3.0, 0.0)]);
        assert_eq!(winding_number(&f, 0.0, &circle(C64::new(0.1, 0.1), 0.01, 16)).unwrap(), 2);
        assert_eq!(winding_number(&f, 0.0, &circle(C64::new(0.0, 0.0), 5.0, 32)).unwrap(), 3);
        assert_eq!(winding_number(&f, 0.0, &circle(C64::new(-2.0, 0.0), 1.0, 32)).unwrap(), 0);
    }

    #[test]
    fn rectangle_roots() {
        let want = [C64::new(0.3, -0.2), C64::new(-0.05, 1.1), C64::new(0.7, 0.7)];
        let f = Poly(want.to_vec());
        let rect = Rect { re_min: -0.1, re_max: 1.0, im_min: -1.0, im_max: 1.5 };
        let mut got = roots_in_rect(&f, 0.0, rect).unwrap();
        got.sort_by(|a, b| a.im.total_cmp(&b.im));
        let mut w = want.to_vec();
        w.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert_eq!(got.len(), 3);
        for (a, b) in got.iter().zip(&w) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn root_on_contour_is_reported() {
        let f = Poly(vec![C64::new(1.0, 0.0)]);
        let sq = [C64::new(1.0, -1.0), C64::new(2.0, -1.0), C64::new(2.0, 1.0), C64::new(1.0, 1.0)];
        assert!(matches!(winding_number(&f, 0.0, &sq), Err(Error::RootOnContour(_))));
    }
}
