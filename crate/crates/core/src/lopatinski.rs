//! Inviscid stability: the symbol `𝒜±(ξ, λ) = (λ + iξ df²(u±)) df¹(u±)⁻¹`
//! and the Lopatinski determinant built from its stable/unstable subspaces.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, continued_split, det, to_complex, CMat, CVec, SplitFailure, C64, I};
use crate::systems::{check_eps, check_hypotheses, sorted_real_eigen, FluxSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

#[derive(Debug, Clone)]
pub struct InviscidSymbol {
    pub side: Side,
    pub xi: f64,
    pub lambda: C64,
    pub matrix: CMat,
}

#[derive(Debug, Clone)]
pub struct LopatinskiValue {
    pub xi: f64,
    pub lambda: C64,
    pub value: C64,
    /// Continued stable basis of `𝒜₋` (c − 1 columns).
    pub basis_minus: CMat,
    /// Continued unstable basis of `𝒜₊` (n − c columns).
    pub basis_plus: CMat,
}

/// End-state data for evaluating `Δ` at one parameter value.
#[derive(Debug, Clone)]
pub struct Lopatinski {
    pub n: usize,
    pub c: usize,
    pub h3: f64,
    a1_inv: [CMat; 2],
    a2: [CMat; 2],
    /// Outgoing eigenvectors of `A¹₋` (negative speeds) and `A¹₊` (positive).
    refs: [Vec<CVec>; 2],
    jump_u: CVec,
    jump_f2: CVec,
}

fn idx(side: Side) -> usize {
    match side {
        Side::Minus => 0,
        Side::Plus => 1,
    }
}

impl Lopatinski {
    pub fn new(sys: &dyn FluxSystem, eps: f64) -> Result<Self> {
        check_eps(sys, eps)?;
        let report = check_hypotheses(sys, eps, None)?;
        if !(report.h1_ok && report.h2_dimension_check) {
            return Err(Error::Hypothesis(report.diagnostics.join("; ")));
        }
        let (um, up) = sys.end_states(eps);
        let mut a1_inv = Vec::new();
        let mut a2 = Vec::new();
        let mut refs = Vec::new();
        for (k, u) in [&um, &up].into_iter().enumerate() {
            let a1 = sys.df1(eps, u);
            let (vals, vecs) = sorted_real_eigen(&a1).ok_or_else(|| Error::Hypothesis("A1 not diagonalizable".into()))?;
            let inv = a1.clone().try_inverse().ok_or_else(|| Error::Hypothesis("singular A1".into()))?;
            a1_inv.push(to_complex(&inv));
            a2.push(to_complex(&sys.df2(eps, u)));
            let outgoing: Vec<CVec> = vals
                .iter()
                .enumerate()
                .filter(|(_, v)| if k == 0 { **v < 0.0 } else { **v > 0.0 })
                .map(|(j, _)| vecs.column(j).map(c))
                .collect();
            refs.push(outgoing);
        }
        let jump_u = (&up - &um).map(c);
        let jump_f2 = (sys.f2(eps, &up) - sys.f2(eps, &um)).map(c);
        Ok(Self {
            n: sys.dim(),
            c: report.lax_type_c,
            h3: report.h3_value,
            a1_inv: [a1_inv[0].clone(), a1_inv[1].clone()],
            a2: [a2[0].clone(), a2[1].clone()],
            refs: [refs[0].clone(), refs[1].clone()],
            jump_u,
            jump_f2,
        })
    }

    pub fn symbol_matrix(&self, side: Side, xi: f64, lambda: C64) -> CMat {
        let k = idx(side);
        (CMat::identity(self.n, self.n) * lambda + &self.a2[k] * (I * xi)) * &self.a1_inv[k]
    }

    /// Basis of the continued stable (minus) or unstable (plus) subspace,
    /// obtained by projecting the reference eigenvectors.
    pub fn basis(&self, side: Side, xi: f64, lambda: C64) -> Result<CMat> {
        let k = idx(side);
        let refs = &self.refs[k];
        let mut out = CMat::zeros(self.n, refs.len());
        if refs.is_empty() {
            return Ok(out);
        }
        let scale = (xi * xi + lambda.norm_sqr()).sqrt();
        if scale == 0.0 {
            for (j, r) in refs.iter().enumerate() {
                out.set_column(j, r);
            }
            return Ok(out);
        }
        let negative = side == Side::Minus;
        let (e, sel) = continued_split(|l| self.symbol_matrix(side, xi, l), lambda, scale, refs.len(), negative).map_err(|f| match f {
            SplitFailure::Count(_) => Error::Splitting { xi, re: lambda.re, im: lambda.im },
            SplitFailure::Collision(at) => Error::BranchPoint { tau: at.im },
        })?;
        let p = e.projector(&sel);
        for (j, r) in refs.iter().enumerate() {
            out.set_column(j, &(&p * r));
        }
        Ok(out)
    }

    pub fn eval(&self, xi: f64, lambda: C64) -> Result<LopatinskiValue> {
        let bm = self.basis(Side::Minus, xi, lambda)?;
        let bp = self.basis(Side::Plus, xi, lambda)?;
        let mut m = CMat::zeros(self.n, self.n);
        let (km, kp) = (bm.ncols(), bp.ncols());
        m.columns_mut(0, km).copy_from(&bm);
        m.columns_mut(km, kp).copy_from(&bp);
        m.set_column(self.n - 1, &(&self.jump_u * lambda + &self.jump_f2 * (I * xi)));
        Ok(LopatinskiValue { xi, lambda, value: det(&m), basis_minus: bm, basis_plus: bp })
    }

    pub fn value(&self, xi: f64, lambda: C64) -> Result<C64> {
        Ok(self.eval(xi, lambda)?.value)
    }

    /// `R(τ) = (τ + ξ A²) A⁻¹`, so that `𝒜(ξ, iτ) = i R(τ)`.
    fn real_symbol(&self, side: Side, xi: f64, tau: f64) -> DMatrix<f64> {
        let k = idx(side);
        let m = (CMat::identity(self.n, self.n) * c(tau) + &self.a2[k] * c(xi)) * &self.a1_inv[k];
        m.map(|z| z.re)
    }
}

pub fn symbol(sys: &dyn FluxSystem, eps: f64, side: Side, xi: f64, lambda: C64) -> Result<InviscidSymbol> {
    check_eps(sys, eps)?;
    let (um, up) = sys.end_states(eps);
    let u = if side == Side::Minus { um } else { up };
    let a1 = sys.df1(eps, &u);
    let inv = a1.try_inverse().ok_or_else(|| Error::Hypothesis("singular axial Jacobian".into()))?;
    let n = sys.dim();
    let matrix = (CMat::identity(n, n) * lambda + to_complex(&sys.df2(eps, &u)) * (I * xi)) * to_complex(&inv);
    Ok(InviscidSymbol { side, xi, lambda, matrix })
}

pub fn lopatinski_det(sys: &dyn FluxSystem, eps: f64, xi: f64, lambda: C64) -> Result<LopatinskiValue> {
    Lopatinski::new(sys, eps)?.eval(xi, lambda)
}

/// Largest relative defect of degree-one homogeneity over the samples and
/// the dilations `a ∈ {0.5, 2, 3}`.
pub fn homogeneity_check(sys: &dyn FluxSystem, eps: f64, samples: &[(f64, C64)]) -> Result<f64> {
    let lop = Lopatinski::new(sys, eps)?;
    let mut worst: f64 = 0.0;
    for &(xi, lambda) in samples {
        let base = lop.value(xi, lambda)?;
        for a in [0.5, 2.0, 3.0] {
            let scaled = lop.value(a * xi, lambda * a)?;
            let reference = base * a;
            if reference.norm() > 0.0 {
                worst = worst.max((scaled - reference).norm() / reference.norm());
            }
        }
    }
    Ok(worst)
}

/// Discriminant of the characteristic polynomial; changes sign exactly
/// where a real pair of eigenvalues turns complex.
fn discriminant(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        1 => 1.0,
        2 => {
            let t = m.trace();
            let d = m.determinant();
            t * t - 4.0 * d
        }
        3 => {
            let t = m.trace();
            let s = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
                + m[(1, 1)] * m[(2, 2)]
                - m[(1, 2)] * m[(2, 1)];
            let d = m.determinant();
            let (a, b, cc) = (-t, s, -d);
            18.0 * a * b * cc - 4.0 * a.powi(3) * cc + a * a * b * b - 4.0 * b.powi(3) - 27.0 * cc * cc
        }
        _ => {
            let e = crate::linalg::Eigen::new(&to_complex(m));
            match e {
                Ok(e) => {
                    let mut p = c(1.0);
                    for i in 0..e.values.len() {
                        for j in (i + 1)..e.values.len() {
                            let d = e.values[i] - e.values[j];
                            p *= d * d;
                        }
                    }
                    p.re
                }
                Err(_) => 0.0,
            }
        }
    }
}

/// Frequencies `τ` in `[−τ_max, τ_max]` where eigenvalues of `𝒜±(ξ₀, iτ)`
/// coalesce, located as sign changes of the characteristic discriminant
/// and refined by bisection. Sorted ascending.
pub fn branch_points(sys: &dyn FluxSystem, eps: f64, xi0: f64, tau_max: f64) -> Result<Vec<f64>> {
    let lop = Lopatinski::new(sys, eps)?;
    Ok(lop.branch_points(xi0, tau_max))
}

impl Lopatinski {
    pub fn branch_points(&self, xi0: f64, tau_max: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if self.n == 1 {
            return out;
        }
        for side in [Side::Minus, Side::Plus] {
            let f = |t: f64| discriminant(&self.real_symbol(side, xi0, t));
            let samples = 20_000;
            let h = 2.0 * tau_max / samples as f64;
            let mut t0 = -tau_max;
            let mut f0 = f(t0);
            for k in 1..=samples {
                let t1 = -tau_max + k as f64 * h;
                let f1 = f(t1);
                if f0 == 0.0 {
                    out.push(t0);
                } else if f0 * f1 < 0.0 {
                    let (mut a, mut b, mut fa) = (t0, t1, f0);
                    for _ in 0..200 {
                        let mid = 0.5 * (a + b);
                        let fm = f(mid);
                        if fm == 0.0 || (b - a) < 1e-15 * (1.0 + mid.abs()) {
                            a = mid;
                            b = mid;
                            break;
                        }
                        if fa * fm < 0.0 {
                            b = mid;
                        } else {
                            a = mid;
                            fa = fm;
                        }
                    }
                    out.push(0.5 * (a + b));
                }
                t0 = t1;
                f0 = f1;
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * (1.0 + a.abs()));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    /// Cutoff `τ_max`; `None` selects `50|ξ₀|`.
    pub tau_max: Option<f64>,
    /// Sampling step relative to `|ξ₀|`.
    pub step: f64,
    /// Exclusion radius around branch points.
    pub branch_radius: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { tau_max: None, step: 0.01, branch_radius: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImaginaryRoot {
    pub tau: f64,
    /// `∂_λ Δ(ξ₀, iτ)`.
    pub derivative: [f64; 2],
    pub simple: bool,
    pub near_branch: bool,
    /// `τ = 0` is excluded from the refined analysis.
    pub degenerate: bool,
    pub near_cutoff: bool,
    pub residual: f64,
}

impl ImaginaryRoot {
    /// Root usable for the refined coefficient computation.
    pub fn admissible(&self) -> bool {
        self.simple && !self.near_branch && !self.degenerate
    }
}

fn refine_real_root<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    // Illinois variant of regula falsi.
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        let t = (a * fb - b * fa) / (fb - fa);
        let ft = f(t);
        if ft == 0.0 || !ft.is_finite() {
            return t;
        }
        if ft * fb < 0.0 {
            a = b;
            fa = fb;
        } else {
            fa *= 0.5;
        }
        b = t;
        fb = ft;
        if (b - a).abs() < 1e-14 * (1.0 + b.abs()) {
            break;
        }
    }
    b
}

impl Lopatinski {
    /// Sampled `Δ(ξ₀, iτ)`.
    pub fn along_axis(&self, xi0: f64, taus: &[f64]) -> Vec<Result<C64>> {
        taus.par_iter().map(|&t| self.value(xi0, C64::new(0.0, t))).collect()
    }

    pub fn imaginary_root_scan(&self, xi0: f64, opts: &ScanOptions) -> Result<Vec<ImaginaryRoot>> {
        let tau_max = opts.tau_max.unwrap_or(50.0 * xi0.abs().max(1e-12));
        let bps = self.branch_points(xi0, tau_max);
        let mut edges = vec![-tau_max];
        edges.extend(bps.iter().copied());
        edges.push(tau_max);
        let step = (opts.step * xi0.abs()).max(1e-4);
        let mut roots = Vec::new();
        for w in edges.windows(2) {
            let (a, b) = (w[0] + opts.branch_radius, w[1] - opts.branch_radius);
            if b <= a {
                continue;
            }
            let m = (((b - a) / step).ceil() as usize).max(64);
            let taus: Vec<f64> = (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect();
            let vals: Vec<C64> = self.along_axis(xi0, &taus).into_iter().collect::<Result<_>>()?;
            let vmax = vals.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if vmax == 0.0 {
                continue;
            }
            // Best real rotation of the segment.
            let s2: C64 = vals.iter().map(|z| z * z).sum();
            let rot = C64::from_polar(1.0, -0.5 * s2.arg());
            let imag = vals.iter().map(|z| (z * rot).im.abs()).fold(0.0, f64::max);
            let mut found = Vec::new();
            if imag <= 1e-6 * vmax {
                let f = |t: f64| (self.value(xi0, C64::new(0.0, t)).map(|z| (z * rot).re)).unwrap_or(f64::NAN);
                for k in 0..m {
                    let (f0, f1) = ((vals[k] * rot).re, (vals[k + 1] * rot).re);
                    if f0 == 0.0 {
                        found.push(taus[k]);
                    } else if f0 * f1 < 0.0 {
                        found.push(refine_real_root(f, taus[k], taus[k + 1]));
                    }
                }
                if (vals[m] * rot).re == 0.0 {
                    found.push(taus[m]);
                }
            } else {
                // Genuinely complex along the segment: accept only local
                // minima of |Δ| that reach zero.
                let g = |t: f64| self.value(xi0, C64::new(0.0, t)).map(|z| z.norm()).unwrap_or(f64::INFINITY);
                for k in 1..m {
                    let (l, mid, r) = (vals[k - 1].norm(), vals[k].norm(), vals[k + 1].norm());
                    if mid <= l && mid <= r {
                        let (mut lo, mut hi) = (taus[k - 1], taus[k + 1]);
                        let gr = 0.5 * (5.0_f64.sqrt() - 1.0);
                        for _ in 0..120 {
                            let x1 = hi - gr * (hi - lo);
                            let x2 = lo + gr * (hi - lo);
                            if g(x1) < g(x2) {
                                hi = x2;
                            } else {
                                lo = x1;
                            }
                        }
                        let t = 0.5 * (lo + hi);
                        if g(t) <= 1e-10 * vmax {
                            found.push(t);
                        }
                    }
                }
            }
            for tau in found {
                let h = 1e-6 * tau.abs().max(xi0.abs()).max(1e-3);
                let dp = self.value(xi0, C64::new(0.0, tau + h))?;
                let dm = self.value(xi0, C64::new(0.0, tau - h))?;
                let deriv = (dp - dm) / (I * (2.0 * h));
                let residual = self.value(xi0, C64::new(0.0, tau))?.norm();
                let dscale = vmax / tau_max;
                roots.push(ImaginaryRoot {
                    tau,
                    derivative: [deriv.re, deriv.im],
                    simple: deriv.norm() > 1e-8 * dscale,
                    near_branch: bps.iter().any(|b| (b - tau).abs() < opts.branch_radius.max(1e-6)),
                    degenerate: tau.abs() <= 1e-9 * tau_max,
                    near_cutoff: tau.abs() > 0.95 * tau_max,
                    residual,
                });
            }
        }
        roots.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        roots.dedup_by(|a, b| (a.tau - b.tau).abs() < 1e-9 * (1.0 + a.tau.abs()));
        Ok(roots)
    }

    /// Flag for one-dimensional instability `Δ(0, 1) = 0`.
    pub fn one_dimensional_instability(&self) -> bool {
        self.h3.abs() < 1e-10
    }
}

pub fn imaginary_root_scan(sys: &dyn FluxSystem, eps: f64, xi0: f64, opts: &ScanOptions) -> Result<Vec<ImaginaryRoot>> {
    Lopatinski::new(sys, eps)?.imaginary_root_scan(xi0, opts)
}

/// Write `tau, re_delta, im_delta` along the imaginary axis.
pub fn write_scan_csv(path: &Path, lop: &Lopatinski, xi0: f64, taus: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau", "re_delta", "im_delta"])?;
    for (t, v) in taus.iter().zip(lop.along_axis(xi0, taus)) {
        match v {
            Ok(z) => w.write_record([format!("{t:.12e}"), format!("{:.12e}", z.re), format!("{:.12e}", z.im)])?,
            Err(Error::BranchPoint { .. }) => w.write_record([format!("{t:.12e}"), "nan".into(), "nan".into()])?,
            Err(e) => return Err(e),
        }
    }
    w.flush()?;
    Ok(())
}

/// Real vector helper used by tests and reports.
pub fn jump(sys: &dyn FluxSystem, eps: f64) -> DVector<f64> {
    let (um, up) = sys.end_states(eps);
    up - um
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{CoupledBurgers, IsentropicEuler, ScalarBurgers};

    #[test]
    fn scalar_closed_form() {
        let sys = ScalarBurgers { c: 0.7, d: 0.3 };
        let lop = Lopatinski::new(&sys, 0.0).unwrap();
        for (xi, l) in [(0.3, C64::new(1.0, 0.2)), (-1.0, C64::new(0.0, 2.0)), (2.0, C64::new(-0.5, 1.0))] {
            let want = l * -2.0 - I * (2.0 * 0.7 * xi);
            assert!((lop.value(xi, l).unwrap() - want).norm() < 1e-13);
        }
        let s = symbol(&sys, 0.0, Side::Plus, 0.5, C64::new(1.0, 1.0)).unwrap();
        let want = -(C64::new(1.0, 1.0) + I * (0.5 * (0.7 - 0.3)));
        assert!((s.matrix[(0, 0)] - want).norm() < 1e-14);
        assert_eq!(lop.value(0.0, c(0.0)).unwrap(), c(0.0));
    }

    #[test]
    fn scalar_root_scan() {
        let sys = ScalarBurgers { c: 0.7, d: 0.0 };
        let roots = imaginary_root_scan(&sys, 0.0, 1.0, &ScanOptions::default()).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].tau + 0.7).abs() < 1e-10);
        assert!(roots[0].admissible());
        let sys = ScalarBurgers { c: 0.0, d: 0.0 };
        let roots = imaginary_root_scan(&sys, 0.0, 1.0, &ScanOptions::default()).unwrap();
        assert_eq!(roots.len(), 1);
        assert!(roots[0].degenerate);
    }

    #[test]
    fn one_dimensional_relation() {
        for sys in [
            Box::new(CoupledBurgers::tuned()) as Box<dyn FluxSystem>,
            Box::new(IsentropicEuler { gamma: 1.4, mach: 1.5 }),
        ] {
            let lop = Lopatinski::new(sys.as_ref(), 0.0).unwrap();
            for l in [C64::new(1.0, 0.0), C64::new(0.3, 2.0), C64::new(0.0, -1.5)] {
                let d = lop.value(0.0, l).unwrap();
                assert!((d - l * lop.h3).norm() <= 1e-10 * (l * lop.h3).norm(), "{}", sys.name());
            }
        }
    }

    #[test]
    fn euler_branch_points() {
        let sys = IsentropicEuler { gamma: 1.4, mach: 1.5 };
        let bps = branch_points(&sys, 0.0, 1.0, 50.0).unwrap();
        let want = (1.5f64 * 1.5 - 1.0).sqrt();
        assert_eq!(bps.len(), 2, "{bps:?}");
        assert!((bps[0] + want).abs() < 1e-9 && (bps[1] - want).abs() < 1e-9);
    }

    #[test]
    fn conjugation_symmetry() {
        let sys = IsentropicEuler { gamma: 1.4, mach: 1.5 };
        let lop = Lopatinski::new(&sys, 0.0).unwrap();
        for (xi, l) in [(0.4, C64::new(0.5, 0.3)), (1.0, C64::new(0.2, -2.0))] {
            let a = lop.value(xi, l.conj()).unwrap();
            let b = lop.value(-xi, l).unwrap().conj();
            assert!((a - b).norm() < 1e-10 * a.norm());
        }
    }
}
