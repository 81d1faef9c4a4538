//! Standing viscous shock profiles `u' = f¹(u) − f¹(u₋)`.
//!
//! The connection is found by shooting: the unstable manifold of `u₋` and
//! the stable manifold of `u₊` are parameterized by spheres of radius
//! `1e-6` in the respective linear eigenspaces, both are integrated to the
//! section where the Lax-family component crosses its midpoint, and the
//! mismatch on the section is driven to zero by Newton's method.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{integrate_until, OdeOptions, Stepper};
use crate::systems::{check_eps, check_hypotheses, sorted_real_eigen, FluxSystem};

const SHOOT_RADIUS: f64 = 1e-6;

/// A discretized standing-wave connection on a uniform grid.
#[derive(Debug, Clone)]
pub struct ShockProfile {
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub derivative_values: Vec<DVector<f64>>,
    /// `ū'' = A¹(ū)ū'` at the nodes.
    pub second_values: Vec<DVector<f64>>,
    pub eps: f64,
    pub eta: f64,
    /// `(u₋, u₊)`.
    pub endpoints: (DVector<f64>, DVector<f64>),
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    /// Half-length `X` of the window; `None` selects `20/η`.
    pub half_length: Option<f64>,
    /// Number of grid intervals.
    pub grid_size: usize,
    /// Location where the phase condition is imposed.
    pub phase: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { half_length: None, grid_size: 2000, phase: 0.0 }
    }
}

impl ShockProfile {
    pub fn dim(&self) -> usize {
        self.endpoints.0.len()
    }

    pub fn half_length(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    fn spacing(&self) -> f64 {
        (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() - 1) as f64
    }

    /// Quintic Hermite interpolation of `ū` and `ū'` from nodal values and
    /// first and second derivatives; constant extension outside the window.
    pub fn eval_with_derivative(&self, x: f64) -> (DVector<f64>, DVector<f64>) {
        let last = self.grid.len() - 1;
        if x <= self.grid[0] {
            return (self.values[0].clone(), DVector::zeros(self.dim()));
        }
        if x >= self.grid[last] {
            return (self.values[last].clone(), DVector::zeros(self.dim()));
        }
        let h = self.spacing();
        let k = (((x - self.grid[0]) / h).floor() as usize).min(last - 1);
        let t = (x - self.grid[k]) / h;
        let (t2, t3, t4, t5) = (t * t, t.powi(3), t.powi(4), t.powi(5));
        let b = [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5),
            0.5 * (t3 - 2.0 * t4 + t5),
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
        ];
        let db = [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4),
            0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4),
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
        ];
        let (p0, p1) = (&self.values[k], &self.values[k + 1]);
        let (m0, m1) = (&self.derivative_values[k], &self.derivative_values[k + 1]);
        let (c0, c1) = (&self.second_values[k], &self.second_values[k + 1]);
        let h2 = h * h;
        let v = p0 * b[0] + m0 * (b[1] * h) + c0 * (b[2] * h2) + c1 * (b[3] * h2) + m1 * (b[4] * h) + p1 * b[5];
        let d = (p0 * db[0] + m0 * (db[1] * h) + c0 * (db[2] * h2) + c1 * (db[3] * h2) + m1 * (db[4] * h) + p1 * db[5]) / h;
        (v, d)
    }

    pub fn eval(&self, x: f64) -> DVector<f64> {
        self.eval_with_derivative(x).0
    }

    /// Sup-norm residual `|ū' − (f¹(ū) − f¹(u₋))|` of the interpolant,
    /// sampled at grid nodes and interval midpoints.
    pub fn ode_residual(&self, sys: &dyn FluxSystem) -> f64 {
        let base = sys.f1(self.eps, &self.endpoints.0);
        let mut worst: f64 = 0.0;
        for k in 0..self.grid.len() - 1 {
            for x in [self.grid[k], 0.5 * (self.grid[k] + self.grid[k + 1])] {
                let (u, du) = self.eval_with_derivative(x);
                worst = worst.max((du - (sys.f1(self.eps, &u) - &base)).amax());
            }
        }
        worst
    }

    /// Write columns `x1, u_1..u_n, du_1..du_n`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.dim();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["x1".to_string()];
        header.extend((1..=n).map(|i| format!("u_{i}")));
        header.extend((1..=n).map(|i| format!("du_{i}")));
        w.write_record(&header)?;
        for k in 0..self.grid.len() {
            let mut row = vec![format!("{:.17e}", self.grid[k])];
            row.extend(self.values[k].iter().map(|v| format!("{v:.17e}")));
            row.extend(self.derivative_values[k].iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a profile written by [`ShockProfile::write_csv`]; end states and
    /// decay rate are taken from `sys` at `eps`.
    pub fn read_csv(path: &Path, sys: &dyn FluxSystem, eps: f64) -> Result<Self> {
        check_eps(sys, eps)?;
        let n = sys.dim();
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.len() != 2 * n + 1 {
            return Err(Error::Invalid(format!("profile file has {} columns, expected {}", r.headers()?.len(), 2 * n + 1)));
        }
        let (mut grid, mut values, mut derivative_values) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            let nums = nums.map_err(|e| Error::Invalid(format!("profile file: {e}")))?;
            grid.push(nums[0]);
            values.push(DVector::from_column_slice(&nums[1..=n]));
            derivative_values.push(DVector::from_column_slice(&nums[n + 1..]));
        }
        if grid.len() < 4 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("profile grid must be strictly increasing with at least 4 points".into()));
        }
        let (am, ap) = crate::systems::axial_jacobians(sys, eps)?;
        let second_values = second_derivatives(sys, eps, &values, &derivative_values);
        Ok(Self { grid, values, derivative_values, second_values, eps, eta: decay_rate(&am, &ap), endpoints: sys.end_states(eps) })
    }
}

/// Smallest magnitude among the end-state characteristic speeds.
pub fn decay_rate(am: &DMatrix<f64>, ap: &DMatrix<f64>) -> f64 {
    let mut eta = f64::INFINITY;
    for a in [am, ap] {
        if let Some((vals, _)) = sorted_real_eigen(a) {
            for v in vals {
                if v.abs() > 1e-12 {
                    eta = eta.min(v.abs());
                }
            }
        }
    }
    eta
}

/// Point on the unit sphere in `R^k` from `k − 1` hyperspherical angles.
fn sphere_point(angles: &[f64], sign: f64) -> DVector<f64> {
    let k = angles.len() + 1;
    if k == 1 {
        return DVector::from_element(1, sign);
    }
    let mut p = DVector::zeros(k);
    let mut s = 1.0;
    for (i, a) in angles.iter().enumerate() {
        p[i] = s * a.cos();
        s *= a.sin();
    }
    p[k - 1] = s;
    // Snap rounding residue such as sin(π) to zero.
    p.apply(|v| {
        if v.abs() < 1e-14 {
            *v = 0.0
        }
    });
    p
}

/// Orthonormal basis of the complement of the unit vector `b`.
fn complement(b: &DVector<f64>) -> DMatrix<f64> {
    let k = b.len();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..k {
        let mut v = DVector::zeros(k);
        v[j] = 1.0;
        v -= b * b[j];
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        let nv = v.norm();
        if nv > 1e-8 && cols.len() < k - 1 {
            cols.push(v / nv);
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(k, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn sphere_samples(k: usize) -> Vec<(Vec<f64>, f64)> {
    match k {
        0 => vec![(vec![], 1.0)],
        1 => vec![(vec![], 1.0), (vec![], -1.0)],
        2 => (0..72).map(|i| (vec![2.0 * std::f64::consts::PI * i as f64 / 72.0], 1.0)).collect(),
        _ => {
            let mut out = Vec::new();
            let m = 18;
            for i in 0..=m {
                let first = std::f64::consts::PI * i as f64 / m as f64;
                let mut rest = sphere_samples(k - 1);
                rest.retain(|(a, _)| !a.is_empty());
                for (a, _) in rest {
                    let mut v = vec![first];
                    v.extend(a);
                    out.push((v, 1.0));
                }
            }
            out
        }
    }
}

struct Side {
    equilibrium: DVector<f64>,
    /// Eigenvectors spanning the manifold's tangent space.
    basis: DMatrix<f64>,
    /// Full eigen-decomposition `(values, R, R^{-1})` for the linear tail.
    vals: Vec<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    /// Integration direction: +1 leaving `u₋`, −1 leaving `u₊`.
    dir: f64,
}

impl Side {
    /// Initial offset from the equilibrium.
    fn start(&self, angles: &[f64], sign: f64) -> DVector<f64> {
        &self.basis * sphere_point(angles, sign) * SHOOT_RADIUS
    }

    /// Initial offset for the point `base + tangent·t` projected back to
    /// the sphere. Local coordinates keep `t = 0` exactly representable,
    /// which matters when the connection lies along an axis.
    fn start_local(&self, base: &DVector<f64>, tangent: &DMatrix<f64>, t: &[f64]) -> DVector<f64> {
        let mut p = base + tangent * DVector::from_column_slice(t);
        p /= p.norm();
        &self.basis * p * SHOOT_RADIUS
    }

    /// Linearized flow `u± + exp(A s) z0`.
    fn linear_tail(&self, z0: &DVector<f64>, s: f64) -> DVector<f64> {
        let coef = &self.r_inv * z0;
        let scaled = DVector::from_iterator(coef.len(), coef.iter().zip(&self.vals).map(|(c, l)| c * (l * s).exp()));
        &self.equilibrium + &self.r * scaled
    }
}

struct Shooter<'a> {
    sys: &'a dyn FluxSystem,
    eps: f64,
    base: DVector<f64>,
    comp: usize,
    mid: f64,
    jump: f64,
    x_limit: f64,
    opts: OdeOptions,
}

impl Shooter<'_> {
    fn rhs(&self, u: &DVector<f64>) -> DVector<f64> {
        self.sys.f1(self.eps, u) - &self.base
    }

    /// Integrate the offset `z = u − eq` from `z0` until the section;
    /// returns `(|x|, u)` there. Working with the offset keeps the
    /// tolerances relative to the tiny initial displacement.
    fn shoot(&self, side: &Side, z0: DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
        let eq = &side.equilibrium;
        let bound = 20.0 * self.jump;
        let hit = integrate_until(
            |_, z: &DVector<f64>| self.rhs(&(eq + z)),
            0.0,
            z0,
            side.dir * self.x_limit,
            |z| eq[self.comp] + z[self.comp] - self.mid,
            |z| !z.iter().all(|v| v.is_finite()) || z.amax() > bound || !self.sys.in_domain((eq + z).as_slice()),
            self.opts,
        );
        match hit {
            Ok(Some((x, z))) => Ok(Some((x.abs(), eq + z))),
            Ok(None) => Ok(None),
            Err(Error::Conditioning(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn side_data(a: &DMatrix<f64>, u: DVector<f64>, unstable: bool) -> Result<Side> {
    let (vals, r) = sorted_real_eigen(a).ok_or_else(|| Error::Hypothesis("end-state Jacobian not real diagonalizable".into()))?;
    let r_inv = r.clone().try_inverse().ok_or_else(|| Error::Hypothesis("defective end-state Jacobian".into()))?;
    let cols: Vec<DVector<f64>> = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| if unstable { **v > 0.0 } else { **v < 0.0 })
        .map(|(k, _)| r.column(k).into_owned())
        .collect();
    Ok(Side { equilibrium: u, basis: DMatrix::from_columns(&cols), vals, r, r_inv, dir: if unstable { 1.0 } else { -1.0 } })
}

/// Solve for the profile with default options and explicit window.
pub fn solve_profile(sys: &dyn FluxSystem, eps: f64, half_length: f64, grid_size: usize) -> Result<ShockProfile> {
    solve_profile_with(sys, eps, &ProfileOptions { half_length: Some(half_length), grid_size, phase: 0.0 })
}

pub fn solve_profile_with(sys: &dyn FluxSystem, eps: f64, opts: &ProfileOptions) -> Result<ShockProfile> {
    check_eps(sys, eps)?;
    let n = sys.dim();
    let (um, up) = sys.end_states(eps);
    let jump = (&up - &um).norm();
    if jump < 1e-12 * (1.0 + um.norm()) {
        return Err(Error::NoConnection("end states coincide".into()));
    }
    let report = check_hypotheses(sys, eps, None)?;
    if !(report.h1_ok && report.h2_dimension_check) {
        return Err(Error::Hypothesis(report.diagnostics.join("; ")));
    }
    let c = report.lax_type_c;
    let comp = c - 1;
    let (am, ap) = crate::systems::axial_jacobians(sys, eps)?;
    let eta = decay_rate(&am, &ap);
    let half = opts.half_length.unwrap_or(20.0 / eta);
    if opts.grid_size < 4 || half <= 0.0 {
        return Err(Error::Invalid("grid_size must be at least 4 and the half-length positive".into()));
    }
    let left = side_data(&am, um.clone(), true)?;
    let right = side_data(&ap, up.clone(), false)?;
    let kl = left.basis.ncols();
    let kr = right.basis.ncols();
    debug_assert_eq!(kl + kr, n + 1);

    let mid = 0.5 * (um[comp] + up[comp]);
    if (um[comp] - up[comp]).abs() < 1e-10 * jump {
        return Err(Error::NoConnection("phase component does not change across the shock".into()));
    }
    let fastest = am.iter().chain(ap.iter()).fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let shooter = Shooter {
        sys,
        eps,
        base: sys.f1(eps, &um),
        comp,
        mid,
        jump,
        x_limit: 200.0 / eta,
        opts: OdeOptions { rtol: 1e-13, atol: 1e-16, h_init: 1e-3, h_max: 0.5 / fastest * 10.0, max_steps: 100_000 },
    };

    let m = opts.grid_size;
    let h = 2.0 * half / m as f64;
    let grid: Vec<f64> = (0..=m).map(|k| -half + k as f64 * h).collect();
    if n >= 2 && kl == n && kr == 1 {
        // u₋ is a source, so the connection is the one-dimensional stable
        // manifold of u₊ followed backward; u₋ attracts in reverse time.
        let mut best: Option<(f64, Vec<DVector<f64>>)> = None;
        for sign in [1.0, -1.0] {
            let ur0 = right.start(&[], sign);
            let Some((xr, _)) = shooter.shoot(&right, ur0.clone())? else { continue };
            let x_right = opts.phase + xr;
            let mut rhs = |_: f64, z: &DVector<f64>| shooter.rhs(&(&up + z));
            let mut stepper = Stepper::new(x_right, ur0.clone(), shooter.opts);
            let mut values = vec![DVector::zeros(n); m + 1];
            let mut ok = true;
            for (k, &x) in grid.iter().enumerate().rev() {
                values[k] = if x > x_right { right.linear_tail(&ur0, x - x_right) } else {
                    if stepper.advance(&mut rhs, x).is_err() || !sys.in_domain((&up + &stepper.y).as_slice()) {
                        ok = false;
                        break;
                    }
                    &up + &stepper.y
                };
            }
            let gap = (&values[0] - &um).norm();
            if ok && best.as_ref().is_none_or(|b| gap < b.0) {
                best = Some((gap, values));
            }
        }
        let (_, values) = best.ok_or_else(|| Error::NoConnection("the stable manifold of the right state does not reach the phase section".into()))?;
        return finish(sys, eps, &shooter, grid, values, eta, half, h, fastest, jump);
    }

    // Angle parameters: kl − 1 for the left sphere, kr − 1 for the right one.
    let nl = kl.saturating_sub(1);
    let nr = kr.saturating_sub(1);
    let mut left_hits = Vec::new();
    for (angles, sign) in sphere_samples(kl) {
        if angles.len() != nl {
            continue;
        }
        if let Some(hit) = shooter.shoot(&left, left.start(&angles, sign))? {
            left_hits.push((angles, sign, hit));
        }
    }
    let mut right_hits = Vec::new();
    for (angles, sign) in sphere_samples(kr) {
        if angles.len() != nr {
            continue;
        }
        if let Some(hit) = shooter.shoot(&right, right.start(&angles, sign))? {
            right_hits.push((angles, sign, hit));
        }
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, l) in left_hits.iter().enumerate() {
        for (j, r) in right_hits.iter().enumerate() {
            let gap = (&l.2 .1 - &r.2 .1).norm();
            if best.is_none_or(|b| gap < b.0) {
                best = Some((gap, i, j));
            }
        }
    }
    let (_, bi, bj) = best.ok_or_else(|| Error::NoConnection("no trajectory from either end state reaches the phase section".into()))?;
    let lbase = sphere_point(&left_hits[bi].0, left_hits[bi].1);
    let rbase = sphere_point(&right_hits[bj].0, right_hits[bj].1);
    let (ltan, rtan) = (complement(&lbase), complement(&rbase));
    let mut theta: Vec<f64> = vec![0.0; nl + nr];

    let residual = |theta: &[f64]| -> Result<Option<(DVector<f64>, f64, f64, DVector<f64>, DVector<f64>)>> {
        let ul0 = left.start_local(&lbase, &ltan, &theta[..nl]);
        let ur0 = right.start_local(&rbase, &rtan, &theta[nl..]);
        let (Some((xl, ul)), Some((xr, ur))) = (shooter.shoot(&left, ul0.clone())?, shooter.shoot(&right, ur0.clone())?) else {
            return Ok(None);
        };
        let diff = &ul - &ur;
        let r = DVector::from_iterator(n - 1, (0..n).filter(|&i| i != comp).map(|i| diff[i]));
        Ok(Some((r, xl, xr, ul0, ur0)))
    };

    let tol = 1e-12 * jump;
    let mut current = residual(&theta)?.ok_or_else(|| Error::NoConnection("initial shooting guess lost".into()))?;
    let mut converged = current.0.norm() <= tol || theta.is_empty();
    let mut iter = 0;
    while !converged {
        if iter >= 50 {
            return Err(Error::NoConnection(format!("Newton matching did not converge (residual {:e})", current.0.norm())));
        }
        iter += 1;
        let mut stalled = false;
        let m = theta.len();
        let mut jac = DMatrix::zeros(n - 1, m);
        for j in 0..m {
            // Strongly expanding directions can push a perturbed trajectory
            // out of the domain; retry with smaller angle increments.
            let mut column = None;
            for h in [1e-7, 1e-9, 1e-11] {
                let mut tp = theta.clone();
                tp[j] += h;
                let mut tm = theta.clone();
                tm[j] -= h;
                if let (Some(rp), Some(rm)) = (residual(&tp)?, residual(&tm)?) {
                    column = Some((rp.0 - rm.0) / (2.0 * h));
                    break;
                }
            }
            let column = column.ok_or_else(|| Error::NoConnection("shooting trajectory left the domain during Newton".into()))?;
            jac.set_column(j, &column);
        }
        let step = jac
            .svd(true, true)
            .solve(&current.0, 1e-13)
            .map_err(|e| Error::NoConnection(format!("singular matching Jacobian: {e}")))?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if let Some(r) = residual(&trial)? {
                if r.0.norm() < current.0.norm() {
                    theta = trial;
                    current = r;
                    break;
                }
            }
            // No descent left: accept if we are at the integrator's noise floor.
            if t < 1e-3 && current.0.norm() <= 1e2 * tol {
                stalled = true;
                break;
            }
            t *= 0.5;
            if t < 1e-4 {
                return Err(Error::NoConnection("Newton line search failed".into()));
            }
        }
        converged = current.0.norm() <= tol || stalled;
    }
    let (_, xl, xr, ul0, ur0) = current;

    // Profile coordinates: section at `phase`, left start at phase − xl,
    // right start at phase + xr.
    let a = opts.phase;
    let mut values = vec![DVector::zeros(n); m + 1];
    let x_left = a - xl;
    let x_right = a + xr;

    // Both trajectories are carried a profile width past the section and
    // blended there, so the tiny mismatch left by the integrators does not
    // show up as a kink in the interpolant.
    let overlap = (2.0 / eta).min(0.5 * half);
    let mut rhs = |_: f64, z: &DVector<f64>| shooter.rhs(&(&um + z));
    let mut stepper = Stepper::new(x_left, ul0.clone(), shooter.opts);
    let mut from_left = vec![None; m + 1];
    for (k, &x) in grid.iter().enumerate() {
        if x > a + overlap {
            break;
        }
        from_left[k] = Some(if x < x_left { left.linear_tail(&ul0, x - x_left) } else {
            stepper.advance(&mut rhs, x)?;
            &um + &stepper.y
        });
    }
    let mut rhs = |_: f64, z: &DVector<f64>| shooter.rhs(&(&up + z));
    let mut stepper = Stepper::new(x_right, ur0.clone(), shooter.opts);
    for (k, &x) in grid.iter().enumerate().rev() {
        if x < a - overlap {
            break;
        }
        let ur = if x > x_right { right.linear_tail(&ur0, x - x_right) } else {
            stepper.advance(&mut rhs, x)?;
            &up + &stepper.y
        };
        values[k] = match &from_left[k] {
            Some(ul) => {
                let t = ((x - a + overlap) / (2.0 * overlap)).clamp(0.0, 1.0);
                let w = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
                ul * (1.0 - w) + ur * w
            }
            None => ur,
        };
    }
    for (k, ul) in from_left.into_iter().enumerate() {
        if grid[k] >= a - overlap {
            break;
        }
        values[k] = ul.expect("left trajectory covers the left half");
    }
    finish(sys, eps, &shooter, grid, values, eta, half, h, fastest, jump)
}

/// Derivatives and resolution checks shared by both construction paths.
#[allow(clippy::too_many_arguments)]
fn finish(
    sys: &dyn FluxSystem,
    eps: f64,
    shooter: &Shooter,
    grid: Vec<f64>,
    values: Vec<DVector<f64>>,
    eta: f64,
    half: f64,
    h: f64,
    fastest: f64,
    jump: f64,
) -> Result<ShockProfile> {
    let m = grid.len() - 1;
    let (um, up) = sys.end_states(eps);
    let derivative_values: Vec<DVector<f64>> = values.iter().map(|u| shooter.rhs(u)).collect();
    let second_values = second_derivatives(sys, eps, &values, &derivative_values);
    let profile = ShockProfile { grid, values, derivative_values, second_values, eps, eta, endpoints: (um.clone(), up.clone()) };
    // The exponential tail estimate, but never below what rounding allows.
    let scale = um.amax().max(up.amax()).max(jump);
    let bound = ((-eta * half / 2.0).exp() * jump).max(1e-12 * scale);
    let tail = (&profile.values[0] - &um).norm().max((&profile.values[m] - &up).norm());
    if tail > bound {
        return Err(Error::Resolution(format!(
            "end-state mismatch {tail:e} exceeds {bound:e}; increase the half-length beyond {half}"
        )));
    }
    if h * fastest > 0.5 {
        return Err(Error::Resolution(format!("grid spacing {h} too coarse for rates up to {fastest}; increase grid_size")));
    }
    Ok(profile)
}

/// Orthonormal basis of the column span, renormalized by QR.
fn orthonormalize(y: &DMatrix<f64>) -> DMatrix<f64> {
    if y.ncols() == 0 {
        return y.clone();
    }
    y.clone().qr().q()
}

/// Transport the span of `y0` along `w' = df¹(ū(x)) w` from `x0` to `x1`.
fn transport(profile: &ShockProfile, sys: &dyn FluxSystem, y0: DMatrix<f64>, x0: f64, x1: f64) -> Result<DMatrix<f64>> {
    let (n, k) = (y0.nrows(), y0.ncols());
    if k == 0 {
        return Ok(y0);
    }
    let rhs = |x: f64, v: &DVector<f64>| {
        let a = sys.df1(profile.eps, &profile.eval(x));
        let y = DMatrix::from_column_slice(n, k, v.as_slice());
        let dy = a * y;
        DVector::from_column_slice(dy.as_slice())
    };
    let mut y = orthonormalize(&y0);
    let steps = ((x1 - x0).abs().ceil() as usize).max(1);
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-13, ..OdeOptions::default() };
    for s in 0..steps {
        let xa = x0 + (x1 - x0) * s as f64 / steps as f64;
        let xb = x0 + (x1 - x0) * (s + 1) as f64 / steps as f64;
        let v = crate::ode::integrate(rhs, xa, DVector::from_column_slice(y.as_slice()), xb, opts)?;
        y = orthonormalize(&DMatrix::from_column_slice(n, k, v.as_slice()));
    }
    Ok(y)
}

fn second_derivatives(sys: &dyn FluxSystem, eps: f64, values: &[DVector<f64>], derivs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    values.iter().zip(derivs).map(|(u, du)| sys.df1(eps, u) * du).collect()
}

/// Numerical transversality of the connection: the smallest singular value
/// of the matched tangent bases at `x₁ = 0` after removing the translation
/// direction `ū'(0)`. Returns 0 for a constant state and 1 when the
/// dimension count leaves nothing to test.
pub fn transversality_diagnostic(profile: &ShockProfile, sys: &dyn FluxSystem) -> f64 {
    let n = profile.dim();
    let (_, du0) = profile.eval_with_derivative(0.0);
    let jump = (&profile.endpoints.1 - &profile.endpoints.0).norm();
    if du0.norm() <= 1e-12 * jump.max(1e-300) || jump == 0.0 {
        return 0.0;
    }
    if n == 1 {
        return 1.0;
    }
    let (um, up) = &profile.endpoints;
    let am = sys.df1(profile.eps, um);
    let ap = sys.df1(profile.eps, up);
    let (Ok(left), Ok(right)) = (side_data(&am, um.clone(), true), side_data(&ap, up.clone(), false)) else {
        return 0.0;
    };
    let x = profile.half_length();
    let (Ok(ul), Ok(ur)) = (
        transport(profile, sys, left.basis.clone(), -x, 0.0),
        transport(profile, sys, right.basis.clone(), x, 0.0),
    ) else {
        return 0.0;
    };
    let t = du0.normalize();
    let proj = DMatrix::identity(n, n) - &t * t.transpose();
    let reduce = |y: &DMatrix<f64>| -> DMatrix<f64> {
        let k = y.ncols().saturating_sub(1);
        if k == 0 {
            return DMatrix::zeros(n, 0);
        }
        let svd = (&proj * y).svd(true, false);
        let u = svd.u.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        DMatrix::from_columns(&order[..k].iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>())
    };
    let (ql, qr) = (reduce(&ul), reduce(&ur));
    if ql.ncols() + qr.ncols() == 0 {
        return 1.0;
    }
    let mut cols: Vec<DVector<f64>> = ql.column_iter().map(|c| c.into_owned()).collect();
    cols.extend(qr.column_iter().map(|c| c.into_owned()));
    let m = DMatrix::from_columns(&cols);
    m.singular_values().min()
}
