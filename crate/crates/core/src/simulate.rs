//! Time integration of the nonlinear channel problem
//! `u_t + f¹(u)_{x1} + f²(u)_{x2} = Δu` on `[−X, X] × [−M, M)`, periodic in
//! `x₂`, for the perturbation `v = u − ū` of a computed profile.
//!
//! The scheme is Crank–Nicolson for diffusion and second-order
//! Adams–Bashforth for the flux terms. The transverse direction is
//! diagonalized by FFT, leaving one tridiagonal solve per component and
//! transverse mode. Axial fluxes are central conservative differences,
//! transverse flux derivatives are spectral. Writing the flux terms as
//! `f(ū + v) − f(ū)` makes `v = 0` an exact discrete steady state.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, I};
use crate::profiles::ShockProfile;
use crate::systems::{check_eps, FluxSystem};

/// Initial perturbation building blocks; the perturbation is their sum.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Seed {
    /// `ū(x₁ − α) − ū(x₁)`.
    Shift { alpha: f64 },
    /// Gaussian `amplitude·exp(−|x − center|²/width²)` in every component.
    Bump { amplitude: f64, x1: f64, x2: f64, width: f64 },
    /// `amplitude·φ(x₁)·cos(πk x₂/M)` with `φ = ū'/max|ū'|` (a ripple of the
    /// front) or, when `width` is set, a Gaussian of that width.
    Mode {
        k: usize,
        amplitude: f64,
        #[serde(default)]
        width: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub eps: f64,
    /// Duct half-width `M`.
    pub half_width: f64,
    /// Axial half-length `X`; `None` selects `20/η`.
    pub half_length: Option<f64>,
    /// Axial grid points, boundaries included; ignored with `stretching`.
    pub n1: usize,
    #[serde(default)]
    pub stretching: Option<Stretching>,
    /// Transverse grid points.
    pub n2: usize,
    pub t_final: f64,
    /// Fixed step; `None` takes `cfl` times the stability bound.
    pub dt: Option<f64>,
    pub cfl: f64,
    pub output_every: f64,
    /// Highest transverse mode recorded in the diagnostics.
    pub k_max: usize,
    pub seeds: Vec<Seed>,
    /// Divergence threshold relative to the initial sup norm.
    pub blowup_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            eps: 0.0,
            half_width: PI,
            half_length: None,
            n1: 801,
            stretching: None,
            n2: 16,
            t_final: 10.0,
            dt: None,
            cfl: 0.4,
            output_every: 0.1,
            k_max: 4,
            seeds: Vec::new(),
            blowup_factor: 1e3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub t: f64,
    /// Norms of `u(x₁ + α, x₂) − ū(x₁)`.
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub alpha: f64,
    pub alphadot: f64,
    /// `a_k`: L² norm over `x₁` of the `k`-th transverse Fourier coefficient.
    pub a: Vec<f64>,
    /// Complex front displacement carried by mode `k`: the projection of
    /// the `k`-th coefficient on `−ū'`.
    pub front: Vec<C64>,
    /// `∫∫ (u − ū)`, summed over components.
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged { t: f64 },
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub history: Vec<Diagnostics>,
    pub status: RunStatus,
    pub dt: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Final state `u`, indexed `[(c·n1 + i)·n2 + j]`.
    pub u: Vec<f64>,
    pub dim: usize,
    /// Largest `|ĉ_k(x₁)|` seen after `t_final/2`, per recorded mode.
    pub mode_envelope: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Boundary {
    Dirichlet,
    Neumann,
}

/// Boundary type per component: Dirichlet where the end-state
/// characteristic enters the domain, zero-gradient extrapolation where it
/// leaves. Falls back to Dirichlet when the end-state Jacobian is not
/// diagonal, since then components are not characteristic variables.
fn boundary_types(sys: &dyn FluxSystem, eps: f64) -> (Vec<Boundary>, Vec<Boundary>) {
    let (um, up) = sys.end_states(eps);
    let n = um.len();
    let classify = |u: &DVector<f64>, left: bool| -> Vec<Boundary> {
        let a = sys.df1(eps, u);
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].abs()).sum();
        if off > 1e-12 * a.norm().max(1e-300) {
            return vec![Boundary::Dirichlet; n];
        }
        (0..n)
            .map(|c| {
                let incoming = if left { a[(c, c)] > 0.0 } else { a[(c, c)] < 0.0 };
                if incoming {
                    Boundary::Dirichlet
                } else {
                    Boundary::Neumann
                }
            })
            .collect()
    };
    (classify(&um, true), classify(&up, false))
}

/// Thomas factorization of `(1 − dt/2·(∂₁² − ξ²))` on the axial grid with
/// boundary rows `v₀ = 0` or `v₀ = v₁` (and likewise at the right end).
struct Tridiag {
    sub: Vec<f64>,
    cprime: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl Tridiag {
    fn new(g: &Grid, dt: f64, xi: f64, left: Boundary, right: Boundary) -> Self {
        let n1 = g.n1;
        let mut sub: Vec<f64> = g.lo.iter().map(|c| -0.5 * dt * c).collect();
        let mut sup: Vec<f64> = g.hi.iter().map(|c| -0.5 * dt * c).collect();
        let mut d: Vec<f64> = (0..n1).map(|i| 1.0 + 0.5 * dt * (g.lo[i] + g.hi[i] + xi * xi)).collect();
        sub[0] = 0.0;
        d[0] = 1.0;
        sup[0] = if left == Boundary::Neumann { -1.0 } else { 0.0 };
        sub[n1 - 1] = if right == Boundary::Neumann { -1.0 } else { 0.0 };
        d[n1 - 1] = 1.0;
        sup[n1 - 1] = 0.0;
        let mut cprime = vec![0.0; n1];
        let mut inv_denom = vec![0.0; n1];
        for i in 0..n1 {
            let denom = d[i] - if i > 0 { sub[i] * cprime[i - 1] } else { 0.0 };
            inv_denom[i] = 1.0 / denom;
            cprime[i] = sup[i] * inv_denom[i];
        }
        Self { sub, cprime, inv_denom }
    }

    fn solve(&self, r: &mut [C64]) {
        let n = r.len();
        r[0] *= self.inv_denom[0];
        for i in 1..n {
            r[i] = (r[i] - r[i - 1] * self.sub[i]) * self.inv_denom[i];
        }
        for i in (0..n - 1).rev() {
            r[i] = r[i] - r[i + 1] * self.cprime[i];
        }
    }
}

/// Axial grid refinement: spacing `dx` on `|x₁| ≤ core`, growing by the
/// factor `ratio` per cell outside up to `dx_max`. The domain is extended
/// to the first node at or beyond the half-length.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Stretching {
    pub dx: f64,
    pub core: f64,
    pub ratio: f64,
    pub dx_max: f64,
}

fn axial_nodes(half_length: f64, n1: usize, stretching: Option<&Stretching>) -> Result<Vec<f64>> {
    let Some(st) = stretching else {
        let dx = 2.0 * half_length / (n1 - 1) as f64;
        return Ok((0..n1).map(|i| -half_length + i as f64 * dx).collect());
    };
    if !(st.dx > 0.0 && st.ratio >= 1.0 && st.dx_max >= st.dx && st.core >= 0.0) {
        return Err(Error::Invalid("stretching needs dx > 0, ratio ≥ 1, dx_max ≥ dx, core ≥ 0".into()));
    }
    let mut half = vec![0.0];
    let mut h = st.dx;
    while *half.last().unwrap() < half_length {
        let x = *half.last().unwrap();
        if x >= st.core {
            h = (h * st.ratio).min(st.dx_max);
        }
        half.push(x + h);
    }
    let mut nodes: Vec<f64> = half.iter().rev().map(|x| -x).collect();
    nodes.extend_from_slice(&half[1..]);
    Ok(nodes)
}

struct Grid {
    n: usize,
    n1: usize,
    n2: usize,
    dy: f64,
    x1: Vec<f64>,
    /// Trapezoid weights.
    w: Vec<f64>,
    /// Second-difference coefficients: `∂₁²v ≈ lo·v_{i−1} + hi·v_{i+1} − (lo + hi)·v_i`.
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// `1/(x_{i+1} − x_{i−1})` for centered first differences.
    inv_span: Vec<f64>,
    x2: Vec<f64>,
    /// Wave number of FFT index `j`; zero at the Nyquist index for odd derivatives.
    xi: Vec<f64>,
    xi_odd: Vec<f64>,
}

impl Grid {
    fn new(n: usize, x1: Vec<f64>, half_width: f64, n2: usize) -> Self {
        let n1 = x1.len();
        let dy = 2.0 * half_width / n2 as f64;
        let mut w = vec![0.0; n1];
        let (mut lo, mut hi, mut inv_span) = (vec![0.0; n1], vec![0.0; n1], vec![0.0; n1]);
        for i in 0..n1 - 1 {
            let h = x1[i + 1] - x1[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        for i in 1..n1 - 1 {
            let (hl, hr) = (x1[i] - x1[i - 1], x1[i + 1] - x1[i]);
            lo[i] = 2.0 / (hl * (hl + hr));
            hi[i] = 2.0 / (hr * (hl + hr));
            inv_span[i] = 1.0 / (hl + hr);
        }
        let x2 = (0..n2).map(|j| -half_width + j as f64 * dy).collect();
        let wave = |j: usize| -> i64 { if j <= n2 / 2 { j as i64 } else { j as i64 - n2 as i64 } };
        let xi: Vec<f64> = (0..n2).map(|j| PI * wave(j) as f64 / half_width).collect();
        let xi_odd = (0..n2).map(|j| if n2 % 2 == 0 && j == n2 / 2 { 0.0 } else { xi[j] }).collect();
        Self { n, n1, n2, dy, x1, w, lo, hi, inv_span, x2, xi, xi_odd }
    }

    fn hat(&self, c: usize, j: usize, i: usize) -> usize {
        (c * self.n2 + j) * self.n1 + i
    }
}

/// Integrate the channel problem from `ū + v₀`.
pub fn integrate(sys: &dyn FluxSystem, profile: &ShockProfile, cfg: &SimConfig) -> Result<SimResult> {
    check_eps(sys, cfg.eps)?;
    if (cfg.stretching.is_none() && cfg.n1 < 8) || cfg.n2 < 1 || cfg.half_width <= 0.0 || cfg.t_final < 0.0 || cfg.output_every <= 0.0 {
        return Err(Error::Invalid("need n1 ≥ 8, n2 ≥ 1, half_width > 0, t_final ≥ 0, output_every > 0".into()));
    }
    if cfg.k_max > cfg.n2 / 2 {
        return Err(Error::Invalid(format!("k_max = {} exceeds the resolved transverse modes (n2/2 = {})", cfg.k_max, cfg.n2 / 2)));
    }
    if (profile.eps - cfg.eps).abs() > 1e-12 * (1.0 + cfg.eps.abs()) {
        return Err(Error::Invalid(format!("profile computed at ε = {} but the run uses ε = {}", profile.eps, cfg.eps)));
    }
    let n = sys.dim();
    let half_length = cfg.half_length.unwrap_or(20.0 / profile.eta);
    let g = Grid::new(n, axial_nodes(half_length, cfg.n1, cfg.stretching.as_ref())?, cfg.half_width, cfg.n2);
    let (n1, n2) = (g.n1, g.n2);

    let ubar: Vec<DVector<f64>> = g.x1.iter().map(|&x| profile.eval(x)).collect();
    let dubar: Vec<DVector<f64>> = g.x1.iter().map(|&x| profile.eval_with_derivative(x).1).collect();
    let mut f1bar = vec![0.0; n1 * n];
    let mut f2bar = vec![0.0; n1 * n];
    for i in 0..n1 {
        sys.fluxes(cfg.eps, ubar[i].as_slice(), &mut f1bar[i * n..(i + 1) * n], &mut f2bar[i * n..(i + 1) * n]);
    }

    // Step size from the characteristic speeds along the profile.
    let mut sy = 0.0_f64;
    let mut axial_bound = f64::INFINITY;
    let mut sx = 0.0_f64;
    for i in 0..n1 {
        let (hl, hr) = (if i > 0 { g.x1[i] - g.x1[i - 1] } else { 0.0 }, if i + 1 < n1 { g.x1[i + 1] - g.x1[i] } else { 0.0 });
        let speed = spectral_bound(&sys.df1(cfg.eps, &ubar[i]));
        sx = sx.max(speed);
        sy = sy.max(spectral_bound(&sys.df2(cfg.eps, &ubar[i])));
        let peclet = 0.5 * speed * hl.max(hr);
        if peclet > 1.0 {
            return Err(Error::Resolution(format!("cell Péclet number {peclet:.3} > 1 at x₁ = {:.3}: refine the axial grid", g.x1[i])));
        }
        let h = if i == 0 { hr } else if i + 1 == n1 { hl } else { hl.min(hr) };
        axial_bound = axial_bound.min(h / speed.max(1e-12));
    }
    let xi_max = g.xi.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let dt_bound = axial_bound.min(1.0 / (sy * xi_max).max(1e-12));
    let dt_req = match cfg.dt {
        Some(dt) if dt > dt_bound => {
            return Err(Error::StepSize(format!("dt = {dt} exceeds the bound {dt_bound:.3e} from speeds ({sx:.3}, {sy:.3})")))
        }
        Some(dt) => dt,
        None => cfg.cfl * dt_bound,
    };
    let per_output = (cfg.output_every / dt_req).ceil().max(1.0) as usize;
    let dt = cfg.output_every / per_output as f64;

    // Initial perturbation.
    let mut v = vec![0.0; n * n1 * n2];
    let umax = ubar.iter().fold(0.0_f64, |m, u| m.max(u.amax()));
    let dmax = dubar.iter().fold(0.0_f64, |m, u| m.max(u.amax())).max(1e-300);
    for seed in &cfg.seeds {
        for i in 0..n1 {
            let x = g.x1[i];
            let shifted = match seed {
                Seed::Shift { alpha } => Some(profile.eval(x - alpha)),
                _ => None,
            };
            for j in 0..n2 {
                let y = g.x2[j];
                for c in 0..n {
                    let add = match seed {
                        Seed::Shift { .. } => shifted.as_ref().unwrap()[c] - ubar[i][c],
                        Seed::Bump { amplitude, x1, x2, width } => {
                            let dy = wrap(y - x2, cfg.half_width);
                            amplitude * (-((x - x1).powi(2) + dy * dy) / (width * width)).exp()
                        }
                        Seed::Mode { k, amplitude, width } => {
                            let shape = match width {
                                Some(w) => (-(x * x) / (w * w)).exp(),
                                None => dubar[i][c] / dmax,
                            };
                            amplitude * shape * (PI * *k as f64 * y / cfg.half_width).cos()
                        }
                    };
                    v[(c * n1 + i) * n2 + j] += add;
                }
            }
        }
    }

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n2);
    let inv = planner.plan_fft_inverse(n2);
    let mut vhat = to_hat(&g, &v, &fwd);
    let (bl, br) = boundary_types(sys, cfg.eps);
    let solvers: Vec<Tridiag> =
        (0..n).flat_map(|c| (0..n2).map(move |j| (c, j))).map(|(c, j)| Tridiag::new(&g, dt, g.xi[j], bl[c], br[c])).collect();
    apply_boundaries(&g, &mut vhat, &bl, &br);

    let stepper = Stepper { sys, eps: cfg.eps, g: &g, ubar: &ubar, f1bar: &f1bar, f2bar: &f2bar, fwd: fwd.clone(), inv: inv.clone() };
    let mut history: Vec<Diagnostics> = Vec::new();
    let kmax = cfg.k_max;
    let mut envelope = vec![vec![0.0; n1]; kmax + 1];
    let initial_sup = umax.max(1e-300);
    let mut alpha = 0.0;
    let mut status = RunStatus::Completed;

    let record = |vhat: &[C64], t: f64, alpha: &mut f64, history: &mut Vec<Diagnostics>, envelope: &mut Vec<Vec<f64>>| -> Result<f64> {
        let d = diagnostics(profile, &g, &ubar, &dubar, vhat, &inv, t, *alpha, kmax)?;
        *alpha = d.0.alpha;
        if t >= 0.5 * cfg.t_final {
            for (k, env) in envelope.iter_mut().enumerate() {
                for i in 0..n1 {
                    let amp: f64 = (0..n).map(|c| vhat[g.hat(c, k, i)].norm_sqr()).sum::<f64>().sqrt();
                    env[i] = env[i].max(amp);
                }
            }
        }
        history.push(d.0);
        Ok(d.1)
    };

    let mut sup = record(&vhat, 0.0, &mut alpha, &mut history, &mut envelope)?;
    let outputs = (cfg.t_final / cfg.output_every).round() as usize;
    let mut nold: Option<Vec<C64>> = None;
    'outer: for out in 1..=outputs {
        for _ in 0..per_output {
            let nnow = stepper.nonlinear(&vhat);
            let prev = nold.as_ref().unwrap_or(&nnow);
            let new: Vec<C64> = (0..n * n2)
                .into_par_iter()
                .flat_map_iter(|row| {
                    let (c, j) = (row / n2, row % n2);
                    let xi2 = g.xi[j] * g.xi[j];
                    let base = row * n1;
                    let mut r = vec![C64::new(0.0, 0.0); n1];
                    for i in 1..n1 - 1 {
                        let vi = vhat[base + i];
                        let lap = vhat[base + i + 1] * g.hi[i] + vhat[base + i - 1] * g.lo[i] - vi * (g.lo[i] + g.hi[i] + xi2);
                        r[i] = vi + lap * (0.5 * dt) + (nnow[base + i] * 1.5 - prev[base + i] * 0.5) * dt;
                    }
                    solvers[c * n2 + j].solve(&mut r);
                    r.into_iter()
                })
                .collect();
            vhat = new;
            nold = Some(nnow);
        }
        let t = out as f64 * cfg.output_every;
        sup = match record(&vhat, t, &mut alpha, &mut history, &mut envelope) {
            Ok(s) => s,
            Err(Error::FrontLost(_)) => {
                status = RunStatus::Diverged { t };
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        if !sup.is_finite() || sup > cfg.blowup_factor * initial_sup {
            status = RunStatus::Diverged { t };
            break;
        }
    }
    let _ = sup;
    finish_alphadot(&mut history);

    let vphys = from_hat(&g, &vhat, &inv);
    let mut u = vphys;
    for c in 0..n {
        for i in 0..n1 {
            for j in 0..n2 {
                u[(c * n1 + i) * n2 + j] += ubar[i][c];
            }
        }
    }
    Ok(SimResult { history, status, dt, x1: g.x1.clone(), x2: g.x2.clone(), u, dim: n, mode_envelope: envelope })
}

fn wrap(d: f64, m: f64) -> f64 {
    let p = 2.0 * m;
    d - p * (d / p).round()
}

/// Row-sum bound on the spectral radius.
fn spectral_bound(a: &nalgebra::DMatrix<f64>) -> f64 {
    (0..a.nrows()).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn to_hat(g: &Grid, v: &[f64], fwd: &Arc<dyn Fft<f64>>) -> Vec<C64> {
    let mut hat = vec![C64::new(0.0, 0.0); v.len()];
    let scale = 1.0 / g.n2 as f64;
    let mut buf = vec![C64::new(0.0, 0.0); g.n2];
    for c in 0..g.n {
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                buf[j] = C64::new(v[(c * g.n1 + i) * g.n2 + j], 0.0);
            }
            fwd.process(&mut buf);
            for j in 0..g.n2 {
                hat[g.hat(c, j, i)] = buf[j] * scale;
            }
        }
    }
    hat
}

fn from_hat(g: &Grid, hat: &[C64], inv: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let mut v = vec![0.0; hat.len()];
    let mut buf = vec![C64::new(0.0, 0.0); g.n2];
    for c in 0..g.n {
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                buf[j] = hat[g.hat(c, j, i)];
            }
            inv.process(&mut buf);
            for j in 0..g.n2 {
                v[(c * g.n1 + i) * g.n2 + j] = buf[j].re;
            }
        }
    }
    v
}

fn apply_boundaries(g: &Grid, hat: &mut [C64], bl: &[Boundary], br: &[Boundary]) {
    for c in 0..g.n {
        for j in 0..g.n2 {
            let (a, b) = (g.hat(c, j, 0), g.hat(c, j, g.n1 - 1));
            hat[a] = if bl[c] == Boundary::Neumann { hat[a + 1] } else { C64::new(0.0, 0.0) };
            hat[b] = if br[c] == Boundary::Neumann { hat[b - 1] } else { C64::new(0.0, 0.0) };
        }
    }
}

struct Stepper<'a> {
    sys: &'a dyn FluxSystem,
    eps: f64,
    g: &'a Grid,
    ubar: &'a [DVector<f64>],
    f1bar: &'a [f64],
    f2bar: &'a [f64],
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stepper<'_> {
    /// Transformed flux terms `−∂₁[f¹(ū+v) − f¹(ū)] − ∂₂f²(ū+v)`, zero on
    /// boundary nodes, in the layout of `vhat`.
    fn nonlinear(&self, vhat: &[C64]) -> Vec<C64> {
        let g = self.g;
        let (n, n1, n2) = (g.n, g.n1, g.n2);
        let scale = 1.0 / n2 as f64;
        // Per axial node: transformed flux differences, layout [c][j] for f¹ then f².
        let mut per_node = vec![C64::new(0.0, 0.0); n1 * 2 * n * n2];
        per_node.par_chunks_mut(2 * n * n2).enumerate().for_each_init(
            || (vec![C64::new(0.0, 0.0); n * n2], vec![0.0; n], vec![0.0; n], vec![0.0; n]),
            |(buf, u, f1, f2), (i, out)| {
                for c in 0..n {
                    let row = &mut buf[c * n2..(c + 1) * n2];
                    for j in 0..n2 {
                        row[j] = vhat[g.hat(c, j, i)];
                    }
                    self.inv.process(row);
                }
                let (a, b) = out.split_at_mut(n * n2);
                for j in 0..n2 {
                    for c in 0..n {
                        u[c] = self.ubar[i][c] + buf[c * n2 + j].re;
                    }
                    self.sys.fluxes(self.eps, u, f1, f2);
                    for c in 0..n {
                        a[c * n2 + j] = C64::new(f1[c] - self.f1bar[i * n + c], 0.0);
                        b[c * n2 + j] = C64::new(f2[c] - self.f2bar[i * n + c], 0.0);
                    }
                }
                for c in 0..n {
                    self.fwd.process(&mut a[c * n2..(c + 1) * n2]);
                    self.fwd.process(&mut b[c * n2..(c + 1) * n2]);
                }
                for z in out.iter_mut() {
                    *z *= scale;
                }
            },
        );
        let stride = 2 * n * n2;
        let mut out = vec![C64::new(0.0, 0.0); n * n2 * n1];
        out.par_chunks_mut(n1).enumerate().for_each(|(row, dst)| {
            let (c, j) = (row / n2, row % n2);
            let k = c * n2 + j;
            let ixi = I * g.xi_odd[j];
            for i in 1..n1 - 1 {
                let d1 = (per_node[(i + 1) * stride + k] - per_node[(i - 1) * stride + k]) * g.inv_span[i];
                let f2 = per_node[i * stride + n * n2 + k];
                dst[i] = -d1 - ixi * f2;
            }
        });
        out
    }
}

/// Diagnostics at one output time; also returns `sup |u|`.
#[allow(clippy::too_many_arguments)]
fn diagnostics(
    profile: &ShockProfile,
    g: &Grid,
    ubar: &[DVector<f64>],
    dubar: &[DVector<f64>],
    vhat: &[C64],
    inv: &Arc<dyn Fft<f64>>,
    t: f64,
    alpha_guess: f64,
    kmax: usize,
) -> Result<(Diagnostics, f64)> {
    let (n, n1, n2) = (g.n, g.n1, g.n2);
    let avg: Vec<DVector<f64>> = (0..n1).map(|i| DVector::from_fn(n, |c, _| ubar[i][c] + vhat[g.hat(c, 0, i)].re)).collect();
    let alpha = track_front(profile, &g.x1, &avg, alpha_guess)?;
    let shifted: Vec<DVector<f64>> = g.x1.iter().map(|&x| profile.eval(x - alpha)).collect();
    let v = from_hat(g, vhat, inv);
    let (mut l1, mut l2, mut linf, mut sup, mut mass) = (0.0, 0.0, 0.0_f64, 0.0_f64, 0.0);
    for i in 0..n1 {
        let (mut l1_row, mut l2_row, mut mass_row) = (0.0, 0.0, 0.0);
        for j in 0..n2 {
            let mut s2 = 0.0;
            for c in 0..n {
                let vij = v[(c * n1 + i) * n2 + j];
                let w = ubar[i][c] + vij - shifted[i][c];
                s2 += w * w;
                sup = sup.max((ubar[i][c] + vij).abs());
                mass_row += vij;
            }
            l1_row += s2.sqrt();
            l2_row += s2;
            linf = linf.max(s2.sqrt());
        }
        l1 += g.w[i] * l1_row;
        l2 += g.w[i] * l2_row;
        mass += g.w[i] * mass_row;
    }
    let cell = g.dy;
    let norm_d: f64 = dubar.iter().zip(&g.w).map(|(d, w)| w * d.norm_squared()).sum();
    let mut a = Vec::with_capacity(kmax + 1);
    let mut front = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let mut s = 0.0;
        let mut p = C64::new(0.0, 0.0);
        for i in 0..n1 {
            for c in 0..n {
                let z = if k == 0 { C64::new(avg[i][c] - shifted[i][c], 0.0) } else { vhat[g.hat(c, k, i)] };
                s += g.w[i] * z.norm_sqr();
                p += z * (g.w[i] * dubar[i][c]);
            }
        }
        a.push(s.sqrt());
        front.push(if k == 0 { C64::new(alpha, 0.0) } else { -p / norm_d.max(1e-300) });
    }
    Ok((Diagnostics { t, l1: l1 * cell, l2: (l2 * cell).sqrt(), linf, alpha, alphadot: 0.0, a, front, mass: mass * cell }, sup))
}

/// Centered differences of α in time (one-sided at the ends).
fn finish_alphadot(h: &mut [Diagnostics]) {
    let m = h.len();
    if m < 2 {
        return;
    }
    let alphas: Vec<(f64, f64)> = h.iter().map(|d| (d.t, d.alpha)).collect();
    for k in 0..m {
        let (a, b) = if k == 0 { (0, 1) } else if k == m - 1 { (m - 2, m - 1) } else { (k - 1, k + 1) };
        h[k].alphadot = (alphas[b].1 - alphas[a].1) / (alphas[b].0 - alphas[a].0);
    }
}

/// Front shift `α` minimizing `‖u_avg(x₁) − ū(x₁ − α)‖²` over the window,
/// by Gauss–Newton from `guess`.
pub fn track_front(profile: &ShockProfile, x1: &[f64], u_avg: &[DVector<f64>], guess: f64) -> Result<f64> {
    let half = 0.5 * (x1[x1.len() - 1] - x1[0]);
    let m = x1.len();
    let w: Vec<f64> = (0..m).map(|i| 0.5 * (x1[(i + 1).min(m - 1)] - x1[i.saturating_sub(1)])).collect();
    let mut alpha = guess;
    for _ in 0..30 {
        let (mut num, mut den) = (0.0, 0.0);
        for ((x, u), w) in x1.iter().zip(u_avg).zip(&w) {
            let (ub, dub) = profile.eval_with_derivative(x - alpha);
            num += w * (u - ub).dot(&dub);
            den += w * dub.norm_squared();
        }
        if den == 0.0 {
            return Err(Error::FrontLost("the profile derivative vanishes on the window".into()));
        }
        // d/dα ū(x − α) = −ū'(x − α).
        let step = -num / den;
        alpha += step;
        if !alpha.is_finite() || alpha.abs() > 0.5 * half {
            return Err(Error::FrontLost(format!("front shift {alpha} reached the edge of the window")));
        }
        if step.abs() <= 1e-12 * (1.0 + alpha.abs()) {
            break;
        }
    }
    Ok(alpha)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Oscillation {
    pub k_dominant: usize,
    pub period: f64,
    pub amplitude: f64,
    /// Fitted exponential decay rate of the oscillation envelope in `|x₁|`.
    pub localization_decay: Option<f64>,
}

/// Look for a sustained transverse oscillation after `transient`.
///
/// The dominant mode is the `k ≥ 1` with the largest late-time `a_k`. It is
/// sustained when its mean amplitude over the last third of the window is
/// at least 0.9 times that over the first third, so slow decay just below
/// onset does not count. The period comes from zero
/// crossings of the detrended real part of its front displacement.
pub fn detect_oscillation(result: &SimResult, transient: f64) -> Option<Oscillation> {
    let h: Vec<&Diagnostics> = result.history.iter().filter(|d| d.t >= transient).collect();
    if h.len() < 8 {
        return None;
    }
    let kmax = h[0].a.len() - 1;
    if kmax == 0 {
        return None;
    }
    let third = h.len() / 3;
    let mean = |k: usize, range: &[&Diagnostics]| range.iter().map(|d| d.a[k]).sum::<f64>() / range.len() as f64;
    let k = (1..=kmax).max_by(|&a, &b| mean(a, &h[h.len() - third..]).total_cmp(&mean(b, &h[h.len() - third..])))?;
    let early = mean(k, &h[..third]);
    let late = mean(k, &h[h.len() - third..]);
    if !(late >= 0.9 * early) || late <= 1e-300 {
        return None;
    }
    let ts: Vec<f64> = h.iter().map(|d| d.t).collect();
    let ys: Vec<f64> = h.iter().map(|d| d.front[k].re).collect();
    let period = zero_crossing_period(&ts, &detrend(&ts, &ys))?;
    let amplitude = h[h.len() - third..].iter().map(|d| d.front[k].norm()).fold(0.0, f64::max);
    Some(Oscillation { k_dominant: k, period, amplitude, localization_decay: localization_rate(&result.x1, &result.mode_envelope[k]) })
}

fn detrend(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len() as f64;
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    t.iter().zip(y).map(|(a, b)| b - my - slope * (a - mt)).collect()
}

/// Twice the mean spacing of sign changes (linearly interpolated).
pub fn zero_crossing_period(t: &[f64], y: &[f64]) -> Option<f64> {
    let mut crossings = Vec::new();
    for k in 1..y.len() {
        if y[k - 1] == 0.0 || y[k - 1].signum() != y[k].signum() {
            let s = y[k - 1] / (y[k - 1] - y[k]);
            crossings.push(t[k - 1] + s * (t[k] - t[k - 1]));
        }
    }
    if crossings.len() < 3 {
        return None;
    }
    Some(2.0 * (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

/// Slope of `−ln(envelope)` against `|x₁|` over the part of the window
/// where the envelope sits between 1e−6 and 0.5 of its peak.
fn localization_rate(x1: &[f64], env: &[f64]) -> Option<f64> {
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return None;
    }
    let pts: Vec<(f64, f64)> =
        x1.iter().zip(env).filter(|(_, e)| **e > 1e-6 * peak && **e < 0.5 * peak).map(|(x, e)| (x.abs(), -(e / peak).ln())).collect();
    if pts.len() < 4 {
        return None;
    }
    let (ts, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linear_slope(&ts, &ys))
}

pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    sxy / sxx
}

/// Least-squares slope of `ln y` against `ln t` for `t ∈ [t0, t1]`.
pub fn loglog_slope(t: &[f64], y: &[f64], t0: f64, t1: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        t.iter().zip(y).filter(|(a, b)| **a >= t0 && **a <= t1 && b.abs() > 0.0).map(|(a, b)| (a.ln(), b.abs().ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linear_slope(&xs, &ys))
}

/// Least-squares exponential rate of `a_k(t)` for `t ∈ [t0, t1]`.
pub fn growth_rate(history: &[Diagnostics], k: usize, t0: f64, t1: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        history.iter().filter(|d| d.t >= t0 && d.t <= t1 && d.a[k] > 0.0).map(|d| (d.t, d.a[k].ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linear_slope(&xs, &ys))
}

pub fn write_diagnostics_csv(path: &Path, history: &[Diagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let kmax = history.first().map_or(0, |d| d.a.len() - 1);
    let mut header: Vec<String> = ["t", "L1", "L2", "Linf", "alpha", "alphadot"].iter().map(|s| s.to_string()).collect();
    header.extend((0..=kmax).map(|k| format!("a_{k}")));
    w.write_record(&header)?;
    for d in history {
        let mut row = vec![d.t, d.l1, d.l2, d.linf, d.alpha, d.alphadot];
        row.extend(&d.a);
        w.write_record(row.iter().map(|v| format!("{v:.12e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text snapshot: `#` header lines, then one row `x1 x2 u_1 … u_n`
/// per grid point, `x₂` varying fastest.
pub fn write_snapshot(path: &Path, result: &SimResult, t: f64) -> Result<()> {
    let (n, n1, n2) = (result.dim, result.x1.len(), result.x2.len());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# cellshock snapshot v1")?;
    writeln!(f, "# t = {t:.12e}")?;
    writeln!(f, "# components = {n}, n1 = {n1}, n2 = {n2}")?;
    writeln!(f, "# columns: x1 x2 u_1..u_{n}")?;
    for i in 0..n1 {
        for j in 0..n2 {
            write!(f, "{:.12e} {:.12e}", result.x1[i], result.x2[j])?;
            for c in 0..n {
                write!(f, " {:.15e}", result.u[(c * n1 + i) * n2 + j])?;
            }
            writeln!(f)?;
        }
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::solve_profile;
    use crate::systems::ScalarBurgers;

    fn burgers() -> (ScalarBurgers, ShockProfile) {
        let sys = ScalarBurgers { c: 0.3, d: 0.5 };
        let p = solve_profile(&sys, 0.0, 20.0, 2000).unwrap();
        (sys, p)
    }

    #[test]
    fn zero_perturbation_is_steady() {
        let (sys, p) = burgers();
        let cfg = SimConfig { half_length: Some(20.0), n1: 401, n2: 8, t_final: 5.0, output_every: 1.0, k_max: 2, ..Default::default() };
        let r = integrate(&sys, &p, &cfg).unwrap();
        assert_eq!(r.status, RunStatus::Completed);
        for d in &r.history {
            assert!(d.linf < 1e-12, "{}", d.linf);
        }
    }

    #[test]
    fn shifted_profile_is_tracked() {
        let (sys, p) = burgers();
        let cfg = SimConfig {
            half_length: Some(20.0),
            n1: 401,
            n2: 4,
            t_final: 0.0,
            k_max: 1,
            seeds: vec![Seed::Shift { alpha: 0.3 }],
            ..Default::default()
        };
        let r = integrate(&sys, &p, &cfg).unwrap();
        assert!((r.history[0].alpha - 0.3).abs() < 1e-3, "{}", r.history[0].alpha);
    }

    #[test]
    fn transverse_symmetry_is_preserved() {
        let (sys, p) = burgers();
        let cfg = SimConfig {
            half_length: Some(20.0),
            n1: 401,
            n2: 8,
            t_final: 2.0,
            output_every: 0.5,
            k_max: 3,
            seeds: vec![Seed::Mode { k: 0, amplitude: 0.1, width: Some(2.0) }],
            ..Default::default()
        };
        let r = integrate(&sys, &p, &cfg).unwrap();
        for d in &r.history {
            for k in 1..=3 {
                assert!(d.a[k] < 1e-14, "a_{k} = {}", d.a[k]);
            }
        }
    }

    #[test]
    fn stretched_grid_keeps_the_profile_steady() {
        let (sys, p) = burgers();
        let cfg = SimConfig {
            half_length: Some(40.0),
            stretching: Some(Stretching { dx: 0.05, core: 3.0, ratio: 1.05, dx_max: 0.4 }),
            n2: 4,
            t_final: 3.0,
            output_every: 1.0,
            k_max: 1,
            ..Default::default()
        };
        let r = integrate(&sys, &p, &cfg).unwrap();
        let h: Vec<f64> = r.x1.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(h.iter().cloned().fold(f64::INFINITY, f64::min) > 0.049 && h.iter().cloned().fold(0.0, f64::max) <= 0.4 + 1e-12);
        assert!(r.x1[0] <= -40.0 && r.x1[r.x1.len() - 1] >= 40.0 && (r.x1[0] + r.x1[r.x1.len() - 1]).abs() < 1e-12);
        for d in &r.history {
            assert!(d.linf < 1e-12, "{}", d.linf);
        }
    }

    #[test]
    fn localized_bump_conserves_mass() {
        let (sys, p) = burgers();
        let cfg = SimConfig {
            half_length: Some(20.0),
            n1: 401,
            n2: 8,
            t_final: 2.0,
            output_every: 0.5,
            k_max: 2,
            seeds: vec![Seed::Bump { amplitude: 0.05, x1: 2.0, x2: 0.5, width: 1.0 }],
            ..Default::default()
        };
        let r = integrate(&sys, &p, &cfg).unwrap();
        let m0 = r.history[0].mass;
        assert!(m0 > 0.0);
        for d in &r.history {
            assert!((d.mass - m0).abs() < 1e-8 * m0, "mass {} vs {m0}", d.mass);
        }
    }

    #[test]
    fn step_bound_is_enforced() {
        let (sys, p) = burgers();
        let cfg = SimConfig { half_length: Some(20.0), n1: 401, dt: Some(1.0), ..Default::default() };
        assert!(matches!(integrate(&sys, &p, &cfg), Err(Error::StepSize(_))));
    }

    #[test]
    fn zero_crossings() {
        let t: Vec<f64> = (0..400).map(|k| k as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|t| (2.0 * PI * t / 1.7).sin()).collect();
        assert!((zero_crossing_period(&t, &y).unwrap() - 1.7).abs() < 1e-2);
    }
}
