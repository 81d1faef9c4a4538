//! Parametric viscous conservation laws `u_t + f¹(u)_{x1} + f²(u)_{x2} = Δu`
//! in a frame moving with the shock, plus the structural checks that the
//! rest of the pipeline relies on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::real_eigen;
use crate::profiles::ShockProfile;

/// A one-parameter family of two-dimensional n-component flux systems.
///
/// `f1` is the axial flux already shifted by the wave speed (`f¹ − s·u`), so
/// the shock is stationary. Implementors must keep `f1(u_minus) = f1(u_plus)`.
pub trait FluxSystem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn epsilon_range(&self) -> (f64, f64);
    fn f1(&self, eps: f64, u: &DVector<f64>) -> DVector<f64>;
    fn f2(&self, eps: f64, u: &DVector<f64>) -> DVector<f64>;
    fn df1(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64>;
    fn df2(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64>;
    /// `(u_minus, u_plus)`.
    fn end_states(&self, eps: f64) -> (DVector<f64>, DVector<f64>);

    /// Speed `s(ε)` that was absorbed into `f1`.
    fn speed(&self, _eps: f64) -> f64 {
        0.0
    }

    /// Whether `u` lies in the physical state space (positive density for
    /// gas dynamics). Shooting abandons trajectories that leave it.
    fn in_domain(&self, _u: &[f64]) -> bool {
        true
    }

    /// Both fluxes at `u`, written into `f1` and `f2`. The simulator calls
    /// this at every grid point; built-ins override it to avoid allocation.
    fn fluxes(&self, eps: f64, u: &[f64], f1: &mut [f64], f2: &mut [f64]) {
        let v = DVector::from_column_slice(u);
        f1.copy_from_slice(self.f1(eps, &v).as_slice());
        f2.copy_from_slice(self.f2(eps, &v).as_slice());
    }
}

pub fn check_eps(sys: &dyn FluxSystem, eps: f64) -> Result<()> {
    let (lo, hi) = sys.epsilon_range();
    if !(lo..=hi).contains(&eps) || !eps.is_finite() {
        return Err(Error::Domain { value: eps, lo, hi });
    }
    Ok(())
}

/// `(A¹₋, A¹₊)`: the axial Jacobian at both end states.
pub fn axial_jacobians(sys: &dyn FluxSystem, eps: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_eps(sys, eps)?;
    let (um, up) = sys.end_states(eps);
    Ok((sys.df1(eps, &um), sys.df1(eps, &up)))
}

/// Largest relative deviation of the analytic Jacobians from centered
/// differences of the fluxes at `u`.
pub fn jacobian_defect(sys: &dyn FluxSystem, eps: f64, u: &DVector<f64>) -> f64 {
    let n = sys.dim();
    let mut worst: f64 = 0.0;
    for (flux, jac) in [
        (&(|v: &DVector<f64>| sys.f1(eps, v)) as &dyn Fn(&DVector<f64>) -> DVector<f64>, sys.df1(eps, u)),
        (&|v: &DVector<f64>| sys.f2(eps, v), sys.df2(eps, u)),
    ] {
        let mut fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + u[j].abs());
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += h;
            dn[j] -= h;
            fd.set_column(j, &((flux(&up) - flux(&dn)) / (2.0 * h)));
        }
        let scale = jac.norm().max(1.0);
        worst = worst.max((fd - jac).norm() / scale);
    }
    worst
}

/// Real eigenvalues (ascending) and matching unit eigenvectors, the first
/// significant entry of each made positive.
pub fn sorted_real_eigen(m: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let (vals, vecs) = real_eigen(m)?;
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let n = vals.len();
    let mut out = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        out.set_column(k, &vecs.column(i));
    }
    Some((idx.iter().map(|&i| vals[i]).collect(), out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1_ok: bool,
    pub eig_minus: Vec<f64>,
    pub eig_plus: Vec<f64>,
    pub h3_value: f64,
    pub lax_type_c: usize,
    pub h2_dimension_check: bool,
    /// Profile transversality indicator, when a profile was supplied.
    pub transversality: Option<f64>,
    pub diagnostics: Vec<String>,
}

impl HypothesisReport {
    pub fn ok(&self) -> bool {
        self.h1_ok && self.h2_dimension_check && self.h3_value.abs() > 1e-12
    }
}

fn h1_issue(vals: &[f64], side: &str) -> Option<String> {
    let radius = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    if let Some(v) = vals.iter().find(|v| v.abs() < 1e-10 * radius) {
        return Some(format!("A1{side} has a zero eigenvalue ({v:e})"));
    }
    for w in vals.windows(2) {
        if (w[1] - w[0]).abs() < 1e-8 * radius {
            return Some(format!("A1{side} has repeated eigenvalue {}", w[0]));
        }
    }
    None
}

/// Outgoing eigenvectors: negative speeds at `u₋`, positive speeds at `u₊`.
pub(crate) fn outgoing_vectors(
    vals_m: &[f64],
    vecs_m: &DMatrix<f64>,
    vals_p: &[f64],
    vecs_p: &DMatrix<f64>,
) -> Vec<DVector<f64>> {
    let mut cols = Vec::new();
    for (k, v) in vals_m.iter().enumerate() {
        if *v < 0.0 {
            cols.push(vecs_m.column(k).into_owned());
        }
    }
    for (k, v) in vals_p.iter().enumerate() {
        if *v > 0.0 {
            cols.push(vecs_p.column(k).into_owned());
        }
    }
    cols
}

/// Numerical check of the structural hypotheses at parameter `eps`.
///
/// Defective or non-real end-state Jacobians are reported through
/// `h1_ok = false`, never as an error.
pub fn check_hypotheses(sys: &dyn FluxSystem, eps: f64, profile: Option<&ShockProfile>) -> Result<HypothesisReport> {
    let (am, ap) = axial_jacobians(sys, eps)?;
    let n = sys.dim();
    let mut diagnostics = Vec::new();
    let (em, ep) = match (sorted_real_eigen(&am), sorted_real_eigen(&ap)) {
        (Some(m), Some(p)) => (m, p),
        _ => {
            diagnostics.push("end-state Jacobian is not diagonalizable over the reals".into());
            return Ok(HypothesisReport {
                h1_ok: false,
                eig_minus: vec![],
                eig_plus: vec![],
                h3_value: 0.0,
                lax_type_c: 0,
                h2_dimension_check: false,
                transversality: None,
                diagnostics,
            });
        }
    };
    let mut h1_ok = true;
    for (vals, side) in [(&em.0, "-"), (&ep.0, "+")] {
        if let Some(msg) = h1_issue(vals, side) {
            h1_ok = false;
            diagnostics.push(msg);
        }
    }
    let neg_minus = em.0.iter().filter(|v| **v < 0.0).count();
    let pos_plus = ep.0.iter().filter(|v| **v > 0.0).count();
    // Lax condition: n - c positive speeds at u₊ and c - 1 negative at u₋.
    let c = neg_minus + 1;
    let h2 = h1_ok && pos_plus + c == n && pos_plus + neg_minus + 1 == n;
    if !h2 {
        diagnostics.push(format!(
            "outgoing characteristic count {} (expected n - 1 = {})",
            pos_plus + neg_minus,
            n - 1
        ));
    }
    let h3_value = if h2 {
        let (um, up) = sys.end_states(eps);
        let mut cols = outgoing_vectors(&em.0, &em.1, &ep.0, &ep.1);
        cols.push(up - um);
        DMatrix::from_columns(&cols).determinant()
    } else {
        0.0
    };
    if h2 && h3_value.abs() < 1e-10 {
        diagnostics.push("Liu-Majda determinant vanishes".into());
    }
    let transversality = profile.map(|p| crate::profiles::transversality_diagnostic(p, sys));
    Ok(HypothesisReport {
        h1_ok,
        eig_minus: em.0,
        eig_plus: ep.0,
        h3_value,
        lax_type_c: c,
        h2_dimension_check: h2,
        transversality,
        diagnostics,
    })
}

/// Scalar Burgers-type law: `f¹ = u²/2`, `f² = c·u + (d + ε)·u²/2`, `u± = ∓1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalarBurgers {
    pub c: f64,
    pub d: f64,
}

impl FluxSystem for ScalarBurgers {
    fn name(&self) -> &str {
        "burgers"
    }
    fn dim(&self) -> usize {
        1
    }
    fn epsilon_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
    fn f1(&self, _eps: f64, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 0.5 * u[0] * u[0])
    }
    fn f2(&self, eps: f64, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.c * u[0] + 0.5 * (self.d + eps) * u[0] * u[0])
    }
    fn df1(&self, _eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, u[0])
    }
    fn df2(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.c + (self.d + eps) * u[0])
    }
    fn end_states(&self, _eps: f64) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_element(1, 1.0), DVector::from_element(1, -1.0))
    }
    fn fluxes(&self, eps: f64, u: &[f64], f1: &mut [f64], f2: &mut [f64]) {
        f1[0] = 0.5 * u[0] * u[0];
        f2[0] = self.c * u[0] + 0.5 * (self.d + eps) * u[0] * u[0];
    }
}

/// Two-component Burgers system with a passive second field.
///
/// `f¹ = (p²/2, a·q + q²/2)` and
/// `f² = (c·p + d·p²/2 + (b12 + h(ε)·p)·q, b21·p + b22·q)` with
/// `h(ε) = h + g·ε`, end states `(±s, 0)`. Since `q ≡ 0` along the profile,
/// the profile is the scalar `−s·tanh(s·x/2)` for every ε. The coupling
/// `∂f²₁/∂q = b12 + h·p` varies across the shock, and it is this variation
/// that moves the refined coefficient `Re β` through zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledBurgers {
    pub a: f64,
    pub c: f64,
    pub d: f64,
    pub b12: f64,
    pub h: f64,
    pub b21: f64,
    pub b22: f64,
    pub g: f64,
    /// Shock amplitude.
    pub s: f64,
}

impl CoupledBurgers {
    pub fn h_at(&self, eps: f64) -> f64 {
        self.h + self.g * eps
    }
}

impl Default for CoupledBurgers {
    fn default() -> Self {
        Self::tuned()
    }
}

impl FluxSystem for CoupledBurgers {
    fn name(&self) -> &str {
        "coupled"
    }
    fn dim(&self) -> usize {
        2
    }
    fn epsilon_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
    fn f1(&self, _eps: f64, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![0.5 * u[0] * u[0], self.a * u[1] + 0.5 * u[1] * u[1]])
    }
    fn f2(&self, eps: f64, u: &DVector<f64>) -> DVector<f64> {
        let (p, q) = (u[0], u[1]);
        DVector::from_vec(vec![
            self.c * p + 0.5 * self.d * p * p + (self.b12 + self.h_at(eps) * p) * q,
            self.b21 * p + self.b22 * q,
        ])
    }
    fn df1(&self, _eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[u[0], 0.0, 0.0, self.a + u[1]])
    }
    fn df2(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let (p, q) = (u[0], u[1]);
        let h = self.h_at(eps);
        DMatrix::from_row_slice(2, 2, &[self.c + self.d * p + h * q, self.b12 + h * p, self.b21, self.b22])
    }
    fn end_states(&self, _eps: f64) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(vec![self.s, 0.0]), DVector::from_vec(vec![-self.s, 0.0]))
    }
    fn fluxes(&self, eps: f64, u: &[f64], f1: &mut [f64], f2: &mut [f64]) {
        let (p, q) = (u[0], u[1]);
        f1[0] = 0.5 * p * p;
        f1[1] = self.a * q + 0.5 * q * q;
        f2[0] = self.c * p + 0.5 * self.d * p * p + (self.b12 + self.h_at(eps) * p) * q;
        f2[1] = self.b21 * p + self.b22 * q;
    }
}

/// Isentropic gas dynamics with `p = κ ρ^γ` and identity viscosity, state
/// `(ρ, ρu, ρv)`, written in the frame of a standing shock.
///
/// Normalized so the downstream state is `ρ = 1, u = 1`; the downstream Mach
/// ratio `M = c₊/u₊ = mach + ε` fixes `κ = M²/γ`. The upstream state follows
/// from the Rankine–Hugoniot conditions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IsentropicEuler {
    pub gamma: f64,
    pub mach: f64,
}

impl IsentropicEuler {
    pub fn downstream_mach(&self, eps: f64) -> f64 {
        self.mach + eps
    }

    fn kappa(&self, eps: f64) -> f64 {
        let m = self.downstream_mach(eps);
        m * m / self.gamma
    }

    fn pressure(&self, eps: f64, rho: f64) -> (f64, f64) {
        let k = self.kappa(eps);
        (k * rho.powf(self.gamma), k * self.gamma * rho.powf(self.gamma - 1.0))
    }

    /// Upstream velocity `w > 1` solving `w + κ w^{-γ} = 1 + κ`.
    fn upstream_velocity(&self, eps: f64) -> f64 {
        let k = self.kappa(eps);
        let g = self.gamma;
        let h = |w: f64| w + k * w.powf(-g) - 1.0 - k;
        // h(1) = 0 and h'(1) = 1 - γκ < 0 for a subsonic downstream state,
        // so the other root lies to the right and h(w) -> +inf.
        let mut lo = 1.0 + 1e-12;
        let mut hi = 2.0;
        while h(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl FluxSystem for IsentropicEuler {
    fn name(&self) -> &str {
        "euler"
    }
    fn dim(&self) -> usize {
        3
    }
    fn epsilon_range(&self) -> (f64, f64) {
        (1.0 - self.mach + 0.02, 2.0)
    }
    fn in_domain(&self, u: &[f64]) -> bool {
        u[0] > 0.0
    }
    fn f1(&self, eps: f64, u: &DVector<f64>) -> DVector<f64> {
        let (rho, m, n) = (u[0], u[1], u[2]);
        let p = self.pressure(eps, rho).0;
        DVector::from_vec(vec![m, m * m / rho + p, m * n / rho])
    }
    fn f2(&self, eps: f64, u: &DVector<f64>) -> DVector<f64> {
        let (rho, m, n) = (u[0], u[1], u[2]);
        let p = self.pressure(eps, rho).0;
        DVector::from_vec(vec![n, m * n / rho, n * n / rho + p])
    }
    fn df1(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let (rho, m, n) = (u[0], u[1], u[2]);
        let (vx, vy) = (m / rho, n / rho);
        let c2 = self.pressure(eps, rho).1;
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, c2 - vx * vx, 2.0 * vx, 0.0, -vx * vy, vy, vx])
    }
    fn df2(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let (rho, m, n) = (u[0], u[1], u[2]);
        let (vx, vy) = (m / rho, n / rho);
        let c2 = self.pressure(eps, rho).1;
        DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, -vx * vy, vy, vx, c2 - vy * vy, 0.0, 2.0 * vy])
    }
    fn end_states(&self, eps: f64) -> (DVector<f64>, DVector<f64>) {
        let w = self.upstream_velocity(eps);
        (DVector::from_vec(vec![1.0 / w, 1.0, 0.0]), DVector::from_vec(vec![1.0, 1.0, 0.0]))
    }
    fn fluxes(&self, eps: f64, u: &[f64], f1: &mut [f64], f2: &mut [f64]) {
        let (rho, m, n) = (u[0], u[1], u[2]);
        let p = self.pressure(eps, rho).0;
        f1[0] = m;
        f1[1] = m * m / rho + p;
        f1[2] = m * n / rho;
        f2[0] = n;
        f2[1] = m * n / rho;
        f2[2] = n * n / rho + p;
    }
}

/// Serializable selection of a built-in system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemSpec {
    Burgers {
        #[serde(default = "one")]
        c: f64,
        #[serde(default)]
        d: f64,
    },
    Coupled(#[serde(default)] CoupledBurgers),
    Euler {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_mach")]
        mach: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    1.4
}
fn default_mach() -> f64 {
    1.5
}

impl CoupledBurgers {
    /// Parameter set for which `Re β` changes sign near `ε = 0`, decreasing
    /// in ε, with the critical curve inside the parameter range up to
    /// `ξ ≈ 0.5`.
    pub fn tuned() -> Self {
        Self { a: 7.5, c: 15.0, d: 0.0, b12: -5.0, h: 0.284936, b21: -10.0, b22: 0.0, g: 0.15, s: 10.0 }
    }
}

impl SystemSpec {
    pub fn build(&self) -> Box<dyn FluxSystem> {
        match *self {
            SystemSpec::Burgers { c, d } => Box::new(ScalarBurgers { c, d }),
            SystemSpec::Coupled(p) => Box::new(p),
            SystemSpec::Euler { gamma, mach } => Box::new(IsentropicEuler { gamma, mach }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burgers_jacobians_and_report() {
        let sys = ScalarBurgers { c: 1.0, d: 0.0 };
        let (am, ap) = axial_jacobians(&sys, 0.0).unwrap();
        assert_eq!(am[(0, 0)], 1.0);
        assert_eq!(ap[(0, 0)], -1.0);
        let r = check_hypotheses(&sys, 0.0, None).unwrap();
        assert!(r.h1_ok && r.h2_dimension_check);
        assert_eq!(r.lax_type_c, 1);
        assert!((r.h3_value + 2.0).abs() < 1e-14);
    }

    #[test]
    fn fast_fluxes_agree_with_vector_fluxes() {
        let systems: Vec<Box<dyn FluxSystem>> = vec![
            Box::new(ScalarBurgers { c: 0.4, d: 0.7 }),
            Box::new(CoupledBurgers::tuned()),
            Box::new(IsentropicEuler { gamma: 1.4, mach: 1.5 }),
        ];
        for sys in &systems {
            let (um, up) = sys.end_states(0.1);
            let u = (um * 0.3 + up * 0.7).add_scalar(0.05);
            let n = sys.dim();
            let (mut f1, mut f2) = (vec![0.0; n], vec![0.0; n]);
            sys.fluxes(0.1, u.as_slice(), &mut f1, &mut f2);
            for (a, b) in f1.iter().zip(sys.f1(0.1, &u).iter()).chain(f2.iter().zip(sys.f2(0.1, &u).iter())) {
                assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()), "{a} {b}");
            }
        }
    }

    #[test]
    fn out_of_range_is_domain_error() {
        let sys = ScalarBurgers { c: 1.0, d: 0.0 };
        assert!(matches!(axial_jacobians(&sys, 5.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn zero_eigenvalue_fails_h1() {
        let sys = CoupledBurgers { a: 0.0, ..CoupledBurgers::tuned() };
        let r = check_hypotheses(&sys, 0.0, None).unwrap();
        assert!(!r.h1_ok);
    }

    #[test]
    fn euler_characteristic_speeds() {
        let sys = IsentropicEuler { gamma: 1.4, mach: 1.5 };
        let (um, up) = sys.end_states(0.0);
        let (am, ap) = axial_jacobians(&sys, 0.0).unwrap();
        for (u, a) in [(&um, &am), (&up, &ap)] {
            let vx = u[1] / u[0];
            let c = sys.pressure(0.0, u[0]).1.sqrt();
            let (vals, _) = sorted_real_eigen(a).unwrap();
            for (got, want) in vals.iter().zip([vx - c, vx, vx + c]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
        // Upstream supersonic, downstream subsonic.
        let r = check_hypotheses(&sys, 0.0, None).unwrap();
        assert!(r.ok());
        assert_eq!(r.lax_type_c, 1);
    }

    #[test]
    fn rankine_hugoniot_closure() {
        let systems: Vec<Box<dyn FluxSystem>> = vec![
            Box::new(ScalarBurgers { c: 0.3, d: 0.5 }),
            Box::new(CoupledBurgers::tuned()),
            Box::new(IsentropicEuler { gamma: 1.4, mach: 1.5 }),
        ];
        for sys in &systems {
            let (lo, hi) = sys.epsilon_range();
            for k in 0..20 {
                let eps = lo + (hi - lo) * k as f64 / 19.0;
                let (um, up) = sys.end_states(eps);
                let r = (sys.f1(eps, &up) - sys.f1(eps, &um)).amax();
                assert!(r <= 1e-12, "{}: {r}", sys.name());
            }
        }
    }

    #[test]
    fn spec_round_trip() {
        let s: SystemSpec = serde_json::from_str(r#"{"id": "euler", "mach": 2.0}"#).unwrap();
        assert_eq!(s.build().dim(), 3);
        let s: SystemSpec = serde_json::from_str(r#"{"id": "coupled"}"#).unwrap();
        assert_eq!(s.build().dim(), 2);
    }
}
