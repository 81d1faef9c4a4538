//! Adaptive Dormand–Prince 5(4) integrator over real or complex vectors.

use nalgebra::{ComplexField, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, h_init: 1e-2, h_max: 0.5, max_steps: 200_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<T: ComplexField<RealField = f64> + Copy>(y: &DVector<T>, terms: &[(f64, &DVector<T>)], h: f64) -> DVector<T> {
    let mut out = y.clone();
    for (coef, k) in terms {
        if *coef != 0.0 {
            let s = T::from_real(coef * h);
            out.iter_mut().zip(k.iter()).for_each(|(o, &ki)| *o += ki * s);
        }
    }
    out
}

/// A single embedded step. Returns the new state, its derivative (FSAL) and
/// the scaled error norm.
fn dopri_step<T, F>(f: &mut F, x: f64, y: &DVector<T>, k1: &DVector<T>, h: f64, opts: &OdeOptions) -> (DVector<T>, DVector<T>, f64)
where
    T: ComplexField<RealField = f64> + Copy,
    F: FnMut(f64, &DVector<T>) -> DVector<T>,
{
    let k2 = f(x + C2 * h, &axpy(y, &[(A21, k1)], h));
    let k3 = f(x + C3 * h, &axpy(y, &[(A31, k1), (A32, &k2)], h));
    let k4 = f(x + C4 * h, &axpy(y, &[(A41, k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(x + C5 * h, &axpy(y, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
    let k6 = f(x + h, &axpy(y, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h));
    let y_new = axpy(y, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], h);
    let k7 = f(x + h, &y_new);
    let err = axpy(
        &DVector::zeros(y.len()),
        &[(E1, k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
        h,
    );
    let mut acc = 0.0;
    for i in 0..y.len() {
        let sc = opts.atol + opts.rtol * y[i].modulus().max(y_new[i].modulus());
        let r = err[i].modulus() / sc;
        acc += r * r;
    }
    let en = (acc / y.len().max(1) as f64).sqrt();
    (y_new, k7, en)
}

/// Integrator state that can be advanced to successive abscissae.
pub struct Stepper<T: ComplexField<RealField = f64> + Copy> {
    pub x: f64,
    pub y: DVector<T>,
    k: Option<DVector<T>>,
    h: f64,
    opts: OdeOptions,
    steps: usize,
}

impl<T: ComplexField<RealField = f64> + Copy> Stepper<T> {
    pub fn new(x0: f64, y0: DVector<T>, opts: OdeOptions) -> Self {
        Self { x: x0, y: y0, k: None, h: opts.h_init, opts, steps: 0 }
    }

    /// Advance exactly to `target` (either direction).
    pub fn advance<F>(&mut self, f: &mut F, target: f64) -> Result<()>
    where
        F: FnMut(f64, &DVector<T>) -> DVector<T>,
    {
        let dir = if target >= self.x { 1.0 } else { -1.0 };
        while (target - self.x) * dir > 1e-14 * (1.0 + target.abs()) {
            if self.steps >= self.opts.max_steps {
                return Err(Error::Conditioning(format!("ODE step budget exhausted at x = {}", self.x)));
            }
            let k1 = match self.k.take() {
                Some(k) => k,
                None => f(self.x, &self.y),
            };
            let remaining = (target - self.x).abs();
            let mut h = self.h.abs().min(self.opts.h_max).min(remaining);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let (y_new, k7, en) = dopri_step(f, self.x, &self.y, &k1, dir * h, &self.opts);
            self.steps += 1;
            if !en.is_finite() {
                self.h = h * 0.1;
                self.k = Some(k1);
                if self.h < 1e-14 * (1.0 + self.x.abs()) {
                    return Err(Error::Conditioning("ODE solution overflow".into()));
                }
                continue;
            }
            if en <= 1.0 {
                self.x = if last { target } else { self.x + dir * h };
                self.y = y_new;
                self.k = Some(k7);
                let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                // A clipped final step says nothing about the natural step size.
                if !last || fac < 1.0 {
                    self.h = h * fac;
                }
            } else {
                self.k = Some(k1);
                self.h = h * (0.9 * en.powf(-0.2)).clamp(0.1, 0.9);
                if self.h < 1e-14 * (1.0 + self.x.abs()) {
                    return Err(Error::Conditioning(format!("ODE step underflow at x = {}", self.x)));
                }
            }
        }
        Ok(())
    }

    /// Take one adaptive step toward `limit` and return the accepted abscissa.
    pub fn step_toward<F>(&mut self, f: &mut F, limit: f64) -> Result<f64>
    where
        F: FnMut(f64, &DVector<T>) -> DVector<T>,
    {
        let dir = if limit >= self.x { 1.0 } else { -1.0 };
        let h = self.h.abs().min(self.opts.h_max).min((limit - self.x).abs());
        let start = self.x;
        self.advance(f, self.x + dir * h)?;
        // A step below the relative floor of `advance` leaves x unchanged.
        if self.x == start && (limit - start).abs() > 1e-14 * (1.0 + limit.abs()) {
            return Err(Error::Conditioning(format!("ODE step underflow at x = {start}")));
        }
        Ok(self.x)
    }

    pub fn derivative<F>(&mut self, f: &mut F) -> DVector<T>
    where
        F: FnMut(f64, &DVector<T>) -> DVector<T>,
    {
        match &self.k {
            Some(k) => k.clone(),
            None => {
                let k = f(self.x, &self.y);
                self.k = Some(k.clone());
                k
            }
        }
    }
}

/// Integrate from `x0` to `x1`.
pub fn integrate<T, F>(mut f: F, x0: f64, y0: DVector<T>, x1: f64, opts: OdeOptions) -> Result<DVector<T>>
where
    T: ComplexField<RealField = f64> + Copy,
    F: FnMut(f64, &DVector<T>) -> DVector<T>,
{
    let mut s = Stepper::new(x0, y0, opts);
    s.advance(&mut f, x1)?;
    Ok(s.y)
}

/// Integrate from `x0` until `event(y)` changes sign, or until `x_limit`.
///
/// Returns the located crossing `(x, y)` refined by secant iteration, or
/// `None` if no crossing occurred or `abort(y)` fired first.
pub fn integrate_until<F, G, A>(
    mut f: F,
    x0: f64,
    y0: DVector<f64>,
    x_limit: f64,
    event: G,
    abort: A,
    opts: OdeOptions,
) -> Result<Option<(f64, DVector<f64>)>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> f64,
    A: Fn(&DVector<f64>) -> bool,
{
    let mut s = Stepper::new(x0, y0, opts);
    let mut g_prev = event(&s.y);
    while (x_limit - s.x).abs() > 1e-14 * (1.0 + x_limit.abs()) {
        let x_prev = s.x;
        let y_prev = s.y.clone();
        s.step_toward(&mut f, x_limit)?;
        if abort(&s.y) {
            return Ok(None);
        }
        let g = event(&s.y);
        if g_prev == 0.0 {
            return Ok(Some((x_prev, y_prev)));
        }
        if g_prev * g <= 0.0 {
            // Illinois refinement on the step length from the bracketing state.
            let (mut a, mut ga) = (0.0_f64, g_prev);
            let (mut b, mut gb) = (s.x - x_prev, g);
            let mut best = (s.x, s.y.clone());
            let mut side = 0;
            for _ in 0..100 {
                let t = if (gb - ga).abs() > 0.0 { b - gb * (b - a) / (gb - ga) } else { 0.5 * (a + b) };
                let t = if (t - a) * (t - b) < 0.0 { t } else { 0.5 * (a + b) };
                let y_t = integrate(&mut f, x_prev, y_prev.clone(), x_prev + t, opts)?;
                let gt = event(&y_t);
                best = (x_prev + t, y_t);
                if gt == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * (x_prev.abs() + b.abs()) {
                    break;
                }
                if gt * ga < 0.0 {
                    b = t;
                    gb = gt;
                    if side == -1 {
                        ga *= 0.5;
                    }
                    side = -1;
                } else {
                    a = t;
                    ga = gt;
                    if side == 1 {
                        gb *= 0.5;
                    }
                    side = 1;
                }
            }
            return Ok(Some(best));
        }
        g_prev = g;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn finite_time_blowup_terminates() {
        let r = integrate_until(
            |_, y: &DVector<f64>| y.map(|v| v * v),
            0.0,
            DVector::from_vec(vec![1.0]),
            2.0,
            |y| y[0] + 1.0,
            |_| false,
            OdeOptions { rtol: 1e-13, atol: 1e-16, ..OdeOptions::default() },
        );
        assert!(matches!(r, Err(Error::Conditioning(_))), "{r:?}");
    }

    #[test]
    fn exponential_decay_real() {
        let y = integrate(|_, y: &DVector<f64>| -y, 0.0, DVector::from_vec(vec![1.0]), 5.0, OdeOptions::default()).unwrap();
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn rotation_complex_backward() {
        let iw = Complex64::new(0.0, 2.0);
        let y = integrate(
            |_, y: &DVector<Complex64>| y * iw,
            1.0,
            DVector::from_vec(vec![Complex64::new(1.0, 0.0)]),
            -2.0,
            OdeOptions::default(),
        )
        .unwrap();
        let exact = (iw * -3.0).exp();
        assert!((y[0] - exact).norm() < 1e-9);
    }

    #[test]
    fn event_location() {
        // y' = -1 from y = 1 crosses zero at x = 1.
        let hit = integrate_until(
            |_, _y: &DVector<f64>| DVector::from_vec(vec![-1.0]),
            0.0,
            DVector::from_vec(vec![1.0]),
            10.0,
            |y| y[0],
            |_| false,
            OdeOptions::default(),
        )
        .unwrap()
        .unwrap();
        assert!((hit.0 - 1.0).abs() < 1e-12);
    }
}
