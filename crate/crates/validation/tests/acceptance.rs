//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line on
//! stderr (outside the test harness capture) and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use cellshock::duct::{cascade, channel_spectrum, CascadeOptions, Window};
use cellshock::evans::{default_directions, gamma_transversality};
use cellshock::lopatinski::{branch_points, homogeneity_check, Lopatinski};
use cellshock::refined::{critical_curve, refined_coefficients, root_branch, EvansFamily, RefinedOptions, branch_grid, fit_branch};
use cellshock::simulate::{detect_oscillation, growth_rate, integrate, loglog_slope, Seed, SimConfig, SimResult, Stretching};
use cellshock::spectral::{Rect, SpectralFamily, SyntheticFamily};
use cellshock::{solve_profile, CoupledBurgers, EvansFunction, FluxSystem, IsentropicEuler, ScalarBurgers, C64};
use cellshock_validation::oracle::{scalar_branch, ScalarModeOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n}: {verdict}  {detail}");
}

/// Small deterministic generator for sample points.
fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scalar() -> ScalarBurgers {
    ScalarBurgers { c: 0.4, d: 0.7 }
}

fn builtins() -> Vec<Arc<dyn FluxSystem>> {
    vec![Arc::new(scalar()), Arc::new(CoupledBurgers::tuned()), Arc::new(IsentropicEuler { gamma: 1.4, mach: 1.5 })]
}

fn random_lambda(rng: &mut impl Rng) -> C64 {
    C64::new(rng.random_range(0.05..2.0), rng.random_range(-2.0..2.0))
}

#[test]
fn criterion_01_profile_closed_form() {
    let start = Instant::now();
    let p = solve_profile(&ScalarBurgers { c: 1.0, d: 0.0 }, 0.0, 20.0, 2000).unwrap();
    let elapsed = start.elapsed();
    let mut err: f64 = 0.0;
    for k in 0..p.grid.len() - 1 {
        for x in [p.grid[k], 0.5 * (p.grid[k] + p.grid[k + 1])] {
            err = err.max((p.eval(x)[0] + (0.5 * x).tanh()).abs());
        }
    }
    let pass = err <= 1e-8 && elapsed < Duration::from_secs(1);
    report(1, pass, &format!("sup error {err:.2e} (≤ 1e-8), {elapsed:.2?} (< 1 s)"));
    assert!(pass);
}

#[test]
fn criterion_02_one_dimensional_relation() {
    let mut rng = rng(2);
    let mut worst: f64 = 0.0;
    for sys in builtins() {
        let lop = Lopatinski::new(sys.as_ref(), 0.0).unwrap();
        for _ in 0..20 {
            let l = random_lambda(&mut rng);
            let d = lop.value(0.0, l).unwrap();
            worst = worst.max((d - l * lop.h3).norm() / (l * lop.h3).norm());
        }
    }
    let pass = worst <= 1e-8;
    report(2, pass, &format!("worst relative defect {worst:.2e} over 20 λ × 3 systems (≤ 1e-8)"));
    assert!(pass);
}

#[test]
fn criterion_03_homogeneity() {
    let mut rng = rng(3);
    let mut worst: f64 = 0.0;
    for sys in builtins() {
        let samples: Vec<(f64, C64)> = (0..50).map(|_| (rng.random_range(-2.0..2.0), random_lambda(&mut rng))).collect();
        worst = worst.max(homogeneity_check(sys.as_ref(), 0.0, &samples).unwrap());
    }
    let pass = worst <= 1e-8;
    report(3, pass, &format!("worst degree-one defect {worst:.2e} over 50 samples × 3 systems (≤ 1e-8)"));
    assert!(pass);
}

#[test]
fn criterion_04_gas_branch_points() {
    let sets = [(1.4, 1.5, 1.0), (1.4, 2.0, 0.5), (5.0 / 3.0, 1.3, 1.0), (1.2, 3.0, 2.0), (1.4, 1.1, -0.7)];
    let mut worst: f64 = 0.0;
    for (gamma, mach, xi0) in sets {
        let sys = IsentropicEuler { gamma, mach };
        let want = f64::abs(xi0) * (mach * mach - 1.0).sqrt();
        let bps = branch_points(&sys, 0.0, xi0, 10.0 * want + 10.0).unwrap();
        let err = bps.iter().map(|t| (t.abs() - want).abs()).fold(f64::INFINITY, f64::min);
        worst = worst.max(err);
    }
    let pass = worst <= 1e-6;
    report(4, pass, &format!("worst branch-point error {worst:.2e} over 5 parameter sets (≤ 1e-6)"));
    assert!(pass);
}

#[test]
fn criterion_05_low_frequency_factorization() {
    let mut worst_zero: f64 = 0.0;
    let mut worst_spread: f64 = 0.0;
    for sys in builtins() {
        let profile = Arc::new(solve_profile(sys.as_ref(), 0.0, 20.0, 2000).unwrap());
        let evans = EvansFunction::new(sys.clone(), profile).unwrap();
        let scale = evans.evans(0.0, C64::new(1.0, 0.0)).unwrap().value.norm();
        worst_zero = worst_zero.max(evans.evans(0.0, C64::new(0.0, 0.0)).unwrap().value.norm() / scale);
        let lop = Lopatinski::new(sys.as_ref(), 0.0).unwrap();
        let g = gamma_transversality(&evans, &lop, &default_directions(), 1e-3).unwrap();
        worst_spread = worst_spread.max(g.spread);
    }
    let pass = worst_zero <= 1e-10 && worst_spread <= 1e-3;
    report(5, pass, &format!("|D(0,0)|/scale {worst_zero:.2e} (≤ 1e-10), slope-ratio spread {worst_spread:.2e} over 5 directions (≤ 1e-3)"));
    assert!(pass);
}

#[test]
fn criterion_06_beta_against_discrete_branch() {
    let sys = scalar();
    let xis: Vec<f64> = (0..9).map(|j| 0.02 + 0.01 * j as f64).collect();
    let (_, coef) = scalar_branch(sys.c, sys.d, 0.0, &xis, 16.0, 600);
    let oracle = -coef[2];
    let fam = EvansFamily::new(Arc::new(sys));
    let beta = cellshock::refined::beta_at(&fam, 0.0, 1e-2).unwrap();
    let rel = (beta - oracle).norm() / oracle.norm();
    let pass = rel <= 1e-2;
    report(6, pass, &format!("β = {:.6}, oracle {:.6}, relative gap {rel:.2e} (≤ 1e-2)", beta.re, oracle.re));
    assert!(pass);
}

#[test]
fn criterion_07_synthetic_recovery() {
    let fam = SyntheticFamily { tau: 1.3, beta0: [0.4, 0.25], beta1: [-1.6, 0.3], delta: [-0.5, 0.7], scale: [2.0, -1.0] };
    let opts = RefinedOptions::default();
    let eps = 0.1;
    let planted = fam.at(eps);
    let f = fam.member(eps).unwrap();
    let mut samples = root_branch(f.as_ref(), fam.neutral_root(eps).unwrap(), &branch_grid(opts.xi_max, opts.samples), true).unwrap();
    let neg: Vec<f64> = branch_grid(opts.xi_max, opts.samples).iter().map(|x| -x).collect();
    samples.extend(root_branch(f.as_ref(), fam.neutral_root(eps).unwrap(), &neg, true).unwrap());
    let tau_fit = fit_branch(&samples).unwrap().tau;
    let coeffs = refined_coefficients(&fam, eps, &opts).unwrap();
    let m = 20.0;
    let xis: Vec<f64> = (1..=3).map(|k| PI * k as f64 / m).collect();
    let curve = critical_curve(&fam, &xis, &opts).unwrap();
    let pred = cascade(&fam, m, &CascadeOptions { direct: false, ..Default::default() }, Some(&curve)).unwrap();
    let exact_curve = |xi: f64| (planted.delta.re * xi - fam.beta0[0]) / fam.beta1[0];
    let errs = [
        (tau_fit - fam.tau).abs(),
        (coeffs.beta - planted.beta).norm(),
        (coeffs.delta - planted.delta).norm(),
        (curve.slope - fam.critical_slope()).abs(),
        pred.events.iter().map(|e| (e.eps_k - exact_curve(PI * e.k as f64 / m)).abs()).fold(0.0, f64::max),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let pass = worst <= 1e-6 && pred.events.len() == 3;
    report(
        7,
        pass,
        &format!("errors τ* {:.1e}, β {:.1e}, δ {:.1e}, 𝓔 slope {:.1e}, eps_k {:.1e} (all ≤ 1e-6)", errs[0], errs[1], errs[2], errs[3], errs[4]),
    );
    assert!(pass);
}

#[test]
fn criterion_08_channel_spectrum_against_discrete() {
    let sys = scalar();
    let m = PI;
    let fam = EvansFamily::new(Arc::new(sys));
    let f = fam.evans(0.0).unwrap();
    let window = Window::rect(Rect { re_min: -0.1, re_max: 2.0, im_min: -2.0, im_max: 2.0 });
    let spectrum: Vec<_> = channel_spectrum(f.as_ref(), m, &[0, 1, 2, 3], &window)
        .unwrap()
        .into_iter()
        .filter(|e| e.lambda.norm() <= 2.0)
        .collect();
    let op = ScalarModeOperator::new(sys.c, sys.d, 0.0, 12.0, 240);
    let mut worst: f64 = 0.0;
    let mut count = (0, 0);
    let inside = |z: &C64, slack: f64| z.re >= -0.1 + slack && z.norm() <= 2.0 - slack;
    for k in -3i64..=3 {
        let xi = PI * k as f64 / m;
        let discrete = op.eigenvalues(xi);
        let mine: Vec<C64> = spectrum.iter().filter(|e| e.k == k).map(|e| e.lambda).collect();
        for z in &mine {
            count.0 += 1;
            worst = worst.max(discrete.iter().map(|d| (d - z).norm()).fold(f64::INFINITY, f64::min));
        }
        for d in discrete.iter().filter(|d| inside(d, 1e-2)) {
            count.1 += 1;
            worst = worst.max(mine.iter().map(|z| (d - z).norm()).fold(f64::INFINITY, f64::min));
        }
    }
    let pass = worst <= 1e-2;
    report(8, pass, &format!("{} Evans eigenvalues, {} discrete eigenvalues in the window, worst mismatch {worst:.2e} (≤ 1e-2)", count.0, count.1));
    assert!(pass);
}

#[test]
fn criterion_09_cascade_cross_method() {
    let start = Instant::now();
    let fam = EvansFamily::new(Arc::new(CoupledBurgers::tuned()));
    let mut xis: Vec<f64> = [20.0, 40.0].iter().flat_map(|m| (1..=3).map(move |k| PI * k as f64 / m)).collect();
    xis.sort_by(f64::total_cmp);
    xis.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let curve = critical_curve(&fam, &xis, &RefinedOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    let mut ordered = true;
    let mut lines = Vec::new();
    for m in [20.0, 40.0] {
        let pred = cascade(&fam, m, &CascadeOptions::default(), Some(&curve)).unwrap();
        ordered &= pred.events.len() == 3;
        for e in &pred.events {
            worst = worst.max(e.deviation.unwrap_or(f64::INFINITY));
        }
        for w in pred.events.windows(2) {
            ordered &= w[1].eps_k > w[0].eps_k && w[1].period_k < w[0].period_k;
        }
        lines.push(format!(
            "M={m}: eps_k [{}], periods [{}]",
            pred.events.iter().map(|e| format!("{:.4}", e.eps_k)).collect::<Vec<_>>().join(", "),
            pred.events.iter().map(|e| format!("{:.3}", e.period_k)).collect::<Vec<_>>().join(", ")
        ));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 0.05 && ordered && elapsed < Duration::from_secs(1800);
    report(9, pass, &format!("worst asymptotic/direct deviation {:.2}% (≤ 5%), monotone {ordered}; {}; {elapsed:.0?}", 100.0 * worst, lines.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_10_decay_rates() {
    let start = Instant::now();
    let sys = scalar();
    let p = solve_profile(&sys, 0.0, 20.0, 4000).unwrap();
    let cfg = SimConfig {
        half_width: 100.0,
        half_length: Some(30.0),
        n1: 601,
        n2: 256,
        t_final: 100.0,
        output_every: 0.5,
        k_max: 2,
        seeds: vec![Seed::Bump { amplitude: 0.2, x1: 0.0, x2: 0.0, width: 1.5 }],
        ..Default::default()
    };
    let r = integrate(&sys, &p, &cfg).unwrap();
    let t: Vec<f64> = r.history.iter().map(|d| d.t).collect();
    let l2: Vec<f64> = r.history.iter().map(|d| d.l2).collect();
    let adot: Vec<f64> = r.history.iter().map(|d| d.alphadot.abs()).collect();
    let s_l2 = loglog_slope(&t, &l2, 10.0, 100.0).unwrap_or(f64::NAN);
    let s_a = loglog_slope(&t, &adot, 10.0, 100.0).unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    let ok_l2 = (s_l2 + 0.25).abs() <= 0.1;
    let ok_a = (s_a + 0.5).abs() <= 0.15;
    let pass = ok_l2 && ok_a && elapsed < Duration::from_secs(600);
    report(10, pass, &format!("L² slope {s_l2:.3} (−1/4 ± 0.1: {ok_l2}), |α̇| slope {s_a:.3} (−1/2 ± 0.15: {ok_a}); {elapsed:.0?}"));
    assert!(pass);
}

/// Shared data for the simulator checks on the tuned family.
struct Onset {
    m: f64,
    eps_1: f64,
    tau: f64,
}

fn onset() -> &'static Onset {
    static ONSET: OnceLock<Onset> = OnceLock::new();
    ONSET.get_or_init(|| {
        let m = 10.0;
        let fam = EvansFamily::new(Arc::new(CoupledBurgers::tuned()));
        let pred = cascade(&fam, m, &CascadeOptions { k_max: 1, ..Default::default() }, None).unwrap();
        let tau = fam.neutral_root(pred.events[0].eps_k).unwrap();
        Onset { m, eps_1: pred.events[0].eps_k, tau }
    })
}

/// Eigenvalue with label `k` near the imaginary axis from the channel spectrum.
fn channel_mode(eps: f64, k: i64) -> C64 {
    let o = onset();
    let fam = EvansFamily::new(Arc::new(CoupledBurgers::tuned()));
    let f = fam.evans(eps).unwrap();
    let xi = PI * k as f64 / o.m;
    let im = o.tau * xi;
    let rect = Rect { re_min: -0.5 * xi * xi, re_max: 0.1, im_min: im - 1.0, im_max: im + 1.0 };
    let list = channel_spectrum(f.as_ref(), o.m, &[k], &Window::rect(rect)).unwrap();
    list.into_iter().filter(|e| e.k == k).map(|e| e.lambda).max_by(|a, b| a.re.total_cmp(&b.re)).expect("no eigenvalue in the window")
}

fn tuned_run(eps: f64, seeds: Vec<Seed>, output_every: f64) -> SimResult {
    let sys = CoupledBurgers::tuned();
    let p = solve_profile(&sys, eps, 10.0, 4000).unwrap();
    let cfg = SimConfig {
        eps,
        half_width: onset().m,
        half_length: Some(150.0),
        stretching: Some(Stretching { dx: 0.04, core: 3.0, ratio: 1.03, dx_max: 0.15 }),
        n2: 8,
        t_final: 100.0,
        output_every,
        k_max: 3,
        seeds,
        ..Default::default()
    };
    integrate(&sys, &p, &cfg).unwrap()
}

/// Offset of the simulated parameters from the onset value.
const ONSET_OFFSET: f64 = 0.15;

#[test]
fn criterion_11_hopf_onset() {
    let start = Instant::now();
    let o = onset();
    let seed = || vec![Seed::Mode { k: 1, amplitude: 0.05, width: None }];
    let above = o.eps_1 + ONSET_OFFSET;
    let below = o.eps_1 - ONSET_OFFSET;
    let lambda = channel_mode(above, 1);
    let predicted = 2.0 * PI / lambda.im.abs();
    let up = tuned_run(above, seed(), 0.05);
    let osc = detect_oscillation(&up, 30.0);
    let period_err = osc.map(|o| (o.period - predicted).abs() / predicted);
    let ok_up = osc.is_some_and(|o| o.k_dominant == 1) && period_err.is_some_and(|e| e <= 0.1);
    let down = tuned_run(below, seed(), 0.05);
    let rate_down = growth_rate(&down.history, 1, 30.0, 100.0).unwrap_or(f64::NAN);
    let ok_down = detect_oscillation(&down, 30.0).is_none() && rate_down < 0.0;
    let elapsed = start.elapsed();
    let pass = ok_up && ok_down && elapsed < Duration::from_secs(1800);
    report(
        11,
        pass,
        &format!(
            "eps_1 = {:.4}; above (ε = {above:.4}): {:?}, predicted period {predicted:.4}, error {:.2}%; below (ε = {below:.4}): a_1 rate {rate_down:.2e}, decays {ok_down}; {elapsed:.0?}",
            o.eps_1,
            osc.map(|o| (o.k_dominant, o.period)),
            100.0 * period_err.unwrap_or(f64::NAN)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_12_linear_growth_rates() {
    let start = Instant::now();
    let o = onset();
    let seeds = || {
        vec![
            Seed::Mode { k: 0, amplitude: 1e-6, width: Some(1.0) },
            Seed::Mode { k: 1, amplitude: 1e-6, width: None },
            Seed::Mode { k: 2, amplitude: 1e-6, width: None },
        ]
    };
    let mut pass = true;
    let mut lines = Vec::new();
    for eps in [o.eps_1 + ONSET_OFFSET, o.eps_1 - ONSET_OFFSET] {
        // k = 0 carries the translation eigenvalue λ = 0.
        let predicted = [0.0, channel_mode(eps, 1).re, channel_mode(eps, 2).re];
        let run = tuned_run(eps, seeds(), 0.25);
        let measured: Vec<f64> = (0..3).map(|k| growth_rate(&run.history, k, 30.0, 100.0).unwrap_or(f64::NAN)).collect();
        let floor = predicted[1..].iter().map(|r| r.abs()).fold(f64::INFINITY, f64::min);
        for k in 0..3 {
            let scale = if predicted[k] == 0.0 { floor } else { predicted[k].abs() };
            let ok = (measured[k] - predicted[k]).abs() <= 0.1 * scale;
            pass &= ok;
            lines.push(format!("ε={eps:.3} k={k}: {:.3e} vs {:.3e}", measured[k], predicted[k]));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(900);
    report(12, pass, &format!("{}; {elapsed:.0?}", lines.join("; ")));
    assert!(pass);
}
