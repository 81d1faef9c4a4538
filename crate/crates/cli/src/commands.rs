use std::sync::Arc;

use anyhow::Context as _;
use cellshock::duct::{self, write_cascade_csv};
use cellshock::lopatinski::{write_scan_csv, ImaginaryRoot, Lopatinski, ScanOptions};
use cellshock::refined::refined_coefficients;
use cellshock::simulate::{detect_oscillation, growth_rate, write_diagnostics_csv, write_snapshot, Oscillation, RunStatus};
use cellshock::{
    check_hypotheses, integrate, solve_profile_with, CascadeOptions, Error, EvansFamily, EvansFunction, FluxSystem,
    HypothesisReport, RefinedCoefficients, RefinedOptions, ShockProfile,
};
use serde::Serialize;

use crate::config::{RunConfig, StabilitySection};
use crate::output::Output;
use crate::HypothesisFailure;

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub force: bool,
}

impl Context<'_> {
    fn system(&self) -> Arc<dyn FluxSystem> {
        Arc::from(self.cfg.system.build())
    }

    /// Artifact name, suffixed with the sweep index when sweeping.
    fn name(&self, stem: &str, ext: &str, index: usize) -> String {
        match self.cfg.eps_sweep {
            Some(_) => format!("{stem}_{index}.{ext}"),
            None => format!("{stem}.{ext}"),
        }
    }

    fn gate(&self, report: &HypothesisReport, eps: f64) -> anyhow::Result<()> {
        if report.ok() {
            return Ok(());
        }
        let what = format!("at eps = {eps}: {}", describe(report));
        if self.force {
            eprintln!("warning: hypothesis violated {what}; continuing because of --force");
            Ok(())
        } else {
            Err(HypothesisFailure(what).into())
        }
    }

    fn profile(&self, sys: &dyn FluxSystem, eps: f64) -> anyhow::Result<ShockProfile> {
        Ok(solve_profile_with(sys, eps, &self.cfg.profile.options()).with_context(|| format!("profile at eps = {eps}"))?)
    }
}

fn describe(r: &HypothesisReport) -> String {
    if !r.diagnostics.is_empty() {
        return r.diagnostics.join("; ");
    }
    let mut parts = Vec::new();
    if !r.h1_ok {
        parts.push("end states are not strictly hyperbolic".to_string());
    }
    if !r.h2_dimension_check {
        parts.push(format!("not a Lax shock (index {})", r.lax_type_c));
    }
    if r.h3_value.abs() <= 1e-12 {
        parts.push("jump is not transverse".to_string());
    }
    parts.join("; ")
}

pub fn profile(ctx: &Context, out: &mut Output) -> anyhow::Result<()> {
    let sys = ctx.system();
    for (i, eps) in ctx.cfg.eps_values().into_iter().enumerate() {
        let report = check_hypotheses(sys.as_ref(), eps, None)?;
        let report_name = ctx.name("hypotheses", "json", i);
        out.write_json(&report_name, "hypotheses", &HypothesisDoc { eps, ok: report.ok(), report: &report })?;
        ctx.gate(&report, eps)?;
        let profile = match solve_profile_with(sys.as_ref(), eps, &ctx.cfg.profile.options()) {
            Ok(p) => p,
            Err(e @ (Error::Hypothesis(_) | Error::NoConnection(_))) if ctx.force => {
                eprintln!("warning: no profile at eps = {eps}: {e}");
                continue;
            }
            Err(e) => return Err(anyhow::Error::new(e).context(format!("profile at eps = {eps}"))),
        };
        profile.write_csv(&out.path(&ctx.name("profile", "csv", i)))?;
        let report = check_hypotheses(sys.as_ref(), eps, Some(&profile))?;
        out.write_json(&report_name, "hypotheses", &HypothesisDoc { eps, ok: report.ok(), report: &report })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct HypothesisDoc<'a> {
    eps: f64,
    ok: bool,
    #[serde(flatten)]
    report: &'a HypothesisReport,
}

#[derive(Serialize)]
struct StabilityDoc {
    eps: f64,
    inviscid: Inviscid,
    viscous: Option<Viscous>,
    refined: Option<RefinedCoefficients>,
    #[serde(skip_serializing_if = "Option::is_none")]
    crossing: Option<Crossing>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct Inviscid {
    h3: f64,
    one_dimensional_instability: bool,
    xi0: f64,
    branch_points: Vec<f64>,
    imaginary_roots: Vec<ImaginaryRoot>,
    /// Simple imaginary roots away from branch points and cutoffs.
    neutral_roots: Vec<f64>,
}

#[derive(Serialize)]
struct Viscous {
    window: cellshock::Rect,
    counts: Vec<WindingCount>,
    /// Total number of zeros found in the window over all frequencies.
    unstable_roots: i64,
}

#[derive(Serialize)]
struct WindingCount {
    xi: f64,
    count: i64,
}

#[derive(Serialize)]
struct Crossing {
    /// `|Re β|` is below the configured tolerance.
    near: bool,
    re_beta: f64,
    d_eps_re_beta: f64,
    /// `destabilizing` when `Re β` decreases through zero as ε grows.
    direction: &'static str,
}

pub fn stability(ctx: &Context, out: &mut Output) -> anyhow::Result<()> {
    let st = &ctx.cfg.stability;
    let sys = ctx.system();
    let mut family = EvansFamily::new(sys.clone());
    family.profile_opts = ctx.cfg.profile.options();
    family.tau_hint = st.tau_hint;
    let mut docs = Vec::new();
    for (i, eps) in ctx.cfg.eps_values().into_iter().enumerate() {
        let report = check_hypotheses(sys.as_ref(), eps, None)?;
        ctx.gate(&report, eps)?;
        let lop = Lopatinski::new(sys.as_ref(), eps)?;
        let roots = lop.imaginary_root_scan(st.xi0, &ScanOptions { tau_max: st.tau_max, step: st.scan_step, ..ScanOptions::default() })?;
        let tau_max = st.tau_max.unwrap_or(50.0 * st.xi0.abs().max(1e-12));
        let branch_points = lop.branch_points(st.xi0, tau_max);
        let taus: Vec<f64> = (0..st.scan_points).map(|j| -tau_max + 2.0 * tau_max * j as f64 / (st.scan_points - 1) as f64).collect();
        write_scan_csv(&out.path(&ctx.name("delta_scan", "csv", i)), &lop, st.xi0, &taus)?;
        let inviscid = Inviscid {
            h3: lop.h3,
            one_dimensional_instability: lop.one_dimensional_instability(),
            xi0: st.xi0,
            branch_points,
            neutral_roots: roots.iter().filter(|r| r.admissible()).map(|r| r.tau).collect(),
            imaginary_roots: roots,
        };
        let mut notes = Vec::new();
        if inviscid.one_dimensional_instability {
            notes.push("one-dimensional instability: Δ(0, 1) vanishes (wave splitting)".to_string());
        }
        let viscous = match family.evans(eps) {
            Ok(evans) => Some(winding_counts(&evans, st)?),
            Err(e @ (Error::Hypothesis(_) | Error::NoConnection(_))) if ctx.force => {
                eprintln!("warning: viscous stage skipped at eps = {eps}: {e}");
                notes.push(format!("viscous stage skipped: {e}"));
                None
            }
            Err(e) => return Err(anyhow::Error::new(e).context(format!("Evans function at eps = {eps}"))),
        };
        let refined = match (st.refined, &viscous) {
            (true, Some(_)) => {
                let opts = RefinedOptions { h: st.h, xi_max: st.xi_max, samples: st.samples, ..RefinedOptions::default() };
                match refined_coefficients(&family, eps, &opts) {
                    Ok(r) => Some(r),
                    Err(Error::NotApplicable(msg)) => {
                        notes.push(format!("no refined coefficients: {msg}"));
                        None
                    }
                    Err(e) => return Err(anyhow::Error::new(e).context(format!("refined coefficients at eps = {eps}"))),
                }
            }
            _ => None,
        };
        let crossing = refined.map(|r| Crossing {
            near: r.beta.re.abs() <= st.crossing_tol,
            re_beta: r.beta.re,
            d_eps_re_beta: r.d_eps_re_beta,
            direction: if r.d_eps_re_beta < 0.0 { "destabilizing" } else { "stabilizing" },
        });
        docs.push(StabilityDoc { eps, inviscid, viscous, refined, crossing, notes });
    }
    if ctx.cfg.eps_sweep.is_some() {
        out.write_json("stability.json", "stability_sweep", &Sweep { runs: docs })
    } else {
        out.write_json("stability.json", "stability", &docs[0])
    }
}

fn winding_counts(evans: &EvansFunction, st: &StabilitySection) -> anyhow::Result<Viscous> {
    let contour = st.window.corners();
    let counts = st
        .xis
        .iter()
        .map(|&xi| Ok(WindingCount { xi, count: evans.winding_count(xi, &contour).with_context(|| format!("winding count at xi = {xi}"))? }))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Viscous { window: st.window, unstable_roots: counts.iter().map(|c| c.count).sum(), counts })
}

#[derive(Serialize)]
struct Sweep<T> {
    runs: Vec<T>,
}

pub fn cascade(ctx: &Context, out: &mut Output) -> anyhow::Result<()> {
    let d = &ctx.cfg.duct;
    let st = &ctx.cfg.stability;
    let sys = ctx.system();
    let report = check_hypotheses(sys.as_ref(), ctx.cfg.eps, None)?;
    ctx.gate(&report, ctx.cfg.eps)?;
    let mut family = EvansFamily::new(sys);
    family.profile_opts = ctx.cfg.profile.options();
    family.tau_hint = st.tau_hint;
    let opts = CascadeOptions {
        k_max: d.k_max,
        eps_max: d.eps_max.unwrap_or(f64::INFINITY),
        asymptotic: d.asymptotic,
        direct: d.direct,
        bisection_tol: d.bisection_tol,
        scan: d.scan,
        refined: RefinedOptions { h: st.h, xi_max: st.xi_max, samples: st.samples, ..RefinedOptions::default() },
    };
    let pred = duct::cascade(&family, d.m, &opts, None).context("cascade")?;
    write_cascade_csv(&out.path("cascade.csv"), &pred)?;
    out.write_json("cascade.json", "cascade", &pred)
}

#[derive(Serialize)]
struct SimulationDoc {
    #[serde(flatten)]
    status: RunStatus,
    dt: f64,
    steps_recorded: usize,
    transient: f64,
    oscillation: Option<Oscillation>,
    /// Least-squares exponential rate of each `a_k` after the transient.
    growth_rates: Vec<Option<f64>>,
}

pub fn simulate(ctx: &Context, out: &mut Output) -> anyhow::Result<()> {
    let sim = &ctx.cfg.simulate;
    let sys = ctx.system();
    let report = check_hypotheses(sys.as_ref(), sim.eps, None)?;
    ctx.gate(&report, sim.eps)?;
    let profile = ctx.profile(sys.as_ref(), sim.eps)?;
    let result = integrate(sys.as_ref(), &profile, sim).context("simulation")?;
    write_diagnostics_csv(&out.path("diagnostics.csv"), &result.history)?;
    let t_end = result.history.last().map_or(0.0, |d| d.t);
    write_snapshot(&out.path("snapshot.txt"), &result, t_end)?;
    let transient = ctx.cfg.oscillation.transient.unwrap_or(t_end / 3.0);
    let growth_rates = (0..=sim.k_max).map(|k| growth_rate(&result.history, k, transient, t_end)).collect();
    let doc = SimulationDoc {
        status: result.status,
        dt: result.dt,
        steps_recorded: result.history.len(),
        transient,
        oscillation: detect_oscillation(&result, transient),
        growth_rates,
    };
    if let RunStatus::Diverged { t } = result.status {
        log::warn!("simulation diverged at t = {t}");
    }
    out.write_json("oscillation.json", "simulation", &doc)
}
