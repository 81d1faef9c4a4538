use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cellshock::{ProfileOptions, Rect, SimConfig, SystemSpec};
use serde::{Deserialize, Serialize};

use crate::InputError;

/// Everything needed to reproduce a run. The echoed copy written next to the
/// outputs parses back to the same value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub eps: f64,
    /// When present, `profile` and `stability` run once per value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_sweep: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub duct: DuctSection,
    /// Simulator settings. Its `eps` is replaced by the top-level value.
    #[serde(default)]
    pub simulate: SimConfig,
    #[serde(default)]
    pub oscillation: OscillationSection,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_length: Option<f64>,
    pub grid_size: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { half_length: None, grid_size: 2000 }
    }
}

impl ProfileSection {
    pub fn options(&self) -> ProfileOptions {
        ProfileOptions { half_length: self.half_length, grid_size: self.grid_size, ..ProfileOptions::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    /// Transverse direction used for the imaginary-axis scan of Δ.
    pub xi0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    pub scan_step: f64,
    /// Points written to the scan CSV.
    pub scan_points: usize,
    /// Region counted for unstable Evans zeros.
    pub window: Rect,
    /// Frequencies at which the zeros in `window` are counted.
    pub xis: Vec<f64>,
    pub refined: bool,
    pub h: f64,
    pub xi_max: f64,
    pub samples: usize,
    /// `|Re β|` below which the run is reported as sitting on the crossing.
    pub crossing_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_hint: Option<f64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            xi0: 1.0,
            tau_max: None,
            scan_step: 0.01,
            scan_points: 801,
            window: Rect { re_min: 0.01, re_max: 2.0, im_min: -2.0, im_max: 2.0 },
            xis: vec![0.0, 0.25, 0.5, 1.0],
            refined: true,
            h: 1e-2,
            xi_max: 0.2,
            samples: 10,
            crossing_tol: 1e-3,
            tau_hint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuctSection {
    /// Duct half-width: transverse frequencies are `πk/M`.
    #[serde(rename = "M")]
    pub m: f64,
    pub k_max: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_max: Option<f64>,
    pub asymptotic: bool,
    pub direct: bool,
    pub scan: usize,
    pub bisection_tol: f64,
}

impl Default for DuctSection {
    fn default() -> Self {
        Self { m: PI, k_max: 3, eps_max: None, asymptotic: true, direct: true, scan: 24, bisection_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillationSection {
    /// Start of the analysis window; `None` uses a third of the run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transient: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::Error::new(e).context(format!("in {}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, InputError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| InputError(e.to_string()))?;
        cfg.simulate.eps = cfg.eps;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), InputError> {
        let bad = |what: &str| Err(InputError(what.to_string()));
        if !self.eps.is_finite() {
            return bad("eps must be finite");
        }
        if self.eps_sweep.as_ref().is_some_and(|s| s.is_empty() || s.iter().any(|e| !e.is_finite())) {
            return bad("eps_sweep must be a non-empty list of finite values");
        }
        if self.profile.grid_size < 16 {
            return bad("profile.grid_size must be at least 16");
        }
        let w = &self.stability.window;
        if !(w.re_min < w.re_max && w.im_min < w.im_max) {
            return bad("stability.window must have re_min < re_max and im_min < im_max");
        }
        if self.stability.scan_points < 2 || self.stability.scan_step <= 0.0 {
            return bad("stability.scan_points must be at least 2 and scan_step positive");
        }
        if !(self.duct.m > 0.0) || self.duct.k_max == 0 {
            return bad("duct.M must be positive and duct.k_max at least 1");
        }
        Ok(())
    }

    pub fn eps_values(&self) -> Vec<f64> {
        self.eps_sweep.clone().unwrap_or_else(|| vec![self.eps])
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("eps = 0.2\n[system]\nid = \"burgers\"\nc = 0.5\n").unwrap();
        assert_eq!(cfg.simulate.eps, 0.2);
        assert_eq!(cfg.profile.grid_size, 2000);
        assert_eq!(cfg.eps_values(), vec![0.2]);
    }

    #[test]
    fn echo_round_trips() {
        let text = "eps = 0.1\n[system]\nid = \"coupled\"\n[duct]\nM = 10.0\n[[simulate.seeds]]\nkind = \"mode\"\nk = 1\namplitude = 0.05\n";
        let cfg = RunConfig::parse(text).unwrap();
        let echo = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&echo).unwrap();
        assert_eq!(echo, back.to_toml().unwrap());
        assert_eq!(back.simulate, cfg.simulate);
    }

    #[test]
    fn unknown_keys_report_their_location() {
        let err = RunConfig::parse("eps = 0.1\n[system]\nid = \"burgers\"\n[duct]\nwidth = 3\n").unwrap_err();
        assert!(err.0.contains("width"), "{}", err.0);
        assert!(err.0.contains("line 5"), "{}", err.0);
    }
}
