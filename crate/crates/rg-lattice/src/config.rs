//! Experiment configuration: one TOML schema shared by every registry entry.
//!
//! A configuration file may be partial. It is merged key by key over the
//! registry defaults of the selected preset, and the merged document is
//! rejected if it contains any key the schema does not know.

use std::path::PathBuf;

use rg_lattice_core::{staircase_initial, Dissipation, TransferFamily, TransferSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Scales and sample counts used for the published figures.
    Paper,
    /// Reduced scales that run on a workstation; used by the acceptance suite.
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Fa,
    Fb,
}

impl From<Family> for TransferFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Fa => TransferFamily::Fa,
            Family::Fb => TransferFamily::Fb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub family: Family,
    pub p: f64,
}

impl TransferConfig {
    pub fn spec(&self) -> TransferSpec {
        TransferSpec { family: self.family.into(), p: self.p }
    }

    pub fn with_p(&self, p: f64) -> TransferSpec {
        TransferSpec { family: self.family.into(), p }
    }
}

/// `count` evenly spaced values from `start` to `stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridConfig {
    pub fn values(&self) -> Vec<f64> {
        rg_lattice_core::stats::linspace(self.start, self.stop, self.count)
    }
}

/// Uniform law of the viscous-scale dissipation fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl NoiseConfig {
    pub fn mu() -> Self {
        Self { name: "mu".into(), lo: 0.4, hi: 0.5 }
    }

    pub fn mu_tilde() -> Self {
        Self { name: "mu_tilde".into(), lo: 0.3, hi: 0.301 }
    }

    pub fn dissipation(&self) -> Dissipation {
        Dissipation::Noise { lo: self.lo, hi: self.hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    /// Smallest viscous scale `N` used.
    pub n_first: usize,
    /// Largest viscous scale `N` used.
    pub n_last: usize,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub noises: Vec<NoiseConfig>,
    #[serde(default)]
    pub forcing: bool,
}

impl RegularizationConfig {
    pub fn scales(&self) -> std::ops::RangeInclusive<usize> {
        self.n_first..=self.n_last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// `a_n = 1 - n/5` for `n <= 4`, zero beyond.
    Staircase,
    Vector { values: Vec<f64> },
    /// `a_n = amplitude * tau_n^h` for `n <= cutoff`.
    PowerLaw { h: f64, amplitude: f64, cutoff: usize },
}

impl InitialConfig {
    /// The initial vector padded with zeros to at least `len` components.
    pub fn vector(&self, len: usize) -> Vec<f64> {
        let mut v = match self {
            InitialConfig::Staircase => staircase_initial(5),
            InitialConfig::Vector { values } => values.clone(),
            InitialConfig::PowerLaw { h, amplitude, cutoff } => (0..=*cutoff)
                .map(|n| amplitude * (-(n as f64) * h * std::f64::consts::LN_2).exp())
                .collect(),
        };
        if v.len() < len {
            v.resize(len, 0.0);
        }
        v
    }

    pub fn label(&self) -> String {
        match self {
            InitialConfig::Staircase => "staircase".into(),
            InitialConfig::Vector { values } => format!("vector{values:?}"),
            InitialConfig::PowerLaw { h, amplitude, cutoff } => {
                format!("power_law(h={h},amplitude={amplitude},cutoff={cutoff})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Samples per kernel; `M`.
    pub samples: usize,
    pub bins: usize,
    /// Scales `n` whose `u_n(1)` is kept and written.
    pub components: Vec<usize>,
    /// Scales `n` whose marginals are compared.
    pub compared: Vec<usize>,
}

/// Experiment-specific knobs; each experiment reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub probe: usize,
    /// Viscous scales `[first, last]` of the eigenvalue ratio estimate.
    pub rho_scales: [usize; 2],
    pub delta_alpha: f64,
    pub transient: u64,
    pub window: u64,
    pub p_max: u32,
    /// Number of random initial states in identity checks.
    pub trials: usize,
    pub dyadic_max_m: u64,
    pub dyadic_max_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertial: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_window: Option<[f64; 2]>,
    /// Further transfer functions checked by the identity experiments.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub companion_transfers: Vec<TransferConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub preset: Preset,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub transfer: TransferConfig,
    pub regularization: RegularizationConfig,
    pub initial: InitialConfig,
    pub sampling: SamplingConfig,
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Merges a partial TOML document over `self` and validates the result.
    pub fn merged_with(&self, text: &str) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        merge(&mut base, overlay);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        let r = &self.regularization;
        if r.n_first > r.n_last {
            return bad("regularization.n_first exceeds n_last");
        }
        if r.n_last > 40 {
            return bad("viscous scales above 40 are not supported");
        }
        if !self.transfer.p.is_finite() {
            return bad("transfer.p must be finite");
        }
        if r.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return bad("alphas must lie in (0, 1]");
        }
        for noise in &r.noises {
            if noise.dissipation().validate().is_err() {
                return bad("noise bounds must satisfy 0 < lo <= hi <= 1");
            }
        }
        let s = &self.sampling;
        if s.samples == 0 || s.bins == 0 {
            return bad("sampling.samples and sampling.bins must be positive");
        }
        if s.compared.iter().any(|c| !s.components.contains(c)) {
            return bad("sampling.compared must be a subset of sampling.components");
        }
        let a = &self.analysis;
        if a.rho_scales[0] >= a.rho_scales[1] {
            return bad("analysis.rho_scales must be increasing");
        }
        if !(a.delta_alpha >= 0.0) {
            return bad("analysis.delta_alpha must be non-negative");
        }
        if let Some(g) = a.p_grid {
            if g.count < 2 || !(g.stop > g.start) {
                return bad("analysis.p_grid needs stop > start and count >= 2");
            }
        }
        if let InitialConfig::Vector { values } = &self.initial {
            if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return bad("initial values must be finite and non-negative");
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !is_tagged(b, &o) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// A change of `kind` replaces the whole tagged table.
fn is_tagged(base: &toml::Table, overlay: &toml::Table) -> bool {
    matches!((base.get("kind"), overlay.get("kind")), (Some(a), Some(b)) if a != b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    #[test]
    fn every_default_round_trips() {
        for entry in registry::entries() {
            for preset in [Preset::Desk, Preset::Paper] {
                let cfg = (entry.defaults)(preset);
                let text = cfg.to_toml().unwrap();
                assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg, "{}", entry.name);
            }
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let base = registry::defaults("thm1_verify", Preset::Desk).unwrap();
        assert!(base.merged_with("seed = 3\n[transfer]\nfamiyl = \"fa\"\n").is_err());
        assert!(base.merged_with("colour = 1\n").is_err());
    }

    #[test]
    fn partial_overlay_keeps_other_defaults() {
        let base = registry::defaults("fig8_chaos", Preset::Desk).unwrap();
        let merged = base.merged_with("seed = 99\n[transfer]\np = 10.4\n").unwrap();
        assert_eq!(merged.seed, 99);
        assert_eq!(merged.transfer.p, 10.4);
        assert_eq!(merged.transfer.family, base.transfer.family);
        assert_eq!(merged.regularization, base.regularization);
    }

    #[test]
    fn changing_the_initial_kind_replaces_it() {
        let base = registry::defaults("fig5_collapse", Preset::Desk).unwrap();
        let merged = base
            .merged_with("[initial]\nkind = \"power_law\"\nh = 0.5\namplitude = 1.0\ncutoff = 12\n")
            .unwrap();
        assert_eq!(merged.initial, InitialConfig::PowerLaw { h: 0.5, amplitude: 1.0, cutoff: 12 });
        let v = merged.initial.vector(16);
        assert!((v[2] - 0.5).abs() < 1e-15);
        assert_eq!(v[13], 0.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let base = registry::defaults("fig9_pdfs", Preset::Desk).unwrap();
        assert!(base.merged_with("[regularization]\nn_first = 9\nn_last = 3\n").is_err());
        assert!(base.merged_with("[sampling]\nsamples = 0\n").is_err());
    }
}
