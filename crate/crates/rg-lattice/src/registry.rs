//! The twelve registered experiments and their preset defaults.

use serde::Serialize;

use crate::config::{
    AnalysisConfig, ExperimentConfig, Family, GridConfig, InitialConfig, NoiseConfig, Preset,
    RegularizationConfig, SamplingConfig, TransferConfig,
};

#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub name: &'static str,
    pub description: &'static str,
    pub modules: &'static [&'static str],
    /// Rough single-core runtimes in seconds, `(desk, paper)`.
    pub runtime_s: (f64, f64),
    pub defaults: fn(Preset) -> ExperimentConfig,
}

#[derive(Debug, Serialize)]
pub struct ListingEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub modules: &'static [&'static str],
    pub desk_runtime_s: f64,
    pub paper_runtime_s: f64,
    pub desk: ExperimentConfig,
    pub paper: ExperimentConfig,
}

impl Entry {
    pub fn listing(&self) -> ListingEntry {
        ListingEntry {
            name: self.name,
            description: self.description,
            modules: self.modules,
            desk_runtime_s: self.runtime_s.0,
            paper_runtime_s: self.runtime_s.1,
            desk: (self.defaults)(Preset::Desk),
            paper: (self.defaults)(Preset::Paper),
        }
    }
}

pub const DEFAULT_SEED: u64 = 20_240_917;

const FA5: TransferConfig = TransferConfig { family: Family::Fa, p: 5.0 };
const FB103: TransferConfig = TransferConfig { family: Family::Fb, p: 10.3 };

fn base(name: &str, preset: Preset, transfer: TransferConfig, n_first: usize, n_last: usize) -> ExperimentConfig {
    ExperimentConfig {
        experiment: name.to_string(),
        preset,
        seed: DEFAULT_SEED,
        out: None,
        transfer,
        regularization: RegularizationConfig {
            n_first,
            n_last,
            alphas: vec![0.25],
            noises: Vec::new(),
            forcing: false,
        },
        initial: InitialConfig::Staircase,
        sampling: SamplingConfig {
            samples: 1,
            bins: rg_lattice_core::stochastic::DEFAULT_BINS,
            components: vec![0, 1, 2, 3, 4, 5],
            compared: vec![2, 3, 4],
        },
        analysis: AnalysisConfig {
            probe: rg_lattice_core::spectral::DEFAULT_PROBE,
            rho_scales: [10, 20],
            delta_alpha: 1e-15,
            transient: 100,
            window: 5000,
            p_max: 8,
            trials: 100,
            dyadic_max_m: 2,
            dyadic_max_k: 3,
            p_grid: None,
            inertial: None,
            onset_window: None,
            companion_transfers: Vec::new(),
        },
    }
}

fn pick<T>(preset: Preset, desk: T, paper: T) -> T {
    match preset {
        Preset::Desk => desk,
        Preset::Paper => paper,
    }
}

fn fig5_collapse(preset: Preset) -> ExperimentConfig {
    let mut c = base("fig5_collapse", preset, FA5, 12, 15);
    c.regularization.alphas = vec![0.25, 0.75];
    c
}

fn fig5_eigenvector(preset: Preset) -> ExperimentConfig {
    let mut c = base("fig5_eigenvector", preset, FA5, 12, 15);
    c.regularization.alphas = vec![0.25, 0.75];
    c.analysis.rho_scales = [10, pick(preset, 20, 22)];
    c
}

fn fig6_bifurcation(preset: Preset) -> ExperimentConfig {
    let n = pick(preset, 20, 25);
    let mut c = base("fig6_bifurcation", preset, TransferConfig { family: Family::Fa, p: 7.0 }, n, n);
    c.analysis.p_grid = Some(GridConfig { start: 6.0, stop: 8.0, count: pick(preset, 41, 81) });
    c
}

fn fig7_period2(preset: Preset) -> ExperimentConfig {
    let (lo, hi) = pick(preset, (18, 22), (22, 26));
    base("fig7_period2", preset, TransferConfig { family: Family::Fa, p: 8.0 }, lo, hi)
}

fn fig8_chaos(preset: Preset) -> ExperimentConfig {
    base("fig8_chaos", preset, FB103, 0, pick(preset, 20, 24))
}

fn stochastic(name: &str, preset: Preset, p: f64, scales: (usize, usize), samples: usize) -> ExperimentConfig {
    let mut c = base(name, preset, TransferConfig { family: Family::Fb, p }, scales.0, scales.1);
    c.regularization.alphas = Vec::new();
    c.regularization.noises = vec![NoiseConfig::mu(), NoiseConfig::mu_tilde()];
    c.sampling.samples = samples;
    c
}

fn fig9_pdfs(preset: Preset) -> ExperimentConfig {
    stochastic("fig9_pdfs", preset, 10.3, pick(preset, (14, 16), (16, 20)), pick(preset, 100_000, 1_000_000))
}

fn fig10_stochastic_eigenmode(preset: Preset) -> ExperimentConfig {
    let mut c = stochastic(
        "fig10_stochastic_eigenmode",
        preset,
        10.3,
        pick(preset, (13, 16), (13, 18)),
        pick(preset, 100_000, 1_000_000),
    );
    c.regularization.noises = vec![NoiseConfig::mu()];
    c.sampling.compared = vec![2, 3];
    c
}

fn fig11_moments(preset: Preset) -> ExperimentConfig {
    let mut c = stochastic(
        "fig11_moments",
        preset,
        10.3,
        pick(preset, (13, 14), (20, 21)),
        pick(preset, 10_000, 100_000),
    );
    c.regularization.noises = vec![NoiseConfig::mu()];
    c.sampling.compared = vec![2];
    c.analysis.p_grid = Some(GridConfig { start: 10.3, stop: 10.8, count: 11 });
    c
}

fn fig12_stochastic_period2(preset: Preset) -> ExperimentConfig {
    stochastic(
        "fig12_stochastic_period2",
        preset,
        10.7,
        pick(preset, (15, 18), (21, 24)),
        pick(preset, 20_000, 100_000),
    )
}

fn app_structure_functions(preset: Preset) -> ExperimentConfig {
    let n = pick(preset, 12, 17);
    let mut c = base("app_structure_functions", preset, FB103, n, n);
    c.regularization.forcing = true;
    c.analysis.window = pick(preset, 5_000, 40_000);
    c
}

fn thm1_verify(preset: Preset) -> ExperimentConfig {
    let mut c = base("thm1_verify", preset, FA5, 0, 10);
    c.regularization.alphas = vec![0.25, 0.75];
    c.analysis.companion_transfers = vec![FB103];
    c
}

fn thm2_verify(preset: Preset) -> ExperimentConfig {
    let mut c = base("thm2_verify", preset, FB103, 0, 8);
    c.analysis.companion_transfers = vec![FA5];
    c.analysis.trials = 5;
    c
}

static ENTRIES: [Entry; 12] = [
    Entry {
        name: "fig5_collapse",
        description: "Flow-map values u(1) for several (N, alpha) and their Cauchy differences",
        modules: &["core_lattice", "rg_spectral"],
        runtime_s: (1.0, 1.0),
        defaults: fig5_collapse,
    },
    Entry {
        name: "fig5_eigenvector",
        description: "Leading eigenvalue, eigenvector collapse and c_alpha coefficients",
        modules: &["rg_spectral"],
        runtime_s: (1.0, 4.0),
        defaults: fig5_eigenvector,
    },
    Entry {
        name: "fig6_bifurcation",
        description: "Scan of the transfer parameter p through the period-doubling point",
        modules: &["rg_spectral"],
        runtime_s: (10.0, 600.0),
        defaults: fig6_bifurcation,
    },
    Entry {
        name: "fig7_period2",
        description: "Distinct even and odd inviscid limits past the bifurcation",
        modules: &["rg_spectral"],
        runtime_s: (2.0, 40.0),
        defaults: fig7_period2,
    },
    Entry {
        name: "fig8_chaos",
        description: "Growth of flow-map separations under a tiny change of alpha",
        modules: &["rg_spectral"],
        runtime_s: (1.0, 8.0),
        defaults: fig8_chaos,
    },
    Entry {
        name: "fig9_pdfs",
        description: "Marginal PDFs of the noisy flow kernels and their collapse",
        modules: &["stochastic_rg"],
        runtime_s: (1100.0, 60_000.0),
        defaults: fig9_pdfs,
    },
    Entry {
        name: "fig10_stochastic_eigenmode",
        description: "Signed PDF differences, stochastic eigenvalue and eigenmode",
        modules: &["stochastic_rg"],
        runtime_s: (600.0, 40_000.0),
        defaults: fig10_stochastic_eigenmode,
    },
    Entry {
        name: "fig11_moments",
        description: "Mean and standard deviation of u_2(1) across p at consecutive N",
        modules: &["stochastic_rg"],
        runtime_s: (100.0, 20_000.0),
        defaults: fig11_moments,
    },
    Entry {
        name: "fig12_stochastic_period2",
        description: "Period-two classification of the noisy kernels with the noise swap",
        modules: &["stochastic_rg"],
        runtime_s: (900.0, 90_000.0),
        defaults: fig12_stochastic_period2,
    },
    Entry {
        name: "app_structure_functions",
        description: "Forced steady state: structure functions, exponents and flux balance",
        modules: &["cascade_stats", "core_lattice"],
        runtime_s: (2.0, 300.0),
        defaults: app_structure_functions,
    },
    Entry {
        name: "thm1_verify",
        description: "RG operator applied to the N-simulator against the (N+1)-simulator",
        modules: &["flow_algebra", "core_lattice"],
        runtime_s: (1.0, 1.0),
        defaults: thm1_verify,
    },
    Entry {
        name: "thm2_verify",
        description: "States at dyadic times from flow-map compositions against direct runs",
        modules: &["flow_algebra", "core_lattice"],
        runtime_s: (1.0, 1.0),
        defaults: thm2_verify,
    },
];

pub fn entries() -> &'static [Entry] {
    &ENTRIES
}

pub fn find(name: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name)
}

pub fn defaults(name: &str, preset: Preset) -> Option<ExperimentConfig> {
    find(name).map(|e| (e.defaults)(preset))
}

pub fn with_module(tag: &str) -> Vec<&'static Entry> {
    ENTRIES.iter().filter(|e| e.modules.contains(&tag)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_entries_with_unique_names() {
        let mut names: Vec<_> = entries().iter().map(|e| e.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 12);
    }

    #[test]
    fn defaults_are_valid_and_named_after_their_entry() {
        for e in entries() {
            for preset in [Preset::Desk, Preset::Paper] {
                let cfg = (e.defaults)(preset);
                cfg.validate().unwrap();
                assert_eq!(cfg.experiment, e.name);
                assert_eq!(cfg.preset, preset);
            }
        }
    }

    #[test]
    fn module_filter() {
        let stochastic = with_module("stochastic_rg");
        assert_eq!(stochastic.len(), 4);
        assert!(with_module("nonexistent").is_empty());
    }
}
