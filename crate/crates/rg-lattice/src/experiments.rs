//! Runners for the registered experiments. Each returns its data files and a
//! JSON report in memory; [`crate::output::emit`] puts them on disk.

use std::sync::Arc;

use rg_lattice_core::algebra::{self, DyadicTime, FlowMap};
use rg_lattice_core::cascade;
use rg_lattice_core::lattice::{self, LatticeState, SimConfig, Simulation};
use rg_lattice_core::rng::{self, derive_seed, SLOT_INITIAL};
use rg_lattice_core::spectral::{self, EigenmodeSetup, FlowSeries, EIGENVECTOR_COMPONENTS};
use rg_lattice_core::stats::max_abs_diff;
use rg_lattice_core::stochastic::{self, BinGrid, HistogramPdf, SampleSet, SignedHistogram};
use rg_lattice_core::TransferSpec;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, NoiseConfig};
use crate::error::{Context, Error, Result};
use crate::output::{num, CsvTable, LedgerSummary, OutputFile, RunLedger, RunOutput};
use crate::registry;
use crate::sampling::{KernelRequest, Runner};

/// Tolerances checked or reported by the experiments.
pub mod tolerance {
    pub const IDENTITY: f64 = 1e-12;
    pub const CONSERVATION_PER_UNIT: f64 = 1e-12;
    pub const COLLAPSE_KS: f64 = 0.03;
    pub const EIGENVECTOR_SPREAD: f64 = 0.02;
    pub const DETERMINISTIC_VARIANCE: f64 = 1e-20;
    pub const PARITY_SEPARATION: f64 = 10.0;
    pub const ONSET_R_SQUARED: f64 = 0.98;
    pub const GROWTH_R_SQUARED: f64 = 0.95;
    /// Offset of the default onset window past the eigenvalue crossing.
    pub const ONSET_OFFSET: f64 = 0.1;
}

pub fn run_experiment(config: &ExperimentConfig, runner: &Runner) -> Result<RunOutput> {
    config.validate()?;
    let mut energy = None;
    let (files, report) = match config.experiment.as_str() {
        "fig5_collapse" => fig5_collapse(config, runner)?,
        "fig5_eigenvector" => fig5_eigenvector(config)?,
        "fig6_bifurcation" => fig6_bifurcation(config, runner)?,
        "fig7_period2" => fig7_period2(config, runner)?,
        "fig8_chaos" => fig8_chaos(config)?,
        "fig9_pdfs" => fig9_pdfs(config, runner)?,
        "fig10_stochastic_eigenmode" => fig10_stochastic_eigenmode(config, runner)?,
        "fig11_moments" => fig11_moments(config, runner)?,
        "fig12_stochastic_period2" => fig12_stochastic_period2(config, runner)?,
        "app_structure_functions" => {
            let (files, report, ledger) = app_structure_functions(config)?;
            energy = Some(ledger);
            (files, report)
        }
        "thm1_verify" => thm1_verify(config, runner)?,
        "thm2_verify" => thm2_verify(config, runner)?,
        other => {
            debug_assert!(registry::find(other).is_none());
            return Err(Error::UnknownExperiment(other.to_string()));
        }
    };
    Ok(RunOutput {
        experiment: config.experiment.clone(),
        files,
        report,
        tolerances: tolerances(),
        ledger: LedgerSummary::current(),
        energy,
    })
}

fn tolerances() -> Value {
    use tolerance::*;
    json!({
        "identity_max_abs": IDENTITY,
        "conservation_relative_per_unit_time": CONSERVATION_PER_UNIT,
        "collapse_ks": COLLAPSE_KS,
        "eigenvector_relative_spread": EIGENVECTOR_SPREAD,
        "deterministic_component_variance": DETERMINISTIC_VARIANCE,
        "parity_separation_factor": PARITY_SEPARATION,
        "onset_r_squared": ONSET_R_SQUARED,
        "growth_loglog_r_squared": GROWTH_R_SQUARED,
        "ks_level": stochastic::KS_LEVEL,
        "ks_separation_factor": stochastic::SEPARATION_FACTOR,
        "saturation_fraction": spectral::SATURATION_FRACTION,
        "degenerate_probe": spectral::DEGENERATE_PROBE,
    })
}

type Outputs = (Vec<OutputFile>, Value);

fn first_alpha(config: &ExperimentConfig) -> Result<f64> {
    config
        .regularization
        .alphas
        .first()
        .copied()
        .ok_or_else(|| Error::InvalidConfig("regularization.alphas is empty".into()))
}

fn noises(config: &ExperimentConfig, at_least: usize) -> Result<&[NoiseConfig]> {
    let n = &config.regularization.noises;
    if n.len() < at_least {
        return Err(Error::InvalidConfig(format!("need at least {at_least} noise laws")));
    }
    Ok(n)
}

fn state_file(name: String, u: &[f64]) -> OutputFile {
    let mut t = CsvTable::new(&["n", "u"]);
    for (n, x) in u.iter().enumerate() {
        t.row([n.to_string(), num(*x)]);
    }
    t.finish(name)
}

fn fig5_collapse(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    let spec = config.transfer.spec();
    let r = &config.regularization;
    let a = config.initial.vector(r.n_last + 3);
    let series = runner.map_indexed(r.alphas.len(), |i| {
        FlowSeries::compute(&spec, r.alphas[i], &a, r.n_first, r.n_last + 1)
    });
    let mut files = Vec::new();
    let mut diffs = CsvTable::new(&["N", "alpha", "n", "delta_u"]);
    let mut per_alpha = Vec::new();
    for (alpha, s) in r.alphas.iter().zip(series) {
        let s = s.context(|| format!("flow maps at alpha = {alpha}"))?;
        for n in r.scales() {
            files.push(state_file(format!("state_N{n}_alpha{alpha}.csv"), s.state(n).expect("in range")));
        }
        let d = s.differences();
        let norms: Vec<f64> = d.iter().map(|v| max_abs_diff(v, &[])).collect();
        for (i, v) in d.iter().enumerate() {
            for (n, x) in v.iter().enumerate() {
                diffs.row([(r.n_first + i).to_string(), num(*alpha), n.to_string(), num(*x)]);
            }
        }
        let ratios: Vec<f64> = norms.windows(2).map(|w| w[1] / w[0]).collect();
        per_alpha.push(json!({ "alpha": alpha, "max_norm_differences": norms, "successive_ratios": ratios }));
    }
    files.push(diffs.finish("differences.csv"));
    Ok((files, json!({ "scales": [r.n_first, r.n_last], "collapse": per_alpha })))
}

fn fig5_eigenvector(config: &ExperimentConfig) -> Result<Outputs> {
    let spec = config.transfer.spec();
    let r = &config.regularization;
    let a = config.initial.vector(config.analysis.rho_scales[1].max(r.n_last) + 3);
    let setup = EigenmodeSetup {
        alphas: r.alphas.clone(),
        rho_scales: (config.analysis.rho_scales[0], config.analysis.rho_scales[1]),
        collapse_scales: (r.n_first, r.n_last),
        probe: config.analysis.probe,
    };
    let est = spectral::eigenmode_estimate(&spec, &a, &setup).context(|| "eigenmode estimate".into())?;

    let mut diffs = CsvTable::new(&["N", "alpha", "n", "delta_u"]);
    let mut psi_curves = CsvTable::new(&["N", "alpha", "n", "psi"]);
    let mut alternating = true;
    for &alpha in &r.alphas {
        let s = FlowSeries::compute(&spec, alpha, &a, r.n_first, r.n_last + 1)
            .context(|| format!("flow maps at alpha = {alpha}"))?;
        let d = s.differences();
        for (i, v) in d.iter().enumerate() {
            for (n, x) in v.iter().enumerate() {
                diffs.row([(r.n_first + i).to_string(), num(alpha), n.to_string(), num(*x)]);
            }
        }
        let dominant = dominant_components(&est.psi);
        for w in d.windows(2) {
            alternating &= dominant.iter().all(|&n| w[0][n] * w[1][n] < 0.0);
        }
    }
    for c in &est.curves {
        for (n, x) in c.psi.iter().enumerate() {
            psi_curves.row([c.viscous_scale.to_string(), num(c.alpha), n.to_string(), num(*x)]);
        }
    }
    let mut ratios = CsvTable::new(&["N", "rho"]);
    for (i, x) in est.rho.ratios.iter().enumerate() {
        ratios.row([(est.rho_scales.0 + i + 1).to_string(), num(*x)]);
    }
    let mut eigen = CsvTable::new(&["n", "psi"]);
    for (n, x) in est.psi.iter().enumerate() {
        eigen.row([n.to_string(), num(*x)]);
    }
    let report = json!({
        "rho": est.rho.rho,
        "rho_spread": est.rho.spread,
        "rho_scales": [est.rho_scales.0, est.rho_scales.1],
        "probe": est.probe_component,
        "c_by_alpha": est.c_by_alpha.iter().map(|(a, c)| json!({"alpha": a, "c": c})).collect::<Vec<_>>(),
        "collapse_relative_spread": est.collapse_spread(EIGENVECTOR_COMPONENTS),
        "collapse_components": EIGENVECTOR_COMPONENTS,
        "sign_alternation": alternating,
    });
    let files = vec![
        diffs.finish("differences.csv"),
        psi_curves.finish("psi_curves.csv"),
        eigen.finish("eigenvector.csv"),
        ratios.finish("rho_by_N.csv"),
    ];
    Ok((files, report))
}

/// Components where `|psi|` exceeds a tenth of its maximum.
fn dominant_components(psi: &[f64]) -> Vec<usize> {
    let peak = psi.iter().take(EIGENVECTOR_COMPONENTS).map(|x| x.abs()).fold(0.0, f64::max);
    (0..psi.len().min(EIGENVECTOR_COMPONENTS)).filter(|&n| psi[n].abs() > 0.1 * peak).collect()
}

fn fig6_bifurcation(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    let grid = config
        .analysis
        .p_grid
        .ok_or_else(|| Error::InvalidConfig("analysis.p_grid is required".into()))?
        .values();
    let alpha = first_alpha(config)?;
    let n = config.regularization.n_first;
    let probe = config.analysis.probe;
    let a = config.initial.vector(n + 3);
    let records = runner
        .map_indexed(grid.len(), |i| {
            spectral::bifurcation_record(&config.transfer.with_p(grid[i]), alpha, &a, n, probe)
        })
        .into_iter()
        .collect::<rg_lattice_core::Result<Vec<_>>>()
        .context(|| "bifurcation scan".into())?;
    let scan = spectral::BifurcationScan::from_records(n, alpha, probe, records)
        .context(|| "bifurcation scan".into())?;

    let mut diagram = CsvTable::new(&["p", "u4_N", "u4_N1", "delta_sq"]);
    let mut rho = CsvTable::new(&["p", "rho"]);
    for r in &scan.records {
        diagram.row([num(r.p), num(r.u_n), num(r.u_n1), num(r.delta_sq)]);
        if let Some(x) = r.rho {
            rho.row([num(r.p), num(x)]);
        }
    }
    let crossing = scan.rho_crossing();
    let window = config.analysis.onset_window.map(|[lo, hi]| (lo, hi)).or_else(|| {
        crossing.map(|c| (c + tolerance::ONSET_OFFSET, *grid.last().expect("grid")))
    });
    let onset = window.and_then(|(lo, hi)| scan.onset_fit(lo, hi).ok());
    let report = json!({
        "viscous_scale": n,
        "alpha": alpha,
        "probe": probe,
        "p_pd_rho_crossing": crossing,
        "onset": onset.map(|o| json!({
            "window": [o.window.0, o.window.1],
            "p_pd": o.p_pd,
            "slope": o.fit.slope,
            "r_squared": o.fit.r_squared,
        })),
    });
    Ok((vec![diagram.finish("bifurcation.csv"), rho.finish("rho.csv")], report))
}

fn fig7_period2(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    let spec = config.transfer.spec();
    let alpha = first_alpha(config)?;
    let r = &config.regularization;
    let probe = config.analysis.probe;
    let scales: Vec<usize> = r.scales().collect();
    let a = config.initial.vector(r.n_last + 3);
    let states = runner
        .map_indexed(scales.len(), |i| lattice::flow_map(&spec, scales[i], alpha, &a))
        .into_iter()
        .collect::<rg_lattice_core::Result<Vec<_>>>()
        .context(|| "flow maps".into())?;
    let mut files: Vec<OutputFile> = scales
        .iter()
        .zip(&states)
        .map(|(n, u)| state_file(format!("state_N{n}.csv"), u))
        .collect();
    let at = |i: usize| states[i].get(probe).copied().unwrap_or(0.0);
    let mut table = CsvTable::new(&["N", "gap", "within_parity"]);
    let mut min_gap = f64::INFINITY;
    let mut max_within: f64 = 0.0;
    for i in 0..scales.len().saturating_sub(2) {
        let gap = (at(i + 1) - at(i)).abs();
        let within = (at(i + 2) - at(i)).abs();
        min_gap = min_gap.min(gap);
        max_within = max_within.max(within);
        table.row([scales[i].to_string(), num(gap), num(within)]);
    }
    files.push(table.finish("parity.csv"));
    let report = json!({
        "p": spec.p,
        "probe": probe,
        "min_gap": min_gap,
        "max_within_parity": max_within,
        "separated": min_gap > tolerance::PARITY_SEPARATION * max_within,
    });
    Ok((files, report))
}

fn fig8_chaos(config: &ExperimentConfig) -> Result<Outputs> {
    let spec = config.transfer.spec();
    let alpha = first_alpha(config)?;
    let r = &config.regularization;
    let scales: Vec<usize> = r.scales().collect();
    let a = config.initial.vector(r.n_last + 2);
    let g = spectral::perturbation_growth(&spec, alpha, config.analysis.delta_alpha, &a, &scales)
        .context(|| "perturbation growth".into())?;
    let mut t = CsvTable::new(&["N", "norm_delta_u"]);
    for (n, x) in g.scales.iter().zip(&g.norms) {
        t.row([n.to_string(), num(*x)]);
    }
    let cut = g.pre_saturation_len();
    let fit = g.loglog_fit().ok();
    let report = json!({
        "alpha": alpha,
        "delta_alpha": g.delta_alpha,
        "loglog": g.loglog(),
        "pre_saturation_scales": &g.scales[..cut],
        "strictly_increasing": g.is_strictly_increasing_before_saturation(),
        "loglog_fit": fit.map(|f| json!({"slope": f.slope, "r_squared": f.r_squared, "points": f.points})),
    });
    Ok((vec![t.finish("growth.csv")], report))
}

struct SampledKernel {
    viscous_scale: usize,
    noise: String,
    set: Arc<SampleSet>,
}

fn sample_grid(
    config: &ExperimentConfig,
    runner: &Runner,
    spec: TransferSpec,
    noises: &[NoiseConfig],
) -> Result<Vec<SampledKernel>> {
    let r = &config.regularization;
    let mut out = Vec::new();
    for noise in noises {
        for n in r.scales() {
            let request = KernelRequest {
                transfer: spec,
                viscous_scale: n,
                noise: noise.clone(),
                initial: config.initial.vector(n + 2),
                initial_label: config.initial.label(),
                components: config.sampling.components.clone(),
                samples: config.sampling.samples,
            };
            out.push(SampledKernel {
                viscous_scale: n,
                noise: noise.name.clone(),
                set: runner.sample(&request, config.seed)?,
            });
        }
    }
    Ok(out)
}

fn samples_file(k: &SampledKernel) -> OutputFile {
    let mut header = vec!["sample_id".to_string()];
    header.extend(k.set.components.iter().map(|c| format!("u{c}")));
    let mut t = CsvTable::new(&header);
    for i in 0..k.set.len() {
        let mut row = vec![i.to_string()];
        row.extend(k.set.columns.iter().map(|c| num(c[i])));
        t.row(row);
    }
    t.finish(format!("samples_N{}_{}.csv", k.viscous_scale, k.noise))
}

/// Seed and provenance of every persisted sample set.
fn samples_metadata(kernels: &[SampledKernel]) -> Result<OutputFile> {
    let sets: Vec<Value> = kernels
        .iter()
        .map(|k| {
            let p = &k.set.provenance;
            let (lo, hi) = match p.dissipation {
                rg_lattice_core::Dissipation::Noise { lo, hi } => (lo, hi),
                rg_lattice_core::Dissipation::Deterministic { alpha } => (alpha, alpha),
            };
            json!({
                "file": format!("samples_N{}_{}.csv", k.viscous_scale, k.noise),
                "seed": k.set.seed,
                "N": p.viscous_scale,
                "noise": k.noise,
                "noise_lo": lo,
                "noise_hi": hi,
                "family": p.transfer.family.name(),
                "p": p.transfer.p,
                "M": k.set.len(),
                "initial": p.initial,
            })
        })
        .collect();
    Ok(OutputFile { name: "samples.json".into(), bytes: crate::output::to_json(&sets)? })
}

fn density_file(name: String, grid: &BinGrid, values: &[f64]) -> OutputFile {
    let mut t = CsvTable::new(&["bin_left", "bin_right", "density"]);
    for (i, d) in values.iter().enumerate() {
        t.row([num(grid.left(i)), num(grid.right(i)), num(*d)]);
    }
    t.finish(name)
}

/// Shared grid per compared component over all sets.
fn pooled_grid(kernels: &[SampledKernel], component: usize, bins: usize) -> Result<BinGrid> {
    let columns: Vec<&[f64]> = kernels
        .iter()
        .map(|k| k.set.column(component).ok_or_else(|| missing(component)))
        .collect::<Result<_>>()?;
    BinGrid::pooled(&columns, bins).context(|| format!("bin grid for u{component}"))
}

fn missing(component: usize) -> Error {
    Error::InvalidConfig(format!("component {component} is not in sampling.components"))
}

fn pdfs(kernels: &[SampledKernel], component: usize, grid: &BinGrid) -> Result<Vec<HistogramPdf>> {
    kernels
        .iter()
        .map(|k| stochastic::marginal_pdf(&k.set, component, grid).context(|| format!("pdf of u{component}")))
        .collect()
}

fn fig9_pdfs(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    let kernels = sample_grid(config, runner, config.transfer.spec(), noises(config, 1)?)?;
    let mut files: Vec<OutputFile> = kernels.iter().map(samples_file).collect();
    files.push(samples_metadata(&kernels)?);
    let mut ks = CsvTable::new(&["component", "N_a", "noise_a", "N_b", "noise_b", "ks"]);
    let mut worst = Vec::new();
    for &c in &config.sampling.compared {
        let grid = pooled_grid(&kernels, c, config.sampling.bins)?;
        for (k, pdf) in kernels.iter().zip(pdfs(&kernels, c, &grid)?) {
            files.push(density_file(format!("pdf_N{}_{}_u{c}.csv", k.viscous_scale, k.noise), &pdf.grid, &pdf.density));
        }
        let mut max_ks: f64 = 0.0;
        for (i, a) in kernels.iter().enumerate() {
            for b in &kernels[i + 1..] {
                let d = stochastic::ks_distance(a.set.column(c).ok_or_else(|| missing(c))?, b.set.column(c).ok_or_else(|| missing(c))?)
                    .context(|| "ks distance".into())?;
                max_ks = max_ks.max(d);
                ks.row([c.to_string(), a.viscous_scale.to_string(), a.noise.clone(), b.viscous_scale.to_string(), b.noise.clone(), num(d)]);
            }
        }
        worst.push(json!({ "component": c, "max_ks": max_ks }));
    }
    files.push(ks.finish("ks_pairs.csv"));
    let variances = kernels
        .iter()
        .map(|k| {
            let v: Vec<f64> = [0, 1]
                .iter()
                .map(|&c| {
                    k.set
                        .column(c)
                        .map(|col| stochastic::kernel_moments(col).map(|m| m.std_dev * m.std_dev).unwrap_or(f64::NAN))
                        .unwrap_or(f64::NAN)
                })
                .collect();
            json!({ "N": k.viscous_scale, "noise": k.noise, "var_u0": v[0], "var_u1": v[1] })
        })
        .collect::<Vec<_>>();
    let report = json!({
        "samples": config.sampling.samples,
        "bins": config.sampling.bins,
        "max_ks_by_component": worst,
        "deterministic_variances": variances,
    });
    Ok((files, report))
}

fn fig10_stochastic_eigenmode(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    let noise = &noises(config, 1)?[..1];
    let kernels = sample_grid(config, runner, config.transfer.spec(), noise)?;
    let first = config.regularization.n_first;
    let mut files = Vec::new();
    let mut families: Vec<Vec<SignedHistogram>> = Vec::new();
    let mut integrals = Vec::new();
    for &c in &config.sampling.compared {
        let grid = pooled_grid(&kernels, c, config.sampling.bins)?;
        let p = pdfs(&kernels, c, &grid)?;
        let mut family = Vec::new();
        for (i, w) in p.windows(2).enumerate() {
            let d = stochastic::delta_pdf(&w[1], &w[0]).context(|| "signed histogram".into())?;
            files.push(density_file(format!("delta_pdf_N{}_u{c}.csv", first + i), &d.grid, &d.values));
            integrals.push(json!({ "component": c, "N": first + i, "integral": d.integral() }));
            family.push(d);
        }
        families.push(family);
    }
    let est = stochastic::estimate_rho_stochastic(&families, first).context(|| "stochastic eigenvalue".into())?;
    for (c, (mode, family)) in config.sampling.compared.iter().zip(est.eigenmode.iter().zip(&families)) {
        files.push(density_file(format!("eigenmode_u{c}.csv"), &family[0].grid, mode));
    }
    let report = json!({
        "rho": est.rho,
        "relative_objective": est.objective,
        "raw_objective": est.raw_objective,
        "at_boundary": est.at_boundary,
        "search_interval": [stochastic::RHO_SEARCH.0, stochastic::RHO_SEARCH.1],
        "signed_integrals": integrals,
        "integral_tolerance": 4.0 / (config.sampling.samples as f64).sqrt(),
    });
    Ok((files, report))
}

fn fig11_moments(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    let grid = config
        .analysis
        .p_grid
        .ok_or_else(|| Error::InvalidConfig("analysis.p_grid is required".into()))?
        .values();
    let noise = &noises(config, 1)?[..1];
    let mut t = CsvTable::new(&["p", "N", "component", "mean", "std", "mean_stderr", "std_stderr"]);
    let mut splits = Vec::new();
    for &p in &grid {
        let kernels = sample_grid(config, runner, config.transfer.with_p(p), noise)?;
        for &c in &config.sampling.compared {
            let mut moments = Vec::new();
            for k in &kernels {
                let m = stochastic::kernel_moments(k.set.column(c).ok_or_else(|| missing(c))?)
                    .context(|| "moments".into())?;
                t.row([num(p), k.viscous_scale.to_string(), c.to_string(), num(m.mean), num(m.std_dev), num(m.mean_stderr), num(m.std_dev_stderr)]);
                moments.push(m);
            }
            for w in moments.windows(2) {
                let se = (w[0].mean_stderr.powi(2) + w[1].mean_stderr.powi(2)).sqrt();
                splits.push(json!({ "p": p, "component": c, "mean_split_in_stderr": (w[1].mean - w[0].mean).abs() / se }));
            }
        }
    }
    Ok((vec![t.finish("moments.csv")], json!({ "splits": splits })))
}

fn fig12_stochastic_period2(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    let all = noises(config, 2)?;
    let spec = config.transfer.spec();
    let primary = sample_grid(config, runner, spec, &all[..1])?;
    let swapped = sample_grid(config, runner, spec, &all[1..2])?;
    let mut files = Vec::new();
    for &c in &config.sampling.compared {
        let both: Vec<SampledKernel> = primary
            .iter()
            .chain(&swapped)
            .map(|k| SampledKernel { viscous_scale: k.viscous_scale, noise: k.noise.clone(), set: Arc::clone(&k.set) })
            .collect();
        let grid = pooled_grid(&both, c, config.sampling.bins)?;
        for (k, pdf) in both.iter().zip(pdfs(&both, c, &grid)?) {
            files.push(density_file(format!("pdf_N{}_{}_u{c}.csv", k.viscous_scale, k.noise), &pdf.grid, &pdf.density));
        }
    }
    let p: Vec<(usize, &SampleSet)> = primary.iter().map(|k| (k.viscous_scale, k.set.as_ref())).collect();
    let q: Vec<(usize, &SampleSet)> = swapped.iter().map(|k| (k.viscous_scale, k.set.as_ref())).collect();
    let report = stochastic::classify_period2(&p, Some(&q), &config.sampling.compared)
        .context(|| "period-two classification".into())?;
    let mut ks = CsvTable::new(&["component", "N_a", "N_b", "ks"]);
    for m in &report.matrices {
        for (i, a) in m.scales.iter().enumerate() {
            for (j, b) in m.scales.iter().enumerate().skip(i + 1) {
                ks.row([m.component.to_string(), a.to_string(), b.to_string(), num(m.distances[i][j])]);
            }
        }
    }
    files.push(ks.finish("ks_matrix.csv"));
    let json_report = json!({
        "class": report.class.name(),
        "critical": report.critical,
        "matrices": report.matrices.iter().map(|m| json!({
            "component": m.component,
            "scales": m.scales,
            "max_within_parity": m.max_within_parity(),
            "min_cross_parity": m.min_cross_parity(),
            "max_cross_parity": m.max_cross_parity(),
        })).collect::<Vec<_>>(),
        "swap": report.swap.as_ref().map(|s| s.iter().map(|c| json!({
            "component": c.component,
            "max_opposite": c.max_opposite,
            "min_same": c.min_same,
        })).collect::<Vec<_>>()),
        "swap_holds": report.swap_holds,
        "primary_noise": all[0].name,
        "swapped_noise": all[1].name,
    });
    Ok((files, json_report))
}

fn app_structure_functions(config: &ExperimentConfig) -> Result<(Vec<OutputFile>, Value, RunLedger)> {
    let alpha = first_alpha(config)?;
    let n = config.regularization.n_first;
    let sim = SimConfig::deterministic(config.transfer.spec(), n, alpha).with_forcing(config.regularization.forcing);
    let a = LatticeState::new(config.initial.vector(n + 1)).context(|| "initial state".into())?;
    let an = &config.analysis;
    let mut rng = rng::stream(config.seed, 0, rng::SLOT_KERNEL);
    let run = cascade::forced_steady_run(&a, &sim, an.transient, an.window, an.p_max, &mut rng)
        .context(|| "forced run".into())?;
    let range = an.inertial.map(|[lo, hi]| (lo, hi)).unwrap_or(cascade::default_inertial_range(n));
    let fit = cascade::fit_zeta(&run.table, range).context(|| "exponent fit".into())?;
    let flux = cascade::flux_balance_check(&run, range);

    let mut sf = CsvTable::new(&["n", "p", "S_p"]);
    for (i, scale) in run.table.scales.iter().enumerate() {
        for (q, s) in run.table.values[i].iter().enumerate() {
            sf.row([scale.to_string(), (q + 1).to_string(), num(*s)]);
        }
    }
    let mut zt = CsvTable::new(&["p", "zeta", "stderr"]);
    for p in 1..=an.p_max {
        zt.row([p.to_string(), num(fit.zeta(p)), num(fit.stderr(p))]);
    }
    let flux_json = json!({
        "window": flux.window,
        "dissipation_rate": flux.dissipation_rate,
        "injection_rate": flux.injection_rate,
        "truncation_rate": flux.truncation_rate,
        "ledger_residual": flux.ledger_residual,
        "flux_proxy": flux.flux_proxy.iter().map(|(n, f)| json!({"n": n, "mean_u_over_tau": f})).collect::<Vec<_>>(),
        "flux_slope": flux.flux_slope.map(|f| f.slope),
    });
    let concave: Vec<bool> = (1..=an.p_max / 2).map(|p| fit.zeta(2 * p) < 2.0 * fit.zeta(p)).collect();
    let report = json!({
        "inertial_range": [range.0, range.1],
        "zeta": (1..=an.p_max).map(|p| json!({
            "p": p, "zeta": fit.zeta(p), "stderr": fit.stderr(p), "r_squared": fit.fits[p as usize - 1].r_squared,
        })).collect::<Vec<_>>(),
        "concave_zeta_2p_below_2zeta_p": concave,
        "flux": flux_json.clone(),
        "counts": run.table.counts,
    });
    let files = vec![
        sf.finish("structure_functions.csv"),
        zt.finish("zeta.csv"),
        OutputFile { name: "flux.json".into(), bytes: crate::output::to_json(&flux_json)? },
    ];
    Ok((files, report, RunLedger::new(&run.end.0, run.initial_total, run.end.1)))
}

fn transfers(config: &ExperimentConfig) -> Vec<TransferSpec> {
    std::iter::once(config.transfer.spec())
        .chain(config.analysis.companion_transfers.iter().map(|t| t.spec()))
        .collect()
}

/// Uniform `[0, 1)` entries on scales `0..len`, from a stream labelled by the case.
fn random_state(seed: u64, label: u64, trial: usize, len: usize) -> Vec<f64> {
    let mut r = rng::stream(derive_seed(seed, label), trial as u64, SLOT_INITIAL);
    (0..len).map(|_| rng::unit_f64(&mut r)).collect()
}

fn case_label(spec: &TransferSpec, alpha: f64, n: usize) -> u64 {
    let family = spec.family as u64;
    (family << 60) ^ (n as u64) << 48 ^ alpha.to_bits() >> 16 ^ spec.p.to_bits() >> 32
}

fn thm1_verify(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    struct Case {
        spec: TransferSpec,
        alpha: f64,
        n: usize,
    }
    let mut cases = Vec::new();
    for spec in transfers(config) {
        for &alpha in &config.regularization.alphas {
            for n in config.regularization.scales() {
                cases.push(Case { spec, alpha, n });
            }
        }
    }
    let trials = config.analysis.trials;
    let results = runner
        .map_indexed(cases.len(), |i| {
            let c = &cases[i];
            let phi = FlowMap::simulator(c.spec, c.n, c.alpha);
            let mut worst: f64 = 0.0;
            for t in 0..trials {
                let a = random_state(config.seed, case_label(&c.spec, c.alpha, c.n), t, c.n + 2);
                let composed = algebra::rg_apply(&phi, &a, &c.spec)?;
                let direct = lattice::flow_map(&c.spec, c.n + 1, c.alpha, &a)?;
                worst = worst.max(max_abs_diff(&composed, &direct));
            }
            Ok(worst)
        })
        .into_iter()
        .collect::<rg_lattice_core::Result<Vec<f64>>>()
        .context(|| "identity check".into())?;
    let mut t = CsvTable::new(&["family", "p", "alpha", "N", "max_deviation"]);
    for (c, d) in cases.iter().zip(&results) {
        t.row([c.spec.family.name().to_string(), num(c.spec.p), num(c.alpha), c.n.to_string(), num(*d)]);
    }
    let max = results.iter().copied().fold(0.0, f64::max);
    let report = json!({
        "cases": cases.len(),
        "trials_per_case": trials,
        "max_deviation": max,
        "pass": max <= tolerance::IDENTITY,
    });
    Ok((vec![t.finish("deviations.csv")], report))
}

fn thm2_verify(config: &ExperimentConfig, runner: &Runner) -> Result<Outputs> {
    struct Case {
        spec: TransferSpec,
        alpha: f64,
        n: usize,
        trial: usize,
    }
    let mut cases = Vec::new();
    for spec in transfers(config) {
        for &alpha in &config.regularization.alphas {
            for n in config.regularization.scales() {
                for trial in 0..config.analysis.trials.max(1) {
                    cases.push(Case { spec, alpha, n, trial });
                }
            }
        }
    }
    let an = &config.analysis;
    let results = runner
        .map_indexed(cases.len(), |i| {
            let c = &cases[i];
            let a = if c.trial == 0 {
                config.initial.vector(c.n + 1)
            } else {
                random_state(config.seed, case_label(&c.spec, c.alpha, c.n), c.trial, c.n + 1)
            };
            let times = DyadicTime::enumerate(an.dyadic_max_m, an.dyadic_max_k, c.n);
            let sim_config = SimConfig::deterministic(c.spec, c.n, c.alpha).with_n_cap(a.len().max(c.n + 1) - 1);
            let mut worst: f64 = 0.0;
            for t in &times {
                let composed = algebra::state_at_dyadic_time(&a, c.n, c.alpha, &c.spec, t)?;
                let mut sim = Simulation::new(sim_config, LatticeState::new(a.clone())?)?;
                let mut unused = rng::stream(0, 0, 0);
                for _ in 0..t.ticks(c.n)? {
                    sim.tick(&mut unused)?;
                }
                let tail = &sim.state().values()[t.finest()..=c.n];
                worst = worst.max(max_abs_diff(&composed[..tail.len()], tail));
            }
            Ok((times.len(), worst))
        })
        .into_iter()
        .collect::<rg_lattice_core::Result<Vec<_>>>()
        .context(|| "dyadic composition check".into())?;
    let mut t = CsvTable::new(&["family", "p", "alpha", "N", "trial", "times", "max_deviation"]);
    for (c, (count, d)) in cases.iter().zip(&results) {
        t.row([
            c.spec.family.name().to_string(),
            num(c.spec.p),
            num(c.alpha),
            c.n.to_string(),
            c.trial.to_string(),
            count.to_string(),
            num(*d),
        ]);
    }
    let max = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let times: usize = results.iter().map(|r| r.0).sum();
    let report = json!({
        "cases": cases.len(),
        "dyadic_times_checked": times,
        "max_deviation": max,
        "pass": max <= tolerance::IDENTITY,
    });
    Ok((vec![t.finish("deviations.csv")], report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    #[test]
    fn unknown_experiment_is_an_error() {
        let mut cfg = registry::defaults("thm1_verify", Preset::Desk).unwrap();
        cfg.experiment = "fig99".into();
        let runner = Runner::new(Some(1)).unwrap();
        assert!(matches!(run_experiment(&cfg, &runner), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn thm1_default_passes() {
        let cfg = registry::defaults("thm1_verify", Preset::Desk).unwrap();
        let out = run_experiment(&cfg, &Runner::new(Some(1)).unwrap()).unwrap();
        assert_eq!(out.report["pass"], true);
        assert!(out.report["max_deviation"].as_f64().unwrap() <= 1e-12);
    }
}
