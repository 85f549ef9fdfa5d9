//! Forced steady states: structure functions `S_p(l_n) = <u_n^p>`, their
//! scaling exponents and the energy flux balance.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::lattice::{self, EnergyLedger, LatticeState, Probe, ProbeRecord, ProbeStatistic, SimConfig};
use crate::stats::{self, LinearFit};

/// `S_p(l_n)` for `p = 1..=p_max`, averaged over native update times.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureFunctionTable {
    pub scales: Vec<usize>,
    pub p_max: u32,
    /// `values[i][p - 1]` is `S_p` at `scales[i]`.
    pub values: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
}

impl StructureFunctionTable {
    pub fn get(&self, scale: usize, p: u32) -> Option<f64> {
        let i = self.scales.iter().position(|&n| n == scale)?;
        self.values[i].get((p as usize).checked_sub(1)?).copied()
    }
}

/// A forced run and the ledger needed for the flux balance.
#[derive(Debug, Clone)]
pub struct SteadyRun {
    pub table: StructureFunctionTable,
    pub transient: u64,
    pub window: u64,
    /// Ledger and total energy at the end of the transient.
    pub start: (EnergyLedger, f64),
    /// Ledger and total energy at the end of the window.
    pub end: (EnergyLedger, f64),
    pub initial_total: f64,
}

/// Runs `transient + window` unit times and averages `u_n^p` for every scale
/// `0..=N` over the native times in the window.
pub fn forced_steady_run<R: RngCore + ?Sized>(
    a: &LatticeState,
    config: &SimConfig,
    transient: u64,
    window: u64,
    p_max: u32,
    rng: &mut R,
) -> Result<SteadyRun> {
    if window == 0 || p_max == 0 {
        return Err(Error::Domain("steady run needs a positive window and order"));
    }
    let t_end = transient + window;
    let probes: Vec<Probe> = (0..=config.viscous_scale())
        .map(|scale| Probe {
            scale,
            statistic: ProbeStatistic::PowerSums { max_order: p_max, from_time: transient },
        })
        .collect();
    let run = lattice::simulate(a, config, t_end, &probes, Some(transient), rng)?;
    let mut scales = Vec::with_capacity(probes.len());
    let mut values = Vec::with_capacity(probes.len());
    let mut counts = Vec::with_capacity(probes.len());
    for record in &run.records {
        if let ProbeRecord::PowerSums { scale, sums, count } = record {
            scales.push(*scale);
            values.push(sums.iter().map(|s| s / *count as f64).collect());
            counts.push(*count);
        }
    }
    let end_total = run.final_state.total();
    Ok(SteadyRun {
        table: StructureFunctionTable { scales, p_max, values, counts },
        transient,
        window,
        start: run.mark.expect("mark at the end of the transient"),
        end: (run.ledger, end_total),
        initial_total: run.initial_total,
    })
}

/// Default inertial range `[3, N - 5]`.
pub fn default_inertial_range(viscous_scale: usize) -> (usize, usize) {
    (3, viscous_scale.saturating_sub(5))
}

pub const MIN_FIT_SCALES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ZetaFit {
    pub range: (usize, usize),
    /// `fits[p - 1]` is the fit of `log S_p` against `log l_n`.
    pub fits: Vec<LinearFit>,
}

impl ZetaFit {
    pub fn zeta(&self, p: u32) -> f64 {
        self.fits[p as usize - 1].slope
    }

    pub fn stderr(&self, p: u32) -> f64 {
        self.fits[p as usize - 1].slope_stderr
    }
}

pub fn fit_zeta(table: &StructureFunctionTable, range: (usize, usize)) -> Result<ZetaFit> {
    let rows: Vec<usize> = table
        .scales
        .iter()
        .enumerate()
        .filter(|(_, &n)| n >= range.0 && n <= range.1)
        .map(|(i, _)| i)
        .collect();
    if rows.len() < MIN_FIT_SCALES {
        return Err(Error::InsufficientData { needed: MIN_FIT_SCALES, got: rows.len() });
    }
    let x: Vec<f64> = rows.iter().map(|&i| log_scale(table.scales[i])).collect();
    let fits = (0..table.p_max as usize)
        .map(|q| {
            let y = rows
                .iter()
                .map(|&i| {
                    let s = table.values[i][q];
                    if s > 0.0 {
                        Ok(libm::log(s))
                    } else {
                        Err(Error::Domain("structure function vanishes in the fit range"))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            stats::linear_fit(&x, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ZetaFit { range, fits })
}

/// `log l_n = -n log 2`.
fn log_scale(n: usize) -> f64 {
    -(n as f64) * core::f64::consts::LN_2
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxReport {
    pub window: u64,
    pub dissipation_rate: f64,
    pub injection_rate: f64,
    pub truncation_rate: f64,
    /// `injected - dissipated - truncated - (total_end - total_start)` over the window.
    pub ledger_residual: f64,
    /// `(n, <u_n> / tau_n)` over the inertial range.
    pub flux_proxy: Vec<(usize, f64)>,
    /// Slope of `log <u_n>` against `log tau_n` over the inertial range.
    pub flux_slope: Option<LinearFit>,
}

pub fn flux_balance_check(run: &SteadyRun, range: (usize, usize)) -> FluxReport {
    let (l0, e0) = run.start;
    let (l1, e1) = run.end;
    let w = run.window as f64;
    let injected = l1.injected - l0.injected;
    let dissipated = l1.dissipated - l0.dissipated;
    let truncated = l1.truncated - l0.truncated;
    let mut flux_proxy = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, &n) in run.table.scales.iter().enumerate() {
        if n < range.0 || n > range.1 {
            continue;
        }
        let mean = run.table.values[i][0];
        flux_proxy.push((n, mean * libm::ldexp(1.0, n as i32)));
        if mean > 0.0 {
            x.push(log_scale(n));
            y.push(libm::log(mean));
        }
    }
    FluxReport {
        window: run.window,
        dissipation_rate: dissipated / w,
        injection_rate: injected / w,
        truncation_rate: truncated / w,
        ledger_residual: injected - dissipated - truncated - (e1 - e0),
        flux_proxy,
        flux_slope: stats::linear_fit(&x, &y).ok(),
    }
}
