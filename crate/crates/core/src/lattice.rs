//! Tick-level integrator of the regularized lattice dynamics.
//!
//! Time advances in ticks of the viscous turnover time `2^-N`. At tick `k`
//! exactly the scales `n_min..=N` are due (see [`due_scales`]); all of their
//! transfer fractions are evaluated on the pre-tick values and each due scale
//! keeps `(1 - f_n) u_n` while receiving `f_{n-1} u_{n-1}` from the scale
//! above when that scale is due as well. The stored value of a scale is the
//! one assigned at its most recent update, so after `2^N` ticks the storage
//! holds the state at the next integer time.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransferFamily {
    /// `0.3 - 0.1 cos(p e^{-u/v})`, with `0.2` at `v = 0`.
    Fa,
    /// `0.4 - 0.3 cos(p e^{-u/v} - p/2)`, with `0.4 - 0.3 cos(p/2)` at `v = 0`.
    Fb,
}

impl TransferFamily {
    pub fn name(self) -> &'static str {
        match self {
            TransferFamily::Fa => "FA",
            TransferFamily::Fb => "FB",
        }
    }
}

/// Transfer-fraction function `f(u, v)` of the ideal system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSpec {
    pub family: TransferFamily,
    pub p: f64,
}

impl TransferSpec {
    pub const fn fa(p: f64) -> Self {
        Self { family: TransferFamily::Fa, p }
    }

    pub const fn fb(p: f64) -> Self {
        Self { family: TransferFamily::Fb, p }
    }

    /// Evaluates `f(u, v)` without validating the inputs.
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match self.family {
            TransferFamily::Fa => {
                if v > 0.0 {
                    0.3 - 0.1 * math::cos(self.p * math::exp(-u / v))
                } else {
                    0.2
                }
            }
            TransferFamily::Fb => {
                if v > 0.0 {
                    0.4 - 0.3 * math::cos(self.p * math::exp(-u / v) - 0.5 * self.p)
                } else {
                    0.4 - 0.3 * math::cos(0.5 * self.p)
                }
            }
        }
    }

    /// Closed interval containing every value of the family.
    pub fn range(&self) -> (f64, f64) {
        match self.family {
            TransferFamily::Fa => (0.2, 0.4),
            TransferFamily::Fb => (0.1, 0.7),
        }
    }
}

/// Validated evaluation of the transfer fraction.
pub fn transfer_fraction(spec: &TransferSpec, u: f64, v: f64) -> Result<f64> {
    if !(u.is_finite() && v.is_finite()) {
        return Err(Error::Domain("transfer fraction needs finite energies"));
    }
    if u < 0.0 || v < 0.0 {
        return Err(Error::Domain("transfer fraction needs non-negative energies"));
    }
    if !spec.p.is_finite() {
        return Err(Error::Domain("transfer parameter p must be finite"));
    }
    Ok(spec.eval(u, v))
}

/// Fraction removed at the viscous scale per update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dissipation {
    Deterministic { alpha: f64 },
    /// `alpha_t` drawn i.i.d. uniform on `[lo, hi]` at every update.
    Noise { lo: f64, hi: f64 },
}

impl Dissipation {
    /// Uniform `[0.4, 0.5]` viscous-scale noise.
    pub const MU: Dissipation = Dissipation::Noise { lo: 0.4, hi: 0.5 };
    /// Uniform `[0.3, 0.301]` viscous-scale noise.
    pub const MU_TILDE: Dissipation = Dissipation::Noise { lo: 0.3, hi: 0.301 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Dissipation::Deterministic { alpha } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::Domain("alpha must lie in (0, 1]"));
                }
            }
            Dissipation::Noise { lo, hi } => {
                if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                    return Err(Error::Domain("noise bounds must satisfy 0 < lo <= hi <= 1"));
                }
            }
        }
        Ok(())
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Dissipation::Noise { lo, hi } if lo != hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationSpec {
    pub viscous_scale: usize,
    pub dissipation: Dissipation,
}

impl RegularizationSpec {
    pub const fn deterministic(viscous_scale: usize, alpha: f64) -> Self {
        Self {
            viscous_scale,
            dissipation: Dissipation::Deterministic { alpha },
        }
    }

    pub const fn noise(viscous_scale: usize, lo: f64, hi: f64) -> Self {
        Self {
            viscous_scale,
            dissipation: Dissipation::Noise { lo, hi },
        }
    }
}

/// Cumulative energy bookkeeping of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyLedger {
    /// Removed at the viscous scale.
    pub dissipated: f64,
    /// Added by large-scale forcing.
    pub injected: f64,
    /// Discarded from initial components below the viscous scale.
    pub truncated: f64,
}

impl EnergyLedger {
    /// Net energy that left the lattice.
    pub fn net_outflow(&self) -> f64 {
        self.dissipated + self.truncated - self.injected
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LedgerAccumulator {
    dissipated: CompensatedSum,
    injected: CompensatedSum,
    truncated: CompensatedSum,
}

impl LedgerAccumulator {
    #[inline]
    fn dissipate(&mut self, amount: f64) {
        self.dissipated.add(amount);
    }

    #[inline]
    fn inject(&mut self, amount: f64) {
        self.injected.add(amount);
    }

    fn truncate(&mut self, amount: f64) {
        self.truncated.add(amount);
    }

    fn snapshot(&self) -> EnergyLedger {
        EnergyLedger {
            dissipated: self.dissipated.value(),
            injected: self.injected.value(),
            truncated: self.truncated.value(),
        }
    }
}

static WORST_RESIDUAL_BITS: AtomicU64 = AtomicU64::new(0);
static AUDITED_RUNS: AtomicU64 = AtomicU64::new(0);

/// Worst conservation residual seen by this process, relative to the energy
/// that entered the lattice and divided by the run length in unit times.
///
/// Every flow-map evaluation, kernel sample, unit step and [`simulate`] run
/// reports into it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationAudit {
    pub worst_relative_residual: f64,
    pub runs: u64,
}

pub fn conservation_audit() -> ConservationAudit {
    ConservationAudit {
        worst_relative_residual: f64::from_bits(WORST_RESIDUAL_BITS.load(Ordering::Relaxed)),
        runs: AUDITED_RUNS.load(Ordering::Relaxed),
    }
}

pub fn reset_conservation_audit() {
    WORST_RESIDUAL_BITS.store(0, Ordering::Relaxed);
    AUDITED_RUNS.store(0, Ordering::Relaxed);
}

/// `|total + dissipated + truncated - injected - initial| / (initial + injected) / units`.
pub fn relative_residual(initial_total: f64, final_total: f64, ledger: &EnergyLedger, units: u64) -> f64 {
    let residual = final_total + ledger.net_outflow() - initial_total;
    let scale = initial_total + ledger.injected;
    let rel = if scale > 0.0 { libm::fabs(residual) / scale } else { libm::fabs(residual) };
    rel / units.max(1) as f64
}

fn record_residual(initial_total: f64, values: &[f64], ledger: &LedgerAccumulator, units: u64) {
    let final_total = values.iter().copied().collect::<CompensatedSum>().value();
    let rel = relative_residual(initial_total, final_total, &ledger.snapshot(), units);
    // Non-negative floats order like their bit patterns.
    WORST_RESIDUAL_BITS.fetch_max(rel.to_bits(), Ordering::Relaxed);
    AUDITED_RUNS.fetch_add(1, Ordering::Relaxed);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub transfer: TransferSpec,
    pub regularization: RegularizationSpec,
    /// Adds one unit of energy to `u_0` at every unit-time update.
    pub forcing: bool,
    /// Highest stored scale index; storage has `n_cap + 1` entries.
    pub n_cap: usize,
}

impl SimConfig {
    pub fn new(transfer: TransferSpec, regularization: RegularizationSpec) -> Self {
        Self {
            transfer,
            regularization,
            forcing: false,
            n_cap: regularization.viscous_scale,
        }
    }

    pub fn deterministic(transfer: TransferSpec, viscous_scale: usize, alpha: f64) -> Self {
        Self::new(transfer, RegularizationSpec::deterministic(viscous_scale, alpha))
    }

    pub fn with_forcing(mut self, forcing: bool) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_n_cap(mut self, n_cap: usize) -> Self {
        self.n_cap = n_cap;
        self
    }

    pub fn viscous_scale(&self) -> usize {
        self.regularization.viscous_scale
    }

    /// Ticks per unit time, `2^N`.
    pub fn ticks_per_unit(&self) -> Result<u64> {
        let n = self.viscous_scale();
        if n >= 63 {
            return Err(Error::Domain("viscous scale too large for the tick counter"));
        }
        Ok(1u64 << n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cap < self.viscous_scale() {
            return Err(Error::Domain("n_cap must be at least the viscous scale"));
        }
        if !self.transfer.p.is_finite() {
            return Err(Error::Domain("transfer parameter p must be finite"));
        }
        self.ticks_per_unit()?;
        self.regularization.dissipation.validate()
    }
}

/// Energies `u_0..=u_{n_cap}` and the tick counter of the current run.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    values: Vec<f64>,
    tick: u64,
}

impl LatticeState {
    /// Validates that every component is finite and non-negative.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_energies(&values)?;
        Ok(Self { values, tick: 0 })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len], tick: 0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().copied().collect::<CompensatedSum>().value()
    }

    /// Time in units of the large-scale turnover time.
    pub fn time(&self, viscous_scale: usize) -> f64 {
        self.tick as f64 * libm::ldexp(1.0, -(viscous_scale as i32))
    }

    /// Resizes storage to `n_cap + 1`; fails if that would drop energy.
    fn fit_to(mut self, n_cap: usize) -> Result<Self> {
        let len = n_cap + 1;
        if self.values.len() > len {
            if self.values[len..].iter().any(|&x| x != 0.0) {
                return Err(Error::Domain("state has energy beyond the storage cap"));
            }
            self.values.truncate(len);
        } else {
            self.values.resize(len, 0.0);
        }
        Ok(self)
    }
}

pub(crate) fn check_energies(values: &[f64]) -> Result<()> {
    if values.iter().all(|x| x.is_finite() && *x >= 0.0) {
        Ok(())
    } else {
        Err(Error::Domain("energies must be finite and non-negative"))
    }
}

/// Smallest scale updating at tick `k`: `max(0, N - v2(k))`, and `0` for `k = 0`.
#[inline]
pub fn due_scales(k: u64, viscous_scale: usize) -> usize {
    if k == 0 {
        return 0;
    }
    viscous_scale.saturating_sub(k.trailing_zeros() as usize)
}

/// One tick on raw storage. `values` must have at least `N + 1` entries;
/// `draw_alpha` is called exactly once, for the viscous-scale update.
#[inline]
fn advance<A: FnMut() -> f64>(
    values: &mut [f64],
    k: u64,
    config: &SimConfig,
    draw_alpha: &mut A,
    ledger: &mut LedgerAccumulator,
) -> Result<()> {
    let n = config.viscous_scale();
    if k == 0 {
        let mut removed = CompensatedSum::new();
        for x in &mut values[n + 1..] {
            removed.add(*x);
            *x = 0.0;
        }
        if removed.value() != 0.0 {
            ledger.truncate(removed.value());
        }
    }
    let n_min = due_scales(k, n);
    let spec = config.transfer;
    let mut incoming = 0.0;
    for s in n_min..n {
        let u = values[s];
        let out = spec.eval(u, values[s + 1]) * u;
        values[s] = u - out + incoming;
        incoming = out;
    }
    let u = values[n];
    let out = draw_alpha() * u;
    values[n] = u - out + incoming;
    ledger.dissipate(out);
    if config.forcing && n_min == 0 {
        values[0] += 1.0;
        ledger.inject(1.0);
    }
    if !values[n].is_finite() {
        let scale = (n_min..=n).find(|&s| !values[s].is_finite()).unwrap_or(n);
        return Err(Error::NumericFault { tick: k, scale });
    }
    Ok(())
}

/// A run in progress: state, cumulative ledger and initial total energy.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    state: LatticeState,
    ledger: LedgerAccumulator,
    initial_total: f64,
}

impl Simulation {
    pub fn new(config: SimConfig, initial: LatticeState) -> Result<Self> {
        config.validate()?;
        let state = initial.fit_to(config.n_cap)?;
        let initial_total = state.total();
        Ok(Self {
            config,
            state,
            ledger: LedgerAccumulator::default(),
            initial_total,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &LatticeState {
        &self.state
    }

    pub fn into_state(self) -> LatticeState {
        self.state
    }

    pub fn ledger(&self) -> EnergyLedger {
        self.ledger.snapshot()
    }

    pub fn initial_total(&self) -> f64 {
        self.initial_total
    }

    /// `total + dissipated + truncated - injected - initial_total`.
    pub fn conservation_residual(&self) -> f64 {
        let l = self.ledger.snapshot();
        self.state.total() + l.dissipated + l.truncated - l.injected - self.initial_total
    }

    pub fn tick<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let k = self.state.tick;
        match self.config.regularization.dissipation {
            Dissipation::Deterministic { alpha } => {
                advance(&mut self.state.values, k, &self.config, &mut || alpha, &mut self.ledger)?
            }
            Dissipation::Noise { lo, hi } => advance(
                &mut self.state.values,
                k,
                &self.config,
                &mut || rng::uniform(rng, lo, hi),
                &mut self.ledger,
            )?,
        }
        self.state.tick += 1;
        Ok(())
    }

    /// Applies the `2^N` ticks of one unit time interval.
    pub fn step_unit<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let ticks = self.config.ticks_per_unit()?;
        if self.state.tick % ticks != 0 {
            return Err(Error::Domain("unit step must start at an integer time"));
        }
        for _ in 0..ticks {
            self.tick(rng)?;
        }
        record_residual(self.initial_total, &self.state.values, &self.ledger, 1);
        Ok(())
    }
}

/// Advances `state` by one tick and returns the ledger increment.
pub fn tick<R: RngCore + ?Sized>(
    state: &mut LatticeState,
    config: &SimConfig,
    rng: &mut R,
) -> Result<EnergyLedger> {
    config.validate()?;
    check_energies(&state.values)?;
    if state.values.len() <= config.viscous_scale() {
        state.values.resize(config.viscous_scale() + 1, 0.0);
    }
    let mut ledger = LedgerAccumulator::default();
    let k = state.tick;
    match config.regularization.dissipation {
        Dissipation::Deterministic { alpha } => {
            advance(&mut state.values, k, config, &mut || alpha, &mut ledger)?
        }
        Dissipation::Noise { lo, hi } => advance(
            &mut state.values,
            k,
            config,
            &mut || rng::uniform(rng, lo, hi),
            &mut ledger,
        )?,
    }
    state.tick += 1;
    Ok(ledger.snapshot())
}

/// Evolves a state at an integer time over one unit of time, i.e. evaluates
/// the flow map (or draws one sample of the flow kernel under noise).
pub fn step_unit_interval<R: RngCore + ?Sized>(
    a: &LatticeState,
    config: &SimConfig,
    rng: &mut R,
) -> Result<LatticeState> {
    let mut sim = Simulation::new(*config, a.clone())?;
    sim.state.tick = a.tick;
    sim.step_unit(rng)?;
    Ok(sim.into_state())
}

/// Deterministic flow map `a -> u(1)` at viscous scale `N` on a raw vector.
///
/// The result has `max(a.len(), N + 1)` components.
pub fn flow_map(transfer: &TransferSpec, viscous_scale: usize, alpha: f64, a: &[f64]) -> Result<Vec<f64>> {
    let mut values = a.to_vec();
    flow_map_in_place(transfer, viscous_scale, alpha, &mut values)?;
    Ok(values)
}

pub(crate) fn flow_map_in_place(
    transfer: &TransferSpec,
    viscous_scale: usize,
    alpha: f64,
    values: &mut Vec<f64>,
) -> Result<()> {
    let config = SimConfig::deterministic(*transfer, viscous_scale, alpha);
    config.validate()?;
    check_energies(values)?;
    if values.len() <= viscous_scale {
        values.resize(viscous_scale + 1, 0.0);
    }
    let ticks = config.ticks_per_unit()?;
    let initial_total = values.iter().copied().collect::<CompensatedSum>().value();
    let mut ledger = LedgerAccumulator::default();
    for k in 0..ticks {
        advance(values, k, &config, &mut || alpha, &mut ledger)?;
    }
    record_residual(initial_total, values, &ledger, 1);
    Ok(())
}

/// One noisy unit-time evolution on a raw vector, drawing `alpha_t` from `rng`.
pub fn kernel_sample<R: RngCore + ?Sized>(
    config: &SimConfig,
    a: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_energies(a)?;
    let mut values = a.to_vec();
    if values.len() <= config.viscous_scale() {
        values.resize(config.viscous_scale() + 1, 0.0);
    }
    let ticks = config.ticks_per_unit()?;
    let initial_total = values.iter().copied().collect::<CompensatedSum>().value();
    let mut ledger = LedgerAccumulator::default();
    match config.regularization.dissipation {
        Dissipation::Deterministic { alpha } => {
            for k in 0..ticks {
                advance(&mut values, k, config, &mut || alpha, &mut ledger)?;
            }
        }
        Dissipation::Noise { lo, hi } => {
            for k in 0..ticks {
                advance(&mut values, k, config, &mut || rng::uniform(rng, lo, hi), &mut ledger)?;
            }
        }
    }
    record_residual(initial_total, &values, &ledger, 1);
    Ok(values)
}

/// What to record for a probed scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeStatistic {
    /// Every value at the scale's native update times, `m = 0..=t_end 2^n`.
    Raw,
    /// Sums of `u^q`, `q = 1..=max_order`, over native times `t` with
    /// `from_time <= t < t_end`.
    PowerSums { max_order: u32, from_time: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub scale: usize,
    pub statistic: ProbeStatistic,
}

impl Probe {
    pub const fn raw(scale: usize) -> Self {
        Self { scale, statistic: ProbeStatistic::Raw }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeRecord {
    Raw { scale: usize, values: Vec<f64> },
    PowerSums { scale: usize, sums: Vec<f64>, count: u64 },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<ProbeRecord>,
    pub final_state: LatticeState,
    pub ledger: EnergyLedger,
    pub initial_total: f64,
    /// Ledger and total energy at `mark_time`, when one was requested.
    pub mark: Option<(EnergyLedger, f64)>,
}

enum Accumulator {
    Raw(Vec<f64>),
    Powers { sums: Vec<CompensatedSum>, count: u64, from_tick: u64 },
}

/// Runs `t_end` unit times and records the probed scales at their native
/// update times without storing the full field.
pub fn simulate<R: RngCore + ?Sized>(
    a: &LatticeState,
    config: &SimConfig,
    t_end: u64,
    probes: &[Probe],
    mark_time: Option<u64>,
    rng: &mut R,
) -> Result<Trajectory> {
    if t_end < 1 {
        return Err(Error::Domain("simulate needs t_end >= 1"));
    }
    let mut sim = Simulation::new(*config, a.clone())?;
    let n = config.viscous_scale();
    let ticks = config.ticks_per_unit()?;
    let total_ticks = t_end
        .checked_mul(ticks)
        .ok_or(Error::Domain("run too long for the tick counter"))?;
    let mut accs = Vec::with_capacity(probes.len());
    for probe in probes {
        if probe.scale > n {
            return Err(Error::Domain("probed scale lies beyond the viscous scale"));
        }
        accs.push(match probe.statistic {
            ProbeStatistic::Raw => {
                let expected = (t_end << probe.scale) as usize + 1;
                Accumulator::Raw(Vec::with_capacity(expected.min(1 << 24)))
            }
            ProbeStatistic::PowerSums { max_order, from_time } => {
                if from_time >= t_end || max_order == 0 {
                    return Err(Error::Domain("power-sum window must be non-empty"));
                }
                Accumulator::Powers {
                    sums: vec![CompensatedSum::new(); max_order as usize],
                    count: 0,
                    from_tick: from_time * ticks,
                }
            }
        });
    }
    let mut mark = None;
    for k in 0..total_ticks {
        if mark_time.map(|t| t * ticks) == Some(k) {
            mark = Some((sim.ledger(), sim.state.total()));
        }
        let n_min = due_scales(k, n);
        for (probe, acc) in probes.iter().zip(accs.iter_mut()) {
            if probe.scale < n_min {
                continue;
            }
            let u = sim.state.values[probe.scale];
            match acc {
                Accumulator::Raw(values) => values.push(u),
                Accumulator::Powers { sums, count, from_tick } => {
                    if k >= *from_tick {
                        let mut power = 1.0;
                        for s in sums.iter_mut() {
                            power *= u;
                            s.add(power);
                        }
                        *count += 1;
                    }
                }
            }
        }
        sim.tick(rng)?;
    }
    if mark_time == Some(t_end) {
        mark = Some((sim.ledger(), sim.state.total()));
    }
    record_residual(sim.initial_total, &sim.state.values, &sim.ledger, t_end);
    let records = probes
        .iter()
        .zip(accs)
        .map(|(probe, acc)| match acc {
            Accumulator::Raw(mut values) => {
                values.push(sim.state.values[probe.scale]);
                ProbeRecord::Raw { scale: probe.scale, values }
            }
            Accumulator::Powers { sums, count, .. } => ProbeRecord::PowerSums {
                scale: probe.scale,
                sums: sums.iter().map(CompensatedSum::value).collect(),
                count,
            },
        })
        .collect();
    Ok(Trajectory {
        records,
        ledger: sim.ledger(),
        initial_total: sim.initial_total,
        final_state: sim.into_state(),
        mark,
    })
}

/// Decay exponent `h` of the tail of `a`, from a least-squares fit of
/// `log a_n` against `log tau_n` over the positive components `n >= 1`.
pub fn decay_exponent(a: &[f64]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &v)| v > 0.0)
        .map(|(n, &v)| (-(n as f64) * core::f64::consts::LN_2, libm::log(v)))
        .unzip();
    crate::stats::linear_fit(&xs, &ys).ok().map(|fit| fit.slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Never;

    impl RngCore for Never {
        fn next_u32(&mut self) -> u32 {
            unreachable!("deterministic run drew a random number")
        }
        fn next_u64(&mut self) -> u64 {
            unreachable!("deterministic run drew a random number")
        }
        fn fill_bytes(&mut self, _: &mut [u8]) {
            unreachable!("deterministic run drew a random number")
        }
    }

    const FA5: TransferSpec = TransferSpec::fa(5.0);

    #[test]
    fn transfer_fraction_examples() {
        assert_eq!(transfer_fraction(&FA5, 1.0, 0.0).unwrap(), 0.2);
        let want = 0.3 - 0.1 * libm::cos(5.0);
        assert!((transfer_fraction(&FA5, 0.0, 1.0).unwrap() - want).abs() < 1e-15);
        let fb = TransferSpec::fb(10.3);
        let want = 0.4 - 0.3 * libm::cos(5.15);
        assert!((transfer_fraction(&fb, 3.0, 0.0).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn transfer_fraction_rejects_bad_input() {
        assert!(transfer_fraction(&FA5, -1.0, 1.0).is_err());
        assert!(transfer_fraction(&FA5, 1.0, f64::NAN).is_err());
        assert!(transfer_fraction(&FA5, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn dissipative_branch_is_continuous() {
        for spec in [TransferSpec::fa(6.3), TransferSpec::fb(10.7)] {
            let far = spec.eval(1.0, 1e-6);
            assert!((far - spec.eval(1.0, 0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn due_scale_examples() {
        assert_eq!(due_scales(0, 3), 0);
        assert_eq!(due_scales(4, 3), 1);
        assert_eq!(due_scales(5, 3), 3);
        assert_eq!(due_scales(8, 3), 0);
        assert_eq!(due_scales(6, 3), 2);
    }

    #[test]
    fn due_scales_match_turnover_multiples() {
        let n = 5;
        for k in 0..200u64 {
            let n_min = due_scales(k, n);
            for s in 0..=n {
                let period = 1u64 << (n - s);
                assert_eq!(k % period == 0, s >= n_min, "k={k} s={s}");
            }
        }
    }

    #[test]
    fn single_tick_n1() {
        let (a0, a1, alpha) = (0.7, 0.3, 0.25);
        let config = SimConfig::deterministic(FA5, 1, alpha);
        let mut state = LatticeState::new(vec![a0, a1]).unwrap();
        let delta = tick(&mut state, &config, &mut Never).unwrap();
        let f = FA5.eval(a0, a1);
        let want = [(1.0 - f) * a0, (1.0 - alpha) * a1 + f * a0];
        for (got, want) in state.values().iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((delta.dissipated - alpha * a1).abs() < 1e-16);
        assert_eq!(state.tick_index(), 1);
    }

    #[test]
    fn zero_state_stays_zero() {
        let config = SimConfig::deterministic(TransferSpec::fb(10.3), 4, 0.5);
        let mut state = LatticeState::zeros(5);
        for _ in 0..16 {
            let d = tick(&mut state, &config, &mut Never).unwrap();
            assert_eq!(d, EnergyLedger::default());
        }
        assert!(state.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn viscous_scale_zero() {
        let config = SimConfig::deterministic(FA5, 0, 0.25);
        let mut state = LatticeState::new(vec![1.0]).unwrap();
        let d = tick(&mut state, &config, &mut Never).unwrap();
        assert_eq!(state.values(), &[0.75]);
        assert_eq!(d.dissipated, 0.25);
        let u = flow_map(&FA5, 0, 0.25, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(u, vec![0.75, 0.0, 0.0]);
    }

    #[test]
    fn two_tick_unit_step() {
        let (a0, a1, alpha) = (0.9, 0.4, 0.75);
        let u = flow_map(&FA5, 1, alpha, &[a0, a1, 0.0]).unwrap();
        let f = FA5.eval(a0, a1);
        let want = [
            (1.0 - f) * a0,
            (1.0 - alpha) * ((1.0 - alpha) * a1 + f * a0),
            0.0,
        ];
        for (got, want) in u.iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn components_beyond_viscous_scale_are_truncated() {
        let config = SimConfig::deterministic(FA5, 1, 0.25).with_n_cap(3);
        let state = LatticeState::new(vec![1.0, 0.5, 0.25, 0.125]).unwrap();
        let mut sim = Simulation::new(config, state).unwrap();
        sim.step_unit(&mut Never).unwrap();
        assert_eq!(&sim.state().values()[2..], &[0.0, 0.0]);
        assert_eq!(sim.ledger().truncated, 0.375);
        assert!(sim.conservation_residual().abs() < 1e-15);
    }

    #[test]
    fn state_beyond_cap_is_rejected() {
        let config = SimConfig::deterministic(FA5, 1, 0.25);
        let state = LatticeState::new(vec![1.0, 0.5, 0.25]).unwrap();
        assert!(Simulation::new(config, state).is_err());
        assert!(LatticeState::new(vec![1.0, -0.1]).is_err());
        assert!(SimConfig::deterministic(FA5, 2, 0.25).with_n_cap(1).validate().is_err());
        assert!(SimConfig::deterministic(FA5, 2, 1.5).validate().is_err());
        let bad_noise = SimConfig::new(FA5, RegularizationSpec::noise(2, 0.5, 0.4));
        assert!(bad_noise.validate().is_err());
    }

    #[test]
    fn unit_step_requires_integer_time() {
        let config = SimConfig::deterministic(FA5, 2, 0.25);
        let mut state = LatticeState::new(crate::staircase_initial(3)).unwrap();
        tick(&mut state, &config, &mut Never).unwrap();
        assert!(step_unit_interval(&state, &config, &mut Never).is_err());
    }

    #[test]
    fn forced_affine_recursion_at_scale_zero() {
        // With N = 0 the only fraction is alpha, so u0(t+1) = (1 - alpha) u0(t) + 1.
        let alpha = 0.25;
        let config = SimConfig::deterministic(FA5, 0, alpha).with_forcing(true);
        let a = LatticeState::new(vec![2.0]).unwrap();
        let traj = simulate(&a, &config, 10, &[Probe::raw(0)], None, &mut Never).unwrap();
        let ProbeRecord::Raw { values, .. } = &traj.records[0] else { panic!() };
        let mut u = 2.0;
        assert_eq!(values.len(), 11);
        for &got in values {
            assert!((got - u).abs() < 1e-14);
            u = (1.0 - alpha) * u + 1.0;
        }
        assert_eq!(traj.ledger.injected, 10.0);
    }

    #[test]
    fn raw_probe_counts_native_times() {
        let config = SimConfig::deterministic(TransferSpec::fb(10.3), 4, 0.25);
        let a = LatticeState::new(crate::staircase_initial(5)).unwrap();
        let probes = [Probe::raw(0), Probe::raw(2), Probe::raw(4)];
        let traj = simulate(&a, &config, 3, &probes, None, &mut Never).unwrap();
        for (rec, scale) in traj.records.iter().zip([0usize, 2, 4]) {
            let ProbeRecord::Raw { values, .. } = rec else { panic!() };
            assert_eq!(values.len(), (3 << scale) + 1);
            assert_eq!(values[0], a.values()[scale]);
        }
        assert!(simulate(&a, &config, 0, &probes, None, &mut Never).is_err());
        assert!(simulate(&a, &config, 1, &[Probe::raw(5)], None, &mut Never).is_err());
    }

    #[test]
    fn noise_draws_one_per_tick() {
        struct Counter(u64);
        impl RngCore for Counter {
            fn next_u32(&mut self) -> u32 {
                self.next_u64() as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0 += 1;
                0
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {}
        }
        let config = SimConfig::new(TransferSpec::fb(10.3), RegularizationSpec::noise(3, 0.4, 0.5));
        let mut rng = Counter(0);
        kernel_sample(&config, &crate::staircase_initial(4), &mut rng).unwrap();
        assert_eq!(rng.0, 8);
    }

    #[test]
    fn decay_exponent_of_power_law() {
        let a: Vec<f64> = (0..12).map(|n| libm::pow(0.5, 0.5 * n as f64)).collect();
        assert!((decay_exponent(&a).unwrap() - 0.5).abs() < 1e-12);
        assert!(decay_exponent(&[1.0, 0.0]).is_none());
    }
}
