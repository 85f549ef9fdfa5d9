//! Flow kernels under viscous-scale noise, estimated by Monte Carlo.
//!
//! A kernel `Phi^(N)(.|a)` is represented only through samples of `u(1)`.
//! Sample `i` of a set is drawn from the stream `(seed, i)`, so a set is the
//! same whichever worker produced each sample.

use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::algebra;
use crate::error::{Error, Result};
use crate::lattice::{self, Dissipation, SimConfig, TransferSpec};
use crate::rng::{self, SLOT_KERNEL, SLOT_RG_INNER, SLOT_RG_OUTER};
use crate::stats::{self, CompensatedSum};

pub const DEFAULT_BINS: usize = 128;

/// Everything needed to regenerate a sample set besides the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub viscous_scale: usize,
    pub dissipation: Dissipation,
    pub transfer: TransferSpec,
    pub initial: String,
}

/// Columns of `u_n(1)` for selected scales `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub components: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
    pub seed: u64,
    pub provenance: Provenance,
}

impl SampleSet {
    /// Builds a set from per-sample rows ordered by sample index.
    pub fn from_rows(
        components: Vec<usize>,
        rows: &[Vec<f64>],
        seed: u64,
        provenance: Provenance,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySamples);
        }
        let columns = components
            .iter()
            .map(|&n| rows.iter().map(|r| r.get(n).copied().unwrap_or(0.0)).collect())
            .collect();
        Ok(Self { components, columns, seed, provenance })
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, component: usize) -> Option<&[f64]> {
        self.components
            .iter()
            .position(|&n| n == component)
            .map(|i| self.columns[i].as_slice())
    }
}

/// Sample `index` of the kernel: one noisy unit-time run from `a`.
pub fn kernel_sample_at(config: &SimConfig, a: &[f64], seed: u64, index: u64) -> Result<Vec<f64>> {
    let mut r = rng::stream(seed, index, SLOT_KERNEL);
    lattice::kernel_sample(config, a, &mut r)
}

/// `samples` independent runs of the unit-time evolution from `a`.
pub fn sample_kernel(
    config: &SimConfig,
    a: &[f64],
    components: &[usize],
    samples: usize,
    seed: u64,
    initial: &str,
) -> Result<SampleSet> {
    if samples == 0 {
        return Err(Error::EmptySamples);
    }
    let rows = (0..samples as u64)
        .map(|i| kernel_sample_at(config, a, seed, i))
        .collect::<Result<Vec<_>>>()?;
    SampleSet::from_rows(components.to_vec(), &rows, seed, provenance(config, initial))
}

pub fn provenance(config: &SimConfig, initial: &str) -> Provenance {
    Provenance {
        viscous_scale: config.viscous_scale(),
        dissipation: config.regularization.dissipation,
        transfer: config.transfer,
        initial: String::from(initial),
    }
}

/// A source of independent draws from `Phi(.|a)`.
pub trait KernelSampler {
    /// One draw, with the same length as `a`.
    fn draw(&self, a: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// The noisy simulator at a fixed viscous scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseKernel {
    pub config: SimConfig,
}

impl KernelSampler for NoiseKernel {
    fn draw(&self, a: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut u = lattice::kernel_sample(&self.config, a, rng)?;
        u.resize(a.len(), 0.0);
        Ok(u)
    }
}

/// Point mass at the deterministic flow map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiracKernel {
    pub transfer: TransferSpec,
    pub viscous_scale: usize,
    pub alpha: f64,
}

impl KernelSampler for DiracKernel {
    fn draw(&self, a: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut u = lattice::flow_map(&self.transfer, self.viscous_scale, self.alpha, a)?;
        u.resize(a.len(), 0.0);
        Ok(u)
    }
}

/// One draw of `R[Phi](a)`: `u1 ~ Phi(.|sigma_+ a)` from `inner`,
/// `u2 ~ Phi(.|xi(a) + u1)` from `outer`, result `pi0 a - xi(a) + sigma_- u2`.
pub fn stochastic_rg_apply<K: KernelSampler + ?Sized>(
    sampler: &K,
    a: &[f64],
    spec: &TransferSpec,
    inner: &mut dyn RngCore,
    outer: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let mut first = true;
    algebra::rg_apply_with(
        |x| {
            let rng: &mut dyn RngCore = if first { &mut *inner } else { &mut *outer };
            first = false;
            sampler.draw(x, rng)
        },
        a,
        spec,
    )
}

/// Sample `index` of `R[Phi](a)`, with the two inner draws on disjoint streams.
pub fn stochastic_rg_sample<K: KernelSampler + ?Sized>(
    sampler: &K,
    a: &[f64],
    spec: &TransferSpec,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let mut inner = rng::stream(seed, index, SLOT_RG_INNER);
    let mut outer = rng::stream(seed, index, SLOT_RG_OUTER);
    stochastic_rg_apply(sampler, a, spec, &mut inner, &mut outer)
}

/// Uniform bins on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinGrid {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain("bin grid needs lo < hi and at least one bin"));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Spans the pooled range of all columns. A single repeated value gets a
    /// narrow interval centred on it.
    pub fn pooled(columns: &[&[f64]], bins: usize) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in columns.iter().flat_map(|c| c.iter()) {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if !lo.is_finite() {
            return Err(Error::EmptySamples);
        }
        if lo == hi {
            let half = 1e-9 * libm::fabs(lo).max(1.0);
            return Self::new(lo - half, hi + half, bins);
        }
        Self::new(lo, hi, bins)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn left(&self, i: usize) -> f64 {
        self.lo + self.width() * i as f64
    }

    pub fn right(&self, i: usize) -> f64 {
        if i + 1 == self.bins {
            self.hi
        } else {
            self.left(i + 1)
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.left(i) + self.right(i))
    }

    /// Bin of `x`; the right edge belongs to the last bin.
    pub fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let i = ((x - self.lo) / self.width()) as usize;
        Some(i.min(self.bins - 1))
    }

    /// Smallest grid with the same bin width and alignment covering `[lo, hi]`.
    fn extended_to(&self, lo: f64, hi: f64) -> Self {
        let w = self.width();
        let below = if lo < self.lo { libm::ceil((self.lo - lo) / w) as usize } else { 0 };
        let above = if hi > self.hi { libm::ceil((hi - self.hi) / w) as usize } else { 0 };
        Self {
            lo: self.lo - below as f64 * w,
            hi: self.hi + above as f64 * w,
            bins: self.bins + below + above,
        }
    }
}

/// Normalized histogram density.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPdf {
    pub grid: BinGrid,
    pub density: Vec<f64>,
    pub count: usize,
    /// Set when samples fell outside the requested grid and it was widened.
    pub extended: bool,
}

impl HistogramPdf {
    pub fn integral(&self) -> f64 {
        self.density.iter().map(|d| d * self.grid.width()).collect::<CompensatedSum>().value()
    }
}

pub fn histogram(column: &[f64], grid: &BinGrid) -> Result<HistogramPdf> {
    if column.is_empty() {
        return Err(Error::EmptySamples);
    }
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let extended = lo < grid.lo || hi > grid.hi;
    let grid = if extended { grid.extended_to(lo, hi) } else { *grid };
    let mut counts = alloc::vec![0u64; grid.bins];
    for &x in column {
        let i = grid.index(x).ok_or(Error::Domain("non-finite sample"))?;
        counts[i] += 1;
    }
    let norm = column.len() as f64 * grid.width();
    let density = counts.iter().map(|&c| c as f64 / norm).collect();
    Ok(HistogramPdf { grid, density, count: column.len(), extended })
}

pub fn marginal_pdf(samples: &SampleSet, component: usize, grid: &BinGrid) -> Result<HistogramPdf> {
    let column = samples
        .column(component)
        .ok_or(Error::Domain("component not present in the sample set"))?;
    histogram(column, grid)
}

/// Bin-wise density difference on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedHistogram {
    pub grid: BinGrid,
    pub values: Vec<f64>,
    /// Smaller sample count of the two inputs.
    pub count: usize,
}

impl SignedHistogram {
    pub fn integral(&self) -> f64 {
        self.values.iter().map(|d| d * self.grid.width()).collect::<CompensatedSum>().value()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|d| d * d * self.grid.width()).sum()
    }
}

/// `pdf_hi - pdf_lo`.
pub fn delta_pdf(pdf_hi: &HistogramPdf, pdf_lo: &HistogramPdf) -> Result<SignedHistogram> {
    if pdf_hi.grid != pdf_lo.grid {
        return Err(Error::GridMismatch);
    }
    let values = pdf_hi.density.iter().zip(&pdf_lo.density).map(|(h, l)| h - l).collect();
    Ok(SignedHistogram { grid: pdf_hi.grid, values, count: pdf_hi.count.min(pdf_lo.count) })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_x - F_y|`.
pub fn ks_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (m, n) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let t = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max(libm::fabs(i as f64 / m - j as f64 / n));
    }
    Ok(d)
}

/// Asymptotic two-sample critical value at significance `level`.
pub fn ks_critical(level: f64, m: usize, n: usize) -> f64 {
    let c = libm::sqrt(-libm::log(level / 2.0) / 2.0);
    c * libm::sqrt((m + n) as f64 / (m as f64 * n as f64))
}

/// Mean and unbiased standard deviation with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std_dev: f64,
    pub mean_stderr: f64,
    pub std_dev_stderr: f64,
    pub count: usize,
}

pub fn kernel_moments(column: &[f64]) -> Result<Moments> {
    let count = column.len();
    if count == 0 {
        return Err(Error::EmptySamples);
    }
    let m = count as f64;
    let mean = column.iter().copied().collect::<CompensatedSum>().value() / m;
    let mut s2 = CompensatedSum::new();
    let mut s4 = CompensatedSum::new();
    for &x in column {
        let d = (x - mean) * (x - mean);
        s2.add(d);
        s4.add(d * d);
    }
    if count == 1 {
        return Ok(Moments { mean, std_dev: 0.0, mean_stderr: 0.0, std_dev_stderr: 0.0, count });
    }
    let var = s2.value() / (m - 1.0);
    let std_dev = libm::sqrt(var);
    let central4 = s4.value() / m;
    // Delta method on the sample variance, valid for any law with a fourth moment.
    let var_of_var = ((central4 - var * var * (m - 3.0) / (m - 1.0)) / m).max(0.0);
    let std_dev_stderr = if std_dev > 0.0 { libm::sqrt(var_of_var) / (2.0 * std_dev) } else { 0.0 };
    Ok(Moments { mean, std_dev, mean_stderr: std_dev / libm::sqrt(m), std_dev_stderr, count })
}

/// Result of the signed-histogram rescaling fit.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticRho {
    pub rho: f64,
    /// [`relative_rescaling_objective`] at `rho`.
    pub objective: f64,
    /// [`rescaling_objective`] at `rho`.
    pub raw_objective: f64,
    /// Minimum within `1e-3` of an end of the search interval.
    pub at_boundary: bool,
    /// Mean of the rescaled curves at `rho`, per family.
    pub eigenmode: Vec<Vec<f64>>,
}

pub const RHO_SEARCH: (f64, f64) = (-1.0, -0.05);
const RHO_TOLERANCE: f64 = 1e-3;

/// `sum_k |dp^(N_k) / rho^N_k - dp^(N_k + 1) / rho^(N_k + 1)|^2` over all families.
pub fn rescaling_objective(families: &[Vec<SignedHistogram>], first_scale: usize, rho: f64) -> f64 {
    rescaling_sums(families, first_scale, rho).0
}

/// [`rescaling_objective`] divided by the summed squared norms of the
/// rescaled curves. The raw form grows like `|rho|^(-2N)`, so on noisy data
/// its minimum drifts to `|rho| -> 1`; the ratio does not depend on the
/// overall scale and still vanishes on exactly geometric families.
pub fn relative_rescaling_objective(families: &[Vec<SignedHistogram>], first_scale: usize, rho: f64) -> f64 {
    let (mismatch, norms) = rescaling_sums(families, first_scale, rho);
    if norms > 0.0 {
        mismatch / norms
    } else {
        0.0
    }
}

fn rescaling_sums(families: &[Vec<SignedHistogram>], first_scale: usize, rho: f64) -> (f64, f64) {
    let mut mismatch = 0.0;
    let mut norms = 0.0;
    for family in families {
        for (k, w) in family.windows(2).enumerate() {
            let n = (first_scale + k) as f64;
            let s0 = libm::pow(rho, -n);
            let s1 = s0 / rho;
            let width = w[0].grid.width();
            for (a, b) in w[0].values.iter().zip(&w[1].values) {
                let (x, y) = (a * s0, b * s1);
                mismatch += (x - y) * (x - y) * width;
                norms += (x * x + y * y) * width;
            }
        }
    }
    (mismatch, norms)
}

/// Minimizes [`relative_rescaling_objective`] over `(-1, -0.05]`: a coarse scan picks
/// the bracket, golden-section refines it.
///
/// `families[c][k]` is the signed histogram at `N = first_scale + k`.
pub fn estimate_rho_stochastic(
    families: &[Vec<SignedHistogram>],
    first_scale: usize,
) -> Result<StochasticRho> {
    if families.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    for family in families {
        if family.len() < 3 {
            return Err(Error::InsufficientData { needed: 3, got: family.len() });
        }
        if family.windows(2).any(|w| w[0].grid != w[1].grid) {
            return Err(Error::GridMismatch);
        }
        if !family.iter().all(|h| h.values.iter().any(|&v| v != 0.0)) {
            return Err(Error::Domain("signed histograms without support"));
        }
    }
    let (lo, hi) = RHO_SEARCH;
    let f = |r: f64| relative_rescaling_objective(families, first_scale, r);
    let steps = 190;
    let grid = stats::linspace(lo + 1e-9, hi, steps);
    let best = (0..steps)
        .min_by(|&i, &j| f(grid[i]).total_cmp(&f(grid[j])))
        .expect("non-empty scan");
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(steps - 1)];
    let rho = stats::golden_section(f, a, b, RHO_TOLERANCE * 0.1);
    let at_boundary = rho - lo < RHO_TOLERANCE || hi - rho < RHO_TOLERANCE;
    let eigenmode = families
        .iter()
        .map(|family| {
            let bins = family[0].values.len();
            (0..bins)
                .map(|i| {
                    family
                        .iter()
                        .enumerate()
                        .map(|(k, h)| h.values[i] * libm::pow(rho, -((first_scale + k) as f64)))
                        .sum::<f64>()
                        / family.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(StochasticRho {
        rho,
        objective: f(rho),
        raw_objective: rescaling_objective(families, first_scale, rho),
        at_boundary,
        eigenmode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodClass {
    FixedPoint,
    Period2,
    Undecided,
}

impl PeriodClass {
    pub fn name(self) -> &'static str {
        match self {
            PeriodClass::FixedPoint => "fixed_point",
            PeriodClass::Period2 => "period2",
            PeriodClass::Undecided => "undecided",
        }
    }
}

/// Significance level of the per-pair KS critical value.
pub const KS_LEVEL: f64 = 0.01;
/// Cross-parity distances must exceed this multiple of the critical value.
pub const SEPARATION_FACTOR: f64 = 5.0;

/// KS distances between the per-`N` marginals of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub component: usize,
    pub scales: Vec<usize>,
    pub distances: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn compute(sets: &[(usize, &SampleSet)], component: usize) -> Result<Self> {
        let columns = sets
            .iter()
            .map(|(_, s)| s.column(component).ok_or(Error::Domain("component not sampled")))
            .collect::<Result<Vec<_>>>()?;
        let k = sets.len();
        let mut distances = alloc::vec![alloc::vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let d = ks_distance(columns[i], columns[j])?;
                distances[i][j] = d;
                distances[j][i] = d;
            }
        }
        Ok(Self { component, scales: sets.iter().map(|(n, _)| *n).collect(), distances })
    }

    fn pairs(&self, same_parity: bool) -> impl Iterator<Item = f64> + '_ {
        let k = self.scales.len();
        (0..k).flat_map(move |i| (i + 1..k).map(move |j| (i, j))).filter_map(move |(i, j)| {
            ((self.scales[i] % 2 == self.scales[j] % 2) == same_parity).then(|| self.distances[i][j])
        })
    }

    pub fn max_within_parity(&self) -> f64 {
        self.pairs(true).fold(0.0, f64::max)
    }

    pub fn min_cross_parity(&self) -> f64 {
        self.pairs(false).fold(f64::INFINITY, f64::min)
    }

    pub fn max_cross_parity(&self) -> f64 {
        self.pairs(false).fold(0.0, f64::max)
    }
}

/// Distances between marginals of two noise laws at every pair of scales.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapCheck {
    pub component: usize,
    /// Largest distance between `mu` at `N` and `mu~` at `N'` of opposite parity.
    pub max_opposite: f64,
    /// Smallest distance between `mu` at `N` and `mu~` at `N'` of equal parity.
    pub min_same: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Period2Report {
    pub class: PeriodClass,
    pub critical: f64,
    pub matrices: Vec<DistanceMatrix>,
    pub swap: Option<Vec<SwapCheck>>,
    /// `Some(true)` when the swap check ran and every component exchanged parities.
    pub swap_holds: Option<bool>,
}

/// Classifies a family of per-`N` kernels as a fixed point or a period-two
/// cycle from KS distances of their marginals. Distances count as sampling
/// noise up to the `KS_LEVEL` critical value and as separated beyond
/// `SEPARATION_FACTOR` times it. With `swapped` (the same scales under a
/// second noise law), also checks that the parities are exchanged.
pub fn classify_period2(
    primary: &[(usize, &SampleSet)],
    swapped: Option<&[(usize, &SampleSet)]>,
    components: &[usize],
) -> Result<Period2Report> {
    if primary.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: primary.len() });
    }
    if primary.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(Error::Domain("period-two detection needs consecutive scales"));
    }
    let m = primary.iter().map(|(_, s)| s.len()).min().unwrap_or(0);
    let critical = ks_critical(KS_LEVEL, m, m);
    let matrices = components
        .iter()
        .map(|&c| DistanceMatrix::compute(primary, c))
        .collect::<Result<Vec<_>>>()?;

    let within_ok = matrices.iter().all(|d| d.max_within_parity() <= critical);
    let all_ok = within_ok && matrices.iter().all(|d| d.max_cross_parity() <= critical);
    let separated = matrices.iter().all(|d| d.min_cross_parity() > SEPARATION_FACTOR * critical);
    let class = if all_ok {
        PeriodClass::FixedPoint
    } else if within_ok && separated {
        PeriodClass::Period2
    } else {
        PeriodClass::Undecided
    };

    let swap = match swapped {
        None => None,
        Some(other) => {
            let mut checks = Vec::with_capacity(components.len());
            for &c in components {
                let mut max_opposite: f64 = 0.0;
                let mut min_same = f64::INFINITY;
                for (n, s) in primary {
                    let x = s.column(c).ok_or(Error::Domain("component not sampled"))?;
                    for (n2, s2) in other {
                        let y = s2.column(c).ok_or(Error::Domain("component not sampled"))?;
                        let d = ks_distance(x, y)?;
                        if n % 2 == n2 % 2 {
                            min_same = min_same.min(d);
                        } else {
                            max_opposite = max_opposite.max(d);
                        }
                    }
                }
                checks.push(SwapCheck { component: c, max_opposite, min_same });
            }
            Some(checks)
        }
    };
    let swap_holds = swap.as_ref().map(|checks| {
        checks
            .iter()
            .all(|s| s.max_opposite <= critical && s.min_same > SEPARATION_FACTOR * critical)
    });
    Ok(Period2Report { class, critical, matrices, swap, swap_holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::RegularizationSpec;
    use alloc::vec;

    fn prov() -> Provenance {
        Provenance {
            viscous_scale: 0,
            dissipation: Dissipation::MU,
            transfer: TransferSpec::fb(10.3),
            initial: String::from("synthetic"),
        }
    }

    fn set(values: Vec<f64>) -> SampleSet {
        SampleSet { components: vec![0], columns: vec![values], seed: 0, provenance: prov() }
    }

    #[test]
    fn ks_trivial_cases() {
        let x = [0.1, 0.2, 0.3];
        assert_eq!(ks_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(ks_distance(&x, &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(ks_distance(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]).unwrap(), 1.0 / 3.0);
        assert!(ks_distance(&[], &x).is_err());
    }

    #[test]
    fn ks_critical_coefficient() {
        let c = ks_critical(0.01, 1, 1) / libm::sqrt(2.0);
        assert!((c - 1.6276).abs() < 1e-4);
    }

    #[test]
    fn repeated_value_fills_one_bin() {
        let col = [0.3; 10];
        let grid = BinGrid::pooled(&[&col], 16).unwrap();
        let pdf = histogram(&col, &grid).unwrap();
        assert_eq!(pdf.density.iter().filter(|&&d| d > 0.0).count(), 1);
        assert!((pdf.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_samples_extend_the_grid() {
        let grid = BinGrid::new(0.0, 1.0, 10).unwrap();
        let pdf = histogram(&[-0.05, 0.5, 1.25], &grid).unwrap();
        assert!(pdf.extended);
        assert_eq!(pdf.grid.bins, 14);
        assert!((pdf.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_on_mismatched_grids_fails() {
        let g1 = BinGrid::new(0.0, 1.0, 4).unwrap();
        let g2 = BinGrid::new(0.0, 1.0, 5).unwrap();
        let a = histogram(&[0.5], &g1).unwrap();
        let b = histogram(&[0.5], &g2).unwrap();
        assert_eq!(delta_pdf(&a, &b), Err(Error::GridMismatch));
        let z = delta_pdf(&a, &a).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_column_moments() {
        let m = kernel_moments(&[2.5; 7]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.std_dev, 0.0);
        assert!(kernel_moments(&[]).is_err());
    }

    #[test]
    fn noise_floor_does_not_pull_rho_to_the_boundary() {
        let grid = BinGrid::new(0.0, 1.0, 64).unwrap();
        let family: Vec<SignedHistogram> = (0..3)
            .map(|k| SignedHistogram {
                grid,
                values: (0..64)
                    .map(|i| {
                        let signal = libm::sin(i as f64 * 0.15) * libm::pow(-0.6, (13 + k) as f64);
                        signal + 2e-4 * libm::cos(i as f64 * 1.7 + k as f64 * 2.3)
                    })
                    .collect(),
                count: 1,
            })
            .collect();
        let families = [family];
        let est = estimate_rho_stochastic(&families, 13).unwrap();
        assert!((est.rho + 0.6).abs() < 0.1, "{}", est.rho);
        assert!(!est.at_boundary);
        let raw = |r| rescaling_objective(&families, 13, r);
        assert!(raw(-0.999) < raw(est.rho));
    }

    #[test]
    fn geometric_signed_histograms_give_rho() {
        let grid = BinGrid::new(0.0, 1.0, 32).unwrap();
        let g: Vec<f64> = (0..32).map(|i| libm::sin(i as f64 * 0.2)).collect();
        let family: Vec<SignedHistogram> = (0..4)
            .map(|k| SignedHistogram {
                grid,
                values: g.iter().map(|v| v * libm::pow(-0.6, (5 + k) as f64)).collect(),
                count: 1,
            })
            .collect();
        let est = estimate_rho_stochastic(&[family], 5).unwrap();
        assert!((est.rho + 0.6).abs() < 1e-3, "{}", est.rho);
        assert!(!est.at_boundary);
        for (m, v) in est.eigenmode[0].iter().zip(&g) {
            assert!((m - v).abs() < 1e-2);
        }
    }

    #[test]
    fn alternating_distributions_are_period_two() {
        let even: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let odd: Vec<f64> = even.iter().map(|x| x + 2.0).collect();
        let sets: Vec<SampleSet> =
            (0..4).map(|n| set(if n % 2 == 0 { even.clone() } else { odd.clone() })).collect();
        let swapped: Vec<SampleSet> =
            (0..4).map(|n| set(if n % 2 == 1 { even.clone() } else { odd.clone() })).collect();
        let p: Vec<(usize, &SampleSet)> = sets.iter().enumerate().map(|(n, s)| (n + 10, s)).collect();
        let q: Vec<(usize, &SampleSet)> = swapped.iter().enumerate().map(|(n, s)| (n + 10, s)).collect();
        let report = classify_period2(&p, Some(&q), &[0]).unwrap();
        assert_eq!(report.class, PeriodClass::Period2);
        assert_eq!(report.swap_holds, Some(true));

        let fixed: Vec<(usize, &SampleSet)> = (0..4).map(|n| (n + 10, &sets[0])).collect();
        assert_eq!(classify_period2(&fixed, None, &[0]).unwrap().class, PeriodClass::FixedPoint);
    }

    #[test]
    fn degenerate_noise_matches_flow_map() {
        let spec = TransferSpec::fb(10.3);
        let a = crate::staircase_initial(6);
        let config = SimConfig::new(spec, RegularizationSpec::noise(5, 0.45, 0.45));
        let det = lattice::flow_map(&spec, 5, 0.45, &a).unwrap();
        let s = sample_kernel(&config, &a, &[0, 1, 2, 3, 4, 5], 3, 9, "staircase").unwrap();
        for (n, col) in s.columns.iter().enumerate() {
            assert!(col.iter().all(|&x| x == det[n]));
        }
    }

    #[test]
    fn dirac_composition_is_the_next_simulator() {
        let spec = TransferSpec::fb(10.3);
        let mut a = crate::staircase_initial(6);
        a.resize(8, 0.0);
        let k = DiracKernel { transfer: spec, viscous_scale: 5, alpha: 0.3 };
        let got = stochastic_rg_sample(&k, &a, &spec, 1, 0).unwrap();
        let mut want = lattice::flow_map(&spec, 6, 0.3, &a).unwrap();
        want.truncate(a.len());
        assert_eq!(got, want);
    }
}
