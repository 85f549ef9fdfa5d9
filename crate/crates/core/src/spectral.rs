//! Convergence analysis of the deterministic flow maps `phi^(N, alpha)`.
//!
//! Near the fixed point the Cauchy differences behave as
//! `phi^(N+1) - phi^(N) ~ c_alpha (rho - 1) rho^N psi`, so the ratio of one
//! component at consecutive `N` estimates `rho`, and rescaling the differences
//! recovers `psi` up to the regularization-dependent constant `c_alpha`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lattice::{self, TransferSpec};
use crate::stats::{self, LinearFit};

/// Default probe component for ratio estimates.
pub const DEFAULT_PROBE: usize = 4;

/// Probe magnitudes below this are rejected as degenerate.
pub const DEGENERATE_PROBE: f64 = 1e-30;

/// Growth curves stop at the first `N` with `|du| > SATURATION_FRACTION * |u|`.
pub const SATURATION_FRACTION: f64 = 1e-3;

/// Components compared in eigenvector collapse and `c_alpha` fits.
pub const EIGENVECTOR_COMPONENTS: usize = 9;

fn pad_to(mut v: Vec<f64>, len: usize) -> Vec<f64> {
    v.resize(len, 0.0);
    v
}

fn difference(hi: &[f64], lo: &[f64]) -> Vec<f64> {
    let len = hi.len().max(lo.len());
    (0..len)
        .map(|i| hi.get(i).copied().unwrap_or(0.0) - lo.get(i).copied().unwrap_or(0.0))
        .collect()
}

/// `phi^(N+1, alpha)(a) - phi^(N, alpha)(a)`.
pub fn cauchy_difference(
    transfer: &TransferSpec,
    viscous_scale: usize,
    alpha: f64,
    a: &[f64],
) -> Result<Vec<f64>> {
    let lo = lattice::flow_map(transfer, viscous_scale, alpha, a)?;
    let hi = lattice::flow_map(transfer, viscous_scale + 1, alpha, a)?;
    Ok(difference(&hi, &lo))
}

/// Flow-map values `phi^(N, alpha)(a)` for consecutive viscous scales.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    pub alpha: f64,
    pub first_scale: usize,
    /// `states[i]` is the value at `N = first_scale + i`, padded to a common length.
    pub states: Vec<Vec<f64>>,
}

impl FlowSeries {
    pub fn compute(
        transfer: &TransferSpec,
        alpha: f64,
        a: &[f64],
        first_scale: usize,
        last_scale: usize,
    ) -> Result<Self> {
        if last_scale < first_scale {
            return Err(Error::Domain("empty range of viscous scales"));
        }
        let len = a.len().max(last_scale + 1);
        let states = (first_scale..=last_scale)
            .map(|n| lattice::flow_map(transfer, n, alpha, a).map(|u| pad_to(u, len)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { alpha, first_scale, states })
    }

    pub fn last_scale(&self) -> usize {
        self.first_scale + self.states.len() - 1
    }

    pub fn state(&self, viscous_scale: usize) -> Option<&[f64]> {
        viscous_scale
            .checked_sub(self.first_scale)
            .and_then(|i| self.states.get(i))
            .map(Vec::as_slice)
    }

    /// Cauchy differences; entry `i` belongs to `N = first_scale + i`.
    pub fn differences(&self) -> Vec<Vec<f64>> {
        self.states.windows(2).map(|w| difference(&w[1], &w[0])).collect()
    }

    pub fn difference_at(&self, viscous_scale: usize) -> Option<Vec<f64>> {
        Some(difference(self.state(viscous_scale + 1)?, self.state(viscous_scale)?))
    }
}

/// Ratio estimate of the leading eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoEstimate {
    /// Ratio at the largest available pair.
    pub rho: f64,
    /// Largest deviation from `rho` among the last three ratios.
    pub spread: f64,
    /// `ratios[i] = du^(i+1)_n / du^(i)_n`.
    pub ratios: Vec<f64>,
    pub probe: usize,
}

/// Component-`probe` ratios of consecutive differences.
pub fn estimate_rho(differences: &[Vec<f64>], probe: usize) -> Result<RhoEstimate> {
    if differences.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: differences.len() });
    }
    let component = |d: &Vec<f64>| d.get(probe).copied().unwrap_or(0.0);
    let mut ratios = Vec::with_capacity(differences.len() - 1);
    for w in differences.windows(2) {
        let (lo, hi) = (component(&w[0]), component(&w[1]));
        for v in [lo, hi] {
            if !(libm::fabs(v) >= DEGENERATE_PROBE) {
                return Err(Error::DegenerateProbe { component: probe, value: v });
            }
        }
        ratios.push(hi / lo);
    }
    let rho = *ratios.last().expect("at least one ratio");
    let spread = ratios
        .iter()
        .rev()
        .take(3)
        .map(|r| libm::fabs(r - rho))
        .fold(0.0, f64::max);
    Ok(RhoEstimate { rho, spread, ratios, probe })
}

fn mode_scale(rho: f64, viscous_scale: usize) -> f64 {
    (rho - 1.0) * libm::pow(rho, viscous_scale as f64)
}

/// `psi ~ du / (c_alpha (rho - 1) rho^N)`.
pub fn estimate_eigenvector(
    difference: &[f64],
    rho: f64,
    c_alpha: f64,
    viscous_scale: usize,
) -> Result<Vec<f64>> {
    if rho == 0.0 || rho == 1.0 || !rho.is_finite() {
        return Err(Error::Domain("eigenvector rescaling needs rho outside {0, 1}"));
    }
    if c_alpha == 0.0 || !c_alpha.is_finite() {
        return Err(Error::Domain("eigenvector rescaling needs a nonzero coefficient"));
    }
    let scale = c_alpha * mode_scale(rho, viscous_scale);
    Ok(difference.iter().map(|d| d / scale).collect())
}

/// Least-squares `c` in `du^(N) ~ c (rho - 1) rho^N psi` over the first
/// `components` entries of every supplied `(N, du)` pair.
pub fn fit_coefficient(
    differences: &[(usize, &[f64])],
    psi: &[f64],
    rho: f64,
    components: usize,
) -> Result<f64> {
    let mut num = stats::CompensatedSum::new();
    let mut den = stats::CompensatedSum::new();
    for &(n, du) in differences {
        let s = mode_scale(rho, n);
        for (d, p) in du.iter().zip(psi).take(components) {
            let g = s * p;
            num.add(d * g);
            den.add(g * g);
        }
    }
    if den.value() == 0.0 {
        return Err(Error::Domain("coefficient fit against a vanishing mode"));
    }
    Ok(num.value() / den.value())
}

/// One rescaled difference curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseCurve {
    pub viscous_scale: usize,
    pub alpha: f64,
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenmodeEstimate {
    pub rho: RhoEstimate,
    /// Viscous scales `(first, last)` entering the ratio estimate.
    pub rho_scales: (usize, usize),
    /// Mean of the reference-alpha curves.
    pub psi: Vec<f64>,
    /// `(alpha, c_alpha)`, with `c = 1` for the first (reference) alpha.
    pub c_by_alpha: Vec<(f64, f64)>,
    pub probe_component: usize,
    pub curves: Vec<CollapseCurve>,
}

impl EigenmodeEstimate {
    /// Largest pairwise max-norm distance between curves on the first
    /// `components` entries, relative to the max-norm of `psi` there.
    pub fn collapse_spread(&self, components: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.curves.iter().enumerate() {
            for b in &self.curves[i + 1..] {
                let d = a
                    .psi
                    .iter()
                    .zip(&b.psi)
                    .take(components)
                    .map(|(x, y)| libm::fabs(x - y))
                    .fold(0.0, f64::max);
                worst = worst.max(d);
            }
        }
        let norm = self.psi.iter().take(components).map(|x| libm::fabs(*x)).fold(0.0, f64::max);
        worst / norm
    }

    pub fn coefficient(&self, alpha: f64) -> Option<f64> {
        self.c_by_alpha.iter().find(|(a, _)| *a == alpha).map(|(_, c)| *c)
    }
}

/// Settings for [`eigenmode_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenmodeSetup {
    /// First entry is the reference with `c = 1`.
    pub alphas: Vec<f64>,
    /// Scales used for the ratio estimate at the reference alpha.
    pub rho_scales: (usize, usize),
    /// Scales whose difference curves are rescaled and compared.
    pub collapse_scales: (usize, usize),
    pub probe: usize,
}

impl Default for EigenmodeSetup {
    fn default() -> Self {
        Self {
            alphas: alloc::vec![0.25, 0.75],
            rho_scales: (10, 20),
            collapse_scales: (12, 15),
            probe: DEFAULT_PROBE,
        }
    }
}

/// Estimates `rho` at the reference alpha, `psi` from its collapse-range
/// curves, and `c_alpha` for the remaining alphas.
pub fn eigenmode_estimate(
    transfer: &TransferSpec,
    a: &[f64],
    setup: &EigenmodeSetup,
) -> Result<EigenmodeEstimate> {
    let (&reference, _) = setup
        .alphas
        .split_first()
        .ok_or(Error::Domain("eigenmode estimate needs at least one alpha"))?;
    let (r0, r1) = setup.rho_scales;
    let (c0, c1) = setup.collapse_scales;
    if c1 < c0 {
        return Err(Error::Domain("empty collapse range"));
    }
    let series = FlowSeries::compute(transfer, reference, a, r0, r1)?;
    let rho = estimate_rho(&series.differences(), setup.probe)?;

    let per_alpha = setup
        .alphas
        .iter()
        .map(|&alpha| {
            let s = FlowSeries::compute(transfer, alpha, a, c0, c1 + 1)?;
            Ok((alpha, s.differences()))
        })
        .collect::<Result<Vec<_>>>()?;

    let reference_curves = per_alpha[0]
        .1
        .iter()
        .enumerate()
        .map(|(i, d)| estimate_eigenvector(d, rho.rho, 1.0, c0 + i))
        .collect::<Result<Vec<_>>>()?;
    let len = reference_curves[0].len();
    let psi: Vec<f64> = (0..len)
        .map(|n| reference_curves.iter().map(|c| c[n]).sum::<f64>() / reference_curves.len() as f64)
        .collect();

    let mut c_by_alpha = Vec::with_capacity(setup.alphas.len());
    let mut curves = Vec::new();
    for (k, (alpha, diffs)) in per_alpha.iter().enumerate() {
        let c = if k == 0 {
            1.0
        } else {
            let pairs: Vec<(usize, &[f64])> =
                diffs.iter().enumerate().map(|(i, d)| (c0 + i, d.as_slice())).collect();
            fit_coefficient(&pairs, &psi, rho.rho, EIGENVECTOR_COMPONENTS)?
        };
        c_by_alpha.push((*alpha, c));
        for (i, d) in diffs.iter().enumerate() {
            curves.push(CollapseCurve {
                viscous_scale: c0 + i,
                alpha: *alpha,
                psi: estimate_eigenvector(d, rho.rho, c, c0 + i)?,
            });
        }
    }

    Ok(EigenmodeEstimate {
        rho,
        rho_scales: (r0, r1),
        psi,
        c_by_alpha,
        probe_component: setup.probe,
        curves,
    })
}

/// Separations of flow maps under a perturbation `alpha -> alpha + delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthCurve {
    pub alpha: f64,
    pub delta_alpha: f64,
    pub scales: Vec<usize>,
    /// `|phi^(N, alpha + delta)(a) - phi^(N, alpha)(a)|`.
    pub norms: Vec<f64>,
    /// `|phi^(N, alpha)(a)|`.
    pub state_norms: Vec<f64>,
}

impl GrowthCurve {
    /// `log log(|du| / delta)` where the inner logarithm is positive.
    pub fn loglog(&self) -> Vec<Option<f64>> {
        self.norms
            .iter()
            .map(|&d| {
                let inner = libm::log(d / self.delta_alpha);
                (inner > 0.0).then(|| libm::log(inner))
            })
            .collect()
    }

    /// Number of leading entries before the first saturated one.
    pub fn pre_saturation_len(&self) -> usize {
        self.norms
            .iter()
            .zip(&self.state_norms)
            .position(|(d, u)| *d > SATURATION_FRACTION * u)
            .unwrap_or(self.norms.len())
    }

    pub fn is_strictly_increasing_before_saturation(&self) -> bool {
        self.norms[..self.pre_saturation_len()].windows(2).all(|w| w[1] > w[0])
    }

    /// Linear fit of the defined loglog values against `N` before saturation.
    pub fn loglog_fit(&self) -> Result<LinearFit> {
        let cut = self.pre_saturation_len();
        let (x, y): (Vec<f64>, Vec<f64>) = self.scales[..cut]
            .iter()
            .zip(&self.loglog()[..cut])
            .filter_map(|(&n, v)| v.map(|v| (n as f64, v)))
            .unzip();
        stats::linear_fit(&x, &y)
    }
}

pub fn perturbation_growth(
    transfer: &TransferSpec,
    alpha: f64,
    delta_alpha: f64,
    a: &[f64],
    scales: &[usize],
) -> Result<GrowthCurve> {
    if delta_alpha < 0.0 || !delta_alpha.is_finite() {
        return Err(Error::Domain("perturbation must be finite and non-negative"));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("viscous scales must be increasing"));
    }
    let mut norms = Vec::with_capacity(scales.len());
    let mut state_norms = Vec::with_capacity(scales.len());
    for &n in scales {
        let u = lattice::flow_map(transfer, n, alpha, a)?;
        let v = lattice::flow_map(transfer, n, alpha + delta_alpha, a)?;
        norms.push(stats::euclidean_norm(&difference(&v, &u)));
        state_norms.push(stats::euclidean_norm(&u));
    }
    Ok(GrowthCurve { alpha, delta_alpha, scales: scales.to_vec(), norms, state_norms })
}

/// Flow-map data for one family parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationRecord {
    pub p: f64,
    /// `u_probe(1)` at viscous scale `N`.
    pub u_n: f64,
    /// `u_probe(1)` at viscous scale `N + 1`.
    pub u_n1: f64,
    pub delta_sq: f64,
    /// Ratio `du^(N)_probe / du^(N-1)_probe`; `None` if degenerate.
    pub rho: Option<f64>,
}

/// Evaluates scales `N - 1, N, N + 1` at parameter `transfer.p`.
pub fn bifurcation_record(
    transfer: &TransferSpec,
    alpha: f64,
    a: &[f64],
    viscous_scale: usize,
    probe: usize,
) -> Result<BifurcationRecord> {
    if viscous_scale == 0 {
        return Err(Error::Domain("bifurcation records need N >= 1"));
    }
    let series = FlowSeries::compute(transfer, alpha, a, viscous_scale - 1, viscous_scale + 1)?;
    let at = |n: usize| series.state(n).and_then(|s| s.get(probe)).copied().unwrap_or(0.0);
    let (u_n, u_n1) = (at(viscous_scale), at(viscous_scale + 1));
    let rho = estimate_rho(&series.differences(), probe).ok().map(|r| r.rho);
    Ok(BifurcationRecord { p: transfer.p, u_n, u_n1, delta_sq: (u_n1 - u_n) * (u_n1 - u_n), rho })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationScan {
    pub viscous_scale: usize,
    pub alpha: f64,
    pub probe: usize,
    pub records: Vec<BifurcationRecord>,
}

/// Onset of linear growth of `du^2` on a window of the scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetFit {
    pub window: (f64, f64),
    pub fit: LinearFit,
    /// Root of the fitted line.
    pub p_pd: f64,
}

impl BifurcationScan {
    pub fn from_records(
        viscous_scale: usize,
        alpha: f64,
        probe: usize,
        records: Vec<BifurcationRecord>,
    ) -> Result<Self> {
        if records.windows(2).any(|w| w[0].p >= w[1].p) {
            return Err(Error::Domain("parameter grid must be strictly increasing"));
        }
        Ok(Self { viscous_scale, alpha, probe, records })
    }

    pub fn p_grid(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.p).collect()
    }

    /// First crossing of `rho(p) = -1`, linearly interpolated between the
    /// bracketing grid points.
    pub fn rho_crossing(&self) -> Option<f64> {
        self.records.windows(2).find_map(|w| {
            let (r0, r1) = (w[0].rho?, w[1].rho?);
            if r0 > -1.0 && r1 <= -1.0 {
                Some(w[0].p + (w[1].p - w[0].p) * (-1.0 - r0) / (r1 - r0))
            } else {
                None
            }
        })
    }

    /// Fits `du^2` against `p` on `[lo, hi]`.
    pub fn onset_fit(&self, lo: f64, hi: f64) -> Result<OnsetFit> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .records
            .iter()
            .filter(|r| r.p >= lo && r.p <= hi)
            .map(|r| (r.p, r.delta_sq))
            .unzip();
        if x.len() < 3 {
            return Err(Error::InsufficientData { needed: 3, got: x.len() });
        }
        let fit = stats::linear_fit(&x, &y)?;
        Ok(OnsetFit { window: (lo, hi), fit, p_pd: fit.root() })
    }
}

pub fn bifurcation_scan(
    transfer: &TransferSpec,
    p_grid: &[f64],
    alpha: f64,
    a: &[f64],
    viscous_scale: usize,
    probe: usize,
) -> Result<BifurcationScan> {
    let records = p_grid
        .iter()
        .map(|&p| {
            let spec = TransferSpec { family: transfer.family, p };
            bifurcation_record(&spec, alpha, a, viscous_scale, probe)
        })
        .collect::<Result<Vec<_>>>()?;
    BifurcationScan::from_records(viscous_scale, alpha, probe, records)
}

/// Even/odd separation of `u_probe(1)` at scales `N, N + 1, N + 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParityGap {
    /// `|u^(N+1) - u^(N)|`.
    pub gap: f64,
    /// `|u^(N+2) - u^(N)|`.
    pub within: f64,
}

pub fn parity_gap(
    transfer: &TransferSpec,
    alpha: f64,
    a: &[f64],
    viscous_scale: usize,
    probe: usize,
) -> Result<ParityGap> {
    let series = FlowSeries::compute(transfer, alpha, a, viscous_scale, viscous_scale + 2)?;
    let at = |n: usize| series.state(n).and_then(|s| s.get(probe)).copied().unwrap_or(0.0);
    let base = at(viscous_scale);
    Ok(ParityGap {
        gap: libm::fabs(at(viscous_scale + 1) - base),
        within: libm::fabs(at(viscous_scale + 2) - base),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn synthetic(rho: f64, c: f64, psi: &[f64], scales: core::ops::Range<usize>) -> Vec<Vec<f64>> {
        scales
            .map(|n| psi.iter().map(|p| c * mode_scale(rho, n) * p).collect())
            .collect()
    }

    #[test]
    fn ratio_is_exact_on_geometric_sequences() {
        let psi = [0.0, 0.0, 0.3, -0.2, 0.7, 0.1];
        let d = synthetic(-0.5, 1.0, &psi, 3..10);
        let est = estimate_rho(&d, 4).unwrap();
        assert_eq!(est.rho, -0.5);
        assert_eq!(est.spread, 0.0);
        assert_eq!(est.ratios.len(), 6);
    }

    #[test]
    fn vanishing_probe_is_rejected() {
        let d = vec![vec![1.0, 0.0], vec![2.0, 0.0]];
        assert!(matches!(estimate_rho(&d, 1), Err(Error::DegenerateProbe { component: 1, .. })));
        assert!(matches!(estimate_rho(&d[..1], 0), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn eigenvector_and_coefficient_recovered() {
        let psi = [0.0, 0.0, 0.3, -0.2, 0.7, 0.1];
        let d = synthetic(-0.42, 1.61, &psi, 11..14);
        for (i, du) in d.iter().enumerate() {
            let got = estimate_eigenvector(du, -0.42, 1.61, 11 + i).unwrap();
            for (g, p) in got.iter().zip(&psi) {
                assert!((g - p).abs() < 1e-12);
            }
        }
        let pairs: Vec<(usize, &[f64])> = d.iter().enumerate().map(|(i, v)| (11 + i, v.as_slice())).collect();
        let c = fit_coefficient(&pairs, &psi, -0.42, 9).unwrap();
        assert!((c - 1.61).abs() < 1e-12);
        assert!(estimate_eigenvector(&d[0], 1.0, 1.0, 3).is_err());
        assert!(estimate_eigenvector(&d[0], -0.5, 0.0, 3).is_err());
    }

    #[test]
    fn zero_state_has_zero_differences() {
        let d = cauchy_difference(&TransferSpec::fa(5.0), 6, 0.25, &[0.0; 3]).unwrap();
        assert_eq!(d.len(), 8);
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unperturbed_growth_curve_is_zero() {
        let a = crate::staircase_initial(6);
        let g = perturbation_growth(&TransferSpec::fb(10.3), 0.25, 0.0, &a, &[0, 1, 2, 3]).unwrap();
        assert!(g.norms.iter().all(|&x| x == 0.0));
        assert!(g.loglog().iter().all(Option::is_none));
        assert!(perturbation_growth(&TransferSpec::fb(10.3), 0.25, 1e-15, &a, &[2, 1]).is_err());
    }

    #[test]
    fn saturation_cut_and_fit() {
        let g = GrowthCurve {
            alpha: 0.25,
            delta_alpha: 1e-15,
            scales: vec![0, 1, 2, 3, 4],
            norms: vec![1e-14, 1e-12, 1e-9, 1e-2, 0.5],
            state_norms: vec![1.0; 5],
        };
        assert_eq!(g.pre_saturation_len(), 3);
        assert!(g.is_strictly_increasing_before_saturation());
        assert_eq!(g.loglog_fit().unwrap().points, 3);
    }

    #[test]
    fn crossing_interpolates_linearly() {
        let rec = |p: f64, rho: f64| BifurcationRecord { p, u_n: 0.0, u_n1: 0.0, delta_sq: 0.0, rho: Some(rho) };
        let scan = BifurcationScan::from_records(
            20,
            0.25,
            4,
            vec![rec(6.0, -0.8), rec(6.5, -0.9), rec(7.0, -1.1), rec(7.5, -1.0)],
        )
        .unwrap();
        assert!((scan.rho_crossing().unwrap() - 6.75).abs() < 1e-12);
        assert!(BifurcationScan::from_records(20, 0.25, 4, vec![rec(7.0, -1.0), rec(7.0, -1.0)]).is_err());
    }

    #[test]
    fn onset_root_of_exact_line() {
        let records = (0..6)
            .map(|i| {
                let p = 7.0 + 0.2 * i as f64;
                BifurcationRecord { p, u_n: 0.0, u_n1: 0.0, delta_sq: 0.03 * (p - 6.9), rho: None }
            })
            .collect();
        let scan = BifurcationScan::from_records(20, 0.25, 4, records).unwrap();
        let onset = scan.onset_fit(7.0, 8.0).unwrap();
        assert!((onset.p_pd - 6.9).abs() < 1e-9);
        assert!(onset.fit.r_squared > 1.0 - 1e-12);
    }
}
