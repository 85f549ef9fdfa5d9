//! Primitive lattice maps, the RG operator on flow maps, and the composition
//! that yields states at arbitrary dyadic times.
//!
//! All maps act on vectors of a fixed length: `shift_plus` appends a zero and
//! `shift_minus` drops the last component. Intermediate combinations are
//! formed on signed vectors; results are checked to be non-negative, with
//! round-off below [`NEGATIVE_TOLERANCE`] clamped to zero.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lattice::{self, TransferSpec};

pub const NEGATIVE_TOLERANCE: f64 = 1e-14;

/// `(a_1, a_2, ..., 0)`.
pub fn shift_plus(a: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    out.extend_from_slice(a.get(1..).unwrap_or(&[]));
    out.resize(a.len(), 0.0);
    out
}

/// `(0, a_0, a_1, ...)`, dropping the last component.
pub fn shift_minus(a: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    if !a.is_empty() {
        out.push(0.0);
        out.extend_from_slice(&a[..a.len() - 1]);
    }
    out
}

/// `(a_0, 0, 0, ...)`.
pub fn project_zero(a: &[f64]) -> Vec<f64> {
    let mut out = alloc::vec![0.0; a.len()];
    if let Some(first) = a.first() {
        out[0] = *first;
    }
    out
}

/// Energy handed from scale 0 to scale 1: `(f(a_0, a_1) a_0, 0, ...)`.
pub fn xi_transfer(a: &[f64], spec: &TransferSpec) -> Vec<f64> {
    let mut out = alloc::vec![0.0; a.len()];
    if let Some(&a0) = a.first() {
        let a1 = a.get(1).copied().unwrap_or(0.0);
        out[0] = spec.eval(a0, a1) * a0;
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn clamp_energies(mut v: Vec<f64>) -> Result<Vec<f64>> {
    for x in &mut v {
        if !x.is_finite() || *x < -NEGATIVE_TOLERANCE {
            return Err(Error::Domain("flow map produced a negative or non-finite energy"));
        }
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Ok(v)
}

/// An evaluable flow map `a -> u(1)`.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowMap {
    /// Direct simulation at viscous scale `N` with dissipation fraction `alpha`.
    Simulator {
        viscous_scale: usize,
        alpha: f64,
        transfer: TransferSpec,
    },
    /// `R^depth[base]`, with the RG operator built from `transfer`.
    RgComposite {
        base: Box<FlowMap>,
        depth: usize,
        transfer: TransferSpec,
    },
}

impl FlowMap {
    pub fn simulator(transfer: TransferSpec, viscous_scale: usize, alpha: f64) -> Self {
        FlowMap::Simulator { viscous_scale, alpha, transfer }
    }

    /// `R^depth[base]` using the transfer function of `base`.
    pub fn rg_composite(base: FlowMap, depth: usize) -> Self {
        let transfer = base.transfer();
        FlowMap::RgComposite { base: Box::new(base), depth, transfer }
    }

    pub fn transfer(&self) -> TransferSpec {
        match self {
            FlowMap::Simulator { transfer, .. } | FlowMap::RgComposite { transfer, .. } => *transfer,
        }
    }

    /// Evaluates the map; the result has the same length as `a`, so
    /// components past the end of `a` are dropped.
    pub fn evaluate(&self, a: &[f64]) -> Result<Vec<f64>> {
        let a = clamp_energies(a.to_vec())?;
        match self {
            FlowMap::Simulator { viscous_scale, alpha, transfer } => {
                let mut u = lattice::flow_map(transfer, *viscous_scale, *alpha, &a)?;
                u.truncate(a.len());
                Ok(u)
            }
            FlowMap::RgComposite { base, depth, transfer } => {
                if *depth == 0 {
                    return base.evaluate(&a);
                }
                let inner = FlowMap::RgComposite {
                    base: base.clone(),
                    depth: depth - 1,
                    transfer: *transfer,
                };
                rg_apply(&inner, &a, transfer)
            }
        }
    }
}

/// `R[phi](a) = pi0(a) - xi(a) + sigma_-(phi(xi(a) + phi(sigma_+(a))))`.
pub fn rg_apply(phi: &FlowMap, a: &[f64], spec: &TransferSpec) -> Result<Vec<f64>> {
    rg_apply_with(|x| phi.evaluate(x), a, spec)
}

/// The RG operator applied to an arbitrary evaluable map.
pub fn rg_apply_with<F>(mut phi: F, a: &[f64], spec: &TransferSpec) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let xi = xi_transfer(a, spec);
    let inner = phi(&shift_plus(a))?;
    let intermediate = add(&xi, &inner);
    let outer = phi(&intermediate)?;
    let kept: Vec<f64> = project_zero(a).iter().zip(&xi).map(|(p, x)| p - x).collect();
    clamp_energies(add(&kept, &shift_minus(&outer)))
}

/// `t = m + tau_{i_1} + ... + tau_{i_k}` with `0 < i_1 < ... < i_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadicTime {
    pub m: u64,
    pub indices: Vec<usize>,
}

impl DyadicTime {
    pub fn new(m: u64, indices: Vec<usize>) -> Result<Self> {
        if indices.first().is_some_and(|&i| i == 0) {
            return Err(Error::Domain("dyadic indices must be positive"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("dyadic indices must be strictly increasing"));
        }
        Ok(Self { m, indices })
    }

    pub fn integer(m: u64) -> Self {
        Self { m, indices: Vec::new() }
    }

    /// Finest scale index `i_k`, or 0 for integer times.
    pub fn finest(&self) -> usize {
        self.indices.last().copied().unwrap_or(0)
    }

    pub fn value(&self) -> f64 {
        self.m as f64
            + self
                .indices
                .iter()
                .map(|&i| libm::ldexp(1.0, -(i as i32)))
                .sum::<f64>()
    }

    /// Number of ticks of size `2^-N` up to this time.
    pub fn ticks(&self, viscous_scale: usize) -> Result<u64> {
        self.validate_for(viscous_scale)?;
        let fractional: u64 = self.indices.iter().map(|&i| 1u64 << (viscous_scale - i)).sum();
        Ok(self.m * (1u64 << viscous_scale) + fractional)
    }

    pub fn validate_for(&self, viscous_scale: usize) -> Result<()> {
        if self.finest() > viscous_scale {
            return Err(Error::Domain("dyadic index exceeds the viscous scale"));
        }
        Ok(())
    }

    /// Every dyadic time with `m <= max_m`, at most `max_k` indices, `i_k <= N`.
    pub fn enumerate(max_m: u64, max_k: usize, viscous_scale: usize) -> Vec<DyadicTime> {
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        for mask in 0u64..(1u64 << viscous_scale) {
            if mask.count_ones() as usize > max_k {
                continue;
            }
            subsets.push((1..=viscous_scale).filter(|i| mask >> (i - 1) & 1 == 1).collect());
        }
        let mut out = Vec::new();
        for m in 0..=max_m {
            for s in &subsets {
                out.push(DyadicTime { m, indices: s.clone() });
            }
        }
        out
    }
}

/// Tail `(u_{i_k}(t), u_{i_k + 1}(t), ...)` of the solution at dyadic time `t`,
/// built as `Psi_k o ... o Psi_1 o phi^m(a)` with
/// `Psi_j = xi o sigma_+^{d_j - 1} + phi^(N - i_j) o sigma_+^{d_j}`.
pub fn state_at_dyadic_time(
    a: &[f64],
    viscous_scale: usize,
    alpha: f64,
    spec: &TransferSpec,
    t: &DyadicTime,
) -> Result<Vec<f64>> {
    t.validate_for(viscous_scale)?;
    let len = a.len().max(viscous_scale + 1);
    let mut u = a.to_vec();
    u.resize(len, 0.0);
    let phi = FlowMap::simulator(*spec, viscous_scale, alpha);
    for _ in 0..t.m {
        u = phi.evaluate(&u)?;
    }
    let mut previous = 0;
    for &i in &t.indices {
        let step = i - previous;
        let mut shifted = u;
        for _ in 0..step - 1 {
            shifted = shift_plus(&shifted);
        }
        let xi = xi_transfer(&shifted, spec);
        let evolved = FlowMap::simulator(*spec, viscous_scale - i, alpha).evaluate(&shift_plus(&shifted))?;
        u = add(&xi, &evolved);
        previous = i;
    }
    Ok(u)
}
