//! Parallel kernel sampling under the per-index stream contract.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use rg_lattice_core::lattice::{RegularizationSpec, SimConfig};
use rg_lattice_core::rng::derive_seed;
use rg_lattice_core::stochastic::{self, SampleSet};
use rg_lattice_core::TransferSpec;
use sha2::{Digest, Sha256};

use crate::config::NoiseConfig;
use crate::error::{Context, Error, Result};

/// One kernel to sample: transfer, viscous scale, noise and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRequest {
    pub transfer: TransferSpec,
    pub viscous_scale: usize,
    pub noise: NoiseConfig,
    pub initial: Vec<f64>,
    pub initial_label: String,
    pub components: Vec<usize>,
    pub samples: usize,
}

impl KernelRequest {
    pub fn config(&self) -> SimConfig {
        SimConfig::new(
            self.transfer,
            RegularizationSpec::noise(self.viscous_scale, self.noise.lo, self.noise.hi),
        )
    }

    /// Seed label fixed by the kernel alone, so two experiments asking for
    /// the same kernel under one master seed draw the same samples.
    fn label(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.transfer.family.name().as_bytes());
        for x in [self.transfer.p, self.noise.lo, self.noise.hi] {
            h.update(x.to_bits().to_le_bytes());
        }
        h.update((self.viscous_scale as u64).to_le_bytes());
        h.update(self.initial_label.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
    }

    fn key(&self, master_seed: u64) -> String {
        format!("{master_seed}:{:016x}:{}:{:?}", self.label(), self.samples, self.components)
    }
}

/// Worker pool plus a memo of sample sets shared by experiments in one process.
pub struct Runner {
    pool: rayon::ThreadPool,
    threads: usize,
    cache: Mutex<HashMap<String, Arc<SampleSet>>>,
}

impl Runner {
    /// `threads = None` uses every available core.
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            builder = builder.num_threads(t.max(1));
        }
        let pool = builder.build().map_err(|e| Error::Pool(e.to_string()))?;
        let threads = pool.current_num_threads();
        Ok(Self { pool, threads, cache: Mutex::new(HashMap::new()) })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Runs `f(i)` for `i in 0..count` on the pool, results in index order.
    pub fn map_indexed<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..count).into_par_iter().map(&f).collect())
    }

    pub fn sample(&self, request: &KernelRequest, master_seed: u64) -> Result<Arc<SampleSet>> {
        let key = request.key(master_seed);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let seed = derive_seed(master_seed, request.label());
        let config = request.config();
        let keep = request.components.iter().max().map_or(0, |m| m + 1);
        let rows = self
            .map_indexed(request.samples, |i| {
                stochastic::kernel_sample_at(&config, &request.initial, seed, i as u64).map(|mut r| {
                    r.truncate(keep);
                    r
                })
            })
            .into_iter()
            .collect::<rg_lattice_core::Result<Vec<_>>>()
            .context(|| {
                format!(
                    "sampling N = {}, noise {} (seed {seed})",
                    request.viscous_scale, request.noise.name
                )
            })?;
        let set = SampleSet::from_rows(
            request.components.clone(),
            &rows,
            seed,
            stochastic::provenance(&config, &request.initial_label),
        )
        .context(|| "assembling samples".into())?;
        let set = Arc::new(set);
        self.cache.lock().expect("cache lock").insert(key, Arc::clone(&set));
        Ok(set)
    }
}
