//! Monte Carlo v-functions and block averages of the full dynamics.

use crate::error::{Error, Result};
use crate::hydro::Profile;
use crate::lattice::LatticeParams;
use crate::pde::{RhoField, RhoSolver};
use crate::sim::{replicate, run_full_process_rng, InitialCondition, ParticleConfig};

/// Number of batches behind every standard error.
pub const BATCHES: usize = 32;
/// Largest tuple length accepted by [`estimate_v`].
pub const MAX_SITES: usize = 4;
/// Tolerance of the density solve subtracted from the occupations.
pub const RHO_TOL: f64 = 1e-10;

/// Monte Carlo estimate of `v(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VFunctionEstimate {
    pub sites: Vec<i64>,
    pub time: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub replicas: usize,
}

/// Replica count rounded up to a positive multiple of [`BATCHES`].
pub fn round_replicas(replicas: usize) -> usize {
    replicas.max(1).div_ceil(BATCHES) * BATCHES
}

/// Mean and batch-means standard error of samples in replica order.
pub fn batch_means(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() / BATCHES;
    let means: Vec<f64> = samples.chunks(m).map(|c| c.iter().sum::<f64>() / m as f64).collect();
    let b = means.len() as f64;
    let mean = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

fn check_sites(params: &LatticeParams, sites: &[i64]) -> Result<Vec<i64>> {
    if sites.is_empty() || sites.len() > MAX_SITES {
        return Err(Error::InvalidParams(format!("need 1 to {MAX_SITES} sites, got {}", sites.len())));
    }
    for &x in sites {
        params.site(x)?;
    }
    let mut key = sites.to_vec();
    key.sort_unstable();
    if key.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Domain(format!("v-functions need distinct sites, got {sites:?}")));
    }
    Ok(key)
}

/// Density `rho(., t)` started from the mean of the initial law.
pub fn rho_at(params: &LatticeParams, eta0: &InitialCondition, t: f64) -> Result<RhoField> {
    let rho0 = RhoField::new(*params, 0.0, eta0.density())?;
    RhoSolver::new(params).evolve(&rho0, t, RHO_TOL)
}

/// `prod_i (eta(x_i) - rho(x_i))` over sorted sites.
fn centered_product(eta: &ParticleConfig, rho: &RhoField, sites: &[i64]) -> f64 {
    sites.iter().map(|&x| if eta.get(x) { 1.0 } else { 0.0 } - rho.at(x)).product()
}

/// Estimates of `v(x, t)` for several tuples from the same replicas.
pub fn estimate_v_many(
    params: &LatticeParams,
    tuples: &[Vec<i64>],
    t: f64,
    eta0: &InitialCondition,
    replicas: usize,
    seed: u64,
) -> Result<Vec<VFunctionEstimate>> {
    eta0.validate(params)?;
    let keys: Vec<Vec<i64>> = tuples.iter().map(|x| check_sites(params, x)).collect::<Result<_>>()?;
    let rho = rho_at(params, eta0, t)?;
    let replicas = round_replicas(replicas);
    let runs: Result<Vec<Vec<f64>>> = replicate(replicas, seed, |_, rng| {
        let start = eta0.sample(params, rng);
        let tr = run_full_process_rng(params, &start, &[t], rng)?;
        Ok(keys.iter().map(|k| centered_product(&tr.configs[0], &rho, k)).collect())
    })
    .into_iter()
    .collect();
    let runs = runs?;
    Ok(tuples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let col: Vec<f64> = runs.iter().map(|r| r[i]).collect();
            let (estimate, std_error) = batch_means(&col);
            VFunctionEstimate { sites: x.clone(), time: t, estimate, std_error, replicas }
        })
        .collect())
}

/// Monte Carlo `v(x, t)`; replicas are rounded up to a multiple of 32.
pub fn estimate_v(
    params: &LatticeParams,
    sites: &[i64],
    t: f64,
    eta0: &InitialCondition,
    replicas: usize,
    seed: u64,
) -> Result<VFunctionEstimate> {
    Ok(estimate_v_many(params, &[sites.to_vec()], t, eta0, replicas, seed)?.remove(0))
}

/// Geometry of the blocks `J(x) = [x - h, x + h]`, `h = floor(N^a)`, with
/// centers `|x| <= N - h` so that every block lies in `[-N, N]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blocks {
    pub half_width: i64,
    pub a: f64,
}

impl Blocks {
    pub fn new(params: &LatticeParams, a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidParams(format!("block exponent must lie in (0, 1), got {a}")));
        }
        let n = params.half_width();
        let h = (n as f64).powf(a).floor() as i64;
        if h < 2 {
            return Err(Error::InvalidParams(format!("N^a = {} is below 2", (n as f64).powf(a))));
        }
        Ok(Blocks { half_width: h.min(n), a })
    }

    pub fn len(&self) -> usize {
        (2 * self.half_width + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Block averages of `f` (indexed by site from `-N`) at every center.
    pub fn averages(&self, f: &[f64]) -> Vec<f64> {
        let mut prefix = Vec::with_capacity(f.len() + 1);
        prefix.push(0.0);
        for v in f {
            prefix.push(prefix.last().unwrap() + v);
        }
        let w = self.len();
        (0..=f.len() - w).map(|i| (prefix[i + w] - prefix[i]) / w as f64).collect()
    }

    /// `sup_x |average_J(x) f|`.
    pub fn sup(&self, f: &[f64]) -> f64 {
        self.averages(f).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Empirical probability of a large block fluctuation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAverageReport {
    pub blocks: Blocks,
    pub probability: f64,
    pub std_error: f64,
    pub replicas: usize,
    /// `sup_x |block average of eta - rho|` per replica.
    pub sups: Vec<f64>,
}

/// Fraction of replicas with `sup_x |J|^-1 |sum_{y in J(x)} (eta(y, t) - rho(y, t))| >= delta`.
pub fn block_average_test(
    params: &LatticeParams,
    eta0: &InitialCondition,
    t: f64,
    a: f64,
    delta: f64,
    replicas: usize,
    seed: u64,
) -> Result<BlockAverageReport> {
    eta0.validate(params)?;
    let blocks = Blocks::new(params, a)?;
    if replicas < 2 {
        return Err(Error::InvalidParams("need at least two replicas".into()));
    }
    let rho = rho_at(params, eta0, t)?;
    let sups: Result<Vec<f64>> = replicate(replicas, seed, |_, rng| {
        let start = eta0.sample(params, rng);
        let tr = run_full_process_rng(params, &start, &[t], rng)?;
        let dev: Vec<f64> = tr.configs[0].to_density().iter().zip(&rho.values).map(|(e, r)| e - r).collect();
        Ok(blocks.sup(&dev))
    })
    .into_iter()
    .collect();
    let sups = sups?;
    let m = replicas as f64;
    let probability = sups.iter().filter(|&&s| s >= delta).count() as f64 / m;
    let std_error = (probability * (1.0 - probability) / m).sqrt();
    Ok(BlockAverageReport { blocks, probability, std_error, replicas, sups })
}

/// `sup_x |average_J(x) rho(., 0) - u0(eps x)|` over the block centers.
pub fn initial_profile_check(params: &LatticeParams, eta0: &InitialCondition, u0: &Profile, a: f64) -> Result<f64> {
    eta0.validate(params)?;
    let blocks = Blocks::new(params, a)?;
    let rho0 = eta0.density();
    let h = blocks.half_width;
    let n = params.half_width();
    let eps = params.epsilon();
    Ok(blocks
        .averages(&rho0)
        .iter()
        .zip(-n + h..=n - h)
        .map(|(avg, x)| (avg - u0.eval(eps * x as f64)).abs())
        .fold(0.0, f64::max))
}
