//! Monte Carlo engines.
//!
//! * [`run_full_process`]: the full dynamics `eps^-2 L_0 + eps^-1 L_b` as a
//!   uniformized jump chain. The total event rate does not depend on the
//!   state (blocked births and deaths are self-loops), so the number of events
//!   in a time interval is Poisson and each event picks its bond or reservoir
//!   clock uniformly by rate.
//! * [`LabeledEngine`]: a few labeled particles driven by the active/passive
//!   marks. Only marks on bonds touching a particle are generated. A bond with
//!   one particle only needs its active marks (rate `eps^-2 / 2`); a bond
//!   joining two particles carries all its marks (rate `eps^-2`), each active
//!   with probability 1/2, since passive marks there count for the pair
//!   statistics and drive the coupling.
//! * [`run_marks_stirring`]: the explicit marks process on every bond
//!   `{x, x+1}`, `x in [-N-1, N]`, with the mark stream recorded.
//!
//! Replica `i` of a run with master seed `s` draws from the ChaCha8 stream
//! `i` of seed `s`, and results are gathered in replica order, so outputs do
//! not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::lattice::{LatticeParams, Side};

/// Independent generator for replica `index` of a run seeded with `seed`.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Run `f` on `replicas` independent streams; results in replica order.
pub fn replicate<T, F>(replicas: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Occupation numbers `eta(x)`, `x in [-N, N]`, packed in 64-bit words.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ParticleConfig {
    half_width: i64,
    words: Vec<u64>,
}

impl ParticleConfig {
    pub fn empty(params: &LatticeParams) -> Self {
        ParticleConfig {
            half_width: params.half_width(),
            words: vec![0; params.num_sites().div_ceil(64)],
        }
    }

    pub fn full(params: &LatticeParams) -> Self {
        let mut c = ParticleConfig::empty(params);
        for x in params.sites() {
            c.set(x, true);
        }
        c
    }

    pub fn from_sites(params: &LatticeParams, sites: &[i64]) -> Result<Self> {
        let mut c = ParticleConfig::empty(params);
        for &x in sites {
            params.site(x)?;
            c.set(x, true);
        }
        Ok(c)
    }

    pub fn from_occupation(params: &LatticeParams, occupied: &[bool]) -> Result<Self> {
        if occupied.len() != params.num_sites() {
            return Err(Error::InvalidParams(format!(
                "configuration has {} sites, lattice has {}",
                occupied.len(),
                params.num_sites()
            )));
        }
        let mut c = ParticleConfig::empty(params);
        for (x, &b) in params.sites().zip(occupied) {
            c.set(x, b);
        }
        Ok(c)
    }

    /// Configuration from its bit index, bit `i` being site `i - N`.
    pub fn from_index(params: &LatticeParams, index: u64) -> Self {
        let mut c = ParticleConfig::empty(params);
        for (i, x) in params.sites().enumerate() {
            c.set(x, (index >> i) & 1 == 1);
        }
        c
    }

    /// Bit index of a configuration on at most 63 sites.
    pub fn index(&self) -> u64 {
        debug_assert!(self.num_sites() <= 63);
        self.words[0]
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn num_sites(&self) -> usize {
        (2 * self.half_width + 1) as usize
    }

    #[inline]
    fn bit(&self, x: i64) -> (usize, u64) {
        let i = (x + self.half_width) as usize;
        (i >> 6, 1u64 << (i & 63))
    }

    #[inline]
    pub fn get(&self, x: i64) -> bool {
        let (w, m) = self.bit(x);
        self.words[w] & m != 0
    }

    #[inline]
    pub fn set(&mut self, x: i64, value: bool) {
        let (w, m) = self.bit(x);
        if value {
            self.words[w] |= m;
        } else {
            self.words[w] &= !m;
        }
    }

    /// Exchange the contents of `x` and `x + 1`.
    #[inline]
    pub fn exchange(&mut self, x: i64) {
        let a = self.get(x);
        let b = self.get(x + 1);
        if a != b {
            self.set(x, b);
            self.set(x + 1, a);
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn occupied(&self) -> impl Iterator<Item = i64> + '_ {
        (-self.half_width..=self.half_width).filter(move |&x| self.get(x))
    }

    pub fn to_density(&self) -> Vec<f64> {
        (-self.half_width..=self.half_width).map(|x| if self.get(x) { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_occupation(&self) -> Vec<bool> {
        (-self.half_width..=self.half_width).map(|x| self.get(x)).collect()
    }

    /// Insert at the first empty site of `I_+` scanning down from `N`.
    /// Returns whether a particle was created.
    pub fn birth(&mut self, params: &LatticeParams) -> bool {
        let (lo, hi) = params.reservoir(Side::Plus);
        for x in (lo..=hi).rev() {
            if !self.get(x) {
                self.set(x, true);
                return true;
            }
        }
        false
    }

    /// Remove the first particle of `I_-` scanning up from `-N`.
    pub fn death(&mut self, params: &LatticeParams) -> bool {
        let (lo, hi) = params.reservoir(Side::Minus);
        for x in lo..=hi {
            if self.get(x) {
                self.set(x, false);
                return true;
            }
        }
        false
    }
}

impl fmt::Display for ParticleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in -self.half_width..=self.half_width {
            f.write_str(if self.get(x) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ParticleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParticleConfig({self})")
    }
}

impl FromStr for ParticleConfig {
    type Err = Error;

    /// A string of `0`/`1` of odd length `2N + 1`, site `-N` first.
    fn from_str(s: &str) -> Result<Self> {
        let m = s.len();
        if m % 2 == 0 || m == 1 {
            return Err(Error::InvalidParams(format!("configuration {s:?} must have odd length >= 3")));
        }
        let n = ((m - 1) / 2) as i64;
        let mut c = ParticleConfig { half_width: n, words: vec![0; m.div_ceil(64)] };
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => c.set(i as i64 - n, true),
                _ => return Err(Error::InvalidParams(format!("configuration {s:?}: bad symbol {ch:?}"))),
            }
        }
        Ok(c)
    }
}

/// Initial law of the full process.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Deterministic(ParticleConfig),
    /// Product measure with the given marginals on `[-N, N]`.
    Product(Vec<f64>),
}

impl InitialCondition {
    pub fn sample<R: Rng>(&self, params: &LatticeParams, rng: &mut R) -> ParticleConfig {
        match self {
            InitialCondition::Deterministic(c) => c.clone(),
            InitialCondition::Product(m) => {
                let mut c = ParticleConfig::empty(params);
                for (x, &p) in params.sites().zip(m) {
                    c.set(x, rng.gen::<f64>() < p);
                }
                c
            }
        }
    }

    /// `rho(x, 0)`.
    pub fn density(&self) -> Vec<f64> {
        match self {
            InitialCondition::Deterministic(c) => c.to_density(),
            InitialCondition::Product(m) => m.clone(),
        }
    }

    pub fn validate(&self, params: &LatticeParams) -> Result<()> {
        match self {
            InitialCondition::Deterministic(c) => {
                if c.half_width() != params.half_width() {
                    return Err(Error::InvalidParams(format!(
                        "configuration on [-{}, {}] but lattice has N = {}",
                        c.half_width(),
                        c.half_width(),
                        params.half_width()
                    )));
                }
            }
            InitialCondition::Product(m) => {
                if m.len() != params.num_sites() || m.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::InvalidParams("product marginals must be 2N+1 values in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

/// Configurations at the requested sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub configs: Vec<ParticleConfig>,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParams("sample times must be finite and >= 0".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParams("sample times must be increasing".into()));
    }
    Ok(())
}

/// Draw a Poisson count with mean `mean`.
fn poisson_count<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Full dynamics from `eta0`, sampled at the increasing `times`.
pub fn run_full_process_rng<R: Rng>(
    params: &LatticeParams,
    eta0: &ParticleConfig,
    times: &[f64],
    rng: &mut R,
) -> Result<Trajectory> {
    check_times(times)?;
    if eta0.half_width() != params.half_width() {
        return Err(Error::InvalidParams("configuration and lattice sizes differ".into()));
    }
    let n = params.half_width();
    let bonds = (2 * n) as f64;
    let exchange = 0.5 * params.diffusive_scale();
    let reservoir = 0.5 * params.inv_epsilon() * params.rate();
    let exchange_total = bonds * exchange;
    let total = exchange_total + 2.0 * reservoir;
    let mut eta = eta0.clone();
    let mut now = 0.0;
    let mut configs = Vec::with_capacity(times.len());
    for &t in times {
        let events = poisson_count(total * (t - now), rng);
        for _ in 0..events {
            let u = rng.gen::<f64>() * total;
            if u < exchange_total {
                let b = ((u / exchange) as i64).min(2 * n - 1);
                eta.exchange(b - n);
            } else if u < exchange_total + reservoir {
                eta.birth(params);
            } else {
                eta.death(params);
            }
        }
        now = t;
        configs.push(eta.clone());
    }
    Ok(Trajectory { times: times.to_vec(), configs })
}

/// [`run_full_process_rng`] on stream 0 of `seed`.
pub fn run_full_process(params: &LatticeParams, eta0: &ParticleConfig, times: &[f64], seed: u64) -> Result<Trajectory> {
    run_full_process_rng(params, eta0, times, &mut replica_rng(seed, 0))
}

/// Monte Carlo site marginals `P[eta(x, t) = 1]` at each sample time,
/// `out[time][site]`.
pub fn site_marginals(
    params: &LatticeParams,
    eta0: &InitialCondition,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<Estimate>>> {
    eta0.validate(params)?;
    check_times(times)?;
    if replicas < 2 {
        return Err(Error::InvalidParams("need at least two replicas".into()));
    }
    let runs: Result<Vec<Trajectory>> = replicate(replicas, seed, |_, rng| {
        let start = eta0.sample(params, rng);
        run_full_process_rng(params, &start, times, rng)
    })
    .into_iter()
    .collect();
    let runs = runs?;
    let m = replicas as f64;
    Ok((0..times.len())
        .map(|k| {
            params
                .sites()
                .map(|x| {
                    let hits = runs.iter().filter(|r| r.configs[k].get(x)).count() as f64;
                    let mean = hits / m;
                    let var = (hits * (1.0 - mean) * (1.0 - mean) + (m - hits) * mean * mean) / (m - 1.0);
                    Estimate { mean, std_error: (var / m).sqrt() }
                })
                .collect()
        })
        .collect())
}

/// Labeled particle positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledState {
    pub positions: Vec<i64>,
}

impl LabeledState {
    pub fn new(params: &LatticeParams, positions: Vec<i64>) -> Result<Self> {
        for (i, &x) in positions.iter().enumerate() {
            params.site(x)?;
            if positions[..i].contains(&x) {
                return Err(Error::Domain(format!("two particles at site {x}")));
            }
        }
        Ok(LabeledState { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// A mark of the active/passive process on the bond `{bond, bond + 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkEvent {
    pub time: f64,
    pub bond: i64,
    pub active: bool,
}

/// Marks of rate `eps^-2` on every bond `x in [-N-1, N]`; active marks on
/// bonds inside `[-N, N]` exchange the bond contents.
pub fn run_marks_stirring_rng<R: Rng>(
    params: &LatticeParams,
    x0: &LabeledState,
    t: f64,
    record: bool,
    rng: &mut R,
) -> Result<(LabeledState, Vec<MarkEvent>)> {
    check_times(&[t])?;
    let n = params.half_width();
    let bonds = 2 * n + 2;
    let rate = params.diffusive_scale() * bonds as f64;
    let mut positions = x0.positions.clone();
    let mut marks = Vec::new();
    let mut now = 0.0;
    loop {
        now += rng.sample::<f64, _>(Exp1) / rate;
        if now > t {
            break;
        }
        let bond = rng.gen_range(0..bonds) - n - 1;
        let active = rng.gen::<bool>();
        if record {
            marks.push(MarkEvent { time: now, bond, active });
        }
        if active && bond >= -n && bond < n {
            for p in positions.iter_mut() {
                if *p == bond {
                    *p = bond + 1;
                } else if *p == bond + 1 {
                    *p = bond;
                }
            }
        }
    }
    Ok((LabeledState { positions }, marks))
}

pub fn run_marks_stirring(
    params: &LatticeParams,
    x0: &LabeledState,
    t: f64,
    seed: u64,
) -> Result<(LabeledState, Vec<MarkEvent>)> {
    run_marks_stirring_rng(params, x0, t, true, &mut replica_rng(seed, 0))
}

/// What a mark on a bond touching labeled particles meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Touch {
    bond: i64,
    left: Option<usize>,
    right: Option<usize>,
}

/// Largest number of labeled particles.
pub const MAX_LABELED: usize = 32;

/// Evolution of labeled stirring particles by the local marks.
///
/// With `outer` set, the bonds `{-N-1, -N}` and `{N, N+1}` also emit their
/// active marks when a particle sits at the wall; they never move stirring
/// particles and exist for the coupling.
pub struct LabeledEngine {
    params: LatticeParams,
    positions: Vec<i64>,
    now: f64,
    outer: bool,
    touches: Vec<Touch>,
    /// Tracked pair `(0, 1)`.
    pair: Option<PairTracker>,
}

#[derive(Debug, Clone, Copy)]
struct PairTracker {
    tau: f64,
    n_marks: u64,
    occupation: f64,
}

/// Outcome of one mark of the local engine.
#[derive(Debug, Clone, Copy)]
pub struct LocalMark {
    pub time: f64,
    pub bond: i64,
    pub active: bool,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

impl LabeledEngine {
    pub fn new(params: &LatticeParams, start: &LabeledState, outer: bool) -> Result<Self> {
        if start.len() > MAX_LABELED {
            return Err(Error::TooLarge(format!("at most {MAX_LABELED} labeled particles")));
        }
        LabeledState::new(params, start.positions.clone())?;
        Ok(LabeledEngine {
            params: *params,
            positions: start.positions.clone(),
            now: 0.0,
            outer,
            touches: Vec::with_capacity(2 * start.len()),
            pair: None,
        })
    }

    /// Track `tau`, `N` and the adjacency time of particles 0 and 1.
    pub fn track_pair(&mut self) {
        self.pair = Some(PairTracker { tau: f64::INFINITY, n_marks: 0, occupation: 0.0 });
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    fn occupant(&self, x: i64) -> Option<usize> {
        self.positions.iter().position(|&p| p == x)
    }

    fn collect_touches(&mut self) -> f64 {
        let n = self.params.half_width();
        let lo = if self.outer { -n - 1 } else { -n };
        let hi = if self.outer { n } else { n - 1 };
        self.touches.clear();
        let mut weight = 0.0;
        for i in 0..self.positions.len() {
            let x = self.positions[i];
            for bond in [x - 1, x] {
                if bond < lo || bond > hi || self.touches.iter().any(|t| t.bond == bond) {
                    continue;
                }
                let left = if bond >= -n { self.occupant(bond) } else { None };
                let right = if bond < n { self.occupant(bond + 1) } else { None };
                weight += if left.is_some() && right.is_some() { 2.0 } else { 1.0 };
                self.touches.push(Touch { bond, left, right });
            }
        }
        weight
    }

    /// Apply marks until `t_end`; `on_mark` sees each mark together with the
    /// positions before it acts.
    pub fn advance<R: Rng, F: FnMut(&LocalMark, &[i64])>(&mut self, t_end: f64, rng: &mut R, mut on_mark: F) {
        let unit = 0.5 * self.params.diffusive_scale();
        let n = self.params.half_width();
        while self.now < t_end {
            let weight = self.collect_touches();
            if weight == 0.0 {
                self.now = t_end;
                break;
            }
            let dt = rng.sample::<f64, _>(Exp1) / (weight * unit);
            let next = self.now + dt;
            if let Some(tr) = self.pair.as_mut() {
                if (self.positions[0] - self.positions[1]).abs() == 1 {
                    tr.occupation += next.min(t_end) - self.now;
                }
            }
            if next > t_end {
                self.now = t_end;
                break;
            }
            self.now = next;
            let mut u = rng.gen::<f64>() * weight;
            let mut chosen = self.touches[self.touches.len() - 1];
            for t in &self.touches {
                let w = if t.left.is_some() && t.right.is_some() { 2.0 } else { 1.0 };
                if u < w {
                    chosen = *t;
                    break;
                }
                u -= w;
            }
            let double = chosen.left.is_some() && chosen.right.is_some();
            let active = if double { rng.gen::<bool>() } else { true };
            let mark = LocalMark {
                time: self.now,
                bond: chosen.bond,
                active,
                left: chosen.left,
                right: chosen.right,
            };
            if double {
                if let Some(tr) = self.pair.as_mut() {
                    let (a, b) = (chosen.left.unwrap(), chosen.right.unwrap());
                    if (a == 0 && b == 1) || (a == 1 && b == 0) {
                        tr.n_marks += 1;
                        if tr.tau.is_infinite() {
                            tr.tau = self.now;
                        }
                    }
                }
            }
            on_mark(&mark, &self.positions);
            let inside = chosen.bond >= -n && chosen.bond < n;
            if active && inside {
                if let Some(i) = chosen.left {
                    self.positions[i] = chosen.bond + 1;
                }
                if let Some(j) = chosen.right {
                    self.positions[j] = chosen.bond;
                }
            }
        }
    }

    pub fn pair_stats(&self) -> Option<PairMeetingStats> {
        self.pair.map(|tr| PairMeetingStats {
            tau: tr.tau,
            horizon: self.now,
            n_marks: tr.n_marks,
            occupation: tr.occupation,
        })
    }
}

/// Stirring labeled particles to time `t`.
pub fn run_labeled_rng<R: Rng>(params: &LatticeParams, x0: &LabeledState, t: f64, rng: &mut R) -> Result<LabeledState> {
    let mut e = LabeledEngine::new(params, x0, false)?;
    e.advance(t, rng, |_, _| {});
    Ok(LabeledState { positions: e.positions.clone() })
}

/// Meeting statistics of particles started at `x1` and `x2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMeetingStats {
    /// First mark between the two while adjacent; `INFINITY` if none
    /// happened before `horizon`.
    pub tau: f64,
    pub horizon: f64,
    /// Number of such marks in `[0, horizon]`.
    pub n_marks: u64,
    /// Time spent adjacent in `[0, horizon]`.
    pub occupation: f64,
}

/// Per-replica pair statistics and the survival curve `P[tau >= s]`.
#[derive(Debug, Clone)]
pub struct PairStatsReport {
    pub samples: Vec<PairMeetingStats>,
    /// `(s, P[tau >= s])` on a log grid of `s`.
    pub survival: Vec<(f64, f64)>,
}

impl PairStatsReport {
    /// Fraction of replicas with `N >= threshold`.
    pub fn marks_tail(&self, threshold: f64) -> f64 {
        let hits = self.samples.iter().filter(|s| s.n_marks as f64 >= threshold).count();
        hits as f64 / self.samples.len() as f64
    }

    pub fn survival_at(&self, s: f64) -> f64 {
        let hits = self.samples.iter().filter(|p| p.tau >= s).count();
        hits as f64 / self.samples.len() as f64
    }
}

/// Number of points of the survival grid.
pub const SURVIVAL_POINTS: usize = 41;

pub fn pair_stats(
    params: &LatticeParams,
    x1: i64,
    x2: i64,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<PairStatsReport> {
    if x1 == x2 {
        return Err(Error::Domain("pair statistics need distinct sites".into()));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParams(format!("horizon must be positive, got {t}")));
    }
    let start = LabeledState::new(params, vec![x1, x2])?;
    let samples = replicate(replicas, seed, |_, rng| {
        let mut e = LabeledEngine::new(params, &start, false).expect("validated start");
        e.track_pair();
        e.advance(t, rng, |_, _| {});
        e.pair_stats().expect("tracked")
    });
    let mut report = PairStatsReport { samples, survival: Vec::with_capacity(SURVIVAL_POINTS) };
    // Grid from one mean mark gap (at most t/100) to the horizon.
    let s_min = (1.0 / params.diffusive_scale()).min(0.01 * t);
    for i in 0..SURVIVAL_POINTS {
        let s = s_min * (t / s_min).powf(i as f64 / (SURVIVAL_POINTS - 1) as f64);
        report.survival.push((s, report.survival_at(s)));
    }
    Ok(report)
}

/// Mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        if xs.len() < 2 {
            return Estimate { mean, std_error: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
        Estimate { mean, std_error: (var / m).sqrt() }
    }
}

/// Both sides of the duality identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    /// `E[prod_{x in X} eta(x, t) | eta_0]`.
    pub lhs: Estimate,
    /// `E[prod_{x in X(t)} eta_0(x) | X(0) = X]`.
    pub rhs: Estimate,
    pub z_score: f64,
}

/// `(a - b) / sqrt(se_a^2 + se_b^2)`, zero when both are exact and equal.
pub fn z_score(a: Estimate, b: Estimate) -> f64 {
    let d = a.mean - b.mean;
    let s = (a.std_error * a.std_error + b.std_error * b.std_error).sqrt();
    if s == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    } else {
        d / s
    }
}

/// Monte Carlo check of duality for the stirring dynamics (`j` ignored).
/// Replicas `[0, R)` drive the forward process and `[R, 2R)` the dual one.
pub fn duality_check(
    params: &LatticeParams,
    x: &[i64],
    eta0: &ParticleConfig,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<DualityReport> {
    let p0 = params.with_rate(0.0)?;
    let set = LabeledState::new(&p0, x.to_vec())?;
    if eta0.half_width() != p0.half_width() {
        return Err(Error::InvalidParams("configuration and lattice sizes differ".into()));
    }
    let forward: Result<Vec<f64>> = replicate(replicas, seed, |_, rng| {
        let tr = run_full_process_rng(&p0, eta0, &[t], rng)?;
        Ok(if x.iter().all(|&y| tr.configs[0].get(y)) { 1.0 } else { 0.0 })
    })
    .into_iter()
    .collect();
    let dual: Result<Vec<f64>> = (replicas..2 * replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let end = run_labeled_rng(&p0, &set, t, &mut rng)?;
            Ok(if end.positions.iter().all(|&y| eta0.get(y)) { 1.0 } else { 0.0 })
        })
        .collect();
    let lhs = Estimate::from_samples(&forward?);
    let rhs = Estimate::from_samples(&dual?);
    Ok(DualityReport { lhs, rhs, z_score: z_score(lhs, rhs) })
}

/// Monte Carlo estimate of `E[1_{tau_12 <= s} f(x(t))]` with its z-score
/// against zero.
pub fn antisymmetry_check<F>(
    params: &LatticeParams,
    x0: &LabeledState,
    s: f64,
    t: f64,
    f: F,
    replicas: usize,
    seed: u64,
) -> Result<(Estimate, f64)>
where
    F: Fn(&[i64]) -> f64 + Sync,
{
    if x0.len() < 2 {
        return Err(Error::InvalidParams("need at least two particles".into()));
    }
    if !(0.0 < s && s < t) {
        return Err(Error::InvalidParams(format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    LabeledEngine::new(params, x0, false)?;
    let samples = replicate(replicas, seed, |_, rng| {
        let mut e = LabeledEngine::new(params, x0, false).expect("validated start");
        e.track_pair();
        e.advance(s, rng, |_, _| {});
        let met = e.pair_stats().expect("tracked").tau <= s;
        e.advance(t, rng, |_, _| {});
        if met {
            f(e.positions())
        } else {
            0.0
        }
    });
    let est = Estimate::from_samples(&samples);
    let z = z_score(est, Estimate { mean: 0.0, std_error: 0.0 });
    Ok((est, z))
}

/// Stirring particles, their independent walkers and the auxiliary process.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingState {
    pub time: f64,
    pub stirring: LabeledState,
    pub independent: LabeledState,
    /// Last value of `y` before it was reconciled with the independent
    /// walkers (differs from them only right after a suppressed jump).
    pub auxiliary: LabeledState,
    /// `sigma[i]` is the rank of particle `i`; rank 0 has top priority.
    pub priority: Vec<usize>,
}

/// Jump times of `y_i` to the right and to the left.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpStreams {
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

/// Coupling run sampled at increasing times.
#[derive(Debug, Clone)]
pub struct CouplingTrajectory {
    pub states: Vec<CouplingState>,
    /// Per particle; empty unless requested.
    pub jumps: Vec<JumpStreams>,
    /// Marks after which the top-priority pair `x_l`, `x0_l` differed.
    pub top_priority_mismatches: u64,
}

/// Stirring/independent coupling started from equal positions.
///
/// `sigma[i]` is the priority rank of particle `i` (a permutation of
/// `0..n`, rank 0 highest).
pub fn run_coupling_rng<R: Rng>(
    params: &LatticeParams,
    x0: &LabeledState,
    sigma: &[usize],
    times: &[f64],
    record_jumps: bool,
    rng: &mut R,
) -> Result<CouplingTrajectory> {
    check_times(times)?;
    let n = x0.len();
    let mut seen = vec![false; n];
    if sigma.len() != n || sigma.iter().any(|&r| r >= n || std::mem::replace(&mut seen[r], true)) {
        return Err(Error::InvalidParams("priority must be a permutation of 0..n".into()));
    }
    let half = params.half_width();
    let mut engine = LabeledEngine::new(params, x0, true)?;
    let top = sigma.iter().position(|&r| r == 0).expect("permutation has rank 0");
    let mut indep = x0.positions.clone();
    let mut aux = x0.positions.clone();
    let mut jumps = if record_jumps { vec![JumpStreams::default(); n] } else { Vec::new() };
    let mut mismatches = 0u64;
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        engine.advance(t, rng, |mark, pos| {
            if pos[top] != indep[top] {
                mismatches += 1;
            }
            // (particle, displacement of its auxiliary walker)
            let moved: Option<(usize, i64)> = match (mark.left, mark.right) {
                (Some(i), Some(j)) => {
                    let (hi, lo) = if sigma[i] < sigma[j] { (i, j) } else { (j, i) };
                    if mark.active {
                        Some((hi, pos[lo] - pos[hi]))
                    } else {
                        Some((lo, -(pos[lo] - pos[hi])))
                    }
                }
                // A lone particle's walker copies the mark's direction,
                // also on the two bonds leaving the interval.
                (Some(i), None) => Some((i, 1)),
                (None, Some(j)) => Some((j, -1)),
                (None, None) => None,
            };
            if let Some((i, d)) = moved {
                let y = indep[i] + d;
                aux[i] = y;
                if record_jumps {
                    if d > 0 {
                        jumps[i].right.push(mark.time);
                    } else {
                        jumps[i].left.push(mark.time);
                    }
                }
                if (-half..=half).contains(&y) {
                    indep[i] = y;
                }
            }
        });
        if engine.positions()[top] != indep[top] {
            mismatches += 1;
        }
        states.push(CouplingState {
            time: t,
            stirring: LabeledState { positions: engine.positions().to_vec() },
            independent: LabeledState { positions: indep.clone() },
            auxiliary: LabeledState { positions: aux.clone() },
            priority: sigma.to_vec(),
        });
    }
    Ok(CouplingTrajectory { states, jumps, top_priority_mismatches: mismatches })
}

pub fn run_coupling(
    params: &LatticeParams,
    x0: &LabeledState,
    sigma: &[usize],
    times: &[f64],
    seed: u64,
) -> Result<CouplingTrajectory> {
    run_coupling_rng(params, x0, sigma, times, true, &mut replica_rng(seed, 0))
}
