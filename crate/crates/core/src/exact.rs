//! Exact master-equation solvers for small lattices.
//!
//! Configurations of `[-N, N]` are enumerated as integers, bit `i` being the
//! occupation of site `i - N`. The generator is stored as two sparse rate
//! tables, the stirring part `eps^-2 L_0` and the reservoir part
//! `eps^-1 L_b`, and `exp(t L)` is applied by uniformization.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{poisson_weights, poisson_window};
use crate::lattice::{LatticeParams, Side};
use crate::pde::{boundary_drift, discrete_laplacian, RhoField, RhoSolver};
use crate::quad::GaussLegendre;
use crate::sim::{InitialCondition, ParticleConfig};

/// Largest `N` accepted by [`build_generator`].
pub const MAX_GENERATOR_N: i64 = 7;
/// Largest `N` accepted by [`ExactModel`].
pub const MAX_V_N: i64 = 5;
/// Largest `N` accepted by [`check_evolution_identity`].
pub const MAX_IDENTITY_N: i64 = 4;
/// Total uniformization truncation error of [`evolve_distribution`].
pub const EVOLVE_TAIL: f64 = 1e-10;
/// Tolerance of the density solves behind exact v-functions.
pub const RHO_TOL: f64 = 1e-11;
/// Truncation error used inside finite differences.
const FD_TAIL: f64 = 1e-15;

/// Enumeration of the `2^(2N+1)` configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpace {
    params: LatticeParams,
}

impl StateSpace {
    pub fn new(params: &LatticeParams) -> Result<Self> {
        if params.half_width() > MAX_GENERATOR_N {
            return Err(Error::TooLarge(format!(
                "exact state space needs N <= {MAX_GENERATOR_N}, got {}",
                params.half_width()
            )));
        }
        Ok(StateSpace { params: *params })
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        1 << self.params.num_sites()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn config(&self, index: usize) -> ParticleConfig {
        ParticleConfig::from_index(&self.params, index as u64)
    }

    pub fn index(&self, eta: &ParticleConfig) -> Result<usize> {
        if eta.half_width() != self.params.half_width() {
            return Err(Error::InvalidParams("configuration and lattice sizes differ".into()));
        }
        Ok(eta.index() as usize)
    }

    /// Bit of site `x`.
    #[inline]
    pub fn bit(&self, x: i64) -> usize {
        1 << (x + self.params.half_width())
    }

    /// Index of the configuration occupying exactly `sites`.
    pub fn set_index(&self, sites: &[i64]) -> Result<usize> {
        let mut i = 0;
        for &x in sites {
            self.params.site(x)?;
            i |= self.bit(x);
        }
        Ok(i)
    }

    /// Occupied sites of a configuration index, increasing.
    pub fn sites_of(&self, index: usize) -> Vec<i64> {
        let n = self.params.half_width();
        (0..self.params.num_sites()).filter(|i| index >> i & 1 == 1).map(|i| i as i64 - n).collect()
    }

    pub fn point_mass(&self, eta: &ParticleConfig) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.len()];
        p[self.index(eta)?] = 1.0;
        Ok(p)
    }

    /// Probability vector of a product measure with marginals `m`.
    pub fn product_measure(&self, m: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.params.num_sites() || m.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParams("product marginals must be 2N+1 values in [0, 1]".into()));
        }
        Ok((0..self.len())
            .map(|i| {
                m.iter()
                    .enumerate()
                    .map(|(b, &p)| if i >> b & 1 == 1 { p } else { 1.0 - p })
                    .product()
            })
            .collect())
    }

    pub fn initial(&self, eta0: &InitialCondition) -> Result<Vec<f64>> {
        eta0.validate(&self.params)?;
        match eta0 {
            InitialCondition::Deterministic(c) => self.point_mass(c),
            InitialCondition::Product(m) => self.product_measure(m),
        }
    }
}

/// Kind of a transition of the full dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// Exchange across the bond `{x, x+1}`.
    Exchange(i64),
    Birth,
    Death,
}

/// Which part of the generator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Full,
    /// `eps^-2 L_0`.
    Exchange,
    /// `eps^-1 L_b`.
    Boundary,
}

/// Off-diagonal rates in compressed rows.
#[derive(Debug, Clone, PartialEq)]
struct SparseRates {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    rates: Vec<f64>,
    kinds: Vec<Transition>,
}

impl SparseRates {
    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64, Transition)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        r.map(move |e| (self.cols[e] as usize, self.rates[e], self.kinds[e]))
    }

    fn exit(&self, i: usize) -> f64 {
        self.rates[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }
}

/// Sparse rate matrix of the full dynamics on a [`StateSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    space: StateSpace,
    exchange: SparseRates,
    boundary: SparseRates,
    /// Diagonal of the full generator.
    diag: Vec<f64>,
}

/// Rate matrix of `eps^-2 L_0 + eps^-1 L_b`; refuses `N > 7`.
pub fn build_generator(params: &LatticeParams) -> Result<GeneratorMatrix> {
    let space = StateSpace::new(params)?;
    let n = params.half_width();
    let size = space.len();
    let exchange_rate = 0.5 * params.diffusive_scale();
    let reservoir_rate = 0.5 * params.inv_epsilon() * params.rate();
    let mut ex = SparseRates { row_ptr: vec![0], cols: vec![], rates: vec![], kinds: vec![] };
    let mut bd = SparseRates { row_ptr: vec![0], cols: vec![], rates: vec![], kinds: vec![] };
    for i in 0..size {
        for x in -n..n {
            let (a, b) = (space.bit(x), space.bit(x + 1));
            if (i & a == 0) != (i & b == 0) {
                ex.cols.push((i ^ a ^ b) as u32);
                ex.rates.push(exchange_rate);
                ex.kinds.push(Transition::Exchange(x));
            }
        }
        ex.row_ptr.push(ex.cols.len());
        if reservoir_rate > 0.0 {
            let mut eta = space.config(i);
            if eta.birth(params) {
                bd.cols.push(eta.index() as u32);
                bd.rates.push(reservoir_rate);
                bd.kinds.push(Transition::Birth);
            }
            let mut eta = space.config(i);
            if eta.death(params) {
                bd.cols.push(eta.index() as u32);
                bd.rates.push(reservoir_rate);
                bd.kinds.push(Transition::Death);
            }
        }
        bd.row_ptr.push(bd.cols.len());
    }
    let diag = (0..size).map(|i| -(ex.exit(i) + bd.exit(i))).collect();
    Ok(GeneratorMatrix { space, exchange: ex, boundary: bd, diag })
}

impl GeneratorMatrix {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn params(&self) -> &LatticeParams {
        &self.space.params
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Off-diagonal transitions out of state `i` in the chosen part.
    pub fn transitions(&self, i: usize, part: Part) -> Vec<(usize, f64, Transition)> {
        let mut out = Vec::new();
        if part != Part::Boundary {
            out.extend(self.exchange.row(i));
        }
        if part != Part::Exchange {
            out.extend(self.boundary.row(i));
        }
        out
    }

    /// Diagonal entry of the chosen part at state `i`.
    pub fn diagonal(&self, i: usize, part: Part) -> f64 {
        match part {
            Part::Full => self.diag[i],
            Part::Exchange => -self.exchange.exit(i),
            Part::Boundary => -self.boundary.exit(i),
        }
    }

    /// Row sum of the full generator at state `i`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.exchange.exit(i) + self.boundary.exit(i)
    }

    /// `(p Q)(j) = sum_i p(i) Q(i, j)`.
    pub fn apply_forward(&self, p: &[f64], part: Part) -> Vec<f64> {
        let mut out: Vec<f64> = (0..self.len()).map(|i| p[i] * self.diagonal(i, part)).collect();
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (j, r, _) in self.transitions(i, part) {
                out[j] += pi * r;
            }
        }
        out
    }

    /// `(Q f)(i) = sum_j Q(i, j) f(j)`.
    pub fn apply(&self, f: &[f64], part: Part) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let fi = f[i];
                self.diagonal(i, part) * fi
                    + self.transitions(i, part).iter().map(|&(j, r, _)| r * f[j]).sum::<f64>()
            })
            .collect()
    }

    /// Largest exit rate, the uniformization constant.
    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, d| m.max(-d))
    }

    fn check_vector(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::InvalidParams(format!(
                "vector has {} entries, state space has {}",
                v.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// One step of `P = I + Q/Lambda`, forward or backward.
    fn uniform_step(&self, v: &[f64], lambda: f64, forward: bool, out: &mut [f64]) {
        if forward {
            for (i, o) in out.iter_mut().enumerate() {
                *o = v[i] * (1.0 + self.diag[i] / lambda);
            }
            for (i, &vi) in v.iter().enumerate() {
                if vi == 0.0 {
                    continue;
                }
                for (j, r, _) in self.exchange.row(i).chain(self.boundary.row(i)) {
                    out[j] += vi * r / lambda;
                }
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                let jumps: f64 = self.exchange.row(i).chain(self.boundary.row(i)).map(|(j, r, _)| r * v[j]).sum();
                *o = v[i] * (1.0 + self.diag[i] / lambda) + jumps / lambda;
            }
        }
    }

    fn uniformize(&self, v0: &[f64], t: f64, tail: f64, forward: bool) -> Result<Vec<f64>> {
        self.check_vector(v0)?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("evolution time must be >= 0, got {t}")));
        }
        if !(tail > 0.0 && tail < 1.0) {
            return Err(Error::InvalidParams(format!("truncation error must lie in (0, 1), got {tail}")));
        }
        let lambda = self.max_exit_rate();
        if t == 0.0 || lambda == 0.0 {
            return Ok(v0.to_vec());
        }
        let mu = lambda * t;
        let (lo, hi) = poisson_window(mu, tail / 2.0);
        let w = poisson_weights(mu, lo, hi);
        let mut cur = v0.to_vec();
        let mut next = vec![0.0; cur.len()];
        let mut acc = vec![0.0; cur.len()];
        for k in 0..=hi {
            if k >= lo {
                let wk = w[k - lo];
                acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += wk * c);
            }
            if k < hi {
                self.uniform_step(&cur, lambda, forward, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
        }
        Ok(acc)
    }
}

/// `p0 exp(t L)` with truncation error below [`EVOLVE_TAIL`].
pub fn evolve_distribution(gen: &GeneratorMatrix, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    let s: f64 = p0.iter().sum();
    if (s - 1.0).abs() > 1e-9 || p0.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidParams(format!("initial vector is not a distribution (sum {s})")));
    }
    gen.uniformize(p0, t, EVOLVE_TAIL, true)
}

/// [`evolve_distribution`] with an explicit truncation error.
pub fn evolve_distribution_with(gen: &GeneratorMatrix, p0: &[f64], t: f64, tail: f64) -> Result<Vec<f64>> {
    gen.uniformize(p0, t, tail, true)
}

/// `exp(t L) f`, the expectation of `f(eta_t)` from every start.
pub fn evolve_observable(gen: &GeneratorMatrix, f: &[f64], t: f64) -> Result<Vec<f64>> {
    gen.uniformize(f, t, EVOLVE_TAIL, false)
}

/// `E[prod_{x in X} eta(x)]` under `p`.
pub fn occupation_moment(space: &StateSpace, p: &[f64], x: &[i64]) -> Result<f64> {
    let mask = space.set_index(x)?;
    Ok(p.iter().enumerate().filter(|(i, _)| i & mask == mask).map(|(_, q)| q).sum())
}

/// Law of the stirring set process, `P(X ->s Y)` for every `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetKernel {
    pub time: f64,
    pub start: Vec<i64>,
    probs: BTreeMap<Vec<i64>, f64>,
}

impl SetKernel {
    pub fn get(&self, y: &[i64]) -> f64 {
        let mut key = y.to_vec();
        key.sort_unstable();
        self.probs.get(&key).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<i64>, f64)> {
        self.probs.iter().map(|(k, v)| (k, *v))
    }

    /// `sum_{Y contains W} P(X ->s Y)`.
    pub fn containing(&self, w: &[i64]) -> f64 {
        self.probs.iter().filter(|(y, _)| w.iter().all(|x| y.contains(x))).map(|(_, p)| p).sum()
    }
}

/// Stirring dynamics (`j = 0`) on a small lattice for set-valued questions.
#[derive(Debug, Clone)]
pub struct Stirring {
    gen: GeneratorMatrix,
}

impl Stirring {
    pub fn new(params: &LatticeParams) -> Result<Self> {
        Ok(Stirring { gen: build_generator(&params.with_rate(0.0)?)? })
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.gen
    }

    pub fn kernel(&self, x: &[i64], s: f64) -> Result<SetKernel> {
        let space = self.gen.space();
        let mut start = x.to_vec();
        start.sort_unstable();
        if start.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain(format!("sites {x:?} are not distinct")));
        }
        let mut p0 = vec![0.0; space.len()];
        p0[space.set_index(&start)?] = 1.0;
        let p = self.gen.uniformize(&p0, s, FD_TAIL, true)?;
        let probs = p
            .iter()
            .enumerate()
            .filter(|(i, _)| i.count_ones() as usize == start.len())
            .map(|(i, &q)| (space.sites_of(i), q))
            .collect();
        Ok(SetKernel { time: s, start, probs })
    }
}

/// Exact `P(X ->s ·)` for the stirring set process.
pub fn set_kernel(params: &LatticeParams, x: &[i64], s: f64) -> Result<SetKernel> {
    Stirring::new(params)?.kernel(x, s)
}

/// Both sides of duality computed exactly: the forward moment
/// `E[prod_{x in X} eta(x, t) | eta_0]` and the dual expectation
/// `E[prod_{x in X(t)} eta_0(x) | X(0) = X]`.
pub fn exact_duality(stirring: &Stirring, x: &[i64], eta0: &ParticleConfig, t: f64) -> Result<(f64, f64)> {
    let gen = stirring.generator();
    let space = gen.space();
    let p = evolve_distribution(gen, &space.point_mass(eta0)?, t)?;
    let lhs = occupation_moment(space, &p, x)?;
    let k = stirring.kernel(x, t)?;
    let rhs = k.iter().filter(|(y, _)| y.iter().all(|&s| eta0.get(s))).map(|(_, q)| q).sum();
    Ok((lhs, rhs))
}

/// Both sides of the pair-adjacency bound by independent walkers:
/// `P_{y1,y2}[|x1(s) - x2(s)| = 1]` and
/// `sum_x P_{y1}[x1(s) in {x, x+1}] P_{y2}[x2(s) in {x, x+1}]`.
pub fn liggett_pair(stirring: &Stirring, y1: i64, y2: i64, s: f64) -> Result<(f64, f64)> {
    let pair = stirring.kernel(&[y1, y2], s)?;
    let lhs = pair.iter().filter(|(y, _)| y[1] - y[0] == 1).map(|(_, q)| q).sum();
    let k1 = stirring.kernel(&[y1], s)?;
    let k2 = stirring.kernel(&[y2], s)?;
    let n = stirring.generator().params().half_width();
    let rhs = (-n..n)
        .map(|x| (k1.get(&[x]) + k1.get(&[x + 1])) * (k2.get(&[x]) + k2.get(&[x + 1])))
        .sum();
    Ok((lhs, rhs))
}

/// Largest `P(X ->s W u Z) - P(X(s) contains W) P(X(s) contains Z)` over all
/// targets and all splits into disjoint nonempty `W`, `Z`. Non-positive when
/// the negative correlation inequality holds.
pub fn andjel_violation(stirring: &Stirring, x: &[i64], s: f64) -> Result<f64> {
    let k = stirring.kernel(x, s)?;
    let mut worst = f64::NEG_INFINITY;
    for (y, p) in k.iter() {
        let m = y.len();
        for mask in 1..(1usize << m) - 1 {
            let w: Vec<i64> = (0..m).filter(|b| mask >> b & 1 == 1).map(|b| y[b]).collect();
            let z: Vec<i64> = (0..m).filter(|b| mask >> b & 1 == 0).map(|b| y[b]).collect();
            worst = worst.max(p - k.containing(&w) * k.containing(&z));
        }
    }
    Ok(worst)
}

/// Sorted copy of a site tuple, refusing repeated or outside sites.
fn canonical(params: &LatticeParams, x: &[i64]) -> Result<Vec<i64>> {
    for &s in x {
        params.site(s).map_err(|_| Error::Domain(format!("site {s} outside [-N, N]")))?;
    }
    let mut key = x.to_vec();
    key.sort_unstable();
    if key.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Domain(format!("v-functions need distinct sites, got {x:?}")));
    }
    Ok(key)
}

/// `E[prod_{x in X} (eta(x) - rho(x))]` under `p`.
fn centered_moment(space: &StateSpace, p: &[f64], rho: &RhoField, x: &[i64]) -> f64 {
    let bits: Vec<(usize, f64)> = x.iter().map(|&s| (space.bit(s), rho.at(s))).collect();
    p.iter()
        .enumerate()
        .filter(|(_, q)| **q != 0.0)
        .map(|(i, q)| q * bits.iter().map(|&(b, r)| if i & b != 0 { 1.0 - r } else { -r }).product::<f64>())
        .sum()
}

/// Exact v-functions `v(X, t)` at one time, keyed by sorted site tuples.
/// The empty tuple carries the convention `v(empty) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VFunctionTable {
    pub time: f64,
    values: BTreeMap<Vec<i64>, f64>,
}

impl VFunctionTable {
    pub fn new(time: f64) -> Self {
        let mut values = BTreeMap::new();
        values.insert(Vec::new(), 1.0);
        VFunctionTable { time, values }
    }

    pub fn insert(&mut self, x: &[i64], v: f64) {
        let mut key = x.to_vec();
        key.sort_unstable();
        self.values.insert(key, v);
    }

    /// Lookup in any order of the sites.
    pub fn get(&self, x: &[i64]) -> Option<f64> {
        let mut key = x.to_vec();
        key.sort_unstable();
        self.values.get(&key).copied()
    }

    fn need(&self, x: &[i64]) -> Result<f64> {
        self.get(x).ok_or_else(|| Error::Domain(format!("v({x:?}) missing from the table")))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<i64>, f64)> {
        self.values.iter().map(|(k, v)| (k, *v))
    }
}

fn without(x: &[i64], drop: &[i64]) -> Vec<i64> {
    x.iter().copied().filter(|s| !drop.contains(s)).collect()
}

/// `(L_0 v)(X) = 1/2 sum_{bonds b} [v(X^b) - v(X)]`; bonds with both or no
/// end in `X` do not contribute.
pub fn stirring_l0(vtab: &VFunctionTable, params: &LatticeParams, x: &[i64]) -> Result<f64> {
    let key = canonical(params, x)?;
    let v = vtab.need(&key)?;
    let n = params.half_width();
    let mut sum = 0.0;
    for a in -n..n {
        let (ia, ib) = (key.contains(&a), key.contains(&(a + 1)));
        if ia != ib {
            let moved: Vec<i64> = key
                .iter()
                .map(|&s| if s == a { a + 1 } else if s == a + 1 { a } else { s })
                .collect();
            sum += vtab.need(&moved)? - v;
        }
    }
    Ok(0.5 * sum)
}

/// `(A v)(X) = sum_{x, y = x+1 in X} [rho(x) - rho(y)] [v(X\x) - v(X\y)]
/// - 1/2 [rho(x) - rho(y)]^2 v(X\{x,y})`, zero when `|X| < 2`.
pub fn a_operator(vtab: &VFunctionTable, rho: &RhoField, x: &[i64]) -> Result<f64> {
    let key = canonical(&rho.params, x)?;
    if key.len() < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for w in key.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b != a + 1 {
            continue;
        }
        let d = rho.at(a) - rho.at(b);
        if d == 0.0 {
            continue;
        }
        sum += d * (vtab.need(&without(&key, &[a]))? - vtab.need(&without(&key, &[b]))?)
            - 0.5 * d * d * vtab.need(&without(&key, &[a, b]))?;
    }
    Ok(sum)
}

/// All subsets of `[-N, N]` with at most `n` sites, increasing.
fn subsets(params: &LatticeParams, n: usize) -> Vec<Vec<i64>> {
    let sites: Vec<i64> = params.sites().collect();
    let mut out = vec![Vec::new()];
    let mut frontier = vec![(Vec::new(), 0usize)];
    for _ in 0..n {
        let mut next = Vec::new();
        for (s, from) in frontier {
            for (i, &x) in sites.iter().enumerate().skip(from) {
                let mut t: Vec<i64> = s.clone();
                t.push(x);
                out.push(t.clone());
                next.push((t, i + 1));
            }
        }
        frontier = next;
    }
    out
}

/// Exact law, density and v-functions of the full dynamics started from a
/// given initial law, on `N <= 5`.
pub struct ExactModel {
    gen: GeneratorMatrix,
    p0: Vec<f64>,
    rho0: RhoField,
    solver: RhoSolver,
}

/// Distribution and density at one time.
#[derive(Debug, Clone)]
pub struct ExactState {
    pub time: f64,
    pub distribution: Vec<f64>,
    pub rho: RhoField,
}

impl ExactModel {
    pub fn new(params: &LatticeParams, eta0: &InitialCondition) -> Result<Self> {
        if params.half_width() > MAX_V_N {
            return Err(Error::TooLarge(format!(
                "exact v-functions need N <= {MAX_V_N}, got {}",
                params.half_width()
            )));
        }
        let gen = build_generator(params)?;
        let p0 = gen.space().initial(eta0)?;
        let rho0 = RhoField::new(*params, 0.0, eta0.density())?;
        Ok(ExactModel { gen, p0, rho0, solver: RhoSolver::new(params) })
    }

    pub fn params(&self) -> &LatticeParams {
        self.gen.params()
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.gen
    }

    pub fn initial(&self) -> &[f64] {
        &self.p0
    }

    pub fn state(&self, t: f64) -> Result<ExactState> {
        Ok(ExactState {
            time: t,
            distribution: evolve_distribution(&self.gen, &self.p0, t)?,
            rho: self.solver.evolve(&self.rho0, t, RHO_TOL)?,
        })
    }

    /// State at `t + h`, advanced from `base`.
    fn advance(&self, base: &ExactState, h: f64) -> Result<ExactState> {
        Ok(ExactState {
            time: base.time + h,
            distribution: self.gen.uniformize(&base.distribution, h, FD_TAIL, true)?,
            rho: self.solver.evolve(&base.rho, h, RHO_TOL)?,
        })
    }

    pub fn v_at(&self, state: &ExactState, x: &[i64]) -> Result<f64> {
        let key = canonical(self.params(), x)?;
        Ok(centered_moment(self.gen.space(), &state.distribution, &state.rho, &key))
    }

    /// `v(X, t) = E[prod (eta(x, t) - rho(x, t))]`.
    pub fn v(&self, x: &[i64], t: f64) -> Result<f64> {
        canonical(self.params(), x)?;
        self.v_at(&self.state(t)?, x)
    }

    /// Every `v(X, t)` with `|X| <= n`.
    pub fn table_at(&self, state: &ExactState, n: usize) -> VFunctionTable {
        let mut tab = VFunctionTable::new(state.time);
        let space = self.gen.space();
        for s in subsets(self.params(), n).into_iter().skip(1) {
            let v = centered_moment(space, &state.distribution, &state.rho, &s);
            tab.insert(&s, v);
        }
        tab
    }

    pub fn table(&self, t: f64, n: usize) -> Result<VFunctionTable> {
        Ok(self.table_at(&self.state(t)?, n))
    }

    /// Right-hand side of the density equation at `rho`.
    fn rho_rate(&self, rho: &RhoField) -> Result<Vec<f64>> {
        let p = self.params();
        let half = 0.5 * p.diffusive_scale();
        let amp = 0.5 * p.inv_epsilon() * p.rate();
        let mut out: Vec<f64> = discrete_laplacian(&rho.values).iter().map(|d| half * d).collect();
        if amp > 0.0 {
            for x in p.sites() {
                let i = p.index(x);
                if p.in_reservoir(x, Side::Plus) {
                    out[i] += amp * boundary_drift(p, &rho.values, Side::Plus, x)?;
                }
                if p.in_reservoir(x, Side::Minus) {
                    out[i] -= amp * boundary_drift(p, &rho.values, Side::Minus, x)?;
                }
            }
        }
        Ok(out)
    }

    /// `d/dt v(X, t)` from the generator and the density equation.
    pub fn v_derivative_at(&self, state: &ExactState, x: &[i64]) -> Result<f64> {
        let key = canonical(self.params(), x)?;
        let space = self.gen.space();
        let dp = self.gen.apply_forward(&state.distribution, Part::Full);
        let mut d = centered_moment(space, &dp, &state.rho, &key);
        let drho = self.rho_rate(&state.rho)?;
        for &s in &key {
            let rest = without(&key, &[s]);
            d -= drho[self.params().index(s)] * centered_moment(space, &state.distribution, &state.rho, &rest);
        }
        Ok(d)
    }

    /// `d/dt v(X, t)` by centered differences of step `dt` and `dt/2`
    /// combined by Richardson extrapolation; requires `t > dt`.
    pub fn v_time_derivative(&self, x: &[i64], t: f64, dt: f64) -> Result<f64> {
        canonical(self.params(), x)?;
        if !(dt > 0.0 && t > dt) {
            return Err(Error::InvalidParams(format!("need 0 < dt < t, got dt = {dt}, t = {t}")));
        }
        let base = self.state(t - dt)?;
        let at = |h: f64| -> Result<f64> { self.v_at(&self.advance(&base, h)?, x) };
        let (vm1, vm2, vp2, vp1) = (self.v_at(&base, x)?, at(0.5 * dt)?, at(1.5 * dt)?, at(2.0 * dt)?);
        let d1 = (vp1 - vm1) / (2.0 * dt);
        let d2 = (vp2 - vm2) / dt;
        Ok((4.0 * d2 - d1) / 3.0)
    }
}

/// Exact `v(X, t)` for a deterministic start.
pub fn exact_v(params: &LatticeParams, x: &[i64], t: f64, eta0: &ParticleConfig) -> Result<f64> {
    ExactModel::new(params, &InitialCondition::Deterministic(eta0.clone()))?.v(x, t)
}

/// Residual `|dv/dt - eps^-2 (L_0 v + A v)|` at `(X, t)`, the time
/// derivative taken by finite differences. Refuses `X` touching a
/// reservoir and `N > 4`.
pub fn check_evolution_identity(model: &ExactModel, x: &[i64], t: f64, dt: f64) -> Result<f64> {
    let p = *model.params();
    if p.half_width() > MAX_IDENTITY_N {
        return Err(Error::TooLarge(format!(
            "evolution identity check needs N <= {MAX_IDENTITY_N}, got {}",
            p.half_width()
        )));
    }
    let key = canonical(&p, x)?;
    if key.is_empty() {
        return Err(Error::InvalidParams("empty site set".into()));
    }
    if let Some(s) = key.iter().find(|&&s| p.in_any_reservoir(s)) {
        return Err(Error::Refused(format!("site {s} lies in a reservoir")));
    }
    let deriv = model.v_time_derivative(&key, t, dt)?;
    let state = model.state(t)?;
    let tab = model.table_at(&state, key.len());
    let rhs = p.diffusive_scale() * (stirring_l0(&tab, &p, &key)? + a_operator(&tab, &state.rho, &key)?);
    Ok((deriv - rhs).abs())
}

/// Both sides of the integral form
/// `v(X, t) = int_0^t sum_Y P(X ->s Y) C(Y, t - s) ds`,
/// `C = dv/dt - eps^-2 L_0 v`, by `nodes`-point Gauss-Legendre in `s`.
pub fn integral_form(model: &ExactModel, x: &[i64], t: f64, nodes: usize) -> Result<(f64, f64)> {
    let p = *model.params();
    let key = canonical(&p, x)?;
    let stirring = Stirring::new(&p)?;
    let lhs = model.v(&key, t)?;
    let mut rhs = 0.0;
    for (s, w) in GaussLegendre::new(nodes).points(0.0, t) {
        let kernel = stirring.kernel(&key, s)?;
        let state = model.state(t - s)?;
        let tab = model.table_at(&state, key.len());
        let mut inner = 0.0;
        for (y, q) in kernel.iter() {
            if q == 0.0 {
                continue;
            }
            let c = model.v_derivative_at(&state, y)? - p.diffusive_scale() * stirring_l0(&tab, &p, y)?;
            inner += q * c;
        }
        rhs += w * inner;
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: i64, k: i64, j: f64) -> LatticeParams {
        LatticeParams::new(n, k, j).unwrap()
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let g = build_generator(&params(3, 2, 1.5)).unwrap();
        assert_eq!(g.len(), 128);
        for i in 0..g.len() {
            assert!(g.row_sum(i).abs() < 1e-12);
            assert!(g.transitions(i, Part::Full).iter().all(|t| t.1 >= 0.0));
        }
    }

    #[test]
    fn exchange_part_is_symmetric() {
        let g = build_generator(&params(1, 1, 0.0)).unwrap();
        assert_eq!(g.len(), 8);
        for i in 0..8 {
            for (j, r, _) in g.transitions(i, Part::Exchange) {
                let back = g.transitions(j, Part::Exchange);
                assert!(back.iter().any(|&(k, rb, _)| k == i && rb == r));
            }
        }
    }

    #[test]
    fn full_plus_reservoir_has_no_birth() {
        let p = params(2, 1, 1.0);
        let g = build_generator(&p).unwrap();
        let eta: ParticleConfig = "00001".parse().unwrap();
        let kinds: Vec<Transition> = g.transitions(eta.index() as usize, Part::Boundary).iter().map(|t| t.2).collect();
        assert!(!kinds.contains(&Transition::Birth));
        let eta: ParticleConfig = "00000".parse().unwrap();
        let kinds: Vec<Transition> = g.transitions(eta.index() as usize, Part::Boundary).iter().map(|t| t.2).collect();
        assert_eq!(kinds, vec![Transition::Birth]);
    }

    #[test]
    fn refuses_large_lattices() {
        assert!(matches!(build_generator(&params(8, 1, 0.0)), Err(Error::TooLarge(_))));
        assert!(ExactModel::new(&params(6, 1, 0.0), &InitialCondition::Product(vec![0.5; 13])).is_err());
    }

    #[test]
    fn zero_time_is_identity() {
        let g = build_generator(&params(2, 1, 1.0)).unwrap();
        let mut p0 = vec![0.0; 32];
        p0[5] = 0.25;
        p0[17] = 0.75;
        assert_eq!(evolve_distribution(&g, &p0, 0.0).unwrap(), p0);
    }

    #[test]
    fn forward_and_backward_agree() {
        let g = build_generator(&params(2, 1, 2.0)).unwrap();
        let f: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let ef = evolve_observable(&g, &f, 0.3).unwrap();
        for start in [0, 7, 21] {
            let mut p0 = vec![0.0; 32];
            p0[start] = 1.0;
            let p = evolve_distribution(&g, &p0, 0.3).unwrap();
            let mean: f64 = p.iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((mean - ef[start]).abs() < 1e-10);
        }
    }

    #[test]
    fn subsets_are_counted() {
        let s = subsets(&params(2, 1, 0.0), 2);
        assert_eq!(s.len(), 1 + 5 + 10);
        assert!(s.iter().all(|x| x.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn a_operator_zero_cases() {
        let p = params(3, 1, 1.0);
        let model = ExactModel::new(&p, &InitialCondition::Deterministic("1010101".parse().unwrap())).unwrap();
        let st = model.state(0.1).unwrap();
        let tab = model.table_at(&st, 3);
        assert_eq!(a_operator(&tab, &st.rho, &[0]).unwrap(), 0.0);
        assert_eq!(a_operator(&tab, &st.rho, &[-2, 0, 2]).unwrap(), 0.0);
        let flat = RhoField::constant(p, 0.3).unwrap();
        assert_eq!(a_operator(&tab, &flat, &[-1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn repeated_sites_are_a_domain_error() {
        let p = params(2, 1, 0.0);
        let eta: ParticleConfig = "10101".parse().unwrap();
        assert!(matches!(exact_v(&p, &[0, 0], 0.1, &eta), Err(Error::Domain(_))));
    }

    #[test]
    fn identity_refuses_reservoir_sites() {
        let p = params(3, 1, 1.0);
        let model = ExactModel::new(&p, &InitialCondition::Deterministic("1010101".parse().unwrap())).unwrap();
        assert!(matches!(check_evolution_identity(&model, &[2, 3], 0.2, 1e-4), Err(Error::Refused(_))));
    }
}
