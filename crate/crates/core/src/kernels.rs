//! Transition kernels of the free and reflected continuous-time walks, the
//! Gaussian comparison kernel and the theta-type kernels of the macroscopic
//! boundary system.
//!
//! Time enters the free kernel only through the mean jump count
//! `lambda = eps^-2 t`: the walk jumps left and right at rate 1/2 each in
//! units of `lambda`. The free kernel is computed by uniformization at rate
//! `2 lambda`: a lazy step moves by `+1`, `0`, `-1` with probabilities
//! `1/4, 1/2, 1/4`, so after `m` lazy steps the displacement law is
//! `C(2m, m+k) / 4^m`. Mixing over `m ~ Poisson(2 lambda)` gives the kernel with
//! an explicit bound on the discarded Poisson and displacement tails.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::{LatticeParams, Side};
use crate::quad::Adaptive;

/// Mass discarded from each Poisson tail of the uniformization.
const POISSON_TAIL: f64 = 1e-17;
/// Mass discarded from the displacement tail `|dx| > kmax`.
const DISPLACEMENT_TAIL: f64 = 1e-17;

/// Largest mean jump count accepted by [`FreeWalk::new`].
pub const MAX_LAMBDA: f64 = 1e5;

/// `G_t(r) = exp(-r^2 / 2t) / sqrt(2 pi t)`.
pub fn gaussian_kernel(t: f64, r: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("Gaussian kernel needs t > 0, got {t}")));
    }
    Ok(gaussian(t, r))
}

#[inline]
pub(crate) fn gaussian(t: f64, r: f64) -> f64 {
    (-r * r / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// Summation window `[lo, hi]` of a Poisson(`mu`) mixture with at most `tail`
/// mass outside on each side, by the Chernoff bounds.
pub(crate) fn poisson_window(mu: f64, tail: f64) -> (usize, usize) {
    if mu == 0.0 {
        return (0, 0);
    }
    let log_tail = tail.ln();
    // Upper: P(X >= m) <= exp(-mu) (e mu / m)^m for m > mu.
    let mut hi = (mu + 1.0).ceil();
    loop {
        let bound = -mu + hi * (1.0 + (mu / hi).ln());
        if bound < log_tail {
            break;
        }
        hi += (mu.sqrt()).max(1.0);
    }
    // Lower: P(X <= m) <= exp(-mu) (e mu / m)^m for m < mu.
    let mut lo = (mu - 1.0).floor().max(0.0);
    while lo > 0.0 {
        let bound = -mu + lo * (1.0 + (mu / lo).ln());
        if bound < log_tail {
            break;
        }
        lo = (lo - mu.sqrt().max(1.0)).max(0.0);
    }
    (lo as usize, hi as usize)
}

/// Normalized Poisson weights on `[lo, hi]`, built outward from the mode by
/// ratios so that no factorials are formed.
pub(crate) fn poisson_weights(mu: f64, lo: usize, hi: usize) -> Vec<f64> {
    let mode = (mu.floor() as usize).clamp(lo, hi);
    let mut w = vec![0.0; hi - lo + 1];
    w[mode - lo] = 1.0;
    for m in mode + 1..=hi {
        w[m - lo] = w[m - 1 - lo] * mu / m as f64;
    }
    for m in (lo..mode).rev() {
        w[m - lo] = w[m + 1 - lo] * (m + 1) as f64 / mu;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Smallest `k` with the Bernstein bound `2 exp(-k^2 / (2 (lambda + k/3)))`
/// below the displacement tail budget.
fn displacement_cutoff(lambda: f64) -> usize {
    let target = (DISPLACEMENT_TAIL / 2.0).ln();
    let mut k = 1.0_f64;
    while -k * k / (2.0 * (lambda + k / 3.0)) > target {
        k += 1.0;
    }
    k as usize
}

/// Free-walk displacement law `Q(dx)` for a fixed mean jump count.
#[derive(Debug, Clone)]
pub struct FreeWalk {
    lambda: f64,
    /// `probs[k] = Q(k) = Q(-k)` for `0 <= k <= kmax`.
    probs: Vec<f64>,
    tail_bound: f64,
}

impl FreeWalk {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("mean jump count must be >= 0, got {lambda}")));
        }
        if lambda > MAX_LAMBDA {
            return Err(Error::TooLarge(format!(
                "mean jump count {lambda} exceeds supported maximum {MAX_LAMBDA}"
            )));
        }
        if lambda == 0.0 {
            return Ok(FreeWalk { lambda, probs: vec![1.0], tail_bound: 0.0 });
        }
        let mu = 2.0 * lambda;
        let (lo, hi) = poisson_window(mu, POISSON_TAIL);
        let weights = poisson_weights(mu, lo, hi);
        let kmax = displacement_cutoff(lambda);
        let width = kmax + 2;
        // Lazy-step law on k >= 0 (symmetric), truncated at `width`.
        let mut step = vec![0.0; width + 1];
        let mut next = vec![0.0; width + 1];
        step[0] = 1.0;
        let mut probs = vec![0.0; kmax + 1];
        for m in 0..=hi {
            if m >= lo {
                let w = weights[m - lo];
                if w > 0.0 {
                    let reach = m.min(kmax);
                    for (k, p) in probs.iter_mut().enumerate().take(reach + 1) {
                        *p += w * step[k];
                    }
                }
            }
            if m == hi {
                break;
            }
            let reach = (m + 1).min(width);
            next[0] = 0.5 * step[0] + 0.5 * step[1];
            for k in 1..=reach {
                let right = if k < width { step[k + 1] } else { 0.0 };
                next[k] = 0.25 * step[k - 1] + 0.5 * step[k] + 0.25 * right;
            }
            std::mem::swap(&mut step, &mut next);
        }
        Ok(FreeWalk { lambda, probs, tail_bound: 2.0 * POISSON_TAIL + DISPLACEMENT_TAIL })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Displacements beyond this carry at most [`FreeWalk::tail_bound`] mass.
    pub fn kmax(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn prob(&self, dx: i64) -> f64 {
        self.probs.get(dx.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }
}

/// `Q(dx)` for mean jump count `lambda`.
pub fn free_walk_kernel(lambda: f64, dx: i64) -> Result<f64> {
    Ok(FreeWalk::new(lambda)?.prob(dx))
}

/// Dense table of the reflected-walk kernel `P_t(x, y)` on `[-N, N]`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    params: LatticeParams,
    time: f64,
    size: usize,
    values: Vec<f64>,
    /// Per-row inclusive column band holding all nonzero entries.
    bands: Vec<(usize, usize)>,
}

impl KernelTable {
    /// Kernel at macroscopic time `t` (mean jump count `N^2 t`).
    pub fn new(params: &LatticeParams, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("kernel time must be >= 0, got {t}")));
        }
        let walk = FreeWalk::new(params.diffusive_scale() * t)?;
        Ok(Self::from_walk(params, t, &walk))
    }

    /// Image sum over the preimages of each target site.
    pub fn from_walk(params: &LatticeParams, t: f64, walk: &FreeWalk) -> Self {
        let size = params.num_sites();
        let mut values = vec![0.0; size * size];
        let mut bands = Vec::with_capacity(size);
        let kmax = walk.kmax() as i64;
        for x in params.sites() {
            let row = params.index(x) * size;
            let mut lo = size - 1;
            let mut hi = 0;
            for d in -kmax..=kmax {
                let p = walk.prob(d);
                if p == 0.0 {
                    continue;
                }
                let col = params.index(params.reflect(x + d));
                values[row + col] += p;
                lo = lo.min(col);
                hi = hi.max(col);
            }
            bands.push((lo, hi.max(lo)));
        }
        KernelTable { params: *params, time: t, size, values, bands }
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    pub fn get(&self, x: i64, y: i64) -> f64 {
        self.values[self.params.index(x) * self.size + self.params.index(y)]
    }

    pub fn row(&self, x: i64) -> &[f64] {
        let r = self.params.index(x) * self.size;
        &self.values[r..r + self.size]
    }

    /// `(P f)(x) = sum_y P(x, y) f(y)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.size);
        (0..self.size)
            .map(|i| {
                let (lo, hi) = self.bands[i];
                let row = &self.values[i * self.size..(i + 1) * self.size];
                row[lo..=hi].iter().zip(&f[lo..=hi]).map(|(p, v)| p * v).sum()
            })
            .collect()
    }
}

/// `P_t(x, y)` for the walk reflected at `N + 1/2` and `-N - 1/2`.
pub fn reflected_walk_kernel(params: &LatticeParams, t: f64, x: i64, y: i64) -> Result<f64> {
    params.site(x)?;
    params.site(y)?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("kernel time must be >= 0, got {t}")));
    }
    let walk = FreeWalk::new(params.diffusive_scale() * t)?;
    let m = 2 * params.half_width() + 1;
    let kmax = walk.kmax() as i64;
    // Preimages of y: y + 2mk and (2N + 1 - y) + 2mk.
    let mut total = 0.0;
    for base in [y, 2 * params.half_width() + 1 - y] {
        let k_lo = (-kmax + x - base).div_euclid(2 * m) - 1;
        let k_hi = (kmax + x - base).div_euclid(2 * m) + 1;
        for k in k_lo..=k_hi {
            total += walk.prob(base + 2 * m * k - x);
        }
    }
    Ok(total)
}

/// Local-CLT comparison between the free kernel and the Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct LcltReport {
    pub lambda: f64,
    /// `lambda^(5/8)`, the edge of the comparison window.
    pub window: f64,
    /// `max sqrt(lambda) |Q - G| / G` over `|dx| <= window`.
    pub c1: f64,
    /// Relative error at `dx = 0`.
    pub mode_relative_error: f64,
    /// `max Q(dx)` over `|dx| > window`.
    pub tail_max: f64,
    /// `max Q(dx) exp(dx^2 / (4 lambda))` over `|dx| > window`.
    pub envelope_c2: f64,
}

pub fn lclt_comparison(lambda: f64) -> Result<LcltReport> {
    if !(lambda >= 25.0) {
        return Err(Error::Refused(format!(
            "local CLT comparison needs lambda >= 25, got {lambda}"
        )));
    }
    let walk = FreeWalk::new(lambda)?;
    let window = lambda.powf(0.625);
    let sq = lambda.sqrt();
    let mut c1: f64 = 0.0;
    let mut tail_max: f64 = 0.0;
    let mut envelope_c2: f64 = 0.0;
    for k in 0..=walk.kmax() as i64 {
        let q = walk.prob(k);
        let kf = k as f64;
        if kf <= window {
            let g = gaussian(lambda, kf);
            c1 = c1.max(sq * (q - g).abs() / g);
        } else {
            tail_max = tail_max.max(q);
            envelope_c2 = envelope_c2.max(q * (kf * kf / (4.0 * lambda)).exp());
        }
    }
    let g0 = gaussian(lambda, 0.0);
    Ok(LcltReport {
        lambda,
        window,
        c1,
        mode_relative_error: (walk.prob(0) - g0).abs() / g0,
        tail_max,
        envelope_c2,
    })
}

/// Threshold below which a theta-series term is dropped. Terms decay faster
/// than geometrically past the peak, so the discarded remainder is below
/// twice this value.
const THETA_TERM: f64 = 1e-17;

/// `2 sum_k G_t(4k + shift)`, stopping once terms on both sides fall below
/// the threshold past the peak.
fn theta_sum(t: f64, shift: f64) -> f64 {
    let mut total = 0.0;
    // Centre on the k nearest to -shift/4.
    let k0 = (-shift / 4.0).round() as i64;
    total += gaussian(t, 4.0 * k0 as f64 + shift);
    for dir in [1_i64, -1] {
        let mut k = k0 + dir;
        loop {
            let term = gaussian(t, 4.0 * k as f64 + shift);
            total += term;
            if term < THETA_TERM && (4.0 * k as f64 + shift).abs() > t.sqrt() {
                break;
            }
            k += dir;
        }
    }
    2.0 * total
}

/// `p(t) = 2 sum_k G_t(4k)` and `q(t) = 2 sum_k G_t(4k + 2)`.
pub fn theta_p_q(t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("theta kernels need t > 0, got {t}")));
    }
    Ok((theta_sum(t, 0.0), theta_sum(t, 2.0)))
}

/// `p` and `q` sampled on a time grid.
#[derive(Debug, Clone)]
pub struct ThetaKernels {
    pub grid: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ThetaKernels {
    pub fn on_grid(grid: &[f64]) -> Result<Self> {
        let mut p = Vec::with_capacity(grid.len());
        let mut q = Vec::with_capacity(grid.len());
        for &t in grid {
            let (a, b) = theta_p_q(t)?;
            p.push(a);
            q.push(b);
        }
        Ok(ThetaKernels { grid: grid.to_vec(), p, q })
    }
}

/// Absolute tolerance of the quadrature in [`theta_w`].
pub const THETA_W_TOL: f64 = 1e-11;

/// `w_{+,t} = sum_k int u0(r) 2 G_t(1 - r + 4k) dr` and
/// `w_{-,t} = sum_k int u0(r) 2 G_t(r + 1 + 4k) dr`, the free part of the
/// boundary values.
pub fn theta_w(t: f64, side: Side, u0: &dyn Fn(f64) -> f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("theta kernels need t > 0, got {t}")));
    }
    let kernel = |r: f64| match side {
        Side::Plus => theta_sum(t, 1.0 - r),
        Side::Minus => theta_sum(t, r + 1.0),
    };
    // The kernel peaks at the wall on the chosen side; refine there.
    let s = t.sqrt();
    let mut breaks: Vec<f64> = [1.0, 3.0, 10.0, 30.0]
        .iter()
        .map(|m| match side {
            Side::Plus => 1.0 - m * s,
            Side::Minus => -1.0 + m * s,
        })
        .filter(|b| b.abs() < 1.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    let q = Adaptive::default().integrate_with_breaks(-1.0, 1.0, &breaks, THETA_W_TOL, |r| {
        u0(r) * kernel(r)
    });
    if !q.converged {
        return Err(Error::NonConvergence(format!(
            "theta_w quadrature at t = {t}: error estimate {}",
            q.error
        )));
    }
    Ok(q.value)
}
