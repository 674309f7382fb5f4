//! The smoothed sup-norm and the iterated singular integrals
//! `a_n(t) = int_{s_1 + ... + s_n <= t} prod s_i^{-1/2} ds`.

use std::f64::consts::PI;

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::KernelTable;
use crate::lattice::LatticeParams;
use crate::quad::Adaptive;

/// Largest `n` accepted by [`iterated_kernel_an`].
pub const MAX_AN_ORDER: usize = 30;
/// Largest `t` accepted by [`an_series_bound`].
pub const MAX_SERIES_TIME: f64 = 10.0;

/// `|f|_x = |sum_y P_{eps^{1+b}}(x, y) f(y)|` and its supremum.
#[derive(Debug, Clone)]
pub struct SmoothedNorm {
    pub b: f64,
    pub params: LatticeParams,
    kernel: KernelTable,
}

impl SmoothedNorm {
    pub fn new(params: &LatticeParams, b: f64) -> Result<Self> {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidParams(format!("b must lie in (0, 1), got {b}")));
        }
        let kernel = KernelTable::new(params, params.epsilon().powf(1.0 + b))?;
        Ok(SmoothedNorm { b, params: *params, kernel })
    }

    /// Smoothing time `eps^{1+b}`, i.e. `N^{1-b}` microscopic units.
    pub fn time(&self) -> f64 {
        self.kernel.time()
    }

    pub fn smooth(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.params.num_sites() {
            return Err(Error::InvalidParams(format!(
                "field has {} values, lattice has {} sites",
                f.len(),
                self.params.num_sites()
            )));
        }
        Ok(self.kernel.apply(f))
    }

    pub fn norm(&self, f: &[f64]) -> Result<f64> {
        Ok(self.smooth(f)?.iter().fold(0.0, |m, v| m.max(v.abs())))
    }
}

pub fn smoothed_norm(params: &LatticeParams, f: &[f64], b: f64) -> Result<f64> {
    SmoothedNorm::new(params, b)?.norm(f)
}

fn check_order(n: usize, t: f64) -> Result<()> {
    if n == 0 || n > MAX_AN_ORDER {
        return Err(Error::InvalidParams(format!("order must lie in 1..={MAX_AN_ORDER}, got {n}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

/// `int_0^1 s^{-1/2} (1 - s)^{k/2} ds`, written as
/// `int_0^{pi/2} 2 cos^{k+1}(theta) d theta` so that the integrand is smooth.
fn simplex_factor(k: usize) -> f64 {
    let q = Adaptive::default().integrate(0.0, 0.5 * PI, 1e-15, |th: f64| 2.0 * th.cos().powi(k as i32 + 1));
    q.value
}

/// `a_n(t)` by quadrature: `a_n(t) = t^{n/2} a_n(1)` and, integrating out the
/// last variable of the unit simplex,
/// `a_n(1) = a_{n-1}(1) int_0^1 s^{-1/2} (1 - s)^{(n-1)/2} ds`.
pub fn iterated_kernel_an(n: usize, t: f64) -> Result<f64> {
    check_order(n, t)?;
    let unit: f64 = (0..n).map(simplex_factor).product();
    Ok(t.powf(0.5 * n as f64) * unit)
}

/// `(pi t)^{n/2} / Gamma(n/2 + 1)`.
pub fn an_closed_form(n: usize, t: f64) -> f64 {
    let h = 0.5 * n as f64;
    if t == 0.0 {
        return 0.0;
    }
    (h * (PI * t).ln() - ln_gamma(h + 1.0)).exp()
}

/// `(pi t)^{n/2} exp(-(n/2) (log(n/2) - 1))`.
pub fn an_bound(n: usize, t: f64) -> f64 {
    let h = 0.5 * n as f64;
    (PI * t).powf(h) * (-h * (h.ln() - 1.0)).exp()
}

/// Partial sums of `sum_n a_n(t)` against `e^{pi t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesReport {
    pub t: f64,
    pub n_max: usize,
    pub terms: Vec<f64>,
    pub partial_sum: f64,
    /// `sum_{n >= 1} a_n(t) = e^{pi t} erfc(-sqrt(pi t)) - 1`.
    pub full_sum: f64,
    /// `partial_sum / e^{pi t}`.
    pub fitted_c: f64,
    /// First `n` from which `a_{n+2} / a_n = pi t / (n/2 + 1)` stays below 1.
    pub ratio_below_one_from: usize,
}

pub fn an_series_bound(t: f64, n_max: usize) -> Result<SeriesReport> {
    if !(0.0..=MAX_SERIES_TIME).contains(&t) {
        return Err(Error::Domain(format!("series time must lie in [0, {MAX_SERIES_TIME}], got {t}")));
    }
    let terms: Vec<f64> = (1..=n_max).map(|n| iterated_kernel_an(n, t)).collect::<Result<_>>()?;
    let partial_sum = terms.iter().sum();
    let x = (PI * t).sqrt();
    let full_sum = (PI * t).exp() * erfc(-x) - 1.0;
    let ratio_below_one_from = ((2.0 * PI * t - 2.0).floor().max(0.0) as usize + 1).max(1);
    Ok(SeriesReport {
        t,
        n_max,
        terms,
        partial_sum,
        full_sum,
        fitted_c: partial_sum / (PI * t).exp(),
        ratio_below_one_from,
    })
}
