//! Geometry of the interval `[-N, N]`, the reservoir blocks at both ends and
//! the fold of the whole line onto the interval.

use crate::error::{Error, Result};

/// Which end of the interval a reservoir sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// `I_+ = [N-K+1, N]`, where particles are injected.
    Plus,
    /// `I_- = [-N, -N+K-1]`, where particles are removed.
    Minus,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// Geometry and rates of the whole system.
///
/// `epsilon = 1/N` is derived; `inv_epsilon()` returns `N` exactly so that
/// the diffusive speed-up `N^2` never carries rounding error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeParams {
    n: i64,
    k: i64,
    j: f64,
    epsilon: f64,
}

impl LatticeParams {
    pub fn new(n: i64, k: i64, j: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParams(format!("N must be positive, got {n}")));
        }
        if k < 1 {
            return Err(Error::InvalidParams(format!("K must be positive, got {k}")));
        }
        if 2 * k > 2 * n + 1 {
            return Err(Error::InvalidParams(format!(
                "reservoirs overlap: K = {k} exceeds N = {n}"
            )));
        }
        if !(j >= 0.0 && j.is_finite()) {
            return Err(Error::InvalidParams(format!("rate j must be finite and >= 0, got {j}")));
        }
        Ok(LatticeParams { n, k, j, epsilon: 1.0 / n as f64 })
    }

    /// Same geometry with a different reservoir rate.
    pub fn with_rate(&self, j: f64) -> Result<Self> {
        LatticeParams::new(self.n, self.k, j)
    }

    #[inline]
    pub fn half_width(&self) -> i64 {
        self.n
    }

    #[inline]
    pub fn reservoir_width(&self) -> i64 {
        self.k
    }

    #[inline]
    pub fn rate(&self) -> f64 {
        self.j
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn inv_epsilon(&self) -> f64 {
        self.n as f64
    }

    /// Diffusive speed-up `epsilon^-2 = N^2`.
    #[inline]
    pub fn diffusive_scale(&self) -> f64 {
        let n = self.n as f64;
        n * n
    }

    /// Number of sites `2N + 1`.
    #[inline]
    pub fn num_sites(&self) -> usize {
        (2 * self.n + 1) as usize
    }

    /// Array index of site `x` (`x + N`).
    #[inline]
    pub fn index(&self, x: i64) -> usize {
        debug_assert!(self.contains(x));
        (x + self.n) as usize
    }

    #[inline]
    pub fn site_at(&self, i: usize) -> i64 {
        i as i64 - self.n
    }

    #[inline]
    pub fn contains(&self, x: i64) -> bool {
        -self.n <= x && x <= self.n
    }

    pub fn site(&self, x: i64) -> Result<Site> {
        if self.contains(x) {
            Ok(Site(x))
        } else {
            Err(Error::Domain(format!("site {x} outside [-{n}, {n}]", n = self.n)))
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        -self.n..=self.n
    }

    /// Inclusive bounds of the reservoir on `side`.
    pub fn reservoir(&self, side: Side) -> (i64, i64) {
        match side {
            Side::Plus => (self.n - self.k + 1, self.n),
            Side::Minus => (-self.n, -self.n + self.k - 1),
        }
    }

    pub fn in_reservoir(&self, x: i64, side: Side) -> bool {
        let (lo, hi) = self.reservoir(side);
        lo <= x && x <= hi
    }

    pub fn in_any_reservoir(&self, x: i64) -> bool {
        self.in_reservoir(x, Side::Plus) || self.in_reservoir(x, Side::Minus)
    }

    /// The fold `psi_N` of the whole line onto `[-N, N]`.
    ///
    /// The reflections at `N + 1/2` and `-N - 1/2` compose to a translation by
    /// `2(2N+1)`, so one modular reduction and a single fold suffice.
    pub fn reflect(&self, z: i64) -> i64 {
        let m = 2 * self.n + 1;
        let w = (z + self.n).rem_euclid(2 * m);
        if w < m {
            w - self.n
        } else {
            2 * m - 1 - w - self.n
        }
    }

    pub fn reflection_map(&self, z: i64) -> Site {
        Site(self.reflect(z))
    }
}

/// A site of `[-N, N]`. Construct through [`LatticeParams::site`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site(i64);

impl Site {
    #[inline]
    pub fn x(self) -> i64 {
        self.0
    }
}

pub fn in_reservoir(params: &LatticeParams, x: Site, side: Side) -> bool {
    params.in_reservoir(x.x(), side)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reflection by the three-case rule, applied until the point lands.
    fn reflect_iterated(n: i64, mut z: i64) -> i64 {
        loop {
            if z.abs() <= n {
                return z;
            }
            if z > n {
                z = 2 * n + 1 - z;
            } else {
                z = -2 * n - 1 - z;
            }
        }
    }

    #[test]
    fn reflection_examples() {
        let p = LatticeParams::new(2, 1, 0.0).unwrap();
        assert_eq!(p.reflect(1), 1);
        assert_eq!(p.reflect(3), 2);
        assert_eq!(p.reflect(7), -2);
        assert_eq!(p.reflect(-3), -2);
    }

    #[test]
    fn reflection_matches_iterated_definition() {
        for n in 1..=5 {
            let p = LatticeParams::new(n, 1, 0.0).unwrap();
            let m = 2 * n + 1;
            for z in -10 * m..=10 * m {
                let r = p.reflect(z);
                assert_eq!(r, reflect_iterated(n, z), "N={n} z={z}");
                assert!(p.contains(r));
                assert_eq!(p.reflect(-z), -r);
                assert_eq!(p.reflect(z + 2 * m), r);
            }
            for z in -n..=n {
                assert_eq!(p.reflect(z), z);
            }
            for k in 1..=m {
                assert_eq!(p.reflect(n + k), p.reflect(n - (k - 1)));
            }
        }
    }

    #[test]
    fn reflection_is_surjective() {
        let p = LatticeParams::new(4, 1, 0.0).unwrap();
        let mut hit = vec![false; p.num_sites()];
        for z in -40..40 {
            hit[p.index(p.reflect(z))] = true;
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn reservoir_membership() {
        let p = LatticeParams::new(10, 2, 1.0).unwrap();
        assert!(p.in_reservoir(10, Side::Plus));
        assert!(!p.in_reservoir(8, Side::Plus));
        assert!(p.in_reservoir(9, Side::Plus));
        assert!(p.in_reservoir(-10, Side::Minus));
        assert!(p.in_reservoir(-9, Side::Minus));
        assert!(!p.in_reservoir(-8, Side::Minus));
        let s = p.site(10).unwrap();
        assert!(in_reservoir(&p, s, Side::Plus));
    }

    #[test]
    fn rejects_overlapping_reservoirs() {
        assert!(LatticeParams::new(3, 4, 1.0).is_err());
        assert!(LatticeParams::new(3, 3, 1.0).is_ok());
        assert!(LatticeParams::new(3, 0, 1.0).is_err());
        assert!(LatticeParams::new(0, 1, 1.0).is_err());
        assert!(LatticeParams::new(3, 1, -1.0).is_err());
    }

    #[test]
    fn epsilon_is_inverse_of_n() {
        for n in 1..200 {
            let p = LatticeParams::new(n, 1, 0.0).unwrap();
            assert!((p.epsilon() * n as f64 - 1.0).abs() <= f64::EPSILON);
            assert_eq!(p.inv_epsilon(), n as f64);
        }
    }
}
