//! The discrete density equation
//! `d rho/dt = 1/2 eps^-2 Delta rho + eps^-1 (j/2) (1_{I+} D_+ rho - 1_{I-} D_- rho)`
//! on `[-N, N]` with reflecting boundary conditions.
//!
//! The linear part is diagonal in the cosine basis of the reflecting
//! Laplacian and is integrated exactly; the boundary term lives on the `2K`
//! reservoir sites only. Time stepping is fourth-order exponential
//! Runge-Kutta (Cox-Matthews ETDRK4) carried out entirely in the cosine
//! basis, with step doubling until two successive solutions agree to `tol`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::{LatticeParams, Side};

/// Default absolute tolerance of [`evolve_rho`].
pub const DEFAULT_TOL: f64 = 1e-8;

/// Largest number of time steps tried before giving up.
const MAX_STEPS: usize = 1 << 22;

/// `(Delta f)(x) = f(x+1) + f(x-1) - 2 f(x)` with reflecting ends
/// `(Delta f)(±N) = f(±(N-1)) - f(±N)`.
pub fn discrete_laplacian(f: &[f64]) -> Vec<f64> {
    let m = f.len();
    let mut out = vec![0.0; m];
    if m < 2 {
        return out;
    }
    out[0] = f[1] - f[0];
    out[m - 1] = f[m - 2] - f[m - 1];
    for i in 1..m - 1 {
        out[i] = f[i + 1] + f[i - 1] - 2.0 * f[i];
    }
    out
}

/// `D_+ f(x) = (1 - f(x)) f(x+1) ... f(N)` on `I_+`,
/// `D_- f(x) = f(x) (1 - f(-N)) ... (1 - f(x-1))` on `I_-`.
pub fn boundary_drift(params: &LatticeParams, f: &[f64], side: Side, x: i64) -> Result<f64> {
    if f.len() != params.num_sites() {
        return Err(Error::InvalidParams(format!(
            "field has {} values, lattice has {} sites",
            f.len(),
            params.num_sites()
        )));
    }
    if !params.contains(x) || !params.in_reservoir(x, side) {
        return Err(Error::Domain(format!("site {x} is not in the {side:?} reservoir")));
    }
    let n = params.half_width();
    let v = |y: i64| f[params.index(y)];
    Ok(match side {
        Side::Plus => (1.0 - v(x)) * (x + 1..=n).map(v).product::<f64>(),
        Side::Minus => v(x) * (-n..x).map(|y| 1.0 - v(y)).product::<f64>(),
    })
}

/// Density profile `rho(x, t)` on `[-N, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoField {
    pub params: LatticeParams,
    pub time: f64,
    pub values: Vec<f64>,
}

impl RhoField {
    pub fn new(params: LatticeParams, time: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != params.num_sites() {
            return Err(Error::InvalidParams(format!(
                "field has {} values, lattice has {} sites",
                values.len(),
                params.num_sites()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("density value {v} outside [0, 1]")));
        }
        Ok(RhoField { params, time, values })
    }

    pub fn constant(params: LatticeParams, c: f64) -> Result<Self> {
        RhoField::new(params, 0.0, vec![c; params.num_sites()])
    }

    /// Initial datum of a deterministic configuration.
    pub fn from_occupation(params: LatticeParams, occupied: &[bool]) -> Result<Self> {
        RhoField::new(params, 0.0, occupied.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn at(&self, x: i64) -> f64 {
        self.values[self.params.index(x)]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `max_x |rho(x+1) - rho(x)|`.
pub fn gradient_profile(rho: &RhoField) -> f64 {
    rho.values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
}

/// `phi_1, phi_2, phi_3` with `phi_k(z) = sum_m z^m / (m+k)!`.
fn phi123(z: f64) -> (f64, f64, f64) {
    if z.abs() < 1.0 {
        let mut p = [0.0; 3];
        for (k, slot) in p.iter_mut().enumerate() {
            // Horner evaluation of sum_{m<24} z^m / (m+k+1)!.
            let mut acc = 0.0;
            for m in (0..24).rev() {
                acc = acc * z / (m + k + 2) as f64 + 1.0;
            }
            let mut fact = 1.0;
            for i in 2..=k + 1 {
                fact *= i as f64;
            }
            *slot = acc / fact;
        }
        (p[0], p[1], p[2])
    } else {
        let p1 = z.exp_m1() / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        (p1, p2, p3)
    }
}

/// Per-mode ETDRK4 coefficients for one step size.
struct Coefficients {
    e: Vec<f64>,
    e2: Vec<f64>,
    half: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl Coefficients {
    fn new(mu: &[f64], h: f64) -> Self {
        let mut c = Coefficients {
            e: Vec::with_capacity(mu.len()),
            e2: Vec::with_capacity(mu.len()),
            half: Vec::with_capacity(mu.len()),
            f1: Vec::with_capacity(mu.len()),
            f2: Vec::with_capacity(mu.len()),
            f3: Vec::with_capacity(mu.len()),
        };
        for &m in mu {
            let z = m * h;
            let (p1, p2, p3) = phi123(z);
            let (q1, _, _) = phi123(0.5 * z);
            c.e.push(z.exp());
            c.e2.push((0.5 * z).exp());
            c.half.push(0.5 * h * q1);
            c.f1.push(h * (p1 - 3.0 * p2 + 4.0 * p3));
            c.f2.push(h * (p2 - 2.0 * p3));
            c.f3.push(h * (-p2 + 4.0 * p3));
        }
        c
    }
}

/// Solver for the discrete density equation on a fixed lattice.
///
/// Holds the cosine eigenbasis, so reuse one instance for many solves.
pub struct RhoSolver {
    params: LatticeParams,
    size: usize,
    /// Orthonormal eigenvectors, `basis[i * size + k]`.
    basis: Vec<f64>,
    /// Eigenvalues of `1/2 eps^-2 Delta`.
    mu: Vec<f64>,
    /// Reservoir sites as array indices, `I_-` then `I_+`.
    boundary: Vec<usize>,
}

impl RhoSolver {
    pub fn new(params: &LatticeParams) -> Self {
        let m = params.num_sites();
        let mf = m as f64;
        let mut basis = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let c = if k == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
                basis[i * m + k] = c * (PI * k as f64 * (i as f64 + 0.5) / mf).cos();
            }
        }
        let scale = params.diffusive_scale();
        let mu = (0..m)
            .map(|k| {
                let s = (PI * k as f64 / (2.0 * mf)).sin();
                -2.0 * scale * s * s
            })
            .collect();
        let (ml, mh) = params.reservoir(Side::Minus);
        let (pl, ph) = params.reservoir(Side::Plus);
        let boundary = (ml..=mh).chain(pl..=ph).map(|x| params.index(x)).collect();
        RhoSolver { params: *params, size: m, basis, mu, boundary }
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    fn to_modes(&self, f: &[f64]) -> Vec<f64> {
        let m = self.size;
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &self.basis[i * m..(i + 1) * m];
            let fi = f[i];
            if fi != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, b)| *o += fi * b);
            }
        }
        out
    }

    fn to_values(&self, modes: &[f64]) -> Vec<f64> {
        let m = self.size;
        (0..m)
            .map(|i| self.basis[i * m..(i + 1) * m].iter().zip(modes).map(|(b, u)| b * u).sum())
            .collect()
    }

    fn value_at(&self, modes: &[f64], i: usize) -> f64 {
        let m = self.size;
        self.basis[i * m..(i + 1) * m].iter().zip(modes).map(|(b, u)| b * u).sum()
    }

    /// Boundary forcing in the cosine basis.
    fn forcing(&self, modes: &[f64], out: &mut [f64]) {
        let k = self.params.reservoir_width() as usize;
        let amp = self.params.inv_epsilon() * self.params.rate() / 2.0;
        let vals: Vec<f64> = self.boundary.iter().map(|&i| self.value_at(modes, i)).collect();
        let (minus, plus) = vals.split_at(k);
        // D_- at -N + i: rho(-N+i) prod_{l<i} (1 - rho(-N+l)).
        let mut drift = vec![0.0; 2 * k];
        let mut prod = 1.0;
        for i in 0..k {
            drift[i] = -amp * minus[i] * prod;
            prod *= 1.0 - minus[i];
        }
        // D_+ at N-K+1+i: (1 - rho) times the product of the values above it.
        let mut prod = 1.0;
        for i in (0..k).rev() {
            drift[k + i] = amp * (1.0 - plus[i]) * prod;
            prod *= plus[i];
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let m = self.size;
        for (&i, &d) in self.boundary.iter().zip(&drift) {
            if d != 0.0 {
                let row = &self.basis[i * m..(i + 1) * m];
                out.iter_mut().zip(row).for_each(|(o, b)| *o += d * b);
            }
        }
    }

    fn step(&self, c: &Coefficients, u: &mut [f64], ws: &mut [Vec<f64>; 6]) {
        let [nu, a, na, b, nb, cc] = ws;
        self.forcing(u, nu);
        for k in 0..self.size {
            a[k] = c.e2[k] * u[k] + c.half[k] * nu[k];
        }
        self.forcing(a, na);
        for k in 0..self.size {
            b[k] = c.e2[k] * u[k] + c.half[k] * na[k];
        }
        self.forcing(b, nb);
        for k in 0..self.size {
            cc[k] = c.e2[k] * a[k] + c.half[k] * (2.0 * nb[k] - nu[k]);
        }
        // Reuse `a` for N(c).
        let nc = a;
        self.forcing(cc, nc);
        for k in 0..self.size {
            u[k] = c.e[k] * u[k]
                + c.f1[k] * nu[k]
                + 2.0 * c.f2[k] * (na[k] + nb[k])
                + c.f3[k] * nc[k];
        }
    }

    fn integrate(&self, modes0: &[f64], t: f64, steps: usize) -> Vec<f64> {
        let h = t / steps as f64;
        let c = Coefficients::new(&self.mu, h);
        let mut u = modes0.to_vec();
        let mut ws: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; self.size]);
        for _ in 0..steps {
            self.step(&c, &mut u, &mut ws);
        }
        u
    }

    /// Advance `rho0` by `t`; the result is accurate to `tol` in every site.
    pub fn evolve(&self, rho0: &RhoField, t: f64, tol: f64) -> Result<RhoField> {
        if rho0.params != self.params {
            return Err(Error::InvalidParams("field and solver lattices differ".into()));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("evolution time must be >= 0, got {t}")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidParams(format!("tolerance must be positive, got {tol}")));
        }
        if t == 0.0 {
            return Ok(rho0.clone());
        }
        let modes0 = self.to_modes(&rho0.values);
        let modes = if self.params.rate() == 0.0 {
            modes0.iter().zip(&self.mu).map(|(u, m)| u * (m * t).exp()).collect()
        } else {
            // The explicit boundary term has Jacobian of order eps^-1 j/2.
            let stiff = self.params.inv_epsilon() * self.params.rate() / 2.0;
            let mut steps = ((t * stiff).ceil() as usize).max(4);
            let mut coarse = self.integrate(&modes0, t, steps);
            loop {
                if 2 * steps > MAX_STEPS {
                    return Err(Error::NonConvergence(format!(
                        "density solver: no agreement to {tol} with {steps} steps of size {:e}",
                        t / steps as f64
                    )));
                }
                steps *= 2;
                let fine = self.integrate(&modes0, t, steps);
                // Orthonormal basis: the l2 distance bounds every site.
                let diff = coarse
                    .iter()
                    .zip(&fine)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                coarse = fine;
                if diff.is_finite() && diff <= tol {
                    break;
                }
            }
            coarse
        };
        let values = self.to_values(&modes);
        Ok(RhoField { params: self.params, time: rho0.time + t, values })
    }

    /// Solutions at each of the increasing elapsed times in `times`.
    pub fn evolve_path(&self, rho0: &RhoField, times: &[f64], tol: f64) -> Result<Vec<RhoField>> {
        let mut out = Vec::with_capacity(times.len());
        let mut current = rho0.clone();
        let mut last = 0.0;
        let per_leg = tol / times.len().max(1) as f64;
        for &t in times {
            if t < last {
                return Err(Error::InvalidParams("sample times must be increasing".into()));
            }
            current = self.evolve(&current, t - last, per_leg)?;
            last = t;
            out.push(current.clone());
        }
        Ok(out)
    }
}

/// Solution of the discrete density equation at `rho0.time + t`.
pub fn evolve_rho(rho0: &RhoField, t: f64, tol: f64) -> Result<RhoField> {
    RhoSolver::new(&rho0.params).evolve(rho0, t, tol)
}
