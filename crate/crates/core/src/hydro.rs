//! Macroscopic limit: the heat equation `d rho/dt = 1/2 d^2 rho/dr^2` on
//! `[-1, 1]` with Dirichlet data `u_+(t), u_-(t)` given by the nonlinear
//! Volterra system
//!
//! ```text
//! u_+(t) = int_0^t { p(s) f_+(u_+(t-s)) - q(s) f_-(u_-(t-s)) } ds + w_{+,t}
//! u_-(t) = int_0^t { q(s) f_+(u_+(t-s)) - p(s) f_-(u_-(t-s)) } ds + w_{-,t}
//! ```
//!
//! The traces are the boundary values of the Neumann problem with influx
//! `f_+` at `r = 1` and outflux `f_-` at `r = -1`; `p` is the Neumann Green
//! function from a wall to itself and `q` from one wall to the other.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::kernels::{gaussian, theta_p_q, theta_w};
use crate::lattice::Side;
use crate::pde::RhoField;
use crate::quad::GaussLegendre;

/// `f_+(u) = (j/2)(1 - u^K)` and `f_-(u) = (j/2)(1 - (1-u)^K)`.
pub fn reaction_terms(u: f64, j: f64, k: u32) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("reaction terms need u in [0, 1], got {u}")));
    }
    Ok(reactions(u, j, k))
}

#[inline]
fn reactions(u: f64, j: f64, k: u32) -> (f64, f64) {
    let k = k as i32;
    (0.5 * j * (1.0 - u.powi(k)), 0.5 * j * (1.0 - (1.0 - u).powi(k)))
}

/// Initial profiles on `[-1, 1]`, written `kind:a:b` on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `const:c`
    Constant(f64),
    /// `linear:a:b`, `a + b r`.
    Linear(f64, f64),
    /// `sin:a:b`, `a + b sin(pi r / 2)`.
    Sine(f64, f64),
    /// `step:a:b`, `a` on `r < 0` and `b` on `r >= 0`.
    Step(f64, f64),
}

impl Profile {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Profile::Constant(c) => c,
            Profile::Linear(a, b) => a + b * r,
            Profile::Sine(a, b) => a + b * (0.5 * PI * r).sin(),
            Profile::Step(a, b) => {
                if r < 0.0 {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Extreme values on `[-1, 1]`.
    pub fn range(&self) -> (f64, f64) {
        let (lo, hi) = match *self {
            Profile::Constant(c) => (c, c),
            Profile::Linear(a, b) | Profile::Sine(a, b) => (a - b.abs(), a + b.abs()),
            Profile::Step(a, b) => (a.min(b), a.max(b)),
        };
        (lo, hi)
    }

    /// Lipschitz constant on `[-1, 1]`; infinite for a genuine step.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Profile::Constant(_) => 0.0,
            Profile::Linear(_, b) => b.abs(),
            Profile::Sine(_, b) => 0.5 * PI * b.abs(),
            Profile::Step(a, b) => {
                if a == b {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range();
        if lo < 0.0 || hi > 1.0 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("profile {self} leaves [0, 1]")));
        }
        Ok(())
    }

    /// The profile `1 - u0(-r)`.
    pub fn particle_hole(&self) -> Profile {
        match *self {
            Profile::Constant(c) => Profile::Constant(1.0 - c),
            Profile::Linear(a, b) => Profile::Linear(1.0 - a, b),
            Profile::Sine(a, b) => Profile::Sine(1.0 - a, b),
            Profile::Step(a, b) => Profile::Step(1.0 - b, 1.0 - a),
        }
    }

    /// Initial datum `rho(x, 0) = u0(eps x)` of the discrete equation.
    pub fn sample(&self, params: crate::lattice::LatticeParams) -> Result<RhoField> {
        let eps = params.epsilon();
        RhoField::new(params, 0.0, params.sites().map(|x| self.eval(eps * x as f64)).collect())
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(c) => write!(f, "const:{c}"),
            Profile::Linear(a, b) => write!(f, "linear:{a}:{b}"),
            Profile::Sine(a, b) => write!(f, "sin:{a}:{b}"),
            Profile::Step(a, b) => write!(f, "step:{a}:{b}"),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let nums: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let nums = nums.map_err(|e| Error::InvalidParams(format!("profile {s:?}: {e}")))?;
        let profile = match (kind, nums.as_slice()) {
            ("const", [c]) => Profile::Constant(*c),
            ("linear", [a, b]) => Profile::Linear(*a, *b),
            ("sin", [a, b]) => Profile::Sine(*a, *b),
            ("step", [a, b]) => Profile::Step(*a, *b),
            _ => {
                return Err(Error::InvalidParams(format!(
                    "unknown profile {s:?}; expected const:c, linear:a:b, sin:a:b or step:a:b"
                )))
            }
        };
        profile.validate()?;
        Ok(profile)
    }
}

/// Boundary values `u_+(t_n), u_-(t_n)` on `t_n = n h`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub h: f64,
    pub u_plus: Vec<f64>,
    pub u_minus: Vec<f64>,
    /// Sup-norm residual of the discrete Volterra system.
    pub residual: f64,
}

impl BoundaryTrace {
    /// Trace frozen at constant values.
    pub fn constant(h: f64, horizon: f64, u_plus: f64, u_minus: f64) -> Self {
        let n = (horizon / h).round() as usize + 1;
        BoundaryTrace { h, u_plus: vec![u_plus; n], u_minus: vec![u_minus; n], residual: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.u_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_plus.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        (self.len() - 1) as f64 * self.h
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.h
    }

    /// Linear interpolation of `(u_+, u_-)` at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let x = (t / self.h).max(0.0);
        let i = (x.floor() as usize).min(self.len() - 1);
        if i + 1 >= self.len() {
            return (self.u_plus[self.len() - 1], self.u_minus[self.len() - 1]);
        }
        let th = x - i as f64;
        (
            (1.0 - th) * self.u_plus[i] + th * self.u_plus[i + 1],
            (1.0 - th) * self.u_minus[i] + th * self.u_minus[i + 1],
        )
    }
}

/// Product-trapezoid moments of a kernel on the lag intervals
/// `[i h, (i+1) h]`: `a[i] = int k`, `b[i] = int k (s - i h)/h`.
struct Moments {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Moments {
    /// Lag weight of `g(t_m)` in the integral at `t_n`, `l = n - m`, `m >= 1`.
    #[inline]
    fn lag(&self, l: usize) -> f64 {
        let mut w = self.a[l] - self.b[l];
        if l >= 1 {
            w += self.b[l - 1];
        }
        w
    }

    /// Weight of `g(t_0)` in the integral at `t_n`.
    #[inline]
    fn origin(&self, n: usize) -> f64 {
        self.b[n - 1]
    }
}

fn kernel_moments(h: f64, steps: usize) -> (Moments, Moments) {
    let rule = GaussLegendre::new(8);
    let c = (2.0 / PI).sqrt();
    let mut p = Moments { a: Vec::with_capacity(steps), b: Vec::with_capacity(steps) };
    let mut q = Moments { a: Vec::with_capacity(steps), b: Vec::with_capacity(steps) };
    for i in 0..steps {
        let lo = i as f64 * h;
        let hi = lo + h;
        // Singular part sqrt(2 / (pi s)) of p, integrated exactly.
        let (sl, sh) = (lo.sqrt(), hi.sqrt());
        let int0 = 2.0 * (sh - sl);
        let int1 = (2.0 / 3.0) * (hi * sh - lo * sl) - lo * int0;
        let (mut pa, mut pb) = (c * int0, c * int1 / h);
        let (mut qa, mut qb) = (0.0, 0.0);
        for (s, w) in rule.points(lo, hi) {
            let theta = (s - lo) / h;
            let smooth = p_smooth(s);
            let qs = theta_p_q(s).map(|v| v.1).unwrap_or(0.0);
            pa += w * smooth;
            pb += w * smooth * theta;
            qa += w * qs;
            qb += w * qs * theta;
        }
        p.a.push(pa);
        p.b.push(pb);
        q.a.push(qa);
        q.b.push(qb);
    }
    (p, q)
}

/// `p(s) - sqrt(2 / (pi s)) = 2 sum_{k != 0} G_s(4k)`.
fn p_smooth(s: f64) -> f64 {
    let mut total = 0.0;
    let mut k = 1;
    loop {
        let term = gaussian(s, 4.0 * k as f64);
        total += term;
        if term < 1e-18 && 4.0 * k as f64 > s.sqrt() {
            break;
        }
        k += 1;
    }
    4.0 * total
}

/// Largest Picard sweep count per window.
const MAX_PICARD: usize = 200;
/// Target residual of the discrete Volterra system.
const PICARD_TOL: f64 = 1e-9;

/// Solve the boundary system on `[0, horizon]` with step `h`.
pub fn solve_boundary_traces(u0: &Profile, j: f64, k: u32, horizon: f64, h: f64) -> Result<BoundaryTrace> {
    u0.validate()?;
    if !(j >= 0.0 && j.is_finite()) {
        return Err(Error::InvalidParams(format!("rate j must be finite and >= 0, got {j}")));
    }
    if k == 0 {
        return Err(Error::InvalidParams("K must be positive".into()));
    }
    if !(h > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidParams(format!("need h > 0 and T > 0, got h = {h}, T = {horizon}")));
    }
    let steps = (horizon / h).round() as usize;
    if steps == 0 || ((steps as f64) * h - horizon).abs() > 1e-9 * horizon {
        return Err(Error::InvalidParams(format!("T = {horizon} is not a multiple of h = {h}")));
    }
    let f = |u: f64| reactions(u, j, k);
    let mut wp = vec![u0.eval(1.0)];
    let mut wm = vec![u0.eval(-1.0)];
    for n in 1..=steps {
        let t = n as f64 * h;
        let profile = |r: f64| u0.eval(r);
        wp.push(theta_w(t, Side::Plus, &profile)?);
        wm.push(theta_w(t, Side::Minus, &profile)?);
    }
    let mut up = wp.clone();
    let mut um = wm.clone();
    if j == 0.0 {
        return Ok(BoundaryTrace { h, u_plus: up, u_minus: um, residual: 0.0 });
    }
    let (pm, qm) = kernel_moments(h, steps);

    // Window so that the Picard map contracts by at least 1/2:
    // Lip(f) int_0^L (p + q) <= 1/2 with Lip(f) = K j / 2.
    let lip = 0.5 * j * k as f64;
    let mut window = 0;
    let mut mass = 0.0;
    while window < steps {
        let next = mass + pm.a[window] + qm.a[window];
        if lip * next > 0.5 && window > 0 {
            break;
        }
        mass = next;
        window += 1;
    }
    let window = window.max(1);

    let mut gp: Vec<f64> = Vec::with_capacity(steps + 1);
    let mut gm: Vec<f64> = Vec::with_capacity(steps + 1);
    gp.push(f(up[0]).0);
    gm.push(f(um[0]).1);
    gp.resize(steps + 1, 0.0);
    gm.resize(steps + 1, 0.0);

    let mut start = 1;
    while start <= steps {
        let end = (start + window - 1).min(steps);
        // Contribution of the already solved history `m < start`.
        let mut hist_p = vec![0.0; end - start + 1];
        let mut hist_m = vec![0.0; end - start + 1];
        for n in start..=end {
            let (mut sp, mut sm) = (0.0, 0.0);
            let (ip, iq) = (pm.origin(n), qm.origin(n));
            sp += ip * gp[0] - iq * gm[0];
            sm += iq * gp[0] - ip * gm[0];
            for m in 1..start {
                let (lp, lq) = (pm.lag(n - m), qm.lag(n - m));
                sp += lp * gp[m] - lq * gm[m];
                sm += lq * gp[m] - lp * gm[m];
            }
            hist_p[n - start] = sp;
            hist_m[n - start] = sm;
        }
        // Start from the last solved value.
        for n in start..=end {
            up[n] = up[start - 1];
            um[n] = um[start - 1];
            gp[n] = f(up[n]).0;
            gm[n] = f(um[n]).1;
        }
        let mut projected = false;
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..MAX_PICARD {
            change = 0.0;
            for n in start..=end {
                let (mut sp, mut sm) = (hist_p[n - start], hist_m[n - start]);
                for m in start..=n {
                    let (lp, lq) = (pm.lag(n - m), qm.lag(n - m));
                    sp += lp * gp[m] - lq * gm[m];
                    sm += lq * gp[m] - lp * gm[m];
                }
                let mut np = sp + wp[n];
                let mut nm = sm + wm[n];
                if !(0.0..=1.0).contains(&np) || !(0.0..=1.0).contains(&nm) {
                    projected = true;
                    np = np.clamp(0.0, 1.0);
                    nm = nm.clamp(0.0, 1.0);
                }
                change = change.max((np - up[n]).abs()).max((nm - um[n]).abs());
                up[n] = np;
                um[n] = nm;
            }
            for n in start..=end {
                gp[n] = f(up[n]).0;
                gm[n] = f(um[n]).1;
            }
            if change <= 0.1 * PICARD_TOL {
                converged = true;
                break;
            }
        }
        if projected {
            warn!("boundary traces left [0, 1] on window [{start}, {end}] and were projected");
        }
        if !converged {
            return Err(Error::NonConvergence(format!(
                "Picard iteration on window t in [{}, {}] ({} steps): last change {change:e}",
                start as f64 * h,
                end as f64 * h,
                end - start + 1
            )));
        }
        start = end + 1;
    }

    let residual = volterra_residual(&up, &um, &wp, &wm, &pm, &qm, &f);
    Ok(BoundaryTrace { h, u_plus: up, u_minus: um, residual })
}

fn volterra_residual(
    up: &[f64],
    um: &[f64],
    wp: &[f64],
    wm: &[f64],
    pm: &Moments,
    qm: &Moments,
    f: &dyn Fn(f64) -> (f64, f64),
) -> f64 {
    let g: Vec<(f64, f64)> = up.iter().map(|&u| f(u).0).zip(um.iter().map(|&u| f(u).1)).collect();
    let mut worst: f64 = 0.0;
    for n in 1..up.len() {
        let (ip, iq) = (pm.origin(n), qm.origin(n));
        let mut sp = ip * g[0].0 - iq * g[0].1;
        let mut sm = iq * g[0].0 - ip * g[0].1;
        for m in 1..=n {
            let (lp, lq) = (pm.lag(n - m), qm.lag(n - m));
            sp += lp * g[m].0 - lq * g[m].1;
            sm += lq * g[m].0 - lp * g[m].1;
        }
        worst = worst.max((up[n] - sp - wp[n]).abs()).max((um[n] - sm - wm[n]).abs());
    }
    worst
}

/// Macroscopic density on a uniform grid of `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroField {
    pub grid: Vec<f64>,
    pub time: f64,
    pub values: Vec<f64>,
}

impl MacroField {
    /// Linear interpolation at `r`.
    pub fn eval(&self, r: f64) -> f64 {
        let cells = self.grid.len() - 1;
        let x = ((r + 1.0) / 2.0 * cells as f64).clamp(0.0, cells as f64);
        let i = (x.floor() as usize).min(cells - 1);
        let th = x - i as f64;
        (1.0 - th) * self.values[i] + th * self.values[i + 1]
    }
}

/// Discretization of [`solve_macro`].
#[derive(Debug, Clone, Copy)]
pub struct MacroOptions {
    pub cells: usize,
    /// Time step; defaults to the trace step.
    pub dt: Option<f64>,
    /// Backward Euler half-steps before Crank-Nicolson.
    pub startup: usize,
}

impl Default for MacroOptions {
    fn default() -> Self {
        MacroOptions { cells: 1000, dt: None, startup: 4 }
    }
}

/// Heat equation with Dirichlet data from `trace`, solved to time `t`.
pub fn solve_macro(u0: &Profile, trace: &BoundaryTrace, t: f64) -> Result<MacroField> {
    solve_macro_with(u0, trace, t, MacroOptions::default())
}

pub fn solve_macro_with(u0: &Profile, trace: &BoundaryTrace, t: f64, opts: MacroOptions) -> Result<MacroField> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    if t > trace.horizon() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "trace covers [0, {}], solve requested to {t}",
            trace.horizon()
        )));
    }
    if opts.cells < 2 {
        return Err(Error::InvalidParams("need at least 2 cells".into()));
    }
    let cells = opts.cells;
    let dr = 2.0 / cells as f64;
    let grid: Vec<f64> = (0..=cells).map(|i| -1.0 + i as f64 * dr).collect();
    let mut u: Vec<f64> = grid.iter().map(|&r| u0.eval(r)).collect();
    let (p0, m0) = trace.at(0.0);
    u[0] = m0;
    u[cells] = p0;
    if t == 0.0 {
        return Ok(MacroField { grid, time: 0.0, values: u });
    }
    let dt_target = opts.dt.unwrap_or(trace.h).min(t);
    let steps = (t / dt_target).ceil() as usize;
    let dt = t / steps as f64;

    let interior = cells - 1;
    let mut rhs = vec![0.0; interior];
    let mut now = 0.0;
    // (time step, implicit weight) pairs: startup backward Euler half-steps.
    let mut plan: Vec<(f64, f64)> = Vec::new();
    let startup = opts.startup.min(2 * steps);
    for _ in 0..startup {
        plan.push((0.5 * dt, 1.0));
    }
    let remaining = t - 0.5 * dt * startup as f64;
    let cn_steps = (remaining / dt).round() as usize;
    for _ in 0..cn_steps {
        plan.push((dt, 0.5));
    }
    for (tau, theta) in plan {
        let next = now + tau;
        let (bp, bm) = trace.at(next);
        let lam = 0.5 * tau / (dr * dr);
        let explicit = 1.0 - theta;
        for i in 1..cells {
            let lap = u[i - 1] - 2.0 * u[i] + u[i + 1];
            rhs[i - 1] = u[i] + explicit * lam * lap;
        }
        // Boundary values at the new time enter the implicit part.
        rhs[0] += theta * lam * bm;
        rhs[interior - 1] += theta * lam * bp;
        let diag = 1.0 + 2.0 * theta * lam;
        let off = -theta * lam;
        let sol = thomas(off, diag, &rhs);
        u[1..cells].copy_from_slice(&sol);
        u[0] = bm;
        u[cells] = bp;
        now = next;
    }
    Ok(MacroField { grid, time: now, values: u })
}

/// Constant-coefficient tridiagonal solve.
fn thomas(off: f64, diag: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off / diag;
    d[0] = rhs[0] / diag;
    for i in 1..n {
        let m = diag - off * c[i - 1];
        c[i] = off / m;
        d[i] = (rhs[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// `max_x |rho_eps(x, t) - rho(eps x, t)|`.
pub fn micro_macro_gap(rho_eps: &RhoField, field: &MacroField) -> Result<f64> {
    if (rho_eps.time - field.time).abs() > 1e-9 * field.time.max(1.0) {
        return Err(Error::InvalidParams(format!(
            "fields at different times: {} and {}",
            rho_eps.time, field.time
        )));
    }
    let p = rho_eps.params;
    let eps = p.epsilon();
    Ok(p
        .sites()
        .map(|x| (rho_eps.at(x) - field.eval(eps * x as f64)).abs())
        .fold(0.0, f64::max))
}
