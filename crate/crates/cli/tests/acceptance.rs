//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values and tolerances of every sub-check underneath.
//!
//! Sub-checks listed in `KNOWN_FAILURES` are desk-scale limits of asymptotic
//! bounds; they are run in full and reported as FAIL, but do not fail the
//! process. Any other failure does.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use stirring::estimates::{an_bound, an_closed_form, iterated_kernel_an, smoothed_norm};
use stirring::exact::{
    build_generator, check_evolution_identity, evolve_distribution, exact_duality, exact_v, occupation_moment,
    ExactModel, StateSpace, Stirring,
};
use stirring::hydro::{micro_macro_gap, solve_boundary_traces, solve_macro, Profile};
use stirring::kernels::{lclt_comparison, reflected_walk_kernel, KernelTable};
use stirring::pde::{evolve_rho, RhoField, RhoSolver};
use stirring::sim::{
    pair_stats, replicate, run_coupling_rng, site_marginals, InitialCondition, LabeledState, ParticleConfig,
};
use stirring::vfn::estimate_v_many;
use stirring::LatticeParams;
use stirring_cli::loglog_slope;

const KNOWN_FAILURES: [&str; 2] = ["3b", "4c"];

struct Check {
    id: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Criterion {
    checks: Vec<Check>,
}

impl Criterion {
    fn check(&mut self, id: &'static str, pass: bool, detail: String) {
        self.checks.push(Check { id, pass, detail });
    }

    fn le(&mut self, id: &'static str, what: &str, value: f64, tol: f64) {
        self.check(id, value <= tol, format!("{what} = {value:.3e} (tol {tol:.1e})"));
    }
}

fn params(n: i64, k: i64, j: f64) -> LatticeParams {
    LatticeParams::new(n, k, j).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sets of one or two sites out of `sites`.
fn small_sets(sites: &[i64]) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for (i, &x) in sites.iter().enumerate() {
        out.push(vec![x]);
        for &y in &sites[i + 1..] {
            out.push(vec![x, y]);
        }
    }
    out
}

fn random_configs(space: &StateSpace, count: usize, rng: &mut ChaCha8Rng) -> Vec<ParticleConfig> {
    (0..count)
        .map(|_| space.config(rng.gen_range(0..space.len())))
        .collect()
}

fn exactness() -> Criterion {
    let mut c = Criterion::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut dual, mut ck, mut identity) = (0.0f64, 0.0f64, 0.0f64);
    let mut v0_exact = true;
    for n in [2, 3] {
        let p = params(n, 1, 1.0);
        let sites: Vec<i64> = p.sites().collect();
        let stirring = Stirring::new(&p).unwrap();
        let starts = random_configs(stirring.generator().space(), 5, &mut rng);
        for eta0 in &starts {
            for x in small_sets(&sites) {
                for t in [0.1, 0.5, 2.0] {
                    let (l, r) = exact_duality(&stirring, &x, eta0, t).unwrap();
                    dual = dual.max((l - r).abs());
                }
                v0_exact &= exact_v(&p, &x, 0.0, eta0).unwrap() == 0.0;
            }
        }
        let g = build_generator(&p).unwrap();
        for eta0 in &starts {
            let p0 = g.space().point_mass(eta0).unwrap();
            for (s, t) in [(0.2, 0.5), (0.5, 1.5)] {
                let direct = evolve_distribution(&g, &p0, t).unwrap();
                let split = evolve_distribution(&g, &evolve_distribution(&g, &p0, s).unwrap(), t - s).unwrap();
                ck = ck.max(max_abs_diff(&direct, &split));
            }
        }
        let interior: Vec<i64> = sites.iter().copied().filter(|&x| !p.in_any_reservoir(x)).collect();
        let laws = [
            InitialCondition::Deterministic(starts[0].clone()),
            InitialCondition::Product(Profile::Sine(0.5, 0.3).sample(p).unwrap().values),
        ];
        for eta in &laws {
            let model = ExactModel::new(&p, eta).unwrap();
            for x in small_sets(&interior) {
                for t in [0.2, 0.5] {
                    identity = identity.max(check_evolution_identity(&model, &x, t, 1e-5).unwrap());
                }
            }
        }
    }
    c.le("1a", "duality max |lhs - rhs|, N=2,3, |X|<=2, 5 starts", dual, 1e-9);
    c.le("1b", "Chapman-Kolmogorov residual", ck, 1e-9);
    c.check(
        "1c",
        v0_exact,
        format!("v(X, 0) == 0 exactly for all |X|<=2: {v0_exact}"),
    );
    c.le("1d", "evolution identity residual, interior |X|<=2", identity, 1e-5);
    c
}

fn mc_vs_oracle() -> Criterion {
    let mut c = Criterion::default();
    let p = params(3, 1, 1.0);
    let eta = InitialCondition::Deterministic("1010101".parse().unwrap());
    let model = ExactModel::new(&p, &eta).unwrap();
    let space = model.generator().space();
    let reps = 100_000;
    let times = [0.2, 1.0];
    let mc = site_marginals(&p, &eta, &times, reps, 17).unwrap();
    let mut worst_z: f64 = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let state = model.state(t).unwrap();
        for (x, e) in p.sites().zip(&mc[k]) {
            let q = occupation_moment(space, &state.distribution, &[x]).unwrap();
            let sigma = (q * (1.0 - q) / reps as f64).sqrt();
            worst_z = worst_z.max((e.mean - q).abs() / sigma);
        }
    }
    c.le(
        "2a",
        "site marginals max |MC - exact| / sigma, N=3, 1e5 replicas",
        worst_z,
        3.0,
    );
    let tuples = vec![vec![-1, 1], vec![0, 1], vec![-3, 3]];
    let mut worst_v: f64 = 0.0;
    for (eta, seed) in [
        (eta.clone(), 18),
        (InitialCondition::Product(vec![0.8, 0.6, 0.5, 0.5, 0.5, 0.4, 0.2]), 19),
    ] {
        let model = ExactModel::new(&p, &eta).unwrap();
        for e in estimate_v_many(&p, &tuples, 0.2, &eta, reps, seed).unwrap() {
            let v = model.v(&e.sites, 0.2).unwrap();
            worst_v = worst_v.max((e.estimate - v).abs() / e.std_error);
        }
    }
    c.le("2b", "two-point v max |MC - exact| / sigma, 1e5 replicas", worst_v, 3.0);
    c
}

fn pair_scaling() -> Criterion {
    let mut c = Criterion::default();
    let p = params(100, 1, 0.0);
    let r = pair_stats(&p, 0, 1, 1.0, 10_000, 23).unwrap();
    let scale = p.diffusive_scale();
    let micro: Vec<(f64, f64)> = r.survival.iter().map(|&(s, q)| (scale * s, q)).collect();
    let slope = loglog_slope(&micro, 1e2, 1e4).unwrap();
    c.check(
        "3a",
        (slope + 0.5).abs() <= 0.1,
        format!("survival log-log slope over [1e2, 1e4] = {slope:.4} (target -0.5 +- 0.1)"),
    );
    let threshold = (scale * 1.0f64).powf(0.6);
    let freq = r.marks_tail(threshold);
    c.le(
        "3b",
        &format!("P[marks >= {threshold:.1}] at eps^-2 t = 1e4"),
        freq,
        0.01,
    );
    c
}

/// Chi-square of counts against probabilities, bins pooled in site order
/// until each expects at least five hits. Returns `(chi2, df)`.
fn pooled_chi2(observed: &[f64], expected: &[f64]) -> (f64, usize) {
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (a, b) in observed.iter().zip(expected) {
        o += a;
        e += b;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        let last = bins.last_mut().expect("at least one full bin");
        last.0 += o;
        last.1 += e;
    }
    (bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum(), bins.len() - 1)
}

fn coupling() -> Criterion {
    let mut c = Criterion::default();
    let p = params(100, 1, 0.0);
    let start = LabeledState::new(&p, vec![-1, 0, 1]).unwrap();
    let sigma = [0, 1, 2];
    let t = 1.0;
    let reps = 10_000;
    let runs = replicate(reps, 29, |_, rng| {
        let tr = run_coupling_rng(&p, &start, &sigma, &[t], false, rng).unwrap();
        (tr.states[0].clone(), tr.top_priority_mismatches)
    });
    let bad = runs.iter().filter(|(_, m)| *m > 0).count();
    c.check(
        "4a",
        bad == 0,
        format!("replicas with x_top != x0_top at some mark: {bad} of {reps}"),
    );
    let (mut chi2, mut df) = (0.0, 0);
    for (i, &x0) in start.positions.iter().enumerate() {
        let mut observed = vec![0.0; p.num_sites()];
        for (st, _) in &runs {
            observed[p.index(st.independent.positions[i])] += 1.0;
        }
        let expected: Vec<f64> = p
            .sites()
            .map(|y| reps as f64 * reflected_walk_kernel(&p, t, x0, y).unwrap())
            .collect();
        let (c2, d) = pooled_chi2(&observed, &expected);
        chi2 += c2;
        df += d;
    }
    let pval = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(chi2);
    c.check(
        "4b",
        pval >= 0.01,
        format!("independent marginals chi2 = {chi2:.1}, df = {df}, p = {pval:.3} (need >= 0.01)"),
    );
    let threshold = (p.diffusive_scale() * t).powf(0.3);
    let hits = runs
        .iter()
        .filter(|(st, _)| (st.stirring.positions[2] - st.independent.positions[2]).abs() as f64 >= threshold)
        .count();
    let freq = hits as f64 / reps as f64;
    c.le(
        "4c",
        &format!("P[|x_low - x0_low| >= {threshold:.2}], start (-1, 0, 1)"),
        freq,
        0.05,
    );
    c
}

fn kernels() -> Criterion {
    let mut c = Criterion::default();
    let mut rows: f64 = 0.0;
    for n in [1, 3, 10, 50] {
        let p = params(n, 1, 0.0);
        for t in [1e-3, 0.1, 1.0, 10.0] {
            let table = KernelTable::new(&p, t).unwrap();
            for x in p.sites() {
                rows = rows.max((table.row(x).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    c.le("5a", "max |row sum - 1|", rows, 1e-10);
    let mut expm: f64 = 0.0;
    for n in 1..=6 {
        let p = params(n, 1, 0.0);
        let m = p.num_sites();
        let half = 0.5 * p.diffusive_scale();
        let mut q = DMatrix::zeros(m, m);
        for i in 0..m - 1 {
            q[(i, i + 1)] = half;
            q[(i + 1, i)] = half;
            q[(i, i)] -= half;
            q[(i + 1, i + 1)] -= half;
        }
        for t in [0.01, 0.3, 2.0] {
            let e = (q.clone() * t).exp();
            for x in p.sites() {
                for y in p.sites() {
                    let k = reflected_walk_kernel(&p, t, x, y).unwrap();
                    expm = expm.max((k - e[(p.index(x), p.index(y))]).abs());
                }
            }
        }
    }
    c.le("5b", "max |kernel - expm|, N <= 6", expm, 1e-8);
    let mut c1: f64 = 0.0;
    for lambda in [100.0, 400.0, 1600.0] {
        c1 = c1.max(lclt_comparison(lambda).unwrap().c1);
    }
    c.le(
        "5c",
        "max sqrt(lambda) |Q - G| / G in window, lambda in {100, 400, 1600}",
        c1,
        5.0,
    );
    c
}

fn pde_hydro() -> Criterion {
    let mut c = Criterion::default();
    let mut conv: f64 = 0.0;
    for n in [10, 40] {
        let p = params(n, 2, 0.0);
        for u0 in [Profile::Step(0.0, 1.0), Profile::Sine(0.5, 0.4)] {
            let r0: RhoField = u0.sample(p).unwrap();
            for t in [0.01, 0.1, 0.7] {
                let r = evolve_rho(&r0, t, 1e-8).unwrap();
                conv = conv.max(max_abs_diff(
                    &r.values,
                    &KernelTable::new(&p, t).unwrap().apply(&r0.values),
                ));
            }
        }
    }
    c.le("6a", "j=0 solver vs kernel convolution", conv, 1e-7);
    let u0 = Profile::Sine(0.5, 0.25);
    let trace = solve_boundary_traces(&u0, 1.0, 1, 0.5, 1e-3).unwrap();
    let field = solve_macro(&u0, &trace, 0.5).unwrap();
    let gap = |n: i64| {
        let p = params(n, 1, 1.0);
        let rho = RhoSolver::new(&p).evolve(&u0.sample(p).unwrap(), 0.5, 1e-9).unwrap();
        micro_macro_gap(&rho, &field).unwrap()
    };
    let (g100, g200) = (gap(100), gap(200));
    c.check(
        "6b",
        g200 <= 0.7 * g100,
        format!(
            "gap(200) / gap(100) = {g200:.3e} / {g100:.3e} = {:.3} (need <= 0.7)",
            g200 / g100
        ),
    );
    let mut residual: f64 = 0.0;
    for (u, j, k) in [
        (Profile::Constant(0.5), 1.0, 1),
        (Profile::Sine(0.4, 0.3), 1.5, 2),
        (Profile::Step(0.2, 0.9), 3.0, 1),
    ] {
        residual = residual.max(solve_boundary_traces(&u, j, k, 1.0, 1e-3).unwrap().residual);
    }
    c.le("6c", "Picard residual of the boundary system", residual, 1e-8);
    let full = solve_boundary_traces(&Profile::Constant(1.0), 0.0, 1, 1.0, 1e-3).unwrap();
    let dev = full
        .u_plus
        .iter()
        .chain(&full.u_minus)
        .map(|u| (u - 1.0).abs())
        .fold(0.0, f64::max);
    c.le("6d", "j=0, u0=1: max |u_+- - 1|", dev, 1e-9);
    c
}

fn estimates() -> Criterion {
    let mut c = Criterion::default();
    let mut rel: f64 = 0.0;
    let mut bound = true;
    for t in [0.1, 1.0, 5.0, 10.0] {
        for n in 1..=30 {
            let q = iterated_kernel_an(n, t).unwrap();
            if n <= 10 {
                rel = rel.max((q - an_closed_form(n, t)).abs() / an_closed_form(n, t));
            }
            bound &= q <= an_bound(n, t);
        }
    }
    c.le("7a", "a_n quadrature vs closed form, relative, n <= 10", rel, 1e-8);
    c.check("7b", bound, format!("a_n(t) <= bound for n <= 30, t <= 10: {bound}"));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(5..=40);
        let p = params(n, 1, 0.0);
        let f: Vec<f64> = (0..p.num_sites()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let max = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(smoothed_norm(&p, &f, rng.gen_range(0.05..0.95)).unwrap() / max);
    }
    c.le(
        "7c",
        "max smoothed_norm(f) / max|f| over 100 random fields",
        worst,
        1.0 + 1e-12,
    );
    c
}

fn cli_table(dir: &Path, cmd: &str, threads: usize) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stirring"))
        .args(cmd.split_whitespace())
        .args(["--threads", &threads.to_string(), "--out"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let sub = cmd.split_whitespace().next().unwrap();
    std::fs::read(dir.join(format!("{sub}.csv"))).map_err(|e| e.to_string())
}

fn determinism() -> Criterion {
    let mut c = Criterion::default();
    let suites = [
        "simulate --n 10 --t 0.1,0.5 --replicas 2000 --seed 3",
        "pde --n 40 --t 0.1,0.5 --u0 sin:0.5:0.3",
        "hydro --u0 sin:0.5:0.25 --t 0.5 --h 1e-3 --n 50",
        "vfn --n 10 --sites -1,1;0,2 --replicas 640 --seed 4",
        "vfn --n 30 --mode blocks --a 0.6 --replicas 320 --seed 5",
        "exact --check duality --n 3 --t 0.5 --seed 6",
        "duality --n 3 --sites -1,1;0 --replicas 4000 --seed 7",
        "couple --n 30 --t 0.5 --replicas 2000 --seed 8",
        "pairstats --n 30 --t 0.5 --replicas 2000 --seed 9",
        "estimates --t 0.1,1,5 --n-max 12",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for cmd in suites {
        match (cli_table(a.path(), cmd, 1), cli_table(b.path(), cmd, 4)) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => differing.push(cmd.to_string()),
            (Err(e), _) | (_, Err(e)) => differing.push(format!("{cmd}: {e}")),
        }
    }
    c.check(
        "8",
        differing.is_empty(),
        format!(
            "{} of {} subcommand runs byte-identical between 1 and 4 threads {differing:?}",
            suites.len() - differing.len(),
            suites.len()
        ),
    );
    c
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Criterion); 8] = [
        ("1", "exactness", exactness),
        ("2", "Monte Carlo vs oracle", mc_vs_oracle),
        ("3", "pair-statistics scaling", pair_scaling),
        ("4", "coupling", coupling),
        ("5", "kernels", kernels),
        ("6", "PDE and hydrodynamics", pde_hydro),
        ("7", "estimates", estimates),
        ("8", "determinism across thread counts", determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        let start = Instant::now();
        let crit = f();
        let secs = start.elapsed().as_secs_f64();
        let pass = crit.checks.iter().all(|c| c.pass);
        println!(
            "{} criterion {id}: {name} ({secs:.1} s)",
            if pass { "PASS" } else { "FAIL" }
        );
        for ch in &crit.checks {
            let known = KNOWN_FAILURES.contains(&ch.id);
            let tag = match (ch.pass, known) {
                (true, _) => "ok  ",
                (false, true) => "FAIL (known, see decisions ledger)",
                (false, false) => "FAIL",
            };
            println!("    {} {}: {}", ch.id, tag, ch.detail);
            if !ch.pass && !known {
                unexpected.push(ch.id);
            }
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: no unexpected failures (known: {KNOWN_FAILURES:?})");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures {unexpected:?}");
        ExitCode::FAILURE
    }
}
