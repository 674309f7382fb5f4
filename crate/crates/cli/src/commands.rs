//! Subcommand bodies. Each reads its settings and returns a table.

use rand::Rng;
use stirring::estimates::{an_bound, an_closed_form, an_series_bound, iterated_kernel_an};
use stirring::exact::{
    build_generator, check_evolution_identity, evolve_distribution, exact_duality, ExactModel, StateSpace, Stirring,
    MAX_V_N,
};
use stirring::hydro::{micro_macro_gap, solve_boundary_traces, solve_macro, Profile};
use stirring::pde::RhoSolver;
use stirring::sim::{
    duality_check, pair_stats, replica_rng, replicate, run_coupling_rng, site_marginals, InitialCondition,
    LabeledState, ParticleConfig,
};
use stirring::vfn::{block_average_test, estimate_v_many, initial_profile_check};
use stirring::LatticeParams;

use crate::settings::{parse_list, Settings};
use crate::table::{float, sites, Table};
use crate::{loglog_slope, CliError, Outcome};

type Res = Result<Outcome, CliError>;

fn lattice(s: &Settings, n_default: &str, j_default: &str) -> Result<LatticeParams, CliError> {
    let n: i64 = s.get("n", n_default)?;
    let k: i64 = s.get("k", "1")?;
    let j: f64 = s.get("j", j_default)?;
    Ok(LatticeParams::new(n, k, j)?)
}

fn stirring_lattice(s: &Settings, n_default: &str) -> Result<LatticeParams, CliError> {
    let n: i64 = s.get("n", n_default)?;
    Ok(LatticeParams::new(n, 1, 0.0)?)
}

fn profile(v: &str) -> Result<Profile, CliError> {
    v.parse().map_err(|e: stirring::Error| CliError::Usage(e.to_string()))
}

fn is_config(v: &str) -> bool {
    !v.is_empty() && v.chars().all(|c| c == '0' || c == '1')
}

/// `0`/`1` strings are deterministic starts, anything else a profile
/// sampled as a product measure.
fn initial(s: &Settings, p: &LatticeParams, default: &str) -> Result<InitialCondition, CliError> {
    let v = s.string("eta0", default);
    let eta = if is_config(&v) {
        InitialCondition::Deterministic(v.parse::<ParticleConfig>()?)
    } else {
        InitialCondition::Product(profile(&v)?.sample(*p)?.values)
    };
    eta.validate(p)?;
    Ok(eta)
}

fn deterministic(s: &Settings, p: &LatticeParams) -> Result<ParticleConfig, CliError> {
    let default: String = p.sites().map(|x| if x > 0 { '1' } else { '0' }).collect();
    match initial(s, p, &default)? {
        InitialCondition::Deterministic(c) => Ok(c),
        InitialCondition::Product(_) => Err(CliError::Invalid(
            "this command needs a 0/1 configuration for --eta0".into(),
        )),
    }
}

/// Site tuples `x1,x2;y1,y2`.
fn tuples(s: &Settings, default: &str) -> Result<Vec<Vec<i64>>, CliError> {
    let v = s.string("sites", default);
    v.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_list::<i64>(t).map_err(|e| CliError::Usage(format!("--sites {v:?}: {e}"))))
        .collect()
}

fn seed(s: &Settings) -> Result<u64, CliError> {
    s.get("seed", "1")
}

fn collect<T>(v: Vec<stirring::Result<T>>) -> Result<Vec<T>, CliError> {
    v.into_iter()
        .collect::<stirring::Result<Vec<T>>>()
        .map_err(CliError::from)
}

pub fn simulate(s: &Settings) -> Res {
    let p = lattice(s, "10", "1")?;
    let eta = initial(s, &p, "const:0.5")?;
    let times: Vec<f64> = s.list("t", "0.1,0.5,1")?;
    let replicas: usize = s.get("replicas", "1000")?;
    let m = site_marginals(&p, &eta, &times, replicas, seed(s)?)?;
    let mut table = Table::new(&["time", "site", "mean", "std_error"]);
    for (t, row) in times.iter().zip(&m) {
        for (x, e) in p.sites().zip(row) {
            table.push(vec![float(*t), x.to_string(), float(e.mean), float(e.std_error)]);
        }
    }
    let mut out = Outcome::new(table);
    out.note("replicas", replicas);
    Ok(out)
}

pub fn pde(s: &Settings) -> Res {
    let p = lattice(s, "50", "1")?;
    let u0 = profile(&s.string("u0", "step:0:1"))?;
    let times: Vec<f64> = s.list("t", "0.1")?;
    let tol: f64 = s.get("tol", "1e-8")?;
    let path = RhoSolver::new(&p).evolve_path(&u0.sample(p)?, &times, tol)?;
    let eps = p.epsilon();
    let mut table = Table::new(&["time", "site", "r", "rho"]);
    for (t, rho) in times.iter().zip(&path) {
        for (x, v) in p.sites().zip(&rho.values) {
            table.push(vec![float(*t), x.to_string(), float(eps * x as f64), float(*v)]);
        }
    }
    let mut out = Outcome::new(table);
    if let Some(last) = path.last() {
        out.note("final_mass", float(last.mass()));
    }
    Ok(out)
}

pub fn hydro(s: &Settings) -> Res {
    let u0 = profile(&s.string("u0", "const:0.5"))?;
    let j: f64 = s.get("j", "1")?;
    let k: u32 = s.get("k", "1")?;
    let t: f64 = s.get("t", "1")?;
    let h: f64 = s.get("h", "1e-3")?;
    let tol: f64 = s.get("tol", "1e-8")?;
    let trace = solve_boundary_traces(&u0, j, k, t, h)?;
    let mut table = Table::new(&["time", "u_plus", "u_minus"]);
    for i in 0..trace.len() {
        table.push(vec![
            float(trace.time(i)),
            float(trace.u_plus[i]),
            float(trace.u_minus[i]),
        ]);
    }
    let mut out = Outcome::new(table);
    out.note("residual", float(trace.residual));
    if let Some(n) = s.optional("n") {
        let n: i64 = n.parse().map_err(|e| CliError::Usage(format!("--n {n:?}: {e}")))?;
        let p = LatticeParams::new(n, k as i64, j)?;
        let rho = RhoSolver::new(&p).evolve(&u0.sample(p)?, t, 1e-9)?;
        let field = solve_macro(&u0, &trace, t)?;
        out.note("micro_macro_gap", float(micro_macro_gap(&rho, &field)?));
    }
    if !(trace.residual <= tol) {
        out.failure = Some(format!("residual {:e} exceeds tolerance {tol:e}", trace.residual));
    }
    Ok(out)
}

pub fn vfn(s: &Settings) -> Res {
    let p = lattice(s, "10", "1")?;
    let eta = initial(s, &p, "sin:0.5:0.25")?;
    let t: f64 = s.get("t", "0.5")?;
    let replicas: usize = s.get("replicas", "320")?;
    let seed = seed(s)?;
    match s.string("mode", "v").as_str() {
        "v" => {
            let xs = tuples(s, "-1,1")?;
            let est = estimate_v_many(&p, &xs, t, &eta, replicas, seed)?;
            let model = if p.half_width() <= MAX_V_N {
                Some(ExactModel::new(&p, &eta)?)
            } else {
                None
            };
            let mut header = vec!["sites", "time", "estimate", "std_error", "replicas"];
            if model.is_some() {
                header.push("exact");
            }
            let mut table = Table::new(&header);
            for e in &est {
                let mut row = vec![
                    sites(&e.sites),
                    float(e.time),
                    float(e.estimate),
                    float(e.std_error),
                    e.replicas.to_string(),
                ];
                if let Some(m) = &model {
                    row.push(float(m.v(&e.sites, t)?));
                }
                table.push(row);
            }
            let mut out = Outcome::new(table);
            out.note("replicas", est[0].replicas);
            Ok(out)
        }
        "blocks" => {
            let a: f64 = s.get("a", "0.8")?;
            let delta: f64 = s.get("delta", "0.3")?;
            let r = block_average_test(&p, &eta, t, a, delta, replicas, seed)?;
            let mut table = Table::new(&["replica", "sup_deviation"]);
            for (i, v) in r.sups.iter().enumerate() {
                table.push(vec![i.to_string(), float(*v)]);
            }
            let mut out = Outcome::new(table);
            out.note("half_width", r.blocks.half_width);
            out.note("probability", float(r.probability));
            out.note("std_error", float(r.std_error));
            let v = s.string("eta0", "sin:0.5:0.25");
            if !is_config(&v) {
                let u0 = profile(&v)?;
                out.note("initial_gap", float(initial_profile_check(&p, &eta, &u0, a)?));
            }
            Ok(out)
        }
        other => Err(CliError::Usage(format!("--mode must be v or blocks, got {other:?}"))),
    }
}

/// Subsets of `sites` with `1..=max` elements, in lexicographic order.
fn subsets(sites: &[i64], max: usize) -> Vec<Vec<i64>> {
    fn rec(sites: &[i64], max: usize, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        for (i, &x) in sites.iter().enumerate() {
            cur.push(x);
            out.push(cur.clone());
            if cur.len() < max {
                rec(&sites[i + 1..], max, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(sites, max, &mut Vec::new(), &mut out);
    out
}

/// The configuration given by `--eta0`, or `samples` uniform ones.
fn starts(s: &Settings, space: &StateSpace) -> Result<Vec<ParticleConfig>, CliError> {
    if let Some(v) = s.optional("eta0") {
        if !is_config(&v) {
            return Err(CliError::Invalid("--eta0 must be a 0/1 configuration here".into()));
        }
        let c: ParticleConfig = v.parse()?;
        space.index(&c)?;
        return Ok(vec![c]);
    }
    let samples: usize = s.get("samples", "5")?;
    let seed = seed(s)?;
    Ok((0..samples)
        .map(|i| space.config(replica_rng(seed, i as u64).gen_range(0..space.len())))
        .collect())
}

pub fn exact(s: &Settings) -> Res {
    let check = s.string("check", "duality");
    let tol_default = match check.as_str() {
        "duality" | "chapman" => "1e-9",
        "identity" => "1e-5",
        "v" => "inf",
        other => {
            return Err(CliError::Usage(format!(
                "--check must be duality, chapman, identity or v, got {other:?}"
            )))
        }
    };
    let p = lattice(s, "2", "1")?;
    let times: Vec<f64> = s.list("t", "0.5")?;
    let tol: f64 = s.get("tol", tol_default)?;
    let max_size: usize = s.get("max-size", "2")?;
    let all: Vec<i64> = p.sites().collect();
    let mut worst: f64 = 0.0;
    let table = match check.as_str() {
        "duality" => {
            let stirring = Stirring::new(&p)?;
            let mut table = Table::new(&["eta0", "sites", "time", "lhs", "rhs", "abs_error"]);
            for eta0 in starts(s, stirring.generator().space())? {
                for x in subsets(&all, max_size) {
                    for &t in &times {
                        let (l, r) = exact_duality(&stirring, &x, &eta0, t)?;
                        worst = worst.max((l - r).abs());
                        table.push(vec![
                            eta0.to_string(),
                            sites(&x),
                            float(t),
                            float(l),
                            float(r),
                            float((l - r).abs()),
                        ]);
                    }
                }
            }
            table
        }
        "chapman" => {
            let g = build_generator(&p)?;
            let mut table = Table::new(&["eta0", "time", "residual"]);
            for eta0 in starts(s, g.space())? {
                let p0 = g.space().point_mass(&eta0)?;
                for &t in &times {
                    let direct = evolve_distribution(&g, &p0, t)?;
                    let half = evolve_distribution(&g, &evolve_distribution(&g, &p0, 0.5 * t)?, 0.5 * t)?;
                    let r = direct.iter().zip(&half).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    worst = worst.max(r);
                    table.push(vec![eta0.to_string(), float(t), float(r)]);
                }
            }
            table
        }
        "identity" => {
            let eta = initial(s, &p, "sin:0.5:0.25")?;
            let dt: f64 = s.get("dt", "1e-5")?;
            let model = ExactModel::new(&p, &eta)?;
            let interior: Vec<i64> = all.iter().copied().filter(|&x| !p.in_any_reservoir(x)).collect();
            let mut table = Table::new(&["sites", "time", "residual"]);
            for x in subsets(&interior, max_size) {
                for &t in &times {
                    let r = check_evolution_identity(&model, &x, t, dt)?;
                    worst = worst.max(r);
                    table.push(vec![sites(&x), float(t), float(r)]);
                }
            }
            table
        }
        _ => {
            let eta = initial(s, &p, "sin:0.5:0.25")?;
            let model = ExactModel::new(&p, &eta)?;
            let mut table = Table::new(&["sites", "time", "v"]);
            for &t in &times {
                let tab = model.table(t, max_size)?;
                for x in subsets(&all, max_size) {
                    let v = tab.get(&x).expect("tabulated");
                    worst = worst.max(v.abs());
                    table.push(vec![sites(&x), float(t), float(v)]);
                }
            }
            table
        }
    };
    let mut out = Outcome::new(table);
    let key = if check == "v" { "max_abs_v" } else { "max_error" };
    out.note(key, float(worst));
    if check != "v" {
        out.note("tolerance", float(tol));
        if !(worst <= tol) {
            out.failure = Some(format!("{check}: max error {worst:e} exceeds {tol:e}"));
        }
    }
    Ok(out)
}

pub fn duality(s: &Settings) -> Res {
    let p = stirring_lattice(s, "3")?;
    let eta0 = deterministic(s, &p)?;
    let t: f64 = s.get("t", "0.5")?;
    let replicas: usize = s.get("replicas", "10000")?;
    let seed = seed(s)?;
    let exact = if p.half_width() <= stirring::exact::MAX_GENERATOR_N {
        Some(Stirring::new(&p)?)
    } else {
        None
    };
    let mut header = vec!["sites", "time", "lhs", "lhs_std_error", "rhs", "rhs_std_error", "z"];
    if exact.is_some() {
        header.push("exact");
    }
    let mut table = Table::new(&header);
    for x in tuples(s, "-1,1")? {
        let r = duality_check(&p, &x, &eta0, t, replicas, seed)?;
        let mut row = vec![
            sites(&x),
            float(t),
            float(r.lhs.mean),
            float(r.lhs.std_error),
            float(r.rhs.mean),
            float(r.rhs.std_error),
            float(r.z_score),
        ];
        if let Some(st) = &exact {
            row.push(float(exact_duality(st, &x, &eta0, t)?.0));
        }
        table.push(row);
    }
    let mut out = Outcome::new(table);
    out.note("replicas", replicas);
    Ok(out)
}

pub fn couple(s: &Settings) -> Res {
    let p = stirring_lattice(s, "100")?;
    let x0: Vec<i64> = s.list("x0", "-1,0,1")?;
    let default_sigma: String = (0..x0.len()).map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    let sigma: Vec<usize> = s.list("sigma", &default_sigma)?;
    let t: f64 = s.get("t", "1")?;
    let replicas: usize = s.get("replicas", "1000")?;
    let zeta: f64 = s.get("zeta", "0.05")?;
    let seed = seed(s)?;
    let start = LabeledState::new(&p, x0.clone())?;
    // Validates sigma before fanning out.
    run_coupling_rng(&p, &start, &sigma, &[0.0], false, &mut replica_rng(seed, 0))?;
    let runs = collect(replicate(replicas, seed, |_, rng| {
        run_coupling_rng(&p, &start, &sigma, &[t], false, rng)
            .map(|tr| (tr.states[0].clone(), tr.top_priority_mismatches))
    }))?;
    let n = x0.len();
    let low = (0..n).max_by_key(|&i| sigma[i]).expect("nonempty");
    let threshold = (p.diffusive_scale() * t).powf(0.25 + zeta);
    let mut header: Vec<String> = vec!["replica".into()];
    header.extend((0..n).map(|i| format!("stirring_{i}")));
    header.extend((0..n).map(|i| format!("independent_{i}")));
    header.push("deviation".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header);
    let mut hits = 0usize;
    let mut mismatches = 0u64;
    for (r, (st, mm)) in runs.iter().enumerate() {
        let dev = (st.stirring.positions[low] - st.independent.positions[low]).abs();
        if dev as f64 >= threshold {
            hits += 1;
        }
        mismatches += mm;
        let mut row = vec![r.to_string()];
        row.extend(st.stirring.positions.iter().map(i64::to_string));
        row.extend(st.independent.positions.iter().map(i64::to_string));
        row.push(dev.to_string());
        table.push(row);
    }
    let mut out = Outcome::new(table);
    out.note("lowest_priority_particle", low);
    out.note("deviation_threshold", float(threshold));
    out.note("deviation_frequency", float(hits as f64 / replicas.max(1) as f64));
    out.note("top_priority_mismatches", mismatches);
    Ok(out)
}

pub fn pairstats(s: &Settings) -> Res {
    let p = stirring_lattice(s, "100")?;
    let x1: i64 = s.get("x1", "0")?;
    let x2: i64 = s.get("x2", "1")?;
    let t: f64 = s.get("t", "1")?;
    let replicas: usize = s.get("replicas", "1000")?;
    let zeta: f64 = s.get("zeta", "0.1")?;
    let lo: f64 = s.get("fit-lo", "1e2")?;
    let hi: f64 = s.get("fit-hi", "1e4")?;
    let r = pair_stats(&p, x1, x2, t, replicas, seed(s)?)?;
    let scale = p.diffusive_scale();
    let mut table = Table::new(&["s", "micro_s", "survival"]);
    for &(sv, q) in &r.survival {
        table.push(vec![float(sv), float(scale * sv), float(q)]);
    }
    let micro_t = scale * t;
    let threshold = micro_t.powf(0.5 + zeta);
    let m = r.samples.len().max(1) as f64;
    let mut out = Outcome::new(table);
    out.note("micro_horizon", float(micro_t));
    out.note("marks_threshold", float(threshold));
    out.note("marks_tail_frequency", float(r.marks_tail(threshold)));
    out.note(
        "mean_marks",
        float(r.samples.iter().map(|x| x.n_marks as f64).sum::<f64>() / m),
    );
    out.note(
        "mean_adjacent_time",
        float(r.samples.iter().map(|x| x.occupation).sum::<f64>() / m),
    );
    let micro: Vec<(f64, f64)> = r.survival.iter().map(|&(sv, q)| (scale * sv, q)).collect();
    out.note(
        "survival_slope",
        loglog_slope(&micro, lo, hi).map(float).unwrap_or_else(|| "nan".into()),
    );
    Ok(out)
}

pub fn estimates(s: &Settings) -> Res {
    let times: Vec<f64> = s.list("t", "0.1,1,5")?;
    let n_max: usize = s.get("n-max", "10")?;
    let mut table = Table::new(&["n", "t", "quadrature", "closed_form", "bound", "relative_error"]);
    let mut worst: f64 = 0.0;
    let mut bound_holds = true;
    let mut out_notes = Vec::new();
    for &t in &times {
        for n in 1..=n_max {
            let q = iterated_kernel_an(n, t)?;
            let c = an_closed_form(n, t);
            let b = an_bound(n, t);
            let rel = if c > 0.0 { (q - c).abs() / c } else { (q - c).abs() };
            worst = worst.max(rel);
            bound_holds &= q <= b;
            table.push(vec![n.to_string(), float(t), float(q), float(c), float(b), float(rel)]);
        }
        let sr = an_series_bound(t, n_max)?;
        out_notes.push((format!("series_fitted_c_t{t}"), float(sr.fitted_c)));
        out_notes.push((format!("series_full_sum_t{t}"), float(sr.full_sum)));
    }
    let mut out = Outcome::new(table);
    out.note("max_relative_error", float(worst));
    out.note("bound_holds", bound_holds);
    out.summary.extend(out_notes);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_in_order() {
        assert_eq!(
            subsets(&[1, 2, 3], 2),
            vec![vec![1], vec![1, 2], vec![1, 3], vec![2], vec![2, 3], vec![3]]
        );
        assert_eq!(subsets(&[1, 2, 3], 3).len(), 7);
    }
}
