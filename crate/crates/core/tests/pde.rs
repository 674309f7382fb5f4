use proptest::prelude::*;
use stirring::kernels::KernelTable;
use stirring::pde::{boundary_drift, evolve_rho, gradient_profile, RhoField, RhoSolver};
use stirring::quad::GaussLegendre;
use stirring::{LatticeParams, Side};

fn step_profile(p: LatticeParams) -> RhoField {
    let occ: Vec<bool> = p.sites().map(|x| x > 0).collect();
    RhoField::from_occupation(p, &occ).unwrap()
}

#[test]
fn pure_diffusion_equals_kernel_convolution() {
    for n in [3, 10, 40] {
        let p = LatticeParams::new(n, 2, 0.0).unwrap();
        let r0 = step_profile(p);
        for t in [0.01, 0.1, 0.7] {
            let r = evolve_rho(&r0, t, 1e-8).unwrap();
            let oracle = KernelTable::new(&p, t).unwrap().apply(&r0.values);
            let err = r.values.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-7, "N {n} t {t}: {err}");
        }
    }
}

/// Boundary forcing `eps^-1 j/2 (1_{I+} D_+ - 1_{I-} D_-)`.
fn forcing(rho: &RhoField) -> Vec<f64> {
    let p = rho.params;
    let amp = p.inv_epsilon() * p.rate() / 2.0;
    p.sites()
        .map(|x| {
            let mut v = 0.0;
            if p.in_reservoir(x, Side::Plus) {
                v += boundary_drift(&p, &rho.values, Side::Plus, x).unwrap();
            }
            if p.in_reservoir(x, Side::Minus) {
                v -= boundary_drift(&p, &rho.values, Side::Minus, x).unwrap();
            }
            amp * v
        })
        .collect()
}

#[test]
fn solution_satisfies_duhamel_formula() {
    let p = LatticeParams::new(3, 1, 1.0).unwrap();
    let r0 = step_profile(p);
    let t = 0.2;
    let solver = RhoSolver::new(&p);
    let rt = solver.evolve(&r0, t, 1e-11).unwrap();
    let mut rhs = KernelTable::new(&p, t).unwrap().apply(&r0.values);
    for (s, w) in GaussLegendre::new(30).points(0.0, t) {
        let rs = solver.evolve(&r0, s, 1e-11).unwrap();
        let pf = KernelTable::new(&p, t - s).unwrap().apply(&forcing(&rs));
        rhs.iter_mut().zip(&pf).for_each(|(r, v)| *r += w * v);
    }
    for (a, b) in rt.values.iter().zip(&rhs) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn reservoir_driven_profile_reaches_both_ends() {
    let p = LatticeParams::new(20, 2, 1.0).unwrap();
    let r0 = RhoField::constant(p, 0.5).unwrap();
    let r = evolve_rho(&r0, 2.0, 1e-8).unwrap();
    assert!(r.at(20) > r.at(0) && r.at(0) > r.at(-20));
}

#[test]
fn large_lattice_solve_is_fast_and_in_range() {
    let p = LatticeParams::new(200, 1, 1.0).unwrap();
    let r0 = step_profile(p);
    let start = std::time::Instant::now();
    let r = evolve_rho(&r0, 0.5, 1e-8).unwrap();
    assert!(start.elapsed().as_secs_f64() < 20.0);
    assert!(r.values.iter().all(|v| (-1e-8..=1.0 + 1e-8).contains(v)));
}

#[test]
fn gradient_decays_like_inverse_square_root() {
    // Step datum: the gradient is a single stirring kernel, decaying as
    // lambda^-1/2 until the walls are felt.
    let p = LatticeParams::new(400, 1, 0.0).unwrap();
    let solver = RhoSolver::new(&p);
    let r0 = step_profile(p);
    let lambdas = [1e2, 3e2, 1e3, 3e3, 1e4];
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &l in &lambdas {
        let r = solver.evolve(&r0, l / p.diffusive_scale(), 1e-10).unwrap();
        let (x, y) = (f64::ln(l), gradient_profile(&r).ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let n = lambdas.len() as f64;
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!(slope <= -0.45, "slope {slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn solution_stays_in_unit_interval(
        values in proptest::collection::vec(0.0f64..=1.0, 11),
        k in 1i64..=3,
        j in 0.0f64..3.0,
        t in 0.01f64..5.0,
    ) {
        let p = LatticeParams::new(5, k, j).unwrap();
        let r0 = RhoField::new(p, 0.0, values).unwrap();
        let tol = 1e-8;
        let r = evolve_rho(&r0, t, tol).unwrap();
        for v in &r.values {
            prop_assert!(*v >= -tol && *v <= 1.0 + tol, "{v}");
        }
    }
}
