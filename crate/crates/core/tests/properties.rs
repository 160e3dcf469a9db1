use proptest::prelude::*;

use vsboltz::angular::CollisionKernel;
use vsboltz::collision::{q_weak, weak_form, CollisionSettings};
use vsboltz::functionals::{moment, prodi_serrin_from_q, prodi_serrin_range};
use vsboltz::grid::{make_maxwellian, GridFunction, VelocityGrid};
use vsboltz::harness::ExperimentConfig;
use vsboltz::inequalities::{interleave, post_collision, x2_sides, xy_sides, POINTWISE_TOL};
use vsboltz::verdict::InequalityVerdict;

fn small_grid() -> VelocityGrid {
    VelocityGrid::new(2, 4.0, 10).unwrap()
}

fn small_kernel() -> CollisionKernel {
    CollisionKernel::new(2, -1.5, 0.5, 1.0, 1e-2, 4, 1).unwrap()
}

fn bump(grid: VelocityGrid, centre: (f64, f64), width: f64) -> GridFunction {
    let mut f = GridFunction::from_fn(grid, |v| (-((v[0] - centre.0).powi(2) + (v[1] - centre.1).powi(2)) / (2.0 * width)).exp());
    f.nonnegative = true;
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_index_round_trips(dim in 2usize..=3, half in 1usize..7, pick in 0.0f64..1.0) {
        let g = VelocityGrid::new(dim, 3.0, 2 * half).unwrap();
        let flat = ((g.len() as f64 - 1.0) * pick) as usize;
        prop_assert_eq!(g.flat_index(g.multi_index(flat)), flat);
        prop_assert_eq!(g.mirror(g.mirror(flat)), flat);
        let (v, w) = (g.node(flat), g.node(g.mirror(flat)));
        for a in 0..dim {
            prop_assert!((v[a] + w[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_function_bytes_round_trip(values in proptest::collection::vec(-1e3f64..1e3, 16)) {
        let f = GridFunction::new(VelocityGrid::new(2, 1.0, 4).unwrap(), values).unwrap();
        prop_assert_eq!(GridFunction::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn maxwellian_carries_its_mass(mass in 0.1f64..3.0, t in 0.3f64..1.2, shift in -0.5f64..0.5) {
        // Spacing 1/2: the lattice sum of a Gaussian errs by about exp(-2π²T/h²).
        let grid = VelocityGrid::new(3, 8.0, 32).unwrap();
        let m = make_maxwellian(grid, mass, &[shift, 0.0, 0.0], t).unwrap();
        prop_assert!((moment(&m, 0.0) - mass).abs() < 1e-8 * mass);
        prop_assert!(m.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn elementary_inequalities_hold_pointwise(x in 0.0f64..50.0, y in 0.0f64..50.0, p in 1.01f64..12.0) {
        for (lhs, rhs, scale) in [xy_sides(x, y, p), x2_sides(x, y, p)] {
            prop_assert!((lhs - rhs) / scale.max(f64::MIN_POSITIVE) <= POINTWISE_TOL, "{lhs} > {rhs}");
        }
    }

    #[test]
    fn prodi_serrin_exponents_satisfy_the_scaling(d in 2usize..=3, g in 0.05f64..0.95, s in 0.05f64..0.95, t in 0.01f64..0.99) {
        let gamma = -g * d as f64;
        let (lo, hi) = prodi_serrin_range(d, gamma, s);
        let q = lo + t * (hi - lo);
        let p = prodi_serrin_from_q(d, gamma, s, q).unwrap();
        prop_assert!(p.scaling_defect() <= 1e-12 * (1.0 + 2.0 * s + d as f64 + gamma.abs()));
        prop_assert!(p.nu > 0.0 && p.nu < s && p.r > 1.0);
    }

    #[test]
    fn collisions_conserve_momentum_and_energy(
        v in proptest::array::uniform3(-5.0f64..5.0),
        vs in proptest::array::uniform3(-5.0f64..5.0),
        dir in proptest::array::uniform3(-1.0f64..1.0),
    ) {
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        prop_assume!(n > 1e-3);
        let sigma = [dir[0] / n, dir[1] / n, dir[2] / n];
        let vp = post_collision(&v, &vs, &sigma);
        let vsp: Vec<f64> = (0..3).map(|a| v[a] + vs[a] - vp[a]).collect();
        let e = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>();
        prop_assert!((e(&vp) + e(&vsp) - e(&v) - e(&vs)).abs() < 1e-10 * (1.0 + e(&v) + e(&vs)));
    }

    #[test]
    fn verdict_passes_iff_margin_within_slack(lhs in -10.0f64..10.0, rhs in -10.0f64..10.0, slack in 0.0f64..0.5) {
        let v = InequalityVerdict::new("p", lhs, rhs, slack);
        prop_assert_eq!(v.pass, rhs - lhs >= -slack * rhs.abs());
        let w = InequalityVerdict::new("q", 0.0, 1.0, 0.0);
        prop_assert_eq!(InequalityVerdict::all("both", &[v.clone(), w]).pass, v.pass);
    }

    #[test]
    fn interleave_partitions(items in proptest::collection::vec(0u32..1000, 0..40)) {
        let (fit, val) = interleave(&items);
        prop_assert_eq!(fit.len() + val.len(), items.len());
        prop_assert!(fit.len() >= val.len() && fit.len() <= val.len() + 1);
        let mut merged: Vec<u32> = fit.iter().chain(&val).copied().collect();
        let mut all = items.clone();
        merged.sort();
        all.sort();
        prop_assert_eq!(merged, all);
    }

    #[test]
    fn config_round_trips_through_toml(n in 4usize..40, radius in 1.0f64..20.0, seed in 0u64..1000, eps in proptest::collection::vec(1e-3f64..10.0, 1..4)) {
        let mut c = ExperimentConfig::default();
        c.grid.n = n;
        c.grid.radius = radius;
        c.corpus.seed = seed;
        c.functional.eps = eps;
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn weak_form_is_linear_in_the_test_function(a in -2.0f64..2.0, b in -2.0f64..2.0, cx in -1.0f64..1.0, w in 0.4f64..1.5) {
        let grid = small_grid();
        let kernel = small_kernel();
        let (g, f) = (bump(grid, (cx, 0.0), w), bump(grid, (-0.5, 0.3), 0.8));
        let phi = GridFunction::from_fn(grid, |v| v[0] * v[0] - v[1]);
        let psi = GridFunction::from_fn(grid, |v| (v[0] + 0.5 * v[1]).cos());
        let combo = phi.scale(a).add(&psi.scale(b)).unwrap();
        let lhs = q_weak(&g, &f, &combo, &kernel).unwrap();
        let rhs = a * q_weak(&g, &f, &phi, &kernel).unwrap() + b * q_weak(&g, &f, &psi, &kernel).unwrap();
        let scale = q_weak(&g, &f, &phi.abs(), &kernel).unwrap().abs() + q_weak(&g, &f, &psi.abs(), &kernel).unwrap().abs() + 1e-300;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn weak_form_conserves_mass_exactly(cx in -1.0f64..1.0, cy in -1.0f64..1.0, w in 0.4f64..1.5) {
        let grid = small_grid();
        let f = bump(grid, (cx, cy), w);
        let r = weak_form(&f, &f, &small_kernel(), &CollisionSettings::default()).unwrap().residuals();
        prop_assert!(r.mass.abs() <= 1e-12 * r.loss_scale);
    }
}
