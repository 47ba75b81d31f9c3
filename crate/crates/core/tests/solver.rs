use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use podhjb::dynamics::{build_test1, ControlledSystem, IntegratorConfig, Trajectory};
use podhjb::hjbgrid::SimplexGrid;
use podhjb::hjbsolve::{
    bellman_sweep, build_arrival_cache, evaluate_cost, feedback, initial_value_guess, simulate_closed_loop,
    value_iteration, ArrivalCache, ClampPolicy, ControlSet, ControlTable, Feedback, DEFAULT_CACHE_BUDGET,
};
use podhjb::inner;
use podhjb::pod::{compute_basis, generate_snapshots, project_coeffs, PodBasis};
use podhjb::reduced::{build_domain, clamp_to_domain, Hyperbox, ReducedSystem};

fn pendulum() -> ControlledSystem {
    ControlledSystem::new(
        "pendulum",
        vec![1.0, 1.0],
        (-1.0, 1.0),
        |y, u, out| {
            out[0] = y[1];
            out[1] = -y[0].sin() - 0.3 * y[1] + u;
        },
        |y, u| y[0] * y[0] + 0.5 * y[1] * y[1] + 0.1 * u * u,
    )
    .unwrap()
}

struct Setup {
    sys: ControlledSystem,
    basis: PodBasis,
    grid: SimplexGrid,
    controls: ControlSet,
}

impl Setup {
    fn pendulum(k: f64) -> Self {
        let domain = Hyperbox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        Self {
            sys: pendulum(),
            basis: PodBasis::identity(vec![1.0, 1.0]),
            grid: SimplexGrid::build(&domain, k, 1 << 20).unwrap(),
            controls: ControlSet::uniform(7, -1.0, 1.0).unwrap(),
        }
    }

    fn cache(&self, h: f64) -> ArrivalCache {
        let rs = ReducedSystem::new(&self.sys, &self.basis, self.grid.dim()).unwrap();
        build_arrival_cache(&self.grid, &rs, &self.controls, h, ClampPolicy::Clamp, DEFAULT_CACHE_BUDGET).unwrap()
    }
}

#[test]
fn cache_matches_recomputed_stencils() {
    // a genuinely reduced system: Test 1 with r = 3
    let sys = build_test1(30).unwrap();
    let y0 = sys.initial_state().unwrap().to_vec();
    let snap = generate_snapshots(&sys, &[-1.0, 0.0, 1.0], &y0, 0.1, 2.0, &IntegratorConfig::default(), false).unwrap();
    let basis = compute_basis(&snap, 2.0, 1e-12).unwrap();
    let domain = build_domain(&basis, &snap, 3, 0.0).unwrap();
    let grid = SimplexGrid::build(&domain, 0.1, 1 << 20).unwrap();
    let rs = ReducedSystem::new(&sys, &basis, 3).unwrap();
    let controls = ControlSet::uniform(5, -1.0, 1.0).unwrap();
    let h = 0.01;
    let cache = build_arrival_cache(&grid, &rs, &controls, h, ClampPolicy::Clamp, DEFAULT_CACHE_BUDGET).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let i = rng.random_range(0..grid.node_count);
        let c = rng.random_range(0..controls.len());
        let y = grid.node(i);
        let u = controls.values()[c];
        let f = rs.rhs(&y, u);
        let arrival: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a + h * b).collect();
        let (clamped, _) = clamp_to_domain(&grid.domain, &arrival);
        let fresh = grid.stencil(&clamped).unwrap();
        let (idx, w) = cache.arrival(i, c);
        let nodal: Vec<f64> = (0..grid.node_count).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cached: f64 = idx.iter().zip(w).map(|(j, w)| w * nodal[*j as usize]).sum();
        assert!((cached - fresh.apply(&nodal)).abs() < 1e-12);
        assert!((cache.stage_cost(i, c) - rs.cost(&y, u)).abs() < 1e-14);
    }
}

#[test]
fn argmin_table_is_invariant_under_a_cost_shift() {
    let setup = Setup::pendulum(0.1);
    let (lambda, h) = (1.0, 0.01);
    let cache = setup.cache(h);
    let (v, table) = value_iteration(&cache, vec![0.0; setup.grid.node_count], lambda, 1e-10, 1_000_000).unwrap();
    let mut shifted = setup.cache(h);
    let c = 0.7;
    shifted.shift_costs(c);
    let (w, other) = value_iteration(&shifted, vec![0.0; setup.grid.node_count], lambda, 1e-10, 1_000_000).unwrap();
    let dist = v.fixed_point_distance() + w.fixed_point_distance();
    for (a, b) in v.values.iter().zip(&w.values) {
        assert!((b - a - c / lambda).abs() <= dist + 1e-9);
    }
    assert_eq!(table, other);
    assert!(table.controls.iter().all(|u| setup.controls.values().contains(u)));
}

#[test]
fn unconverged_runs_are_flagged() {
    let setup = Setup::pendulum(0.1);
    let cache = setup.cache(0.01);
    let (v, _) = value_iteration(&cache, vec![0.0; setup.grid.node_count], 1.0, 1e-12, 5).unwrap();
    assert!(!v.converged);
    assert_eq!(v.iterations, 5);
    assert!(v.values.iter().all(|x| x.is_finite()));
}

#[test]
fn feedback_composes_projection_and_interpolation() {
    let setup = Setup::pendulum(0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let controls: Vec<f64> = (0..setup.grid.node_count).map(|_| rng.random_range(-1.0..1.0)).collect();
    let table = ControlTable {
        control_index: vec![0; controls.len()],
        controls,
    };
    let law = Feedback::new(&setup.basis, &setup.grid, &table, (-1.0, 1.0)).unwrap();
    for _ in 0..50 {
        let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let c = project_coeffs(&setup.basis, &y, 2).unwrap();
        let (c, _) = clamp_to_domain(&setup.grid.domain, &c);
        let expect = setup.grid.interpolate(&table.controls, &c).unwrap();
        assert!((feedback(&law, &y) - expect).abs() < 1e-14);
    }
    for i in 0..setup.grid.node_count {
        assert_eq!(feedback(&law, &setup.grid.node(i)), table.controls[i]);
    }
}

#[test]
fn initial_guess_of_a_unit_cost() {
    let sys = ControlledSystem::new("unit", vec![1.0], (-1.0, 1.0), |_, _, out| out[0] = 0.0, |_, _| 1.0).unwrap();
    let basis = PodBasis::identity(vec![1.0]);
    let grid = SimplexGrid::build(&Hyperbox::new(vec![0.0], vec![1.0]).unwrap(), 0.25, 100).unwrap();
    let rs = ReducedSystem::new(&sys, &basis, 1).unwrap();
    let h = 0.001;
    let v = initial_value_guess(&grid, &rs, &[0.0], 1.0, h, 3.0).unwrap();
    let exact = 1.0 - (-3.0f64).exp();
    assert!(v.iter().all(|x| (x - exact).abs() < h));
}

fn sampled(dt: f64) -> Trajectory {
    let times: Vec<f64> = (0..=((3.0 / dt).round() as usize)).map(|j| j as f64 * dt).collect();
    Trajectory {
        states: times.iter().map(|t| vec![(-t).exp() * (2.0 * t).cos()]).collect(),
        controls: times.iter().map(|t| t.sin()).collect(),
        times,
        derivatives: None,
    }
}

#[test]
fn cost_quadrature_converges_at_second_order() {
    let sys = ControlledSystem::new("q", vec![1.0], (-1.0, 1.0), |_, _, out| out[0] = 0.0, |y, u| y[0] * y[0] + u * u).unwrap();
    let costs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125].iter().map(|dt| evaluate_cost(&sys, &sampled(*dt), 1.0)).collect();
    for w in costs.windows(3) {
        let order = ((w[0] - w[1]) / (w[1] - w[2])).log2();
        assert!(order >= 1.9, "observed order {order}");
    }
}

#[test]
fn closed_loop_with_hold_tracks_the_continuous_loop() {
    let setup = Setup::pendulum(0.1);
    let cache = setup.cache(0.01);
    let (_, table) = value_iteration(&cache, vec![0.0; setup.grid.node_count], 1.0, 1e-6, 1_000_000).unwrap();
    let law = Feedback::new(&setup.basis, &setup.grid, &table, (-1.0, 1.0)).unwrap();
    let cfg = IntegratorConfig::with_tolerances(1e-9, 1e-9);
    let cont = simulate_closed_loop(&setup.sys, &law, &[0.8, 0.0], 3.0, 0.05, &cfg, false).unwrap();
    let hold = simulate_closed_loop(&setup.sys, &law, &[0.8, 0.0], 3.0, 0.05, &cfg, true).unwrap();
    assert_eq!(cont.times, hold.times);
    let free = simulate_closed_loop(&setup.sys, &|_: f64, _: &[f64]| 0.0, &[0.8, 0.0], 3.0, 0.05, &cfg, false).unwrap();
    let (jc, jh, jf) = (
        evaluate_cost(&setup.sys, &cont, 1.0),
        evaluate_cost(&setup.sys, &hold, 1.0),
        evaluate_cost(&setup.sys, &free, 1.0),
    );
    assert!(jc < jf && jh < jf);
    assert!((jc - jh).abs() < 0.05 * jc);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sweep_is_monotone_and_contracting(seed in any::<u64>(), h in 0.002f64..0.05) {
        let setup = Setup::pendulum(0.2);
        let cache = setup.cache(h);
        let n = setup.grid.node_count;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = v.iter().map(|x| x + rng.random_range(0.0..2.0)).collect();
        let (mut tv, mut tw, mut a) = (vec![0.0; n], vec![0.0; n], vec![0; n]);
        bellman_sweep(&cache, &v, 1.0, &mut tv, &mut a);
        bellman_sweep(&cache, &w, 1.0, &mut tw, &mut a);
        prop_assert!(tv.iter().zip(&tw).all(|(x, y)| x <= y));
        prop_assert!(inner::max_abs_diff(&tv, &tw) <= (1.0 - h) * inner::max_abs_diff(&v, &w) + 1e-12);
    }
}
