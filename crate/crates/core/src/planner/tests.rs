use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::sqp::{finite_diff_gradient, finite_diff_jacobian, NlpProblem};
use crate::testutil::{random_trajectory, rng};
use crate::KnotVector;

fn random_path(r: &mut impl Rng, waypoints: usize, limits: &RobotLimits) -> WaypointPath {
    let rows =
        (0..waypoints).map(|_| limits.q_max().iter().map(|q| r.random_range(-0.9 * q..0.9 * q)).collect()).collect();
    WaypointPath::new(rows).unwrap()
}

fn desk3() -> RobotLimits {
    RobotLimits::gen3_desk().truncated(3).unwrap()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn decision_vector_layout() {
    let dv = DecisionVector::new(vec![1.0; 5], vec![vec![0.0; 10]; 2]).unwrap();
    assert_eq!(dv.waypoint_times(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(dv.end_time(), 5.0);
    let traj = dv.to_trajectory().unwrap();
    assert_eq!(&traj.knots().as_slice()[6..10], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(dv.len(), 25);
    let x = dv.to_vec();
    assert_eq!(DecisionVector::from_slice(&x, 6, 2).unwrap(), dv);
    assert!(DecisionVector::from_slice(&x, 6, 3).is_err());
    assert!(DecisionVector::new(vec![1.0, 0.0], vec![vec![0.0; 7]]).is_err());
    assert!(DecisionVector::new(vec![1.0], vec![vec![0.0; 7]]).is_err());
}

#[test]
fn decode_rejects_mismatched_path() {
    let dv = DecisionVector::new(vec![1.0; 2], vec![vec![0.0; 7]; 2]).unwrap();
    let path = WaypointPath::new(vec![vec![0.0; 3]; 3]).unwrap();
    assert!(dv.decode(&path).is_err());
}

proptest! {
    #[test]
    fn encode_decode_bitwise(seed in any::<u64>(), joints in 1usize..4, spans in 1usize..12) {
        let mut r = rng(seed);
        let traj = random_trajectory(&mut r, joints, spans);
        let dv = DecisionVector::encode(&traj).unwrap();
        let back = dv.to_trajectory().unwrap();
        prop_assert_eq!(&back, &traj);
        // pinned waypoint times are exactly the cumulative sums
        prop_assert_eq!(back.knots().waypoint_times(), cumulative_times(&dv.durations));
    }
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut r = rng(21);
    let limits = desk3();
    for lambda in [0.0, 0.3, 1.0] {
        for _ in 0..5 {
            let ii = r.random_range(2..7);
            let path = random_path(&mut r, ii, &limits);
            let nlp = TrajectoryNlp::new(&path, &limits, lambda, 5, 0.99).unwrap();
            let mut x = cold_start(&path, &limits).unwrap().to_vec();
            for v in x.iter_mut() {
                *v *= r.random_range(0.9..1.1);
            }
            let xv = DVector::from_vec(x.clone());
            let analytic = nlp.derivatives(&xv).unwrap();
            let f = |z: &[f64]| nlp.values(&DVector::from_column_slice(z)).unwrap().objective;
            let numeric = finite_diff_gradient(f, &x, 1e-6).unwrap();
            for (a, n) in analytic.gradient.iter().zip(&numeric) {
                assert!(relative_gap(*a, *n) < 1e-5, "{a} vs {n}");
            }
        }
    }
}

#[test]
fn constraint_jacobians_match_finite_differences() {
    let mut r = rng(22);
    let limits = desk3();
    for _ in 0..5 {
        let ii = r.random_range(2..6);
        let path = random_path(&mut r, ii, &limits);
        let nlp = TrajectoryNlp::new(&path, &limits, 0.5, 4, 0.99).unwrap();
        let mut x = cold_start(&path, &limits).unwrap().to_vec();
        for v in x.iter_mut() {
            *v *= r.random_range(0.9..1.1);
        }
        let analytic = nlp.derivatives(&DVector::from_vec(x.clone())).unwrap();
        let eq = |z: &[f64]| nlp.values(&DVector::from_column_slice(z)).unwrap().equalities.as_slice().to_vec();
        let ineq = |z: &[f64]| nlp.values(&DVector::from_column_slice(z)).unwrap().inequalities.as_slice().to_vec();
        let ne = finite_diff_jacobian(eq, &x, 1e-6).unwrap();
        let ni = finite_diff_jacobian(ineq, &x, 1e-6).unwrap();
        for (a, n) in analytic.eq_jacobian.iter().zip(ne.iter()) {
            assert!(relative_gap(*a, *n) < 1e-5, "{a} vs {n}");
        }
        for (a, n) in analytic.ineq_jacobian.iter().zip(ni.iter()) {
            assert!(relative_gap(*a, *n) < 1e-5, "{a} vs {n}");
        }
    }
}

#[test]
fn nlp_values_agree_with_trajectory_functionals() {
    let mut r = rng(23);
    let limits = desk3();
    let path = random_path(&mut r, 5, &limits);
    let nlp = TrajectoryNlp::new(&path, &limits, 1.0, 5, 1.0).unwrap();
    let dv = cold_start(&path, &limits).unwrap();
    let traj = dv.decode(&path).unwrap();
    let v = nlp.values(&DVector::from_vec(dv.to_vec())).unwrap();
    let jerk = traj.total_jerk().unwrap();
    assert!((v.objective - jerk).abs() < 3.0 * JERK_SMOOTHING);
    assert!(v.equalities.amax() < 1e-9);
    // each inequality pair brackets the sampled range of its span
    let times = dv.waypoint_times();
    let samples = 2000;
    for span in 0..4 {
        for k in 0..3 {
            for order in 0..4 {
                let bound = limits.bound(order, k);
                let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..=samples {
                    let t = times[span] + (times[span + 1] - times[span]) * i as f64 / samples as f64;
                    let q = traj.state(t).unwrap()[k][order] / bound;
                    hi = hi.max(q);
                    lo = lo.min(q);
                }
                let row = ((span * 3 + k) * 4 + order) * 2;
                let (found_hi, found_lo) = (1.0 - v.inequalities[row], v.inequalities[row + 1] - 1.0);
                assert!(found_hi >= hi - 1e-12 && found_hi - hi < 1e-6, "{found_hi} vs {hi}");
                assert!(found_lo <= lo + 1e-12 && lo - found_lo < 1e-6, "{found_lo} vs {lo}");
            }
        }
    }
}

#[test]
fn inequality_layout() {
    let limits = desk3();
    let path = WaypointPath::new(vec![vec![0.0; 3], vec![0.5; 3], vec![1.0; 3]]).unwrap();
    let nlp = TrajectoryNlp::new(&path, &limits, 0.5, 5, 0.99).unwrap();
    assert_eq!(nlp.num_inequalities(), 2 * 3 * 4 * 2);
    assert_eq!(nlp.num_equalities(), 3 * 7);
    assert_eq!(nlp.dimension(), 2 + 3 * 7);
    assert!(TrajectoryNlp::new(&path, &limits, 0.5, 1, 0.99).is_err());
}

#[test]
fn polynomial_extrema_known_cases() {
    // x(1 - x) peaks at 1/2, bottoms at the ends
    let e = polynomial_extrema(&[0.0, 1.0, -1.0], 4);
    assert!((e.argmax - 0.5).abs() < 1e-14);
    assert!(e.argmin == 0.0 || e.argmin == 1.0);
    // monotone
    let e = polynomial_extrema(&[0.0, 1.0], 4);
    assert_eq!((e.argmax, e.argmin), (1.0, 0.0));
    // constant
    let e = polynomial_extrema(&[2.0], 4);
    assert_eq!(e.argmax, e.argmin);
}

proptest! {
    #[test]
    fn polynomial_extrema_dominate_samples(c in proptest::collection::vec(-5.0f64..5.0, 1..7)) {
        let e = polynomial_extrema(&c, 20);
        let f = |x: f64| c.iter().rev().fold(0.0, |a, v| a * x + v);
        let (vmax, vmin) = (f(e.argmax), f(e.argmin));
        for i in 0..=4000 {
            let y = f(i as f64 / 4000.0);
            prop_assert!(y <= vmax + 1e-9, "{y} > {vmax}");
            prop_assert!(y >= vmin - 1e-9, "{y} < {vmin}");
        }
    }
}

#[test]
fn waypoints_outside_limits_are_rejected() {
    let limits = desk3();
    let path = WaypointPath::new(vec![vec![0.0; 3], vec![4.0, 0.0, 0.0]]).unwrap();
    assert!(matches!(TrajectoryNlp::new(&path, &limits, 0.5, 5, 0.99), Err(Error::InfeasiblePath(_))));
    assert!(matches!(cold_start(&path, &limits), Err(Error::InfeasiblePath(_))));
}

#[test]
fn cold_start_stationary_path() {
    let limits = desk3();
    let path = WaypointPath::new(vec![vec![0.3, -0.2, 1.0]; 4]).unwrap();
    let dv = cold_start(&path, &limits).unwrap();
    assert!(dv.durations.iter().all(|&d| (d - EPS_SPAN).abs() < 1e-15));
    for (k, cps) in dv.control_points.iter().enumerate() {
        for c in cps {
            assert!((c - path.get(0, k)).abs() < 1e-9);
        }
    }
}

#[test]
fn cold_start_unit_displacement() {
    let limits = RobotLimits::uniform(1, 3.0, 1.0, 10.0, 100.0).unwrap();
    let path = WaypointPath::new(vec![vec![0.0], vec![1.0]]).unwrap();
    let dv = cold_start(&path, &limits).unwrap();
    assert_eq!(dv.durations, vec![2.0]);
}

#[test]
fn cold_start_interpolates() {
    let mut r = rng(24);
    let limits = RobotLimits::gen3_desk();
    for _ in 0..20 {
        let ii = r.random_range(2..20);
        let path = random_path(&mut r, ii, &limits);
        let dv = cold_start(&path, &limits).unwrap();
        let traj = dv.decode(&path).unwrap();
        let res = traj.interpolation_residuals(&path, &dv.waypoint_times()).unwrap();
        assert!(res.iter().flatten().all(|v| v.abs() < 1e-9));
        assert!(traj.boundary_residuals().iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn plan_six_waypoints_cold() {
    let mut r = rng(25);
    let limits = RobotLimits::gen3_desk();
    let path = random_path(&mut r, 6, &limits);
    let request = PlanRequest::new(path.clone(), limits.clone());
    let init = cold_start(&path, &limits).unwrap();
    let res = plan(&request, &init).unwrap();
    assert!(res.converged(), "{:?}", res.attempts);
    assert!(res.feasibility.min_kinematic_residual > -1e-9);
    assert!(res.feasibility.max_boundary_residual < 1e-6);
}

/// Largest ratio `|q⁽ʳ⁾| / (μ·bound)` over a dense sample of the fixed
/// two-waypoint rest-to-rest shape stretched to duration `t`.
fn two_point_load(path: &WaypointPath, limits: &RobotLimits, margin: f64, t: f64) -> f64 {
    let traj = crate::trajectory::interpolate(path, &[0.0, t]).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..=20_000 {
        let time = (t * s as f64 / 20_000.0).min(traj.end_time());
        for k in 0..path.num_joints() {
            for order in 1..=3 {
                let v = traj.eval(k, time, order).unwrap().abs();
                worst = worst.max(v / (margin * limits.bound(order, k)));
            }
        }
    }
    worst
}

#[test]
fn two_waypoint_time_optimum_matches_bisection() {
    let limits = desk3();
    let path = WaypointPath::new(vec![vec![-0.4, 0.2, 1.0], vec![0.9, -0.3, 0.6]]).unwrap();
    let request = PlanRequest::new(path.clone(), limits.clone()).with_lambda(0.0);
    let res = plan(&request, &cold_start(&path, &limits).unwrap()).unwrap();
    assert!(res.converged(), "{:?}", res.attempts);

    let (mut lo, mut hi) = (1e-3, 100.0);
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if two_point_load(&path, &limits, request.margin, mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!(relative_gap(res.duration, hi) < 1e-6, "planned {} vs bisection {hi}", res.duration);
    let load = two_point_load(&path, &limits, request.margin, res.duration);
    assert!((load - 1.0).abs() < 1e-6, "active constraint slack {}", load - 1.0);
}

fn generous(joints: usize) -> RobotLimits {
    RobotLimits::uniform(joints, 3.0, 2.0, 20.0, 200.0).unwrap()
}

#[test]
fn jerk_weight_one_improves_on_cold_start() {
    let mut r = rng(26);
    let limits = generous(3);
    for _ in 0..3 {
        let path = random_path(&mut r, 5, &limits);
        let init = cold_start(&path, &limits).unwrap();
        let before = init.to_trajectory().unwrap().total_jerk().unwrap();
        let res = plan(&PlanRequest::new(path, limits.clone()).with_lambda(1.0), &init).unwrap();
        assert!(res.converged());
        assert!(res.jerk < before, "jerk {} not below cold start {before}", res.jerk);
    }
}

#[test]
fn solution_never_worse_than_feasible_start() {
    let mut r = rng(27);
    let limits = generous(3);
    let mut checked = 0;
    for _ in 0..6 {
        let path = random_path(&mut r, 6, &limits);
        let init = cold_start(&path, &limits).unwrap();
        let start = init.to_trajectory().unwrap();
        let margined = limits.scaled(DEFAULT_MARGIN).unwrap();
        if !dense_check(&start, &path, &margined, 50).unwrap().passed {
            continue;
        }
        checked += 1;
        let res = plan(&PlanRequest::new(path, limits.clone()), &init).unwrap();
        let before = start.scalar_objective(DEFAULT_LAMBDA).unwrap();
        assert!(res.objective <= before + 1e-9 * before.abs().max(1.0), "{} > {before}", res.objective);
    }
    assert!(checked >= 3, "only {checked} feasible starts");
}

#[test]
fn restarting_at_the_optimum_is_a_fixed_point() {
    let mut r = rng(28);
    let limits = desk3();
    for ii in [3, 5, 7] {
        let path = random_path(&mut r, ii, &limits);
        let request = PlanRequest::new(path.clone(), limits.clone());
        let first = plan(&request, &cold_start(&path, &limits).unwrap()).unwrap();
        assert!(first.converged());
        let optimum = DecisionVector::encode(&first.trajectory).unwrap();
        let again = plan(&request, &optimum).unwrap();
        assert!(again.total_iterations() <= 3, "{:?}", again.attempts);
        assert!((again.objective - first.objective).abs() < 1e-9, "{} vs {}", again.objective, first.objective);
    }
}

#[test]
fn lambda_sweep_trades_jerk_for_time() {
    let mut r = rng(29);
    let limits = desk3();
    let path = random_path(&mut r, 4, &limits);
    let init = cold_start(&path, &limits).unwrap();
    let mut previous: Option<(f64, f64)> = None;
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let request = PlanRequest::new(path.clone(), limits.clone()).with_lambda(lambda);
        let res = plan(&request, &init).unwrap();
        assert!(res.converged(), "λ = {lambda}: {:?}", res.attempts);
        if let Some((jerk, duration)) = previous {
            assert!(res.jerk <= jerk * (1.0 + 1e-6), "λ = {lambda}: jerk {} after {jerk}", res.jerk);
            assert!(res.duration >= duration * (1.0 - 1e-6), "λ = {lambda}: T {} after {duration}", res.duration);
        }
        previous = Some((res.jerk, res.duration));
    }
}

#[test]
fn converged_plans_pass_the_dense_audit() {
    let mut r = rng(30);
    let limits = RobotLimits::gen3_desk();
    for ii in [2, 4, 6, 8] {
        let path = random_path(&mut r, ii, &limits);
        let request = PlanRequest::new(path.clone(), limits.clone());
        let res = plan(&request, &cold_start(&path, &limits).unwrap()).unwrap();
        if !res.converged() {
            continue;
        }
        let density = res.attempts.last().unwrap().collocation_density;
        let audit = dense_check(&res.trajectory, &path, &limits, CHECK_FACTOR * density).unwrap();
        assert!(audit.min_kinematic_residual > -1e-9);
        assert!(audit.max_boundary_residual < 1e-6);
        assert!(audit.max_interpolation_residual < 1e-6);
        assert!((res.objective - res.trajectory.scalar_objective(request.lambda).unwrap()).abs() <= 1e-9);
        assert!(res.feasibility.samples_per_span >= CHECK_FACTOR * request.collocation_density);
        let times = res.trajectory.knots().waypoint_times();
        let sums = cumulative_times(&DecisionVector::encode(&res.trajectory).unwrap().durations);
        assert_eq!(times, sums);
    }
}

#[test]
fn mismatched_initial_guess_is_rejected() {
    let limits = desk3();
    let path = random_path(&mut rng(31), 4, &limits);
    let other = random_path(&mut rng(32), 5, &limits);
    let request = PlanRequest::new(path, limits.clone());
    assert!(matches!(plan(&request, &cold_start(&other, &limits).unwrap()), Err(Error::Parameter(_))));
}

/// Returns the stored solution for the one path it knows.
struct Oracle {
    samples: Vec<crate::neural::Sample>,
    max_waypoints: usize,
}

impl InitialGuessModel for Oracle {
    fn num_joints(&self) -> usize {
        self.samples.len()
    }
    fn max_waypoints(&self) -> usize {
        self.max_waypoints
    }
    fn predict(&self, _path: &WaypointPath, joint: usize) -> Result<crate::neural::ModelOutput> {
        let s = &self.samples[joint];
        let mut coefficients = s.coefficients.clone();
        coefficients.resize(self.max_waypoints + 4, 0.0);
        let mut knots = s.knots.clone();
        knots.resize(self.max_waypoints + 10, 0.0);
        Ok(crate::neural::ModelOutput { coefficients, knots })
    }
}

#[test]
fn ground_truth_model_reproduces_the_solution() {
    let mut r = rng(33);
    let limits = desk3();
    for ii in [3, 6] {
        let path = random_path(&mut r, ii, &limits);
        let request = PlanRequest::new(path.clone(), limits.clone());
        let solved = plan(&request, &cold_start(&path, &limits).unwrap()).unwrap();
        let oracle = Oracle {
            samples: crate::neural::samples_from_solution(&path, &solved.trajectory).unwrap(),
            max_waypoints: 8,
        };
        let guess = warm_start_from_model(&oracle, &path, &limits).unwrap();
        let decoded = guess.to_trajectory().unwrap();
        for (a, b) in decoded.knots().as_slice().iter().zip(solved.trajectory.knots().as_slice()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(decoded.joints(), solved.trajectory.joints());
        let again = plan_with_model(&request, &oracle).unwrap();
        assert!(again.total_iterations() <= 3, "{:?}", again.attempts);
        assert!(again.timings.warm_start_ns > 0);

        let short = Oracle { samples: oracle.samples.clone(), max_waypoints: ii - 1 };
        assert!(matches!(warm_start_from_model(&short, &path, &limits), Err(Error::UnsupportedLength { .. })));
    }
}

#[test]
fn joint_count_mismatch_is_a_config_error() {
    let config = crate::neural::ModelConfig { d_model: 8, heads: 2, ..crate::neural::ModelConfig::new(2, 6) };
    let model = crate::neural::ModelParams::init(&config, 0).unwrap();
    let limits = desk3();
    let path = random_path(&mut rng(34), 4, &limits);
    assert!(matches!(warm_start_from_model(&model, &path, &limits), Err(Error::UnsupportedConfig(_))));
    let two = RobotLimits::gen3_desk().truncated(2).unwrap();
    let path = random_path(&mut rng(34), 4, &two);
    let guess = warm_start_from_model(&model, &path, &two).unwrap();
    assert_eq!((guess.num_waypoints(), guess.num_joints()), (4, 2));
}

proptest! {
    #[test]
    fn knot_projection_is_ordered(
        raw in proptest::collection::vec(-5.0f64..5.0, 16..20),
        ii in 2usize..7,
    ) {
        let durations = knots_to_durations(&raw, ii).unwrap();
        prop_assert_eq!(durations.len(), ii - 1);
        prop_assert!(durations.iter().all(|d| *d >= EPS_SPAN));
        let knots = KnotVector::from_waypoint_times(&cumulative_times(&durations)).unwrap();
        prop_assert!(knots.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn assembled_control_points_respect_position_limits(
        scale in 1.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let limits = desk3();
        let mut r = rng(seed);
        let path = random_path(&mut r, 4, &limits);
        let outputs: Vec<crate::neural::ModelOutput> = (0..3)
            .map(|_| crate::neural::ModelOutput {
                coefficients: (0..8).map(|_| r.random_range(-scale * 2e3..scale * 2e3)).collect(),
                knots: (0..14).map(|i| 3.0 - 0.2 * i as f64).collect(),
            })
            .collect();
        let dv = assemble_prediction(&outputs, &path, &limits).unwrap();
        for (k, cps) in dv.control_points.iter().enumerate() {
            prop_assert!(cps.iter().all(|c| c.abs() <= CONTROL_POINT_BOX * limits.q_max()[k]));
        }
        prop_assert!(dv.durations.iter().all(|d| *d >= EPS_SPAN));
    }
}

#[test]
fn linear_baseline_shape() {
    let limits = desk3();
    let path = random_path(&mut rng(35), 5, &limits);
    let base = linear_baseline(&path, &limits).unwrap();
    assert_eq!(base.num_waypoints(), 5);
    assert!(base.durations.windows(2).all(|w| w[0] == w[1]));
    for k in 0..3 {
        assert_eq!(base.control_points[k][0], path.get(0, k));
        assert!((base.control_points[k][8] - path.get(4, k)).abs() < 1e-15);
    }
    assert!(interpolation_residual(&base, &path).unwrap().is_finite());
}

#[test]
fn stretched_guesses_respect_the_rate_limits() {
    let limits = desk3();
    let path = random_path(&mut rng(41), 5, &limits);
    let mut guess = cold_start(&path, &limits).unwrap();
    guess.durations = vec![0.05, 0.01, 0.2, 0.03];
    let alpha = time_stretch(&guess, &path, &limits).unwrap();
    assert!(alpha > 1.0);
    guess.durations.iter_mut().for_each(|d| *d *= alpha);
    let traj = guess.decode(&path).unwrap();
    for t in dense_times(&cumulative_times(&guess.durations), STRETCH_SAMPLES) {
        for (k, s) in traj.state(t).unwrap().iter().enumerate() {
            for r in 1..=3 {
                assert!(s[r].abs() <= limits.bound(r, k) * (1.0 + 1e-9));
            }
        }
    }
    assert!((time_stretch(&guess, &path, &limits).unwrap() - 1.0).abs() < 1e-9);
    let slow = cold_start(&path, &limits).unwrap();
    assert_eq!(time_stretch(&slow, &path, &limits).unwrap(), 1.0);
}
