use proptest::prelude::*;
use queuerand::cohort::{generate_cohort, ScoreLaw};
use queuerand::design::{
    achieved_utility, default_floor_grid, endogenous_objective, exogenous_objective, feasible_utility_range,
    pareto_sweep, rct_policy, solve_design, DesignError, DesignProblem, Objective, Regularizer, StrategyContext,
    StrategyRegistry, VarianceModel,
};
use queuerand::estimation::NuisanceSet;
use queuerand::cohort::DgpTag;
use queuerand::mechanism::PolicyMatrix;
use queuerand::propensity::AlphaVector;

fn scores(n: usize, seed: u64) -> Vec<f64> {
    generate_cohort(n, 1, -0.1, &ScoreLaw::default(), seed).unwrap().scores()
}

fn c_rct(u: &[f64], alpha: &AlphaVector) -> f64 {
    alpha.beta() * u.iter().sum::<f64>() / u.len() as f64
}

fn column_gap(policy: &PolicyMatrix, p: &[f64]) -> f64 {
    policy.column_means().iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn exogenous_slack_point_is_the_rct() {
    let u = scores(2000, 1);
    let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
    let problem = DesignProblem::new(u.clone(), alpha.clone(), c_rct(&u, &alpha), Objective::Exogenous).unwrap();
    let sol = solve_design(&problem, None).unwrap();
    assert!(sol.converged);
    assert!((sol.objective_value - 4.0).abs() <= 1e-3, "objective {}", sol.objective_value);
    let rct = rct_policy(u.len(), alpha.p());
    assert!(sol.policy.max_abs_deviation(&rct) <= 1e-4);
    assert!(sol.kkt_residual <= 1e-6, "kkt {}", sol.kkt_residual);
    assert!(sol.lambda >= 0.0);
}

#[test]
fn endogenous_slack_point_dominates_rct_strength() {
    for p in [vec![0.5, 0.5], vec![1.0 / 3.0; 3]] {
        let u = scores(2000, 2);
        let alpha = AlphaVector::from_budget(0.5, &p).unwrap();
        let bound: f64 = p.iter().zip(alpha.values()).map(|(pk, a)| pk * a * a).sum::<f64>() - 0.25;
        let rct = rct_policy(u.len(), &p);
        assert!((endogenous_objective(&rct, &alpha) - bound).abs() < 1e-12);
        let problem = DesignProblem::new(u.clone(), alpha.clone(), c_rct(&u, &alpha), Objective::Endogenous).unwrap();
        let sol = solve_design(&problem, None).unwrap();
        assert!(sol.objective_value >= bound - 1e-6, "{} < {bound}", sol.objective_value);
        assert!(sol.kkt_residual <= 1e-6, "kkt {}", sol.kkt_residual);
        assert!(sol.lambda >= 0.0);
    }
    let third = AlphaVector::from_budget(0.5, &[1.0 / 3.0; 3]).unwrap();
    let rct = rct_policy(10, third.p());
    assert!((endogenous_objective(&rct, &third) - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn near_max_utility_approaches_assortative() {
    let u = scores(500, 3);
    let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
    let (_, c_max) = feasible_utility_range(&u, &alpha);
    let rct_obj = exogenous_objective(&rct_policy(u.len(), alpha.p()), &alpha);
    for obj in [Objective::Exogenous, Objective::Endogenous] {
        let problem = DesignProblem::new(u.clone(), alpha.clone(), c_max, obj).unwrap();
        let sol = solve_design(&problem, None).unwrap();
        let top = queuerand::design::assortative_policy(&u, &alpha, true);
        assert!(sol.policy.mean_tv_distance(&top) <= 0.05, "{obj:?}");
        assert!(sol.achieved_utility >= c_max - 1e-6 - 1e-3);
        if obj == Objective::Exogenous {
            assert!(sol.objective_value > rct_obj);
        }
    }
}

#[test]
fn infeasible_floor_and_constant_alpha_are_errors() {
    let u = scores(200, 4);
    let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
    let (_, c_max) = feasible_utility_range(&u, &alpha);
    let err = DesignProblem::new(u.clone(), alpha, c_max + 0.01, Objective::Exogenous)
        .and_then(|p| solve_design(&p, None))
        .unwrap_err();
    assert!(matches!(err, DesignError::Infeasible { .. }));
    let flat = AlphaVector::custom(vec![0.5, 0.5], 0.5, &[0.5, 0.5]).unwrap();
    let err = DesignProblem::new(u, flat, 0.0, Objective::Endogenous).unwrap_err();
    assert!(matches!(err, DesignError::Degenerate(_)));
}

#[test]
fn nuisance_bound_only_rescales() {
    let u = scores(400, 5);
    let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
    let (_, c_max) = feasible_utility_range(&u, &alpha);
    let c = 0.5 * (c_rct(&u, &alpha) + c_max);
    let mut a = DesignProblem::new(u, alpha, c, Objective::Exogenous).unwrap();
    let sa = solve_design(&a, None).unwrap();
    a.nuisance_bound = 10.0;
    let sb = solve_design(&a, None).unwrap();
    assert_eq!(sa.policy, sb.policy);
    assert_eq!(sa.objective_value, sb.objective_value);
    assert!((sb.worst_case_value - 10.0 * sa.worst_case_value).abs() <= 1e-12 * sb.worst_case_value);
}

#[test]
fn frontier_sweep_is_monotone_and_feasible() {
    let u = scores(2000, 6);
    let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
    let grid = default_floor_grid(&u, &alpha, 10);
    let model = VarianceModel {
        nuisances: NuisanceSet::oracle(DgpTag::Bernoulli, -0.1),
        h: u.clone(),
    };
    for obj in [Objective::Exogenous, Objective::Endogenous] {
        let template = DesignProblem::new(u.clone(), alpha.clone(), grid[0], obj).unwrap();
        let points = pareto_sweep(&template, &grid, &model);
        let mut prev: Option<f64> = None;
        for pt in &points {
            let sol = pt.solution.as_ref().expect("solve failed");
            assert!(sol.converged && sol.kkt_residual <= 1e-6, "{obj:?} c={} kkt={}", pt.param, sol.kkt_residual);
            assert!(pt.achieved_utility >= pt.param - 1e-6);
            assert!(column_gap(&sol.policy, alpha.p()) <= 1e-6);
            let v = match obj {
                Objective::Exogenous => pt.design_objective,
                Objective::Endogenous => 1.0 / pt.design_objective,
            };
            if let Some(prev) = prev {
                assert!(v >= prev - 1e-9 * prev.abs(), "{obj:?} not monotone at c={}", pt.param);
            }
            prev = Some(v);
        }
    }
}

#[test]
fn l2_regularizer_solves_slack_point() {
    let u = scores(300, 7);
    let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
    let mut problem = DesignProblem::new(u.clone(), alpha.clone(), c_rct(&u, &alpha), Objective::Exogenous).unwrap();
    problem.regularizer = Regularizer::L2ToP;
    let sol = solve_design(&problem, None).unwrap();
    assert!(sol.kkt_residual <= 1e-6);
    assert!((sol.objective_value - 4.0).abs() <= 1e-3);
}

#[test]
fn rct_utility_is_budget_times_mean() {
    let u = scores(300, 8);
    let alpha = AlphaVector::from_budget(0.3, &[0.2, 0.3, 0.5]).unwrap();
    let rct = rct_policy(u.len(), alpha.p());
    assert!((achieved_utility(&rct, &alpha, &u) - c_rct(&u, &alpha)).abs() < 1e-12);
}

#[test]
fn registry_lists_all_strategies() {
    let reg = StrategyRegistry::default();
    assert_eq!(
        reg.names(),
        vec!["greedy_softmax", "optimized_endogenous", "optimized_exogenous", "rct", "switch"]
    );
    let u = scores(100, 9);
    let alpha = AlphaVector::from_budget(0.5, &[0.5, 0.5]).unwrap();
    let ctx = StrategyContext::new(&u, &alpha, Objective::Exogenous);
    for name in reg.names() {
        let s = reg.get(name).unwrap();
        let grid = s.default_grid(&ctx);
        let out = s.design(&ctx, grid[0], None).unwrap();
        assert_eq!(out.policy.n(), u.len());
    }
}

fn policy_pair(k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    let row = move || prop::collection::vec(0.01f64..1.0, k);
    (
        prop::collection::vec(row(), 6),
        prop::collection::vec(row(), 6),
        0.0f64..1.0,
    )
        .prop_map(|(a, b, t)| {
            let norm = |rows: Vec<Vec<f64>>| {
                rows.into_iter()
                    .flat_map(|r| {
                        let s: f64 = r.iter().sum();
                        r.into_iter().map(move |x| x / s)
                    })
                    .collect::<Vec<f64>>()
            };
            (norm(a), norm(b), t)
        })
}

proptest! {
    #[test]
    fn objectives_have_the_right_curvature((a, b, t) in policy_pair(3)) {
        let alpha = AlphaVector::from_budget(0.5, &[1.0 / 3.0; 3]).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let pa = PolicyMatrix::from_flat(3, a).unwrap();
        let pb = PolicyMatrix::from_flat(3, b).unwrap();
        let pm = PolicyMatrix::from_flat(3, mix).unwrap();
        let ex = |p: &PolicyMatrix| exogenous_objective(p, &alpha);
        let en = |p: &PolicyMatrix| endogenous_objective(p, &alpha);
        prop_assert!(ex(&pm) <= t * ex(&pa) + (1.0 - t) * ex(&pb) + 1e-9);
        prop_assert!(en(&pm) >= t * en(&pa) + (1.0 - t) * en(&pb) - 1e-12);
    }
}
