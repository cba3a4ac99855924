//! Dual Newton method for the regularized design programs.
//!
//! Both objectives have the per-unit form `G(alpha . theta) + lin . theta`
//! (exogenous: `G(pi) = 1/pi + 1/(1-pi)`, `lin = 0`; endogenous, as a
//! minimization: `G(pi) = pi^2`, `lin = -alpha^2`), so the Lagrangian
//! separates over units. Given multipliers `nu` (proportions, last queue
//! pinned at 0) and `lambda >= 0` (utility floor), each unit solves
//!
//! ```text
//! min_{theta in simplex} G(alpha . theta) + s . theta + kappa r(theta),
//! s = lin + nu - lambda u alpha,
//! ```
//!
//! exactly: for fixed `pi` the minimizer is a softmax (entropy) or a simplex
//! projection (l2), and the consistent `pi` is the unique root of a
//! decreasing scalar function. The concave dual is maximized by damped
//! Newton steps with a projected line search on `lambda`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::problem::{
    achieved_utility, endogenous_objective, exogenous_objective, regularizer_row, regularizer_value, DesignProblem,
    DesignSolution, Objective, Regularizer, PI_EPS,
};
use super::range::feasible_utility_range;
use super::DesignError;
use crate::mechanism::PolicyMatrix;

/// Warm-start multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStart {
    pub nu: Vec<f64>,
    pub lambda: f64,
}

struct Unit {
    theta: Vec<f64>,
    pi: f64,
    value: f64,
    gpp: f64,
}

struct Ctx<'a> {
    alpha: &'a [f64],
    p: &'a [f64],
    lin: Vec<f64>,
    kappa: f64,
    reg: Regularizer,
    objective: Objective,
    lo: f64,
    hi: f64,
}

impl Ctx<'_> {
    fn g(&self, pi: f64) -> f64 {
        match self.objective {
            Objective::Exogenous => {
                let pi = pi.clamp(PI_EPS, 1.0 - PI_EPS);
                1.0 / pi + 1.0 / (1.0 - pi)
            }
            Objective::Endogenous => pi * pi,
        }
    }

    fn g1(&self, pi: f64) -> f64 {
        match self.objective {
            Objective::Exogenous => {
                let pi = pi.clamp(PI_EPS, 1.0 - PI_EPS);
                -1.0 / (pi * pi) + 1.0 / ((1.0 - pi) * (1.0 - pi))
            }
            Objective::Endogenous => 2.0 * pi,
        }
    }

    fn g2(&self, pi: f64) -> f64 {
        match self.objective {
            Objective::Exogenous => {
                let pi = pi.clamp(PI_EPS, 1.0 - PI_EPS);
                2.0 / pi.powi(3) + 2.0 / (1.0 - pi).powi(3)
            }
            Objective::Endogenous => 2.0,
        }
    }

    /// Minimizer of the inner problem with `G(alpha . theta)` replaced by the
    /// linear term `slope * alpha . theta`.
    fn theta_at(&self, slope: f64, s: &[f64], out: &mut [f64]) {
        let k = self.alpha.len();
        match self.reg {
            Regularizer::NegEntropy => {
                for j in 0..k {
                    out[j] = -(slope * self.alpha[j] + s[j]) / self.kappa;
                }
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in out.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                out.iter_mut().for_each(|x| *x /= total);
            }
            Regularizer::L2ToP => {
                for j in 0..k {
                    out[j] = self.p[j] - (slope * self.alpha[j] + s[j]) / (2.0 * self.kappa);
                }
                project_simplex(out);
            }
        }
    }

    /// Solves the inner problem by finding the slope `d` with
    /// `G'(alpha . theta(d)) = d`. The left side is nonincreasing in `d`.
    /// The root is bracketed in `pi` first, then refined in `d`, where
    /// `theta(d)` is smooth even when `G''` is huge.
    fn solve_unit(&self, s: &[f64]) -> Unit {
        let k = self.alpha.len();
        let mut theta = vec![0.0; k];
        let dot = |t: &[f64]| t.iter().zip(self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let (mut lo, mut hi) = (self.lo, self.hi);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            self.theta_at(self.g1(mid), s, &mut theta);
            if dot(&theta) > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (mut dlo, mut dhi) = (self.g1(lo), self.g1(hi));
        for _ in 0..128 {
            let mid = 0.5 * (dlo + dhi);
            if mid <= dlo || mid >= dhi {
                break;
            }
            self.theta_at(mid, s, &mut theta);
            if self.g1(dot(&theta)) > mid {
                dlo = mid;
            } else {
                dhi = mid;
            }
        }
        self.theta_at(0.5 * (dlo + dhi), s, &mut theta);
        let pi = dot(&theta);
        let lin: f64 = theta.iter().zip(s).map(|(t, s)| t * s).sum();
        let value = self.g(pi) + lin + self.kappa * regularizer_row(&theta, self.p, self.reg);
        Unit {
            theta,
            pi,
            value,
            gpp: self.g2(pi),
        }
    }

    /// Multipliers whose inner solutions are all equal to `p`.
    fn rct_duals(&self, beta: f64) -> Vec<f64> {
        let k = self.alpha.len();
        let d = self.g1(beta);
        let mut nu: Vec<f64> = (0..k)
            .map(|j| {
                let base = -(d * self.alpha[j] + self.lin[j]);
                match self.reg {
                    Regularizer::NegEntropy => base - self.kappa * self.p[j].ln(),
                    Regularizer::L2ToP => base,
                }
            })
            .collect();
        let last = nu[k - 1];
        nu.iter_mut().for_each(|x| *x -= last);
        nu
    }

    /// Derivative of the inner minimizer with respect to `s` is `-N`.
    fn sensitivity(&self, unit: &Unit) -> Vec<f64> {
        let k = self.alpha.len();
        let t = &unit.theta;
        let mut m = vec![0.0; k * k];
        match self.reg {
            Regularizer::NegEntropy => {
                for a in 0..k {
                    for b in 0..k {
                        let d = if a == b { t[a] } else { 0.0 };
                        m[a * k + b] = (d - t[a] * t[b]) / self.kappa;
                    }
                }
            }
            Regularizer::L2ToP => {
                let support: Vec<usize> = (0..k).filter(|&j| t[j] > 0.0).collect();
                let f = support.len() as f64;
                for &a in &support {
                    for &b in &support {
                        let d = if a == b { 1.0 } else { 0.0 };
                        m[a * k + b] = (d - 1.0 / f) / (2.0 * self.kappa);
                    }
                }
            }
        }
        let ma: Vec<f64> = (0..k).map(|a| (0..k).map(|b| m[a * k + b] * self.alpha[b]).sum()).collect();
        let ama: f64 = ma.iter().zip(self.alpha).map(|(x, a)| x * a).sum();
        let c = unit.gpp / (1.0 + unit.gpp * ama);
        for a in 0..k {
            for b in 0..k {
                m[a * k + b] -= c * ma[a] * ma[b];
            }
        }
        m
    }
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - shift).max(0.0));
}

struct DualPoint {
    units: Vec<Unit>,
    value: f64,
    grad_nu: Vec<f64>,
    grad_lambda: f64,
    prop_residual: f64,
    utility: f64,
}

fn evaluate(ctx: &Ctx<'_>, u: &[f64], c: f64, nu: &[f64], lambda: f64) -> DualPoint {
    let k = ctx.alpha.len();
    let n = u.len() as f64;
    let units: Vec<Unit> = u
        .par_iter()
        .map(|&ui| {
            let s: Vec<f64> = (0..k).map(|j| ctx.lin[j] + nu[j] - lambda * ui * ctx.alpha[j]).collect();
            ctx.solve_unit(&s)
        })
        .collect();
    let mut mean_theta = vec![0.0; k];
    let (mut value, mut utility) = (0.0, 0.0);
    for (unit, &ui) in units.iter().zip(u) {
        value += unit.value;
        utility += ui * unit.pi;
        for j in 0..k {
            mean_theta[j] += unit.theta[j];
        }
    }
    value /= n;
    utility /= n;
    mean_theta.iter_mut().for_each(|x| *x /= n);
    let grad: Vec<f64> = (0..k).map(|j| mean_theta[j] - ctx.p[j]).collect();
    let prop_residual = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let value = value - nu.iter().zip(ctx.p).map(|(a, b)| a * b).sum::<f64>() + lambda * c;
    DualPoint {
        units,
        value,
        grad_nu: grad[..k - 1].to_vec(),
        grad_lambda: c - utility,
        prop_residual,
        utility,
    }
}

/// Solves a design problem, optionally warm-started from earlier multipliers.
/// A warm start that fails to converge is retried from the multipliers of
/// the `theta = p` design.
pub fn solve_design(problem: &DesignProblem, start: Option<&DualStart>) -> Result<DesignSolution, DesignError> {
    let first = solve_from(problem, start)?;
    if first.converged || start.is_none() {
        return Ok(first);
    }
    let cold = solve_from(problem, None)?;
    Ok(if cold.kkt_residual < first.kkt_residual { cold } else { first })
}

fn solve_from(problem: &DesignProblem, start: Option<&DualStart>) -> Result<DesignSolution, DesignError> {
    problem.validate()?;
    let alpha = &problem.alpha;
    let k = alpha.k();
    let u = &problem.utilities;
    let tol = problem.tolerances;
    let (_, c_max) = feasible_utility_range(u, alpha);
    if problem.utility_floor > c_max + tol.constraint_tol {
        return Err(DesignError::Infeasible {
            floor: problem.utility_floor,
            c_max,
        });
    }
    // a regularized optimum is interior, so the extreme point itself is out of reach
    let c = problem.utility_floor.min(c_max - 0.5 * tol.constraint_tol);

    let (lo, hi) = alpha.range();
    let lin = match problem.objective {
        Objective::Exogenous => vec![0.0; k],
        Objective::Endogenous => alpha.values().iter().map(|a| -a * a).collect(),
    };
    let ctx = Ctx {
        alpha: alpha.values(),
        p: alpha.p(),
        lin,
        kappa: problem.kappa,
        reg: problem.regularizer,
        objective: problem.objective,
        lo,
        hi,
    };

    let mut nu = ctx.rct_duals(alpha.beta());
    let mut lambda = 0.0;
    if let Some(s) = start {
        if s.nu.len() == k {
            nu.copy_from_slice(&s.nu);
            nu[k - 1] = 0.0;
        }
        lambda = s.lambda.max(0.0);
    }
    let mut point = evaluate(&ctx, u, c, &nu, lambda);
    let mut iterations = 0;
    let mut damping = 1e-12;
    let target = 1e-2 * tol.constraint_tol.min(tol.dual_tol);
    let mut stalled = 0;
    while iterations < tol.max_iters {
        let slack = -point.grad_lambda;
        let done = point.prop_residual <= target
            && slack >= -target
            && (lambda * slack).abs() <= target;
        if done {
            break;
        }
        iterations += 1;
        let lambda_free = lambda > 0.0 || point.grad_lambda > 0.0;
        let d = k - 1 + usize::from(lambda_free);
        let mut h = DMatrix::<f64>::zeros(d, d);
        for (unit, &ui) in point.units.iter().zip(u) {
            let m = ctx.sensitivity(unit);
            for a in 0..k - 1 {
                for b in 0..k - 1 {
                    h[(a, b)] += m[a * k + b];
                }
            }
            if lambda_free {
                let ma: Vec<f64> = (0..k).map(|a| (0..k).map(|b| m[a * k + b] * ctx.alpha[b]).sum()).collect();
                let ama: f64 = ma.iter().zip(ctx.alpha).map(|(x, a)| x * a).sum();
                for a in 0..k - 1 {
                    h[(a, k - 1)] -= ui * ma[a];
                    h[(k - 1, a)] -= ui * ma[a];
                }
                h[(k - 1, k - 1)] += ui * ui * ama;
            }
        }
        h /= u.len() as f64;
        let mut g = DVector::<f64>::zeros(d);
        for a in 0..k - 1 {
            g[a] = point.grad_nu[a];
        }
        if lambda_free {
            g[k - 1] = point.grad_lambda;
        }
        let scale = (0..d).map(|a| h[(a, a)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut ridge = damping * scale;
        let step = loop {
            let mut hr = h.clone();
            for a in 0..d {
                hr[(a, a)] += ridge;
            }
            if let Some(ch) = hr.cholesky() {
                break ch.solve(&g);
            }
            ridge = (ridge * 100.0).max(1e-10 * scale);
            if ridge > 1e6 * scale {
                break g.clone() / scale;
            }
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut nu_new = nu.clone();
            for a in 0..k - 1 {
                nu_new[a] += t * step[a];
            }
            let lambda_new = if lambda_free { (lambda + t * step[k - 1]).max(0.0) } else { lambda };
            let mut predicted = 0.0;
            for a in 0..k - 1 {
                predicted += g[a] * (nu_new[a] - nu[a]);
            }
            if lambda_free {
                predicted += g[k - 1] * (lambda_new - lambda);
            }
            let candidate = evaluate(&ctx, u, c, &nu_new, lambda_new);
            if candidate.value >= point.value + 1e-4 * predicted {
                let gain = candidate.value - point.value;
                stalled = if gain > 1e-13 * point.value.abs() { 0 } else { stalled + 1 };
                nu = nu_new;
                lambda = lambda_new;
                point = candidate;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || t < 1e-8 || stalled >= 5 {
            break;
        }
        if t == 1.0 {
            damping = (damping / 10.0).max(1e-12);
        } else if t < 0.25 {
            damping = (damping * 10.0).min(1e2);
        }
    }

    let mut data = Vec::with_capacity(u.len() * k);
    for unit in &point.units {
        data.extend_from_slice(&unit.theta);
    }
    let policy = PolicyMatrix::from_flat(k, data)?;
    let objective_value = match problem.objective {
        Objective::Exogenous => exogenous_objective(&policy, alpha),
        Objective::Endogenous => endogenous_objective(&policy, alpha),
    };
    if !objective_value.is_finite() {
        return Err(DesignError::Divergence(format!(
            "objective diverged at utility floor {}",
            problem.utility_floor
        )));
    }
    let r = regularizer_value(&policy, alpha.p(), problem.regularizer);
    let regularized_value = match problem.objective {
        Objective::Exogenous => objective_value + problem.kappa * r,
        Objective::Endogenous => objective_value - problem.kappa * r,
    };
    let achieved = achieved_utility(&policy, alpha, u);
    let prop = policy
        .column_means()
        .iter()
        .zip(alpha.p())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let shortfall = (problem.utility_floor - achieved).max(0.0);
    let kkt_residual = prop.max(shortfall).max((lambda * (c - point.utility)).abs());
    let converged = prop <= tol.constraint_tol
        && shortfall <= tol.constraint_tol
        && (lambda * (c - point.utility)).abs() <= tol.dual_tol;
    Ok(DesignSolution {
        policy,
        objective_value,
        regularized_value,
        achieved_utility: achieved,
        worst_case_value: problem.nuisance_bound * objective_value,
        lambda,
        nu,
        converged,
        iterations,
        kkt_residual,
    })
}

pub fn optimize_exogenous(problem: &DesignProblem) -> Result<DesignSolution, DesignError> {
    let mut p = problem.clone();
    p.objective = Objective::Exogenous;
    solve_design(&p, None)
}

pub fn optimize_endogenous(problem: &DesignProblem) -> Result<DesignSolution, DesignError> {
    let mut p = problem.clone();
    p.objective = Objective::Endogenous;
    solve_design(&p, None)
}
