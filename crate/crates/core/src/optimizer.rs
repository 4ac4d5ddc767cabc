//! Constrained mean-variance portfolio optimizer.
//!
//! Minimizes w'Σw - λμ'w over the probability simplex with per-asset box
//! bounds and an optional L1 turnover budget against the previous
//! allocation. The solver is a dense primal active-set method written for
//! this problem class: dimensions are tiny (a handful of assets), so exact
//! dense linear algebra beats a general-purpose solver dependency.
//!
//! The turnover constraint is handled by splitting the reallocation into
//! buy and sell legs, x = [u; v] with w = w_prev + u - v and u, v >= 0,
//! which turns the L1 ball into linear constraints. Verification helpers —
//! a closed-form equality-only solution, an independent KKT residual
//! check, and a brute-force simplex grid search — are exported alongside
//! the solver so its output can be cross-checked rather than trusted.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::min_eigenvalue;

/// Tiny diagonal regularizer making the split-space Hessian definite.
const RIDGE: f64 = 2e-10;
/// Tolerance for treating a constraint as active.
const ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("{left} has length {left_len} but {right} has length {right_len}")]
    DimensionMismatch {
        left: &'static str,
        left_len: usize,
        right: &'static str,
        right_len: usize,
    },
    #[error("asset {asset} has lower bound {lower} above upper bound {upper}")]
    InvalidBounds {
        asset: usize,
        lower: f64,
        upper: f64,
    },
    #[error("box bounds cannot reach the budget: lower sum {lower_sum}, upper sum {upper_sum}")]
    BoxSimplexInfeasible { lower_sum: f64, upper_sum: f64 },
    #[error("reaching feasibility requires turnover {required} but the limit is {limit}")]
    TurnoverInfeasible { required: f64, limit: f64 },
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("starting point violates constraints by {violation:e}")]
    InfeasibleStart { violation: f64 },
    #[error("active-set iteration limit {limit} exceeded")]
    MaxIterations { limit: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("grid search found no feasible point at step {step}")]
    GridInfeasible { step: f64 },
}

/// One allocation problem instance.
#[derive(Debug, Clone)]
pub struct PortfolioProblem {
    /// Asset covariance Σ (symmetric PSD).
    pub covariance: DMatrix<f64>,
    /// Expected per-step returns μ.
    pub expected_returns: Vec<f64>,
    /// Return preference λ multiplying μ'w in the objective.
    pub return_weight: f64,
    /// Per-asset lower bounds.
    pub lower: Vec<f64>,
    /// Per-asset upper bounds.
    pub upper: Vec<f64>,
    /// Allocation currently held; turnover is measured against this.
    pub previous_weights: Vec<f64>,
    /// L1 turnover budget; `None` disables the constraint.
    pub turnover_limit: Option<f64>,
}

impl PortfolioProblem {
    /// Builds a problem with the standard operating constraints: box
    /// [0.05, 0.60], turnover budget 0.15 from a uniform start, λ = 2.5.
    pub fn new(covariance: DMatrix<f64>, expected_returns: Vec<f64>) -> Self {
        let n = expected_returns.len();
        PortfolioProblem {
            covariance,
            expected_returns,
            return_weight: 2.5,
            lower: vec![0.05; n],
            upper: vec![0.60; n],
            previous_weights: vec![1.0 / n as f64; n],
            turnover_limit: Some(0.15),
        }
    }

    pub fn n_assets(&self) -> usize {
        self.expected_returns.len()
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let n = self.n_assets();
        if n == 0 {
            return Err(OptimizerError::InvalidParameter("no assets".into()));
        }
        if self.covariance.nrows() != n || self.covariance.ncols() != n {
            return Err(OptimizerError::DimensionMismatch {
                left: "covariance",
                left_len: self.covariance.nrows(),
                right: "expected_returns",
                right_len: n,
            });
        }
        for (name, v) in [
            ("lower", &self.lower),
            ("upper", &self.upper),
            ("previous_weights", &self.previous_weights),
        ] {
            if v.len() != n {
                return Err(OptimizerError::DimensionMismatch {
                    left: name,
                    left_len: v.len(),
                    right: "expected_returns",
                    right_len: n,
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(OptimizerError::NonFinite("bounds or previous weights"));
            }
        }
        if self.expected_returns.iter().any(|x| !x.is_finite())
            || self.covariance.iter().any(|x| !x.is_finite())
        {
            return Err(OptimizerError::NonFinite("returns or covariance"));
        }
        if !self.return_weight.is_finite() || self.return_weight < 0.0 {
            return Err(OptimizerError::InvalidParameter(format!(
                "return_weight must be finite and non-negative, got {}",
                self.return_weight
            )));
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(OptimizerError::InvalidBounds {
                    asset: i,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        let lower_sum: f64 = self.lower.iter().sum();
        let upper_sum: f64 = self.upper.iter().sum();
        if lower_sum > 1.0 + 1e-12 || upper_sum < 1.0 - 1e-12 {
            return Err(OptimizerError::BoxSimplexInfeasible {
                lower_sum,
                upper_sum,
            });
        }
        if let Some(t) = self.turnover_limit {
            if !t.is_finite() || t < 0.0 {
                return Err(OptimizerError::InvalidParameter(format!(
                    "turnover_limit must be finite and non-negative, got {t}"
                )));
            }
        }
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (self.covariance[(i, j)] - self.covariance[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        let scale = self.covariance.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        if asym > 1e-9 * scale {
            return Err(OptimizerError::NotSymmetric);
        }
        let min_eig = min_eigenvalue(&self.covariance);
        if min_eig < -1e-9 * scale {
            return Err(OptimizerError::NotPositiveSemidefinite {
                min_eigenvalue: min_eig,
            });
        }
        Ok(())
    }

    /// Minimum-turnover feasible point: clamp the previous weights into the
    /// box, then spread the remaining budget gap across assets with
    /// headroom. Clamping is forced and every unit of gap costs exactly one
    /// unit of turnover wherever it lands, so the construction attains the
    /// minimum L1 distance from the previous weights.
    pub fn feasible_start(&self) -> Result<Vec<f64>, OptimizerError> {
        self.validate()?;
        let n = self.n_assets();
        let mut w: Vec<f64> = (0..n)
            .map(|i| self.previous_weights[i].clamp(self.lower[i], self.upper[i]))
            .collect();
        let clamp_cost: f64 = (0..n)
            .map(|i| (w[i] - self.previous_weights[i]).abs())
            .sum();
        let mut gap = 1.0 - w.iter().sum::<f64>();
        let required = clamp_cost + gap.abs();
        if let Some(t) = self.turnover_limit {
            if required > t + 1e-9 {
                return Err(OptimizerError::TurnoverInfeasible { required, limit: t });
            }
        }
        // Largest headroom first keeps the distribution deterministic and
        // touches as few assets as possible.
        let mut order: Vec<usize> = (0..n).collect();
        if gap > 0.0 {
            order.sort_by(|&a, &b| {
                let ha = self.upper[a] - w[a];
                let hb = self.upper[b] - w[b];
                hb.partial_cmp(&ha).unwrap().then(a.cmp(&b))
            });
            for i in order {
                if gap <= 0.0 {
                    break;
                }
                let add = gap.min(self.upper[i] - w[i]);
                w[i] += add;
                gap -= add;
            }
        } else if gap < 0.0 {
            order.sort_by(|&a, &b| {
                let ha = w[a] - self.lower[a];
                let hb = w[b] - self.lower[b];
                hb.partial_cmp(&ha).unwrap().then(a.cmp(&b))
            });
            for i in order {
                if gap >= 0.0 {
                    break;
                }
                let cut = (-gap).min(w[i] - self.lower[i]);
                w[i] -= cut;
                gap += cut;
            }
        }
        if gap.abs() > 1e-9 {
            // validate() guarantees enough headroom; reaching here means a
            // numerical inconsistency worth surfacing loudly.
            return Err(OptimizerError::Numerical(format!(
                "budget gap {gap:e} left after distribution"
            )));
        }
        Ok(w)
    }

    /// Objective value w'Σw - λμ'w.
    pub fn objective(&self, weights: &[f64]) -> f64 {
        let n = self.n_assets();
        let w = DVector::from_column_slice(weights);
        let quad = (w.transpose() * &self.covariance * &w)[(0, 0)];
        let lin: f64 = (0..n).map(|i| self.expected_returns[i] * weights[i]).sum();
        quad - self.return_weight * lin
    }

    /// Largest violation of the problem's constraints at `weights`.
    pub fn constraint_violation(&self, weights: &[f64]) -> f64 {
        let n = self.n_assets();
        let mut worst = (weights.iter().sum::<f64>() - 1.0).abs();
        for ((&w, &lo), &hi) in weights.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - w);
            worst = worst.max(w - hi);
        }
        if let Some(t) = self.turnover_limit {
            let turnover: f64 = (0..n)
                .map(|i| (weights[i] - self.previous_weights[i]).abs())
                .sum();
            worst = worst.max(turnover - t);
        }
        worst.max(0.0)
    }

    /// Solves from the minimum-turnover feasible start.
    pub fn solve(&self) -> Result<Solution, OptimizerError> {
        let start = self.feasible_start()?;
        self.solve_with_start(&start)
    }

    /// Solves from a caller-supplied feasible allocation. The optimum of a
    /// convex problem does not depend on the start; exposing it makes that
    /// property testable.
    pub fn solve_with_start(&self, start: &[f64]) -> Result<Solution, OptimizerError> {
        self.validate()?;
        let n = self.n_assets();
        if start.len() != n {
            return Err(OptimizerError::DimensionMismatch {
                left: "start",
                left_len: start.len(),
                right: "expected_returns",
                right_len: n,
            });
        }
        let violation = self.constraint_violation(start);
        if violation > 1e-8 {
            return Err(OptimizerError::InfeasibleStart { violation });
        }

        let (weights, iterations) = match self.turnover_limit {
            None => self.solve_direct(start)?,
            Some(limit) => self.solve_split(start, limit)?,
        };
        let kkt_residual = kkt_check(self, &weights)?;
        let active = self.active_constraints(&weights);
        Ok(Solution {
            objective: self.objective(&weights),
            weights,
            kkt_residual,
            active,
            iterations,
        })
    }

    /// Active-set solve in weight space (no turnover constraint).
    fn solve_direct(&self, start: &[f64]) -> Result<(Vec<f64>, usize), OptimizerError> {
        let n = self.n_assets();
        let mut q = self.covariance.clone() * 2.0;
        for i in 0..n {
            q[(i, i)] += RIDGE;
        }
        let c = DVector::from_iterator(
            n,
            self.expected_returns
                .iter()
                .map(|m| -self.return_weight * m),
        );
        let a_eq = DMatrix::from_element(1, n, 1.0);
        let b_eq = DVector::from_element(1, 1.0);
        let mut rows: Vec<RowDVector<f64>> = Vec::with_capacity(2 * n);
        let mut rhs: Vec<f64> = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut lo = RowDVector::zeros(n);
            lo[i] = 1.0;
            rows.push(lo);
            rhs.push(self.lower[i]);
            let mut hi = RowDVector::zeros(n);
            hi[i] = -1.0;
            rows.push(hi);
            rhs.push(-self.upper[i]);
        }
        let a_in = DMatrix::from_rows(&rows);
        let b_in = DVector::from_vec(rhs);
        let x0 = DVector::from_column_slice(start);
        let raw = active_set_qp(&q, &c, &a_eq, &b_eq, &a_in, &b_in, x0)?;
        Ok((raw.x.iter().copied().collect(), raw.iterations))
    }

    /// Active-set solve in buy/sell split space (turnover constraint on).
    fn solve_split(&self, start: &[f64], limit: f64) -> Result<(Vec<f64>, usize), OptimizerError> {
        let n = self.n_assets();
        let d = 2 * n;
        let sigma2 = self.covariance.clone() * 2.0;
        let mut q = DMatrix::zeros(d, d);
        for i in 0..n {
            for j in 0..n {
                let v = sigma2[(i, j)];
                q[(i, j)] = v;
                q[(n + i, n + j)] = v;
                q[(i, n + j)] = -v;
                q[(n + i, j)] = -v;
            }
        }
        for i in 0..d {
            q[(i, i)] += RIDGE;
        }
        let prev = DVector::from_column_slice(&self.previous_weights);
        let g_prev = &sigma2 * &prev
            - DVector::from_iterator(
                n,
                self.expected_returns.iter().map(|m| self.return_weight * m),
            );
        let mut c = DVector::zeros(d);
        for i in 0..n {
            c[i] = g_prev[i];
            c[n + i] = -g_prev[i];
        }

        let mut eq_row = RowDVector::zeros(d);
        for i in 0..n {
            eq_row[i] = 1.0;
            eq_row[n + i] = -1.0;
        }
        let a_eq = DMatrix::from_rows(&[eq_row]);
        let b_eq = DVector::from_element(1, 1.0 - self.previous_weights.iter().sum::<f64>());

        let mut rows: Vec<RowDVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for i in 0..d {
            // u >= 0 and v >= 0.
            let mut r = RowDVector::zeros(d);
            r[i] = 1.0;
            rows.push(r);
            rhs.push(0.0);
        }
        for i in 0..n {
            // Box bounds on w = prev + u - v.
            let mut lo = RowDVector::zeros(d);
            lo[i] = 1.0;
            lo[n + i] = -1.0;
            rows.push(lo);
            rhs.push(self.lower[i] - self.previous_weights[i]);
            let mut hi = RowDVector::zeros(d);
            hi[i] = -1.0;
            hi[n + i] = 1.0;
            rows.push(hi);
            rhs.push(self.previous_weights[i] - self.upper[i]);
        }
        // Turnover budget: total buy plus sell volume at most the limit.
        rows.push(RowDVector::from_element(d, -1.0));
        rhs.push(-limit);
        let a_in = DMatrix::from_rows(&rows);
        let b_in = DVector::from_vec(rhs);

        let mut x0 = DVector::zeros(d);
        for i in 0..n {
            let delta = start[i] - self.previous_weights[i];
            x0[i] = delta.max(0.0);
            x0[n + i] = (-delta).max(0.0);
        }
        let raw = active_set_qp(&q, &c, &a_eq, &b_eq, &a_in, &b_in, x0)?;
        let weights: Vec<f64> = (0..n)
            .map(|i| self.previous_weights[i] + raw.x[i] - raw.x[n + i])
            .collect();
        Ok((weights, raw.iterations))
    }

    /// Constraints binding at `weights`, by inspection of slacks.
    pub fn active_constraints(&self, weights: &[f64]) -> Vec<ActiveConstraint> {
        let n = self.n_assets();
        let mut active = Vec::new();
        for (i, &w) in weights.iter().enumerate() {
            if w - self.lower[i] <= ACTIVE_TOL {
                active.push(ActiveConstraint::LowerBound(i));
            } else if self.upper[i] - w <= ACTIVE_TOL {
                active.push(ActiveConstraint::UpperBound(i));
            }
        }
        if let Some(t) = self.turnover_limit {
            let turnover: f64 = (0..n)
                .map(|i| (weights[i] - self.previous_weights[i]).abs())
                .sum();
            if t - turnover <= ACTIVE_TOL {
                active.push(ActiveConstraint::Turnover);
            }
        }
        active
    }
}

/// A constraint binding at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveConstraint {
    LowerBound(usize),
    UpperBound(usize),
    Turnover,
}

/// Solver output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub weights: Vec<f64>,
    pub objective: f64,
    /// Independent first-order optimality residual (infinity norm).
    pub kkt_residual: f64,
    pub active: Vec<ActiveConstraint>,
    pub iterations: usize,
}

struct QpRaw {
    x: DVector<f64>,
    iterations: usize,
}

/// Primal active-set method for convex QP:
/// min ½x'Qx + c'x  s.t.  A_eq x = b_eq,  A_in x >= b_in,
/// started from a feasible x0. Q must be positive definite (callers add a
/// tiny ridge). Each iteration solves the equality-constrained subproblem
/// on the current working set via an LU factorization of the KKT system; a
/// blocking constraint encountered en route is appended to the working set
/// (its gradient cannot be dependent on the working rows, because the step
/// is orthogonal to those rows but not to the blocker), and a constraint
/// with a negative multiplier is dropped when the subproblem stalls.
fn active_set_qp(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    x0: DVector<f64>,
) -> Result<QpRaw, OptimizerError> {
    let d = q.nrows();
    let k_eq = a_eq.nrows();
    let k_in = a_in.nrows();
    let mut x = x0;

    let feas = |x: &DVector<f64>| -> f64 {
        let mut worst: f64 = 0.0;
        let eq = a_eq * x - b_eq;
        for v in eq.iter() {
            worst = worst.max(v.abs());
        }
        let ineq = a_in * x - b_in;
        for v in ineq.iter() {
            worst = worst.max(-v);
        }
        worst
    };
    let v0 = feas(&x);
    if v0 > 1e-8 {
        return Err(OptimizerError::InfeasibleStart { violation: v0 });
    }

    // Initial working set: active rows added greedily while they increase
    // the rank of the stacked equality + working-set matrix.
    let mut working: Vec<usize> = Vec::new();
    {
        let slacks = a_in * &x - b_in;
        let mut stacked: Vec<RowDVector<f64>> = (0..k_eq)
            .map(|i| RowDVector::from_iterator(d, a_eq.row(i).iter().copied()))
            .collect();
        for i in 0..k_in {
            if slacks[i].abs() <= 1e-9 {
                let mut candidate = stacked.clone();
                candidate.push(RowDVector::from_iterator(d, a_in.row(i).iter().copied()));
                let m = DMatrix::from_rows(&candidate);
                if m.rank(1e-10) == candidate.len() {
                    stacked = candidate;
                    working.push(i);
                }
            }
        }
    }

    let max_iter = 50 * (d + k_in + 1);
    for iteration in 1..=max_iter {
        let kw = working.len();
        let ka = k_eq + kw;
        // KKT system [[Q, A'], [A, 0]] [p; y] = [-g; 0].
        let g = q * &x + c;
        let mut m = DMatrix::zeros(d + ka, d + ka);
        m.view_mut((0, 0), (d, d)).copy_from(q);
        for r in 0..k_eq {
            for col in 0..d {
                m[(d + r, col)] = a_eq[(r, col)];
                m[(col, d + r)] = a_eq[(r, col)];
            }
        }
        for (w_idx, &row) in working.iter().enumerate() {
            for col in 0..d {
                m[(d + k_eq + w_idx, col)] = a_in[(row, col)];
                m[(col, d + k_eq + w_idx)] = a_in[(row, col)];
            }
        }
        let mut rhs = DVector::zeros(d + ka);
        for i in 0..d {
            rhs[i] = -g[i];
        }
        let sol = m
            .full_piv_lu()
            .solve(&rhs)
            .ok_or_else(|| OptimizerError::Numerical("singular KKT system".into()))?;
        let p = sol.rows(0, d).into_owned();
        let scale = 1.0 + x.amax();

        if p.amax() <= 1e-11 * scale {
            // Stalled: check working-set multipliers (λ = -y).
            let mut min_lambda = f64::INFINITY;
            let mut drop_idx = None;
            for w_idx in 0..kw {
                let lambda = -sol[d + k_eq + w_idx];
                if lambda < min_lambda {
                    min_lambda = lambda;
                    drop_idx = Some(w_idx);
                }
            }
            if min_lambda >= -1e-11 {
                return Ok(QpRaw {
                    x,
                    iterations: iteration,
                });
            }
            working.remove(drop_idx.expect("non-empty working set with negative multiplier"));
            continue;
        }

        // Step length: first blocking constraint outside the working set.
        let mut alpha = 1.0;
        let mut blocker = None;
        for i in 0..k_in {
            if working.contains(&i) {
                continue;
            }
            let rate = a_in.row(i).dot(&p.transpose());
            if rate < -1e-12 {
                let slack = a_in.row(i).dot(&x.transpose()) - b_in[i];
                let bound = (slack / -rate).max(0.0);
                if bound < alpha - 1e-15 {
                    alpha = bound;
                    blocker = Some(i);
                }
            }
        }
        x += &p * alpha;
        if let Some(i) = blocker {
            working.push(i);
        } else if alpha >= 1.0 {
            // Full step with no blocker: the subproblem optimum is reached;
            // loop once more to examine multipliers.
            continue;
        }
    }
    Err(OptimizerError::MaxIterations { limit: max_iter })
}

/// Closed-form minimizer of w'Σw - λμ'w subject only to the budget
/// constraint 1'w = 1 (no box, no turnover): the classical equality-only
/// mean-variance solution. Requires Σ invertible.
pub fn markowitz_closed_form(
    covariance: &DMatrix<f64>,
    expected_returns: &[f64],
    return_weight: f64,
) -> Result<Vec<f64>, OptimizerError> {
    let n = expected_returns.len();
    if covariance.nrows() != n || covariance.ncols() != n {
        return Err(OptimizerError::DimensionMismatch {
            left: "covariance",
            left_len: covariance.nrows(),
            right: "expected_returns",
            right_len: n,
        });
    }
    let lu = covariance.clone().full_piv_lu();
    let mu = DVector::from_column_slice(expected_returns);
    let ones = DVector::from_element(n, 1.0);
    let sigma_inv_mu = lu
        .solve(&mu)
        .ok_or_else(|| OptimizerError::Numerical("covariance is singular".into()))?;
    let sigma_inv_one = lu
        .solve(&ones)
        .ok_or_else(|| OptimizerError::Numerical("covariance is singular".into()))?;
    let denom = ones.dot(&sigma_inv_one);
    if denom <= 0.0 {
        return Err(OptimizerError::Numerical(
            "covariance is not positive definite".into(),
        ));
    }
    let half_lambda = return_weight / 2.0;
    let nu = (1.0 - half_lambda * ones.dot(&sigma_inv_mu)) / denom;
    Ok((0..n)
        .map(|i| half_lambda * sigma_inv_mu[i] + nu * sigma_inv_one[i])
        .collect())
}

/// Independent first-order optimality residual at `weights`.
///
/// Reconstructs the stationarity condition in buy/sell split coordinates
/// (which linearize the turnover kink), stacks the gradients of the
/// constraints active at `weights`, and fits their multipliers by least
/// squares, iteratively discarding inequality rows whose fitted
/// multiplier is negative. Returns the infinity norm of the worst of the
/// stationarity gap and the primal constraint violation; a true optimum
/// scores at numerical noise level regardless of how it was produced.
pub fn kkt_check(problem: &PortfolioProblem, weights: &[f64]) -> Result<f64, OptimizerError> {
    problem.validate()?;
    let n = problem.n_assets();
    if weights.len() != n {
        return Err(OptimizerError::DimensionMismatch {
            left: "weights",
            left_len: weights.len(),
            right: "expected_returns",
            right_len: n,
        });
    }
    let d = 2 * n;
    let w = DVector::from_column_slice(weights);
    let mu = DVector::from_column_slice(&problem.expected_returns);
    let g_w = &problem.covariance * &w * 2.0 - mu * problem.return_weight;

    // Gradient in split coordinates [u; v].
    let mut target = DVector::zeros(d);
    for i in 0..n {
        target[i] = g_w[i];
        target[n + i] = -g_w[i];
    }

    // Canonical split of the realized reallocation.
    let delta: Vec<f64> = (0..n)
        .map(|i| weights[i] - problem.previous_weights[i])
        .collect();
    let u: Vec<f64> = delta.iter().map(|&x| x.max(0.0)).collect();
    let v: Vec<f64> = delta.iter().map(|&x| (-x).max(0.0)).collect();

    // Column stack of active constraint gradients; the budget row first
    // (free multiplier), then sign-constrained rows.
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut signed: Vec<bool> = Vec::new(); // true => multiplier must be >= 0
    let mut eq_col = DVector::zeros(d);
    for i in 0..n {
        eq_col[i] = 1.0;
        eq_col[n + i] = -1.0;
    }
    columns.push(eq_col);
    signed.push(false);

    for i in 0..n {
        if u[i] <= ACTIVE_TOL {
            let mut col = DVector::zeros(d);
            col[i] = 1.0;
            columns.push(col);
            signed.push(true);
        }
        if v[i] <= ACTIVE_TOL {
            let mut col = DVector::zeros(d);
            col[n + i] = 1.0;
            columns.push(col);
            signed.push(true);
        }
        if weights[i] - problem.lower[i] <= ACTIVE_TOL {
            let mut col = DVector::zeros(d);
            col[i] = 1.0;
            col[n + i] = -1.0;
            columns.push(col);
            signed.push(true);
        }
        if problem.upper[i] - weights[i] <= ACTIVE_TOL {
            let mut col = DVector::zeros(d);
            col[i] = -1.0;
            col[n + i] = 1.0;
            columns.push(col);
            signed.push(true);
        }
    }
    if let Some(t) = problem.turnover_limit {
        let used: f64 = u.iter().sum::<f64>() + v.iter().sum::<f64>();
        if t - used <= ACTIVE_TOL {
            columns.push(DVector::from_element(d, -1.0));
            signed.push(true);
        }
    }

    // Least-squares multiplier fit with iterative removal of rows whose
    // multipliers come out negative.
    let mut keep: Vec<usize> = (0..columns.len()).collect();
    let stationarity = loop {
        let a = DMatrix::from_fn(d, keep.len(), |r, c| columns[keep[c]][r]);
        let svd = a.clone().svd(true, true);
        let m = svd
            .solve(&target, 1e-13)
            .map_err(|e| OptimizerError::Numerical(e.to_string()))?;
        let mut worst_idx = None;
        let mut worst_val = -1e-9;
        for (c, &orig) in keep.iter().enumerate() {
            if signed[orig] && m[c] < worst_val {
                worst_val = m[c];
                worst_idx = Some(c);
            }
        }
        match worst_idx {
            Some(c) if keep.len() > 1 => {
                keep.remove(c);
            }
            _ => {
                // Clamp residual negativity to zero and measure the gap.
                let mut fitted = DVector::zeros(d);
                for (c, &orig) in keep.iter().enumerate() {
                    let coef = if signed[orig] { m[c].max(0.0) } else { m[c] };
                    fitted += &columns[orig] * coef;
                }
                break (fitted - &target).amax();
            }
        }
    };
    Ok(stationarity.max(problem.constraint_violation(weights)))
}

/// Exhaustive reference: evaluates the objective on every feasible point
/// of the uniform simplex lattice with the given step and returns the
/// best. Cost grows as (1/step)^(n-1); intended for cross-checking the
/// solver on two or three assets.
pub fn grid_search_reference(
    problem: &PortfolioProblem,
    step: f64,
) -> Result<(Vec<f64>, f64), OptimizerError> {
    problem.validate()?;
    if !(step > 0.0 && step < 1.0) {
        return Err(OptimizerError::InvalidParameter(format!(
            "grid step must lie in (0, 1), got {step}"
        )));
    }
    let units_f = 1.0 / step;
    let units = units_f.round() as i64;
    if (units_f - units as f64).abs() > 1e-9 || units <= 0 {
        return Err(OptimizerError::InvalidParameter(format!(
            "1/step must be an integer, got {units_f}"
        )));
    }
    let n = problem.n_assets();
    let lo: Vec<i64> = (0..n)
        .map(|i| ((problem.lower[i] * units as f64) - 1e-9).ceil() as i64)
        .collect();
    let hi: Vec<i64> = (0..n)
        .map(|i| ((problem.upper[i] * units as f64) + 1e-9).floor() as i64)
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut point = vec![0i64; n];
    // Depth-first enumeration of lattice points summing to `units`, pruned
    // by the reachable range of the remaining coordinates.
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        problem: &PortfolioProblem,
        units: i64,
        lo: &[i64],
        hi: &[i64],
        point: &mut Vec<i64>,
        asset: usize,
        remaining: i64,
        best: &mut Option<(Vec<f64>, f64)>,
    ) {
        let n = lo.len();
        if asset == n - 1 {
            if remaining < lo[asset] || remaining > hi[asset] {
                return;
            }
            point[asset] = remaining;
            let w: Vec<f64> = point.iter().map(|&k| k as f64 / units as f64).collect();
            if problem.constraint_violation(&w) > 1e-9 {
                return;
            }
            let f = problem.objective(&w);
            if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
                *best = Some((w, f));
            }
            return;
        }
        let min_rest: i64 = lo[asset + 1..].iter().sum();
        let max_rest: i64 = hi[asset + 1..].iter().sum();
        let from = lo[asset].max(remaining - max_rest);
        let to = hi[asset].min(remaining - min_rest);
        for k in from..=to {
            point[asset] = k;
            recurse(
                problem,
                units,
                lo,
                hi,
                point,
                asset + 1,
                remaining - k,
                best,
            );
        }
    }
    recurse(problem, units, &lo, &hi, &mut point, 0, units, &mut best);
    best.ok_or(OptimizerError::GridInfeasible { step })
}
