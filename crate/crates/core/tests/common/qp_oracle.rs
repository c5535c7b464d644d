//! Random QP generator and an independent reference solver.
//!
//! The reference maximizes the dual function with accelerated projected
//! gradient ascent. The dual of a strictly convex QP only has sign
//! constraints, so the projection is a clip, and the primal point is recovered
//! as `x = H^{-1}(K' y - g)`.

use cpmpc::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Strictly convex problem with a known feasible point.
pub fn random_problem<R: Rng>(rng: &mut R) -> (QpProblem, DVector<f64>) {
    let n = rng.gen_range(2..=10);
    let m_i = rng.gen_range(0..=10);
    let m_e = rng.gen_range(0..=2.min(n - 1));
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let hessian = m.transpose() * &m + DMatrix::identity(n, n) * rng.gen_range(0.2..1.0);
    let gradient = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let x_feas = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

    let ineq_matrix = DMatrix::from_fn(m_i, n, |_, _| rng.gen_range(-1.0..1.0));
    let cx = &ineq_matrix * &x_feas;
    let mut ineq_lower = DVector::zeros(m_i);
    let mut ineq_upper = DVector::zeros(m_i);
    for i in 0..m_i {
        let kind = rng.gen_range(0..4);
        ineq_lower[i] = if kind == 1 {
            f64::NEG_INFINITY
        } else {
            cx[i] - rng.gen_range(0.0..0.5)
        };
        ineq_upper[i] = if kind == 2 {
            f64::INFINITY
        } else {
            cx[i] + rng.gen_range(0.0..0.5)
        };
    }
    let eq_matrix = DMatrix::from_fn(m_e, n, |_, _| rng.gen_range(-1.0..1.0));
    let eq_rhs = &eq_matrix * &x_feas;
    let problem = QpProblem {
        hessian,
        gradient,
        ineq_matrix,
        ineq_lower,
        ineq_upper,
        eq_matrix,
        eq_rhs,
    };
    (problem, x_feas)
}

/// Orthogonal projector onto the null space of the equality rows.
pub fn equality_null_projector(problem: &QpProblem) -> DMatrix<f64> {
    let n = problem.num_vars();
    let e = &problem.eq_matrix;
    if e.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let gram = e * e.transpose();
    let inv = gram.try_inverse().expect("independent equality rows");
    DMatrix::identity(n, n) - e.transpose() * inv * e
}

/// Reference primal solution via accelerated dual projected gradient.
pub fn dual_gradient_oracle(problem: &QpProblem) -> DVector<f64> {
    let n = problem.num_vars();
    // rows k' x >= rhs (sign-constrained multiplier) or = rhs (free multiplier)
    let mut rows: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    for r in 0..problem.eq_matrix.nrows() {
        rows.push((problem.eq_matrix.row(r).transpose(), problem.eq_rhs[r], false));
    }
    for r in 0..problem.ineq_matrix.nrows() {
        let a = problem.ineq_matrix.row(r).transpose();
        if problem.ineq_lower[r].is_finite() {
            rows.push((a.clone(), problem.ineq_lower[r], true));
        }
        if problem.ineq_upper[r].is_finite() {
            rows.push((-a, -problem.ineq_upper[r], true));
        }
    }
    let m = rows.len();
    let hinv = problem.hessian.clone().try_inverse().expect("positive definite");
    let x_of = |y: &DVector<f64>| -> DVector<f64> {
        let mut v = -problem.gradient.clone();
        for (k, (a, _, _)) in rows.iter().enumerate() {
            v += a * y[k];
        }
        &hinv * v
    };
    if m == 0 {
        return x_of(&DVector::zeros(0));
    }
    let mut kmat = DMatrix::zeros(m, n);
    for (k, (a, _, _)) in rows.iter().enumerate() {
        kmat.set_row(k, &a.transpose());
    }
    let lipschitz = (&kmat * &hinv * kmat.transpose())
        .symmetric_eigenvalues()
        .amax()
        .max(1e-12);
    let step = 1.0 / lipschitz;

    let project = |y: &mut DVector<f64>| {
        for (k, (_, _, signed)) in rows.iter().enumerate() {
            if *signed && y[k] < 0.0 {
                y[k] = 0.0;
            }
        }
    };
    let residual = |x: &DVector<f64>| -> DVector<f64> { DVector::from_fn(m, |k, _| rows[k].1 - rows[k].0.dot(x)) };

    let mut y = DVector::zeros(m);
    let mut y_prev = y.clone();
    let mut momentum = 1.0f64;
    let mut best = x_of(&y);
    for _ in 0..1_000_000 {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / t_next;
        let w = &y + (&y - &y_prev) * beta;
        let xw = x_of(&w);
        let mut y_next = &w + residual(&xw) * step;
        project(&mut y_next);
        // restart when the step goes against the momentum direction
        if (&y_next - &y).dot(&(&y - &y_prev)) < 0.0 {
            momentum = 1.0;
        } else {
            momentum = t_next;
        }
        y_prev = y;
        y = y_next;
        let x = x_of(&y);
        let r = residual(&x);
        let mut worst: f64 = 0.0;
        for (k, (_, _, signed)) in rows.iter().enumerate() {
            if *signed {
                worst = worst.max(r[k]).max((y[k] * r[k]).abs());
            } else {
                worst = worst.max(r[k].abs());
            }
        }
        best = x;
        if worst < 1e-12 {
            break;
        }
    }
    best
}
