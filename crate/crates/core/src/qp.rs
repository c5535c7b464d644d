//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  E x  = e
//!                 l <= C x <= u
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The method starts from
//! the unconstrained minimizer and adds violated constraints one at a time while
//! keeping the multipliers dual feasible, so it never needs a feasible starting
//! point. Constraint rows are stored sparsely, which matters for the MPC problems
//! where most rows are bounds.
//!
//! [`QpSolver`] caches the inverse Cholesky factor of the last Hessian it saw, so
//! a controller re-solving with the same Hessian and a new gradient skips the
//! O(n^3) factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the Hessian diagonal before factorization.
pub const HESSIAN_REGULARIZATION: f64 = 1e-9;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Problem without constraints.
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_lower: DVector::zeros(0),
            ineq_upper: DVector::zeros(0),
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn with_bounds(mut self, lower: &[f64], upper: &[f64]) -> Self {
        let n = self.num_vars();
        let extra = DMatrix::identity(n, n);
        self.ineq_matrix = stack_rows(&self.ineq_matrix, &extra);
        self.ineq_lower = stack_vec(&self.ineq_lower, lower);
        self.ineq_upper = stack_vec(&self.ineq_upper, upper);
        self
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    /// Largest violation of any equality or inequality row at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.ineq_matrix.nrows() > 0 {
            let cx = &self.ineq_matrix * x;
            for i in 0..cx.len() {
                worst = worst.max(self.ineq_lower[i] - cx[i]).max(cx[i] - self.ineq_upper[i]);
            }
        }
        if self.eq_matrix.nrows() > 0 {
            let ex = &self.eq_matrix * x;
            for i in 0..ex.len() {
                worst = worst.max((ex[i] - self.eq_rhs[i]).abs());
            }
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if n == 0 {
            return Err(Error::Dimension {
                what: "qp variables",
                expected: 1,
                got: 0,
            });
        }
        let checks: [(&'static str, usize, usize); 7] = [
            ("hessian rows", n, self.hessian.nrows()),
            ("hessian cols", n, self.hessian.ncols()),
            ("inequality cols", n, self.ineq_matrix.ncols()),
            ("inequality lower", self.ineq_matrix.nrows(), self.ineq_lower.len()),
            ("inequality upper", self.ineq_matrix.nrows(), self.ineq_upper.len()),
            ("equality cols", n, self.eq_matrix.ncols()),
            ("equality rhs", self.eq_matrix.nrows(), self.eq_rhs.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn stack_vec(a: &DVector<f64>, b: &[f64]) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().copied().chain(b.iter().copied()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Max of stationarity residual and primal violation at `primal`.
    pub kkt_residual: f64,
    /// Inequality bounds active at the solution.
    pub active: Vec<ActiveBound>,
}

/// Side of a two-sided inequality row held at equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveBound {
    pub row: usize,
    pub upper: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// One-shot solve without factorization reuse.
pub fn solve_qp(
    problem: &QpProblem,
    warm_start: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<QpSolution> {
    QpSolver::new(tol, max_iter).solve(problem, warm_start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
}

/// A sparse one-sided row `a' x >= rhs` (or `= rhs`).
#[derive(Debug, Clone)]
struct Row {
    idx: Vec<usize>,
    val: Vec<f64>,
    rhs: f64,
    kind: RowKind,
    origin: Option<ActiveBound>,
}

impl Row {
    fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    fn negated(&self) -> Row {
        Row {
            idx: self.idx.clone(),
            val: self.val.iter().map(|v| -v).collect(),
            rhs: -self.rhs,
            kind: self.kind,
            origin: self.origin,
        }
    }
}

#[derive(Debug, Clone)]
struct Factor {
    hessian: Vec<f64>,
    /// Inverse transposed Cholesky factor, column-major, upper triangular.
    j0: Vec<f64>,
}

/// Reusable solver holding the last Hessian factorization.
#[derive(Debug, Clone)]
pub struct QpSolver {
    pub tol: f64,
    pub max_iter: usize,
    cache: Option<Factor>,
    factorizations: usize,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self::new(DEFAULT_TOL, DEFAULT_MAX_ITER)
    }
}

impl QpSolver {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            cache: None,
            factorizations: 0,
        }
    }

    /// Number of Cholesky factorizations performed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn solve(&mut self, problem: &QpProblem, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
        self.solve_with_hint(problem, warm_start, &[])
    }

    /// Like [`QpSolver::solve`], but first adds the hinted bounds that are
    /// violated, e.g. the active set of a previous, similar problem.
    pub fn solve_with_hint(
        &mut self,
        problem: &QpProblem,
        warm_start: Option<&DVector<f64>>,
        hint: &[ActiveBound],
    ) -> Result<QpSolution> {
        problem.validate()?;
        let n = problem.num_vars();
        let rows = match build_rows(problem) {
            Some(rows) => rows,
            None => return Ok(self.infeasible(problem, DVector::zeros(n), 0)),
        };

        if let Some(x0) = warm_start {
            if x0.len() != n {
                return Err(Error::Dimension {
                    what: "warm start",
                    expected: n,
                    got: x0.len(),
                });
            }
            if let Some(sol) = self.try_warm_start(problem, &rows, x0) {
                return Ok(sol);
            }
        }

        let j0 = self.factor(problem);
        let mut gi = DualActiveSet::new(n, j0, problem.gradient.as_slice());
        let feas_tol = (self.tol * 1e-2).max(1e-14);
        let hinted: Vec<usize> = if hint.is_empty() {
            Vec::new()
        } else {
            let lookup: std::collections::HashMap<ActiveBound, usize> = rows
                .iter()
                .enumerate()
                .filter_map(|(k, r)| r.origin.filter(|_| r.kind == RowKind::Inequality).map(|o| (o, k)))
                .collect();
            hint.iter().filter_map(|h| lookup.get(h).copied()).collect()
        };
        let status = gi.run(&rows, &hinted, feas_tol, self.max_iter);
        let primal = DVector::from_vec(gi.x.clone());
        let iterations = gi.iterations;
        match status {
            QpStatus::Infeasible => Ok(self.infeasible(problem, primal, iterations)),
            status => {
                let kkt_residual = gi.kkt_residual(problem, &rows);
                let active = gi
                    .active
                    .iter()
                    .filter_map(|&k| rows[k].origin.filter(|_| rows[k].kind == RowKind::Inequality))
                    .collect();
                Ok(QpSolution {
                    objective: problem.objective(&primal),
                    primal,
                    status,
                    iterations,
                    kkt_residual,
                    active,
                })
            }
        }
    }

    fn infeasible(&self, problem: &QpProblem, primal: DVector<f64>, iterations: usize) -> QpSolution {
        QpSolution {
            objective: problem.objective(&primal),
            kkt_residual: problem.max_violation(&primal),
            primal,
            status: QpStatus::Infeasible,
            iterations,
            active: Vec::new(),
        }
    }

    fn factor(&mut self, problem: &QpProblem) -> Vec<f64> {
        let n = problem.num_vars();
        let h = problem.hessian.as_slice();
        if let Some(cache) = &self.cache {
            if cache.hessian.as_slice() == h {
                return cache.j0.clone();
            }
        }
        let mut reg = HESSIAN_REGULARIZATION;
        let j0 = loop {
            // symmetrize from the lower triangle, column-major
            let mut a = vec![0.0; n * n];
            for c in 0..n {
                for r in 0..n {
                    a[c * n + r] = 0.5 * (h[c * n + r] + h[r * n + c]);
                }
                a[c * n + c] += reg;
            }
            match cholesky_inverse_transpose(&mut a, n) {
                Some(j0) => break j0,
                None => reg *= 100.0,
            }
            assert!(reg < 1e6, "hessian is not positive semidefinite");
        };
        self.factorizations += 1;
        self.cache = Some(Factor {
            hessian: h.to_vec(),
            j0: j0.clone(),
        });
        j0
    }

    /// Accepts `x0` if the equality QP over its active rows is optimal for the full problem.
    fn try_warm_start(&self, problem: &QpProblem, rows: &[Row], x0: &DVector<f64>) -> Option<QpSolution> {
        let n = problem.num_vars();
        let x = x0.as_slice();
        let near = 1e-7;
        let working: Vec<&Row> = rows
            .iter()
            .filter(|r| r.kind == RowKind::Equality || (r.dot(x) - r.rhs).abs() <= near * (1.0 + r.rhs.abs()))
            .collect();
        let q = working.len();
        if q > n {
            return None;
        }
        let mut kkt = DMatrix::zeros(n + q, n + q);
        let mut rhs = DVector::zeros(n + q);
        for c in 0..n {
            for r in 0..n {
                kkt[(r, c)] = problem.hessian[(r, c)];
            }
            kkt[(c, c)] += HESSIAN_REGULARIZATION;
            rhs[c] = -problem.gradient[c];
        }
        for (k, row) in working.iter().enumerate() {
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                kkt[(n + k, i)] = v;
                kkt[(i, n + k)] = -v;
            }
            rhs[n + k] = row.rhs;
        }
        let sol = kkt.lu().solve(&rhs)?;
        let primal = DVector::from_iterator(n, sol.iter().take(n).copied());
        let dual_ok = working
            .iter()
            .enumerate()
            .all(|(k, row)| row.kind == RowKind::Equality || sol[n + k] >= -self.tol);
        let viol = problem.max_violation(&primal);
        if !dual_ok || viol > self.tol || !primal.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut grad = &problem.hessian * &primal + &problem.gradient;
        for (k, row) in working.iter().enumerate() {
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                grad[i] -= sol[n + k] * v;
            }
        }
        let kkt_residual = grad.amax().max(viol);
        if kkt_residual > self.tol.max(1e-12 * (1.0 + problem.hessian.amax() * primal.amax())) {
            return None;
        }
        Some(QpSolution {
            objective: problem.objective(&primal),
            primal,
            status: QpStatus::Optimal,
            iterations: 1,
            kkt_residual,
            active: working
                .iter()
                .filter_map(|r| r.origin.filter(|_| r.kind == RowKind::Inequality))
                .collect(),
        })
    }
}

/// Converts the two-sided rows into sparse one-sided rows. Returns `None` when a
/// row has `lower > upper`.
fn build_rows(problem: &QpProblem) -> Option<Vec<Row>> {
    let n = problem.num_vars();
    let mut rows = Vec::new();
    let sparse = |m: &DMatrix<f64>, r: usize| -> (Vec<usize>, Vec<f64>) {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for c in 0..n {
            let v = m[(r, c)];
            if v != 0.0 {
                idx.push(c);
                val.push(v);
            }
        }
        (idx, val)
    };
    for r in 0..problem.eq_matrix.nrows() {
        let (idx, val) = sparse(&problem.eq_matrix, r);
        rows.push(Row {
            idx,
            val,
            rhs: problem.eq_rhs[r],
            kind: RowKind::Equality,
            origin: None,
        });
    }
    for r in 0..problem.ineq_matrix.nrows() {
        let (lo, hi) = (problem.ineq_lower[r], problem.ineq_upper[r]);
        if lo > hi {
            return None;
        }
        let (idx, val) = sparse(&problem.ineq_matrix, r);
        if lo.is_finite() && hi.is_finite() && hi - lo <= 1e-12 * (1.0 + lo.abs()) {
            rows.push(Row {
                idx,
                val,
                rhs: 0.5 * (lo + hi),
                kind: RowKind::Equality,
                origin: None,
            });
            continue;
        }
        if lo.is_finite() {
            rows.push(Row {
                idx: idx.clone(),
                val: val.clone(),
                rhs: lo,
                kind: RowKind::Inequality,
                origin: Some(ActiveBound { row: r, upper: false }),
            });
        }
        if hi.is_finite() {
            rows.push(Row {
                idx,
                val: val.iter().map(|v| -v).collect(),
                rhs: -hi,
                kind: RowKind::Inequality,
                origin: Some(ActiveBound { row: r, upper: true }),
            });
        }
    }
    // equalities first
    rows.sort_by_key(|r| match r.kind {
        RowKind::Equality => 0,
        RowKind::Inequality => 1,
    });
    Some(rows)
}

/// In-place Cholesky of a column-major SPD matrix, returning `L^{-T}` column-major.
fn cholesky_inverse_transpose(a: &mut [f64], n: usize) -> Option<Vec<f64>> {
    // lower factor stored in the lower triangle of `a`
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[k * n + j] * a[k * n + j];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[j * n + i];
            for k in 0..j {
                s -= a[k * n + i] * a[k * n + j];
            }
            a[j * n + i] = s / d;
        }
    }
    // inverse of L (lower), column by column: L * col = e_c
    let mut linv = vec![0.0; n * n];
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= a[k * n + i] * linv[c * n + k];
            }
            linv[c * n + i] = s / a[i * n + i];
        }
    }
    // J = L^{-T}: J[r, c] = Linv[c, r]
    let mut j = vec![0.0; n * n];
    for c in 0..n {
        for r in 0..=c {
            j[c * n + r] = linv[r * n + c];
        }
    }
    Some(j)
}

struct DualActiveSet {
    n: usize,
    x: Vec<f64>,
    /// `J = L^{-T} Q`, column-major.
    j: Vec<f64>,
    /// Upper triangular `R` with `J' N_active = [R; 0]`, column-major n x n.
    r: Vec<f64>,
    active: Vec<usize>,
    mult: Vec<f64>,
    is_active: Vec<bool>,
    /// Equality rows may be stored with flipped sign.
    flipped: Vec<Option<Row>>,
    iterations: usize,
    d: Vec<f64>,
    z: Vec<f64>,
    rdir: Vec<f64>,
}

impl DualActiveSet {
    fn new(n: usize, j0: Vec<f64>, g: &[f64]) -> Self {
        // x = -J J' g
        let mut jtg = vec![0.0; n];
        for c in 0..n {
            let col = &j0[c * n..c * n + c + 1];
            jtg[c] = col.iter().zip(g).map(|(a, b)| a * b).sum();
        }
        let mut x = vec![0.0; n];
        for c in 0..n {
            let coef = -jtg[c];
            for r in 0..=c {
                x[r] += j0[c * n + r] * coef;
            }
        }
        Self {
            n,
            x,
            j: j0,
            r: vec![0.0; n * n],
            active: Vec::new(),
            mult: Vec::new(),
            is_active: Vec::new(),
            flipped: Vec::new(),
            iterations: 0,
            d: vec![0.0; n],
            z: vec![0.0; n],
            rdir: vec![0.0; n],
        }
    }

    fn q(&self) -> usize {
        self.active.len()
    }

    fn row<'a>(&'a self, rows: &'a [Row], k: usize) -> &'a Row {
        self.flipped[k].as_ref().unwrap_or(&rows[k])
    }

    /// d = J' a, z = J2 d2, rdir = R^{-1} d1. Returns (z'a, |d|^2).
    fn directions(&mut self, a: &Row) -> (f64, f64) {
        let n = self.n;
        let q = self.q();
        for c in 0..n {
            let col = &self.j[c * n..(c + 1) * n];
            self.d[c] = a.idx.iter().zip(&a.val).map(|(&i, &v)| col[i] * v).sum();
        }
        self.z.iter_mut().for_each(|v| *v = 0.0);
        for c in q..n {
            let coef = self.d[c];
            if coef != 0.0 {
                let col = &self.j[c * n..(c + 1) * n];
                for (zi, ji) in self.z.iter_mut().zip(col) {
                    *zi += ji * coef;
                }
            }
        }
        for i in (0..q).rev() {
            let mut s = self.d[i];
            for k in i + 1..q {
                s -= self.r[k * n + i] * self.rdir[k];
            }
            self.rdir[i] = s / self.r[i * n + i];
        }
        let d2: f64 = self.d[q..].iter().map(|v| v * v).sum();
        let dn: f64 = self.d.iter().map(|v| v * v).sum();
        (d2, dn)
    }

    fn add(&mut self, k: usize, multiplier: f64) {
        let n = self.n;
        let q = self.q();
        for c in (q + 1..n).rev() {
            let (a, b) = (self.d[c - 1], self.d[c]);
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let (cs, sn) = (a / rho, b / rho);
            self.d[c - 1] = rho;
            self.d[c] = 0.0;
            let (left, right) = self.j.split_at_mut(c * n);
            let colp = &mut left[(c - 1) * n..];
            let colc = &mut right[..n];
            for (p, cc) in colp.iter_mut().zip(colc.iter_mut()) {
                let (u, v) = (*p, *cc);
                *p = cs * u + sn * v;
                *cc = -sn * u + cs * v;
            }
        }
        for i in 0..=q {
            self.r[q * n + i] = self.d[i];
        }
        self.active.push(k);
        self.mult.push(multiplier);
        self.is_active[k] = true;
    }

    fn drop(&mut self, pos: usize) {
        let n = self.n;
        let q = self.q();
        let k = self.active.remove(pos);
        self.mult.remove(pos);
        self.is_active[k] = false;
        // shift R columns left
        for c in pos..q - 1 {
            for i in 0..=c + 1 {
                self.r[c * n + i] = self.r[(c + 1) * n + i];
            }
        }
        for i in 0..n {
            self.r[(q - 1) * n + i] = 0.0;
        }
        // restore upper triangular form
        for c in pos..q - 1 {
            let (a, b) = (self.r[c * n + c], self.r[c * n + c + 1]);
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let (cs, sn) = (a / rho, b / rho);
            for col in c..q - 1 {
                let (u, v) = (self.r[col * n + c], self.r[col * n + c + 1]);
                self.r[col * n + c] = cs * u + sn * v;
                self.r[col * n + c + 1] = -sn * u + cs * v;
            }
            self.r[c * n + c + 1] = 0.0;
            let (left, right) = self.j.split_at_mut((c + 1) * n);
            let colp = &mut left[c * n..];
            let colc = &mut right[..n];
            for (p, cc) in colp.iter_mut().zip(colc.iter_mut()) {
                let (u, v) = (*p, *cc);
                *p = cs * u + sn * v;
                *cc = -sn * u + cs * v;
            }
        }
    }

    fn run(&mut self, rows: &[Row], hint: &[usize], feas_tol: f64, max_iter: usize) -> QpStatus {
        let m = rows.len();
        self.is_active = vec![false; m];
        self.flipped = vec![None; m];
        const DEP: f64 = 1e-13;

        // equalities
        for k in 0..m {
            if rows[k].kind != RowKind::Equality {
                break;
            }
            let s = rows[k].dot(&self.x) - rows[k].rhs;
            if s > 0.0 {
                self.flipped[k] = Some(rows[k].negated());
            }
            let row = self.row(rows, k).clone();
            let s = row.dot(&self.x) - row.rhs;
            let (ztn, dn) = self.directions(&row);
            if ztn <= DEP * dn || self.q() >= self.n {
                if s.abs() <= feas_tol.max(1e-9) {
                    continue;
                }
                return QpStatus::Infeasible;
            }
            let t = -s / ztn;
            for i in 0..self.n {
                self.x[i] += t * self.z[i];
            }
            for i in 0..self.q() {
                self.mult[i] -= t * self.rdir[i];
            }
            self.add(k, t);
            self.iterations += 1;
        }

        for &k in hint {
            if self.is_active[k] {
                continue;
            }
            let s = rows[k].dot(&self.x) - rows[k].rhs;
            if s < -feas_tol {
                if let Err(status) = self.enforce(rows, k, s, max_iter) {
                    return status;
                }
            }
        }

        loop {
            if self.iterations >= max_iter {
                return QpStatus::MaxIter;
            }
            let mut worst = -feas_tol;
            let mut p = None;
            for k in 0..m {
                if self.is_active[k] || rows[k].kind == RowKind::Equality {
                    continue;
                }
                let s = rows[k].dot(&self.x) - rows[k].rhs;
                if s < worst {
                    worst = s;
                    p = Some(k);
                }
            }
            let Some(p) = p else {
                return QpStatus::Optimal;
            };
            if let Err(status) = self.enforce(rows, p, worst, max_iter) {
                return status;
            }
        }
    }

    /// Makes the violated row `p` (slack `s < 0`) active, dropping blocking
    /// constraints on the way.
    fn enforce(&mut self, rows: &[Row], p: usize, mut s: f64, max_iter: usize) -> std::result::Result<(), QpStatus> {
        const DEP: f64 = 1e-13;
        let row = &rows[p];
        let mut u_plus = 0.0;
        loop {
            if self.iterations >= max_iter {
                return Err(QpStatus::MaxIter);
            }
            let (ztn, dn) = self.directions(row);
            let q = self.q();
            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for i in 0..q {
                let k = self.active[i];
                if rows[k].kind == RowKind::Inequality && self.rdir[i] > 0.0 {
                    let ratio = self.mult[i] / self.rdir[i];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_pos = Some(i);
                    }
                }
            }
            let t2 = if ztn > DEP * dn && q < self.n {
                -s / ztn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpStatus::Infeasible);
            }
            self.iterations += 1;
            if t2.is_finite() {
                for i in 0..self.n {
                    self.x[i] += t * self.z[i];
                }
            }
            for i in 0..q {
                self.mult[i] -= t * self.rdir[i];
            }
            u_plus += t;
            if t2 <= t1 {
                self.add(p, u_plus);
                return Ok(());
            }
            let pos = drop_pos.expect("dual step without blocking constraint");
            self.drop(pos);
            s = row.dot(&self.x) - row.rhs;
        }
    }

    fn kkt_residual(&self, problem: &QpProblem, rows: &[Row]) -> f64 {
        let x = DVector::from_column_slice(&self.x);
        let mut grad = &problem.hessian * &x + &problem.gradient;
        for (pos, &k) in self.active.iter().enumerate() {
            let row = self.row(rows, k);
            for (&i, &v) in row.idx.iter().zip(&row.val) {
                grad[i] -= self.mult[pos] * v;
            }
        }
        grad.amax().max(problem.max_violation(&x))
    }
}
