//! Per-axis capture-point MPC.
//!
//! Decision vector: the interleaved inputs `P = [z_0, u_0, …, z_{N-1}, u_{N-1}]`
//! (see [`crate::predictor`]) followed by the footstep adjustments
//! `ΔF = [ΔF_1 … ΔF_m]`. `u` is the pivot moment of the axis (`τ_y` for x,
//! `-τ_x` for y). The cost is
//!
//! ```text
//!   Σ w_ξ,i (Ξ_i - Ξ_ref,i)^2           CP tracking
//! + Σ w_τ,i (u_i + K_d h_i)^2            CAM damping, h_i = h_0 + Ts Σ_{j<=i} u_j
//! + Σ w_F,j ΔF_j^2                       footstep adjustment
//! + Σ w_p (P_k - P_{k-1})^2              input smoothing per channel
//! ```
//!
//! subject to `lb <= z - S ΔF <= ub`, moment bounds and adjustment bounds.
//! All quadratic blocks are assembled in O(N^2) from recursions instead of
//! forming `Φ_p' W Φ_p` explicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{moment_index, zmp_index, HorizonModel};
use crate::qp::{ActiveBound, QpProblem, QpSolver, QpStatus};

/// Smoothstep-complement ramp of the damping weight between two |Δz| anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauWeightProfile {
    pub dz_min_m: f64,
    pub dz_max_m: f64,
}

impl TauWeightProfile {
    pub const X: TauWeightProfile = TauWeightProfile {
        dz_min_m: 0.05,
        dz_max_m: 0.10,
    };
    pub const Y: TauWeightProfile = TauWeightProfile {
        dz_min_m: 0.04,
        dz_max_m: 0.07,
    };

    pub fn weight(&self, dz_abs: f64, w_max: f64) -> f64 {
        if dz_abs <= self.dz_min_m {
            w_max
        } else if dz_abs >= self.dz_max_m {
            0.0
        } else {
            let u = (dz_abs - self.dz_min_m) / (self.dz_max_m - self.dz_min_m);
            w_max * (1.0 - 3.0 * u * u + 2.0 * u * u * u)
        }
    }
}

pub fn variable_tau_weights(delta_zmp_abs: &[f64], profile: TauWeightProfile, w_max: f64) -> Vec<f64> {
    delta_zmp_abs.iter().map(|&d| profile.weight(d.abs(), w_max)).collect()
}

/// |Δz| for the weight schedule: the previous cycle's ZMP plan shifted by one
/// tick (last entry repeated) minus the current reference.
pub fn delta_zmp_from_previous(previous_zmp: Option<&[f64]>, zmp_ref: &[f64]) -> Vec<f64> {
    match previous_zmp {
        Some(prev) if !prev.is_empty() => (0..zmp_ref.len())
            .map(|i| {
                let z = prev[(i + 1).min(prev.len() - 1)];
                (z - zmp_ref[i]).abs()
            })
            .collect(),
        _ => vec![0.0; zmp_ref.len()],
    }
}

/// Three-band horizon schedule `first (i = 1), middle, terminal (i >= N - 10)`,
/// with 1-based band edges.
pub fn banded_schedule(n: usize, first: f64, middle: f64, terminal: f64) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            if n >= 10 && i >= n - 10 {
                terminal
            } else if i == 1 {
                first
            } else {
                middle
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    pub w_xi: Vec<f64>,
    pub w_tau: Vec<f64>,
    pub w_f: Vec<f64>,
    /// Interleaved per tick like the inputs.
    pub w_p: Vec<f64>,
    pub k_d: f64,
}

/// Scalar weight settings from which per-cycle [`MpcWeights`] are built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcWeightConfig {
    pub w_xi: [f64; 3],
    pub w_p: [f64; 3],
    pub w_f: f64,
    pub w_tau_max: f64,
    pub k_d: f64,
    /// Penalize moment changes as CMP displacement (`Δτ / (m g)`) instead of N·m.
    pub moment_smoothing_cmp_units: bool,
}

impl Default for MpcWeightConfig {
    fn default() -> Self {
        Self {
            w_xi: [10.0, 5.0, 100.0],
            w_p: [0.1, 1.0, 0.1],
            w_f: 0.001,
            w_tau_max: 1e-6,
            k_d: 50.0,
            moment_smoothing_cmp_units: true,
        }
    }
}

impl MpcWeightConfig {
    /// `weight_n` is `m g`, used when moment smoothing is in CMP units.
    pub fn build(&self, n: usize, m: usize, w_tau: Vec<f64>, weight_n: f64) -> MpcWeights {
        let wp = banded_schedule(n, self.w_p[0], self.w_p[1], self.w_p[2]);
        let scale = if self.moment_smoothing_cmp_units {
            1.0 / (weight_n * weight_n)
        } else {
            1.0
        };
        let mut w_p = vec![0.0; 2 * n];
        for (i, w) in wp.into_iter().enumerate() {
            w_p[zmp_index(i)] = w;
            w_p[moment_index(i)] = w * scale;
        }
        MpcWeights {
            w_xi: banded_schedule(n, self.w_xi[0], self.w_xi[1], self.w_xi[2]),
            w_tau,
            w_f: vec![self.w_f; m],
            w_p,
            k_d: self.k_d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcBounds {
    pub zmp_lower: Vec<f64>,
    pub zmp_upper: Vec<f64>,
    pub tau_lower: Vec<f64>,
    pub tau_upper: Vec<f64>,
    pub df_lower: Vec<f64>,
    pub df_upper: Vec<f64>,
}

/// Cumulative activation of footstep adjustments over the horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    pub horizon: usize,
    /// First tick each footstep adjustment applies to.
    pub starts: Vec<usize>,
}

impl SelectionMatrix {
    pub fn new(horizon: usize, starts: Vec<usize>) -> Self {
        Self { horizon, starts }
    }

    pub fn footsteps(&self) -> usize {
        self.starts.len()
    }

    pub fn entry(&self, tick: usize, footstep: usize) -> f64 {
        if tick >= self.starts[footstep] {
            1.0
        } else {
            0.0
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.horizon, self.footsteps(), |i, j| self.entry(i, j))
    }
}

/// Axis state entering one MPC cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisState {
    pub xi0: f64,
    /// Angular momentum whose rate is this axis's pivot moment.
    pub h0: f64,
    /// Inputs applied over the previous tick.
    pub prev_zmp: f64,
    pub prev_tau: f64,
}

/// Which decision blocks the problem keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpcStructure {
    pub use_moment: bool,
    pub use_footsteps: bool,
}

impl MpcStructure {
    pub const FULL: MpcStructure = MpcStructure {
        use_moment: true,
        use_footsteps: true,
    };
}

/// Assembled QP with the column map back to `[P; ΔF]`.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qp: QpProblem,
    /// Constant part of the cost dropped from the QP objective.
    pub constant: f64,
    pub horizon: usize,
    pub footsteps: usize,
    zmp_cols: Vec<usize>,
    tau_cols: Option<Vec<usize>>,
    df_cols: Option<Vec<usize>>,
}

impl MpcProblem {
    /// Maps active bounds to the rows they occupy one tick later: per-tick
    /// rows move up by one, footstep rows stay.
    pub fn shift_active(&self, active: &[ActiveBound]) -> Vec<ActiveBound> {
        let n = self.horizon;
        let per_tick = if self.tau_cols.is_some() { 2 * n } else { n };
        active
            .iter()
            .filter(|b| b.row >= per_tick || b.row % n != 0)
            .map(|b| ActiveBound {
                row: if b.row < per_tick { b.row - 1 } else { b.row },
                upper: b.upper,
            })
            .collect()
    }

    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        self.qp.objective(x) + self.constant
    }

    pub fn num_vars(&self) -> usize {
        self.qp.num_vars()
    }

    fn unpack(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let zmp = self.zmp_cols.iter().map(|&c| x[c]).collect();
        let tau = match &self.tau_cols {
            Some(cols) => cols.iter().map(|&c| x[c]).collect(),
            None => vec![0.0; self.horizon],
        };
        let df = match &self.df_cols {
            Some(cols) => cols.iter().map(|&c| x[c]).collect(),
            None => vec![0.0; self.footsteps],
        };
        (zmp, tau, df)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

pub fn build_mpc_qp(
    state: &AxisState,
    xi_ref: &[f64],
    model: &HorizonModel,
    weights: &MpcWeights,
    bounds: &MpcBounds,
    sel: &SelectionMatrix,
    structure: MpcStructure,
) -> Result<MpcProblem> {
    let n = model.horizon();
    let m = sel.footsteps();
    check_len("reference CP", n, xi_ref.len())?;
    check_len("tracking weights", n, weights.w_xi.len())?;
    check_len("damping weights", n, weights.w_tau.len())?;
    check_len("smoothing weights", 2 * n, weights.w_p.len())?;
    check_len("footstep weights", m, weights.w_f.len())?;
    check_len("zmp lower", n, bounds.zmp_lower.len())?;
    check_len("zmp upper", n, bounds.zmp_upper.len())?;
    check_len("moment lower", n, bounds.tau_lower.len())?;
    check_len("moment upper", n, bounds.tau_upper.len())?;
    check_len("adjustment lower", m, bounds.df_lower.len())?;
    check_len("adjustment upper", m, bounds.df_upper.len())?;
    check_len("selection horizon", n, sel.horizon)?;

    let use_df = structure.use_footsteps && m > 0;
    // column layout of the reduced problem
    let mut next = 0;
    let mut zmp_cols = Vec::with_capacity(n);
    let mut tau_cols = Vec::with_capacity(n);
    for _ in 0..n {
        zmp_cols.push(next);
        next += 1;
        if structure.use_moment {
            tau_cols.push(next);
            next += 1;
        }
    }
    let df_cols: Vec<usize> = if use_df { (next..next + m).collect() } else { Vec::new() };
    let nv = next + df_cols.len();

    let a = model.a_scalar;
    let b = model.b_row;
    let mut h = DMatrix::<f64>::zeros(nv, nv);
    let mut g = DVector::<f64>::zeros(nv);
    let mut constant = 0.0;

    // input channels present in the problem: (columns, B entry)
    let mut channels: Vec<(&[usize], f64)> = vec![(&zmp_cols, b[0])];
    if structure.use_moment {
        channels.push((&tau_cols, b[1]));
    }

    // CP tracking. q[j] = Σ_{i>=j} w_i A^{2(i-j)}, s[j] = Σ_{i>=j} A^{i-j} r_i.
    let mut q = vec![0.0; n + 1];
    let mut s = vec![0.0; n + 1];
    let mut a_pow = vec![1.0; n + 1];
    for k in 1..=n {
        a_pow[k] = a_pow[k - 1] * a;
    }
    for i in (0..n).rev() {
        let free = model.phi_xi[i] * state.xi0 - xi_ref[i];
        let r = weights.w_xi[i] * free;
        constant += weights.w_xi[i] * free * free;
        q[i] = weights.w_xi[i] + a * a * q[i + 1];
        s[i] = r + a * s[i + 1];
    }
    for &(cols1, b1) in &channels {
        for &(cols2, b2) in &channels {
            for j1 in 0..n {
                for j2 in j1..n {
                    let v = 2.0 * b1 * b2 * a_pow[j2 - j1] * q[j2];
                    h[(cols1[j1], cols2[j2])] += v;
                    if j1 != j2 {
                        h[(cols1[j2], cols2[j1])] += v;
                    }
                }
            }
        }
        for j in 0..n {
            g[cols1[j]] += 2.0 * b1 * s[j];
        }
    }

    // CAM damping on the moment channel
    if structure.use_moment {
        let c = weights.k_d * model.period_s;
        let bias = weights.k_d * state.h0;
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + weights.w_tau[i];
        }
        for a_idx in 0..n {
            let w = weights.w_tau[a_idx];
            let tail = suffix[a_idx + 1];
            h[(tau_cols[a_idx], tau_cols[a_idx])] += 2.0 * ((1.0 + c) * (1.0 + c) * w + c * c * tail);
            for b_idx in a_idx + 1..n {
                let v = 2.0 * (c * (1.0 + c) * weights.w_tau[b_idx] + c * c * suffix[b_idx + 1]);
                h[(tau_cols[a_idx], tau_cols[b_idx])] += v;
                h[(tau_cols[b_idx], tau_cols[a_idx])] += v;
            }
            g[tau_cols[a_idx]] += 2.0 * bias * ((1.0 + c) * w + c * tail);
            constant += w * bias * bias;
        }
    } else {
        for i in 0..n {
            constant += weights.w_tau[i] * (weights.k_d * state.h0).powi(2);
        }
    }

    // footstep adjustment
    for (j, &col) in df_cols.iter().enumerate() {
        h[(col, col)] += 2.0 * weights.w_f[j];
    }

    // input smoothing
    let mut smooth = |cols: &[usize], weight_of: &dyn Fn(usize) -> f64, prev: f64| {
        for i in 0..n {
            let w = weight_of(i);
            h[(cols[i], cols[i])] += 2.0 * w;
            if i == 0 {
                g[cols[0]] -= 2.0 * w * prev;
                constant += w * prev * prev;
            } else {
                h[(cols[i - 1], cols[i - 1])] += 2.0 * w;
                h[(cols[i], cols[i - 1])] -= 2.0 * w;
                h[(cols[i - 1], cols[i])] -= 2.0 * w;
            }
        }
    };
    smooth(&zmp_cols, &|i| weights.w_p[zmp_index(i)], state.prev_zmp);
    if structure.use_moment {
        smooth(&tau_cols, &|i| weights.w_p[moment_index(i)], state.prev_tau);
    } else {
        // moment fixed at zero: the smoothing residual against the previous input is constant
        constant += weights.w_p[moment_index(0)] * state.prev_tau * state.prev_tau;
    }

    // constraints
    let rows = n + if structure.use_moment { n } else { 0 } + df_cols.len();
    let mut c_mat = DMatrix::<f64>::zeros(rows, nv);
    let mut lo = DVector::<f64>::zeros(rows);
    let mut hi = DVector::<f64>::zeros(rows);
    for i in 0..n {
        c_mat[(i, zmp_cols[i])] = 1.0;
        for (j, &col) in df_cols.iter().enumerate() {
            c_mat[(i, col)] = -sel.entry(i, j);
        }
        lo[i] = bounds.zmp_lower[i];
        hi[i] = bounds.zmp_upper[i];
    }
    let mut r = n;
    if structure.use_moment {
        for i in 0..n {
            c_mat[(r, tau_cols[i])] = 1.0;
            lo[r] = bounds.tau_lower[i];
            hi[r] = bounds.tau_upper[i];
            r += 1;
        }
    }
    for (j, &col) in df_cols.iter().enumerate() {
        c_mat[(r, col)] = 1.0;
        lo[r] = bounds.df_lower[j];
        hi[r] = bounds.df_upper[j];
        r += 1;
    }

    Ok(MpcProblem {
        qp: QpProblem {
            hessian: h,
            gradient: g,
            ineq_matrix: c_mat,
            ineq_lower: lo,
            ineq_upper: hi,
            eq_matrix: DMatrix::zeros(0, nv),
            eq_rhs: DVector::zeros(0),
        },
        constant,
        horizon: n,
        footsteps: m,
        zmp_cols,
        tau_cols: structure.use_moment.then_some(tau_cols),
        df_cols: use_df.then_some(df_cols),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MpcStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub zmp_seq: Vec<f64>,
    pub tau_seq: Vec<f64>,
    pub df: Vec<f64>,
    pub first_zmp: f64,
    pub first_tau: f64,
    pub status: MpcStatus,
    /// True when the returned sequences are the shifted previous solution.
    pub degraded: bool,
    pub cost: f64,
    pub iterations: usize,
}

impl MpcSolution {
    /// Previous plan advanced by one tick with the last entry repeated.
    pub fn shifted(&self, status: MpcStatus) -> MpcSolution {
        let shift = |v: &[f64]| -> Vec<f64> {
            let mut out: Vec<f64> = v.iter().skip(1).copied().collect();
            if let Some(&last) = v.last() {
                out.push(last);
            }
            out
        };
        let zmp_seq = shift(&self.zmp_seq);
        let tau_seq = shift(&self.tau_seq);
        MpcSolution {
            first_zmp: zmp_seq[0],
            first_tau: tau_seq[0],
            zmp_seq,
            tau_seq,
            df: self.df.clone(),
            status,
            degraded: true,
            cost: f64::NAN,
            iterations: 0,
        }
    }
}

/// Largest violation of the MPC bounds by a solution's sequences.
pub fn solution_violation(sol: &MpcSolution, bounds: &MpcBounds, sel: &SelectionMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    let mut over = |v: f64, lo: f64, hi: f64| worst = worst.max(lo - v).max(v - hi);
    for i in 0..sol.zmp_seq.len() {
        let shift: f64 = (0..sol.df.len()).map(|j| sel.entry(i, j) * sol.df[j]).sum();
        over(sol.zmp_seq[i] - shift, bounds.zmp_lower[i], bounds.zmp_upper[i]);
        over(sol.tau_seq[i], bounds.tau_lower[i], bounds.tau_upper[i]);
    }
    for j in 0..sol.df.len() {
        over(sol.df[j], bounds.df_lower[j], bounds.df_upper[j]);
    }
    worst
}

/// Stateful per-axis solver: keeps the factorization cache and the last plan.
#[derive(Debug, Clone, Default)]
pub struct AxisMpc {
    solver: QpSolver,
    last: Option<MpcSolution>,
    /// Active bounds of the last solve, moved one tick earlier.
    hint: Vec<ActiveBound>,
}

impl AxisMpc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last(&self) -> Option<&MpcSolution> {
        self.last.as_ref()
    }

    pub fn reset(&mut self) {
        self.last = None;
        self.hint.clear();
    }

    pub fn factorizations(&self) -> usize {
        self.solver.factorizations()
    }

    /// Solves the assembled problem. When the QP fails, the previous plan
    /// shifted by one tick is returned and flagged as degraded.
    pub fn solve_axis(&mut self, problem: &MpcProblem, fallback_zmp: &[f64]) -> Result<MpcSolution> {
        let sol = self.solver.solve_with_hint(&problem.qp, None, &self.hint)?;
        self.hint = problem.shift_active(&sol.active);
        let out = match sol.status {
            QpStatus::Optimal => {
                let (zmp_seq, tau_seq, df) = problem.unpack(&sol.primal);
                MpcSolution {
                    first_zmp: zmp_seq[0],
                    first_tau: tau_seq[0],
                    zmp_seq,
                    tau_seq,
                    df,
                    status: MpcStatus::Optimal,
                    degraded: false,
                    cost: problem.cost(&sol.primal),
                    iterations: sol.iterations,
                }
            }
            status => {
                let status = if status == QpStatus::Infeasible {
                    MpcStatus::Infeasible
                } else {
                    MpcStatus::MaxIter
                };
                log::warn!("cp-mpc solve failed ({status:?}); reusing shifted previous plan");
                match &self.last {
                    Some(prev) if prev.zmp_seq.len() == problem.horizon => {
                        let mut s = prev.shifted(status);
                        s.df.resize(problem.footsteps, 0.0);
                        s
                    }
                    _ => MpcSolution {
                        zmp_seq: fallback_zmp.to_vec(),
                        tau_seq: vec![0.0; problem.horizon],
                        df: vec![0.0; problem.footsteps],
                        first_zmp: fallback_zmp[0],
                        first_tau: 0.0,
                        status,
                        degraded: true,
                        cost: f64::NAN,
                        iterations: sol.iterations,
                    },
                }
            }
        };
        self.last = Some(out.clone());
        Ok(out)
    }
}
