//! Closed-loop walking simulation: reference generation, CP-MPC or the QP
//! baseline at the control rate, the stepping controller, and the plant at
//! its own rate.

use serde::{Deserialize, Serialize};

use crate::baselines::{
    constant_velocity_cp_offset, instantaneous_cp_zmp, qp_baseline_solve, AblationConfig, BaselineInputs,
    BaselineLimits, BaselineWeights, CmpMode, CpOffsetMode, Weighting,
};
use crate::error::{Error, Result};
use crate::gait::{
    horizon_refs, FootstepPlan, GaitParams, HorizonRefs, Phase, ReferenceTrajectory, Side, Stride, SupportBands,
};
use crate::model::{Axis, CentroidalMoment, PlanarPoint, RobotParams};
use crate::mpc::{
    build_mpc_qp, delta_zmp_from_previous, solution_violation, variable_tau_weights, AxisMpc, AxisState, MpcBounds,
    MpcStructure, MpcWeightConfig, SelectionMatrix, TauWeightProfile,
};
use crate::plant::{
    advance_phase, apply_cp_shift, plant_step, AppliedInput, Commitment, Disturbance, FallCriteria, FallDetector,
    PlantLimits, PlantState,
};
use crate::predictor::{build_horizon_model, HorizonModel};
use crate::qp::QpStatus;
use crate::stepping::{
    cmp_parameter, nominal_cp_offset, nominal_footstep, solve_stepping, SteppingBounds, SteppingNominals,
    SteppingWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    CpMpc,
    QpBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub ablation: AblationConfig,
    pub weights: MpcWeightConfig,
    pub tau_max_nm: f64,
    pub df_x: (f64, f64),
    pub df_y_left: (f64, f64),
    pub df_y_right: (f64, f64),
    /// Footstep and timing are frozen this long before the planned landing.
    pub freeze_s: f64,
    pub stepping_weights: SteppingWeights,
    pub stepping_bounds: SteppingBounds,
    pub baseline_weights: BaselineWeights,
    pub baseline_limits: BaselineLimits,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: ControllerKind::CpMpc,
            ablation: AblationConfig::default(),
            weights: MpcWeightConfig::default(),
            tau_max_nm: 15.0,
            df_x: (-0.2, 0.2),
            df_y_left: (-0.03, 0.1),
            df_y_right: (-0.1, 0.03),
            freeze_s: 0.1,
            stepping_weights: SteppingWeights::default(),
            stepping_bounds: SteppingBounds::default(),
            baseline_weights: BaselineWeights::default(),
            baseline_limits: BaselineLimits::default(),
        }
    }
}

/// Walking command: explicit strides first, then the constant velocity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WalkCommand {
    pub velocity: PlanarPoint,
    pub strides: Vec<Stride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub robot: RobotParams,
    pub gait: GaitParams,
    pub walk: WalkCommand,
    pub bands: SupportBands,
    pub controller: ControllerConfig,
    pub plant: PlantLimits,
    pub plant_dt_s: f64,
    pub disturbances: Vec<Disturbance>,
    pub duration_s: f64,
    pub fall: FallCriteria,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            robot: RobotParams::default(),
            gait: GaitParams::default(),
            walk: WalkCommand::default(),
            bands: SupportBands::default(),
            controller: ControllerConfig::default(),
            plant: PlantLimits::default(),
            plant_dt_s: 0.001,
            disturbances: Vec::new(),
            duration_s: 10.0,
            fall: FallCriteria::default(),
        }
    }
}

impl ClosedLoopConfig {
    /// Footstep plan long enough to cover the run plus one horizon.
    pub fn plan(&self) -> Result<FootstepPlan> {
        let t = self.gait.step_time_s();
        let needed = ((self.duration_s + self.robot.horizon_s() + 2.0 * t) / t).ceil() as usize + 2;
        let n = needed.max(self.walk.strides.len() + 2);
        let default = Stride::new(self.walk.velocity.x * t, -self.walk.velocity.y * t);
        let strides: Vec<Stride> = (0..n)
            .map(|k| self.walk.strides.get(k).copied().unwrap_or(default))
            .collect();
        FootstepPlan::from_strides(Side::Left, PlanarPoint::ZERO, &strides, &self.gait)
    }

    pub fn validate(&self) -> Result<()> {
        let dt = self.plant_dt_s;
        if !(dt > 0.0 && dt <= 0.005) {
            return Err(Error::domain("plant step must lie in (0, 0.005] s"));
        }
        let ratio = self.robot.control_period_s / dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::domain(
                "control period must be a whole multiple of the plant step",
            ));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::domain("duration must be positive"));
        }
        self.controller.ablation.validate()?;
        for d in &self.disturbances {
            d.validate()?;
        }
        self.plan()?;
        Ok(())
    }
}

/// One row of the per-tick log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time_s: f64,
    pub phase: Phase,
    pub xi: PlanarPoint,
    pub xi_ref: PlanarPoint,
    pub z_des: PlanarPoint,
    pub z_ref: PlanarPoint,
    pub tau_des: CentroidalMoment,
    pub h_y: f64,
    pub h_x: f64,
    pub df1: PlanarPoint,
    pub footstep: PlanarPoint,
    /// Planned position of the same footstep before any adjustment this step.
    pub footstep_ref: PlanarPoint,
    pub step_time_s: f64,
    pub support_side: Side,
    pub fell: bool,
    /// Largest violation of the MPC's own bounds by its solution.
    pub mpc_violation: f64,
    pub degraded: bool,
    pub stepping_status: Option<QpStatus>,
}

/// CP offset at a landing, measured and planned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingSample {
    pub time_s: f64,
    pub step_index: usize,
    pub offset: PlanarPoint,
    pub offset_ref: PlanarPoint,
}

pub struct ClosedLoop {
    cfg: ClosedLoopConfig,
    plan: FootstepPlan,
    refs: ReferenceTrajectory,
    model: HorizonModel,
    plant: PlantState,
    commit: Commitment,
    mpc: [AxisMpc; 2],
    applied: AppliedInput,
    tick: usize,
    substeps: usize,
    step_start_tick: usize,
    detector: FallDetector,
    fell: bool,
    landings: Vec<LandingSample>,
    baseline_zmp: PlanarPoint,
}

impl ClosedLoop {
    pub fn new(cfg: ClosedLoopConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = cfg.plan()?;
        let omega = cfg.robot.omega_per_s;
        let refs = ReferenceTrajectory::new(&plan, omega);
        let model = build_horizon_model(&cfg.robot);
        let xi0 = refs.xi(0.0);
        let first = plan.foot(0);
        let plant = PlantState::at_rest(xi0, plan.initial, first);
        let commit = Self::nominal_commitment(&plan, 0);
        let substeps = (cfg.robot.control_period_s / cfg.plant_dt_s).round() as usize;
        let z0 = refs.zmp(0.0);
        Ok(Self {
            detector: FallDetector::new(cfg.fall),
            cfg,
            plan,
            refs,
            model,
            plant,
            commit,
            mpc: [AxisMpc::new(), AxisMpc::new()],
            applied: AppliedInput {
                zmp: z0,
                moment: CentroidalMoment::default(),
            },
            tick: 0,
            substeps,
            step_start_tick: 0,
            fell: false,
            landings: Vec::new(),
            baseline_zmp: z0,
        })
    }

    fn nominal_commitment(plan: &FootstepPlan, step: usize) -> Commitment {
        let s = &plan.steps[step];
        let next = plan.foot(step as isize + 1);
        Commitment {
            footstep: next.position,
            side: next.side,
            step_time_s: s.t_dsp + s.t_ssp,
            dsp_s: s.t_dsp,
        }
    }

    pub fn config(&self) -> &ClosedLoopConfig {
        &self.cfg
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * self.cfg.robot.control_period_s
    }

    pub fn total_ticks(&self) -> usize {
        (self.cfg.duration_s / self.cfg.robot.control_period_s).round() as usize
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.total_ticks()
    }

    pub fn fell(&self) -> bool {
        self.fell
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn plan(&self) -> &FootstepPlan {
        &self.plan
    }

    pub fn landings(&self) -> &[LandingSample] {
        &self.landings
    }

    pub fn reference_cp(&self, t: f64) -> PlanarPoint {
        self.refs.xi(t)
    }

    /// Landing bookkeeping: CP offset sample, touchdown disturbances and a
    /// rigid replan of the remaining steps relative to the new support foot.
    fn on_landing(&mut self, t: f64) {
        let omega = self.cfg.robot.omega_per_s;
        let j = self.plant.step_index;
        let planned = self.plan.steps[j];
        self.landings.push(LandingSample {
            time_s: t,
            step_index: j,
            offset: self.plant.cp(omega) - self.plant.support.position,
            offset_ref: self.refs.xi(planned.t_start) - planned.position,
        });
        for d in &self.cfg.disturbances {
            if let Disturbance::TouchdownCpShift { offset_m, step_index } = *d {
                if step_index == j {
                    apply_cp_shift(&mut self.plant, offset_m, omega);
                }
            }
        }
        let offset = self.plant.support.position - planned.position;
        self.plan.shift_from(j, offset);
        self.plan.retime_from(j, t - planned.t_start);
        self.refs = ReferenceTrajectory::new(&self.plan, omega);
        self.commit = Self::nominal_commitment(&self.plan, j);
        self.step_start_tick = self.tick;
    }

    /// Runs one control period and returns its log row.
    pub fn step(&mut self) -> Result<TickRecord> {
        let ts = self.cfg.robot.control_period_s;
        let t = self.time_s();
        if advance_phase(&mut self.plant, &self.commit, 0.5 * ts) {
            self.on_landing(t);
        }
        let j = self.plant.step_index;
        if j + 1 >= self.plan.steps.len() {
            return Err(Error::Plan("simulation ran past the end of the footstep plan".into()));
        }
        let hrefs = horizon_refs(&self.plan, &self.refs, Some(j), t, &self.cfg.robot, &self.cfg.bands);
        let elapsed = (self.tick - self.step_start_tick) as f64 * ts;
        let frozen =
            self.plant.phase.is_dsp() || self.commit.step_time_s - elapsed < self.cfg.controller.freeze_s - 1e-9;
        let xi = self.plant.cp(self.cfg.robot.omega_per_s);
        let xi_ref = self.refs.xi(t);
        let z_ref = self.refs.zmp(t);

        let out = match self.cfg.controller.kind {
            ControllerKind::CpMpc => self.cp_mpc_tick(&hrefs, xi, elapsed, frozen)?,
            ControllerKind::QpBaseline => self.baseline_tick(&hrefs, xi, xi_ref, z_ref, elapsed, frozen)?,
        };

        let moment = CentroidalMoment::from_pivot(out.pivot);
        let dt = self.cfg.plant_dt_s;
        for k in 0..self.substeps {
            let ts_sub = t + k as f64 * dt;
            let force = self
                .cfg
                .disturbances
                .iter()
                .fold(PlanarPoint::ZERO, |acc, d| acc + d.force_at(ts_sub, dt));
            let (next, applied) = plant_step(
                &self.plant,
                out.zmp,
                moment,
                force,
                &self.cfg.plant,
                &self.cfg.robot,
                dt,
            )?;
            self.plant = next;
            self.applied = applied;
        }
        self.tick += 1;
        let t_next = self.time_s();
        if !self.fell {
            self.fell = self
                .detector
                .update(&self.plant, self.refs.xi(t_next), self.cfg.robot.omega_per_s);
        }

        Ok(TickRecord {
            time_s: t,
            phase: self.plant.phase,
            xi,
            xi_ref,
            z_des: out.zmp,
            z_ref,
            tau_des: moment,
            h_y: self.plant.cam.h_y,
            h_x: self.plant.cam.h_x,
            df1: out.df1,
            footstep: self.commit.footstep,
            footstep_ref: hrefs.f1_ref,
            step_time_s: self.commit.step_time_s,
            support_side: self.plant.support.side,
            fell: self.fell,
            mpc_violation: out.violation,
            degraded: out.degraded,
            stepping_status: out.stepping_status,
        })
    }

    fn cp_mpc_tick(&mut self, hrefs: &HorizonRefs, xi: PlanarPoint, elapsed: f64, frozen: bool) -> Result<TickOutput> {
        let ccfg = &self.cfg.controller;
        let ab = ccfg.ablation;
        let n = hrefs.horizon();
        let m = hrefs.num_footsteps();
        let sel = SelectionMatrix::new(n, hrefs.footstep_schedule.clone());
        let structure = MpcStructure {
            use_moment: ab.use_moment,
            use_footsteps: ab.use_footstep_adjust,
        };
        let mut sols = Vec::with_capacity(2);
        let mut violation: f64 = 0.0;
        let mut degraded = false;
        for (a, axis) in Axis::BOTH.into_iter().enumerate() {
            let dz = delta_zmp_from_previous(self.mpc[a].last().map(|s| s.zmp_seq.as_slice()), &hrefs.zmp_ref[a]);
            let w_tau = match ab.weighting {
                Weighting::Variable => {
                    let profile = if axis == Axis::X {
                        TauWeightProfile::X
                    } else {
                        TauWeightProfile::Y
                    };
                    variable_tau_weights(&dz, profile, ccfg.weights.w_tau_max)
                }
                Weighting::Constant(w) => vec![w; n],
            };
            let weights = ccfg.weights.build(n, m, w_tau, self.cfg.robot.weight_n());
            let (mut df_lower, mut df_upper) = (Vec::with_capacity(m), Vec::with_capacity(m));
            for &side in &hrefs.footstep_sides {
                let (lo, hi) = match axis {
                    Axis::X => ccfg.df_x,
                    Axis::Y if side == Side::Left => ccfg.df_y_left,
                    Axis::Y => ccfg.df_y_right,
                };
                df_lower.push(lo);
                df_upper.push(hi);
            }
            if frozen && m > 0 {
                let pinned = self.commit.footstep.get(axis) - hrefs.f1_ref.get(axis);
                df_lower[0] = pinned;
                df_upper[0] = pinned;
            }
            let bounds = MpcBounds {
                zmp_lower: hrefs.zmp_lb[a].clone(),
                zmp_upper: hrefs.zmp_ub[a].clone(),
                tau_lower: vec![-ccfg.tau_max_nm; n],
                tau_upper: vec![ccfg.tau_max_nm; n],
                df_lower,
                df_upper,
            };
            let state = AxisState {
                xi0: xi.get(axis),
                h0: self.plant.cam.axis_momentum(axis),
                prev_zmp: self.applied.zmp.get(axis),
                prev_tau: self.applied.moment.pivot().get(axis),
            };
            let problem = build_mpc_qp(
                &state,
                &hrefs.xi_ref[a],
                &self.model,
                &weights,
                &bounds,
                &sel,
                structure,
            )?;
            let sol = self.mpc[a].solve_axis(&problem, &hrefs.zmp_ref[a])?;
            if !sol.degraded {
                violation = violation.max(solution_violation(&sol, &bounds, &sel));
            }
            degraded |= sol.degraded;
            sols.push(sol);
        }
        let df1 = PlanarPoint::new(
            sols[0].df.first().copied().unwrap_or(0.0),
            sols[1].df.first().copied().unwrap_or(0.0),
        );

        let mut stepping_status = None;
        if ab.use_footstep_adjust && !frozen && m > 0 {
            let omega = self.cfg.robot.omega_per_s;
            let ts = self.cfg.robot.control_period_s;
            let j = self.plant.step_index;
            let step = self.plan.steps[j];
            let t_nom = step.t_dsp + step.t_ssp;
            let remaining = ((self.commit.step_time_s - elapsed) / ts).round().max(1.0) as usize;
            let p_ssp = match ab.cmp_mode {
                CmpMode::MpcAverage => cmp_parameter(
                    [&sols[0].zmp_seq, &sols[1].zmp_seq],
                    [&sols[0].tau_seq, &sols[1].tau_seq],
                    remaining,
                    &self.cfg.robot,
                )?,
                CmpMode::PointFoot => self.plant.support.position,
            };
            let b_nom = match ab.cp_offset_mode {
                CpOffsetMode::FromPlan => nominal_cp_offset(hrefs.xi_t_ref, hrefs.f1_ref),
                CpOffsetMode::ConstantVelocity => {
                    // stride of the step after the landing, taken as the constant command
                    let f1 = self.plan.foot(j as isize + 1);
                    let f2 = self.plan.foot(j as isize + 2);
                    let d = self.cfg.gait.step_width_m;
                    let lateral = f2.side.sign() * d - (f2.position.y - f1.position.y);
                    constant_velocity_cp_offset(f2.position.x - f1.position.x, d, lateral, t_nom, omega, f1.side)
                }
            };
            let nominals = SteppingNominals {
                f_nom: nominal_footstep(hrefs.f1_ref, df1),
                b_nom,
                gamma_nom: (omega * t_nom).exp(),
                p_ssp,
            };
            let gamma_fixed = (!ab.use_step_time).then(|| (omega * self.commit.step_time_s).exp());
            let s = solve_stepping(
                &nominals,
                xi,
                elapsed,
                t_nom,
                omega,
                &ccfg.stepping_bounds,
                &ccfg.stepping_weights,
                gamma_fixed,
            )?;
            stepping_status = Some(s.status);
            if s.status == QpStatus::Optimal {
                self.commit.footstep = s.f;
                self.commit.step_time_s = s.step_time_s;
            } else {
                log::debug!(
                    "stepping QP {:?} at t={:.2}; keeping commitment",
                    s.status,
                    self.time_s()
                );
            }
        }

        Ok(TickOutput {
            zmp: PlanarPoint::new(sols[0].first_zmp, sols[1].first_zmp),
            pivot: PlanarPoint::new(sols[0].first_tau, sols[1].first_tau),
            df1,
            violation,
            degraded,
            stepping_status,
        })
    }

    fn baseline_tick(
        &mut self,
        hrefs: &HorizonRefs,
        xi: PlanarPoint,
        xi_ref: PlanarPoint,
        z_ref: PlanarPoint,
        elapsed: f64,
        frozen: bool,
    ) -> Result<TickOutput> {
        let omega = self.cfg.robot.omega_per_s;
        let ccfg = &self.cfg.controller;
        let xi_err = xi - xi_ref;
        let (lo, hi) = self.plant.support_region(&self.cfg.bands);
        let z_des = instantaneous_cp_zmp(
            xi_err,
            z_ref,
            elapsed,
            self.commit.step_time_s,
            omega,
            self.baseline_zmp,
        );
        let z_des = PlanarPoint::new(z_des.x.clamp(lo.x, hi.x), z_des.y.clamp(lo.y, hi.y));
        self.baseline_zmp = z_des;
        let dz = z_des - z_ref;

        let j = self.plant.step_index;
        let step = self.plan.steps[j];
        let t_nom = step.t_dsp + step.t_ssp;
        let gamma_nom = (omega * t_nom).exp();
        let gamma_prev = (omega * self.commit.step_time_s).exp();
        let f_nom = hrefs.f1_ref;
        let pinned = frozen.then(|| (self.commit.footstep - f_nom, gamma_prev - gamma_nom));
        let inp = BaselineInputs {
            xi_ref,
            xi_err,
            p_ref: step.position,
            dz,
            f_nom,
            b_nom: nominal_cp_offset(hrefs.xi_t_ref, hrefs.f1_ref),
            gamma_nom,
            gamma_prev,
            t_elapsed: elapsed,
            t_nom,
            axis_momentum: PlanarPoint::new(
                self.plant.cam.axis_momentum(Axis::X),
                self.plant.cam.axis_momentum(Axis::Y),
            ),
            next_side: self.commit.side,
            pinned,
        };
        let sol = qp_baseline_solve(&inp, &ccfg.baseline_weights, &ccfg.baseline_limits, &self.cfg.robot)?;
        let optimal = sol.stepping.status == QpStatus::Optimal;
        if optimal && !frozen {
            self.commit.footstep = sol.stepping.f;
            self.commit.step_time_s = sol.stepping.step_time_s;
        }
        Ok(TickOutput {
            zmp: z_des,
            pivot: if optimal { sol.pivot } else { PlanarPoint::ZERO },
            df1: PlanarPoint::ZERO,
            violation: 0.0,
            degraded: !optimal,
            stepping_status: (!frozen).then_some(sol.stepping.status),
        })
    }
}

struct TickOutput {
    zmp: PlanarPoint,
    pivot: PlanarPoint,
    df1: PlanarPoint,
    violation: f64,
    degraded: bool,
    stepping_status: Option<QpStatus>,
}
