//! Footstep plans, reference ZMP and analytic capture-point references.
//!
//! Timeline convention: step `k` starts at `t_start` with a double-support
//! phase that shifts the ZMP from the previous foot onto foot `k`, followed by
//! single support on foot `k`. Foot `k + 1` lands at the start of step `k + 1`.
//! The step time `T` of step `k` is therefore `t_dsp + t_ssp`, and the elapsed
//! step time `t` is measured from the start of its double support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Axis, PlanarPoint, RobotParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// +1 for the left foot (at +y), -1 for the right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Dsp,
    SspLeft,
    SspRight,
}

impl Phase {
    pub fn ssp(side: Side) -> Phase {
        match side {
            Side::Left => Phase::SspLeft,
            Side::Right => Phase::SspRight,
        }
    }

    pub fn is_dsp(self) -> bool {
        self == Phase::Dsp
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Dsp => "DSP",
            Phase::SspLeft => "SSP-L",
            Phase::SspRight => "SSP-R",
        }
    }
}

/// Nominal gait timing and geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Lateral distance between the feet `D`.
    pub step_width_m: f64,
    pub t_ssp_s: f64,
    pub t_dsp_s: f64,
    pub collision_margin_m: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            step_width_m: 0.205,
            t_ssp_s: 0.6,
            t_dsp_s: 0.3,
            collision_margin_m: 0.06,
        }
    }
}

impl GaitParams {
    pub fn step_time_s(&self) -> f64 {
        self.t_ssp_s + self.t_dsp_s
    }
}

/// Per-step displacement of the walking centre line: `advance` along +x
/// (step length `L`) and `lateral` deviation `W`, positive toward -y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Stride {
    pub advance_m: f64,
    pub lateral_m: f64,
}

impl Stride {
    pub fn new(advance_m: f64, lateral_m: f64) -> Self {
        Self { advance_m, lateral_m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footstep {
    pub position: PlanarPoint,
    pub side: Side,
    pub t_start: f64,
    pub t_ssp: f64,
    pub t_dsp: f64,
}

impl Footstep {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.t_dsp + self.t_ssp
    }

    pub fn ssp_start(&self) -> f64 {
        self.t_start + self.t_dsp
    }
}

/// Stance the robot stands on before the first planned step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stance {
    pub position: PlanarPoint,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootstepPlan {
    pub initial: Stance,
    pub steps: Vec<Footstep>,
}

impl FootstepPlan {
    /// Plan from explicit strides. The first step lands on `first_side`.
    pub fn from_strides(first_side: Side, start: PlanarPoint, strides: &[Stride], gait: &GaitParams) -> Result<Self> {
        if strides.len() < 2 {
            return Err(Error::Plan(format!("need at least 2 steps, got {}", strides.len())));
        }
        let half = 0.5 * gait.step_width_m;
        let initial_side = first_side.other();
        let initial = Stance {
            position: start + PlanarPoint::new(0.0, initial_side.sign() * half),
            side: initial_side,
        };
        let mut center = start;
        let mut side = first_side;
        let mut t = 0.0;
        let mut steps = Vec::with_capacity(strides.len());
        for stride in strides {
            center += PlanarPoint::new(stride.advance_m, -stride.lateral_m);
            steps.push(Footstep {
                position: center + PlanarPoint::new(0.0, side.sign() * half),
                side,
                t_start: t,
                t_ssp: gait.t_ssp_s,
                t_dsp: gait.t_dsp_s,
            });
            t += gait.step_time_s();
            side = side.other();
        }
        let plan = Self { initial, steps };
        plan.validate(gait)?;
        Ok(plan)
    }

    pub fn validate(&self, gait: &GaitParams) -> Result<()> {
        let mut prev = self.initial;
        let mut prev_end = f64::NEG_INFINITY;
        for (k, step) in self.steps.iter().enumerate() {
            if step.side == prev.side {
                return Err(Error::Plan(format!("step {k} does not alternate sides")));
            }
            if !(step.t_start > prev_end || k == 0) || step.t_ssp <= 0.0 || step.t_dsp < 0.0 {
                return Err(Error::Plan(format!("step {k} timing is not increasing")));
            }
            // left foot must stay left of the right foot by the margin
            let spacing = (step.position.y - prev.position.y) * step.side.sign();
            if spacing < gait.collision_margin_m {
                return Err(Error::Plan(format!(
                    "step {k} lateral spacing {spacing:.4} m is below the collision margin {:.4} m",
                    gait.collision_margin_m
                )));
            }
            prev = Stance {
                position: step.position,
                side: step.side,
            };
            prev_end = step.t_start;
        }
        Ok(())
    }

    pub fn foot(&self, index: isize) -> Stance {
        if index < 0 {
            self.initial
        } else {
            let s = &self.steps[(index as usize).min(self.steps.len() - 1)];
            Stance {
                position: s.position,
                side: s.side,
            }
        }
    }

    /// Time the robot starts the terminal stand after the last step.
    pub fn t_final(&self) -> f64 {
        self.steps.last().map(|s| s.t_end()).unwrap_or(0.0)
    }

    pub fn terminal_point(&self) -> PlanarPoint {
        let n = self.steps.len();
        let last = self.steps[n - 1].position;
        let before = if n >= 2 {
            self.steps[n - 2].position
        } else {
            self.initial.position
        };
        (last + before) * 0.5
    }

    /// Index of the step whose interval contains `t`, or `None` before the
    /// first step or after the last.
    pub fn step_at(&self, t: f64) -> Option<usize> {
        let k = self.steps.partition_point(|s| s.t_start <= t);
        if k == 0 {
            return None;
        }
        let idx = k - 1;
        if t < self.steps[idx].t_end() || idx + 1 < self.steps.len() {
            Some(idx)
        } else {
            None
        }
    }

    pub fn phase_at(&self, t: f64) -> Phase {
        match self.step_at(t) {
            Some(k) => {
                let s = &self.steps[k];
                if t < s.ssp_start() {
                    Phase::Dsp
                } else {
                    Phase::ssp(s.side)
                }
            }
            None => Phase::Dsp,
        }
    }

    /// Rigidly translates all steps from `from` onward.
    pub fn shift_from(&mut self, from: usize, offset: PlanarPoint) {
        for s in self.steps.iter_mut().skip(from) {
            s.position += offset;
        }
    }

    /// Shifts the start time of all steps from `from` onward.
    pub fn retime_from(&mut self, from: usize, dt: f64) {
        for s in self.steps.iter_mut().skip(from) {
            s.t_start += dt;
        }
    }
}

/// Walking plan from a constant velocity command; `L = v_x T`, `W = -v_y T`.
pub fn plan_footsteps(vel_cmd: PlanarPoint, n_steps: usize, gait: &GaitParams) -> Result<FootstepPlan> {
    let t = gait.step_time_s();
    let stride = Stride::new(vel_cmd.x * t, -vel_cmd.y * t);
    FootstepPlan::from_strides(Side::Left, PlanarPoint::ZERO, &vec![stride; n_steps], gait)
}

/// ZMP band around a foot centre: x in `[c + x_lower, c + x_upper]`, y in `c ± y_half`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBands {
    pub x_lower_m: f64,
    pub x_upper_m: f64,
    pub y_half_m: f64,
}

impl Default for SupportBands {
    fn default() -> Self {
        Self {
            x_lower_m: -0.09,
            x_upper_m: 0.12,
            y_half_m: 0.07,
        }
    }
}

impl SupportBands {
    pub fn around(&self, center: PlanarPoint) -> (PlanarPoint, PlanarPoint) {
        (
            center + PlanarPoint::new(self.x_lower_m, -self.y_half_m),
            center + PlanarPoint::new(self.x_upper_m, self.y_half_m),
        )
    }

    /// Interval hull of the bands of two feet.
    pub fn hull(&self, a: PlanarPoint, b: PlanarPoint) -> (PlanarPoint, PlanarPoint) {
        let (la, ua) = self.around(a);
        let (lb, ub) = self.around(b);
        (la.zip_with(lb, f64::min), ua.zip_with(ub, f64::max))
    }
}

/// A piece of the reference ZMP, linear in time on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    t0: f64,
    t1: f64,
    z0: PlanarPoint,
    z1: PlanarPoint,
    /// Reference CP at `t1`.
    xi_end: PlanarPoint,
}

impl Segment {
    fn slope(&self) -> PlanarPoint {
        if self.t1 > self.t0 {
            (self.z1 - self.z0) * (1.0 / (self.t1 - self.t0))
        } else {
            PlanarPoint::ZERO
        }
    }

    fn zmp(&self, t: f64) -> PlanarPoint {
        self.z0 + self.slope() * (t - self.t0)
    }

    /// `ξ(t) = z(t) + ż/ω + (ξ(t1) - z1 - ż/ω) e^{ω(t - t1)}`.
    fn xi(&self, t: f64, omega: f64) -> PlanarPoint {
        let lead = self.slope() * (1.0 / omega);
        let decay = (omega * (t - self.t1)).exp();
        self.zmp(t) + lead + (self.xi_end - self.z1 - lead) * decay
    }

    fn xi_start(&self, omega: f64) -> PlanarPoint {
        self.xi(self.t0, omega)
    }
}

/// ZMP and CP references of a plan, with the CP obtained by exact backward
/// integration of the CP dynamics from the terminal stand.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    segments: Vec<Segment>,
    terminal: PlanarPoint,
    initial: PlanarPoint,
    omega: f64,
}

impl ReferenceTrajectory {
    pub fn new(plan: &FootstepPlan, omega: f64) -> Self {
        let mut segments = Vec::with_capacity(2 * plan.steps.len() + 1);
        let mut prev = plan.initial.position;
        for s in &plan.steps {
            if s.t_dsp > 0.0 {
                segments.push(Segment {
                    t0: s.t_start,
                    t1: s.ssp_start(),
                    z0: prev,
                    z1: s.position,
                    xi_end: PlanarPoint::ZERO,
                });
            }
            segments.push(Segment {
                t0: s.ssp_start(),
                t1: s.t_end(),
                z0: s.position,
                z1: s.position,
                xi_end: PlanarPoint::ZERO,
            });
            prev = s.position;
        }
        let terminal = plan.terminal_point();
        let last = plan.steps.last().expect("validated plan has steps");
        let t_final = last.t_end();
        let t_dsp = last.t_dsp;
        if t_dsp > 0.0 {
            segments.push(Segment {
                t0: t_final,
                t1: t_final + t_dsp,
                z0: last.position,
                z1: terminal,
                xi_end: terminal,
            });
        }
        let mut xi_next = terminal;
        for seg in segments.iter_mut().rev() {
            seg.xi_end = xi_next;
            xi_next = seg.xi_start(omega);
        }
        Self {
            segments,
            terminal,
            initial: plan.initial.position,
            omega,
        }
    }

    fn segment_at(&self, t: f64) -> Option<&Segment> {
        let k = self.segments.partition_point(|s| s.t0 <= t);
        if k == 0 {
            return None;
        }
        let seg = &self.segments[k - 1];
        (t <= seg.t1).then_some(seg)
    }

    pub fn zmp(&self, t: f64) -> PlanarPoint {
        match self.segment_at(t) {
            Some(seg) => seg.zmp(t),
            None if self.segments.first().is_some_and(|s| t < s.t0) => self.initial,
            None => self.terminal,
        }
    }

    pub fn xi(&self, t: f64) -> PlanarPoint {
        match self.segment_at(t) {
            Some(seg) => seg.xi(t, self.omega),
            None if self.segments.first().is_some_and(|s| t < s.t0) => {
                // standing on the initial stance before the plan starts
                let first = &self.segments[0];
                let xi0 = first.xi_start(self.omega);
                (xi0 - self.initial) * (self.omega * (t - first.t0)).exp() + self.initial
            }
            None => self.terminal,
        }
    }
}

/// Reference quantities over the MPC horizon starting at `t_now`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRefs {
    /// CP reference after each tick, per axis.
    pub xi_ref: [Vec<f64>; 2],
    /// ZMP reference at each tick midpoint.
    pub zmp_ref: [Vec<f64>; 2],
    pub zmp_lb: [Vec<f64>; 2],
    pub zmp_ub: [Vec<f64>; 2],
    pub phase: Vec<Phase>,
    /// First horizon tick supported by each upcoming footstep, in landing order.
    pub footstep_schedule: Vec<usize>,
    /// Sides of the upcoming footsteps in `footstep_schedule`.
    pub footstep_sides: Vec<Side>,
    pub xi_t_ref: PlanarPoint,
    pub f1_ref: PlanarPoint,
}

impl HorizonRefs {
    pub fn horizon(&self) -> usize {
        self.phase.len()
    }

    pub fn num_footsteps(&self) -> usize {
        self.footstep_schedule.len()
    }

    /// Dense cumulative selection matrix: `s[i][j] = 1` once footstep `j` supports tick `i`.
    pub fn selection_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.horizon())
            .map(|i| {
                self.footstep_schedule
                    .iter()
                    .map(|&start| u8::from(i >= start))
                    .collect()
            })
            .collect()
    }

    pub fn axis(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

/// Recovers the activation schedule from a cumulative selection matrix.
pub fn schedule_from_selection(s: &[Vec<u8>]) -> Vec<usize> {
    let m = s.first().map(|r| r.len()).unwrap_or(0);
    (0..m)
        .map(|j| s.iter().position(|row| row[j] == 1).unwrap_or(s.len()))
        .collect()
}

pub const MAX_HORIZON_FOOTSTEPS: usize = 3;

/// Builds the horizon references at `t_now` while standing in step `current`.
pub fn horizon_refs(
    plan: &FootstepPlan,
    refs: &ReferenceTrajectory,
    current: Option<usize>,
    t_now: f64,
    params: &RobotParams,
    bands: &SupportBands,
) -> HorizonRefs {
    let n = params.horizon_ticks;
    let ts = params.control_period_s;
    let mut out = HorizonRefs {
        xi_ref: [Vec::with_capacity(n), Vec::with_capacity(n)],
        zmp_ref: [Vec::with_capacity(n), Vec::with_capacity(n)],
        zmp_lb: [Vec::with_capacity(n), Vec::with_capacity(n)],
        zmp_ub: [Vec::with_capacity(n), Vec::with_capacity(n)],
        phase: Vec::with_capacity(n),
        footstep_schedule: Vec::new(),
        footstep_sides: Vec::new(),
        xi_t_ref: PlanarPoint::ZERO,
        f1_ref: PlanarPoint::ZERO,
    };
    for i in 0..n {
        let mid = t_now + (i as f64 + 0.5) * ts;
        let z = refs.zmp(mid);
        let xi = refs.xi(t_now + (i + 1) as f64 * ts);
        let (phase, (lo, hi)) = support_at(plan, mid, bands);
        for (a, axis) in Axis::BOTH.into_iter().enumerate() {
            out.xi_ref[a].push(xi.get(axis));
            out.zmp_ref[a].push(z.get(axis));
            out.zmp_lb[a].push(lo.get(axis));
            out.zmp_ub[a].push(hi.get(axis));
        }
        out.phase.push(phase);
    }
    let next = current.map_or(0, |j| j + 1);
    let horizon_end = t_now + n as f64 * ts;
    for k in next..plan.steps.len() {
        if out.footstep_schedule.len() >= MAX_HORIZON_FOOTSTEPS {
            break;
        }
        let land = plan.steps[k].t_start;
        if land >= horizon_end {
            break;
        }
        // first tick whose midpoint is at or after the landing
        let first = (((land - t_now) / ts) - 0.5).ceil().max(0.0) as usize;
        if first < n {
            out.footstep_schedule.push(first);
            out.footstep_sides.push(plan.steps[k].side);
        }
    }
    if next < plan.steps.len() {
        out.f1_ref = plan.steps[next].position;
        out.xi_t_ref = refs.xi(plan.steps[next].t_start);
    } else {
        out.f1_ref = plan.terminal_point();
        out.xi_t_ref = plan.terminal_point();
    }
    out
}

/// Phase and ZMP band at time `t` for the given plan.
pub fn support_at(plan: &FootstepPlan, t: f64, bands: &SupportBands) -> (Phase, (PlanarPoint, PlanarPoint)) {
    match plan.step_at(t) {
        Some(k) => {
            let s = &plan.steps[k];
            if t < s.ssp_start() {
                let prev = plan.foot(k as isize - 1).position;
                (Phase::Dsp, bands.hull(prev, s.position))
            } else {
                (Phase::ssp(s.side), bands.around(s.position))
            }
        }
        None => {
            if plan.steps.first().is_some_and(|s| t < s.t_start) {
                (Phase::Dsp, bands.hull(plan.initial.position, plan.steps[0].position))
            } else {
                let n = plan.steps.len();
                let before = plan.foot(n as isize - 2).position;
                (Phase::Dsp, bands.hull(before, plan.steps[n - 1].position))
            }
        }
    }
}
