//! Scenario files: TOML with one section per subsystem. Every key is
//! optional and falls back to the default gait, weights and limits.
//!
//! ```toml
//! duration_s = 10.0
//!
//! [walk]
//! velocity_mps = [0.111111111, 0.0]
//!
//! [controller]
//! mode = "m3"
//!
//! [[disturbances]]
//! kind = "push"
//! direction_deg = 90.0
//! impulse_ns = 40.0
//! t_start_s = 2.2
//! duration_s = 0.2
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    AblationConfig, BaselineLimits, BaselineWeights, CmpMode, CpOffsetMode, StrategyMode, Weighting,
};
use crate::controller::{ClosedLoopConfig, ControllerConfig, ControllerKind, WalkCommand};
use crate::error::{Error, Result};
use crate::gait::{GaitParams, Stride, SupportBands};
use crate::harness::sweep::SweepSettings;
use crate::model::{PlanarPoint, RobotParams};
use crate::mpc::MpcWeightConfig;
use crate::plant::{Disturbance, FallCriteria, PlantLimits};
use crate::stepping::{SteppingBounds, SteppingWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub mass_kg: f64,
    pub com_height_m: f64,
    pub gravity_mps2: f64,
    pub control_period_s: f64,
    pub horizon_ticks: usize,
    pub plant_dt_s: f64,
}

impl Default for RobotSection {
    fn default() -> Self {
        let r = RobotParams::default();
        Self {
            mass_kg: r.mass_kg,
            com_height_m: r.com_height_m,
            gravity_mps2: r.gravity_mps2,
            control_period_s: r.control_period_s,
            horizon_ticks: r.horizon_ticks,
            plant_dt_s: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSection {
    pub step_width_m: f64,
    pub t_ssp_s: f64,
    pub t_dsp_s: f64,
    pub collision_margin_m: f64,
    pub zmp_x_lower_m: f64,
    pub zmp_x_upper_m: f64,
    pub zmp_y_half_m: f64,
}

impl Default for GaitSection {
    fn default() -> Self {
        let g = GaitParams::default();
        let b = SupportBands::default();
        Self {
            step_width_m: g.step_width_m,
            t_ssp_s: g.t_ssp_s,
            t_dsp_s: g.t_dsp_s,
            collision_margin_m: g.collision_margin_m,
            zmp_x_lower_m: b.x_lower_m,
            zmp_x_upper_m: b.x_upper_m,
            zmp_y_half_m: b.y_half_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSection {
    /// Walking velocity (m/s), x forward and y toward the left foot.
    pub velocity_mps: [f64; 2],
    /// Explicit `[advance, lateral]` strides taken before the velocity applies.
    pub strides: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    pub mode: StrategyMode,
    pub weighting: String,
    /// Damping weight used when `weighting = "constant"`.
    pub w_tau_constant: f64,
    pub cp_offset: CpOffsetMode,
    pub cmp: CmpMode,
    pub freeze_s: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: ControllerKind::CpMpc,
            mode: StrategyMode::Full,
            weighting: "variable".into(),
            w_tau_constant: 1e-6,
            cp_offset: CpOffsetMode::FromPlan,
            cmp: CmpMode::MpcAverage,
            freeze_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    /// First / middle / terminal band values.
    pub w_xi: [f64; 3],
    pub w_p: [f64; 3],
    pub w_f: f64,
    pub w_tau_max: f64,
    pub k_d: f64,
    pub moment_smoothing_cmp_units: bool,
    pub tau_max_nm: f64,
    pub df_x_m: [f64; 2],
    pub df_y_left_m: [f64; 2],
    pub df_y_right_m: [f64; 2],
}

impl Default for MpcSection {
    fn default() -> Self {
        let w = MpcWeightConfig::default();
        let c = ControllerConfig::default();
        Self {
            w_xi: w.w_xi,
            w_p: w.w_p,
            w_f: w.w_f,
            w_tau_max: w.w_tau_max,
            k_d: w.k_d,
            moment_smoothing_cmp_units: w.moment_smoothing_cmp_units,
            tau_max_nm: c.tau_max_nm,
            df_x_m: [c.df_x.0, c.df_x.1],
            df_y_left_m: [c.df_y_left.0, c.df_y_left.1],
            df_y_right_m: [c.df_y_right.0, c.df_y_right.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteppingSection {
    pub w_f: [f64; 2],
    pub w_gamma: f64,
    pub w_b: [f64; 2],
    pub f_half_m: f64,
    pub b_half_m: f64,
    pub t_band_s: f64,
    pub min_remaining_s: f64,
}

impl Default for SteppingSection {
    fn default() -> Self {
        let w = SteppingWeights::default();
        let b = SteppingBounds::default();
        Self {
            w_f: w.w_f,
            w_gamma: w.w_gamma,
            w_b: w.w_b,
            f_half_m: b.f_half_m,
            b_half_m: b.b_half_m,
            t_band_s: b.t_band_s,
            min_remaining_s: b.min_remaining_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub w_f: f64,
    pub w_gamma: f64,
    pub w_tau: f64,
    pub w_b: f64,
    pub k_d: f64,
    pub f_err_x_m: [f64; 2],
    pub f_err_y_left_m: [f64; 2],
    pub f_err_y_right_m: [f64; 2],
}

impl Default for BaselineSection {
    fn default() -> Self {
        let w = BaselineWeights::default();
        let l = BaselineLimits::default();
        Self {
            w_f: w.w_f,
            w_gamma: w.w_gamma,
            w_tau: w.w_tau,
            w_b: w.w_b,
            k_d: w.k_d,
            f_err_x_m: [l.f_err_x.0, l.f_err_x.1],
            f_err_y_left_m: [l.f_err_y_left.0, l.f_err_y_left.1],
            f_err_y_right_m: [l.f_err_y_right.0, l.f_err_y_right.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub tau_max_nm: f64,
    pub cam_max_nms: f64,
    pub fall_cp_foot_distance_m: f64,
    pub fall_cp_error_m: f64,
    pub fall_sustain_s: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantLimits::default();
        let f = FallCriteria::default();
        Self {
            tau_max_nm: p.tau_max_nm,
            cam_max_nms: p.cam_max_nms,
            fall_cp_foot_distance_m: f.cp_foot_distance_m,
            fall_cp_error_m: f.cp_error_m,
            fall_sustain_s: f.sustain_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    /// Push given by direction (0° = +x, 90° = -y) and impulse.
    Push {
        direction_deg: f64,
        impulse_ns: f64,
        t_start_s: f64,
        duration_s: f64,
    },
    /// Push given by its constant force vector.
    PushForce {
        force_n: [f64; 2],
        t_start_s: f64,
        duration_s: f64,
    },
    TouchdownCpShift {
        offset_m: [f64; 2],
        step_index: usize,
    },
}

impl DisturbanceSpec {
    pub fn to_disturbance(&self) -> Disturbance {
        match *self {
            DisturbanceSpec::Push {
                direction_deg,
                impulse_ns,
                t_start_s,
                duration_s,
            } => Disturbance::push_from_direction(direction_deg, impulse_ns, t_start_s, duration_s),
            DisturbanceSpec::PushForce {
                force_n,
                t_start_s,
                duration_s,
            } => Disturbance::Push {
                force_n: PlanarPoint::new(force_n[0], force_n[1]),
                t_start_s,
                duration_s,
            },
            DisturbanceSpec::TouchdownCpShift { offset_m, step_index } => Disturbance::TouchdownCpShift {
                offset_m: PlanarPoint::new(offset_m[0], offset_m[1]),
                step_index,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub csv: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: "trajectory.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Free label used to pair runs in comparison reports.
    pub scenario: String,
    pub duration_s: f64,
    /// Recorded with the outputs; the simulation itself has no random draws.
    pub seed: u64,
    /// When set, a fall exits the CLI with the dedicated status code.
    pub require_recovery: bool,
    pub robot: RobotSection,
    pub gait: GaitSection,
    pub walk: WalkSection,
    pub controller: ControllerSection,
    pub mpc: MpcSection,
    pub stepping: SteppingSection,
    pub baseline: BaselineSection,
    pub plant: PlantSection,
    pub disturbances: Vec<DisturbanceSpec>,
    pub sweep: SweepSettings,
    pub output: OutputSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            duration_s: 10.0,
            seed: 0,
            require_recovery: false,
            robot: RobotSection::default(),
            gait: GaitSection::default(),
            walk: WalkSection::default(),
            controller: ControllerSection::default(),
            mpc: MpcSection::default(),
            stepping: SteppingSection::default(),
            baseline: BaselineSection::default(),
            plant: PlantSection::default(),
            disturbances: Vec::new(),
            sweep: SweepSettings::default(),
            output: OutputSection::default(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().message().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive and finite (got {v})")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be non-negative and finite (got {v})"),
        ))
    }
}

fn interval(path: &str, v: [f64; 2]) -> Result<()> {
    if v[0].is_finite() && v[1].is_finite() && v[0] <= v[1] {
        Ok(())
    } else {
        Err(Error::config(path, format!("needs lower <= upper (got {v:?})")))
    }
}

impl ScenarioConfig {
    pub fn weighting(&self) -> Result<Weighting> {
        match self.controller.weighting.as_str() {
            "variable" => Ok(Weighting::Variable),
            "constant" => Ok(Weighting::Constant(self.controller.w_tau_constant)),
            other => Err(Error::config(
                "controller.weighting",
                format!("expected \"variable\" or \"constant\", got \"{other}\""),
            )),
        }
    }

    /// Checks every field and reports the first offending path.
    pub fn validate(&self) -> Result<()> {
        positive("duration_s", self.duration_s)?;
        let r = &self.robot;
        positive("robot.mass_kg", r.mass_kg)?;
        positive("robot.com_height_m", r.com_height_m)?;
        positive("robot.gravity_mps2", r.gravity_mps2)?;
        positive("robot.control_period_s", r.control_period_s)?;
        if r.horizon_ticks == 0 {
            return Err(Error::config("robot.horizon_ticks", "must be at least 1"));
        }
        if !(r.plant_dt_s > 0.0 && r.plant_dt_s <= 0.005) {
            return Err(Error::config("robot.plant_dt_s", "must lie in (0, 0.005] s"));
        }
        let ratio = r.control_period_s / r.plant_dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::config("robot.plant_dt_s", "must divide robot.control_period_s"));
        }
        let g = &self.gait;
        positive("gait.step_width_m", g.step_width_m)?;
        positive("gait.t_ssp_s", g.t_ssp_s)?;
        non_negative("gait.t_dsp_s", g.t_dsp_s)?;
        non_negative("gait.collision_margin_m", g.collision_margin_m)?;
        interval("gait.zmp_x_lower_m", [g.zmp_x_lower_m, g.zmp_x_upper_m])?;
        positive("gait.zmp_y_half_m", g.zmp_y_half_m)?;
        if !self.walk.velocity_mps.iter().all(|v| v.is_finite()) {
            return Err(Error::config("walk.velocity_mps", "must be finite"));
        }
        for (k, s) in self.walk.strides.iter().enumerate() {
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::config(format!("walk.strides[{k}]"), "must be finite"));
            }
        }
        let c = &self.controller;
        self.weighting()?;
        non_negative("controller.w_tau_constant", c.w_tau_constant)?;
        non_negative("controller.freeze_s", c.freeze_s)?;
        let m = &self.mpc;
        for (k, v) in m.w_xi.iter().enumerate() {
            non_negative(&format!("mpc.w_xi[{k}]"), *v)?;
        }
        for (k, v) in m.w_p.iter().enumerate() {
            non_negative(&format!("mpc.w_p[{k}]"), *v)?;
        }
        positive("mpc.w_f", m.w_f)?;
        non_negative("mpc.w_tau_max", m.w_tau_max)?;
        non_negative("mpc.k_d", m.k_d)?;
        positive("mpc.tau_max_nm", m.tau_max_nm)?;
        interval("mpc.df_x_m", m.df_x_m)?;
        interval("mpc.df_y_left_m", m.df_y_left_m)?;
        interval("mpc.df_y_right_m", m.df_y_right_m)?;
        let s = &self.stepping;
        for (k, v) in s.w_f.iter().chain(&s.w_b).enumerate() {
            let name = if k < 2 {
                format!("stepping.w_f[{k}]")
            } else {
                format!("stepping.w_b[{}]", k - 2)
            };
            non_negative(&name, *v)?;
        }
        non_negative("stepping.w_gamma", s.w_gamma)?;
        positive("stepping.f_half_m", s.f_half_m)?;
        positive("stepping.b_half_m", s.b_half_m)?;
        non_negative("stepping.t_band_s", s.t_band_s)?;
        non_negative("stepping.min_remaining_s", s.min_remaining_s)?;
        if s.t_band_s >= g.t_ssp_s + g.t_dsp_s {
            return Err(Error::config("stepping.t_band_s", "must be shorter than the step time"));
        }
        let b = &self.baseline;
        for (name, v) in [
            ("baseline.w_f", b.w_f),
            ("baseline.w_gamma", b.w_gamma),
            ("baseline.w_tau", b.w_tau),
            ("baseline.w_b", b.w_b),
            ("baseline.k_d", b.k_d),
        ] {
            non_negative(name, v)?;
        }
        interval("baseline.f_err_x_m", b.f_err_x_m)?;
        interval("baseline.f_err_y_left_m", b.f_err_y_left_m)?;
        interval("baseline.f_err_y_right_m", b.f_err_y_right_m)?;
        let p = &self.plant;
        positive("plant.tau_max_nm", p.tau_max_nm)?;
        positive("plant.cam_max_nms", p.cam_max_nms)?;
        positive("plant.fall_cp_foot_distance_m", p.fall_cp_foot_distance_m)?;
        positive("plant.fall_cp_error_m", p.fall_cp_error_m)?;
        non_negative("plant.fall_sustain_s", p.fall_sustain_s)?;
        for (k, d) in self.disturbances.iter().enumerate() {
            let base = format!("disturbances[{k}]");
            match *d {
                DisturbanceSpec::Push {
                    direction_deg,
                    impulse_ns,
                    t_start_s,
                    duration_s,
                } => {
                    if !direction_deg.is_finite() {
                        return Err(Error::config(format!("{base}.direction_deg"), "must be finite"));
                    }
                    non_negative(&format!("{base}.impulse_ns"), impulse_ns)?;
                    non_negative(&format!("{base}.t_start_s"), t_start_s)?;
                    positive(&format!("{base}.duration_s"), duration_s)?;
                }
                DisturbanceSpec::PushForce {
                    force_n,
                    t_start_s,
                    duration_s,
                } => {
                    if !force_n.iter().all(|v| v.is_finite()) {
                        return Err(Error::config(format!("{base}.force_n"), "must be finite"));
                    }
                    non_negative(&format!("{base}.t_start_s"), t_start_s)?;
                    positive(&format!("{base}.duration_s"), duration_s)?;
                }
                DisturbanceSpec::TouchdownCpShift { offset_m, .. } => {
                    if !offset_m.iter().all(|v| v.is_finite()) {
                        return Err(Error::config(format!("{base}.offset_m"), "must be finite"));
                    }
                }
            }
        }
        self.sweep.validate()?;
        if self.output.csv.is_empty() {
            return Err(Error::config("output.csv", "must not be empty"));
        }
        Ok(())
    }

    /// Simulation settings for the configured controller and strategy mode.
    pub fn closed_loop(&self) -> Result<ClosedLoopConfig> {
        self.validate()?;
        self.closed_loop_with_mode(self.controller.mode)
    }

    pub fn closed_loop_with_mode(&self, mode: StrategyMode) -> Result<ClosedLoopConfig> {
        let r = &self.robot;
        let robot = RobotParams::new(
            r.mass_kg,
            r.com_height_m,
            r.gravity_mps2,
            r.control_period_s,
            r.horizon_ticks,
        )
        .map_err(|e| Error::config("robot", e.to_string()))?;
        let g = &self.gait;
        let gait = GaitParams {
            step_width_m: g.step_width_m,
            t_ssp_s: g.t_ssp_s,
            t_dsp_s: g.t_dsp_s,
            collision_margin_m: g.collision_margin_m,
        };
        let bands = SupportBands {
            x_lower_m: g.zmp_x_lower_m,
            x_upper_m: g.zmp_x_upper_m,
            y_half_m: g.zmp_y_half_m,
        };
        let c = &self.controller;
        let ablation = AblationConfig {
            weighting: self.weighting()?,
            cp_offset_mode: c.cp_offset,
            cmp_mode: c.cmp,
            ..AblationConfig::for_mode(mode)
        };
        let m = &self.mpc;
        let s = &self.stepping;
        let b = &self.baseline;
        let p = &self.plant;
        let controller = ControllerConfig {
            kind: c.kind,
            ablation,
            weights: MpcWeightConfig {
                w_xi: m.w_xi,
                w_p: m.w_p,
                w_f: m.w_f,
                w_tau_max: m.w_tau_max,
                k_d: m.k_d,
                moment_smoothing_cmp_units: m.moment_smoothing_cmp_units,
            },
            tau_max_nm: m.tau_max_nm,
            df_x: (m.df_x_m[0], m.df_x_m[1]),
            df_y_left: (m.df_y_left_m[0], m.df_y_left_m[1]),
            df_y_right: (m.df_y_right_m[0], m.df_y_right_m[1]),
            freeze_s: c.freeze_s,
            stepping_weights: SteppingWeights {
                w_f: s.w_f,
                w_gamma: s.w_gamma,
                w_b: s.w_b,
            },
            stepping_bounds: SteppingBounds {
                f_half_m: s.f_half_m,
                b_half_m: s.b_half_m,
                t_band_s: s.t_band_s,
                min_remaining_s: s.min_remaining_s,
            },
            baseline_weights: BaselineWeights {
                w_f: b.w_f,
                w_gamma: b.w_gamma,
                w_tau: b.w_tau,
                w_b: b.w_b,
                k_d: b.k_d,
            },
            baseline_limits: BaselineLimits {
                stepping: SteppingBounds {
                    f_half_m: s.f_half_m,
                    b_half_m: s.b_half_m,
                    t_band_s: s.t_band_s,
                    min_remaining_s: s.min_remaining_s,
                },
                tau_max_nm: m.tau_max_nm,
                f_err_x: (b.f_err_x_m[0], b.f_err_x_m[1]),
                f_err_y_left: (b.f_err_y_left_m[0], b.f_err_y_left_m[1]),
                f_err_y_right: (b.f_err_y_right_m[0], b.f_err_y_right_m[1]),
            },
        };
        let cfg = ClosedLoopConfig {
            robot,
            gait,
            walk: WalkCommand {
                velocity: PlanarPoint::new(self.walk.velocity_mps[0], self.walk.velocity_mps[1]),
                strides: self.walk.strides.iter().map(|s| Stride::new(s[0], s[1])).collect(),
            },
            bands,
            controller,
            plant: PlantLimits {
                tau_max_nm: p.tau_max_nm,
                cam_max_nms: p.cam_max_nms,
                bands,
            },
            plant_dt_s: r.plant_dt_s,
            disturbances: self.disturbances.iter().map(DisturbanceSpec::to_disturbance).collect(),
            duration_s: self.duration_s,
            fall: FallCriteria {
                cp_foot_distance_m: p.fall_cp_foot_distance_m,
                cp_error_m: p.fall_cp_error_m,
                sustain_s: p.fall_sustain_s,
            },
        };
        cfg.validate().map_err(|e| Error::config("<scenario>", e.to_string()))?;
        Ok(cfg)
    }
}
