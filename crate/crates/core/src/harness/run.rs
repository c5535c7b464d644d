use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controller::{ClosedLoop, ClosedLoopConfig, LandingSample, TickRecord};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub duration_s: f64,
    pub ticks: usize,
    pub fell: bool,
    pub fall_time_s: Option<f64>,
    pub cp_rms_x_m: f64,
    pub cp_rms_y_m: f64,
    pub cp_max_error_m: f64,
    pub cp_offset_rms_x_m: f64,
    pub cp_offset_rms_y_m: f64,
    pub landings: usize,
    pub peak_tau_y_nm: f64,
    pub peak_tau_x_nm: f64,
    pub peak_h_y_nms: f64,
    pub peak_h_x_nms: f64,
    pub min_step_time_s: f64,
    pub max_step_time_s: f64,
    pub max_constraint_violation: f64,
    pub degraded_ticks: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub records: Vec<TickRecord>,
    pub landings: Vec<LandingSample>,
    pub summary: RunSummary,
}

fn rms(sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (sum_sq / n as f64).sqrt()
    }
}

pub fn summarize(records: &[TickRecord], landings: &[LandingSample], period_s: f64) -> RunSummary {
    let n = records.len();
    let (mut sx, mut sy, mut max_err) = (0.0, 0.0, 0.0f64);
    let (mut tau_y, mut tau_x, mut h_y, mut h_x) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut viol, mut degraded) = (0.0f64, 0);
    let mut fall_time_s = None;
    for r in records {
        let e = r.xi - r.xi_ref;
        sx += e.x * e.x;
        sy += e.y * e.y;
        max_err = max_err.max(e.norm());
        tau_y = tau_y.max(r.tau_des.tau_y.abs());
        tau_x = tau_x.max(r.tau_des.tau_x.abs());
        h_y = h_y.max(r.h_y.abs());
        h_x = h_x.max(r.h_x.abs());
        t_min = t_min.min(r.step_time_s);
        t_max = t_max.max(r.step_time_s);
        viol = viol.max(r.mpc_violation);
        degraded += r.degraded as usize;
        if r.fell && fall_time_s.is_none() {
            fall_time_s = Some(r.time_s);
        }
    }
    let (mut bx, mut by) = (0.0, 0.0);
    for l in landings {
        let e = l.offset - l.offset_ref;
        bx += e.x * e.x;
        by += e.y * e.y;
    }
    if n == 0 {
        t_min = 0.0;
        t_max = 0.0;
    }
    RunSummary {
        duration_s: n as f64 * period_s,
        ticks: n,
        fell: fall_time_s.is_some(),
        fall_time_s,
        cp_rms_x_m: rms(sx, n),
        cp_rms_y_m: rms(sy, n),
        cp_max_error_m: max_err,
        cp_offset_rms_x_m: rms(bx, landings.len()),
        cp_offset_rms_y_m: rms(by, landings.len()),
        landings: landings.len(),
        peak_tau_y_nm: tau_y,
        peak_tau_x_nm: tau_x,
        peak_h_y_nms: h_y,
        peak_h_x_nms: h_x,
        min_step_time_s: t_min,
        max_step_time_s: t_max,
        max_constraint_violation: viol,
        degraded_ticks: degraded,
    }
}

/// Runs the configured duration, stopping at the first tick flagged as a fall.
pub fn run_scenario(cfg: &ClosedLoopConfig) -> Result<ScenarioResult> {
    let mut sim = ClosedLoop::new(cfg.clone())?;
    let mut records = Vec::with_capacity(sim.total_ticks());
    while !sim.finished() {
        let r = sim.step()?;
        let fell = r.fell;
        records.push(r);
        if fell {
            break;
        }
    }
    let landings = sim.landings().to_vec();
    let summary = summarize(&records, &landings, cfg.robot.control_period_s);
    Ok(ScenarioResult {
        records,
        landings,
        summary,
    })
}

pub const CSV_COLUMNS: [&str; 21] = [
    "time_s",
    "phase",
    "xi_x",
    "xi_y",
    "xi_ref_x",
    "xi_ref_y",
    "z_des_x",
    "z_des_y",
    "z_ref_x",
    "z_ref_y",
    "tau_des_y",
    "tau_des_x",
    "h_y",
    "h_x",
    "dF1_x",
    "dF1_y",
    "f_x",
    "f_y",
    "step_time_s",
    "support_side",
    "fell",
];

/// Formats with 9 significant digits, fixed notation for moderate exponents
/// and trailing zeros trimmed.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(records: &[TickRecord], mut out: W) -> Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in records {
        let floats = [
            r.xi.x,
            r.xi.y,
            r.xi_ref.x,
            r.xi_ref.y,
            r.z_des.x,
            r.z_des.y,
            r.z_ref.x,
            r.z_ref.y,
            r.tau_des.tau_y,
            r.tau_des.tau_x,
            r.h_y,
            r.h_x,
            r.df1.x,
            r.df1.y,
            r.footstep.x,
            r.footstep.y,
            r.step_time_s,
        ];
        let mut line = String::with_capacity(256);
        line.push_str(&fmt_sig9(r.time_s));
        line.push(',');
        line.push_str(r.phase.label());
        for v in floats {
            line.push(',');
            line.push_str(&fmt_sig9(v));
        }
        line.push(',');
        line.push_str(r.support_side.label());
        line.push(',');
        line.push_str(if r.fell { "1" } else { "0" });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
