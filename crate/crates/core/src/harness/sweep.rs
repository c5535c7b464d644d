use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ClosedLoop, ClosedLoopConfig, TickRecord};
use crate::error::{Error, Result};
use crate::plant::Disturbance;

/// A push counts as recovered when the robot has not fallen and the CP error
/// stays below `threshold_m` for `hold_s`, all within `window_s` of push end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryCriteria {
    pub threshold_m: f64,
    pub hold_s: f64,
    pub window_s: f64,
}

impl Default for RecoveryCriteria {
    fn default() -> Self {
        Self {
            threshold_m: 0.01,
            hold_s: 1.0,
            window_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub recovered: bool,
    pub fell: bool,
    /// Start of the first qualifying low-error interval.
    pub settled_at_s: Option<f64>,
    pub simulated_s: f64,
}

/// Simulates `cfg` and decides recovery for a push ending at `push_end_s`.
/// Stops as soon as the outcome is known.
pub fn probe_recovery(cfg: &ClosedLoopConfig, push_end_s: f64, criteria: &RecoveryCriteria) -> Result<ProbeOutcome> {
    let mut cfg = cfg.clone();
    let ts = cfg.robot.control_period_s;
    let deadline = push_end_s + criteria.window_s;
    cfg.duration_s = cfg.duration_s.max(deadline + ts);
    let mut sim = ClosedLoop::new(cfg)?;
    let mut below_since: Option<f64> = None;
    while !sim.finished() {
        let r = sim.step()?;
        let t = r.time_s;
        if r.fell {
            return Ok(ProbeOutcome {
                recovered: false,
                fell: true,
                settled_at_s: None,
                simulated_s: t,
            });
        }
        if t < push_end_s - 1e-9 {
            continue;
        }
        if (r.xi - r.xi_ref).norm() < criteria.threshold_m {
            let since = *below_since.get_or_insert(t);
            if t - since >= criteria.hold_s - 1e-9 {
                return Ok(ProbeOutcome {
                    recovered: true,
                    fell: false,
                    settled_at_s: Some(since),
                    simulated_s: t,
                });
            }
        } else {
            below_since = None;
        }
        let latest_start = deadline - criteria.hold_s + 1e-9;
        if t >= deadline || below_since.map_or(t > latest_start, |s| s > latest_start) {
            break;
        }
    }
    Ok(ProbeOutcome {
        recovered: false,
        fell: false,
        settled_at_s: None,
        simulated_s: sim.time_s(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub directions_deg: Vec<f64>,
    pub start_impulse_ns: f64,
    pub tol_ns: f64,
    pub max_impulse_ns: f64,
    pub push_start_s: f64,
    pub push_duration_s: f64,
    pub recovery: RecoveryCriteria,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            directions_deg: (0..12).map(|k| 30.0 * k as f64).collect(),
            start_impulse_ns: 20.0,
            tol_ns: 0.5,
            max_impulse_ns: 2000.0,
            push_start_s: 2.2,
            push_duration_s: 0.2,
            recovery: RecoveryCriteria::default(),
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.directions_deg.is_empty() {
            return Err(Error::config("sweep.directions_deg", "needs at least one direction"));
        }
        if self.directions_deg.iter().any(|d| !d.is_finite()) {
            return Err(Error::config("sweep.directions_deg", "directions must be finite"));
        }
        for (path, v) in [
            ("sweep.start_impulse_ns", self.start_impulse_ns),
            ("sweep.tol_ns", self.tol_ns),
            ("sweep.push_duration_s", self.push_duration_s),
            ("sweep.recovery.threshold_m", self.recovery.threshold_m),
            ("sweep.recovery.window_s", self.recovery.window_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if !(self.max_impulse_ns >= self.start_impulse_ns) {
            return Err(Error::config(
                "sweep.max_impulse_ns",
                "must be at least start_impulse_ns",
            ));
        }
        if !(self.push_start_s >= 0.0) {
            return Err(Error::config("sweep.push_start_s", "must be non-negative"));
        }
        if !(self.recovery.hold_s >= 0.0 && self.recovery.hold_s <= self.recovery.window_s) {
            return Err(Error::config("sweep.recovery.hold_s", "must lie in [0, window_s]"));
        }
        Ok(())
    }

    pub fn push_end_s(&self) -> f64 {
        self.push_start_s + self.push_duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub impulse_ns: f64,
    pub recovered: bool,
    pub fell: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub direction_deg: f64,
    pub max_impulse_ns: f64,
    /// Largest recovered and smallest failed impulse of the final bracket.
    pub bracket_ns: (f64, f64),
    /// False when a probe below the bracket failed, or no failure was found.
    pub monotone: bool,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbancePolygon {
    pub directions: Vec<DirectionResult>,
}

impl DisturbancePolygon {
    pub fn impulses(&self) -> Vec<f64> {
        self.directions.iter().map(|d| d.max_impulse_ns).collect()
    }

    pub fn average_ns(&self) -> f64 {
        let v = self.impulses();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Area of the polygon with vertex `k` at radius `max_impulse_k` along
    /// direction `k`, in (N·s)².
    pub fn area(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = self
            .directions
            .iter()
            .map(|d| (d.direction_deg.to_radians(), d.max_impulse_ns))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pts.len();
        if n < 3 {
            return 0.0;
        }
        let mut twice = 0.0;
        for k in 0..n {
            let (a0, r0) = pts[k];
            let (a1, r1) = pts[(k + 1) % n];
            let (x0, y0) = (r0 * a0.cos(), r0 * a0.sin());
            let (x1, y1) = (r1 * a1.cos(), r1 * a1.sin());
            twice += x0 * y1 - x1 * y0;
        }
        0.5 * twice.abs()
    }

    /// Number of directions where `self` reaches at least `other`'s impulse.
    pub fn dominates_count(&self, other: &DisturbancePolygon) -> usize {
        self.impulses()
            .iter()
            .zip(other.impulses())
            .filter(|(a, b)| **a >= b - 1e-12)
            .count()
    }
}

fn with_push(template: &ClosedLoopConfig, direction_deg: f64, impulse_ns: f64, s: &SweepSettings) -> ClosedLoopConfig {
    let mut cfg = template.clone();
    cfg.disturbances = vec![Disturbance::push_from_direction(
        direction_deg,
        impulse_ns,
        s.push_start_s,
        s.push_duration_s,
    )];
    cfg
}

/// Largest recoverable impulse along one direction: doubling from the start
/// impulse until a failure, then bisection down to `tol_ns`.
pub fn max_impulse(template: &ClosedLoopConfig, direction_deg: f64, s: &SweepSettings) -> Result<DirectionResult> {
    let mut trials = Vec::new();
    let probe = |impulse: f64, trials: &mut Vec<Trial>| -> Result<bool> {
        let cfg = with_push(template, direction_deg, impulse, s);
        let out = probe_recovery(&cfg, s.push_end_s(), &s.recovery)?;
        trials.push(Trial {
            impulse_ns: impulse,
            recovered: out.recovered,
            fell: out.fell,
        });
        Ok(out.recovered)
    };

    let (mut lo, mut hi) = (0.0, s.start_impulse_ns);
    let mut found_failure = false;
    loop {
        if !probe(hi, &mut trials)? {
            found_failure = true;
            break;
        }
        lo = hi;
        if hi >= s.max_impulse_ns {
            break;
        }
        hi = (2.0 * hi).min(s.max_impulse_ns);
    }
    if !found_failure {
        warn!(
            "direction {direction_deg} deg recovered up to the impulse cap {}",
            s.max_impulse_ns
        );
        return Ok(DirectionResult {
            direction_deg,
            max_impulse_ns: lo,
            bracket_ns: (lo, lo),
            monotone: false,
            trials,
        });
    }
    while hi - lo > s.tol_ns {
        let mid = 0.5 * (lo + hi);
        if probe(mid, &mut trials)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let monotone = !trials.iter().any(|t| !t.recovered && t.impulse_ns < lo);
    if !monotone {
        warn!("non-monotone recovery along {direction_deg} deg");
    }
    Ok(DirectionResult {
        direction_deg,
        max_impulse_ns: 0.5 * (lo + hi),
        bracket_ns: (lo, hi),
        monotone,
        trials,
    })
}

pub fn sweep_disturbance_polygon(template: &ClosedLoopConfig, settings: &SweepSettings) -> Result<DisturbancePolygon> {
    settings.validate()?;
    if template
        .disturbances
        .iter()
        .any(|d| matches!(d, Disturbance::Push { .. }))
    {
        return Err(Error::config("disturbances", "sweep template must not contain pushes"));
    }
    let directions = settings
        .directions_deg
        .par_iter()
        .map(|&d| max_impulse(template, d, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(DisturbancePolygon { directions })
}

/// Time from `t_from` until the committed footstep first departs from the
/// reference run's by more than `threshold_m`.
pub fn stepping_onset(records: &[TickRecord], reference: &[TickRecord], t_from: f64, threshold_m: f64) -> Option<f64> {
    records
        .iter()
        .zip(reference)
        .filter(|(r, _)| r.time_s >= t_from - 1e-9)
        .find(|(r, q)| (r.footstep - q.footstep).norm() > threshold_m)
        .map(|(r, _)| r.time_s - t_from)
}
