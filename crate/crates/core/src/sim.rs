//! Deterministic kinematic stand-in for a small rudder-steered surface vehicle.
//!
//! The vehicle is a unicycle: constant commanded surge speed, yaw rate
//! proportional to rudder angle, rudder slewed at a bounded rate. At full
//! rudder the turning radius equals `min_turn_radius` whatever the speed:
//!
//! ```text
//! yaw_rate = speed / min_turn_radius * rudder / max_rudder
//! ```
//!
//! Guidance is line-of-sight: the controller steers toward the reference point
//! `los_lookahead` meters of arc ahead of the closest reference point, with a
//! proportional, saturated rudder command. Headings are degrees,
//! counter-clockwise from +x.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Phase, Point, ReferenceSeries, RunPlan};
use crate::rng::{substream, symmetric_uniform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid vehicle or noise parameter: {0}")]
    Params(String),
    #[error("degenerate reference segment")]
    DegenerateSegment,
    #[error("simulation diverged in {phase} phase at t = {t} s")]
    Diverged { phase: Phase, t: f64 },
    #[error("malformed telemetry: {0}")]
    Telemetry(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Commanded surge speed, m/s.
    pub cruise_speed: f64,
    /// Rudder saturation, degrees.
    pub max_rudder: f64,
    /// Rudder slew limit, degrees per second.
    pub rudder_rate: f64,
    /// Turning radius at full rudder, meters.
    pub min_turn_radius: f64,
    /// Hull length, meters.
    pub length: f64,
    /// Controller and logging period, seconds.
    pub control_period: f64,
    /// Line-of-sight lookahead along the reference, meters.
    pub los_lookahead: f64,
    /// Rudder degrees per degree of heading error.
    pub heading_gain: f64,
    /// Thrust needed to hold 1 m/s, in commanded-force units per (m/s)².
    pub drag_coefficient: f64,
    /// Fractional extra thrust at full rudder.
    pub turn_drag: f64,
    /// Thrust correction per m/s of speed error.
    pub speed_gain: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            cruise_speed: 1.0,
            max_rudder: 30.0,
            rudder_rate: 20.0,
            min_turn_radius: 14.0,
            length: 2.4,
            control_period: 0.03,
            los_lookahead: 8.0,
            heading_gain: 5.0,
            drag_coefficient: 50.0,
            turn_drag: 0.5,
            speed_gain: 100.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("cruise_speed", self.cruise_speed),
            ("max_rudder", self.max_rudder),
            ("rudder_rate", self.rudder_rate),
            ("min_turn_radius", self.min_turn_radius),
            ("length", self.length),
            ("control_period", self.control_period),
            ("los_lookahead", self.los_lookahead),
            ("heading_gain", self.heading_gain),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Params(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("drag_coefficient", self.drag_coefficient),
            ("turn_drag", self.turn_drag),
            ("speed_gain", self.speed_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Params(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.max_rudder >= 90.0 {
            return Err(SimError::Params("max_rudder must be below 90 degrees".into()));
        }
        Ok(())
    }

    /// Bound on |yaw rate| in deg/s for a given speed.
    pub fn max_yaw_rate(&self, speed: f64) -> f64 {
        (speed / self.min_turn_radius).to_degrees()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Half-width of the uniform position noise on logged positions, meters.
    pub a: f64,
    /// Half-width of the uniform heading measurement noise, degrees.
    pub heading_max: f64,
    /// Half-width of the uniform speed perturbation, m/s.
    pub speed_max: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { a: 0.2, heading_max: 0.2, speed_max: 0.1, seed: 0 }
    }
}

impl NoiseParams {
    pub fn noiseless(seed: u64) -> Self {
        NoiseParams { a: 0.0, heading_max: 0.0, speed_max: 0.0, seed }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [("a", self.a), ("heading_max", self.heading_max), ("speed_max", self.speed_max)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Params(format!("noise {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub rudder: f64,
    pub thrust: f64,
    pub xte: f64,
    pub ref_index: usize,
    pub phase: Phase,
}

impl Sample {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub samples: Vec<Sample>,
    /// Phases that hit the time cap before reaching the end of their block.
    #[serde(default)]
    pub timed_out: Vec<Phase>,
}

pub const TELEMETRY_CSV_HEADER: &str = "t,x,y,heading,rudder,thrust,xte,ref_index,phase";

impl Telemetry {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn phase_range(&self, phase: Phase) -> Range<usize> {
        let start = self.samples.iter().position(|s| s.phase == phase);
        match start {
            None => 0..0,
            Some(s) => {
                let len = self.samples[s..].iter().take_while(|x| x.phase == phase).count();
                s..s + len
            }
        }
    }

    pub fn phase_samples(&self, phase: Phase) -> &[Sample] {
        &self.samples[self.phase_range(phase)]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * self.samples.len());
        out.push_str(TELEMETRY_CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.t, s.x, s.y, s.heading, s.rudder, s.thrust, s.xte, s.ref_index, s.phase
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| SimError::Telemetry(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>().join(",") != TELEMETRY_CSV_HEADER {
            return Err(SimError::Telemetry(format!("unexpected header {headers:?}")));
        }
        let mut samples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Telemetry(e.to_string()))?;
            let bad = |col: &str| SimError::Telemetry(format!("row {line}: bad {col}"));
            let num = |i: usize, col: &str| -> Result<f64, SimError> {
                rec.get(i).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad(col))
            };
            samples.push(Sample {
                t: num(0, "t")?,
                x: num(1, "x")?,
                y: num(2, "y")?,
                heading: num(3, "heading")?,
                rudder: num(4, "rudder")?,
                thrust: num(5, "thrust")?,
                xte: num(6, "xte")?,
                ref_index: rec.get(7).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("ref_index"))?,
                phase: rec.get(8).and_then(Phase::parse).ok_or_else(|| bad("phase"))?,
            });
        }
        Ok(Telemetry { samples, timed_out: Vec::new() })
    }
}

/// Signed perpendicular distance from `p` to the line through segment `a → b`,
/// positive to port (left) of the travel direction.
pub fn xte_at(p: Point, a: Point, b: Point) -> Result<f64, SimError> {
    let d = b.sub(a);
    let len = d.norm();
    if !(len > 0.0 && len.is_finite()) {
        return Err(SimError::DegenerateSegment);
    }
    Ok(d.cross(p.sub(a)) / len)
}

/// Initial vehicle state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartState {
    pub position: Point,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
}

impl StartState {
    /// Start of the approach block, aligned with it.
    pub fn from_plan(plan: &RunPlan) -> Self {
        let (position, heading) = plan.start_pose();
        StartState { position, heading }
    }

    /// Shifted sideways by `offset` meters (positive to port).
    pub fn offset(self, offset: f64) -> Self {
        let n = Point::new(self.heading.cos(), self.heading.sin()).left_normal();
        StartState { position: self.position.add(n.scale(offset)), ..self }
    }
}

pub fn simulate_run(plan: &RunPlan, vehicle: &VehicleParams, noise: &NoiseParams) -> Result<Telemetry, SimError> {
    simulate_run_from(plan, vehicle, noise, StartState::from_plan(plan))
}

/// Executes all four phases in order and logs one sample per control period.
pub fn simulate_run_from(
    plan: &RunPlan,
    vehicle: &VehicleParams,
    noise: &NoiseParams,
    start: StartState,
) -> Result<Telemetry, SimError> {
    vehicle.validate()?;
    noise.validate()?;
    let mut state = VehicleState { pos: start.position, psi: start.heading, rudder: 0.0, step: 0 };
    let mut telemetry = Telemetry::default();
    for series in &plan.phases {
        let mut rng = substream(noise.seed, series.phase.index() as u64);
        let done = run_phase(series, vehicle, noise, &mut rng, &mut state, &mut telemetry.samples)?;
        if !done {
            telemetry.timed_out.push(series.phase);
        }
    }
    Ok(telemetry)
}

struct VehicleState {
    pos: Point,
    psi: f64,
    rudder: f64,
    step: u64,
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Point at arc length `s`; beyond the end the final segment is extended.
fn point_at_arc(points: &[Point], cum: &[f64], from: usize, s: f64) -> Point {
    let last = points.len() - 1;
    if s >= cum[last] {
        let dir = points[last].sub(points[last - 1]).normalized();
        return points[last].add(dir.scale(s - cum[last]));
    }
    let j = from + cum[from..].partition_point(|&c| c <= s);
    let j = j.clamp(1, last);
    let (s0, s1) = (cum[j - 1], cum[j]);
    let f = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
    points[j - 1].add(points[j].sub(points[j - 1]).scale(f))
}

/// Returns `false` if the phase hit its time cap.
fn run_phase(
    series: &ReferenceSeries,
    v: &VehicleParams,
    noise: &NoiseParams,
    rng: &mut rand_chacha::ChaCha8Rng,
    state: &mut VehicleState,
    out: &mut Vec<Sample>,
) -> Result<bool, SimError> {
    let points = &series.points;
    let cum = series.cumulative_length();
    let last = points.len() - 1;
    let total = cum[last];
    let dt = v.control_period;
    let cap_steps = ((3.0 * total / v.cruise_speed + 60.0) / dt).ceil() as u64;
    let window = 2.0 * v.los_lookahead;
    let mut idx = 0usize;

    for _ in 0..cap_steps {
        let t = state.step as f64 * dt;
        if !(state.pos.is_finite() && state.psi.is_finite()) {
            return Err(SimError::Diverged { phase: series.phase, t });
        }

        let ex = symmetric_uniform(rng, noise.a);
        let ey = symmetric_uniform(rng, noise.a);
        let eh = symmetric_uniform(rng, noise.heading_max);
        let eu = symmetric_uniform(rng, noise.speed_max);

        // proximity advance: closest reference point within a forward window
        let limit = cum[idx] + window;
        let mut best = idx;
        let mut best_d = state.pos.distance_sq(points[idx]);
        let mut j = idx + 1;
        while j <= last && cum[j] <= limit {
            let d = state.pos.distance_sq(points[j]);
            if d < best_d {
                best_d = d;
                best = j;
            }
            j += 1;
        }
        idx = best;

        let (sa, sb) = if idx == last { (last - 1, last) } else { (idx, idx + 1) };
        let seg = points[sb].sub(points[sa]);
        let seg_len = seg.norm();
        let along = state.pos.sub(points[sa]).dot(seg) / seg_len;
        let progress = cum[sa] + along;
        if idx == last || progress >= total {
            return Ok(true);
        }
        let xte = xte_at(state.pos, points[sa], points[sb])?;

        let target = point_at_arc(points, &cum, idx, progress.max(cum[idx]) + v.los_lookahead);
        let to_target = target.sub(state.pos);
        let desired = to_target.y.atan2(to_target.x);
        let psi_meas = state.psi + eh.to_radians();
        let error_deg = wrap_pi(desired - psi_meas).to_degrees();
        let command = (v.heading_gain * error_deg).clamp(-v.max_rudder, v.max_rudder);
        let max_step = v.rudder_rate * dt;
        state.rudder += (command - state.rudder).clamp(-max_step, max_step);

        let speed = v.cruise_speed + eu;
        let ratio = state.rudder / v.max_rudder;
        let thrust = v.drag_coefficient * v.cruise_speed * v.cruise_speed * (1.0 + v.turn_drag * ratio * ratio)
            + v.speed_gain * (v.cruise_speed - speed);

        out.push(Sample {
            t,
            x: state.pos.x + ex,
            y: state.pos.y + ey,
            heading: wrap_pi(psi_meas).to_degrees(),
            rudder: state.rudder,
            thrust,
            xte,
            ref_index: idx,
            phase: series.phase,
        });

        let yaw_rate = speed / v.min_turn_radius * ratio;
        let psi_mid = state.psi + 0.5 * yaw_rate * dt;
        state.pos = state.pos.add(Point::new(psi_mid.cos(), psi_mid.sin()).scale(speed * dt));
        state.psi = wrap_pi(state.psi + yaw_rate * dt);
        state.step += 1;
    }
    Ok(false)
}
