//! Target path families, reference sampling and the four-phase run plan.
//!
//! Coordinates are local to the experiment area: the central box spans
//! `x ∈ [0, W]`, `y ∈ [-R2/2, R2/2]`. Forward paths enter at `w = 0` and leave
//! at `w = W`; the backward path is the forward path traversed in reverse.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default distance between consecutive reference points, in meters.
pub const DEFAULT_SPACING: f64 = 0.05;
/// Default length of the straight tangent approach, in meters.
pub const DEFAULT_APPROACH_LENGTH: f64 = 15.0;

const ARC_LENGTH_RTOL: f64 = 1e-6;
const PANELS_PER_HEMI_PERIOD: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("abscissa {w} outside [0, {width}]")]
    AbscissaOutOfRange { w: f64, width: f64 },
    #[error("degenerate reference series: {0}")]
    Degenerate(String),
    #[error("infeasible run geometry: {0}")]
    Infeasible(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Point {
        self.scale(1.0 / self.norm())
    }

    /// Rotates by `angle` radians counter-clockwise.
    pub fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand (port) normal of a direction vector.
    pub fn left_normal(self) -> Point {
        Point::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathFamily {
    Sine,
    Circle,
    SquareWave,
    StraightLine,
}

impl fmt::Display for PathFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PathFamily::Sine => "sine",
            PathFamily::Circle => "circle",
            PathFamily::SquareWave => "square_wave",
            PathFamily::StraightLine => "straight_line",
        };
        f.write_str(s)
    }
}

/// A member of a parametric path family.
///
/// `x1` is the amplitude (sine, square wave) or the radius (circle); `x2` is
/// the number of hemi-periods fitted into the box width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub family: PathFamily,
    pub x1: f64,
    pub x2: u32,
    #[serde(rename = "W")]
    pub width: f64,
}

/// Builds a validated path. Sine and square waves with zero amplitude or zero
/// hemi-periods collapse to the straight line.
pub fn make_path(family: PathFamily, x1: f64, x2: f64, width: f64) -> Result<PathParams, GeometryError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(GeometryError::Domain(format!("box width must be positive, got {width}")));
    }
    if !(x1.is_finite() && x1 >= 0.0) {
        return Err(GeometryError::Domain(format!("x1 must be non-negative, got {x1}")));
    }
    if !(x2.is_finite() && x2 >= 0.0 && x2.fract() == 0.0 && x2 <= u32::MAX as f64) {
        return Err(GeometryError::Domain(format!("x2 must be a non-negative integer, got {x2}")));
    }
    let x2 = x2 as u32;
    let straight = PathParams { family: PathFamily::StraightLine, x1: 0.0, x2: 0, width };
    match family {
        PathFamily::StraightLine => Ok(straight),
        PathFamily::Sine | PathFamily::SquareWave => {
            if x1 == 0.0 || x2 == 0 {
                Ok(straight)
            } else {
                Ok(PathParams { family, x1, x2, width })
            }
        }
        PathFamily::Circle => {
            if x1 == 0.0 {
                return Err(GeometryError::Domain("circle radius must be positive".into()));
            }
            Ok(PathParams { family, x1, x2: 0, width })
        }
    }
}

impl PathParams {
    pub fn straight_line(width: f64) -> Self {
        PathParams { family: PathFamily::StraightLine, x1: 0.0, x2: 0, width }
    }

    fn wavenumber(&self) -> f64 {
        PI * self.x2 as f64 / self.width
    }

    /// Largest lateral excursion of the path from the box axis.
    pub fn max_abs_y(&self) -> f64 {
        match self.family {
            PathFamily::StraightLine => 0.0,
            PathFamily::Sine | PathFamily::SquareWave | PathFamily::Circle => self.x1,
        }
    }

    fn circle_center(&self) -> Point {
        Point::new(self.width / 2.0, 0.0)
    }
}

/// Point on the path at abscissa `w`.
///
/// Circles are parametrized by angle `2πw/W`, starting at the bottom of a
/// circle centred on the box axis and turning counter-clockwise. Square waves
/// take the sign of the matching sine, with zero at hemi-period boundaries.
pub fn evaluate_path(path: &PathParams, w: f64) -> Result<Point, GeometryError> {
    if !(0.0..=path.width).contains(&w) {
        return Err(GeometryError::AbscissaOutOfRange { w, width: path.width });
    }
    Ok(eval_unchecked(path, w))
}

fn eval_unchecked(path: &PathParams, w: f64) -> Point {
    match path.family {
        PathFamily::StraightLine => Point::new(w, 0.0),
        PathFamily::Sine => Point::new(w, path.x1 * (path.wavenumber() * w).sin()),
        PathFamily::SquareWave => {
            let s = (path.wavenumber() * w).sin();
            let sign = if s.abs() < 1e-12 { 0.0 } else { s.signum() };
            Point::new(w, path.x1 * sign)
        }
        PathFamily::Circle => {
            let phi = TAU * w / path.width;
            let c = path.circle_center();
            Point::new(c.x + path.x1 * phi.sin(), c.y - path.x1 * phi.cos())
        }
    }
}

/// Maximum curvature of the path, in 1/m.
pub fn max_curvature(path: &PathParams) -> f64 {
    match path.family {
        PathFamily::StraightLine => 0.0,
        PathFamily::Sine => {
            let k = path.wavenumber();
            path.x1 * k * k
        }
        PathFamily::Circle => 1.0 / path.x1,
        // corners of an ideal square wave
        PathFamily::SquareWave => f64::INFINITY,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Forward,
    Turn,
    Backward,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Approach, Phase::Forward, Phase::Turn, Phase::Backward];

    pub fn index(self) -> usize {
        match self {
            Phase::Approach => 0,
            Phase::Forward => 1,
            Phase::Turn => 2,
            Phase::Backward => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Approach => "approach",
            Phase::Forward => "forward",
            Phase::Turn => "turn",
            Phase::Backward => "backward",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered block of reference points handed to the controller for one phase.
///
/// `abscissa` holds the path abscissa `w` for forward/backward blocks and the
/// running arc length for approach/turn blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSeries {
    pub phase: Phase,
    pub points: Vec<Point>,
    pub abscissa: Vec<f64>,
}

impl ReferenceSeries {
    pub fn new(phase: Phase, points: Vec<Point>, abscissa: Vec<f64>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::Degenerate(format!("{phase} series has {} points", points.len())));
        }
        if abscissa.len() != points.len() {
            return Err(GeometryError::Degenerate("abscissa and points differ in length".into()));
        }
        if let Some(i) = points.windows(2).position(|p| p[0] == p[1]) {
            return Err(GeometryError::Degenerate(format!("{phase} series repeats point {i}")));
        }
        Ok(Self { phase, points, abscissa })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cumulative chord length at every point.
    pub fn cumulative_length(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.points.len());
        let mut s = 0.0;
        acc.push(0.0);
        for p in self.points.windows(2) {
            s += p[0].distance(p[1]);
            acc.push(s);
        }
        acc
    }

    pub fn reversed(&self, phase: Phase) -> ReferenceSeries {
        ReferenceSeries {
            phase,
            points: self.points.iter().rev().copied().collect(),
            abscissa: self.abscissa.iter().rev().copied().collect(),
        }
    }

    /// CSV with header `w,x,y,phase`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("w,x,y,phase\n");
        for (p, w) in self.points.iter().zip(&self.abscissa) {
            out.push_str(&format!("{w},{},{},{}\n", p.x, p.y, self.phase));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, GeometryError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut points = Vec::new();
        let mut abscissa = Vec::new();
        let mut phase = None;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| GeometryError::Degenerate(e.to_string()))?;
            let num = |i: usize| -> Result<f64, GeometryError> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| GeometryError::Degenerate(format!("bad numeric field {i}")))
            };
            abscissa.push(num(0)?);
            points.push(Point::new(num(1)?, num(2)?));
            let ph = rec
                .get(3)
                .and_then(Phase::parse)
                .ok_or_else(|| GeometryError::Degenerate("bad phase field".into()))?;
            if *phase.get_or_insert(ph) != ph {
                return Err(GeometryError::Degenerate("mixed phases in one series".into()));
            }
        }
        let phase = phase.ok_or_else(|| GeometryError::Degenerate("empty series".into()))?;
        ReferenceSeries::new(phase, points, abscissa)
    }
}

/// Total chord length of a point chain.
pub fn path_length(points: &[Point]) -> Result<f64, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::Degenerate(format!("need at least 2 points, got {}", points.len())));
    }
    Ok(points.windows(2).map(|p| p[0].distance(p[1])).sum())
}

/// Arc length of the sine `y = A sin(kw)` between 0 and `w`, with its inverse.
///
/// The integral is tabulated on fixed panels with 5-point Gauss-Legendre
/// quadrature; inversion runs Newton inside the bracketing panel.
struct SineArc {
    amplitude: f64,
    k: f64,
    panel_edges: Vec<f64>,
    cumulative: Vec<f64>,
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

impl SineArc {
    fn new(amplitude: f64, hemi_periods: u32, width: f64) -> Self {
        let k = PI * hemi_periods as f64 / width;
        let panels = PANELS_PER_HEMI_PERIOD * hemi_periods.max(1) as usize;
        let panel_edges: Vec<f64> = (0..=panels).map(|i| width * i as f64 / panels as f64).collect();
        let mut arc = SineArc { amplitude, k, panel_edges, cumulative: Vec::with_capacity(panels + 1) };
        let mut s = 0.0;
        arc.cumulative.push(0.0);
        for i in 0..panels {
            s += arc.integral(arc.panel_edges[i], arc.panel_edges[i + 1]);
            arc.cumulative.push(s);
        }
        arc
    }

    fn speed(&self, w: f64) -> f64 {
        let d = self.amplitude * self.k * (self.k * w).cos();
        (1.0 + d * d).sqrt()
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        GL5_NODES
            .iter()
            .zip(GL5_WEIGHTS)
            .map(|(&x, wt)| wt * self.speed(mid + half * x))
            .sum::<f64>()
            * half
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn invert(&self, s: f64) -> f64 {
        let total = self.total();
        if s <= 0.0 {
            return 0.0;
        }
        if s >= total {
            return *self.panel_edges.last().unwrap();
        }
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => return self.panel_edges[i],
            Err(i) => i - 1,
        };
        let (lo, hi) = (self.panel_edges[i], self.panel_edges[i + 1]);
        let s0 = self.cumulative[i];
        let (mut a, mut b) = (lo, hi);
        let mut w = lo + (hi - lo) * (s - s0) / (self.cumulative[i + 1] - s0);
        for _ in 0..50 {
            let f = s0 + self.integral(lo, w) - s;
            if f.abs() <= ARC_LENGTH_RTOL * 1e-3 * s.max(1.0) {
                break;
            }
            if f > 0.0 {
                b = w;
            } else {
                a = w;
            }
            let next = w - f / self.speed(w);
            w = if next > a && next < b { next } else { 0.5 * (a + b) };
        }
        w
    }
}

/// Samples the path at (approximately) uniform arc-length steps of `spacing`.
pub fn sample_reference(path: &PathParams, spacing: f64) -> Result<ReferenceSeries, GeometryError> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(GeometryError::Domain(format!("spacing must be positive, got {spacing}")));
    }
    match path.family {
        PathFamily::StraightLine => {
            let curve = Curve::new(vec![Piece::line(Point::new(0.0, 0.0), Point::new(path.width, 0.0))]);
            curve.sample(Phase::Forward, spacing, |_, _, p| p.x)
        }
        PathFamily::Sine => {
            let arc = SineArc::new(path.x1, path.x2, path.width);
            let total = arc.total();
            let steps = intervals(total, spacing)?;
            let mut points = Vec::with_capacity(steps + 1);
            let mut abscissa = Vec::with_capacity(steps + 1);
            for i in 0..=steps {
                let w = if i == steps { path.width } else { arc.invert(total * i as f64 / steps as f64) };
                points.push(eval_unchecked(path, w));
                abscissa.push(w);
            }
            ReferenceSeries::new(Phase::Forward, points, abscissa)
        }
        PathFamily::SquareWave => {
            let h = path.width / path.x2 as f64;
            let mut corners = vec![Point::new(0.0, 0.0)];
            for k in 0..path.x2 {
                let level = if k % 2 == 0 { path.x1 } else { -path.x1 };
                let x0 = h * k as f64;
                corners.push(Point::new(x0, level));
                corners.push(Point::new(x0 + h, level));
            }
            corners.push(Point::new(path.width, 0.0));
            let pieces = corners.windows(2).map(|c| Piece::line(c[0], c[1])).collect();
            Curve::new(pieces).sample(Phase::Forward, spacing, |_, _, p| p.x)
        }
        PathFamily::Circle => {
            let c = path.circle_center();
            let piece = Piece::Arc { center: c, radius: path.x1, start: -PI / 2.0, sweep: TAU };
            let width = path.width;
            Curve::new(vec![piece]).sample(Phase::Forward, spacing, |s, total, _| {
                if s >= total { width } else { width * s / total }
            })
        }
    }
}

fn intervals(total: f64, spacing: f64) -> Result<usize, GeometryError> {
    if spacing > total {
        return Err(GeometryError::Degenerate(format!(
            "spacing {spacing} exceeds path length {total}"
        )));
    }
    Ok(((total / spacing).round() as usize).max(1))
}

/// Unit tangent of the path at abscissa `w` (direction of increasing `w`).
pub fn tangent(path: &PathParams, w: f64) -> Point {
    match path.family {
        PathFamily::StraightLine | PathFamily::SquareWave => Point::new(1.0, 0.0),
        PathFamily::Sine => {
            let k = path.wavenumber();
            Point::new(1.0, path.x1 * k * (k * w).cos()).normalized()
        }
        PathFamily::Circle => {
            let phi = TAU * w / path.width;
            Point::new(phi.cos(), phi.sin())
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Line { a: Point, b: Point },
    Arc { center: Point, radius: f64, start: f64, sweep: f64 },
}

impl Piece {
    fn line(a: Point, b: Point) -> Self {
        Piece::Line { a, b }
    }

    fn length(&self) -> f64 {
        match *self {
            Piece::Line { a, b } => a.distance(b),
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn at(&self, s: f64) -> Point {
        match *self {
            Piece::Line { a, b } => {
                let len = a.distance(b);
                a.add(b.sub(a).scale(s / len))
            }
            Piece::Arc { center, radius, start, sweep } => {
                let ang = start + sweep.signum() * s / radius;
                Point::new(center.x + radius * ang.cos(), center.y + radius * ang.sin())
            }
        }
    }

    fn end(&self) -> Point {
        self.at(self.length())
    }
}

/// A chain of line and arc pieces, sampled by exact arc length.
struct Curve {
    pieces: Vec<Piece>,
}

impl Curve {
    fn new(pieces: Vec<Piece>) -> Self {
        let pieces = pieces.into_iter().filter(|p| p.length() > 1e-12).collect();
        Curve { pieces }
    }

    fn length(&self) -> f64 {
        self.pieces.iter().map(Piece::length).sum()
    }

    fn at(&self, mut s: f64) -> Point {
        for p in &self.pieces {
            let len = p.length();
            if s <= len {
                return p.at(s);
            }
            s -= len;
        }
        self.pieces.last().map(Piece::end).unwrap_or_default()
    }

    fn sample(
        &self,
        phase: Phase,
        spacing: f64,
        abscissa_of: impl Fn(f64, f64, Point) -> f64,
    ) -> Result<ReferenceSeries, GeometryError> {
        let total = self.length();
        let steps = intervals(total, spacing)?;
        let mut points = Vec::with_capacity(steps + 1);
        let mut abscissa = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let s = total * i as f64 / steps as f64;
            let p = if i == steps { self.pieces.last().unwrap().end() } else { self.at(s) };
            abscissa.push(abscissa_of(if i == steps { total } else { s }, total, p));
            points.push(p);
        }
        ReferenceSeries::new(phase, points, abscissa)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxGeometry {
    /// Central box width `W` (along-track), meters.
    #[serde(rename = "W")]
    pub width: f64,
    /// Outer box edge `R1`, meters.
    #[serde(rename = "R1")]
    pub r1: f64,
    /// Outer and central box edge `R2` (cross-track), meters.
    #[serde(rename = "R2")]
    pub r2: f64,
    /// Straight segment `l` of the turn manoeuvre, meters.
    #[serde(rename = "l")]
    pub turn_length: f64,
    /// Turn radius `r`, meters.
    #[serde(rename = "r")]
    pub turn_radius: f64,
}

impl Default for BoxGeometry {
    fn default() -> Self {
        BoxGeometry { width: 100.0, r1: 110.0, r2: 110.0, turn_length: 25.0, turn_radius: 14.0 }
    }
}

impl BoxGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.width) && positive(self.r1) && positive(self.r2)) {
            return Err(GeometryError::Domain("box edges must be positive".into()));
        }
        if self.width >= self.r1 {
            return Err(GeometryError::Domain(format!(
                "central width W={} must be smaller than R1={}",
                self.width, self.r1
            )));
        }
        if !positive(self.turn_radius) {
            return Err(GeometryError::Domain("turn radius must be positive".into()));
        }
        if !(self.turn_length.is_finite() && self.turn_length >= 0.0) {
            return Err(GeometryError::Domain("turn length must be non-negative".into()));
        }
        Ok(())
    }

    /// True when `p` lies inside the central `W × R2` box.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y.abs() <= 0.5 * self.r2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSettings {
    pub spacing: f64,
    pub approach_length: f64,
}

impl Default for PlanSettings {
    fn default() -> Self {
        PlanSettings { spacing: DEFAULT_SPACING, approach_length: DEFAULT_APPROACH_LENGTH }
    }
}

/// Executable plan: approach, forward, turn and backward reference blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub path: PathParams,
    #[serde(rename = "box")]
    pub box_geometry: BoxGeometry,
    pub phases: Vec<ReferenceSeries>,
}

impl RunPlan {
    pub fn phase(&self, phase: Phase) -> &ReferenceSeries {
        &self.phases[phase.index()]
    }

    /// Start pose of the vehicle: beginning of the approach, aligned with it.
    pub fn start_pose(&self) -> (Point, f64) {
        let a = &self.phase(Phase::Approach).points;
        let d = a[1].sub(a[0]);
        (a[0], d.y.atan2(d.x))
    }
}

pub fn build_run_plan(path: &PathParams, box_geometry: &BoxGeometry, spacing: f64) -> Result<RunPlan, GeometryError> {
    build_run_plan_with(path, box_geometry, &PlanSettings { spacing, ..PlanSettings::default() })
}

/// Builds the four-phase plan.
///
/// The approach is a straight segment ending at the entry point along the
/// path tangent. The turn leaves the exit point along the exit tangent for
/// `l` meters, loops once around a circle of radius `r` (a 240° arc joined by
/// two tangent lines), and returns over the same `l`-meter line so that the
/// backward block is entered along its own tangent.
pub fn build_run_plan_with(
    path: &PathParams,
    box_geometry: &BoxGeometry,
    settings: &PlanSettings,
) -> Result<RunPlan, GeometryError> {
    box_geometry.validate()?;
    if path.width != box_geometry.width {
        return Err(GeometryError::Infeasible(format!(
            "path width {} differs from box width {}",
            path.width, box_geometry.width
        )));
    }
    let half = 0.5 * box_geometry.r2;
    if path.max_abs_y() > half {
        return Err(GeometryError::Infeasible(format!(
            "path too wide for box: max |y| = {} exceeds R2/2 = {half}",
            path.max_abs_y()
        )));
    }
    if path.family == PathFamily::Circle && 2.0 * path.x1 > box_geometry.width {
        return Err(GeometryError::Infeasible(format!(
            "circle diameter {} exceeds box width {}",
            2.0 * path.x1,
            box_geometry.width
        )));
    }
    if 2.0 * box_geometry.turn_radius > box_geometry.r2 {
        return Err(GeometryError::Infeasible(format!(
            "turn does not fit: loop span 2r = {} exceeds R2 = {}",
            2.0 * box_geometry.turn_radius,
            box_geometry.r2
        )));
    }
    if !(settings.approach_length.is_finite() && settings.approach_length > 0.0) {
        return Err(GeometryError::Domain("approach length must be positive".into()));
    }

    let forward = sample_reference(path, settings.spacing)?;
    let spacing = settings.spacing;

    let entry = forward.points[0];
    let t_in = tangent(path, 0.0);
    let start = entry.sub(t_in.scale(settings.approach_length));
    let approach = Curve::new(vec![Piece::line(start, entry)]);
    let approach = approach.sample(Phase::Approach, spacing, |s, _, _| s)?;

    let exit = *forward.points.last().unwrap();
    let t_out = tangent(path, path.width);
    let turn = turn_curve(exit, t_out, box_geometry);
    let turn = turn.sample(Phase::Turn, spacing, |s, _, _| s)?;
    let backward = forward.reversed(Phase::Backward);

    Ok(RunPlan { path: *path, box_geometry: *box_geometry, phases: vec![approach, forward, turn, backward] })
}

fn turn_curve(exit: Point, t: Point, b: &BoxGeometry) -> Curve {
    let r = b.turn_radius;
    let phi = PI / 6.0; // tangent angle for a loop centre at distance 2r
    let apex = exit.add(t.scale(b.turn_length));
    let center = apex.add(t.scale(2.0 * r));
    let tangent_len = r * 3f64.sqrt();
    let out_dir = t.rotated(-phi);
    let back_dir = t.rotated(phi);
    let t1 = apex.add(out_dir.scale(tangent_len));
    let t2 = apex.add(back_dir.scale(tangent_len));
    let start_angle = (t1.y - center.y).atan2(t1.x - center.x);
    Curve::new(vec![
        Piece::line(exit, apex),
        Piece::line(apex, t1),
        Piece::Arc { center, radius: r, start: start_angle, sweep: PI + 2.0 * phi },
        Piece::line(t2, apex),
        Piece::line(apex, exit),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(a: f64, k: u32) -> PathParams {
        make_path(PathFamily::Sine, a, k as f64, 100.0).unwrap()
    }

    #[test]
    fn make_path_normalizes_borders() {
        assert_eq!(make_path(PathFamily::Sine, 0.0, 5.0, 100.0).unwrap().family, PathFamily::StraightLine);
        assert_eq!(make_path(PathFamily::Sine, 7.0, 0.0, 100.0).unwrap().family, PathFamily::StraightLine);
        assert_eq!(make_path(PathFamily::SquareWave, 0.0, 3.0, 100.0).unwrap().family, PathFamily::StraightLine);
        let p = sine(10.0, 2);
        assert_eq!((p.family, p.x1, p.x2), (PathFamily::Sine, 10.0, 2));
    }

    #[test]
    fn make_path_rejects_bad_domain() {
        assert!(make_path(PathFamily::Sine, -1.0, 2.0, 100.0).is_err());
        assert!(make_path(PathFamily::Sine, 1.0, 2.5, 100.0).is_err());
        assert!(make_path(PathFamily::Sine, 1.0, 2.0, 0.0).is_err());
        assert!(make_path(PathFamily::Sine, 1.0, -1.0, 100.0).is_err());
        assert!(make_path(PathFamily::Circle, 0.0, 0.0, 100.0).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let p = sine(10.0, 2);
        let a = evaluate_path(&p, 25.0).unwrap();
        assert_eq!(a.x, 25.0);
        assert!((a.y - 10.0).abs() < 1e-12);
        let b = evaluate_path(&p, 50.0).unwrap();
        assert!(b.y.abs() < 1e-12);
        let s = evaluate_path(&PathParams::straight_line(100.0), 37.5).unwrap();
        assert_eq!(s, Point::new(37.5, 0.0));
        assert!(evaluate_path(&p, 100.5).is_err());
        assert!(evaluate_path(&p, -0.1).is_err());
    }

    #[test]
    fn sine_with_four_hemi_periods_has_two_full_periods() {
        let p = sine(25.0, 4);
        // zero crossings at w = 0, 25, 50, 75, 100, positive in the first half period
        for w in [0.0, 25.0, 50.0, 75.0, 100.0] {
            assert!(evaluate_path(&p, w).unwrap().y.abs() < 1e-9);
        }
        assert!(evaluate_path(&p, 12.5).unwrap().y > 0.0);
        assert!(evaluate_path(&p, 62.5).unwrap().y > 0.0);
        assert!(evaluate_path(&p, 37.5).unwrap().y < 0.0);
    }

    #[test]
    fn curvature_examples() {
        let k = max_curvature(&sine(10.0, 2));
        assert!((k - 10.0 * (2.0 * PI / 100.0).powi(2)).abs() < 1e-15);
        assert!((k - 0.03948).abs() < 1e-5);
        assert_eq!(max_curvature(&PathParams::straight_line(100.0)), 0.0);
        let c = make_path(PathFamily::Circle, 14.0, 0.0, 100.0).unwrap();
        assert!((max_curvature(&c) - 1.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn curvature_scaling() {
        let base = max_curvature(&sine(3.0, 2));
        assert!((max_curvature(&sine(6.0, 2)) - 2.0 * base).abs() < 1e-15);
        assert!((max_curvature(&sine(3.0, 4)) - 4.0 * base).abs() < 1e-15);
    }

    #[test]
    fn straight_line_sampling() {
        let s = sample_reference(&PathParams::straight_line(100.0), 1.0).unwrap();
        assert_eq!(s.len(), 101);
        assert!(s.points.iter().all(|p| p.y == 0.0));
        assert_eq!(s.points[0], Point::new(0.0, 0.0));
        assert_eq!(*s.points.last().unwrap(), Point::new(100.0, 0.0));
        assert!(sample_reference(&PathParams::straight_line(100.0), 150.0).is_err());
        assert!(sample_reference(&PathParams::straight_line(100.0), 0.0).is_err());
    }

    fn dense_arc_length(p: &PathParams, a: f64, b: f64) -> f64 {
        // oracle: chord sum over 10^4 subdivisions
        let n = 10_000;
        let mut prev = eval_unchecked(p, a);
        let mut s = 0.0;
        for i in 1..=n {
            let q = eval_unchecked(p, a + (b - a) * i as f64 / n as f64);
            s += prev.distance(q);
            prev = q;
        }
        s
    }

    #[test]
    fn sine_sampling_gaps_match_spacing() {
        let p = sine(10.0, 2);
        let spacing = 0.5;
        let s = sample_reference(&p, spacing).unwrap();
        assert_eq!(s.abscissa[0], 0.0);
        assert_eq!(*s.abscissa.last().unwrap(), 100.0);
        for (w, ab) in s.abscissa.windows(2).zip(s.points.windows(2)) {
            let arc = dense_arc_length(&p, w[0], w[1]);
            assert!((arc - spacing).abs() <= 0.05 * spacing, "arc gap {arc}");
            assert!(ab[0].distance(ab[1]) <= arc + 1e-12);
        }
    }

    #[test]
    fn sampled_length_matches_numeric_arc_length() {
        let p = sine(10.0, 2);
        let oracle = dense_arc_length(&p, 0.0, 100.0);
        let s = sample_reference(&p, 0.1).unwrap();
        let l = path_length(&s.points).unwrap();
        assert!((l - oracle).abs() / oracle < 0.005);
        assert!(l <= oracle + 1e-9);
    }

    #[test]
    fn reference_count_is_in_the_thousands() {
        let s = sample_reference(&sine(30.0, 4), DEFAULT_SPACING).unwrap();
        assert!(s.len() > 1_000 && s.len() < 100_000, "n_R = {}", s.len());
    }

    #[test]
    fn chord_length_grows_toward_arc_length() {
        let p = sine(20.0, 5);
        let mut prev = 0.0;
        for spacing in [4.0, 2.0, 1.0, 0.5, 0.25] {
            let l = path_length(&sample_reference(&p, spacing).unwrap().points).unwrap();
            assert!(l >= prev - 1e-9);
            prev = l;
        }
    }

    #[test]
    fn path_length_examples() {
        assert_eq!(path_length(&[Point::new(0.0, 0.0), Point::new(3.0, 4.0)]).unwrap(), 5.0);
        assert!(path_length(&[Point::new(0.0, 0.0)]).is_err());
        let s = sample_reference(&PathParams::straight_line(100.0), 0.3).unwrap();
        assert!((path_length(&s.points).unwrap() - 100.0).abs() <= 0.3);
    }

    #[test]
    fn straight_normalization_gives_identical_references() {
        let a = sample_reference(&make_path(PathFamily::Sine, 0.0, 4.0, 100.0).unwrap(), 0.5).unwrap();
        let b = sample_reference(&make_path(PathFamily::Sine, 12.0, 0.0, 100.0).unwrap(), 0.5).unwrap();
        let c = sample_reference(&make_path(PathFamily::StraightLine, 0.0, 0.0, 100.0).unwrap(), 0.5).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, c);
    }

    #[test]
    fn run_plan_straight_line_is_feasible() {
        let plan = build_run_plan(&PathParams::straight_line(100.0), &BoxGeometry::default(), 0.5).unwrap();
        assert_eq!(plan.phases.len(), 4);
        let order: Vec<_> = plan.phases.iter().map(|p| p.phase).collect();
        assert_eq!(order, Phase::ALL.to_vec());
    }

    #[test]
    fn run_plan_rejects_wide_path() {
        let err = build_run_plan(&sine(500.0, 1), &BoxGeometry::default(), 0.5).unwrap_err();
        assert!(matches!(err, GeometryError::Infeasible(ref m) if m.contains("too wide")), "{err}");
        let tight = BoxGeometry { turn_radius: 60.0, ..BoxGeometry::default() };
        let err = build_run_plan(&PathParams::straight_line(100.0), &tight, 0.5).unwrap_err();
        assert!(matches!(err, GeometryError::Infeasible(ref m) if m.contains("turn")), "{err}");
    }

    #[test]
    fn backward_is_reversed_forward() {
        for p in [sine(10.0, 3), PathParams::straight_line(100.0)] {
            let plan = build_run_plan(&p, &BoxGeometry::default(), 0.25).unwrap();
            let f = &plan.phase(Phase::Forward).points;
            let b = &plan.phase(Phase::Backward).points;
            assert_eq!(f.len(), b.len());
            assert!(f.iter().rev().zip(b).all(|(x, y)| x == y));
        }
    }

    #[test]
    fn approach_is_tangent_at_entry() {
        let p = sine(10.0, 2);
        let plan = build_run_plan(&p, &BoxGeometry::default(), 0.1).unwrap();
        let a = plan.phase(Phase::Approach);
        let entry = plan.phase(Phase::Forward).points[0];
        assert!(a.points.last().unwrap().distance(entry) < 1e-12);
        let dir = entry.sub(a.points[0]).normalized();
        assert!(dir.cross(tangent(&p, 0.0)).abs() < 1e-12);
        assert!((path_length(&a.points).unwrap() - DEFAULT_APPROACH_LENGTH).abs() < 1e-9);
    }

    #[test]
    fn turn_returns_to_exit_along_reverse_tangent() {
        let p = sine(10.0, 3);
        let plan = build_run_plan(&p, &BoxGeometry::default(), 0.1).unwrap();
        let turn = &plan.phase(Phase::Turn).points;
        let exit = *plan.phase(Phase::Forward).points.last().unwrap();
        assert!(turn[0].distance(exit) < 1e-9);
        assert!(turn.last().unwrap().distance(exit) < 1e-9);
        let n = turn.len();
        let back_dir = turn[n - 1].sub(turn[n - 2]).normalized();
        assert!(back_dir.add(tangent(&p, 100.0)).norm() < 1e-6);
        // loop stays within the turn radius of the exit axis
        let t = tangent(&p, 100.0);
        for q in turn {
            assert!(q.sub(exit).cross(t).abs() <= 14.0 + 1e-6);
        }
    }

    #[test]
    fn forward_lies_in_central_box() {
        let b = BoxGeometry::default();
        let plan = build_run_plan(&sine(45.0, 9), &b, 0.5).unwrap();
        assert!(plan.phase(Phase::Forward).points.iter().all(|p| b.contains(*p)));
    }

    #[test]
    fn square_wave_and_circle_sample() {
        let sq = make_path(PathFamily::SquareWave, 5.0, 4.0, 100.0).unwrap();
        let s = sample_reference(&sq, 0.5).unwrap();
        let l = path_length(&s.points).unwrap();
        // 100 m horizontal plus 2·5 + 3·10 m of vertical jumps
        assert!((l - 140.0).abs() < 1e-6, "{l}");
        let c = make_path(PathFamily::Circle, 14.0, 0.0, 100.0).unwrap();
        let s = sample_reference(&c, 0.5).unwrap();
        assert!((path_length(&s.points).unwrap() - TAU * 14.0).abs() < 0.01);
        assert_eq!(s.points[0], evaluate_path(&c, 0.0).unwrap());
        let plan = build_run_plan(&c, &BoxGeometry::default(), 0.5).unwrap();
        assert_eq!(*plan.phase(Phase::Forward).abscissa.last().unwrap(), 100.0);
        assert!(plan.phase(Phase::Forward).abscissa.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn reference_csv_round_trip() {
        let s = sample_reference(&sine(10.0, 2), 5.0).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("w,x,y,phase\n"));
        assert_eq!(ReferenceSeries::from_csv(&csv).unwrap(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn curvature_scales_with_amplitude_and_square_of_hemi_periods(a in 0.5..45.0f64, k in 1u32..10, m in 1u32..4) {
            let base = max_curvature(&sine(a, k));
            let wider = max_curvature(&make_path(PathFamily::Sine, a * m as f64, k as f64, 100.0).unwrap());
            let faster = max_curvature(&sine(a, k * m));
            prop_assert!((wider - m as f64 * base).abs() <= 1e-12 * wider);
            prop_assert!((faster - (m * m) as f64 * base).abs() <= 1e-12 * faster);
        }

        #[test]
        fn backward_phase_reverses_forward(a in 0.0..40.0f64, k in 0u32..10, spacing in 0.2..1.5f64) {
            let p = make_path(PathFamily::Sine, a, k as f64, 100.0).unwrap();
            let plan = build_run_plan(&p, &BoxGeometry::default(), spacing).unwrap();
            let f = &plan.phase(Phase::Forward).points;
            let b = &plan.phase(Phase::Backward).points;
            prop_assert_eq!(f.len(), b.len());
            prop_assert!(f.iter().rev().zip(b).all(|(x, y)| x == y));
        }

        #[test]
        fn border_points_sample_as_straight_line(a in 0.0..45.0f64, k in 0u32..10, spacing in 0.2..2.0f64) {
            let c = sample_reference(&PathParams::straight_line(100.0), spacing).unwrap();
            let on_a = sample_reference(&make_path(PathFamily::Sine, a, 0.0, 100.0).unwrap(), spacing).unwrap();
            let on_k = sample_reference(&make_path(PathFamily::Sine, 0.0, k as f64, 100.0).unwrap(), spacing).unwrap();
            prop_assert_eq!(&on_a, &c);
            prop_assert_eq!(&on_k, &c);
        }

        #[test]
        fn chord_length_is_below_arc_length(a in 1.0..45.0f64, k in 1u32..10, spacing in 0.3..3.0f64) {
            let p = sine(a, k);
            let coarse = path_length(&sample_reference(&p, spacing).unwrap().points).unwrap();
            let fine = path_length(&sample_reference(&p, spacing / 2.0).unwrap().points).unwrap();
            let arc = dense_arc_length(&p, 0.0, 100.0);
            prop_assert!(coarse <= fine + 1e-9);
            prop_assert!(fine <= arc + 1e-6);
        }

        #[test]
        fn evaluation_is_reproducible(a in 0.0..45.0f64, k in 0u32..10, w in 0.0..100.0f64) {
            let p = make_path(PathFamily::Sine, a, k as f64, 100.0).unwrap();
            prop_assert_eq!(evaluate_path(&p, w).unwrap(), evaluate_path(&p, w).unwrap());
        }
    }

    #[test]
    fn path_params_json_shape() {
        let p = sine(10.0, 2);
        let v: serde_json::Value = serde_json::to_value(p).unwrap();
        assert_eq!(v["family"], "sine");
        assert_eq!(v["x2"], 2);
        assert_eq!(v["W"], 100.0);
        let back: PathParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
