//! Design space and classical design generators.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("invalid design space: {0}")]
    Space(String),
    #[error("infeasible design: {0}")]
    Infeasible(String),
    #[error("point ({x1}, {x2}) lies outside the design space")]
    Outside { x1: f64, x2: u32 },
    #[error("empty response vector")]
    EmptyResponses,
    #[error("malformed design file: {0}")]
    Parse(String),
}

const EPS: f64 = 1e-9;

/// A point of the path-parameter space: amplitude `x1` and hemi-periods `x2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub x1: f64,
    pub x2: u32,
}

impl DesignPoint {
    pub const STRAIGHT: DesignPoint = DesignPoint { x1: 0.0, x2: 0 };

    pub fn new(x1: f64, x2: u32) -> Self {
        DesignPoint { x1, x2 }
    }

    /// True on the axes, where every member is the straight line.
    pub fn is_border(&self) -> bool {
        self.x1 == 0.0 || self.x2 == 0
    }

    pub fn same(&self, other: &DesignPoint) -> bool {
        self.x2 == other.x2 && (self.x1 - other.x1).abs() < EPS
    }

    pub fn coords(&self) -> [f64; 2] {
        [self.x1, self.x2 as f64]
    }

    fn key(&self) -> (i64, u32) {
        ((self.x1 * 1e6).round() as i64, self.x2)
    }
}

impl fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x1, self.x2)
    }
}

/// Amplitudes on a regular lattice over `[x1_min, x1_max]` and hemi-period
/// levels `0..=x2_max`. The straight line `(0, 0)` is always a member.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpace {
    pub x1_min: f64,
    pub x1_max: f64,
    /// Spacing of the amplitude lattice used for generated points.
    pub x1_pitch: f64,
    pub x2_max: u32,
}

impl Default for DesignSpace {
    fn default() -> Self {
        DesignSpace { x1_min: 0.0, x1_max: 45.0, x1_pitch: 5.0, x2_max: 9 }
    }
}

impl DesignSpace {
    pub fn validate(&self) -> Result<(), DesignError> {
        if !(self.x1_min.is_finite() && self.x1_max.is_finite() && self.x1_min >= 0.0 && self.x1_max > self.x1_min) {
            return Err(DesignError::Space(format!("bad amplitude range [{}, {}]", self.x1_min, self.x1_max)));
        }
        if !(self.x1_pitch.is_finite() && self.x1_pitch > 0.0) {
            return Err(DesignError::Space(format!("bad amplitude pitch {}", self.x1_pitch)));
        }
        let steps = (self.x1_max - self.x1_min) / self.x1_pitch;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(DesignError::Space("amplitude range is not a whole number of pitches".into()));
        }
        if self.x2_max == 0 {
            return Err(DesignError::Space("need at least one non-zero hemi-period level".into()));
        }
        Ok(())
    }

    pub fn with_pitch(self, pitch: f64) -> Self {
        DesignSpace { x1_pitch: pitch, ..self }
    }

    pub fn amplitude_levels(&self) -> Vec<f64> {
        let steps = ((self.x1_max - self.x1_min) / self.x1_pitch).round() as usize;
        (0..=steps).map(|k| self.x1_min + k as f64 * self.x1_pitch).collect()
    }

    pub fn hemi_levels(&self) -> Vec<u32> {
        (0..=self.x2_max).collect()
    }

    pub fn contains(&self, p: &DesignPoint) -> bool {
        if p.same(&DesignPoint::STRAIGHT) {
            return true;
        }
        p.x1.is_finite() && p.x1 >= self.x1_min - EPS && p.x1 <= self.x1_max + EPS && p.x2 <= self.x2_max
    }

    /// Lattice points off the axes, in canonical (x1, then x2) order.
    pub fn interior_lattice(&self) -> Vec<DesignPoint> {
        let mut out = Vec::new();
        for a in self.amplitude_levels() {
            if a <= 0.0 {
                continue;
            }
            for h in 1..=self.x2_max {
                out.push(DesignPoint::new(a, h));
            }
        }
        out
    }

    /// Nearest amplitude lattice value.
    pub fn snap_x1(&self, x1: f64) -> f64 {
        let k = ((x1 - self.x1_min) / self.x1_pitch).round();
        self.x1_min + k * self.x1_pitch
    }

    /// Bounding box `[x1_min, x1_max] × [0, x2_max]`.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        ([self.x1_min.min(0.0), 0.0], [self.x1_max, self.x2_max as f64])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    StraightLine,
    Lhs,
    Ccd,
    Reallocated,
    FullFactorial,
    Manual,
    /// Location of the largest predictor MSE.
    MseMax,
    /// Neighbour of the largest-MSE location.
    MseNeighbor,
    /// Uniform draw over unvisited points.
    Random,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::StraightLine => "straight_line",
            Provenance::Lhs => "lhs",
            Provenance::Ccd => "ccd",
            Provenance::Reallocated => "reallocated",
            Provenance::FullFactorial => "full_factorial",
            Provenance::Manual => "manual",
            Provenance::MseMax => "mse_max",
            Provenance::MseNeighbor => "mse_neighbor",
            Provenance::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Provenance> {
        use Provenance::*;
        [StraightLine, Lhs, Ccd, Reallocated, FullFactorial, Manual, MseMax, MseNeighbor, Random]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignEntry {
    #[serde(flatten)]
    pub point: DesignPoint,
    pub provenance: Provenance,
}

/// Ordered design points with provenance tags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub entries: Vec<DesignEntry>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self) -> Vec<DesignPoint> {
        self.entries.iter().map(|e| e.point).collect()
    }

    pub fn push(&mut self, point: DesignPoint, provenance: Provenance) {
        self.entries.push(DesignEntry { point, provenance });
    }

    pub fn contains(&self, p: &DesignPoint) -> bool {
        self.entries.iter().any(|e| e.point.same(p))
    }

    /// Checks membership in the space and absence of duplicates.
    pub fn validate(&self, space: &DesignSpace) -> Result<(), DesignError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !space.contains(&e.point) {
                return Err(DesignError::Outside { x1: e.point.x1, x2: e.point.x2 });
            }
            if !seen.insert(e.point.key()) {
                return Err(DesignError::Infeasible(format!("duplicate point {}", e.point)));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,provenance\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.point.x1, e.point.x2, e.provenance.as_str()));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Design, DesignError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "x1,x2,provenance" => {}
            other => return Err(DesignError::Parse(format!("unexpected header {other:?}"))),
        }
        let mut d = Design::default();
        for (i, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || DesignError::Parse(format!("row {}: {line}", i + 1));
            if cols.len() != 3 {
                return Err(bad());
            }
            let x1: f64 = cols[0].parse().map_err(|_| bad())?;
            let x2: u32 = cols[1].parse().map_err(|_| bad())?;
            let prov = Provenance::parse(cols[2]).ok_or_else(bad)?;
            d.push(DesignPoint::new(x1, x2), prov);
        }
        Ok(d)
    }
}

/// Latin hypercube with the straight line as its first point.
///
/// Amplitudes sweep one lattice value per equal-width stratum; hemi-period
/// levels `1..=x2_max` are drawn without replacement (or from a shuffled
/// stratified rounding when there are fewer levels than points).
pub fn lhs(space: &DesignSpace, n: usize, seed: u64) -> Result<Design, DesignError> {
    space.validate()?;
    if n < 2 {
        return Err(DesignError::Infeasible(format!("LHS needs at least 2 points, got {n}")));
    }
    let span = space.x1_max - space.x1_min;
    let width = span / n as f64;
    let lattice = space.amplitude_levels();
    let mut x1 = Vec::with_capacity(n);
    for i in 0..n {
        let target = space.x1_min + span * i as f64 / (n - 1) as f64;
        let lo = space.x1_min + width * i as f64;
        let hi = if i + 1 == n { f64::INFINITY } else { space.x1_min + width * (i + 1) as f64 - EPS };
        let pick = lattice
            .iter()
            .copied()
            .filter(|&a| a >= lo - EPS && a < hi)
            .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()));
        match pick {
            Some(a) => x1.push(a),
            None => {
                return Err(DesignError::Infeasible(format!(
                    "amplitude stratum [{lo}, {hi}) holds no lattice value at pitch {}",
                    space.x1_pitch
                )))
            }
        }
    }
    if x1[0] != 0.0 {
        return Err(DesignError::Infeasible("the first amplitude stratum must contain 0".into()));
    }

    let mut rng = substream(seed, 0x4c48_53);
    let m = n - 1;
    let levels = space.x2_max as usize;
    let x2: Vec<u32> = if levels >= m {
        index::sample(&mut rng, levels, m).into_iter().map(|k| k as u32 + 1).collect()
    } else {
        let mut strata: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        strata.into_iter().map(|j| 1 + (j * levels / m) as u32).collect()
    };

    let mut d = Design::default();
    d.push(DesignPoint::STRAIGHT, Provenance::StraightLine);
    for i in 1..n {
        d.push(DesignPoint::new(x1[i], x2[i - 1]), Provenance::Lhs);
    }
    d.validate(space)?;
    Ok(d)
}

/// Checks the stratification properties of a first-step design: the straight
/// line first, one amplitude per equal-width stratum, and hemi-period levels
/// used as evenly as the level count allows.
pub fn validate_lhs(space: &DesignSpace, design: &Design) -> Result<(), String> {
    let n = design.len();
    if n < 2 {
        return Err("fewer than two points".into());
    }
    design.validate(space).map_err(|e| e.to_string())?;
    if !design.entries[0].point.same(&DesignPoint::STRAIGHT) {
        return Err("first point is not the straight line".into());
    }
    let width = (space.x1_max - space.x1_min) / n as f64;
    let mut hits = vec![0usize; n];
    for e in &design.entries {
        let s = (((e.point.x1 - space.x1_min) / width + EPS).floor() as usize).min(n - 1);
        hits[s] += 1;
    }
    if let Some(s) = hits.iter().position(|&h| h != 1) {
        return Err(format!("amplitude stratum {s} holds {} points", hits[s]));
    }
    // level 0 belongs to the straight line; the others share n - 1 points
    let levels = space.x2_max as usize;
    let mut counts = vec![0usize; levels + 1];
    for e in &design.entries {
        counts[e.point.x2 as usize] += 1;
    }
    if counts[0] != 1 {
        return Err(format!("hemi-period level 0 used {} times", counts[0]));
    }
    let cap = (n - 1).div_ceil(levels);
    if let Some(l) = counts.iter().skip(1).position(|&c| c > cap) {
        return Err(format!("hemi-period level {} used {} times", l + 1, counts[l + 1]));
    }
    Ok(())
}

/// Step of a central composite design, in design units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcdStep {
    pub dx1: f64,
    pub dx2: f64,
    /// Axial distance as a multiple of the step.
    pub alpha: f64,
}

impl Default for CcdStep {
    fn default() -> Self {
        CcdStep { dx1: 5.0, dx2: 1.0, alpha: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    OutsideSpace,
    /// On an axis, where the point is the straight line.
    Border,
    AlreadyExecuted,
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reallocation {
    pub candidate_x1: f64,
    pub candidate_x2: i64,
    pub reason: RejectReason,
    pub replacement: DesignPoint,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CcdOutcome {
    pub design: Design,
    pub reallocations: Vec<Reallocation>,
}

/// The eight factorial and axial candidates around `center`, factorial first.
pub fn ccd_candidates(space: &DesignSpace, center: DesignPoint, step: &CcdStep) -> Vec<(f64, i64)> {
    let (c1, c2) = (center.x1, center.x2 as f64);
    let offsets = [
        (-step.dx1, -step.dx2),
        (-step.dx1, step.dx2),
        (step.dx1, -step.dx2),
        (step.dx1, step.dx2),
        (-step.alpha * step.dx1, 0.0),
        (step.alpha * step.dx1, 0.0),
        (0.0, -step.alpha * step.dx2),
        (0.0, step.alpha * step.dx2),
    ];
    offsets
        .iter()
        .map(|&(a, b)| (space.snap_x1(c1 + a), (c2 + b).round() as i64))
        .collect()
}

/// Draws uniformly from unvisited interior lattice points.
pub(crate) struct Pool {
    free: Vec<DesignPoint>,
}

impl Pool {
    pub(crate) fn new(space: &DesignSpace, taken: &[DesignPoint]) -> Self {
        let taken: HashSet<_> = taken.iter().map(|p| p.key()).collect();
        Pool { free: space.interior_lattice().into_iter().filter(|p| !taken.contains(&p.key())).collect() }
    }

    pub(crate) fn take(&mut self, p: &DesignPoint) -> bool {
        match self.free.iter().position(|q| q.same(p)) {
            Some(i) => {
                self.free.remove(i);
                true
            }
            None => false,
        }
    }

    pub(crate) fn draw<R: Rng>(&mut self, rng: &mut R) -> Option<DesignPoint> {
        if self.free.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.free.len());
        Some(self.free.remove(i))
    }

    pub(crate) fn free(&self) -> &[DesignPoint] {
        &self.free
    }
}

/// Central composite design around `center`. Candidates that fall outside the
/// space, on an axis, on an executed point or on another candidate are
/// replaced by uniform draws over unvisited lattice points.
pub fn ccd(
    space: &DesignSpace,
    center: DesignPoint,
    step: &CcdStep,
    executed: &[DesignPoint],
    seed: u64,
) -> Result<CcdOutcome, DesignError> {
    ccd_budgeted(space, &[(center, 8)], step, executed, seed)
}

/// CCDs around several centres, each using its first `budget` candidates in
/// canonical order (factorial, then axial). Rejected candidates are
/// reallocated after all centres have claimed their feasible points.
pub fn ccd_budgeted(
    space: &DesignSpace,
    centres: &[(DesignPoint, usize)],
    step: &CcdStep,
    executed: &[DesignPoint],
    seed: u64,
) -> Result<CcdOutcome, DesignError> {
    space.validate()?;
    if !(step.dx1 > 0.0 && step.dx2 > 0.0 && step.alpha > 0.0) {
        return Err(DesignError::Infeasible(format!("bad CCD step {step:?}")));
    }
    for (c, b) in centres {
        if !space.contains(c) {
            return Err(DesignError::Outside { x1: c.x1, x2: c.x2 });
        }
        if *b > 8 {
            return Err(DesignError::Infeasible(format!("a CCD has 8 points, budget {b} requested")));
        }
    }
    let mut pool = Pool::new(space, executed);
    let mut design = Design::default();
    let mut rejected = Vec::new();
    for (c, budget) in centres {
        for (x1, x2) in ccd_candidates(space, *c, step).into_iter().take(*budget) {
            let p = DesignPoint::new(x1, x2.max(0) as u32);
            let reason = if x2 < 0 || x1 < space.x1_min - EPS || !space.contains(&p) {
                Some(RejectReason::OutsideSpace)
            } else if p.is_border() {
                Some(RejectReason::Border)
            } else if executed.iter().any(|q| q.same(&p)) {
                Some(RejectReason::AlreadyExecuted)
            } else if design.contains(&p) {
                Some(RejectReason::Duplicate)
            } else {
                None
            };
            match reason {
                None => {
                    pool.take(&p);
                    design.push(p, Provenance::Ccd);
                }
                Some(r) => rejected.push((x1, x2, r)),
            }
        }
    }
    let mut rng = substream(seed, 0x4343_44);
    let mut reallocations = Vec::new();
    for (x1, x2, reason) in rejected {
        let replacement = pool
            .draw(&mut rng)
            .ok_or_else(|| DesignError::Infeasible("no unvisited points left for reallocation".into()))?;
        design.push(replacement, Provenance::Reallocated);
        reallocations.push(Reallocation { candidate_x1: x1, candidate_x2: x2, reason, replacement });
    }
    Ok(CcdOutcome { design, reallocations })
}

/// Cartesian product of the levels plus the straight line, deduplicated.
pub fn full_factorial(amplitudes: &[f64], hemi_periods: &[u32]) -> Design {
    let mut d = Design::default();
    d.push(DesignPoint::STRAIGHT, Provenance::StraightLine);
    for &a in amplitudes {
        for &h in hemi_periods {
            let p = DesignPoint::new(a, h);
            if !d.contains(&p) {
                d.push(p, Provenance::FullFactorial);
            }
        }
    }
    d
}

/// Rule for picking the local maxima of the first-step responses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "epsilon")]
pub enum MaximaRule {
    /// The single argmax.
    #[default]
    Argmax,
    /// Every response above the threshold.
    Threshold(f64),
    /// Every response within the tolerance of the maximum.
    Difference(f64),
}

/// Indices selected by `rule`; ties in the argmax go to the lowest index.
pub fn select_maxima(y: &[f64], rule: MaximaRule) -> Result<Vec<usize>, DesignError> {
    if y.is_empty() {
        return Err(DesignError::EmptyResponses);
    }
    let mut im = 0;
    for (i, v) in y.iter().enumerate() {
        if *v > y[im] {
            im = i;
        }
    }
    Ok(match rule {
        MaximaRule::Argmax => vec![im],
        MaximaRule::Threshold(eps) => (0..y.len()).filter(|&i| y[i] > eps).collect(),
        MaximaRule::Difference(eps) => (0..y.len()).filter(|&i| (y[im] - y[i]).abs() < eps || i == im).collect(),
    })
}
