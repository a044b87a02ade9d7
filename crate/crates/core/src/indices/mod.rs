//! Performance indices of a path-following run.

mod area;
mod hausdorff;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{max_curvature, PathParams, Phase, Point, RunPlan};
use crate::sim::{Sample, Telemetry};

pub use area::{area_index, chain_crossings, enclosed_area, shoelace_area, Crossing};
pub use hausdorff::{directed_hausdorff, hausdorff, PointGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("{what}: need at least {needed}, got {got}")]
    Insufficient { what: &'static str, needed: usize, got: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("reference has zero length")]
    ZeroLength,
    #[error("missing {0} channel")]
    MissingChannel(&'static str),
    #[error("transient window holds fewer than two samples")]
    EmptyWindow,
    #[error("records belong to different paths")]
    MismatchedPaths,
    #[error("{0} phase has fewer than two samples inside the central box")]
    OutsideBox(Phase),
}

/// All index values for one run (or one direction of it).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    #[serde(rename = "D_A")]
    pub d_a: f64,
    #[serde(rename = "D_H")]
    pub d_h: f64,
    pub xte_mean: f64,
    pub xte_std: f64,
    pub xte_decrease_max: f64,
    pub rudder_mean_abs: f64,
    pub rudder_max_abs: f64,
    pub thrust_energy: f64,
    /// Infinite for the square wave; serialized as `null`.
    #[serde(rename = "k_MAX", with = "inf_as_null")]
    pub k_max: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub const RECORD_CSV_HEADER: &str =
    "x1,x2,run_id,D_A,D_H,xte_mean,xte_std,xte_decrease_max,rudder_mean_abs,rudder_max_abs,thrust_energy,k_MAX";

impl PerformanceRecord {
    fn fields(&self) -> [f64; 9] {
        [
            self.d_a,
            self.d_h,
            self.xte_mean,
            self.xte_std,
            self.xte_decrease_max,
            self.rudder_mean_abs,
            self.rudder_max_abs,
            self.thrust_energy,
            self.k_max,
        ]
    }

    fn from_fields(f: [f64; 9]) -> Self {
        PerformanceRecord {
            d_a: f[0],
            d_h: f[1],
            xte_mean: f[2],
            xte_std: f[3],
            xte_decrease_max: f[4],
            rudder_mean_abs: f[5],
            rudder_max_abs: f[6],
            thrust_energy: f[7],
            k_max: f[8],
        }
    }

    pub fn value(&self, kind: IndexKind) -> f64 {
        match kind {
            IndexKind::Area => self.d_a,
            IndexKind::Hausdorff => self.d_h,
            IndexKind::Xte => self.xte_mean,
            IndexKind::XteStd => self.xte_std,
            IndexKind::XteDecrease => self.xte_decrease_max,
            IndexKind::Rudder => self.rudder_mean_abs,
            IndexKind::RudderMax => self.rudder_max_abs,
            IndexKind::Energy => self.thrust_energy,
        }
    }

    /// One CSV row matching [`RECORD_CSV_HEADER`].
    pub fn csv_row(&self, x1: f64, x2: u32, run_id: &str) -> String {
        let mut row = format!("{x1},{x2},{run_id}");
        for v in self.fields() {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row
    }

    /// Parses a row written by [`csv_row`](Self::csv_row).
    pub fn parse_csv_row(row: &str) -> Option<(f64, u32, String, PerformanceRecord)> {
        let cols: Vec<&str> = row.trim().split(',').collect();
        if cols.len() != 12 {
            return None;
        }
        let mut f = [0.0; 9];
        for (slot, c) in f.iter_mut().zip(&cols[3..]) {
            *slot = c.parse().ok()?;
        }
        Some((cols[0].parse().ok()?, cols[1].parse().ok()?, cols[2].to_string(), Self::from_fields(f)))
    }
}

/// Scalar index used as the response of a design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    #[default]
    Area,
    Hausdorff,
    Xte,
    XteStd,
    XteDecrease,
    Rudder,
    RudderMax,
    Energy,
}

impl IndexKind {
    pub const ALL: [IndexKind; 8] = [
        IndexKind::Area,
        IndexKind::Hausdorff,
        IndexKind::Xte,
        IndexKind::XteStd,
        IndexKind::XteDecrease,
        IndexKind::Rudder,
        IndexKind::RudderMax,
        IndexKind::Energy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Area => "area",
            IndexKind::Hausdorff => "hausdorff",
            IndexKind::Xte => "xte",
            IndexKind::XteStd => "xte_std",
            IndexKind::XteDecrease => "xte_decrease",
            IndexKind::Rudder => "rudder",
            IndexKind::RudderMax => "rudder_max",
            IndexKind::Energy => "energy",
        }
    }

    pub fn parse(s: &str) -> Option<IndexKind> {
        IndexKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Mean and sample standard deviation of |xte|.
pub fn xte_stats(xte: &[f64]) -> Result<(f64, f64), IndexError> {
    if xte.len() < 2 {
        return Err(IndexError::Insufficient { what: "xte samples", needed: 2, got: xte.len() });
    }
    if xte.iter().any(|v| v.is_nan()) {
        return Err(IndexError::MissingChannel("xte"));
    }
    let n = xte.len() as f64;
    let mean = xte.iter().map(|v| v.abs()).sum::<f64>() / n;
    let var = xte.iter().map(|v| (v.abs() - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "tolerance")]
pub enum TransientWindow {
    /// From the phase start through the first sample with |xte| below the
    /// tolerance (whole series if none is).
    UntilBelow(f64),
    Whole,
}

impl Default for TransientWindow {
    fn default() -> Self {
        TransientWindow::UntilBelow(0.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateStatistic {
    #[default]
    Max,
    Mean,
}

/// Statistic of the consecutive drops `|xte_i| − |xte_{i+1}|` over the window.
pub fn xte_decreasing_rate(xte: &[f64], window: TransientWindow, stat: RateStatistic) -> Result<f64, IndexError> {
    let end = match window {
        TransientWindow::Whole => xte.len(),
        TransientWindow::UntilBelow(tol) => xte.iter().position(|v| v.abs() < tol).map_or(xte.len(), |i| i + 1),
    };
    let w = &xte[..end];
    if w.len() < 2 {
        return Err(IndexError::EmptyWindow);
    }
    let drops = w.windows(2).map(|p| p[0].abs() - p[1].abs());
    Ok(match stat {
        RateStatistic::Max => drops.fold(f64::NEG_INFINITY, f64::max),
        RateStatistic::Mean => drops.sum::<f64>() / (w.len() - 1) as f64,
    })
}

/// Mean and maximum of |rudder|, degrees.
pub fn rudder_stress(rudder: &[f64]) -> Result<(f64, f64), IndexError> {
    if rudder.is_empty() || rudder.iter().any(|v| v.is_nan()) {
        return Err(IndexError::MissingChannel("rudder"));
    }
    let mean = rudder.iter().map(|v| v.abs()).sum::<f64>() / rudder.len() as f64;
    let max = rudder.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((mean, max))
}

/// Mean over consecutive samples of `thrust_i · ‖p_{i+1} − p_i‖`.
pub fn thruster_energy(thrust: &[f64], positions: &[Point]) -> Result<f64, IndexError> {
    if thrust.iter().any(|v| v.is_nan()) {
        return Err(IndexError::MissingChannel("thrust"));
    }
    let n = thrust.len().min(positions.len());
    if n < 2 {
        return Err(IndexError::Insufficient { what: "thrust samples", needed: 2, got: n });
    }
    let total: f64 = (0..n - 1).map(|i| thrust[i] * positions[i].distance(positions[i + 1])).sum();
    Ok(total / (n - 1) as f64)
}

/// Signed distance from each position to the nearest reference segment,
/// positive to port. Used for telemetry that carries no xte channel.
pub fn geometric_xte(positions: &[Point], reference: &[Point]) -> Result<Vec<f64>, IndexError> {
    if reference.len() < 2 {
        return Err(IndexError::Insufficient { what: "reference points", needed: 2, got: reference.len() });
    }
    let mut out = Vec::with_capacity(positions.len());
    for &p in positions {
        let mut best = f64::INFINITY;
        let mut signed = 0.0;
        for s in reference.windows(2) {
            let d = s[1].sub(s[0]);
            let len2 = d.dot(d);
            if len2 == 0.0 {
                continue;
            }
            let t = (p.sub(s[0]).dot(d) / len2).clamp(0.0, 1.0);
            let dist = p.distance(s[0].add(d.scale(t)));
            if dist < best {
                best = dist;
                signed = if d.cross(p.sub(s[0])) < 0.0 { -dist } else { dist };
            }
        }
        out.push(signed);
    }
    Ok(out)
}

/// Combines the forward and backward records of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalRecord {
    pub path: PathParams,
    pub direction: Phase,
    pub record: PerformanceRecord,
}

/// Field-wise mean of the forward and backward records.
pub fn aggregate_forth_back(forth: &DirectionalRecord, back: &DirectionalRecord) -> Result<PerformanceRecord, IndexError> {
    if forth.path != back.path {
        return Err(IndexError::MismatchedPaths);
    }
    let a = forth.record.fields();
    let b = back.record.fields();
    let mut m = [0.0; 9];
    for i in 0..9 {
        m[i] = if a[i] == b[i] { a[i] } else { 0.5 * (a[i] + b[i]) };
    }
    Ok(PerformanceRecord::from_fields(m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XteSource {
    /// The controller's own xte channel.
    #[default]
    Telemetry,
    /// Distance to the nearest reference segment.
    Geometric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringSettings {
    /// Average forward and backward records; when false the forward record is
    /// the run's response.
    pub aggregate: bool,
    pub transient_window: TransientWindow,
    pub rate_statistic: RateStatistic,
    pub xte_source: XteSource,
}

impl Default for ScoringSettings {
    fn default() -> Self {
        ScoringSettings {
            aggregate: true,
            transient_window: TransientWindow::default(),
            rate_statistic: RateStatistic::default(),
            xte_source: XteSource::default(),
        }
    }
}

/// Scores one direction (forward or backward) of a run over its central-box
/// samples.
pub fn score_direction(
    telemetry: &Telemetry,
    plan: &RunPlan,
    direction: Phase,
    settings: &ScoringSettings,
) -> Result<DirectionalRecord, IndexError> {
    let inside: Vec<&Sample> = telemetry
        .phase_samples(direction)
        .iter()
        .filter(|s| plan.box_geometry.contains(s.position()))
        .collect();
    if inside.len() < 2 {
        return Err(IndexError::OutsideBox(direction));
    }
    let v: Vec<Point> = inside.iter().map(|s| s.position()).collect();
    let r = &plan.phase(direction).points;
    let xte: Vec<f64> = match settings.xte_source {
        XteSource::Telemetry => inside.iter().map(|s| s.xte).collect(),
        XteSource::Geometric => geometric_xte(&v, r)?,
    };
    let rudder: Vec<f64> = inside.iter().map(|s| s.rudder).collect();
    let thrust: Vec<f64> = inside.iter().map(|s| s.thrust).collect();

    let (xte_mean, xte_std) = xte_stats(&xte)?;
    let xte_decrease_max = match xte_decreasing_rate(&xte, settings.transient_window, settings.rate_statistic) {
        Ok(v) => v,
        Err(IndexError::EmptyWindow) => 0.0,
        Err(e) => return Err(e),
    };
    let (rudder_mean_abs, rudder_max_abs) = rudder_stress(&rudder)?;
    let record = PerformanceRecord {
        d_a: area_index(&v, r)?,
        d_h: hausdorff(&v, r)?,
        xte_mean,
        xte_std,
        xte_decrease_max,
        rudder_mean_abs,
        rudder_max_abs,
        thrust_energy: thruster_energy(&thrust, &v)?,
        k_max: max_curvature(&plan.path),
    };
    Ok(DirectionalRecord { path: plan.path, direction, record })
}

/// Per-direction records and the run's response record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub forth: PerformanceRecord,
    pub back: PerformanceRecord,
    pub record: PerformanceRecord,
}

pub fn score_run(telemetry: &Telemetry, plan: &RunPlan, settings: &ScoringSettings) -> Result<RunScores, IndexError> {
    let f = score_direction(telemetry, plan, Phase::Forward, settings)?;
    let b = score_direction(telemetry, plan, Phase::Backward, settings)?;
    let record = if settings.aggregate { aggregate_forth_back(&f, &b)? } else { f.record };
    Ok(RunScores { forth: f.record, back: b.record, record })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_run_plan, make_path, BoxGeometry, PathFamily, DEFAULT_SPACING};
    use crate::sim::{simulate_run, NoiseParams, VehicleParams};

    fn record(d_a: f64) -> PerformanceRecord {
        PerformanceRecord {
            d_a,
            d_h: 1.0,
            xte_mean: 0.5,
            xte_std: 0.1,
            xte_decrease_max: 0.01,
            rudder_mean_abs: 2.0,
            rudder_max_abs: 10.0,
            thrust_energy: 3.0,
            k_max: 0.0,
        }
    }

    #[test]
    fn xte_stats_examples() {
        assert_eq!(xte_stats(&[2.0, 2.0, -2.0]).unwrap(), (2.0, 0.0));
        let (m, s) = xte_stats(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(xte_stats(&[1.0]).is_err());
        assert_eq!(xte_stats(&[1.0, f64::NAN]), Err(IndexError::MissingChannel("xte")));
    }

    #[test]
    fn decreasing_rate_examples() {
        let w = TransientWindow::default();
        assert_eq!(xte_decreasing_rate(&[4.0, 2.0, 1.0, 1.0], w, RateStatistic::Max).unwrap(), 2.0);
        assert_eq!(xte_decreasing_rate(&[3.0; 5], w, RateStatistic::Max).unwrap(), 0.0);
        assert_eq!(xte_decreasing_rate(&[4.0, 2.0, 1.0, 1.0], w, RateStatistic::Mean).unwrap(), 1.0);
        // the window stops at the first sample below tolerance
        let s = [1.0, 0.5, 0.05, 3.0, 0.0];
        assert_eq!(xte_decreasing_rate(&s, TransientWindow::UntilBelow(0.1), RateStatistic::Max).unwrap(), 0.5);
        assert_eq!(xte_decreasing_rate(&s, TransientWindow::Whole, RateStatistic::Max).unwrap(), 3.0);
        assert_eq!(xte_decreasing_rate(&[0.0, 1.0], w, RateStatistic::Max), Err(IndexError::EmptyWindow));
    }

    #[test]
    fn rudder_and_energy_examples() {
        assert_eq!(rudder_stress(&[5.0; 4]).unwrap(), (5.0, 5.0));
        assert_eq!(rudder_stress(&[10.0, -10.0, 10.0, -10.0]).unwrap(), (10.0, 10.0));
        assert!(rudder_stress(&[]).is_err());
        let pos: Vec<Point> = (0..10).map(|i| Point::new(0.3 * i as f64, 0.0)).collect();
        let e = thruster_energy(&[7.0; 10], &pos).unwrap();
        assert!((e - 2.1).abs() < 1e-12);
        assert_eq!(thruster_energy(&[0.0; 10], &pos).unwrap(), 0.0);
    }

    #[test]
    fn aggregation() {
        let p = make_path(PathFamily::Sine, 10.0, 2.0, 100.0).unwrap();
        let f = DirectionalRecord { path: p, direction: Phase::Forward, record: record(1.0) };
        let b = DirectionalRecord { path: p, direction: Phase::Backward, record: record(3.0) };
        assert_eq!(aggregate_forth_back(&f, &f).unwrap(), f.record);
        assert_eq!(aggregate_forth_back(&f, &b).unwrap().d_a, 2.0);
        let other = DirectionalRecord { path: make_path(PathFamily::Sine, 5.0, 2.0, 100.0).unwrap(), ..b };
        assert_eq!(aggregate_forth_back(&f, &other), Err(IndexError::MismatchedPaths));
    }

    #[test]
    fn record_serialization() {
        let mut r = record(1.25);
        r.k_max = f64::INFINITY;
        let j = serde_json::to_string(&r).unwrap();
        assert!(j.contains("\"D_A\":1.25") && j.contains("\"k_MAX\":null"));
        let back: PerformanceRecord = serde_json::from_str(&j).unwrap();
        assert_eq!(back, r);
        let row = r.csv_row(12.5, 3, "run-7");
        assert_eq!(row.split(',').count(), RECORD_CSV_HEADER.split(',').count());
        let (x1, x2, id, parsed) = PerformanceRecord::parse_csv_row(&row).unwrap();
        assert_eq!((x1, x2, id.as_str(), parsed), (12.5, 3, "run-7", r));
    }

    #[test]
    fn geometric_xte_matches_brute_force() {
        let r: Vec<Point> = (0..200).map(|i| {
            let x = i as f64 * 0.5;
            Point::new(x, 5.0 * (x * 0.1).sin())
        }).collect();
        for k in 0..300 {
            let p = Point::new(k as f64 * 0.33 - 1.0, ((k * 37) % 23) as f64 - 11.0);
            let g = geometric_xte(&[p], &r).unwrap()[0];
            let mut best = f64::INFINITY;
            for s in r.windows(2) {
                let d = s[1].sub(s[0]);
                let t = (p.sub(s[0]).dot(d) / d.dot(d)).clamp(0.0, 1.0);
                best = best.min(p.distance(s[0].add(d.scale(t))));
            }
            assert!((g.abs() - best).abs() < 1e-12, "{p:?}: {g} vs {best}");
        }
        let on = geometric_xte(&[Point::new(10.0, 5.0 * 1f64.sin() + 1.0)], &r).unwrap()[0];
        assert!(on > 0.0);
    }

    fn plan(family: PathFamily, x1: f64, x2: f64) -> RunPlan {
        let p = make_path(family, x1, x2, 100.0).unwrap();
        build_run_plan(&p, &BoxGeometry::default(), DEFAULT_SPACING).unwrap()
    }

    #[test]
    fn straight_line_pipeline() {
        let plan = plan(PathFamily::StraightLine, 0.0, 0.0);
        let tel = simulate_run(&plan, &VehicleParams::default(), &NoiseParams::noiseless(1)).unwrap();
        let s = score_run(&tel, &plan, &ScoringSettings::default()).unwrap();
        let f = score_direction(&tel, &plan, Phase::Forward, &ScoringSettings::default()).unwrap().record;
        let b = score_direction(&tel, &plan, Phase::Backward, &ScoringSettings::default()).unwrap().record;
        let fv = f.fields();
        let bv = b.fields();
        for (i, v) in s.record.fields().iter().enumerate() {
            assert_eq!(*v, if fv[i] == bv[i] { fv[i] } else { 0.5 * (fv[i] + bv[i]) });
        }
        assert!(s.record.xte_mean < 0.05, "{:?}", s.record);
        assert!(s.record.d_a < 0.05 && s.record.d_h < 0.1);
        let vp = VehicleParams::default();
        assert!(s.forth.rudder_max_abs < vp.max_rudder);
        let rec = s.record;
        assert!(rec.rudder_max_abs >= rec.rudder_mean_abs && rec.xte_std >= 0.0);

        let settings = ScoringSettings { aggregate: false, ..Default::default() };
        assert_eq!(score_run(&tel, &plan, &settings).unwrap().record, f);
    }

    #[test]
    fn simulated_energy_and_rate_match_scans() {
        let plan = plan(PathFamily::Sine, 20.0, 3.0);
        let tel = simulate_run(&plan, &VehicleParams::default(), &NoiseParams { seed: 5, ..Default::default() }).unwrap();
        let s = tel.phase_samples(Phase::Approach);
        let pos: Vec<Point> = s.iter().map(|x| x.position()).collect();
        let thrust: Vec<f64> = s.iter().map(|x| x.thrust).collect();
        let mut acc = 0.0;
        for i in 0..s.len() - 1 {
            let dx = s[i + 1].x - s[i].x;
            let dy = s[i + 1].y - s[i].y;
            acc += s[i].thrust * (dx * dx + dy * dy).sqrt();
        }
        let oracle = acc / (s.len() - 1) as f64;
        assert!((thruster_energy(&thrust, &pos).unwrap() - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));

        let xte: Vec<f64> = s.iter().map(|x| x.xte).collect();
        let mut best = f64::NEG_INFINITY;
        for i in 0..xte.len() - 1 {
            best = best.max(xte[i].abs() - xte[i + 1].abs());
        }
        assert_eq!(xte_decreasing_rate(&xte, TransientWindow::Whole, RateStatistic::Max).unwrap(), best);
    }

    #[test]
    fn sine_scores_are_non_negative_and_grow_with_amplitude() {
        let vp = VehicleParams::default();
        let mut last = 0.0;
        for x1 in [2.5, 10.0, 20.0] {
            let plan = plan(PathFamily::Sine, x1, 5.0);
            let tel = simulate_run(&plan, &vp, &NoiseParams::noiseless(0)).unwrap();
            let r = score_run(&tel, &plan, &ScoringSettings::default()).unwrap().record;
            for v in r.fields() {
                assert!(v >= 0.0);
            }
            assert!(r.d_a > last, "{x1}: {}", r.d_a);
            last = r.d_a;
        }
    }
}
