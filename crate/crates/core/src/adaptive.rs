//! Two-step adaptive designs: worst-performance search and best-prediction
//! reconstruction, with validation metrics against a reference model.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{
    ccd_budgeted, lhs, select_maxima, CcdStep, Design, DesignError, DesignPoint, DesignSpace, MaximaRule, Pool,
    Provenance, Reallocation,
};
use crate::kriging::{fit, FitOptions, KrigingError, KrigingModel};
use crate::rng::{derive_seed, substream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunErrorKind {
    Geometry,
    Numeric,
    Io,
    Other,
}

/// Failure of one run.
#[derive(Clone, Debug, Error, PartialEq)]
#[error("run at {point} failed: {message}")]
pub struct RunError {
    pub point: DesignPoint,
    pub kind: RunErrorKind,
    pub message: String,
}

/// Maps a design point to a scalar response.
pub trait Runner: Sync {
    fn respond(&self, point: &DesignPoint) -> Result<f64, RunError>;
}

impl<F: Fn(&DesignPoint) -> Result<f64, RunError> + Sync> Runner for F {
    fn respond(&self, point: &DesignPoint) -> Result<f64, RunError> {
        self(point)
    }
}

/// Wraps a runner so that points on the axes take the straight-line response
/// without being run again.
pub struct BorderRule<R> {
    inner: R,
    straight: OnceLock<Result<f64, RunError>>,
}

impl<R: Runner> BorderRule<R> {
    pub fn new(inner: R) -> Self {
        BorderRule { inner, straight: OnceLock::new() }
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }
}

impl<R: Runner> Runner for BorderRule<R> {
    fn respond(&self, point: &DesignPoint) -> Result<f64, RunError> {
        if point.is_border() {
            self.straight.get_or_init(|| self.inner.respond(&DesignPoint::STRAIGHT)).clone()
        } else {
            self.inner.respond(point)
        }
    }
}

/// Responses collected before a failure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub step1: Design,
    pub step1_responses: Vec<Option<f64>>,
    pub step2: Design,
    pub step2_responses: Vec<Option<f64>>,
}

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Kriging(#[from] KrigingError),
    #[error("{source}")]
    Run { source: RunError, partial: Box<Partial> },
    #[error("estimates were computed on different grids")]
    GridMismatch,
    #[error("invalid settings: {0}")]
    Settings(String),
}

/// Regular evaluation grid over a rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    pub resolution: usize,
}

impl GridSpec {
    pub fn over(space: &DesignSpace, resolution: usize) -> Self {
        let (lo, hi) = space.bounds();
        GridSpec { x1_min: lo[0], x1_max: hi[0], x2_min: lo[1], x2_max: hi[1], resolution }
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
    }

    pub fn x1_axis(&self) -> Vec<f64> {
        Self::axis(self.x1_min, self.x1_max, self.resolution)
    }

    pub fn x2_axis(&self) -> Vec<f64> {
        Self::axis(self.x2_min, self.x2_max, self.resolution)
    }

    /// Row-major points: rows follow x2, columns follow x1.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let a1 = self.x1_axis();
        let mut out = Vec::with_capacity(self.resolution * self.resolution);
        for x2 in self.x2_axis() {
            for &x1 in &a1 {
                out.push(vec![x1, x2]);
            }
        }
        out
    }
}

/// Prediction and MSE fields of a model over a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub spec: GridSpec,
    pub prediction: Vec<f64>,
    pub mse: Vec<f64>,
}

impl GridField {
    pub fn evaluate(model: &KrigingModel, spec: GridSpec) -> Result<GridField, KrigingError> {
        let preds = model.predict_many(&spec.points())?;
        Ok(GridField {
            spec,
            prediction: preds.iter().map(|p| p.value).collect(),
            mse: preds.iter().map(|p| p.mse).collect(),
        })
    }

    /// CSV matrix with the x1 axis as the header row and x2 as the first
    /// column.
    pub fn matrix_csv(&self, values: &[f64]) -> String {
        let mut out = String::from("x2\\x1");
        for x1 in self.spec.x1_axis() {
            out.push_str(&format!(",{x1}"));
        }
        out.push('\n');
        let n = self.spec.resolution;
        for (r, x2) in self.spec.x2_axis().iter().enumerate() {
            out.push_str(&x2.to_string());
            for v in &values[r * n..(r + 1) * n] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses a matrix written by [`matrix_csv`](Self::matrix_csv) into its
    /// axes and row-major values.
    pub fn parse_matrix_csv(text: &str) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut lines = text.lines();
        let header = lines.next()?;
        let x1: Vec<f64> = header.split(',').skip(1).map(|v| v.parse().ok()).collect::<Option<_>>()?;
        let mut x2 = Vec::new();
        let mut values = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let mut cols = line.split(',');
            x2.push(cols.next()?.parse().ok()?);
            let row: Vec<f64> = cols.map(|v| v.parse().ok()).collect::<Option<_>>()?;
            if row.len() != x1.len() {
                return None;
            }
            values.extend(row);
        }
        Some((x1, x2, values))
    }
}

/// Grid maximum of a model's prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxEstimate {
    pub value: f64,
    pub at: [f64; 2],
    pub grid: GridSpec,
}

/// Maximum of the prediction over the regular grid together with the sites.
pub fn grid_maximum(model: &KrigingModel, field: &GridField) -> Result<MaxEstimate, KrigingError> {
    let pts = field.spec.points();
    let mut best = MaxEstimate { value: f64::NEG_INFINITY, at: [0.0, 0.0], grid: field.spec };
    for (p, v) in pts.iter().zip(&field.prediction) {
        if *v > best.value {
            best.value = *v;
            best.at = [p[0], p[1]];
        }
    }
    for s in model.sites() {
        let v = model.predict(s)?;
        if v > best.value {
            best.value = v;
            best.at = [s[0], s[1]];
        }
    }
    Ok(best)
}

/// `|ŷ_MAX − ŷ_MAX,ref|` for estimates on the same grid.
pub fn abs_metric(estimate: &MaxEstimate, reference: &MaxEstimate) -> Result<f64, AdaptiveError> {
    if estimate.grid != reference.grid {
        return Err(AdaptiveError::GridMismatch);
    }
    Ok((estimate.value - reference.value).abs())
}

/// Maximum and mean absolute error of `model` against reference responses.
pub fn reconstruction_errors(
    y_ref: &[f64],
    model: &KrigingModel,
    sites: &[DesignPoint],
) -> Result<(f64, f64), AdaptiveError> {
    if y_ref.len() != sites.len() || sites.is_empty() {
        return Err(AdaptiveError::Settings(format!(
            "{} reference responses for {} sites",
            y_ref.len(),
            sites.len()
        )));
    }
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for (y, s) in y_ref.iter().zip(sites) {
        let e = (y - model.predict(&s.coords())?).abs();
        max = max.max(e);
        sum += e;
    }
    Ok((max, sum / sites.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WpSettings {
    pub n1: usize,
    pub n2: usize,
    pub rule: MaximaRule,
    pub step: CcdStep,
    pub fit: FitOptions,
    pub resolution: usize,
}

impl Default for WpSettings {
    fn default() -> Self {
        WpSettings {
            n1: 10,
            n2: 8,
            rule: MaximaRule::Argmax,
            step: CcdStep::default(),
            fit: FitOptions::default(),
            resolution: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpSettings {
    pub n1: usize,
    pub n2: usize,
    /// Neighbours placed around the largest-MSE point.
    pub neighbors: usize,
    /// Amplitude pitch of the lattice for step-2 points.
    pub pitch: f64,
    /// Model used to locate the largest MSE.
    pub interim_fit: FitOptions,
    pub fit: FitOptions,
    pub resolution: usize,
}

impl Default for BpSettings {
    fn default() -> Self {
        BpSettings {
            n1: 10,
            n2: 9,
            neighbors: 3,
            pitch: 2.5,
            interim_fit: FitOptions::default(),
            fit: FitOptions::default(),
            resolution: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    WorstPerformance,
    BestPrediction,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveDiagnostics {
    /// Step-1 indices picked by the maxima rule (WP).
    pub maxima: Vec<usize>,
    /// CCD centres and their point budgets (WP).
    pub centres: Vec<(DesignPoint, usize)>,
    pub reallocations: Vec<Reallocation>,
    /// The rule selected nothing and the argmax was used instead (WP).
    pub fell_back_to_argmax: bool,
    /// Grid location of the largest interim MSE and its value (BP).
    pub max_mse_location: Option<[f64; 2]>,
    pub max_mse: Option<f64>,
}

/// Wall-clock durations; kept apart from the reproducible result.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub step1_seconds: f64,
    pub step2_seconds: f64,
    pub fit_seconds: f64,
    pub grid_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveResult {
    pub procedure: Procedure,
    pub step1: Design,
    pub step1_responses: Vec<f64>,
    pub step2: Design,
    pub step2_responses: Vec<f64>,
    pub model: KrigingModel,
    pub field: GridField,
    /// Grid maximum of the final model (WP).
    pub estimate: Option<MaxEstimate>,
    pub diagnostics: AdaptiveDiagnostics,
    #[serde(skip)]
    pub timings: Timings,
}

impl AdaptiveResult {
    pub fn all_points(&self) -> Vec<DesignPoint> {
        self.step1.points().into_iter().chain(self.step2.points()).collect()
    }

    pub fn all_responses(&self) -> Vec<f64> {
        self.step1_responses.iter().chain(&self.step2_responses).copied().collect()
    }
}

/// Evaluates every point in parallel. On failure returns the first error in
/// design order together with every response that succeeded.
pub fn evaluate_design<R: Runner + ?Sized>(runner: &R, design: &Design) -> Result<Vec<f64>, (RunError, Vec<Option<f64>>)> {
    let results: Vec<Result<f64, RunError>> = design.entries.par_iter().map(|e| runner.respond(&e.point)).collect();
    if let Some(err) = results.iter().find_map(|r| r.as_ref().err().cloned()) {
        return Err((err, results.into_iter().map(Result::ok).collect()));
    }
    Ok(results.into_iter().map(Result::unwrap).collect())
}

fn sites_of(points: &[DesignPoint]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.coords().to_vec()).collect()
}

fn run_step1<R: Runner + ?Sized>(
    runner: &R,
    space: &DesignSpace,
    n1: usize,
    seed: u64,
) -> Result<(Design, Vec<f64>), AdaptiveError> {
    let step1 = lhs(space, n1, derive_seed(seed, 1))?;
    match evaluate_design(runner, &step1) {
        Ok(y) => Ok((step1, y)),
        Err((source, got)) => Err(AdaptiveError::Run {
            source,
            partial: Box::new(Partial { step1, step1_responses: got, ..Default::default() }),
        }),
    }
}

fn run_step2<R: Runner + ?Sized>(
    runner: &R,
    step1: &Design,
    y1: &[f64],
    step2: &Design,
) -> Result<Vec<f64>, AdaptiveError> {
    evaluate_design(runner, step2).map_err(|(source, got)| AdaptiveError::Run {
        source,
        partial: Box::new(Partial {
            step1: step1.clone(),
            step1_responses: y1.iter().map(|v| Some(*v)).collect(),
            step2: step2.clone(),
            step2_responses: got,
        }),
    })
}

/// Splits `n2` points over `k` centres as evenly as possible, at most eight per
/// centre; the surplus is returned separately.
pub fn split_budget(n2: usize, k: usize) -> (Vec<usize>, usize) {
    if k == 0 {
        return (Vec::new(), n2);
    }
    let mut b: Vec<usize> = (0..k).map(|j| (n2 / k + usize::from(j < n2 % k)).min(8)).collect();
    b.retain(|&v| v > 0);
    let used: usize = b.iter().sum();
    (b, n2 - used)
}

/// Worst-performance design: LHS, CCDs around the selected maxima, kriging on
/// both steps and the grid maximum of the prediction.
pub fn worst_performance<R: Runner + ?Sized>(
    runner: &R,
    space: &DesignSpace,
    settings: &WpSettings,
    seed: u64,
) -> Result<AdaptiveResult, AdaptiveError> {
    if settings.n1 < 2 || settings.n2 < 1 || settings.resolution < 2 {
        return Err(AdaptiveError::Settings(format!(
            "need n1 >= 2, n2 >= 1, resolution >= 2 (got {}, {}, {})",
            settings.n1, settings.n2, settings.resolution
        )));
    }
    let mut timings = Timings::default();
    let t = Instant::now();
    let (step1, y1) = run_step1(runner, space, settings.n1, seed)?;
    timings.step1_seconds = t.elapsed().as_secs_f64();

    let mut diagnostics = AdaptiveDiagnostics::default();
    let mut maxima = select_maxima(&y1, settings.rule)?;
    if maxima.is_empty() {
        diagnostics.fell_back_to_argmax = true;
        maxima = select_maxima(&y1, MaximaRule::Argmax)?;
    }
    // highest response first, so it receives any remainder of the budget
    maxima.sort_by(|&a, &b| y1[b].total_cmp(&y1[a]).then(a.cmp(&b)));
    let (budgets, surplus) = split_budget(settings.n2, maxima.len());
    let step1_points = step1.points();
    let centres: Vec<(DesignPoint, usize)> = maxima.iter().zip(&budgets).map(|(&i, &b)| (step1_points[i], b)).collect();
    let outcome = ccd_budgeted(space, &centres, &settings.step, &step1_points, derive_seed(seed, 2))?;
    let mut step2 = outcome.design;
    if surplus > 0 {
        let taken: Vec<DesignPoint> = step1_points.iter().chain(&step2.points()).copied().collect();
        let mut pool = Pool::new(space, &taken);
        let mut rng = substream(derive_seed(seed, 3), 0);
        for _ in 0..surplus {
            let p = pool
                .draw(&mut rng)
                .ok_or_else(|| DesignError::Infeasible("no unvisited points left".into()))?;
            step2.push(p, Provenance::Random);
        }
    }
    diagnostics.maxima = maxima;
    diagnostics.centres = centres;
    diagnostics.reallocations = outcome.reallocations;

    let t = Instant::now();
    let y2 = run_step2(runner, &step1, &y1, &step2)?;
    timings.step2_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let points: Vec<DesignPoint> = step1_points.iter().chain(&step2.points()).copied().collect();
    let y: Vec<f64> = y1.iter().chain(&y2).copied().collect();
    let model = fit(&sites_of(&points), &y, &settings.fit)?;
    timings.fit_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let field = GridField::evaluate(&model, GridSpec::over(space, settings.resolution))?;
    let estimate = grid_maximum(&model, &field)?;
    timings.grid_seconds = t.elapsed().as_secs_f64();

    Ok(AdaptiveResult {
        procedure: Procedure::WorstPerformance,
        step1,
        step1_responses: y1,
        step2,
        step2_responses: y2,
        model,
        field,
        estimate: Some(estimate),
        diagnostics,
        timings,
    })
}

fn normalized_distance(space: &DesignSpace, a: &DesignPoint, b: &DesignPoint) -> f64 {
    let (lo, hi) = space.bounds();
    let d1 = (a.x1 - b.x1) / (hi[0] - lo[0]);
    let d2 = (a.x2 as f64 - b.x2 as f64) / (hi[1] - lo[1]);
    (d1 * d1 + d2 * d2).sqrt()
}

/// Step-2 points of the best-prediction design: the unvisited lattice point
/// nearest the largest-MSE location, its nearest unvisited neighbours, and
/// uniform draws for the rest.
pub fn allocate_around(
    space: &DesignSpace,
    location: [f64; 2],
    executed: &[DesignPoint],
    n2: usize,
    neighbors: usize,
    seed: u64,
) -> Result<Design, DesignError> {
    let mut pool = Pool::new(space, executed);
    let mut rng = substream(seed, 0);
    let mut design = Design::default();
    if n2 == 0 {
        return Ok(design);
    }
    let key = |d: f64| (d * 1e9).round() as i64;
    let free = pool.free().to_vec();
    let centre = free
        .iter()
        .min_by_key(|p| {
            let d1 = (p.x1 - location[0]) / (space.x1_max - space.x1_min);
            let d2 = (p.x2 as f64 - location[1]) / space.x2_max as f64;
            key((d1 * d1 + d2 * d2).sqrt())
        })
        .copied()
        .ok_or_else(|| DesignError::Infeasible("no unvisited points left".into()))?;
    pool.take(&centre);
    design.push(centre, Provenance::MseMax);

    let mut near: Vec<(i64, u64, DesignPoint)> =
        pool.free().iter().map(|p| (key(normalized_distance(space, &centre, p)), rng.random(), *p)).collect();
    near.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    for (_, _, p) in near.into_iter().take(neighbors.min(n2 - 1)) {
        pool.take(&p);
        design.push(p, Provenance::MseNeighbor);
    }
    while design.len() < n2 {
        let p = pool.draw(&mut rng).ok_or_else(|| DesignError::Infeasible("no unvisited points left".into()))?;
        design.push(p, Provenance::Random);
    }
    Ok(design)
}

/// Best-prediction design: LHS, interim model, step-2 points around the largest
/// predictor MSE on the grid, final model on both steps.
pub fn best_prediction<R: Runner + ?Sized>(
    runner: &R,
    space: &DesignSpace,
    settings: &BpSettings,
    seed: u64,
) -> Result<AdaptiveResult, AdaptiveError> {
    if settings.n1 < 2 || settings.n2 < 1 || settings.resolution < 2 {
        return Err(AdaptiveError::Settings(format!(
            "need n1 >= 2, n2 >= 1, resolution >= 2 (got {}, {}, {})",
            settings.n1, settings.n2, settings.resolution
        )));
    }
    let lattice = space.with_pitch(settings.pitch);
    lattice.validate()?;
    let mut timings = Timings::default();
    let t = Instant::now();
    let (step1, y1) = run_step1(runner, space, settings.n1, seed)?;
    timings.step1_seconds = t.elapsed().as_secs_f64();

    let step1_points = step1.points();
    let interim = fit(&sites_of(&step1_points), &y1, &settings.interim_fit)?;
    let spec = GridSpec::over(space, settings.resolution);
    let interim_field = GridField::evaluate(&interim, spec)?;
    let pts = spec.points();
    let mut im = 0;
    for (i, m) in interim_field.mse.iter().enumerate() {
        if *m > interim_field.mse[im] {
            im = i;
        }
    }
    let location = [pts[im][0], pts[im][1]];
    let step2 = allocate_around(&lattice, location, &step1_points, settings.n2, settings.neighbors, derive_seed(seed, 4))?;
    let diagnostics = AdaptiveDiagnostics {
        max_mse_location: Some(location),
        max_mse: Some(interim_field.mse[im]),
        ..Default::default()
    };

    let t = Instant::now();
    let y2 = run_step2(runner, &step1, &y1, &step2)?;
    timings.step2_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let points: Vec<DesignPoint> = step1_points.iter().chain(&step2.points()).copied().collect();
    let y: Vec<f64> = y1.iter().chain(&y2).copied().collect();
    let model = fit(&sites_of(&points), &y, &settings.fit)?;
    timings.fit_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let field = GridField::evaluate(&model, spec)?;
    timings.grid_seconds = t.elapsed().as_secs_f64();

    Ok(AdaptiveResult {
        procedure: Procedure::BestPrediction,
        step1,
        step1_responses: y1,
        step2,
        step2_responses: y2,
        model,
        field,
        estimate: None,
        diagnostics,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kriging::ThetaSpec;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn bump(p: &DesignPoint) -> Result<f64, RunError> {
        let (a, b) = (p.x1, p.x2 as f64);
        Ok(3.0 * (-((a - 15.0) / 8.0).powi(2) - ((b - 7.0) / 2.0).powi(2)).exp() + 0.05 * a)
    }

    #[test]
    fn wp_shape_and_invariants() {
        let space = DesignSpace::default();
        let r = worst_performance(&bump, &space, &WpSettings::default(), 11).unwrap();
        assert_eq!(r.step1.len(), 10);
        assert_eq!(r.step2.len(), 8);
        assert_eq!(r.model.sites().len(), 18);
        for p in r.step2.points() {
            assert!(!r.step1.contains(&p));
            assert!(space.contains(&p));
        }
        let ymax = r.all_responses().into_iter().fold(f64::NEG_INFINITY, f64::max);
        assert!(r.estimate.unwrap().value >= ymax - 1e-9);
        assert_eq!(r.field.prediction.len(), 100 * 100);
    }

    #[test]
    fn wp_is_deterministic() {
        let space = DesignSpace::default();
        let a = worst_performance(&bump, &space, &WpSettings::default(), 5).unwrap();
        let b = worst_performance(&bump, &space, &WpSettings::default(), 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn constant_response() {
        let space = DesignSpace::default();
        let c = |_: &DesignPoint| Ok(2.5);
        let r = worst_performance(&c, &space, &WpSettings::default(), 1).unwrap();
        assert!((r.estimate.unwrap().value - 2.5).abs() < 1e-6);
        let z = |_: &DesignPoint| Ok(0.0);
        let r = best_prediction(&z, &space, &BpSettings::default(), 1).unwrap();
        assert!(r.field.prediction.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn bp_allocation_shape() {
        let space = DesignSpace::default();
        let r = best_prediction(&bump, &space, &BpSettings::default(), 2).unwrap();
        assert_eq!(r.step2.len(), 9);
        let count = |p: Provenance| r.step2.entries.iter().filter(|e| e.provenance == p).count();
        assert_eq!((count(Provenance::MseMax), count(Provenance::MseNeighbor), count(Provenance::Random)), (1, 3, 5));
        assert_eq!(r.model.sites().len(), 19);
        for p in r.step2.points() {
            assert!(!r.step1.contains(&p) && !p.is_border());
        }
    }

    #[test]
    fn bp_refit_lowers_mse_at_chosen_point() {
        let space = DesignSpace::default();
        let opts = FitOptions { theta: ThetaSpec::Fixed(vec![2.0, 2.0]), ..Default::default() };
        let settings = BpSettings { interim_fit: opts.clone(), fit: opts.clone(), ..Default::default() };
        let r = best_prediction(&bump, &space, &settings, 8).unwrap();
        let chosen = r.step2.entries[0].point.coords();
        let interim = fit(&sites_of(&r.step1.points()), &r.step1_responses, &opts).unwrap();
        let before = interim.predict_full(&chosen).unwrap().mse_raw / interim.sigma2();
        let after = r.model.predict_full(&chosen).unwrap().mse_raw / r.model.sigma2();
        assert!(after < before);
    }

    #[test]
    fn neighbours_are_nearest_in_normalized_units() {
        let space = DesignSpace::default().with_pitch(2.5);
        let d = allocate_around(&space, [2.4, 8.9], &[DesignPoint::STRAIGHT], 4, 3, 0).unwrap();
        let pts = d.points();
        assert_eq!(pts[0], DesignPoint::new(2.5, 9));
        assert!(pts.contains(&DesignPoint::new(5.0, 9)));
        assert!(pts.contains(&DesignPoint::new(2.5, 8)));
        assert!(pts.contains(&DesignPoint::new(7.5, 9)));
    }

    #[test]
    fn border_rule_runs_straight_line_once() {
        let calls = AtomicUsize::new(0);
        let inner = |p: &DesignPoint| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(p.x1 + p.x2 as f64)
        };
        let r = BorderRule::new(inner);
        assert_eq!(r.respond(&DesignPoint::new(5.0, 0)).unwrap(), 0.0);
        assert_eq!(r.respond(&DesignPoint::new(0.0, 4)).unwrap(), 0.0);
        assert_eq!(r.respond(&DesignPoint::new(5.0, 2)).unwrap(), 7.0);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn failure_keeps_partial_results() {
        let space = DesignSpace::default();
        let flaky = |p: &DesignPoint| {
            if p.x1 == 30.0 {
                Err(RunError { point: *p, kind: RunErrorKind::Numeric, message: "diverged".into() })
            } else {
                Ok(1.0)
            }
        };
        match worst_performance(&flaky, &space, &WpSettings::default(), 3) {
            Err(AdaptiveError::Run { partial, source }) => {
                assert_eq!(source.point.x1, 30.0);
                assert_eq!(partial.step1_responses.iter().filter(|v| v.is_some()).count(), 9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn metrics() {
        let spec = GridSpec::over(&DesignSpace::default(), 10);
        let a = MaxEstimate { value: 5.0, at: [0.0, 0.0], grid: spec };
        let b = MaxEstimate { value: 3.0, ..a };
        assert_eq!(abs_metric(&a, &b).unwrap(), 2.0);
        assert_eq!(abs_metric(&a, &a).unwrap(), 0.0);
        let other = MaxEstimate { grid: GridSpec { resolution: 11, ..spec }, ..b };
        assert!(matches!(abs_metric(&a, &other), Err(AdaptiveError::GridMismatch)));

        let pts: Vec<DesignPoint> = (1..6).map(|i| DesignPoint::new(5.0 * i as f64, i)).collect();
        let y = vec![4.0; 5];
        let m = fit(&sites_of(&pts), &y, &FitOptions::default()).unwrap();
        let (mx, mean) = reconstruction_errors(&y, &m, &pts).unwrap();
        assert!(mx < 1e-9 && mean < 1e-9 && mx >= mean);
    }

    #[test]
    fn budget_split() {
        assert_eq!(split_budget(8, 1), (vec![8], 0));
        assert_eq!(split_budget(8, 2), (vec![4, 4], 0));
        assert_eq!(split_budget(8, 3), (vec![3, 3, 2], 0));
        assert_eq!(split_budget(12, 1), (vec![8], 4));
        assert_eq!(split_budget(2, 3), (vec![1, 1], 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn wp_invariants_hold(c1 in 0.0..45.0f64, c2 in 0.0..9.0f64, h in 0.5..5.0f64, slope in -0.1..0.1f64, seed in any::<u64>()) {
            let f = move |p: &DesignPoint| -> Result<f64, RunError> {
                let (a, b) = (p.x1, p.x2 as f64);
                Ok(h * (-((a - c1) / 9.0).powi(2) - ((b - c2) / 2.5).powi(2)).exp() + slope * a)
            };
            let space = DesignSpace::default();
            let r = worst_performance(&f, &space, &WpSettings::default(), seed).unwrap();
            for p in r.step2.points() {
                prop_assert!(!r.step1.contains(&p) && space.contains(&p));
            }
            let ymax = r.all_responses().into_iter().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.estimate.unwrap().value >= ymax - 1e-9 * (1.0 + ymax.abs()));
            let pts = r.all_points();
            let truth: Vec<f64> = pts.iter().map(|p| f(&DesignPoint::new(p.x1 + 1.0, p.x2)).unwrap()).collect();
            let (mx, mean) = reconstruction_errors(&truth, &r.model, &pts).unwrap();
            prop_assert!(mx >= mean);
        }

        #[test]
        fn bp_refit_with_fixed_theta_lowers_mse(c1 in 0.0..45.0f64, c2 in 0.0..9.0f64, t1 in 0.3..5.0f64, t2 in 0.3..5.0f64, seed in any::<u64>()) {
            let f = move |p: &DesignPoint| -> Result<f64, RunError> {
                Ok((-((p.x1 - c1) / 12.0).powi(2) - ((p.x2 as f64 - c2) / 3.0).powi(2)).exp())
            };
            let opts = FitOptions { theta: ThetaSpec::Fixed(vec![t1, t2]), ..Default::default() };
            let settings = BpSettings { interim_fit: opts.clone(), fit: opts.clone(), ..Default::default() };
            let r = best_prediction(&f, &DesignSpace::default(), &settings, seed).unwrap();
            let chosen = r.step2.entries[0].point.coords();
            let interim = fit(&sites_of(&r.step1.points()), &r.step1_responses, &opts).unwrap();
            let before = interim.predict_full(&chosen).unwrap().mse_raw / interim.sigma2();
            let after = r.model.predict_full(&chosen).unwrap().mse_raw / r.model.sigma2();
            prop_assert!(after < before);
        }
    }

    #[test]
    fn grid_matrix_round_trip() {
        let spec = GridSpec::over(&DesignSpace::default(), 4);
        let f = GridField { spec, prediction: (0..16).map(|v| v as f64 * 0.5).collect(), mse: vec![0.0; 16] };
        let (x1, x2, v) = GridField::parse_matrix_csv(&f.matrix_csv(&f.prediction)).unwrap();
        assert_eq!(x1, spec.x1_axis());
        assert_eq!(x2, spec.x2_axis());
        assert_eq!(v, f.prediction);
    }
}
