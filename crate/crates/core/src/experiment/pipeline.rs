use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::heatmap::render_ppm;
use super::runner::{run_point, RunRecord};
use super::store::{read_stamped_csv, Store};
use super::{ExperimentConfig, ExperimentError, ProcedureKind};
use crate::adaptive::{
    best_prediction, evaluate_design, grid_maximum, reconstruction_errors, worst_performance, AdaptiveDiagnostics,
    AdaptiveError, AdaptiveResult, GridField, GridSpec, MaxEstimate, Runner, Timings,
};
use crate::design::{full_factorial, Design, DesignPoint, Provenance};
use crate::geometry::{build_run_plan_with, make_path};
use crate::indices::{score_run, IndexKind, PerformanceRecord, RECORD_CSV_HEADER};
use crate::kriging::{fit, FitReport, KrigingModel};
use crate::sim::Telemetry;

/// Errors of a procedure's estimate and model against the full factorial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `|ŷ_MAX − ŷ_MAX^FF|` on the shared grid.
    pub abs: Option<f64>,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSummary {
    pub procedure: ProcedureKind,
    pub index: IndexKind,
    pub points: usize,
    pub theta: Vec<f64>,
    pub fit: FitReport,
    pub estimate: Option<MaxEstimate>,
    pub diagnostics: Option<AdaptiveDiagnostics>,
    pub reference: Option<Comparison>,
}

#[derive(Serialize)]
struct TimingFile {
    started_unix: f64,
    total_seconds: f64,
    steps: Timings,
}

pub struct FactorialResult {
    pub design: Design,
    pub responses: Vec<f64>,
    pub model: KrigingModel,
    pub field: GridField,
    pub estimate: MaxEstimate,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn stem(config: &ExperimentConfig) -> String {
    format!("{}_{}", config.procedure.prefix(), config.index.as_str())
}

fn responses_csv(steps: &[(&Design, &[f64], u8)]) -> String {
    let mut out = String::from("x1,x2,provenance,step,response\n");
    for (design, y, step) in steps {
        for (e, v) in design.entries.iter().zip(y.iter()) {
            out.push_str(&format!("{},{},{},{},{}\n", e.point.x1, e.point.x2, e.provenance.as_str(), step, v));
        }
    }
    out
}

/// Sites and responses from a CSV with `x1`, `x2` and a `response` (or `y`)
/// column; `#` lines are comments.
pub(crate) fn parse_xy_csv(text: &str, path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>), ExperimentError> {
    let (_, body) = read_stamped_csv(text);
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| ExperimentError::io(path, e))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let (Some(i1), Some(i2), Some(iy)) = (col(&["x1"]), col(&["x2"]), col(&["response", "y"])) else {
        return Err(ExperimentError::Config(format!("{} needs x1, x2 and response columns", path.display())));
    };
    let mut sites = Vec::new();
    let mut y = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| ExperimentError::io(path, e))?;
        let num = |i: usize| -> Result<f64, ExperimentError> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ExperimentError::io(path, format!("bad number in row {:?}", row.position())))
        };
        sites.push(vec![num(i1)?, num(i2)?]);
        y.push(num(iy)?);
    }
    Ok((sites, y))
}

fn write_field(store: &Store, stem: &str, field: &GridField) -> Result<(), ExperimentError> {
    let n = field.spec.resolution;
    for (name, values) in [("prediction", &field.prediction), ("mse", &field.mse)] {
        store.write_csv(&format!("grids/{stem}_{name}.csv"), &field.matrix_csv(values))?;
        let comment = format!("config_hash={} {stem} {name}", store.config_hash());
        store.write(&format!("grids/{stem}_{name}.ppm"), &render_ppm(values, n, &comment))?;
    }
    Ok(())
}

fn write_timing(store: &Store, stem: &str, started: f64, t0: Instant, steps: Timings) -> Result<(), ExperimentError> {
    let t = TimingFile { started_unix: started, total_seconds: t0.elapsed().as_secs_f64(), steps };
    store.write_json(&format!("diagnostics/timing_{stem}.json"), &t)
}

/// Errors against the full-factorial reference of the same index, when one
/// has been computed in this directory.
fn compare_with_reference(
    config: &ExperimentConfig,
    store: &Store,
    model: &KrigingModel,
    estimate: Option<&MaxEstimate>,
) -> Result<Option<Comparison>, ExperimentError> {
    let index = config.index.as_str();
    let Some(ff) = store.read_json::<KrigingModel>(&format!("models/ff_{index}.json"))? else {
        return Ok(None);
    };
    let sites: Vec<DesignPoint> = ff.data.sites().iter().map(|s| DesignPoint::new(s[0], s[1] as u32)).collect();
    let (max_abs_error, mean_abs_error) = reconstruction_errors(ff.data.responses(), model, &sites)?;
    let ff_summary = store.read_json::<ProcedureSummary>(&format!("diagnostics/ff_{index}.json"))?;
    let abs = match (estimate, ff_summary.and_then(|s| s.data.estimate)) {
        (Some(e), Some(r)) if e.grid == r.grid => Some((e.value - r.value).abs()),
        _ => None,
    };
    Ok(Some(Comparison { abs, max_abs_error, mean_abs_error }))
}

/// Full-factorial design on the lattice, or the manual design, with the
/// model and grid fields fitted to its responses.
pub fn run_factorial(
    config: &ExperimentConfig,
    store: &Store,
    runner: &dyn Runner,
) -> Result<FactorialResult, ExperimentError> {
    let (started, t0) = (unix_now(), Instant::now());
    let design = match config.procedure {
        ProcedureKind::Manual => {
            let mut d = Design::default();
            for p in &config.design.manual_points {
                let p = config.point(p[0], p[1])?;
                if !d.contains(&p) {
                    d.push(p, Provenance::Manual);
                }
            }
            d
        }
        _ => {
            let lattice = config.lattice();
            let amps: Vec<f64> = lattice.amplitude_levels().into_iter().filter(|a| *a > 0.0).collect();
            let hemis: Vec<u32> = (1..=lattice.x2_max).collect();
            full_factorial(&amps, &hemis)
        }
    };
    if design.is_empty() {
        return Err(ExperimentError::Config("the design has no points".into()));
    }
    let stem = stem(config);
    let prefix = config.procedure.prefix();
    store.write_csv(&format!("designs/{prefix}.csv"), &design.to_csv())?;

    let mut timings = Timings::default();
    let t = Instant::now();
    let responses = evaluate_design(runner, &design).map_err(|(e, _)| ExperimentError::from(e))?;
    timings.step1_seconds = t.elapsed().as_secs_f64();
    store.write_csv(&format!("designs/{stem}_responses.csv"), &responses_csv(&[(&design, &responses, 1)]))?;

    let t = Instant::now();
    let sites: Vec<Vec<f64>> = design.points().iter().map(|p| p.coords().to_vec()).collect();
    let model = fit(&sites, &responses, &config.fit_options())?;
    timings.fit_seconds = t.elapsed().as_secs_f64();
    store.write_json(&format!("models/{stem}.json"), &model)?;

    let t = Instant::now();
    let field = GridField::evaluate(&model, GridSpec::over(&config.space, config.grid.resolution))?;
    let estimate = grid_maximum(&model, &field)?;
    timings.grid_seconds = t.elapsed().as_secs_f64();
    write_field(store, &stem, &field)?;

    let summary = ProcedureSummary {
        procedure: config.procedure,
        index: config.index,
        points: design.len(),
        theta: model.theta().to_vec(),
        fit: model.report().clone(),
        estimate: Some(estimate),
        diagnostics: None,
        reference: None,
    };
    store.write_json(&format!("diagnostics/{stem}.json"), &summary)?;
    write_timing(store, &stem, started, t0, timings)?;
    Ok(FactorialResult { design, responses, model, field, estimate })
}

/// Worst-performance or best-prediction procedure with its artifacts.
pub fn run_adaptive(
    config: &ExperimentConfig,
    store: &Store,
    runner: &dyn Runner,
) -> Result<AdaptiveResult, ExperimentError> {
    let (started, t0) = (unix_now(), Instant::now());
    let stem = stem(config);
    let prefix = config.procedure.prefix();
    let outcome = match config.procedure {
        ProcedureKind::Wp => worst_performance(runner, &config.space, &config.wp_settings(), config.seed),
        ProcedureKind::Bp => best_prediction(runner, &config.space, &config.bp_settings(), config.seed),
        other => return Err(ExperimentError::Config(format!("{other:?} is not an adaptive procedure"))),
    };
    let result = match outcome {
        Ok(r) => r,
        Err(AdaptiveError::Run { source, partial }) => {
            store.write_json(&format!("diagnostics/{stem}_partial.json"), &partial)?;
            return Err(source.into());
        }
        Err(e) => return Err(e.into()),
    };

    store.write_csv(&format!("designs/{prefix}_step1.csv"), &result.step1.to_csv())?;
    store.write_csv(&format!("designs/{prefix}_step2.csv"), &result.step2.to_csv())?;
    store.write_csv(
        &format!("designs/{stem}_responses.csv"),
        &responses_csv(&[
            (&result.step1, &result.step1_responses, 1),
            (&result.step2, &result.step2_responses, 2),
        ]),
    )?;
    store.write_json(&format!("models/{stem}.json"), &result.model)?;
    write_field(store, &stem, &result.field)?;
    let summary = ProcedureSummary {
        procedure: config.procedure,
        index: config.index,
        points: result.step1.len() + result.step2.len(),
        theta: result.model.theta().to_vec(),
        fit: result.model.report().clone(),
        estimate: result.estimate,
        diagnostics: Some(result.diagnostics.clone()),
        reference: compare_with_reference(config, store, &result.model, result.estimate.as_ref())?,
    };
    store.write_json(&format!("diagnostics/{stem}.json"), &summary)?;
    write_timing(store, &stem, started, t0, result.timings.clone())?;
    Ok(result)
}

/// Simulates one point and persists its record and telemetry.
pub fn simulate_command(config: &ExperimentConfig, store: &Store, point: DesignPoint) -> Result<RunRecord, ExperimentError> {
    let (record, telemetry) = run_point(config, point)?;
    store.save_run(&record)?;
    store.write_csv(&format!("runs/{}.telemetry.csv", record.run_id), &telemetry.to_csv())?;
    Ok(record)
}

/// Scores a telemetry file against the plan of `point`, or tabulates every
/// stored run into `runs/records.csv` when no file is given.
pub fn indices_command(
    config: &ExperimentConfig,
    store: &Store,
    telemetry: Option<(&Path, DesignPoint)>,
) -> Result<Vec<(DesignPoint, PerformanceRecord)>, ExperimentError> {
    if let Some((path, point)) = telemetry {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let tel = Telemetry::from_csv(read_stamped_csv(&text).1)?;
        let point = config.point(point.x1, point.x2 as f64)?;
        let p = make_path(config.path.family, point.x1, point.x2 as f64, config.box_geometry.width)?;
        let plan = build_run_plan_with(&p, &config.box_geometry, &config.plan_settings())?;
        return Ok(vec![(point, score_run(&tel, &plan, &config.scoring)?.record)]);
    }
    let runs = store.all_runs()?;
    let mut table = format!("{RECORD_CSV_HEADER}\n");
    for r in &runs {
        table.push_str(&r.scores.record.csv_row(r.point.x1, r.point.x2, &r.run_id));
        table.push('\n');
    }
    store.write_csv("runs/records.csv", &table)?;
    Ok(runs.into_iter().map(|r| (r.point, r.scores.record)).collect())
}

/// Fits the configured index over every stored run.
pub fn fit_from_runs(config: &ExperimentConfig, store: &Store) -> Result<KrigingModel, ExperimentError> {
    let runs = store.all_runs()?;
    if runs.is_empty() {
        return Err(ExperimentError::Config("no run records to fit".into()));
    }
    let sites: Vec<Vec<f64>> = runs.iter().map(|r| r.point.coords().to_vec()).collect();
    let y: Vec<f64> = runs.iter().map(|r| r.response(config.index)).collect();
    let model = fit(&sites, &y, &config.fit_options())?;
    store.write_json(&format!("models/runs_{}.json", config.index.as_str()), &model)?;
    Ok(model)
}

/// Fits a CSV of sites and responses into `models/<file stem>.json`.
pub fn fit_from_csv(config: &ExperimentConfig, store: &Store, input: &Path) -> Result<KrigingModel, ExperimentError> {
    let text = std::fs::read_to_string(input).map_err(|e| ExperimentError::io(input, e))?;
    let (sites, y) = parse_xy_csv(&text, input)?;
    let model = fit(&sites, &y, &config.fit_options())?;
    let name = input.file_stem().and_then(|s| s.to_str()).unwrap_or("fit");
    store.write_json(&format!("models/{name}.json"), &model)?;
    Ok(model)
}

/// Prediction and MSE grids of a stored model. Without an explicit model the
/// procedure's own model is used, falling back to the full-factorial
/// responses.
pub fn grid_command(
    config: &ExperimentConfig,
    store: &Store,
    model_path: Option<&Path>,
) -> Result<(String, GridField), ExperimentError> {
    let (name, model) = match model_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
            let m = store.parse_stamped::<KrigingModel>(path, &text)?.data;
            (path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string(), m)
        }
        None => {
            let name = stem(config);
            let ff = format!("designs/ff_{}_responses.csv", config.index.as_str());
            if let Some(m) = store.read_json::<KrigingModel>(&format!("models/{name}.json"))? {
                (name, m.data)
            } else if let Some(text) = store.read(&ff)? {
                let (sites, y) = parse_xy_csv(&text, &store.path(&ff))?;
                (format!("ff_{}", config.index.as_str()), fit(&sites, &y, &config.fit_options())?)
            } else {
                return Err(ExperimentError::Config(format!(
                    "no model at models/{name}.json and no full-factorial responses"
                )));
            }
        }
    };
    if model.dim() != 2 {
        return Err(ExperimentError::Config(format!("model has {} inputs, expected 2", model.dim())));
    }
    let field = GridField::evaluate(&model, GridSpec::over(&config.space, config.grid.resolution))?;
    write_field(store, &name, &field)?;
    Ok((name, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::{BorderRule, RunError};
    use crate::experiment::SimRunner;

    fn synthetic(p: &DesignPoint) -> Result<f64, RunError> {
        Ok((p.x1 / 10.0).sin() + 0.3 * p.x2 as f64)
    }

    #[test]
    fn xy_csv_parsing() {
        let text = "# config_hash=ab\nx1, x2, provenance, step, response\n5,1,lhs,1,0.5\n10,2,ccd,2,1.5\n";
        let (s, y) = parse_xy_csv(text, Path::new("r.csv")).unwrap();
        assert_eq!(s, vec![vec![5.0, 1.0], vec![10.0, 2.0]]);
        assert_eq!(y, vec![0.5, 1.5]);
        assert!(parse_xy_csv("a,b\n1,2\n", Path::new("r.csv")).is_err());
        assert!(parse_xy_csv("x1,x2,y\n1,zz,3\n", Path::new("r.csv")).is_err());
    }

    #[test]
    fn zero_responses_give_zero_grid_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            procedure: ProcedureKind::Manual,
            grid: crate::experiment::GridConfig { resolution: 12 },
            design: crate::experiment::DesignConfig {
                manual_points: vec![[5.0, 1.0], [20.0, 4.0], [40.0, 8.0], [30.0, 2.0]],
                ..Default::default()
            },
            ..Default::default()
        };
        let store = Store::open(dir.path(), &c).unwrap();
        let zero = |_: &DesignPoint| Ok(0.0);
        let r = run_factorial(&c, &store, &zero).unwrap();
        assert_eq!(r.design.len(), 4);
        let text = store.read("grids/manual_area_prediction.csv").unwrap().unwrap();
        let (x1, x2, v) = GridField::parse_matrix_csv(read_stamped_csv(&text).1).unwrap();
        assert_eq!((x1.len(), x2.len(), v.len()), (12, 12, 144));
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn grid_requires_a_model() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::default();
        let store = Store::open(dir.path(), &c).unwrap();
        assert_eq!(grid_command(&c, &store, None).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn adaptive_artifacts_and_reference_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let base = ExperimentConfig { grid: crate::experiment::GridConfig { resolution: 20 }, ..Default::default() };
        let ff = ExperimentConfig { procedure: ProcedureKind::FullFactorial, ..base.clone() };
        let store = Store::open(dir.path(), &ff).unwrap();
        let runner = BorderRule::new(synthetic);
        let f = run_factorial(&ff, &store, &runner).unwrap();
        assert_eq!(f.design.len(), 163);

        let wp = ExperimentConfig { procedure: ProcedureKind::Wp, ..base.clone() };
        let store = Store::open(dir.path(), &wp).unwrap();
        let r = run_adaptive(&wp, &store, &runner).unwrap();
        assert_eq!(r.model.sites().len(), 18);
        let s = store.read_json::<ProcedureSummary>("diagnostics/wp_area.json").unwrap().unwrap().data;
        let cmp = s.reference.unwrap();
        let abs = cmp.abs.unwrap();
        assert!((abs - (r.estimate.unwrap().value - f.estimate.value).abs()).abs() < 1e-12);
        assert!(cmp.max_abs_error >= cmp.mean_abs_error);
        for rel in ["designs/wp_step1.csv", "designs/wp_step2.csv", "models/wp_area.json", "grids/wp_area_mse.ppm"] {
            assert!(store.exists(rel), "{rel}");
        }

        let (name, field) = grid_command(&wp, &store, None).unwrap();
        assert_eq!(name, "wp_area");
        assert_eq!(field, r.field);
    }

    #[test]
    fn simulate_and_tabulate() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::default();
        let store = Store::open(dir.path(), &c).unwrap();
        let rec = simulate_command(&c, &store, DesignPoint::new(15.0, 8)).unwrap();
        let tel = store.path(&format!("runs/{}.telemetry.csv", rec.run_id));
        let rescored = indices_command(&c, &store, Some((&tel, DesignPoint::new(15.0, 8)))).unwrap();
        assert_eq!(rescored[0].1, rec.scores.record);
        let table = indices_command(&c, &store, None).unwrap();
        assert_eq!(table.len(), 1);
        assert!(store.exists("runs/records.csv"));
        let runner = SimRunner::new(&c, Some(&store));
        assert_eq!(runner.record(&DesignPoint::new(15.0, 8)).unwrap(), rec);
        assert_eq!(runner.simulated(), 0);
    }
}
