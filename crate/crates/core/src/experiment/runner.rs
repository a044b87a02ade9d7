use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::store::Store;
use super::{ExperimentConfig, ExperimentError};
use crate::adaptive::{RunError, Runner};
use crate::design::DesignPoint;
use crate::geometry::{build_run_plan_with, make_path, PathParams, Phase};
use crate::indices::{score_run, IndexKind, RunScores};
use crate::sim::{simulate_run, Telemetry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    /// Simulated start and end time, seconds.
    pub start: f64,
    pub end: f64,
    pub samples: usize,
}

/// Persisted outcome of one forth-and-back run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub point: DesignPoint,
    pub path: PathParams,
    pub config_hash: String,
    pub sim_hash: String,
    pub noise_seed: u64,
    pub scores: RunScores,
    pub phases: Vec<PhaseSpan>,
    pub timed_out: Vec<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry: Option<Telemetry>,
}

impl RunRecord {
    pub fn id_for(point: &DesignPoint) -> String {
        format!("a{}_k{}", point.x1, point.x2)
    }

    pub fn response(&self, kind: IndexKind) -> f64 {
        self.scores.record.value(kind)
    }
}

/// Builds the plan for `point`, simulates it and scores both directions.
pub fn run_point(config: &ExperimentConfig, point: DesignPoint) -> Result<(RunRecord, Telemetry), ExperimentError> {
    let point = config.point(point.x1, point.x2 as f64)?;
    let path = make_path(config.path.family, point.x1, point.x2 as f64, config.box_geometry.width)?;
    let plan = build_run_plan_with(&path, &config.box_geometry, &config.plan_settings())?;
    let noise_seed = config.run_seed(&point);
    let telemetry = simulate_run(&plan, &config.vehicle, &config.noise_params(noise_seed))?;
    let scores = score_run(&telemetry, &plan, &config.scoring)?;
    let phases = Phase::ALL
        .iter()
        .map(|&phase| {
            let s = telemetry.phase_samples(phase);
            PhaseSpan {
                phase,
                start: s.first().map_or(0.0, |x| x.t),
                end: s.last().map_or(0.0, |x| x.t),
                samples: s.len(),
            }
        })
        .collect();
    let record = RunRecord {
        run_id: RunRecord::id_for(&point),
        point,
        path,
        config_hash: config.hash(),
        sim_hash: config.sim_hash(),
        noise_seed,
        scores,
        phases,
        timed_out: telemetry.timed_out.clone(),
        telemetry: config.store_telemetry.then(|| telemetry.clone()),
    };
    Ok((record, telemetry))
}

/// Simulator-backed runner. Records already in the store are reused, so an
/// interrupted experiment resumes where it stopped.
pub struct SimRunner<'a> {
    config: &'a ExperimentConfig,
    store: Option<&'a Store>,
    attempts: AtomicUsize,
    simulated: AtomicUsize,
    crash_after: Option<usize>,
}

impl<'a> SimRunner<'a> {
    pub fn new(config: &'a ExperimentConfig, store: Option<&'a Store>) -> Self {
        SimRunner { config, store, attempts: AtomicUsize::new(0), simulated: AtomicUsize::new(0), crash_after: None }
    }

    /// Fails every simulation after the first `n`, as if the process died.
    pub fn crash_after(mut self, n: usize) -> Self {
        self.crash_after = Some(n);
        self
    }

    /// Number of fresh simulations performed.
    pub fn simulated(&self) -> usize {
        self.simulated.load(Ordering::SeqCst)
    }

    pub fn record(&self, point: &DesignPoint) -> Result<RunRecord, ExperimentError> {
        if let Some(store) = self.store {
            if let Some(r) = store.load_run(&RunRecord::id_for(point))? {
                return Ok(r);
            }
        }
        let k = self.attempts.fetch_add(1, Ordering::SeqCst);
        if self.crash_after.is_some_and(|n| k >= n) {
            return Err(ExperimentError::Io(format!("run {point} interrupted")));
        }
        let (record, _) = run_point(self.config, *point)?;
        self.simulated.fetch_add(1, Ordering::SeqCst);
        if let Some(store) = self.store {
            store.save_run(&record)?;
        }
        log::info!("run {} done: D_A {:.4}, D_H {:.4}", record.run_id, record.scores.record.d_a, record.scores.record.d_h);
        Ok(record)
    }
}

impl Runner for SimRunner<'_> {
    fn respond(&self, point: &DesignPoint) -> Result<f64, RunError> {
        self.record(point).map(|r| r.response(self.config.index)).map_err(|e| e.into_run_error(*point))
    }
}
