//! End-to-end commands behind the CLI verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{DiffusionSection, RunConfig, SpeciesEstimate};
use crate::diffusion::{compute_series, DiffusionSeries};
use crate::export::{write_csv, write_json};
use crate::geometry::SeparatrixModel;
use crate::pipeline::{run_pipeline, PipelineError, PipelineOutput, StepStat};
use crate::source::{SourceConfig, Species, SyntheticSource};
use crate::staging::{StagingError, StepFrame};
use crate::trajstore::{write_manifest, TrajectoryDataset};
use crate::Error;

pub const REPORT_FILE: &str = "run_report.json";

pub fn trajectory_file(dir: &Path, species: Species) -> PathBuf {
    dir.join(format!("{species}.strj"))
}

fn export_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}_diffusion.csv")),
        dir.join(format!("{stem}_diffusion.json")),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeciesReport {
    pub species: Species,
    pub trajectory: PathBuf,
    pub csv: PathBuf,
    pub json: PathBuf,
    pub seed_count: usize,
    pub steps: usize,
    pub worker_count: usize,
    pub peak_retained: usize,
    pub retention_bound: usize,
    pub max_frame: usize,
    pub total_records: u64,
    /// Ids handed out by the source over the run.
    pub tagged_total: u64,
    /// Records in each step's frame.
    pub tagged_per_step: Vec<usize>,
    pub region_counts: Vec<usize>,
    pub per_step: Vec<StepStat>,
    pub pipeline_wall_s: f64,
    pub diffusion_wall_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub wall_s: f64,
    pub config_digest: String,
    pub out_dir: PathBuf,
    pub species: Vec<SpeciesReport>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn pipeline_failure(species: Species, e: PipelineError) -> Error {
    let step = match &e {
        PipelineError::Timeout { last } => Some(last.map_or(0, |s| s + 1)),
        other => other.step(),
    };
    match step {
        Some(step) => Error::AtStep {
            species: species.name().into(),
            step,
            source: Box::new(Error::Pipeline(e)),
        },
        None => Error::Pipeline(e),
    }
}

/// Producer: run the source into the staging writer until done or stopped.
fn produce(
    cfg: SourceConfig,
    mut writer: crate::staging::StepWriter,
    properties: &[&str],
    stop: &AtomicBool,
) -> Result<u64, Error> {
    let mut src = SyntheticSource::new(cfg)?;
    while let Some(batch) = src.advance() {
        if stop.load(Ordering::SeqCst) {
            // closing the stream lets the consumer drain what it already has
            writer.close()?;
            return Err(Error::Interrupted);
        }
        let frame = StepFrame::from_batch_with(&batch, properties)?;
        match writer.write_frame(frame) {
            Ok(()) => {}
            // the consumer gave up; its error is the one worth reporting
            Err(StagingError::Disconnected) => return Ok(src.issued_ids()),
            Err(e) => return Err(e.into()),
        }
    }
    writer.close()?;
    Ok(src.issued_ids())
}

/// Stream one species through staging and the pipeline.
fn stream_species(config: &RunConfig, source: &SourceConfig, stop: &AtomicBool) -> Result<(PipelineOutput, u64), Error> {
    let species = source.species;
    let (writer, mut reader) = config.staging.open(species)?;
    let properties = config.staging.frame_properties();
    thread::scope(|scope| {
        let producer = scope.spawn(|| produce(source.clone(), writer, &properties, stop));
        let out = run_pipeline(&mut reader, &config.pipeline, config.staging.timeout());
        drop(reader);
        let produced = producer.join().expect("producer panicked");
        match (produced, out) {
            (Err(Error::Interrupted), _) => Err(Error::Interrupted),
            (_, Err(e)) => Err(pipeline_failure(species, e)),
            (Err(e), _) => Err(e),
            (Ok(issued), Ok(out)) => Ok((out, issued)),
        }
    })
}

/// Write a dataset's diffusion exports into `dir` under `stem`.
fn export_series(series: &DiffusionSeries, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), Error> {
    let (csv, json) = export_paths(dir, stem);
    write_csv(series, &csv)?;
    write_json(series, &json)?;
    Ok((csv, json))
}

/// Simulate, assemble, store and analyse every configured species.
pub fn cmd_run(config: &RunConfig, stop: &AtomicBool) -> Result<RunReport, Error> {
    config.validate()?;
    let started = Instant::now();
    let started_unix_s = unix_now();
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let digest = config.digest();

    let streamed: Vec<Result<(PipelineOutput, u64), Error>> = thread::scope(|scope| {
        let handles: Vec<_> = config
            .sources
            .iter()
            .map(|s| scope.spawn(move || stream_species(config, s, stop)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("species stream panicked")).collect()
    });
    if streamed.iter().any(|r| matches!(r, Err(Error::Interrupted))) {
        return Err(Error::Interrupted);
    }

    let mut reports = Vec::new();
    for (source, result) in config.sources.iter().zip(streamed) {
        let (out, issued) = result?;
        let species = source.species;
        log::info!(
            "{species}: {} seeds over {} steps, peak retained {} (bound {})",
            out.stats.seed_count,
            out.stats.steps,
            out.stats.peak_retained,
            out.stats.retention_bound()
        );
        let t = Instant::now();
        let ds = TrajectoryDataset::from_pipeline(&out, source.dt)?;
        let traj = trajectory_file(dir, species);
        ds.write(&traj)?;
        write_manifest(&ds, &traj, Some(digest.clone()))?;
        let dcfg = config.diffusion.to_config(config.geometry, source.dt)?;
        let series = compute_series(&ds, &dcfg)?;
        let (csv, json) = export_series(&series, dir, species.name())?;
        let stats = out.stats;
        reports.push(SpeciesReport {
            species,
            trajectory: traj,
            csv,
            json,
            seed_count: stats.seed_count,
            steps: stats.steps,
            worker_count: stats.worker_count,
            peak_retained: stats.peak_retained,
            retention_bound: stats.retention_bound(),
            max_frame: stats.max_frame,
            total_records: stats.total_records,
            tagged_total: issued,
            tagged_per_step: stats.per_step.iter().map(|s| s.records_in).collect(),
            region_counts: series.region_counts.clone(),
            per_step: stats.per_step,
            pipeline_wall_s: stats.wall_s,
            diffusion_wall_s: t.elapsed().as_secs_f64(),
        });
    }

    let report = RunReport {
        started_unix_s,
        finished_unix_s: unix_now(),
        wall_s: started.elapsed().as_secs_f64(),
        config_digest: digest,
        out_dir: dir.clone(),
        species: reports,
    };
    let path = dir.join(REPORT_FILE);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct DiffuseOutput {
    pub series: DiffusionSeries,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Recompute diffusion from a stored trajectory file.
pub fn cmd_diffuse(
    trajectory: &Path,
    section: &DiffusionSection,
    model: SeparatrixModel,
    out_dir: &Path,
) -> Result<DiffuseOutput, Error> {
    let ds = TrajectoryDataset::read(trajectory)?;
    let dcfg = section.to_config(model, ds.dt)?;
    let series = compute_series(&ds, &dcfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = trajectory
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| ds.species.name().to_string());
    let (csv, json) = export_series(&series, out_dir, &stem)?;
    Ok(DiffuseOutput { series, csv, json })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<(String, String)>,
    pub estimates: Vec<SpeciesEstimate>,
    pub regions: usize,
    pub config_digest: String,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Dry-run validation with derived sizing figures.
pub fn cmd_validate(config: &RunConfig) -> ValidationReport {
    ValidationReport {
        issues: config.issues(),
        estimates: config.estimates(),
        regions: config.diffusion.region_specs().map_or(0, |r| r.len()),
        config_digest: config.digest(),
    }
}
