//! Reference implementations used by the integration tests.
//!
//! Everything here is written independently of the library's pipeline and
//! diffusion code: whole-run retention, hash lookups and plain summation.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::thread;
use std::time::Duration;

use sepstream_core::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use sepstream_core::source::{ParticleRecord, SourceConfig, StepBatch, SyntheticSource};
use sepstream_core::staging::{StageEndpoint, StepFrame};
use sepstream_core::trajstore::TrajectoryDataset;

pub const TIMEOUT: Duration = Duration::from_secs(60);

fn field(r: &ParticleRecord, name: &str) -> f64 {
    match name {
        "psi" => r.psi,
        "theta" => r.theta,
        "zeta" => r.zeta,
        "r" => r.r,
        "vPar" => r.vpar,
        "E" => r.energy,
        "w0" => r.w0,
        "w1" => r.w1,
        "w2" => r.w2,
        "sep_flag" => r.sep_flag,
        other => panic!("no field {other}"),
    }
}

/// Full-retention trajectories: `values[p][row][step]`, `presence[row][step]`.
#[derive(Debug)]
pub struct Oracle {
    pub ids: Vec<u64>,
    pub times: Vec<f64>,
    pub properties: Vec<String>,
    pub presence: Vec<Vec<bool>>,
    pub values: Vec<Vec<Vec<f64>>>,
    /// Records over all steps.
    pub total_records: u64,
    pub max_frame: usize,
}

pub fn all_batches(cfg: &SourceConfig) -> Vec<StepBatch> {
    SyntheticSource::new(cfg.clone()).unwrap().collect()
}

/// Build trajectories from every batch held in memory at once.
pub fn batch_oracle(batches: &[StepBatch], threshold: f64, properties: &[&str]) -> Oracle {
    let float_props: Vec<String> = properties.iter().filter(|p| **p != "id").map(|p| p.to_string()).collect();
    let mut ids: Vec<u64> = batches[0]
        .records
        .iter()
        .filter(|r| r.sep_flag <= threshold && r.w0 != -1.0)
        .map(|r| r.id)
        .collect();
    ids.sort_unstable();
    assert_eq!(ids.iter().collect::<HashSet<_>>().len(), ids.len(), "duplicate seed ids");

    let steps = batches.len();
    let mut presence = vec![vec![false; steps]; ids.len()];
    let mut values = vec![vec![vec![f64::NAN; steps]; ids.len()]; float_props.len()];
    let mut gone = vec![false; ids.len()];
    for (s, batch) in batches.iter().enumerate() {
        let by_id: HashMap<u64, &ParticleRecord> = batch.records.iter().map(|r| (r.id, r)).collect();
        for (row, id) in ids.iter().enumerate() {
            match by_id.get(id) {
                Some(rec) if !gone[row] => {
                    presence[row][s] = true;
                    for (p, name) in float_props.iter().enumerate() {
                        values[p][row][s] = field(rec, name);
                    }
                }
                Some(_) => {}
                None => gone[row] = true,
            }
        }
    }
    Oracle {
        ids,
        times: batches.iter().map(|b| b.time).collect(),
        properties: float_props,
        presence,
        values,
        total_records: batches.iter().map(|b| b.records.len() as u64).sum(),
        max_frame: batches.iter().map(|b| b.records.len()).max().unwrap(),
    }
}

/// First difference between a dataset and the oracle, if any.
pub fn mismatch(ds: &TrajectoryDataset, o: &Oracle) -> Option<String> {
    if ds.ids != o.ids {
        return Some(format!("id lists differ ({} vs {} ids)", ds.ids.len(), o.ids.len()));
    }
    if ds.times.len() != o.times.len() || ds.times.iter().zip(&o.times).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Some("step times differ".into());
    }
    if ds.properties != o.properties {
        return Some(format!("properties {:?} vs {:?}", ds.properties, o.properties));
    }
    for row in 0..o.ids.len() {
        for s in 0..o.times.len() {
            if ds.present(row, s) != o.presence[row][s] {
                return Some(format!("presence differs for id {} at step {s}", o.ids[row]));
            }
            for p in 0..o.properties.len() {
                if ds.value(p, row, s).to_bits() != o.values[p][row][s].to_bits() {
                    return Some(format!(
                        "{} differs for id {} at step {s}: {} vs {}",
                        o.properties[p],
                        o.ids[row],
                        ds.value(p, row, s),
                        o.values[p][row][s]
                    ));
                }
            }
        }
    }
    None
}

/// Run a source through staging and the streaming pipeline.
pub fn stream(
    cfg: &SourceConfig,
    endpoint: &StageEndpoint,
    pipeline: &PipelineConfig,
    properties: &[&str],
) -> PipelineOutput {
    let (mut writer, mut reader) = endpoint.open(cfg.species).unwrap();
    let src_cfg = cfg.clone();
    let props: Vec<String> = properties.iter().map(|s| s.to_string()).collect();
    let producer = thread::spawn(move || {
        let names: Vec<&str> = props.iter().map(String::as_str).collect();
        for batch in SyntheticSource::new(src_cfg).unwrap() {
            let frame = StepFrame::from_batch_with(&batch, &names).unwrap();
            if writer.write_frame(frame).is_err() {
                return;
            }
        }
        writer.close().unwrap();
    });
    let out = run_pipeline(&mut reader, pipeline, TIMEOUT).unwrap();
    drop(reader);
    producer.join().unwrap();
    out
}

/// Direct evaluation of the weighted moments over `(delta, w0)` pairs.
pub fn direct_moments(samples: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let kept: Vec<(f64, f64)> = samples.iter().copied().filter(|&(_, w)| w != -1.0).collect();
    let w: f64 = kept.iter().map(|&(_, w)| w).sum();
    if w == 0.0 {
        return None;
    }
    let m = kept.iter().map(|&(d, w)| d * w).sum::<f64>() / w;
    let msq = kept.iter().map(|&(d, w)| d * d * w).sum::<f64>() / w;
    Some((m, msq, w))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}
