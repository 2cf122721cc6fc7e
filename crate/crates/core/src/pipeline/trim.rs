use super::{PipelineError, SeedSet};
use crate::staging::frame::{ColumnData, ID};
use crate::staging::StepFrame;

/// A step's seed records, sorted by id, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedStep {
    pub step: u64,
    pub time: f64,
    /// Strictly increasing.
    pub ids: Vec<u64>,
    /// One column per seed-set property, aligned with `ids`.
    pub columns: Vec<Vec<f64>>,
    /// Records in the frame that were not seeds.
    pub dropped: usize,
}

impl TrimmedStep {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rebuild a frame from the trimmed records (same property layout).
    pub fn to_frame(&self, species: crate::source::Species, properties: &[String]) -> StepFrame {
        let mut f = StepFrame::new(self.step, self.time, species);
        f.push_column(ID, ColumnData::U64(self.ids.clone())).expect("fresh frame");
        for (name, col) in properties.iter().zip(&self.columns) {
            f.push_column(name, ColumnData::F64(col.clone())).expect("aligned columns");
        }
        f
    }
}

/// Keep only the frame's seed records, sorted ascending by id.
///
/// Particles tagged after step 0 are dropped. Step 0 belongs to the seed
/// set and is rejected here.
pub fn trim(frame: &StepFrame, seeds: &SeedSet) -> Result<TrimmedStep, PipelineError> {
    if frame.step == 0 {
        return Err(PipelineError::Protocol("step 0 seeds the run and is not trimmed".into()));
    }
    let step = frame.step;
    let ids = frame
        .ids()
        .ok_or_else(|| PipelineError::MissingColumn { step, name: ID.into() })?;

    let mut all = ids.to_vec();
    all.sort_unstable();
    if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
        return Err(PipelineError::Integrity {
            step,
            reason: format!("duplicate particle id {}", w[0]),
        });
    }
    drop(all);

    let mut kept: Vec<(u64, usize)> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| seeds.contains(**id))
        .map(|(i, &id)| (id, i))
        .collect();
    kept.sort_unstable();

    let mut columns = Vec::with_capacity(seeds.properties.len());
    for name in &seeds.properties {
        let src = frame
            .f64_column(name)
            .ok_or_else(|| PipelineError::MissingColumn { step, name: name.clone() })?;
        columns.push(kept.iter().map(|&(_, i)| src[i]).collect());
    }
    Ok(TrimmedStep {
        step,
        time: frame.time,
        dropped: frame.record_count - kept.len(),
        ids: kept.into_iter().map(|(id, _)| id).collect(),
        columns,
    })
}
