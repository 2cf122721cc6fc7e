use std::ops::Range;

use super::{FillPolicy, PipelineError, SeedSet};

/// A worker's view of one trimmed step: sorted ids plus aligned columns.
#[derive(Debug, Clone)]
pub struct StepSlice<'a> {
    pub ids: &'a [u64],
    pub columns: &'a [Vec<f64>],
    pub range: Range<usize>,
}

impl<'a> StepSlice<'a> {
    pub fn new(ids: &'a [u64], columns: &'a [Vec<f64>], range: Range<usize>) -> Self {
        StepSlice { ids, columns, range }
    }

    pub fn whole(ids: &'a [u64], columns: &'a [Vec<f64>]) -> Self {
        StepSlice::new(ids, columns, 0..ids.len())
    }

    fn ids(&self) -> &'a [u64] {
        &self.ids[self.range.clone()]
    }
}

/// Particle-major trajectories for one contiguous shard of seed ids.
#[derive(Debug, Clone)]
pub struct TrajectoryBlock {
    pub worker: usize,
    pub ids: Vec<u64>,
    pub properties: Vec<String>,
    pub steps_filled: usize,
    /// `values[p][row][step]`.
    values: Vec<Vec<Vec<f64>>>,
    /// `presence[row][step]`.
    presence: Vec<Vec<bool>>,
    gone: Vec<bool>,
    fill: FillPolicy,
}

impl TrajectoryBlock {
    /// Start a block from the step-0 values of seed positions `range`.
    pub fn from_seeds(worker: usize, seeds: &SeedSet, range: Range<usize>, fill: FillPolicy) -> Self {
        let rows = range.len();
        let values = seeds
            .initial
            .iter()
            .map(|col| col[range.clone()].iter().map(|&v| vec![v]).collect())
            .collect();
        TrajectoryBlock {
            worker,
            ids: seeds.ids[range].to_vec(),
            properties: seeds.properties.clone(),
            steps_filled: 1,
            values,
            presence: vec![vec![true]; rows],
            gone: vec![false; rows],
            fill,
        }
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn value(&self, property: usize, row: usize, step: usize) -> f64 {
        self.values[property][row][step]
    }

    /// One particle's full series for a property.
    pub fn series(&self, property: usize, row: usize) -> &[f64] {
        &self.values[property][row]
    }

    pub fn present(&self, row: usize, step: usize) -> bool {
        self.presence[row][step]
    }

    pub fn presence_row(&self, row: usize) -> &[bool] {
        &self.presence[row]
    }

    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }

    /// Samples currently held (rows × steps).
    pub fn samples(&self) -> usize {
        self.rows() * self.steps_filled
    }

    /// Write one step's column. Ids missing from `slice` are marked absent and
    /// receive the fill value; with an absorbing policy they stay absent.
    pub fn append_step(&mut self, step: u64, slice: StepSlice<'_>) -> Result<(), PipelineError> {
        if step != self.steps_filled as u64 {
            return Err(PipelineError::Protocol(format!(
                "worker {} expected step {}, got {step}",
                self.worker, self.steps_filled
            )));
        }
        if slice.columns.len() != self.properties.len() {
            return Err(PipelineError::Integrity {
                step,
                reason: format!(
                    "{} property columns for a block with {}",
                    slice.columns.len(),
                    self.properties.len()
                ),
            });
        }

        // resolve every incoming id before touching the block
        let mut rows = Vec::with_capacity(slice.range.len());
        let mut seen = vec![false; self.rows()];
        for &id in slice.ids() {
            let row = self
                .ids
                .binary_search(&id)
                .map_err(|_| PipelineError::Routing { step, id, worker: self.worker })?;
            if std::mem::replace(&mut seen[row], true) {
                return Err(PipelineError::Integrity {
                    step,
                    reason: format!("particle id {id} delivered twice"),
                });
            }
            rows.push(row);
        }

        let fill = self.fill.fill_value;
        for per_row in &mut self.values {
            per_row.iter_mut().for_each(|series| series.push(fill));
        }
        self.presence.iter_mut().for_each(|p| p.push(false));

        let col = self.steps_filled;
        for (k, &row) in rows.iter().enumerate() {
            if self.fill.absorbing && self.gone[row] {
                continue;
            }
            let src = slice.range.start + k;
            for (p, per_row) in self.values.iter_mut().enumerate() {
                per_row[row][col] = slice.columns[p][src];
            }
            self.presence[row][col] = true;
        }
        for (row, g) in self.gone.iter_mut().enumerate() {
            if !self.presence[row][col] {
                *g = true;
            }
        }
        self.steps_filled += 1;
        Ok(())
    }
}
