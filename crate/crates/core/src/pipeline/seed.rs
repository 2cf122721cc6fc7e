use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{float_layout, PipelineError};
use crate::source::UNWANTED_WEIGHT;
use crate::staging::frame::{SEP_FLAG, W0};
use crate::staging::StepFrame;

/// Globally sorted ids selected at step 0, with their step-0 values.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    /// Strictly increasing.
    pub ids: Vec<u64>,
    /// Float property names, in the column order of `initial`.
    pub properties: Vec<String>,
    /// `initial[p][i]` is property `p` of seed `ids[i]` at step 0.
    pub initial: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Release the step-0 values once they have been handed to trajectory blocks.
    pub fn release_initial(&mut self) {
        self.initial = Vec::new();
    }
}

/// Select step-0 particles with `sep_flag <= threshold` and `w0 != -1`.
pub fn build_seed_set(frame0: &StepFrame, threshold: f64) -> Result<SeedSet, PipelineError> {
    build_seed_set_from_parts(std::slice::from_ref(frame0), threshold)
}

/// Seed selection over step 0 delivered in several parts (one per producer
/// rank). Each part is filtered and sorted locally; the coordinator merges the
/// sorted runs and drops duplicate ids, keeping the first occurrence.
pub fn build_seed_set_from_parts(parts: &[StepFrame], threshold: f64) -> Result<SeedSet, PipelineError> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(PipelineError::Config(format!(
            "selection threshold must be finite and >= 0, got {threshold}"
        )));
    }
    let first = parts
        .first()
        .ok_or_else(|| PipelineError::Protocol("no step-0 frame to seed from".into()))?;
    let properties = float_layout(first);

    // local phase: one sorted run of (id, row) per part
    let mut runs: Vec<Vec<(u64, usize)>> = Vec::with_capacity(parts.len());
    for frame in parts {
        if frame.step != 0 {
            return Err(PipelineError::Protocol(format!(
                "seed set must be built from step 0, got step {}",
                frame.step
            )));
        }
        let ids = frame.ids().ok_or(PipelineError::MissingColumn { step: 0, name: "id".into() })?;
        let col = |name: &str| {
            frame.f64_column(name).ok_or(PipelineError::MissingColumn {
                step: 0,
                name: name.into(),
            })
        };
        let (sep, w0) = (col(SEP_FLAG)?, col(W0)?);
        let mut run: Vec<(u64, usize)> = (0..frame.record_count)
            .filter(|&i| sep[i] <= threshold && w0[i] != UNWANTED_WEIGHT)
            .map(|i| (ids[i], i))
            .collect();
        run.sort_unstable();
        if let Some(w) = run.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(PipelineError::Integrity {
                step: 0,
                reason: format!("duplicate particle id {}", w[0].0),
            });
        }
        runs.push(run);
    }

    // coordinator phase: k-way merge of the sorted runs
    let merged = merge_sorted_runs(&runs);
    if merged.is_empty() {
        return Err(PipelineError::Config(format!(
            "no particle within selection threshold {threshold} at step 0; nothing to track"
        )));
    }

    let mut cols: Vec<Vec<&[f64]>> = Vec::with_capacity(parts.len());
    for frame in parts {
        let mut v = Vec::with_capacity(properties.len());
        for name in &properties {
            v.push(frame.f64_column(name).ok_or(PipelineError::MissingColumn {
                step: 0,
                name: name.clone(),
            })?);
        }
        cols.push(v);
    }
    let ids = merged.iter().map(|&(id, _, _)| id).collect();
    let initial = (0..properties.len())
        .map(|p| merged.iter().map(|&(_, part, row)| cols[part][p][row]).collect())
        .collect();
    Ok(SeedSet {
        ids,
        properties,
        initial,
        threshold,
    })
}

/// Merge sorted `(id, row)` runs into `(id, run, row)` triples, ascending by
/// id, dropping repeated ids after the first.
pub fn merge_sorted_runs(runs: &[Vec<(u64, usize)>]) -> Vec<(u64, usize, usize)> {
    let total = runs.iter().map(Vec::len).sum();
    let mut out: Vec<(u64, usize, usize)> = Vec::with_capacity(total);
    let mut heap: BinaryHeap<Reverse<(u64, usize, usize)>> = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .map(|(k, _)| Reverse((runs[k][0].0, k, 0)))
        .collect();
    while let Some(Reverse((id, run, pos))) = heap.pop() {
        if out.last().is_none_or(|&(last, _, _)| last != id) {
            out.push((id, run, runs[run][pos].1));
        }
        if let Some(&(next_id, _)) = runs[run].get(pos + 1) {
            heap.push(Reverse((next_id, run, pos + 1)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::Species;
    use crate::staging::frame::{ColumnData, ID, PSI};

    fn frame(step: u64, ids: &[u64], sep: &[f64], w0: &[f64]) -> StepFrame {
        let mut f = StepFrame::new(step, 0.0, Species::Electron);
        f.push_column(ID, ColumnData::U64(ids.to_vec())).unwrap();
        f.push_column(PSI, ColumnData::F64(sep.iter().map(|s| 1.0 + s).collect()))
            .unwrap();
        f.push_column(W0, ColumnData::F64(w0.to_vec())).unwrap();
        f.push_column(SEP_FLAG, ColumnData::F64(sep.to_vec())).unwrap();
        f
    }

    #[test]
    fn threshold_selects_linear_scan() {
        let f = frame(0, &[30, 10, 20], &[0.01, 0.50, 0.02], &[1.0; 3]);
        let s = build_seed_set(&f, 0.03).unwrap();
        // oracle: linear scan then sort
        let mut expect: Vec<u64> = [30u64, 10, 20]
            .iter()
            .zip([0.01, 0.50, 0.02])
            .filter(|(_, s)| *s <= 0.03)
            .map(|(i, _)| *i)
            .collect();
        expect.sort();
        assert_eq!(s.ids, expect);
        assert_eq!(s.ids, vec![20, 30]);
        assert_eq!(s.properties, vec!["psi", "w0", "sep_flag"]);
        assert_eq!(s.initial[2], vec![0.02, 0.01]);
    }

    #[test]
    fn unwanted_excluded() {
        let f = frame(0, &[1, 2], &[0.0, 0.0], &[-1.0, 1.0]);
        assert_eq!(build_seed_set(&f, 0.03).unwrap().ids, vec![2]);
    }

    #[test]
    fn vacuous_filter_takes_everything() {
        let f = frame(0, &[5, 3, 9, 1], &[0.1, 0.2, 0.3, 0.4], &[1.0; 4]);
        assert_eq!(build_seed_set(&f, 0.4).unwrap().ids, vec![1, 3, 5, 9]);
    }

    #[test]
    fn empty_selection_is_config_error() {
        let f = frame(0, &[1, 2], &[0.5, 0.6], &[1.0, 1.0]);
        assert!(matches!(build_seed_set(&f, 0.03), Err(PipelineError::Config(_))));
    }

    #[test]
    fn wrong_step_rejected() {
        let f = frame(2, &[1], &[0.0], &[1.0]);
        assert!(matches!(build_seed_set(&f, 0.03), Err(PipelineError::Protocol(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = frame(0, &[4, 4], &[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(build_seed_set(&f, 0.03), Err(PipelineError::Integrity { .. })));
    }

    #[test]
    fn parts_are_merged_and_deduplicated() {
        let a = frame(0, &[9, 1, 5], &[0.0; 3], &[1.0; 3]);
        let b = frame(0, &[4, 5, 2], &[0.0, 0.01, 0.0], &[1.0; 3]);
        let s = build_seed_set_from_parts(&[a, b], 0.03).unwrap();
        assert_eq!(s.ids, vec![1, 2, 4, 5, 9]);
        // id 5 keeps the first part's value
        assert_eq!(s.initial[2][3], 0.0);
    }

    #[test]
    fn merge_matches_sort_dedup() {
        let runs = vec![vec![(1, 0), (4, 1), (7, 2)], vec![], vec![(2, 0), (4, 1), (8, 2)], vec![(0, 0)]];
        let got: Vec<u64> = merge_sorted_runs(&runs).into_iter().map(|t| t.0).collect();
        let mut all: Vec<u64> = runs.iter().flatten().map(|t| t.0).collect();
        all.sort();
        all.dedup();
        assert_eq!(got, all);
    }
}
