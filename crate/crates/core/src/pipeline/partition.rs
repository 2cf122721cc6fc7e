use std::ops::Range;

use super::PipelineError;

/// Contiguous split of the sorted seed ids over `W` workers.
///
/// Shard `k` owns seed positions `offsets[k]..offsets[k + 1]`; the first
/// `len % W` shards get one extra id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    offsets: Vec<usize>,
    first_ids: Vec<u64>,
    last_id: u64,
}

pub fn assign_shards(sorted_ids: &[u64], worker_count: usize) -> Result<Partition, PipelineError> {
    if worker_count == 0 {
        return Err(PipelineError::Config("worker_count must be at least 1".into()));
    }
    let n = sorted_ids.len();
    if worker_count > n {
        return Err(PipelineError::Config(format!(
            "worker_count {worker_count} exceeds the {n} seed particles"
        )));
    }
    let (base, extra) = (n / worker_count, n % worker_count);
    let mut offsets = Vec::with_capacity(worker_count + 1);
    offsets.push(0);
    for k in 0..worker_count {
        let size = base + usize::from(k < extra);
        offsets.push(offsets[k] + size);
    }
    let first_ids = offsets[..worker_count].iter().map(|&o| sorted_ids[o]).collect();
    Ok(Partition {
        offsets,
        first_ids,
        last_id: sorted_ids[n - 1],
    })
}

impl Partition {
    pub fn worker_count(&self) -> usize {
        self.first_ids.len()
    }

    pub fn shard(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `W + 1` id boundaries; shard `k` holds ids in `[b[k], b[k + 1])`.
    pub fn boundary_ids(&self) -> Vec<u64> {
        let mut b = self.first_ids.clone();
        b.push(self.last_id.saturating_add(1));
        b
    }

    /// Split a sorted id list into per-shard index ranges by binary search.
    pub fn split(&self, sorted_ids: &[u64]) -> Vec<Range<usize>> {
        let mut cuts = Vec::with_capacity(self.worker_count() + 1);
        cuts.push(0);
        for &start in &self.first_ids[1..] {
            cuts.push(sorted_ids.partition_point(|&id| id < start));
        }
        cuts.push(sorted_ids.len());
        cuts.windows(2).map(|w| w[0]..w[1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn six_over_three() {
        let p = assign_shards(&[1, 2, 3, 4, 5, 6], 3).unwrap();
        assert_eq!(p.sizes(), vec![2, 2, 2]);
        assert_eq!(p.boundary_ids(), vec![1, 3, 5, 7]);
    }

    #[test]
    fn single_worker() {
        let ids = [3, 8, 10];
        let p = assign_shards(&ids, 1).unwrap();
        assert_eq!(p.shard(0), 0..3);
    }

    #[test]
    fn seven_over_three() {
        // oracle: ceil for the first n % W shards, floor for the rest
        let (n, w) = (7usize, 3usize);
        let expect: Vec<usize> = (0..w).map(|k| if k < n % w { n.div_ceil(w) } else { n / w }).collect();
        let p = assign_shards(&(0..7).collect::<Vec<u64>>(), 3).unwrap();
        assert_eq!(p.sizes(), expect);
        assert_eq!(p.sizes(), vec![3, 2, 2]);
    }

    #[test]
    fn too_many_workers() {
        assert!(matches!(assign_shards(&[1, 2], 3), Err(PipelineError::Config(_))));
        assert!(matches!(assign_shards(&[1, 2], 0), Err(PipelineError::Config(_))));
    }

    #[test]
    fn split_routes_by_boundary() {
        let p = assign_shards(&[2, 9, 11, 14], 2).unwrap();
        assert_eq!(p.split(&[2, 11, 14]), vec![0..1, 1..3]);
        assert_eq!(p.split(&[]), vec![0..0, 0..0]);
    }

    proptest! {
        #[test]
        fn shards_cover_in_order(mut ids in prop::collection::btree_set(any::<u64>(), 1..200)
                                     .prop_map(|s| s.into_iter().collect::<Vec<_>>()),
                                 w in 1usize..16) {
            prop_assume!(w <= ids.len());
            ids.sort();
            let p = assign_shards(&ids, w).unwrap();
            let sizes = p.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), ids.len());
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let concat: Vec<u64> = (0..w).flat_map(|k| ids[p.shard(k)].to_vec()).collect();
            prop_assert_eq!(&concat, &ids);
            // splitting the full list reproduces the shards
            prop_assert_eq!(p.split(&ids), (0..w).map(|k| p.shard(k)).collect::<Vec<_>>());
        }
    }
}
