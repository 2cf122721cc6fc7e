use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Counts particle records held by the analysis side at any moment.
#[derive(Debug, Clone, Default)]
pub struct RetentionMeter {
    inner: Arc<Counters>,
}

#[derive(Debug, Default)]
struct Counters {
    current: AtomicUsize,
    peak: AtomicUsize,
}

/// Releases its records from the meter when dropped.
#[derive(Debug)]
pub struct Held {
    meter: RetentionMeter,
    records: usize,
}

impl RetentionMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hold(&self, records: usize) -> Held {
        let now = self.inner.current.fetch_add(records, Ordering::SeqCst) + records;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
        Held {
            meter: self.clone(),
            records,
        }
    }

    pub fn current(&self) -> usize {
        self.inner.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }
}

impl Held {
    pub fn records(&self) -> usize {
        self.records
    }
}

impl Drop for Held {
    fn drop(&mut self) {
        self.meter.inner.current.fetch_sub(self.records, Ordering::SeqCst);
    }
}
