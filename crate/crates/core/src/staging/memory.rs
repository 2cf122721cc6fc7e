use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{FrameSink, FrameSource, NextStep, StagingError, StepFrame};

#[derive(Default)]
struct State {
    frames: VecDeque<StepFrame>,
    closed: bool,
    reader_gone: bool,
    peak_buffered: usize,
    published: u64,
    blocked_publishes: u64,
}

struct Shared {
    capacity: usize,
    state: Mutex<State>,
    changed: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub(super) struct ChannelSink(Arc<Shared>);
pub(super) struct ChannelSource(Arc<Shared>);

/// Read-only view of an in-process channel's buffer counters.
#[derive(Clone)]
pub struct ChannelProbe(Arc<Shared>);

pub(super) fn bounded(capacity: usize) -> (ChannelSink, ChannelSource, ChannelProbe) {
    let shared = Arc::new(Shared {
        capacity,
        state: Mutex::new(State::default()),
        changed: Condvar::new(),
    });
    (
        ChannelSink(shared.clone()),
        ChannelSource(shared.clone()),
        ChannelProbe(shared),
    )
}

impl FrameSink for ChannelSink {
    fn publish(&mut self, frame: StepFrame) -> Result<(), StagingError> {
        let shared = &self.0;
        let mut st = shared.lock();
        if st.frames.len() >= shared.capacity && !st.reader_gone {
            st.blocked_publishes += 1;
        }
        while st.frames.len() >= shared.capacity && !st.reader_gone {
            st = shared.changed.wait(st).unwrap_or_else(|p| p.into_inner());
        }
        if st.reader_gone {
            return Err(StagingError::Disconnected);
        }
        st.frames.push_back(frame);
        st.published += 1;
        st.peak_buffered = st.peak_buffered.max(st.frames.len());
        shared.changed.notify_all();
        Ok(())
    }

    fn close(&mut self) -> Result<(), StagingError> {
        let mut st = self.0.lock();
        st.closed = true;
        self.0.changed.notify_all();
        Ok(())
    }
}

impl FrameSource for ChannelSource {
    fn next(&mut self, timeout: Duration) -> Result<NextStep, StagingError> {
        let shared = &self.0;
        let deadline = Instant::now() + timeout;
        let mut st = shared.lock();
        loop {
            if let Some(frame) = st.frames.pop_front() {
                shared.changed.notify_all();
                return Ok(NextStep::Frame(frame));
            }
            if st.closed {
                return Ok(NextStep::EndOfStream);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(NextStep::Timeout);
            }
            st = shared
                .changed
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }
}

impl Drop for ChannelSource {
    fn drop(&mut self) {
        let mut st = self.0.lock();
        st.reader_gone = true;
        st.frames.clear();
        self.0.changed.notify_all();
    }
}

impl ChannelProbe {
    pub fn capacity(&self) -> usize {
        self.0.capacity
    }

    /// Frames published but not yet taken by the reader.
    pub fn buffered(&self) -> usize {
        self.0.lock().frames.len()
    }

    pub fn peak_buffered(&self) -> usize {
        self.0.lock().peak_buffered
    }

    pub fn published(&self) -> u64 {
        self.0.lock().published
    }

    /// How many publishes found the buffer full and had to wait.
    pub fn blocked_publishes(&self) -> u64 {
        self.0.lock().blocked_publishes
    }
}
