//! Step-framed transport between a producer and a single consumer.
//!
//! A writer stages one step at a time (`begin_step`, `put`, `end_step`); the
//! reader observes complete steps only, in step order, exactly once. Two
//! interchangeable transports exist: a bounded in-process channel and a
//! directory of frame files.

mod file;
pub mod frame;
mod memory;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{frame_file_name, END_MARKER};
pub use frame::{Column, ColumnData, StepFrame};
pub use memory::ChannelProbe;

use crate::source::Species;

#[derive(Debug, Error)]
pub enum StagingError {
    #[error("frame error: {0}")]
    Frame(String),
    #[error("staging protocol error: {0}")]
    Protocol(String),
    #[error("corrupt frame{}: {reason}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Integrity { step: Option<u64>, reason: String },
    #[error("staging peer disconnected")]
    Disconnected,
    #[error("staging configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StagingError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StagingError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Outcome of [`StepReader::next_step`].
#[derive(Debug)]
pub enum NextStep {
    Frame(StepFrame),
    EndOfStream,
    Timeout,
}

pub(crate) trait FrameSink: Send {
    fn publish(&mut self, frame: StepFrame) -> Result<(), StagingError>;
    fn close(&mut self) -> Result<(), StagingError>;
}

pub(crate) trait FrameSource: Send {
    fn next(&mut self, timeout: Duration) -> Result<NextStep, StagingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StageMode {
    #[default]
    InProcess,
    File,
}

fn default_capacity() -> usize {
    4
}
fn default_timeout_s() -> f64 {
    60.0
}

/// Transport settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEndpoint {
    #[serde(default)]
    pub mode: StageMode,
    /// Frames buffered before the writer blocks (in-process mode).
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    /// Frame directory (file mode). Each species gets its own subdirectory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// How long the consumer waits for a step before giving up.
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    /// Properties published per frame; every property when absent.
    #[serde(default)]
    pub properties: Option<Vec<String>>,
}

impl Default for StageEndpoint {
    fn default() -> Self {
        StageEndpoint {
            mode: StageMode::InProcess,
            capacity: default_capacity(),
            path: None,
            timeout_s: default_timeout_s(),
            properties: None,
        }
    }
}

impl StageEndpoint {
    pub fn in_process(capacity: usize) -> Self {
        StageEndpoint {
            capacity,
            ..StageEndpoint::default()
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        StageEndpoint {
            mode: StageMode::File,
            path: Some(path.into()),
            ..StageEndpoint::default()
        }
    }

    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.capacity < 1 {
            out.push(("capacity".into(), "must be at least 1".into()));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            out.push(("timeout_s".into(), format!("must be positive, got {}", self.timeout_s)));
        }
        if self.mode == StageMode::File && self.path.is_none() {
            out.push(("path".into(), "file mode needs a directory".into()));
        }
        for name in self.properties.iter().flatten() {
            if !frame::ALL_PROPERTIES.contains(&name.as_str()) {
                out.push(("properties".into(), format!("unknown property '{name}'")));
            }
        }
        if let Some(props) = &self.properties {
            if !props.iter().any(|p| p == frame::ID) {
                out.push(("properties".into(), "must include 'id'".into()));
            }
        }
        out
    }

    /// Property names each frame carries.
    pub fn frame_properties(&self) -> Vec<&str> {
        match &self.properties {
            Some(p) => p.iter().map(String::as_str).collect(),
            None => frame::ALL_PROPERTIES.to_vec(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    /// Open a writer/reader pair for one species' stream.
    pub fn open(&self, species: Species) -> Result<(StepWriter, StepReader), StagingError> {
        if let Some((field, msg)) = self.issues().into_iter().next() {
            return Err(StagingError::Config(format!("{field}: {msg}")));
        }
        match self.mode {
            StageMode::InProcess => {
                let (w, r, _) = channel(self.capacity)?;
                Ok((w, r))
            }
            StageMode::File => {
                let dir = self.path.as_ref().expect("checked above").join(species.name());
                file_stream(&dir)
            }
        }
    }
}

/// Bounded in-process stream; the probe exposes buffer instrumentation.
pub fn channel(capacity: usize) -> Result<(StepWriter, StepReader, ChannelProbe), StagingError> {
    if capacity < 1 {
        return Err(StagingError::Config("capacity must be at least 1".into()));
    }
    let (sink, source, probe) = memory::bounded(capacity);
    Ok((StepWriter::new(Box::new(sink)), StepReader::new(Box::new(source)), probe))
}

/// File-backed stream rooted at `dir`. Stale frames in `dir` are removed.
pub fn file_stream(dir: &Path) -> Result<(StepWriter, StepReader), StagingError> {
    let sink = file::FileSink::create(dir)?;
    let source = file::FileSource::new(dir);
    Ok((StepWriter::new(Box::new(sink)), StepReader::new(Box::new(source))))
}

/// Reader over an existing directory of frame files.
pub fn file_reader(dir: &Path) -> StepReader {
    StepReader::new(Box::new(file::FileSource::new(dir)))
}

/// Producer half of a stream.
pub struct StepWriter {
    sink: Box<dyn FrameSink>,
    open: Option<StepFrame>,
    last_step: Option<u64>,
    closed: bool,
}

impl StepWriter {
    fn new(sink: Box<dyn FrameSink>) -> Self {
        StepWriter {
            sink,
            open: None,
            last_step: None,
            closed: false,
        }
    }

    pub fn begin_step(&mut self, step: u64, time: f64, species: Species) -> Result<(), StagingError> {
        if self.closed {
            return Err(StagingError::Protocol("begin_step on a closed writer".into()));
        }
        if let Some(open) = &self.open {
            return Err(StagingError::Protocol(format!(
                "begin_step({step}) while step {} is still open",
                open.step
            )));
        }
        if let Some(last) = self.last_step {
            if step <= last {
                return Err(StagingError::Protocol(format!(
                    "step {step} does not follow previous step {last}"
                )));
            }
        }
        self.open = Some(StepFrame::new(step, time, species));
        Ok(())
    }

    pub fn put(&mut self, name: &str, data: ColumnData) -> Result<(), StagingError> {
        let frame = self
            .open
            .as_mut()
            .ok_or_else(|| StagingError::Protocol(format!("put('{name}') outside a step")))?;
        frame.push_column(name, data)
    }

    /// Publish the open step. Blocks while the transport is at capacity.
    pub fn end_step(&mut self) -> Result<(), StagingError> {
        let frame = self
            .open
            .take()
            .ok_or_else(|| StagingError::Protocol("end_step without begin_step".into()))?;
        let step = frame.step;
        self.sink.publish(frame)?;
        self.last_step = Some(step);
        Ok(())
    }

    /// Stage a complete frame in one call.
    pub fn write_frame(&mut self, frame: StepFrame) -> Result<(), StagingError> {
        self.begin_step(frame.step, frame.time, frame.species)?;
        let open = self.open.as_mut().expect("just opened");
        open.record_count = frame.record_count;
        for c in frame.columns {
            self.put(&c.name, c.data)?;
        }
        self.end_step()
    }

    /// Signal end-of-stream. Any step still open is discarded.
    pub fn close(&mut self) -> Result<(), StagingError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        self.open = None;
        self.sink.close()
    }

    pub fn last_step(&self) -> Option<u64> {
        self.last_step
    }
}

impl Drop for StepWriter {
    fn drop(&mut self) {
        if let Err(e) = self.close() {
            log::warn!("closing staging writer: {e}");
        }
    }
}

/// Consumer half of a stream.
pub struct StepReader {
    source: Box<dyn FrameSource>,
    last_step: Option<u64>,
    finished: bool,
}

impl StepReader {
    fn new(source: Box<dyn FrameSource>) -> Self {
        StepReader {
            source,
            last_step: None,
            finished: false,
        }
    }

    pub fn next_step(&mut self, timeout: Duration) -> Result<NextStep, StagingError> {
        if self.finished {
            return Ok(NextStep::EndOfStream);
        }
        let next = self.source.next(timeout)?;
        match &next {
            NextStep::Frame(frame) => {
                if let Some(last) = self.last_step {
                    if frame.step <= last {
                        return Err(StagingError::Integrity {
                            step: Some(frame.step),
                            reason: format!("step arrived after step {last}"),
                        });
                    }
                }
                self.last_step = Some(frame.step);
            }
            NextStep::EndOfStream => self.finished = true,
            NextStep::Timeout => {}
        }
        Ok(next)
    }

    /// Drain every remaining frame, failing on timeout.
    pub fn collect_all(&mut self, timeout: Duration) -> Result<Vec<StepFrame>, StagingError> {
        let mut out = Vec::new();
        loop {
            match self.next_step(timeout)? {
                NextStep::Frame(f) => out.push(f),
                NextStep::EndOfStream => return Ok(out),
                NextStep::Timeout => {
                    return Err(StagingError::Protocol(format!(
                        "timed out after step {:?}",
                        self.last_step
                    )))
                }
            }
        }
    }
}
