use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use super::{FrameSink, FrameSource, NextStep, StagingError, StepFrame};

/// Written (atomically) when the writer closes the stream.
pub const END_MARKER: &str = "stream.end";

const POLL: Duration = Duration::from_millis(2);

pub fn frame_file_name(step: u64) -> String {
    format!("step_{step:08}.ssf")
}

fn parse_frame_file_name(name: &str) -> Option<u64> {
    name.strip_prefix("step_")?.strip_suffix(".ssf")?.parse().ok()
}

/// Write `bytes` to `path` so that readers only ever see the complete file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StagingError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| StagingError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StagingError::io(path, e))
}

pub(super) struct FileSink {
    dir: PathBuf,
    closed: bool,
}

impl FileSink {
    pub(super) fn create(dir: &Path) -> Result<Self, StagingError> {
        fs::create_dir_all(dir).map_err(|e| StagingError::io(dir, e))?;
        for entry in fs::read_dir(dir).map_err(|e| StagingError::io(dir, e))? {
            let entry = entry.map_err(|e| StagingError::io(dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let stale = name == END_MARKER
                || name.starts_with(END_MARKER)
                || (name.starts_with("step_") && (name.ends_with(".ssf") || name.ends_with(".ssf.tmp")));
            if stale {
                fs::remove_file(entry.path()).map_err(|e| StagingError::io(&entry.path(), e))?;
            }
        }
        Ok(FileSink {
            dir: dir.to_path_buf(),
            closed: false,
        })
    }
}

impl FrameSink for FileSink {
    fn publish(&mut self, frame: StepFrame) -> Result<(), StagingError> {
        let path = self.dir.join(frame_file_name(frame.step));
        write_atomic(&path, &frame.encode())
    }

    fn close(&mut self) -> Result<(), StagingError> {
        if !self.closed {
            self.closed = true;
            write_atomic(&self.dir.join(END_MARKER), b"end\n")?;
        }
        Ok(())
    }
}

pub(super) struct FileSource {
    dir: PathBuf,
    last: Option<u64>,
}

impl FileSource {
    pub(super) fn new(dir: &Path) -> Self {
        FileSource {
            dir: dir.to_path_buf(),
            last: None,
        }
    }

    /// Smallest published step after the last delivered one.
    fn pending(&self) -> Result<Option<u64>, StagingError> {
        let expected = self.last.map_or(0, |s| s + 1);
        if self.dir.join(frame_file_name(expected)).is_file() {
            return Ok(Some(expected));
        }
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(StagingError::io(&self.dir, e)),
        };
        let mut best: Option<u64> = None;
        for entry in entries {
            let entry = entry.map_err(|e| StagingError::io(&self.dir, e))?;
            if let Some(step) = parse_frame_file_name(&entry.file_name().to_string_lossy()) {
                if self.last.is_none_or(|l| step > l) && best.is_none_or(|b| step < b) {
                    best = Some(step);
                }
            }
        }
        Ok(best)
    }
}

impl FrameSource for FileSource {
    fn next(&mut self, timeout: Duration) -> Result<NextStep, StagingError> {
        let deadline = Instant::now() + timeout;
        loop {
            // the marker is checked before listing: once it exists every frame is visible
            let ended = self.dir.join(END_MARKER).is_file();
            if let Some(step) = self.pending()? {
                let path = self.dir.join(frame_file_name(step));
                let bytes = fs::read(&path).map_err(|e| StagingError::io(&path, e))?;
                let frame = StepFrame::decode(&bytes, Some(step))?;
                if frame.step != step {
                    return Err(StagingError::Integrity {
                        step: Some(step),
                        reason: format!("file holds step {}", frame.step),
                    });
                }
                self.last = Some(step);
                return Ok(NextStep::Frame(frame));
            }
            if ended {
                return Ok(NextStep::EndOfStream);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(NextStep::Timeout);
            }
            thread::sleep(POLL.min(deadline - now));
        }
    }
}
