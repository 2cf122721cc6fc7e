use std::thread;
use std::time::Duration;

use sepstream_core::source::{SourceConfig, Species, SyntheticSource};
use sepstream_core::staging::{channel, file_reader, file_stream, NextStep, StagingError, StepFrame};

const T: Duration = Duration::from_secs(10);

fn frames(n: u64) -> Vec<StepFrame> {
    let cfg = SourceConfig { n_particles: 64, n_steps: n, growth_rate: 0.25, seed: 99, ..SourceConfig::default() };
    SyntheticSource::new(cfg).unwrap().map(|b| StepFrame::from_batch(&b)).collect()
}

#[test]
fn both_modes_deliver_identical_frames() {
    let sent = frames(12);

    let (mut w, mut r, probe) = channel(2).unwrap();
    let copy = sent.clone();
    let producer = thread::spawn(move || {
        for f in copy {
            w.write_frame(f).unwrap();
        }
    });
    let via_memory = r.collect_all(T).unwrap();
    producer.join().unwrap();
    assert!(probe.peak_buffered() <= 2);
    assert_eq!(probe.published(), 13);

    let dir = tempfile::tempdir().unwrap();
    let (mut w, mut r) = file_stream(dir.path()).unwrap();
    for f in sent.clone() {
        w.write_frame(f).unwrap();
    }
    w.close().unwrap();
    let via_files = r.collect_all(T).unwrap();

    assert_eq!(via_memory.len(), sent.len());
    assert_eq!(via_files.len(), sent.len());
    for ((a, b), c) in sent.iter().zip(&via_memory).zip(&via_files) {
        assert!(a.bit_eq(b) && a.bit_eq(c), "step {}", a.step);
    }
}

#[test]
fn file_reader_follows_a_live_writer() {
    let dir = tempfile::tempdir().unwrap();
    let (mut w, _) = file_stream(dir.path()).unwrap();
    let mut reader = file_reader(dir.path());
    let sent = frames(4);
    let copy = sent.clone();
    let producer = thread::spawn(move || {
        for f in copy {
            thread::sleep(Duration::from_millis(5));
            w.write_frame(f).unwrap();
        }
    });
    let got = reader.collect_all(T).unwrap();
    producer.join().unwrap();
    assert_eq!(got.len(), 5);
    assert!(got.iter().zip(&sent).all(|(a, b)| a.bit_eq(b)));
}

#[test]
fn reader_gone_surfaces_as_disconnect() {
    let (mut w, r, _) = channel(1).unwrap();
    drop(r);
    let f = StepFrame::new(0, 0.0, Species::Ion);
    assert!(matches!(w.write_frame(f), Err(StagingError::Disconnected)));
}

#[test]
fn silent_writer_times_out() {
    let (_w, mut r, _) = channel(1).unwrap();
    assert!(matches!(r.next_step(Duration::from_millis(20)), Ok(NextStep::Timeout)));
}
