use std::sync::Arc;

use burstlab::generator::{
    load_trace, BurstDescriptor, BurstGenerator, TraceFile, TraceFileBurstGenerator,
    VrBurstGenerator,
};
use burstlab::model::{VrModel, VrModelConstants, VrStreamParams};
use burstlab::rv::RngStream;
use burstlab::Error;

fn synthetic(n: usize, seed: u64) -> TraceFile {
    let model = VrModel::new(
        VrStreamParams::from_mbps(30.0, 60.0).unwrap(),
        VrModelConstants::default(),
    )
    .unwrap();
    let mut g = VrBurstGenerator::new(model, RngStream::new(seed, 0));
    let records = (0..n)
        .map(|_| {
            let b = g.generate_burst().unwrap();
            // Trace files carry microsecond periods.
            BurstDescriptor {
                burst_size: b.burst_size,
                next_period_ns: (b.next_period_ns / 1000).max(1) * 1000,
            }
        })
        .collect();
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("fps".to_string(), "60".to_string());
    TraceFile { metadata, records }
}

#[test]
fn write_load_replay_reproduces_records() {
    let trace = synthetic(500, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    trace
        .write_to(std::fs::File::create(&path).unwrap())
        .unwrap();

    let loaded = load_trace(&path).unwrap();
    assert_eq!(loaded, trace);

    let mut g = TraceFileBurstGenerator::new(Arc::new(loaded));
    let mut replayed = Vec::new();
    while g.has_next_burst() {
        replayed.push(g.generate_burst().unwrap());
    }
    assert_eq!(replayed, trace.records);
    assert!(matches!(g.generate_burst(), Err(Error::Exhausted)));
}

#[test]
fn text_is_stable_across_round_trips() {
    let text = synthetic(50, 9).to_csv_string();
    assert_eq!(TraceFile::parse(&text).unwrap().to_csv_string(), text);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_trace(std::path::Path::new("/nonexistent/trace.csv")).unwrap_err();
    assert!(err.is_io(), "{err:?}");
}
