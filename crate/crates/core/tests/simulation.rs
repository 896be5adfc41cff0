use wswor::protocol::{CoordinatorVariant, SworFactory};
use wswor::simnet::{
    replay, run, run_probed, Coordinator, MessageLedger, Partitioner, RunHandle, SimConfig,
    Simulation, Transcript,
};
use wswor::streams::{from_weights, gen_zipf, unit};
use wswor::swr::SwrFactory;
use wswor::{Error, ItemId};

#[test]
fn empty_stream_is_silent() {
    let out = run(&[], &SimConfig::new(3, 1).with_transcript(), &SworFactory::new(2)).unwrap();
    assert!(out.transcript.is_empty());
    assert_eq!(out.ledger.total(), 0);
    assert!(out.coordinator.query().unwrap().is_empty());
}

#[test]
fn single_item_single_site() {
    let stream = from_weights(&[1.0]).unwrap();
    let out = run(&stream, &SimConfig::new(1, 1).with_transcript(), &SworFactory::new(1)).unwrap();
    assert_eq!(out.ledger.early, 1);
    assert_eq!(out.ledger.total(), 1);
    assert!(!out.coordinator.is_saturated(0));
    assert_eq!(out.coordinator.level_count(0), 1);
    assert_eq!(out.coordinator.query().unwrap(), vec![(ItemId::new(1), 1.0)]);
    let lines: Vec<&str> = out.transcript.as_str().lines().collect();
    assert_eq!(lines[0], "1,item,-,s0,1,1,");
    assert_eq!(lines[1], "1,early,s0,c,1,1,");
    assert_eq!(lines[2], "1,digest,c,c,,0,0");
}

#[test]
fn reruns_are_byte_identical() {
    let stream = gen_zipf(3000, 1.1, 4).unwrap();
    let cfg = SimConfig::new(5, 99)
        .with_partitioner(Partitioner::Random)
        .with_transcript();
    let a = run(&stream, &cfg, &SworFactory::new(4)).unwrap();
    let b = run(&stream, &cfg, &SworFactory::new(4)).unwrap();
    assert_eq!(a.transcript.as_str(), b.transcript.as_str());
    assert_eq!(a.ledger, b.ledger);
    let c = run(&stream, &SimConfig { seed: 100, ..cfg }, &SworFactory::new(4)).unwrap();
    assert_ne!(a.transcript, c.transcript);
}

#[test]
fn transcript_round_trips_through_disk_and_replays() {
    let stream = gen_zipf(2000, 1.3, 8).unwrap();
    let cfg = SimConfig::new(6, 3)
        .with_partitioner(Partitioner::AdversarialEpoch)
        .with_transcript();
    let out = run(&stream, &cfg, &SworFactory::new(3)).unwrap();
    let dir = std::env::temp_dir().join(format!("wswor-sim-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.txt");
    out.transcript.dump(&path).unwrap();
    let loaded = Transcript::load(&path).unwrap();
    assert_eq!(loaded, out.transcript);
    for (rec, line) in loaded.records().unwrap().iter().zip(loaded.as_str().lines()) {
        assert_eq!(rec.to_line(), line);
    }
    let again = replay(&loaded, &cfg, &SworFactory::new(3)).unwrap();
    assert_eq!(again.transcript, out.transcript);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn tampered_transcript_is_rejected() {
    let stream = unit(200);
    let cfg = SimConfig::new(2, 1).with_transcript();
    let out = run(&stream, &cfg, &SworFactory::new(1)).unwrap();
    let mut lines: Vec<String> = out.transcript.as_str().lines().map(String::from).collect();
    // Move the last coordinator broadcast to the front of the log.
    let pos = lines.iter().rposition(|l| l.contains(",c,s0,")).unwrap();
    let moved = lines.remove(pos);
    lines.insert(0, moved);
    let bad = Transcript::from_text(lines.join("\n") + "\n");
    assert!(matches!(bad.check_fifo(), Err(Error::Protocol(_))));
    let garbled = Transcript::from_text("1,item,-,s0,1\n");
    assert!(matches!(garbled.records(), Err(Error::Parse { line: 1, .. })));
    let commented = Transcript::from_text(format!("# k=2\n{}", out.transcript.as_str()));
    assert_eq!(commented.records().unwrap(), out.transcript.records().unwrap());
    assert_eq!(commented.items().unwrap(), out.transcript.items().unwrap());
}

#[test]
fn ledger_matches_transcript() {
    let stream = gen_zipf(5000, 1.0, 2).unwrap();
    let k = 7;
    let out = run(&stream, &SimConfig::new(k, 5).with_transcript(), &SworFactory::new(3)).unwrap();
    let recs = out.transcript.records().unwrap();
    let count = |kind: &str| recs.iter().filter(|r| r.kind == kind).count() as u64;
    let l = &out.ledger;
    assert_eq!(count("early"), l.early);
    assert_eq!(count("regular"), l.regular);
    assert_eq!(count("level-saturated"), l.saturated_messages());
    assert_eq!(count("update-epoch"), l.epoch_messages());
    assert_eq!(
        l.total(),
        l.early + l.regular + k as u64 * (l.saturated_broadcasts + l.epoch_broadcasts)
    );
    l.check().unwrap();
    let row = l.csv_row(3, 2, out.total_weight, out.items);
    assert_eq!(row.split(',').count(), MessageLedger::CSV_HEADER.split(',').count());
    assert!(row.ends_with(&format!(",{}", l.total())));
}

#[test]
fn one_item_per_site_per_round() {
    let stream = unit(40);
    let out = run(&stream, &SimConfig::new(4, 1).with_transcript(), &SworFactory::new(2)).unwrap();
    let items: Vec<_> = out
        .transcript
        .records()
        .unwrap()
        .into_iter()
        .filter(|r| r.kind == "item")
        .collect();
    assert_eq!(items.last().unwrap().round, 10);
    for w in items.chunks(4) {
        assert!(w.iter().all(|r| r.round == w[0].round));
    }
    let single = run(
        &stream,
        &SimConfig::new(4, 1).with_partitioner(Partitioner::SingleSite).with_transcript(),
        &SworFactory::new(2),
    )
    .unwrap();
    let last = single.transcript.records().unwrap().into_iter().filter(|r| r.kind == "item").last();
    assert_eq!(last.unwrap().round, 40);
}

#[test]
fn delivery_delay_only_shifts_stamps() {
    let stream = gen_zipf(1500, 1.2, 6).unwrap();
    let mut cfg = SimConfig::new(3, 8).with_transcript();
    let a = run(&stream, &cfg, &SworFactory::new(2)).unwrap();
    cfg.delivery = 0;
    let b = run(&stream, &cfg, &SworFactory::new(2)).unwrap();
    assert_eq!(a.coordinator.query().unwrap(), b.coordinator.query().unwrap());
    assert_eq!(a.ledger.total(), b.ledger.total());
    let bcast = |t: &Transcript| {
        t.records()
            .unwrap()
            .into_iter()
            .filter(|r| r.kind == "update-epoch")
            .map(|r| r.round)
            .collect::<Vec<_>>()
    };
    let (ra, rb) = (bcast(&a.transcript), bcast(&b.transcript));
    assert!(!ra.is_empty());
    assert!(ra.iter().zip(&rb).all(|(x, y)| *x == y + 1));
}

#[test]
fn probes_match_incremental_simulation() {
    let stream = gen_zipf(300, 1.5, 1).unwrap();
    let cfg = SimConfig::new(3, 2);
    let factory = SworFactory::new(4);
    let handle = RunHandle::new(&stream, cfg.clone(), &factory);
    assert_eq!(handle.probe_at(1).unwrap(), vec![(stream[0].id, stream[0].weight)]);
    let mut sim = Simulation::new(&factory, cfg.clone()).unwrap();
    let items = wswor::simnet::partition(&stream, &cfg).unwrap();
    for (i, it) in items.iter().enumerate() {
        sim.feed(it).unwrap();
        if i % 37 == 0 {
            assert_eq!(sim.query().unwrap(), handle.probe_at(i + 1).unwrap());
        }
    }
    let final_q = run(&stream, &cfg, &factory).unwrap().coordinator.query().unwrap();
    assert_eq!(handle.probe_at(stream.len()).unwrap(), final_q);
    assert!(matches!(handle.probe_at(0), Err(Error::OutOfRange(_))));
    assert!(matches!(handle.probe_at(301), Err(Error::OutOfRange(_))));
    let (_, many) = run_probed(&stream, &cfg, &factory, &[300, 5]).unwrap();
    assert_eq!(many[0], final_q);
}

#[test]
fn file_order_requires_valid_sites() {
    let mut stream = unit(5);
    stream[2].site = 9;
    let cfg = SimConfig::new(3, 1).with_partitioner(Partitioner::FileOrder);
    assert!(matches!(run(&stream, &cfg, &SworFactory::new(1)), Err(Error::Config(_))));
    assert!(run(&stream, &SimConfig::new(0, 1), &SworFactory::new(1)).is_err());
}

#[test]
fn swr_runs_record_slot_lines() {
    let stream = from_weights(&[3.0, 1.0, 2.0]).unwrap();
    let out = run(&stream, &SimConfig::new(2, 4).with_transcript(), &SwrFactory::new(3)).unwrap();
    let text = out.transcript.as_str();
    assert!(text.lines().nth(1).unwrap().starts_with("1,swr-slot,s0,c,1,3,0:"));
    assert_eq!(out.coordinator.query().unwrap().len(), 3);
    let fractional = from_weights(&[1.5]).unwrap();
    assert!(matches!(
        run(&fractional, &SimConfig::new(1, 1), &SwrFactory::new(1)),
        Err(Error::Domain(_))
    ));
}

#[test]
fn space_variant_is_transcript_equivalent() {
    for seed in 0..5 {
        let stream = gen_zipf(4000, 0.9, seed).unwrap();
        let cfg = SimConfig::new(9, seed).with_transcript().with_invariants();
        let a = run(&stream, &cfg, &SworFactory::new(5)).unwrap();
        let b = run(
            &stream,
            &cfg,
            &SworFactory::new(5).with_variant(CoordinatorVariant::TopS),
        )
        .unwrap();
        assert_eq!(a.transcript, b.transcript);
        let held_a: usize = a.coordinator.buffered_entries().len();
        let held_b: usize = b.coordinator.buffered_entries().len();
        assert!(held_b <= held_a);
    }
}
