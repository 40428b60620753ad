use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::{Duration, Instant};

use epiot::epnet::frame::{read_frame, write_frame};
use epiot::epnet::message::ErrorMsg;
use epiot::epnet::{
    calibrate_local, deploy, jitter_warnings, query_sdm, serve_worker, transform, DeliveryStatus, DeployOptions,
    EpPackage, ExecutorConfig, Frame, FrameType, JournalEvent, OutputSink, PackageMeta, PackageSource, SamplePackage,
    WorkerConfig, WorkerHandle,
};
use epiot::{NodeId, Plan};

const WAIT: Duration = Duration::from_secs(20);

fn worker(id: &str, busy_ms: u64) -> WorkerHandle {
    serve_worker(WorkerConfig {
        executor: ExecutorConfig {
            busy_per_object: Duration::from_millis(busy_ms),
            jitter: 0.0,
            seed: 1,
        },
        ..WorkerConfig::loopback(id)
    })
    .unwrap()
}

fn plan(counts: &[(&str, u32)]) -> Plan {
    let a: BTreeMap<NodeId, u32> = counts.iter().map(|(id, n)| (NodeId::new(*id), *n)).collect();
    let e = a.keys().map(|k| (k.clone(), 0.0)).collect();
    Plan::from_counts(a, e, Vec::new())
}

fn addrs(handles: &[(&str, &WorkerHandle)]) -> BTreeMap<NodeId, SocketAddr> {
    handles.iter().map(|(id, h)| (NodeId::new(*id), h.addr())).collect()
}

fn package(receiver: &str, objects: Vec<Vec<u8>>, count: u32) -> EpPackage {
    EpPackage {
        meta: PackageMeta {
            package_id: 9,
            receiver: receiver.into(),
            entry_point: "main".into(),
            object_count: count,
            first_object: 0,
            instrument: false,
        },
        alg: b"print(1)".to_vec(),
        mdl: vec![7; 100],
        data: objects,
    }
}

/// Sends one frame on a fresh connection and returns the reply.
fn exchange(addr: SocketAddr, frame: &Frame) -> Frame {
    let s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(WAIT)).unwrap();
    write_frame(&mut BufWriter::new(s.try_clone().unwrap()), frame).unwrap();
    read_frame(&mut BufReader::new(s)).unwrap()
}

#[test]
fn sdm_query_describes_the_worker() {
    let w = worker("F", 3);
    let sdm = query_sdm(w.addr(), WAIT).unwrap();
    assert_eq!(sdm.node_id, "F");
    assert_eq!(sdm.profile.node_id, NodeId::new("F"));
    assert_eq!(sdm.profile.cores_available, 2);
    assert_eq!(sdm.context.cpu_usage, 0.0);
    assert!(sdm.executor.contains("3000us"), "{}", sdm.executor);
}

#[test]
fn minimal_deploy_round_trip() {
    let w = worker("A", 0);
    let sink = OutputSink::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let source = PackageSource::synthetic(10, 10, 1, 1, 3);
    let log = deploy(
        &plan(&[("A", 1)]),
        &source,
        &addrs(&[("A", &w)]),
        sink.addr(),
        &DeployOptions::default(),
    )
    .unwrap();
    assert_eq!(log.entries.len(), 1);
    assert_eq!(log.entries[0].status, DeliveryStatus::Acked);
    let got = sink.wait_for(1, WAIT);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].batch.outputs, vec![transform(&source.objects[0])]);
    assert_eq!(got[0].batch.worker, "A");
}

#[test]
fn count_mismatch_is_rejected_with_error() {
    let w = worker("A", 0);
    let reply = exchange(w.addr(), &package("127.0.0.1:9", vec![vec![1], vec![2]], 3).to_frame());
    assert_eq!(reply.kind, FrameType::Error);
    let e = ErrorMsg::from_frame(&reply).unwrap();
    assert!(e.reason.contains("object count"), "{}", e.reason);
    assert!(w.journal().iter().any(|j| j.event == JournalEvent::Rejected));
    assert!(!w.journal().iter().any(|j| j.event == JournalEvent::Acked));
}

#[test]
fn bad_receiver_address_is_rejected() {
    let w = worker("A", 0);
    let reply = exchange(w.addr(), &package("not-an-address", vec![vec![1]], 1).to_frame());
    assert_eq!(reply.kind, FrameType::Error);
}

#[test]
fn corrupted_section_fails_its_checksum() {
    let w = worker("A", 0);
    let mut f = package("127.0.0.1:9", vec![vec![1, 2, 3]], 1).to_frame();
    f.sections[2][0] ^= 0xff;
    let reply = exchange(w.addr(), &f);
    assert_eq!(reply.kind, FrameType::Error);
    assert!(ErrorMsg::from_frame(&reply).unwrap().reason.contains("checksum"));
}

#[test]
fn garbage_gets_an_error_and_the_daemon_survives() {
    let w = worker("A", 0);
    let mut s = TcpStream::connect(w.addr()).unwrap();
    s.set_read_timeout(Some(WAIT)).unwrap();
    // valid length, unknown type 0x42
    s.write_all(&[0, 0, 0, 2, 0x42, 0]).unwrap();
    let reply = read_frame(&mut BufReader::new(s)).unwrap();
    assert_eq!(reply.kind, FrameType::Error);
    assert_eq!(query_sdm(w.addr(), WAIT).unwrap().node_id, "A");
}

#[test]
fn ten_objects_with_busy_work() {
    let w = worker("A", 5);
    let sink = OutputSink::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let source = PackageSource::synthetic(1203, 4096, 2048, 10, 11);
    let t = Instant::now();
    let log = deploy(
        &plan(&[("A", 10)]),
        &source,
        &addrs(&[("A", &w)]),
        sink.addr(),
        &DeployOptions::default(),
    )
    .unwrap();
    let acked_after = t.elapsed();
    let got = sink.wait_for(10, WAIT);
    let done = t.elapsed();
    assert!(log.failed().next().is_none());
    assert_eq!(got.len(), 1);
    for (i, o) in got[0].batch.outputs.iter().enumerate() {
        assert_eq!(*o, transform(&source.objects[i]), "object {i}");
    }
    // deploy returns on the ack; execution alone takes 50 ms
    assert!(acked_after < done);
    assert!(done >= Duration::from_millis(50), "{done:?}");
}

#[test]
fn ack_precedes_output_in_the_journal() {
    let w = worker("A", 20);
    let sink = OutputSink::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let source = PackageSource::synthetic(10, 10, 64, 3, 5);
    deploy(
        &plan(&[("A", 3)]),
        &source,
        &addrs(&[("A", &w)]),
        sink.addr(),
        &DeployOptions::default(),
    )
    .unwrap();
    assert_eq!(sink.wait_for(3, WAIT).len(), 1);
    // the worker journals the send after the receiver already has it
    let deadline = Instant::now() + WAIT;
    while !w.journal().iter().any(|x| x.event == JournalEvent::OutputSent) && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    let j = w.journal();
    let at = |e| j.iter().find(|x| x.event == e).map(|x| x.at).unwrap();
    assert!(at(JournalEvent::Acked) < at(JournalEvent::Executed));
    assert!(at(JournalEvent::Executed) <= at(JournalEvent::OutputSent));
}

#[test]
fn dead_worker_is_marked_failed_and_the_rest_deliver() {
    let live = worker("A", 0);
    let dead = worker("B", 0);
    let map = addrs(&[("A", &live), ("B", &dead)]);
    dead.shutdown();
    let sink = OutputSink::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let source = PackageSource::synthetic(10, 10, 32, 5, 1);
    let log = deploy(
        &plan(&[("A", 2), ("B", 3)]),
        &source,
        &map,
        sink.addr(),
        &DeployOptions::default(),
    )
    .unwrap();
    let failed: Vec<&str> = log.failed().map(|e| e.node_id.as_str()).collect();
    assert_eq!(failed, ["B"]);
    let a = log.entries.iter().find(|e| e.node_id.as_str() == "A").unwrap();
    assert_eq!(a.status, DeliveryStatus::Acked);
    assert_eq!((a.first_object, a.objects), (0, 2));
    let got = sink.wait_for(2, WAIT);
    assert_eq!(got.iter().map(|r| r.batch.outputs.len()).sum::<usize>(), 2);
}

#[test]
fn silent_worker_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = std::thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        std::thread::sleep(Duration::from_millis(800));
        drop(s);
    });
    let opts = DeployOptions {
        ack_timeout: Duration::from_millis(200),
        ..DeployOptions::default()
    };
    let source = PackageSource::synthetic(10, 10, 8, 1, 1);
    let map: BTreeMap<NodeId, SocketAddr> = [(NodeId::new("S"), addr)].into_iter().collect();
    let log = deploy(&plan(&[("S", 1)]), &source, &map, "127.0.0.1:9".parse().unwrap(), &opts).unwrap();
    match &log.entries[0].status {
        DeliveryStatus::Failed(r) => assert!(r.contains("timed out"), "{r}"),
        other => panic!("{other:?}"),
    }
    hold.join().unwrap();
}

#[test]
fn plan_and_source_must_agree() {
    let w = worker("A", 0);
    let source = PackageSource::synthetic(10, 10, 8, 4, 1);
    let r = deploy(
        &plan(&[("A", 3)]),
        &source,
        &addrs(&[("A", &w)]),
        w.addr(),
        &DeployOptions::default(),
    );
    assert!(r.is_err());
    let r = deploy(
        &plan(&[("Z", 4)]),
        &source,
        &addrs(&[("A", &w)]),
        w.addr(),
        &DeployOptions::default(),
    );
    assert!(r.is_err());
}

#[test]
fn unreachable_receiver_is_reported_to_the_deployer() {
    let w = worker("A", 0);
    let dead: SocketAddr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let s = TcpStream::connect(w.addr()).unwrap();
    s.set_read_timeout(Some(WAIT)).unwrap();
    write_frame(
        &mut BufWriter::new(s.try_clone().unwrap()),
        &package(&dead.to_string(), vec![vec![1]], 1).to_frame(),
    )
    .unwrap();
    let mut r = BufReader::new(s);
    assert_eq!(read_frame(&mut r).unwrap().kind, FrameType::EpAck);
    let err = read_frame(&mut r).unwrap();
    assert_eq!(err.kind, FrameType::Error);
    assert_eq!(ErrorMsg::from_frame(&err).unwrap().package_id, Some(9));
    assert!(w.journal().iter().any(|j| j.event == JournalEvent::OutputFailed));
}

fn sample() -> SamplePackage {
    SamplePackage {
        alg: vec![1; 1203],
        mdl: vec![2; 200_000],
        object: vec![3; 100_000],
    }
}

#[test]
fn calibration_is_positive_and_tracks_busy_work() {
    let base = worker("A", 20);
    let slow = worker("B", 40);
    let a = calibrate_local(base.addr(), &sample(), WAIT).unwrap();
    let b = calibrate_local(base.addr(), &sample(), WAIT).unwrap();
    for c in [&a, &b] {
        for v in [
            c.t_upk_mdl,
            c.t_upk_alg,
            c.t_pk_mdl,
            c.t_pk_alg,
            c.t_pk_d,
            c.t_upk_d,
            c.t_pk_o1,
            c.t_proc1,
            c.t_upk_o1,
        ] {
            assert!(v > 0.0 && v.is_finite());
        }
        assert_eq!(c.out_bytes_per_object, 44);
    }
    // repeat trials agree on the dominant stage
    let w = jitter_warnings(&a, &b, 0.5);
    assert!(!w.iter().any(|m| m.starts_with("t_proc1")), "{w:?}");

    let c = calibrate_local(slow.addr(), &sample(), WAIT).unwrap();
    let ratio = c.t_proc1 / a.t_proc1;
    assert!((1.5..=2.5).contains(&ratio), "t_proc1 ratio {ratio}");
}
