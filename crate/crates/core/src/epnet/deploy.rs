//! Master side: SDM queries, package deployment and the output receiver.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::Serialize;

use super::frame::{read_frame, write_frame, Frame, FrameType};
use super::message::{Ack, EpPackage, OutputBatch, PackageMeta, Sdm};
use super::NetError;
use crate::model::{NodeId, Plan};

pub const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_secs(10);
/// Overrides the ack timeout, in seconds (fractions allowed).
pub const ACK_TIMEOUT_ENV: &str = "EPIOT_ACK_TIMEOUT_SECS";

#[derive(Clone, Debug)]
pub struct DeployOptions {
    pub ack_timeout: Duration,
    pub connect_timeout: Duration,
    pub entry_point: String,
    pub instrument: bool,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions {
            ack_timeout: DEFAULT_ACK_TIMEOUT,
            connect_timeout: Duration::from_secs(5),
            entry_point: "main".into(),
            instrument: false,
        }
    }
}

impl DeployOptions {
    /// Defaults, with the ack timeout taken from the environment when set.
    pub fn from_env() -> Self {
        let mut o = DeployOptions::default();
        if let Some(t) = std::env::var(ACK_TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|t| t.is_finite() && *t > 0.0)
        {
            o.ack_timeout = Duration::from_secs_f64(t);
        }
        o
    }
}

/// Program, modules and the request's data objects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackageSource {
    pub alg: Vec<u8>,
    pub mdl: Vec<u8>,
    pub objects: Vec<Vec<u8>>,
}

impl PackageSource {
    /// Deterministic pseudo-random content of the given sizes.
    pub fn synthetic(byte_alg: usize, byte_mdl: usize, object_bytes: usize, objects: usize, seed: u64) -> Self {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |n: usize| {
            let mut v = vec![0u8; n];
            rng.fill_bytes(&mut v);
            v
        };
        PackageSource {
            alg: fill(byte_alg),
            mdl: fill(byte_mdl),
            objects: (0..objects).map(|_| fill(object_bytes)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum DeliveryStatus {
    Acked,
    Failed(String),
}

/// What happened to one worker's package. Times are seconds from the start
/// of the deploy call.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeliveryEntry {
    pub node_id: NodeId,
    pub addr: SocketAddr,
    pub package_id: u64,
    pub first_object: u32,
    pub objects: u32,
    pub pack_start: f64,
    pub pack_end: f64,
    pub send_end: Option<f64>,
    pub ack_at: Option<f64>,
    pub status: DeliveryStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeliveryLog {
    pub entries: Vec<DeliveryEntry>,
}

impl DeliveryLog {
    pub fn failed(&self) -> impl Iterator<Item = &DeliveryEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.status, DeliveryStatus::Failed(_)))
    }
}

fn connect(addr: SocketAddr, timeout: Duration) -> Result<TcpStream, NetError> {
    let s = TcpStream::connect_timeout(&addr, timeout)?;
    s.set_nodelay(true).ok();
    Ok(s)
}

/// Asks a worker for its service description.
pub fn query_sdm(addr: SocketAddr, timeout: Duration) -> Result<Sdm, NetError> {
    let s = connect(addr, timeout)?;
    s.set_read_timeout(Some(timeout))?;
    let mut w = BufWriter::new(s.try_clone()?);
    write_frame(&mut w, &Frame::empty(FrameType::SdmQuery))?;
    drop(w);
    Sdm::from_frame(&read_frame(&mut BufReader::new(s))?)
}

/// Sends one package and waits for its acknowledgement.
fn deliver(addr: SocketAddr, frame: &Frame, opts: &DeployOptions, t0: Instant) -> Result<(f64, f64), NetError> {
    let s = connect(addr, opts.connect_timeout)?;
    let mut w = BufWriter::new(s.try_clone()?);
    write_frame(&mut w, frame)?;
    let send_end = t0.elapsed().as_secs_f64();
    s.set_read_timeout(Some(opts.ack_timeout))?;
    let reply = read_frame(&mut BufReader::new(s)).map_err(|e| match e {
        super::frame::FrameError::Io(io)
            if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
        {
            NetError::Timeout
        }
        other => other.into(),
    })?;
    Ack::from_frame(&reply)?;
    Ok((send_end, t0.elapsed().as_secs_f64()))
}

/// Builds one package per worker with a positive count and deploys them
/// concurrently. Objects are handed out as contiguous index ranges in
/// ascending node-id order. A worker that cannot be reached or does not
/// acknowledge in time is marked failed; the others are unaffected.
pub fn deploy(
    plan: &Plan,
    source: &PackageSource,
    workers: &BTreeMap<NodeId, SocketAddr>,
    receiver: SocketAddr,
    opts: &DeployOptions,
) -> Result<DeliveryLog, NetError> {
    let total = plan.total_objects();
    if total != source.objects.len() as u64 {
        return Err(NetError::Protocol(format!(
            "plan assigns {total} objects, source has {}",
            source.objects.len()
        )));
    }
    let mut jobs = Vec::new();
    let mut next = 0u32;
    for (package_id, (id, wp)) in plan.active().enumerate() {
        let addr = *workers.get(id).ok_or_else(|| NetError::NoAddress(id.clone()))?;
        jobs.push((package_id as u64, id.clone(), addr, next, wp));
        next += wp;
    }

    let t0 = Instant::now();
    let entries = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(package_id, node_id, addr, first, wp)| {
                scope.spawn(move || {
                    let pack_start = t0.elapsed().as_secs_f64();
                    let pkg = EpPackage {
                        meta: PackageMeta {
                            package_id,
                            receiver: receiver.to_string(),
                            entry_point: opts.entry_point.clone(),
                            object_count: wp,
                            first_object: first,
                            instrument: opts.instrument,
                        },
                        alg: source.alg.clone(),
                        mdl: source.mdl.clone(),
                        data: source.objects[first as usize..(first + wp) as usize].to_vec(),
                    };
                    let frame = pkg.to_frame();
                    let pack_end = t0.elapsed().as_secs_f64();
                    let (send_end, ack_at, status) = match deliver(addr, &frame, opts, t0) {
                        Ok((s, a)) => (Some(s), Some(a), DeliveryStatus::Acked),
                        Err(e) => {
                            warn!("deploy to {node_id} at {addr} failed: {e}");
                            (None, None, DeliveryStatus::Failed(e.to_string()))
                        }
                    };
                    DeliveryEntry {
                        node_id,
                        addr,
                        package_id,
                        first_object: first,
                        objects: wp,
                        pack_start,
                        pack_end,
                        send_end,
                        ack_at,
                        status,
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("deploy thread panicked"))
            .collect()
    });
    Ok(DeliveryLog { entries })
}

/// An output batch as it arrived at the receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedOutput {
    pub batch: OutputBatch,
    pub received_at: Instant,
    /// Seconds spent unpacking each output.
    pub unpack: Vec<f64>,
}

#[derive(Default)]
struct Inbox {
    items: Mutex<Vec<ReceivedOutput>>,
    cv: Condvar,
}

/// Listens for EP_OUTPUT frames and collects them.
pub struct OutputSink {
    addr: SocketAddr,
    inbox: Arc<Inbox>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl OutputSink {
    pub fn bind(addr: SocketAddr) -> Result<Self, NetError> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let inbox = Arc::new(Inbox::default());
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let inbox = inbox.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let inbox = inbox.clone();
                    thread::spawn(move || {
                        let mut r = BufReader::new(stream);
                        while let Ok(frame) = read_frame(&mut r) {
                            match OutputBatch::from_frame_timed(&frame) {
                                Ok((batch, unpack)) => {
                                    let item = ReceivedOutput {
                                        batch,
                                        received_at: Instant::now(),
                                        unpack,
                                    };
                                    inbox.items.lock().unwrap().push(item);
                                    inbox.cv.notify_all();
                                }
                                Err(e) => debug!("receiver dropped a frame: {e}"),
                            }
                        }
                    });
                }
            })
        };
        Ok(OutputSink {
            addr,
            inbox,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn received(&self) -> Vec<ReceivedOutput> {
        self.inbox.items.lock().unwrap().clone()
    }

    /// Waits until at least `objects` outputs have arrived or the timeout
    /// passes, then returns everything received so far.
    pub fn wait_for(&self, objects: usize, timeout: Duration) -> Vec<ReceivedOutput> {
        let deadline = Instant::now() + timeout;
        let mut items = self.inbox.items.lock().unwrap();
        loop {
            let have: usize = items.iter().map(|i| i.batch.outputs.len()).sum();
            let now = Instant::now();
            if have >= objects || now >= deadline {
                return items.clone();
            }
            items = self.inbox.cv.wait_timeout(items, deadline - now).unwrap().0;
        }
    }
}

impl Drop for OutputSink {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
