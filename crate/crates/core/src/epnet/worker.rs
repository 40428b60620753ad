//! Worker daemon: answers SDM queries and runs deployed packages.

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::executor::{Executor, ExecutorConfig};
use super::frame::{read_frame, write_frame, FrameError, FrameType};
use super::message::{elapsed, Ack, EpPackage, ErrorMsg, OutputBatch, Sdm};
use crate::model::{DynamicContext, NodeKind, NodeProfile};

#[derive(Clone, Debug)]
pub struct WorkerConfig {
    pub bind: SocketAddr,
    pub node_id: String,
    /// Packages executed in parallel.
    pub cores: usize,
    pub executor: ExecutorConfig,
    /// Advertised static profile; a generic fog profile when `None`.
    pub profile: Option<NodeProfile>,
    pub ram_used: u64,
    pub connect_timeout: Duration,
}

impl WorkerConfig {
    pub fn loopback(node_id: impl Into<String>) -> Self {
        WorkerConfig {
            bind: "127.0.0.1:0".parse().unwrap(),
            node_id: node_id.into(),
            cores: 2,
            executor: ExecutorConfig::default(),
            profile: None,
            ram_used: 0,
            connect_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JournalEvent {
    Acked,
    Rejected,
    Executed,
    OutputSent,
    OutputFailed,
}

#[derive(Clone, Debug)]
pub struct JournalEntry {
    pub package_id: Option<u64>,
    pub event: JournalEvent,
    pub at: Instant,
}

/// Counting semaphore over the configured cores.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct Shared {
    config: WorkerConfig,
    executor: Executor,
    slots: Slots,
    running: AtomicUsize,
    journal: Mutex<Vec<JournalEntry>>,
    started: Instant,
}

impl Shared {
    fn log(&self, package_id: Option<u64>, event: JournalEvent) {
        self.journal.lock().unwrap().push(JournalEntry {
            package_id,
            event,
            at: Instant::now(),
        });
    }

    fn sdm(&self) -> Sdm {
        let c = &self.config;
        let profile = c.profile.clone().unwrap_or_else(|| NodeProfile {
            node_id: c.node_id.as_str().into(),
            kind: NodeKind::Fog,
            cpu_benchmark: 1000.0,
            cores_available: c.cores as u32,
            ram_total: 4_000_000_000,
            disk_read: 100e6,
            disk_write: 100e6,
        });
        let busy = self.running.load(Ordering::SeqCst) as f64 / c.cores.max(1) as f64;
        Sdm {
            node_id: c.node_id.clone(),
            context: DynamicContext {
                node_id: c.node_id.as_str().into(),
                cpu_usage: busy.min(1.0),
                ram_used: c.ram_used.min(profile.ram_total),
                sampled_at: self.started.elapsed().as_secs_f64(),
            },
            profile,
            executor: self.executor.tag(),
        }
    }
}

/// A running daemon. Dropping the handle stops it.
pub struct WorkerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl WorkerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn journal(&self) -> Vec<JournalEntry> {
        self.shared.journal.lock().unwrap().clone()
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

pub fn serve_worker(config: WorkerConfig) -> io::Result<WorkerHandle> {
    let listener = TcpListener::bind(config.bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Shared {
        executor: Executor::new(config.executor.clone()),
        slots: Slots {
            free: Mutex::new(config.cores.max(1)),
            cv: Condvar::new(),
        },
        running: AtomicUsize::new(0),
        journal: Mutex::new(Vec::new()),
        started: Instant::now(),
        config,
    });
    let thread = {
        let stop = stop.clone();
        let shared = shared.clone();
        thread::Builder::new()
            .name(format!("worker-{}", shared.config.node_id))
            .spawn(move || accept_loop(listener, stop, shared))?
    };
    debug!("worker listening on {addr}");
    Ok(WorkerHandle {
        addr,
        stop,
        shared,
        thread: Some(thread),
    })
}

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match conn {
            Ok(stream) => {
                let shared = shared.clone();
                thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, &shared) {
                        debug!("connection ended: {e}");
                    }
                });
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> Result<(), FrameError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(FrameError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e @ (FrameError::UnknownType(_) | FrameError::LengthMismatch(_) | FrameError::Malformed(_))) => {
                let _ = write_frame(
                    &mut writer,
                    &ErrorMsg {
                        package_id: None,
                        reason: e.to_string(),
                    }
                    .to_frame(),
                );
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        match frame.kind {
            FrameType::SdmQuery => write_frame(&mut writer, &shared.sdm().to_frame())?,
            FrameType::EpDeploy => {
                let (pkg, timings) = match EpPackage::from_frame_timed(&frame) {
                    Ok(p) => p,
                    Err(e) => {
                        shared.log(None, JournalEvent::Rejected);
                        write_frame(
                            &mut writer,
                            &ErrorMsg {
                                package_id: None,
                                reason: e.to_string(),
                            }
                            .to_frame(),
                        )?;
                        continue;
                    }
                };
                let id = pkg.meta.package_id;
                write_frame(
                    &mut writer,
                    &Ack {
                        package_id: id,
                        worker: shared.config.node_id.clone(),
                        objects: pkg.meta.object_count,
                    }
                    .to_frame(),
                )?;
                shared.log(Some(id), JournalEvent::Acked);
                run_package(pkg, timings, shared, &mut writer);
            }
            other => {
                let reason = format!("unexpected {other:?} frame");
                write_frame(
                    &mut writer,
                    &ErrorMsg {
                        package_id: None,
                        reason,
                    }
                    .to_frame(),
                )?;
            }
        }
    }
}

fn run_package(
    pkg: EpPackage,
    mut timings: super::message::StageTimings,
    shared: &Shared,
    deployer: &mut BufWriter<TcpStream>,
) {
    let id = pkg.meta.package_id;
    let outputs = {
        let _slot = shared.slots.acquire();
        shared.running.fetch_add(1, Ordering::SeqCst);
        let mut outputs = Vec::with_capacity(pkg.data.len());
        for obj in &pkg.data {
            let t = Instant::now();
            let out = shared.executor.run(obj);
            timings.process.push(elapsed(t));
            // output packing: checksum + copy into the outgoing section
            let t = Instant::now();
            let packed = out.clone();
            let _ = super::message::digest_hex(&packed);
            timings.pack_output.push(elapsed(t));
            outputs.push(packed);
        }
        shared.running.fetch_sub(1, Ordering::SeqCst);
        outputs
    };
    shared.log(Some(id), JournalEvent::Executed);

    let batch = OutputBatch {
        package_id: id,
        worker: shared.config.node_id.clone(),
        first_object: pkg.meta.first_object,
        outputs,
        timings: pkg.meta.instrument.then_some(timings),
    };
    let sent = pkg
        .meta
        .receiver
        .parse::<SocketAddr>()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))
        .and_then(|addr| TcpStream::connect_timeout(&addr, shared.config.connect_timeout))
        .map_err(FrameError::from)
        .and_then(|s| {
            let mut w = BufWriter::new(s);
            write_frame(&mut w, &batch.to_frame())?;
            w.get_ref().shutdown(Shutdown::Write).ok();
            Ok(())
        });
    match sent {
        Ok(()) => shared.log(Some(id), JournalEvent::OutputSent),
        Err(e) => {
            shared.log(Some(id), JournalEvent::OutputFailed);
            let reason = format!("receiver {} unreachable: {e}", pkg.meta.receiver);
            warn!("package {id}: {reason}");
            let _ = write_frame(
                deployer,
                &ErrorMsg {
                    package_id: Some(id),
                    reason,
                }
                .to_frame(),
            );
        }
    }
}
