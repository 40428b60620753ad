//! Single-object trial against the local executor, producing the timespans
//! the cost model is seeded with.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use super::frame::{read_frame, write_frame};
use super::message::{Ack, EpPackage, PackageMeta};
use super::{NetError, OutputSink};
use crate::model::Calibration;

/// Program, modules and one data object for the trial.
#[derive(Clone, Debug)]
pub struct SamplePackage {
    pub alg: Vec<u8>,
    pub mdl: Vec<u8>,
    pub object: Vec<u8>,
}

/// Runs one object through the daemon at `worker` with an instrumented
/// package and assembles a [`Calibration`] from the stage timings: packing
/// here, unpacking/execution/output packing reported by the worker, output
/// unpacking at a receiver started for the trial.
pub fn calibrate_local(worker: SocketAddr, sample: &SamplePackage, timeout: Duration) -> Result<Calibration, NetError> {
    let sink = OutputSink::bind("127.0.0.1:0".parse().unwrap())?;
    let pkg = EpPackage {
        meta: PackageMeta {
            package_id: 0,
            receiver: sink.addr().to_string(),
            entry_point: "main".into(),
            object_count: 1,
            first_object: 0,
            instrument: true,
        },
        alg: sample.alg.clone(),
        mdl: sample.mdl.clone(),
        data: vec![sample.object.clone()],
    };
    let (frame, pack) = pkg.to_frame_timed();

    let s = TcpStream::connect_timeout(&worker, timeout)?;
    let mut w = BufWriter::new(s.try_clone()?);
    write_frame(&mut w, &frame)?;
    s.set_read_timeout(Some(timeout))?;
    Ack::from_frame(&read_frame(&mut BufReader::new(s))?)?;

    let out = sink
        .wait_for(1, timeout)
        .into_iter()
        .next()
        .ok_or_else(|| NetError::Protocol(format!("no output within {timeout:?}")))?;
    let stages = out
        .batch
        .timings
        .clone()
        .ok_or_else(|| NetError::Protocol("worker did not report stage timings".into()))?;
    let first = |v: &[f64], what: &str| {
        v.first()
            .copied()
            .ok_or_else(|| NetError::Protocol(format!("missing {what} timing")))
    };
    Ok(Calibration {
        t_upk_mdl: stages.unpack_mdl,
        t_upk_alg: stages.unpack_alg,
        t_pk_mdl: pack.mdl,
        t_pk_alg: pack.alg,
        t_pk_d: first(&pack.data, "data packing")?,
        t_upk_d: first(&stages.unpack_data, "data unpacking")?,
        t_pk_o1: first(&stages.pack_output, "output packing")?,
        t_proc1: first(&stages.process, "processing")?,
        t_upk_o1: first(&out.unpack, "output unpacking")?,
        out_bytes_per_object: out
            .batch
            .outputs
            .first()
            .map(|o| o.len() as u64)
            .ok_or_else(|| NetError::Protocol("empty output batch".into()))?,
    })
}

/// Fields of two trials that differ by more than `bound` relative to the
/// larger of the pair. An empty list means the trials agree.
pub fn jitter_warnings(a: &Calibration, b: &Calibration, bound: f64) -> Vec<String> {
    let mut out: Vec<String> = a
        .timespans()
        .iter()
        .zip(b.timespans().iter())
        .filter_map(|(&(name, x), &(_, y))| {
            let rel = (x - y).abs() / x.max(y);
            (rel > bound).then(|| format!("{name}: {x:.6e} vs {y:.6e} differs by {:.0}%", rel * 100.0))
        })
        .collect();
    if a.out_bytes_per_object != b.out_bytes_per_object {
        out.push(format!(
            "out_bytes_per_object: {} vs {}",
            a.out_bytes_per_object, b.out_bytes_per_object
        ));
    }
    out
}
