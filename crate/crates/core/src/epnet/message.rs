//! Typed messages carried inside frames.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::frame::{Frame, FrameType};
use super::NetError;
use crate::model::{DynamicContext, NodeProfile};

/// Service description a worker advertises.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sdm {
    pub node_id: String,
    pub profile: NodeProfile,
    pub context: DynamicContext,
    pub executor: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageMeta {
    pub package_id: u64,
    /// `host:port` the outputs go to.
    pub receiver: String,
    pub entry_point: String,
    pub object_count: u32,
    /// Index of this package's first object within the whole request.
    pub first_object: u32,
    /// Report per-stage timings with the output.
    #[serde(default)]
    pub instrument: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DeployHeader {
    #[serde(flatten)]
    meta: PackageMeta,
    /// Hex SHA-256 of every section, in section order.
    digests: Vec<String>,
}

/// A process package: program, modules and the data objects it works on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpPackage {
    pub meta: PackageMeta,
    pub alg: Vec<u8>,
    pub mdl: Vec<u8>,
    pub data: Vec<Vec<u8>>,
}

/// Seconds spent packing each part of a package.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PackTimings {
    pub mdl: f64,
    pub alg: f64,
    pub data: Vec<f64>,
}

/// Seconds spent in each stage on the worker.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub unpack_mdl: f64,
    pub unpack_alg: f64,
    pub unpack_data: Vec<f64>,
    pub process: Vec<f64>,
    pub pack_output: Vec<f64>,
}

/// Shortest timespan reported by the instrumented stages; keeps timings
/// strictly positive when a stage finishes inside one clock tick.
pub const MIN_TIMESPAN: f64 = 1e-9;

pub(crate) fn elapsed(since: Instant) -> f64 {
    since.elapsed().as_secs_f64().max(MIN_TIMESPAN)
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Packing one part: checksum it and copy it into its wire section.
fn pack_section(bytes: &[u8]) -> (Vec<u8>, String) {
    let d = digest_hex(bytes);
    (bytes.to_vec(), d)
}

/// Unpacking one part: verify its checksum and copy it out.
fn unpack_section(section: &[u8], digest: &str, what: &str) -> Result<Vec<u8>, NetError> {
    if digest_hex(section) != digest {
        return Err(NetError::Protocol(format!("{what} fails its checksum")));
    }
    Ok(section.to_vec())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("message headers serialize")
}

fn parse<T: for<'de> Deserialize<'de>>(f: &Frame) -> Result<T, NetError> {
    serde_json::from_str(&f.header).map_err(|e| NetError::Protocol(format!("bad {:?} header: {e}", f.kind)))
}

impl EpPackage {
    pub fn to_frame(&self) -> Frame {
        self.to_frame_timed().0
    }

    /// Packs the package, timing each part.
    pub fn to_frame_timed(&self) -> (Frame, PackTimings) {
        let mut timings = PackTimings::default();
        let mut sections = Vec::with_capacity(2 + self.data.len());
        let mut digests = Vec::with_capacity(2 + self.data.len());

        let t = Instant::now();
        let (alg, d) = pack_section(&self.alg);
        timings.alg = elapsed(t);
        sections.push(alg);
        digests.push(d);

        let t = Instant::now();
        let (mdl, d) = pack_section(&self.mdl);
        timings.mdl = elapsed(t);
        sections.push(mdl);
        digests.push(d);

        for obj in &self.data {
            let t = Instant::now();
            let (s, d) = pack_section(obj);
            timings.data.push(elapsed(t));
            sections.push(s);
            digests.push(d);
        }
        let header = DeployHeader {
            meta: self.meta.clone(),
            digests,
        };
        (Frame::new(FrameType::EpDeploy, json(&header), sections), timings)
    }

    pub fn from_frame(f: &Frame) -> Result<Self, NetError> {
        Ok(Self::from_frame_timed(f)?.0)
    }

    /// Validates and unpacks a deploy frame, timing each part. The returned
    /// timings have empty process and output vectors.
    pub fn from_frame_timed(f: &Frame) -> Result<(Self, StageTimings), NetError> {
        if f.kind != FrameType::EpDeploy {
            return Err(NetError::Protocol(format!("expected EP_DEPLOY, got {:?}", f.kind)));
        }
        let h: DeployHeader = parse(f)?;
        let expected = h.meta.object_count as usize + 2;
        if f.sections.len() != expected {
            return Err(NetError::Protocol(format!(
                "object count {} does not match {} data sections",
                h.meta.object_count,
                f.sections.len().saturating_sub(2)
            )));
        }
        if h.digests.len() != expected {
            return Err(NetError::Protocol("digest list does not match sections".into()));
        }
        if h.meta.receiver.parse::<std::net::SocketAddr>().is_err() {
            return Err(NetError::Protocol(format!(
                "receiver {:?} is not an address",
                h.meta.receiver
            )));
        }
        let mut timings = StageTimings::default();
        let t = Instant::now();
        let alg = unpack_section(&f.sections[0], &h.digests[0], "algorithm")?;
        timings.unpack_alg = elapsed(t);
        let t = Instant::now();
        let mdl = unpack_section(&f.sections[1], &h.digests[1], "modules")?;
        timings.unpack_mdl = elapsed(t);
        let mut data = Vec::with_capacity(expected - 2);
        for (i, (s, d)) in f.sections[2..].iter().zip(&h.digests[2..]).enumerate() {
            let t = Instant::now();
            data.push(unpack_section(s, d, &format!("data object {i}"))?);
            timings.unpack_data.push(elapsed(t));
        }
        Ok((
            EpPackage {
                meta: h.meta,
                alg,
                mdl,
                data,
            },
            timings,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub package_id: u64,
    pub worker: String,
    pub objects: u32,
}

impl Ack {
    pub fn to_frame(&self) -> Frame {
        Frame::new(FrameType::EpAck, json(self), Vec::new())
    }

    pub fn from_frame(f: &Frame) -> Result<Self, NetError> {
        expect(f, FrameType::EpAck)?;
        parse(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OutputHeader {
    package_id: u64,
    worker: String,
    first_object: u32,
    digests: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timings: Option<StageTimings>,
}

/// Outputs of one package on their way to the receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputBatch {
    pub package_id: u64,
    pub worker: String,
    pub first_object: u32,
    pub outputs: Vec<Vec<u8>>,
    pub timings: Option<StageTimings>,
}

impl OutputBatch {
    pub fn to_frame(&self) -> Frame {
        let header = OutputHeader {
            package_id: self.package_id,
            worker: self.worker.clone(),
            first_object: self.first_object,
            digests: self.outputs.iter().map(|o| digest_hex(o)).collect(),
            timings: self.timings.clone(),
        };
        Frame::new(FrameType::EpOutput, json(&header), self.outputs.clone())
    }

    /// Unpacks an output frame, returning it with the seconds spent
    /// unpacking each output.
    pub fn from_frame_timed(f: &Frame) -> Result<(Self, Vec<f64>), NetError> {
        expect(f, FrameType::EpOutput)?;
        let h: OutputHeader = parse(f)?;
        if h.digests.len() != f.sections.len() {
            return Err(NetError::Protocol("output digests do not match sections".into()));
        }
        let mut outputs = Vec::with_capacity(f.sections.len());
        let mut unpack = Vec::with_capacity(f.sections.len());
        for (i, (s, d)) in f.sections.iter().zip(&h.digests).enumerate() {
            let t = Instant::now();
            outputs.push(unpack_section(s, d, &format!("output {i}"))?);
            unpack.push(elapsed(t));
        }
        Ok((
            OutputBatch {
                package_id: h.package_id,
                worker: h.worker,
                first_object: h.first_object,
                outputs,
                timings: h.timings,
            },
            unpack,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMsg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package_id: Option<u64>,
    pub reason: String,
}

impl ErrorMsg {
    pub fn to_frame(&self) -> Frame {
        Frame::new(FrameType::Error, json(self), Vec::new())
    }

    pub fn from_frame(f: &Frame) -> Result<Self, NetError> {
        expect(f, FrameType::Error)?;
        parse(f)
    }
}

impl Sdm {
    pub fn to_frame(&self) -> Frame {
        Frame::new(FrameType::SdmResponse, json(self), Vec::new())
    }

    pub fn from_frame(f: &Frame) -> Result<Self, NetError> {
        expect(f, FrameType::SdmResponse)?;
        parse(f)
    }
}

fn expect(f: &Frame, kind: FrameType) -> Result<(), NetError> {
    if f.kind == FrameType::Error && kind != FrameType::Error {
        let reason = serde_json::from_str::<ErrorMsg>(&f.header)
            .map(|e| e.reason)
            .unwrap_or_else(|_| f.header.clone());
        return Err(NetError::Remote(reason));
    }
    if f.kind != kind {
        return Err(NetError::Protocol(format!("expected {kind:?}, got {:?}", f.kind)));
    }
    Ok(())
}
