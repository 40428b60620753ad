//! Wire protocol, worker daemon and master-side deployer.
//!
//! A worker daemon answers `SDM_QUERY` with its service description. On
//! `EP_DEPLOY` it validates the package, replies `EP_ACK` right away, runs
//! every data object through the toy executor and opens its own connection
//! to the receiver named in the package metadata to deliver `EP_OUTPUT`.

pub mod calibrate;
pub mod deploy;
pub mod executor;
pub mod frame;
pub mod message;
pub mod worker;

use thiserror::Error;

use crate::model::NodeId;

pub use calibrate::{calibrate_local, jitter_warnings, SamplePackage};
pub use deploy::{
    deploy, query_sdm, DeliveryEntry, DeliveryLog, DeliveryStatus, DeployOptions, OutputSink, PackageSource,
    ReceivedOutput,
};
pub use executor::{transform, ExecutorConfig};
pub use frame::{Frame, FrameError, FrameType};
pub use message::{EpPackage, PackageMeta, Sdm};
pub use worker::{serve_worker, JournalEvent, WorkerConfig, WorkerHandle};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("peer reported: {0}")]
    Remote(String),
    #[error("timed out waiting for acknowledgement")]
    Timeout,
    #[error("no address for worker {0}")]
    NoAddress(NodeId),
}
