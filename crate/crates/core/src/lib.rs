//! Multi-agent code correction engine.
//!
//! A correction session moves a broken program through correction, testing,
//! interpretation and model reselection until its tests pass or the loop
//! budget runs out. Model backends, the test executor and agent messaging
//! are all pluggable, so sessions can run against live endpoints or fully
//! scripted stand-ins.

pub mod acl;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod orchestrator;
pub mod policy;
pub mod sandbox;

pub use corpus::TaskRecord;
pub use orchestrator::{Engine, SessionConfig, SessionResult};
pub use policy::ModelId;
