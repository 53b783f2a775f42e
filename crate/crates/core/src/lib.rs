//! Core of an agentic tabletop manipulation engine.
//!
//! A natural-language task plus a (simulated) RGB-D observation flows through
//! three stages:
//!
//! 1. [`perception`] describes the scene with a vision-language backend, runs
//!    open-vocabulary detection on the objects a sub-task needs, lifts
//!    bounding-box centres to 3D with the calibrated camera and attaches the
//!    best grasp in each object's neighbourhood.
//! 2. [`reasoning`] evaluates task status and decomposes the task into one
//!    sub-task at a time, with a history memory that rejects local loops.
//! 3. [`controller`] turns a sub-task plus object records into Cartesian
//!    waypoints, either by asking a language backend for a skill-shaped
//!    symbolic sequence or by replaying an exact-match cached one.
//!
//! Every model call goes through the [`gateway`], so the whole pipeline runs
//! offline against the deterministic [`oracle`] backend and the
//! [`simworld`] box-world simulator. [`harness`] orchestrates episodes,
//! benchmarks and automated data collection.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, HTTP and the
//! command line live in the companion `maniagent` crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod clock;
pub mod controller;
pub mod gateway;
pub mod geometry;
pub mod harness;
pub mod oracle;
pub mod perception;
pub mod prompts;
pub mod reasoning;
pub mod simworld;
pub mod text;

pub use clock::{Clock, ManualClock};
pub use geometry::{Quat, RigidTransform, Vec3};
