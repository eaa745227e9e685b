//! Control plane for the cobot safety monitor: the operator's buttons as
//! HTTP endpoints, the live telemetry stream and session management.
//!
//! [`controller::Controller`] is the synchronous state machine,
//! [`driver::spawn`] runs it on a tokio task at the scene rate and
//! [`http::router`] exposes it.

pub mod controller;
pub mod driver;
pub mod http;
pub mod telemetry;

pub use controller::{Ack, ApiError, Command, Controller, Mode, ReplayAction, SystemState};
pub use driver::ServiceHandle;
pub use telemetry::{FrameView, Origin, TelemetryEvent};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
mod book_service {}
