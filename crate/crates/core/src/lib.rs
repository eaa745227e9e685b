//! Safety-zone monitoring for a shared human-robot workcell.
//!
//! A camera detection of the operator's wrist is back-projected into the
//! robot base frame ([`geometry`]) and checked against a box-shaped zone by
//! the debounced [`monitor`]. Sessions are written and read by [`recording`]
//! and played back with recomputed flags by [`replay`]. [`sim`] supplies a
//! deterministic stand-in for the camera and the robot.

pub mod geometry;
pub mod kinematics;
pub mod monitor;
pub mod recording;
pub mod replay;
pub mod config;
pub mod sim;

// The book's listings, compiled as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/kinematics.md")]
    mod kinematics {}
    #[doc = include_str!("../../../book/src/monitor.md")]
    mod monitor {}
    #[doc = include_str!("../../../book/src/recording.md")]
    mod recording {}
    #[doc = include_str!("../../../book/src/replay.md")]
    mod replay {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
