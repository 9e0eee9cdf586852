//! File formats, logged rollouts, live sessions and the WebSocket server
//! behind the `autopreview` binary.

pub use autopreview_core as core;

pub mod atomic;
pub mod engine;
pub mod formats;
pub mod log;
pub mod server;
pub mod session;
