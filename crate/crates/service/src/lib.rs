//! Session service: serves queries from a pool to human answerers, updates
//! their beliefs, and runs the validation vote.

pub mod api;
pub mod session;
pub mod wire;

pub use api::{router, serve};
pub use session::{
    parse_events, replay, Phase, ServiceConfig, SessionError, SessionEvent, SessionManager, Slot,
};
