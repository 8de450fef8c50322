//! Manager/member runtime: exercise scheduling, transports and accounting.

pub mod client;
pub mod counters;
pub mod exercise;
pub mod frame;
pub mod manager;
pub mod member;
pub mod session;
pub mod store;
pub mod transport;

pub use counters::{CostModel, TrafficCounters};
pub use exercise::{Exercise, ExerciseId, Op, Planner, RevealTarget};
pub use frame::{Endpoint, Frame, Opcode};
pub use manager::{AbortReason, Dealer};
pub use member::{Fault, FaultMode};
pub use session::{
    reconstruct, run_member_endpoint, run_session, run_session_distributed, RemoteParties,
    SessionConfig, SessionError, SessionOutcome, TransportKind,
};
pub use store::{DataStore, Stored};
