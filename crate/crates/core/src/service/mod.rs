//! Session orchestration: scenarios, the tick loop, the wire protocol,
//! metrics, reports, evaluation and the TCP server.

pub mod eval;
pub mod metrics;
pub mod protocol;
pub mod record;
pub mod report;
pub mod scenario;
pub mod server;
pub mod session;

pub use eval::{evaluate, evaluate_with, EvalError};
pub use metrics::{EpisodeRecord, Method, Metrics, MetricsError, Outcome, Rates};
pub use protocol::{ControlMode, Envelope, ErrorCode, Inbound, Outbound, StateFrame, PROTOCOL_SCHEMA, PROTOCOL_VERSION};
pub use record::{replay, Driver, EventLog, LogEntry, ReplayReport};
pub use report::{render_csv, write_report, ReportError};
pub use scenario::{Scenario, ScenarioError, ScenarioFile, ScenarioMode, TestCase};
pub use server::{spawn, ServeOptions, ServerHandle};
pub use session::{Session, SessionConfig};
