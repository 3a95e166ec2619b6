//! Interactive sessions for a trained automaton: a synchronous [`Session`] model, a compact
//! binary [`Frame`] format and an axum WebSocket server that ties them together.

pub mod frame;
pub mod outbox;
pub mod protocol;
pub mod server;
pub mod session;

pub use frame::{alive_level, pack_cells, CellView, Frame, FrameError, HEADER_LEN};
pub use outbox::{Outbox, Outgoing};
pub use protocol::{
    parse_client, CheckpointInfo, ClassInfo, ClientMessage, Command, ConfigPatch, Envelope, ErrorCode, MapSource,
    Reply, Request, PROTOCOL_VERSION,
};
pub use server::{router, serve, AppState, ServerConfig, VERSION};
pub use session::{CommandError, Outcome, Playback, Session, DEFAULT_RATE_CAP, MAX_STEP_COUNT};
