//! Out-of-process agents: a length-prefixed JSON protocol over TCP for
//! programs, and a websocket gateway for people.

pub mod control;
pub mod frame;
pub mod gateway;
pub mod peer;
pub mod remote;

pub use control::{Control, Role, SessionEvent, SessionState, PROTOCOL_VERSION};
pub use frame::{decode_frame, encode_message, read_record, write_record, FrameError, Record};
pub use gateway::{Gateway, GatewayError, HumanAgent, SessionMode};
pub use peer::{serve_peer, ObserverClient, PeerSummary};
pub use remote::{BridgeError, RemoteAgent, RemoteListener, RemoteObserver, DEFAULT_ACT_TIMEOUT};
