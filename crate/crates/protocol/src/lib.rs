//! Wire-level Model Context Protocol support: JSON-RPC framing, tool
//! descriptors with scalar input schemas, client transports and a tool-server kit.
//!
//! Only the `tools` capability is implemented.

pub mod content;
pub mod message;
pub mod schema;
pub mod server;
pub mod transport;

pub use content::{ContentBlock, ContentError, ToolCallResult};
pub use message::{
    frame_message, parse_message, ProtocolError, RequestId, RpcError, RpcMessage, INTERNAL_ERROR,
    INVALID_PARAMS, INVALID_REQUEST, METHOD_NOT_FOUND, PARSE_ERROR,
};
pub use schema::{
    validate_args, InputSchema, PropertyKind, PropertySchema, ScalarType, ToolDescriptor, Violation,
};
pub use server::{ServerError, ServerIdentity, ToolRegistration, ToolServer};
pub use transport::{open_transport, Connection, TransportConfig, TransportError, TransportKind};

pub const PROTOCOL_VERSION: &str = "2024-11-05";
