//! JSON-RPC 2.0 message model and newline-delimited framing.

use std::fmt;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

const VERSION: &str = "2.0";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestId {
    Number(i64),
    String(String),
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestId::Number(n) => write!(f, "{n}"),
            RequestId::String(s) => write!(f, "{s:?}"),
        }
    }
}

impl From<i64> for RequestId {
    fn from(value: i64) -> Self {
        RequestId::Number(value)
    }
}

impl From<&str> for RequestId {
    fn from(value: &str) -> Self {
        RequestId::String(value.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }

    pub fn with_data(mut self, data: Value) -> Self {
        self.data = Some(data);
        self
    }
}

impl fmt::Display for RpcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (code {})", self.message, self.code)
    }
}

/// One JSON-RPC message. Notifications are requests without an id.
#[derive(Debug, Clone, PartialEq)]
pub enum RpcMessage {
    Request {
        id: RequestId,
        method: String,
        params: Option<Value>,
    },
    Notification {
        method: String,
        params: Option<Value>,
    },
    Response {
        id: RequestId,
        result: Value,
    },
    /// `id` is `None` only when the offending request's id could not be read.
    ErrorResponse {
        id: Option<RequestId>,
        error: RpcError,
    },
}

impl RpcMessage {
    pub fn request(id: impl Into<RequestId>, method: impl Into<String>, params: Option<Value>) -> Self {
        RpcMessage::Request {
            id: id.into(),
            method: method.into(),
            params,
        }
    }

    pub fn response(id: RequestId, result: Value) -> Self {
        RpcMessage::Response { id, result }
    }

    pub fn error(id: Option<RequestId>, error: RpcError) -> Self {
        RpcMessage::ErrorResponse { id, error }
    }

    pub fn id(&self) -> Option<&RequestId> {
        match self {
            RpcMessage::Request { id, .. } | RpcMessage::Response { id, .. } => Some(id),
            RpcMessage::ErrorResponse { id, .. } => id.as_ref(),
            RpcMessage::Notification { .. } => None,
        }
    }

    pub fn method(&self) -> Option<&str> {
        match self {
            RpcMessage::Request { method, .. } | RpcMessage::Notification { method, .. } => {
                Some(method)
            }
            _ => None,
        }
    }

    pub fn is_reply(&self) -> bool {
        matches!(
            self,
            RpcMessage::Response { .. } | RpcMessage::ErrorResponse { .. }
        )
    }

    /// Shape check against a raw JSON value.
    pub fn from_value(value: Value) -> Result<Self, ProtocolError> {
        let Value::Object(mut obj) = value else {
            return Err(ProtocolError::InvalidRequest(
                "message must be a JSON object".into(),
            ));
        };
        match obj.remove("jsonrpc") {
            Some(Value::String(v)) if v == VERSION => {}
            _ => {
                return Err(ProtocolError::InvalidRequest(
                    "jsonrpc must be \"2.0\"".into(),
                ))
            }
        }
        let id = obj.remove("id");
        let method = obj.remove("method");
        let params = obj.remove("params");
        let result = obj.remove("result");
        let error = obj.remove("error");

        if let Some(method) = method {
            let Value::String(method) = method else {
                return Err(ProtocolError::InvalidRequest("method must be a string".into()));
            };
            if result.is_some() || error.is_some() {
                return Err(ProtocolError::InvalidRequest(
                    "a request cannot carry result or error".into(),
                ));
            }
            if let Some(p) = &params {
                if !(p.is_object() || p.is_array()) {
                    return Err(ProtocolError::InvalidRequest(
                        "params must be an object or array".into(),
                    ));
                }
            }
            return match id {
                None => Ok(RpcMessage::Notification { method, params }),
                Some(id) => Ok(RpcMessage::Request {
                    id: parse_id(id)?,
                    method,
                    params,
                }),
            };
        }

        if params.is_some() {
            return Err(ProtocolError::InvalidRequest(
                "params without method".into(),
            ));
        }
        match (result, error) {
            (Some(_), Some(_)) => Err(ProtocolError::InvalidRequest(
                "response carries both result and error".into(),
            )),
            (Some(result), None) => {
                let id = id.ok_or_else(|| ProtocolError::InvalidRequest("response without id".into()))?;
                Ok(RpcMessage::Response {
                    id: parse_id(id)?,
                    result,
                })
            }
            (None, Some(error)) => {
                let error: RpcError = serde_json::from_value(error).map_err(|e| {
                    ProtocolError::InvalidRequest(format!("malformed error object: {e}"))
                })?;
                let id = match id {
                    None | Some(Value::Null) => None,
                    Some(id) => Some(parse_id(id)?),
                };
                Ok(RpcMessage::ErrorResponse { id, error })
            }
            (None, None) => Err(ProtocolError::InvalidRequest(
                "message has neither method nor result nor error".into(),
            )),
        }
    }
}

fn parse_id(value: Value) -> Result<RequestId, ProtocolError> {
    match value {
        Value::String(s) => Ok(RequestId::String(s)),
        Value::Number(n) => n
            .as_i64()
            .map(RequestId::Number)
            .ok_or_else(|| ProtocolError::InvalidRequest("id must be an integer or string".into())),
        _ => Err(ProtocolError::InvalidRequest(
            "id must be an integer or string".into(),
        )),
    }
}

impl Serialize for RpcMessage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("jsonrpc", VERSION)?;
        match self {
            RpcMessage::Request { id, method, params } => {
                map.serialize_entry("id", id)?;
                map.serialize_entry("method", method)?;
                if let Some(params) = params {
                    map.serialize_entry("params", params)?;
                }
            }
            RpcMessage::Notification { method, params } => {
                map.serialize_entry("method", method)?;
                if let Some(params) = params {
                    map.serialize_entry("params", params)?;
                }
            }
            RpcMessage::Response { id, result } => {
                map.serialize_entry("id", id)?;
                map.serialize_entry("result", result)?;
            }
            RpcMessage::ErrorResponse { id, error } => {
                map.serialize_entry("id", id)?;
                map.serialize_entry("error", error)?;
            }
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for RpcMessage {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        RpcMessage::from_value(value).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot encode message: {0}")]
    Encode(String),
}

impl ProtocolError {
    pub fn code(&self) -> i64 {
        match self {
            ProtocolError::Parse(_) => PARSE_ERROR,
            ProtocolError::InvalidRequest(_) => INVALID_REQUEST,
            ProtocolError::Encode(_) => INTERNAL_ERROR,
        }
    }

    pub fn to_rpc_error(&self) -> RpcError {
        RpcError::new(self.code(), self.to_string())
    }
}

/// Encodes `msg` as a single newline-terminated line of JSON.
pub fn frame_message(msg: &RpcMessage) -> Result<Vec<u8>, ProtocolError> {
    let mut out = serde_json::to_vec(msg).map_err(|e| ProtocolError::Encode(e.to_string()))?;
    debug_assert!(!out.contains(&b'\n'));
    out.push(b'\n');
    Ok(out)
}

/// Decodes one framed line. A trailing `\n` or `\r\n` is tolerated.
pub fn parse_message(line: &[u8]) -> Result<RpcMessage, ProtocolError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    let value: Value =
        serde_json::from_slice(line).map_err(|e| ProtocolError::Parse(e.to_string()))?;
    RpcMessage::from_value(value)
}

/// Best-effort id recovery from a line that failed shape validation, so the
/// error response can still be correlated.
pub fn salvage_id(line: &[u8]) -> Option<RequestId> {
    let value: Value = serde_json::from_slice(line.trim_ascii()).ok()?;
    let obj: &Map<String, Value> = value.as_object()?;
    parse_id(obj.get("id")?.clone()).ok()
}
