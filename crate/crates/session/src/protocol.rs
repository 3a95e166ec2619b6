//! JSON text messages exchanged over the WebSocket. Binary messages carry [`crate::Frame`]s.
//!
//! Every client message is an object with a `"type"` field and an optional numeric `"id"`
//! that the matching reply echoes back.

use serde::{Deserialize, Serialize};

use geonca::InductionMode;

pub const PROTOCOL_VERSION: u32 = 1;

/// Where a new session's map comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSource {
    /// Fully legal map with a single live seed cell; a random cell when `seed` is absent.
    Blank {
        height: usize,
        width: usize,
        #[serde(default)]
        seed: Option<[usize; 2]>,
    },
    /// A dataset sample grown from a random pre-explored disc.
    Sample { location: String, timestamp: String },
}

/// Partial step configuration; absent fields keep their current value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub beta: Option<f64>,
    pub concentration: Option<f64>,
    pub stochastic_p: Option<f64>,
    pub alive_threshold: Option<f64>,
    pub alive_window: Option<usize>,
    pub induction_mode: Option<InductionMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Back to the session's initial map; `seed` moves the seed cell of a blank map.
    Reset {
        #[serde(default)]
        seed: Option<[usize; 2]>,
    },
    Step { count: u64 },
    /// Run continuously at `rate` steps per second, capped by the server.
    Play { rate: f64 },
    Pause,
    BrushDamage { center: [usize; 2], radius: f64 },
    /// Paints one-hot induction targets of `class`; a zero radius clears all induction.
    BrushInduce {
        center: [usize; 2],
        radius: f64,
        class: usize,
        concentration: f64,
    },
    SetConfig { config: ConfigPatch },
    /// Emit a frame every `stride` steps.
    Subscribe { stride: u64 },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Reset { .. } => "reset",
            Command::Step { .. } => "step",
            Command::Play { .. } => "play",
            Command::Pause => "pause",
            Command::BrushDamage { .. } => "brush_damage",
            Command::BrushInduce { .. } => "brush_induce",
            Command::SetConfig { .. } => "set_config",
            Command::Subscribe { .. } => "subscribe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Health,
    ListCheckpoints,
    Create {
        checkpoint: String,
        map: MapSource,
        #[serde(default)]
        seed: u64,
    },
}

/// Anything a client may send.
#[derive(Clone, Debug, PartialEq)]
pub enum ClientMessage {
    Request(Request),
    Command(Command),
}

const REQUEST_TYPES: [&str; 3] = ["health", "list_checkpoints", "create"];

/// Parses one client text message into its optional correlation id and body.
pub fn parse_client(text: &str) -> Result<(Option<u64>, ClientMessage), String> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = value.as_object_mut().ok_or("message must be a JSON object")?;
    let id = match obj.remove("id") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or("id must be a non-negative integer")?),
    };
    let kind = obj.get("type").and_then(|t| t.as_str()).ok_or("missing \"type\"")?;
    let body = if REQUEST_TYPES.contains(&kind) {
        ClientMessage::Request(serde_json::from_value(value).map_err(|e| e.to_string())?)
    } else {
        ClientMessage::Command(serde_json::from_value(value).map_err(|e| e.to_string())?)
    };
    Ok((id, body))
}

/// Outgoing reply with its optional correlation id.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Envelope<T> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid JSON or not a known message.
    BadRequest,
    /// A brush or seed position outside the grid.
    OutOfBounds,
    /// A field value outside its allowed range.
    InvalidValue,
    /// A command arrived before `create`.
    NoSession,
    /// `create` after a session already exists on this connection.
    SessionExists,
    BadCheckpoint,
    UnknownSample,
    /// The server is at its session limit.
    Busy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub name: String,
    pub epoch: u64,
    pub hidden: usize,
    pub classes: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Health {
        status: String,
        version: String,
        protocol: u32,
        sessions: usize,
    },
    Checkpoints { checkpoints: Vec<CheckpointInfo> },
    Created {
        session: u64,
        height: usize,
        width: usize,
        classes: Vec<ClassInfo>,
        background: [u8; 3],
        dead: [u8; 3],
        step_rate_cap: f64,
    },
    Ack {
        command: String,
        step: u64,
        /// Effective play rate after capping; present for `play`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    Error { code: ErrorCode, message: String },
    /// The session ended; no further frames follow.
    Closed { reason: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Parsed {
        id: Option<u64>,
        body: ClientMessage,
    }

    fn parse(s: &str) -> Parsed {
        let (id, body) = parse_client(s).unwrap();
        Parsed { id, body }
    }

    #[test]
    fn commands_parse() {
        let m = parse(r#"{"type":"step","count":5,"id":7}"#);
        assert_eq!(m.id, Some(7));
        assert_eq!(m.body, ClientMessage::Command(Command::Step { count: 5 }));
        let m = parse(r#"{"type":"brush_induce","center":[3,4],"radius":2.5,"class":3,"concentration":0.5}"#);
        assert!(matches!(m.body, ClientMessage::Command(Command::BrushInduce { class: 3, .. })));
        let m = parse(r#"{"type":"pause"}"#);
        assert_eq!(m.body, ClientMessage::Command(Command::Pause));
        let m = parse(r#"{"type":"set_config","config":{"beta":0.5}}"#);
        assert!(matches!(m.body, ClientMessage::Command(Command::SetConfig { .. })));
    }

    #[test]
    fn requests_parse() {
        let m = parse(r#"{"type":"create","checkpoint":"a.ckpt","map":{"kind":"blank","height":8,"width":8}}"#);
        assert!(matches!(m.body, ClientMessage::Request(Request::Create { seed: 0, .. })));
        assert_eq!(parse(r#"{"type":"health"}"#).body, ClientMessage::Request(Request::Health));
    }

    #[test]
    fn unknown_messages_fail() {
        for bad in [r#"{"type":"explode"}"#, r#"{"type":"pause","id":-1}"#, r#"{"type":"step"}"#, r#"{"type":"step","count":1,"extra":2}"#, "[]"] {
            assert!(parse_client(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn replies_are_tagged() {
        let r = Envelope {
            id: Some(1),
            body: Reply::Ack { command: "step".into(), step: 4, rate: None },
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["type"], "ack");
        assert_eq!(v["id"], 1);
        assert!(v.get("rate").is_none());
    }
}
