//! Message encoding.
//!
//! Every message is a single JSON object on one line:
//!
//! ```text
//! {"type":"meas","seq":7,"t":14.0,"flags":{"missed_command":false},
//!  "devices":[{"id":"h00001","temp_c":22.1,"power_w":2590.3,"state":"on",
//!              "lockout_s":0.0,"age_s":86.0,"t_lo":21.5,"t_hi":22.5,
//!              "rated_w":2600.0,"accepted":null,"request":null}]}
//! {"type":"cmd","seq":7,"t":14.0,"devices":[{"id":"h00001","target":"off"}]}
//! {"type":"err","seq":7,"t":14.0,"devices":[],"message":"..."}
//! ```
//!
//! A measurement entry whose fields fail validation is kept and marked
//! corrupt so the rest of the frame stays usable. Anything wrong with a
//! command, or with the frame envelope, rejects the whole line.

use std::collections::HashSet;

use acfleet_core::house::{Compressor, HouseId, SwitchTarget};
use acfleet_core::plant::{DeviceCommand, DeviceReport, Measurement, Request, RequestKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Sensor readings outside this range (°C) are treated as corrupt.
pub const PLAUSIBLE_TEMP: (f64, f64) = (-60.0, 100.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed json: {0}")]
    Json(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("bad timestamp {0}")]
    BadTime(f64),
    #[error("bad device entry {index}: {reason}")]
    BadEntry { index: usize, reason: String },
    #[error("house {0} appears twice in one command")]
    DuplicateId(HouseId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandMessage {
    pub seq: u64,
    pub time: f64,
    pub commands: Vec<DeviceCommand>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMessage {
    pub seq: u64,
    pub time: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Command(CommandMessage),
    Measurement(Measurement),
    Error(ErrorMessage),
}

#[derive(Serialize, Deserialize, Default)]
struct Flags {
    #[serde(default)]
    missed_command: bool,
}

#[derive(Serialize)]
struct OutRequest {
    kind: &'static str,
    renewal: bool,
    power_w: f64,
}

#[derive(Serialize)]
struct OutDevice {
    id: String,
    temp_c: f64,
    power_w: f64,
    state: &'static str,
    lockout_s: f64,
    age_s: f64,
    t_lo: f64,
    t_hi: f64,
    rated_w: f64,
    accepted: Option<bool>,
    request: Option<OutRequest>,
}

#[derive(Serialize)]
struct OutCommand {
    id: String,
    target: &'static str,
}

#[derive(Serialize)]
struct OutFrame<D> {
    #[serde(rename = "type")]
    kind: &'static str,
    seq: u64,
    t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    flags: Option<Flags>,
    devices: Vec<D>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

#[derive(Deserialize)]
struct InFrame {
    #[serde(rename = "type")]
    kind: String,
    seq: u64,
    t: f64,
    #[serde(default)]
    flags: Option<Flags>,
    #[serde(default)]
    devices: Vec<Value>,
    #[serde(default)]
    message: Option<String>,
}

fn target_label(t: SwitchTarget) -> &'static str {
    match t {
        SwitchTarget::On => "on",
        SwitchTarget::Off => "off",
        SwitchTarget::NoChange => "none",
    }
}

fn out_device(d: &DeviceReport) -> OutDevice {
    OutDevice {
        id: d.id.to_string(),
        temp_c: d.temp_c,
        power_w: d.power_w,
        state: d.compressor.label(),
        lockout_s: d.compressor.lockout_remaining(),
        age_s: d.age_s,
        t_lo: d.t_lo,
        t_hi: d.t_hi,
        rated_w: d.rated_w,
        accepted: d.accepted,
        request: d.request.map(|r| OutRequest {
            kind: match r.kind {
                RequestKind::On => "on",
                RequestKind::Off => "off",
            },
            renewal: r.renewal,
            power_w: r.power_w,
        }),
    }
}

/// Encode one message as a single line, without the trailing newline.
pub fn encode(msg: &Message) -> String {
    let line = match msg {
        Message::Measurement(m) => serde_json::to_string(&OutFrame {
            kind: "meas",
            seq: m.seq,
            t: m.time,
            flags: Some(Flags { missed_command: m.missed_command }),
            devices: m.devices.iter().map(out_device).collect(),
            message: None,
        }),
        Message::Command(c) => serde_json::to_string(&OutFrame {
            kind: "cmd",
            seq: c.seq,
            t: c.time,
            flags: None,
            devices: c
                .commands
                .iter()
                .map(|c| OutCommand { id: c.id.to_string(), target: target_label(c.target) })
                .collect(),
            message: None,
        }),
        Message::Error(e) => serde_json::to_string(&OutFrame::<OutCommand> {
            kind: "err",
            seq: e.seq,
            t: e.time,
            flags: None,
            devices: Vec::new(),
            message: Some(e.message.clone()),
        }),
    };
    line.expect("wire structs always serialise")
}

/// Numbers may arrive as JSON numbers, as strings such as "NaN", or as
/// null (how non-finite values are written). Anything else is missing.
fn number(v: Option<&Value>) -> Option<f64> {
    match v? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        Value::Null => Some(f64::NAN),
        _ => None,
    }
}

fn id_of(entry: &Value, index: usize) -> Result<HouseId, WireError> {
    let bad = |reason: &str| WireError::BadEntry { index, reason: reason.into() };
    entry.get("id").and_then(Value::as_str).ok_or_else(|| bad("missing id"))?.parse().map_err(|_| bad("invalid id"))
}

fn decode_request(v: &Value) -> Result<Option<Request>, ()> {
    if v.is_null() {
        return Ok(None);
    }
    let kind = match v.get("kind").and_then(Value::as_str) {
        Some("on") => RequestKind::On,
        Some("off") => RequestKind::Off,
        _ => return Err(()),
    };
    let renewal = v.get("renewal").and_then(Value::as_bool).ok_or(())?;
    let power_w = number(v.get("power_w")).filter(|p| p.is_finite() && *p >= 0.0).ok_or(())?;
    Ok(Some(Request { kind, renewal, power_w }))
}

fn decode_device(entry: &Value, index: usize) -> Result<DeviceReport, WireError> {
    let id = id_of(entry, index)?;
    let mut corrupt = false;
    let mut field = |name: &str, ok: &dyn Fn(f64) -> bool| match number(entry.get(name)) {
        Some(x) if ok(x) => x,
        Some(x) => {
            corrupt = true;
            x
        }
        None => {
            corrupt = true;
            f64::NAN
        }
    };
    let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
    let temp_c = field("temp_c", &|x| (PLAUSIBLE_TEMP.0..=PLAUSIBLE_TEMP.1).contains(&x));
    let power_w = field("power_w", &finite_nonneg);
    let lockout = field("lockout_s", &finite_nonneg);
    let age_s = field("age_s", &finite_nonneg);
    let t_lo = field("t_lo", &f64::is_finite);
    let t_hi = field("t_hi", &f64::is_finite);
    let rated_w = field("rated_w", &finite_nonneg);
    if !(t_lo < t_hi) {
        corrupt = true;
    }
    let compressor = match entry.get("state").and_then(Value::as_str) {
        Some("on") => Compressor::On,
        Some("off") => Compressor::Off,
        Some("locked_off") => Compressor::LockedOff { remaining: lockout },
        Some("locked_on") => Compressor::LockedOn { remaining: lockout },
        _ => {
            corrupt = true;
            Compressor::Off
        }
    };
    let accepted = match entry.get("accepted") {
        None | Some(Value::Null) => None,
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => {
            corrupt = true;
            None
        }
    };
    let request = match entry.get("request").map(decode_request) {
        None => None,
        Some(Ok(r)) => r,
        Some(Err(())) => {
            corrupt = true;
            None
        }
    };
    Ok(DeviceReport { id, temp_c, power_w, compressor, age_s, t_lo, t_hi, rated_w, accepted, request, corrupt })
}

fn decode_command(entry: &Value, index: usize) -> Result<DeviceCommand, WireError> {
    let id = id_of(entry, index)?;
    let target = match entry.get("target").and_then(Value::as_str) {
        Some("on") => SwitchTarget::On,
        Some("off") => SwitchTarget::Off,
        Some("none") => SwitchTarget::NoChange,
        _ => return Err(WireError::BadEntry { index, reason: "target must be on, off or none".into() }),
    };
    Ok(DeviceCommand { id, target })
}

/// Decode one line.
pub fn decode(line: &str) -> Result<Message, WireError> {
    let frame: InFrame = serde_json::from_str(line.trim_end()).map_err(|e| WireError::Json(e.to_string()))?;
    if !frame.t.is_finite() {
        return Err(WireError::BadTime(frame.t));
    }
    match frame.kind.as_str() {
        "meas" => {
            let devices =
                frame.devices.iter().enumerate().map(|(i, v)| decode_device(v, i)).collect::<Result<Vec<_>, _>>()?;
            Ok(Message::Measurement(Measurement {
                seq: frame.seq,
                time: frame.t,
                devices,
                missed_command: frame.flags.unwrap_or_default().missed_command,
            }))
        }
        "cmd" => {
            let commands =
                frame.devices.iter().enumerate().map(|(i, v)| decode_command(v, i)).collect::<Result<Vec<_>, _>>()?;
            let mut seen = HashSet::with_capacity(commands.len());
            if let Some(c) = commands.iter().find(|c| !seen.insert(c.id)) {
                return Err(WireError::DuplicateId(c.id));
            }
            Ok(Message::Command(CommandMessage { seq: frame.seq, time: frame.t, commands }))
        }
        "err" => Ok(Message::Error(ErrorMessage {
            seq: frame.seq,
            time: frame.t,
            message: frame.message.unwrap_or_default(),
        })),
        other => Err(WireError::UnknownType(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device(id: u32) -> DeviceReport {
        DeviceReport {
            id: HouseId(id),
            temp_c: 22.1,
            power_w: 2590.25,
            compressor: Compressor::LockedOff { remaining: 40.5 },
            age_s: 86.0,
            t_lo: 21.5,
            t_hi: 22.5,
            rated_w: 2600.0,
            accepted: Some(false),
            request: Some(Request { kind: RequestKind::On, renewal: false, power_w: 2600.0 }),
            corrupt: false,
        }
    }

    #[test]
    fn heartbeat_frame() {
        let m = Message::Measurement(Measurement { seq: 0, time: 0.0, devices: vec![], missed_command: false });
        assert_eq!(decode(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn measurement_round_trip() {
        let m = Message::Measurement(Measurement {
            seq: 3,
            time: 6.0,
            devices: (1..=5).map(device).collect(),
            missed_command: true,
        });
        let line = encode(&m);
        assert!(!line.contains('\n'));
        assert_eq!(decode(&line).unwrap(), m);
    }

    #[test]
    fn nan_temperature_flags_only_that_entry() {
        let m = Message::Measurement(Measurement {
            seq: 1,
            time: 2.0,
            devices: vec![device(1), DeviceReport { temp_c: f64::NAN, ..device(2) }, device(3)],
            missed_command: false,
        });
        let Message::Measurement(back) = decode(&encode(&m)).unwrap() else { panic!() };
        assert_eq!(back.devices.iter().map(|d| d.corrupt).collect::<Vec<_>>(), [false, true, false]);
        assert_eq!(back.devices[0], device(1));
    }

    #[test]
    fn string_nan_and_unknown_state_are_flagged() {
        let line = r#"{"type":"meas","seq":0,"t":0.0,"devices":[
            {"id":"h00001","temp_c":"NaN","power_w":1.0,"state":"on","lockout_s":0,"age_s":0,"t_lo":21.5,"t_hi":22.5,"rated_w":1},
            {"id":"h00002","temp_c":22.0,"power_w":-5.0,"state":"on","lockout_s":0,"age_s":0,"t_lo":21.5,"t_hi":22.5,"rated_w":1},
            {"id":"h00003","temp_c":22.0,"power_w":1.0,"state":"melting","lockout_s":0,"age_s":0,"t_lo":21.5,"t_hi":22.5,"rated_w":1},
            {"id":"h00004","temp_c":22.0,"power_w":1.0,"state":"off","lockout_s":0,"age_s":0,"t_lo":21.5,"t_hi":22.5,"rated_w":1}]}"#;
        let Message::Measurement(m) = decode(&line.replace('\n', "")).unwrap() else { panic!() };
        assert_eq!(m.devices.iter().map(|d| d.corrupt).collect::<Vec<_>>(), [true, true, true, false]);
    }

    #[test]
    fn command_errors() {
        assert!(matches!(decode("{\"type\":\"cmd\",\"seq\":1"), Err(WireError::Json(_))));
        assert!(matches!(decode(r#"{"type":"ping","seq":1,"t":0}"#), Err(WireError::UnknownType(_))));
        let dup =
            r#"{"type":"cmd","seq":1,"t":0,"devices":[{"id":"h00001","target":"on"},{"id":"h00001","target":"off"}]}"#;
        assert_eq!(decode(dup), Err(WireError::DuplicateId(HouseId(1))));
        let bad = r#"{"type":"cmd","seq":1,"t":0,"devices":[{"id":"h00001","target":"sideways"}]}"#;
        assert!(matches!(decode(bad), Err(WireError::BadEntry { index: 0, .. })));
    }
}
