//! ASCII command/telemetry protocol over UDP.
//!
//! Commands, one per datagram: `command`, `takeoff`, `land`,
//! `rc A B C D` with integers in [-100, 100]. Replies are `ok` or
//! `error <reason>`. Telemetry datagrams are `key:value;` pairs in the fixed
//! order `t, x, y, z, yaw, vx, vy, vz`.

mod client;
mod server;

pub use client::{LinkClient, TelemetryReceiver, DEFAULT_TIMEOUT};
pub use server::{LinkServer, ServerConfig, SharedPlant, DEFAULT_COMMAND_PORT, DEFAULT_TELEMETRY_PORT};

use std::fmt;

use thiserror::Error;

use crate::vehicle::{DroneState, PlantParams, VelocityCommand};

/// Longest datagram accepted by the decoders, bytes.
pub const MAX_DATAGRAM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty message")]
    Empty,
    #[error("message of {0} bytes exceeds {MAX_DATAGRAM}")]
    Oversized(usize),
    #[error("message is not ASCII text")]
    NotAscii,
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("{verb} takes {expected} arguments, got {got}")]
    Arity {
        verb: String,
        expected: usize,
        got: usize,
    },
    #[error("not an integer: {0:?}")]
    NotInteger(String),
    #[error("out of range [-100, 100]: {0:?}")]
    OutOfRange(String),
    #[error("malformed field {0:?}")]
    BadField(String),
}

impl ParseError {
    /// Short reason used in `error <reason>` replies.
    pub fn reason(&self) -> &'static str {
        match self {
            ParseError::Oversized(_) => "oversized",
            _ => "parse",
        }
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("no reply within {0:?}")]
    Timeout(std::time::Duration),
    #[error("malformed reply: {0}")]
    Malformed(#[from] ParseError),
    #[error("link i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("server rejected {command:?}: {reason}")]
    Rejected { command: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandMessage {
    EnterSdk,
    Takeoff,
    Land,
    /// lateral (left +), forward, vertical, yaw; each in [-100, 100].
    Rc(i32, i32, i32, i32),
}

impl CommandMessage {
    /// `Rc` with every component clamped to [-100, 100].
    pub fn rc(a: i32, b: i32, c: i32, d: i32) -> Self {
        let k = |v: i32| v.clamp(-100, 100);
        CommandMessage::Rc(k(a), k(b), k(c), k(d))
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            CommandMessage::Rc(a, b, c, d) => [a, b, c, d].iter().all(|v| (-100..=100).contains(v)),
            _ => true,
        }
    }
}

impl fmt::Display for CommandMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandMessage::EnterSdk => f.write_str("command"),
            CommandMessage::Takeoff => f.write_str("takeoff"),
            CommandMessage::Land => f.write_str("land"),
            CommandMessage::Rc(a, b, c, d) => write!(f, "rc {a} {b} {c} {d}"),
        }
    }
}

pub fn encode_command(m: &CommandMessage) -> String {
    m.to_string()
}

fn ascii(bytes: &[u8]) -> Result<&str, ParseError> {
    if bytes.len() > MAX_DATAGRAM {
        return Err(ParseError::Oversized(bytes.len()));
    }
    if !bytes.is_ascii() {
        return Err(ParseError::NotAscii);
    }
    Ok(std::str::from_utf8(bytes).expect("ascii is utf-8"))
}

fn rc_component(tok: &str) -> Result<i32, ParseError> {
    let digits = tok.strip_prefix('-').unwrap_or(tok);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ParseError::NotInteger(tok.to_string()));
    }
    match tok.parse::<i64>() {
        Ok(v) if (-100..=100).contains(&v) => Ok(v as i32),
        _ => Err(ParseError::OutOfRange(tok.to_string())),
    }
}

pub fn decode_command(bytes: &[u8]) -> Result<CommandMessage, ParseError> {
    let text = ascii(bytes)?;
    let mut tokens = text.split(' ').filter(|t| !t.is_empty());
    let verb = tokens.next().ok_or(ParseError::Empty)?;
    let args: Vec<&str> = tokens.collect();
    let arity = |expected: usize| -> Result<(), ParseError> {
        if args.len() == expected {
            Ok(())
        } else {
            Err(ParseError::Arity {
                verb: verb.to_string(),
                expected,
                got: args.len(),
            })
        }
    };
    match verb {
        "command" => arity(0).map(|_| CommandMessage::EnterSdk),
        "takeoff" => arity(0).map(|_| CommandMessage::Takeoff),
        "land" => arity(0).map(|_| CommandMessage::Land),
        "rc" => {
            arity(4)?;
            Ok(CommandMessage::Rc(
                rc_component(args[0])?,
                rc_component(args[1])?,
                rc_component(args[2])?,
                rc_component(args[3])?,
            ))
        }
        other => Err(ParseError::UnknownVerb(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseMessage {
    Ok,
    Error(String),
}

impl fmt::Display for ResponseMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseMessage::Ok => f.write_str("ok"),
            ResponseMessage::Error(reason) => write!(f, "error {reason}"),
        }
    }
}

pub fn encode_response(r: &ResponseMessage) -> String {
    r.to_string()
}

pub fn decode_response(bytes: &[u8]) -> Result<ResponseMessage, ParseError> {
    let text = ascii(bytes)?;
    if text.contains('\n') || text.contains('\r') {
        return Err(ParseError::BadField(text.to_string()));
    }
    match text {
        "ok" => Ok(ResponseMessage::Ok),
        "" => Err(ParseError::Empty),
        _ => match text.strip_prefix("error ") {
            Some(reason) if !reason.is_empty() => Ok(ResponseMessage::Error(reason.to_string())),
            _ => Err(ParseError::UnknownVerb(text.to_string())),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryMessage {
    /// Milliseconds of simulated time.
    pub t_ms: u64,
    /// World position, mm.
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees.
    pub yaw: f64,
    /// World velocity, mm/s.
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl TelemetryMessage {
    pub fn from_state(s: &DroneState) -> Self {
        Self {
            t_ms: (s.t * 1000.0).round().max(0.0) as u64,
            x: s.position.x,
            y: s.position.y,
            z: s.position.z,
            yaw: s.yaw,
            vx: s.velocity_world.x,
            vy: s.velocity_world.y,
            vz: s.velocity_world.z,
        }
    }
}

const TELEMETRY_KEYS: [&str; 8] = ["t", "x", "y", "z", "yaw", "vx", "vy", "vz"];

pub fn encode_telemetry(m: &TelemetryMessage) -> String {
    format!(
        "t:{};x:{};y:{};z:{};yaw:{};vx:{};vy:{};vz:{};",
        m.t_ms, m.x, m.y, m.z, m.yaw, m.vx, m.vy, m.vz
    )
}

pub fn decode_telemetry(bytes: &[u8]) -> Result<TelemetryMessage, ParseError> {
    let text = ascii(bytes)?;
    let body = text
        .strip_suffix(';')
        .ok_or_else(|| ParseError::BadField(text.to_string()))?;
    let fields: Vec<&str> = body.split(';').collect();
    if fields.len() != TELEMETRY_KEYS.len() {
        return Err(ParseError::Arity {
            verb: "telemetry".into(),
            expected: TELEMETRY_KEYS.len(),
            got: fields.len(),
        });
    }
    let mut values = [0.0f64; 7];
    let mut t_ms = 0u64;
    for (i, (field, key)) in fields.iter().zip(TELEMETRY_KEYS).enumerate() {
        let (k, v) = field
            .split_once(':')
            .ok_or_else(|| ParseError::BadField(field.to_string()))?;
        if k != key {
            return Err(ParseError::BadField(field.to_string()));
        }
        if i == 0 {
            t_ms = v.parse().map_err(|_| ParseError::BadField(field.to_string()))?;
        } else {
            let x: f64 = v.parse().map_err(|_| ParseError::BadField(field.to_string()))?;
            if !x.is_finite() {
                return Err(ParseError::BadField(field.to_string()));
            }
            values[i - 1] = x;
        }
    }
    let [x, y, z, yaw, vx, vy, vz] = values;
    Ok(TelemetryMessage { t_ms, x, y, z, yaw, vx, vy, vz })
}

/// Velocity command carried by an `rc` message.
pub fn rc_to_velocity(a: i32, b: i32, c: i32, d: i32, p: &PlantParams) -> VelocityCommand {
    let s = p.v_max / 100.0;
    VelocityCommand::new(b as f64 * s, a as f64 * s, c as f64 * s, d as f64 * p.w_max / 100.0, p)
}

/// Nearest `rc` message for a velocity command.
pub fn velocity_to_rc(cmd: &VelocityCommand, p: &PlantParams) -> CommandMessage {
    let q = |v: f64, full: f64| (v / full * 100.0).round() as i32;
    CommandMessage::rc(
        q(cmd.vy, p.v_max),
        q(cmd.vx, p.v_max),
        q(cmd.vz, p.v_max),
        q(cmd.wz, p.w_max),
    )
}

/// A command as the plant will see it after a trip through the link.
pub fn quantize(cmd: &VelocityCommand, p: &PlantParams) -> VelocityCommand {
    match velocity_to_rc(cmd, p) {
        CommandMessage::Rc(a, b, c, d) => rc_to_velocity(a, b, c, d, p),
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn grammar_examples() {
        assert_eq!(encode_command(&CommandMessage::Rc(20, 0, 0, -10)), "rc 20 0 0 -10");
        assert_eq!(decode_command(b"rc 20 0 0 -10"), Ok(CommandMessage::Rc(20, 0, 0, -10)));
        assert_eq!(decode_command(b"command"), Ok(CommandMessage::EnterSdk));
        assert_eq!(encode_command(&CommandMessage::EnterSdk), "command");
        assert_eq!(
            decode_command(b"rc 20 0"),
            Err(ParseError::Arity { verb: "rc".into(), expected: 4, got: 2 })
        );
        assert_eq!(decode_command(b"rc 1 2 3 x"), Err(ParseError::NotInteger("x".into())));
        assert_eq!(decode_command(b"rc 1 2 3 101"), Err(ParseError::OutOfRange("101".into())));
        assert_eq!(decode_command(b"rc 1 2 3 +5"), Err(ParseError::NotInteger("+5".into())));
        assert_eq!(decode_command(b"fly"), Err(ParseError::UnknownVerb("fly".into())));
        assert_eq!(decode_command(b""), Err(ParseError::Empty));
        assert_eq!(decode_command(&[b'a'; 300]), Err(ParseError::Oversized(300)));
        assert!(matches!(decode_command(&[0xff, 0xfe]), Err(ParseError::NotAscii)));
    }

    #[test]
    fn rc_clamps() {
        assert_eq!(CommandMessage::rc(150, -300, 5, 100), CommandMessage::Rc(100, -100, 5, 100));
    }

    #[test]
    fn rc_scaling() {
        let p = PlantParams::default();
        let v = rc_to_velocity(100, 0, 0, 0, &p);
        assert_eq!((v.vx, v.vy, v.vz, v.wz), (0.0, 1000.0, 0.0, 0.0));
        let v = rc_to_velocity(0, -40, 20, -50, &p);
        assert_eq!((v.vx, v.vy, v.vz, v.wz), (-400.0, 0.0, 200.0, -50.0));
        let c = VelocityCommand::new(400.0, -123.0, 37.0, -24.4, &p);
        assert_eq!(velocity_to_rc(&c, &p), CommandMessage::Rc(-12, 40, 4, -24));
    }

    #[test]
    fn responses() {
        assert_eq!(decode_response(b"ok"), Ok(ResponseMessage::Ok));
        assert_eq!(
            decode_response(b"error not in sdk mode"),
            Ok(ResponseMessage::Error("not in sdk mode".into()))
        );
        assert!(decode_response(b"okay").is_err());
        assert!(decode_response(b"error ").is_err());
        assert_eq!(encode_response(&ResponseMessage::Error("parse".into())), "error parse");
    }

    #[test]
    fn telemetry_round_trip() {
        let m = TelemetryMessage {
            t_ms: 1234,
            x: 1.5,
            y: -0.1,
            z: 1000.0,
            yaw: -179.99,
            vx: 1e-7,
            vy: 0.3333333333333333,
            vz: -0.0,
        };
        let s = encode_telemetry(&m);
        assert!(s.starts_with("t:1234;x:1.5;y:-0.1;z:1000;yaw:-179.99;"));
        assert_eq!(decode_telemetry(s.as_bytes()), Ok(m));
        assert!(decode_telemetry(b"t:1;x:1;").is_err());
        assert!(decode_telemetry(b"x:1;t:1;y:1;z:1;yaw:1;vx:1;vy:1;vz:1;").is_err());
    }

    fn arb_command() -> impl Strategy<Value = CommandMessage> {
        prop_oneof![
            Just(CommandMessage::EnterSdk),
            Just(CommandMessage::Takeoff),
            Just(CommandMessage::Land),
            (-100i32..=100, -100i32..=100, -100i32..=100, -100i32..=100)
                .prop_map(|(a, b, c, d)| CommandMessage::Rc(a, b, c, d)),
        ]
    }

    proptest! {
        #[test]
        fn command_round_trip(m in arb_command()) {
            prop_assert_eq!(decode_command(encode_command(&m).as_bytes()), Ok(m));
        }

        #[test]
        fn decoded_text_round_trips(s in "(command|takeoff|land|rc -?[0-9]{1,3} -?[0-9]{1,3} -?[0-9]{1,3} -?[0-9]{1,3})") {
            if let Ok(m) = decode_command(s.as_bytes()) {
                prop_assert!(m.is_valid());
                // canonical text re-decodes to the same message
                prop_assert_eq!(decode_command(encode_command(&m).as_bytes()), Ok(m));
                let canonical = !s.contains(" -0") && !s.split(' ').any(|t| t.len() > 1 && t.trim_start_matches('-').starts_with('0'));
                if canonical {
                    prop_assert_eq!(encode_command(&m), s);
                }
            }
        }
    }

    #[test]
    fn decoder_survives_random_datagrams() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let alphabet = b"rc commandtakeoffland-0123456789 \t\n:;.xyz";
        for i in 0..100_000 {
            let len = rng.random_range(0..=MAX_DATAGRAM);
            let bytes: Vec<u8> = if i % 2 == 0 {
                (0..len).map(|_| rng.random()).collect()
            } else {
                (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
            };
            if let Ok(m) = decode_command(&bytes) {
                assert!(m.is_valid());
            }
            let _ = decode_response(&bytes);
            let _ = decode_telemetry(&bytes);
        }
    }
}
