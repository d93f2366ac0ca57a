//! Simulation events and their line-delimited JSON encoding.
//!
//! Each line is one JSON object: `time`, then `kind`, then the kind's
//! payload keys in lexicographic order. Floats are written with 17
//! significant digits (`{:.16e}`), which round-trips every `f64`; NaN and
//! infinities are written as `null`.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde_json::Value;

use crate::error::{Error, Result};
use crate::selection::ClientId;

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// First line of every log: the run parameters the verifiers need.
    Init {
        tick: f64,
        mode: String,
        b: Option<u32>,
        k: Option<u32>,
        concurrency: u64,
        n_clients: u64,
        seed: u64,
        horizon: f64,
    },
    UpdateReported {
        client: ClientId,
        base_version: u64,
        start_time: f64,
        latency: f64,
        mean_loss: f64,
        sample_count: u64,
    },
    Aggregated {
        version: u64,
        interval: Option<f64>,
        contributors: Vec<ClientId>,
        staleness: Vec<u64>,
    },
    Blacklisted {
        client: ClientId,
    },
    LossEvaluated {
        loss: f64,
        version: u64,
    },
    Selected {
        client: ClientId,
        base_version: u64,
    },
    /// The global model went non-finite; the run stopped here.
    Diverged {
        version: u64,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Init { .. } => "init",
            EventKind::UpdateReported { .. } => "update_reported",
            EventKind::Aggregated { .. } => "aggregated",
            EventKind::Blacklisted { .. } => "blacklisted",
            EventKind::LossEvaluated { .. } => "loss_evaluated",
            EventKind::Selected { .. } => "selected",
            EventKind::Diverged { .. } => "diverged",
        }
    }

    /// Order of kinds sharing a timestamp, matching the control loop:
    /// reports are delivered, then aggregation, blacklisting, evaluation,
    /// and finally selection.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::Init { .. } => 0,
            EventKind::UpdateReported { .. } => 1,
            EventKind::Aggregated { .. } => 2,
            EventKind::Blacklisted { .. } => 3,
            EventKind::LossEvaluated { .. } => 4,
            EventKind::Selected { .. } => 5,
            EventKind::Diverged { .. } => 6,
        }
    }

    pub fn client(&self) -> Option<ClientId> {
        match self {
            EventKind::UpdateReported { client, .. }
            | EventKind::Blacklisted { client }
            | EventKind::Selected { client, .. } => Some(*client),
            _ => None,
        }
    }
}

impl SimEvent {
    pub fn new(time: f64, kind: EventKind) -> Self {
        Self { time, kind }
    }

    /// Canonical log order: time, then kind rank, then client id.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.kind.client().cmp(&other.kind.client()))
    }
}

/// Stable sort into canonical order.
pub fn sort_log(events: &mut [SimEvent]) {
    events.sort_by(SimEvent::canonical_cmp);
}

enum Field<'a> {
    Int(u64),
    Float(f64),
    OptFloat(Option<f64>),
    OptInt(Option<u32>),
    Str(&'a str),
    Ids(&'a [ClientId]),
    Ints(&'a [u64]),
}

fn push_float(out: &mut String, x: f64) {
    if x.is_finite() {
        let _ = write!(out, "{x:.16e}");
    } else {
        out.push_str("null");
    }
}

fn push_field(out: &mut String, field: &Field<'_>) {
    match field {
        Field::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Field::Float(x) => push_float(out, *x),
        Field::OptFloat(x) => match x {
            Some(x) => push_float(out, *x),
            None => out.push_str("null"),
        },
        Field::OptInt(v) => match v {
            Some(v) => {
                let _ = write!(out, "{v}");
            }
            None => out.push_str("null"),
        },
        Field::Str(s) => out.push_str(&Value::String((*s).to_string()).to_string()),
        Field::Ids(ids) => {
            out.push('[');
            for (i, id) in ids.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{id}");
            }
            out.push(']');
        }
        Field::Ints(vs) => {
            out.push('[');
            for (i, v) in vs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push(']');
        }
    }
}

/// One canonical JSON line, without the trailing newline.
pub fn encode_event(event: &SimEvent) -> String {
    use Field::*;
    // Payload keys are listed here already sorted.
    let payload: Vec<(&str, Field<'_>)> = match &event.kind {
        EventKind::Init {
            tick,
            mode,
            b,
            k,
            concurrency,
            n_clients,
            seed,
            horizon,
        } => vec![
            ("b", OptInt(*b)),
            ("concurrency", Int(*concurrency)),
            ("horizon", Float(*horizon)),
            ("k", OptInt(*k)),
            ("mode", Str(mode)),
            ("n_clients", Int(*n_clients)),
            ("seed", Int(*seed)),
            ("tick", Float(*tick)),
        ],
        EventKind::UpdateReported {
            client,
            base_version,
            start_time,
            latency,
            mean_loss,
            sample_count,
        } => vec![
            ("base_version", Int(*base_version)),
            ("client", Int(*client as u64)),
            ("latency", Float(*latency)),
            ("mean_loss", Float(*mean_loss)),
            ("sample_count", Int(*sample_count)),
            ("start_time", Float(*start_time)),
        ],
        EventKind::Aggregated {
            version,
            interval,
            contributors,
            staleness,
        } => vec![
            ("contributors", Ids(contributors)),
            ("interval", OptFloat(*interval)),
            ("staleness", Ints(staleness)),
            ("version", Int(*version)),
        ],
        EventKind::Blacklisted { client } => vec![("client", Int(*client as u64))],
        EventKind::LossEvaluated { loss, version } => vec![("loss", Float(*loss)), ("version", Int(*version))],
        EventKind::Selected { client, base_version } => {
            vec![("base_version", Int(*base_version)), ("client", Int(*client as u64))]
        }
        EventKind::Diverged { version } => vec![("version", Int(*version))],
    };
    let mut out = String::with_capacity(128);
    out.push_str("{\"time\":");
    push_float(&mut out, event.time);
    out.push_str(",\"kind\":\"");
    out.push_str(event.kind.name());
    out.push('"');
    for (key, field) in &payload {
        out.push_str(",\"");
        out.push_str(key);
        out.push_str("\":");
        push_field(&mut out, field);
    }
    out.push('}');
    out
}

pub fn write_log<W: Write>(out: &mut W, events: &[SimEvent]) -> std::io::Result<()> {
    for e in events {
        writeln!(out, "{}", encode_event(e))?;
    }
    Ok(())
}

pub fn encode_log(events: &[SimEvent]) -> String {
    let mut buf = Vec::new();
    write_log(&mut buf, events).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("log is UTF-8")
}

struct Obj<'a> {
    line: usize,
    map: &'a serde_json::Map<String, Value>,
}

impl Obj<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::LogParse {
            line: self.line,
            message: message.into(),
        }
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.map
            .get(key)
            .ok_or_else(|| self.err(format!("missing field `{key}`")))
    }

    fn float(&self, key: &str) -> Result<f64> {
        match self.get(key)? {
            Value::Null => Ok(f64::NAN),
            v => v.as_f64().ok_or_else(|| self.err(format!("`{key}` is not a number"))),
        }
    }

    fn opt_float(&self, key: &str) -> Result<Option<f64>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| self.err(format!("`{key}` is not a number"))),
        }
    }

    fn int(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| self.err(format!("`{key}` is not a non-negative integer")))
    }

    fn opt_u32(&self, key: &str) -> Result<Option<u32>> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .and_then(|x| u32::try_from(x).ok())
                .map(Some)
                .ok_or_else(|| self.err(format!("`{key}` is not a u32"))),
        }
    }

    fn client(&self, key: &str) -> Result<ClientId> {
        ClientId::try_from(self.int(key)?).map_err(|_| self.err(format!("`{key}` out of range")))
    }

    fn ints(&self, key: &str) -> Result<Vec<u64>> {
        let arr = self
            .get(key)?
            .as_array()
            .ok_or_else(|| self.err(format!("`{key}` is not an array")))?;
        arr.iter()
            .map(|v| {
                v.as_u64()
                    .ok_or_else(|| self.err(format!("`{key}` holds a non-integer")))
            })
            .collect()
    }

    fn str(&self, key: &str) -> Result<&str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| self.err(format!("`{key}` is not a string")))
    }
}

/// Parses one log line; `line` is the 1-based number used in errors.
pub fn decode_event(text: &str, line: usize) -> Result<SimEvent> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::LogParse {
        line,
        message: e.to_string(),
    })?;
    let map = value.as_object().ok_or(Error::LogParse {
        line,
        message: "not a JSON object".into(),
    })?;
    let o = Obj { line, map };
    let time = o.float("time")?;
    let kind = match o.str("kind")? {
        "init" => EventKind::Init {
            tick: o.float("tick")?,
            mode: o.str("mode")?.to_string(),
            b: o.opt_u32("b")?,
            k: o.opt_u32("k")?,
            concurrency: o.int("concurrency")?,
            n_clients: o.int("n_clients")?,
            seed: o.int("seed")?,
            horizon: o.float("horizon")?,
        },
        "update_reported" => EventKind::UpdateReported {
            client: o.client("client")?,
            base_version: o.int("base_version")?,
            start_time: o.float("start_time")?,
            latency: o.float("latency")?,
            mean_loss: o.float("mean_loss")?,
            sample_count: o.int("sample_count")?,
        },
        "aggregated" => EventKind::Aggregated {
            version: o.int("version")?,
            interval: o.opt_float("interval")?,
            contributors: o
                .ints("contributors")?
                .into_iter()
                .map(|c| ClientId::try_from(c).map_err(|_| o.err("contributor id out of range")))
                .collect::<Result<_>>()?,
            staleness: o.ints("staleness")?,
        },
        "blacklisted" => EventKind::Blacklisted {
            client: o.client("client")?,
        },
        "loss_evaluated" => EventKind::LossEvaluated {
            loss: o.float("loss")?,
            version: o.int("version")?,
        },
        "selected" => EventKind::Selected {
            client: o.client("client")?,
            base_version: o.int("base_version")?,
        },
        "diverged" => EventKind::Diverged {
            version: o.int("version")?,
        },
        other => return Err(o.err(format!("unknown event kind `{other}`"))),
    };
    Ok(SimEvent { time, kind })
}

/// Reads a whole log, skipping blank lines.
pub fn read_log<R: BufRead>(input: R) -> Result<Vec<SimEvent>> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::LogParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(decode_event(&line, i + 1)?);
    }
    Ok(events)
}

pub fn parse_log(text: &str) -> Result<Vec<SimEvent>> {
    read_log(text.as_bytes())
}
