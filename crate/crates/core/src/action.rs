//! UI actions, their 7-field discrete encoding and JSON Lines traces.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sequence::PrimitiveKind;

/// Number of classes per continuous field.
pub const BINS: i32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyId {
    ShiftDown,
    ShiftUp,
    Tab,
    Enter,
    Escape,
    Space,
    L,
    C,
    A,
    S,
    E,
    P,
    H,
    Y,
    Seven,
    Plus,
    ArrowUp,
    ArrowDown,
    ArrowLeft,
    ArrowRight,
}

impl KeyId {
    pub const ALL: [KeyId; 20] = [
        KeyId::ShiftDown,
        KeyId::ShiftUp,
        KeyId::Tab,
        KeyId::Enter,
        KeyId::Escape,
        KeyId::Space,
        KeyId::L,
        KeyId::C,
        KeyId::A,
        KeyId::S,
        KeyId::E,
        KeyId::P,
        KeyId::H,
        KeyId::Y,
        KeyId::Seven,
        KeyId::Plus,
        KeyId::ArrowUp,
        KeyId::ArrowDown,
        KeyId::ArrowLeft,
        KeyId::ArrowRight,
    ];

    pub fn index(self) -> i32 {
        self as i32
    }

    pub fn from_index(i: i32) -> Option<Self> {
        usize::try_from(i).ok().and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            KeyId::ShiftDown => "shift_down",
            KeyId::ShiftUp => "shift_up",
            KeyId::Tab => "tab",
            KeyId::Enter => "enter",
            KeyId::Escape => "escape",
            KeyId::Space => "space",
            KeyId::L => "l",
            KeyId::C => "c",
            KeyId::A => "a",
            KeyId::S => "s",
            KeyId::E => "e",
            KeyId::P => "p",
            KeyId::H => "h",
            KeyId::Y => "y",
            KeyId::Seven => "seven",
            KeyId::Plus => "plus",
            KeyId::ArrowUp => "arrow_up",
            KeyId::ArrowDown => "arrow_down",
            KeyId::ArrowLeft => "arrow_left",
            KeyId::ArrowRight => "arrow_right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    MoveTo { x: f64, y: f64 },
    PressKey { key: KeyId, count: u32 },
    Scroll { amount: f64 },
    Type { value: f64 },
    Click,
}

impl Command {
    pub fn code(&self) -> i32 {
        match self {
            Command::MoveTo { .. } => 0,
            Command::PressKey { .. } => 1,
            Command::Scroll { .. } => 2,
            Command::Type { .. } => 3,
            Command::Click => 4,
        }
    }

    pub fn key(key: KeyId) -> Self {
        Command::PressKey { key, count: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub cmd: Command,
    /// Virtual delay before the action, seconds.
    pub dt: f64,
}

pub const CMD_NAMES: [&str; 5] = ["MoveTo", "PressKey", "Scroll", "Type", "Click"];

/// `(c, x, y, k, n, s, v)` with `-1` in unused slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(pub [i32; 7]);

impl ActionVector {
    pub const CMD: usize = 0;
    pub const X: usize = 1;
    pub const Y: usize = 2;
    pub const KEY: usize = 3;
    pub const COUNT: usize = 4;
    pub const SCROLL: usize = 5;
    pub const VALUE: usize = 6;

    pub fn cmd(&self) -> i32 {
        self.0[0]
    }

    /// Slots that carry a value for command code `c`.
    pub fn used_slots(c: i32) -> &'static [usize] {
        match c {
            0 => &[Self::X, Self::Y],
            1 => &[Self::KEY, Self::COUNT],
            2 => &[Self::SCROLL],
            3 => &[Self::VALUE],
            _ => &[],
        }
    }
}

impl fmt::Display for ActionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.0.iter().map(i32::to_string).collect::<Vec<_>>().join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("malformed action vector {vector}: {reason}")]
    MalformedVector { vector: ActionVector, reason: String },
    #[error("trace line {line}: {reason}")]
    BadTrace { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

fn bin(val_norm: f64) -> i32 {
    ((val_norm * f64::from(BINS)).floor() as i64).clamp(0, i64::from(BINS - 1)) as i32
}

fn center(idx: i32) -> f64 {
    (f64::from(idx) + 0.5) / f64::from(BINS)
}

pub fn encode_action(a: &Command) -> ActionVector {
    let mut v = [-1; 7];
    v[0] = a.code();
    match *a {
        Command::MoveTo { x, y } => {
            v[ActionVector::X] = bin(x);
            v[ActionVector::Y] = bin(y);
        }
        Command::PressKey { key, count } => {
            v[ActionVector::KEY] = key.index();
            v[ActionVector::COUNT] = count.min(999) as i32;
        }
        Command::Scroll { amount } => v[ActionVector::SCROLL] = bin((amount + 1.0) / 2.0),
        Command::Type { value } => v[ActionVector::VALUE] = bin((value + 1.0) / 2.0),
        Command::Click => {}
    }
    ActionVector(v)
}

pub fn decode_action(v: &ActionVector) -> Result<Command, ActionError> {
    let bad = |reason: String| ActionError::MalformedVector { vector: *v, reason };
    let c = v.cmd();
    if !(0..=4).contains(&c) {
        return Err(bad(format!("command code {c} outside [0,4]")));
    }
    let used = ActionVector::used_slots(c);
    for slot in 1..7 {
        let x = v.0[slot];
        if used.contains(&slot) {
            if !(0..BINS).contains(&x) {
                return Err(bad(format!("slot {slot} = {x} outside [0,999]")));
            }
        } else if x != -1 {
            return Err(bad(format!("slot {slot} must be -1 for {}", CMD_NAMES[c as usize])));
        }
    }
    Ok(match c {
        0 => Command::MoveTo { x: center(v.0[1]), y: center(v.0[2]) },
        1 => {
            let key = KeyId::from_index(v.0[3]).ok_or_else(|| bad(format!("unknown key {}", v.0[3])))?;
            if v.0[4] < 1 {
                return Err(bad("key count must be positive".into()));
            }
            Command::PressKey { key, count: v.0[4] as u32 }
        }
        2 => Command::Scroll { amount: 2.0 * center(v.0[5]) - 1.0 },
        3 => Command::Type { value: 2.0 * center(v.0[6]) - 1.0 },
        _ => Command::Click,
    })
}

/// High-level annotation attached to the first action of a compiled unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HlTag {
    PlaneCreate,
    SketchBegin,
    LoopBegin,
    Primitive(PrimitiveKind),
    Extrude,
    Eos,
}

impl HlTag {
    pub fn as_str(&self) -> String {
        match self {
            HlTag::PlaneCreate => "plane_create".into(),
            HlTag::SketchBegin => "sketch_begin".into(),
            HlTag::LoopBegin => "loop_begin".into(),
            HlTag::Primitive(k) => format!("primitive:{}", k.name()),
            HlTag::Extrude => "extrude".into(),
            HlTag::Eos => "eos".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "plane_create" => HlTag::PlaneCreate,
            "sketch_begin" => HlTag::SketchBegin,
            "loop_begin" => HlTag::LoopBegin,
            "primitive:line" => HlTag::Primitive(PrimitiveKind::Line),
            "primitive:arc" => HlTag::Primitive(PrimitiveKind::Arc),
            "primitive:circle" => HlTag::Primitive(PrimitiveKind::Circle),
            "extrude" => HlTag::Extrude,
            "eos" => HlTag::Eos,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionProgram {
    pub actions: Vec<Action>,
    /// `(action_index, tag)`; an action may carry several tags, e.g. the
    /// first click of a sketch opens the sketch, its first loop and primitive.
    pub hl_events: Vec<(usize, HlTag)>,
}

impl ActionProgram {
    pub fn vectors(&self) -> Vec<ActionVector> {
        self.actions.iter().map(|a| encode_action(&a.cmd)).collect()
    }

    /// Replaces every command with its decoded bin center, i.e. exactly what
    /// a consumer of the serialized trace will see.
    pub fn quantized(&self) -> ActionProgram {
        let actions = self
            .actions
            .iter()
            .map(|a| Action {
                cmd: decode_action(&encode_action(&a.cmd)).expect("encoder output decodes"),
                dt: a.dt,
            })
            .collect();
        ActionProgram { actions, hl_events: self.hl_events.clone() }
    }

    pub fn tags_at(&self, i: usize) -> impl Iterator<Item = HlTag> + '_ {
        self.hl_events.iter().filter(move |(j, _)| *j == i).map(|(_, t)| *t)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ActionError> {
        for (i, a) in self.actions.iter().enumerate() {
            let tags: Vec<String> = self.tags_at(i).map(|t| t.as_str()).collect();
            let line = TraceLine {
                i,
                a: encode_action(&a.cmd),
                dt: a.dt,
                hl: if tags.is_empty() { None } else { Some(tags.join("+")) },
            };
            let s = serde_json::to_string(&line).map_err(|e| ActionError::Io(e.to_string()))?;
            writeln!(out, "{s}").map_err(|e| ActionError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses a JSON Lines trace. Commands are decoded to bin centers.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<ActionProgram, ActionError> {
        let mut prog = ActionProgram::default();
        for (ln, line) in input.lines().enumerate() {
            let line = line.map_err(|e| ActionError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceLine = serde_json::from_str(&line)
                .map_err(|e| ActionError::BadTrace { line: ln + 1, reason: e.to_string() })?;
            if rec.i != prog.actions.len() {
                return Err(ActionError::BadTrace {
                    line: ln + 1,
                    reason: format!("index {} out of order", rec.i),
                });
            }
            if let Some(hl) = &rec.hl {
                for t in hl.split('+') {
                    let tag = HlTag::parse(t).ok_or_else(|| ActionError::BadTrace {
                        line: ln + 1,
                        reason: format!("unknown tag {t:?}"),
                    })?;
                    prog.hl_events.push((rec.i, tag));
                }
            }
            prog.actions.push(Action { cmd: decode_action(&rec.a)?, dt: rec.dt });
        }
        Ok(prog)
    }

    pub fn from_jsonl(text: &str) -> Result<ActionProgram, ActionError> {
        Self::read_jsonl(text.as_bytes())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    i: usize,
    a: ActionVector,
    dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hl: Option<String>,
}

/// Reads only the raw vectors of a trace file.
pub fn read_vectors(text: &str) -> Result<Vec<ActionVector>, ActionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<TraceLine>(l)
                .map(|t| t.a)
                .map_err(|e| ActionError::BadTrace { line: i + 1, reason: e.to_string() })
        })
        .collect()
}
