//! Observation data model and the `agdl-trace` v1 JSON Lines format.
//!
//! Line 1 is a header object, every following line is one frame. Positions
//! are world coordinates; the camera offset is stored separately so scrolling
//! never shows up as motion.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const FORMAT_TAG: &str = "agdl-trace";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported trace version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u64 },
    #[error("line {line}: integrity error: {msg}")]
    Integrity { line: usize, msg: String },
    #[error("invalid trace: {0}")]
    Invalid(String),
}

/// The eight canonical controller buttons, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Button {
    L,
    R,
    U,
    D,
    A,
    B,
    Start,
    Select,
}

impl Button {
    pub const ALL: [Button; 8] = [
        Button::L,
        Button::R,
        Button::U,
        Button::D,
        Button::A,
        Button::B,
        Button::Start,
        Button::Select,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Button::L => "L",
            Button::R => "R",
            Button::U => "U",
            Button::D => "D",
            Button::A => "A",
            Button::B => "B",
            Button::Start => "Start",
            Button::Select => "Select",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Button {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Button {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Button::ALL
            .iter()
            .copied()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown button {s:?}"))
    }
}

/// Set of held buttons for one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct InputState(u8);

impl InputState {
    pub const NONE: InputState = InputState(0);

    pub fn from_buttons(buttons: impl IntoIterator<Item = Button>) -> Self {
        let mut s = InputState::NONE;
        for b in buttons {
            s.press(b);
        }
        s
    }

    pub fn press(&mut self, b: Button) {
        self.0 |= b.bit();
    }

    pub fn release(&mut self, b: Button) {
        self.0 &= !b.bit();
    }

    pub fn held(self, b: Button) -> bool {
        self.0 & b.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn buttons(self) -> impl Iterator<Item = Button> {
        Button::ALL.into_iter().filter(move |b| self.held(*b))
    }

    /// Horizontal input axis: R = +1, L = -1, neither or both = 0.
    pub fn axis(self) -> i8 {
        match (self.held(Button::L), self.held(Button::R)) {
            (false, true) => 1,
            (true, false) => -1,
            _ => 0,
        }
    }

    /// Buttons held now but not in `prev`.
    pub fn pressed_since(self, prev: InputState) -> InputState {
        InputState(self.0 & !prev.0)
    }

    /// Buttons held in `prev` but not now.
    pub fn released_since(self, prev: InputState) -> InputState {
        InputState(prev.0 & !self.0)
    }
}

impl Serialize for InputState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(None)?;
        for b in self.buttons() {
            seq.serialize_element(b.as_str())?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for InputState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        let mut s = InputState::NONE;
        for n in names {
            let b: Button = n.parse().map_err(serde::de::Error::custom)?;
            if s.held(b) {
                return Err(serde::de::Error::custom(format!("duplicate button {n:?}")));
            }
            s.press(b);
        }
        Ok(s)
    }
}

/// One sprite (or composite sprite) box seen in a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityObservation {
    #[serde(rename = "sig")]
    pub signature: String,
    pub x: f64,
    pub y: f64,
    pub w: u32,
    pub h: u32,
    #[serde(rename = "hf", with = "bool_as_int")]
    pub hflip: bool,
    #[serde(rename = "vf", with = "bool_as_int")]
    pub vflip: bool,
}

impl EntityObservation {
    pub fn new(signature: impl Into<String>, x: f64, y: f64, w: u32, h: u32) -> Self {
        Self {
            signature: signature.into(),
            x,
            y,
            w,
            h,
            hflip: false,
            vflip: false,
        }
    }

    pub fn right(&self) -> f64 {
        self.x + f64::from(self.w)
    }

    pub fn bottom(&self) -> f64 {
        self.y + f64::from(self.h)
    }
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            n => Err(serde::de::Error::custom(format!("flag must be 0 or 1, got {n}"))),
        }
    }
}

/// A visible background tile at (column, row) in world tile coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TileCell {
    pub col: u32,
    pub row: u32,
    pub id: u32,
}

impl Serialize for TileCell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.col, self.row, self.id].serialize(s)
    }
}

impl<'de> Deserialize<'de> for TileCell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [col, row, id] = <[u32; 3]>::deserialize(d)?;
        Ok(TileCell { col, row, id })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "f")]
    pub index: u64,
    #[serde(rename = "cam")]
    pub camera: (f64, f64),
    #[serde(rename = "in")]
    pub input: InputState,
    #[serde(rename = "ents")]
    pub entities: Vec<EntityObservation>,
    #[serde(rename = "tmsig")]
    pub tilemap_sig: String,
    /// Snapshot of the non-empty visible tiles. Absent means unchanged since
    /// the last frame that carried one.
    #[serde(rename = "tiles", default, skip_serializing_if = "Option::is_none")]
    pub tile_patch: Option<Vec<TileCell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub fps: u32,
    pub source: String,
    pub tile_size: u32,
    pub meta: Map<String, Value>,
}

impl TraceHeader {
    pub fn new(source: impl Into<String>, fps: u32, tile_size: u32) -> Self {
        Self {
            fps,
            source: source.into(),
            tile_size,
            meta: Map::new(),
        }
    }

    /// Game identifier: `meta.game` when present, otherwise the source label.
    pub fn game_id(&self) -> String {
        match self.meta.get("game") {
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => self.source.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireHeader {
    format: String,
    version: u64,
    fps: u32,
    source: String,
    tile_size: u32,
    #[serde(default)]
    meta: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub frames: Vec<Frame>,
}

impl Trace {
    /// Builds a trace, checking every type invariant.
    pub fn new(header: TraceHeader, frames: Vec<Frame>) -> Result<Self, TraceError> {
        let t = Trace { header, frames };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.header.fps == 0 {
            return Err(TraceError::Invalid("fps must be > 0".into()));
        }
        if self.header.tile_size == 0 {
            return Err(TraceError::Invalid("tile_size must be > 0".into()));
        }
        if self.frames.is_empty() {
            return Err(TraceError::Invalid("trace has no frames".into()));
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].index != w[0].index + 1 {
                return Err(TraceError::Integrity {
                    line: i + 3,
                    msg: format!("frame index {} follows {}", w[1].index, w[0].index),
                });
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            check_frame(f).map_err(|msg| TraceError::Invalid(format!("frame {i}: {msg}")))?;
        }
        Ok(())
    }

    pub fn first_index(&self) -> u64 {
        self.frames[0].index
    }

    pub fn last_index(&self) -> u64 {
        self.frames[self.frames.len() - 1].index
    }

    pub fn frame(&self, index: u64) -> Option<&Frame> {
        let first = self.first_index();
        index
            .checked_sub(first)
            .and_then(|i| self.frames.get(i as usize))
    }

    /// Canonical serialization of the whole trace.
    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("serde_json emits UTF-8")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = WireHeader {
            format: FORMAT_TAG.to_string(),
            version: u64::from(FORMAT_VERSION),
            fps: self.header.fps,
            source: self.header.source.clone(),
            tile_size: self.header.tile_size,
            meta: self.header.meta.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, TraceError> {
        let mut header: Option<TraceHeader> = None;
        let mut frames: Vec<Frame> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| TraceError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            match &header {
                None => header = Some(parse_header(&line, lineno)?),
                Some(_) => {
                    let f: Frame = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                        line: lineno,
                        msg: e.to_string(),
                    })?;
                    if let Some(prev) = frames.last() {
                        if f.index != prev.index + 1 {
                            return Err(TraceError::Integrity {
                                line: lineno,
                                msg: format!("frame index {} follows {}", f.index, prev.index),
                            });
                        }
                    }
                    check_frame(&f).map_err(|msg| TraceError::Parse { line: lineno, msg })?;
                    frames.push(f);
                }
            }
        }
        let header = header.ok_or(TraceError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        Trace::new(header, frames)
    }

    pub fn from_jsonl(s: &str) -> Result<Self, TraceError> {
        Trace::from_reader(s.as_bytes())
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<TraceHeader, TraceError> {
    let h: WireHeader = serde_json::from_str(line).map_err(|e| TraceError::Parse {
        line: lineno,
        msg: e.to_string(),
    })?;
    if h.format != FORMAT_TAG {
        return Err(TraceError::Parse {
            line: lineno,
            msg: format!("format tag {:?} is not {FORMAT_TAG:?}", h.format),
        });
    }
    if h.version != u64::from(FORMAT_VERSION) {
        return Err(TraceError::UnsupportedVersion { found: h.version });
    }
    Ok(TraceHeader {
        fps: h.fps,
        source: h.source,
        tile_size: h.tile_size,
        meta: h.meta,
    })
}

fn check_frame(f: &Frame) -> Result<(), String> {
    if !(f.camera.0.is_finite() && f.camera.1.is_finite()) {
        return Err("camera offset must be finite".into());
    }
    for e in &f.entities {
        if e.w == 0 || e.h == 0 {
            return Err(format!("entity {:?} has empty box", e.signature));
        }
        if !(e.x.is_finite() && e.y.is_finite()) {
            return Err(format!("entity {:?} has non-finite position", e.signature));
        }
    }
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Trace::from_reader(BufReader::new(file))
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let io = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    trace.write_to(&mut w).map_err(io)?;
    w.flush().map_err(io)
}
