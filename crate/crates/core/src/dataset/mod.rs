//! Frame-sequence datasets: manifest, train/test split and frame streaming.
//!
//! Videos are ingested pre-decoded, one binary PGM (P5) per frame. A JSON
//! manifest lists the sequences, their labels and where the frames live.

pub mod pgm;
mod split;
mod stream;
pub mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::make_split;
pub use stream::{stream_all_frames, stream_frames, FrameStream};

/// The six action classes, in output-node order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(alias = "boxing")]
    Boxing,
    #[serde(alias = "handclapping")]
    HandClapping,
    #[serde(alias = "handwaving")]
    HandWaving,
    #[serde(alias = "jogging")]
    Jogging,
    #[serde(alias = "running")]
    Running,
    #[serde(alias = "walking")]
    Walking,
}

pub const NUM_CLASSES: usize = 6;

impl Action {
    pub const ALL: [Action; NUM_CLASSES] = [
        Action::Boxing,
        Action::HandClapping,
        Action::HandWaving,
        Action::Jogging,
        Action::Running,
        Action::Walking,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Boxing => "Boxing",
            Action::HandClapping => "HandClapping",
            Action::HandWaving => "HandWaving",
            Action::Jogging => "Jogging",
            Action::Running => "Running",
            Action::Walking => "Walking",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Label(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "Train",
            Split::Test => "Test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution {
            height: 120,
            width: 160,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub subject: u32,
    pub action: Action,
    pub repetition: u32,
    pub frame_count: usize,
    pub split: Split,
    /// Relative to the frame store root. `{index}` or `{index:0W}` is
    /// replaced by the frame index (zero-padded to `W` digits).
    pub frame_filename_pattern: String,
}

impl SequenceMeta {
    pub fn frame_filename(&self, index: usize) -> String {
        expand_pattern(&self.frame_filename_pattern, index)
    }
}

/// A decoded grayscale frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` bytes.
    pub pixels: Vec<u8>,
    pub sequence_id: String,
    pub index_in_sequence: usize,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer size");
        Frame {
            height,
            width,
            pixels,
            sequence_id: String::new(),
            index_in_sequence: 0,
        }
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn transposed(&self) -> Frame {
        let mut pixels = vec![0u8; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                pixels[x * self.height + y] = self.at(y, x);
            }
        }
        Frame {
            height: self.width,
            width: self.height,
            pixels,
            sequence_id: self.sequence_id.clone(),
            index_in_sequence: self.index_in_sequence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub resolution: Resolution,
    /// Absolute after loading; relative roots are resolved against the
    /// manifest's directory.
    pub frame_store_root: PathBuf,
    pub split_seed: u64,
    pub sequences: Vec<SequenceMeta>,
}

/// Per-frame label information, in stream order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLabel {
    pub sequence: usize,
    pub action: Action,
    pub split: Split,
}

impl Manifest {
    pub fn frame_path(&self, seq: &SequenceMeta, index: usize) -> PathBuf {
        self.frame_store_root.join(seq.frame_filename(index))
    }

    pub fn sequences_in(&self, split: Split) -> impl Iterator<Item = (usize, &SequenceMeta)> {
        self.sequences
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.split == split)
    }

    pub fn frame_count(&self, split: Option<Split>) -> usize {
        self.sequences
            .iter()
            .filter(|s| split.map_or(true, |sp| s.split == sp))
            .map(|s| s.frame_count)
            .sum()
    }

    /// One label per frame of the full concatenated stream.
    pub fn frame_labels(&self) -> Vec<FrameLabel> {
        let mut out = Vec::with_capacity(self.frame_count(None));
        for (i, s) in self.sequences.iter().enumerate() {
            out.extend(std::iter::repeat(FrameLabel {
                sequence: i,
                action: s.action,
                split: s.split,
            })
            .take(s.frame_count));
        }
        out
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = self
            .sequences
            .iter()
            .filter(|s| s.split == Split::Train)
            .count();
        (train, self.sequences.len() - train)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Manifest> {
        let mut m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if m.frame_store_root.is_relative() {
            let base = origin.parent().unwrap_or_else(|| Path::new("."));
            m.frame_store_root = absolute(&base.join(&m.frame_store_root));
        }
        m.validate_schema()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    fn validate_schema(&self) -> Result<()> {
        if self.resolution.height == 0 || self.resolution.width == 0 {
            return Err(Error::Schema("resolution must be positive".into()));
        }
        let mut ids = HashSet::new();
        let mut keys = HashSet::new();
        for s in &self.sequences {
            if s.sequence_id.is_empty() {
                return Err(Error::Schema("empty sequence_id".into()));
            }
            if !ids.insert(s.sequence_id.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate sequence_id {}",
                    s.sequence_id
                )));
            }
            if s.subject == 0 || s.repetition == 0 {
                return Err(Error::Schema(format!(
                    "{}: subject and repetition are 1-based",
                    s.sequence_id
                )));
            }
            if s.frame_count == 0 {
                return Err(Error::Schema(format!("{}: frame_count is 0", s.sequence_id)));
            }
            if !s.frame_filename_pattern.contains("{index") {
                return Err(Error::Schema(format!(
                    "{}: frame_filename_pattern has no {{index}} placeholder",
                    s.sequence_id
                )));
            }
            if !keys.insert((s.subject, s.action, s.repetition)) {
                return Err(Error::Schema(format!(
                    "duplicate (subject, action, repetition) = ({}, {}, {})",
                    s.subject, s.action, s.repetition
                )));
            }
            if !(24..=239).contains(&s.frame_count) {
                log::warn!(
                    "{}: {} frames is outside the KTH range 24..=239",
                    s.sequence_id,
                    s.frame_count
                );
            }
            if s.subject > 25 || s.repetition > 4 {
                log::warn!("{}: subject/repetition outside KTH numbering", s.sequence_id);
            }
        }
        Ok(())
    }

    fn check_frames_exist(&self) -> Result<()> {
        for s in &self.sequences {
            for i in 0..s.frame_count {
                let p = self.frame_path(s, i);
                if !p.is_file() {
                    return Err(Error::MissingFrame(p));
                }
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest, including the existence of every frame.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = Manifest::from_json(&text, path)?;
    m.check_frames_exist()?;
    Ok(m)
}

fn absolute(p: &Path) -> PathBuf {
    let joined = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    };
    // Lexically drop `.` components so round trips compare equal.
    joined
        .components()
        .filter(|c| !matches!(c, std::path::Component::CurDir))
        .collect()
}

fn expand_pattern(pattern: &str, index: usize) -> String {
    let mut out = String::with_capacity(pattern.len() + 8);
    let mut rest = pattern;
    while let Some(start) = rest.find("{index") {
        out.push_str(&rest[..start]);
        let tail = &rest[start + "{index".len()..];
        let Some(end) = tail.find('}') else {
            out.push_str(&rest[start..]);
            return out;
        };
        let spec = &tail[..end];
        let width = spec
            .strip_prefix(":0")
            .and_then(|w| w.parse::<usize>().ok())
            .unwrap_or(0);
        out.push_str(&format!("{index:0width$}"));
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_expansion() {
        assert_eq!(expand_pattern("a/frame_{index:04}.pgm", 7), "a/frame_0007.pgm");
        assert_eq!(expand_pattern("f{index}.pgm", 12), "f12.pgm");
        assert_eq!(expand_pattern("{index:02}_{index}", 3), "03_3");
    }

    #[test]
    fn action_order_and_parsing() {
        assert_eq!(Action::Boxing.index(), 0);
        assert_eq!(Action::Walking.index(), 5);
        assert_eq!("handwaving".parse::<Action>().unwrap(), Action::HandWaving);
        assert!(matches!("swimming".parse::<Action>(), Err(Error::Label(_))));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let json = r#"{"resolution":{"height":120,"width":160},"frame_store_root":"/tmp","split_seed":1,"sequences":[]}"#;
        let m = Manifest::from_json(json, Path::new("/tmp/m.json")).unwrap();
        assert!(m.sequences.is_empty());
        assert_eq!(m.frame_count(None), 0);
    }

    #[test]
    fn duplicate_triplet_rejected() {
        let seq = |id: &str| {
            format!(
                r#"{{"sequence_id":"{id}","subject":1,"action":"Boxing","repetition":1,"frame_count":30,"split":"Train","frame_filename_pattern":"{id}/{{index:04}}.pgm"}}"#
            )
        };
        let json = format!(
            r#"{{"resolution":{{"height":120,"width":160}},"frame_store_root":"/tmp","split_seed":1,"sequences":[{},{}]}}"#,
            seq("a"),
            seq("b")
        );
        let err = Manifest::from_json(&json, Path::new("/tmp/m.json")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let err = Manifest::from_json("{ not json", Path::new("m.json")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn transpose_twice_is_identity() {
        let f = Frame::new(2, 3, vec![1, 2, 3, 4, 5, 6]);
        let t = f.transposed();
        assert_eq!((t.height, t.width), (3, 2));
        assert_eq!(t.pixels, vec![1, 4, 2, 5, 3, 6]);
        assert_eq!(t.transposed(), f);
    }
}
