use super::pgm::read_pgm;
use super::{Frame, Manifest, Split};
use crate::error::{Error, Result};

/// Iterator over the frames of a manifest in concatenated stream order.
pub struct FrameStream<'a> {
    manifest: &'a Manifest,
    sequences: Vec<usize>,
    cursor: usize,
    frame: usize,
}

impl<'a> FrameStream<'a> {
    fn new(manifest: &'a Manifest, split: Option<Split>) -> Self {
        let sequences = manifest
            .sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| split.map_or(true, |sp| s.split == sp))
            .map(|(i, _)| i)
            .collect();
        FrameStream {
            manifest,
            sequences,
            cursor: 0,
            frame: 0,
        }
    }

    /// Frames not yet emitted.
    pub fn remaining(&self) -> usize {
        let seqs = &self.manifest.sequences;
        self.sequences[self.cursor.min(self.sequences.len())..]
            .iter()
            .map(|&i| seqs[i].frame_count)
            .sum::<usize>()
            - if self.cursor < self.sequences.len() { self.frame } else { 0 }
    }
}

impl Iterator for FrameStream<'_> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let seq = &self.manifest.sequences[*self.sequences.get(self.cursor)?];
        let index = self.frame;
        self.frame += 1;
        if self.frame >= seq.frame_count {
            self.frame = 0;
            self.cursor += 1;
        }
        Some(load_frame(self.manifest, seq, index))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining();
        (n, Some(n))
    }
}

fn load_frame(manifest: &Manifest, seq: &super::SequenceMeta, index: usize) -> Result<Frame> {
    let path = manifest.frame_path(seq, index);
    let g = read_pgm(&path)?;
    let res = manifest.resolution;
    if g.height != res.height || g.width != res.width {
        return Err(Error::Dimension(format!(
            "{}: frame is {}x{} (HxW), manifest declares {}x{}",
            path.display(),
            g.height,
            g.width,
            res.height,
            res.width
        )));
    }
    Ok(Frame {
        height: g.height,
        width: g.width,
        pixels: g.pixels,
        sequence_id: seq.sequence_id.clone(),
        index_in_sequence: index,
    })
}

/// Frames of one split, sequence by sequence in manifest order.
pub fn stream_frames(manifest: &Manifest, split: Split) -> FrameStream<'_> {
    FrameStream::new(manifest, Some(split))
}

/// Every frame of the manifest, both splits interleaved in manifest order.
pub fn stream_all_frames(manifest: &Manifest) -> FrameStream<'_> {
    FrameStream::new(manifest, None)
}
