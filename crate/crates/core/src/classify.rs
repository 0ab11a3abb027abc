//! Winner-takes-all decisions, majority vote and the confusion-matrix score.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use faer::MatRef;

use crate::dataset::{Action, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecision {
    pub frame_index: usize,
    pub class_index: usize,
    pub outputs: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDecision {
    pub sequence_id: String,
    pub class_index: usize,
    pub frame_fractions: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    /// Row `i`, column `j`: share (in percent) of class-`i` sequences
    /// decided as class `j`. Rows without sequences are zero.
    pub p: [[f64; NUM_CLASSES]; NUM_CLASSES],
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// Trace of `p`; 600 is a perfect classification.
    pub score: f64,
}

impl ConfusionMatrix {
    pub fn populated_rows(&self) -> usize {
        self.counts
            .iter()
            .filter(|r| r.iter().sum::<u64>() > 0)
            .count()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth");
        for a in Action::ALL {
            let _ = write!(s, ",{a}");
        }
        s.push('\n');
        for (i, a) in Action::ALL.iter().enumerate() {
            let _ = write!(s, "{a}");
            for j in 0..NUM_CLASSES {
                let _ = write!(s, ",{}", self.p[i][j]);
            }
            s.push('\n');
        }
        s
    }

    pub fn summary_line(&self) -> String {
        format!(
            "score {} over {} sequences ({} of {} classes populated)",
            self.score,
            self.total(),
            self.populated_rows(),
            NUM_CLASSES
        )
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify_frames(outputs: MatRef<'_, f64>) -> Result<Vec<FrameDecision>> {
    if outputs.ncols() != NUM_CLASSES {
        return Err(Error::Dimension(format!(
            "{} output columns, expected {NUM_CLASSES}",
            outputs.ncols()
        )));
    }
    (0..outputs.nrows())
        .map(|t| {
            let mut row = [0.0; NUM_CLASSES];
            for (c, v) in row.iter_mut().enumerate() {
                *v = outputs[(t, c)];
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite output at frame {t}")));
            }
            Ok(FrameDecision {
                frame_index: t,
                class_index: argmax(&row),
                outputs: row,
            })
        })
        .collect()
}

pub fn classify_sequence(sequence_id: &str, frames: &[FrameDecision]) -> Result<SequenceDecision> {
    if frames.is_empty() {
        return Err(Error::Dimension(format!("sequence {sequence_id} has no frames")));
    }
    let mut votes = [0usize; NUM_CLASSES];
    for f in frames {
        votes[f.class_index] += 1;
    }
    let mut frame_fractions = [0.0; NUM_CLASSES];
    for (fr, &v) in frame_fractions.iter_mut().zip(&votes) {
        *fr = v as f64 / frames.len() as f64;
    }
    Ok(SequenceDecision {
        sequence_id: sequence_id.to_string(),
        class_index: argmax(&frame_fractions),
        frame_fractions,
    })
}

pub fn confusion(decisions: &[SequenceDecision], truths: &[Action]) -> Result<ConfusionMatrix> {
    if decisions.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} decisions for {} labels",
            decisions.len(),
            truths.len()
        )));
    }
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (d, t) in decisions.iter().zip(truths) {
        counts[t.index()][d.class_index] += 1;
    }
    Ok(confusion_from_counts(counts))
}

pub fn confusion_from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> ConfusionMatrix {
    let mut p = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for (prow, crow) in p.iter_mut().zip(&counts) {
        let total: u64 = crow.iter().sum();
        if total > 0 {
            for (pv, &c) in prow.iter_mut().zip(crow) {
                *pv = 100.0 * c as f64 / total as f64;
            }
        }
    }
    let score = (0..NUM_CLASSES).map(|i| p[i][i]).sum();
    ConfusionMatrix { p, counts, score }
}

/// Per-sequence results CSV: id, truth, decision and the six frame
/// fractions.
pub fn sequences_csv(decisions: &[SequenceDecision], truths: &[Action]) -> String {
    let mut s = String::from("sequence_id,truth,decision");
    for a in Action::ALL {
        let _ = write!(s, ",frac_{a}");
    }
    s.push('\n');
    for (d, t) in decisions.iter().zip(truths) {
        let _ = write!(
            s,
            "{},{},{}",
            d.sequence_id,
            t,
            Action::from_index(d.class_index).expect("class index in range")
        );
        for f in d.frame_fractions {
            let _ = write!(s, ",{f}");
        }
        s.push('\n');
    }
    s
}

/// Writes `sequences.csv`, `confusion.csv` and `score.txt` into `dir`.
pub fn write_results(
    dir: &Path,
    decisions: &[SequenceDecision],
    truths: &[Action],
    cm: &ConfusionMatrix,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("sequences.csv", sequences_csv(decisions, truths))?;
    write("confusion.csv", cm.to_csv())?;
    write("score.txt", format!("{}\n", cm.summary_line()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    fn frames(classes: &[usize]) -> Vec<FrameDecision> {
        classes
            .iter()
            .enumerate()
            .map(|(i, &c)| FrameDecision {
                frame_index: i,
                class_index: c,
                outputs: [0.0; 6],
            })
            .collect()
    }

    #[test]
    fn winner_takes_all() {
        let y = Mat::from_fn(2, 6, |i, j| {
            if i == 0 {
                [0.1, 0.9, 0.2, 0.0, 0.0, 0.0][j]
            } else {
                0.3
            }
        });
        let d = classify_frames(y.as_ref()).unwrap();
        assert_eq!(d[0].class_index, 1);
        assert_eq!(d[1].class_index, 0);
    }

    #[test]
    fn majority_vote_examples() {
        // 1000 frames: 745 walking, 236 jogging, 19 running.
        let mut c = vec![5; 745];
        c.extend(vec![3; 236]);
        c.extend(vec![4; 19]);
        let s = classify_sequence("walk", &frames(&c)).unwrap();
        assert_eq!(s.class_index, 5);
        assert!((s.frame_fractions[5] - 0.745).abs() < 1e-12);
        assert!((s.frame_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let s = classify_sequence("all", &frames(&[2; 7])).unwrap();
        assert_eq!((s.class_index, s.frame_fractions[2]), (2, 1.0));

        let s = classify_sequence("tie", &frames(&[4, 3, 4, 3])).unwrap();
        assert_eq!(s.class_index, 3);
        assert!(classify_sequence("none", &[]).is_err());
    }

    #[test]
    fn perfect_and_single() {
        let truths: Vec<Action> = (0..150).map(|i| Action::ALL[i % 6]).collect();
        let decisions: Vec<_> = truths
            .iter()
            .map(|t| SequenceDecision {
                sequence_id: String::new(),
                class_index: t.index(),
                frame_fractions: [0.0; 6],
            })
            .collect();
        let cm = confusion(&decisions, &truths).unwrap();
        assert_eq!(cm.score, 600.0);

        let cm = confusion(&decisions[..1], &truths[..1]).unwrap();
        assert_eq!(cm.score, 100.0);
        assert_eq!(cm.p[0][0], 100.0);
        assert_eq!(cm.populated_rows(), 1);
        assert!(cm.p[1..].iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_sum_to_100() {
        let cm = confusion_from_counts([
            [3, 1, 0, 0, 0, 0],
            [0, 0, 0, 0, 0, 0],
            [1, 1, 1, 0, 0, 0],
            [0, 0, 0, 7, 2, 0],
            [0, 0, 0, 0, 0, 5],
            [0, 0, 0, 0, 0, 1],
        ]);
        for (i, row) in cm.p.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if i == 1 {
                assert_eq!(s, 0.0);
            } else {
                assert!((s - 100.0).abs() < 1e-9);
            }
        }
        assert!((cm.score - (75.0 + 100.0 / 3.0 + 700.0 / 9.0 + 100.0)).abs() < 1e-9);
    }

    #[test]
    fn csv_shapes() {
        let cm = confusion_from_counts([[1; 6]; 6]);
        let csv = cm.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("truth,Boxing,HandClapping"));
    }
}
