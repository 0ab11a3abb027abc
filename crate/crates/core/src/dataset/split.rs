use super::{Action, SequenceMeta, Split};
use crate::rng::SeededRng;

/// Stratified, seeded train/test assignment.
///
/// Each action class is shuffled independently (classes visited in output
/// order, one shared generator) and its first `round(fraction * count)`
/// members go to Train, clamped so that every class with at least two
/// sequences lands in both splits. Output preserves input order.
pub fn make_split(sequences: &[SequenceMeta], train_fraction: f64, seed: u64) -> Vec<SequenceMeta> {
    let fraction = if train_fraction.is_finite() {
        train_fraction.clamp(0.0, 1.0)
    } else {
        0.5
    };
    let mut rng = SeededRng::new(seed);
    let mut out = sequences.to_vec();
    for action in Action::ALL {
        let mut members: Vec<usize> = sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.action == action)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        rng.shuffle(&mut members);
        let count = members.len();
        let mut n_train = (fraction * count as f64).round() as usize;
        if count >= 2 {
            n_train = n_train.clamp(1, count - 1);
        } else {
            n_train = 1;
        }
        for (rank, &i) in members.iter().enumerate() {
            out[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
    out
}
