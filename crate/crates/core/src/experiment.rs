//! Reservoir, readout and scoring over a manifest's concatenated stream.
//!
//! The reservoir always consumes every frame in manifest order, both splits
//! interleaved, as one continuous video stream. Training and scoring then
//! pick the rows of the sequences they need.

use faer::Mat;

use crate::cache::FeatureMatrix;
use crate::classify::{classify_frames, classify_sequence, confusion, ConfusionMatrix, SequenceDecision};
use crate::dataset::{Action, Manifest, Split, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::readout::{apply_readout, nmse_per_output, train_readout, FeatureTransform, ReadoutModel, RidgeLambda, TargetEncoding};
use crate::reservoir::{Reservoir, ReservoirSpec, Variant};

/// First stream row of every sequence.
pub fn sequence_offsets(manifest: &Manifest) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(manifest.sequences.len());
    let mut acc = 0;
    for s in &manifest.sequences {
        offsets.push(acc);
        acc += s.frame_count;
    }
    offsets
}

pub fn split_sequences(manifest: &Manifest, split: Split) -> Vec<usize> {
    manifest.sequences_in(split).map(|(i, _)| i).collect()
}

/// Stream rows of the given sequences, in order.
pub fn rows_of(manifest: &Manifest, sequences: &[usize]) -> Vec<usize> {
    let offsets = sequence_offsets(manifest);
    sequences
        .iter()
        .flat_map(|&s| offsets[s]..offsets[s] + manifest.sequences[s].frame_count)
        .collect()
}

pub fn transform_for(variant: Variant) -> FeatureTransform {
    match variant {
        Variant::Intensity => FeatureTransform::Raw,
        Variant::Phase => FeatureTransform::NonlinearPhase,
    }
}

fn check_rows(manifest: &Manifest, m: &FeatureMatrix, what: &str) -> Result<()> {
    let expect = manifest.frame_count(None);
    if m.rows != expect {
        return Err(Error::Dimension(format!(
            "{what} has {} rows, manifest streams {expect} frames",
            m.rows
        )));
    }
    Ok(())
}

/// Runs the reservoir over the whole stream.
pub fn run_states(
    reservoir: &Reservoir,
    manifest: &Manifest,
    features: &FeatureMatrix,
    reset_per_sequence: bool,
) -> Result<FeatureMatrix> {
    check_rows(manifest, features, "feature matrix")?;
    let resets = if reset_per_sequence {
        sequence_offsets(manifest)
    } else {
        Vec::new()
    };
    reservoir.run_features(features, &resets)
}

pub fn fit_readout(
    manifest: &Manifest,
    states: &FeatureMatrix,
    train: &[usize],
    lambda: RidgeLambda,
    variant: Variant,
    intensity_levels: u32,
) -> Result<ReadoutModel> {
    check_rows(manifest, states, "state matrix")?;
    if train.is_empty() {
        return Err(Error::Schema("no training sequences".into()));
    }
    let rows = rows_of(manifest, train);
    let x = states.select_rows(&rows);
    let actions: Vec<Action> = train
        .iter()
        .flat_map(|&s| {
            let seq = &manifest.sequences[s];
            std::iter::repeat(seq.action).take(seq.frame_count)
        })
        .collect();
    let targets = TargetEncoding::from_actions(&actions);
    train_readout(
        &x,
        targets.targets.as_ref(),
        lambda,
        transform_for(variant),
        intensity_levels,
    )
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub decisions: Vec<SequenceDecision>,
    pub truths: Vec<Action>,
    pub confusion: ConfusionMatrix,
    /// Frame-level NMSE per output node; NaN for classes absent from the
    /// evaluated sequences.
    pub nmse: [f64; NUM_CLASSES],
}

pub fn evaluate_sequences(
    manifest: &Manifest,
    states: &FeatureMatrix,
    model: &ReadoutModel,
    sequences: &[usize],
) -> Result<Evaluation> {
    check_rows(manifest, states, "state matrix")?;
    if sequences.is_empty() {
        return Err(Error::Schema("no sequences to evaluate".into()));
    }
    let rows = rows_of(manifest, sequences);
    let x = states.select_rows(&rows);
    let y = apply_readout(model, &x)?;
    let frames = classify_frames(y.as_ref())?;

    let mut decisions = Vec::with_capacity(sequences.len());
    let mut truths = Vec::with_capacity(sequences.len());
    let mut actions = Vec::with_capacity(rows.len());
    let mut start = 0;
    for &s in sequences {
        let seq = &manifest.sequences[s];
        let end = start + seq.frame_count;
        decisions.push(classify_sequence(&seq.sequence_id, &frames[start..end])?);
        truths.push(seq.action);
        actions.extend(std::iter::repeat(seq.action).take(seq.frame_count));
        start = end;
    }
    let targets: Mat<f64> = TargetEncoding::from_actions(&actions).targets;
    let per = nmse_per_output(y.as_ref(), targets.as_ref());
    let mut nmse = [f64::NAN; NUM_CLASSES];
    nmse.copy_from_slice(&per);
    Ok(Evaluation {
        confusion: confusion(&decisions, &truths)?,
        decisions,
        truths,
        nmse,
    })
}

/// One complete reservoir + readout + score run.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub model: ReadoutModel,
    pub evaluation: Evaluation,
}

pub fn run_trial(
    spec: &ReservoirSpec,
    lambda: RidgeLambda,
    reset_per_sequence: bool,
    manifest: &Manifest,
    features: &FeatureMatrix,
    train: &[usize],
    score_on: &[usize],
) -> Result<TrialOutcome> {
    let reservoir = spec.build()?;
    let states = run_states(&reservoir, manifest, features, reset_per_sequence)?;
    let model = fit_readout(
        manifest,
        &states,
        train,
        lambda,
        spec.variant,
        spec.quantizer.intensity_levels,
    )?;
    let evaluation = evaluate_sequences(manifest, &states, &model, score_on)?;
    Ok(TrialOutcome { model, evaluation })
}
