//! Training losses: class-weighted cross-entropy, the per-level neighbor
//! constraint, and their aggregate.

use crate::network::LevelAux;
use crate::tensor::{ReduceMode, TensorError, TensorId};
use crate::{Graph, Scalar};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("loss: {0}")]
    Validation(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-class weights w_c = N / (n_c + 0.02·N), computed from training
/// labels only.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<Scalar>,
}

impl ClassWeights {
    pub fn from_labels(labels: &[u32], classes: usize) -> Result<ClassWeights, LossError> {
        if labels.is_empty() {
            return Err(LossError::Validation("no labels to weight".into()));
        }
        let mut counts = vec![0usize; classes];
        for &l in labels {
            let l = l as usize;
            if l >= classes {
                return Err(LossError::Validation(format!(
                    "label {l} out of range [0, {classes})"
                )));
            }
            counts[l] += 1;
        }
        let n = labels.len() as Scalar;
        let weights = counts
            .iter()
            .map(|&c| n / (c as Scalar + 0.02 * n))
            .collect();
        Ok(ClassWeights { weights })
    }

    /// All-ones weights (plain cross-entropy).
    pub fn uniform(classes: usize) -> ClassWeights {
        ClassWeights {
            weights: vec![1.0; classes],
        }
    }
}

/// Mean over points of w_{y_i} · (−log softmax(logits)_{y_i}).
pub fn weighted_cross_entropy(
    tape: &mut Graph,
    logits: TensorId,
    labels: &[u32],
    weights: &ClassWeights,
) -> Result<TensorId, LossError> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(LossError::Validation(format!(
            "logits {shape:?} do not match {} labels",
            labels.len()
        )));
    }
    let classes = shape[1];
    if weights.weights.len() != classes {
        return Err(LossError::Validation(format!(
            "{} class weights for {classes} classes",
            weights.weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(LossError::Validation(format!(
            "label {bad} out of range [0, {classes})"
        )));
    }
    let log_probs = tape.log_softmax(logits, 1)?;
    let picked = tape.select_class(log_probs, labels)?;
    let w: Vec<Scalar> = labels
        .iter()
        .map(|&l| -weights.weights[l as usize])
        .collect();
    let weighted = tape.mul_const(picked, w)?;
    Ok(tape.reduce_all(weighted, ReduceMode::Mean)?)
}

/// Neighbor-consistency constraint: per point, the L1 distance between
/// the centroid features and the sum over neighbors of the weight-shifted
/// neighbor features, averaged over points and channels.
///
/// `w` may carry one channel and broadcast across the feature channels.
pub fn constraint_loss(
    tape: &mut Graph,
    f_centroid: TensorId,
    f_nbr: TensorId,
    w: TensorId,
    delta: TensorId,
) -> Result<TensorId, LossError> {
    let sc = tape.shape(f_centroid).to_vec();
    let sn = tape.shape(f_nbr).to_vec();
    let sd = tape.shape(delta).to_vec();
    let sw = tape.shape(w).to_vec();
    if sc.len() != 2 || sn.len() != 3 || sd != sn || sn[0] != sc[0] || sn[2] != sc[1] {
        return Err(LossError::Tensor(TensorError::DimMismatch {
            op: "constraint_loss",
            lhs: sc,
            rhs: sn,
        }));
    }
    if sw.len() != 3 || sw[0] != sn[0] || sw[1] != sn[1] || (sw[2] != sn[2] && sw[2] != 1) {
        return Err(LossError::Tensor(TensorError::DimMismatch {
            op: "constraint_loss",
            lhs: sw,
            rhs: sn,
        }));
    }
    if sn[1] == 0 {
        return Err(LossError::Validation("empty neighbor axis".into()));
    }
    let shifted = tape.mul(w, delta)?;
    let moved = tape.add(f_nbr, shifted)?;
    let summed = tape.reduce(moved, 1, ReduceMode::Sum)?; // [N, C]
    let diff = tape.sub(f_centroid, summed)?;
    let dist = tape.abs(diff)?;
    Ok(tape.reduce_all(dist, ReduceMode::Mean)?)
}

/// Assemble the per-level constraint inputs from a forward pass. The
/// offset Δ is taken in the unit's raw semantic space (centroid minus
/// neighbor features) and the adaptive weights enter as their channel
/// mean, which keeps every operand at the semantic width while still
/// being a probability vector over neighbors.
pub fn level_constraint(tape: &mut Graph, aux: &LevelAux) -> Result<Option<TensorId>, LossError> {
    let Some(weights) = aux.weights else {
        return Ok(None);
    };
    let n = tape.shape(aux.centroid_sem)[0];
    let c = tape.shape(aux.centroid_sem)[1];
    let k = aux.neighbor_k;
    let w_mean = tape.reduce(weights, 2, ReduceMode::Mean)?;
    let w_col = tape.reshape(w_mean, &[n, k, 1])?;
    let centered = tape.reshape(aux.centroid_sem, &[n, 1, c])?;
    let delta = tape.sub(centered, aux.neighbor_sem)?;
    Some(constraint_loss(tape, aux.centroid_sem, aux.neighbor_sem, w_col, delta)).transpose()
}

/// Aggregate loss: the weighted cross-entropy plus the mean of the
/// per-level constraint terms.
pub fn aggregation_loss(
    tape: &mut Graph,
    wce: TensorId,
    per_level: &[TensorId],
) -> Result<TensorId, LossError> {
    if per_level.is_empty() {
        return Err(LossError::Validation(
            "aggregation loss needs at least one encoding level".into(),
        ));
    }
    let mut sum = per_level[0];
    for &c in &per_level[1..] {
        sum = tape.add(sum, c)?;
    }
    let scaled = tape.scale(sum, 1.0 / per_level.len() as Scalar)?;
    Ok(tape.add(wce, scaled)?)
}
