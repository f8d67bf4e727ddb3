//! Local adaptive feature augmentation.
//!
//! Each point gathers its K nearest neighbors and encodes only relative
//! differences of position, color, and semantic features into a local
//! encoding. A linear similarity map followed by a softmax over the
//! neighbor axis yields per-(point, neighbor, channel) adaptive weights;
//! the weighted encodings are sum-pooled, the raw encodings max-pooled,
//! and an output block fuses both into the augmented per-point feature.
//!
//! The unit toggles cover the ablation grid: individual encoder branches,
//! replacing the encoding with repeated semantics, replacing the adaptive
//! unit with mean pooling, and every pooling/weight combination.

use crate::mlp::MlpBlock;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{ReduceMode, TensorError, TensorId};
use crate::neighborhood::NeighborIndex;
use crate::Graph;
#[cfg(test)]
use crate::Scalar;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LafaError {
    #[error("lafa {name}: {reason}")]
    Config { name: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which inputs are difference-encoded and how the unit pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LafaSpec {
    /// Width of the incoming semantic features.
    pub sem_in: usize,
    /// Nominal output width D; each active encoder emits D/2 channels.
    pub width: usize,
    pub encode_spatial: bool,
    pub encode_color: bool,
    pub encode_semantic: bool,
    /// Concatenate gathered raw neighbor semantics to the encoding
    /// (used when the semantic branch itself is disabled).
    pub raw_semantic_concat: bool,
    /// Replace the whole encoding unit by repeated centroid semantics
    /// passed through a dimension-aligning block.
    pub replace_encoding: bool,
    /// Learn adaptive weights (similarity map + softmax over neighbors).
    pub adaptive: bool,
    /// Replace the adaptive unit by mean pooling over neighbors.
    pub mean_pool_unit: bool,
    pub pool_max: bool,
    pub pool_sum: bool,
}

impl LafaSpec {
    /// The full unit as described above.
    pub fn standard(sem_in: usize, width: usize) -> LafaSpec {
        LafaSpec {
            sem_in,
            width,
            encode_spatial: true,
            encode_color: true,
            encode_semantic: true,
            raw_semantic_concat: false,
            replace_encoding: false,
            adaptive: true,
            mean_pool_unit: false,
            pool_max: true,
            pool_sum: true,
        }
    }

    fn enc_width(&self) -> usize {
        self.width / 2
    }

    /// Channel width of the local encoding Δℓ.
    pub fn delta_width(&self) -> usize {
        if self.replace_encoding {
            return 3 * self.enc_width();
        }
        let branches = [self.encode_spatial, self.encode_color, self.encode_semantic]
            .iter()
            .filter(|&&b| b)
            .count();
        branches * self.enc_width() + if self.raw_semantic_concat { self.sem_in } else { 0 }
    }

    fn pooled_width(&self) -> usize {
        if self.mean_pool_unit {
            return self.delta_width();
        }
        let branches = usize::from(self.pool_sum) + usize::from(self.pool_max);
        branches * self.delta_width()
    }

    fn validate(&self, name: &str) -> Result<(), LafaError> {
        let fail = |reason: &str| LafaError::Config {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        if self.width < 2 || self.width % 2 != 0 {
            return Err(fail("output width must be even and at least 2"));
        }
        if !self.replace_encoding
            && !self.encode_spatial
            && !self.encode_color
            && !self.encode_semantic
            && !self.raw_semantic_concat
        {
            return Err(fail("at least one encoding source required"));
        }
        if !self.mean_pool_unit && !self.pool_sum && !self.pool_max {
            return Err(fail("at least one pooling branch required"));
        }
        Ok(())
    }
}

/// Parameters of one unit: up to three difference encoders, the similarity
/// map, and the output block.
#[derive(Debug, Clone)]
pub struct LafaParams {
    pub spec: LafaSpec,
    pub enc_pos: Option<MlpBlock>,
    pub enc_col: Option<MlpBlock>,
    pub enc_sem: Option<MlpBlock>,
    /// Dimension-aligning block when the encoding unit is replaced.
    pub align: Option<MlpBlock>,
    /// Bias-free similarity map over the channel axis.
    pub similarity: Option<ParamId>,
    pub out: MlpBlock,
}

impl LafaParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: LafaSpec,
        rng: &mut impl Rng,
    ) -> Result<LafaParams, LafaError> {
        spec.validate(name)?;
        let ew = spec.enc_width();
        let (mut enc_pos, mut enc_col, mut enc_sem, mut align) = (None, None, None, None);
        if spec.replace_encoding {
            align = Some(MlpBlock::new(
                store,
                &format!("{name}.align"),
                spec.sem_in,
                spec.delta_width(),
                rng,
            ));
        } else {
            if spec.encode_spatial {
                enc_pos = Some(MlpBlock::new(store, &format!("{name}.enc_pos"), 3, ew, rng));
            }
            if spec.encode_color {
                enc_col = Some(MlpBlock::new(store, &format!("{name}.enc_col"), 3, ew, rng));
            }
            if spec.encode_semantic {
                enc_sem = Some(MlpBlock::new(
                    store,
                    &format!("{name}.enc_sem"),
                    spec.sem_in,
                    ew,
                    rng,
                ));
            }
        }
        let similarity = if spec.adaptive && !spec.mean_pool_unit {
            let dw = spec.delta_width();
            Some(
                MlpBlock::linear_no_bias(store, &format!("{name}.similarity"), dw, dw, rng).weight,
            )
        } else {
            None
        };
        let out = MlpBlock::new(
            store,
            &format!("{name}.out"),
            spec.pooled_width(),
            spec.width,
            rng,
        );
        Ok(LafaParams {
            spec,
            enc_pos,
            enc_col,
            enc_sem,
            align,
            similarity,
            out,
        })
    }
}

/// Everything downstream consumers need: the augmented features plus the
/// tensors the constraint loss reads.
pub struct LafaOutput {
    /// Augmented per-point features, [N, D].
    pub features: TensorId,
    /// Adaptive weights W, [N, K, delta_width]; absent without the
    /// adaptive unit.
    pub weights: Option<TensorId>,
    /// Local encoding Δℓ, [N, K, delta_width].
    pub local_encoding: TensorId,
    /// Gathered neighbor semantics f^k, [N, K, sem_in].
    pub neighbor_sem: TensorId,
    /// The unit's semantic input, [N, sem_in].
    pub centroid_sem: TensorId,
}

/// Local information encoding: concatenated encoded differences of each
/// active input against the K gathered neighbors.
pub fn encode_local_info(
    tape: &mut Graph,
    bound: &Bound,
    params: &LafaParams,
    positions: TensorId,
    colors: TensorId,
    sem: TensorId,
    nbr: &NeighborIndex,
) -> Result<TensorId, LafaError> {
    let n = tape.shape(sem)[0];
    let k = nbr.k;
    if let Some(align) = &params.align {
        let projected = align.forward(tape, bound, sem)?;
        let w = params.spec.delta_width();
        let row = tape.reshape(projected, &[n, 1, w])?;
        return Ok(tape.broadcast_to(row, &[n, k, w])?);
    }
    let mut branches = Vec::new();
    let mut encode_branch =
        |tape: &mut Graph, block: &Option<MlpBlock>, x: TensorId| -> Result<(), LafaError> {
            if let Some(block) = block {
                let c = tape.shape(x)[1];
                let gathered = tape.gather_rows(x, &nbr.idx, k)?;
                let centered = tape.reshape(x, &[n, 1, c])?;
                let diff = tape.sub(centered, gathered)?;
                branches.push(block.forward(tape, bound, diff)?);
            }
            Ok(())
        };
    encode_branch(tape, &params.enc_pos, positions)?;
    encode_branch(tape, &params.enc_col, colors)?;
    encode_branch(tape, &params.enc_sem, sem)?;
    if params.spec.raw_semantic_concat {
        branches.push(tape.gather_rows(sem, &nbr.idx, k)?);
    }
    Ok(if branches.len() == 1 {
        branches[0]
    } else {
        tape.concat(&branches, 2)?
    })
}

/// Similarity map plus softmax over the neighbor axis: the adaptive
/// weights W, a probability vector over K per (point, channel).
pub fn adaptive_weights(
    tape: &mut Graph,
    bound: &Bound,
    similarity: ParamId,
    local_encoding: TensorId,
) -> Result<TensorId, LafaError> {
    let m = bound.id(similarity);
    let s = tape.matmul(local_encoding, m)?;
    Ok(tape.softmax(s, 1)?)
}

/// Run the full unit.
pub fn lafa_forward(
    tape: &mut Graph,
    bound: &Bound,
    params: &LafaParams,
    positions: TensorId,
    colors: TensorId,
    sem: TensorId,
    nbr: &NeighborIndex,
) -> Result<LafaOutput, LafaError> {
    let k = nbr.k;
    let delta = encode_local_info(tape, bound, params, positions, colors, sem, nbr)?;
    let neighbor_sem = tape.gather_rows(sem, &nbr.idx, k)?;

    let (pooled, weights) = if params.spec.mean_pool_unit {
        (tape.reduce(delta, 1, ReduceMode::Mean)?, None)
    } else {
        let weights = match params.similarity {
            Some(m) => Some(adaptive_weights(tape, bound, m, delta)?),
            None => None,
        };
        let mut branches = Vec::new();
        if params.spec.pool_sum {
            let summed = match weights {
                Some(w) => {
                    let weighted = tape.mul(w, delta)?;
                    tape.reduce(weighted, 1, ReduceMode::Sum)?
                }
                None => tape.reduce(delta, 1, ReduceMode::Sum)?,
            };
            branches.push(summed);
        }
        if params.spec.pool_max {
            // With both branches active the max takes the raw encoding;
            // with max alone the adaptive weights must still participate.
            let max_src = match weights {
                Some(w) if !params.spec.pool_sum => tape.mul(w, delta)?,
                _ => delta,
            };
            branches.push(tape.reduce(max_src, 1, ReduceMode::Max)?);
        }
        let cat = if branches.len() == 1 {
            branches[0]
        } else {
            tape.concat(&branches, 1)?
        };
        (cat, weights)
    };
    let features = params.out.forward(tape, bound, pooled)?;
    Ok(LafaOutput {
        features,
        weights,
        local_encoding: delta,
        neighbor_sem,
        centroid_sem: sem,
    })
}
