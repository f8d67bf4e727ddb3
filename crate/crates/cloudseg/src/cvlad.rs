//! Multi-layer VLAD global aggregation.
//!
//! Every encoder level's feature map is soft-assigned to learned cluster
//! centers; the assignment-weighted residuals are summed over all points
//! of the level into a Q×C subvector. Concatenating the per-level
//! subvectors gives one global descriptor covering every scale and
//! resolution, which is then projected, broadcast, and fused into the
//! bottleneck features.

use crate::mlp::MlpBlock;
use crate::params::{Bound, ParamId, ParamStore};
#[cfg(test)]
use crate::Scalar;
use crate::tensor::{ReduceMode, TensorError, TensorId};
use crate::Graph;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CvladError {
    #[error("cvlad: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One level's clustering parameters.
#[derive(Debug, Clone)]
pub struct VladLayerParams {
    /// Cluster centers, [Q, C].
    pub centers: ParamId,
    /// Assignment weights, [C, Q].
    pub assign_w: ParamId,
    /// Assignment biases, [Q].
    pub assign_b: ParamId,
    pub clusters: usize,
    pub channels: usize,
    /// Optional intra-normalization of the flattened subvector (off by
    /// default; exposed for experimentation).
    pub l2_normalize: bool,
}

impl VladLayerParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        clusters: usize,
        rng: &mut impl Rng,
    ) -> Result<VladLayerParams, CvladError> {
        if clusters == 0 {
            return Err(CvladError::Config("cluster count must be at least 1".into()));
        }
        Ok(VladLayerParams {
            centers: store.glorot(format!("{name}.centers"), clusters, channels, rng),
            assign_w: store.glorot(format!("{name}.assign_w"), channels, clusters, rng),
            assign_b: store.zeros(format!("{name}.assign_b"), vec![clusters], true),
            clusters,
            channels,
            l2_normalize: false,
        })
    }
}

/// Flat global descriptor with its per-layer slice table.
pub struct GlobalDescriptor {
    /// [1, total] on the tape.
    pub vector: TensorId,
    /// Half-open spans of each layer's subvector within the flat vector.
    pub slices: Vec<std::ops::Range<usize>>,
}

impl GlobalDescriptor {
    pub fn len(&self) -> usize {
        self.slices.last().map_or(0, |r| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Soft-assignment residual aggregation of one feature map, flattened
/// cluster-major to [1, Q·C]. Also returns the [N, Q] assignments.
pub fn vlad_layer(
    tape: &mut Graph,
    bound: &Bound,
    params: &VladLayerParams,
    features: TensorId,
) -> Result<(TensorId, TensorId), CvladError> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 2 || shape[1] != params.channels {
        return Err(CvladError::Tensor(TensorError::DimMismatch {
            op: "vlad_layer",
            lhs: shape,
            rhs: vec![params.clusters, params.channels],
        }));
    }
    let (q, c) = (params.clusters, params.channels);
    let w = bound.id(params.assign_w);
    let b = bound.id(params.assign_b);
    let centers = bound.id(params.centers);

    let logits = tape.matmul(features, w)?;
    let logits = tape.add(logits, b)?;
    let assign = tape.softmax(logits, 1)?; // [N, Q]

    // Σ_x a_q(x)·(x − c_q) = Aᵀ·F − (Σ_x a_q(x))·c_q
    let assign_t = tape.transpose2(assign)?; // [Q, N]
    let weighted = tape.matmul(assign_t, features)?; // [Q, C]
    let totals = tape.reduce(assign, 0, ReduceMode::Sum)?; // [Q]
    let totals_col = tape.reshape(totals, &[q, 1])?;
    let shift = tape.mul(totals_col, centers)?; // [Q, C]
    let residuals = tape.sub(weighted, shift)?;
    let mut flat = tape.reshape(residuals, &[1, q * c])?;
    if params.l2_normalize {
        let sq = tape.mul(flat, flat)?;
        let total = tape.reduce_all(sq, ReduceMode::Sum)?;
        // 1/sqrt(total + eps) via softmax-free path: x * (total+eps)^-1/2
        let eps = tape.constant(&[1], vec![1e-12])?;
        let tot = tape.add(total, eps)?;
        let inv = tape.value(tot)[0].powf(-0.5);
        flat = tape.scale(flat, inv)?;
    }
    Ok((flat, assign))
}

/// Aggregate every encoder level and concatenate into the comprehensive
/// descriptor, recording each layer's span.
pub fn cvlad_forward(
    tape: &mut Graph,
    bound: &Bound,
    layers: &[VladLayerParams],
    features: &[TensorId],
) -> Result<GlobalDescriptor, CvladError> {
    if layers.is_empty() || layers.len() != features.len() {
        return Err(CvladError::Config(format!(
            "{} layer parameter sets for {} feature maps",
            layers.len(),
            features.len()
        )));
    }
    let mut parts = Vec::with_capacity(layers.len());
    let mut slices = Vec::with_capacity(layers.len());
    let mut at = 0usize;
    for (params, &f) in layers.iter().zip(features.iter()) {
        let (flat, _) = vlad_layer(tape, bound, params, f)?;
        let len = tape.value(flat).len();
        parts.push(flat);
        slices.push(at..at + len);
        at += len;
    }
    let vector = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(&parts, 1)?
    };
    Ok(GlobalDescriptor { vector, slices })
}

/// Projection and fusion blocks used to inject a global vector into the
/// bottleneck point features.
#[derive(Debug, Clone)]
pub struct InjectParams {
    pub project: MlpBlock,
    pub fuse: MlpBlock,
}

impl InjectParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        global_len: usize,
        bottleneck_width: usize,
        rng: &mut impl Rng,
    ) -> InjectParams {
        InjectParams {
            // The descriptor is a single row; batch statistics would
            // collapse it, so the projection skips normalization.
            project: MlpBlock::new_unnormalized(
                store,
                &format!("{name}.project"),
                global_len,
                bottleneck_width,
                rng,
            ),
            fuse: MlpBlock::new(
                store,
                &format!("{name}.fuse"),
                2 * bottleneck_width,
                bottleneck_width,
                rng,
            ),
        }
    }
}

/// Project the descriptor to the bottleneck width, broadcast it to every
/// bottleneck point, concatenate channel-wise, and fuse back down.
pub fn inject_global(
    tape: &mut Graph,
    bound: &Bound,
    params: &InjectParams,
    global: TensorId,
    bottleneck: TensorId,
) -> Result<TensorId, CvladError> {
    let shape = tape.shape(bottleneck).to_vec();
    let (n, c) = (shape[0], shape[1]);
    let projected = params.project.forward(tape, bound, global)?; // [1, C_b]
    let tiled = tape.broadcast_to(projected, &[n, c])?;
    let cat = tape.concat(&[bottleneck, tiled], 1)?;
    Ok(params.fuse.forward(tape, bound, cat)?)
}
