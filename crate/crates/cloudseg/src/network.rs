//! Full encoder-decoder assembly: an input embedding, five encoding
//! levels of two local-aggregation units each followed by random 4×
//! down-sampling, a global-descriptor bridge into the bottleneck, nearest
//! neighbor up-sampling with skip concatenation on the way back up, and a
//! three-layer classifier head.

use crate::cloud::PointCloud;
use crate::cvlad::{
    cvlad_forward, inject_global, vlad_layer, CvladError, InjectParams, VladLayerParams,
};
use crate::lafa::{lafa_forward, LafaError, LafaParams, LafaSpec};
use crate::mlp::{dropout, ForwardCtx, MlpBlock};
use crate::neighborhood::SamplingHierarchy;
use crate::params::{bind_all, Bound, ParamStore};
use crate::tensor::{ReduceMode, TensorError, TensorId};
use crate::{Graph, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("network config: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lafa(#[from] LafaError),
    #[error(transparent)]
    Cvlad(#[from] CvladError),
}

/// How the bottleneck receives global context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalMode {
    /// No global aggregation: the last encoder output feeds the decoder.
    None,
    /// Cluster aggregation of the last encoder level only.
    VladLast,
    /// Global max pooling of the last encoder level.
    MaxPool,
    /// Global mean pooling of the last encoder level.
    MeanPool,
    /// Cluster aggregation of every encoder level, concatenated.
    Comprehensive,
}

/// Structural toggles covering the ablation grid; defaults give the full
/// network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub encode_spatial: bool,
    pub encode_color: bool,
    pub encode_semantic: bool,
    pub raw_semantic_concat: bool,
    pub replace_encoding: bool,
    pub adaptive: bool,
    pub mean_pool_unit: bool,
    pub pool_max: bool,
    pub pool_sum: bool,
    pub global_mode: GlobalMode,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            encode_spatial: true,
            encode_color: true,
            encode_semantic: true,
            raw_semantic_concat: false,
            replace_encoding: false,
            adaptive: true,
            mean_pool_unit: false,
            pool_max: true,
            pool_sum: true,
            global_mode: GlobalMode::Comprehensive,
        }
    }
}

/// Architecture hyperparameters. Defaults follow the reference training
/// configuration: K=16, Q=16, five levels at 1/4 sampling with channel
/// schedule 8→32→128→256→512, 13 classes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub levels: usize,
    pub k: usize,
    pub clusters: usize,
    pub channels: Vec<usize>,
    pub ratio: usize,
    pub classes: usize,
    /// Include raw coordinates alongside colors in the input embedding.
    pub input_xyz: bool,
    pub dropout: Scalar,
    pub seed: u64,
    pub options: ModelOptions,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            levels: 5,
            k: 16,
            clusters: 16,
            channels: vec![8, 32, 128, 256, 512],
            ratio: 4,
            classes: 13,
            input_xyz: false,
            dropout: 0.5,
            seed: 1,
            options: ModelOptions::default(),
        }
    }
}

impl NetworkConfig {
    /// Output width of encoding level `l`: the next schedule entry, with
    /// the deepest level doubling its own width.
    pub fn level_out(&self, l: usize) -> usize {
        if l + 1 < self.levels {
            self.channels[l + 1]
        } else {
            2 * self.channels[self.levels - 1]
        }
    }

    /// Input semantic width of encoding level `l`.
    pub fn level_in(&self, l: usize) -> usize {
        self.channels[l]
    }

    /// Width of the first of the level's two aggregation units.
    pub fn first_unit_width(&self, l: usize) -> usize {
        self.level_out(l) / 2
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let fail = |m: String| Err(NetworkError::Config(m));
        if self.levels == 0 {
            return fail("at least one level required".into());
        }
        if self.channels.len() != self.levels {
            return fail(format!(
                "channel schedule has {} entries for {} levels",
                self.channels.len(),
                self.levels
            ));
        }
        if self.ratio < 2 {
            return fail("sampling ratio must be at least 2".into());
        }
        if self.k == 0 || self.clusters == 0 || self.classes == 0 {
            return fail("k, clusters, and classes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        for l in 0..self.levels {
            if self.level_out(l) % 4 != 0 {
                return fail(format!(
                    "level {l} output width {} must be divisible by 4",
                    self.level_out(l)
                ));
            }
        }
        Ok(())
    }
}

struct LevelParams {
    first: LafaParams,
    second: LafaParams,
}

/// The model: a parameter registry plus the block structure over it.
pub struct Model {
    pub config: NetworkConfig,
    pub store: ParamStore,
    embed: MlpBlock,
    levels: Vec<LevelParams>,
    vlad: Vec<VladLayerParams>,
    inject: Option<InjectParams>,
    decoders: Vec<MlpBlock>,
    classifier: Vec<MlpBlock>,
}

/// Classifier hidden widths (three fully-connected layers end the net).
const CLASSIFIER_HIDDEN: [usize; 2] = [64, 32];

pub fn build_model(config: NetworkConfig) -> Result<Model, NetworkError> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let opts = config.options.clone();

    let embed_in = if config.input_xyz { 6 } else { 3 };
    let embed = MlpBlock::new(&mut store, "embed", embed_in, config.channels[0], &mut rng);

    let unit_spec = |sem_in: usize, width: usize| LafaSpec {
        sem_in,
        width,
        encode_spatial: opts.encode_spatial,
        encode_color: opts.encode_color,
        encode_semantic: opts.encode_semantic,
        raw_semantic_concat: opts.raw_semantic_concat,
        replace_encoding: opts.replace_encoding,
        adaptive: opts.adaptive,
        mean_pool_unit: opts.mean_pool_unit,
        pool_max: opts.pool_max,
        pool_sum: opts.pool_sum,
    };

    let mut levels = Vec::with_capacity(config.levels);
    for l in 0..config.levels {
        let half = config.first_unit_width(l);
        let first = LafaParams::new(
            &mut store,
            &format!("enc{l}.lafa0"),
            unit_spec(config.level_in(l), half),
            &mut rng,
        )?;
        let second = LafaParams::new(
            &mut store,
            &format!("enc{l}.lafa1"),
            unit_spec(half, config.level_out(l)),
            &mut rng,
        )?;
        levels.push(LevelParams { first, second });
    }

    let last_out = config.level_out(config.levels - 1);
    let mut vlad = Vec::new();
    let global_len = match opts.global_mode {
        GlobalMode::Comprehensive => {
            let mut total = 0;
            for l in 0..config.levels {
                vlad.push(VladLayerParams::new(
                    &mut store,
                    &format!("vlad{l}"),
                    config.level_out(l),
                    config.clusters,
                    &mut rng,
                )?);
                total += config.clusters * config.level_out(l);
            }
            Some(total)
        }
        GlobalMode::VladLast => {
            vlad.push(VladLayerParams::new(
                &mut store,
                "vlad_last",
                last_out,
                config.clusters,
                &mut rng,
            )?);
            Some(config.clusters * last_out)
        }
        GlobalMode::MaxPool | GlobalMode::MeanPool => Some(last_out),
        GlobalMode::None => None,
    };
    let inject = global_len
        .map(|len| InjectParams::new(&mut store, "inject", len, last_out, &mut rng));

    let mut decoders = Vec::new();
    let mut carry = last_out;
    for l in (0..config.levels.saturating_sub(1)).rev() {
        let out = config.level_out(l);
        decoders.push(MlpBlock::new(
            &mut store,
            &format!("dec{l}"),
            carry + out,
            out,
            &mut rng,
        ));
        carry = out;
    }

    let mut classifier = Vec::with_capacity(3);
    let mut width = carry;
    for (i, hidden) in CLASSIFIER_HIDDEN.iter().enumerate() {
        classifier.push(MlpBlock::new(
            &mut store,
            &format!("classify{i}"),
            width,
            *hidden,
            &mut rng,
        ));
        width = *hidden;
    }
    classifier.push(MlpBlock::linear(
        &mut store,
        "classify2",
        width,
        config.classes,
        &mut rng,
    ));

    Ok(Model {
        config,
        store,
        embed,
        levels,
        vlad,
        inject,
        decoders,
        classifier,
    })
}

/// Per-level tensors the aggregation loss consumes, taken from the second
/// (output) unit of each encoding layer.
pub struct LevelAux {
    pub weights: Option<TensorId>,
    pub local_encoding: TensorId,
    pub neighbor_sem: TensorId,
    pub centroid_sem: TensorId,
    pub neighbor_k: usize,
    pub neighbor_idx: Vec<u32>,
}

pub struct ForwardOutput {
    pub logits: TensorId,
    pub aux: Vec<LevelAux>,
    pub bound: Bound,
}

/// Diagnostic hooks: zeroing one encoder output exercises the skip
/// connectivity without touching parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardHooks {
    pub zero_encoder_level: Option<usize>,
}

pub fn forward(
    model: &Model,
    tape: &mut Graph,
    cloud: &PointCloud,
    hierarchy: &SamplingHierarchy,
    ctx: &mut ForwardCtx,
    hooks: ForwardHooks,
) -> Result<ForwardOutput, NetworkError> {
    let config = &model.config;
    if hierarchy.levels.len() != config.levels {
        return Err(NetworkError::Validation(format!(
            "hierarchy has {} resolutions but the network needs {}",
            hierarchy.levels.len(),
            config.levels
        )));
    }
    if hierarchy.levels[0].len() != cloud.len() {
        return Err(NetworkError::Validation(format!(
            "hierarchy built over {} points, batch has {}",
            hierarchy.levels[0].len(),
            cloud.len()
        )));
    }
    let bound = bind_all(&model.store, tape);

    // Per-level constant inputs: positions from the hierarchy, colors
    // carried through by surviving-point index.
    let mut level_pos = Vec::with_capacity(config.levels);
    let mut level_col = Vec::with_capacity(config.levels);
    for level in &hierarchy.levels {
        let n_l = level.len();
        level_pos.push(tape.constant(&[n_l, 3], level.positions.clone())?);
        let mut colors = Vec::with_capacity(3 * n_l);
        for &abs in &level.absolute {
            let at = 3 * abs as usize;
            colors.extend_from_slice(&cloud.colors[at..at + 3]);
        }
        level_col.push(tape.constant(&[n_l, 3], colors)?);
    }

    let embed_in = if config.input_xyz {
        tape.concat(&[level_col[0], level_pos[0]], 1)?
    } else {
        level_col[0]
    };
    let mut sem = model.embed.forward(tape, &bound, embed_in)?;

    let mut encoder_outputs = Vec::with_capacity(config.levels);
    let mut aux = Vec::with_capacity(config.levels);
    for l in 0..config.levels {
        let level = &hierarchy.levels[l];
        let first = lafa_forward(
            tape,
            &bound,
            &model.levels[l].first,
            level_pos[l],
            level_col[l],
            sem,
            &level.knn,
        )?;
        let second = lafa_forward(
            tape,
            &bound,
            &model.levels[l].second,
            level_pos[l],
            level_col[l],
            first.features,
            &level.knn,
        )?;
        let mut features = second.features;
        if hooks.zero_encoder_level == Some(l) {
            features = tape.scale(features, 0.0)?;
        }
        aux.push(LevelAux {
            weights: second.weights,
            local_encoding: second.local_encoding,
            neighbor_sem: second.neighbor_sem,
            centroid_sem: second.centroid_sem,
            neighbor_k: level.knn.k,
            neighbor_idx: level.knn.idx.clone(),
        });
        encoder_outputs.push(features);

        if l + 1 < config.levels {
            let keep = &hierarchy.levels[l + 1].keep_local;
            let kept = tape.gather_rows(features, keep, 1)?;
            sem = tape.reshape(kept, &[keep.len(), config.level_out(l)])?;
        }
    }

    let last = *encoder_outputs.last().expect("at least one level");
    let bottleneck = match (&config.options.global_mode, &model.inject) {
        (GlobalMode::None, _) => last,
        (GlobalMode::Comprehensive, Some(inject)) => {
            let descriptor = cvlad_forward(tape, &bound, &model.vlad, &encoder_outputs)?;
            inject_global(tape, &bound, inject, descriptor.vector, last)?
        }
        (GlobalMode::VladLast, Some(inject)) => {
            let (flat, _) = vlad_layer(tape, &bound, &model.vlad[0], last)?;
            inject_global(tape, &bound, inject, flat, last)?
        }
        (GlobalMode::MaxPool | GlobalMode::MeanPool, Some(inject)) => {
            let mode = if config.options.global_mode == GlobalMode::MaxPool {
                ReduceMode::Max
            } else {
                ReduceMode::Mean
            };
            let pooled = tape.reduce(last, 0, mode)?;
            let flat = tape.reshape(pooled, &[1, config.level_out(config.levels - 1)])?;
            inject_global(tape, &bound, inject, flat, last)?
        }
        (mode, None) => {
            return Err(NetworkError::Config(format!(
                "global mode {mode:?} without injection parameters"
            )))
        }
    };

    let mut x = bottleneck;
    for (step, l) in (0..config.levels.saturating_sub(1)).rev().enumerate() {
        let coarse = &hierarchy.levels[l + 1];
        let carried = tape.shape(x)[1];
        let up = tape.gather_rows(x, &coarse.upsample, 1)?;
        let up = tape.reshape(up, &[coarse.upsample.len(), carried])?;
        let cat = tape.concat(&[up, encoder_outputs[l]], 1)?;
        x = model.decoders[step].forward(tape, &bound, cat)?;
    }

    let mut h = x;
    h = model.classifier[0].forward(tape, &bound, h)?;
    h = model.classifier[1].forward(tape, &bound, h)?;
    h = dropout(tape, ctx, h, config.dropout)?;
    let logits = model.classifier[2].forward(tape, &bound, h)?;

    Ok(ForwardOutput { logits, aux, bound })
}

/// Argmax over the class axis; ties go to the smallest class index.
pub fn predict(logits: &[Scalar], classes: usize) -> Vec<u32> {
    let n = logits.len() / classes;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &logits[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for (c, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = c;
            }
        }
        out.push(best as u32);
    }
    out
}

/// Total element count across the model's registry.
pub fn count_parameters(model: &Model) -> usize {
    model.store.count_values()
}

/// Human-readable registry listing: name, shape, element count, totals.
pub fn summary(model: &Model) -> String {
    let mut out = String::new();
    for (_, p) in model.store.iter() {
        out.push_str(&format!(
            "{:<40} {:?} = {}{}\n",
            p.name,
            p.shape,
            p.numel(),
            if p.trainable { "" } else { " (stat)" }
        ));
    }
    out.push_str(&format!(
        "total {} values ({} trainable)\n",
        model.store.count_values(),
        model.store.count_trainable()
    ));
    out
}
