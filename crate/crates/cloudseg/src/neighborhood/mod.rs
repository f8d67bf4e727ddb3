//! Exact K-nearest-neighbor tables, random down-sampling, and the
//! multi-resolution hierarchy the encoder-decoder runs over.

mod kdtree;

pub use kdtree::KdTree;

use crate::cloud::PointCloud;
use crate::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeighborhoodError {
    #[error("knn: K={k} exceeds base point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("validation error: {0}")]
    Validation(String),
}

/// N×K table of neighbor rows: row i lists the K nearest base points to
/// query point i, nearest first, ties broken by smaller index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    pub idx: Vec<u32>,
    pub k: usize,
}

impl NeighborIndex {
    pub fn rows(&self) -> usize {
        self.idx.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }
}

fn check_positions(name: &str, positions: &[Scalar]) -> Result<(), NeighborhoodError> {
    if positions.len() % 3 != 0 {
        return Err(NeighborhoodError::Validation(format!(
            "{name}: positions length {} is not a multiple of 3",
            positions.len()
        )));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(NeighborhoodError::Validation(format!(
            "{name}: non-finite coordinate"
        )));
    }
    Ok(())
}

/// Exact K-nearest neighbors of every query point among the base points.
pub fn knn(
    query_positions: &[Scalar],
    base_positions: &[Scalar],
    k: usize,
) -> Result<NeighborIndex, NeighborhoodError> {
    check_positions("query", query_positions)?;
    check_positions("base", base_positions)?;
    let n = base_positions.len() / 3;
    if k == 0 || k > n {
        return Err(NeighborhoodError::KTooLarge { k, n });
    }
    let tree = KdTree::build(base_positions);
    let m = query_positions.len() / 3;
    let mut idx = Vec::with_capacity(m * k);
    for i in 0..m {
        let q = [
            query_positions[3 * i],
            query_positions[3 * i + 1],
            query_positions[3 * i + 2],
        ];
        idx.extend(tree.knn(q, k));
    }
    Ok(NeighborIndex { idx, k })
}

/// `ceil(n_in / ratio)` distinct rows drawn uniformly without replacement,
/// returned in ascending order. Deterministic given the seed.
pub fn random_subsample(n_in: usize, ratio: usize, seed: u64) -> Result<Vec<u32>, NeighborhoodError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_subsample_with(n_in, ratio, &mut rng)
}

pub(crate) fn random_subsample_with(
    n_in: usize,
    ratio: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<u32>, NeighborhoodError> {
    if n_in == 0 {
        return Err(NeighborhoodError::Validation("empty input".into()));
    }
    if ratio == 0 {
        return Err(NeighborhoodError::Validation("ratio must be positive".into()));
    }
    let m = n_in.div_ceil(ratio);
    let mut kept: Vec<u32> = rand::seq::index::sample(rng, n_in, m)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    kept.sort_unstable();
    Ok(kept)
}

/// One resolution level of the hierarchy.
#[derive(Debug)]
pub struct HierarchyLevel {
    /// Rows into the level-0 cloud.
    pub absolute: Vec<u32>,
    /// Rows of the previous level that survive here (identity at level 0).
    pub keep_local: Vec<u32>,
    /// This level's points, N_l×3.
    pub positions: Vec<Scalar>,
    /// Neighbor table among this level's points.
    pub knn: NeighborIndex,
    /// For each point of the previous, finer level: the row of its nearest
    /// point in this level. Empty at level 0.
    pub upsample: Vec<u32>,
}

impl HierarchyLevel {
    pub fn len(&self) -> usize {
        self.absolute.len()
    }

    pub fn is_empty(&self) -> bool {
        self.absolute.is_empty()
    }
}

/// Nested random down-sampling N → N/r → N/r² → …, with per-level
/// neighbor tables and fine→coarse nearest-point upsampling maps.
#[derive(Debug)]
pub struct SamplingHierarchy {
    pub levels: Vec<HierarchyLevel>,
    pub ratio: usize,
}

/// Build `levels` down-sampling steps over the cloud (so `levels + 1`
/// resolutions exist). Neighbor counts are clamped to each level's size.
pub fn build_hierarchy(
    cloud: &PointCloud,
    levels: usize,
    k: usize,
    ratio: usize,
    seed: u64,
) -> Result<SamplingHierarchy, NeighborhoodError> {
    let n = cloud.len();
    if ratio < 2 {
        return Err(NeighborhoodError::Validation("ratio must be at least 2".into()));
    }
    if n < ratio.pow(levels as u32) {
        return Err(NeighborhoodError::Validation(format!(
            "cloud of {n} points is too small for {levels} levels at ratio {ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(levels + 1);
    let level0 = HierarchyLevel {
        absolute: (0..n as u32).collect(),
        keep_local: (0..n as u32).collect(),
        positions: cloud.positions.clone(),
        knn: knn(&cloud.positions, &cloud.positions, k.min(n))?,
        upsample: Vec::new(),
    };
    out.push(level0);
    for _ in 0..levels {
        let prev = out.last().expect("at least level 0");
        let prev_n = prev.len();
        let keep_local = random_subsample_with(prev_n, ratio, &mut rng)?;
        let absolute: Vec<u32> = keep_local.iter().map(|&i| prev.absolute[i as usize]).collect();
        let m = keep_local.len();
        let mut positions = Vec::with_capacity(3 * m);
        for &i in &keep_local {
            let at = 3 * i as usize;
            positions.extend_from_slice(&prev.positions[at..at + 3]);
        }
        let table = knn(&positions, &positions, k.min(m))?;
        let upsample = knn(&prev.positions, &positions, 1)?.idx;
        out.push(HierarchyLevel {
            absolute,
            keep_local,
            positions,
            knn: table,
            upsample,
        });
    }
    Ok(SamplingHierarchy {
        levels: out,
        ratio,
    })
}
