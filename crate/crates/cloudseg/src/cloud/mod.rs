//! Labeled point clouds: loading, validation, synthesis, and cropping.

mod ascii;
pub mod synth;

pub use ascii::{read_ascii_cloud, write_ascii_cloud};

use crate::Scalar;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
}

/// Positions in meters, colors normalized to [0, 1], optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// N×3, row-major.
    pub positions: Vec<Scalar>,
    /// N×3, row-major, each component in [0, 1].
    pub colors: Vec<Scalar>,
    /// Per-point labels in [0, class_count), when present.
    pub labels: Option<Vec<u32>>,
    pub class_count: usize,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> [Scalar; 3] {
        [
            self.positions[3 * i],
            self.positions[3 * i + 1],
            self.positions[3 * i + 2],
        ]
    }

    /// Check all structural invariants.
    pub fn validate(&self) -> Result<(), CloudError> {
        let n = self.len();
        if n == 0 {
            return Err(CloudError::Validation("point cloud is empty".into()));
        }
        if self.positions.len() != 3 * n || self.colors.len() != 3 * n {
            return Err(CloudError::Validation(
                "positions/colors length mismatch".into(),
            ));
        }
        if self.positions.iter().any(|v| !v.is_finite()) {
            return Err(CloudError::Validation("non-finite position".into()));
        }
        if self.colors.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(CloudError::Validation("color outside [0, 1]".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(CloudError::Validation("label length mismatch".into()));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.class_count) {
                return Err(CloudError::Validation(format!(
                    "label {bad} out of range [0, {})",
                    self.class_count
                )));
            }
        }
        Ok(())
    }

    /// A new cloud holding the given rows, in order (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut positions = Vec::with_capacity(indices.len() * 3);
        let mut colors = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            positions.extend_from_slice(&self.positions[3 * i..3 * i + 3]);
            colors.extend_from_slice(&self.colors[3 * i..3 * i + 3]);
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        PointCloud {
            positions,
            colors,
            labels,
            class_count: self.class_count,
        }
    }
}

/// Row indices of a crop: a random center point plus its `n_points - 1`
/// nearest companions (ties by distance then index). Clouds smaller than
/// `n_points` are padded by sampling rows uniformly with replacement.
pub fn crop_indices(
    cloud: &PointCloud,
    n_points: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, CloudError> {
    if n_points < 1 {
        return Err(CloudError::Validation(
            "crop size must be at least 1".into(),
        ));
    }
    if cloud.is_empty() {
        return Err(CloudError::Validation("cannot crop an empty cloud".into()));
    }
    let center = rng.gen_range(0..cloud.len());
    Ok(crop_indices_at(cloud, n_points, center, rng))
}

/// Deterministic variant with a caller-chosen center. The rng is only
/// consulted for with-replacement padding.
pub fn crop_indices_at(
    cloud: &PointCloud,
    n_points: usize,
    center: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = cloud.len();
    let c = cloud.position(center);
    if n >= n_points {
        let mut order: Vec<(Scalar, usize)> = (0..n)
            .map(|i| {
                let p = cloud.position(i);
                let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                (d, i)
            })
            .collect();
        order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        order.truncate(n_points);
        order.into_iter().map(|(_, i)| i).collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        while idx.len() < n_points {
            idx.push(rng.gen_range(0..n));
        }
        idx
    }
}

/// Crop a training batch: exactly `n_points` points around a random center.
pub fn crop_batch(
    cloud: &PointCloud,
    n_points: usize,
    rng: &mut impl Rng,
) -> Result<PointCloud, CloudError> {
    let idx = crop_indices(cloud, n_points, rng)?;
    Ok(cloud.select(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_cloud(n: usize) -> PointCloud {
        let mut positions = Vec::new();
        for i in 0..n {
            positions.extend_from_slice(&[i as Scalar, 0.0, 0.0]);
        }
        PointCloud {
            positions,
            colors: vec![0.5; 3 * n],
            labels: Some(vec![0; n]),
            class_count: 1,
        }
    }

    #[test]
    fn crop_full_size_is_permutation() {
        let cloud = grid_cloud(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = crop_indices(&cloud, 10, &mut rng).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn crop_matches_exhaustive_distance_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100;
        let mut positions = Vec::new();
        for _ in 0..3 * n {
            positions.push(rng.gen_range(-1.0..1.0));
        }
        let cloud = PointCloud {
            positions,
            colors: vec![0.0; 3 * n],
            labels: None,
            class_count: 0,
        };
        let center = 17;
        let got = crop_indices_at(&cloud, 20, center, &mut rng);
        // Exhaustive oracle over (squared distance, index).
        let c = cloud.position(center);
        let mut all: Vec<(Scalar, usize)> = (0..n)
            .map(|i| {
                let p = cloud.position(i);
                let d: Scalar = (0..3).map(|k| (p[k] - c[k]) * (p[k] - c[k])).sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = all[..20].iter().map(|&(_, i)| i).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn crop_pads_small_clouds_with_replacement() {
        let cloud = grid_cloud(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = crop_batch(&cloud, 8, &mut rng).unwrap();
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn crop_rejects_zero_points() {
        let cloud = grid_cloud(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(crop_indices(&cloud, 0, &mut rng).is_err());
    }

    #[test]
    fn validate_rejects_bad_labels() {
        let mut cloud = grid_cloud(4);
        cloud.labels = Some(vec![0, 0, 3, 0]);
        assert!(cloud.validate().is_err());
    }
}
