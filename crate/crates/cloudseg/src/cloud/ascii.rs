//! Plain-text cloud files: one point per line, `x y z r g b [label]`,
//! whitespace-separated. Colors are normalized to [0, 1] at ingest; when
//! any color field in the file exceeds 1 the whole file is treated as
//! 0–255 and divided by 255.

use super::{CloudError, PointCloud};
use crate::Scalar;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

pub fn read_ascii_cloud(path: &Path, has_labels: bool) -> Result<PointCloud, CloudError> {
    let path_str = path.display().to_string();
    let io_err = |source| CloudError::Io {
        path: path_str.clone(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let reader = std::io::BufReader::new(file);

    let fields = if has_labels { 7 } else { 6 };
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CloudError::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| CloudError::Parse {
            path: path_str.clone(),
            line: lineno + 1,
            reason,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != fields {
            return Err(parse_err(format!(
                "expected {fields} fields, found {}",
                parts.len()
            )));
        }
        let mut nums = [0.0 as Scalar; 6];
        for (k, part) in parts[..6].iter().enumerate() {
            nums[k] = part
                .parse::<Scalar>()
                .map_err(|e| parse_err(format!("field {}: {e}", k + 1)))?;
            if !nums[k].is_finite() {
                return Err(parse_err(format!("field {} is not finite", k + 1)));
            }
        }
        positions.extend_from_slice(&nums[..3]);
        colors.extend_from_slice(&nums[3..6]);
        if has_labels {
            let label: i64 = parts[6]
                .parse()
                .map_err(|e| parse_err(format!("label: {e}")))?;
            if label < 0 {
                return Err(parse_err(format!("label {label} is negative")));
            }
            labels.push(label as u32);
        }
    }
    if positions.is_empty() {
        return Err(CloudError::Validation(format!(
            "{path_str}: file contains no points"
        )));
    }
    if colors.iter().any(|&c| c > 1.0) {
        for c in &mut colors {
            *c /= 255.0;
        }
    }
    if colors.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(CloudError::Validation(format!(
            "{path_str}: color outside [0, 255]"
        )));
    }
    let class_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let cloud = PointCloud {
        positions,
        colors,
        labels: if has_labels { Some(labels) } else { None },
        class_count,
    };
    cloud.validate()?;
    Ok(cloud)
}

/// Write in the same format; colors are emitted in their normalized [0, 1]
/// range so that a read-back does not rescale.
pub fn write_ascii_cloud(cloud: &PointCloud, path: &Path) -> Result<(), CloudError> {
    let path_str = path.display().to_string();
    let io_err = |source| CloudError::Io {
        path: path_str.clone(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for i in 0..cloud.len() {
        let p = &cloud.positions[3 * i..3 * i + 3];
        let c = &cloud.colors[3 * i..3 * i + 3];
        let mut line = format!(
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            p[0], p[1], p[2], c[0], c[1], c[2]
        );
        if let Some(labels) = &cloud.labels {
            line.push_str(&format!(" {}", labels[i]));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|source| CloudError::Io {
            path: path_str.clone(),
            source,
        })?;
    }
    w.flush().map_err(|source| CloudError::Io {
        path: path_str.clone(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_255_colors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "0 0 0 255 0 0 2\n1 0 0 0 255 0 0\n").unwrap();
        let cloud = read_ascii_cloud(&path, true).unwrap();
        assert_eq!(cloud.position(0), [0.0, 0.0, 0.0]);
        assert_eq!(&cloud.colors[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(cloud.labels.as_ref().unwrap()[0], 2);
        assert_eq!(cloud.class_count, 3);
    }

    #[test]
    fn small_colors_kept_as_is() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "0 0 0 0.25 0.5 1.0\n").unwrap();
        let cloud = read_ascii_cloud(&path, false).unwrap();
        assert_eq!(&cloud.colors[..3], &[0.25, 0.5, 1.0]);
    }

    #[test]
    fn empty_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            read_ascii_cloud(&path, false),
            Err(CloudError::Validation(_))
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "0 0 0 1 1 1\n0 0 zero 1 1 1\n").unwrap();
        match read_ascii_cloud(&path, false) {
            Err(CloudError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.txt");
        let cloud = PointCloud {
            positions: vec![0.123456789, -2.5, 3.75, 10.0, 20.0, 30.0],
            colors: vec![0.1, 0.2, 0.3, 1.0, 0.0, 0.5],
            labels: Some(vec![1, 0]),
            class_count: 2,
        };
        write_ascii_cloud(&cloud, &path).unwrap();
        let back = read_ascii_cloud(&path, true).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in cloud.positions.iter().zip(back.positions.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in cloud.colors.iter().zip(back.colors.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(cloud.labels, back.labels);
    }
}
