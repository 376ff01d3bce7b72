//! Prior-map storage: point clouds, the spatial index used for
//! nearest-neighbor and radius queries, and the ASCII map file format.
//!
//! Map files are plain text, one point per line, whitespace-separated
//! `x y z [intensity]` in meters; lines starting with `#` are comments.

mod kdtree;

pub use kdtree::SpatialIndex;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("map contains no points")]
    EmptyMap,
    #[error("spatial index is empty")]
    EmptyIndex,
}

/// Unorganized 3-D point cloud with optional per-point intensity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub intensities: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self { points, intensities: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Apply a rigid transform to every point.
    pub fn transformed(&self, pose: &crate::geometry::Pose) -> Self {
        Self {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            intensities: self.intensities.clone(),
        }
    }
}

/// Axis-aligned bounding box in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    fn of_points(points: &[Vector3<f64>]) -> Self {
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Prior map: the cloud, its spatial index, and its bounds.
///
/// Immutable after construction; concurrent read-only queries are fine.
#[derive(Debug, Clone)]
pub struct GlobalMap {
    cloud: PointCloud,
    index: SpatialIndex,
    bounds: Aabb,
}

impl GlobalMap {
    /// Index an in-memory cloud.
    pub fn from_cloud(cloud: PointCloud) -> Result<Self, MapError> {
        if cloud.is_empty() {
            return Err(MapError::EmptyMap);
        }
        let index = SpatialIndex::build(cloud.points.clone());
        let bounds = Aabb::of_points(&cloud.points);
        Ok(Self { cloud, index, bounds })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    /// Map points strictly closer to `center` than `radius`.
    pub fn extract_local_region(&self, center: &Vector3<f64>, radius: f64) -> PointCloud {
        assert!(radius > 0.0, "radius must be positive");
        let indices = self.index.within_radius(center, radius);
        let points = indices.iter().map(|&i| self.cloud.points[i]).collect();
        let intensities = self
            .cloud
            .intensities
            .as_ref()
            .map(|ints| indices.iter().map(|&i| ints[i]).collect());
        PointCloud { points, intensities }
    }
}

/// Parse a map (or scan) file in the ASCII `x y z [intensity]` format.
pub fn load_cloud(path: &Path) -> Result<PointCloud, MapError> {
    let file = std::fs::File::open(path).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut points = Vec::new();
    let mut intensities: Vec<f64> = Vec::new();
    let mut saw_intensity = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(MapError::Parse {
                line: line_no,
                reason: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 4];
        for (i, f) in fields.iter().enumerate() {
            values[i] = f.parse().map_err(|_| MapError::Parse {
                line: line_no,
                reason: format!("field {:?} is not a number", f),
            })?;
            if !values[i].is_finite() {
                return Err(MapError::Parse {
                    line: line_no,
                    reason: format!("field {:?} is not finite", f),
                });
            }
        }
        if fields.len() == 4 {
            if !saw_intensity && !points.is_empty() {
                return Err(MapError::Parse {
                    line: line_no,
                    reason: "intensity column appears on some lines only".into(),
                });
            }
            saw_intensity = true;
            intensities.push(values[3]);
        } else if saw_intensity {
            return Err(MapError::Parse {
                line: line_no,
                reason: "intensity column appears on some lines only".into(),
            });
        }
        points.push(Vector3::new(values[0], values[1], values[2]));
    }
    Ok(PointCloud {
        points,
        intensities: if saw_intensity { Some(intensities) } else { None },
    })
}

/// Load a map file and build its index and bounds.
pub fn load_map(path: &Path) -> Result<GlobalMap, MapError> {
    GlobalMap::from_cloud(load_cloud(path)?)
}

/// Write a cloud in the same ASCII format that [`load_cloud`] reads.
pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<(), MapError> {
    let file = std::fs::File::create(path).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let mut line = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        line.clear();
        write!(line, "{} {} {}", p.x, p.y, p.z).unwrap();
        if let Some(ints) = &cloud.intensities {
            write!(line, " {}", ints[i]).unwrap();
        }
        line.push('\n');
        writer.write_all(line.as_bytes()).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    writer.flush().map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Nearest indexed point to `query` and its distance.
pub fn nearest_neighbor(
    index: &SpatialIndex,
    query: &Vector3<f64>,
) -> Result<(Vector3<f64>, f64), MapError> {
    index.nearest(query).ok_or(MapError::EmptyIndex)
}

/// Voxel-grid downsampling: one centroid per occupied voxel.
///
/// Voxel membership is `floor(p / leaf)` per axis, so boundary points always
/// land in the lower cell. Output order follows the voxel key order, which
/// makes the result deterministic and idempotent on generic data.
pub fn voxel_downsample(cloud: &PointCloud, leaf: f64) -> PointCloud {
    assert!(leaf > 0.0, "leaf size must be positive");
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((Vector3::zeros(), 0));
        entry.0 += p;
        entry.1 += 1;
    }
    PointCloud::from_points(
        cells
            .values()
            .map(|(sum, count)| sum / *count as f64)
            .collect(),
    )
}
