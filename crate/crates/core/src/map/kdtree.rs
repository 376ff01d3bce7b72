use nalgebra::Vector3;

/// Static k-d tree over 3-D points.
///
/// Built once, queried read-only. The nearest query prunes with exact
/// coordinate-plane distances, so its result distance is always the true
/// global minimum over the indexed set.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    // index into `points` per tree slot, laid out by recursive median split
    order: Vec<u32>,
    // split axis per internal node, aligned with `order`
    axes: Vec<u8>,
}

impl SpatialIndex {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        if !points.is_empty() {
            let len = order.len();
            Self::build_recursive(&points, &mut order, &mut axes, 0, len);
        }
        Self { points, order, axes }
    }

    fn build_recursive(
        points: &[Vector3<f64>],
        order: &mut [u32],
        axes: &mut [u8],
        start: usize,
        end: usize,
    ) {
        if end - start <= 1 {
            return;
        }
        // split on the axis of largest spread for balanced regions
        let mut min = points[order[start] as usize];
        let mut max = min;
        for &i in &order[start..end] {
            min = min.inf(&points[i as usize]);
            max = max.sup(&points[i as usize]);
        }
        let spread = max - min;
        let axis = if spread.x >= spread.y && spread.x >= spread.z {
            0
        } else if spread.y >= spread.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        axes[mid] = axis as u8;
        Self::build_recursive(points, order, axes, start, mid);
        Self::build_recursive(points, order, axes, mid + 1, end);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point and its Euclidean distance; `None` on an empty index.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        self.nearest_recursive(query, 0, self.order.len(), &mut best);
        Some((self.points[best.0 as usize], best.1.sqrt()))
    }

    /// Index of the nearest point and its squared distance, for hot loops
    /// that want to avoid the square root and the point copy.
    pub fn nearest_index(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        self.nearest_recursive(query, 0, self.order.len(), &mut best);
        Some((best.0 as usize, best.1))
    }

    fn nearest_recursive(
        &self,
        query: &Vector3<f64>,
        start: usize,
        end: usize,
        best: &mut (u32, f64),
    ) {
        if end <= start {
            return;
        }
        if end - start <= 8 {
            for &i in &self.order[start..end] {
                let d2 = (self.points[i as usize] - query).norm_squared();
                if d2 < best.1 {
                    *best = (i, d2);
                }
            }
            return;
        }
        let mid = (start + end) / 2;
        let node = self.order[mid] as usize;
        let axis = self.axes[mid] as usize;
        let d2 = (self.points[node] - query).norm_squared();
        if d2 < best.1 {
            *best = (self.order[mid], d2);
        }
        let delta = query[axis] - self.points[node][axis];
        let (near, far) = if delta < 0.0 {
            ((start, mid), (mid + 1, end))
        } else {
            ((mid + 1, end), (start, mid))
        };
        self.nearest_recursive(query, near.0, near.1, best);
        if delta * delta < best.1 {
            self.nearest_recursive(query, far.0, far.1, best);
        }
    }

    /// Indices of all points with distance to `center` strictly below
    /// `radius`, in ascending index order.
    pub fn within_radius(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut hits = Vec::new();
        if !self.points.is_empty() {
            self.radius_recursive(center, radius * radius, 0, self.order.len(), &mut hits);
            hits.sort_unstable();
        }
        hits
    }

    fn radius_recursive(
        &self,
        center: &Vector3<f64>,
        radius_sq: f64,
        start: usize,
        end: usize,
        hits: &mut Vec<usize>,
    ) {
        if end <= start {
            return;
        }
        if end - start <= 8 {
            for &i in &self.order[start..end] {
                if (self.points[i as usize] - center).norm_squared() < radius_sq {
                    hits.push(i as usize);
                }
            }
            return;
        }
        let mid = (start + end) / 2;
        let node = self.order[mid] as usize;
        let axis = self.axes[mid] as usize;
        if (self.points[node] - center).norm_squared() < radius_sq {
            hits.push(node);
        }
        let delta = center[axis] - self.points[node][axis];
        let (near, far) = if delta < 0.0 {
            ((start, mid), (mid + 1, end))
        } else {
            ((mid + 1, end), (start, mid))
        };
        self.radius_recursive(center, radius_sq, near.0, near.1, hits);
        if delta * delta < radius_sq {
            self.radius_recursive(center, radius_sq, far.0, far.1, hits);
        }
    }
}
