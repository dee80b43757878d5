//! Inverse-distance-weighted depth interpolation over contour vertices.

use super::kdtree::{KdTree, Neighbor};
use super::{ContourSet, RasterError};

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_POWER: f64 = 2.0;
/// Queries closer than this (meters) to a vertex return its depth directly.
pub const DEFAULT_EXACT_HIT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DepthIndex {
    tree: KdTree,
    depths: Vec<f64>,
    k: usize,
    power: f64,
    epsilon: f64,
}

/// Builds the index. `k` is clamped to the number of vertices.
pub fn build_depth_index(contours: &ContourSet, k: usize, power: f64) -> Result<DepthIndex, RasterError> {
    DepthIndex::new(contours, k, power, DEFAULT_EXACT_HIT_EPSILON)
}

impl DepthIndex {
    pub fn new(contours: &ContourSet, k: usize, power: f64, epsilon: f64) -> Result<Self, RasterError> {
        if contours.is_empty() {
            return Err(RasterError::EmptyContours);
        }
        if k == 0 {
            return Err(RasterError::Geometry("k must be at least 1".into()));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(RasterError::Geometry(format!("power must be positive, got {power}")));
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(RasterError::Geometry(format!("epsilon must be non-negative, got {epsilon}")));
        }
        let coords: Vec<[f64; 2]> = contours.points.iter().map(|p| [p.x, p.y]).collect();
        Ok(Self {
            tree: KdTree::build(&coords),
            depths: contours.points.iter().map(|p| p.depth).collect(),
            k: k.min(contours.len()),
            power,
            epsilon,
        })
    }

    /// Effective neighbor count after clamping.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn depth_of(&self, index: usize) -> f64 {
        self.depths[index]
    }

    /// The `k` nearest vertices to `(x, y)`.
    pub fn neighbors(&self, x: f64, y: f64) -> Vec<Neighbor> {
        self.tree.nearest(x, y, self.k)
    }

    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let nn = self.neighbors(x, y);
        let nearest = nn[0];
        if nearest.distance() < self.epsilon {
            return self.depths[nearest.index];
        }
        // Weighted mean of offsets from the nearest depth; exact for constant depths.
        let base = self.depths[nearest.index];
        let (mut num, mut den) = (0.0, 0.0);
        for n in &nn {
            let w = n.distance().powf(-self.power);
            num += w * (self.depths[n.index] - base);
            den += w;
        }
        base + num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ContourPoint;
    use proptest::prelude::*;

    fn set(pts: &[(f64, f64, f64)]) -> ContourSet {
        ContourSet::new(
            pts.iter()
                .map(|&(x, y, depth)| ContourPoint { x, y, depth })
                .collect(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn k_is_clamped() {
        let idx = build_depth_index(&set(&[(0.0, 0.0, 3.0)]), 4, 2.0).unwrap();
        assert_eq!(idx.k(), 1);
        assert_eq!(idx.interpolate(10.0, 10.0), 3.0);
    }

    #[test]
    fn empty_rejected() {
        let empty = ContourSet { points: vec![], source_id: "e".into() };
        assert!(matches!(build_depth_index(&empty, 4, 2.0), Err(RasterError::EmptyContours)));
    }

    #[test]
    fn bad_parameters_rejected() {
        let s = set(&[(0.0, 0.0, 1.0)]);
        assert!(build_depth_index(&s, 0, 2.0).is_err());
        assert!(build_depth_index(&s, 1, 0.0).is_err());
    }

    #[test]
    fn constant_depth_everywhere() {
        let idx = build_depth_index(&set(&[(0.0, 0.0, 8.0), (5.0, 1.0, 8.0), (-3.0, 7.0, 8.0)]), 4, 2.0).unwrap();
        for (x, y) in [(1.0, 1.0), (100.0, -40.0), (-3.0, 6.5)] {
            assert!((idx.interpolate(x, y) - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_hit_returns_vertex_depth() {
        let idx = build_depth_index(&set(&[(0.0, 0.0, 7.0), (10.0, 0.0, 100.0)]), 2, 2.0).unwrap();
        assert_eq!(idx.interpolate(0.0, 0.0), 7.0);
    }

    #[test]
    fn two_point_power_one() {
        // distances 1 and 3 from the query at (1, 0)
        let idx = build_depth_index(&set(&[(0.0, 0.0, 0.0), (4.0, 0.0, 10.0)]), 2, 1.0).unwrap();
        let expected = (0.0 * (1.0 / 1.0) + 10.0 * (1.0 / 3.0)) / (1.0 / 1.0 + 1.0 / 3.0);
        assert!((idx.interpolate(1.0, 0.0) - expected).abs() < 1e-12);
        assert!((expected - 2.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn interpolation_within_neighbor_bounds(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0, 0.0f64..500.0), 1..60),
            qx in -120.0f64..120.0,
            qy in -120.0f64..120.0,
            k in 1usize..8,
            power in 0.5f64..4.0,
        ) {
            let idx = build_depth_index(&set(&pts), k, power).unwrap();
            let d = idx.interpolate(qx, qy);
            let nn = idx.neighbors(qx, qy);
            let lo = nn.iter().map(|n| idx.depth_of(n.index)).fold(f64::INFINITY, f64::min);
            let hi = nn.iter().map(|n| idx.depth_of(n.index)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(d >= lo - 1e-9 * hi.abs().max(1.0) && d <= hi + 1e-9 * hi.abs().max(1.0));
        }

        #[test]
        fn translation_equivariance(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0, 0.0f64..500.0), 1..60),
            qx in -120.0f64..120.0,
            qy in -120.0f64..120.0,
            dx in -1000.0f64..1000.0,
            dy in -1000.0f64..1000.0,
        ) {
            let a = build_depth_index(&set(&pts), 4, 2.0).unwrap();
            let shifted: Vec<_> = pts.iter().map(|&(x, y, d)| (x + dx, y + dy, d)).collect();
            let b = build_depth_index(&set(&shifted), 4, 2.0).unwrap();
            let da = a.interpolate(qx, qy);
            let db = b.interpolate(qx + dx, qy + dy);
            // Shifting perturbs the last bits of the distances and can reorder
            // near-ties; those cases select a different neighbor set.
            prop_assume!(a.neighbors(qx, qy).iter().map(|n| n.index).collect::<Vec<_>>()
                == b.neighbors(qx + dx, qy + dy).iter().map(|n| n.index).collect::<Vec<_>>());
            prop_assert!((da - db).abs() <= 1e-9 * da.abs().max(1.0), "{} vs {}", da, db);
        }
    }
}
