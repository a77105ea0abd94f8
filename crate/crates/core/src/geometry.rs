//! Tumor surface point clouds: voxel-surface extraction, farthest point
//! sampling and radius-neighbour graphs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{centered, PointsCloud, TumorMask, Voxel};

/// Foreground voxels with at least one background 6-neighbour. Voxels on the
/// volume border count as surface (outside the grid is background).
pub fn extract_surface_points(mask: &TumorMask) -> Result<PointsCloud> {
    let shape = mask.shape();
    let surface: Vec<Voxel> = mask
        .voxels()
        .into_iter()
        .filter(|v| {
            (0..3).any(|a| v[a] == 0 || v[a] + 1 == shape[a])
                || crate::types::neighbors6(*v, shape).any(|n| !mask.contains(n))
        })
        .collect();
    if surface.is_empty() {
        return Err(Error::data("mask has no surface voxels"));
    }
    PointsCloud::from_voxels(&surface)
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Indices chosen by greedy farthest point sampling, in selection order.
pub fn fps_indices(points: &PointsCloud, k: usize, seed_index: usize) -> Result<Vec<usize>> {
    let p = points.len();
    if p == 0 {
        return Err(Error::data("cannot sample from an empty cloud"));
    }
    if k == 0 || k > p {
        return Err(Error::data(format!("sample size {k} outside 1..={p}")));
    }
    if seed_index >= p {
        return Err(Error::data(format!("seed index {seed_index} out of range for {p} points")));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; p];
    let mut nearest = vec![f64::INFINITY; p];
    let mut current = seed_index;
    for _ in 0..k {
        chosen.push(current);
        taken[current] = true;
        let c = points.point(current);
        let mut best = None::<(usize, f64)>;
        for i in 0..p {
            if taken[i] {
                continue;
            }
            nearest[i] = nearest[i].min(dist2(points.point(i), c));
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, d)| nearest[i] > d) {
                best = Some((i, nearest[i]));
            }
        }
        match best {
            Some((i, _)) => current = i,
            None => break,
        }
    }
    Ok(chosen)
}

pub fn farthest_point_sampling(points: &PointsCloud, k: usize, seed_index: usize) -> Result<PointsCloud> {
    points.select(&fps_indices(points, k, seed_index)?)
}

/// Largest distance from any point of `points` to its nearest member of
/// `sample`.
pub fn coverage_radius(points: &PointsCloud, sample: &[usize]) -> f64 {
    (0..points.len())
        .map(|i| {
            sample
                .iter()
                .map(|&s| dist2(points.point(i), points.point(s)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// Radius-neighbour graph over a point cloud. `edges` holds both directions
/// of every pair; `edge_features` the Euclidean length of each directed edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointGraph {
    pub points: Array2<f64>,
    pub node_features: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Vec<f64>,
    pub radius: f64,
}

impl PointGraph {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Unordered pairs `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().filter(|(i, j)| i < j).collect()
    }
}

pub fn build_point_graph(points: &PointsCloud, radius: f64) -> Result<PointGraph> {
    if points.is_empty() {
        return Err(Error::data("point graph needs at least one point"));
    }
    if !(radius > 0.0) {
        return Err(Error::config(format!("point graph radius must be > 0, got {radius}")));
    }
    let p = points.len();
    let r2 = radius * radius;
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let d2 = dist2(points.point(i), points.point(j));
            if d2 <= r2 {
                edges.push((i, j));
                edge_features.push(d2.sqrt());
            }
        }
    }
    Ok(PointGraph {
        points: points.coords().clone(),
        node_features: centered(points.coords()),
        edges,
        edge_features,
        radius,
    })
}

/// Fixed-size cloud for one mask: surface extraction, then FPS down to
/// `min(k, P)` points from `seed_index`.
pub fn sample_surface(mask: &TumorMask, k: usize, seed_index: usize) -> Result<PointsCloud> {
    let surface = extract_surface_points(mask)?;
    let k = k.min(surface.len());
    farthest_point_sampling(&surface, k, seed_index.min(surface.len() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn mask_from(voxels: &[Voxel], side: usize) -> TumorMask {
        let mut g = Array3::from_elem((side, side, side), false);
        for v in voxels {
            g[*v] = true;
        }
        TumorMask::new(g).unwrap()
    }

    #[test]
    fn single_voxel_surface() {
        let m = mask_from(&[[2, 2, 2]], 5);
        let s = extract_surface_points(&m).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.point(0), [2.0, 2.0, 2.0]);
    }

    #[test]
    fn cube_surface_skips_centre() {
        let mut vox = Vec::new();
        for x in 1..4 {
            for y in 1..4 {
                for z in 1..4 {
                    vox.push([x, y, z]);
                }
            }
        }
        let s = extract_surface_points(&mask_from(&vox, 5)).unwrap();
        assert_eq!(s.len(), 26);
        assert!((0..26).all(|i| s.point(i) != [2.0, 2.0, 2.0]));
    }

    #[test]
    fn fps_on_a_line() {
        let c = Array2::from_shape_vec((4, 3), vec![0., 0., 0., 1., 0., 0., 2., 0., 0., 10., 0., 0.]).unwrap();
        let cloud = PointsCloud::new(c, None).unwrap();
        assert_eq!(fps_indices(&cloud, 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(fps_indices(&cloud, 4, 0).unwrap(), vec![0, 3, 2, 1]);
        assert!(fps_indices(&cloud, 5, 0).is_err());
    }

    #[test]
    fn fps_ties_take_lowest_index() {
        let c = Array2::from_shape_vec((3, 3), vec![0., 0., 0., -1., 0., 0., 1., 0., 0.]).unwrap();
        let cloud = PointsCloud::new(c, None).unwrap();
        assert_eq!(fps_indices(&cloud, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn radius_graph_boundary_is_inclusive() {
        let c = Array2::from_shape_vec((2, 3), vec![0., 0., 0., 1., 0., 0.]).unwrap();
        let cloud = PointsCloud::new(c, None).unwrap();
        assert!(build_point_graph(&cloud, 0.5).unwrap().edges.is_empty());
        let g = build_point_graph(&cloud, 1.0).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
        assert_eq!(g.edge_features, vec![1.0, 1.0]);
    }
}
