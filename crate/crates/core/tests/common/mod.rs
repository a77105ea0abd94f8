//! Independent reference implementations and fixtures shared by the
//! integration tests.

#![allow(dead_code)]

use mmgt::encoders::EncoderConfig;
use mmgt::types::{BrainNetwork, PointsCloud};
use mmgt_autograd::{GradStore, Mat, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Double-loop contrastive loss: for each anchor row, the positive target
/// over all other targets (or all targets with `include_positive`).
pub fn contrastive_oracle(a: &Mat, b: &Mat, tau: f64, include_positive: bool) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let ai = a.row(i).to_vec();
        let pos = (cosine(&ai, &b.row(i).to_vec()) / tau).exp();
        let mut denom = 0.0;
        for j in 0..n {
            if j != i || include_positive {
                denom += (cosine(&ai, &b.row(j).to_vec()) / tau).exp();
            }
        }
        total += -(pos / denom).ln();
    }
    total / n as f64
}

/// Brute-force area under the ROC curve over all positive/negative pairs.
pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// Mean of the attention of points within Chebyshev `radius` of any voxel
/// of each tract, `beta` when there are none.
pub fn edge_attention_oracle(
    attention: &[f64],
    points: &PointsCloud,
    net: &BrainNetwork,
    radius: f64,
    beta: f64,
) -> Vec<f64> {
    net.edge_voxel_sets()
        .iter()
        .map(|voxels| {
            let hits: Vec<f64> = (0..points.len())
                .filter(|&k| {
                    let p = points.point(k);
                    voxels
                        .iter()
                        .any(|v| (0..3).all(|a| (p[a] - v[a] as f64).abs() <= radius))
                })
                .map(|k| attention[k])
                .collect();
            if hits.is_empty() {
                beta
            } else {
                hits.iter().sum::<f64>() / hits.len() as f64
            }
        })
        .collect()
}

/// Largest relative error between the analytic directional derivative
/// `∇f·v` and the central difference along `directions` random unit
/// directions in parameter space.
pub fn directional_check(
    store: &ParamStore,
    grads: &GradStore,
    f: impl Fn(&ParamStore) -> f64,
    directions: usize,
    h: f64,
    seed: u64,
) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dirs: Vec<Mat> = store
            .ids()
            .map(|id| {
                let m = store.get(id);
                Mat::from_shape_simple_fn(m.dim(), || r.random_range(-1.0..1.0))
            })
            .collect();
        let norm = dirs
            .iter()
            .map(|d| d.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let mut analytic = 0.0;
        let mut plus = store.clone();
        let mut minus = store.clone();
        for (k, id) in store.ids().enumerate() {
            let d = &dirs[k] / norm;
            if let Some(g) = grads.get(id) {
                analytic += (g * &d).sum();
            }
            *plus.get_mut(id) += &(&d * h);
            *minus.get_mut(id) -= &(&d * h);
        }
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Narrow encoders for fast tests.
pub fn tiny_encoders() -> EncoderConfig {
    EncoderConfig {
        feature_dim: 8,
        crop_side: 8,
        image_widths: vec![4, 4],
        image_head: vec![8],
        point_samples: 32,
        point_widths: vec![8, 8],
        point_head: vec![8],
        brain_widths: vec![6, 6],
        brain_head: vec![8],
        node_projection: vec![8, 8],
        ..EncoderConfig::default()
    }
}

pub fn tiny_heads() -> mmgt::encoders::HeadConfig {
    mmgt::encoders::HeadConfig {
        feature_heads: vec![8, 8],
        tumor_head: vec![8, 8],
    }
}

/// A random brain network on `r` nodes with the given tract voxel sets.
pub fn random_network(
    rng: &mut ChaCha8Rng,
    r: usize,
    attr: usize,
    pairs: &[(usize, usize)],
    voxels: Vec<Vec<[usize; 3]>>,
) -> BrainNetwork {
    BrainNetwork::new(
        random_mat(rng, r, attr),
        pairs.to_vec(),
        random_mat(rng, pairs.len(), attr),
        voxels,
    )
    .unwrap()
}

/// A connected ring plus chords on `r` nodes.
pub fn ring_pairs(r: usize) -> Vec<(usize, usize)> {
    let mut p: Vec<(usize, usize)> = (0..r).map(|i| (i, (i + 1) % r)).collect();
    if r > 3 {
        p.push((0, r / 2));
    }
    p.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect()
}

/// Connected random-walk blob inside an `n³` grid.
pub fn random_blob(r: &mut ChaCha8Rng, n: usize, steps: usize) -> mmgt::types::TumorMask {
    let mut grid = ndarray::Array3::from_elem((n, n, n), false);
    let mut v = [n / 2; 3];
    grid[v] = true;
    for _ in 0..steps {
        let axis = r.random_range(0..3);
        if r.random_bool(0.5) {
            v[axis] = (v[axis] + 1).min(n - 1);
        } else {
            v[axis] = v[axis].saturating_sub(1);
        }
        grid[v] = true;
    }
    mmgt::types::TumorMask::new(grid).unwrap()
}

/// Exhaustive surface scan: foreground voxels with a background (or
/// out-of-grid) 6-neighbour, in scan order.
pub fn surface_oracle(mask: &mmgt::types::TumorMask) -> Vec<[usize; 3]> {
    let g = mask.data();
    let (nx, ny, nz) = g.dim();
    let at = |x: i64, y: i64, z: i64| -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && g[[x as usize, y as usize, z as usize]]
    };
    let mut out = Vec::new();
    for x in 0..nx as i64 {
        for y in 0..ny as i64 {
            for z in 0..nz as i64 {
                if !at(x, y, z) {
                    continue;
                }
                let open = [
                    (1, 0, 0),
                    (-1, 0, 0),
                    (0, 1, 0),
                    (0, -1, 0),
                    (0, 0, 1),
                    (0, 0, -1),
                ]
                .iter()
                .any(|(dx, dy, dz)| !at(x + dx, y + dy, z + dz));
                if open {
                    out.push([x as usize, y as usize, z as usize]);
                }
            }
        }
    }
    out
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Recomputes every FPS step: the chosen point must maximise the distance
/// to the points chosen before it (lowest index among ties).
pub fn fps_steps_are_maximal(points: &PointsCloud, chosen: &[usize]) -> Result<(), String> {
    for step in 1..chosen.len() {
        let prior = &chosen[..step];
        let d = |i: usize| {
            prior
                .iter()
                .map(|&s| dist(points.point(i), points.point(s)))
                .fold(f64::INFINITY, f64::min)
        };
        let remaining: Vec<usize> = (0..points.len()).filter(|i| !prior.contains(i)).collect();
        let best = remaining.iter().map(|&i| d(i)).fold(f64::MIN, f64::max);
        let first = remaining.iter().copied().find(|&i| d(i) == best).unwrap();
        if chosen[step] != first {
            return Err(format!(
                "step {step}: picked {} at {}, expected {first} at {best}",
                chosen[step],
                d(chosen[step])
            ));
        }
    }
    Ok(())
}

/// All ordered pairs `i ≠ j` within `radius`.
pub fn radius_oracle(
    points: &PointsCloud,
    radius: f64,
) -> std::collections::BTreeSet<(usize, usize)> {
    let mut out = std::collections::BTreeSet::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            if i != j && dist(points.point(i), points.point(j)) <= radius {
                out.insert((i, j));
            }
        }
    }
    out
}

pub fn random_cloud(r: &mut ChaCha8Rng, p: usize, extent: f64) -> PointsCloud {
    PointsCloud::new(
        Mat::from_shape_simple_fn((p, 3), || r.random_range(0.0..extent)),
        None,
    )
    .unwrap()
}

/// Random tract footprints: short axis-aligned segments inside an `n³` grid.
pub fn random_tracts(r: &mut ChaCha8Rng, e: usize, n: usize) -> Vec<Vec<[usize; 3]>> {
    (0..e)
        .map(|_| {
            let axis = r.random_range(0..3);
            let start = [
                r.random_range(0..n),
                r.random_range(0..n),
                r.random_range(0..n),
            ];
            let len = r.random_range(1..n);
            (0..len)
                .map(|k| {
                    let mut v = start;
                    v[axis] = (start[axis] + k).min(n - 1);
                    v
                })
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect()
}

/// A synthetic patient input: random crop, random-walk tumor, ring network.
pub fn random_input(
    r: &mut ChaCha8Rng,
    cfg: &EncoderConfig,
    regions: usize,
    attr: usize,
) -> mmgt::encoders::PatientInput {
    use mmgt::encoders::{crossing_matrix, EdgeAttentionMap, PatientInput};
    let s = cfg.crop_side;
    let data = ndarray::Array4::from_shape_simple_fn((4, s, s, s), || r.random_range(0.0f32..1.0));
    let image = mmgt::types::TumorImage::from_array(data).unwrap();
    let steps = r.random_range(5..120);
    let mask = random_blob(r, 12, steps);
    let cloud = mmgt::geometry::sample_surface(&mask, cfg.point_samples, 0).unwrap();
    let graph = mmgt::geometry::build_point_graph(&cloud, cfg.point_radius).unwrap();
    let pairs = ring_pairs(regions);
    let voxels = random_tracts(r, pairs.len(), 12);
    let network = random_network(r, regions, attr, &pairs, voxels);
    let crossing = crossing_matrix(&cloud, &network, cfg.crossing_radius, cfg.crossing_rule);
    PatientInput {
        id: "x".into(),
        label: Some(0),
        image_matrix: image.to_matrix(),
        image,
        cloud,
        graph,
        edge_map: EdgeAttentionMap::new(&crossing, cfg.uncrossed_attention),
        network,
    }
}

pub fn tiny_model(seed: u64, attr: usize) -> mmgt::encoders::MultiModalModel {
    let mut r = mmgt::rng::stream(seed, "test-model", 0);
    mmgt::encoders::MultiModalModel::new(&tiny_encoders(), &tiny_heads(), attr, &mut r).unwrap()
}
