//! Shared domain types. Constructors enforce the invariants; once built the
//! values are immutable and `Send + Sync`.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use ndarray::{s, Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer voxel coordinate `(x, y, z)`.
pub type Voxel = [usize; 3];

/// Names of the four anatomical sequences followed by the FA-like reference.
pub const CHANNEL_NAMES: [&str; 5] = ["t1", "t1c", "t2", "flair", "fa"];
/// Number of anatomical channels fed to the image encoder and the
/// anatomical edge/node encoders.
pub const ANATOMICAL_CHANNELS: usize = 4;
/// Index of the FA-like channel in a synthetic volume.
pub const FA_CHANNEL: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelVolume {
    data: Array4<f32>,
    channel_names: Vec<String>,
    voxel_size: [f32; 3],
}

impl MultiChannelVolume {
    pub fn new(data: Array4<f32>, channel_names: Vec<String>, voxel_size: [f32; 3]) -> Result<Self> {
        let (c, x, y, z) = data.dim();
        if c == 0 {
            return Err(Error::data("volume must have at least one channel"));
        }
        if x < 4 || y < 4 || z < 4 {
            return Err(Error::data(format!("volume spatial dims {x}×{y}×{z} below 4")));
        }
        if channel_names.len() != c {
            return Err(Error::data(format!(
                "{} channel names for {c} channels",
                channel_names.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("volume contains NaN/Inf"));
        }
        Ok(Self {
            data,
            channel_names,
            voxel_size,
        })
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn voxel_size(&self) -> [f32; 3] {
        self.voxel_size
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn shape(&self) -> [usize; 3] {
        let (_, x, y, z) = self.data.dim();
        [x, y, z]
    }

    #[inline]
    pub fn at(&self, channel: usize, v: Voxel) -> f32 {
        self.data[[channel, v[0], v[1], v[2]]]
    }
}

/// Boolean tumor segmentation. Always non-empty and 6-connected.
#[derive(Clone, Debug, PartialEq)]
pub struct TumorMask {
    data: Array3<bool>,
}

impl TumorMask {
    pub fn new(data: Array3<bool>) -> Result<Self> {
        let count = data.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::data("tumor mask is empty"));
        }
        let seed = data
            .indexed_iter()
            .find(|(_, &b)| b)
            .map(|((x, y, z), _)| [x, y, z])
            .unwrap();
        if flood_fill(&data, seed).len() != count {
            return Err(Error::data("tumor mask is not a single 6-connected component"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array3<bool> {
        &self.data
    }

    pub fn shape(&self) -> [usize; 3] {
        let (x, y, z) = self.data.dim();
        [x, y, z]
    }

    #[inline]
    pub fn contains(&self, v: Voxel) -> bool {
        self.data[[v[0], v[1], v[2]]]
    }

    pub fn voxels(&self) -> Vec<Voxel> {
        self.data
            .indexed_iter()
            .filter(|(_, &b)| b)
            .map(|((x, y, z), _)| [x, y, z])
            .collect()
    }

    /// Inclusive bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Voxel, Voxel) {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        for v in self.voxels() {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    pub fn to_u8(&self) -> Array3<u8> {
        self.data.mapv(u8::from)
    }
}

/// The 6-connected component of `grid` containing `seed`.
pub fn flood_fill(grid: &Array3<bool>, seed: Voxel) -> Vec<Voxel> {
    let (nx, ny, nz) = grid.dim();
    let mut seen = Array3::from_elem((nx, ny, nz), false);
    let mut out = Vec::new();
    if !grid[seed] {
        return out;
    }
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    while let Some(v) = queue.pop_front() {
        out.push(v);
        for n in neighbors6(v, [nx, ny, nz]) {
            if grid[n] && !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    out
}

/// In-bounds 6-neighbours of `v`.
pub fn neighbors6(v: Voxel, shape: [usize; 3]) -> impl Iterator<Item = Voxel> {
    const STEPS: [(usize, isize); 6] = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)];
    STEPS.into_iter().filter_map(move |(axis, d)| {
        let c = v[axis] as isize + d;
        if c < 0 || c >= shape[axis] as isize {
            None
        } else {
            let mut n = v;
            n[axis] = c as usize;
            Some(n)
        }
    })
}

/// Anatomical channels masked to the tumor, cropped to the padded bounding
/// box and centred in a fixed `side³` cube.
#[derive(Clone, Debug, PartialEq)]
pub struct TumorImage {
    data: Array4<f32>,
}

impl TumorImage {
    /// Builds `x^I`: tight mask bounding box padded by `pad` voxels, centred
    /// in a zero cube of edge `side`. Boxes larger than the cube are
    /// centre-cropped to it.
    pub fn crop(volume: &MultiChannelVolume, mask: &TumorMask, side: usize, pad: usize) -> Result<Self> {
        if volume.shape() != mask.shape() {
            return Err(Error::data("mask and volume shapes differ"));
        }
        if volume.channels() < ANATOMICAL_CHANNELS {
            return Err(Error::data("volume lacks the anatomical channels"));
        }
        let shape = volume.shape();
        let (lo, hi) = mask.bounding_box();
        let mut out = Array4::<f32>::zeros((ANATOMICAL_CHANNELS, side, side, side));
        let mut src_lo = [0usize; 3];
        let mut dst_lo = [0usize; 3];
        let mut len = [0usize; 3];
        for a in 0..3 {
            let box_lo = lo[a].saturating_sub(pad);
            let box_hi = (hi[a] + pad).min(shape[a] - 1);
            let extent = box_hi - box_lo + 1;
            if extent <= side {
                src_lo[a] = box_lo;
                dst_lo[a] = (side - extent) / 2;
                len[a] = extent;
            } else {
                src_lo[a] = box_lo + (extent - side) / 2;
                dst_lo[a] = 0;
                len[a] = side;
            }
        }
        for c in 0..ANATOMICAL_CHANNELS {
            for i in 0..len[0] {
                for j in 0..len[1] {
                    for k in 0..len[2] {
                        let v = [src_lo[0] + i, src_lo[1] + j, src_lo[2] + k];
                        if mask.contains(v) {
                            out[[c, dst_lo[0] + i, dst_lo[1] + j, dst_lo[2] + k]] = volume.at(c, v);
                        }
                    }
                }
            }
        }
        Ok(Self { data: out })
    }

    pub fn from_array(data: Array4<f32>) -> Result<Self> {
        let (c, x, y, z) = data.dim();
        if c != ANATOMICAL_CHANNELS || x != y || y != z {
            return Err(Error::data(format!(
                "tumor image must be {ANATOMICAL_CHANNELS}×s×s×s, got {c}×{x}×{y}×{z}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("tumor image contains NaN/Inf"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn side(&self) -> usize {
        self.data.dim().1
    }

    /// `channels × voxels` matrix in row-major voxel order.
    pub fn to_matrix(&self) -> Array2<f64> {
        let (c, x, y, z) = self.data.dim();
        let flat = self.data.mapv(f64::from);
        flat.into_shape_with_order((c, x * y * z)).expect("contiguous")
    }
}

/// Tumor-surface point cloud in voxel-index coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointsCloud {
    coords: Array2<f64>,
    attention: Option<Vec<f64>>,
}

impl PointsCloud {
    pub fn new(coords: Array2<f64>, attention: Option<Vec<f64>>) -> Result<Self> {
        if coords.ncols() != 3 {
            return Err(Error::data("point coordinates must be P×3"));
        }
        if coords.nrows() == 0 {
            return Err(Error::data("point cloud is empty"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("point coordinates contain NaN/Inf"));
        }
        if let Some(a) = &attention {
            if a.len() != coords.nrows() {
                return Err(Error::data("attention length differs from point count"));
            }
            if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::data("point attention outside [0, 1]"));
            }
        }
        Ok(Self { coords, attention })
    }

    pub fn from_voxels(voxels: &[Voxel]) -> Result<Self> {
        let coords = Array2::from_shape_fn((voxels.len(), 3), |(i, a)| voxels[i][a] as f64);
        Self::new(coords, None)
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn attention(&self) -> Option<&[f64]> {
        self.attention.as_deref()
    }

    pub fn with_attention(&self, attention: Vec<f64>) -> Result<Self> {
        Self::new(self.coords.clone(), Some(attention))
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        [self.coords[[i, 0]], self.coords[[i, 1]], self.coords[[i, 2]]]
    }

    /// Subset of points (and attention) at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let coords = self.coords.select(Axis(0), indices);
        let attention = self
            .attention
            .as_ref()
            .map(|a| indices.iter().map(|&i| a[i]).collect());
        Self::new(coords, attention)
    }

    /// True when every coordinate lies inside a volume of `shape`.
    pub fn within(&self, shape: [usize; 3]) -> bool {
        self.coords
            .rows()
            .into_iter()
            .all(|r| (0..3).all(|a| r[a] >= 0.0 && r[a] <= (shape[a] - 1) as f64))
    }
}

/// White-matter pathway between two atlas regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tract {
    pub endpoints: (usize, usize),
    pub voxels: Vec<Voxel>,
}

/// Node atlas (disjoint regions) plus edge atlas (tract pathways).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub shape: [usize; 3],
    pub region_voxels: Vec<Vec<Voxel>>,
    pub tracts: Vec<Tract>,
}

impl Atlas {
    pub fn new(shape: [usize; 3], region_voxels: Vec<Vec<Voxel>>, tracts: Vec<Tract>) -> Result<Self> {
        let atlas = Self {
            shape,
            region_voxels,
            tracts,
        };
        atlas.validate()?;
        Ok(atlas)
    }

    pub fn n_regions(&self) -> usize {
        self.region_voxels.len()
    }

    pub fn n_tracts(&self) -> usize {
        self.tracts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut owner: BTreeMap<Voxel, usize> = BTreeMap::new();
        for (r, voxels) in self.region_voxels.iter().enumerate() {
            for v in voxels {
                if (0..3).any(|a| v[a] >= self.shape[a]) {
                    return Err(Error::data(format!("region {r} voxel {v:?} out of bounds")));
                }
                if let Some(prev) = owner.insert(*v, r) {
                    if prev != r {
                        return Err(Error::data(format!("regions {prev} and {r} overlap at {v:?}")));
                    }
                }
            }
        }
        for (e, t) in self.tracts.iter().enumerate() {
            let (i, j) = t.endpoints;
            if i >= self.n_regions() || j >= self.n_regions() || i == j {
                return Err(Error::data(format!("tract {e} has invalid endpoints ({i}, {j})")));
            }
            if t.voxels.is_empty() {
                return Err(Error::data(format!("tract {e} has no voxels")));
            }
        }
        Ok(())
    }
}

/// Attributed brain graph `x^B`: regions as nodes, tracts as edges.
#[derive(Clone, Debug, PartialEq)]
pub struct BrainNetwork {
    node_attrs: Array2<f64>,
    edge_index: Vec<(usize, usize)>,
    edge_attrs: Array2<f64>,
    edge_voxel_sets: Vec<Vec<Voxel>>,
}

impl BrainNetwork {
    /// Edges are canonicalised to `i < j`; duplicates and self-loops are
    /// rejected.
    pub fn new(
        node_attrs: Array2<f64>,
        edge_index: Vec<(usize, usize)>,
        edge_attrs: Array2<f64>,
        edge_voxel_sets: Vec<Vec<Voxel>>,
    ) -> Result<Self> {
        let r = node_attrs.nrows();
        if node_attrs.ncols() == 0 {
            return Err(Error::data("attribute dimension must be positive"));
        }
        if edge_attrs.nrows() != edge_index.len() || edge_voxel_sets.len() != edge_index.len() {
            return Err(Error::data("edge arrays disagree on the number of edges"));
        }
        if !edge_index.is_empty() && edge_attrs.ncols() != node_attrs.ncols() {
            return Err(Error::data("node and edge attribute dimensions differ"));
        }
        if node_attrs.iter().chain(edge_attrs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("brain network attributes contain NaN/Inf"));
        }
        let mut seen = HashSet::new();
        let mut canonical = Vec::with_capacity(edge_index.len());
        for &(a, b) in &edge_index {
            if a >= r || b >= r {
                return Err(Error::data(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(Error::data(format!("self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::data(format!("duplicate edge {e:?}")));
            }
            canonical.push(e);
        }
        Ok(Self {
            node_attrs,
            edge_index: canonical,
            edge_attrs,
            edge_voxel_sets,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_attrs.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_index.len()
    }

    pub fn attr_dim(&self) -> usize {
        self.node_attrs.ncols()
    }

    pub fn node_attrs(&self) -> &Array2<f64> {
        &self.node_attrs
    }

    pub fn edge_index(&self) -> &[(usize, usize)] {
        &self.edge_index
    }

    pub fn edge_attrs(&self) -> &Array2<f64> {
        &self.edge_attrs
    }

    pub fn edge_voxel_sets(&self) -> &[Vec<Voxel>] {
        &self.edge_voxel_sets
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        let mut node_attrs = Array2::zeros(self.node_attrs.dim());
        for (old, &new) in perm.iter().enumerate() {
            node_attrs.row_mut(new).assign(&self.node_attrs.row(old));
        }
        let edges = self.edge_index.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self::new(node_attrs, edges, self.edge_attrs.clone(), self.edge_voxel_sets.clone())
    }
}

/// Role of a patient in the study design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Ssl,
    Contrastive,
    Classifier,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Ssl, Split::Contrastive, Split::Classifier, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Ssl => "ssl",
            Split::Contrastive => "contrastive",
            Split::Classifier => "classifier",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub id: String,
    /// Genotype, 1 = mutant. Optional for the self-supervised pool.
    pub label: Option<u8>,
    pub split: Split,
    pub files: BTreeMap<String, String>,
}

/// `cohort.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub patients: Vec<PatientEntry>,
    pub atlas: String,
    pub config: String,
}

/// One broken manifest rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub patient: Option<String>,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.patient {
            Some(p) => write!(f, "{p}: {}", self.rule),
            None => f.write_str(&self.rule),
        }
    }
}

impl CohortManifest {
    pub fn patients_in(&self, split: Split) -> impl Iterator<Item = &PatientEntry> {
        self.patients.iter().filter(move |p| p.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&PatientEntry> {
        self.patients.iter().find(|p| p.id == id)
    }
}

/// Lists every broken invariant; empty means the manifest is valid.
pub fn validate_manifest(manifest: &CohortManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for p in &manifest.patients {
        if !ids.insert(p.id.as_str()) {
            out.push(Violation {
                patient: Some(p.id.clone()),
                rule: "duplicate patient id".into(),
            });
        }
        match p.label {
            None if p.split != Split::Ssl => out.push(Violation {
                patient: Some(p.id.clone()),
                rule: format!("missing label in split {}", p.split.as_str()),
            }),
            Some(l) if l > 1 => out.push(Violation {
                patient: Some(p.id.clone()),
                rule: format!("label {l} is not binary"),
            }),
            _ => {}
        }
    }
    for split in Split::ALL {
        if manifest.patients_in(split).next().is_none() {
            out.push(Violation {
                patient: None,
                rule: format!("empty split partition: {}", split.as_str()),
            });
        }
    }
    out
}

/// Mean-centres the rows of a `P × 3` coordinate matrix.
pub fn centered(coords: &Array2<f64>) -> Array2<f64> {
    let mean = coords.mean_axis(Axis(0)).expect("non-empty");
    coords - &mean.insert_axis(Axis(0))
}

/// Slice helper for a single channel of a volume.
pub fn channel(volume: &MultiChannelVolume, c: usize) -> ndarray::ArrayView3<'_, f32> {
    volume.data().slice(s![c, .., .., ..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: Option<u8>, split: Split) -> PatientEntry {
        PatientEntry {
            id: id.into(),
            label,
            split,
            files: BTreeMap::new(),
        }
    }

    fn manifest(patients: Vec<PatientEntry>) -> CohortManifest {
        CohortManifest {
            patients,
            atlas: "atlas.json".into(),
            config: "config.json".into(),
        }
    }

    #[test]
    fn well_formed_manifest_has_no_violations() {
        let m = manifest(vec![
            entry("p0", None, Split::Ssl),
            entry("p1", Some(0), Split::Contrastive),
            entry("p2", Some(1), Split::Classifier),
            entry("p3", Some(0), Split::Test),
        ]);
        assert!(validate_manifest(&m).is_empty());
    }

    #[test]
    fn missing_test_label_names_the_patient() {
        let m = manifest(vec![
            entry("p0", None, Split::Ssl),
            entry("p1", Some(0), Split::Contrastive),
            entry("p2", Some(1), Split::Classifier),
            entry("p3", None, Split::Test),
        ]);
        let v = validate_manifest(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].patient.as_deref(), Some("p3"));
    }

    #[test]
    fn every_empty_partition_is_reported() {
        // enumerate all 16 presence patterns of the four splits
        for pattern in 0u32..16 {
            let patients: Vec<_> = Split::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| pattern & (1 << i) != 0)
                .map(|(i, &s)| entry(&format!("p{i}"), Some(0), s))
                .collect();
            let v = validate_manifest(&manifest(patients));
            let expected: Vec<String> = Split::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| pattern & (1 << i) == 0)
                .map(|(_, s)| format!("empty split partition: {}", s.as_str()))
                .collect();
            let got: Vec<String> = v.iter().map(|v| v.rule.clone()).collect();
            assert_eq!(got, expected, "pattern {pattern:04b}");
        }
        let m = manifest(vec![
            entry("p0", None, Split::Ssl),
            entry("p1", Some(0), Split::Contrastive),
            entry("p3", Some(0), Split::Test),
        ]);
        assert_eq!(validate_manifest(&m)[0].rule, "empty split partition: classifier");
    }

    #[test]
    fn mask_must_be_connected_and_non_empty() {
        let mut g = Array3::from_elem((5, 5, 5), false);
        assert!(TumorMask::new(g.clone()).is_err());
        g[[1, 1, 1]] = true;
        assert!(TumorMask::new(g.clone()).is_ok());
        g[[3, 3, 3]] = true;
        assert!(TumorMask::new(g.clone()).is_err());
        g[[1, 1, 2]] = true;
        g[[1, 1, 3]] = true;
        g[[1, 2, 3]] = true;
        g[[1, 3, 3]] = true;
        g[[2, 3, 3]] = true;
        assert!(TumorMask::new(g).is_ok());
    }

    #[test]
    fn brain_network_canonicalises_and_rejects_duplicates() {
        let attrs = Array2::ones((3, 2));
        let net = BrainNetwork::new(
            attrs.clone(),
            vec![(2, 0), (1, 2)],
            Array2::ones((2, 2)),
            vec![vec![[0, 0, 0]], vec![[1, 1, 1]]],
        )
        .unwrap();
        assert_eq!(net.edge_index(), &[(0, 2), (1, 2)]);
        let dup = BrainNetwork::new(
            attrs,
            vec![(0, 1), (1, 0)],
            Array2::ones((2, 2)),
            vec![vec![], vec![]],
        );
        assert!(dup.is_err());
    }

    #[test]
    fn crop_zeroes_everything_outside_the_mask() {
        let data = Array4::from_shape_fn((5, 12, 12, 12), |(c, x, y, z)| 1.0 + (c + x + y + z) as f32);
        let names = CHANNEL_NAMES.iter().map(|s| s.to_string()).collect();
        let vol = MultiChannelVolume::new(data, names, [1.0; 3]).unwrap();
        let mut m = Array3::from_elem((12, 12, 12), false);
        for v in [[5, 5, 5], [5, 5, 6], [5, 6, 6], [6, 6, 6]] {
            m[v] = true;
        }
        let mask = TumorMask::new(m).unwrap();
        let img = TumorImage::crop(&vol, &mask, 8, 2).unwrap();
        let nonzero = img.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 4 * ANATOMICAL_CHANNELS);
        let total: f32 = img.data().slice(s![0, .., .., ..]).sum();
        // channel 0 value is 1 + x + y + z
        assert_eq!(total, 16.0 + 17.0 + 18.0 + 19.0);
    }
}
