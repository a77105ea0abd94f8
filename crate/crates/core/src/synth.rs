//! Synthetic cohorts with a planted genotype signal in all three modalities:
//! tumor texture (image), boundary irregularity (geometry) and FA loss along
//! tracts that pass near the tumor (brain network).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, Rng};
use crate::types::{
    flood_fill, Atlas, CohortManifest, MultiChannelVolume, PatientEntry, Split, TumorMask, Tract, Voxel,
    ANATOMICAL_CHANNELS, CHANNEL_NAMES, FA_CHANNEL,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub n_patients: usize,
    /// Fraction of the cohort placed in the unlabeled self-supervised pool
    /// (rounded to nearest).
    pub ssl_fraction: f64,
    pub volume_shape: [usize; 3],
    pub atlas_regions: usize,
    pub atlas_tracts: usize,
    pub delta_img: f64,
    pub delta_geo: f64,
    pub delta_net: f64,
    pub positive_rate: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_patients: 60,
            ssl_fraction: 0.2,
            volume_shape: [32, 32, 32],
            atlas_regions: 12,
            atlas_tracts: 40,
            delta_img: 0.5,
            delta_geo: 0.5,
            delta_net: 0.5,
            positive_rate: 0.25,
            noise: 0.05,
            seed: 7,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.delta_img, self.delta_geo, self.delta_net].iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::config("effect sizes must be >= 0"));
        }
        if self.atlas_regions < 2 {
            return Err(Error::config("atlas needs at least 2 regions"));
        }
        if self.atlas_tracts < 1 {
            return Err(Error::config("atlas needs at least 1 tract"));
        }
        let pairs = self.atlas_regions * (self.atlas_regions - 1) / 2;
        if self.atlas_tracts > pairs {
            return Err(Error::config(format!(
                "{} tracts requested but only {pairs} distinct region pairs exist",
                self.atlas_tracts
            )));
        }
        if self.volume_shape.iter().any(|&d| d < 8) {
            return Err(Error::config("volume shape must be >= 8 per axis"));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) || !(0.0..1.0).contains(&self.ssl_fraction) {
            return Err(Error::config("positive_rate must be in [0,1] and ssl_fraction in [0,1)"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise must be >= 0"));
        }
        Ok(())
    }

    fn min_dim(&self) -> usize {
        *self.volume_shape.iter().min().unwrap()
    }
}

/// Partition sizes for a cohort of `n` patients with `n_ssl` unlabeled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SplitSizes {
    pub ssl: usize,
    pub contrastive: usize,
    pub classifier: usize,
    pub test: usize,
}

impl SplitSizes {
    /// The labeled remainder goes 7:3 train/test with `floor(0.7·rest)` for
    /// train; train is halved, the odd patient going to `contrastive`.
    pub fn compute(n: usize, n_ssl: usize) -> Result<Self> {
        let rest = n.saturating_sub(n_ssl);
        let train = 7 * rest / 10;
        let test = rest - train;
        let contrastive = train.div_ceil(2);
        let classifier = train / 2;
        let sizes = Self {
            ssl: n_ssl.min(n),
            contrastive,
            classifier,
            test,
        };
        if [sizes.ssl, contrastive, classifier, test].contains(&0) {
            return Err(Error::data(format!(
                "cohort too small for 4-way split (n={n}, ssl={n_ssl} gives {sizes:?})"
            )));
        }
        Ok(sizes)
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Ssl => self.ssl,
            Split::Contrastive => self.contrastive,
            Split::Classifier => self.classifier,
            Split::Test => self.test,
        }
    }
}

pub fn n_ssl(config: &SynthesisConfig) -> usize {
    (config.ssl_fraction * config.n_patients as f64).round() as usize
}

pub fn generate_atlas(config: &SynthesisConfig) -> Result<Atlas> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "atlas", 0);
    let shape = config.volume_shape;
    let radius = (config.min_dim() as f64 / 8.0).max(1.0);
    let mut owner = Array3::<bool>::from_elem((shape[0], shape[1], shape[2]), false);
    let mut regions: Vec<Vec<Voxel>> = Vec::new();
    let mut centers: Vec<[f64; 3]> = Vec::new();
    const ATTEMPTS: usize = 2000;
    for r in 0..config.atlas_regions {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let semi: [f64; 3] = std::array::from_fn(|_| radius * rng.random_range(0.8..1.2));
            let center: [f64; 3] = std::array::from_fn(|a| {
                let lo = semi[a] + 1.0;
                let hi = shape[a] as f64 - 2.0 - semi[a];
                if hi <= lo {
                    (shape[a] as f64 - 1.0) / 2.0
                } else {
                    rng.random_range(lo..hi)
                }
            });
            let voxels = ellipsoid(center, semi, shape);
            // require a one-voxel gap to every earlier region
            if voxels.is_empty() || voxels.iter().any(|v| touches(&owner, *v)) {
                continue;
            }
            for v in &voxels {
                owner[*v] = true;
            }
            regions.push(voxels);
            centers.push(center);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::data(format!(
                "atlas congestion: region {r} of {} could not be placed without overlap in {shape:?}",
                config.atlas_regions
            )));
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..config.atlas_regions)
        .flat_map(|i| (i + 1..config.atlas_regions).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(config.atlas_tracts);
    pairs.sort_unstable();
    let tracts = pairs
        .into_iter()
        .map(|(i, j)| Tract {
            endpoints: (i, j),
            voxels: tract_path(centers[i], centers[j], shape, &mut rng),
        })
        .collect();
    Atlas::new(shape, regions, tracts)
}

fn ellipsoid(center: [f64; 3], semi: [f64; 3], shape: [usize; 3]) -> Vec<Voxel> {
    let mut out = Vec::new();
    let lo: [usize; 3] = std::array::from_fn(|a| (center[a] - semi[a]).floor().max(0.0) as usize);
    let hi: [usize; 3] = std::array::from_fn(|a| ((center[a] + semi[a]).ceil() as usize).min(shape[a] - 1));
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for z in lo[2]..=hi[2] {
                let p = [x as f64, y as f64, z as f64];
                let d: f64 = (0..3).map(|a| ((p[a] - center[a]) / semi[a]).powi(2)).sum();
                if d <= 1.0 {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// True when `v` or any of its 26 neighbours is set.
fn touches(grid: &Array3<bool>, v: Voxel) -> bool {
    let (nx, ny, nz) = grid.dim();
    for x in v[0].saturating_sub(1)..=(v[0] + 1).min(nx - 1) {
        for y in v[1].saturating_sub(1)..=(v[1] + 1).min(ny - 1) {
            for z in v[2].saturating_sub(1)..=(v[2] + 1).min(nz - 1) {
                if grid[[x, y, z]] {
                    return true;
                }
            }
        }
    }
    false
}

/// Quadratic Bézier between two region centres with a random bend, voxelised
/// and dilated by one voxel along the 6 axes.
fn tract_path(a: [f64; 3], b: [f64; 3], shape: [usize; 3], rng: &mut Rng) -> Vec<Voxel> {
    let dist = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
    let bend = 0.3 * dist;
    let control: [f64; 3] = std::array::from_fn(|k| {
        let mid = 0.5 * (a[k] + b[k]) + rng.random_range(-bend..=bend);
        mid.clamp(0.0, shape[k] as f64 - 1.0)
    });
    let steps = (dist * 3.0).ceil().max(2.0) as usize;
    let mut grid = Array3::<bool>::from_elem((shape[0], shape[1], shape[2]), false);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let v: Voxel = std::array::from_fn(|k| {
            let p = (1.0 - t).powi(2) * a[k] + 2.0 * (1.0 - t) * t * control[k] + t * t * b[k];
            p.round().clamp(0.0, shape[k] as f64 - 1.0) as usize
        });
        grid[v] = true;
        for n in crate::types::neighbors6(v, shape) {
            grid[n] = true;
        }
    }
    grid.indexed_iter()
        .filter(|(_, &b)| b)
        .map(|((x, y, z), _)| [x, y, z])
        .collect()
}

/// `grid` dilated by Chebyshev distance `r`.
pub fn dilate_chebyshev(grid: &Array3<bool>, r: usize) -> Array3<bool> {
    let (nx, ny, nz) = grid.dim();
    let mut out = Array3::from_elem((nx, ny, nz), false);
    for ((x, y, z), &b) in grid.indexed_iter() {
        if !b {
            continue;
        }
        for i in x.saturating_sub(r)..=(x + r).min(nx - 1) {
            for j in y.saturating_sub(r)..=(y + r).min(ny - 1) {
                for k in z.saturating_sub(r)..=(z + r).min(nz - 1) {
                    out[[i, j, k]] = true;
                }
            }
        }
    }
    out
}

/// Chebyshev radius of the tumor neighbourhood used for tract disruption.
pub const DISRUPTION_RADIUS: usize = 2;

/// Indices of tracts with at least one voxel inside the dilated mask.
pub fn disrupted_tracts(atlas: &Atlas, mask: &TumorMask) -> Vec<usize> {
    let near = dilate_chebyshev(mask.data(), DISRUPTION_RADIUS);
    atlas
        .tracts
        .iter()
        .enumerate()
        .filter(|(_, t)| t.voxels.iter().any(|v| near[*v]))
        .map(|(e, _)| e)
        .collect()
}

/// Tract voxels lying within the dilated tumor neighbourhood.
pub fn tumor_adjacent_tract_voxels(atlas: &Atlas, mask: &TumorMask) -> Vec<Voxel> {
    let near = dilate_chebyshev(mask.data(), DISRUPTION_RADIUS);
    let mut out: Vec<Voxel> = atlas
        .tracts
        .iter()
        .flat_map(|t| t.voxels.iter().copied())
        .filter(|v| near[*v])
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

const TUMOR_BASE: [f64; 4] = [0.5, 1.1, 1.0, 1.0];
const TUMOR_SHIFT: [f64; 4] = [0.0, -0.6, 0.6, 0.6];
const BACKGROUND: [f64; 4] = [0.3, 0.35, 0.4, 0.3];
/// Coupling of each anatomical channel to the FA-like map, so that
/// anatomical voxels carry the tract signal.
const FA_COUPLING: [f64; 4] = [0.6, 0.3, -0.5, -0.4];
const FA_BACKGROUND: f64 = 0.15;
const FA_TRACT: f64 = 0.55;
const HARMONICS: usize = 4;

/// Everything random about one patient, drawn up front so that the draw
/// sequence never depends on the label.
struct PatientDraws {
    fields: Vec<[(f64, [f64; 3], f64); 3]>,
    anchor: Voxel,
    jitter: [f64; 3],
    radius: f64,
    harmonics: [(f64, [f64; 3], f64, f64); HARMONICS],
    offsets: [f64; 4],
    texture: Vec<f64>,
    noise: Vec<f64>,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw(config: &SynthesisConfig, atlas: &Atlas, rng: &mut Rng) -> PatientDraws {
    let shape = config.volume_shape;
    let v = shape[0] * shape[1] * shape[2];
    let fields = (0..CHANNEL_NAMES.len())
        .map(|_| {
            std::array::from_fn(|_| {
                let amp = 0.03 * rng.random_range(0.5..1.0);
                let freq: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
                let phase = rng.random_range(0.0..2.0 * PI);
                (amp, freq, phase)
            })
        })
        .collect();
    let tract = &atlas.tracts[rng.random_range(0..atlas.tracts.len())];
    let anchor = tract.voxels[rng.random_range(0..tract.voxels.len())];
    let jitter = std::array::from_fn(|_| rng.random_range(-2.0..=2.0));
    let radius = rng.random_range(0.11..0.15) * config.min_dim() as f64;
    let harmonics = std::array::from_fn(|_| {
        let c = normal(rng);
        let mut d: [f64; 3] = std::array::from_fn(|_| normal(rng));
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        d.iter_mut().for_each(|x| *x /= n);
        let f = rng.random_range(3.0..6.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        (c, d, f, phase)
    });
    let offsets = std::array::from_fn(|_| 0.1 * normal(rng));
    let texture = (0..ANATOMICAL_CHANNELS * v)
        .map(|_| 0.1 * normal(rng))
        .collect();
    let noise = (0..CHANNEL_NAMES.len() * v)
        .map(|_| config.noise * normal(rng))
        .collect();
    PatientDraws {
        fields,
        anchor,
        jitter,
        radius,
        harmonics,
        offsets,
        texture,
        noise,
    }
}

fn tumor_mask(config: &SynthesisConfig, d: &PatientDraws, amplitude: f64) -> Result<TumorMask> {
    let shape = config.volume_shape;
    let weight: f64 = d.harmonics.iter().map(|h| h.0.abs()).sum::<f64>().max(1e-9);
    let reach = d.radius * (1.0 + amplitude) + 1.0;
    let center: [f64; 3] = std::array::from_fn(|a| {
        let lo = reach;
        let hi = shape[a] as f64 - 1.0 - reach;
        let c = d.anchor[a] as f64 + d.jitter[a];
        if hi < lo {
            (shape[a] as f64 - 1.0) / 2.0
        } else {
            c.clamp(lo, hi)
        }
    });
    let mut grid = Array3::from_elem((shape[0], shape[1], shape[2]), false);
    let lo: [usize; 3] = std::array::from_fn(|a| (center[a] - reach).floor().max(0.0) as usize);
    let hi: [usize; 3] = std::array::from_fn(|a| ((center[a] + reach).ceil() as usize).min(shape[a] - 1));
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for z in lo[2]..=hi[2] {
                let off = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                let r = (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt();
                let bound = if r < 1e-9 {
                    d.radius
                } else {
                    let u = [off[0] / r, off[1] / r, off[2] / r];
                    let wobble: f64 = d
                        .harmonics
                        .iter()
                        .map(|(c, dir, f, ph)| {
                            let proj = u[0] * dir[0] + u[1] * dir[1] + u[2] * dir[2];
                            c * (f * PI * proj + ph).cos()
                        })
                        .sum::<f64>()
                        / weight;
                    d.radius * (1.0 + amplitude * wobble)
                };
                if r <= bound {
                    grid[[x, y, z]] = true;
                }
            }
        }
    }
    let seed: Voxel = std::array::from_fn(|a| center[a].round() as usize);
    let component = flood_fill(&grid, seed);
    if component.is_empty() {
        return Err(Error::data(format!("placement failure: tumor at {seed:?} is empty")));
    }
    let mut kept = Array3::from_elem(grid.dim(), false);
    for v in component {
        kept[v] = true;
    }
    TumorMask::new(kept)
}

fn smooth(field: &[(f64, [f64; 3], f64); 3], p: [usize; 3], shape: [usize; 3]) -> f64 {
    field
        .iter()
        .map(|(amp, f, ph)| {
            let t: f64 = (0..3).map(|a| f[a] * p[a] as f64 / shape[a] as f64).sum();
            amp * (2.0 * PI * t + ph).cos()
        })
        .sum()
}

/// One patient. `index` selects the patient's random stream; the draws are
/// identical for both labels, so with zero effect sizes the label has no
/// influence on the output at all.
pub fn generate_patient(
    config: &SynthesisConfig,
    label: u8,
    atlas: &Atlas,
    index: u64,
) -> Result<(MultiChannelVolume, TumorMask)> {
    config.validate()?;
    if atlas.shape != config.volume_shape {
        return Err(Error::data("atlas shape differs from the configured volume shape"));
    }
    let mut rng = rng::stream(config.seed, "patient", index);
    let draws = draw(config, atlas, &mut rng);
    let positive = label == 1;
    let amplitude = 0.08 + if positive { 0.5 * config.delta_geo } else { 0.0 };
    let mask = tumor_mask(config, &draws, amplitude)?;

    let shape = config.volume_shape;
    let (nx, ny, nz) = (shape[0], shape[1], shape[2]);
    let nvox = nx * ny * nz;
    let mut tract_level = Array3::<f64>::zeros((nx, ny, nz));
    let disrupted = disrupted_tracts(atlas, &mask);
    let strength = if positive { 1.0 } else { 0.25 };
    let attenuation = (1.0 - config.delta_net * strength).max(0.0);
    for (e, t) in atlas.tracts.iter().enumerate() {
        let level = if disrupted.binary_search(&e).is_ok() { attenuation } else { 1.0 };
        for v in &t.voxels {
            // overlapping tracts keep the strongest signal
            tract_level[*v] = f64::max(tract_level[*v], level);
        }
    }

    let mut data = Array4::<f32>::zeros((CHANNEL_NAMES.len(), nx, ny, nz));
    for ((x, y, z), &level) in tract_level.indexed_iter() {
        let p = [x, y, z];
        let flat = (x * ny + y) * nz + z;
        let fa = FA_BACKGROUND + FA_TRACT * level + smooth(&draws.fields[FA_CHANNEL], p, shape);
        data[[FA_CHANNEL, x, y, z]] = (fa + draws.noise[FA_CHANNEL * nvox + flat]) as f32;
        let inside = mask.contains(p);
        for c in 0..ANATOMICAL_CHANNELS {
            let base = if inside {
                TUMOR_BASE[c]
                    + draws.offsets[c]
                    + draws.texture[c * nvox + flat]
                    + if positive { config.delta_img * TUMOR_SHIFT[c] } else { 0.0 }
            } else {
                BACKGROUND[c] + FA_COUPLING[c] * (fa - FA_BACKGROUND) + smooth(&draws.fields[c], p, shape)
            };
            data[[c, x, y, z]] = (base + draws.noise[c * nvox + flat]) as f32;
        }
    }
    let names = CHANNEL_NAMES.iter().map(|s| s.to_string()).collect();
    let volume = MultiChannelVolume::new(data, names, [1.0; 3])?;
    Ok((volume, mask))
}

/// Labels for one partition: `round(rate·size)` positives (at least one of
/// each class for labeled partitions of size ≥ 2), shuffled.
fn partition_labels(size: usize, rate: f64, labeled: bool, rng: &mut Rng) -> Vec<u8> {
    let mut pos = (rate * size as f64).round() as usize;
    if labeled && size >= 2 {
        pos = pos.clamp(1, size - 1);
    }
    let mut labels: Vec<u8> = (0..size).map(|i| u8::from(i < pos)).collect();
    labels.shuffle(rng);
    labels
}

/// Writes `cohort.json`, `atlas.json`, `config.json` and one directory per
/// patient under `out`.
pub fn generate_cohort(config: &SynthesisConfig, out: &Path) -> Result<CohortManifest> {
    config.validate()?;
    let sizes = SplitSizes::compute(config.n_patients, n_ssl(config))?;
    let atlas = generate_atlas(config)?;
    let mut rng = rng::stream(config.seed, "splits", 0);

    let mut assignments: Vec<(Split, u8)> = Vec::with_capacity(config.n_patients);
    for split in Split::ALL {
        let labels = partition_labels(sizes.get(split), config.positive_rate, split != Split::Ssl, &mut rng);
        assignments.extend(labels.into_iter().map(|l| (split, l)));
    }
    assignments.shuffle(&mut rng);

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    io::write_json(out.join("atlas.json"), &atlas)?;
    io::write_json(out.join("config.json"), config)?;
    let mut patients = Vec::with_capacity(assignments.len());
    for (i, &(split, label)) in assignments.iter().enumerate() {
        let id = format!("p{i:03}");
        let (volume, mask) = generate_patient(config, label, &atlas, i as u64)?;
        let dir = format!("patients/{id}");
        io::save_tensor(out.join(&dir).join("volume.mmgt"), &volume.data().clone().into_dyn())?;
        io::save_tensor(out.join(&dir).join("mask.mmgt"), &mask.to_u8().into_dyn())?;
        let files = BTreeMap::from([
            ("volume".to_string(), format!("{dir}/volume.mmgt")),
            ("mask".to_string(), format!("{dir}/mask.mmgt")),
        ]);
        patients.push(PatientEntry {
            id,
            label: (split != Split::Ssl).then_some(label),
            split,
            files,
        });
    }
    let manifest = CohortManifest {
        patients,
        atlas: "atlas.json".into(),
        config: "config.json".into(),
    };
    io::save_manifest(out.join("cohort.json"), &manifest)?;
    Ok(manifest)
}

/// A generated cohort loaded back from disk.
pub struct Cohort {
    pub root: std::path::PathBuf,
    pub manifest: CohortManifest,
    pub atlas: Atlas,
}

impl Cohort {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = io::load_manifest(root.join("cohort.json"))?;
        let violations = crate::types::validate_manifest(&manifest);
        if let Some(v) = violations.first() {
            return Err(Error::data(format!("invalid manifest: {v}")));
        }
        let atlas: Atlas = io::read_json(root.join(&manifest.atlas))?;
        atlas.validate()?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            atlas,
        })
    }

    pub fn load_patient(&self, entry: &PatientEntry) -> Result<(MultiChannelVolume, TumorMask)> {
        let file = |key: &str| {
            entry
                .files
                .get(key)
                .map(|f| self.root.join(f))
                .ok_or_else(|| Error::data(format!("{}: no `{key}` file in manifest", entry.id)))
        };
        let data = io::load_tensor::<f32>(file("volume")?)?
            .into_dimensionality::<ndarray::Ix4>()
            .map_err(|_| Error::data(format!("{}: volume is not rank 4", entry.id)))?;
        let c = data.dim().0;
        let names = CHANNEL_NAMES.iter().take(c).map(|s| s.to_string()).collect::<Vec<_>>();
        if names.len() != c {
            return Err(Error::data(format!("{}: unexpected channel count {c}", entry.id)));
        }
        let volume = MultiChannelVolume::new(data, names, [1.0; 3])?;
        let mask = io::load_tensor::<u8>(file("mask")?)?
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| Error::data(format!("{}: mask is not rank 3", entry.id)))?;
        let mask = TumorMask::new(mask.mapv(|v| v != 0))?;
        if mask.shape() != volume.shape() {
            return Err(Error::data(format!("{}: mask and volume shapes differ", entry.id)));
        }
        Ok((volume, mask))
    }

    pub fn patients(&self, split: Split) -> Vec<&PatientEntry> {
        self.manifest.patients_in(split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthesisConfig {
        SynthesisConfig {
            volume_shape: [16, 16, 16],
            atlas_regions: 4,
            atlas_tracts: 4,
            ..Default::default()
        }
    }

    #[test]
    fn split_arithmetic() {
        let s = SplitSizes::compute(20, 4).unwrap();
        assert_eq!((s.ssl, s.contrastive, s.classifier, s.test), (4, 6, 5, 5));
        let err = SplitSizes::compute(2, 0).unwrap_err().to_string();
        assert!(err.contains("cohort too small for 4-way split"), "{err}");
    }

    #[test]
    fn minimal_atlas() {
        let cfg = SynthesisConfig {
            atlas_regions: 2,
            atlas_tracts: 1,
            ..small()
        };
        let atlas = generate_atlas(&cfg).unwrap();
        assert_eq!(atlas.n_regions(), 2);
        assert_eq!(atlas.n_tracts(), 1);
        let tract: std::collections::HashSet<_> = atlas.tracts[0].voxels.iter().collect();
        for r in &atlas.region_voxels {
            assert!(r.iter().any(|v| tract.contains(v)));
        }
    }

    #[test]
    fn congestion_is_reported() {
        let cfg = SynthesisConfig {
            volume_shape: [8, 8, 8],
            atlas_regions: 40,
            atlas_tracts: 1,
            ..Default::default()
        };
        let err = generate_atlas(&cfg).unwrap_err().to_string();
        assert!(err.contains("atlas congestion"), "{err}");
    }

    #[test]
    fn null_effect_makes_labels_indistinguishable() {
        let cfg = SynthesisConfig {
            delta_img: 0.0,
            delta_geo: 0.0,
            delta_net: 0.0,
            ..small()
        };
        let atlas = generate_atlas(&cfg).unwrap();
        let a = generate_patient(&cfg, 0, &atlas, 3).unwrap();
        let b = generate_patient(&cfg, 1, &atlas, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_labels_keep_both_classes() {
        let mut rng = rng::stream(1, "t", 0);
        for size in 2..30 {
            let l = partition_labels(size, 0.25, true, &mut rng);
            let pos = l.iter().filter(|&&x| x == 1).count();
            assert!(pos >= 1 && pos < size);
        }
    }
}
