//! Binary tensor container and JSON helpers.
//!
//! Layout: `MMGT`, version byte, dtype byte (1 = f32, 2 = u8), rank byte,
//! one reserved byte, `rank` little-endian u64 dims, then the row-major
//! little-endian payload.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::CohortManifest;
use mmgt_autograd::ParamStore;

pub const MAGIC: &[u8; 4] = b"MMGT";
pub const VERSION: u8 = 1;
const HEADER: usize = 8;

/// Element types storable in the container.
pub trait Element: Copy + Default + 'static {
    const DTYPE: u8;
    const SIZE: usize;
    fn check(&self) -> bool;
    fn write(&self, out: &mut Vec<u8>);
    fn read(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: u8 = 1;
    const SIZE: usize = 4;
    fn check(&self) -> bool {
        self.is_finite()
    }
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Element for u8 {
    const DTYPE: u8 = 2;
    const SIZE: usize = 1;
    fn check(&self) -> bool {
        true
    }
    fn write(&self, out: &mut Vec<u8>) {
        out.push(*self);
    }
    fn read(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

pub fn encode<T: Element>(array: &ArrayD<T>) -> Result<Vec<u8>> {
    if array.ndim() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} too large", array.ndim())));
    }
    if !array.iter().all(Element::check) {
        return Err(Error::data("refusing to store a tensor with NaN/Inf entries"));
    }
    let mut out = Vec::with_capacity(HEADER + 8 * array.ndim() + T::SIZE * array.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, T::DTYPE, array.ndim() as u8, 0]);
    for &d in array.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    // iter() walks in logical row-major order regardless of memory layout
    for v in array.iter() {
        v.write(&mut out);
    }
    Ok(out)
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<ArrayD<T>> {
    if bytes.len() < HEADER {
        return Err(Error::Format("header truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != T::DTYPE {
        return Err(Error::Format(format!(
            "dtype mismatch: file has code {}, expected {}",
            bytes[5],
            T::DTYPE
        )));
    }
    let rank = bytes[6] as usize;
    let dims_end = HEADER + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Format("dimension block truncated".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for r in 0..rank {
        let d = u64::from_le_bytes(bytes[HEADER + 8 * r..HEADER + 8 * r + 8].try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflow".into()))?;
    let payload = &bytes[dims_end..];
    if payload.len() != count * T::SIZE {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            count * T::SIZE
        )));
    }
    let values: Vec<T> = payload.chunks_exact(T::SIZE).map(T::read).collect();
    if !values.iter().all(Element::check) {
        return Err(Error::data("tensor payload contains NaN/Inf"));
    }
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), values).expect("shape checked"))
}

pub fn save_tensor<T: Element>(path: impl AsRef<Path>, array: &ArrayD<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(array)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Element>(path: impl AsRef<Path>) -> Result<ArrayD<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Pretty JSON with a trailing newline; key order follows struct order, so
/// the bytes are stable across runs.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &CohortManifest) -> Result<()> {
    write_json(path, manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    read_json(path)
}

/// Writes every parameter of `store` as `<name>.mmgt` (f32) under `dir`,
/// plus `descriptor.json` holding `architecture` and the parameter list.
pub fn save_params(dir: impl AsRef<Path>, store: &ParamStore, architecture: &serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::with_capacity(store.len());
    for (_, name, value) in store.iter() {
        save_tensor(dir.join(format!("{name}.mmgt")), &value.mapv(|v| v as f32).into_dyn())?;
        params.push(serde_json::json!({ "name": name, "shape": [value.nrows(), value.ncols()] }));
    }
    write_json(
        dir.join("descriptor.json"),
        &serde_json::json!({ "architecture": architecture, "params": params }),
    )
}

/// Overwrites every parameter of `store` from a directory written by
/// [`save_params`] and returns the stored architecture descriptor.
pub fn load_params(dir: impl AsRef<Path>, store: &mut ParamStore) -> Result<serde_json::Value> {
    let dir = dir.as_ref();
    let descriptor: serde_json::Value = read_json(dir.join("descriptor.json"))?;
    let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
    for name in names {
        let t = load_tensor::<f32>(dir.join(format!("{name}.mmgt")))?;
        let m = t
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| Error::data(format!("{name}: parameter tensor is not rank 2")))?;
        store
            .assign(&name, m.mapv(f64::from))
            .map_err(|e| Error::data(format!("{}: {e}", dir.display())))?;
    }
    Ok(descriptor.get("architecture").cloned().unwrap_or(serde_json::Value::Null))
}

/// Rounds every parameter to f32 precision, so an in-memory model equals
/// the one a checkpoint reload would produce.
/// Rounds trained parameters to storage precision; values that overflow
/// `f32` count as divergence at `epoch`.
pub fn finish_training(store: &mut ParamStore, stage: &str, epoch: usize) -> Result<()> {
    if store.ids().any(|id| store.get(id).iter().any(|&v| !(v as f32).is_finite())) {
        return Err(Error::Divergence {
            stage: stage.into(),
            epoch,
        });
    }
    round_params(store);
    Ok(())
}

pub fn round_params(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).mapv_inplace(|v| v as f32 as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, Array};

    #[test]
    fn zeros_2x2_has_header_plus_16_bytes() {
        let a = ArrayD::<f32>::zeros(IxDyn(&[2, 2]));
        let bytes = encode(&a).unwrap();
        assert_eq!(bytes.len(), HEADER + 2 * 8 + 16);
        assert_eq!(decode::<f32>(&bytes).unwrap(), a);
    }

    #[test]
    fn ramp_round_trips_exactly() {
        let a = Array::from_shape_fn((3, 4, 5), |(i, j, k)| ((i * 20 + j * 5 + k) as f32) * 0.5).into_dyn();
        assert_eq!(decode::<f32>(&encode(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn rank_zero_scalar() {
        let a = arr0(7.0f32).into_dyn();
        let bytes = encode(&a).unwrap();
        assert_eq!(bytes.len(), HEADER + 4);
        let b = decode::<f32>(&bytes).unwrap();
        assert_eq!(b.ndim(), 0);
        assert_eq!(b.iter().next(), Some(&7.0));
    }

    #[test]
    fn header_bytes_are_as_documented() {
        let a = Array::from_elem((3, 1), 1u8).into_dyn();
        let bytes = encode(&a).unwrap();
        assert_eq!(&bytes[..8], &[b'M', b'M', b'G', b'T', 1, 2, 2, 0]);
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..], &[1, 1, 1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let nan = Array::from_elem((2,), f32::NAN).into_dyn();
        assert!(matches!(encode(&nan), Err(Error::Data(_))));
        let good = encode(&Array::from_elem((2, 3), 1.0f32).into_dyn()).unwrap();
        assert!(matches!(decode::<f32>(&good[..good.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode::<f32>(&good[..10]), Err(Error::Format(_))));
        assert!(matches!(decode::<u8>(&good), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f32>(&bad), Err(Error::Format(_))));
    }
}
