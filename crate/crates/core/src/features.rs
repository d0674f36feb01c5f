//! Clip-feature providers: `FEAT1` binary files and a deterministic
//! synthetic provider derived from the pose sequence.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::transformer::ClipFeatureProvider;

pub const FEAT_MAGIC: &[u8; 5] = b"FEAT1";

/// `FEAT1` bytes: magic, u32 clip count, u32 width, then f32 LE values row-major.
pub fn encode_feat1(rows: &Tensor) -> Result<Vec<u8>> {
    let (n, f) = rows.dims2()?;
    let mut out = Vec::with_capacity(13 + 4 * n * f);
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    for &v in rows.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feat1(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < FEAT_MAGIC.len() || &bytes[..FEAT_MAGIC.len()] != FEAT_MAGIC {
        return Err(Error::BadMagic { expected: "FEAT1" });
    }
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or(Error::Truncated { offset: bytes.len() })
    };
    let n = u32_at(5)? as usize;
    let f = u32_at(9)? as usize;
    if n == 0 || f == 0 {
        return Err(Error::invalid("feature file declares an empty matrix"));
    }
    let body = &bytes[13..];
    if body.len() < 4 * n * f {
        return Err(Error::Truncated { offset: bytes.len() });
    }
    let data = body[..4 * n * f]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(&[n, f], data)
}

/// Precomputed clip descriptors, one row per clip.
#[derive(Debug, Clone)]
pub struct FileClipFeatures {
    rows: Tensor,
}

impl FileClipFeatures {
    pub fn new(rows: Tensor) -> Result<Self> {
        rows.dims2()?;
        Ok(FileClipFeatures { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::new(decode_feat1(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_feat1(&self.rows)?).map_err(|e| Error::io(path, e))
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }
}

impl ClipFeatureProvider for FileClipFeatures {
    fn feature_dim(&self) -> usize {
        self.rows.shape()[1]
    }

    fn clip_features(&self, clip: usize, _start: usize, _len: usize) -> Result<Tensor> {
        let n = self.rows.shape()[0];
        if clip >= n {
            return Err(Error::invalid(format!(
                "feature file holds {n} clips but clip {clip} was requested"
            )));
        }
        self.rows.slice(0, clip, 1)
    }
}

/// Frames per sub-step of the synthetic provider.
pub const SUBSTEP_FRAMES: usize = 4;

/// Stand-in for a pretrained clip network: frames are pooled in groups of
/// [`SUBSTEP_FRAMES`], each group's flattened pose is projected through a
/// fixed seeded random matrix and squashed with `tanh`.
#[derive(Debug, Clone)]
pub struct SyntheticClipFeatures<'a> {
    frames: &'a Tensor,
    projection: Tensor,
}

/// The seeded `[input × dim]` projection shared by every sample.
pub fn synthetic_projection(input: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c11b);
    let scale = 1.0 / (input as f64).sqrt();
    Tensor::from_fn(&[input, dim], |_| rng.gen_range(-1.0..1.0) * scale * 3.0)
}

impl<'a> SyntheticClipFeatures<'a> {
    /// `pose` is `[T × N × C]`; `projection` is `[N·C × F]`.
    pub fn new(pose: &'a Tensor, projection: Tensor) -> Result<Self> {
        let (_, n, c) = pose.dims3()?;
        let (rows, _) = projection.dims2()?;
        if rows != n * c {
            return Err(Error::shape("synthetic features", pose.shape(), projection.shape()));
        }
        Ok(SyntheticClipFeatures {
            frames: pose,
            projection,
        })
    }
}

impl ClipFeatureProvider for SyntheticClipFeatures<'_> {
    fn feature_dim(&self) -> usize {
        self.projection.shape()[1]
    }

    fn clip_features(&self, _clip: usize, start: usize, len: usize) -> Result<Tensor> {
        let (t, n, c) = self.frames.dims3()?;
        if start + len > t || len == 0 {
            return Err(Error::invalid(format!(
                "clip frames {start}..{} outside a {t}-frame sequence",
                start + len
            )));
        }
        let width = n * c;
        let groups = len.div_ceil(SUBSTEP_FRAMES);
        let mut pooled = vec![0.0; groups * width];
        for gi in 0..groups {
            let lo = start + gi * SUBSTEP_FRAMES;
            let hi = (lo + SUBSTEP_FRAMES).min(start + len);
            let row = &mut pooled[gi * width..(gi + 1) * width];
            for f in lo..hi {
                for (r, x) in row.iter_mut().zip(&self.frames.data()[f * width..(f + 1) * width]) {
                    *r += x;
                }
            }
            let k = (hi - lo) as f64;
            row.iter_mut().for_each(|r| *r /= k);
        }
        let pooled = Tensor::new(&[groups, width], pooled)?;
        Ok(pooled.matmul(&self.projection)?.map(f64::tanh))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feat1_roundtrip_and_errors() {
        let rows = Tensor::from_fn(&[3, 5], |i| i as f64 * 0.25);
        let bytes = encode_feat1(&rows).unwrap();
        assert_eq!(decode_feat1(&bytes).unwrap(), rows);
        assert!(matches!(decode_feat1(b"FEAT2xxxxxxxx"), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_feat1(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn synthetic_clip_rows() {
        let pose = Tensor::from_fn(&[20, 33, 3], |i| (i as f64 * 0.01).cos());
        let p = SyntheticClipFeatures::new(&pose, synthetic_projection(99, 8, 1)).unwrap();
        let f = p.clip_features(0, 0, 16).unwrap();
        assert_eq!(f.shape(), &[4, 8]);
        assert!(f.data().iter().all(|v| v.abs() < 1.0));
        assert!(p.clip_features(1, 8, 16).is_err());
    }
}
