//! Deterministic toy corpus: short weather sentences paired with pose
//! sequences whose motion is a function of the words.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{save_keypoints, Manifest, ManifestRecord};
use crate::numerics::Tensor;
use crate::pipeline::Sample;
use crate::skelgraph::POSE_JOINTS;

const WHEN: [&str; 6] = ["heute", "morgen", "im norden", "im süden", "in der nacht", "am tag"];
const WHAT: [&str; 6] = [
    "regnet es",
    "scheint die sonne",
    "gibt es schauer",
    "ist es windig",
    "bleibt es trocken",
    "schneit es",
];
const TAIL: [&str; 4] = ["", "und es wird kalt", "und es wird warm", "bei mildem wind"];

/// `n` distinct sentences, in a seed-dependent order.
pub fn synthetic_sentences(n: usize, seed: u64) -> Result<Vec<String>> {
    let mut all = Vec::new();
    for w in WHEN {
        for x in WHAT {
            for t in TAIL {
                let s = format!("{w} {x} {t}");
                all.push(s.trim().to_string());
            }
        }
    }
    if n > all.len() {
        return Err(Error::invalid(format!(
            "the synthetic grammar has only {} sentences",
            all.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(n);
    Ok(all)
}

fn word_hash(w: &str) -> u64 {
    w.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// `[frames × 33 × 3]` pose whose joints oscillate with word-specific
/// frequencies and phases around a fixed rest pose, plus seeded jitter.
pub fn synthetic_pose(sentence: &str, frames: usize, seed: u64) -> Result<Tensor> {
    if frames == 0 {
        return Err(Error::invalid("pose needs at least one frame"));
    }
    let mut rest_rng = ChaCha8Rng::seed_from_u64(0x9e57);
    let rest: Vec<f64> = (0..POSE_JOINTS * 3).map(|_| rest_rng.gen_range(0.2..0.8)).collect();
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let mut jitter = ChaCha8Rng::seed_from_u64(seed ^ word_hash(sentence));
    let mut data = Vec::with_capacity(frames * POSE_JOINTS * 3);
    for t in 0..frames {
        for (k, &r) in rest.iter().enumerate() {
            let mut v = r;
            for (pos, w) in words.iter().enumerate() {
                let h = word_hash(w) ^ (k as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
                let freq = 1.0 + (h % 5) as f64;
                let phase = ((h >> 8) % 628) as f64 / 100.0 + pos as f64 * 0.7;
                let amp = 0.05 + ((h >> 20) % 4) as f64 * 0.03;
                v += amp * (std::f64::consts::TAU * freq * t as f64 / frames as f64 + phase).sin();
            }
            v += jitter.gen_range(-0.002..0.002);
            data.push(v);
        }
    }
    Tensor::new(&[frames, POSE_JOINTS, 3], data)
}

pub fn synthetic_corpus(n: usize, frames: usize, seed: u64) -> Result<Vec<Sample>> {
    synthetic_sentences(n, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            Ok(Sample {
                id: format!("syn{i:03}"),
                keypoints: synthetic_pose(&text, frames, seed)?,
                features: None,
                text,
            })
        })
        .collect()
}

/// Writes keypoint files and `manifest.tsv` under `dir`; returns the manifest path.
pub fn write_synthetic_dataset(dir: &Path, n: usize, frames: usize, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::default();
    for s in synthetic_corpus(n, frames, seed)? {
        let file = format!("{}.kp", s.id);
        save_keypoints(&dir.join(&file), &s.keypoints)?;
        manifest.records.push(ManifestRecord {
            id: s.id,
            keypoints: PathBuf::from(file),
            features: None,
            text: s.text,
        });
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest.to_file_string()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
