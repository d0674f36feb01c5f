//! Keypoint files and dataset manifests.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::skelgraph::POSE_JOINTS;

const COORDS: usize = 3;

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses `frame_index x0 y0 z0 … x32 y32 z32` lines into `[T×33×3]`.
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_keypoints(text: &str, path: &Path) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut frames = 0;
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let index = fields.next().expect("non-empty line has a field");
        index
            .parse::<u64>()
            .map_err(|_| parse_error(path, lineno, format!("frame index {index:?} is not an integer")))?;
        let mut coords = Vec::with_capacity(POSE_JOINTS * COORDS);
        for (col, f) in fields.enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                parse_error(path, lineno, format!("field {} ({f:?}) is not a number", col + 2))
            })?;
            if !v.is_finite() {
                return Err(parse_error(path, lineno, format!("field {} is not finite", col + 2)));
            }
            coords.push(v);
        }
        if coords.len() % COORDS != 0 {
            return Err(parse_error(
                path,
                lineno,
                format!("{} coordinates is not a whole number of joints", coords.len()),
            ));
        }
        if coords.len() != POSE_JOINTS * COORDS {
            return Err(Error::JointCount {
                path: path.to_path_buf(),
                frame: frames,
                found: coords.len() / COORDS,
            });
        }
        data.extend(coords);
        frames += 1;
    }
    if frames == 0 {
        return Err(parse_error(path, 0, "no frames"));
    }
    Tensor::new(&[frames, POSE_JOINTS, COORDS], data)
}

pub fn load_keypoints(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text, path)
}

pub fn format_keypoints(pose: &Tensor) -> Result<String> {
    let (t, j, c) = pose.dims3()?;
    if j != POSE_JOINTS || c != COORDS {
        return Err(Error::shape("keypoint file", pose.shape(), &[t, POSE_JOINTS, COORDS]));
    }
    let mut s = String::new();
    for f in 0..t {
        let _ = write!(s, "{f}");
        for v in &pose.data()[f * j * c..(f + 1) * j * c] {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn save_keypoints(path: &Path, pose: &Tensor) -> Result<()> {
    std::fs::write(path, format_keypoints(pose)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub keypoints: PathBuf,
    pub features: Option<PathBuf>,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Parses `id<TAB>keypoints<TAB>features-or-dash<TAB>text` lines. Relative
    /// paths resolve against `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            if fields.len() != 4 {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(parse_error(path, lineno, "empty id"));
            }
            if !seen.insert(id.to_string()) {
                return Err(Error::DuplicateId {
                    path: path.to_path_buf(),
                    line: lineno,
                    id: id.to_string(),
                });
            }
            let resolve = |p: &str| -> Result<PathBuf> {
                let full = base.join(p.trim());
                if !full.is_file() {
                    return Err(parse_error(
                        path,
                        lineno,
                        format!("referenced file {} does not exist", full.display()),
                    ));
                }
                Ok(full)
            };
            let keypoints = resolve(fields[1])?;
            let features = match fields[2].trim() {
                "-" | "" => None,
                f => Some(resolve(f)?),
            };
            records.push(ManifestRecord {
                id: id.to_string(),
                keypoints,
                features,
                text: fields[3].trim().to_string(),
            });
        }
        Ok(Manifest { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let feats = r
                .features
                .as_ref()
                .map_or("-".to_string(), |p| p.display().to_string());
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.id, r.keypoints.display(), feats, r.text);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One sentence per line, trailing newline characters stripped.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}
