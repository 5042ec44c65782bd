//! Local image store: a directory with `index.tsv` and one file per patch.
//!
//! `index.tsv` columns: `patch_id, min_lon, min_lat, max_lon, max_lat,
//! gsd_m, capture_time` (RFC 3339). A header line starting with `patch_id`
//! and `#` comments are skipped. Images are `<patch_id>.<ext>`.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use thiserror::Error;

use super::store::PatchSpec;
use crate::geo::GeoBBox;

pub const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "tif", "tiff", "webp", "ppm"];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("index line {line}: {reason}")]
    Index { line: usize, reason: String },
    #[error("no image file for patch {0}")]
    Missing(String),
}

pub trait ImageSource: Send + Sync {
    fn patches(&self) -> Result<Vec<PatchSpec>, ImageError>;
    fn read(&self, image_ref: &str) -> Result<Vec<u8>, ImageError>;
}

#[derive(Debug, Clone)]
pub struct DirImageSource {
    root: PathBuf,
}

impl DirImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn find_image(&self, patch_id: &str) -> Option<String> {
        IMAGE_EXTENSIONS.iter().map(|ext| format!("{patch_id}.{ext}")).find(|name| self.root.join(name).is_file())
    }
}

fn parse_index_line(line: &str, line_no: usize) -> Result<(String, GeoBBox, f64, DateTime<Utc>), ImageError> {
    let bad = |reason: String| ImageError::Index { line: line_no, reason };
    let f: Vec<&str> = line.split('\t').map(str::trim).collect();
    if f.len() != 7 {
        return Err(bad(format!("expected 7 fields, found {}", f.len())));
    }
    let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", f[i])));
    let bbox = GeoBBox::new(num(1)?, num(2)?, num(3)?, num(4)?);
    if !bbox.is_valid() {
        return Err(bad("invalid bounding box".into()));
    }
    let gsd = num(5)?;
    let t = DateTime::parse_from_rfc3339(f[6]).map_err(|e| bad(format!("bad capture time: {e}")))?;
    if f[0].is_empty() || f[0].contains(['/', '\\']) {
        return Err(bad(format!("bad patch id {:?}", f[0])));
    }
    Ok((f[0].to_string(), bbox, gsd, t.with_timezone(&Utc)))
}

impl ImageSource for DirImageSource {
    fn patches(&self) -> Result<Vec<PatchSpec>, ImageError> {
        let path = self.root.join("index.tsv");
        let text = std::fs::read_to_string(&path)
            .map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') || line.starts_with("patch_id\t") {
                continue;
            }
            let (patch_id, bbox, gsd_m, capture_time) = parse_index_line(line, i + 1)?;
            let image_ref = self.find_image(&patch_id).ok_or_else(|| ImageError::Missing(patch_id.clone()))?;
            out.push(PatchSpec { patch_id, bbox, gsd_m, capture_time, image_ref });
        }
        Ok(out)
    }

    fn read(&self, image_ref: &str) -> Result<Vec<u8>, ImageError> {
        let path = self.root.join(image_ref);
        std::fs::read(&path).map_err(|source| ImageError::Io { path: path.display().to_string(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_index_and_images() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("index.tsv"),
            "patch_id\tmin_lon\tmin_lat\tmax_lon\tmax_lat\tgsd_m\tcapture_time\n\
             p1\t0\t0\t0.0024\t0.0024\t0.6\t2021-08-01T00:00:00Z\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("p1.png"), b"img").unwrap();
        let src = DirImageSource::new(dir.path());
        let p = src.patches().unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].image_ref, "p1.png");
        assert_eq!(src.read("p1.png").unwrap(), b"img");
    }

    #[test]
    fn missing_image_and_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("index.tsv"), "p1\t0\t0\t1\t1\t0.6\t2021-08-01T00:00:00Z\n").unwrap();
        assert!(matches!(DirImageSource::new(dir.path()).patches(), Err(ImageError::Missing(_))));
        std::fs::write(dir.path().join("index.tsv"), "p1\t0\t0\t1\n").unwrap();
        assert!(matches!(DirImageSource::new(dir.path()).patches(), Err(ImageError::Index { line: 1, .. })));
    }
}
