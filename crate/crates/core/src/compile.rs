//! WebDataset shards: one `<key>.<ext>` image plus one `<key>.json`
//! annotation per DONE patch, packed into `shard-NNNNNN.tar` files with a
//! `manifest.jsonl` sidecar (one line per shard).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoBBox;
use crate::osm::{ElementKind, OsmTag};
use crate::pipeline::{CaptionState, ImageError, ImageSource, PatchStatus, Store, StoreError};
use crate::prompt::TaskKind;

pub const DEFAULT_SAMPLES_PER_SHARD: usize = 10_000;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("samples_per_shard must be at least 1")]
    InvalidShardSize,
    #[error("corrupt shard {shard}, member {member}: {reason}")]
    CorruptShard { shard: String, member: String, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CompileError + '_ {
    move |source| CompileError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedElement {
    pub kind: ElementKind,
    pub id: i64,
    pub tags: Vec<OsmTag>,
    pub is_cropped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedCaption {
    pub caption_id: u32,
    pub task: TaskKind,
    pub revision_of: Option<u32>,
    pub text: String,
}

/// The `<key>.json` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub patch_id: String,
    pub bbox: GeoBBox,
    pub gsd: f64,
    pub capture_time: DateTime<Utc>,
    pub width_px: u32,
    pub height_px: u32,
    pub element: Option<AnnotatedElement>,
    pub captions: Vec<AnnotatedCaption>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub key: String,
    pub image_ext: String,
    pub image: Vec<u8>,
    pub annotation: Annotation,
}

impl Sample {
    pub fn annotation_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.annotation).expect("annotation serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub samples: usize,
    pub bytes: u64,
    pub first_key: String,
    pub last_key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShardManifest {
    pub shards: Vec<ShardInfo>,
}

impl ShardManifest {
    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(|s| s.samples).sum()
    }

    pub fn to_jsonl(&self) -> String {
        self.shards.iter().map(|s| serde_json::to_string(s).expect("shard info serializes") + "\n").collect()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CompileError> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let f = File::open(&path).map_err(io_err(&path))?;
        let mut shards = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            shards.push(
                serde_json::from_str(&line).map_err(|e| CompileError::Manifest(format!("line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self { shards })
    }
}

/// Sample key for a patch id. `.` separates key and extension in
/// WebDataset, so it is escaped (injectively, together with `%`).
pub fn sample_key(patch_id: &str) -> String {
    patch_id.replace('%', "%25").replace('.', "%2E")
}

fn image_ext(image_ref: &str) -> String {
    Path::new(image_ref).extension().and_then(|e| e.to_str()).unwrap_or("bin").to_ascii_lowercase()
}

/// Every DONE patch with its refined captions, sorted by key.
pub fn collect_samples(store: &Store, images: &dyn ImageSource) -> Result<Vec<Sample>, CompileError> {
    let patches = store.patches(Some(PatchStatus::Done))?;
    let mut out = patches
        .par_iter()
        .map(|p| -> Result<Sample, CompileError> {
            let captions = store
                .captions(p.patch_id())?
                .into_iter()
                .filter(|c| c.state == CaptionState::Refined)
                .map(|c| AnnotatedCaption { caption_id: c.caption_id, task: c.task, revision_of: c.revision_of, text: c.text })
                .collect();
            let element = p.selected.as_ref().map(|s| AnnotatedElement {
                kind: s.kind,
                id: s.id,
                tags: s.tags.clone(),
                is_cropped: s.is_cropped,
            });
            Ok(Sample {
                key: sample_key(p.patch_id()),
                image_ext: image_ext(&p.spec.image_ref),
                image: images.read(&p.spec.image_ref)?,
                annotation: Annotation {
                    patch_id: p.spec.patch_id.clone(),
                    bbox: p.spec.bbox,
                    gsd: p.spec.gsd_m,
                    capture_time: p.spec.capture_time,
                    width_px: p.frame.width_px,
                    height_px: p.frame.height_px,
                    element,
                    captions,
                },
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

pub fn shard_name(index: usize) -> String {
    format!("shard-{index:06}.tar")
}

fn append(builder: &mut tar::Builder<impl Write>, name: &str, data: &[u8]) -> std::io::Result<()> {
    let mut h = tar::Header::new_ustar();
    h.set_path(name)?;
    h.set_size(data.len() as u64);
    h.set_mode(0o644);
    h.set_mtime(0);
    h.set_uid(0);
    h.set_gid(0);
    h.set_entry_type(tar::EntryType::Regular);
    h.set_cksum();
    builder.append(&h, data)
}

fn write_one(path: &Path, samples: &[Sample]) -> std::io::Result<u64> {
    let tmp = path.with_extension("tar.tmp");
    let result = (|| {
        let mut builder = tar::Builder::new(BufWriter::new(File::create(&tmp)?));
        for s in samples {
            append(&mut builder, &format!("{}.{}", s.key, s.image_ext), &s.image)?;
            append(&mut builder, &format!("{}.json", s.key), &s.annotation_bytes())?;
        }
        let mut w = builder.into_inner()?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        std::fs::metadata(path).map(|m| m.len())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

/// Writes `samples` (already sorted by key) into shards under `out_dir`,
/// removes stale shards from earlier runs and writes the manifest last.
pub fn write_samples(samples: &[Sample], out_dir: &Path, per_shard: usize) -> Result<ShardManifest, CompileError> {
    if per_shard == 0 {
        return Err(CompileError::InvalidShardSize);
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let shards = samples
        .par_chunks(per_shard)
        .enumerate()
        .map(|(i, chunk)| {
            let file = shard_name(i);
            let path = out_dir.join(&file);
            let bytes = write_one(&path, chunk).map_err(io_err(&path))?;
            Ok(ShardInfo {
                file,
                samples: chunk.len(),
                bytes,
                first_key: chunk[0].key.clone(),
                last_key: chunk[chunk.len() - 1].key.clone(),
            })
        })
        .collect::<Result<Vec<_>, CompileError>>()?;
    let manifest = ShardManifest { shards };
    for entry in std::fs::read_dir(out_dir).map_err(io_err(out_dir))? {
        let name = entry.map_err(io_err(out_dir))?.file_name().to_string_lossy().into_owned();
        if name.starts_with("shard-") && name.ends_with(".tar") && !manifest.shards.iter().any(|s| s.file == name) {
            let p = out_dir.join(&name);
            std::fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    std::fs::write(&tmp, manifest.to_jsonl()).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn write_shards(
    store: &Store,
    images: &dyn ImageSource,
    out_dir: impl AsRef<Path>,
    per_shard: usize,
) -> Result<ShardManifest, CompileError> {
    let samples = collect_samples(store, images)?;
    write_samples(&samples, out_dir.as_ref(), per_shard)
}

fn read_shard(dir: &Path, info: &ShardInfo) -> Result<Vec<Sample>, CompileError> {
    let corrupt = |member: &str, reason: String| CompileError::CorruptShard {
        shard: info.file.clone(),
        member: member.to_string(),
        reason,
    };
    let path = dir.join(&info.file);
    let f = File::open(&path).map_err(|e| corrupt("-", format!("cannot open: {e}")))?;
    let mut archive = tar::Archive::new(BufReader::new(f));
    let mut members = Vec::new();
    for entry in archive.entries().map_err(|e| corrupt("-", e.to_string()))? {
        let mut entry = entry.map_err(|e| corrupt("-", e.to_string()))?;
        let name = entry.path().map_err(|e| corrupt("-", e.to_string()))?.to_string_lossy().into_owned();
        let mut data = Vec::new();
        entry.read_to_end(&mut data).map_err(|e| corrupt(&name, e.to_string()))?;
        members.push((name, data));
    }

    let mut samples = Vec::new();
    let mut it = members.into_iter();
    while let Some((img_name, image)) = it.next() {
        let (key, ext) = img_name.split_once('.').ok_or_else(|| corrupt(&img_name, "member has no extension".into()))?;
        if ext == "json" {
            return Err(corrupt(&img_name, "annotation without an image".into()));
        }
        let (ann_name, ann) = it.next().ok_or_else(|| corrupt(&img_name, "image without an annotation".into()))?;
        if ann_name != format!("{key}.json") {
            return Err(corrupt(&img_name, format!("image not followed by its annotation (found {ann_name})")));
        }
        let annotation =
            serde_json::from_slice(&ann).map_err(|e| corrupt(&ann_name, format!("bad annotation: {e}")))?;
        if let Some(prev) = samples.last().map(|s: &Sample| s.key.as_str()) {
            if prev >= key {
                return Err(corrupt(&img_name, "keys out of order".into()));
            }
        }
        samples.push(Sample { key: key.to_string(), image_ext: ext.to_string(), image, annotation });
    }
    if samples.len() != info.samples {
        return Err(corrupt("-", format!("manifest says {} samples, found {}", info.samples, samples.len())));
    }
    if let (Some(a), Some(b)) = (samples.first(), samples.last()) {
        if a.key != info.first_key || b.key != info.last_key {
            return Err(corrupt(&a.key, "key range differs from manifest".into()));
        }
    }
    Ok(samples)
}

/// Reads shards in manifest order, one shard in memory at a time.
pub fn read_shards<'a>(
    dir: &'a Path,
    manifest: &'a ShardManifest,
) -> impl Iterator<Item = Result<Sample, CompileError>> + 'a {
    let mut stray = None;
    match std::fs::read_dir(dir) {
        Ok(rd) => {
            for e in rd.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                if name.starts_with("shard-") && name.ends_with(".tar") && !manifest.shards.iter().any(|s| s.file == name)
                {
                    stray = Some(CompileError::CorruptShard {
                        shard: name.clone(),
                        member: "-".into(),
                        reason: "shard not listed in the manifest".into(),
                    });
                    break;
                }
            }
        }
        Err(e) => stray = Some(CompileError::Io { path: dir.display().to_string(), source: e }),
    }
    let head = stray.map(Err).into_iter();
    let body = manifest.shards.iter().flat_map(move |info| match read_shard(dir, info) {
        Ok(v) => v.into_iter().map(Ok).collect::<Vec<_>>(),
        Err(e) => vec![Err(e)],
    });
    head.chain(body)
}

/// Output directory layout helper.
pub fn shard_paths(dir: &Path, manifest: &ShardManifest) -> Vec<PathBuf> {
    manifest.shards.iter().map(|s| dir.join(&s.file)).collect()
}
