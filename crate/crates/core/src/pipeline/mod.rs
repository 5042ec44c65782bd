//! The resumable pipeline: fetch, caption, augment and refine stages over a
//! persistent status store.
//!
//! Patches move NEW → OSM_FETCHED → UNUSABLE | CAPTIONED → DONE. Workers
//! claim one patch at a time under a lease; every random choice is seeded
//! from the run seed, the patch id and a per-patch attempt counter kept in
//! the store, so results do not depend on worker scheduling and an
//! interrupted run picks up exactly where it stopped.

mod images;
mod store;

use std::sync::atomic::{AtomicBool, AtomicI64, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use images::{DirImageSource, ImageError, ImageSource, IMAGE_EXTENSIONS};
pub use store::{
    CaptionRecord, CaptionState, CaptionUpdate, Claim, PatchRecord, PatchSpec, PatchStatus, SelectedElement, Store,
    StoreError,
};

use crate::geometry::{area_attributes, nonarea_attributes, AttributeParams, GeometryError, PatchFrame};
use crate::llm::{CompletionBackend, CompletionRequest, SamplingParams};
use crate::osm::{
    fetch_patch_elements, one_month_after, select_area_element, select_nonarea_element, OverpassBackend,
    PatchContext, SelectionParams,
};
use crate::prompt::{
    assemble_task1, assemble_task2, assemble_task3, sample_task3_examples, MetaExampleSet, TaskKind, TemplateSet,
};
use crate::refine::{dedupe_captions, fix_caption_with, RefineAction, DEFAULT_MARKERS};
use crate::tagwiki::WikiDb;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Images(#[from] ImageError),
    #[error("patch {patch_id}: {source}")]
    Frame { patch_id: String, source: GeometryError },
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
pub struct ManualClock {
    ms: AtomicI64,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self { ms: AtomicI64::new(start.timestamp_millis()) }
    }

    pub fn advance(&self, by: Duration) {
        self.ms.fetch_add(by.num_milliseconds(), Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.ms.load(Ordering::SeqCst)).single().unwrap_or_default()
    }
}

/// Seed for one random decision about one patch.
pub fn derive_seed(seed: u64, patch_id: &str, purpose: &str, n: u32) -> u64 {
    let mut d = Sha256::new();
    d.update(seed.to_le_bytes());
    d.update(patch_id.as_bytes());
    d.update([0]);
    d.update(purpose.as_bytes());
    d.update([0]);
    d.update(n.to_le_bytes());
    u64::from_le_bytes(d.finalize()[..8].try_into().unwrap())
}

/// How many captions (raw plus revisions) a patch should end up with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetDistribution {
    pub two_probability: f64,
    pub min_more: u32,
    pub max_more: u32,
}

impl Default for TargetDistribution {
    fn default() -> Self {
        Self { two_probability: 0.88, min_more: 3, max_more: 5 }
    }
}

impl TargetDistribution {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.two_probability) {
            return Err(format!("two_probability {} outside [0, 1]", self.two_probability));
        }
        if !(2 < self.min_more && self.min_more <= self.max_more && self.max_more <= 5) {
            return Err(format!("need 2 < min_more <= max_more <= 5, got {}..={}", self.min_more, self.max_more));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if rng.gen::<f64>() < self.two_probability {
            2
        } else {
            rng.gen_range(self.min_more..=self.max_more)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub seed: u64,
    pub workers: usize,
    /// Patches claimed per stage run; `None` means all eligible.
    pub batch: Option<usize>,
    pub lease_secs: u64,
    /// Raw caption attempts, and revisions generated, per patch.
    pub max_caption_attempts: u32,
    pub targets: TargetDistribution,
    pub selection: SelectionParams,
    pub attributes: AttributeParams,
    pub markers: Vec<String>,
    pub sampling: SamplingParams,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            batch: None,
            lease_secs: 600,
            max_caption_attempts: 10,
            targets: TargetDistribution::default(),
            selection: SelectionParams::default(),
            attributes: AttributeParams::default(),
            markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            sampling: SamplingParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fetch,
    Caption,
    Augment,
    Refine,
}

/// One line of progress output per stage run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Option<Stage>,
    pub processed: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub unusable: usize,
    pub regressed: usize,
    pub captions_added: usize,
    pub errors: Vec<String>,
}

impl StageReport {
    /// Whether the stage changed anything.
    pub fn progressed(&self) -> bool {
        self.succeeded + self.unusable + self.captions_added > 0
    }
}

enum Outcome {
    Succeeded { captions: usize },
    Unusable,
    Regressed,
    /// Recorded its own failure and kept the lease.
    Deferred(String),
    /// Some captions were added but the patch is not finished.
    Partial { captions: usize, error: String },
}

enum PatchError {
    Store(StoreError),
    Failed(String),
}

impl From<StoreError> for PatchError {
    fn from(e: StoreError) -> Self {
        PatchError::Store(e)
    }
}

/// Registers every patch of the image source as NEW. Returns how many were
/// new to the store.
pub fn register_patches(store: &Store, images: &dyn ImageSource) -> Result<usize, PipelineError> {
    let mut added = 0;
    for spec in images.patches()? {
        let (frame, _) = PatchFrame::from_geo(&spec.bbox, spec.gsd_m, spec.capture_time)
            .map_err(|source| PipelineError::Frame { patch_id: spec.patch_id.clone(), source })?;
        added += store.register_patch(&spec, &frame)? as usize;
    }
    Ok(added)
}

pub struct Pipeline<'a> {
    pub store: &'a Store,
    pub settings: &'a PipelineSettings,
    pub clock: &'a dyn Clock,
}

impl<'a> Pipeline<'a> {
    pub fn new(store: &'a Store, settings: &'a PipelineSettings, clock: &'a dyn Clock) -> Self {
        Self { store, settings, clock }
    }

    fn run_stage(
        &self,
        stage: Stage,
        claim: Claim,
        work: &(dyn Fn(&PatchRecord) -> Result<Outcome, PatchError> + Sync),
    ) -> Result<StageReport, StoreError> {
        let report = Mutex::new(StageReport { stage: Some(stage), ..Default::default() });
        let fatal: Mutex<Option<StoreError>> = Mutex::new(None);
        let abort = AtomicBool::new(false);
        let slots = AtomicUsize::new(0);
        let limit = self.settings.batch.unwrap_or(usize::MAX);
        let lease_ms = (self.settings.lease_secs as i64).saturating_mul(1000);
        let fail = |e: StoreError| {
            abort.store(true, Ordering::SeqCst);
            fatal.lock().unwrap().get_or_insert(e);
        };
        std::thread::scope(|s| {
            for _ in 0..self.settings.workers.max(1) {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) || slots.fetch_add(1, Ordering::SeqCst) >= limit {
                        break;
                    }
                    let now = self.clock.now().timestamp_millis();
                    let rec = match self.store.claim(claim, now, now.saturating_add(lease_ms)) {
                        Ok(Some(r)) => r,
                        Ok(None) => break,
                        Err(e) => {
                            fail(e);
                            break;
                        }
                    };
                    let id = rec.patch_id().to_string();
                    let result = work(&rec);
                    let mut r = report.lock().unwrap();
                    r.processed += 1;
                    match result {
                        Ok(Outcome::Succeeded { captions }) => {
                            r.succeeded += 1;
                            r.captions_added += captions;
                        }
                        Ok(Outcome::Unusable) => r.unusable += 1,
                        Ok(Outcome::Regressed) => r.regressed += 1,
                        Ok(Outcome::Deferred(msg)) => {
                            r.failed += 1;
                            r.errors.push(format!("{id}: {msg}"));
                        }
                        Ok(Outcome::Partial { captions, error }) => {
                            r.failed += 1;
                            r.captions_added += captions;
                            r.errors.push(format!("{id}: {error}"));
                        }
                        Err(PatchError::Failed(msg)) => {
                            r.failed += 1;
                            r.errors.push(format!("{id}: {msg}"));
                            drop(r);
                            log::warn!("{stage:?} failed for {id}: {msg}");
                            if let Err(e) = self.store.record_failure(&id, &msg, false) {
                                fail(e);
                                break;
                            }
                        }
                        Err(PatchError::Store(e)) => {
                            drop(r);
                            fail(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = fatal.into_inner().unwrap() {
            return Err(e);
        }
        let mut report = report.into_inner().unwrap();
        report.errors.sort();
        Ok(report)
    }

    /// Issues both Overpass queries for every NEW patch and caches the merged
    /// elements.
    pub fn run_fetch(&self, osm: &dyn OverpassBackend) -> Result<StageReport, StoreError> {
        self.run_stage(Stage::Fetch, Claim::Fetch, &|rec| {
            let as_of = one_month_after(rec.spec.capture_time);
            let elements = fetch_patch_elements(osm, &rec.spec.bbox, as_of, self.clock.now())
                .map_err(|e| PatchError::Failed(e.to_string()))?;
            self.store.complete_fetch(rec.patch_id(), &elements)?;
            Ok(Outcome::Succeeded { captions: 0 })
        })
    }

    /// Picks the element to describe and stores the raw caption. Task 1 is
    /// used when an area element qualifies, Task 2 otherwise.
    pub fn run_caption(
        &self,
        llm: &dyn CompletionBackend,
        wiki: &WikiDb,
        templates: &TemplateSet,
    ) -> Result<StageReport, StoreError> {
        let st = self.settings;
        self.run_stage(Stage::Caption, Claim::Caption { max_attempts: st.max_caption_attempts }, &|rec| {
            let id = rec.patch_id();
            let elements = self
                .store
                .cached_elements(id)?
                .ok_or_else(|| PatchError::Failed("no cached OSM elements".into()))?;
            let ctx = PatchContext::from_geo(&rec.spec.bbox, rec.spec.gsd_m, rec.spec.capture_time)
                .map_err(|e| PatchError::Failed(e.to_string()))?;
            let (prompt, selected) = if let Some(a) = select_area_element(&elements, &ctx, &st.selection) {
                let attrs = area_attributes(&a.rings, a.is_cropped, &st.attributes);
                let prompt = assemble_task1(&attrs, &wiki.interpret_all(&a.element.tags), &templates.task1);
                (prompt, selected_of(a.element, TaskKind::Task1, a.is_cropped))
            } else if let Some(l) = select_nonarea_element(&elements, &ctx, &st.selection) {
                let attrs = nonarea_attributes(&l.path, &ctx.frame, l.is_cropped, &st.attributes)
                    .map_err(|e| PatchError::Failed(e.to_string()))?;
                let prompt = assemble_task2(&attrs, &wiki.interpret_all(&l.element.tags), &templates.task2);
                (prompt, selected_of(l.element, TaskKind::Task2, l.is_cropped))
            } else {
                self.store.mark_unusable(id)?;
                return Ok(Outcome::Unusable);
            };
            let prompt = prompt.map_err(|e| PatchError::Failed(e.to_string()))?;
            let seed = derive_seed(st.seed, id, "caption", rec.caption_attempts);
            let resp = llm
                .complete(&CompletionRequest::new(prompt, &st.sampling).with_seed(seed))
                .map_err(|e| PatchError::Failed(e.to_string()))?;
            if fix_caption_with(&resp.text, &st.markers).action == RefineAction::Deleted {
                self.store.record_failure(id, "blank caption", true)?;
                return Ok(Outcome::Deferred("blank caption".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(st.seed, id, "target", 0));
            let target = st.targets.sample(&mut rng);
            self.store.complete_caption(id, &selected, target, &resp.text, &resp.text)?;
            Ok(Outcome::Succeeded { captions: 1 })
        })
    }

    /// Generates Task 3 revisions until each claimed patch reaches its target
    /// caption count or runs out of attempts.
    pub fn run_augment(
        &self,
        llm: &dyn CompletionBackend,
        meta: &MetaExampleSet,
        templates: &TemplateSet,
    ) -> Result<StageReport, StoreError> {
        let st = self.settings;
        self.run_stage(Stage::Augment, Claim::Augment { max_attempts: st.max_caption_attempts }, &|rec| {
            let id = rec.patch_id();
            let caps = self.store.captions(id)?;
            let raw = caps.iter().find(|c| c.caption_id == 0).ok_or_else(|| PatchError::Failed("no raw caption".into()))?;
            let raw_text = fix_caption_with(&raw.text, &st.markers)
                .text
                .ok_or_else(|| PatchError::Failed("raw caption is blank".into()))?;
            let target = rec.target_count.unwrap_or(2) as usize;
            let mut live = caps.iter().filter(|c| c.state != CaptionState::Deleted).count();
            let mut attempts = rec.augment_attempts;
            let mut added = 0;
            while live < target && attempts < st.max_caption_attempts {
                let seed = derive_seed(st.seed, id, "augment", attempts);
                let examples = sample_task3_examples(meta, raw.task, &mut ChaCha8Rng::seed_from_u64(seed));
                let prompt =
                    assemble_task3(&raw_text, &examples, &templates.task3).map_err(|e| PatchError::Failed(e.to_string()))?;
                let resp = match llm.complete(&CompletionRequest::new(prompt, &st.sampling).with_seed(seed)) {
                    Ok(r) => r,
                    Err(e) if added == 0 => return Err(PatchError::Failed(e.to_string())),
                    Err(e) => {
                        self.store.record_failure(id, &e.to_string(), false)?;
                        return Ok(Outcome::Partial { captions: added, error: e.to_string() });
                    }
                };
                live += 1;
                attempts += 1;
                added += 1;
                let done = live >= target || attempts >= st.max_caption_attempts;
                self.store.add_revision(id, &resp.text, done)?;
            }
            Ok(Outcome::Succeeded { captions: added })
        })
    }

    /// Cleans every caption of patches whose caption set is complete. Two or
    /// more survivors make the patch DONE; otherwise it stays CAPTIONED and
    /// goes back to augmentation.
    pub fn run_refine(&self) -> Result<StageReport, StoreError> {
        let st = self.settings;
        self.run_stage(Stage::Refine, Claim::Refine { max_attempts: st.max_caption_attempts }, &|rec| {
            let id = rec.patch_id();
            let caps = self.store.captions(id)?;
            let mut updates = Vec::new();
            let mut survivors: Vec<(u32, String)> = Vec::new();
            for c in caps.iter().filter(|c| c.state != CaptionState::Deleted) {
                let out = fix_caption_with(&c.text, &st.markers);
                match out.text {
                    Some(t) => survivors.push((c.caption_id, t)),
                    None => updates.push(CaptionUpdate {
                        caption_id: c.caption_id,
                        state: CaptionState::Deleted,
                        text: c.text.clone(),
                    }),
                }
            }
            let texts: Vec<&str> = survivors.iter().map(|(_, t)| t.as_str()).collect();
            let dupes = dedupe_captions(&texts);
            let mut kept = 0;
            for (i, (cid, text)) in survivors.iter().enumerate() {
                let state = if dupes.contains(&i) {
                    CaptionState::Deleted
                } else {
                    kept += 1;
                    CaptionState::Refined
                };
                updates.push(CaptionUpdate { caption_id: *cid, state, text: text.clone() });
            }
            updates.sort_by_key(|u| u.caption_id);
            let status = if kept >= 2 { PatchStatus::Done } else { PatchStatus::Captioned };
            self.store.apply_refine(id, &updates, status)?;
            Ok(if status == PatchStatus::Done { Outcome::Succeeded { captions: 0 } } else { Outcome::Regressed })
        })
    }
}

fn selected_of(e: &crate::osm::OsmElement, task: TaskKind, is_cropped: bool) -> SelectedElement {
    SelectedElement { kind: e.kind, id: e.id, task, tags: e.tags.clone(), is_cropped }
}

/// Everything the stages need besides the store.
pub struct Resources<'a> {
    pub osm: &'a dyn OverpassBackend,
    pub llm: &'a dyn CompletionBackend,
    pub wiki: &'a WikiDb,
    pub templates: &'a TemplateSet,
    pub meta: &'a MetaExampleSet,
}

/// Runs all four stages repeatedly until a full pass changes nothing.
pub fn run_until_settled(
    pipeline: &Pipeline<'_>,
    res: &Resources<'_>,
    max_passes: usize,
) -> Result<Vec<StageReport>, StoreError> {
    let mut reports = Vec::new();
    for _ in 0..max_passes {
        let pass = [
            pipeline.run_fetch(res.osm)?,
            pipeline.run_caption(res.llm, res.wiki, res.templates)?,
            pipeline.run_augment(res.llm, res.meta, res.templates)?,
            pipeline.run_refine()?,
        ];
        let progressed = pass.iter().any(StageReport::progressed) || pass[3].regressed > 0;
        reports.extend(pass);
        if !progressed {
            break;
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests;
