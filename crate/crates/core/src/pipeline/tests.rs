use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::json;

use super::*;
use crate::geo::{GeoBBox, GeoPoint, LocalProjection};
use crate::llm::{CompletionResponse, FinishReason, LlmError, MockBackend};
use crate::osm::{FixtureOverpass, OsmError};
use crate::synthetic;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

struct World {
    _dir: tempfile::TempDir,
    store: Store,
    osm: FixtureOverpass,
    wiki: WikiDb,
    templates: TemplateSet,
    meta: MetaExampleSet,
}

impl World {
    fn synthetic(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = synthetic::generate(dir.path(), n, 11).unwrap();
        let store = Store::open_in_memory().unwrap();
        register_patches(&store, &DirImageSource::new(&fx.images_dir)).unwrap();
        let osm = FixtureOverpass::from_json(&std::fs::read(&fx.osm_path).unwrap()).unwrap();
        Self::with(dir, store, osm)
    }

    fn with(dir: tempfile::TempDir, store: Store, osm: FixtureOverpass) -> Self {
        Self {
            _dir: dir,
            store,
            osm,
            wiki: WikiDb::parse(include_str!("../../assets/tagwiki.tsv")).unwrap(),
            templates: TemplateSet::defaults(),
            meta: MetaExampleSet::defaults(),
        }
    }

    fn res<'a>(&'a self, llm: &'a dyn CompletionBackend) -> Resources<'a> {
        Resources { osm: &self.osm, llm, wiki: &self.wiki, templates: &self.templates, meta: &self.meta }
    }

    fn statuses(&self) -> BTreeMap<String, PatchStatus> {
        self.store.patches(None).unwrap().into_iter().map(|p| (p.spec.patch_id, p.status)).collect()
    }
}

/// One patch with hand-placed elements, in meters around the patch centre.
fn single_patch(elements: Vec<serde_json::Value>) -> World {
    let dir = tempfile::tempdir().unwrap();
    let center = GeoPoint::new(10.0, 50.0);
    let proj = LocalProjection::new(center);
    let lo = proj.inverse([-134.4, -134.4]);
    let hi = proj.inverse([134.4, 134.4]);
    let store = Store::open_in_memory().unwrap();
    let spec = PatchSpec {
        patch_id: "x".into(),
        bbox: GeoBBox::new(lo.lon, lo.lat, hi.lon, hi.lat),
        gsd_m: 0.6,
        capture_time: Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap(),
        image_ref: "x.ppm".into(),
    };
    let (frame, _) = PatchFrame::from_geo(&spec.bbox, spec.gsd_m, spec.capture_time).unwrap();
    store.register_patch(&spec, &frame).unwrap();
    let osm = FixtureOverpass::from_json(json!({ "elements": elements }).to_string().as_bytes()).unwrap();
    World::with(dir, store, osm)
}

fn geom(pts: &[[f64; 2]]) -> serde_json::Value {
    let proj = LocalProjection::new(GeoPoint::new(10.0, 50.0));
    pts.iter().map(|&xy| proj.inverse(xy)).map(|g| json!({"lat": g.lat, "lon": g.lon})).collect()
}

fn square(half: f64) -> Vec<[f64; 2]> {
    vec![[-half, -half], [half, -half], [half, half], [-half, half], [-half, -half]]
}

fn settings(workers: usize) -> PipelineSettings {
    PipelineSettings { seed: 7, workers, ..Default::default() }
}

struct FailOnCall<'a> {
    inner: &'a FixtureOverpass,
    calls: AtomicUsize,
    fail: std::ops::Range<usize>,
}

impl OverpassBackend for FailOnCall<'_> {
    fn execute(&self, q: &str) -> Result<Vec<u8>, OsmError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail.contains(&n) {
            return Err(OsmError::Unavailable { attempts: 1, last: "injected".into() });
        }
        self.inner.execute(q)
    }
}

#[test]
fn fetch_moves_all_new_patches() {
    let w = World::synthetic(10);
    let st = settings(3);
    let p = Pipeline::new(&w.store, &st, &SystemClock);
    let r = p.run_fetch(&w.osm).unwrap();
    assert_eq!(r.succeeded, 10);
    assert!(w.statuses().values().all(|s| *s == PatchStatus::OsmFetched));
    let again = p.run_fetch(&w.osm).unwrap();
    assert_eq!(again.processed, 0);
}

#[test]
fn fetch_failure_is_isolated() {
    let w = World::synthetic(10);
    let st = settings(1);
    let p = Pipeline::new(&w.store, &st, &SystemClock);
    // patch p0003 issues calls 6 and 7
    let flaky = FailOnCall { inner: &w.osm, calls: AtomicUsize::new(0), fail: 6..7 };
    let r = p.run_fetch(&flaky).unwrap();
    assert_eq!((r.succeeded, r.failed), (9, 1));
    let rec = w.store.patch("p0003").unwrap().unwrap();
    assert_eq!(rec.status, PatchStatus::New);
    assert!(rec.error.unwrap().contains("injected"));
}

#[test]
fn admin_boundary_only_is_unusable() {
    let w = single_patch(vec![json!({
        "type": "way", "id": 1, "tags": {"boundary": "administrative", "admin_level": "6"},
        "geometry": geom(&[[-300.0, 0.0], [300.0, 10.0]])
    })]);
    let st = settings(1);
    let p = Pipeline::new(&w.store, &st, &SystemClock);
    p.run_fetch(&w.osm).unwrap();
    let r = p.run_caption(&MockBackend::new(1), &w.wiki, &w.templates).unwrap();
    assert_eq!(r.unusable, 1);
    assert_eq!(w.statuses()["x"], PatchStatus::Unusable);
}

#[test]
fn farmland_gets_task1_and_road_gets_task2() {
    // 0.4 of the patch: side = sqrt(0.4) * 268.8
    let half = 0.4f64.sqrt() * 134.4;
    let farm = single_patch(vec![
        json!({"type": "way", "id": 1, "tags": {"landuse": "farmland"}, "geometry": geom(&square(half))}),
        json!({"type": "way", "id": 2, "tags": {"highway": "track"}, "geometry": geom(&[[-300.0, 5.0], [300.0, 5.0]])}),
    ]);
    let road = single_patch(vec![json!({
        "type": "way", "id": 2, "tags": {"highway": "residential", "name": "Oak Street"},
        "geometry": geom(&[[0.0, -300.0], [0.0, 300.0]])
    })]);
    for (w, task) in [(&farm, TaskKind::Task1), (&road, TaskKind::Task2)] {
        let st = settings(1);
        let p = Pipeline::new(&w.store, &st, &SystemClock);
        p.run_fetch(&w.osm).unwrap();
        assert_eq!(p.run_caption(&MockBackend::new(1), &w.wiki, &w.templates).unwrap().succeeded, 1);
        let caps = w.store.captions("x").unwrap();
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].task, task);
        assert_eq!(w.store.patch("x").unwrap().unwrap().selected.unwrap().task, task);
    }
}

/// Scripted backend: description prompts get a fixed caption, revisions
/// come from a list in order.
struct Scripted {
    revisions: Vec<&'static str>,
    next: AtomicUsize,
}

impl CompletionBackend for Scripted {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let text = if req.prompt.ends_with("Revised:") {
            let i = self.next.fetch_add(1, Ordering::SeqCst);
            self.revisions.get(i).copied().unwrap_or("A spare revision.")
        } else {
            "A farm field."
        };
        Ok(CompletionResponse { text: text.into(), finish_reason: FinishReason::Stop })
    }
}

fn captioned_with_target(target: u32) -> World {
    let w = single_patch(vec![json!({
        "type": "way", "id": 1, "tags": {"landuse": "farmland"}, "geometry": geom(&square(100.0))
    })]);
    let mut st = settings(1);
    st.targets = TargetDistribution { two_probability: if target == 2 { 1.0 } else { 0.0 }, min_more: target.max(3), max_more: target.max(3) };
    let p = Pipeline::new(&w.store, &st, &SystemClock);
    p.run_fetch(&w.osm).unwrap();
    p.run_caption(&Scripted { revisions: vec![], next: AtomicUsize::new(0) }, &w.wiki, &w.templates).unwrap();
    assert_eq!(w.store.patch("x").unwrap().unwrap().target_count, Some(target));
    w
}

#[test]
fn augment_reaches_target() {
    for (target, expect) in [(2, 1), (5, 4)] {
        let w = captioned_with_target(target);
        let st = settings(1);
        let p = Pipeline::new(&w.store, &st, &SystemClock);
        let llm = Scripted { revisions: vec!["R1.", "R2.", "R3.", "R4."], next: AtomicUsize::new(0) };
        let r = p.run_augment(&llm, &w.meta, &w.templates).unwrap();
        assert_eq!(r.captions_added, expect);
        let caps = w.store.captions("x").unwrap();
        assert!(caps[1..].iter().all(|c| c.task == TaskKind::Task3 && c.revision_of == Some(0)));
    }
}

#[test]
fn refine_outcomes() {
    let st = settings(1);
    // distinct pair: done
    let w = captioned_with_target(2);
    let p = Pipeline::new(&w.store, &st, &SystemClock);
    p.run_augment(&Scripted { revisions: vec!["Fields from above."], next: AtomicUsize::new(0) }, &w.meta, &w.templates)
        .unwrap();
    assert_eq!(p.run_refine().unwrap().succeeded, 1);
    assert_eq!(w.statuses()["x"], PatchStatus::Done);

    // revision duplicates the raw: regressed, then fixed by a new revision
    let w = captioned_with_target(2);
    let p = Pipeline::new(&w.store, &st, &SystemClock);
    let llm = Scripted { revisions: vec!["a farm  field.", "Crops seen from above."], next: AtomicUsize::new(0) };
    p.run_augment(&llm, &w.meta, &w.templates).unwrap();
    assert_eq!(p.run_refine().unwrap().regressed, 1);
    assert_eq!(w.statuses()["x"], PatchStatus::Captioned);
    p.run_augment(&llm, &w.meta, &w.templates).unwrap();
    p.run_refine().unwrap();
    assert_eq!(w.statuses()["x"], PatchStatus::Done);
    let states: Vec<_> = w.store.captions("x").unwrap().into_iter().map(|c| c.state).collect();
    assert_eq!(states, [CaptionState::Refined, CaptionState::Deleted, CaptionState::Refined]);

    // one blank revision among three: still done
    let w = captioned_with_target(3);
    let p = Pipeline::new(&w.store, &st, &SystemClock);
    let llm = Scripted { revisions: vec!["   ", "A field. A field."], next: AtomicUsize::new(0) };
    p.run_augment(&llm, &w.meta, &w.templates).unwrap();
    p.run_refine().unwrap();
    assert_eq!(w.statuses()["x"], PatchStatus::Done);
    let caps = w.store.captions("x").unwrap();
    assert_eq!(caps[1].state, CaptionState::Deleted);
    assert_eq!(caps[2].text, "A field.");
}

fn final_state(w: &World) -> BTreeMap<String, (PatchStatus, Vec<(u32, String, CaptionState)>)> {
    w.store
        .patches(None)
        .unwrap()
        .into_iter()
        .map(|p| {
            let caps = w.store.captions(p.patch_id()).unwrap().into_iter().map(|c| (c.caption_id, c.text, c.state)).collect();
            (p.spec.patch_id, (p.status, caps))
        })
        .collect()
}

#[test]
fn end_to_end_is_independent_of_workers() {
    let llm = MockBackend::new(7);
    let mut outcomes = Vec::new();
    for workers in [1, 4] {
        let w = World::synthetic(20);
        let st = settings(workers);
        let p = Pipeline::new(&w.store, &st, &SystemClock);
        run_until_settled(&p, &w.res(&llm), 20).unwrap();
        let state = final_state(&w);
        for (id, (status, caps)) in &state {
            assert!(matches!(status, PatchStatus::Done | PatchStatus::Unusable), "{id}: {status:?}");
            if *status == PatchStatus::Done {
                let live = caps.iter().filter(|c| c.2 == CaptionState::Refined).count();
                assert!((2..=5).contains(&live), "{id}: {live}");
            }
        }
        outcomes.push(state);
    }
    assert_eq!(outcomes[0], outcomes[1]);
}

#[test]
fn crash_and_resume_converges() {
    let llm = MockBackend::new(7);
    let reference = {
        let w = World::synthetic(6);
        let st = settings(2);
        run_until_settled(&Pipeline::new(&w.store, &st, &SystemClock), &w.res(&llm), 20).unwrap();
        final_state(&w)
    };
    for fail_at in [1, 5, 17, 40] {
        let w = World::synthetic(6);
        let st = settings(2);
        let clock = ManualClock::new(t0());
        let p = Pipeline::new(&w.store, &st, &clock);
        w.store.fail_at_write(Some(fail_at));
        assert!(matches!(run_until_settled(&p, &w.res(&llm), 20), Err(StoreError::InjectedFault(_))));
        w.store.fail_at_write(None);
        clock.advance(Duration::seconds(st.lease_secs as i64 + 1));
        run_until_settled(&p, &w.res(&llm), 20).unwrap();
        assert_eq!(final_state(&w), reference, "fault at write {fail_at}");
    }
}

#[test]
fn batch_limits_claims() {
    let w = World::synthetic(10);
    let st = PipelineSettings { batch: Some(4), ..settings(2) };
    let r = Pipeline::new(&w.store, &st, &SystemClock).run_fetch(&w.osm).unwrap();
    assert_eq!(r.processed, 4);
}

#[test]
fn target_distribution_frequency() {
    let d = TargetDistribution::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10_000;
    let twos = (0..n).filter(|_| d.sample(&mut rng) == 2).count();
    let f = twos as f64 / n as f64;
    assert!((f - 0.88).abs() <= 0.02, "{f}");
    assert!((0..1000).map(|_| d.sample(&mut rng)).all(|t| (2..=5).contains(&t)));
    assert!(TargetDistribution { min_more: 2, ..d }.validate().is_err());
}

#[test]
fn seeds_differ_by_purpose_and_attempt() {
    let a = derive_seed(7, "p1", "augment", 0);
    assert_ne!(a, derive_seed(7, "p1", "augment", 1));
    assert_ne!(a, derive_seed(7, "p1", "caption", 0));
    assert_ne!(a, derive_seed(8, "p1", "augment", 0));
    assert_eq!(a, derive_seed(7, "p1", "augment", 0));
}
