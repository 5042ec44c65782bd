//! SQLite-backed status store. Every mutating call is one transaction and
//! counts as one write; [`Store::fail_at_write`] makes the n-th write fail
//! and every later one too, which is how tests simulate a killed process.

use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoBBox;
use crate::geometry::PatchFrame;
use crate::osm::{ElementKind, OsmElement, OsmTag};
use crate::prompt::TaskKind;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("database error: {0}")]
    Db(#[from] rusqlite::Error),
    #[error("stored JSON is unreadable: {0}")]
    Json(#[from] serde_json::Error),
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error("injected fault at write {0}")]
    InjectedFault(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PatchStatus {
    New,
    OsmFetched,
    Unusable,
    Captioned,
    Done,
}

impl PatchStatus {
    pub const ALL: [PatchStatus; 5] =
        [PatchStatus::New, PatchStatus::OsmFetched, PatchStatus::Unusable, PatchStatus::Captioned, PatchStatus::Done];

    pub fn as_str(self) -> &'static str {
        match self {
            PatchStatus::New => "NEW",
            PatchStatus::OsmFetched => "OSM_FETCHED",
            PatchStatus::Unusable => "UNUSABLE",
            PatchStatus::Captioned => "CAPTIONED",
            PatchStatus::Done => "DONE",
        }
    }
}

impl FromStr for PatchStatus {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| StoreError::Corrupt(format!("status {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionState {
    Raw,
    Refined,
    Deleted,
}

impl CaptionState {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptionState::Raw => "raw",
            CaptionState::Refined => "refined",
            CaptionState::Deleted => "deleted",
        }
    }
}

impl FromStr for CaptionState {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(CaptionState::Raw),
            "refined" => Ok(CaptionState::Refined),
            "deleted" => Ok(CaptionState::Deleted),
            other => Err(StoreError::Corrupt(format!("caption state {other:?}"))),
        }
    }
}

/// The element a patch is described by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedElement {
    pub kind: ElementKind,
    pub id: i64,
    pub task: TaskKind,
    pub tags: Vec<OsmTag>,
    pub is_cropped: bool,
}

/// What the image index says about one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub patch_id: String,
    pub bbox: GeoBBox,
    pub gsd_m: f64,
    pub capture_time: DateTime<Utc>,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub spec: PatchSpec,
    pub frame: PatchFrame,
    pub status: PatchStatus,
    pub selected: Option<SelectedElement>,
    pub target_count: Option<u32>,
    pub caption_attempts: u32,
    pub augment_attempts: u32,
    pub error: Option<String>,
}

impl PatchRecord {
    pub fn patch_id(&self) -> &str {
        &self.spec.patch_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub patch_id: String,
    pub caption_id: u32,
    pub task: TaskKind,
    pub revision_of: Option<u32>,
    pub text: String,
    /// Model output before cleanup.
    pub original: String,
    pub state: CaptionState,
}

/// Which stage a claim is for; each has its own eligibility rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    Fetch,
    Caption { max_attempts: u32 },
    Augment { max_attempts: u32 },
    Refine { max_attempts: u32 },
}

const LIVE: &str = "(SELECT COUNT(*) FROM captions c WHERE c.patch_id = p.patch_id AND c.state != 'deleted')";

impl Claim {
    fn predicate(self) -> String {
        match self {
            Claim::Fetch => "p.status = 'NEW'".into(),
            Claim::Caption { max_attempts } => {
                format!("p.status = 'OSM_FETCHED' AND p.caption_attempts < {max_attempts}")
            }
            Claim::Augment { max_attempts } => {
                format!("p.status = 'CAPTIONED' AND {LIVE} < p.target_count AND p.augment_attempts < {max_attempts}")
            }
            Claim::Refine { max_attempts } => format!(
                "p.status = 'CAPTIONED' AND ({LIVE} >= p.target_count OR p.augment_attempts >= {max_attempts}) \
                 AND EXISTS (SELECT 1 FROM captions c WHERE c.patch_id = p.patch_id AND c.state = 'raw')"
            ),
        }
    }
}

/// One refine decision for a caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionUpdate {
    pub caption_id: u32,
    pub state: CaptionState,
    pub text: String,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS patches (
    patch_id TEXT PRIMARY KEY,
    spec TEXT NOT NULL,
    frame TEXT NOT NULL,
    status TEXT NOT NULL,
    selected TEXT,
    target_count INTEGER,
    caption_attempts INTEGER NOT NULL DEFAULT 0,
    augment_attempts INTEGER NOT NULL DEFAULT 0,
    lease_until INTEGER,
    error TEXT
);
CREATE INDEX IF NOT EXISTS patches_status ON patches(status);
CREATE TABLE IF NOT EXISTS osm_cache (
    patch_id TEXT PRIMARY KEY,
    elements TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS captions (
    patch_id TEXT NOT NULL,
    caption_id INTEGER NOT NULL,
    task TEXT NOT NULL,
    revision_of INTEGER,
    text TEXT NOT NULL,
    original TEXT NOT NULL,
    state TEXT NOT NULL,
    PRIMARY KEY (patch_id, caption_id)
);
";

pub struct Store {
    conn: Mutex<Connection>,
    writes: AtomicU64,
    fail_at: AtomicU64,
    dead: AtomicBool,
}

fn patch_from_row(row: &Row<'_>) -> rusqlite::Result<(String, String, String, Option<String>, Option<u32>, u32, u32, Option<String>)> {
    Ok((row.get(0)?, row.get(1)?, row.get(2)?, row.get(3)?, row.get(4)?, row.get(5)?, row.get(6)?, row.get(7)?))
}

const PATCH_COLS: &str =
    "p.spec, p.frame, p.status, p.selected, p.target_count, p.caption_attempts, p.augment_attempts, p.error";

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.busy_timeout(std::time::Duration::from_secs(30))?;
        Self::with_connection(conn)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::with_connection(Connection::open_in_memory()?)
    }

    fn with_connection(conn: Connection) -> Result<Self, StoreError> {
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
            writes: AtomicU64::new(0),
            fail_at: AtomicU64::new(0),
            dead: AtomicBool::new(false),
        })
    }

    /// Makes write number `n` (1-based, counted from now) and all later
    /// writes fail. `None` disarms and revives the store.
    pub fn fail_at_write(&self, n: Option<u64>) {
        self.writes.store(0, Ordering::SeqCst);
        self.fail_at.store(n.unwrap_or(0), Ordering::SeqCst);
        self.dead.store(false, Ordering::SeqCst);
    }

    /// Writes attempted since the counter was last reset.
    pub fn write_count(&self) -> u64 {
        self.writes.load(Ordering::SeqCst)
    }

    fn write<T>(&self, f: impl FnOnce(&rusqlite::Transaction<'_>) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        let n = self.writes.fetch_add(1, Ordering::SeqCst) + 1;
        let fail_at = self.fail_at.load(Ordering::SeqCst);
        if self.dead.load(Ordering::SeqCst) || (fail_at != 0 && n >= fail_at) {
            self.dead.store(true, Ordering::SeqCst);
            return Err(StoreError::InjectedFault(n));
        }
        let tx = conn.transaction()?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    fn read<T>(&self, f: impl FnOnce(&Connection) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        f(&conn)
    }

    /// Adds a NEW patch unless one with the same id exists. Returns whether
    /// it was inserted.
    pub fn register_patch(&self, spec: &PatchSpec, frame: &PatchFrame) -> Result<bool, StoreError> {
        let spec_json = serde_json::to_string(spec)?;
        let frame_json = serde_json::to_string(frame)?;
        self.write(|tx| {
            let n = tx.execute(
                "INSERT OR IGNORE INTO patches (patch_id, spec, frame, status) VALUES (?1, ?2, ?3, 'NEW')",
                params![spec.patch_id, spec_json, frame_json],
            )?;
            Ok(n == 1)
        })
    }

    fn decode(
        (spec, frame, status, selected, target_count, caption_attempts, augment_attempts, error): (
            String,
            String,
            String,
            Option<String>,
            Option<u32>,
            u32,
            u32,
            Option<String>,
        ),
    ) -> Result<PatchRecord, StoreError> {
        Ok(PatchRecord {
            spec: serde_json::from_str(&spec)?,
            frame: serde_json::from_str(&frame)?,
            status: status.parse()?,
            selected: selected.map(|s| serde_json::from_str(&s)).transpose()?,
            target_count,
            caption_attempts,
            augment_attempts,
            error,
        })
    }

    /// Atomically picks the first eligible patch by id whose lease is free
    /// and leases it until `lease_until_ms`.
    pub fn claim(&self, claim: Claim, now_ms: i64, lease_until_ms: i64) -> Result<Option<PatchRecord>, StoreError> {
        let pred = claim.predicate();
        // the lookup is a read; only take a write slot when there is work
        let any = self.read(|c| {
            let sql = format!(
                "SELECT 1 FROM patches p WHERE {pred} AND (p.lease_until IS NULL OR p.lease_until <= ?1) LIMIT 1"
            );
            Ok(c.query_row(&sql, params![now_ms], |_| Ok(())).optional()?.is_some())
        })?;
        if !any {
            return Ok(None);
        }
        let raw = self.write(|tx| {
            let sql = format!(
                "SELECT p.patch_id, {PATCH_COLS} FROM patches p \
                 WHERE {pred} AND (p.lease_until IS NULL OR p.lease_until <= ?1) ORDER BY p.patch_id LIMIT 1"
            );
            let found = tx
                .query_row(&sql, params![now_ms], |r| {
                    let id: String = r.get(0)?;
                    Ok((id, (r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?, r.get(7)?, r.get(8)?)))
                })
                .optional()?;
            if let Some((id, _)) = &found {
                tx.execute("UPDATE patches SET lease_until = ?2 WHERE patch_id = ?1", params![id, lease_until_ms])?;
            }
            Ok(found.map(|(_, cols)| cols))
        })?;
        raw.map(Self::decode).transpose()
    }

    /// Notes a per-patch failure; the lease stays so the patch is not picked
    /// again before it expires.
    pub fn record_failure(&self, patch_id: &str, message: &str, bump_caption: bool) -> Result<(), StoreError> {
        self.write(|tx| {
            tx.execute(
                "UPDATE patches SET error = ?2, caption_attempts = caption_attempts + ?3 WHERE patch_id = ?1",
                params![patch_id, message, bump_caption as i64],
            )?;
            Ok(())
        })
    }

    pub fn complete_fetch(&self, patch_id: &str, elements: &[OsmElement]) -> Result<(), StoreError> {
        let json = serde_json::to_string(elements)?;
        self.write(|tx| {
            tx.execute("INSERT OR IGNORE INTO osm_cache (patch_id, elements) VALUES (?1, ?2)", params![patch_id, json])?;
            tx.execute(
                "UPDATE patches SET status = 'OSM_FETCHED', lease_until = NULL, error = NULL \
                 WHERE patch_id = ?1 AND status = 'NEW'",
                params![patch_id],
            )?;
            Ok(())
        })
    }

    pub fn cached_elements(&self, patch_id: &str) -> Result<Option<Vec<OsmElement>>, StoreError> {
        let json: Option<String> = self.read(|c| {
            Ok(c.query_row("SELECT elements FROM osm_cache WHERE patch_id = ?1", params![patch_id], |r| r.get(0))
                .optional()?)
        })?;
        Ok(json.map(|j| serde_json::from_str(&j)).transpose()?)
    }

    pub fn mark_unusable(&self, patch_id: &str) -> Result<(), StoreError> {
        self.write(|tx| {
            tx.execute(
                "UPDATE patches SET status = 'UNUSABLE', lease_until = NULL, error = NULL \
                 WHERE patch_id = ?1 AND status = 'OSM_FETCHED'",
                params![patch_id],
            )?;
            Ok(())
        })
    }

    /// Stores the raw caption (id 0) and moves the patch to CAPTIONED.
    pub fn complete_caption(
        &self,
        patch_id: &str,
        selected: &SelectedElement,
        target_count: u32,
        original: &str,
        text: &str,
    ) -> Result<(), StoreError> {
        let sel = serde_json::to_string(selected)?;
        self.write(|tx| {
            tx.execute(
                "INSERT INTO captions (patch_id, caption_id, task, revision_of, text, original, state) \
                 VALUES (?1, 0, ?2, NULL, ?3, ?4, 'raw')",
                params![patch_id, selected.task.as_str(), text, original],
            )?;
            tx.execute(
                "UPDATE patches SET status = 'CAPTIONED', selected = ?2, target_count = ?3, lease_until = NULL, \
                 error = NULL WHERE patch_id = ?1",
                params![patch_id, sel, target_count],
            )?;
            Ok(())
        })
    }

    /// Appends a Task 3 revision of the raw caption and counts the attempt.
    pub fn add_revision(&self, patch_id: &str, original: &str, release: bool) -> Result<u32, StoreError> {
        self.write(|tx| {
            let next: u32 = tx.query_row(
                "SELECT COALESCE(MAX(caption_id), -1) + 1 FROM captions WHERE patch_id = ?1",
                params![patch_id],
                |r| r.get(0),
            )?;
            tx.execute(
                "INSERT INTO captions (patch_id, caption_id, task, revision_of, text, original, state) \
                 VALUES (?1, ?2, 'task3', 0, ?3, ?3, 'raw')",
                params![patch_id, next, original],
            )?;
            let lease = if release { "NULL" } else { "lease_until" };
            tx.execute(
                &format!(
                    "UPDATE patches SET augment_attempts = augment_attempts + 1, error = NULL, lease_until = {lease} \
                     WHERE patch_id = ?1"
                ),
                params![patch_id],
            )?;
            Ok(next)
        })
    }

    pub fn release(&self, patch_id: &str) -> Result<(), StoreError> {
        self.write(|tx| {
            tx.execute("UPDATE patches SET lease_until = NULL WHERE patch_id = ?1", params![patch_id])?;
            Ok(())
        })
    }

    pub fn apply_refine(&self, patch_id: &str, updates: &[CaptionUpdate], status: PatchStatus) -> Result<(), StoreError> {
        self.write(|tx| {
            for u in updates {
                tx.execute(
                    "UPDATE captions SET state = ?3, text = ?4 WHERE patch_id = ?1 AND caption_id = ?2",
                    params![patch_id, u.caption_id, u.state.as_str(), u.text],
                )?;
            }
            tx.execute(
                "UPDATE patches SET status = ?2, lease_until = NULL, error = NULL WHERE patch_id = ?1",
                params![patch_id, status.as_str()],
            )?;
            Ok(())
        })
    }

    pub fn captions(&self, patch_id: &str) -> Result<Vec<CaptionRecord>, StoreError> {
        self.read(|c| {
            let mut stmt = c.prepare(
                "SELECT patch_id, caption_id, task, revision_of, text, original, state FROM captions \
                 WHERE patch_id = ?1 ORDER BY caption_id",
            )?;
            let rows = stmt.query_map(params![patch_id], |r| {
                Ok((r.get::<_, String>(0)?, r.get(1)?, r.get::<_, String>(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get::<_, String>(6)?))
            })?;
            let mut out = Vec::new();
            for row in rows {
                let (patch_id, caption_id, task, revision_of, text, original, state) = row?;
                out.push(CaptionRecord {
                    patch_id,
                    caption_id,
                    task: task.parse().map_err(StoreError::Corrupt)?,
                    revision_of,
                    text,
                    original,
                    state: state.parse()?,
                });
            }
            Ok(out)
        })
    }

    pub fn patch(&self, patch_id: &str) -> Result<Option<PatchRecord>, StoreError> {
        let raw = self.read(|c| {
            Ok(c.query_row(&format!("SELECT {PATCH_COLS} FROM patches p WHERE p.patch_id = ?1"), params![patch_id], patch_from_row)
                .optional()?)
        })?;
        raw.map(Self::decode).transpose()
    }

    /// Patches ordered by id, optionally filtered by status.
    pub fn patches(&self, status: Option<PatchStatus>) -> Result<Vec<PatchRecord>, StoreError> {
        let raws = self.read(|c| {
            let mut stmt = c.prepare(&format!(
                "SELECT {PATCH_COLS} FROM patches p WHERE ?1 IS NULL OR p.status = ?1 ORDER BY p.patch_id"
            ))?;
            let rows = stmt.query_map(params![status.map(PatchStatus::as_str)], patch_from_row)?;
            Ok(rows.collect::<Result<Vec<_>, _>>()?)
        })?;
        raws.into_iter().map(Self::decode).collect()
    }

    pub fn status_counts(&self) -> Result<Vec<(PatchStatus, u64)>, StoreError> {
        let mut out = Vec::new();
        for s in PatchStatus::ALL {
            let n: u64 = self.read(|c| {
                Ok(c.query_row("SELECT COUNT(*) FROM patches WHERE status = ?1", params![s.as_str()], |r| r.get(0))?)
            })?;
            out.push((s, n));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PatchFrame;

    fn spec(id: &str) -> (PatchSpec, PatchFrame) {
        let t = DateTime::parse_from_rfc3339("2021-08-01T00:00:00Z").unwrap().with_timezone(&Utc);
        let bbox = GeoBBox::new(0.0, 0.0, 0.0025, 0.0025);
        let (frame, _) = PatchFrame::from_geo(&bbox, 0.6, t).unwrap();
        (PatchSpec { patch_id: id.into(), bbox, gsd_m: 0.6, capture_time: t, image_ref: format!("{id}.png") }, frame)
    }

    fn selected() -> SelectedElement {
        SelectedElement { kind: ElementKind::Way, id: 1, task: TaskKind::Task1, tags: vec![], is_cropped: false }
    }

    #[test]
    fn register_is_idempotent() {
        let s = Store::open_in_memory().unwrap();
        let (p, f) = spec("a");
        assert!(s.register_patch(&p, &f).unwrap());
        assert!(!s.register_patch(&p, &f).unwrap());
        let rec = s.patch("a").unwrap().unwrap();
        assert_eq!(rec.status, PatchStatus::New);
        assert_eq!(rec.spec, p);
    }

    #[test]
    fn leases_block_until_expiry() {
        let s = Store::open_in_memory().unwrap();
        for id in ["a", "b"] {
            let (p, f) = spec(id);
            s.register_patch(&p, &f).unwrap();
        }
        assert_eq!(s.claim(Claim::Fetch, 0, 100).unwrap().unwrap().patch_id(), "a");
        assert_eq!(s.claim(Claim::Fetch, 0, 100).unwrap().unwrap().patch_id(), "b");
        assert!(s.claim(Claim::Fetch, 50, 150).unwrap().is_none());
        assert_eq!(s.claim(Claim::Fetch, 100, 200).unwrap().unwrap().patch_id(), "a");
    }

    #[test]
    fn caption_lifecycle() {
        let s = Store::open_in_memory().unwrap();
        let (p, f) = spec("a");
        s.register_patch(&p, &f).unwrap();
        s.complete_fetch("a", &[]).unwrap();
        assert_eq!(s.cached_elements("a").unwrap().unwrap().len(), 0);
        s.complete_caption("a", &selected(), 3, " A farm.", "A farm.").unwrap();
        let max = 10;
        assert!(s.claim(Claim::Refine { max_attempts: max }, 0, 1).unwrap().is_none());
        assert!(s.claim(Claim::Augment { max_attempts: max }, 0, 1).unwrap().is_some());
        assert_eq!(s.add_revision("a", "B", false).unwrap(), 1);
        assert_eq!(s.add_revision("a", "C", true).unwrap(), 2);
        assert!(s.claim(Claim::Augment { max_attempts: max }, 1, 2).unwrap().is_none());
        assert!(s.claim(Claim::Refine { max_attempts: max }, 1, 2).unwrap().is_some());
        let caps = s.captions("a").unwrap();
        assert_eq!(caps.len(), 3);
        assert_eq!(caps[2].revision_of, Some(0));
        assert_eq!(caps[0].task, TaskKind::Task1);
        let upd: Vec<_> = caps
            .iter()
            .map(|c| CaptionUpdate { caption_id: c.caption_id, state: CaptionState::Refined, text: c.text.clone() })
            .collect();
        s.apply_refine("a", &upd, PatchStatus::Done).unwrap();
        assert_eq!(s.patch("a").unwrap().unwrap().status, PatchStatus::Done);
        assert!(s.claim(Claim::Refine { max_attempts: max }, 5, 6).unwrap().is_none());
    }

    #[test]
    fn injected_fault_kills_later_writes() {
        let s = Store::open_in_memory().unwrap();
        let (p, f) = spec("a");
        s.fail_at_write(Some(2));
        s.register_patch(&p, &f).unwrap();
        assert!(matches!(s.complete_fetch("a", &[]), Err(StoreError::InjectedFault(2))));
        assert!(matches!(s.release("a"), Err(StoreError::InjectedFault(_))));
        assert_eq!(s.patch("a").unwrap().unwrap().status, PatchStatus::New);
        s.fail_at_write(None);
        s.complete_fetch("a", &[]).unwrap();
        assert_eq!(s.patch("a").unwrap().unwrap().status, PatchStatus::OsmFetched);
    }

    #[test]
    fn file_store_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.db");
        {
            let s = Store::open(&path).unwrap();
            let (p, f) = spec("a");
            s.register_patch(&p, &f).unwrap();
        }
        let s = Store::open(&path).unwrap();
        assert_eq!(s.patches(None).unwrap().len(), 1);
        assert_eq!(s.status_counts().unwrap()[0], (PatchStatus::New, 1));
    }
}
