//! OpenStreetMap side of the pipeline: Overpass queries, response parsing,
//! element classification and selection of the one element per patch that
//! gets described.

mod client;
mod parse;
mod query;
mod select;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;

pub use client::{fetch_patch_elements, FixtureOverpass, HttpOverpass, OverpassBackend, OverpassConfig};
pub use parse::{parse_response, ParsedResponse};
pub use query::{build_query_step1, build_query_step2, one_month_after, QUERY_TIMEOUT_S};
pub use select::{
    classify_element, merge_dedupe, select_area_element, select_nonarea_element, usability_check, AreaSelection,
    ElementClass, LineSelection, PatchContext, SelectionParams, Usability, AREA_KEYS,
};

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("malformed Overpass response at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("Overpass request rejected ({status}): {body}")]
    BadRequest { status: u16, body: String },
    #[error("Overpass backend unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("fixture error: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OsmTag {
    pub key: String,
    pub value: String,
}

impl OsmTag {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self { key: key.into(), value: value.into() }
    }
}

/// Ways sort before relations; this order is part of every tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Way,
    Relation,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Way => "way",
            ElementKind::Relation => "relation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartRole {
    Outer,
    Inner,
    Plain,
}

/// One linestring of an element in lon/lat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPart {
    pub role: PartRole,
    pub coords: Vec<GeoPoint>,
}

impl GeoPart {
    pub fn is_closed(&self) -> bool {
        self.coords.len() >= 4 && self.coords.first() == self.coords.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmElement {
    pub id: i64,
    pub kind: ElementKind,
    pub tags: Vec<OsmTag>,
    pub parts: Vec<GeoPart>,
    pub fetched_at: DateTime<Utc>,
}

impl OsmElement {
    pub fn key(&self) -> (ElementKind, i64) {
        (self.kind, self.id)
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.iter().find(|t| t.key == key).map(|t| t.value.as_str())
    }

    pub fn has_tag(&self, key: &str, value: &str) -> bool {
        self.tag(key) == Some(value)
    }

    /// Every part is a closed ring.
    pub fn is_closed(&self) -> bool {
        !self.parts.is_empty() && self.parts.iter().all(GeoPart::is_closed)
    }
}
