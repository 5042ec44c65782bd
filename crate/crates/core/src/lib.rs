//! Turns geo-referenced aerial image patches and OpenStreetMap data into
//! captioned training samples: fetch OSM elements per patch, pick one
//! distinctive element, describe it through templated LLM prompts, revise the
//! captions for variety, clean them up and pack everything into tar shards.

pub mod cli;
pub mod compile;
pub mod config;
pub mod geo;
pub mod geometry;
pub mod llm;
pub mod metrics;
pub mod net;
pub mod osm;
pub mod pipeline;
pub mod prompt;
pub mod refine;
pub mod synthetic;
pub mod tagwiki;
