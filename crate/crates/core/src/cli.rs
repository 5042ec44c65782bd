//! Command-line entry point. Stage reports are printed to stdout as JSON
//! lines, logs go to stderr.
//!
//! Exit codes: 0 success, 1 some records failed or a runtime error
//! occurred, 2 configuration or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use crate::compile::write_shards;
use crate::config::{Config, ConfigError, Overrides, DEFAULT_CONFIG};
use crate::llm::{CompletionBackend, HttpBackend, MockBackend};
use crate::metrics::{corpus_stats, write_report, StopWords};
use crate::osm::{FixtureOverpass, HttpOverpass, OverpassBackend};
use crate::pipeline::{
    register_patches, run_until_settled, DirImageSource, Pipeline, Resources, StageReport, Store, SystemClock,
};
use crate::prompt::{MetaExampleSet, TemplateSet};
use crate::tagwiki::WikiDb;

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "geocaption", version, about = "Caption aerial image patches from OpenStreetMap data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Patches claimed per stage run.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the deterministic mock completion backend.
    #[arg(long)]
    pub mock_llm: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { batch: self.batch, workers: self.workers, seed: self.seed, mock_llm: self.mock_llm }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the store and register the patches of the image index.
    /// Writes a default config first if none exists.
    Init(Common),
    /// Fetch OSM elements for NEW patches.
    Fetch(Common),
    /// Write raw captions for fetched patches.
    Caption(Common),
    /// Generate revisions until each patch reaches its target count.
    Augment(Common),
    /// Clean captions and mark finished patches DONE.
    Refine(Common),
    /// Pack DONE patches into tar shards.
    Compile(Common),
    /// Write corpus statistics.
    Stats(Common),
    /// Run every stage until nothing changes, then compile and stats.
    RunAll(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Init(c)
            | Command::Fetch(c)
            | Command::Caption(c)
            | Command::Augment(c)
            | Command::Refine(c)
            | Command::Compile(c)
            | Command::Stats(c)
            | Command::RunAll(c) => c,
        }
    }
}

struct Assets {
    wiki: WikiDb,
    templates: TemplateSet,
    meta: MetaExampleSet,
}

/// Asset problems are configuration errors.
fn load_assets(cfg: &Config) -> Result<Assets, ConfigError> {
    let p = &cfg.paths;
    let bad = |what: &str, e: &dyn std::fmt::Display| ConfigError::Invalid(format!("{what}: {e}"));
    Ok(Assets {
        wiki: match &p.tagwiki {
            Some(path) => WikiDb::load(path).map_err(|e| bad("tagwiki", &e))?,
            None => WikiDb::parse(include_str!("../assets/tagwiki.tsv")).map_err(|e| bad("tagwiki", &e))?,
        },
        templates: match &p.templates {
            Some(dir) => TemplateSet::load_dir(dir).map_err(|e| bad("templates", &e))?,
            None => TemplateSet::defaults(),
        },
        meta: match &p.meta_examples {
            Some(path) => MetaExampleSet::load(path).map_err(|e| bad("meta_examples", &e))?,
            None => MetaExampleSet::defaults(),
        },
    })
}

fn overpass(cfg: &Config) -> anyhow::Result<Box<dyn OverpassBackend>> {
    Ok(match &cfg.paths.osm_fixture {
        Some(path) => {
            let body = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            Box::new(FixtureOverpass::from_json(&body)?)
        }
        None => Box::new(HttpOverpass::new(cfg.overpass.clone())?),
    })
}

fn llm(cfg: &Config) -> anyhow::Result<Box<dyn CompletionBackend>> {
    Ok(if cfg.mock_llm {
        Box::new(MockBackend::new(cfg.pipeline.seed))
    } else {
        Box::new(HttpBackend::new(cfg.llm.clone())?)
    })
}

fn open_store(cfg: &Config) -> anyhow::Result<Store> {
    if let Some(parent) = cfg.paths.store.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Store::open(&cfg.paths.store).with_context(|| format!("opening store {}", cfg.paths.store.display()))
}

fn emit(report: &StageReport) {
    println!("{}", serde_json::to_string(report).expect("report serializes"));
}

fn write_effective_config(cfg: &Config) -> anyhow::Result<()> {
    let dump = cfg.to_toml();
    log::debug!("effective configuration:\n{dump}");
    std::fs::create_dir_all(&cfg.paths.output)?;
    std::fs::write(cfg.paths.output.join("effective-config.toml"), dump)?;
    Ok(())
}

fn init_layout(config: &Path) -> anyhow::Result<()> {
    if config.exists() {
        return Ok(());
    }
    let dir = config.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir.join("images"))?;
    let index = dir.join("images").join("index.tsv");
    if !index.exists() {
        std::fs::write(&index, "patch_id\tmin_lon\tmin_lat\tmax_lon\tmax_lat\tgsd_m\tcapture_time\n")?;
    }
    std::fs::write(config, DEFAULT_CONFIG)?;
    info!("wrote default config to {}", config.display());
    Ok(())
}

/// Runs one command; `Ok(true)` when every record succeeded.
fn execute(command: &Command, cfg: &Config) -> anyhow::Result<bool> {
    write_effective_config(cfg)?;
    let store = open_store(cfg)?;
    let images = DirImageSource::new(&cfg.paths.images);
    let settings = &cfg.pipeline;
    let pipeline = Pipeline::new(&store, settings, &SystemClock);
    let reports = match command {
        Command::Init(_) => {
            let added = register_patches(&store, &images)?;
            println!("{}", json!({"stage": "init", "registered": added}));
            return Ok(true);
        }
        Command::Fetch(_) => {
            register_patches(&store, &images)?;
            vec![pipeline.run_fetch(overpass(cfg)?.as_ref())?]
        }
        Command::Caption(_) => {
            let a = load_assets(cfg)?;
            vec![pipeline.run_caption(llm(cfg)?.as_ref(), &a.wiki, &a.templates)?]
        }
        Command::Augment(_) => {
            let a = load_assets(cfg)?;
            vec![pipeline.run_augment(llm(cfg)?.as_ref(), &a.meta, &a.templates)?]
        }
        Command::Refine(_) => vec![pipeline.run_refine()?],
        Command::Compile(_) => {
            compile(cfg, &store, &images)?;
            return Ok(true);
        }
        Command::Stats(_) => {
            stats(cfg, &store)?;
            return Ok(true);
        }
        Command::RunAll(_) => {
            register_patches(&store, &images)?;
            let a = load_assets(cfg)?;
            let osm = overpass(cfg)?;
            let llm = llm(cfg)?;
            let res = Resources {
                osm: osm.as_ref(),
                llm: llm.as_ref(),
                wiki: &a.wiki,
                templates: &a.templates,
                meta: &a.meta,
            };
            let reports = run_until_settled(&pipeline, &res, 50)?;
            compile(cfg, &store, &images)?;
            stats(cfg, &store)?;
            reports
        }
    };
    for r in &reports {
        emit(r);
    }
    let counts: serde_json::Map<String, serde_json::Value> =
        store.status_counts()?.into_iter().map(|(s, n)| (s.as_str().to_string(), json!(n))).collect();
    info!("status counts: {}", serde_json::Value::Object(counts));
    Ok(reports.iter().all(|r| r.failed == 0))
}

fn compile(cfg: &Config, store: &Store, images: &DirImageSource) -> anyhow::Result<()> {
    let manifest = write_shards(store, images, cfg.shards_dir(), cfg.compile.samples_per_shard)?;
    println!(
        "{}",
        json!({"stage": "compile", "shards": manifest.shards.len(), "samples": manifest.total_samples()})
    );
    Ok(())
}

fn stats(cfg: &Config, store: &Store) -> anyhow::Result<()> {
    let stop = match &cfg.paths.stopwords {
        Some(p) => StopWords::load(p)?,
        None => StopWords::defaults(),
    };
    let report = corpus_stats(store, &stop, &cfg.stats)?;
    write_report(&report, cfg.stats_dir())?;
    println!(
        "{}",
        json!({"stage": "stats", "patches": report.patches, "captions": report.captions, "mtld": report.mtld})
    );
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let common = cli.command.common();
    if matches!(cli.command, Command::Init(_)) {
        if let Err(e) = init_layout(&common.config) {
            eprintln!("error: {e:#}");
            return EXIT_CONFIG;
        }
    }
    let cfg = match Config::load(&common.config, &common.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match execute(&cli.command, &cfg) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_PARTIAL,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                EXIT_CONFIG
            } else {
                EXIT_PARTIAL
            }
        }
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    ExitCode::from(run(std::env::args_os()))
}
