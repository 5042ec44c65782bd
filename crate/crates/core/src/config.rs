//! TOML run configuration. `${NAME}` is replaced by the environment
//! variable `NAME` before parsing; relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::DEFAULT_SAMPLES_PER_SHARD;
use crate::llm::LlmConfig;
use crate::metrics::StatsParams;
use crate::osm::OverpassConfig;
use crate::pipeline::PipelineSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub store: PathBuf,
    /// Directory with `index.tsv` and the patch images.
    pub images: PathBuf,
    /// Shards go to `<output>/shards`, reports to `<output>/stats`.
    pub output: PathBuf,
    /// Overpass JSON file served instead of the live endpoint.
    pub osm_fixture: Option<PathBuf>,
    /// Directory with `task1.txt`, `task2.txt`, `task3.txt`.
    pub templates: Option<PathBuf>,
    pub meta_examples: Option<PathBuf>,
    pub tagwiki: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            store: "state/geocaption.sqlite".into(),
            images: "images".into(),
            output: "out".into(),
            osm_fixture: None,
            templates: None,
            meta_examples: None,
            tagwiki: None,
            stopwords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileSettings {
    pub samples_per_shard: usize,
}

impl Default for CompileSettings {
    fn default() -> Self {
        Self { samples_per_shard: DEFAULT_SAMPLES_PER_SHARD }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Use the deterministic mock instead of the completion endpoint.
    pub mock_llm: bool,
    pub paths: Paths,
    pub overpass: OverpassConfig,
    pub llm: LlmConfig,
    pub pipeline: PipelineSettings,
    pub compile: CompileSettings,
    pub stats: StatsParams,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub batch: Option<usize>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub mock_llm: bool,
}

pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for c in re.captures_iter(text) {
        let m = c.get(0).unwrap();
        let name = &c[1];
        out.push_str(&text[last..m.start()]);
        out.push_str(&lookup(name).ok_or_else(|| ConfigError::MissingEnv(name.to_string()))?);
        last = m.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(&interpolate_env(text, |k| std::env::var(k).ok())?)?;
        cfg.pipeline.sampling = cfg.llm.sampling.clone();
        Ok(cfg)
    }

    /// Reads, resolves paths, applies overrides and validates.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        cfg.resolve_paths(&base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.store, &mut p.images, &mut p.output] {
            resolve(base, path);
        }
        for path in [&mut p.osm_fixture, &mut p.templates, &mut p.meta_examples, &mut p.tagwiki, &mut p.stopwords]
            .into_iter()
            .flatten()
        {
            resolve(base, path);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.batch.is_some() {
            self.pipeline.batch = o.batch;
        }
        if let Some(w) = o.workers {
            self.pipeline.workers = w;
        }
        if let Some(s) = o.seed {
            self.pipeline.seed = s;
        }
        self.mock_llm |= o.mock_llm;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let p = &self.paths;
        if !p.images.is_dir() {
            return bad(format!("images directory {} does not exist", p.images.display()));
        }
        for (name, path) in [
            ("osm_fixture", &p.osm_fixture),
            ("meta_examples", &p.meta_examples),
            ("tagwiki", &p.tagwiki),
            ("stopwords", &p.stopwords),
        ] {
            if let Some(path) = path {
                if !path.is_file() {
                    return bad(format!("paths.{name}: {} does not exist", path.display()));
                }
            }
        }
        if let Some(t) = &p.templates {
            if !t.is_dir() {
                return bad(format!("paths.templates: {} is not a directory", t.display()));
            }
        }
        let pl = &self.pipeline;
        if pl.workers == 0 {
            return bad("pipeline.workers must be at least 1".into());
        }
        if pl.batch == Some(0) {
            return bad("pipeline.batch must be at least 1".into());
        }
        if pl.max_caption_attempts == 0 {
            return bad("pipeline.max_caption_attempts must be at least 1".into());
        }
        pl.targets.validate().map_err(|e| ConfigError::Invalid(format!("pipeline.targets: {e}")))?;
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(pl.selection.min_area_fraction) || !frac(pl.selection.min_length_fraction) {
            return bad("pipeline.selection fractions must lie in [0, 1]".into());
        }
        if !(pl.attributes.dp_epsilon >= 0.0 && pl.attributes.dp_epsilon.is_finite()) {
            return bad("pipeline.attributes.dp_epsilon must be a non-negative number".into());
        }
        let s = &self.llm.sampling;
        if s.max_tokens == 0 || !(s.temperature >= 0.0) || s.stop.is_empty() {
            return bad("llm.sampling needs max_tokens >= 1, temperature >= 0 and at least one stop sequence".into());
        }
        if self.llm.max_in_flight == 0 || self.overpass.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if !(self.overpass.requests_per_second > 0.0) {
            return bad("overpass.requests_per_second must be positive".into());
        }
        if self.compile.samples_per_shard == 0 {
            return bad("compile.samples_per_shard must be at least 1".into());
        }
        if !(self.stats.mtld_threshold > 0.0 && self.stats.mtld_threshold < 1.0) {
            return bad("stats.mtld_threshold must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn shards_dir(&self) -> PathBuf {
        self.paths.output.join("shards")
    }

    pub fn stats_dir(&self) -> PathBuf {
        self.paths.output.join("stats")
    }
}

/// Written by `init` when no config exists yet.
pub const DEFAULT_CONFIG: &str = r#"# geocaption run configuration
mock_llm = false

[paths]
store = "state/geocaption.sqlite"
images = "images"
output = "out"
# osm_fixture = "osm.json"

[overpass]
endpoint = "https://overpass-api.de/api/interpreter"
requests_per_second = 0.1

[llm]
endpoint = "http://127.0.0.1:8000/v1/completions"
model = "mistralai/Mixtral-8x7B-v0.1"
# api_key_env = "LLM_API_KEY"

[pipeline]
seed = 0
workers = 4

[compile]
samples_per_shard = 10000
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_interpolation() {
        let env = |k: &str| (k == "TOKEN").then(|| "s3cret".to_string());
        assert_eq!(interpolate_env("a = \"${TOKEN}\" ${TOKEN}", env).unwrap(), "a = \"s3cret\" s3cret");
        assert_eq!(interpolate_env("$x {y}", env).unwrap(), "$x {y}");
        assert!(matches!(interpolate_env("${NOPE}", env), Err(ConfigError::MissingEnv(n)) if n == "NOPE"));
    }

    #[test]
    fn defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("images")).unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, DEFAULT_CONFIG).unwrap();
        let o = Overrides { batch: Some(5), workers: Some(2), seed: Some(7), mock_llm: true };
        let cfg = Config::load(&path, &o).unwrap();
        assert_eq!((cfg.pipeline.batch, cfg.pipeline.workers, cfg.pipeline.seed), (Some(5), 2, 7));
        assert!(cfg.mock_llm);
        assert_eq!(cfg.paths.images, dir.path().join("images"));
        assert_eq!(cfg.compile.samples_per_shard, 10_000);
        assert_eq!(cfg.llm.sampling.temperature, 0.7);
    }

    #[test]
    fn effective_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("images")).unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[pipeline]\nseed = 3\n[pipeline.targets]\ntwo_probability = 0.5\n").unwrap();
        let cfg = Config::load(&path, &Overrides { workers: Some(3), ..Default::default() }).unwrap();
        let dumped = cfg.to_toml();
        let again = Config::from_toml_str(&dumped).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), dumped);
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(Config::load(&path, &Overrides::default()), Err(ConfigError::Invalid(_))));
        std::fs::create_dir(dir.path().join("images")).unwrap();
        for body in [
            "[pipeline]\nworkers = 0\n",
            "[compile]\nsamples_per_shard = 0\n",
            "[pipeline.targets]\nmin_more = 1\n",
            "[paths]\nosm_fixture = \"missing.json\"\n",
            "unknown = 1\n",
        ] {
            std::fs::write(&path, body).unwrap();
            assert!(Config::load(&path, &Overrides::default()).is_err(), "{body}");
        }
    }
}
