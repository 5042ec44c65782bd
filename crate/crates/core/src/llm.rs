//! Text-completion clients for a base language model: an OpenAI-compatible
//! HTTP backend and a deterministic offline mock.

use std::collections::HashMap;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::net::{with_retries, Attempt, InFlightLimit, RetryError, RetryPolicy};
use crate::prompt::CROPPED_SENTENCE;
use crate::refine::split_sentences;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("completion backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("completion request rejected with status {status}: {body}")]
    BadRequest { status: u16, body: String },
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 0.7, max_tokens: 256, stop: vec!["###".into(), "\nRaw:".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    /// Sampling seed, forwarded to backends that honour one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, params: &SamplingParams) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            stop: params.stop.clone(),
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {} is negative", self.temperature)));
        }
        if self.stop.iter().any(String::is_empty) {
            return Err(LlmError::InvalidRequest("empty stop sequence".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

/// Cuts `text` at the earliest stop sequence. Returns whether one was found.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> (String, bool) {
    match stops.iter().filter_map(|s| text.find(s.as_str())).min() {
        Some(i) => (text[..i].to_string(), true),
        None => (text.to_string(), false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full URL of the completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub sampling: SamplingParams,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: "mistralai/Mixtral-8x7B-v0.1".into(),
            api_key_env: None,
            timeout_secs: 120,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            sampling: SamplingParams::default(),
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: LlmConfig,
    token: Option<String>,
    gate: InFlightLimit,
}

impl HttpBackend {
    pub fn new(config: LlmConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::BackendUnavailable { attempts: 0, last: e.to_string() })?;
        let token = config.api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Ok(Self { client, gate: InFlightLimit::new(config.max_in_flight), config, token })
    }

    fn parse_body(body: &[u8], stops: &[String]) -> Result<CompletionResponse, String> {
        let v: Value = serde_json::from_slice(body).map_err(|e| format!("bad response body: {e}"))?;
        let choice = v.get("choices").and_then(|c| c.get(0)).ok_or("response has no choices")?;
        let raw = choice.get("text").and_then(Value::as_str).ok_or("choice has no text")?;
        let (text, cut) = truncate_at_stop(raw, stops);
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            _ if cut => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        };
        Ok(CompletionResponse { text, finish_reason })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let _permit = self.gate.acquire();
        let mut body = json!({
            "model": self.config.model,
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "stop": req.stop,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let res = with_retries(&self.config.retry, |_| {
            let mut rb = self.client.post(&self.config.endpoint).json(&body);
            if let Some(t) = &self.token {
                rb = rb.bearer_auth(t);
            }
            let resp = match rb.send() {
                Ok(r) => r,
                Err(e) => return Attempt::Retry((0, e.to_string())),
            };
            let status = resp.status();
            let bytes = match resp.bytes() {
                Ok(b) => b,
                Err(e) => return Attempt::Retry((status.as_u16(), e.to_string())),
            };
            if status.is_success() {
                return match Self::parse_body(&bytes, &req.stop) {
                    Ok(r) => Attempt::Done(r),
                    Err(e) => Attempt::Retry((status.as_u16(), e)),
                };
            }
            let text = String::from_utf8_lossy(&bytes).into_owned();
            if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Retry((status.as_u16(), text))
            } else {
                Attempt::Fail((status.as_u16(), text))
            }
        });
        res.map_err(|e| match e {
            RetryError::Exhausted { attempts, last: (status, body) } => {
                LlmError::BackendUnavailable { attempts, last: format!("status {status}: {body}") }
            }
            RetryError::Fatal((status, body)) => LlmError::BadRequest { status, body },
        })
    }
}

/// Offline stand-in. Prompts found in the fixture map get the stored text;
/// anything else gets a caption composed from the prompt's Raw block, with
/// choices driven by a hash of the prompt and the mock seed. A share of
/// outputs carries repeated sentences, trailing prompt fragments, verbatim
/// copies or blanks so that cleanup paths are exercised.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: HashMap<String, String>,
    seed: u64,
}

fn cached(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern"))
}

fn pick<'a>(h: u64, salt: u64, options: &[&'a str]) -> &'a str {
    options[((h.rotate_left((salt * 7) as u32) ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)) % options.len() as u64) as usize]
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u', 'A', 'E', 'I', 'O', 'U']) { "An" } else { "A" }
}

fn place(label: &str) -> &str {
    match label {
        "left-top" => "upper left",
        "center-top" => "upper",
        "right-top" => "upper right",
        "left-center" => "left",
        "center" => "central",
        "right-center" => "right",
        "left-bottom" => "lower left",
        "center-bottom" => "lower",
        "right-bottom" => "lower right",
        other => other,
    }
}

fn direction(o: &str) -> &str {
    match o {
        "W_E" => "west to east",
        "S_N" => "south to north",
        "SW_NE" => "southwest to northeast",
        "NW_SE" => "northwest to southeast",
        other => other,
    }
}

fn uncap(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

const FEATURE_KEYS: &[&str] = &[
    "landuse", "natural", "water", "building", "leisure", "amenity", "highway", "waterway", "railway", "power",
    "man_made",
];

struct Subject {
    noun: String,
    name: Option<String>,
    key: String,
}

fn subject(tags: &str) -> Subject {
    static BOUNDED: OnceLock<Regex> = OnceLock::new();
    static UNBOUNDED: OnceLock<Regex> = OnceLock::new();
    let bounded = cached(&BOUNDED, r"^([^\s:]+): (.+?)\.(?: The tag belongs|$)");
    let unbounded = cached(&UNBOUNDED, r#"^Its key is "([^"]+)".* The tag value is (.+)\.$"#);
    let mut pairs = Vec::new();
    for line in tags.lines() {
        if let Some(c) = bounded.captures(line).or_else(|| unbounded.captures(line)) {
            pairs.push((c[1].to_string(), c[2].to_string()));
        }
    }
    let name = pairs.iter().find(|(k, _)| k == "name").map(|(_, v)| v.clone());
    let main = pairs
        .iter()
        .find(|(k, _)| FEATURE_KEYS.contains(&k.as_str()))
        .or_else(|| pairs.iter().find(|(k, _)| k != "name"));
    match main {
        Some((k, v)) => {
            let noun = if v == "yes" { k.replace('_', " ") } else { v.replace('_', " ") };
            Subject { noun, name, key: k.clone() }
        }
        None => Subject { noun: "feature".into(), name, key: String::new() },
    }
}

fn context_sentence(h: u64, key: &str) -> &'static str {
    let specific: &[&str] = match key {
        "landuse" => &[
            "The surrounding land is likely used in a similar way.",
            "Neighbouring plots may serve other purposes, such as housing or farming.",
        ],
        "natural" | "water" | "waterway" => &[
            "Its edges are possibly lined with trees or reeds.",
            "The nearby ground may be wet or covered with vegetation.",
        ],
        "building" | "amenity" => &[
            "Other buildings and paved surfaces are likely nearby.",
            "A road probably gives access to it.",
        ],
        "highway" | "railway" => &[
            "Buildings or fields likely border it.",
            "It may connect to other roads outside the image.",
        ],
        _ => &[],
    };
    let generic = [
        "The rest of the scene may contain roads, fields or buildings.",
        "The surroundings are possibly a mix of open land and scattered structures.",
        "Vegetation likely covers part of the remaining area.",
    ];
    if !specific.is_empty() && h % 3 != 0 {
        pick(h, 11, specific)
    } else {
        pick(h, 13, &generic)
    }
}

fn describe_area(h: u64, loc: &str, shape: &str, size: f64, sub: &Subject, cropped: bool) -> Vec<String> {
    let pct = (size * 100.0).round() as i64;
    let loc = place(loc);
    let noun = &sub.noun;
    let mut s = vec![match h % 3 {
        0 => format!("{} {shape} {noun} lies in the {loc} part of the image, covering about {pct} percent of the scene.", article(shape)),
        1 => format!("The {loc} part of the image holds {} {shape} {noun} that covers roughly {pct} percent of the view.", uncap(article(shape))),
        _ => format!("{} {noun} with {} {shape} outline occupies the {loc} part of the image, about {pct} percent of the scene.", article(noun), uncap(article(shape))),
    }];
    if let Some(n) = &sub.name {
        s.push(format!("It is named {n}."));
    }
    if cropped {
        s.push(pick(h, 3, &["It continues beyond the edge of the image.", "Part of it lies outside the image."]).into());
    }
    s.push(context_sentence(h, &sub.key).into());
    s
}

#[allow(clippy::too_many_arguments)]
fn describe_line(h: u64, a: &str, b: &str, sinuosity: &str, length: &str, orientation: &str, sub: &Subject, cropped: bool) -> Vec<String> {
    let shape = match sinuosity {
        "straight" => "straight",
        "curved" => "gently curving",
        "twisted" => "winding",
        "closed" => "looping",
        "broken" => "fragmented",
        other => other,
    };
    let noun = &sub.noun;
    let (a, b) = (place(a), place(b));
    let dir = direction(orientation);
    let mut s = vec![match h % 2 {
        0 => format!("{} {shape} {noun} runs from the {a} part to the {b} part of the image, heading roughly {dir}.", article(shape)),
        _ => format!("The image is crossed by {} {shape} {noun} that leads from {dir}, between its {a} and {b} parts.", uncap(article(shape))),
    }];
    s.push(pick(h, 5, &["About {} meters of it are visible.", "Its visible length is around {} meters."]).replace("{}", length));
    if let Some(n) = &sub.name {
        s.push(format!("It is named {n}."));
    }
    if cropped {
        s.push("It extends past the border of the image.".into());
    }
    s.push(context_sentence(h, &sub.key).into());
    s
}

const OPENERS: &[&str] = &["Seen from above, ", "In this aerial view, ", "From overhead, ", "Here, ", "", "Looking down, "];
const CLOSERS: &[&str] = &[
    "",
    "The scene looks calm.",
    "Overall the layout is easy to read.",
    "Little else stands out.",
    "The view is fairly typical for the region.",
];

fn revise(h: u64, caption: &str) -> String {
    let mut parts: Vec<String> = split_sentences(caption).into_iter().map(str::to_string).collect();
    if parts.is_empty() {
        return String::new();
    }
    let rot = (h >> 8) as usize % parts.len();
    parts.rotate_left(rot);
    let opener = pick(h, 17, OPENERS);
    if !opener.is_empty() {
        parts[0] = format!("{opener}{}", uncap(&parts[0]));
    }
    if (h >> 16) % 2 == 0 {
        for p in parts.iter_mut() {
            *p = p.replace(" image", " scene").replace("percent", "per cent");
        }
    }
    let closer = pick(h, 19, CLOSERS);
    if !closer.is_empty() {
        parts.push(closer.into());
    }
    parts.join(" ")
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { fixtures: HashMap::new(), seed }
    }

    pub fn with_fixture(mut self, prompt: impl Into<String>, text: impl Into<String>) -> Self {
        self.fixtures.insert(prompt.into(), text.into());
        self
    }

    fn hash(&self, prompt: &str, seed: Option<u64>) -> u64 {
        let mut d = Sha256::new();
        d.update(self.seed.to_le_bytes());
        if let Some(s) = seed {
            d.update(s.to_le_bytes());
        }
        d.update(prompt.as_bytes());
        u64::from_le_bytes(d.finalize()[..8].try_into().unwrap())
    }

    fn generate(&self, prompt: &str, seed: Option<u64>) -> String {
        let h = self.hash(prompt, seed);
        let task = prompt.rfind("###Task###").map_or(prompt, |i| &prompt[i..]);
        if prompt.trim_end().ends_with("Revised:") {
            let caption = task
                .rfind("Raw: ")
                .map(|i| &task[i + 5..])
                .map(|t| t.rfind("\nRevised:").map_or(t, |j| &t[..j]))
                .unwrap_or("")
                .trim();
            return match h % 23 {
                0..=1 => caption.to_string(),
                2 => " ".into(),
                _ => format!(" {}", revise(h, caption)),
            };
        }
        let tags = task.find("Tags:\n").map_or("", |i| &task[i + 6..]);
        let tags = tags.rfind("\nCaption:").map_or(tags, |j| &tags[..j]);
        let sub = subject(tags);
        let cropped = task.contains(CROPPED_SENTENCE);
        static AREA: OnceLock<Regex> = OnceLock::new();
        static LINE: OnceLock<Regex> = OnceLock::new();
        let area = cached(&AREA, r"Coarse location: ([a-z-]+)\. Shape: ([a-z]+)\. Normalized size: ([0-9.]+)\.");
        let line = cached(
            &LINE,
            r"Endpoint locations: \(([a-z-]+), ([a-z-]+)\)\. Sinuosity: ([a-z]+)\. Normalized length: [0-9.]+\. Length: ([0-9]+) meters\. Orientation: ([A-Z_]+)\.",
        );
        let mut sentences = if let Some(c) = area.captures(task) {
            describe_area(h, &c[1], &c[2], c[3].parse().unwrap_or(0.0), &sub, cropped)
        } else if let Some(c) = line.captures(task) {
            describe_line(h, &c[1], &c[2], &c[3], &c[4], &c[5], &sub, cropped)
        } else {
            vec![format!("{} {} is visible in the image.", article(&sub.noun), sub.noun)]
        };
        match (h >> 32) % 8 {
            0 => {
                let first = sentences[0].clone();
                sentences.push(first);
            }
            1 => sentences.push(format!("Caption: {}", sentences[0])),
            _ => {}
        }
        format!(" {}", sentences.join(" "))
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let raw = self.fixtures.get(&req.prompt).cloned().unwrap_or_else(|| self.generate(&req.prompt, req.seed));
        let (text, _) = truncate_at_stop(&raw, &req.stop);
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > req.max_tokens as usize {
            let cut = words[..req.max_tokens as usize].join(" ");
            return Ok(CompletionResponse { text: cut, finish_reason: FinishReason::Length });
        }
        Ok(CompletionResponse { text, finish_reason: FinishReason::Stop })
    }
}
