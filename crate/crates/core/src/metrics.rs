//! Corpus statistics: tokenization, MTLD lexical diversity, caption length
//! and word frequencies, OSM key/value frequencies and the distribution of
//! captions per patch. Reports go to `summary.json` plus CSV tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::osm::OsmTag;
use crate::pipeline::{CaptionState, PatchStatus, Store, StoreError};

pub const DEFAULT_MTLD_THRESHOLD: f64 = 0.72;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("MTLD of an empty token sequence")]
    EmptyInput,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits a punctuation-free core word at a contraction: `it's` gives
/// `it` + `'s`, `don't` gives `do` + `n't`.
fn split_contraction(word: &str, out: &mut Vec<String>) {
    let lower = word.to_lowercase();
    if lower.len() > 3 && (lower.ends_with("n't") || lower.ends_with("n\u{2019}t")) {
        let cut = word.char_indices().rev().nth(2).map(|(i, _)| i).unwrap_or(0);
        out.push(word[..cut].to_string());
        out.push(word[cut..].to_string());
        return;
    }
    match word.char_indices().filter(|&(i, c)| i > 0 && is_apostrophe(c)).last() {
        Some((i, _)) => {
            out.push(word[..i].to_string());
            out.push(word[i..].to_string());
        }
        None => out.push(word.to_string()),
    }
}

/// Whitespace split, leading and trailing punctuation detached one
/// character per token, contractions split at the apostrophe. Case is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let start = chunk.char_indices().find(|&(_, c)| is_word_char(c)).map(|(i, _)| i);
        let Some(start) = start else {
            out.extend(chunk.chars().map(String::from));
            continue;
        };
        let end = chunk.char_indices().rev().find(|&(_, c)| is_word_char(c)).map(|(i, c)| i + c.len_utf8()).unwrap();
        out.extend(chunk[..start].chars().map(String::from));
        split_contraction(&chunk[start..end], &mut out);
        out.extend(chunk[end..].chars().map(String::from));
    }
    out
}

fn mtld_pass<'a, I: Iterator<Item = &'a str>>(tokens: I, threshold: f64) -> (f64, usize) {
    let mut factors = 0.0;
    let mut types: HashSet<&str> = HashSet::new();
    let mut count = 0usize;
    let mut n = 0usize;
    for t in tokens {
        n += 1;
        count += 1;
        types.insert(t);
        if (types.len() as f64 / count as f64) < threshold {
            factors += 1.0;
            types.clear();
            count = 0;
        }
    }
    if count > 0 {
        let ttr = types.len() as f64 / count as f64;
        factors += (1.0 - ttr) / (1.0 - threshold);
    }
    (factors, n)
}

/// Bidirectional MTLD. `Ok(None)` when a pass completes no factor at all
/// (every prefix stays above the threshold).
pub fn mtld<S: AsRef<str>>(tokens: &[S], threshold: f64) -> Result<Option<f64>, MetricsError> {
    if tokens.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (ff, n) = mtld_pass(tokens.iter().map(AsRef::as_ref), threshold);
    let (bf, _) = mtld_pass(tokens.iter().rev().map(AsRef::as_ref), threshold);
    if ff == 0.0 || bf == 0.0 {
        return Ok(None);
    }
    Ok(Some((n as f64 / ff + n as f64 / bf) / 2.0))
}

#[derive(Debug, Clone)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn defaults() -> Self {
        Self::parse(include_str!("../assets/stopwords.txt"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let p = path.as_ref();
        std::fs::read_to_string(p)
            .map(|t| Self::parse(&t))
            .map_err(|source| MetricsError::Io { path: p.display().to_string(), source })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsParams {
    pub top_words: usize,
    pub top_keys: usize,
    pub top_values: usize,
    pub value_keys: Vec<String>,
    pub mtld_threshold: f64,
}

impl Default for StatsParams {
    fn default() -> Self {
        Self {
            top_words: 50,
            top_keys: 20,
            top_values: 20,
            value_keys: ["highway", "natural", "landuse", "waterway", "surface"].map(String::from).to_vec(),
            mtld_threshold: DEFAULT_MTLD_THRESHOLD,
        }
    }
}

/// One patch as seen by the statistics: its tags and refined captions in
/// caption-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPatch {
    pub patch_id: String,
    pub tags: Vec<OsmTag>,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub item: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub patches: usize,
    pub captions: usize,
    pub tokens: u64,
    /// token count → number of captions
    pub length_histogram: BTreeMap<usize, u64>,
    pub median_length: Option<f64>,
    pub mean_length: Option<f64>,
    pub min_length: Option<usize>,
    pub max_length: Option<usize>,
    pub top_words: Vec<Count>,
    pub top_keys: Vec<Count>,
    pub top_values: BTreeMap<String, Vec<Count>>,
    /// captions per patch → number of patches
    pub variation_histogram: BTreeMap<usize, u64>,
    /// `null` when undefined
    pub mtld: Option<f64>,
}

fn top_k(counts: HashMap<String, u64>, k: usize) -> Vec<Count> {
    let mut v: Vec<Count> = counts.into_iter().map(|(item, count)| Count { item, count }).collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.item.cmp(&b.item)));
    v.truncate(k);
    v
}

fn median(sorted: &[usize]) -> Option<f64> {
    match sorted.len() {
        0 => None,
        n if n % 2 == 1 => Some(sorted[n / 2] as f64),
        n => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

#[derive(Default)]
struct Acc {
    lengths: Vec<usize>,
    words: HashMap<String, u64>,
}

impl Acc {
    fn merge(mut self, other: Acc) -> Acc {
        self.lengths.extend(other.lengths);
        for (w, c) in other.words {
            *self.words.entry(w).or_default() += c;
        }
        self
    }
}

/// Statistics over `corpus`, which is processed in patch-id then caption
/// order (this order defines the MTLD token stream).
pub fn compute_stats(corpus: &[CorpusPatch], stop: &StopWords, params: &StatsParams) -> StatsReport {
    let mut corpus: Vec<&CorpusPatch> = corpus.iter().collect();
    corpus.sort_by(|a, b| a.patch_id.cmp(&b.patch_id));
    let texts: Vec<&str> = corpus.iter().flat_map(|p| p.captions.iter().map(String::as_str)).collect();
    let tokenized: Vec<Vec<String>> = texts.par_iter().map(|t| tokenize(t)).collect();

    let acc = tokenized
        .par_iter()
        .map(|toks| {
            let mut a = Acc { lengths: vec![toks.len()], ..Default::default() };
            for t in toks {
                let w = t.to_lowercase();
                if w.chars().any(char::is_alphanumeric) && !stop.contains(&w) {
                    *a.words.entry(w).or_default() += 1;
                }
            }
            a
        })
        .reduce(Acc::default, Acc::merge);

    let mut lengths = acc.lengths;
    lengths.sort_unstable();
    let total: u64 = lengths.iter().map(|&l| l as u64).sum();
    let mut length_histogram = BTreeMap::new();
    for &l in &lengths {
        *length_histogram.entry(l).or_insert(0u64) += 1;
    }

    let mut keys: HashMap<String, u64> = HashMap::new();
    let mut values: HashMap<&str, HashMap<String, u64>> = HashMap::new();
    let mut variation_histogram = BTreeMap::new();
    for p in &corpus {
        for t in &p.tags {
            *keys.entry(t.key.clone()).or_default() += 1;
            if let Some(k) = params.value_keys.iter().find(|k| **k == t.key) {
                *values.entry(k.as_str()).or_default().entry(t.value.clone()).or_default() += 1;
            }
        }
        *variation_histogram.entry(p.captions.len()).or_insert(0u64) += 1;
    }
    let top_values = params
        .value_keys
        .iter()
        .map(|k| (k.clone(), top_k(values.remove(k.as_str()).unwrap_or_default(), params.top_values)))
        .collect();

    let stream: Vec<String> = tokenized.iter().flatten().map(|t| t.to_lowercase()).collect();
    let mtld = mtld(&stream, params.mtld_threshold).ok().flatten();

    StatsReport {
        patches: corpus.len(),
        captions: lengths.len(),
        tokens: total,
        median_length: median(&lengths),
        mean_length: (!lengths.is_empty()).then(|| total as f64 / lengths.len() as f64),
        min_length: lengths.first().copied(),
        max_length: lengths.last().copied(),
        length_histogram,
        top_words: top_k(acc.words, params.top_words),
        top_keys: top_k(keys, params.top_keys),
        top_values,
        variation_histogram,
        mtld,
    }
}

/// The DONE patches of a store as statistics input.
pub fn load_corpus(store: &Store) -> Result<Vec<CorpusPatch>, StoreError> {
    store
        .patches(Some(PatchStatus::Done))?
        .into_iter()
        .map(|p| {
            let captions = store
                .captions(p.patch_id())?
                .into_iter()
                .filter(|c| c.state == CaptionState::Refined)
                .map(|c| c.text)
                .collect();
            Ok(CorpusPatch { tags: p.selected.map(|s| s.tags).unwrap_or_default(), patch_id: p.spec.patch_id, captions })
        })
        .collect()
}

pub fn corpus_stats(store: &Store, stop: &StopWords, params: &StatsParams) -> Result<StatsReport, MetricsError> {
    Ok(compute_stats(&load_corpus(store)?, stop, params))
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), MetricsError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
}

/// Writes `summary.json`, `lengths.csv`, `word_freq.csv`, `key_freq.csv`,
/// `value_freq.csv` and `variations.csv` into `dir`.
pub fn write_report(report: &StatsReport, dir: impl AsRef<Path>) -> Result<(), MetricsError> {
    let dir = dir.as_ref();
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| MetricsError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let summary = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    std::fs::write(&summary, json).map_err(io(&summary))?;
    write_csv(
        &dir.join("lengths.csv"),
        &["tokens", "captions"],
        report.length_histogram.iter().map(|(l, c)| [l.to_string(), c.to_string()]),
    )?;
    write_csv(
        &dir.join("word_freq.csv"),
        &["word", "count"],
        report.top_words.iter().map(|c| [c.item.clone(), c.count.to_string()]),
    )?;
    write_csv(
        &dir.join("key_freq.csv"),
        &["key", "count"],
        report.top_keys.iter().map(|c| [c.item.clone(), c.count.to_string()]),
    )?;
    write_csv(
        &dir.join("value_freq.csv"),
        &["key", "value", "count"],
        report.top_values.iter().flat_map(|(k, v)| v.iter().map(move |c| [k.clone(), c.item.clone(), c.count.to_string()])),
    )?;
    write_csv(
        &dir.join("variations.csv"),
        &["captions", "patches"],
        report.variation_histogram.iter().map(|(n, c)| [n.to_string(), c.to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(toks("A farm."), ["A", "farm", "."]);
        assert!(toks("").is_empty());
        assert_eq!(toks("it's 270 meters"), ["it", "'s", "270", "meters"]);
        assert_eq!(toks("(don't) stop..."), ["(", "do", "n't", ")", "stop", ".", ".", "."]);
        assert_eq!(toks("3.5 km, \"north-east\" -- ok"), ["3.5", "km", ",", "\"", "north-east", "\"", "-", "-", "ok"]);
        assert_eq!(toks("farmers' fields"), ["farmers", "'", "fields"]);
    }

    /// Straight from the definition: recompute the TTR of every growing
    /// segment from scratch.
    fn oracle_pass(tokens: &[&str], threshold: f64) -> f64 {
        let mut factors = 0.0;
        let mut start = 0;
        for end in 1..=tokens.len() {
            let seg = &tokens[start..end];
            let distinct = seg.iter().collect::<std::collections::BTreeSet<_>>().len();
            if (distinct as f64) / (seg.len() as f64) < threshold {
                factors += 1.0;
                start = end;
            }
        }
        let rest = &tokens[start..];
        if !rest.is_empty() {
            let distinct = rest.iter().collect::<std::collections::BTreeSet<_>>().len();
            factors += (1.0 - distinct as f64 / rest.len() as f64) / (1.0 - threshold);
        }
        factors
    }

    fn oracle(tokens: &[&str]) -> Option<f64> {
        let rev: Vec<&str> = tokens.iter().rev().copied().collect();
        let (f, b) = (oracle_pass(tokens, 0.72), oracle_pass(&rev, 0.72));
        (f > 0.0 && b > 0.0).then(|| (tokens.len() as f64 / f + tokens.len() as f64 / b) / 2.0)
    }

    #[test]
    fn mtld_fixed_cases() {
        let cyc: Vec<String> = (0..200).map(|i| format!("w{}", i % 100)).collect();
        let cyc_ref: Vec<&str> = cyc.iter().map(String::as_str).collect();
        let got = mtld(&cyc, 0.72).unwrap().unwrap();
        assert!((got - oracle(&cyc_ref).unwrap()).abs() < 1e-9);

        let same = vec!["a"; 50];
        let got = mtld(&same, 0.72).unwrap().unwrap();
        assert!((got - oracle(&same).unwrap()).abs() < 1e-9);

        let distinct: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert_eq!(mtld(&distinct, 0.72).unwrap(), None);
        assert!(matches!(mtld::<&str>(&[], 0.72), Err(MetricsError::EmptyInput)));
    }

    proptest! {
        #[test]
        fn mtld_matches_oracle(seq in prop::collection::vec(0u8..30, 1..300)) {
            let t: Vec<String> = seq.iter().map(|v| format!("t{v}")).collect();
            let r: Vec<&str> = t.iter().map(String::as_str).collect();
            match (mtld(&t, 0.72).unwrap(), oracle(&r)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn mtld_symmetric_and_rename_invariant(seq in prop::collection::vec(0u8..20, 1..200), shift in 1u8..100) {
            let t: Vec<String> = seq.iter().map(|v| format!("t{v}")).collect();
            let rev: Vec<String> = t.iter().rev().cloned().collect();
            let renamed: Vec<String> = seq.iter().map(|v| format!("u{}", v.wrapping_add(shift))).collect();
            let a = mtld(&t, 0.72).unwrap();
            prop_assert_eq!(a, mtld(&rev, 0.72).unwrap());
            prop_assert_eq!(a, mtld(&renamed, 0.72).unwrap());
        }

        #[test]
        fn tokens_never_empty(s in "\\PC{0,60}") {
            let t = tokenize(&s);
            prop_assert!(t.iter().all(|x| !x.is_empty() && !x.chars().any(char::is_whitespace)));
            prop_assert_eq!(t, tokenize(&s));
        }
    }

    fn patch(id: &str, tags: &[(&str, &str)], caps: &[&str]) -> CorpusPatch {
        CorpusPatch {
            patch_id: id.into(),
            tags: tags.iter().map(|(k, v)| OsmTag { key: k.to_string(), value: v.to_string() }).collect(),
            captions: caps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn lengths_and_keys() {
        let corpus = vec![
            patch("b", &[("highway", "track")], &["one two three", "a b c d e"]),
            patch("a", &[("highway", "primary"), ("natural", "wood")], &["a b c d e", "x x x x x x x"]),
            patch("c", &[("highway", "track")], &[]),
        ];
        let r = compute_stats(&corpus, &StopWords::defaults(), &StatsParams::default());
        assert_eq!(r.median_length, Some(5.0));
        assert_eq!(r.mean_length, Some(5.0));
        assert_eq!(r.top_keys[0], Count { item: "highway".into(), count: 3 });
        assert_eq!(r.top_keys[1], Count { item: "natural".into(), count: 1 });
        assert_eq!(r.top_values["highway"][0], Count { item: "track".into(), count: 2 });
        assert_eq!(r.length_histogram.values().sum::<u64>(), 4);
        assert_eq!(r.variation_histogram.values().sum::<u64>(), 3);
        assert_eq!(r.variation_histogram[&2], 2);
        // stop words removed, punctuation skipped
        assert!(r.top_words.iter().all(|c| c.item != "a" && c.item != "."));
        assert_eq!(r.top_words[0], Count { item: "x".into(), count: 7 });
    }

    #[test]
    fn empty_corpus_and_files() {
        let r = compute_stats(&[], &StopWords::defaults(), &StatsParams::default());
        assert_eq!((r.captions, r.median_length, r.mtld), (0, None, None));
        let dir = tempfile::tempdir().unwrap();
        let corpus = vec![patch("a", &[("name", "Oak, \"Street\"")], &["A road, long."])];
        let r = compute_stats(&corpus, &StopWords::defaults(), &StatsParams::default());
        write_report(&r, dir.path()).unwrap();
        let summary: StatsReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary, r);
        let words = std::fs::read_to_string(dir.path().join("word_freq.csv")).unwrap();
        assert_eq!(words, "word,count\nlong,1\nroad,1\n");
        let lengths = std::fs::read_to_string(dir.path().join("lengths.csv")).unwrap();
        assert_eq!(lengths, "tokens,captions\n5,1\n");
        for f in ["key_freq.csv", "value_freq.csv", "variations.csv"] {
            assert!(dir.path().join(f).is_file());
        }
    }
}
