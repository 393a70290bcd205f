//! Corpus ingestion, cleaning, vocabulary and synthetic corpora.
//!
//! Sentences are stored as id sequences *without* the trailing ⟨EOS⟩; the
//! batching code appends it when building decoder targets.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use rand::distr::weighted::WeightedIndex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::diff::rng::purpose;
use crate::diff::RngStream;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<eos>", "<unk>"];
pub const DEFAULT_VOCAB_CAP: usize = 20_000;
/// Sentences longer than this are truncated.
pub const MAX_SENTENCE_LEN: usize = 200;

pub type TokenSequence = Vec<usize>;

static HYPERLINK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(https?://|www\.)\S*").expect("valid regex"));

/// Cleans one line: hyperlinks, non-ASCII characters and double quotes are
/// removed, the rest is lowercased and split on whitespace.
///
/// Apostrophes are kept: `don't` stays one token.
pub fn clean_line(line: &str) -> Vec<String> {
    let no_links = HYPERLINK.replace_all(line, " ");
    let ascii: String = no_links.chars().filter(|c| c.is_ascii() && *c != '"').collect();
    ascii.to_ascii_lowercase().split_whitespace().map(str::to_string).collect()
}

/// Cleaned lines plus bookkeeping of what was dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preprocessed {
    pub lines: Vec<Vec<String>>,
    /// Index into the input of each kept line.
    pub kept: Vec<usize>,
    pub dropped: usize,
}

pub fn preprocess<S: AsRef<str>>(lines: impl IntoIterator<Item = S>) -> Preprocessed {
    let mut out = Preprocessed::default();
    for (i, line) in lines.into_iter().enumerate() {
        let tokens = clean_line(line.as_ref());
        if tokens.is_empty() {
            out.dropped += 1;
        } else {
            out.lines.push(tokens);
            out.kept.push(i);
        }
    }
    out
}

/// Result of encoding one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: TokenSequence,
    pub unknown: usize,
    pub truncated: bool,
}

/// Token ↔ id map with ⟨pad⟩ = 0, ⟨eos⟩ = 1, ⟨unk⟩ = 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from non-reserved `words`, in id order.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keeps the `cap` most frequent tokens, breaking ties lexicographically.
    pub fn build<S: AsRef<str>>(lines: &[Vec<S>], cap: usize) -> Result<Self> {
        if lines.iter().all(Vec::is_empty) {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in lines {
            for t in line {
                let t = t.as_ref();
                if !RESERVED.contains(&t) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        Self::from_words(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encodes tokens, truncating to [`MAX_SENTENCE_LEN`].
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Encoded {
        let truncated = tokens.len() > MAX_SENTENCE_LEN;
        let mut unknown = 0;
        let ids = tokens
            .iter()
            .take(MAX_SENTENCE_LEN)
            .map(|t| {
                let id = self.id(t.as_ref());
                unknown += usize::from(id == UNK);
                id
            })
            .collect();
        Encoded { ids, unknown, truncated }
    }

    /// Maps ids back to tokens, skipping ⟨pad⟩ and stopping at ⟨eos⟩.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                PAD => continue,
                EOS => break,
                _ => out.push(
                    self.token(id)
                        .ok_or_else(|| Error::contract(format!("token id {id} out of range for vocabulary of {}", self.len())))?
                        .to_string(),
                ),
            }
        }
        Ok(out)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// One token per line; line `k` (0-based) holds id `k + 3`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for t in self.words() {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_words(text.lines().filter(|l| !l.is_empty()).map(str::to_string))
    }
}

/// Encoded sentences with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub sentences: Vec<TokenSequence>,
    pub labels: Option<Vec<usize>>,
    /// Class id → name as it appears in corpus files.
    pub class_names: Vec<String>,
    pub vocab: Vocab,
}

/// Counters accumulated while encoding a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EncodeStats {
    pub unknown_tokens: usize,
    pub truncated_sentences: usize,
}

/// Orders class names numerically when they all parse as integers.
fn sorted_class_names<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut names: Vec<String> = labels.map(str::to_string).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().expect("checked"));
    }
    names
}

impl LabeledCorpus {
    pub fn new(sentences: Vec<TokenSequence>, labels: Option<Vec<usize>>, class_names: Vec<String>, vocab: Vocab) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != sentences.len() {
                return Err(Error::contract(format!("{} labels for {} sentences", l.len(), sentences.len())));
            }
            if let Some(&bad) = l.iter().find(|&&c| c >= class_names.len()) {
                return Err(Error::contract(format!("label {bad} has no class name")));
            }
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::contract(format!("sentence {i} is empty")));
            }
            if let Some(&bad) = s.iter().find(|&&id| id >= vocab.len()) {
                return Err(Error::contract(format!("sentence {i}: token id {bad} out of range for vocabulary of {}", vocab.len())));
            }
        }
        Ok(Self { sentences, labels, class_names, vocab })
    }

    /// Encodes cleaned token lists with string labels.
    pub fn encode<S: AsRef<str>>(lines: &[Vec<S>], labels: Option<&[String]>, vocab: Vocab) -> Result<(Self, EncodeStats)> {
        let mut stats = EncodeStats::default();
        let mut sentences = Vec::with_capacity(lines.len());
        for line in lines {
            let e = vocab.encode(line);
            stats.unknown_tokens += e.unknown;
            stats.truncated_sentences += usize::from(e.truncated);
            sentences.push(e.ids);
        }
        let (labels, class_names) = match labels {
            None => (None, Vec::new()),
            Some(names) => {
                let classes = sorted_class_names(names.iter().map(String::as_str));
                let lookup: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
                (Some(names.iter().map(|n| lookup[n.as_str()]).collect()), classes)
            }
        };
        Ok((Self::new(sentences, labels, class_names, vocab)?, stats))
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or_else(|| Error::contract("corpus has no labels"))
    }

    /// Indices of sentences with label `class`, in corpus order.
    pub fn class_indices(&self, class: usize) -> Result<Vec<usize>> {
        Ok(self.labels()?.iter().enumerate().filter(|(_, &c)| c == class).map(|(i, _)| i).collect())
    }

    /// Sub-corpus of the given sentence indices, sharing vocabulary and class names.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_names: self.class_names.clone(),
            vocab: self.vocab.clone(),
        }
    }

    /// Same sentences with labels permuted by `rng`.
    pub fn shuffled_labels(&self, rng: &mut RngStream) -> Result<Self> {
        let mut labels = self.labels()?.to_vec();
        rng.shuffle(&mut labels);
        Ok(Self { labels: Some(labels), ..self.clone() })
    }

    /// Decoded records, suitable for [`write_records`].
    pub fn to_records(&self) -> Result<Vec<RawRecord>> {
        self.sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(RawRecord {
                    label: self.labels.as_ref().map(|l| self.class_names[l[i]].clone()),
                    text: self.vocab.decode(s)?.join(" "),
                })
            })
            .collect()
    }
}

/// One line of a corpus file: `label<TAB>sentence` or just `sentence`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub label: Option<String>,
    pub text: String,
}

pub fn read_records(path: &Path, labeled: bool) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if labeled {
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("{}:{}: expected label<TAB>sentence", path.display(), n + 1)))?;
            out.push(RawRecord { label: Some(label.to_string()), text: text.to_string() });
        } else {
            out.push(RawRecord { label: None, text: line });
        }
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        match &r.label {
            Some(l) => writeln!(w, "{l}\t{}", r.text)?,
            None => writeln!(w, "{}", r.text)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus file, cleans it and encodes it with `vocab` (or a vocabulary
/// built from the file itself).
pub fn load_corpus(path: &Path, labeled: bool, vocab: Option<Vocab>, cap: usize) -> Result<(LabeledCorpus, EncodeStats, usize)> {
    let records = read_records(path, labeled)?;
    let pre = preprocess(records.iter().map(|r| r.text.as_str()));
    let labels: Option<Vec<String>> =
        labeled.then(|| pre.kept.iter().map(|&i| records[i].label.clone().expect("labeled")).collect());
    let vocab = match vocab {
        Some(v) => v,
        None => Vocab::build(&pre.lines, cap)?,
    };
    let (corpus, stats) = LabeledCorpus::encode(&pre.lines, labels.as_deref(), vocab)?;
    Ok((corpus, stats, pre.dropped))
}

/// Membership of one sentence in one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: String,
    pub class: String,
    pub line_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LabeledCorpus,
    pub valid: LabeledCorpus,
    pub test: LabeledCorpus,
    pub manifest: Vec<SplitRecord>,
}

/// Per class, draws `train_n` training and `eval_n` validation and test
/// sentences without overlap.
pub fn split_per_class(corpus: &LabeledCorpus, train_n: usize, eval_n: usize, seed: u64) -> Result<Splits> {
    let root = RngStream::new(seed);
    let need = train_n + 2 * eval_n;
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut manifest = Vec::with_capacity(corpus.num_classes() * need);
    for class in 0..corpus.num_classes() {
        let mut idx = corpus.class_indices(class)?;
        let name = &corpus.class_names[class];
        if idx.len() < need {
            return Err(Error::contract(format!("class '{name}' has {} sentences, needs {need}", idx.len())));
        }
        root.derive(purpose::SPLIT, class as u32).shuffle(&mut idx);
        let bounds = [(0, train_n), (train_n, train_n + eval_n), (train_n + eval_n, need)];
        for (k, (lo, hi)) in bounds.into_iter().enumerate() {
            for &i in &idx[lo..hi] {
                parts[k].push(i);
                manifest.push(SplitRecord { split: ["train", "valid", "test"][k].to_string(), class: name.clone(), line_index: i });
            }
        }
    }
    let [train, valid, test] = parts.map(|p| corpus.subset(&p));
    Ok(Splits { train, valid, test, manifest })
}

pub fn write_manifest(path: &Path, manifest: &[SplitRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in manifest {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Synthetic labeled corpus parameters.
///
/// Each class has its own pool of `class_vocab` words; all classes share a
/// pool of `shared_vocab` words. A token comes from the shared pool with
/// probability `shared_fraction`, otherwise from the class pool; within a
/// pool words are Zipf-weighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub class_vocab: usize,
    pub shared_vocab: usize,
    pub shared_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sentences_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 2,
            class_vocab: 80,
            shared_vocab: 40,
            shared_fraction: 0.0,
            min_len: 5,
            max_len: 12,
            sentences_per_class: 1000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.class_vocab == 0 || self.sentences_per_class == 0 {
            return Err(Error::contract("synth: class count, class vocabulary and sentences per class must be positive"));
        }
        if !(1 <= self.min_len && self.min_len <= self.max_len && self.max_len <= MAX_SENTENCE_LEN) {
            return Err(Error::contract(format!("synth: length range {}..={} must lie within [1, 200]", self.min_len, self.max_len)));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(Error::contract("synth: shared fraction must lie in [0, 1]"));
        }
        if self.shared_fraction > 0.0 && self.shared_vocab == 0 {
            return Err(Error::contract("synth: a positive shared fraction needs a shared vocabulary"));
        }
        Ok(())
    }

    pub fn class_word(class: usize, i: usize) -> String {
        format!("c{class}w{i}")
    }

    pub fn shared_word(i: usize) -> String {
        format!("s{i}")
    }

    fn zipf(n: usize) -> Vec<f64> {
        (1..=n).map(|r| 1.0 / r as f64).collect()
    }

    /// Exact unigram distribution of class `class` over word strings.
    pub fn unigram(&self, class: usize) -> BTreeMap<String, f64> {
        let mut p = BTreeMap::new();
        let pools = [
            (1.0 - self.shared_fraction, Self::zipf(self.class_vocab), true),
            (self.shared_fraction, Self::zipf(self.shared_vocab), false),
        ];
        for (mass, w, own) in pools {
            let total: f64 = w.iter().sum();
            if mass == 0.0 || total == 0.0 {
                continue;
            }
            for (i, wi) in w.iter().enumerate() {
                let word = if own { Self::class_word(class, i) } else { Self::shared_word(i) };
                *p.entry(word).or_insert(0.0) += mass * wi / total;
            }
        }
        p
    }
}

/// Draws a corpus per `spec`; classes are named `0..num_classes`.
pub fn synth_generate(spec: &SynthSpec) -> Result<LabeledCorpus> {
    spec.validate()?;
    let class_pick = WeightedIndex::new(SynthSpec::zipf(spec.class_vocab)).map_err(|e| Error::contract(e.to_string()))?;
    let shared_pick = if spec.shared_vocab > 0 {
        Some(WeightedIndex::new(SynthSpec::zipf(spec.shared_vocab)).map_err(|e| Error::contract(e.to_string()))?)
    } else {
        None
    };
    let root = RngStream::new(spec.seed);
    let mut lines = Vec::with_capacity(spec.num_classes * spec.sentences_per_class);
    let mut labels = Vec::with_capacity(lines.capacity());
    for class in 0..spec.num_classes {
        let mut rng = root.derive(purpose::SYNTH, class as u32);
        for _ in 0..spec.sentences_per_class {
            let len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
            let line: Vec<String> = (0..len)
                .map(|_| match &shared_pick {
                    Some(sp) if rng.uniform() < spec.shared_fraction => SynthSpec::shared_word(rng.sample(sp)),
                    _ => SynthSpec::class_word(class, rng.sample(&class_pick)),
                })
                .collect();
            lines.push(line);
            labels.push(class.to_string());
        }
    }
    // Fixed word order: all class pools, then the shared pool.
    let mut words: Vec<String> = (0..spec.num_classes)
        .flat_map(|c| (0..spec.class_vocab).map(move |i| SynthSpec::class_word(c, i)))
        .collect();
    words.extend((0..spec.shared_vocab).map(SynthSpec::shared_word));
    let vocab = Vocab::from_words(words)?;
    Ok(LabeledCorpus::encode(&lines, Some(&labels), vocab)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn cleaning_rules() {
        assert_eq!(clean_line("Hello World"), toks(&["hello", "world"]));
        assert_eq!(clean_line("café ☕ here"), toks(&["caf", "here"]));
        assert_eq!(clean_line("see http://x.y now"), toks(&["see", "now"]));
        assert_eq!(clean_line("go to www.example.com/a?b today"), toks(&["go", "to", "today"]));
        assert_eq!(clean_line("he said \"don't\" “twice”"), toks(&["he", "said", "don't", "twice"]));
    }

    #[test]
    fn cleaning_matches_byte_level_oracle() {
        // Independent rule trace: drop every byte ≥ 0x80, then quotes, then split.
        let line = "Ünïcödé \"QUOTED\" words…  ok";
        let bytes: Vec<u8> = line.bytes().filter(|b| *b < 0x80 && *b != b'"').collect();
        let oracle: Vec<String> =
            String::from_utf8(bytes).unwrap().to_lowercase().split_whitespace().map(str::to_string).collect();
        assert_eq!(clean_line(line), oracle);
    }

    #[test]
    fn empty_lines_are_dropped_and_counted() {
        let p = preprocess(["ok then", "☕☕", "", "fine"]);
        assert_eq!(p.lines.len(), 2);
        assert_eq!(p.kept, vec![0, 3]);
        assert_eq!(p.dropped, 2);
    }

    #[test]
    fn vocab_cap_and_ties() {
        let v = Vocab::build(&[toks(&["a", "a", "b"])], 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), UNK);
        let tie = Vocab::build(&[toks(&["b", "a"])], 1).unwrap();
        assert_eq!(tie.words(), &["a".to_string()]);
        assert!(Vocab::build::<String>(&[vec![]], 5).is_err());
    }

    #[test]
    fn vocab_size_with_many_distinct_tokens() {
        let line: Vec<String> = (0..25_000).map(|i| format!("t{i}")).collect();
        let v = Vocab::build(&[line], DEFAULT_VOCAB_CAP).unwrap();
        assert_eq!(v.len(), 20_003);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(EOS), Some("<eos>"));
        assert_eq!(v.token(UNK), Some("<unk>"));
    }

    #[test]
    fn encode_decode_round_trip() {
        let lines = vec![toks(&["the", "cat", "sat"]), toks(&["the", "dog"])];
        let v = Vocab::build(&lines, 10).unwrap();
        for l in &lines {
            let e = v.encode(l);
            assert_eq!(e.unknown, 0);
            assert_eq!(&v.decode(&e.ids).unwrap(), l);
        }
        let e = v.encode(&toks(&["the", "bird"]));
        assert_eq!(e.unknown, 1);
        assert_eq!(v.decode(&e.ids).unwrap(), toks(&["the", "<unk>"]));
        let mut with_eos = v.encode(&toks(&["cat"])).ids;
        with_eos.extend([EOS, PAD, 3]);
        assert_eq!(v.decode(&with_eos).unwrap(), toks(&["cat"]));
    }

    #[test]
    fn long_sentences_truncate() {
        let v = Vocab::build(&[toks(&["x"])], 10).unwrap();
        let long: Vec<String> = vec!["x".to_string(); 250];
        let e = v.encode(&long);
        assert!(e.truncated);
        assert_eq!(e.ids.len(), MAX_SENTENCE_LEN);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::build(&[toks(&["b", "a", "a", "c"])], 10).unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a\nb\nc\n");
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }

    fn two_class(n: usize) -> LabeledCorpus {
        let lines: Vec<Vec<String>> = (0..2 * n).map(|i| toks(&[if i % 2 == 0 { "x" } else { "y" }])).collect();
        let labels: Vec<String> = (0..2 * n).map(|i| (i % 2).to_string()).collect();
        let v = Vocab::build(&lines, 10).unwrap();
        LabeledCorpus::encode(&lines, Some(&labels), v).unwrap().0
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let c = two_class(12_000);
        let s = split_per_class(&c, 10_000, 1_000, 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (20_000, 2_000, 2_000));
        let mut seen = std::collections::HashSet::new();
        for r in &s.manifest {
            assert!(seen.insert(r.line_index));
        }
        let again = split_per_class(&c, 10_000, 1_000, 3).unwrap();
        assert_eq!(again.manifest, s.manifest);
        let other = split_per_class(&c, 10_000, 1_000, 4).unwrap();
        assert_ne!(other.manifest, s.manifest);
    }

    #[test]
    fn split_names_short_class() {
        let c = two_class(5);
        match split_per_class(&c, 4, 1, 0) {
            Err(Error::Contract(m)) => assert!(m.contains("'0'"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn record_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        let recs = vec![
            RawRecord { label: Some("pos".into()), text: "Great food".into() },
            RawRecord { label: Some("neg".into()), text: "meh".into() },
        ];
        write_records(&p, &recs).unwrap();
        assert_eq!(read_records(&p, true).unwrap(), recs);
        let (corpus, stats, dropped) = load_corpus(&p, true, None, 100).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(stats.unknown_tokens, 0);
        assert_eq!(corpus.class_names, vec!["neg".to_string(), "pos".to_string()]);
        assert_eq!(corpus.labels().unwrap(), &[1, 0]);
        fs::write(&p, "no tab here\n").unwrap();
        assert!(matches!(read_records(&p, true), Err(Error::Format(_))));
    }

    #[test]
    fn numeric_class_names_sort_numerically() {
        let names = sorted_class_names(["10", "2", "1"].into_iter());
        assert_eq!(names, vec!["1", "2", "10"]);
    }

    #[test]
    fn synth_is_deterministic_and_disjoint_without_sharing() {
        let spec = SynthSpec { sentences_per_class: 50, seed: 9, ..Default::default() };
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a, synth_generate(&spec).unwrap());
        assert_eq!(a.len(), 100);
        for (s, &l) in a.sentences.iter().zip(a.labels().unwrap()) {
            for &id in s {
                let w = a.vocab.token(id).unwrap();
                assert!(w.starts_with(&format!("c{l}w")), "{w} in class {l}");
            }
        }
    }

    #[test]
    fn synth_unigram_is_a_distribution() {
        for f in [0.0, 0.5, 1.0] {
            let spec = SynthSpec { shared_fraction: f, ..Default::default() };
            let total: f64 = spec.unigram(1).values().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert_eq!(SynthSpec { shared_fraction: 1.0, ..Default::default() }.unigram(0), SynthSpec { shared_fraction: 1.0, ..Default::default() }.unigram(1));
    }

    #[test]
    fn synth_validation() {
        assert!(SynthSpec { max_len: 300, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { shared_vocab: 0, shared_fraction: 0.3, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { num_classes: 0, ..Default::default() }.validate().is_err());
    }
}
