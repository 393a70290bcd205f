//! Command-line front end: config loading, subcommands and their artifacts.
//!
//! Settings come from three layers, later ones winning: built-in defaults, a
//! sectioned `key = value` file (`--config`), and per-subcommand flags. All
//! randomness derives from `--seed`; a child stream for purpose `p` and index
//! `i` is seeded with `seed ^ (p << 32 | i)`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{class_kl_matrix, gamma_class, mean_pattern_distance, write_gamma_csv, write_kl_csv, BINARIZE_THRESHOLD};
use crate::classify::{simple_classifier, train_classifier, AccuracyReport, ClassifierConfig};
use crate::diff::rng::purpose;
use crate::diff::RngStream;
use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::metrics::{average_hoyer_codes, write_codes_csv, HoyerReport};
use crate::model::{generate, latent_codes, load_model, prior_sample, CodeMode, ModelConfig, ParameterStore, Variant};
use crate::textdata::{
    load_corpus, split_per_class, synth_generate, write_manifest, write_records, LabeledCorpus, SynthSpec, Vocab,
    DEFAULT_VOCAB_CAP,
};
use crate::training::{FitOutputs, TrainConfig, Trainer};

/// Probe and split settings (`[classify]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifySettings {
    pub k: usize,
    pub hidden: [usize; 2],
    pub slope: f64,
    pub epochs: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        Self { k: 5, hidden: [32, 32], slope: 0.01, epochs: 10, train_per_class: 600, eval_per_class: 200 }
    }
}

impl ClassifySettings {
    pub const KEYS: [&'static str; 7] = ["k", "hidden1", "hidden2", "slope", "epochs", "train_per_class", "eval_per_class"];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = parse(key, value)?,
            "hidden1" => self.hidden[0] = parse(key, value)?,
            "hidden2" => self.hidden[1] = parse(key, value)?,
            "slope" => self.slope = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "train_per_class" => self.train_per_class = parse(key, value)?,
            "eval_per_class" => self.eval_per_class = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown classify key '{other}'"))),
        }
        Ok(())
    }
}

/// Corpus reading and synthesis settings (`[data]`).
#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub vocab_cap: usize,
    /// Corpus files are `label<TAB>sentence`.
    pub labeled: bool,
    pub synth: SynthSpec,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self { vocab_cap: DEFAULT_VOCAB_CAP, labeled: true, synth: SynthSpec::default() }
    }
}

impl DataSettings {
    pub const KEYS: [&'static str; 9] = [
        "vocab_cap",
        "labeled",
        "classes",
        "sentences_per_class",
        "class_vocab",
        "shared_vocab",
        "shared_fraction",
        "min_len",
        "max_len",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "labeled" => self.labeled = parse(key, value)?,
            "classes" => s.num_classes = parse(key, value)?,
            "sentences_per_class" => s.sentences_per_class = parse(key, value)?,
            "class_vocab" => s.class_vocab = parse(key, value)?,
            "shared_vocab" => s.shared_vocab = parse(key, value)?,
            "shared_fraction" => s.shared_fraction = parse(key, value)?,
            "min_len" => s.min_len = parse(key, value)?,
            "max_len" => s.max_len = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown data key '{other}'"))),
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    crate::model::parse_value(key, value)
}

/// Everything a subcommand may need, merged from defaults, file and flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    /// `[model]` settings, applied once the vocabulary size is known.
    pub model: Vec<(String, String)>,
    pub train: TrainConfig,
    pub classify: ClassifySettings,
    pub data: DataSettings,
}

impl RunConfig {
    /// Parses sectioned `key = value` text. Unknown sections or keys and
    /// unparsable values are rejected with the key named.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut rc = Self::default();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let at = |e: Error| match e {
                    Error::Config(m) => Error::Config(format!("[{}] {m}", section.unwrap_or(""))),
                    other => other,
                };
                match section {
                    Some(s) => rc.set(s, key, value).map_err(at)?,
                    None => return Err(Error::Config(format!("key '{key}' appears before any section"))),
                }
            }
        }
        Ok(rc)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_ini_str(&text).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "model" => {
                if key == "vocab_size" {
                    return Err(Error::Config("key 'vocab_size' is derived from the vocabulary and cannot be set".into()));
                }
                // Validate the value now; it is re-applied to the real config later.
                ModelConfig::new(Variant::Vae, 100).set(key, value)?;
                self.model.push((key.to_string(), value.to_string()));
            }
            "train" => self.train.set(key, value)?,
            "classify" => self.classify.set(key, value)?,
            "data" => self.data.set(key, value)?,
            other => return Err(Error::Config(format!("unknown section '{other}' (model | train | classify | data)"))),
        }
        Ok(())
    }

    fn apply(&mut self, section: &str, pairs: Vec<(&'static str, &str)>) -> Result<()> {
        pairs.into_iter().try_for_each(|(k, v)| self.set(section, k, v))
    }

    /// Model config for a vocabulary of `vocab_size`; defaults to HSVAE.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let variant = match self.model.iter().rev().find(|(k, _)| k == "variant") {
            Some((_, v)) => v.parse()?,
            None => Variant::Hsvae,
        };
        let mut c = ModelConfig::new(variant, vocab_size);
        for (k, v) in &self.model {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Declares a flag group whose flags map one-to-one onto config keys.
macro_rules! key_flags {
    ($name:ident, $section:literal, { $($field:ident => $help:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Default, Args)]
        pub struct $name {
            $(
                #[arg(long, value_name = "VALUE", help = concat!($help, " [", $section, ".", stringify!($field), "]"))]
                pub $field: Option<String>,
            )*
        }

        impl $name {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(if let Some(x) = &self.$field { v.push((stringify!($field), x.as_str())); })*
                v
            }
        }
    };
}

key_flags!(ModelFlags, "model", {
    variant => "Model family: VAE | VAE_L1 | VAE_L2 | MATVAE | HSVAE",
    latent_dim => "Latent dimensionality D",
    hidden_dim => "GRU hidden width H",
    embed_dim => "Token embedding width",
    psi => "Weight on the z-KL term",
    lambda => "Weight on the gate-KL (HSVAE) or MMD (MATVAE) term",
    z_samples => "z draws per gate draw",
    gamma_samples => "Gate draws per sentence",
    alpha => "Beta prior alpha over the gates",
    beta => "Beta prior beta over the gates",
    spike_std => "Standard deviation of the spike component",
    temperature => "Binary Concrete temperature",
    penalty_weight => "L1/L2 penalty weight (VAE_L1, VAE_L2)",
    kl_estimator => "HSVAE z-KL estimator: paired | mc",
    beta_sampler => "Beta sampler: gamma | inverse-cdf",
    mat_prior_weight => "Spike weight of the MATVAE prior",
    mat_kl => "MATVAE z-KL surrogate: mc | gaussian",
    mmd_bandwidth => "RBF bandwidth for the MMD term, or 'median'",
});

key_flags!(TrainFlags, "train", {
    learning_rate => "Adam learning rate",
    batch_size => "Sentences per step",
    epochs => "Training epochs (target total when resuming)",
    schedule => "KL-weight schedule: constant | linear",
    warmup_steps => "Steps of linear KL-weight warm-up (implies linear)",
    clip_norm => "Global gradient-norm clip",
    checkpoint_every => "Checkpoint every N epochs (0: final only)",
    adam_beta1 => "Adam first-moment decay",
    adam_beta2 => "Adam second-moment decay",
    adam_eps => "Adam epsilon",
});

key_flags!(ClassifyFlags, "classify", {
    k => "Latent samples averaged per prediction",
    hidden1 => "Width of the first probe layer",
    hidden2 => "Width of the second probe layer",
    slope => "Leaky-rectifier negative slope",
    epochs => "Probe training epochs",
    train_per_class => "Training sentences per class",
    eval_per_class => "Validation and test sentences per class (each)",
});

key_flags!(SynthFlags, "data", {
    classes => "Number of classes",
    sentences_per_class => "Sentences generated per class",
    class_vocab => "Words in each class-specific pool",
    shared_vocab => "Words in the shared pool",
    shared_fraction => "Probability a token comes from the shared pool",
    min_len => "Minimum sentence length",
    max_len => "Maximum sentence length",
});

#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// Corpus file (`label<TAB>sentence` lines unless --unlabeled).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Vocabulary file; defaults to vocab.txt beside the checkpoint or in its parent directory.
    #[arg(long, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    /// Corpus lines carry no label [data.labeled = false].
    #[arg(long)]
    pub unlabeled: bool,
    /// Vocabulary size cap when building from the corpus [data.vocab_cap].
    #[arg(long, value_name = "N")]
    pub vocab_cap: Option<String>,
}

impl DataFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let mut v = Vec::new();
        if self.unlabeled {
            v.push(("labeled", "false"));
        }
        if let Some(c) = &self.vocab_cap {
            v.push(("vocab_cap", c.as_str()));
        }
        v
    }
}

#[derive(Debug, Parser)]
#[command(name = "hsvae", version, about = "Sparse sequence VAEs (HSVAE and baselines) with their evaluation suite")]
pub struct Cli {
    /// Sectioned `key = value` config file ([model], [train], [classify], [data]).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream [train.seed].
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Clean a corpus and build its vocabulary → vocab.txt, corpus.tsv, preprocess.json.
    Preprocess {
        /// Raw corpus file.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Lines carry no label [data.labeled = false].
        #[arg(long)]
        unlabeled: bool,
        /// Vocabulary size cap [data.vocab_cap].
        #[arg(long, value_name = "N")]
        vocab_cap: Option<String>,
    },
    /// Generate a labeled synthetic corpus → synth.tsv, synth.json.
    Synth {
        #[command(flatten)]
        flags: SynthFlags,
    },
    /// Train a model → train_log.jsonl, checkpoints/, model.ckpt, vocab.txt.
    Train {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Continue from a checkpoint written by an earlier run (its model settings win).
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Average Hoyer sparsity of a trained encoder's codes → hoyer.jsonl.
    EvalHoyer {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataFlags,
        /// Code per sentence: posterior-sample | posterior-mean.
        #[arg(long, default_value = "posterior-sample")]
        mode: CodeMode,
        /// Also write the codes to codes.csv.
        #[arg(long)]
        codes_csv: bool,
    },
    /// Train and score a probe on a frozen encoder (or the end-to-end baseline) → accuracy.jsonl, splits.jsonl.
    Classify {
        /// Encoder checkpoint (not needed with --baseline).
        #[arg(long, value_name = "PATH", required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        classify: ClassifyFlags,
        /// Train a GRU encoder + MLP end to end instead of probing a checkpoint.
        #[arg(long)]
        baseline: bool,
        /// Permute the labels before splitting (chance-level control).
        #[arg(long)]
        shuffle_labels: bool,
    },
    /// Per-class binarised gate patterns of an HSVAE → gamma_class.csv, gamma_summary.json.
    AnalyzeGamma {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Pairwise KL between class unigram distributions → class_kl.csv.
    ClassKl {
        #[command(flatten)]
        data: DataFlags,
    },
    /// Finite-difference check of every gradient → gradcheck.jsonl.
    Gradcheck,
    /// Free-running decoding from prior draws (or from --data reconstructions) → decoded.txt.
    DemoDecode {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Vocabulary file; defaults as for --vocab elsewhere.
        #[arg(long, value_name = "PATH")]
        vocab: Option<PathBuf>,
        /// Reconstruct the first --count sentences of this corpus instead of sampling.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
        /// Pick the most likely token at each step instead of sampling.
        #[arg(long)]
        greedy: bool,
    },
}

/// Parses `argv`, runs the subcommand and returns the process exit status:
/// 0 on success, 1 for usage/config/contract errors, 2 for numeric failures.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut rc = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        rc.train.seed = s;
    }
    let seed = rc.train.seed;
    rc.data.synth.seed = seed;
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Preprocess { input, unlabeled, vocab_cap } => {
            if unlabeled {
                rc.set("data", "labeled", "false")?;
            }
            if let Some(c) = vocab_cap {
                rc.set("data", "vocab_cap", &c)?;
            }
            preprocess(&rc, &input, out)
        }
        Command::Synth { flags } => {
            rc.apply("data", flags.pairs())?;
            synth(&rc, out)
        }
        Command::Train { data, model, train, resume } => {
            rc.apply("data", data.pairs())?;
            rc.apply("model", model.pairs())?;
            rc.apply("train", train.pairs())?;
            if cli.seed.is_some() {
                rc.train.seed = seed;
            }
            let epochs_given = train.epochs.is_some();
            train_cmd(&rc, &data, resume.as_deref(), epochs_given, out)
        }
        Command::EvalHoyer { checkpoint, data, mode, codes_csv } => {
            rc.apply("data", data.pairs())?;
            eval_hoyer(&rc, &checkpoint, &data, mode, codes_csv, out)
        }
        Command::Classify { checkpoint, data, classify, baseline, shuffle_labels } => {
            rc.apply("data", data.pairs())?;
            rc.apply("classify", classify.pairs())?;
            classify_cmd(&rc, checkpoint.as_deref(), &data, baseline, shuffle_labels, out)
        }
        Command::AnalyzeGamma { checkpoint, data } => {
            rc.apply("data", data.pairs())?;
            analyze_gamma(&rc, &checkpoint, &data, out)
        }
        Command::ClassKl { data } => {
            rc.apply("data", data.pairs())?;
            class_kl(&rc, &data, out)
        }
        Command::Gradcheck => gradcheck(seed, out),
        Command::DemoDecode { checkpoint, vocab, data, count, max_len, greedy } => {
            demo_decode(&rc, &checkpoint, vocab.as_deref(), data.as_deref(), count, max_len, greedy, out)
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::contract(format!("{what} '{}' does not exist", path.display())))
    }
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// `--vocab`, else vocab.txt beside the checkpoint, else one directory up.
fn resolve_vocab(explicit: Option<&Path>, checkpoint: &Path) -> Result<Vocab> {
    if let Some(p) = explicit {
        require_file(p, "vocabulary")?;
        return Vocab::load(p);
    }
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    for cand in [dir.join("vocab.txt"), dir.join("..").join("vocab.txt")] {
        if cand.is_file() {
            return Vocab::load(&cand);
        }
    }
    Err(Error::contract(format!("no vocab.txt found near '{}'; pass --vocab", checkpoint.display())))
}

fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParameterStore)> {
    require_file(path, "checkpoint")?;
    load_model(path)
}

fn load_data(rc: &RunConfig, path: &Path, vocab: Option<Vocab>) -> Result<LabeledCorpus> {
    require_file(path, "corpus")?;
    let expected = vocab.as_ref().map(Vocab::len);
    let (corpus, stats, dropped) = load_corpus(path, rc.data.labeled, vocab, rc.data.vocab_cap)?;
    if corpus.is_empty() {
        return Err(Error::contract(format!("'{}' holds no usable sentences", path.display())));
    }
    eprintln!(
        "loaded {} sentences from {} ({} dropped, {} unknown tokens, {} truncated{})",
        corpus.len(),
        path.display(),
        dropped,
        stats.unknown_tokens,
        stats.truncated_sentences,
        expected.map_or(String::new(), |v| format!(", vocabulary of {v}"))
    );
    Ok(corpus)
}

fn check_vocab(config: &ModelConfig, vocab: &Vocab) -> Result<()> {
    if config.vocab_size != vocab.len() {
        return Err(Error::contract(format!(
            "checkpoint expects a vocabulary of {} but the vocabulary file has {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct PreprocessReport<'a> {
    input: &'a str,
    labeled: bool,
    sentences: usize,
    dropped: usize,
    vocab_size: usize,
    unknown_tokens: usize,
    truncated_sentences: usize,
    classes: &'a [String],
}

fn preprocess(rc: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    require_file(input, "input")?;
    let (corpus, stats, dropped) = load_corpus(input, rc.data.labeled, None, rc.data.vocab_cap)?;
    corpus.vocab.save(&out.join("vocab.txt"))?;
    write_records(&out.join("corpus.tsv"), &corpus.to_records()?)?;
    let input = input.display().to_string();
    let report = PreprocessReport {
        input: &input,
        labeled: rc.data.labeled,
        sentences: corpus.len(),
        dropped,
        vocab_size: corpus.vocab.len(),
        unknown_tokens: stats.unknown_tokens,
        truncated_sentences: stats.truncated_sentences,
        classes: &corpus.class_names,
    };
    write_json(&out.join("preprocess.json"), &report)?;
    println!("{} sentences kept, {} dropped, vocabulary of {}", corpus.len(), dropped, corpus.vocab.len());
    Ok(())
}

fn synth(rc: &RunConfig, out: &Path) -> Result<()> {
    let corpus = synth_generate(&rc.data.synth)?;
    write_records(&out.join("synth.tsv"), &corpus.to_records()?)?;
    write_json(&out.join("synth.json"), &rc.data.synth)?;
    println!("{} sentences over {} classes → {}", corpus.len(), corpus.num_classes(), out.join("synth.tsv").display());
    Ok(())
}

fn train_cmd(rc: &RunConfig, data: &DataFlags, resume: Option<&Path>, epochs_given: bool, out: &Path) -> Result<()> {
    let mut trainer = match resume {
        Some(ckpt) => {
            require_file(ckpt, "checkpoint")?;
            let epochs = epochs_given.then_some(rc.train.epochs);
            let t = Trainer::resume_from(ckpt, epochs)?;
            eprintln!("resuming {} at epoch {} (step {})", t.model.variant, t.epoch, t.step);
            t
        }
        None => {
            let vocab = match &data.vocab {
                Some(p) => {
                    require_file(p, "vocabulary")?;
                    Some(Vocab::load(p)?)
                }
                None => None,
            };
            let corpus = load_data(rc, &data.data, vocab)?;
            Trainer::new(rc.model_config(corpus.vocab.len())?, rc.train.clone())?
        }
    };
    let vocab = match (&data.vocab, resume) {
        (Some(p), _) => Vocab::load(p)?,
        (None, Some(ckpt)) => resolve_vocab(None, ckpt)?,
        (None, None) => load_corpus(&data.data, rc.data.labeled, None, rc.data.vocab_cap)?.0.vocab,
    };
    check_vocab(&trainer.model, &vocab)?;
    let corpus = load_data(rc, &data.data, Some(vocab.clone()))?;
    vocab.save(&out.join("vocab.txt"))?;
    let outputs = FitOutputs { log: Some(out.join("train_log.jsonl")), checkpoint_dir: Some(out.join("checkpoints")) };
    let report = trainer.fit(&corpus.sentences, &outputs)?;
    trainer.checkpoint().write(out.join("model.ckpt"))?;
    for r in &report.records {
        eprintln!(
            "epoch {:>3}  rec {:>10.4}  kl_z {:>8.4}  kl_gamma {:>8.4}  mmd {:>8.4}  objective {:>10.4}",
            r.epoch, r.reconstruction, r.kl_z, r.kl_gamma, r.mmd, r.objective
        );
    }
    if !report.events.is_empty() {
        eprintln!("{} training events (see train_log.jsonl for per-epoch counts)", report.events.len());
    }
    println!("trained {} for {} epochs → {}", trainer.model.variant, trainer.epoch, out.join("model.ckpt").display());
    Ok(())
}

#[derive(Serialize)]
struct HoyerRecord<'a> {
    checkpoint: &'a str,
    data: &'a str,
    variant: String,
    seed: u64,
    #[serde(flatten)]
    report: &'a HoyerReport,
}

fn eval_hoyer(rc: &RunConfig, checkpoint: &Path, data: &DataFlags, mode: CodeMode, codes_csv: bool, out: &Path) -> Result<()> {
    let (config, store) = load_checkpoint(checkpoint)?;
    let vocab = resolve_vocab(data.vocab.as_deref(), checkpoint)?;
    check_vocab(&config, &vocab)?;
    let corpus = load_data(rc, &data.data, Some(vocab))?;
    let mut rng = RngStream::new(rc.train.seed).derive(purpose::EVAL, 0);
    let codes: Vec<Vec<f64>> = latent_codes(&store, &config, &corpus.sentences, mode, &mut rng)?.into_iter().map(|c| c.z).collect();
    let report = average_hoyer_codes(&codes, mode)?;
    if codes_csv {
        write_codes_csv(&out.join("codes.csv"), &codes)?;
    }
    let (ck, dt) = (checkpoint.display().to_string(), data.data.display().to_string());
    let record = HoyerRecord { checkpoint: &ck, data: &dt, variant: config.variant.to_string(), seed: rc.train.seed, report: &report };
    let mut f = fs::File::create(out.join("hoyer.jsonl"))?;
    write_json_line(&mut f, &record)?;
    println!(
        "average hoyer {:.4} ({} codes, mode {}, {} zero codes, {} unnormalised dims)",
        report.average_hoyer, report.num_codes, mode, report.skipped_codes, report.unnormalised_dims
    );
    Ok(())
}

fn classify_cmd(
    rc: &RunConfig,
    checkpoint: Option<&Path>,
    data: &DataFlags,
    baseline: bool,
    shuffle_labels: bool,
    out: &Path,
) -> Result<()> {
    let seed = rc.train.seed;
    let model = match checkpoint {
        Some(c) if !baseline => Some(load_checkpoint(c)?),
        _ => None,
    };
    let vocab = match (data.vocab.as_deref(), checkpoint) {
        (Some(p), _) => Some(resolve_vocab(Some(p), Path::new("."))?),
        (None, Some(c)) if !baseline => Some(resolve_vocab(None, c)?),
        _ => None,
    };
    if let (Some((config, _)), Some(v)) = (&model, &vocab) {
        check_vocab(config, v)?;
    }
    let mut corpus = load_data(rc, &data.data, vocab)?;
    if corpus.labels.is_none() {
        return Err(Error::contract("classification needs a labeled corpus"));
    }
    if shuffle_labels {
        corpus = corpus.shuffled_labels(&mut RngStream::new(seed).derive(purpose::SHUFFLE, u32::MAX))?;
    }
    let cs = &rc.classify;
    let splits = split_per_class(&corpus, cs.train_per_class, cs.eval_per_class, seed)?;
    write_manifest(&out.join("splits.jsonl"), &splits.manifest)?;
    let mut config = ClassifierConfig::new(corpus.num_classes());
    config.k = cs.k;
    config.hidden = cs.hidden;
    config.slope = cs.slope;
    let mut tc = rc.train.clone();
    tc.epochs = cs.epochs;
    let (variant, ckpt_id, k, result) = match &model {
        Some((mc, store)) => {
            let (_, r) = train_classifier(store, mc, &splits.train, &splits.test, config, &tc)?;
            (mc.variant.to_string(), checkpoint.expect("model implies checkpoint").display().to_string(), cs.k, r)
        }
        None => {
            let base = ModelConfig::new(Variant::Vae, corpus.vocab.len());
            let (_, r) = simple_classifier(&splits.train, &splits.test, config, base.embed_dim, base.hidden_dim, &tc)?;
            ("BASELINE".to_string(), "none".to_string(), 1, r)
        }
    };
    let mut f = fs::File::create(out.join("accuracy.jsonl"))?;
    for (split, acc) in [("train", result.train_accuracy), ("test", result.accuracy)] {
        let rec = AccuracyReport {
            variant: variant.clone(),
            encoder_checkpoint: ckpt_id.clone(),
            split: split.to_string(),
            k,
            accuracy: acc,
            seed,
            shuffled_labels: shuffle_labels,
            degenerate: result.degenerate,
        };
        write_json_line(&mut f, &rec)?;
    }
    if let Some(last) = result.losses.last() {
        eprintln!("final probe loss {last:.4}");
    }
    println!("{variant}: test accuracy {:.4} (train {:.4})", result.accuracy, result.train_accuracy);
    Ok(())
}

#[derive(Serialize)]
struct GammaSummary<'a> {
    classes: &'a [String],
    threshold: f64,
    mean_pattern_distance: f64,
    /// Sentences per class behind each pattern.
    support: Vec<usize>,
}

fn analyze_gamma(rc: &RunConfig, checkpoint: &Path, data: &DataFlags, out: &Path) -> Result<()> {
    let (config, store) = load_checkpoint(checkpoint)?;
    if config.variant != Variant::Hsvae {
        return Err(Error::contract(format!("gate patterns need an HSVAE checkpoint, got {}", config.variant)));
    }
    let vocab = resolve_vocab(data.vocab.as_deref(), checkpoint)?;
    check_vocab(&config, &vocab)?;
    let corpus = load_data(rc, &data.data, Some(vocab))?;
    let patterns = gamma_class(&store, &config, &corpus)?;
    write_gamma_csv(&out.join("gamma_class.csv"), &patterns, &corpus.class_names)?;
    let distance = if patterns.len() >= 2 { mean_pattern_distance(&patterns)? } else { 0.0 };
    let summary = GammaSummary {
        classes: &corpus.class_names,
        threshold: BINARIZE_THRESHOLD,
        mean_pattern_distance: distance,
        support: patterns.iter().map(|p| p.support).collect(),
    };
    write_json(&out.join("gamma_summary.json"), &summary)?;
    println!("{} class patterns, mean pattern distance {distance:.3}", patterns.len());
    Ok(())
}

fn class_kl(rc: &RunConfig, data: &DataFlags, out: &Path) -> Result<()> {
    let vocab = match &data.vocab {
        Some(p) => Some(resolve_vocab(Some(p), Path::new("."))?),
        None => None,
    };
    let corpus = load_data(rc, &data.data, vocab)?;
    let m = class_kl_matrix(&corpus)?;
    write_kl_csv(&out.join("class_kl.csv"), &m)?;
    println!("{} classes, mean off-diagonal KL {:.4}", m.classes.len(), m.mean_off_diagonal());
    Ok(())
}

#[derive(Serialize)]
struct GradRecord<'a> {
    name: &'a str,
    parameters: usize,
    max_rel_error: f64,
    tolerance: f64,
    passed: bool,
}

fn gradcheck(seed: u64, out: &Path) -> Result<()> {
    let cases = run_suite(seed)?;
    let mut f = fs::File::create(out.join("gradcheck.jsonl"))?;
    let mut failed = Vec::new();
    for c in &cases {
        let rec = GradRecord {
            name: &c.name,
            parameters: c.report.analytic.len(),
            max_rel_error: c.report.max_rel_error,
            tolerance: c.tolerance,
            passed: c.passed(),
        };
        write_json_line(&mut f, &rec)?;
        println!("{:<40} {:>6} {:>12.3e} {}", c.name, rec.parameters, rec.max_rel_error, if rec.passed { "ok" } else { "FAIL" });
        if !rec.passed {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} gradient checks passed", cases.len());
        Ok(())
    } else {
        Err(Error::numeric(format!("{} of {} gradient checks failed: {}", failed.len(), cases.len(), failed.join(", "))))
    }
}

#[allow(clippy::too_many_arguments)]
fn demo_decode(
    rc: &RunConfig,
    checkpoint: &Path,
    vocab: Option<&Path>,
    data: Option<&Path>,
    count: usize,
    max_len: usize,
    greedy: bool,
    out: &Path,
) -> Result<()> {
    let (config, store) = load_checkpoint(checkpoint)?;
    let vocab = resolve_vocab(vocab, checkpoint)?;
    check_vocab(&config, &vocab)?;
    let root = RngStream::new(rc.train.seed);
    let mut lines = Vec::new();
    let decode = |z: &[f64], i: usize| -> Result<String> {
        let mut rng = root.derive(purpose::DECODE, i as u32);
        let ids = generate(&store, z, max_len, (!greedy).then_some(&mut rng))?;
        Ok(vocab.decode(&ids)?.join(" "))
    };
    match data {
        Some(path) => {
            let corpus = load_data(rc, path, Some(vocab.clone()))?;
            let n = count.min(corpus.len());
            let codes = latent_codes(&store, &config, &corpus.sentences[..n], CodeMode::PosteriorMean, &mut root.derive(purpose::EVAL, 0))?;
            for (i, (s, c)) in corpus.sentences.iter().zip(codes).enumerate() {
                lines.push(format!("input\t{}", vocab.decode(s)?.join(" ")));
                lines.push(format!("output\t{}", decode(&c.z, i)?));
            }
        }
        None => {
            for i in 0..count {
                let z = prior_sample(&config, &mut root.derive(purpose::PRIOR, i as u32))?;
                lines.push(format!("prior\t{}", decode(&z, i)?));
            }
        }
    }
    let mut f = fs::File::create(out.join("decoded.txt"))?;
    for l in &lines {
        writeln!(f, "{l}")?;
        println!("{l}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_and_keys() {
        let rc = RunConfig::from_ini_str("[model]\nvariant = VAE_L1\nlatent_dim = 8\n[train]\nepochs = 3\n[classify]\nk = 7\n[data]\nshared_fraction = 0.5\n").unwrap();
        assert_eq!(rc.train.epochs, 3);
        assert_eq!(rc.classify.k, 7);
        assert_eq!(rc.data.synth.shared_fraction, 0.5);
        let mc = rc.model_config(50).unwrap();
        assert_eq!((mc.variant, mc.latent_dim, mc.vocab_size), (Variant::VaeL1, 8, 50));
        assert_eq!(RunConfig::default().model_config(50).unwrap().variant, Variant::Hsvae);
    }

    #[test]
    fn malformed_config_names_the_key() {
        for (text, key) in [
            ("[train]\nlearning_rat = 0.1\n", "learning_rat"),
            ("[model]\nlatent_dim = many\n", "latent_dim"),
            ("[model]\nvocab_size = 10\n", "vocab_size"),
            ("[data]\nclasses = -1\n", "classes"),
            ("stray = 1\n", "stray"),
        ] {
            let e = RunConfig::from_ini_str(text).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{e}");
            assert!(e.to_string().contains(key), "{e}");
            assert_eq!(e.exit_code(), 1);
        }
        assert!(RunConfig::from_ini_str("[optim]\nlr = 1\n").unwrap_err().to_string().contains("optim"));
    }

    #[test]
    fn every_config_key_has_a_flag() {
        use clap::CommandFactory;
        let cmd = Cli::command();
        let flags = |sub: &str| -> Vec<String> {
            cmd.find_subcommand(sub).unwrap().get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect()
        };
        let train = flags("train");
        for k in ModelConfig::KEYS.iter().filter(|&&k| k != "vocab_size").chain(TrainConfig::KEYS.iter().filter(|&&k| k != "seed")) {
            assert!(train.contains(&k.replace('_', "-")), "train lacks --{k}");
        }
        let classify = flags("classify");
        assert!(ClassifySettings::KEYS.iter().all(|k| classify.contains(&k.replace('_', "-"))));
        let synth = flags("synth");
        assert!(DataSettings::KEYS[2..].iter().all(|k| synth.contains(&k.replace('_', "-"))));
    }

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(main_with(["hsvae", "--help"]), 0);
        assert_eq!(main_with(["hsvae", "train", "--help"]), 0);
        assert_eq!(main_with(["hsvae", "no-such-command"]), 1);
        assert_eq!(main_with(["hsvae", "eval-hoyer", "--mode", "bogus", "--checkpoint", "x", "--data", "y"]), 1);
    }
}
