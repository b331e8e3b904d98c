//! Story corpus: file formats, tokenization, vocabulary, splits, and a
//! synthetic generator with known latent structure.
//!
//! `stories.tsv` holds one story per line: a story id, then the
//! sentences, separated by tabs. An optional trailing field of
//! comma-separated NEG|NEU|POS codes (one per sentence) carries labels.
//! Token ids reserve 0..=3 for pad, unk, eos, bos; every encoded
//! sentence ends with eos.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SldsError};
use crate::scaffold::ScaffoldLabel;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const BOS_ID: usize = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<eos>", "<bos>"];

/// Story as tokenized text, before vocabulary lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct TextStory {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub labels: Option<Vec<ScaffoldLabel>>,
}

/// Story as id sequences; each sentence ends with `EOS_ID`.
#[derive(Debug, Clone, PartialEq)]
pub struct Story {
    pub id: String,
    pub sentences: Vec<Vec<usize>>,
    pub labels: Option<Vec<ScaffoldLabel>>,
}

impl Story {
    pub fn total_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }
}

/// Sentence body without the trailing eos, if present.
pub fn strip_eos(sentence: &[usize]) -> &[usize] {
    match sentence.split_last() {
        Some((&last, body)) if last == EOS_ID => body,
        _ => sentence,
    }
}

/// Lowercases and splits punctuation into standalone tokens. Alphanumeric
/// runs (apostrophes included, so contractions survive) form tokens; any
/// other visible character becomes its own token. Idempotent on its own
/// output.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        let ch = ch.to_lowercase().next().unwrap_or(ch);
        if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() && !ch.is_control() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token table with reserved first rows. The in-file line number is the
/// token id; the first four lines are the reserved markers.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            index.insert(t.clone(), i);
        }
        Vocabulary { tokens, index }
    }

    /// Builds from training stories only. Tokens seen fewer than
    /// `cutoff` times map to unk. Order: frequency descending, then
    /// lexicographic, so construction is deterministic.
    pub fn build(stories: &[TextStory], cutoff: usize) -> Vocabulary {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for story in stories {
            for sent in &story.sentences {
                for tok in sent {
                    *counts.entry(tok.as_str()).or_insert(0) += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= cutoff && !RESERVED_TOKENS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Vocabulary::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| SldsError::io(path, e))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| SldsError::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let f = std::fs::File::open(path).map_err(|e| SldsError::io(path, e))?;
        let mut tokens = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| SldsError::io(path, e))?;
            tokens.push(line);
        }
        for (i, want) in RESERVED_TOKENS.iter().enumerate() {
            if tokens.get(i).map(|s| s.as_str()) != Some(*want) {
                return Err(SldsError::parse(
                    path,
                    i + 1,
                    format!("reserved token line must be `{want}`"),
                ));
            }
        }
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = seen.insert(t.clone(), i) {
                return Err(SldsError::parse(
                    path,
                    i + 1,
                    format!("duplicate token `{t}` (first at line {})", prev + 1),
                ));
            }
        }
        Ok(Vocabulary::from_tokens(tokens))
    }

    /// Joins a vocabulary into checkpoint metadata and back. Tokens never
    /// contain control characters (the tokenizer strips them), so the
    /// unit separator is a safe delimiter.
    pub fn to_meta(&self) -> String {
        self.tokens.join("\u{1f}")
    }

    pub fn from_meta(meta: &str) -> Vocabulary {
        Vocabulary::from_tokens(meta.split('\u{1f}').map(|s| s.to_string()).collect())
    }

    pub fn encode(&self, story: &TextStory) -> Story {
        Story {
            id: story.id.clone(),
            sentences: story.sentences.iter().map(|s| self.encode_sentence(s)).collect(),
            labels: story.labels.clone(),
        }
    }

    /// Token words to ids, with the trailing eos appended.
    pub fn encode_sentence(&self, words: &[String]) -> Vec<usize> {
        let mut ids: Vec<usize> = words.iter().map(|t| self.id(t)).collect();
        ids.push(EOS_ID);
        ids
    }

    /// Ids back to text, dropping the trailing eos.
    pub fn decode_sentence(&self, ids: &[usize]) -> Vec<String> {
        let body = if ids.last() == Some(&EOS_ID) {
            &ids[..ids.len() - 1]
        } else {
            ids
        };
        body.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

fn looks_like_labels(field: &str, n_sentences: usize) -> Option<Vec<ScaffoldLabel>> {
    let parts: Vec<&str> = field.split(',').collect();
    if parts.len() != n_sentences {
        return None;
    }
    parts
        .iter()
        .map(|p| ScaffoldLabel::from_code(p.trim()))
        .collect()
}

pub fn load_stories(path: &Path) -> Result<Vec<TextStory>> {
    let f = std::fs::File::open(path).map_err(|e| SldsError::io(path, e))?;
    let mut stories = Vec::new();
    for (idx, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| SldsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(SldsError::parse(
                path,
                idx + 1,
                "expected id, then tab-separated sentences",
            ));
        }
        let id = fields[0].trim().to_string();
        if id.is_empty() {
            return Err(SldsError::parse(path, idx + 1, "story id is empty"));
        }
        let rest = &fields[1..];
        let (sentence_fields, labels) = match rest.len() {
            1 => (rest, None),
            n => match looks_like_labels(rest[n - 1], n - 1) {
                Some(labels) => (&rest[..n - 1], Some(labels)),
                None => (rest, None),
            },
        };
        let mut sentences = Vec::with_capacity(sentence_fields.len());
        for (si, field) in sentence_fields.iter().enumerate() {
            let toks = tokenize(field);
            if toks.is_empty() {
                return Err(SldsError::parse(
                    path,
                    idx + 1,
                    format!("sentence {} is empty after tokenization", si + 1),
                ));
            }
            sentences.push(toks);
        }
        stories.push(TextStory { id, sentences, labels });
    }
    Ok(stories)
}

pub fn save_stories(path: &Path, stories: &[TextStory]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| SldsError::io(path, e))?;
    for story in stories {
        let mut fields: Vec<String> = vec![story.id.clone()];
        fields.extend(story.sentences.iter().map(|s| s.join(" ")));
        if let Some(labels) = &story.labels {
            assert_eq!(labels.len(), story.sentences.len(), "label/sentence count mismatch");
            fields.push(
                labels
                    .iter()
                    .map(|l| l.code().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        writeln!(f, "{}", fields.join("\t")).map_err(|e| SldsError::io(path, e))?;
    }
    Ok(())
}

/// Deterministic shuffled split. Fractions must be positive and sum to
/// at most 1; the remainder after train and validation goes to test.
pub fn split_corpus<T: Clone>(
    items: &[T],
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    assert!(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = crate::seeding::stream(seed, "corpus.split", 0);
    // Fisher-Yates, explicit so the permutation is stable across rand
    // versions.
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n = items.len();
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_val = ((n as f64) * val_frac).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    let take = |r: std::ops::Range<usize>| r.map(|i| items[order[i]].clone()).collect::<Vec<T>>();
    (
        take(0..n_train),
        take(n_train..n_train + n_val),
        take(n_train + n_val..n),
    )
}

// ── synthetic corpus ──

/// Knobs for the synthetic generator. The latent process is a switching
/// linear system whose states carry sentiment; tokens are emitted by
/// thresholding latent coordinates, so a model must track the latent to
/// predict them.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub stories: usize,
    pub sentences_per_story: usize,
    /// Probability of keeping the current sentiment state per step.
    /// Kept well above 1/3 so regimes persist like narrative moods do;
    /// a near-uniform chain would price the state sequence at almost
    /// log 3 per sentence, which is most of what tracking it saves.
    pub stay_prob: f64,
    pub latent_dim: usize,
    /// 3 for the full switching process; 1 pins every sentence to the
    /// neutral dynamics, giving a plain (single) linear system.
    pub states: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            stories: 1000,
            sentences_per_story: 5,
            stay_prob: 0.75,
            latent_dim: 8,
            states: 3,
        }
    }
}

/// Sentiment coordinate: contraction and per-state drift. States jump
/// close to their fixed point in a single step, so the emitted sentiment
/// word tracks the state almost surely.
const SENT_CONTRACT: [f64; 3] = [0.10, 0.15, 0.10]; // NEG, NEU, POS
const SENT_DRIFT: [f64; 3] = [-2.4, 0.0, 2.4];
const SENT_NOISE: f64 = 0.3;
/// Style coordinate: state-independent, slow-mixing.
const STYLE_DECAY: f64 = 0.8;
const STYLE_NOISE: f64 = 0.6;
/// Remaining coordinates are plain AR(1) nuisance dims.
const NUISANCE_DECAY: f64 = 0.5;
const NUISANCE_NOISE: f64 = 0.3;
/// Sentiment-word bucket edges on coordinate 0.
const SENT_EDGE: f64 = 1.2;
/// Magnitude-word edge on coordinate 1.
const MAG_EDGE: f64 = 1.0;

const WORDS_BY_LABEL: [[&str; 2]; 3] = [
    ["bad", "terrible"],
    ["table", "chair"],
    ["good", "great"],
];

/// True per-state dynamics as (A, b, noise std) diagonal triples; the
/// linear-Gaussian oracle experiments reuse these.
pub fn synthetic_dynamics(d: usize, state: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert!(d >= 2);
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut noise = vec![0.0; d];
    a[0] = SENT_CONTRACT[state];
    b[0] = SENT_DRIFT[state];
    noise[0] = SENT_NOISE;
    a[1] = STYLE_DECAY;
    noise[1] = STYLE_NOISE;
    for i in 2..d {
        a[i] = NUISANCE_DECAY;
        noise[i] = NUISANCE_NOISE;
    }
    (a, b, noise)
}

fn emit_sentence(z: &[f64]) -> Vec<String> {
    let bucket = if z[0] > SENT_EDGE {
        2
    } else if z[0] < -SENT_EDGE {
        0
    } else {
        1
    };
    let synonym = usize::from(z[2] < 0.0);
    let style = if z[1] >= 0.0 { "up" } else { "down" };
    let magnitude = if z[1].abs() > MAG_EDGE { "far" } else { "near" };
    vec![
        "the".to_string(),
        WORDS_BY_LABEL[bucket][synonym].to_string(),
        style.to_string(),
        magnitude.to_string(),
    ]
}

/// Samples stories from the known switching process. Gold labels are the
/// sampled states, recorded on every story.
pub fn generate_synthetic_corpus<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<TextStory> {
    generate_synthetic_with_latents(spec, rng).0
}

/// As [`generate_synthetic_corpus`], also returning the true latent
/// trajectory per sentence for oracle checks against the known dynamics.
pub fn generate_synthetic_with_latents<R: Rng>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> (Vec<TextStory>, Vec<Vec<Vec<f64>>>) {
    assert!(
        spec.states == 1 || spec.states == 3,
        "states must be 1 (neutral only) or 3"
    );
    let d = spec.latent_dim;
    let leave = (1.0 - spec.stay_prob) / 2.0;
    let mut stories = Vec::with_capacity(spec.stories);
    let mut latents = Vec::with_capacity(spec.stories);
    for story_idx in 0..spec.stories {
        let mut sentences = Vec::with_capacity(spec.sentences_per_story);
        let mut labels = Vec::with_capacity(spec.sentences_per_story);
        let mut trajectory = Vec::with_capacity(spec.sentences_per_story);
        let mut state = if spec.states == 1 {
            ScaffoldLabel::Neutral.index()
        } else {
            rng.gen_range(0..3usize)
        };
        let mut z = vec![0.0; d];
        for si in 0..spec.sentences_per_story {
            if si > 0 && spec.states == 3 {
                let u: f64 = rng.gen();
                state = if u < spec.stay_prob {
                    state
                } else if u < spec.stay_prob + leave {
                    (state + 1) % 3
                } else {
                    (state + 2) % 3
                };
            }
            let (a, b, noise) = synthetic_dynamics(d, state);
            for i in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                z[i] = a[i] * z[i] + b[i] + noise[i] * eps;
            }
            sentences.push(emit_sentence(&z));
            labels.push(ScaffoldLabel::from_index(state).unwrap());
            trajectory.push(z.clone());
        }
        stories.push(TextStory {
            id: format!("synth-{story_idx:06}"),
            sentences,
            labels: Some(labels),
        });
        latents.push(trajectory);
    }
    (stories, latents)
}
