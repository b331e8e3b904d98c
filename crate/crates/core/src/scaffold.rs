//! Sentence-level scaffold: the three sentiment states, the smoothed
//! Markov prior over state sequences, and the lexicon tagger that
//! produces noisy labels from raw text.
//!
//! The prior is fit once from counts and stays fixed during model
//! training; it is never a learned parameter.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use crate::error::{Result, SldsError};

pub const NUM_LABELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaffoldLabel {
    Negative,
    Neutral,
    Positive,
}

impl ScaffoldLabel {
    pub const ALL: [ScaffoldLabel; NUM_LABELS] = [
        ScaffoldLabel::Negative,
        ScaffoldLabel::Neutral,
        ScaffoldLabel::Positive,
    ];

    pub fn index(self) -> usize {
        match self {
            ScaffoldLabel::Negative => 0,
            ScaffoldLabel::Neutral => 1,
            ScaffoldLabel::Positive => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<ScaffoldLabel> {
        Self::ALL.get(i).copied()
    }

    /// Three-letter code used in story files and CLI flags.
    pub fn code(self) -> &'static str {
        match self {
            ScaffoldLabel::Negative => "NEG",
            ScaffoldLabel::Neutral => "NEU",
            ScaffoldLabel::Positive => "POS",
        }
    }

    pub fn from_code(s: &str) -> Option<ScaffoldLabel> {
        match s {
            "NEG" => Some(ScaffoldLabel::Negative),
            "NEU" => Some(ScaffoldLabel::Neutral),
            "POS" => Some(ScaffoldLabel::Positive),
            _ => None,
        }
    }
}

impl std::fmt::Display for ScaffoldLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// First-order Markov chain over scaffold labels with a separate initial
/// distribution. Rows are probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPrior {
    initial: Vec<f64>,
    transition: Vec<f64>, // K x K row-major
    k: usize,
}

impl MarkovPrior {
    pub fn uniform(k: usize) -> Self {
        MarkovPrior {
            initial: vec![1.0 / k as f64; k],
            transition: vec![1.0 / k as f64; k * k],
            k,
        }
    }

    pub fn from_rows(initial: Vec<f64>, transition: Vec<f64>) -> Self {
        let k = initial.len();
        assert_eq!(transition.len(), k * k);
        let check = |row: &[f64]| {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row must sum to 1, got {s}");
            assert!(row.iter().all(|&p| p > 0.0), "probabilities must be positive");
        };
        check(&initial);
        for r in 0..k {
            check(&transition[r * k..(r + 1) * k]);
        }
        MarkovPrior { initial, transition, k }
    }

    pub fn num_states(&self) -> usize {
        self.k
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition_row(&self, from: usize) -> &[f64] {
        &self.transition[from * self.k..(from + 1) * self.k]
    }

    pub fn transition_matrix(&self) -> &[f64] {
        &self.transition
    }

    /// log P(s_1) + sum_i log P(s_i | s_{i-1}).
    pub fn log_prior(&self, seq: &[usize]) -> f64 {
        assert!(!seq.is_empty());
        let mut lp = self.initial[seq[0]].ln();
        for w in seq.windows(2) {
            lp += self.transition[w[0] * self.k + w[1]].ln();
        }
        lp
    }

    /// Expected next-state distribution under soft previous-state
    /// weights: row mix w^T T.
    pub fn expected_row(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.k);
        let mut out = vec![0.0; self.k];
        for (j, o) in out.iter_mut().enumerate() {
            for (i, w) in weights.iter().enumerate() {
                *o += w * self.transition[i * self.k + j];
            }
        }
        out
    }
}

/// Add-one smoothed fit of initial and transition rows from labeled
/// sequences. Works for any state count; the scaffold uses K = 3.
pub fn fit_markov_prior(sequences: &[Vec<usize>], k: usize) -> MarkovPrior {
    let mut init_counts = vec![0usize; k];
    let mut trans_counts = vec![0usize; k * k];
    for seq in sequences {
        if let Some(&first) = seq.first() {
            init_counts[first] += 1;
        }
        for w in seq.windows(2) {
            trans_counts[w[0] * k + w[1]] += 1;
        }
    }
    let init_total: usize = init_counts.iter().sum();
    let initial: Vec<f64> = init_counts
        .iter()
        .map(|&c| (c + 1) as f64 / (init_total + k) as f64)
        .collect();
    let mut transition = vec![0.0; k * k];
    for from in 0..k {
        let row_total: usize = trans_counts[from * k..(from + 1) * k].iter().sum();
        for to in 0..k {
            transition[from * k + to] =
                (trans_counts[from * k + to] + 1) as f64 / (row_total + k) as f64;
        }
    }
    MarkovPrior::from_rows(initial, transition)
}

/// Negated token scores are flipped and damped rather than zeroed.
const NEGATION_SCALAR: f64 = -0.74;
/// Tokens this far back can negate the current one.
const NEGATION_WINDOW: usize = 3;

/// Lexicon-driven sentence tagger. Scores live in a token -> valence
/// file; negations and intensifiers are small built-in closed classes.
#[derive(Debug, Clone)]
pub struct SentimentLexicon {
    scores: HashMap<String, f64>,
    negations: HashSet<String>,
    intensifiers: HashMap<String, f64>,
    pub positive_threshold: f64,
    pub negative_threshold: f64,
}

impl SentimentLexicon {
    pub fn new(scores: HashMap<String, f64>) -> Self {
        let negations: HashSet<String> = [
            "not", "no", "never", "neither", "nobody", "none", "cannot", "can't", "won't",
            "don't", "doesn't", "didn't", "isn't", "wasn't", "aren't", "weren't", "shouldn't",
            "wouldn't", "couldn't", "ain't",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let intensifiers: HashMap<String, f64> = [
            ("very", 1.293),
            ("really", 1.293),
            ("extremely", 1.366),
            ("absolutely", 1.293),
            ("incredibly", 1.366),
            ("totally", 1.32),
            ("so", 1.293),
            ("somewhat", 0.841),
            ("slightly", 0.707),
            ("barely", 0.707),
            ("hardly", 0.707),
        ]
        .iter()
        .map(|(s, f)| (s.to_string(), *f))
        .collect();
        SentimentLexicon {
            scores,
            negations,
            intensifiers,
            positive_threshold: 0.05,
            negative_threshold: -0.05,
        }
    }

    /// Reads `token<TAB>score` lines; `#` starts a comment. Scores must
    /// lie in [-4, 4].
    pub fn from_file(path: &Path) -> Result<SentimentLexicon> {
        let f = std::fs::File::open(path).map_err(|e| SldsError::io(path, e))?;
        let mut scores = HashMap::new();
        for (idx, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| SldsError::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tok, val) = line.split_once('\t').ok_or_else(|| {
                SldsError::parse(path, idx + 1, "expected token<TAB>score")
            })?;
            let score: f64 = val.trim().parse().map_err(|_| {
                SldsError::parse(path, idx + 1, format!("bad score `{val}`"))
            })?;
            if !(-4.0..=4.0).contains(&score) {
                return Err(SldsError::parse(
                    path,
                    idx + 1,
                    format!("score {score} outside [-4, 4]"),
                ));
            }
            scores.insert(tok.trim().to_string(), score);
        }
        Ok(SentimentLexicon::new(scores))
    }

    /// Summed valence squashed to [-1, 1]: s / sqrt(s^2 + 15).
    pub fn compound(&self, tokens: &[String]) -> f64 {
        let mut s = 0.0;
        for (i, tok) in tokens.iter().enumerate() {
            let Some(&base) = self.scores.get(tok) else {
                continue;
            };
            let mut v = base;
            if i > 0 {
                if let Some(&factor) = self.intensifiers.get(&tokens[i - 1]) {
                    v *= factor;
                }
            }
            let lo = i.saturating_sub(NEGATION_WINDOW);
            if tokens[lo..i].iter().any(|t| self.negations.contains(t)) {
                v *= NEGATION_SCALAR;
            }
            s += v;
        }
        s / (s * s + 15.0).sqrt()
    }

    pub fn tag_sentence(&self, tokens: &[String]) -> ScaffoldLabel {
        let c = self.compound(tokens);
        if c > self.positive_threshold {
            ScaffoldLabel::Positive
        } else if c < self.negative_threshold {
            ScaffoldLabel::Negative
        } else {
            ScaffoldLabel::Neutral
        }
    }

    pub fn tag_story(&self, sentences: &[Vec<String>]) -> Vec<ScaffoldLabel> {
        sentences.iter().map(|s| self.tag_sentence(s)).collect()
    }
}
