//! Metrics and experiment drivers: likelihood bounds, ROUGE overlap
//! scores, the sentiment-control score, and the interpolation
//! benchmark over the four standard masking regimes.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::ModelKind;
use crate::corpus::{strip_eos, Story};
use crate::error::{Result, SldsError};
use crate::gibbs::{self, mask_story};
use crate::inference::elbo::{classify_story, elbo_hard};
use crate::model::SldsModel;
use crate::scaffold::{ScaffoldLabel, SentimentLexicon};
use crate::seeding;

/// Likelihood summary over a corpus. `nll` is the mean per-story
/// negative bound (exact likelihood for the plain LM); `ppl` is
/// exp(total negative bound / total token count), where the token
/// count includes each sentence's end marker because that is an event
/// the emission model pays for.
#[derive(Debug, Clone, PartialEq)]
pub struct NllReport {
    pub nll: f64,
    pub ppl: f64,
    pub stories: usize,
    pub words: usize,
    pub mc_samples: usize,
}

impl NllReport {
    pub fn kv(&self) -> Vec<(String, String)> {
        vec![
            ("nll".into(), format!("{:.6}", self.nll)),
            ("ppl".into(), format!("{:.6}", self.ppl)),
            ("stories".into(), self.stories.to_string()),
            ("words".into(), self.words.to_string()),
            ("mc_samples".into(), self.mc_samples.to_string()),
        ]
    }
}

/// Negative-bound NLL and perplexity, averaged over `mc_samples`
/// posterior draws per story. Stories evaluate in parallel; each draw
/// gets its own noise stream, so the result is independent of thread
/// count.
pub fn nll_ppl(model: &SldsModel, stories: &[Story], mc_samples: usize, seed: u64) -> NllReport {
    assert!(mc_samples >= 1);
    assert!(!stories.is_empty(), "likelihood evaluation needs at least one story");
    let per_story: Vec<(f64, usize)> = stories
        .par_iter()
        .enumerate()
        .map(|(i, story)| {
            let mut total = 0.0;
            for j in 0..mc_samples {
                let mut rng =
                    seeding::stream(seed, "eval.nll", (i * mc_samples + j) as u64);
                total -= elbo_hard(model, story, &mut rng).elbo;
            }
            (total / mc_samples as f64, story.total_tokens())
        })
        .collect();
    let total_nll: f64 = per_story.iter().map(|(n, _)| n).sum();
    let words: usize = per_story.iter().map(|(_, w)| w).sum();
    NllReport {
        nll: total_nll / stories.len() as f64,
        ppl: (total_nll / words as f64).exp(),
        stories: stories.len(),
        words,
        mc_samples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

pub const ROUGE_VARIANTS: [RougeVariant; 3] =
    [RougeVariant::One, RougeVariant::Two, RougeVariant::L];

impl RougeVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RougeVariant::One => "rouge1",
            RougeVariant::Two => "rouge2",
            RougeVariant::L => "rougeL",
        }
    }
}

/// Precision / recall / F1 triple. F1 is the harmonic mean, zero when
/// precision and recall are both zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn new(precision: f64, recall: f64) -> Prf {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }

    fn add(&mut self, other: Prf) {
        self.precision += other.precision;
        self.recall += other.recall;
        self.f1 += other.f1;
    }

    fn scale(&self, s: f64) -> Prf {
        Prf {
            precision: self.precision * s,
            recall: self.recall * s,
            f1: self.f1 * s,
        }
    }
}

/// ROUGE overlap between a candidate and a nonempty reference.
/// Variants 1 and 2 use clipped n-gram counts; L uses the longest
/// common subsequence. An empty candidate scores zero, as does a
/// variant whose n exceeds either side's length.
pub fn rouge(candidate: &[usize], reference: &[usize], variant: RougeVariant) -> Prf {
    assert!(!reference.is_empty(), "rouge reference must be nonempty");
    if candidate.is_empty() {
        return Prf::default();
    }
    match variant {
        RougeVariant::One => ngram_prf(candidate, reference, 1),
        RougeVariant::Two => ngram_prf(candidate, reference, 2),
        RougeVariant::L => {
            let lcs = lcs_len(candidate, reference) as f64;
            Prf::new(lcs / candidate.len() as f64, lcs / reference.len() as f64)
        }
    }
}

fn ngram_prf(candidate: &[usize], reference: &[usize], n: usize) -> Prf {
    if candidate.len() < n || reference.len() < n {
        return Prf::default();
    }
    let mut ref_counts: HashMap<&[usize], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_default() += 1;
    }
    let mut cand_counts: HashMap<&[usize], usize> = HashMap::new();
    for gram in candidate.windows(n) {
        *cand_counts.entry(gram).or_default() += 1;
    }
    let overlap: usize = cand_counts
        .iter()
        .map(|(gram, c)| (*c).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total = candidate.len() + 1 - n;
    let ref_total = reference.len() + 1 - n;
    Prf::new(overlap as f64 / cand_total as f64, overlap as f64 / ref_total as f64)
}

fn lcs_len(a: &[usize], b: &[usize]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentiment-control result. `confusion[g][p]` counts sentences whose
/// requested label had index `g` and whose generated text re-tagged to
/// index `p`; `macro_f1` is the unweighted mean of the three per-class
/// F1 scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlReport {
    pub macro_f1: f64,
    pub per_class: [Prf; 3],
    pub confusion: [[usize; 3]; 3],
}

impl ControlReport {
    pub fn kv(&self) -> Vec<(String, String)> {
        let mut pairs = vec![("macro_f1".into(), format!("{:.6}", self.macro_f1))];
        for (c, prf) in self.per_class.iter().enumerate() {
            let code = ScaffoldLabel::from_index(c).expect("three classes").code();
            pairs.push((format!("{code}.precision"), format!("{:.6}", prf.precision)));
            pairs.push((format!("{code}.recall"), format!("{:.6}", prf.recall)));
            pairs.push((format!("{code}.f1"), format!("{:.6}", prf.f1)));
        }
        for (g, row) in self.confusion.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                pairs.push((format!("confusion.{g}.{p}"), count.to_string()));
            }
        }
        pairs
    }
}

/// Per-class precision/recall/F1 and their unweighted mean from a
/// gold-by-predicted confusion matrix. A class absent from both axes
/// scores zero.
pub fn macro_f1_from_confusion(confusion: &[[usize; 3]; 3]) -> (f64, [Prf; 3]) {
    let mut per_class = [Prf::default(); 3];
    for c in 0..3 {
        let tp = confusion[c][c];
        let gold: usize = confusion[c].iter().sum();
        let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
        per_class[c] = Prf::new(precision, recall);
    }
    let macro_f1 = per_class.iter().map(|p| p.f1).sum::<f64>() / 3.0;
    (macro_f1, per_class)
}

/// Generates one story per tag sequence by walking the dynamics for
/// the requested states (greedy text decoding given each latent),
/// re-tags every generated sentence with the lexicon, and scores the
/// agreement. Single-state and latent-free models ignore the tags,
/// which is the point of comparing them.
pub fn sentiment_control_f1(
    model: &SldsModel,
    tag_sequences: &[Vec<ScaffoldLabel>],
    lexicon: &SentimentLexicon,
    seed: u64,
) -> ControlReport {
    let rows: Vec<Vec<(usize, usize)>> = tag_sequences
        .par_iter()
        .enumerate()
        .map(|(i, tags)| {
            let mut rng = seeding::stream(seed, "eval.control", i as u64);
            let emission = model.emission();
            let ev = emission.eval(&model.params);
            let has_latent = model.config.kind.has_latent();
            let dynamics = has_latent.then(|| model.dynamics());
            let mut z_prev = if has_latent { model.z0().to_vec() } else { Vec::new() };
            let mut carry = ev.initial_hidden();
            let mut pairs = Vec::with_capacity(tags.len());
            for tag in tags {
                let z = dynamics.as_ref().map(|dy| {
                    let state =
                        if model.config.kind == ModelKind::Slds { tag.index() } else { 0 };
                    dy.transition_distribution(state, &z_prev).sample(&mut rng)
                });
                if let Some(z) = &z {
                    z_prev = z.clone();
                }
                let h_start = ev.start_sentence(&carry, z.as_deref());
                let (tokens, new_carry) =
                    ev.decode_greedy(&h_start, z.as_deref(), gibbs::MAX_DECODE_LEN);
                carry = new_carry;
                let words = model.vocab.decode_sentence(&tokens);
                pairs.push((tag.index(), lexicon.tag_sentence(&words).index()));
            }
            pairs
        })
        .collect();
    let mut confusion = [[0usize; 3]; 3];
    for pairs in rows {
        for (gold, predicted) in pairs {
            confusion[gold][predicted] += 1;
        }
    }
    let (macro_f1, per_class) = macro_f1_from_confusion(&confusion);
    ControlReport { macro_f1, per_class, confusion }
}

/// The four masking regimes of the interpolation benchmark, named by
/// the 1-based positions they hide.
pub const REGIMES: [(&str, &[usize]); 4] = [
    ("2nd", &[1]),
    ("4th", &[3]),
    ("1st+2nd", &[0, 1]),
    ("3rd+4th", &[2, 3]),
];

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub samples: usize,
    pub burn_in: usize,
    pub baseline_samples: usize,
    pub baseline_top_k: usize,
    pub seed: u64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            samples: gibbs::DEFAULT_SAMPLES,
            burn_in: gibbs::DEFAULT_BURN_IN,
            baseline_samples: 1000,
            baseline_top_k: 15,
            seed: 0,
        }
    }
}

/// One regime's aggregate: each ROUGE field is the mean of the
/// per-sentence values over every masked sentence that was scored.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeResult {
    pub regime: &'static str,
    pub rouge: [Prf; 3],
    pub sentences: usize,
}

impl RegimeResult {
    pub fn kv(&self) -> Vec<(String, String)> {
        let mut pairs = vec![(
            format!("{}.sentences", self.regime),
            self.sentences.to_string(),
        )];
        for (variant, prf) in ROUGE_VARIANTS.iter().zip(&self.rouge) {
            pairs.push((
                format!("{}.{}.f1", self.regime, variant.name()),
                format!("{:.6}", prf.f1),
            ));
        }
        pairs
    }
}

/// Sums per-sentence ROUGE triples for the masked positions of one
/// story. Masked sentences whose reference is empty after dropping the
/// end marker are skipped; the count of scored sentences is returned
/// alongside the sums.
pub fn rouge_over_missing(
    original: &Story,
    filled: &Story,
    missing: &[usize],
) -> ([Prf; 3], usize) {
    let mut sums = [Prf::default(); 3];
    let mut count = 0;
    for &i in missing {
        let reference = strip_eos(&original.sentences[i]);
        if reference.is_empty() {
            continue;
        }
        let candidate = strip_eos(&filled.sentences[i]);
        for (k, variant) in ROUGE_VARIANTS.iter().enumerate() {
            sums[k].add(rouge(candidate, reference, *variant));
        }
        count += 1;
    }
    (sums, count)
}

fn fill_story(
    model: &SldsModel,
    story: &Story,
    missing: &[usize],
    opts: &BenchmarkOptions,
    story_idx: usize,
) -> Result<Story> {
    let scaffold = match model.config.kind {
        ModelKind::Slds => Some(
            classify_story(model, story)
                .iter()
                .map(|probs| {
                    let mut best = 0;
                    for (i, p) in probs.iter().enumerate() {
                        if *p > probs[best] {
                            best = i;
                        }
                    }
                    ScaffoldLabel::from_index(best).expect("argmax over label range")
                })
                .collect(),
        ),
        ModelKind::Lds => Some(vec![ScaffoldLabel::Neutral; story.sentences.len()]),
        ModelKind::Lm => None,
    };
    let task = mask_story(
        story,
        missing,
        scaffold,
        opts.samples,
        opts.burn_in,
        opts.seed.wrapping_add(story_idx as u64),
    );
    match model.config.kind {
        ModelKind::Slds => gibbs::interpolate(model, &task).map(|(story, _)| story),
        _ => gibbs::baseline_interpolate(model, &task, opts.baseline_samples, opts.baseline_top_k)
            .map(|(story, _)| story),
    }
}

/// Runs the interpolation benchmark over every regime: masks each
/// sufficiently long story, fills it with the model's own procedure
/// (chain sampler for the switching model, rejection-style ancestral
/// sampling otherwise), and reports mean ROUGE of the filled sentences
/// against the held-out originals. The switching model's scaffold
/// comes from its classifier over the full story, so it sees the
/// sentiment arc but never the held-out text.
pub fn interpolation_benchmark(
    model: &SldsModel,
    stories: &[Story],
    opts: &BenchmarkOptions,
) -> Result<Vec<RegimeResult>> {
    let mut results = Vec::with_capacity(REGIMES.len());
    for (regime, missing) in REGIMES {
        // A story qualifies when every masked position exists and at
        // least one sentence stays observed to anchor the fill.
        let max_missing = *missing.iter().max().expect("regimes are nonempty");
        let eligible: Vec<(usize, &Story)> = stories
            .iter()
            .enumerate()
            .filter(|(_, story)| {
                story.sentences.len() > max_missing && story.sentences.len() > missing.len()
            })
            .collect();
        let per_story: Vec<([Prf; 3], usize)> = eligible
            .par_iter()
            .map(|(idx, story)| {
                let filled = fill_story(model, story, missing, opts, *idx)?;
                Ok(rouge_over_missing(story, &filled, missing))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sums = [Prf::default(); 3];
        let mut count = 0;
        for (story_sums, story_count) in per_story {
            for (total, s) in sums.iter_mut().zip(story_sums) {
                total.add(s);
            }
            count += story_count;
        }
        let rouge = if count == 0 {
            sums
        } else {
            [
                sums[0].scale(1.0 / count as f64),
                sums[1].scale(1.0 / count as f64),
                sums[2].scale(1.0 / count as f64),
            ]
        };
        results.push(RegimeResult { regime, rouge, sentences: count });
    }
    Ok(results)
}

/// Renders rows as a plain text table: columns padded to their widest
/// cell, a dashed rule under the header.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        assert_eq!(row.len(), cols, "table rows must match the header");
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let render = |out: &mut String, cells: &[String]| {
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            for _ in cell.len()..*w {
                out.push(' ');
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    let header_row: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    render(&mut out, &header_row);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    render(&mut out, &rule);
    for row in rows {
        render(&mut out, row);
    }
    out
}

/// Writes `key=value` lines in the given order.
pub fn write_kv_report(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| SldsError::io(path, e))?;
    for (key, value) in pairs {
        writeln!(f, "{key}={value}").map_err(|e| SldsError::io(path, e))?;
    }
    Ok(())
}
