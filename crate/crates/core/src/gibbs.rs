//! Fill-in sampler: given a story with some sentences observed and some
//! missing, plus a per-sentence scaffold label, alternate between
//! resampling the latent chain (each Z_i from its exact conditional
//! given the recognition posterior and the successor factor) and
//! regenerating the missing sentences by greedy decoding. Observed
//! sentences are clamped: their tokens are never touched.
//!
//! A chain scores each state by the summed log-probability of the
//! observed sentences; the interpolation returned is the post-burn-in
//! state with the best score, with the initialization state also in the
//! selection pool so the result can never score below where it started.

use std::io::{BufRead, Write as IoWrite};
use std::path::Path;

use rand::Rng;

use crate::config::ModelKind;
use crate::corpus::{strip_eos, Story, Vocabulary, EOS_ID};
use crate::gaussian::{gibbs_z_conditional, Gaussian};
use crate::inference::recognition::RecognitionEval;
use crate::model::SldsModel;
use crate::scaffold::ScaffoldLabel;
use crate::seeding;
use crate::{Result, SldsError};

pub const DEFAULT_SAMPLES: usize = 50;
pub const DEFAULT_BURN_IN: usize = 25;
/// Cap on generated sentence length, in real tokens before eos.
pub const MAX_DECODE_LEN: usize = 40;
pub const MISSING_MARKER: &str = "__MISSING__";

/// One fill-in problem: observed sentences keep their token ids,
/// missing ones are `None`. The scaffold may be absent on load and
/// filled in later (see [`derive_scaffold`]).
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationTask {
    pub id: String,
    pub sentences: Vec<Option<Vec<usize>>>,
    pub scaffold: Option<Vec<ScaffoldLabel>>,
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl InterpolationTask {
    /// Observed-position flags, aligned with `sentences`.
    pub fn observed(&self) -> Vec<bool> {
        self.sentences.iter().map(|s| s.is_some()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(SldsError::Invalid(format!("task {}: no sentences", self.id)));
        }
        if !self.sentences.iter().any(|s| s.is_some()) {
            return Err(SldsError::Invalid(format!(
                "task {}: at least one sentence must be observed",
                self.id
            )));
        }
        if let Some(sc) = &self.scaffold {
            if sc.len() != self.sentences.len() {
                return Err(SldsError::Invalid(format!(
                    "task {}: scaffold length {} != sentence count {}",
                    self.id,
                    sc.len(),
                    self.sentences.len()
                )));
            }
        }
        if self.burn_in >= self.samples {
            return Err(SldsError::Invalid(format!(
                "task {}: burn-in {} must be below sample count {}",
                self.id, self.burn_in, self.samples
            )));
        }
        Ok(())
    }

    fn scaffold_checked(&self) -> Result<&[ScaffoldLabel]> {
        self.validate()?;
        self.scaffold.as_deref().ok_or_else(|| {
            SldsError::Invalid(format!(
                "task {}: scaffold missing; supply labels or derive them",
                self.id
            ))
        })
    }
}

/// Builds a task from a complete story by hiding the given positions.
pub fn mask_story(
    story: &Story,
    missing: &[usize],
    scaffold: Option<Vec<ScaffoldLabel>>,
    samples: usize,
    burn_in: usize,
    seed: u64,
) -> InterpolationTask {
    let sentences = story
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| (!missing.contains(&i)).then(|| s.clone()))
        .collect();
    InterpolationTask {
        id: story.id.clone(),
        sentences,
        scaffold,
        samples,
        burn_in,
        seed,
    }
}

/// Scaffold for a task without labels: observed sentences take the
/// classifier's argmax; missing ones take the most likely transition
/// from the previous resolved label (initial distribution at the
/// front). Single-state and latent-free models get all-Neutral, which
/// they ignore.
pub fn derive_scaffold(model: &SldsModel, sentences: &[Option<Vec<usize>>]) -> Vec<ScaffoldLabel> {
    if model.config.kind != ModelKind::Slds {
        return vec![ScaffoldLabel::Neutral; sentences.len()];
    }
    let recog = RecognitionEval::new(model.recognition_dims(), &model.params);
    let prior = model.prior();
    let argmax = |row: &[f64]| {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        best
    };
    let mut out: Vec<ScaffoldLabel> = Vec::with_capacity(sentences.len());
    for (i, sentence) in sentences.iter().enumerate() {
        let idx = match sentence {
            Some(tokens) => argmax(&recog.classify(&recog.encode_sentence(tokens))),
            None => match i {
                0 => argmax(prior.initial()),
                _ => argmax(prior.transition_row(out[i - 1].index())),
            },
        };
        out.push(ScaffoldLabel::from_index(idx).expect("argmax over label range"));
    }
    out
}

/// Current chain values: the latent per sentence, the full sentence
/// list (observed entries fixed), and the observed-sentence score.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub z: Vec<Vec<f64>>,
    pub x: Vec<Vec<usize>>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct InterpolationDiagnostics {
    pub init_score: f64,
    /// Observed-sentence score after each post-burn-in sweep.
    pub trace: Vec<f64>,
    pub selected_score: f64,
}

fn state_index(model: &SldsModel, label: ScaffoldLabel) -> usize {
    if model.config.kind == ModelKind::Slds {
        label.index()
    } else {
        0
    }
}

fn posterior_draw<R: Rng>(
    recog: &RecognitionEval,
    z_prev: &[f64],
    state: usize,
    ctx: &[f64],
    sent_enc: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let (mu, logvar) = recog.posterior(z_prev, state, ctx, sent_enc);
    let vars: Vec<f64> = logvar.iter().map(|lv| lv.exp()).collect();
    Gaussian::diagonal(mu, &vars).sample(rng)
}

fn with_eos(mut tokens: Vec<usize>) -> Vec<usize> {
    tokens.push(EOS_ID);
    tokens
}

/// Ascending initialization: observed sentences draw their latent from
/// the recognition posterior, missing ones from the dynamics prior and
/// then fill their text by greedy decoding, so every later step sees a
/// complete prefix.
pub fn initialize<R: Rng>(
    model: &SldsModel,
    task: &InterpolationTask,
    rng: &mut R,
) -> Result<ChainState> {
    let scaffold = task.scaffold_checked()?;
    assert!(model.config.kind.has_latent(), "interpolation needs a latent chain");
    let recog = RecognitionEval::new(model.recognition_dims(), &model.params);
    let ev = model.emission();
    let ev = ev.eval(&model.params);
    let dynamics = model.dynamics();

    let n = task.sentences.len();
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut x: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut score = 0.0;
    let mut ctx_h = vec![0.0; model.recognition_dims().hidden];
    let mut h_em = ev.initial_hidden();
    let mut z_prev = model.z0().to_vec();

    for i in 0..n {
        let s_i = state_index(model, scaffold[i]);
        let z_i = match &task.sentences[i] {
            Some(tokens) => {
                let enc = recog.encode_sentence(tokens);
                posterior_draw(&recog, &z_prev, s_i, &ctx_h, &enc, rng)
            }
            None => dynamics.transition_distribution(s_i, &z_prev).sample(rng),
        };
        let h_start = ev.start_sentence(&h_em, Some(&z_i));
        let sentence = match &task.sentences[i] {
            Some(tokens) => {
                let (lp, carry) = ev.sentence_log_prob(&h_start, Some(&z_i), strip_eos(tokens));
                score += lp;
                h_em = carry;
                tokens.clone()
            }
            None => {
                let (tokens, carry) =
                    ev.decode_greedy(&h_start, Some(&z_i), MAX_DECODE_LEN);
                h_em = carry;
                with_eos(tokens)
            }
        };
        ctx_h = recog.ctx_step(&ctx_h, &recog.encode_sentence(&sentence));
        z_prev = z_i.clone();
        z.push(z_i);
        x.push(sentence);
    }
    Ok(ChainState { z, x, score })
}

/// One systematic scan. Pass 1 walks the latents in ascending order,
/// sampling each from the recognition posterior times the successor
/// dynamics factor (the last position has no successor, so it uses the
/// posterior alone). Pass 2 regenerates the missing sentences in
/// ascending order under the new latents and rescores the observed
/// ones in place.
pub fn sweep<R: Rng>(
    model: &SldsModel,
    task: &InterpolationTask,
    state: &mut ChainState,
    rng: &mut R,
) {
    let scaffold = task.scaffold.as_deref().expect("sweep on unvalidated task");
    let recog = RecognitionEval::new(model.recognition_dims(), &model.params);
    let ev = model.emission();
    let ev = ev.eval(&model.params);
    let dynamics = model.dynamics();
    let n = state.x.len();

    let (sent_encs, ctx) = recog.encode_sentences(&state.x);
    for i in 0..n {
        let s_i = state_index(model, scaffold[i]);
        let z_prev = if i == 0 { model.z0() } else { &state.z[i - 1] };
        let (mu, logvar) = recog.posterior(z_prev, s_i, &ctx[i], &sent_encs[i]);
        let vars: Vec<f64> = logvar.iter().map(|lv| lv.exp()).collect();
        let q = Gaussian::diagonal(mu, &vars);
        let cond = if i + 1 < n {
            let s_next = state_index(model, scaffold[i + 1]);
            let shifted: Vec<f64> = state.z[i + 1]
                .iter()
                .zip(dynamics.b(s_next))
                .map(|(zn, bb)| zn - bb)
                .collect();
            gibbs_z_conditional(
                dynamics.a(s_next),
                dynamics.noise_factor(s_next),
                &shifted,
                &q,
            )
        } else {
            q
        };
        state.z[i] = cond.sample(rng);
    }

    let mut h_em = ev.initial_hidden();
    let mut score = 0.0;
    for i in 0..n {
        let z_i = &state.z[i];
        let h_start = ev.start_sentence(&h_em, Some(z_i));
        match &task.sentences[i] {
            Some(tokens) => {
                let (lp, carry) = ev.sentence_log_prob(&h_start, Some(z_i), strip_eos(tokens));
                score += lp;
                h_em = carry;
            }
            None => {
                let (tokens, carry) = ev.decode_greedy(&h_start, Some(z_i), MAX_DECODE_LEN);
                state.x[i] = with_eos(tokens);
                h_em = carry;
            }
        }
    }
    state.score = score;
}

/// Runs the chain and returns the best-scoring filled story plus the
/// score trace. The trace holds one entry per post-burn-in sweep; the
/// initialization also competes for selection.
pub fn interpolate(
    model: &SldsModel,
    task: &InterpolationTask,
) -> Result<(Story, InterpolationDiagnostics)> {
    let scaffold = task.scaffold_checked()?.to_vec();
    let mut rng = seeding::stream(task.seed, "gibbs.chain", 0);
    let mut state = initialize(model, task, &mut rng)?;
    let init_score = state.score;
    let mut best_score = state.score;
    let mut best_x = state.x.clone();
    let mut trace = Vec::with_capacity(task.samples - task.burn_in);
    for sweep_index in 0..task.samples {
        sweep(model, task, &mut state, &mut rng);
        if sweep_index >= task.burn_in {
            trace.push(state.score);
            if state.score > best_score {
                best_score = state.score;
                best_x = state.x.clone();
            }
        }
    }
    let story = Story {
        id: task.id.clone(),
        sentences: best_x,
        labels: Some(scaffold),
    };
    Ok((
        story,
        InterpolationDiagnostics {
            init_score,
            trace,
            selected_score: best_score,
        },
    ))
}

/// Sampling baseline: draw whole stories ancestrally (latent models
/// walk the dynamics prior along the scaffold; the plain LM has no
/// latent), filling missing sentences by top-k sampling and consuming
/// observed ones as given, then keep the draw whose observed sentences
/// score highest. Ties keep the earliest draw.
pub fn baseline_interpolate(
    model: &SldsModel,
    task: &InterpolationTask,
    samples: usize,
    top_k: usize,
) -> Result<(Story, f64)> {
    task.validate()?;
    let has_latent = model.config.kind.has_latent();
    let scaffold = if has_latent {
        Some(task.scaffold_checked()?.to_vec())
    } else {
        None
    };
    let ev = model.emission();
    let ev = ev.eval(&model.params);
    let dynamics = has_latent.then(|| model.dynamics());
    let n = task.sentences.len();
    let mut rng = seeding::stream(task.seed, "gibbs.baseline", 0);

    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    for _ in 0..samples {
        let mut h_em = ev.initial_hidden();
        let mut z_prev = has_latent.then(|| model.z0().to_vec());
        let mut x: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut score = 0.0;
        for i in 0..n {
            let z_i = dynamics.as_ref().map(|dy| {
                let s_i = state_index(model, scaffold.as_ref().unwrap()[i]);
                dy.transition_distribution(s_i, z_prev.as_deref().unwrap()).sample(&mut rng)
            });
            let h_start = ev.start_sentence(&h_em, z_i.as_deref());
            match &task.sentences[i] {
                Some(tokens) => {
                    let (lp, carry) =
                        ev.sentence_log_prob(&h_start, z_i.as_deref(), strip_eos(tokens));
                    score += lp;
                    h_em = carry;
                    x.push(tokens.clone());
                }
                None => {
                    let (tokens, carry) =
                        ev.decode_topk(&h_start, z_i.as_deref(), MAX_DECODE_LEN, top_k, &mut rng);
                    h_em = carry;
                    x.push(with_eos(tokens));
                }
            }
            if let Some(z) = z_i {
                z_prev = Some(z);
            }
        }
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, x));
        }
    }
    let (score, x) = best.expect("at least one sample");
    Ok((
        Story {
            id: task.id.clone(),
            sentences: x,
            labels: scaffold,
        },
        score,
    ))
}

/// Task file: records separated by blank lines, `key=value` lines per
/// record, `#` lines ignored. Keys: `id`, `seed`, `samples`, `burn_in`,
/// `scaffold` (comma-separated NEG|NEU|POS), and one `text=` line per
/// sentence in order, with missing sentences written as `__MISSING__`.
/// Records without `seed` get `base_seed` plus their record index.
pub fn load_tasks(
    path: &Path,
    vocab: &Vocabulary,
    base_seed: u64,
) -> Result<Vec<InterpolationTask>> {
    let file = std::fs::File::open(path).map_err(|e| SldsError::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut tasks = Vec::new();
    let mut record: Vec<(usize, String)> = Vec::new();
    let flush =
        |record: &mut Vec<(usize, String)>, tasks: &mut Vec<InterpolationTask>| -> Result<()> {
            if record.is_empty() {
                return Ok(());
            }
            let task = parse_task(path, record, vocab, base_seed, tasks.len() as u64)?;
            tasks.push(task);
            record.clear();
            Ok(())
        };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SldsError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut record, &mut tasks)?;
        } else if !trimmed.starts_with('#') {
            record.push((lineno + 1, trimmed.to_string()));
        }
    }
    flush(&mut record, &mut tasks)?;
    Ok(tasks)
}

fn parse_task(
    path: &Path,
    lines: &[(usize, String)],
    vocab: &Vocabulary,
    base_seed: u64,
    index: u64,
) -> Result<InterpolationTask> {
    let mut task = InterpolationTask {
        id: format!("task-{index}"),
        sentences: Vec::new(),
        scaffold: None,
        samples: DEFAULT_SAMPLES,
        burn_in: DEFAULT_BURN_IN,
        seed: base_seed.wrapping_add(index),
    };
    for (lineno, line) in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SldsError::parse(path, *lineno, "expected key=value"))?;
        let value = value.trim();
        match key.trim() {
            "id" => task.id = value.to_string(),
            "seed" => {
                task.seed = value
                    .parse()
                    .map_err(|_| SldsError::parse(path, *lineno, "seed must be an integer"))?
            }
            "samples" => {
                task.samples = value
                    .parse()
                    .map_err(|_| SldsError::parse(path, *lineno, "samples must be an integer"))?
            }
            "burn_in" => {
                task.burn_in = value
                    .parse()
                    .map_err(|_| SldsError::parse(path, *lineno, "burn_in must be an integer"))?
            }
            "scaffold" => {
                let labels: Option<Vec<ScaffoldLabel>> =
                    value.split(',').map(|c| ScaffoldLabel::from_code(c.trim())).collect();
                task.scaffold = Some(labels.ok_or_else(|| {
                    SldsError::parse(path, *lineno, format!("bad scaffold labels: {value}"))
                })?);
            }
            "text" => {
                if value == MISSING_MARKER {
                    task.sentences.push(None);
                } else {
                    let words = crate::corpus::tokenize(value);
                    task.sentences.push(Some(vocab.encode_sentence(&words)));
                }
            }
            other => {
                return Err(SldsError::parse(path, *lineno, format!("unknown key `{other}`")));
            }
        }
    }
    task.validate()?;
    Ok(task)
}

/// Inverse of [`load_tasks`] up to tokenization.
pub fn save_tasks(path: &Path, tasks: &[InterpolationTask], vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&format!("id={}\n", task.id));
        out.push_str(&format!("seed={}\n", task.seed));
        out.push_str(&format!("samples={}\n", task.samples));
        out.push_str(&format!("burn_in={}\n", task.burn_in));
        if let Some(sc) = &task.scaffold {
            let codes: Vec<&str> = sc.iter().map(|l| l.code()).collect();
            out.push_str(&format!("scaffold={}\n", codes.join(",")));
        }
        for sentence in &task.sentences {
            match sentence {
                Some(tokens) => {
                    out.push_str(&format!(
                        "text={}\n",
                        vocab.decode_sentence(tokens).join(" ")
                    ));
                }
                None => out.push_str(&format!("text={MISSING_MARKER}\n")),
            }
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| SldsError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| SldsError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::corpus::{tokenize, TextStory};
    use crate::scaffold::fit_markov_prior;
    use crate::tensor::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> SldsModel {
        let stories = vec![TextStory {
            id: "v".into(),
            sentences: vec![tokenize(
                "storm rain sun cloud wind calm bright dark warm cold",
            )],
            labels: None,
        }];
        let vocab = Vocabulary::build(&stories, 1);
        let mut cfg = ModelConfig::default_for(ModelKind::Slds);
        cfg.latent_dim = 2;
        cfg.embed_dim = 3;
        cfg.hidden_dim = 4;
        cfg.recog_hidden = 3;
        cfg.state_embed = 2;
        cfg.posterior_hidden = 4;
        let prior = fit_markov_prior(&[vec![0, 1, 2, 2, 1, 0], vec![1, 1, 2, 0]], 3);
        let mut model = SldsModel::init(cfg, vocab, Some(prior), seed);
        // Zero-initialized heads make every sentence equally likely, so
        // give the chain something to prefer.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let names: Vec<String> = model.params.names().cloned().collect();
        for name in names {
            let arr = model.params.get(&name);
            let (shape, n) = (arr.shape.clone(), arr.numel());
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
            model.params.replace(&name, Array::new(shape, vals));
        }
        model
    }

    fn task_from(model: &SldsModel, texts: &[Option<&str>], seed: u64) -> InterpolationTask {
        let sentences: Vec<Option<Vec<usize>>> = texts
            .iter()
            .map(|t| t.map(|s| model.vocab.encode_sentence(&tokenize(s))))
            .collect();
        let scaffold = derive_scaffold(model, &sentences);
        InterpolationTask {
            id: "t".into(),
            sentences,
            scaffold: Some(scaffold),
            samples: 8,
            burn_in: 4,
            seed,
        }
    }

    #[test]
    fn fully_observed_story_comes_back_unchanged() {
        let model = tiny_model(1);
        let task = task_from(&model, &[Some("storm rain"), Some("sun cloud")], 5);
        let (story, diag) = interpolate(&model, &task).unwrap();
        assert_eq!(story.sentences[0], task.sentences[0].clone().unwrap());
        assert_eq!(story.sentences[1], task.sentences[1].clone().unwrap());
        assert_eq!(diag.trace.len(), task.samples - task.burn_in);
    }

    #[test]
    fn observed_positions_are_clamped_through_sweeps() {
        let model = tiny_model(2);
        let task = task_from(
            &model,
            &[Some("warm bright sun"), None, Some("cold dark storm")],
            9,
        );
        let (story, _) = interpolate(&model, &task).unwrap();
        assert_eq!(story.sentences[0], task.sentences[0].clone().unwrap());
        assert_eq!(story.sentences[2], task.sentences[2].clone().unwrap());
        assert!(story.sentences[1].ends_with(&[EOS_ID]));
    }

    #[test]
    fn selection_never_scores_below_initialization() {
        let model = tiny_model(3);
        for seed in 0..6 {
            let task = task_from(&model, &[Some("wind calm"), None, None], seed);
            let (_, diag) = interpolate(&model, &task).unwrap();
            assert!(
                diag.selected_score >= diag.init_score,
                "seed {seed}: selected {} < init {}",
                diag.selected_score,
                diag.init_score
            );
        }
    }

    #[test]
    fn single_sentence_story_uses_the_posterior_alone() {
        let model = tiny_model(4);
        let task = task_from(&model, &[Some("sun")], 1);
        let (story, diag) = interpolate(&model, &task).unwrap();
        assert_eq!(story.sentences.len(), 1);
        assert!(diag.selected_score.is_finite());
    }

    #[test]
    fn identical_seeds_reproduce_identical_output() {
        let model = tiny_model(5);
        let task = task_from(&model, &[None, Some("cloud wind"), None], 77);
        let (a, diag_a) = interpolate(&model, &task).unwrap();
        let (b, diag_b) = interpolate(&model, &task).unwrap();
        assert_eq!(a.sentences, b.sentences);
        let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
        assert_eq!(bits(&diag_a.trace), bits(&diag_b.trace));
    }

    #[test]
    fn missing_scaffold_is_rejected_until_derived() {
        let model = tiny_model(6);
        let mut task = task_from(&model, &[Some("rain"), None], 3);
        task.scaffold = None;
        let err = interpolate(&model, &task).unwrap_err();
        assert!(err.to_string().contains("scaffold"));
        task.scaffold = Some(derive_scaffold(&model, &task.sentences));
        interpolate(&model, &task).unwrap();
    }

    #[test]
    fn derived_scaffold_follows_classifier_and_prior() {
        let mut model = tiny_model(7);
        // Classifier that always votes Negative.
        let k = 3;
        let hidden = model.recognition_dims().hidden;
        model
            .params
            .replace("recog.class.w", Array::matrix(k, hidden, vec![0.0; k * hidden]));
        model
            .params
            .replace("recog.class.b", Array::vector(vec![50.0, 0.0, 0.0]));
        let sentences = vec![
            Some(model.vocab.encode_sentence(&tokenize("storm"))),
            None,
        ];
        let scaffold = derive_scaffold(&model, &sentences);
        assert_eq!(scaffold[0], ScaffoldLabel::Negative);
        let prior = model.prior();
        let row = prior.transition_row(ScaffoldLabel::Negative.index());
        let expect = (0..3).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        assert_eq!(scaffold[1].index(), expect);
    }

    #[test]
    fn baseline_with_top1_is_greedy_and_deterministic() {
        let model = tiny_model(8);
        let task = task_from(&model, &[Some("bright sun"), None], 21);
        let (once, s1) = baseline_interpolate(&model, &task, 1, 1).unwrap();
        let (many, s2) = baseline_interpolate(&model, &task, 4, 1).unwrap();
        // Top-1 still resamples the latent chain per draw, so scores may
        // differ across draws, but the text of each draw is the greedy
        // decode under its latents; with the same seed the first draws
        // coincide.
        assert_eq!(once.sentences[0], many.sentences[0]);
        assert!(s1.is_finite() && s2.is_finite() && s2 >= s1 - 1e-12);
    }

    #[test]
    fn baseline_clamps_observed_sentences() {
        let model = tiny_model(9);
        let task = task_from(&model, &[None, Some("calm warm cold"), None], 13);
        let (story, _) = baseline_interpolate(&model, &task, 6, 3).unwrap();
        assert_eq!(story.sentences[1], task.sentences[1].clone().unwrap());
    }

    #[test]
    fn baseline_handles_latent_free_models() {
        let slds = tiny_model(12);
        let mut cfg = ModelConfig::default_for(ModelKind::Lm);
        cfg.embed_dim = 3;
        cfg.hidden_dim = 4;
        let model = SldsModel::init(cfg, slds.vocab.clone(), None, 12);
        let mut task = task_from(&slds, &[Some("storm rain"), None], 17);
        task.scaffold = None;
        let (story, score) = baseline_interpolate(&model, &task, 4, 3).unwrap();
        assert_eq!(story.sentences[0], task.sentences[0].clone().unwrap());
        assert!(story.sentences[1].ends_with(&[EOS_ID]));
        assert!(score.is_finite());
        assert_eq!(story.labels, None);
    }

    #[test]
    fn task_file_round_trips() {
        let model = tiny_model(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.txt");
        let tasks = vec![
            task_from(&model, &[Some("storm rain sun"), None, Some("calm")], 4),
            task_from(&model, &[None, Some("bright dark")], 11),
        ];
        save_tasks(&path, &tasks, &model.vocab).unwrap();
        let loaded = load_tasks(&path, &model.vocab, 0).unwrap();
        assert_eq!(loaded, tasks);
    }

    #[test]
    fn task_file_defaults_and_errors() {
        let model = tiny_model(11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.txt");
        std::fs::write(&path, "# two sentences, one missing\ntext=storm rain\ntext=__MISSING__\n")
            .unwrap();
        let tasks = load_tasks(&path, &model.vocab, 500).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].samples, DEFAULT_SAMPLES);
        assert_eq!(tasks[0].burn_in, DEFAULT_BURN_IN);
        assert_eq!(tasks[0].seed, 500);
        assert_eq!(tasks[0].sentences[1], None);
        assert!(tasks[0].scaffold.is_none());

        std::fs::write(&path, "text=storm\nscaffold=NEG,BAD\n").unwrap();
        let err = load_tasks(&path, &model.vocab, 0).unwrap_err();
        assert!(err.to_string().contains("scaffold"), "{err}");

        std::fs::write(&path, "text=__MISSING__\n").unwrap();
        let err = load_tasks(&path, &model.vocab, 0).unwrap_err();
        assert!(err.to_string().contains("observed"), "{err}");
    }
}
