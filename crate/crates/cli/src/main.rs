//! Command-line lifecycle for the switching story model. Every
//! subcommand is a thin wrapper over the library: file handling and
//! flag plumbing live here, the math lives in `slds_core`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use slds_core::config::{ConfigFile, ModelConfig, ModelKind, TrainConfig};
use slds_core::corpus::{
    generate_synthetic_corpus, load_stories, save_stories, split_corpus, Story, SyntheticSpec,
    TextStory, Vocabulary,
};
use slds_core::eval;
use slds_core::gibbs;
use slds_core::inference::train::train;
use slds_core::model::SldsModel;
use slds_core::scaffold::{fit_markov_prior, MarkovPrior, ScaffoldLabel, SentimentLexicon};
use slds_core::seeding;

#[derive(Parser)]
#[command(name = "slds", version, about = "Switching story model: train, sample, fill in, score")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ModelArg {
    Slds,
    Lds,
    Lm,
}

impl ModelArg {
    fn kind(self) -> ModelKind {
        match self {
            ModelArg::Slds => ModelKind::Slds,
            ModelArg::Lds => ModelKind::Lds,
            ModelArg::Lm => ModelKind::Lm,
        }
    }
}

fn parse_label_fraction(s: &str) -> std::result::Result<f64, String> {
    match s {
        "1" | "10" | "25" | "50" | "100" => Ok(s.parse().unwrap()),
        _ => Err(format!("must be one of 1, 10, 25, 50, 100 (got `{s}`)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a CSV of stories into the tab-separated corpus format.
    ///
    /// With a header row, the id column is `storyid`/`id`, a
    /// `storytitle`/`title` column is dropped, and `sentence*` columns
    /// (or all remaining ones) become the sentences. Without a header
    /// the first column is the id and the rest are sentences.
    Import {
        /// CSV file to read.
        input: PathBuf,
        /// Story file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach lexicon sentiment labels to every story in a file.
    Tag {
        /// Story file to label.
        stories: PathBuf,
        /// Lexicon of token<TAB>score lines.
        lexicon: PathBuf,
        /// Labeled story file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus whose sentiment states drive a
    /// switching latent process (latent dimension 8).
    Synth {
        /// Number of stories.
        stories: usize,
        /// Sentences per story.
        #[arg(default_value_t = 5)]
        sentences: usize,
        /// 3 for the switching corpus, 1 to pin everything to the
        /// neutral dynamics.
        #[arg(default_value_t = 3)]
        states: usize,
        /// Story file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a story file and save the checkpoint.
    ///
    /// The scaffold prior always counts transitions over every labeled
    /// training story; `--labels` only limits how many stories feed the
    /// classifier's supervision term.
    Train {
        /// Story file (labeled for the switching model; see `tag`).
        stories: PathBuf,
        /// key=value config file; command-line flags win on conflict.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "slds")]
        model: ModelArg,
        /// Percent of labeled stories whose labels supervise training.
        #[arg(long, value_parser = parse_label_fraction)]
        labels: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores). Results do not depend on it.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Directory for per-epoch checkpoints.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Final model checkpoint to write.
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
    },
    /// Draw stories from a trained model along a sentiment scaffold.
    Sample {
        /// Comma-separated labels, e.g. NEG,NEU,POS. Latent-free models
        /// use it only for the sentence count.
        scaffold: String,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Story file to write; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of stories to draw.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Top-k cutoff for token sampling.
        #[arg(long, default_value_t = 15)]
        topk: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Fill in the missing sentences of every task in a task file.
    Interpolate {
        /// Task file; see the README for the record format.
        tasks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Filled story file to write.
        #[arg(long)]
        out: PathBuf,
        /// Chain sweeps (switching model) or draws (baselines);
        /// overrides the per-task value.
        #[arg(long)]
        samples: Option<usize>,
        /// Burn-in sweeps before candidates count; overrides the
        /// per-task value.
        #[arg(long = "burn-in")]
        burn_in: Option<usize>,
        /// Top-k cutoff for baseline token sampling.
        #[arg(long, default_value_t = 15)]
        topk: usize,
        /// Base seed for tasks that do not carry their own.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Score a trained model on a story file.
    ///
    /// Runs all metrics unless one or more of --ppl, --interp,
    /// --control narrows the selection.
    Evaluate {
        /// Story file to score against.
        stories: PathBuf,
        /// Lexicon for re-tagging generated sentences; required by
        /// --control.
        lexicon: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// key=value report file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Posterior draws per story for the likelihood bound.
        #[arg(long, default_value_t = 4)]
        samples: usize,
        /// Top-k cutoff for baseline token sampling in the benchmark.
        #[arg(long, default_value_t = 15)]
        topk: usize,
        /// Likelihood bound (NLL and perplexity).
        #[arg(long)]
        ppl: bool,
        /// Interpolation benchmark (ROUGE over the masking regimes).
        #[arg(long)]
        interp: bool,
        /// Sentiment-control macro F1 (needs the lexicon and labels).
        #[arg(long)]
        control: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Import { input, out } => import(&input, &out),
        Command::Tag { stories, lexicon, out } => tag(&stories, &lexicon, &out),
        Command::Synth { stories, sentences, states, out, seed } => {
            synth(stories, sentences, states, &out, seed)
        }
        Command::Train { stories, config, model, labels, seed, threads, checkpoint, out } => {
            setup_threads(threads)?;
            run_train(&stories, config.as_deref(), model.kind(), labels, seed, checkpoint.as_deref(), &out)
        }
        Command::Sample { scaffold, checkpoint, out, samples, topk, seed, threads } => {
            setup_threads(threads)?;
            sample(&scaffold, &checkpoint, out.as_deref(), samples, topk, seed)
        }
        Command::Interpolate { tasks, checkpoint, out, samples, burn_in, topk, seed, threads } => {
            setup_threads(threads)?;
            interpolate(&tasks, &checkpoint, &out, samples, burn_in, topk, seed)
        }
        Command::Evaluate {
            stories, lexicon, checkpoint, out, samples, topk, ppl, interp, control, seed, threads,
        } => {
            setup_threads(threads)?;
            let all = !ppl && !interp && !control;
            evaluate(
                &stories,
                lexicon.as_deref(),
                &checkpoint,
                out.as_deref(),
                samples,
                topk,
                ppl || all,
                interp || all,
                control || all,
                seed,
            )
        }
    }
}

fn setup_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("setting up the worker pool")
}

// ── import ──

fn import(input: &Path, out: &Path) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r.with_context(|| format!("reading {}", input.display()))?,
        None => bail!("{}: no rows", input.display()),
    };

    // Column roles come from the header when there is one; otherwise
    // the first column is the id and the rest are sentences.
    let header: Vec<String> =
        first.iter().map(|c| c.trim().to_ascii_lowercase()).collect();
    let is_sentence_col = |name: &str| {
        name.starts_with("sentence") && name["sentence".len()..].chars().all(|c| c.is_ascii_digit())
    };
    let has_header = header
        .iter()
        .any(|c| matches!(c.as_str(), "storyid" | "id" | "storytitle" | "title") || is_sentence_col(c));
    let (id_col, sentence_cols): (usize, Option<Vec<usize>>) = if has_header {
        let id_col = header
            .iter()
            .position(|c| c == "storyid" || c == "id")
            .unwrap_or(0);
        let named: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, c)| is_sentence_col(c))
            .map(|(i, _)| i)
            .collect();
        let cols = if named.is_empty() {
            header
                .iter()
                .enumerate()
                .filter(|(i, c)| *i != id_col && c.as_str() != "storytitle" && c.as_str() != "title")
                .map(|(i, _)| i)
                .collect()
        } else {
            named
        };
        (id_col, Some(cols))
    } else {
        (0, None)
    };

    let mut stories = Vec::new();
    let mut convert = |row: usize, record: &csv::StringRecord| -> Result<()> {
        let id = record
            .get(id_col)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .with_context(|| format!("{}: row {row}: empty story id", input.display()))?
            .to_string();
        let cells: Vec<&str> = match &sentence_cols {
            Some(cols) => cols.iter().filter_map(|&i| record.get(i)).collect(),
            None => record.iter().skip(1).collect(),
        };
        let sentences: Vec<Vec<String>> = cells
            .iter()
            .map(|c| slds_core::corpus::tokenize(c))
            .filter(|toks| !toks.is_empty())
            .collect();
        if sentences.is_empty() {
            bail!("{}: row {row}: no sentences", input.display());
        }
        stories.push(TextStory { id, sentences, labels: None });
        Ok(())
    };

    let mut row = 1;
    if !has_header {
        convert(row, &first)?;
    }
    for record in records {
        row += 1;
        let record = record.with_context(|| format!("reading {}", input.display()))?;
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        convert(row, &record)?;
    }
    save_stories(out, &stories)?;
    println!("imported {} stories to {}", stories.len(), out.display());
    Ok(())
}

// ── tag ──

fn tag(stories_path: &Path, lexicon_path: &Path, out: &Path) -> Result<()> {
    let lexicon = SentimentLexicon::from_file(lexicon_path)?;
    let mut stories = load_stories(stories_path)?;
    for story in &mut stories {
        story.labels = Some(lexicon.tag_story(&story.sentences));
    }
    save_stories(out, &stories)?;
    println!("tagged {} stories to {}", stories.len(), out.display());
    Ok(())
}

// ── synth ──

fn synth(stories: usize, sentences: usize, states: usize, out: &Path, seed: u64) -> Result<()> {
    if states != 1 && states != 3 {
        bail!("states must be 1 or 3, got {states}");
    }
    if stories == 0 || sentences == 0 {
        bail!("story and sentence counts must be positive");
    }
    let spec = SyntheticSpec {
        stories,
        sentences_per_story: sentences,
        states,
        ..SyntheticSpec::default()
    };
    let mut rng = seeding::stream(seed, "cli.synth", 0);
    let corpus = generate_synthetic_corpus(&spec, &mut rng);
    save_stories(out, &corpus)?;
    println!(
        "wrote {} synthetic stories ({} sentences each, {} states) to {}",
        stories,
        sentences,
        states,
        out.display()
    );
    Ok(())
}

// ── train ──

fn run_train(
    stories_path: &Path,
    config: Option<&Path>,
    kind: ModelKind,
    labels: Option<f64>,
    seed: Option<u64>,
    checkpoint_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut file = match config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::empty(),
    };
    let model_cfg = ModelConfig::from_file(kind, &mut file)?;
    let mut train_cfg = TrainConfig::from_file(&mut file)?;
    file.ensure_empty()?;
    if let Some(fraction) = labels {
        train_cfg.label_fraction = fraction;
    }
    if let Some(seed) = seed {
        train_cfg.seed = seed;
    }

    let text = load_stories(stories_path)?;
    if text.is_empty() {
        bail!("{}: no stories", stories_path.display());
    }
    let vocab = Vocabulary::build(&text, model_cfg.vocab_cutoff);
    let encoded: Vec<Story> = text.iter().map(|t| vocab.encode(t)).collect();
    let (train_set, val_set, _) = split_corpus(
        &encoded,
        train_cfg.train_frac,
        train_cfg.val_frac,
        train_cfg.seed,
    );

    let prior = match kind {
        ModelKind::Slds => Some(scaffold_prior_from(&train_set, stories_path)?),
        _ => None,
    };
    let mut model = SldsModel::init(model_cfg, vocab, prior, train_cfg.seed);
    println!(
        "training {kind} on {} stories ({} validation), vocab {}",
        train_set.len(),
        val_set.len(),
        model.vocab.len()
    );
    let report = train(&mut model, &train_set, &val_set, &train_cfg, checkpoint_dir, |s| {
        println!(
            "epoch {:>3}  train {:>10.4}  recon {:>10.4}  kl_z {:>8.4}  kl_s {:>8.4}  sup {:>9.4}  val {:>10.4}{}",
            s.epoch,
            s.train_loss,
            s.recon,
            s.kl_z,
            s.kl_s,
            s.supervision,
            s.val_loss,
            if s.improved { "  *" } else { "" }
        );
    })?;

    let best = &report.epochs[report.best_epoch];
    let mut meta = BTreeMap::new();
    meta.insert("trained.epochs".into(), report.epochs.len().to_string());
    meta.insert("trained.best_epoch".into(), report.best_epoch.to_string());
    meta.insert("trained.val_loss".into(), format!("{:.6}", best.val_loss));
    meta.insert("trained.label_fraction".into(), format!("{}", train_cfg.label_fraction));
    meta.insert("trained.stories".into(), train_set.len().to_string());
    model.save(out, &meta)?;
    println!(
        "saved {} (best epoch {}, validation loss {:.4}{})",
        out.display(),
        report.best_epoch,
        best.val_loss,
        if report.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn scaffold_prior_from(train_set: &[Story], path: &Path) -> Result<MarkovPrior> {
    let sequences: Vec<Vec<usize>> = train_set
        .iter()
        .filter_map(|s| s.labels.as_ref())
        .map(|labels| labels.iter().map(|l| l.index()).collect())
        .collect();
    if sequences.is_empty() {
        bail!(
            "{}: the switching model needs labeled stories; run `slds tag` first",
            path.display()
        );
    }
    Ok(fit_markov_prior(&sequences, ModelKind::Slds.states()))
}

// ── sample ──

fn parse_scaffold(s: &str) -> Result<Vec<ScaffoldLabel>> {
    s.split(',')
        .map(|code| {
            ScaffoldLabel::from_code(code.trim())
                .with_context(|| format!("unknown label `{code}` (use NEG, NEU, POS)"))
        })
        .collect()
}

fn sample(
    scaffold: &str,
    checkpoint: &Path,
    out: Option<&Path>,
    samples: usize,
    topk: usize,
    seed: u64,
) -> Result<()> {
    let scaffold = parse_scaffold(scaffold)?;
    if samples == 0 || topk == 0 {
        bail!("--samples and --topk must be positive");
    }
    let (model, _) = SldsModel::load(checkpoint)?;
    let emission = model.emission();
    let ev = emission.eval(&model.params);
    let has_latent = model.config.kind.has_latent();
    let dynamics = has_latent.then(|| model.dynamics());

    let mut stories = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut rng = seeding::stream(seed, "cli.sample", i as u64);
        let mut z_prev = if has_latent { model.z0().to_vec() } else { Vec::new() };
        let mut carry = ev.initial_hidden();
        let mut sentences = Vec::with_capacity(scaffold.len());
        for label in &scaffold {
            let z = dynamics.as_ref().map(|dy| {
                let state =
                    if model.config.kind == ModelKind::Slds { label.index() } else { 0 };
                dy.transition_distribution(state, &z_prev).sample(&mut rng)
            });
            if let Some(z) = &z {
                z_prev = z.clone();
            }
            let h_start = ev.start_sentence(&carry, z.as_deref());
            let (tokens, new_carry) =
                ev.decode_topk(&h_start, z.as_deref(), gibbs::MAX_DECODE_LEN, topk, &mut rng);
            carry = new_carry;
            sentences.push(model.vocab.decode_sentence(&tokens));
        }
        stories.push(TextStory {
            id: format!("sample-{i:03}"),
            sentences,
            labels: (model.config.kind == ModelKind::Slds).then(|| scaffold.clone()),
        });
    }

    match out {
        Some(path) => {
            save_stories(path, &stories)?;
            println!("wrote {} stories to {}", stories.len(), path.display());
        }
        None => {
            for story in &stories {
                let mut fields = vec![story.id.clone()];
                fields.extend(story.sentences.iter().map(|s| s.join(" ")));
                println!("{}", fields.join("\t"));
            }
        }
    }
    Ok(())
}

// ── interpolate ──

fn interpolate(
    tasks_path: &Path,
    checkpoint: &Path,
    out: &Path,
    samples: Option<usize>,
    burn_in: Option<usize>,
    topk: usize,
    seed: u64,
) -> Result<()> {
    let (model, _) = SldsModel::load(checkpoint)?;
    let mut tasks = gibbs::load_tasks(tasks_path, &model.vocab, seed)?;
    for task in &mut tasks {
        if let Some(samples) = samples {
            task.samples = samples;
        }
        if let Some(burn_in) = burn_in {
            task.burn_in = burn_in;
        }
        if model.config.kind == ModelKind::Slds && task.burn_in >= task.samples {
            bail!("task {}: burn-in {} leaves no samples of {}", task.id, task.burn_in, task.samples);
        }
        if model.config.kind.has_latent() && task.scaffold.is_none() {
            task.scaffold = Some(gibbs::derive_scaffold(&model, &task.sentences));
        }
    }

    let filled: Vec<(Story, f64)> = tasks
        .par_iter()
        .map(|task| match model.config.kind {
            ModelKind::Slds => gibbs::interpolate(&model, task)
                .map(|(story, diag)| (story, diag.selected_score)),
            _ => gibbs::baseline_interpolate(&model, task, samples.unwrap_or(1000), topk),
        })
        .collect::<slds_core::error::Result<Vec<_>>>()?;

    let text: Vec<TextStory> = filled
        .iter()
        .map(|(story, _)| TextStory {
            id: story.id.clone(),
            sentences: story.sentences.iter().map(|s| model.vocab.decode_sentence(s)).collect(),
            labels: story.labels.clone(),
        })
        .collect();
    save_stories(out, &text)?;
    for (task, (_, score)) in tasks.iter().zip(&filled) {
        println!("{}: score {:.4}", task.id, score);
    }
    println!("filled {} tasks to {}", tasks.len(), out.display());
    Ok(())
}

// ── evaluate ──

#[allow(clippy::too_many_arguments)]
fn evaluate(
    stories_path: &Path,
    lexicon: Option<&Path>,
    checkpoint: &Path,
    out: Option<&Path>,
    mc_samples: usize,
    topk: usize,
    want_ppl: bool,
    want_interp: bool,
    want_control: bool,
    seed: u64,
) -> Result<()> {
    let (model, _) = SldsModel::load(checkpoint)?;
    let text = load_stories(stories_path)?;
    if text.is_empty() {
        bail!("{}: no stories", stories_path.display());
    }
    let encoded: Vec<Story> = text.iter().map(|t| model.vocab.encode(t)).collect();
    let mut pairs: Vec<(String, String)> = Vec::new();

    if want_ppl {
        let report = eval::nll_ppl(&model, &encoded, mc_samples, seed);
        println!(
            "nll {:.4}  ppl {:.4}  ({} stories, {} words, {} draws)",
            report.nll, report.ppl, report.stories, report.words, report.mc_samples
        );
        pairs.extend(report.kv());
    }

    if want_interp {
        let opts = eval::BenchmarkOptions { baseline_top_k: topk, seed, ..Default::default() };
        let results = eval::interpolation_benchmark(&model, &encoded, &opts)?;
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|r| {
                let mut row = vec![r.regime.to_string()];
                row.extend(r.rouge.iter().map(|p| format!("{:.4}", p.f1)));
                row.push(r.sentences.to_string());
                row
            })
            .collect();
        print!(
            "{}",
            eval::format_table(&["regime", "rouge-1", "rouge-2", "rouge-L", "sentences"], &rows)
        );
        for r in &results {
            pairs.extend(r.kv().into_iter().map(|(k, v)| (format!("interp.{k}"), v)));
        }
    }

    if want_control {
        let lexicon_path = lexicon
            .context("the control metric needs a lexicon file argument for re-tagging")?;
        let lexicon = SentimentLexicon::from_file(lexicon_path)?;
        let sequences: Vec<Vec<ScaffoldLabel>> =
            encoded.iter().filter_map(|s| s.labels.clone()).collect();
        if sequences.is_empty() {
            bail!("{}: no labeled stories to take tag sequences from", stories_path.display());
        }
        let report = eval::sentiment_control_f1(&model, &sequences, &lexicon, seed);
        println!("control macro-F1 {:.4} over {} tag sequences", report.macro_f1, sequences.len());
        let rows: Vec<Vec<String>> = report
            .per_class
            .iter()
            .enumerate()
            .map(|(c, prf)| {
                vec![
                    ScaffoldLabel::from_index(c).unwrap().code().to_string(),
                    format!("{:.4}", prf.precision),
                    format!("{:.4}", prf.recall),
                    format!("{:.4}", prf.f1),
                ]
            })
            .collect();
        print!("{}", eval::format_table(&["class", "precision", "recall", "f1"], &rows));
        pairs.extend(report.kv().into_iter().map(|(k, v)| (format!("control.{k}"), v)));
    }

    if let Some(path) = out {
        eval::write_kv_report(path, &pairs)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
