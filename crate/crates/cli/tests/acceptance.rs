//! Acceptance gate: one test per promised property, each printing a
//! single `ACCEPTANCE <n> <name>: PASS` or `FAIL - <analysis>` line.
//! Exact claims are checked against independent oracles (quadrature,
//! dense linear algebra, a Kalman smoother, finite differences); the
//! trend claims train fresh models on the synthetic switching corpus.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use slds_core::config::{ModelConfig, ModelKind};
use slds_core::corpus::{strip_eos, tokenize, Story, TextStory, Vocabulary, EOS_ID};
use slds_core::dynamics::{a_name, b_name, noise_name, DynamicsSet};
use slds_core::emission::LinearGaussianEmission;
use slds_core::eval::{self, BenchmarkOptions, RougeVariant};
use slds_core::gaussian::{gibbs_z_conditional, Gaussian};
use slds_core::gibbs::{self, InterpolationTask};
use slds_core::inference::elbo;
use slds_core::inference::vector::{latent_posterior_means, VectorSlds};
use slds_core::model::SldsModel;
use slds_core::scaffold::{MarkovPrior, ScaffoldLabel};
use slds_core::seeding;
use slds_core::tensor::{gradcheck, Array, BoundParams, ParamStore};

use common::*;

fn text_corpus(lines: &[&str]) -> (Vec<Story>, Vocabulary) {
    let text: Vec<TextStory> = lines
        .iter()
        .enumerate()
        .map(|(i, s)| TextStory {
            id: format!("t{i}"),
            sentences: s.split('|').map(tokenize).collect(),
            labels: None,
        })
        .collect();
    let vocab = Vocabulary::build(&text, 1);
    let stories = text.iter().map(|t| vocab.encode(t)).collect();
    (stories, vocab)
}

fn tiny_config(kind: ModelKind, d: usize) -> ModelConfig {
    let mut cfg = ModelConfig::default_for(kind);
    if kind.has_latent() {
        cfg.latent_dim = d;
    }
    cfg.embed_dim = 3;
    cfg.hidden_dim = 5;
    cfg.recog_hidden = 4;
    cfg.state_embed = 2;
    cfg.posterior_hidden = 4;
    cfg
}

fn three_state_prior() -> MarkovPrior {
    MarkovPrior::from_rows(
        vec![0.5, 0.3, 0.2],
        vec![0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.3, 0.6],
    )
}

#[test]
fn a1_latent_conditional_exactness() {
    let started = Instant::now();

    // 1-D: condition N(0.2, 0.8^2) on target = a z + noise and compare
    // with direct grid integration of prior times likelihood.
    let (a, sigma, target) = (0.7, 0.5, 1.1);
    let q = Gaussian::new(vec![0.2], vec![0.8]);
    let post = gibbs_z_conditional(&[a], &[sigma], &[target], &q);
    let weight = |z: f64| {
        let prior = (-0.5 * ((z - 0.2) / 0.8).powi(2)).exp() / (0.8 * (2.0 * PI).sqrt());
        let lik = (-0.5 * ((target - a * z) / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt());
        prior * lik
    };
    let (lo, hi) = (0.2 - 12.0 * 0.8, 0.2 + 12.0 * 0.8);
    let i0 = simpson(&weight, lo, hi, 4000);
    let i1 = simpson(&|z| z * weight(z), lo, hi, 4000);
    let i2 = simpson(&|z| z * z * weight(z), lo, hi, 4000);
    let grid_mean = i1 / i0;
    let grid_var = i2 / i0 - grid_mean * grid_mean;
    let mean_err = (post.mean()[0] - grid_mean).abs();
    let var_err = (post.covariance()[0] - grid_var).abs();

    // 2-D: the same update done independently in information form with
    // dense inverses.
    let lq = vec![0.9, 0.0, 0.3, 0.6];
    let l = vec![0.5, 0.0, 0.1, 0.4];
    let a2 = vec![0.8, 0.2, -0.1, 0.5];
    let muq = vec![0.4, -0.2];
    let target2 = vec![0.7, -0.3];
    let post2 = gibbs_z_conditional(&a2, &l, &target2, &Gaussian::new(muq.clone(), lq.clone()));
    let sq_inv = inverse(&mul(&lq, &transpose(&lq, 2, 2), 2, 2, 2), 2);
    let sig_inv = inverse(&mul(&l, &transpose(&l, 2, 2), 2, 2, 2), 2);
    let at_sig_inv = mul(&transpose(&a2, 2, 2), &sig_inv, 2, 2, 2);
    let lambda = madd(&sq_inv, &mul(&at_sig_inv, &a2, 2, 2, 2));
    let cov_exact = inverse(&lambda, 2);
    let h = madd(&matvec(&sq_inv, &muq, 2, 2), &matvec(&at_sig_inv, &target2, 2, 2));
    let mean_exact = matvec(&cov_exact, &h, 2, 2);
    let dense_err = post2
        .mean()
        .iter()
        .zip(&mean_exact)
        .chain(post2.covariance().iter().zip(&cov_exact))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let elapsed = started.elapsed().as_secs_f64();
    check(
        1,
        "latent conditional exactness",
        mean_err < 1e-5 && var_err < 1e-5 && dense_err < 1e-8 && elapsed < 1.0,
        &format!(
            "grid mean err {mean_err:.2e}, grid var err {var_err:.2e}, \
             dense err {dense_err:.2e}, {elapsed:.2}s"
        ),
    );
}

#[test]
fn a2_chain_vs_smoother() {
    let started = Instant::now();

    // Single-regime chain in d = 2 with a non-diagonal emission, so the
    // production sampler faces correlated conditionals.
    let a = vec![0.85, 0.1, 0.0, 0.7];
    let b = vec![0.3, -0.2];
    let q_factor = vec![0.4, 0.0, 0.15, 0.3];
    let c = vec![1.0, 0.0, 0.2, 0.9];
    let r_factor = vec![0.3, 0.0, 0.05, 0.25];
    let z0 = vec![0.1, -0.3];

    let mut store = ParamStore::new();
    store.insert(a_name(0), Array::matrix(2, 2, a.clone()));
    store.insert(b_name(0), Array::vector(b.clone()));
    // Raw noise keeps the strict lower triangle and logs the diagonal.
    store.insert(
        noise_name(0),
        Array::matrix(2, 2, vec![0.4f64.ln(), 0.0, 0.15, 0.3f64.ln()]),
    );
    let model = VectorSlds {
        dynamics: DynamicsSet::from_params(&store, 1, 2),
        prior: MarkovPrior::from_rows(vec![1.0], vec![1.0]),
        emission: LinearGaussianEmission::new(2, 2, c.clone(), r_factor.clone()),
        z0: z0.clone(),
    };
    let story = model.generate(4, &mut seeding::stream(77, "acceptance.kalman", 0));

    let oracle = Lgss {
        d: 2,
        obs: 2,
        a,
        b,
        q: mul(&q_factor, &transpose(&q_factor, 2, 2), 2, 2, 2),
        c,
        r: mul(&r_factor, &transpose(&r_factor, 2, 2), 2, 2, 2),
        z0,
    };
    let exact = oracle.smoother_means(&story.observations);

    let observed: Vec<Option<Vec<f64>>> = story.observations.iter().cloned().map(Some).collect();
    let chains = 10;
    let per_chain: Vec<Vec<Vec<f64>>> = (0..chains)
        .map(|chain| {
            let mut rng = seeding::stream(77, "acceptance.kalman.chain", chain);
            latent_posterior_means(&model, &observed, &story.states, 1000, 100, &mut rng)
        })
        .collect();

    let mut ok = true;
    let mut worst = 0.0f64;
    for t in 0..4 {
        for dim in 0..2 {
            let vals: Vec<f64> = per_chain.iter().map(|m| m[t][dim]).collect();
            let mean = vals.iter().sum::<f64>() / chains as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (chains - 1) as f64;
            // Between-chain standard error; the floor guards against a
            // fluke of 10 nearly identical chain means.
            let se = (var / chains as f64).sqrt().max(1e-3);
            let diff = (mean - exact[t][dim]).abs();
            worst = worst.max(diff / se);
            ok &= diff <= 3.0 * se;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    check(
        2,
        "chain vs smoother",
        ok && elapsed < 60.0,
        &format!("worst |mean - smoother| = {worst:.2} standard errors, {elapsed:.2}s"),
    );
}

#[test]
fn a3_gradient_integrity() {
    let started = Instant::now();
    let (stories, vocab) = text_corpus(&["hum rumble|glow hum glow", "rumble glow|hum hum"]);
    let labels = vec![ScaffoldLabel::Negative, ScaffoldLabel::Positive];

    let slds = SldsModel::init(
        tiny_config(ModelKind::Slds, 2),
        vocab.clone(),
        Some(three_state_prior()),
        3,
    );
    let lm = SldsModel::init(tiny_config(ModelKind::Lm, 0), vocab, None, 4);

    // Each objective is a deterministic function of the parameters once
    // the noise stream is fixed, so central differences apply directly.
    type Pass = Box<dyn Fn(&SldsModel) -> (f64, std::collections::BTreeMap<String, Vec<f64>>)>;
    let passes: Vec<(&str, &SldsModel, Pass)> = vec![
        (
            "relaxed",
            &slds,
            Box::new({
                let story = stories[0].clone();
                move |m: &SldsModel| {
                    let mut bp = BoundParams::new(&m.params, true);
                    let mut rng = seeding::stream(55, "acceptance.grad", 0);
                    let (loss, _) = elbo::elbo_soft_loss(m, &mut bp, &story, 0.8, 1.0, &mut rng);
                    let value = bp.tape.value(loss)[0];
                    bp.tape.backward(loss);
                    (value, bp.grads())
                }
            }),
        ),
        (
            "supervised",
            &slds,
            Box::new({
                let story = stories[1].clone();
                let labels = labels.clone();
                move |m: &SldsModel| {
                    let mut bp = BoundParams::new(&m.params, true);
                    let mut rng = seeding::stream(55, "acceptance.grad", 1);
                    let (loss, _) =
                        elbo::supervised_loss(m, &mut bp, &story, &labels, 1.0, 1.0, &mut rng);
                    let value = bp.tape.value(loss)[0];
                    bp.tape.backward(loss);
                    (value, bp.grads())
                }
            }),
        ),
        (
            "plain",
            &lm,
            Box::new({
                let story = stories[0].clone();
                move |m: &SldsModel| {
                    let mut bp = BoundParams::new(&m.params, true);
                    let (loss, _) = elbo::lm_loss(m, &mut bp, &story);
                    let value = bp.tape.value(loss)[0];
                    bp.tape.backward(loss);
                    (value, bp.grads())
                }
            }),
        ),
    ];

    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut checked = 0usize;
    for (pass_name, model, run) in &passes {
        let (_, grads) = run(model);
        for name in model.params.names() {
            let base = model.params.get(name).clone();
            let f = |x: &[f64]| -> f64 {
                let mut probe = (*model).clone();
                probe.params.replace(name, Array::new(base.shape.clone(), x.to_vec()));
                run(&probe).0
            };
            let fd = gradcheck::central_diff(&f, &base.data, 1e-5);
            let analytic = grads
                .get(name)
                .cloned()
                .unwrap_or_else(|| vec![0.0; base.data.len()]);
            let err = gradcheck::max_rel_err(&analytic, &fd);
            if err > worst {
                worst = err;
                worst_at = format!("{pass_name}/{name}");
            }
            checked += analytic.len();
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    check(
        3,
        "gradient integrity",
        worst < 1e-4 && elapsed < 60.0,
        &format!("{checked} coordinates, worst rel err {worst:.2e} at {worst_at}, {elapsed:.1}s"),
    );
}

#[test]
fn a4_bound_below_exact_likelihood() {
    let started = Instant::now();
    let text = TextStory {
        id: "t0".into(),
        sentences: vec![tokenize("hum rumble"), tokenize("glow hum")],
        labels: None,
    };
    let vocab = Vocabulary::build(std::slice::from_ref(&text), 1);
    let story = vocab.encode(&text);
    let model = SldsModel::init(
        tiny_config(ModelKind::Slds, 1),
        vocab,
        Some(three_state_prior()),
        3,
    );

    // Exact log-likelihood: enumerate the 9 state paths and integrate
    // the 1-D latents by nested quadrature. The emission carry after
    // sentence 1 depends on z1, so the inner integral threads it.
    let em = model.emission();
    let ev = em.eval(&model.params);
    let dyn_set = model.dynamics();
    let prior = model.prior();
    let z0 = model.z0().to_vec();
    let h0 = ev.initial_hidden();
    let sent: Vec<&[usize]> = story.sentences.iter().map(|s| strip_eos(s)).collect();

    let total = |outer_n: usize, inner_n: usize| -> f64 {
        let mut p = 0.0;
        for s1 in 0..3 {
            for s2 in 0..3 {
                let w = prior.initial()[s1] * prior.transition_row(s1)[s2];
                let p1 = dyn_set.transition_distribution(s1, &z0);
                let (m1, sd1) = (p1.mean()[0], p1.cov_factor()[0]);
                let outer = simpson(
                    &|z1: f64| {
                        let zv = [z1];
                        let h_start = ev.start_sentence(&h0, Some(&zv));
                        let (lp1, carry) = ev.sentence_log_prob(&h_start, Some(&zv), sent[0]);
                        let p2 = dyn_set.transition_distribution(s2, &zv);
                        let (m2, sd2) = (p2.mean()[0], p2.cov_factor()[0]);
                        let inner = simpson(
                            &|z2: f64| {
                                let zv2 = [z2];
                                let h2 = ev.start_sentence(&carry, Some(&zv2));
                                let (lp2, _) = ev.sentence_log_prob(&h2, Some(&zv2), sent[1]);
                                (p2.log_pdf(&zv2) + lp2).exp()
                            },
                            m2 - 12.0 * sd2,
                            m2 + 12.0 * sd2,
                            inner_n,
                        );
                        (p1.log_pdf(&zv) + lp1).exp() * inner
                    },
                    m1 - 12.0 * sd1,
                    m1 + 12.0 * sd1,
                    outer_n,
                );
                p += w * outer;
            }
        }
        p.ln()
    };
    let coarse = total(160, 120);
    let exact = total(320, 240);
    let quad_converged = (coarse - exact).abs() < 1e-6;

    // 30 independent repeats, each averaging 200 single-draw bound
    // estimates; every repeat must sit at or below the exact value
    // within its own 3-standard-error band.
    let (repeats, draws) = (30, 200);
    let mut repeat_means = Vec::with_capacity(repeats);
    let mut each_ok = true;
    let mut worst_excess = f64::NEG_INFINITY;
    for r in 0..repeats {
        let mut rng = seeding::stream(11, "acceptance.bound", r as u64);
        let vals: Vec<f64> = (0..draws)
            .map(|_| elbo::elbo_hard(&model, &story, &mut rng).elbo)
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        worst_excess = worst_excess.max(mean - exact - 3.0 * se);
        each_ok &= mean <= exact + 3.0 * se;
        repeat_means.push(mean);
    }
    let pooled = repeat_means.iter().sum::<f64>() / repeats as f64;

    let elapsed = started.elapsed().as_secs_f64();
    check(
        4,
        "bound below exact likelihood",
        quad_converged && each_ok && pooled < exact && elapsed < 300.0,
        &format!(
            "exact log-lik {exact:.4}, pooled bound {pooled:.4}, quadrature drift \
             {:.1e}, worst repeat excess {worst_excess:+.4}, {elapsed:.1}s",
            (coarse - exact).abs()
        ),
    );
}

fn regime_f1(results: &[eval::RegimeResult], regime: &str, variant: RougeVariant) -> f64 {
    let r = results
        .iter()
        .find(|r| r.regime == regime)
        .unwrap_or_else(|| panic!("regime {regime} missing"));
    r.rouge[variant as usize].f1
}

#[test]
fn a5_interpolation_ordering() {
    let started = Instant::now();
    let b = bundle();
    let subset = &b.test[..120.min(b.test.len())];
    let opts = BenchmarkOptions { seed: 41, ..BenchmarkOptions::default() };

    let slds = eval::interpolation_benchmark(&b.slds, subset, &opts).unwrap();
    let lds = eval::interpolation_benchmark(&b.lds, subset, &opts).unwrap();
    let lm = eval::interpolation_benchmark(&b.lm, subset, &opts).unwrap();
    for (name, results) in [("slds", &slds), ("lds", &lds), ("lm", &lm)] {
        for r in results.iter() {
            eprintln!(
                "[a5] {name:<4} {:<7} r1 {:.4}  r2 {:.4}  rl {:.4}",
                r.regime, r.rouge[0].f1, r.rouge[1].f1, r.rouge[2].f1
            );
        }
    }

    let slds_4th = regime_f1(&slds, "4th", RougeVariant::One);
    let lds_4th = regime_f1(&lds, "4th", RougeVariant::One);
    let slds_34 = regime_f1(&slds, "3rd+4th", RougeVariant::One);
    let lm_34 = regime_f1(&lm, "3rd+4th", RougeVariant::One);

    let elapsed = started.elapsed().as_secs_f64();
    check(
        5,
        "interpolation ordering",
        slds_4th > lds_4th && slds_34 > lm_34 && elapsed < 1800.0,
        &format!(
            "rouge-1 f1, 4th: slds {slds_4th:.4} vs lds {lds_4th:.4}; \
             3rd+4th: slds {slds_34:.4} vs lm {lm_34:.4}; {elapsed:.0}s"
        ),
    );
}

#[test]
fn a6_perplexity_ordering() {
    let started = Instant::now();
    let b = bundle();
    let slds = eval::nll_ppl(&b.slds, &b.val, 8, 13);
    let lds = eval::nll_ppl(&b.lds, &b.val, 8, 13);
    let uniform = b.vocab_size as f64;
    eprintln!(
        "[a6] val ppl: slds {:.4}  lds {:.4}  (nll/story slds {:.3} lds {:.3})",
        slds.ppl, lds.ppl, slds.nll, lds.nll
    );

    let elapsed = started.elapsed().as_secs_f64();
    check(
        6,
        "perplexity ordering",
        slds.ppl < lds.ppl && lds.ppl < uniform && elapsed < 1800.0,
        &format!(
            "val ppl: slds {:.3} < lds {:.3} < uniform {uniform:.0}; {elapsed:.0}s",
            slds.ppl, lds.ppl
        ),
    );
}

#[test]
fn a7_supervision_controllability() {
    let started = Instant::now();
    let b = bundle();
    let sequences: Vec<Vec<ScaffoldLabel>> =
        b.test.iter().map(|s| s.labels.clone().expect("synthetic stories are labeled")).collect();
    let lexicon = synthetic_lexicon();

    let full = eval::sentiment_control_f1(&b.slds, &sequences, &lexicon, 99);
    let ten = eval::sentiment_control_f1(&b.slds10, &sequences, &lexicon, 99);
    eprintln!(
        "[a7] control macro-F1: full {:.4}  ten {:.4}  gap {:+.4}",
        full.macro_f1,
        ten.macro_f1,
        full.macro_f1 - ten.macro_f1
    );

    let elapsed = started.elapsed().as_secs_f64();
    check(
        7,
        "supervision controllability",
        full.macro_f1 >= ten.macro_f1 + 0.15 && elapsed < 1200.0,
        &format!(
            "control macro-F1: full supervision {:.4}, 10% supervision {:.4}, \
             gap {:+.4} (needs >= +0.15); {elapsed:.0}s",
            full.macro_f1,
            ten.macro_f1,
            full.macro_f1 - ten.macro_f1
        ),
    );
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_slds"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn slds");
    assert!(
        out.status.success(),
        "slds {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn a8_clamping_and_determinism() {
    let started = Instant::now();

    // Clamping: over random tasks, every observed sentence must come
    // back token for token, whatever the chain does around it.
    let (_, vocab) = text_corpus(&["hum rumble glow|ember drift", "moss ember|drift hum moss"]);
    let real_words: Vec<usize> = (4..vocab.len()).collect();
    let slds = SldsModel::init(
        tiny_config(ModelKind::Slds, 2),
        vocab.clone(),
        Some(three_state_prior()),
        9,
    );
    let lm = SldsModel::init(tiny_config(ModelKind::Lm, 0), vocab, None, 10);
    let mut rng = seeding::stream(31, "acceptance.clamp", 0);
    let mut clamped = true;
    for t in 0..1000u64 {
        let len = rng.gen_range(3..=6);
        let mut mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.6)).collect();
        if mask.iter().all(|m| *m) {
            mask[0] = false;
        }
        if mask.iter().all(|m| !*m) {
            mask[len - 1] = true;
        }
        let sentences: Vec<Option<Vec<usize>>> = mask
            .iter()
            .map(|&observed| {
                observed.then(|| {
                    let words = rng.gen_range(1..=4);
                    let mut s: Vec<usize> =
                        (0..words).map(|_| real_words[rng.gen_range(0..real_words.len())]).collect();
                    s.push(EOS_ID);
                    s
                })
            })
            .collect();
        let scaffold: Vec<ScaffoldLabel> = (0..len)
            .map(|_| ScaffoldLabel::from_index(rng.gen_range(0..3)).unwrap())
            .collect();
        let task = InterpolationTask {
            id: format!("t{t}"),
            sentences,
            scaffold: Some(scaffold),
            samples: 3,
            burn_in: 1,
            seed: 1000 + t,
        };
        let (filled, _) = gibbs::interpolate(&slds, &task).unwrap();
        let (base, _) = gibbs::baseline_interpolate(&lm, &task, 2, 5).unwrap();
        for (i, original) in task.sentences.iter().enumerate() {
            if let Some(original) = original {
                clamped &= filled.sentences[i] == *original && base.sentences[i] == *original;
            }
        }
    }

    // Determinism: the same command with the same seed must write byte
    // identical files at 1 and 8 worker threads, across a train,
    // interpolate, and evaluate round trip.
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run_cli(p, &["synth", "60", "--out", "corpus.tsv", "--seed", "3"]);
    std::fs::write(
        p.join("train.cfg"),
        "d=4\nembed=6\nhidden=10\nrecog_hidden=8\nstate_embed=2\nposterior_hidden=8\n\
         vocab_cutoff=1\nepochs=2\nlr=0.01\nbatch=8\n",
    )
    .unwrap();
    for threads in ["1", "8"] {
        run_cli(
            p,
            &[
                "train", "corpus.tsv", "--config", "train.cfg", "--model", "slds", "--seed", "9",
                "--threads", threads, "--out", &format!("m{threads}.ckpt"),
            ],
        );
    }
    std::fs::write(
        p.join("tasks.txt"),
        "id=a\ntext=the good up far\ntext=__MISSING__\ntext=the bad down near\n\n\
         id=b\ntext=__MISSING__\ntext=the table up near\ntext=the great up far\n",
    )
    .unwrap();
    for threads in ["1", "8"] {
        run_cli(
            p,
            &[
                "interpolate", "tasks.txt", "--checkpoint", "m1.ckpt", "--samples", "8",
                "--burn-in", "3", "--seed", "7", "--threads", threads, "--out",
                &format!("fill{threads}.tsv"),
            ],
        );
        run_cli(
            p,
            &[
                "evaluate", "corpus.tsv", "--checkpoint", "m1.ckpt", "--ppl", "--samples", "2",
                "--seed", "5", "--threads", threads, "--out", &format!("rep{threads}.txt"),
            ],
        );
    }
    let same = |x: &str, y: &str| std::fs::read(p.join(x)).unwrap() == std::fs::read(p.join(y)).unwrap();
    let deterministic = same("m1.ckpt", "m8.ckpt")
        && same("fill1.tsv", "fill8.tsv")
        && same("rep1.txt", "rep8.txt");

    let elapsed = started.elapsed().as_secs_f64();
    check(
        8,
        "clamping and determinism",
        clamped && deterministic && elapsed < 600.0,
        &format!("clamped over 1000 tasks: {clamped}, thread-count invariant: {deterministic}, {elapsed:.0}s"),
    );
}

#[test]
fn a9_metric_correctness() {
    let started = Instant::now();
    let close = |x: f64, y: f64| (x - y).abs() < 1e-12;

    // Hand-counted overlaps.
    let r1 = eval::rouge(&[1, 2, 3], &[1, 3, 4], RougeVariant::One);
    let r2 = eval::rouge(&[1, 2, 3], &[1, 3, 4], RougeVariant::Two);
    let rl = eval::rouge(&[1, 2, 3], &[1, 3, 4], RougeVariant::L);
    let mut ok = close(r1.precision, 2.0 / 3.0)
        && close(r1.recall, 2.0 / 3.0)
        && close(r1.f1, 2.0 / 3.0)
        && close(r2.f1, 0.0)
        && close(rl.f1, 2.0 / 3.0);

    // Repeats clip against the reference count.
    let r1 = eval::rouge(&[5, 5, 5], &[5, 5], RougeVariant::One);
    let r2 = eval::rouge(&[5, 5, 5], &[5, 5], RougeVariant::Two);
    ok &= close(r1.precision, 2.0 / 3.0) && close(r1.recall, 1.0) && close(r1.f1, 0.8);
    ok &= close(r2.precision, 0.5) && close(r2.recall, 1.0) && close(r2.f1, 2.0 / 3.0);

    // A bigram overlap that is neither empty nor total.
    let r2 = eval::rouge(&[1, 2, 3, 4], &[2, 3, 4], RougeVariant::Two);
    ok &= close(r2.precision, 2.0 / 3.0) && close(r2.recall, 1.0) && close(r2.f1, 0.8);

    // Subsequence need not be contiguous.
    let rl = eval::rouge(&[1, 9, 2, 9, 3], &[1, 2, 3], RougeVariant::L);
    ok &= close(rl.recall, 1.0) && close(rl.precision, 3.0 / 5.0) && close(rl.f1, 0.75);

    // A freshly initialized plain LM has a zeroed output head, so its
    // next-token distribution is uniform and perplexity equals the
    // vocabulary size exactly.
    let (stories, vocab) = text_corpus(&["hum rumble glow|ember drift", "moss ember"]);
    let v = vocab.len() as f64;
    let lm = SldsModel::init(tiny_config(ModelKind::Lm, 0), vocab, None, 7);
    let report = eval::nll_ppl(&lm, &stories, 1, 3);
    let ppl_err = (report.ppl - v).abs();
    ok &= ppl_err < 1e-9;

    let elapsed = started.elapsed().as_secs_f64();
    check(
        9,
        "metric correctness",
        ok && elapsed < 60.0,
        &format!("uniform ppl err {ppl_err:.1e} against vocab {v:.0}, {elapsed:.1}s"),
    );
}
