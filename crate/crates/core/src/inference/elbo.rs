//! Evidence lower bound for one story, in three flavors.
//!
//! Soft (training, no labels): discrete states are relaxed with
//! Gumbel-Softmax weights w_i; the dynamics prior blends means and
//! factors under w_i; kl_s compares q(S_i) to the expected transition
//! row under w_{i-1}. Differentiable end to end.
//!
//! Supervised (training, gold labels): states are fixed to the gold
//! labels, kl_s disappears, and the objective gains the classifier
//! likelihood Σ log q(S_i = gold_i | X_i) plus the (constant) scaffold
//! log-prior of the gold sequence.
//!
//! Hard (evaluation): sample s_i ~ q(S_i), then take both KL terms
//! analytically given the sampled path. A single draw is an unbiased
//! estimate of the ELBO, so averaging gives a proper lower bound on
//! log p(X); this is what the NLL/PPL numbers report.
//!
//! Conventions shared by all flavors: z_0 is the learned `dyn.z0`
//! parameter; per sentence, Gumbel noise is drawn before the
//! reparameterization noise; reconstruction teacher-forces the emission
//! GRU on the sampled latents with the hidden state carried across
//! sentences.

use rand::Rng;

use crate::config::ModelKind;
use crate::corpus::{strip_eos, Story};
use crate::dynamics::{self, factor_from_raw_on_tape, gumbel_softmax_on_tape};
use crate::emission::GruLmGraph;
use crate::gaussian::{kl_divergence, Gaussian};
use crate::inference::recognition::{RecognitionEval, RecognitionGraph};
use crate::model::{SldsModel, Z0};
use crate::scaffold::ScaffoldLabel;
use crate::tensor::{Array, BoundParams, TensorId};

/// Component values of one story's objective. `elbo` is the bound
/// itself: recon - kl_z - kl_s for unsupervised flavors, and the
/// labeled-case bound recon - kl_z + scaffold_log_prior when states are
/// observed. `supervision` is reported separately because it is an
/// objective term, not part of the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboReport {
    pub recon: f64,
    pub kl_z: f64,
    pub kl_s: f64,
    pub supervision: f64,
    pub scaffold_log_prior: f64,
    pub elbo: f64,
    /// Token count including each sentence's eos; the PPL denominator.
    pub words: usize,
}

impl ElboReport {
    pub fn check_finite(&self, story: &str) -> crate::Result<()> {
        let comps = [
            ("recon", self.recon),
            ("kl_z", self.kl_z),
            ("kl_s", self.kl_s),
            ("supervision", self.supervision),
        ];
        let bad: Vec<String> = comps
            .iter()
            .filter(|(_, v)| !v.is_finite())
            .map(|(n, v)| format!("{n} = {v}"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(crate::SldsError::Invalid(format!(
                "non-finite objective on story {story}: {}",
                bad.join(", ")
            )))
        }
    }
}

/// Dynamics parameters bound onto the tape.
struct DynGraph {
    d: usize,
    k: usize,
    a: Vec<TensorId>,
    b: Vec<TensorId>,
    l: Vec<TensorId>,
    eye: TensorId,
    ones: TensorId,
}

impl DynGraph {
    fn bind(bp: &mut BoundParams, k: usize, d: usize) -> DynGraph {
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        let mut l = Vec::with_capacity(k);
        for s in 0..k {
            a.push(bp.param(&dynamics::a_name(s)));
            b.push(bp.param(&dynamics::b_name(s)));
            let raw = bp.param(&dynamics::noise_name(s));
            l.push(factor_from_raw_on_tape(bp, raw, d));
        }
        let eye = bp.tape.constant(&Array::matrix(d, d, crate::linalg::identity(d)));
        let ones = bp.tape.constant(&Array::vector(vec![1.0; d]));
        DynGraph { d, k, a, b, l, eye, ones }
    }

    /// Mean and factor of P(Z_i | z_prev, S_i = s).
    fn hard_prior(&self, bp: &mut BoundParams, s: usize, z_prev: TensorId) -> (TensorId, TensorId) {
        let az = bp.tape.matmul(self.a[s], z_prev);
        (bp.tape.add(az, self.b[s]), self.l[s])
    }

    /// Convex blend of per-state means and factors under weights [k, 1].
    fn soft_prior(
        &self,
        bp: &mut BoundParams,
        weights: TensorId,
        z_prev: TensorId,
    ) -> (TensorId, TensorId) {
        let mut mean = None;
        let mut factor = None;
        for s in 0..self.k {
            let w_s = bp.tape.slice_rows(weights, s, 1);
            let (m, l) = self.hard_prior(bp, s, z_prev);
            let wm = bp.tape.mul(m, w_s);
            let wl = bp.tape.mul(l, w_s);
            mean = Some(match mean {
                None => wm,
                Some(acc) => bp.tape.add(acc, wm),
            });
            factor = Some(match factor {
                None => wl,
                Some(acc) => bp.tape.add(acc, wl),
            });
        }
        (mean.unwrap(), factor.unwrap())
    }
}

/// KL( N(mu_q, diag exp(logvar)) || N(mean_p, L_p L_p^T) ) on the tape.
fn kl_z_on_tape(
    bp: &mut BoundParams,
    dyn_graph: &DynGraph,
    mu_q: TensorId,
    logvar_q: TensorId,
    mean_p: TensorId,
    l_p: TensorId,
) -> TensorId {
    let d = dyn_graph.d;
    let diff = bp.tape.sub(mean_p, mu_q);
    let y = bp.tape.tri_solve_lower(l_p, diff);
    let y2 = bp.tape.mul(y, y);
    let maha = bp.tape.sum(y2);
    let half_lv = bp.tape.scale(logvar_q, 0.5);
    let sd_q = bp.tape.exp(half_lv);
    let lq = bp.tape.mul(sd_q, dyn_graph.eye);
    let w = bp.tape.tri_solve_lower(l_p, lq);
    let w2 = bp.tape.mul(w, w);
    let frob = bp.tape.sum(w2);
    let lp_diag_mat = bp.tape.mul(l_p, dyn_graph.eye);
    let diag_p = bp.tape.matmul(lp_diag_mat, dyn_graph.ones);
    let log_diag_p = bp.tape.log(diag_p);
    let logdet_p = bp.tape.sum(log_diag_p);
    let sum_lv = bp.tape.sum(logvar_q);
    let logdet_q = bp.tape.scale(sum_lv, 0.5);
    let quad = bp.tape.add(maha, frob);
    let dim = bp.tape.constant(&Array::scalar(d as f64));
    let quad_m = bp.tape.sub(quad, dim);
    let half = bp.tape.scale(quad_m, 0.5);
    let dets = bp.tape.sub(logdet_p, logdet_q);
    bp.tape.add(half, dets)
}

/// Reparameterized draw from the diagonal posterior.
fn sample_z<R: Rng>(
    bp: &mut BoundParams,
    mu: TensorId,
    logvar: TensorId,
    d: usize,
    rng: &mut R,
) -> TensorId {
    let eps: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let eps = bp.tape.constant(&Array::vector(eps));
    let half_lv = bp.tape.scale(logvar, 0.5);
    let sd = bp.tape.exp(half_lv);
    let noise = bp.tape.mul(sd, eps);
    bp.tape.add(mu, noise)
}

fn zero_scalar(bp: &mut BoundParams) -> TensorId {
    bp.tape.constant(&Array::scalar(0.0))
}

/// Categorical KL between tape log-probs and a constant row.
fn kl_cat_const_row(
    bp: &mut BoundParams,
    q: TensorId,
    log_q: TensorId,
    row: &[f64],
) -> TensorId {
    let log_row: Vec<f64> = row.iter().map(|p| p.ln()).collect();
    let log_p = bp.tape.constant(&Array::vector(log_row));
    let diff = bp.tape.sub(log_q, log_p);
    let prod = bp.tape.mul(q, diff);
    bp.tape.sum(prod)
}

/// Objective pieces shared by the tape flavors.
struct StoryGraph {
    emission: GruLmGraph,
    recog: RecognitionGraph,
    dyn_graph: DynGraph,
    z0: TensorId,
    sent_encs: Vec<TensorId>,
    ctx: Vec<TensorId>,
}

fn build_story_graph(model: &SldsModel, bp: &mut BoundParams, story: &Story) -> StoryGraph {
    assert!(model.config.kind.has_latent(), "latent-free model; use lm_loss");
    let emission = model.emission().bind(bp);
    let recog = RecognitionGraph::bind(model.recognition_dims(), bp);
    let dyn_graph = DynGraph::bind(bp, model.config.kind.states(), model.config.latent_dim);
    let z0 = bp.param(Z0);
    let (sent_encs, ctx) = recog.encode_story(bp, story);
    StoryGraph { emission, recog, dyn_graph, z0, sent_encs, ctx }
}

/// Training objective without labels. Returns the loss to minimize
/// (negative objective, KL terms scaled by `kl_weight`) and the
/// unweighted component report.
pub fn elbo_soft_loss<R: Rng>(
    model: &SldsModel,
    bp: &mut BoundParams,
    story: &Story,
    temperature: f64,
    kl_weight: f64,
    rng: &mut R,
) -> (TensorId, ElboReport) {
    let g = build_story_graph(model, bp, story);
    let switching = model.config.kind == ModelKind::Slds;
    let prior = model.prior();
    let k = model.config.kind.states();

    let mut recon_total = zero_scalar(bp);
    let mut kl_z_total = zero_scalar(bp);
    let mut kl_s_total = zero_scalar(bp);
    let mut z_prev = g.z0;
    let mut h_carry = g.emission.initial_hidden(bp);
    let mut w_prev: Option<TensorId> = None;

    for (i, sentence) in story.sentences.iter().enumerate() {
        // State relaxation.
        let (state_emb, weights) = if switching {
            let logits = g.recog.class_logits(bp, g.sent_encs[i]);
            let w = gumbel_softmax_on_tape(bp, logits, temperature, rng);
            let q = bp.tape.softmax(logits);
            let log_q = bp.tape.log_softmax(logits);
            let kl_s_i = match w_prev {
                None => kl_cat_const_row(bp, q, log_q, prior.initial()),
                Some(prev) => {
                    // Expected row under the previous soft weights:
                    // row = T^T w_prev, a tape value because w_prev is.
                    let tt = crate::linalg::transpose(prior.transition_matrix(), k, k);
                    let tt = bp.tape.constant(&Array::matrix(k, k, tt));
                    let row = bp.tape.matmul(tt, prev);
                    let log_row = bp.tape.log(row);
                    let diff = bp.tape.sub(log_q, log_row);
                    let prod = bp.tape.mul(q, diff);
                    bp.tape.sum(prod)
                }
            };
            kl_s_total = bp.tape.add(kl_s_total, kl_s_i);
            w_prev = Some(w);
            (Some(g.recog.state_embedding_soft(bp, w)), Some(w))
        } else {
            (None, None)
        };

        // Posterior, sample, dynamics KL.
        let (mu, logvar) = g.recog.posterior(bp, z_prev, state_emb, g.ctx[i], g.sent_encs[i]);
        let z_i = sample_z(bp, mu, logvar, g.dyn_graph.d, rng);
        let (mean_p, l_p) = match weights {
            Some(w) => g.dyn_graph.soft_prior(bp, w, z_prev),
            None => g.dyn_graph.hard_prior(bp, 0, z_prev),
        };
        let kl_z_i = kl_z_on_tape(bp, &g.dyn_graph, mu, logvar, mean_p, l_p);
        kl_z_total = bp.tape.add(kl_z_total, kl_z_i);

        // Reconstruction.
        let h_start = g.emission.start_sentence(bp, h_carry, Some(z_i));
        let (lp, carry) = g.emission.sentence_log_prob(bp, h_start, Some(z_i), strip_eos(sentence));
        recon_total = bp.tape.add(recon_total, lp);
        h_carry = carry;
        z_prev = z_i;
    }

    let kl = bp.tape.add(kl_z_total, kl_s_total);
    let kl_w = bp.tape.scale(kl, kl_weight);
    let obj = bp.tape.sub(recon_total, kl_w);
    let loss = bp.tape.neg(obj);

    let recon = bp.tape.value(recon_total)[0];
    let kl_z = bp.tape.value(kl_z_total)[0];
    let kl_s = bp.tape.value(kl_s_total)[0];
    let report = ElboReport {
        recon,
        kl_z,
        kl_s,
        supervision: 0.0,
        scaffold_log_prior: 0.0,
        elbo: recon - kl_z - kl_s,
        words: story.total_tokens(),
    };
    (loss, report)
}

/// Training objective with gold labels: hard gold states drive the
/// dynamics, no kl_s, plus the weighted classifier likelihood.
pub fn supervised_loss<R: Rng>(
    model: &SldsModel,
    bp: &mut BoundParams,
    story: &Story,
    labels: &[ScaffoldLabel],
    kl_weight: f64,
    supervision_weight: f64,
    rng: &mut R,
) -> (TensorId, ElboReport) {
    assert_eq!(model.config.kind, ModelKind::Slds, "supervision needs the switching model");
    assert_eq!(labels.len(), story.sentences.len(), "label count != sentence count");
    let g = build_story_graph(model, bp, story);
    let prior = model.prior();
    let gold: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let scaffold_log_prior = prior.log_prior(&gold);

    let mut recon_total = zero_scalar(bp);
    let mut kl_z_total = zero_scalar(bp);
    let mut sup_total = zero_scalar(bp);
    let mut z_prev = g.z0;
    let mut h_carry = g.emission.initial_hidden(bp);

    for (i, sentence) in story.sentences.iter().enumerate() {
        let s = gold[i];
        let logits = g.recog.class_logits(bp, g.sent_encs[i]);
        let log_q = bp.tape.log_softmax(logits);
        let picked = bp.tape.gather_rows(log_q, &[s]);
        sup_total = bp.tape.add(sup_total, picked);

        let state_emb = g.recog.state_embedding_hard(bp, s);
        let (mu, logvar) = g.recog.posterior(bp, z_prev, Some(state_emb), g.ctx[i], g.sent_encs[i]);
        let z_i = sample_z(bp, mu, logvar, g.dyn_graph.d, rng);
        let (mean_p, l_p) = g.dyn_graph.hard_prior(bp, s, z_prev);
        let kl_z_i = kl_z_on_tape(bp, &g.dyn_graph, mu, logvar, mean_p, l_p);
        kl_z_total = bp.tape.add(kl_z_total, kl_z_i);

        let h_start = g.emission.start_sentence(bp, h_carry, Some(z_i));
        let (lp, carry) = g.emission.sentence_log_prob(bp, h_start, Some(z_i), strip_eos(sentence));
        recon_total = bp.tape.add(recon_total, lp);
        h_carry = carry;
        z_prev = z_i;
    }

    let kl_w = bp.tape.scale(kl_z_total, kl_weight);
    let bound = bp.tape.sub(recon_total, kl_w);
    let sup_w = bp.tape.scale(sup_total, supervision_weight);
    let obj = bp.tape.add(bound, sup_w);
    let loss = bp.tape.neg(obj);

    let recon = bp.tape.value(recon_total)[0];
    let kl_z = bp.tape.value(kl_z_total)[0];
    let supervision = bp.tape.value(sup_total)[0];
    let report = ElboReport {
        recon,
        kl_z,
        kl_s: 0.0,
        supervision,
        scaffold_log_prior,
        elbo: recon - kl_z + scaffold_log_prior,
        words: story.total_tokens(),
    };
    (loss, report)
}

/// Plain language-model objective: exact log-likelihood, no bound.
pub fn lm_loss(model: &SldsModel, bp: &mut BoundParams, story: &Story) -> (TensorId, ElboReport) {
    assert_eq!(model.config.kind, ModelKind::Lm);
    let emission = model.emission().bind(bp);
    let mut h_carry = emission.initial_hidden(bp);
    let mut recon_total = zero_scalar(bp);
    for sentence in &story.sentences {
        let (lp, carry) = emission.sentence_log_prob(bp, h_carry, None, strip_eos(sentence));
        recon_total = bp.tape.add(recon_total, lp);
        h_carry = carry;
    }
    let loss = bp.tape.neg(recon_total);
    let recon = bp.tape.value(recon_total)[0];
    let report = ElboReport {
        recon,
        kl_z: 0.0,
        kl_s: 0.0,
        supervision: 0.0,
        scaffold_log_prior: 0.0,
        elbo: recon,
        words: story.total_tokens(),
    };
    (loss, report)
}

/// Evaluation bound on the plain path: states sampled from q(S), both
/// KL terms analytic given the sampled path (Rao-Blackwellized), so a
/// single draw is unbiased for the ELBO. For the plain LM this is the
/// exact log-likelihood.
pub fn elbo_hard<R: Rng>(model: &SldsModel, story: &Story, rng: &mut R) -> ElboReport {
    if model.config.kind == ModelKind::Lm {
        let em = model.emission();
        let ev = em.eval(&model.params);
        let mut h = ev.initial_hidden();
        let mut recon = 0.0;
        for sentence in &story.sentences {
            let (lp, carry) = ev.sentence_log_prob(&h, None, strip_eos(sentence));
            recon += lp;
            h = carry;
        }
        return ElboReport {
            recon,
            kl_z: 0.0,
            kl_s: 0.0,
            supervision: 0.0,
            scaffold_log_prior: 0.0,
            elbo: recon,
            words: story.total_tokens(),
        };
    }

    let switching = model.config.kind == ModelKind::Slds;
    let recog = RecognitionEval::new(model.recognition_dims(), &model.params);
    let em = model.emission();
    let ev = em.eval(&model.params);
    let dyn_set = model.dynamics();
    let prior = model.prior();
    let (sent_encs, ctx) = recog.encode_story(story);

    let mut recon = 0.0;
    let mut kl_z = 0.0;
    let mut kl_s = 0.0;
    let mut z_prev = model.z0().to_vec();
    let mut h_carry = ev.initial_hidden();
    let mut s_prev: Option<usize> = None;

    for (i, sentence) in story.sentences.iter().enumerate() {
        let s_i = if switching {
            let q = recog.classify(&sent_encs[i]);
            let row = match s_prev {
                None => prior.initial(),
                Some(sp) => prior.transition_row(sp),
            };
            kl_s += q
                .iter()
                .zip(row)
                .map(|(qi, pi)| if *qi > 0.0 { qi * (qi.ln() - pi.ln()) } else { 0.0 })
                .sum::<f64>();
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = q.len() - 1;
            for (j, qj) in q.iter().enumerate() {
                acc += qj;
                if u < acc {
                    pick = j;
                    break;
                }
            }
            s_prev = Some(pick);
            pick
        } else {
            0
        };

        let (mu, logvar) = recog.posterior(&z_prev, s_i, &ctx[i], &sent_encs[i]);
        let vars: Vec<f64> = logvar.iter().map(|lv| lv.exp()).collect();
        let q_gauss = Gaussian::diagonal(mu, &vars);
        let p_gauss = dyn_set.transition_distribution(s_i, &z_prev);
        kl_z += kl_divergence(&q_gauss, &p_gauss);
        let z_i = q_gauss.sample(rng);

        let h_start = ev.start_sentence(&h_carry, Some(&z_i));
        let (lp, carry) = ev.sentence_log_prob(&h_start, Some(&z_i), strip_eos(sentence));
        recon += lp;
        h_carry = carry;
        z_prev = z_i;
    }

    ElboReport {
        recon,
        kl_z,
        kl_s,
        supervision: 0.0,
        scaffold_log_prior: 0.0,
        elbo: recon - kl_z - kl_s,
        words: story.total_tokens(),
    }
}

/// q(S_i | X_i) per sentence, as probabilities. The interpolation
/// sampler uses these as semi-noisy scaffold tags.
pub fn classify_story(model: &SldsModel, story: &Story) -> Vec<Vec<f64>> {
    assert_eq!(model.config.kind, ModelKind::Slds);
    let recog = RecognitionEval::new(model.recognition_dims(), &model.params);
    story
        .sentences
        .iter()
        .map(|s| recog.classify(&recog.encode_sentence(s)))
        .collect()
}
