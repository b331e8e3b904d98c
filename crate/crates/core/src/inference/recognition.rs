//! Recognition networks for amortized inference.
//!
//! A sentence encoder GRU (reset per sentence) turns token ids into a
//! fixed vector; a context GRU runs over those vectors to summarize the
//! story prefix. The state classifier q(S_i | X_i) reads the sentence
//! encoding alone. The posterior q(Z_i | Z_{i-1}, S_i, X_{:i}, X_i) is a
//! one-hidden-layer MLP over [z_prev; state embedding; prefix context;
//! sentence encoding] producing a diagonal Gaussian as (mean, logvar).
//!
//! Heads are zero-initialized: the untrained classifier is uniform and
//! the untrained posterior is exactly N(0, I).
//!
//! Like the emission model there are two forward paths, a plain one and
//! a tape one, pinned together by tests.

use rand::Rng;

use crate::config::{ModelConfig, ModelKind};
use crate::corpus::{strip_eos, Story};
use crate::emission::{gru_step_plain, init_gru_params, GruCell};
use crate::linalg;
use crate::tensor::{Array, BoundParams, ParamStore, TensorId};

pub const EMBED: &str = "recog.embed";
pub const SENT_GRU: &str = "recog.sent_gru";
pub const CTX_GRU: &str = "recog.ctx_gru";
pub const CLASS_W: &str = "recog.class.w";
pub const CLASS_B: &str = "recog.class.b";
pub const STATE_EMBED: &str = "recog.state_embed";
pub const POST_W1: &str = "recog.post.w1";
pub const POST_B1: &str = "recog.post.b1";
pub const POST_W2: &str = "recog.post.w2";
pub const POST_B2: &str = "recog.post.b2";

/// Sizes of the recognition stack. `states >= 2` enables the classifier
/// and state embedding; a single-state model conditions the posterior on
/// nothing but the latent chain and text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecognitionDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub state_embed: usize,
    pub posterior_hidden: usize,
    pub latent: usize,
    pub states: usize,
}

impl RecognitionDims {
    pub fn from_config(cfg: &ModelConfig, vocab: usize) -> RecognitionDims {
        assert!(cfg.kind.has_latent(), "plain LM has no recognition stack");
        let classify = cfg.kind == ModelKind::Slds;
        RecognitionDims {
            vocab,
            embed: cfg.embed_dim,
            hidden: cfg.recog_hidden,
            state_embed: if classify { cfg.state_embed } else { 0 },
            posterior_hidden: cfg.posterior_hidden,
            latent: cfg.latent_dim,
            states: cfg.kind.states(),
        }
    }

    fn classifies(&self) -> bool {
        self.states >= 2
    }

    fn posterior_input(&self) -> usize {
        self.latent + self.state_embed + 2 * self.hidden
    }
}

pub fn init_params<R: Rng>(dims: &RecognitionDims, store: &mut ParamStore, rng: &mut R) {
    fn uniform<R: Rng>(rng: &mut R, n: usize, bound: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
    }
    store.insert(
        EMBED,
        Array::matrix(dims.vocab, dims.embed, uniform(rng, dims.vocab * dims.embed, 0.1)),
    );
    init_gru_params(store, SENT_GRU, dims.embed, dims.hidden, rng);
    init_gru_params(store, CTX_GRU, dims.hidden, dims.hidden, rng);
    if dims.classifies() {
        store.insert(
            CLASS_W,
            Array::matrix(dims.states, dims.hidden, vec![0.0; dims.states * dims.hidden]),
        );
        store.insert(CLASS_B, Array::vector(vec![0.0; dims.states]));
        store.insert(
            STATE_EMBED,
            Array::matrix(
                dims.states,
                dims.state_embed,
                uniform(rng, dims.states * dims.state_embed, 0.1),
            ),
        );
    }
    let pin = dims.posterior_input();
    let bound = 1.0 / (pin as f64).sqrt();
    store.insert(
        POST_W1,
        Array::matrix(
            dims.posterior_hidden,
            pin,
            uniform(rng, dims.posterior_hidden * pin, bound),
        ),
    );
    store.insert(POST_B1, Array::vector(vec![0.0; dims.posterior_hidden]));
    store.insert(
        POST_W2,
        Array::matrix(
            2 * dims.latent,
            dims.posterior_hidden,
            vec![0.0; 2 * dims.latent * dims.posterior_hidden],
        ),
    );
    store.insert(POST_B2, Array::vector(vec![0.0; 2 * dims.latent]));
}

// ── plain path ──

pub struct RecognitionEval<'p> {
    pub dims: RecognitionDims,
    embed: &'p [f64],
    sent_gru: [&'p [f64]; 4],
    ctx_gru: [&'p [f64]; 4],
    class: Option<(&'p [f64], &'p [f64])>,
    state_embed: Option<&'p [f64]>,
    w1: &'p [f64],
    b1: &'p [f64],
    w2: &'p [f64],
    b2: &'p [f64],
}

fn gru_slices<'p>(store: &'p ParamStore, prefix: &str) -> [&'p [f64]; 4] {
    [
        &store.get(&format!("{prefix}.w_ih")).data,
        &store.get(&format!("{prefix}.w_hh")).data,
        &store.get(&format!("{prefix}.b_ih")).data,
        &store.get(&format!("{prefix}.b_hh")).data,
    ]
}

impl<'p> RecognitionEval<'p> {
    pub fn new(dims: RecognitionDims, store: &'p ParamStore) -> RecognitionEval<'p> {
        RecognitionEval {
            dims,
            embed: &store.get(EMBED).data,
            sent_gru: gru_slices(store, SENT_GRU),
            ctx_gru: gru_slices(store, CTX_GRU),
            class: dims
                .classifies()
                .then(|| (store.get(CLASS_W).data.as_slice(), store.get(CLASS_B).data.as_slice())),
            state_embed: dims.classifies().then(|| store.get(STATE_EMBED).data.as_slice()),
            w1: &store.get(POST_W1).data,
            b1: &store.get(POST_B1).data,
            w2: &store.get(POST_W2).data,
            b2: &store.get(POST_B2).data,
        }
    }

    /// Final hidden of the sentence GRU over the tokens (trailing eos
    /// skipped), starting from zeros.
    pub fn encode_sentence(&self, sentence: &[usize]) -> Vec<f64> {
        let d = &self.dims;
        let mut h = vec![0.0; d.hidden];
        for &tok in strip_eos(sentence) {
            assert!(tok < d.vocab, "token {tok} out of vocab {}", d.vocab);
            let x = &self.embed[tok * d.embed..(tok + 1) * d.embed];
            h = gru_step_plain(
                self.sent_gru[0],
                self.sent_gru[1],
                self.sent_gru[2],
                self.sent_gru[3],
                d.hidden,
                d.embed,
                x,
                &h,
            );
        }
        h
    }

    /// Sentence encodings plus the prefix context before each sentence:
    /// `ctx[i]` summarizes sentences `0..i`, so `ctx[0]` is zeros.
    pub fn encode_story(&self, story: &Story) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.encode_sentences(&story.sentences)
    }

    pub fn encode_sentences(&self, sentences: &[Vec<usize>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let sent_encs: Vec<Vec<f64>> =
            sentences.iter().map(|s| self.encode_sentence(s)).collect();
        let mut ctx = Vec::with_capacity(sent_encs.len());
        let mut h = vec![0.0; self.dims.hidden];
        for enc in &sent_encs {
            ctx.push(h.clone());
            h = self.ctx_step(&h, enc);
        }
        (sent_encs, ctx)
    }

    /// One context-GRU step: fold `sent_enc` into the running prefix
    /// summary `h`.
    pub fn ctx_step(&self, h: &[f64], sent_enc: &[f64]) -> Vec<f64> {
        let d = &self.dims;
        gru_step_plain(
            self.ctx_gru[0],
            self.ctx_gru[1],
            self.ctx_gru[2],
            self.ctx_gru[3],
            d.hidden,
            d.hidden,
            sent_enc,
            h,
        )
    }

    /// q(S | sentence) as probabilities.
    pub fn classify(&self, sent_enc: &[f64]) -> Vec<f64> {
        let (w, b) = self.class.expect("single-state model has no classifier");
        let mut logits = linalg::matvec(w, sent_enc, self.dims.states, self.dims.hidden);
        for (l, bb) in logits.iter_mut().zip(b) {
            *l += bb;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    /// Posterior mean and log-variance for sentence i given the previous
    /// latent and a hard state (ignored by single-state models).
    pub fn posterior(
        &self,
        z_prev: &[f64],
        state: usize,
        ctx_prev: &[f64],
        sent_enc: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let d = &self.dims;
        assert_eq!(z_prev.len(), d.latent);
        let mut input = Vec::with_capacity(d.posterior_input());
        input.extend_from_slice(z_prev);
        if let Some(table) = self.state_embed {
            assert!(state < d.states);
            input.extend_from_slice(&table[state * d.state_embed..(state + 1) * d.state_embed]);
        }
        input.extend_from_slice(ctx_prev);
        input.extend_from_slice(sent_enc);
        let mut h = linalg::matvec(self.w1, &input, d.posterior_hidden, d.posterior_input());
        for (v, b) in h.iter_mut().zip(self.b1) {
            *v = (*v + b).tanh();
        }
        let mut out = linalg::matvec(self.w2, &h, 2 * d.latent, d.posterior_hidden);
        for (v, b) in out.iter_mut().zip(self.b2) {
            *v += b;
        }
        let logvar = out.split_off(d.latent);
        (out, logvar)
    }
}

// ── tape path ──

pub struct RecognitionGraph {
    pub dims: RecognitionDims,
    embed: TensorId,
    sent_cell: GruCell,
    ctx_cell: GruCell,
    class: Option<(TensorId, TensorId)>,
    state_embed: Option<TensorId>,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

impl RecognitionGraph {
    pub fn bind(dims: RecognitionDims, bp: &mut BoundParams) -> RecognitionGraph {
        RecognitionGraph {
            dims,
            embed: bp.param(EMBED),
            sent_cell: GruCell::bind(bp, SENT_GRU, dims.embed, dims.hidden),
            ctx_cell: GruCell::bind(bp, CTX_GRU, dims.hidden, dims.hidden),
            class: dims.classifies().then(|| (bp.param(CLASS_W), bp.param(CLASS_B))),
            state_embed: dims.classifies().then(|| bp.param(STATE_EMBED)),
            w1: bp.param(POST_W1),
            b1: bp.param(POST_B1),
            w2: bp.param(POST_W2),
            b2: bp.param(POST_B2),
        }
    }

    fn zeros(&self, bp: &mut BoundParams) -> TensorId {
        bp.tape.constant(&Array::vector(vec![0.0; self.dims.hidden]))
    }

    pub fn encode_sentence(&self, bp: &mut BoundParams, sentence: &[usize]) -> TensorId {
        let mut h = self.zeros(bp);
        for &tok in strip_eos(sentence) {
            let row = bp.tape.gather_rows(self.embed, &[tok]);
            let x = bp.tape.transpose(row);
            h = self.sent_cell.step(bp, h, x);
        }
        h
    }

    pub fn encode_story(
        &self,
        bp: &mut BoundParams,
        story: &Story,
    ) -> (Vec<TensorId>, Vec<TensorId>) {
        let sent_encs: Vec<TensorId> = story
            .sentences
            .iter()
            .map(|s| self.encode_sentence(bp, s))
            .collect();
        let mut ctx = Vec::with_capacity(sent_encs.len());
        let mut h = self.zeros(bp);
        for &enc in &sent_encs {
            ctx.push(h);
            h = self.ctx_cell.step(bp, h, enc);
        }
        (sent_encs, ctx)
    }

    /// Classifier logits; softmax or log-softmax applied by the caller.
    pub fn class_logits(&self, bp: &mut BoundParams, sent_enc: TensorId) -> TensorId {
        let (w, b) = self.class.expect("single-state model has no classifier");
        let wx = bp.tape.matmul(w, sent_enc);
        bp.tape.add(wx, b)
    }

    pub fn state_embedding_hard(&self, bp: &mut BoundParams, state: usize) -> TensorId {
        let table = self.state_embed.expect("single-state model has no state embedding");
        let row = bp.tape.gather_rows(table, &[state]);
        bp.tape.transpose(row)
    }

    /// Convex mix of state embeddings under simplex weights [K, 1].
    pub fn state_embedding_soft(&self, bp: &mut BoundParams, weights: TensorId) -> TensorId {
        let table = self.state_embed.expect("single-state model has no state embedding");
        let tt = bp.tape.transpose(table);
        bp.tape.matmul(tt, weights)
    }

    pub fn posterior(
        &self,
        bp: &mut BoundParams,
        z_prev: TensorId,
        state_emb: Option<TensorId>,
        ctx_prev: TensorId,
        sent_enc: TensorId,
    ) -> (TensorId, TensorId) {
        let mut parts = vec![z_prev];
        match (self.state_embed.is_some(), state_emb) {
            (true, Some(e)) => parts.push(e),
            (false, None) => {}
            _ => panic!("state embedding presence must match the model"),
        }
        parts.push(ctx_prev);
        parts.push(sent_enc);
        let input = bp.tape.concat_rows(&parts);
        let pre = bp.tape.matmul(self.w1, input);
        let pre_b = bp.tape.add(pre, self.b1);
        let h = bp.tape.tanh(pre_b);
        let out = bp.tape.matmul(self.w2, h);
        let out_b = bp.tape.add(out, self.b2);
        let mu = bp.tape.slice_rows(out_b, 0, self.dims.latent);
        let logvar = bp.tape.slice_rows(out_b, self.dims.latent, self.dims.latent);
        (mu, logvar)
    }
}
