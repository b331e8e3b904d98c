//! Emission models.
//!
//! The text emission is a single-layer GRU language model conditioned on
//! the sentence latent two ways at once: the latent is projected into the
//! hidden state at the start of each sentence, and concatenated onto
//! every token embedding. The hidden state carries across sentence
//! boundaries so sentence i sees a summary of sentences < i. With
//! `latent == 0` the same module is an unconditional story LM.
//!
//! Token conventions: `<bos>` starts every sentence as the first input,
//! `<eos>` is always the final target and never an input; the hidden
//! carried to the next sentence is the one after consuming the last real
//! token.
//!
//! There are two forward paths: a plain one over `&[f64]` for decoding,
//! scoring, and Gibbs sweeps, and a tape path for training. Tests pin
//! them to identical values.

use rand::Rng;

use crate::corpus::{BOS_ID, EOS_ID};
use crate::gaussian::{gibbs_z_conditional, Gaussian};
use crate::linalg;
use crate::tensor::{Array, BoundParams, ParamStore, TensorId};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax_plain(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln() + mx;
    logits.iter().map(|l| l - lse).collect()
}

/// One GRU step on plain slices. Combined weights follow the usual
/// layout: rows [0,h) reset gate, [h,2h) update gate, [2h,3h) candidate.
pub fn gru_step_plain(
    w_ih: &[f64],
    w_hh: &[f64],
    b_ih: &[f64],
    b_hh: &[f64],
    hidden: usize,
    input: usize,
    x: &[f64],
    h: &[f64],
) -> Vec<f64> {
    assert_eq!(x.len(), input);
    assert_eq!(h.len(), hidden);
    let mut gx = linalg::matvec(w_ih, x, 3 * hidden, input);
    for (g, b) in gx.iter_mut().zip(b_ih) {
        *g += b;
    }
    let mut gh = linalg::matvec(w_hh, h, 3 * hidden, hidden);
    for (g, b) in gh.iter_mut().zip(b_hh) {
        *g += b;
    }
    let mut out = vec![0.0; hidden];
    for j in 0..hidden {
        let r = sigmoid(gx[j] + gh[j]);
        let z = sigmoid(gx[hidden + j] + gh[hidden + j]);
        let n = (gx[2 * hidden + j] + r * gh[2 * hidden + j]).tanh();
        out[j] = n + z * (h[j] - n);
    }
    out
}

/// GRU parameters bound onto a tape, reusable by any module that owns a
/// recurrent encoder.
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w_ih: TensorId,
    w_hh: TensorId,
    b_ih: TensorId,
    b_hh: TensorId,
}

/// Registers GRU parameters under `prefix.{w_ih,w_hh,b_ih,b_hh}` with
/// uniform(-1/sqrt(hidden), ..) weights and zero biases.
pub fn init_gru_params<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) {
    let bound = 1.0 / (hidden as f64).sqrt();
    let mut uniform = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
    };
    let w_ih = uniform(3 * hidden * input);
    store.insert(format!("{prefix}.w_ih"), Array::matrix(3 * hidden, input, w_ih));
    let w_hh = uniform(3 * hidden * hidden);
    store.insert(format!("{prefix}.w_hh"), Array::matrix(3 * hidden, hidden, w_hh));
    store.insert(format!("{prefix}.b_ih"), Array::vector(vec![0.0; 3 * hidden]));
    store.insert(format!("{prefix}.b_hh"), Array::vector(vec![0.0; 3 * hidden]));
}

impl GruCell {
    pub fn bind(bp: &mut BoundParams, prefix: &str, input: usize, hidden: usize) -> GruCell {
        let cell = GruCell {
            input,
            hidden,
            w_ih: bp.param(&format!("{prefix}.w_ih")),
            w_hh: bp.param(&format!("{prefix}.w_hh")),
            b_ih: bp.param(&format!("{prefix}.b_ih")),
            b_hh: bp.param(&format!("{prefix}.b_hh")),
        };
        assert_eq!(bp.tape.dims(cell.w_ih), (3 * hidden, input));
        assert_eq!(bp.tape.dims(cell.w_hh), (3 * hidden, hidden));
        cell
    }

    pub fn step(&self, bp: &mut BoundParams, h: TensorId, x: TensorId) -> TensorId {
        let h_dim = self.hidden;
        let gx0 = bp.tape.matmul(self.w_ih, x);
        let gx = bp.tape.add(gx0, self.b_ih);
        let gh0 = bp.tape.matmul(self.w_hh, h);
        let gh = bp.tape.add(gh0, self.b_hh);
        let rx = bp.tape.slice_rows(gx, 0, h_dim);
        let rh = bp.tape.slice_rows(gh, 0, h_dim);
        let r_pre = bp.tape.add(rx, rh);
        let r = bp.tape.sigmoid(r_pre);
        let zx = bp.tape.slice_rows(gx, h_dim, h_dim);
        let zh = bp.tape.slice_rows(gh, h_dim, h_dim);
        let z_pre = bp.tape.add(zx, zh);
        let z = bp.tape.sigmoid(z_pre);
        let nx = bp.tape.slice_rows(gx, 2 * h_dim, h_dim);
        let nh = bp.tape.slice_rows(gh, 2 * h_dim, h_dim);
        let rn = bp.tape.mul(r, nh);
        let n_pre = bp.tape.add(nx, rn);
        let n = bp.tape.tanh(n_pre);
        let hm = bp.tape.sub(h, n);
        let zh2 = bp.tape.mul(z, hm);
        bp.tape.add(n, zh2)
    }
}

/// Dimensions of the GRU language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruLm {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Latent dimension injected into the decoder; 0 disables
    /// conditioning entirely (plain LM).
    pub latent: usize,
}

pub const EMBED: &str = "emission.embed";
pub const GRU_PREFIX: &str = "emission.gru";
pub const Z_PROJ: &str = "emission.z_proj";
pub const HEAD_W: &str = "emission.head.w";
pub const HEAD_B: &str = "emission.head.b";

impl GruLm {
    /// Registers all emission parameters. The output head starts at zero
    /// so an untrained model is exactly the uniform distribution over
    /// the vocabulary.
    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let embed: Vec<f64> = (0..self.vocab * self.embed)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        store.insert(EMBED, Array::matrix(self.vocab, self.embed, embed));
        init_gru_params(store, GRU_PREFIX, self.embed + self.latent, self.hidden, rng);
        if self.latent > 0 {
            store.insert(
                Z_PROJ,
                Array::matrix(self.hidden, self.latent, vec![0.0; self.hidden * self.latent]),
            );
        }
        store.insert(HEAD_W, Array::matrix(self.vocab, self.hidden, vec![0.0; self.vocab * self.hidden]));
        store.insert(HEAD_B, Array::vector(vec![0.0; self.vocab]));
    }

    pub fn eval<'p>(&self, store: &'p ParamStore) -> GruLmEval<'p> {
        let embed = store.get(EMBED);
        assert_eq!(embed.dims2(), (self.vocab, self.embed));
        let w_ih = store.get(&format!("{GRU_PREFIX}.w_ih"));
        let w_hh = store.get(&format!("{GRU_PREFIX}.w_hh"));
        let b_ih = store.get(&format!("{GRU_PREFIX}.b_ih"));
        let b_hh = store.get(&format!("{GRU_PREFIX}.b_hh"));
        let z_proj = if self.latent > 0 {
            Some(store.get(Z_PROJ).data.as_slice())
        } else {
            None
        };
        let head_w = store.get(HEAD_W);
        assert_eq!(head_w.dims2(), (self.vocab, self.hidden));
        GruLmEval {
            dims: *self,
            embed: &embed.data,
            w_ih: &w_ih.data,
            w_hh: &w_hh.data,
            b_ih: &b_ih.data,
            b_hh: &b_hh.data,
            z_proj,
            head_w: &head_w.data,
            head_b: &store.get(HEAD_B).data,
        }
    }

    pub fn bind(&self, bp: &mut BoundParams) -> GruLmGraph {
        let embed = bp.param(EMBED);
        let cell = GruCell::bind(bp, GRU_PREFIX, self.embed + self.latent, self.hidden);
        let z_proj = if self.latent > 0 { Some(bp.param(Z_PROJ)) } else { None };
        GruLmGraph {
            dims: *self,
            embed,
            cell,
            z_proj,
            head_w: bp.param(HEAD_W),
            head_b: bp.param(HEAD_B),
        }
    }
}

/// Plain-value forward pass borrowing the parameter store.
pub struct GruLmEval<'p> {
    pub dims: GruLm,
    embed: &'p [f64],
    w_ih: &'p [f64],
    w_hh: &'p [f64],
    b_ih: &'p [f64],
    b_hh: &'p [f64],
    z_proj: Option<&'p [f64]>,
    head_w: &'p [f64],
    head_b: &'p [f64],
}

impl<'p> GruLmEval<'p> {
    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.dims.hidden]
    }

    /// Hidden state opening a sentence: the carried hidden plus the
    /// latent projection.
    pub fn start_sentence(&self, h_carry: &[f64], z: Option<&[f64]>) -> Vec<f64> {
        assert_eq!(h_carry.len(), self.dims.hidden);
        match (self.z_proj, z) {
            (Some(proj), Some(z)) => {
                assert_eq!(z.len(), self.dims.latent);
                let inj = linalg::matvec(proj, z, self.dims.hidden, self.dims.latent);
                h_carry.iter().zip(&inj).map(|(a, b)| a + b).collect()
            }
            (None, None) => h_carry.to_vec(),
            _ => panic!("latent conditioning mismatch: model latent = {}", self.dims.latent),
        }
    }

    fn input_vec(&self, token: usize, z: Option<&[f64]>) -> Vec<f64> {
        assert!(token < self.dims.vocab, "token {token} out of vocab {}", self.dims.vocab);
        let e = self.dims.embed;
        let mut x = Vec::with_capacity(e + self.dims.latent);
        x.extend_from_slice(&self.embed[token * e..(token + 1) * e]);
        if let Some(z) = z {
            x.extend_from_slice(z);
        }
        x
    }

    /// Consumes one input token, returns next-token log probabilities
    /// and the new hidden state.
    pub fn step(&self, h: &[f64], input: usize, z: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let x = self.input_vec(input, z);
        let h_new = gru_step_plain(
            self.w_ih,
            self.w_hh,
            self.b_ih,
            self.b_hh,
            self.dims.hidden,
            self.dims.embed + self.dims.latent,
            &x,
            h,
        );
        let mut logits = linalg::matvec(self.head_w, &h_new, self.dims.vocab, self.dims.hidden);
        for (l, b) in logits.iter_mut().zip(self.head_b) {
            *l += b;
        }
        (log_softmax_plain(&logits), h_new)
    }

    /// log P(tokens, eos | h_start, z) plus the hidden to carry forward.
    /// `tokens` excludes bos and eos.
    pub fn sentence_log_prob(
        &self,
        h_start: &[f64],
        z: Option<&[f64]>,
        tokens: &[usize],
    ) -> (f64, Vec<f64>) {
        let mut h = h_start.to_vec();
        let mut lp = 0.0;
        let mut input = BOS_ID;
        for j in 0..=tokens.len() {
            let (logp, h_new) = self.step(&h, input, z);
            let target = if j < tokens.len() { tokens[j] } else { EOS_ID };
            lp += logp[target];
            h = h_new;
            if j < tokens.len() {
                input = tokens[j];
            }
        }
        (lp, h)
    }

    /// Greedy decode until eos or `max_len` real tokens. Ties resolve to
    /// the lowest token id. Returns the tokens (eos excluded) and the
    /// hidden after the last real token.
    pub fn decode_greedy(
        &self,
        h_start: &[f64],
        z: Option<&[f64]>,
        max_len: usize,
    ) -> (Vec<usize>, Vec<f64>) {
        self.decode_with(h_start, z, max_len, |logp| {
            let mut best = 0;
            for (i, v) in logp.iter().enumerate() {
                if *v > logp[best] {
                    best = i;
                }
            }
            best
        })
    }

    /// Top-k sampling: keep the k most probable tokens (probability
    /// descending, id ascending on ties), renormalize, draw.
    pub fn decode_topk<R: Rng>(
        &self,
        h_start: &[f64],
        z: Option<&[f64]>,
        max_len: usize,
        k: usize,
        rng: &mut R,
    ) -> (Vec<usize>, Vec<f64>) {
        assert!(k >= 1);
        self.decode_with(h_start, z, max_len, |logp| {
            let mut order: Vec<usize> = (0..logp.len()).collect();
            order.sort_by(|&a, &b| {
                logp[b].partial_cmp(&logp[a]).unwrap().then(a.cmp(&b))
            });
            order.truncate(k.min(logp.len()));
            let probs: Vec<f64> = order.iter().map(|&i| logp[i].exp()).collect();
            let total: f64 = probs.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for (idx, p) in order.iter().zip(&probs) {
                u -= p;
                if u <= 0.0 {
                    return *idx;
                }
            }
            *order.last().unwrap()
        })
    }

    fn decode_with<F: FnMut(&[f64]) -> usize>(
        &self,
        h_start: &[f64],
        z: Option<&[f64]>,
        max_len: usize,
        mut pick: F,
    ) -> (Vec<usize>, Vec<f64>) {
        let mut h = h_start.to_vec();
        let mut tokens = Vec::new();
        let mut input = BOS_ID;
        loop {
            let (logp, h_new) = self.step(&h, input, z);
            h = h_new;
            if tokens.len() == max_len {
                break;
            }
            let t = pick(&logp);
            if t == EOS_ID {
                break;
            }
            tokens.push(t);
            input = t;
        }
        (tokens, h)
    }
}

/// Tape forward pass for training.
pub struct GruLmGraph {
    pub dims: GruLm,
    embed: TensorId,
    cell: GruCell,
    z_proj: Option<TensorId>,
    head_w: TensorId,
    head_b: TensorId,
}

impl GruLmGraph {
    pub fn initial_hidden(&self, bp: &mut BoundParams) -> TensorId {
        bp.tape.constant(&Array::vector(vec![0.0; self.dims.hidden]))
    }

    pub fn start_sentence(
        &self,
        bp: &mut BoundParams,
        h_carry: TensorId,
        z: Option<TensorId>,
    ) -> TensorId {
        match (self.z_proj, z) {
            (Some(proj), Some(z)) => {
                let inj = bp.tape.matmul(proj, z);
                bp.tape.add(h_carry, inj)
            }
            (None, None) => h_carry,
            _ => panic!("latent conditioning mismatch: model latent = {}", self.dims.latent),
        }
    }

    fn input_vec(&self, bp: &mut BoundParams, token: usize, z: Option<TensorId>) -> TensorId {
        let row = bp.tape.gather_rows(self.embed, &[token]);
        let col = bp.tape.transpose(row);
        match z {
            Some(z) => bp.tape.concat_rows(&[col, z]),
            None => col,
        }
    }

    /// Tape version of [`GruLmEval::sentence_log_prob`]: scalar log prob
    /// and the carried hidden.
    pub fn sentence_log_prob(
        &self,
        bp: &mut BoundParams,
        h_start: TensorId,
        z: Option<TensorId>,
        tokens: &[usize],
    ) -> (TensorId, TensorId) {
        let mut h = h_start;
        let mut total = bp.tape.constant(&Array::scalar(0.0));
        let mut input = BOS_ID;
        for j in 0..=tokens.len() {
            let x = self.input_vec(bp, input, z);
            h = self.cell.step(bp, h, x);
            let logits0 = bp.tape.matmul(self.head_w, h);
            let logits = bp.tape.add(logits0, self.head_b);
            let logp = bp.tape.log_softmax(logits);
            let target = if j < tokens.len() { tokens[j] } else { EOS_ID };
            let picked = bp.tape.gather_rows(logp, &[target]);
            total = bp.tape.add(total, picked);
            if j < tokens.len() {
                input = tokens[j];
            }
        }
        (total, h)
    }
}

/// Continuous linear-Gaussian observation head: X = C Z + noise, with a
/// fixed lower-triangular noise factor. Used by the vector-observation
/// variant of the model.
#[derive(Debug, Clone)]
pub struct LinearGaussianEmission {
    pub obs: usize,
    pub d: usize,
    pub c: Vec<f64>,
    pub noise_factor: Vec<f64>,
}

impl LinearGaussianEmission {
    pub fn new(obs: usize, d: usize, c: Vec<f64>, noise_factor: Vec<f64>) -> LinearGaussianEmission {
        assert_eq!(c.len(), obs * d);
        assert_eq!(noise_factor.len(), obs * obs);
        LinearGaussianEmission { obs, d, c, noise_factor }
    }

    pub fn predict(&self, z: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.c, z, self.obs, self.d)
    }

    pub fn log_prob(&self, z: &[f64], x: &[f64]) -> f64 {
        Gaussian::new(self.predict(z), self.noise_factor.clone()).log_pdf(x)
    }

    /// d log N(x; Cz, R) / dz = C^T R^{-1} (x - C z).
    pub fn grad_z(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let pred = self.predict(z);
        let r: Vec<f64> = x.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let y = linalg::solve_lower(&self.noise_factor, &r, self.obs);
        let w = linalg::solve_lower_transpose(&self.noise_factor, &y, self.obs);
        let ct = linalg::transpose(&self.c, self.obs, self.d);
        linalg::matvec(&ct, &w, self.d, self.obs)
    }

    /// Exact posterior over z given x and a Gaussian prior.
    pub fn posterior(&self, prior: &Gaussian, x: &[f64]) -> Gaussian {
        gibbs_z_conditional(&self.c, &self.noise_factor, x, prior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use crate::tensor::gradcheck;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const V: usize = 6;

    fn dims(latent: usize) -> GruLm {
        GruLm { vocab: V, embed: 3, hidden: 4, latent }
    }

    fn randomized_store(latent: usize, seed: u64, random_head: bool) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        dims(latent).init_params(&mut store, &mut rng);
        if random_head {
            let head: Vec<f64> = (0..V * 4).map(|_| rng.gen_range(-0.8..0.8)).collect();
            store.replace(HEAD_W, Array::matrix(V, 4, head));
            let bias: Vec<f64> = (0..V).map(|_| rng.gen_range(-0.5..0.5)).collect();
            store.replace(HEAD_B, Array::vector(bias));
            if latent > 0 {
                let proj: Vec<f64> = (0..4 * latent).map(|_| rng.gen_range(-0.5..0.5)).collect();
                store.replace(Z_PROJ, Array::matrix(4, latent, proj));
            }
        }
        store
    }

    #[test]
    fn zero_head_is_exactly_uniform() {
        let store = randomized_store(2, 7, false);
        let model = dims(2);
        let ev = model.eval(&store);
        let h0 = ev.initial_hidden();
        let z = vec![0.4, -1.0];
        let hs = ev.start_sentence(&h0, Some(&z));
        let (lp, _) = ev.sentence_log_prob(&hs, Some(&z), &[4, 5, 4]);
        assert_abs_diff_eq!(lp, 4.0 * (1.0 / V as f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn next_token_distributions_normalize() {
        let store = randomized_store(2, 11, true);
        let ev = dims(2).eval(&store);
        let z = vec![0.3, 0.9];
        let hs = ev.start_sentence(&ev.initial_hidden(), Some(&z));
        // Chain over the first two emitted symbols: total mass 1.
        let (lp0, h1) = ev.step(&hs, BOS_ID, Some(&z));
        let mut total = 0.0;
        for y0 in 0..V {
            let (lp1, _) = ev.step(&h1, y0, Some(&z));
            for y1 in 0..V {
                total += (lp0[y0] + lp1[y1]).exp();
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sentence_log_prob_matches_manual_steps() {
        let store = randomized_store(2, 13, true);
        let ev = dims(2).eval(&store);
        let z = vec![-0.5, 0.2];
        let hs = ev.start_sentence(&ev.initial_hidden(), Some(&z));
        let tokens = [5, 4];
        let (lp, carry) = ev.sentence_log_prob(&hs, Some(&z), &tokens);
        let (l0, h1) = ev.step(&hs, BOS_ID, Some(&z));
        let (l1, h2) = ev.step(&h1, 5, Some(&z));
        let (l2, h3) = ev.step(&h2, 4, Some(&z));
        assert_abs_diff_eq!(lp, l0[5] + l1[4] + l2[EOS_ID], epsilon = 1e-12);
        assert_eq!(carry, h3);
    }

    #[test]
    fn greedy_ties_pick_lowest_id() {
        // Zero head: every step uniform, so greedy must emit token 0
        // until the length cap.
        let store = randomized_store(0, 3, false);
        let ev = dims(0).eval(&store);
        let (tokens, _) = ev.decode_greedy(&ev.initial_hidden(), None, 4);
        assert_eq!(tokens, vec![0, 0, 0, 0]);
    }

    #[test]
    fn topk_one_equals_greedy() {
        let store = randomized_store(2, 17, true);
        let ev = dims(2).eval(&store);
        let z = vec![1.0, -0.3];
        let hs = ev.start_sentence(&ev.initial_hidden(), Some(&z));
        let (greedy, _) = ev.decode_greedy(&hs, Some(&z), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (top1, _) = ev.decode_topk(&hs, Some(&z), 8, 1, &mut rng);
        assert_eq!(greedy, top1);
    }

    #[test]
    fn topk_first_token_frequencies_match_renormalized_probs() {
        let store = randomized_store(2, 19, true);
        let ev = dims(2).eval(&store);
        let z = vec![0.0, 0.6];
        let hs = ev.start_sentence(&ev.initial_hidden(), Some(&z));
        let (logp, _) = ev.step(&hs, BOS_ID, Some(&z));
        let mut order: Vec<usize> = (0..V).collect();
        order.sort_by(|&a, &b| logp[b].partial_cmp(&logp[a]).unwrap().then(a.cmp(&b)));
        order.truncate(2);
        let mass: f64 = order.iter().map(|&i| logp[i].exp()).sum();
        let mut rng = seeding::stream(5, "test.topk", 0);
        let n = 40_000;
        let mut counts = vec![0usize; V];
        for _ in 0..n {
            let (toks, _) = ev.decode_topk(&hs, Some(&z), 1, 2, &mut rng);
            let first = if toks.is_empty() { EOS_ID } else { toks[0] };
            counts[first] += 1;
        }
        for &i in &order {
            let p = logp[i].exp() / mass;
            let freq = counts[i] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se + 1e-9, "token {i}: freq {freq} vs p {p}");
        }
        for i in 0..V {
            if !order.contains(&i) {
                assert_eq!(counts[i], 0, "token {i} outside top-k was sampled");
            }
        }
    }

    #[test]
    fn carry_and_latent_both_condition_the_next_sentence() {
        let store = randomized_store(2, 23, true);
        let ev = dims(2).eval(&store);
        let z = vec![0.5, -0.5];
        let hs = ev.start_sentence(&ev.initial_hidden(), Some(&z));
        let (_, carry_a) = ev.sentence_log_prob(&hs, Some(&z), &[4]);
        let (_, carry_b) = ev.sentence_log_prob(&hs, Some(&z), &[5, 5]);
        let next = [4, 4];
        let (lp_a, _) = ev.sentence_log_prob(&ev.start_sentence(&carry_a, Some(&z)), Some(&z), &next);
        let (lp_b, _) = ev.sentence_log_prob(&ev.start_sentence(&carry_b, Some(&z)), Some(&z), &next);
        assert!((lp_a - lp_b).abs() > 1e-9, "carry had no effect");
        let z2 = vec![-1.5, 1.5];
        let (lp_c, _) = ev.sentence_log_prob(&ev.start_sentence(&carry_a, Some(&z2)), Some(&z2), &next);
        assert!((lp_a - lp_c).abs() > 1e-9, "latent had no effect");
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let store = randomized_store(2, 29, true);
        let model = dims(2);
        let ev = model.eval(&store);
        let z = vec![0.7, 0.1];
        let hs = ev.start_sentence(&ev.initial_hidden(), Some(&z));
        let (lp_plain, carry_plain) = ev.sentence_log_prob(&hs, Some(&z), &[3, 5, 0]);

        let mut bp = BoundParams::new(&store, false);
        let graph = model.bind(&mut bp);
        let h0 = graph.initial_hidden(&mut bp);
        let z_id = bp.tape.constant(&Array::vector(z.clone()));
        let hs_id = graph.start_sentence(&mut bp, h0, Some(z_id));
        let (lp_id, carry_id) = graph.sentence_log_prob(&mut bp, hs_id, Some(z_id), &[3, 5, 0]);
        assert_abs_diff_eq!(bp.tape.value(lp_id)[0], lp_plain, epsilon = 1e-12);
        for (a, b) in bp.tape.value(carry_id).iter().zip(&carry_plain) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let model = dims(2);
        let tokens = [4, 2 + 3]; // arbitrary in-vocab ids
        let z = vec![0.4, -0.9];
        let loss_at = |store: &ParamStore| -> f64 {
            let mut bp = BoundParams::new(store, true);
            let graph = model.bind(&mut bp);
            let h0 = graph.initial_hidden(&mut bp);
            let z_id = bp.tape.constant(&Array::vector(z.clone()));
            let hs = graph.start_sentence(&mut bp, h0, Some(z_id));
            let (lp, _) = graph.sentence_log_prob(&mut bp, hs, Some(z_id), &tokens);
            -bp.tape.value(lp)[0]
        };
        let base = randomized_store(2, 31, true);
        let mut bp = BoundParams::new(&base, true);
        let graph = model.bind(&mut bp);
        let h0 = graph.initial_hidden(&mut bp);
        let z_id = bp.tape.constant(&Array::vector(z.clone()));
        let hs = graph.start_sentence(&mut bp, h0, Some(z_id));
        let (lp, _) = graph.sentence_log_prob(&mut bp, hs, Some(z_id), &tokens);
        let loss = bp.tape.neg(lp);
        bp.tape.backward(loss);
        let grads = bp.grads();
        for name in ["emission.gru.w_ih", "emission.gru.w_hh", Z_PROJ, HEAD_W, EMBED] {
            let grad = grads.get(name).unwrap_or_else(|| panic!("no grad for {name}"));
            let x0 = base.get(name).data.clone();
            let shape = base.get(name).shape.clone();
            let f = |x: &[f64]| -> f64 {
                let mut store = base.clone();
                store.replace(name, Array::new(shape.clone(), x.to_vec()));
                loss_at(&store)
            };
            let fd = gradcheck::central_diff(&f, &x0, 1e-5);
            let err = gradcheck::max_rel_err(grad, &fd);
            assert!(err < 1e-4, "{name}: max rel err {err}");
        }
    }

    #[test]
    fn linear_gaussian_log_prob_and_grad() {
        let em = LinearGaussianEmission::new(
            2,
            3,
            vec![1.0, 0.0, 0.5, -0.3, 2.0, 0.0],
            vec![0.8, 0.0, 0.2, 0.6],
        );
        let z = vec![0.4, -1.2, 0.9];
        let x = vec![1.0, -0.5];
        let lp = em.log_prob(&z, &x);
        let g = Gaussian::new(em.predict(&z), em.noise_factor.clone());
        assert_abs_diff_eq!(lp, g.log_pdf(&x), epsilon = 1e-12);

        let grad = em.grad_z(&z, &x);
        let f = |zz: &[f64]| em.log_prob(zz, &x);
        let fd = gradcheck::central_diff(&f, &z, 1e-6);
        for (a, b) in grad.iter().zip(&fd) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }
}
