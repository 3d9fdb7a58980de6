//! Small autoregressive softmax policy with hand-written backpropagation.
//!
//! The network reads a learned question embedding (sum of per-symbol rows) and a
//! one-hot window over the last `h` generated tokens, passes it through one tanh
//! hidden layer and emits logits over the vocabulary:
//!
//! ```text
//! x      = [ sum_s E[s] ; onehot(o_{l-h}) ; ... ; onehot(o_{l-1}) ]
//! hidden = tanh(x W_h + b_h)
//! logits = hidden W_o + b_o
//! ```
//!
//! Positions before the start of the response are filled with a reserved PAD
//! symbol, so every window has the same shape. Every quantity the trainer needs
//! (log-probabilities, entropies, KL terms) is computed from full distributions,
//! and gradients are exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AerError, Result};

/// Token vocabulary. The last id is the end-of-sequence token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(AerError::Config(format!("vocabulary size must be >= 2, got {size}")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos(&self) -> usize {
        self.size - 1
    }

    /// Window symbol for positions before the response starts. Never emitted.
    pub fn pad(&self) -> usize {
        self.size
    }

    pub fn max_entropy(&self) -> f64 {
        (self.size as f64).ln()
    }
}

/// Dimensions of a [`PolicyParams`] vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub vocab: Vocab,
    pub question_symbols: usize,
    pub embed_dim: usize,
    pub context: usize,
    pub hidden: usize,
}

impl PolicyShape {
    pub fn new(vocab: Vocab, question_symbols: usize, embed_dim: usize, context: usize, hidden: usize) -> Result<Self> {
        if question_symbols == 0 || embed_dim == 0 || context == 0 || hidden == 0 {
            return Err(AerError::Config(format!(
                "policy dimensions must be positive (symbols={question_symbols}, d={embed_dim}, h={context}, d_h={hidden})"
            )));
        }
        Ok(Self { vocab, question_symbols, embed_dim, context, hidden })
    }

    fn window_width(&self) -> usize {
        self.vocab.size() + 1
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.context * self.window_width()
    }

    fn embed_len(&self) -> usize {
        self.question_symbols * self.embed_dim
    }

    fn w_hidden_off(&self) -> usize {
        self.embed_len()
    }

    fn b_hidden_off(&self) -> usize {
        self.w_hidden_off() + self.input_dim() * self.hidden
    }

    fn w_out_off(&self) -> usize {
        self.b_hidden_off() + self.hidden
    }

    fn b_out_off(&self) -> usize {
        self.w_out_off() + self.hidden * self.vocab.size()
    }

    /// Total flattened parameter count P.
    pub fn num_params(&self) -> usize {
        self.b_out_off() + self.vocab.size()
    }
}

/// Question symbols fed to the embedding table. Embeddings of all symbols are summed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionEncoding(pub Vec<usize>);

/// Flattened network parameters.
///
/// Layout: embedding table `[symbols x d]`, hidden weights `[input x d_h]`,
/// hidden bias `[d_h]`, output weights `[d_h x |V|]`, output bias `[|V|]`, all
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        Self { data: vec![0.0; shape.num_params()], shape }
    }

    pub fn from_vec(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_params() {
            return Err(AerError::Config(format!(
                "parameter vector has length {}, shape expects {}",
                data.len(),
                shape.num_params()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(AerError::Data(format!("parameter {i} is not finite")));
        }
        Ok(Self { shape, data })
    }

    /// Uniform random weights in `[-scale, scale]`, embeddings in `[-embed_scale, embed_scale]`, zero biases.
    pub fn random<R: Rng>(shape: PolicyShape, rng: &mut R, scale: f64, embed_scale: f64) -> Self {
        let mut p = Self::zeros(shape);
        let (e_end, wh_end) = (shape.w_hidden_off(), shape.b_hidden_off());
        let (wo_start, wo_end) = (shape.w_out_off(), shape.b_out_off());
        for v in &mut p.data[..e_end] {
            *v = rng.gen_range(-embed_scale..=embed_scale);
        }
        for v in &mut p.data[e_end..wh_end] {
            *v = rng.gen_range(-scale..=scale);
        }
        for v in &mut p.data[wo_start..wo_end] {
            *v = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn vocab(&self) -> Vocab {
        self.shape.vocab
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += step * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], step: f64) {
        debug_assert_eq!(direction.len(), self.data.len());
        for (p, g) in self.data.iter_mut().zip(direction) {
            *p += step * g;
        }
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let off = self.shape.b_out_off();
        &mut self.data[off..off + self.shape.vocab.size()]
    }

    pub fn output_bias_offset(&self) -> usize {
        self.shape.b_out_off()
    }

    fn embed_row(&self, symbol: usize) -> &[f64] {
        let d = self.shape.embed_dim;
        &self.data[symbol * d..(symbol + 1) * d]
    }

    fn w_hidden_row(&self, feature: usize) -> &[f64] {
        let off = self.shape.w_hidden_off() + feature * self.shape.hidden;
        &self.data[off..off + self.shape.hidden]
    }

    fn b_hidden(&self) -> &[f64] {
        let off = self.shape.b_hidden_off();
        &self.data[off..off + self.shape.hidden]
    }

    fn w_out_row(&self, unit: usize) -> &[f64] {
        let v = self.shape.vocab.size();
        let off = self.shape.w_out_off() + unit * v;
        &self.data[off..off + v]
    }

    fn b_out(&self) -> &[f64] {
        let off = self.shape.b_out_off();
        &self.data[off..off + self.shape.vocab.size()]
    }

    /// Summed embedding of the question symbols.
    pub fn embed_question(&self, question: &QuestionEncoding) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.shape.embed_dim];
        for &s in &question.0 {
            if s >= self.shape.question_symbols {
                return Err(AerError::Config(format!(
                    "question symbol {s} outside embedding table of {} rows",
                    self.shape.question_symbols
                )));
            }
            for (acc, w) in e.iter_mut().zip(self.embed_row(s)) {
                *acc += w;
            }
        }
        Ok(e)
    }

    fn window_features(&self, prefix: &[usize]) -> Result<Vec<usize>> {
        let h = self.shape.context;
        let width = self.shape.window_width();
        let vocab = self.shape.vocab;
        let mut feats = Vec::with_capacity(h);
        for slot in 0..h {
            // slot 0 is the oldest position of the window
            let back = h - slot;
            let tok = if prefix.len() >= back { prefix[prefix.len() - back] } else { vocab.pad() };
            if tok > vocab.pad() || (tok == vocab.pad() && prefix.len() >= back) {
                return Err(AerError::Config(format!("token id {tok} outside vocabulary of {}", vocab.size())));
            }
            feats.push(self.shape.embed_dim + slot * width + tok);
        }
        Ok(feats)
    }

    fn trace(&self, embed: &[f64], prefix: &[usize]) -> Result<Trace> {
        let window = self.window_features(prefix)?;
        let mut z = self.b_hidden().to_vec();
        for (i, &x) in embed.iter().enumerate() {
            if x != 0.0 {
                for (zk, w) in z.iter_mut().zip(self.w_hidden_row(i)) {
                    *zk += x * w;
                }
            }
        }
        for &f in &window {
            for (zk, w) in z.iter_mut().zip(self.w_hidden_row(f)) {
                *zk += w;
            }
        }
        let hidden: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let mut logits = self.b_out().to_vec();
        for (k, &a) in hidden.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(self.w_out_row(k)) {
                *l += a * w;
            }
        }
        Ok(Trace { window, hidden, dist: TokenDistribution::from_logits(logits) })
    }

    /// Next-token distribution pi(. | q, prefix).
    pub fn forward(&self, question: &QuestionEncoding, prefix: &[usize]) -> Result<TokenDistribution> {
        let embed = self.embed_question(question)?;
        Ok(self.trace(&embed, prefix)?.dist)
    }

    /// Distributions at every position of `tokens` (position l conditions on `tokens[..l]`).
    pub fn distributions(&self, question: &QuestionEncoding, tokens: &[usize]) -> Result<Vec<TokenDistribution>> {
        let embed = self.embed_question(question)?;
        (0..tokens.len()).map(|l| Ok(self.trace(&embed, &tokens[..l])?.dist)).collect()
    }

    pub fn sample_response<R: Rng>(
        &self,
        question: &QuestionEncoding,
        rng: &mut R,
        max_len: usize,
    ) -> Result<Response> {
        self.sample_response_with_temperature(question, rng, max_len, 1.0)
    }

    /// Samples token by token from the (tempered) softmax until EOS or `max_len`.
    pub fn sample_response_with_temperature<R: Rng>(
        &self,
        question: &QuestionEncoding,
        rng: &mut R,
        max_len: usize,
        temperature: f64,
    ) -> Result<Response> {
        if max_len == 0 {
            return Err(AerError::Config("maximum response length must be >= 1".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(AerError::Config(format!("temperature must be positive, got {temperature}")));
        }
        let embed = self.embed_question(question)?;
        let eos = self.shape.vocab.eos();
        let mut resp = Response::default();
        while resp.tokens.len() < max_len {
            let mut dist = self.trace(&embed, &resp.tokens)?.dist;
            if temperature != 1.0 {
                dist = TokenDistribution::from_logits(dist.logits.iter().map(|l| l / temperature).collect());
            }
            let tok = dist.sample(rng);
            resp.log_probs.push(dist.log_prob(tok));
            resp.entropies.push(dist.entropy());
            resp.tokens.push(tok);
            if tok == eos {
                break;
            }
        }
        Ok(resp)
    }

    /// Runs the network over every position of `tokens` and backpropagates the
    /// logit-gradient supplied by `seed` into `grad`.
    ///
    /// `seed(l, dist, dlogits)` receives a zeroed buffer and returns `false`
    /// to skip backpropagation at that position.
    pub fn accumulate_sequence<F>(
        &self,
        question: &QuestionEncoding,
        tokens: &[usize],
        grad: &mut [f64],
        mut seed: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &TokenDistribution, &mut [f64]) -> bool,
    {
        debug_assert_eq!(grad.len(), self.data.len());
        let shape = self.shape;
        let embed = self.embed_question(question)?;
        let mut dembed = vec![0.0; shape.embed_dim];
        let mut dlogits = vec![0.0; shape.vocab.size()];
        let mut dz = vec![0.0; shape.hidden];
        let mut touched = false;
        for l in 0..tokens.len() {
            let tr = self.trace(&embed, &tokens[..l])?;
            dlogits.iter_mut().for_each(|v| *v = 0.0);
            if !seed(l, &tr.dist, &mut dlogits) {
                continue;
            }
            touched = true;
            self.backprop_position(&tr, &embed, &dlogits, &mut dz, grad, &mut dembed);
        }
        if touched {
            let d = shape.embed_dim;
            for &s in &question.0 {
                for (g, de) in grad[s * d..(s + 1) * d].iter_mut().zip(&dembed) {
                    *g += de;
                }
            }
        }
        Ok(())
    }

    fn backprop_position(
        &self,
        tr: &Trace,
        embed: &[f64],
        dlogits: &[f64],
        dz: &mut [f64],
        grad: &mut [f64],
        dembed: &mut [f64],
    ) {
        let shape = self.shape;
        let v = shape.vocab.size();
        let nh = shape.hidden;

        let bo = shape.b_out_off();
        for (g, d) in grad[bo..bo + v].iter_mut().zip(dlogits) {
            *g += d;
        }
        let wo = shape.w_out_off();
        for k in 0..nh {
            let a = tr.hidden[k];
            let row = &mut grad[wo + k * v..wo + (k + 1) * v];
            for (g, d) in row.iter_mut().zip(dlogits) {
                *g += a * d;
            }
            let back: f64 = self.w_out_row(k).iter().zip(dlogits).map(|(w, d)| w * d).sum();
            dz[k] = back * (1.0 - a * a);
        }

        let bh = shape.b_hidden_off();
        for (g, d) in grad[bh..bh + nh].iter_mut().zip(dz.iter()) {
            *g += d;
        }
        let wh = shape.w_hidden_off();
        for (i, &x) in embed.iter().enumerate() {
            let row = &mut grad[wh + i * nh..wh + (i + 1) * nh];
            for (g, d) in row.iter_mut().zip(dz.iter()) {
                *g += x * d;
            }
            dembed[i] += self.w_hidden_row(i).iter().zip(dz.iter()).map(|(w, d)| w * d).sum::<f64>();
        }
        for &f in &tr.window {
            let row = &mut grad[wh + f * nh..wh + (f + 1) * nh];
            for (g, d) in row.iter_mut().zip(dz.iter()) {
                *g += d;
            }
        }
    }

    /// Sum over positions of ln pi(o_l | q, o_<l).
    pub fn sequence_logprob(&self, question: &QuestionEncoding, tokens: &[usize]) -> Result<f64> {
        Ok(self.distributions(question, tokens)?.iter().zip(tokens).map(|(d, &t)| d.log_prob(t)).sum())
    }

    /// Mean token entropy over the positions of `tokens`, under the current parameters.
    pub fn sequence_entropy(&self, question: &QuestionEncoding, tokens: &[usize]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(AerError::Data("sequence entropy of an empty response".into()));
        }
        let dists = self.distributions(question, tokens)?;
        Ok(dists.iter().map(token_entropy).sum::<f64>() / tokens.len() as f64)
    }

    /// Exact gradient of `sequence_logprob`.
    pub fn grad_logprob(&self, question: &QuestionEncoding, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.len()];
        self.accumulate_sequence(question, tokens, &mut grad, |l, dist, dl| {
            dist.add_logprob_grad(tokens[l], 1.0, dl);
            true
        })?;
        Ok(grad)
    }

    /// Exact gradient of `sequence_entropy` at the fixed token prefixes.
    pub fn grad_entropy(&self, question: &QuestionEncoding, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(AerError::Data("entropy gradient of an empty response".into()));
        }
        let scale = 1.0 / tokens.len() as f64;
        let mut grad = vec![0.0; self.len()];
        self.accumulate_sequence(question, tokens, &mut grad, |_, dist, dl| {
            dist.add_entropy_grad(scale, dl);
            true
        })?;
        Ok(grad)
    }

    /// Serializes as `"AERPOL1"`, then h, d, d_h, |V| as little-endian u32,
    /// then the flat little-endian f64 parameter array.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.shape;
        let mut out = Vec::with_capacity(POLICY_MAGIC.len() + 16 + 8 * self.data.len());
        out.extend_from_slice(POLICY_MAGIC);
        for dim in [s.context, s.embed_dim, s.hidden, s.vocab.size()] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). The embedding row count is
    /// recovered from the payload length.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let hdr = POLICY_MAGIC.len() + 16;
        if bytes.len() < hdr || &bytes[..POLICY_MAGIC.len()] != POLICY_MAGIC {
            return Err(AerError::Format("missing AERPOL1 header".into()));
        }
        let dim = |i: usize| {
            let o = POLICY_MAGIC.len() + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        };
        let (h, d, dh, v) = (dim(0), dim(1), dim(2), dim(3));
        let payload = &bytes[hdr..];
        if !payload.len().is_multiple_of(8) {
            return Err(AerError::Format("parameter payload is not a whole number of f64 values".into()));
        }
        let n = payload.len() / 8;
        let probe = PolicyShape::new(Vocab::new(v)?, 1, d, h, dh)?;
        let rest = probe.num_params() - d;
        if n < rest || !(n - rest).is_multiple_of(d) || n == rest {
            return Err(AerError::Format(format!("parameter count {n} inconsistent with header dims")));
        }
        let shape = PolicyShape::new(Vocab::new(v)?, (n - rest) / d, d, h, dh)?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_vec(shape, data)
    }
}

pub const POLICY_MAGIC: &[u8] = b"AERPOL1";

struct Trace {
    window: Vec<usize>,
    hidden: Vec<f64>,
    dist: TokenDistribution,
}

/// Full next-token distribution: logits, softmax probabilities and the log-normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    log_norm: f64,
}

impl TokenDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs = exps.iter().map(|e| e / sum).collect();
        Self { log_norm: max + sum.ln(), logits, probs }
    }

    /// Builds a distribution from strictly positive probabilities (logits = ln p).
    pub fn from_probs(probs: &[f64]) -> Self {
        Self::from_logits(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn log_prob(&self, token: usize) -> f64 {
        self.logits[token] - self.log_norm
    }

    pub fn entropy(&self) -> f64 {
        token_entropy(self)
    }

    /// Exact KL(self || other) over the full vocabulary.
    pub fn kl_to(&self, other: &TokenDistribution) -> f64 {
        let kl: f64 = (0..self.len()).map(|i| self.probs[i] * (self.log_prob(i) - other.log_prob(i))).sum();
        kl.max(0.0)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    /// dlogits += scale * d ln p(token) / dlogits = scale * (onehot - p).
    pub fn add_logprob_grad(&self, token: usize, scale: f64, dlogits: &mut [f64]) {
        for (d, p) in dlogits.iter_mut().zip(&self.probs) {
            *d -= scale * p;
        }
        dlogits[token] += scale;
    }

    /// dlogits += scale * dH/dlogits, where dH/dz_j = -p_j (ln p_j + H).
    pub fn add_entropy_grad(&self, scale: f64, dlogits: &mut [f64]) {
        let h = self.entropy_unclamped();
        for (j, d) in dlogits.iter_mut().enumerate() {
            *d -= scale * self.probs[j] * (self.log_prob(j) + h);
        }
    }

    /// dlogits += scale * dKL(self || reference)/dlogits(self).
    pub fn add_kl_grad(&self, reference: &TokenDistribution, scale: f64, dlogits: &mut [f64]) {
        let log_ratio: Vec<f64> = (0..self.len()).map(|i| self.log_prob(i) - reference.log_prob(i)).collect();
        let kl: f64 = self.probs.iter().zip(&log_ratio).map(|(p, r)| p * r).sum();
        for (j, d) in dlogits.iter_mut().enumerate() {
            *d += scale * self.probs[j] * (log_ratio[j] - kl);
        }
    }

    fn entropy_unclamped(&self) -> f64 {
        -self.probs.iter().enumerate().map(|(i, p)| p * self.log_prob(i)).sum::<f64>()
    }
}

/// H = -sum_o p(o) ln p(o), in nats, clamped to `[0, ln |V|]`.
pub fn token_entropy(dist: &TokenDistribution) -> f64 {
    let h = dist.entropy_unclamped();
    let max = (dist.len() as f64).ln();
    debug_assert!(h.is_nan() || (h > -1e-9 && h < max + 1e-9), "token entropy {h} outside [0, {max}]");
    h.clamp(0.0, max)
}

/// A sampled response with per-position statistics of the generating policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
}

impl Response {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
