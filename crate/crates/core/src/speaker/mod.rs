//! The language encoder: an autoregressive token model conditioned on the
//! speaker's observation.

pub mod vocab;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::ObsEncoding;
use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::numcore::ops::{self, nll_grad_acc};
use crate::numcore::{Embedding, GruCache, GruCell, Linear, ParamStore};

pub use vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeakerConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Maximum message length, EOS excluded.
    pub l_max: usize,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden: 48,
            l_max: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Sample,
    Greedy,
}

/// One decoding step as it was sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub dist: Vec<f64>,
    pub log_prob: f64,
}

/// Token ids of a message body. EOS is implied and not stored.
///
/// Messages produced by sampling carry one [`StepRecord`] per emitted token
/// plus one for the EOS step (a forced one-hot EOS step when the body hit
/// `l_max`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub tokens: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepRecord>>,
}

impl Message {
    pub fn from_tokens(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            steps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token ids including the terminating EOS, as scored by the model.
    pub fn with_eos(&self, eos: usize) -> Vec<usize> {
        let mut t = self.tokens.clone();
        t.push(eos);
        t
    }
}

/// Summed per-step entropy (nats) of a sampled message, EOS step included.
pub fn message_entropy(msg: &Message) -> Result<f64> {
    let steps = msg
        .steps
        .as_ref()
        .ok_or_else(|| Error::Protocol("message carries no step distributions".into()))?;
    Ok(steps.iter().map(|s| ops::entropy(&s.dist)).sum())
}

/// Observation embedding fed to the recurrent decoder, plus the raw features
/// it came from (absent for the zeroed pretraining context).
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    features: Option<Vec<f64>>,
    value: Vec<f64>,
}

impl Context {
    pub fn zeroed(width: usize) -> Self {
        Self {
            features: None,
            value: vec![0.0; width],
        }
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }
}

#[derive(Debug, Clone)]
pub struct SpeakerModel {
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub cfg: SpeakerConfig,
    encoding: ObsEncoding,
    obs: Linear,
    emb: Embedding,
    gru: GruCell,
    out: Linear,
}

impl SpeakerModel {
    pub fn new<R: Rng + ?Sized>(
        cfg: SpeakerConfig,
        vocab: Vocabulary,
        encoding: ObsEncoding,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.l_max == 0 || cfg.hidden == 0 || cfg.embed_dim == 0 {
            return Err(Error::Config("speaker widths and l_max must be positive".into()));
        }
        let mut store = ParamStore::new();
        let obs = Linear::new(&mut store, "speaker.obs", encoding.speaker_width(), cfg.hidden, rng);
        let emb = Embedding::new(&mut store, "speaker.emb", vocab.len(), cfg.embed_dim, rng);
        let gru = GruCell::new(
            &mut store,
            "speaker.gru",
            cfg.embed_dim + cfg.hidden,
            cfg.hidden,
            rng,
        );
        let out = Linear::new(&mut store, "speaker.out", cfg.hidden, vocab.len(), rng);
        Ok(Self {
            store,
            vocab,
            cfg,
            encoding,
            obs,
            emb,
            gru,
            out,
        })
    }

    pub fn encoding(&self) -> &ObsEncoding {
        &self.encoding
    }

    pub fn context_width(&self) -> usize {
        self.cfg.hidden
    }

    /// `tanh(W f + b)` over the featurized observation history.
    pub fn embed_observation(&self, history: &[Observation]) -> Result<Context> {
        let features = self.encoding.speaker_features(history)?;
        let value = self
            .obs
            .forward(&self.store, &features)
            .into_iter()
            .map(f64::tanh)
            .collect();
        Ok(Context {
            features: Some(features),
            value,
        })
    }

    /// Recomputes a context's embedding under the current parameters.
    pub fn refresh_context(&self, ctx: &Context) -> Context {
        match &ctx.features {
            Some(features) => Context {
                value: self
                    .obs
                    .forward(&self.store, features)
                    .into_iter()
                    .map(f64::tanh)
                    .collect(),
                features: Some(features.clone()),
            },
            None => ctx.clone(),
        }
    }

    fn check_context(&self, ctx: &Context) -> Result<()> {
        if ctx.value.len() != self.cfg.hidden {
            return Err(Error::Config(format!(
                "context width {} != {}",
                ctx.value.len(),
                self.cfg.hidden
            )));
        }
        Ok(())
    }

    fn step(&self, ctx: &Context, h: &[f64], input: usize) -> (GruCache, Vec<f64>) {
        let mut x = Vec::with_capacity(self.gru.input);
        x.extend_from_slice(self.emb.lookup(&self.store, input));
        x.extend_from_slice(&ctx.value);
        let cache = self.gru.step_unchecked(&self.store, h, &x);
        let mut logits = self.out.forward(&self.store, &cache.h);
        logits[self.vocab.pad()] = f64::NEG_INFINITY;
        logits[self.vocab.bos()] = f64::NEG_INFINITY;
        (cache, logits)
    }

    fn forced_eos(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.vocab.len()];
        d[self.vocab.eos()] = 1.0;
        d
    }

    /// Distribution of the next token after BOS + `prefix`.
    pub fn next_token_dist(&self, ctx: &Context, prefix: &[usize]) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        if prefix.len() >= self.cfg.l_max {
            return Err(Error::Protocol(format!(
                "prefix of length {} leaves no room under l_max={}",
                prefix.len(),
                self.cfg.l_max
            )));
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(Error::Protocol(format!("token id {bad} out of vocabulary")));
        }
        let mut h = ctx.value.clone();
        let mut input = self.vocab.bos();
        let mut logits = Vec::new();
        for &tok in prefix.iter().chain(std::iter::once(&usize::MAX)) {
            let (cache, l) = self.step(ctx, &h, input);
            h = cache.h;
            logits = l;
            input = tok;
        }
        ops::softmax(&logits)
    }

    /// Autoregressive decoding until EOS or `l_max` tokens.
    pub fn sample_message<R: Rng + ?Sized>(
        &self,
        ctx: &Context,
        rng: &mut R,
        mode: DecodeMode,
    ) -> Message {
        let eos = self.vocab.eos();
        let mut h = ctx.value.clone();
        let mut input = self.vocab.bos();
        let mut tokens = Vec::new();
        let mut steps = Vec::new();
        loop {
            if tokens.len() == self.cfg.l_max {
                steps.push(StepRecord {
                    dist: self.forced_eos(),
                    log_prob: 0.0,
                });
                break;
            }
            let (cache, logits) = self.step(ctx, &h, input);
            h = cache.h;
            let dist = ops::softmax(&logits).expect("EOS logit is always finite");
            let tok = match mode {
                DecodeMode::Greedy => ops::argmax(&dist),
                DecodeMode::Sample => ops::sample_categorical(&dist, rng),
            };
            let log_prob = dist[tok].ln();
            steps.push(StepRecord { dist, log_prob });
            if tok == eos {
                break;
            }
            tokens.push(tok);
            input = tok;
        }
        Message {
            tokens,
            steps: Some(steps),
        }
    }

    /// Teacher-forced `sum_k w_k * -ln p(targets[k] | targets[..k], ctx)`, with
    /// its gradient accumulated into the store. `targets` normally ends in EOS;
    /// the forced EOS step at position `l_max` contributes nothing.
    pub fn weighted_nll_backward(
        &mut self,
        ctx: &Context,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<f64> {
        self.check_context(ctx)?;
        if targets.len() != weights.len() {
            return Err(Error::Protocol("targets and weights differ in length".into()));
        }
        let eos = self.vocab.eos();
        if let Some(pos) = targets.iter().position(|&t| t == eos) {
            if pos + 1 != targets.len() {
                return Err(Error::Protocol("EOS inside a message body".into()));
            }
        }
        let body = targets.iter().filter(|&&t| t != eos).count();
        if body > self.cfg.l_max {
            return Err(Error::Protocol(format!(
                "sequence of length {body} exceeds l_max={}",
                self.cfg.l_max
            )));
        }
        if let Some(&bad) = targets
            .iter()
            .find(|&&t| t >= self.vocab.len() || t == self.vocab.pad() || t == self.vocab.bos())
        {
            return Err(Error::Protocol(format!("token id {bad} cannot be emitted")));
        }

        let scored = targets.len().min(self.cfg.l_max);
        let mut caches = Vec::with_capacity(scored);
        let mut dlogits = Vec::with_capacity(scored);
        let mut h = ctx.value.clone();
        let mut input = self.vocab.bos();
        let mut loss = 0.0;
        for k in 0..scored {
            let (cache, logits) = self.step(ctx, &h, input);
            let p = ops::softmax(&logits)?;
            loss -= weights[k] * p[targets[k]].ln();
            let mut d = vec![0.0; p.len()];
            nll_grad_acc(&p, targets[k], weights[k], &mut d);
            h = cache.h.clone();
            caches.push((input, cache));
            dlogits.push(d);
            input = targets[k];
        }

        let hidden = self.cfg.hidden;
        let emb_dim = self.cfg.embed_dim;
        let mut dctx = vec![0.0; hidden];
        let mut dh = vec![0.0; hidden];
        for ((input, cache), d) in caches.iter().zip(&dlogits).rev() {
            let dh_out = self.out.backward(&mut self.store, &cache.h, d);
            for (a, b) in dh.iter_mut().zip(&dh_out) {
                *a += b;
            }
            let (dx, dh_prev) = self.gru.backward(&mut self.store, cache, &dh);
            self.emb.backward(&mut self.store, *input, &dx[..emb_dim]);
            for (a, b) in dctx.iter_mut().zip(&dx[emb_dim..]) {
                *a += b;
            }
            dh = dh_prev;
        }
        // h_0 is the context itself
        for (a, b) in dctx.iter_mut().zip(&dh) {
            *a += b;
        }
        self.context_backward(ctx, &dctx);
        Ok(loss)
    }

    fn context_backward(&mut self, ctx: &Context, dctx: &[f64]) {
        if let Some(features) = &ctx.features {
            let dpre: Vec<f64> = dctx
                .iter()
                .zip(&ctx.value)
                .map(|(d, v)| d * (1.0 - v * v))
                .collect();
            self.obs.backward_params(&mut self.store, features, &dpre);
        }
    }

    /// Cross-entropy of `label` + EOS under teacher forcing; gradients are
    /// accumulated (the caller owns the optimizer step).
    pub fn ce_supervised_step<S: AsRef<str>>(&mut self, ctx: &Context, label: &[S]) -> Result<f64> {
        let ids = self.vocab.encode(label)?;
        self.ce_supervised_ids(ctx, &ids)
    }

    pub fn ce_supervised_ids(&mut self, ctx: &Context, label: &[usize]) -> Result<f64> {
        let targets = Message::from_tokens(label.to_vec()).with_eos(self.vocab.eos());
        let weights = vec![1.0; targets.len()];
        self.weighted_nll_backward(ctx, &targets, &weights)
    }
}

#[cfg(test)]
mod tests;
