//! The language decoder and policy: a recurrent message reader combined with
//! a recurrent history reader, producing an action distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::ObsEncoding;
use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::numcore::ops::{self, neg_entropy_grad_acc, nll_grad_acc};
use crate::numcore::{Embedding, GruCache, GruCell, Linear, ParamStore};
use crate::speaker::{DecodeMode, Message, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListenerConfig {
    pub embed_dim: usize,
    pub msg_hidden: usize,
    pub hist_hidden: usize,
    pub head_hidden: usize,
}

impl Default for ListenerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            msg_hidden: 32,
            hist_hidden: 32,
            head_hidden: 32,
        }
    }
}

/// Recurrent history state for one episode. The referential game keeps one
/// slot per candidate (each scored by the same head); navigation keeps a
/// single slot that grows by one step per timestep.
#[derive(Debug, Clone)]
pub struct ListenerView {
    slots: Vec<Vec<GruCache>>,
    hidden: usize,
}

impl ListenerView {
    pub fn steps(&self) -> usize {
        self.slots.first().map_or(0, Vec::len)
    }

    fn last_hidden(&self, slot: usize) -> Vec<f64> {
        self.slots[slot]
            .last()
            .map_or_else(|| vec![0.0; self.hidden], |c| c.h.clone())
    }
}

/// Forward state of one action choice, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Decision {
    pub dist: Vec<f64>,
    step: usize,
    msg: Vec<(usize, GruCache)>,
    heads: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Gradient flowing into the history reader, per slot and step.
#[derive(Debug, Clone)]
pub struct HistoryGrad {
    dh: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ListenerModel {
    pub store: ParamStore,
    pub cfg: ListenerConfig,
    vocab_len: usize,
    encoding: ObsEncoding,
    emb: Embedding,
    msg_gru: GruCell,
    hist_gru: GruCell,
    hidden: Linear,
    out: Linear,
}

impl ListenerModel {
    pub fn new<R: Rng + ?Sized>(
        cfg: ListenerConfig,
        vocab: &Vocabulary,
        encoding: ObsEncoding,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.msg_hidden == 0 || cfg.hist_hidden == 0 || cfg.head_hidden == 0
        {
            return Err(Error::Config("listener widths must be positive".into()));
        }
        if cfg.msg_hidden != cfg.hist_hidden {
            return Err(Error::Config(
                "listener msg_hidden and hist_hidden must be equal".into(),
            ));
        }
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "listener.emb", vocab.len(), cfg.embed_dim, rng);
        let msg_gru = GruCell::new(&mut store, "listener.msg_gru", cfg.embed_dim, cfg.msg_hidden, rng);
        let hist_gru = GruCell::new(
            &mut store,
            "listener.hist_gru",
            encoding.listener_obs_width() + encoding.n_actions(),
            cfg.hist_hidden,
            rng,
        );
        let hidden = Linear::new(
            &mut store,
            "listener.hidden",
            3 * cfg.msg_hidden,
            cfg.head_hidden,
            rng,
        );
        let out_width = match encoding {
            ObsEncoding::Refgame => 1,
            ObsEncoding::Nav { .. } => encoding.n_actions(),
        };
        let out = Linear::zeroed(&mut store, "listener.out", cfg.head_hidden, out_width, rng);
        Ok(Self {
            store,
            cfg,
            vocab_len: vocab.len(),
            encoding,
            emb,
            msg_gru,
            hist_gru,
            hidden,
            out,
        })
    }

    pub fn encoding(&self) -> &ObsEncoding {
        &self.encoding
    }

    pub fn n_actions(&self) -> usize {
        self.encoding.n_actions()
    }

    pub fn new_view(&self) -> ListenerView {
        let slots = match self.encoding {
            ObsEncoding::Refgame => 2,
            ObsEncoding::Nav { .. } => 1,
        };
        ListenerView {
            slots: vec![Vec::new(); slots],
            hidden: self.cfg.hist_hidden,
        }
    }

    /// Advances the history reader by one timestep.
    pub fn observe(
        &self,
        view: &mut ListenerView,
        obs: &Observation,
        prev_action: Option<usize>,
    ) -> Result<()> {
        let feats = self.encoding.listener_features(obs)?;
        if feats.len() != view.slots.len() {
            return Err(Error::Config("view does not match the listener's encoding".into()));
        }
        let n_actions = self.n_actions();
        if prev_action.is_some_and(|a| a >= n_actions) {
            return Err(Error::Protocol("previous action out of range".into()));
        }
        for (slot, f) in feats.into_iter().enumerate() {
            let mut x = f;
            let base = x.len();
            x.resize(base + n_actions, 0.0);
            if let Some(a) = prev_action {
                x[base + a] = 1.0;
            }
            let h = view.last_hidden(slot);
            let cache = self.hist_gru.step_unchecked(&self.store, &h, &x);
            view.slots[slot].push(cache);
        }
        Ok(())
    }

    /// Fresh view after a single observation: the referential game's whole history.
    pub fn view_of(&self, obs: &Observation) -> Result<ListenerView> {
        let mut view = self.new_view();
        self.observe(&mut view, obs, None)?;
        Ok(view)
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.vocab_len) {
            Some(t) => Err(Error::Protocol(format!("unknown token id {t}"))),
            None => Ok(()),
        }
    }

    fn check_view(&self, view: &ListenerView) -> Result<()> {
        if view.steps() == 0 {
            return Err(Error::Protocol("listener has not observed anything yet".into()));
        }
        Ok(())
    }

    /// Scores each slot from `[h_msg, h_hist, h_msg * h_hist]`.
    fn head(&self, view: &ListenerView, h_msg: &[f64]) -> (Vec<f64>, Vec<(Vec<f64>, Vec<f64>)>) {
        let mut logits = Vec::new();
        let mut heads = Vec::with_capacity(view.slots.len());
        for slot in 0..view.slots.len() {
            let h_hist = view.last_hidden(slot);
            let mut inp = h_msg.to_vec();
            inp.extend(h_hist.iter().zip(h_msg).map(|(a, b)| a * b).collect::<Vec<_>>());
            inp.splice(h_msg.len()..h_msg.len(), h_hist);
            let z: Vec<f64> = self
                .hidden
                .forward(&self.store, &inp)
                .into_iter()
                .map(f64::tanh)
                .collect();
            logits.extend(self.out.forward(&self.store, &z));
            heads.push((inp, z));
        }
        (logits, heads)
    }

    /// Policy after reading `prefix` (message body tokens, no EOS).
    pub fn action_dist(&self, view: &ListenerView, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.decide(view, prefix)?.dist)
    }

    /// Forward pass keeping everything needed by [`Self::backward_decision`].
    pub fn decide(&self, view: &ListenerView, tokens: &[usize]) -> Result<Decision> {
        self.check_view(view)?;
        self.check_tokens(tokens)?;
        let mut h = vec![0.0; self.cfg.msg_hidden];
        let mut msg = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let cache = self
                .msg_gru
                .step_unchecked(&self.store, &h, self.emb.lookup(&self.store, t));
            h = cache.h.clone();
            msg.push((t, cache));
        }
        let (logits, heads) = self.head(view, &h);
        Ok(Decision {
            dist: ops::softmax(&logits)?,
            step: view.steps() - 1,
            msg,
            heads,
        })
    }

    /// Policies after each prefix of `msg`, from the empty prefix to the full
    /// body, computed in one pass over the tokens.
    pub fn prefix_dists(&self, view: &ListenerView, msg: &Message) -> Result<Vec<Vec<f64>>> {
        self.check_view(view)?;
        self.check_tokens(&msg.tokens)?;
        let mut h = vec![0.0; self.cfg.msg_hidden];
        let mut out = Vec::with_capacity(msg.len() + 1);
        out.push(ops::softmax(&self.head(view, &h).0)?);
        for &t in &msg.tokens {
            h = self
                .msg_gru
                .step_unchecked(&self.store, &h, self.emb.lookup(&self.store, t))
                .h;
            out.push(ops::softmax(&self.head(view, &h).0)?);
        }
        Ok(out)
    }

    pub fn history_grad(&self, view: &ListenerView) -> HistoryGrad {
        HistoryGrad {
            dh: view
                .slots
                .iter()
                .map(|s| vec![vec![0.0; self.cfg.hist_hidden]; s.len()])
                .collect(),
        }
    }

    /// Backpropagates `dlogits` through the head and message reader into the
    /// store; history-reader gradient is deferred into `hist`.
    pub fn backward_decision(&mut self, d: &Decision, dlogits: &[f64], hist: &mut HistoryGrad) {
        let hm = self.cfg.msg_hidden;
        let per_slot = dlogits.len() / d.heads.len();
        let mut dh_msg = vec![0.0; hm];
        for (slot, (inp, z)) in d.heads.iter().enumerate() {
            let dy = &dlogits[slot * per_slot..(slot + 1) * per_slot];
            let dz = self.out.backward(&mut self.store, z, dy);
            let dpre: Vec<f64> = dz.iter().zip(z).map(|(g, z)| g * (1.0 - z * z)).collect();
            let dinp = self.hidden.backward(&mut self.store, inp, &dpre);
            let (m, rest) = inp.split_at(hm);
            let hh = &rest[..hm];
            let dprod = &dinp[2 * hm..];
            for i in 0..hm {
                dh_msg[i] += dinp[i] + dprod[i] * hh[i];
                hist.dh[slot][d.step][i] += dinp[hm + i] + dprod[i] * m[i];
            }
        }
        let mut dh = dh_msg;
        for (tok, cache) in d.msg.iter().rev() {
            let (dx, dh_prev) = self.msg_gru.backward(&mut self.store, cache, &dh);
            self.emb.backward(&mut self.store, *tok, &dx);
            dh = dh_prev;
        }
    }

    /// Reverse sweep through the history reader.
    pub fn backward_history(&mut self, view: &ListenerView, hist: &HistoryGrad) {
        for (caches, grads) in view.slots.iter().zip(&hist.dh) {
            let mut carry = vec![0.0; self.cfg.hist_hidden];
            for (cache, g) in caches.iter().zip(grads).rev() {
                let dh: Vec<f64> = carry.iter().zip(g).map(|(a, b)| a + b).collect();
                let (_, dh_prev) = self.hist_gru.backward(&mut self.store, cache, &dh);
                carry = dh_prev;
            }
        }
    }

    /// Accumulates the gradient of
    /// `sum_t -(adv_t * ln pi(a_t) + beta_h * H(pi_t))` over one episode and
    /// returns that surrogate loss.
    pub fn reinforce_backward(
        &mut self,
        view: &ListenerView,
        decisions: &[Decision],
        actions: &[usize],
        advantages: &[f64],
        beta_h: f64,
    ) -> Result<f64> {
        if decisions.len() != actions.len() || actions.len() != advantages.len() {
            return Err(Error::Protocol("decisions, actions and advantages differ in length".into()));
        }
        let mut hist = self.history_grad(view);
        let mut loss = 0.0;
        for ((d, &a), &adv) in decisions.iter().zip(actions).zip(advantages) {
            if a >= d.dist.len() {
                return Err(Error::Protocol(format!("action {a} out of range")));
            }
            loss -= adv * d.dist[a].ln() + beta_h * ops::entropy(&d.dist);
            let mut dl = vec![0.0; d.dist.len()];
            nll_grad_acc(&d.dist, a, adv, &mut dl);
            neg_entropy_grad_acc(&d.dist, beta_h, &mut dl);
            self.backward_decision(d, &dl, &mut hist);
        }
        self.backward_history(view, &hist);
        Ok(loss)
    }
}

/// Draws (or takes the argmax of) an action; returns it with its log-probability.
pub fn select_action<R: Rng + ?Sized>(dist: &[f64], rng: &mut R, mode: DecodeMode) -> (usize, f64) {
    let a = match mode {
        DecodeMode::Greedy => ops::argmax(dist),
        DecodeMode::Sample => ops::sample_categorical(dist, rng),
    };
    (a, dist[a].ln())
}
