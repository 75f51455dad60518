use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

/// `ln(1e-9)`.
pub const DEFAULT_FLOOR_LOGPROB: f64 = -20.723265836946414;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    WittenBell,
    /// Additive smoothing; `AddK(0.0)` is the maximum-likelihood estimate.
    AddK(f64),
}

impl std::str::FromStr for Smoothing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "witten-bell" | "wb" => Ok(Smoothing::WittenBell),
            "mle" => Ok(Smoothing::AddK(0.0)),
            _ => s
                .strip_prefix("add-k:")
                .and_then(|k| k.parse::<f64>().ok())
                .filter(|k| *k >= 0.0)
                .map(Smoothing::AddK)
                .ok_or_else(|| Error::Config(format!("unknown smoothing {s:?} (witten-bell | mle | add-k:<k>)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    pub floor_logprob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            order: 3,
            smoothing: Smoothing::WittenBell,
            floor_logprob: DEFAULT_FLOOR_LOGPROB,
        }
    }
}

impl TrainConfig {
    pub fn new(order: usize, smoothing: Smoothing) -> Self {
        TrainConfig {
            order,
            smoothing,
            ..Default::default()
        }
    }
}

/// Explicit continuations of one context plus its backoff weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub(super) struct ContextEntry {
    /// `ln` backoff weight; `None` means weight 1.
    pub(super) backoff: Option<f64>,
    /// `(token, ln p)` sorted by token.
    pub(super) probs: Vec<(TokenId, f64)>,
}

impl ContextEntry {
    #[inline]
    fn lookup(&self, token: TokenId) -> Option<f64> {
        self.probs
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| self.probs[i].1)
    }
}

/// Backoff n-gram model in the ARPA sense: stored conditionals are used
/// directly, anything else backs off to the next shorter context.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    pub(super) order: usize,
    pub(super) vocab_size: usize,
    pub(super) floor: f64,
    /// `ln p(w)`, `-inf` where no unigram is stored.
    pub(super) unigram: Vec<f64>,
    /// Non-empty contexts of length `< order`.
    pub(super) contexts: HashMap<Vec<TokenId>, ContextEntry>,
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// Stored `ln p(token | context)` if this exact n-gram is listed.
    pub fn explicit(&self, context: &[TokenId], token: TokenId) -> Option<f64> {
        if context.is_empty() {
            let v = self.unigram[token.index()];
            return v.is_finite().then_some(v);
        }
        self.contexts.get(context)?.lookup(token)
    }

    /// `ln` backoff weight of `context`, if it has one.
    pub fn backoff(&self, context: &[TokenId]) -> Option<f64> {
        self.contexts.get(context)?.backoff
    }

    /// Stored contexts of length `1..order`, sorted.
    pub fn stored_contexts(&self) -> Vec<&[TokenId]> {
        let mut v: Vec<&[TokenId]> = self.contexts.keys().map(Vec::as_slice).collect();
        v.sort();
        v
    }

    fn truncate<'a>(&self, context: &'a [TokenId]) -> &'a [TokenId] {
        &context[context.len().saturating_sub(self.order - 1)..]
    }
}

impl LanguageModel for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> usize {
        self.order - 1
    }

    fn floor_logprob(&self) -> f64 {
        self.floor
    }

    fn raw_logprob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let ctx = self.truncate(context);
        let mut acc = 0.0;
        for start in 0..ctx.len() {
            if let Some(e) = self.contexts.get(&ctx[start..]) {
                if let Some(p) = e.lookup(token) {
                    return acc + p;
                }
                acc += e.backoff.unwrap_or(0.0);
            }
        }
        acc + self.unigram[token.index()]
    }

    fn raw_row(&self, context: &[TokenId]) -> Vec<f64> {
        let ctx = self.truncate(context);
        let mut row = self.unigram.clone();
        for start in (0..ctx.len()).rev() {
            if let Some(e) = self.contexts.get(&ctx[start..]) {
                if let Some(bow) = e.backoff {
                    if bow != 0.0 {
                        row.iter_mut().for_each(|v| *v += bow);
                    }
                }
                for &(t, p) in &e.probs {
                    row[t.index()] = p;
                }
            }
        }
        row
    }
}

type Counts = HashMap<Vec<TokenId>, HashMap<TokenId, u64>>;

/// Estimates a backoff model. Each sequence is terminated with `<eos>`;
/// there is no sentence-start token, so the first token is scored by the
/// unigram distribution.
pub fn train_ngram(sequences: &[Vec<TokenId>], vocab: &Vocab, config: TrainConfig) -> Result<NGramLm> {
    let order = config.order;
    if order < 1 {
        return Err(Error::Lm("order must be at least 1".into()));
    }
    if sequences.is_empty() {
        return Err(Error::Lm("empty training set".into()));
    }
    let v = vocab.len();
    let eos = vocab.eos();

    // counts[context] -> token -> count, for every context length < order
    let mut counts: Counts = HashMap::new();
    let mut padded = Vec::new();
    for seq in sequences {
        padded.clear();
        for &t in seq {
            padded.push(vocab.check(t)?);
        }
        padded.push(eos);
        for i in 0..padded.len() {
            for n in 1..=order.min(i + 1) {
                let ctx = padded[i + 1 - n..i].to_vec();
                *counts.entry(ctx).or_default().entry(padded[i]).or_insert(0) += 1;
            }
        }
    }

    let mut lm = NGramLm {
        order,
        vocab_size: v,
        floor: config.floor_logprob,
        unigram: vec![f64::NEG_INFINITY; v],
        contexts: HashMap::new(),
    };

    let uni = &counts[&Vec::new()];
    let total: u64 = uni.values().sum();
    match config.smoothing {
        Smoothing::WittenBell => {
            let types = uni.len() as f64;
            let denom = total as f64 + types;
            for w in 0..v {
                let c = uni.get(&TokenId::from(w)).copied().unwrap_or(0) as f64;
                lm.unigram[w] = ((c + types / v as f64) / denom).ln();
            }
        }
        Smoothing::AddK(k) => {
            let denom = total as f64 + k * v as f64;
            for w in 0..v {
                let c = uni.get(&TokenId::from(w)).copied().unwrap_or(0) as f64;
                if c + k > 0.0 {
                    lm.unigram[w] = ((c + k) / denom).ln();
                }
            }
        }
    }

    // Contexts are estimated shortest first so lower-order conditionals are
    // available for interpolation.
    let mut keys: Vec<&Vec<TokenId>> = counts.keys().filter(|c| !c.is_empty()).collect();
    keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    for ctx in keys {
        let follow = &counts[ctx];
        let mut seen: Vec<(TokenId, u64)> = follow.iter().map(|(&t, &c)| (t, c)).collect();
        seen.sort_unstable();
        let c_total: u64 = seen.iter().map(|&(_, c)| c).sum();
        let entry = match config.smoothing {
            Smoothing::WittenBell => {
                let types = seen.len() as f64;
                let denom = c_total as f64 + types;
                let lower = &ctx[1..];
                let probs = seen
                    .iter()
                    .map(|&(t, c)| {
                        let p_low = lm.raw_logprob(lower, t).exp();
                        (t, ((c as f64 + types * p_low) / denom).ln())
                    })
                    .collect();
                ContextEntry {
                    backoff: Some((types / denom).ln()),
                    probs,
                }
            }
            Smoothing::AddK(k) if k > 0.0 => {
                let denom = c_total as f64 + k * v as f64;
                let probs = (0..v)
                    .map(|w| {
                        let t = TokenId::from(w);
                        let c = follow.get(&t).copied().unwrap_or(0) as f64;
                        (t, ((c + k) / denom).ln())
                    })
                    .collect();
                ContextEntry { backoff: None, probs }
            }
            Smoothing::AddK(_) => ContextEntry {
                // all mass is on seen events; unseen ones are unreachable
                backoff: Some(f64::NEG_INFINITY),
                probs: seen
                    .iter()
                    .map(|&(t, c)| (t, (c as f64 / c_total as f64).ln()))
                    .collect(),
            },
        };
        lm.contexts.insert(ctx.clone(), entry);
    }
    Ok(lm)
}
