//! Autoregressive language models.
//!
//! Every model scores `ln p(token | context)` where the context is the most
//! recent tokens consumed. [`LmState`] carries that context; models only look
//! at as much of it as their order allows.

mod arpa;
mod interpolate;
mod ngram;

use std::fmt::Debug;

pub use arpa::{parse_arpa, read_arpa, serialize_arpa, write_arpa};
pub use interpolate::{interpolate, Interpolated};
pub use ngram::{train_ngram, NGramLm, Smoothing, TrainConfig, DEFAULT_FLOOR_LOGPROB};

use crate::error::Result;
use crate::vocab::TokenId;

/// Conditioning history of an autoregressive model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct LmState {
    context: Vec<TokenId>,
}

impl LmState {
    pub fn context(&self) -> &[TokenId] {
        &self.context
    }
}

pub trait LanguageModel: Send + Sync + Debug {
    fn vocab_size(&self) -> usize;

    /// Number of most recent tokens the model conditions on.
    fn context_len(&self) -> usize;

    fn floor_logprob(&self) -> f64;

    /// `ln p(token | context)`, `-inf` for events with no backoff path.
    /// `context` may be longer than [`context_len`](Self::context_len).
    fn raw_logprob(&self, context: &[TokenId], token: TokenId) -> f64;

    fn raw_row(&self, context: &[TokenId]) -> Vec<f64> {
        (0..self.vocab_size())
            .map(|w| self.raw_logprob(context, TokenId::from(w)))
            .collect()
    }

    fn initial_state(&self) -> LmState {
        LmState::default()
    }

    fn advance(&self, state: &LmState, token: TokenId) -> LmState {
        let keep = self.context_len();
        let mut context = Vec::with_capacity(keep.min(state.context.len() + 1));
        let ctx = &state.context;
        let skip = (ctx.len() + 1).saturating_sub(keep);
        if skip <= ctx.len() {
            context.extend_from_slice(&ctx[skip..]);
            if keep > 0 {
                context.push(token);
            }
        }
        LmState { context }
    }

    fn logprob(&self, state: &LmState, token: TokenId) -> f64 {
        floored(self.raw_logprob(&state.context, token), self.floor_logprob())
    }

    fn row(&self, state: &LmState) -> Vec<f64> {
        let floor = self.floor_logprob();
        let mut row = self.raw_row(&state.context);
        for v in &mut row {
            *v = floored(*v, floor);
        }
        row
    }
}

#[inline]
pub(crate) fn floored(v: f64, floor: f64) -> f64 {
    if v == f64::NEG_INFINITY {
        floor
    } else {
        v
    }
}

/// Range-checked [`LanguageModel::logprob`].
pub fn lm_logprob(lm: &dyn LanguageModel, state: &LmState, token: TokenId) -> Result<f64> {
    check_token(lm.vocab_size(), token)?;
    Ok(lm.logprob(state, token))
}

/// Range-checked [`LanguageModel::advance`].
pub fn lm_advance(lm: &dyn LanguageModel, state: &LmState, token: TokenId) -> Result<LmState> {
    check_token(lm.vocab_size(), token)?;
    Ok(lm.advance(state, token))
}

fn check_token(size: usize, token: TokenId) -> Result<()> {
    if token.index() < size {
        Ok(())
    } else {
        Err(crate::Error::TokenOutOfRange {
            id: token.index(),
            size,
        })
    }
}

/// Total probability mass the model assigns after `state`, counting only
/// reachable events.
pub fn context_mass(lm: &dyn LanguageModel, state: &LmState) -> f64 {
    lm.raw_row(&state.context).iter().map(|v| v.exp()).sum()
}

/// Log-probability of a whole sequence, including the terminating `eos`.
pub fn sequence_logprob(lm: &dyn LanguageModel, tokens: &[TokenId], eos: TokenId) -> f64 {
    let mut state = lm.initial_state();
    let mut total = 0.0;
    for &t in tokens.iter().chain(std::iter::once(&eos)) {
        total += lm.logprob(&state, t);
        state = lm.advance(&state, t);
    }
    total
}
