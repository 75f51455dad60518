//! Autoregressive scorers: emulated end-to-end posteriors and the fusion
//! rules that combine them with external language models.
//!
//! Every fusion mode is a per-token rule on log scores:
//!
//! | mode  | in-span token                                   | other token        |
//! |-------|-------------------------------------------------|--------------------|
//! | plain | `log p_e2e`                                     | `log p_e2e`        |
//! | sf    | `log p_e2e + β·log q`                           | same               |
//! | dr    | `log p_e2e − α·log p_ID + β·log q`              | same               |
//! | csf   | `log p_e2e + β·log q_NE`                        | `log p_e2e`        |
//! | cdr   | `log p_e2e − α·log p_ID + β·log q_NE`           | `log p_e2e`        |
//!
//! A token is in-span when a `<ne>` has been consumed and not yet closed; the
//! closing `</ne>` is in-span, the opening `<ne>` is not. The ID model always
//! sees the full history. The NE model restarts at each `<ne>` and sees only
//! the span so far.

mod enumerable;
mod span;
mod tabular;

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use enumerable::{
    build_enumerable, ChannelParams, EnumerablePosterior, ExactLm, PriorParams, MAX_ENUMERATION,
};
pub use span::SpanTracker;
pub use tabular::{EvidenceRow, TabularE2E};

use crate::corpus::ObservationKey;
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LmState};
use crate::vocab::{TokenId, Vocab};

/// Decoding state of an [`E2eModel`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct E2eState {
    pub(crate) obs: usize,
    pub(crate) position: usize,
    pub(crate) history: LmState,
}

impl E2eState {
    pub fn position(&self) -> usize {
        self.position
    }
}

/// Stand-in for `p_e2e(y_t | y_<t, x)`.
pub trait E2eModel: Send + Sync + Debug {
    fn vocab_size(&self) -> usize;

    fn init(&self, observation: &ObservationKey) -> Result<E2eState>;

    fn step(&self, state: &E2eState, token: TokenId) -> E2eState;

    /// Normalized log-distribution over the next token.
    fn row(&self, state: &E2eState) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Plain,
    Sf,
    Dr,
    Csf,
    Cdr,
}

impl FusionMode {
    pub fn is_contextual(self) -> bool {
        matches!(self, FusionMode::Csf | FusionMode::Cdr)
    }

    fn uses_id(self) -> bool {
        matches!(self, FusionMode::Dr | FusionMode::Cdr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Plain => "plain",
            FusionMode::Sf => "sf",
            FusionMode::Dr => "dr",
            FusionMode::Csf => "csf",
            FusionMode::Cdr => "cdr",
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "plain" => FusionMode::Plain,
            "sf" => FusionMode::Sf,
            "dr" => FusionMode::Dr,
            "csf" => FusionMode::Csf,
            "cdr" => FusionMode::Cdr,
            _ => return Err(Error::Config(format!("unknown fusion mode {s:?}"))),
        })
    }
}

/// Fusion mode and LM weights. `alpha` weighs the subtracted ID model,
/// `beta` the added biasing model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Cdr,
            alpha: 0.1,
            beta: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn new(mode: FusionMode, alpha: f64, beta: f64) -> Self {
        FusionConfig { mode, alpha, beta }
    }

    pub fn plain() -> Self {
        FusionConfig::new(FusionMode::Plain, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "alpha and beta must be finite and non-negative (got {}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// `weight · logp`, with a zero weight contributing nothing even when the
/// log-probability is infinite.
#[inline]
fn weighted(weight: f64, logp: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * logp
    }
}

#[inline]
fn dr_token(e2e: f64, id: f64, ood: f64, alpha: f64, beta: f64) -> f64 {
    if e2e == f64::NEG_INFINITY {
        return e2e;
    }
    e2e - weighted(alpha, id) + weighted(beta, ood)
}

#[inline]
fn sf_token(e2e: f64, ood: f64, beta: f64) -> f64 {
    if e2e == f64::NEG_INFINITY {
        return e2e;
    }
    e2e + weighted(beta, ood)
}

/// Elementwise `log p_e2e − α·log p_ID + β·log q_OOD`.
pub fn fuse_dr(e2e: &[f64], id: &[f64], ood: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    if e2e.len() != id.len() || e2e.len() != ood.len() {
        return Err(Error::Scorer(format!(
            "row length mismatch: e2e {}, id {}, ood {}",
            e2e.len(),
            id.len(),
            ood.len()
        )));
    }
    Ok(e2e
        .iter()
        .zip(id)
        .zip(ood)
        .map(|((&e, &i), &o)| dr_token(e, i, o, alpha, beta))
        .collect())
}

/// Score of one token under contextual fusion.
///
/// `ne_anchor` is the position at which the NE state feeding `ne_row` was
/// reset; it must equal the tracker's open-span start.
#[allow(clippy::too_many_arguments)]
pub fn fuse_contextual(
    e2e: &[f64],
    id: &[f64],
    ne: &[f64],
    tracker: &SpanTracker,
    ne_anchor: Option<usize>,
    token: TokenId,
    alpha: f64,
    beta: f64,
    mode: FusionMode,
) -> Result<f64> {
    if !mode.is_contextual() {
        return Err(Error::Scorer(format!("{mode} is not a contextual mode")));
    }
    let w = token.index();
    if w >= e2e.len() || e2e.len() != id.len() || e2e.len() != ne.len() {
        return Err(Error::Scorer("row length mismatch".into()));
    }
    if !tracker.is_open() {
        return Ok(e2e[w]);
    }
    if ne_anchor != tracker.span_begin() {
        return Err(Error::Scorer(format!(
            "stale NE state: reset at {ne_anchor:?}, span opened at {:?}",
            tracker.span_begin()
        )));
    }
    Ok(match mode {
        FusionMode::Cdr => dr_token(e2e[w], id[w], ne[w], alpha, beta),
        _ => sf_token(e2e[w], ne[w], beta),
    })
}

/// Per-hypothesis state of a [`FusionScorer`]. Cloning forks a hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerState {
    e2e: E2eState,
    id: LmState,
    bias: LmState,
    ne_anchor: Option<usize>,
    tracker: SpanTracker,
}

impl ScorerState {
    pub fn tracker(&self) -> &SpanTracker {
        &self.tracker
    }

    pub fn e2e(&self) -> &E2eState {
        &self.e2e
    }
}

/// An E2E model combined with optional ID and biasing LMs under a
/// [`FusionConfig`].
///
/// The biasing LM is `q_OOD` in `sf`/`dr` mode and `q_NE` in `csf`/`cdr`
/// mode. Contextual modes without a biasing LM score every token with the
/// E2E model alone.
#[derive(Debug, Clone)]
pub struct FusionScorer {
    e2e: Arc<dyn E2eModel>,
    id_lm: Option<Arc<dyn LanguageModel>>,
    bias_lm: Option<Arc<dyn LanguageModel>>,
    config: FusionConfig,
    ne_open: TokenId,
    ne_close: TokenId,
    eos: TokenId,
}

impl FusionScorer {
    pub fn new(
        vocab: &Vocab,
        e2e: Arc<dyn E2eModel>,
        id_lm: Option<Arc<dyn LanguageModel>>,
        bias_lm: Option<Arc<dyn LanguageModel>>,
        config: FusionConfig,
    ) -> Result<Self> {
        config.validate()?;
        let v = vocab.len();
        if e2e.vocab_size() != v {
            return Err(Error::Scorer(format!("E2E vocabulary {} != {v}", e2e.vocab_size())));
        }
        for lm in id_lm.iter().chain(bias_lm.iter()) {
            if lm.vocab_size() != v {
                return Err(Error::Scorer(format!("LM vocabulary {} != {v}", lm.vocab_size())));
            }
        }
        let mode = config.mode;
        if mode.uses_id() && id_lm.is_none() && (mode == FusionMode::Dr || bias_lm.is_some()) {
            return Err(Error::Scorer(format!("{mode} mode requires an ID language model")));
        }
        if matches!(mode, FusionMode::Sf | FusionMode::Dr) && bias_lm.is_none() {
            return Err(Error::Scorer(format!("{mode} mode requires an external language model")));
        }
        Ok(FusionScorer {
            e2e,
            id_lm,
            bias_lm,
            config,
            ne_open: vocab.ne_open(),
            ne_close: vocab.ne_close(),
            eos: vocab.eos(),
        })
    }

    pub fn plain(vocab: &Vocab, e2e: Arc<dyn E2eModel>) -> Result<Self> {
        FusionScorer::new(vocab, e2e, None, None, FusionConfig::plain())
    }

    pub fn config(&self) -> FusionConfig {
        self.config
    }

    pub fn e2e(&self) -> &Arc<dyn E2eModel> {
        &self.e2e
    }

    pub fn id_lm(&self) -> Option<&Arc<dyn LanguageModel>> {
        self.id_lm.as_ref()
    }

    pub fn bias_lm(&self) -> Option<&Arc<dyn LanguageModel>> {
        self.bias_lm.as_ref()
    }

    pub fn vocab_size(&self) -> usize {
        self.e2e.vocab_size()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn ne_open(&self) -> TokenId {
        self.ne_open
    }

    pub fn ne_close(&self) -> TokenId {
        self.ne_close
    }

    /// True when no token score can be positive, so a hypothesis score never
    /// grows as it is extended.
    pub fn scores_nonpositive(&self) -> bool {
        !self.config.mode.uses_id() || self.config.alpha == 0.0 || self.id_lm.is_none()
    }

    fn active_id(&self) -> Option<&Arc<dyn LanguageModel>> {
        match self.config.mode {
            FusionMode::Dr | FusionMode::Cdr if self.config.alpha != 0.0 => self.id_lm.as_ref(),
            _ => None,
        }
    }

    fn active_bias(&self) -> Option<&Arc<dyn LanguageModel>> {
        match self.config.mode {
            FusionMode::Plain => None,
            _ if self.config.beta == 0.0 && !self.config.mode.uses_id() => None,
            _ => self.bias_lm.as_ref(),
        }
    }

    pub fn init(&self, observation: &ObservationKey) -> Result<ScorerState> {
        Ok(ScorerState {
            e2e: self.e2e.init(observation)?,
            id: LmState::default(),
            bias: LmState::default(),
            ne_anchor: None,
            tracker: SpanTracker::new(),
        })
    }

    pub fn step(&self, state: &ScorerState, token: TokenId) -> ScorerState {
        let e2e = self.e2e.step(&state.e2e, token);
        let id = match self.active_id() {
            Some(lm) => lm.advance(&state.id, token),
            None => LmState::default(),
        };
        let mut ne_anchor = state.ne_anchor;
        let bias = match self.active_bias() {
            None => LmState::default(),
            Some(lm) if !self.config.mode.is_contextual() => lm.advance(&state.bias, token),
            Some(lm) => {
                if token == self.ne_open {
                    ne_anchor = Some(state.tracker.position());
                    lm.advance(&lm.initial_state(), token)
                } else if state.tracker.is_open() && token != self.ne_close {
                    lm.advance(&state.bias, token)
                } else {
                    ne_anchor = None;
                    LmState::default()
                }
            }
        };
        ScorerState {
            e2e,
            id,
            bias,
            ne_anchor,
            tracker: state.tracker.consume_tags(token, self.ne_open, self.ne_close),
        }
    }

    /// Fused score of every candidate next token.
    pub fn row(&self, state: &ScorerState) -> Vec<f64> {
        let mut row = self.e2e.row(&state.e2e);
        let cfg = self.config;
        let (id_lm, bias_lm) = (self.active_id(), self.active_bias());
        let fused = match cfg.mode {
            FusionMode::Plain => false,
            FusionMode::Sf | FusionMode::Dr => true,
            FusionMode::Csf | FusionMode::Cdr => state.tracker.is_open() && bias_lm.is_some(),
        };
        if !fused {
            return row;
        }
        if let Some(lm) = bias_lm {
            let q = lm.row(&state.bias);
            for (r, &lq) in row.iter_mut().zip(&q) {
                *r = sf_token(*r, lq, cfg.beta);
            }
        }
        if let Some(lm) = id_lm {
            let p = lm.row(&state.id);
            for (r, &lp) in row.iter_mut().zip(&p) {
                // sf_token already passed -inf through; subtracting keeps it
                if *r != f64::NEG_INFINITY {
                    *r -= weighted(cfg.alpha, lp);
                }
            }
        }
        row
    }

    /// Per-token scores of a complete sequence (terminating `<eos>` included)
    /// from fresh states.
    pub fn token_scores(&self, observation: &ObservationKey, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let mut state = self.init(observation)?;
        let mut out = Vec::with_capacity(tokens.len() + 1);
        for &t in tokens.iter().chain(std::iter::once(&self.eos)) {
            out.push(self.row(&state)[t.index()]);
            state = self.step(&state, t);
        }
        Ok(out)
    }

    pub fn sequence_score(&self, observation: &ObservationKey, tokens: &[TokenId]) -> Result<f64> {
        Ok(self.token_scores(observation, tokens)?.iter().sum())
    }
}
