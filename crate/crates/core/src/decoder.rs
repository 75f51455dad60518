//! Beam search over a [`FusionScorer`] with tag-grammar constraints, plus an
//! exhaustive search used as an optimality oracle on small problems.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::ObservationKey;
use crate::error::{Error, Result};
use crate::scorers::{FusionScorer, ScorerState, SpanTracker};
use crate::vocab::{TokenId, Vocab};

/// Largest search space [`exhaustive_decode`] accepts.
pub const MAX_EXHAUSTIVE: f64 = 1e6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthNorm {
    #[default]
    None,
    DivideByLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_len: usize,
    pub length_norm: LengthNorm,
    /// Enforce the `<ne> … </ne>` grammar during search.
    pub constraints: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 8,
            max_len: 64,
            length_norm: LengthNorm::None,
            constraints: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(Error::Config("beam_width and max_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Emitted tokens, without `<eos>`.
    pub tokens: Vec<TokenId>,
    /// Accumulated fused score, including the `<eos>` step once finished.
    pub score: f64,
    pub state: ScorerState,
    pub finished: bool,
}

impl Hypothesis {
    pub fn tracker(&self) -> &SpanTracker {
        self.state.tracker()
    }

    fn rank_score(&self, norm: LengthNorm) -> f64 {
        rank(self.score, self.tokens.len() + usize::from(self.finished), norm)
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub best: Hypothesis,
    /// Finished hypotheses, best first.
    pub nbest: Vec<Hypothesis>,
}

fn rank(score: f64, scored_tokens: usize, norm: LengthNorm) -> f64 {
    match norm {
        LengthNorm::None => score,
        LengthNorm::DivideByLength => score / scored_tokens.max(1) as f64,
    }
}

/// Higher score first, then lexicographically smaller token sequence.
fn better(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Sets to `-inf` the tokens the tag grammar forbids after `tracker`:
/// `</ne>` while closed, `<ne>` and `<eos>` while open.
pub fn tag_grammar_mask(tracker: &SpanTracker, row: &mut [f64], vocab: &Vocab) {
    mask_ids(tracker, row, vocab.ne_open(), vocab.ne_close(), vocab.eos());
}

fn mask_ids(tracker: &SpanTracker, row: &mut [f64], ne_open: TokenId, ne_close: TokenId, eos: TokenId) {
    if tracker.is_open() {
        row[ne_open.index()] = f64::NEG_INFINITY;
        row[eos.index()] = f64::NEG_INFINITY;
    } else {
        row[ne_close.index()] = f64::NEG_INFINITY;
    }
}

/// Grammar mask plus length budget: a span may only open if it can still
/// close within `max_len`, and an open span at the last slot must close.
fn scored_row(scorer: &FusionScorer, state: &ScorerState, constraints: bool, len: usize, max_len: usize) -> Vec<f64> {
    let mut row = scorer.row(state);
    if constraints {
        let tracker = state.tracker();
        mask_ids(tracker, &mut row, scorer.ne_open(), scorer.ne_close(), scorer.eos());
        if !tracker.is_open() && len + 2 > max_len {
            row[scorer.ne_open().index()] = f64::NEG_INFINITY;
        }
        if tracker.is_open() && len + 1 == max_len {
            let close = scorer.ne_close().index();
            for (w, r) in row.iter_mut().enumerate() {
                if w != close {
                    *r = f64::NEG_INFINITY;
                }
            }
        }
    }
    row
}

struct Candidate {
    parent: usize,
    token: TokenId,
    score: f64,
    rank: f64,
}

pub fn beam_decode(scorer: &FusionScorer, observation: &ObservationKey, config: &DecodeConfig) -> Result<DecodeOutput> {
    config.validate()?;
    let eos = scorer.eos();
    let norm = config.length_norm;
    let early_stop = scorer.scores_nonpositive() && norm == LengthNorm::None;

    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: scorer.init(observation)?,
        finished: false,
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();

    while !active.is_empty() {
        candidates.clear();
        for (parent, h) in active.iter().enumerate() {
            let row = scored_row(scorer, &h.state, config.constraints, h.tokens.len(), config.max_len);
            let can_extend = h.tokens.len() < config.max_len;
            for (w, &s) in row.iter().enumerate() {
                if s == f64::NEG_INFINITY || s.is_nan() {
                    continue;
                }
                let token = TokenId::from(w);
                if token != eos && !can_extend {
                    continue;
                }
                let score = h.score + s;
                candidates.push(Candidate {
                    parent,
                    token,
                    score,
                    rank: rank(score, h.tokens.len() + 1, norm),
                });
            }
        }
        if candidates.is_empty() {
            break;
        }

        let cmp = |a: &Candidate, b: &Candidate| {
            b.rank
                .total_cmp(&a.rank)
                .then_with(|| active[a.parent].tokens.cmp(&active[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        };
        if candidates.len() > config.beam_width {
            candidates.select_nth_unstable_by(config.beam_width - 1, cmp);
            candidates.truncate(config.beam_width);
        }
        candidates.sort_by(cmp);

        let mut next = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let parent = &active[c.parent];
            if c.token == eos {
                completed.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    score: c.score,
                    state: parent.state.clone(),
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(c.token);
                next.push(Hypothesis {
                    tokens,
                    score: c.score,
                    state: scorer.step(&parent.state, c.token),
                    finished: false,
                });
            }
        }
        active = next;

        if early_stop {
            let best_done = completed.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            let best_active = active.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_active {
                break;
            }
        }
    }

    completed.sort_by(|a, b| {
        better(a.rank_score(norm), &a.tokens, b.rank_score(norm), &b.tokens)
    });
    let best = match completed.first() {
        Some(h) => h.clone(),
        None => {
            active.sort_by(|a, b| better(a.rank_score(norm), &a.tokens, b.rank_score(norm), &b.tokens));
            active
                .into_iter()
                .next()
                .ok_or_else(|| Error::Decode(format!("{observation}: every extension has zero probability")))?
        }
    };
    Ok(DecodeOutput { best, nbest: completed })
}

/// Exact argmax of the total fused score over every complete sequence of at
/// most `max_len` tokens (tag-grammar-valid ones when `constraints` is set).
pub fn exhaustive_decode(
    scorer: &FusionScorer,
    observation: &ObservationKey,
    max_len: usize,
    constraints: bool,
) -> Result<Hypothesis> {
    let space = (scorer.vocab_size() as f64).powi(max_len as i32);
    if space > MAX_EXHAUSTIVE {
        return Err(Error::Decode(format!(
            "search space {space:.0} exceeds {MAX_EXHAUSTIVE:.0}"
        )));
    }
    let mut best: Option<Hypothesis> = None;
    let mut stack = vec![(Vec::new(), 0.0f64, scorer.init(observation)?)];
    let eos = scorer.eos();
    while let Some((tokens, score, state)) = stack.pop() {
        let row = scored_row(scorer, &state, constraints, tokens.len(), max_len);
        let done = score + row[eos.index()];
        if row[eos.index()] != f64::NEG_INFINITY {
            let replace = match &best {
                None => true,
                Some(b) => better(done, &tokens, b.score, &b.tokens) == Ordering::Less,
            };
            if replace {
                best = Some(Hypothesis {
                    tokens: tokens.clone(),
                    score: done,
                    state: state.clone(),
                    finished: true,
                });
            }
        }
        if tokens.len() < max_len {
            for (w, &s) in row.iter().enumerate() {
                let t = TokenId::from(w);
                if t == eos || s == f64::NEG_INFINITY || s.is_nan() {
                    continue;
                }
                let mut ext = tokens.clone();
                ext.push(t);
                stack.push((ext, score + s, scorer.step(&state, t)));
            }
        }
    }
    best.ok_or_else(|| Error::Decode(format!("{observation}: no complete sequence reachable")))
}
