//! Named-entity tag spans over token sequences.
//!
//! Tags are ordinary vocabulary items. The only grammar enforced here is that
//! `<ne>`/`</ne>` pairs are balanced and never nested.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::TagError;
use crate::vocab::{TokenId, Vocab};

/// Positions of a `<ne>` token and its matching `</ne>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    /// Indices of the tokens strictly between the two tags.
    pub fn content(&self) -> Range<usize> {
        self.begin + 1..self.end
    }

    pub fn contains_content(&self, i: usize) -> bool {
        i > self.begin && i < self.end
    }
}

pub fn extract_spans(seq: &[TokenId], vocab: &Vocab) -> Result<Vec<Span>, TagError> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &tok) in seq.iter().enumerate() {
        if tok == vocab.ne_open() {
            if open.is_some() {
                return Err(TagError::Nested(i));
            }
            open = Some(i);
        } else if tok == vocab.ne_close() {
            match open.take() {
                Some(begin) => spans.push(Span { begin, end: i }),
                None => return Err(TagError::UnmatchedClose(i)),
            }
        }
    }
    match open {
        Some(b) => Err(TagError::Unclosed(b)),
        None => Ok(spans),
    }
}

pub fn validate_tags(seq: &[TokenId], vocab: &Vocab) -> Result<(), TagError> {
    extract_spans(seq, vocab).map(|_| ())
}

/// Removes tag tokens, returning the stripped sequence and the half-open
/// ranges the span contents occupy in it.
pub fn strip_tags(
    seq: &[TokenId],
    vocab: &Vocab,
) -> Result<(Vec<TokenId>, Vec<Range<usize>>), TagError> {
    let spans = extract_spans(seq, vocab)?;
    let mut out = Vec::with_capacity(seq.len());
    let mut ranges = Vec::with_capacity(spans.len());
    let mut start = 0;
    for &tok in seq {
        if tok == vocab.ne_open() {
            start = out.len();
        } else if tok == vocab.ne_close() {
            ranges.push(start..out.len());
        } else {
            out.push(tok);
        }
    }
    Ok((out, ranges))
}

/// Inverse of [`strip_tags`]: wraps each range of `stripped` in tags.
/// Ranges must be in the order `strip_tags` returns them.
pub fn insert_tag_ranges(stripped: &[TokenId], ranges: &[Range<usize>], vocab: &Vocab) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(stripped.len() + 2 * ranges.len());
    let mut next = 0;
    let mut open_end: Option<usize> = None;
    for i in 0..=stripped.len() {
        if open_end == Some(i) {
            out.push(vocab.ne_close());
            open_end = None;
        }
        while let Some(r) = ranges.get(next).filter(|r| r.start == i) {
            out.push(vocab.ne_open());
            next += 1;
            if r.end == i {
                out.push(vocab.ne_close());
            } else {
                open_end = Some(r.end);
                break;
            }
        }
        if let Some(&tok) = stripped.get(i) {
            out.push(tok);
        }
    }
    out
}
