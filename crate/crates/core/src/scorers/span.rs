use serde::{Deserialize, Serialize};

use crate::vocab::{TokenId, Vocab};

/// Open-tag bookkeeping for a partial hypothesis.
///
/// `open` is true after consuming `<ne>` and until `</ne>` is consumed, so a
/// token is inside a span exactly when the tracker *before* it is open. The
/// closing tag itself is therefore scored as an in-span token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanTracker {
    open: bool,
    begin: usize,
    entity_count: usize,
    position: usize,
}

impl SpanTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    /// Position of the most recent `<ne>` while a span is open.
    pub fn span_begin(&self) -> Option<usize> {
        self.open.then_some(self.begin)
    }

    /// Number of spans closed so far.
    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    /// Number of tokens consumed.
    pub fn position(&self) -> usize {
        self.position
    }

    /// A `<ne>` while already open restarts the span at the new position; a
    /// `</ne>` while closed is ignored. Neither occurs under the tag grammar.
    #[must_use]
    pub fn consume(&self, token: TokenId, vocab: &Vocab) -> SpanTracker {
        self.consume_tags(token, vocab.ne_open(), vocab.ne_close())
    }

    #[must_use]
    pub(crate) fn consume_tags(&self, token: TokenId, ne_open: TokenId, ne_close: TokenId) -> SpanTracker {
        let mut next = *self;
        if token == ne_open {
            next.open = true;
            next.begin = self.position;
        } else if token == ne_close && self.open {
            next.open = false;
            next.entity_count += 1;
        }
        next.position += 1;
        next
    }
}
