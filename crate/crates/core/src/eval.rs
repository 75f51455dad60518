//! Alignment-based scoring: overall WER, WER inside reference tags (WERT)
//! and span-level tag precision/recall.
//!
//! Overall WER is computed on tag-stripped sequences. WERT and tag P/R use a
//! tag-inclusive alignment in which tags are ordinary tokens. Corpus figures
//! are always derived from summed counts.

use std::ops::AddAssign;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::{extract_spans, strip_tags, Span};
use crate::vocab::{TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Match,
    Substitute,
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignOp {
    pub kind: OpKind,
    pub ref_idx: Option<usize>,
    pub hyp_idx: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<AlignOp>,
}

impl Alignment {
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|o| o.kind != OpKind::Match).count()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.ops.iter().filter(|o| o.kind == kind).count()
    }
}

/// Minimal unit-cost alignment. On ties the traceback (from the end)
/// prefers match, then substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * w + j - 1];
            if reference[i - 1] == hyp[j - 1] && here == diag {
                ops.push(AlignOp { kind: OpKind::Match, ref_idx: Some(i - 1), hyp_idx: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
            if here == diag + 1 && reference[i - 1] != hyp[j - 1] {
                ops.push(AlignOp { kind: OpKind::Substitute, ref_idx: Some(i - 1), hyp_idx: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(AlignOp { kind: OpKind::Delete, ref_idx: Some(i - 1), hyp_idx: None });
            i -= 1;
        } else {
            ops.push(AlignOp { kind: OpKind::Insert, ref_idx: None, hyp_idx: Some(j - 1) });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

/// Errors and reference length for one utterance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCount {
    pub errors: usize,
    pub words: usize,
}

impl ErrorCount {
    /// Percentage, `None` when there are no reference words.
    pub fn percent(&self) -> Option<f64> {
        (self.words > 0).then(|| 100.0 * self.errors as f64 / self.words as f64)
    }
}

/// Overall WER counts on tag-stripped sequences.
pub fn wer(reference: &[TokenId], hyp: &[TokenId], vocab: &Vocab) -> Result<ErrorCount> {
    let (r, _) = strip_tags(reference, vocab)?;
    let (h, _) = strip_tags(hyp, vocab)?;
    Ok(ErrorCount {
        errors: align(&r, &h).cost(),
        words: r.len(),
    })
}

fn span_of(spans: &[Span], i: usize) -> Option<usize> {
    spans.iter().position(|s| s.contains_content(i))
}

/// Errors attributed to reference words strictly inside reference spans.
///
/// Substitutions and deletions count when their reference word is inside a
/// span. An insertion counts only when the nearest reference positions on
/// both sides of it are inside the same span. Errors on tag tokens are never
/// counted.
pub fn wert_counts(alignment: &Alignment, ref_spans: &[Span]) -> ErrorCount {
    let ops = &alignment.ops;
    let mut next_ref = vec![None; ops.len()];
    let mut upcoming = None;
    for (k, op) in ops.iter().enumerate().rev() {
        next_ref[k] = upcoming;
        if op.ref_idx.is_some() {
            upcoming = op.ref_idx;
        }
    }
    let mut errors = 0;
    let mut prev_ref = None;
    for (k, op) in ops.iter().enumerate() {
        match op.kind {
            OpKind::Match => {}
            OpKind::Substitute | OpKind::Delete => {
                if span_of(ref_spans, op.ref_idx.expect("ref side")).is_some() {
                    errors += 1;
                }
            }
            OpKind::Insert => {
                let left = prev_ref.and_then(|i| span_of(ref_spans, i));
                let right = next_ref[k].and_then(|i| span_of(ref_spans, i));
                if left.is_some() && left == right {
                    errors += 1;
                }
            }
        }
        if op.ref_idx.is_some() {
            prev_ref = op.ref_idx;
        }
    }
    ErrorCount {
        errors,
        words: ref_spans.iter().map(|s| s.end - s.begin - 1).sum(),
    }
}

pub fn wert(reference: &[TokenId], hyp: &[TokenId], vocab: &Vocab) -> Result<ErrorCount> {
    let spans = extract_spans(reference, vocab)?;
    extract_spans(hyp, vocab)?;
    Ok(wert_counts(&align(reference, hyp), &spans))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanMatch {
    /// Spans match when at least one content word of each is aligned.
    #[default]
    Overlap,
    /// Both tags of the hypothesis span align to the reference tags.
    Exact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub true_positives: usize,
    pub predicted: usize,
    pub reference: usize,
}

impl TagCounts {
    /// Precision in percent; 100 with `flagged = true` when nothing was
    /// predicted.
    pub fn precision(&self) -> (f64, bool) {
        if self.predicted == 0 {
            (100.0, true)
        } else {
            (100.0 * self.true_positives as f64 / self.predicted as f64, false)
        }
    }

    pub fn recall(&self) -> Option<f64> {
        (self.reference > 0).then(|| 100.0 * self.true_positives as f64 / self.reference as f64)
    }
}

/// One-to-one span matching over a tag-inclusive alignment, greedily by
/// largest number of aligned content-word pairs.
pub fn tag_prf(ref_spans: &[Span], hyp_spans: &[Span], alignment: &Alignment, criterion: SpanMatch) -> TagCounts {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (ri, r) in ref_spans.iter().enumerate() {
        for (hi, h) in hyp_spans.iter().enumerate() {
            let overlap = alignment
                .ops
                .iter()
                .filter(|op| match (op.ref_idx, op.hyp_idx) {
                    (Some(i), Some(j)) => r.contains_content(i) && h.contains_content(j),
                    _ => false,
                })
                .count();
            let qualifies = match criterion {
                SpanMatch::Overlap => overlap >= 1,
                SpanMatch::Exact => {
                    let aligned = |i: usize, j: usize| {
                        alignment.ops.iter().any(|op| {
                            op.kind == OpKind::Match && op.ref_idx == Some(i) && op.hyp_idx == Some(j)
                        })
                    };
                    aligned(r.begin, h.begin) && aligned(r.end, h.end)
                }
            };
            if qualifies {
                pairs.push((overlap, ri, hi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_r = vec![false; ref_spans.len()];
    let mut used_h = vec![false; hyp_spans.len()];
    let mut tp = 0;
    for (_, ri, hi) in pairs {
        if !used_r[ri] && !used_h[hi] {
            used_r[ri] = true;
            used_h[hi] = true;
            tp += 1;
        }
    }
    TagCounts {
        true_positives: tp,
        predicted: hyp_spans.len(),
        reference: ref_spans.len(),
    }
}

/// Summable per-utterance or corpus counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub utterances: usize,
    pub ref_words: usize,
    pub errors: usize,
    pub in_tag_ref_words: usize,
    pub in_tag_errors: usize,
    pub tag_tp: usize,
    pub tag_fp: usize,
    pub tag_fn: usize,
    /// Utterances with an empty reference but a non-empty hypothesis; they
    /// are excluded from the WER aggregate.
    pub undefined_wer: usize,
}

impl AddAssign for EvalCounts {
    fn add_assign(&mut self, o: Self) {
        self.utterances += o.utterances;
        self.ref_words += o.ref_words;
        self.errors += o.errors;
        self.in_tag_ref_words += o.in_tag_ref_words;
        self.in_tag_errors += o.in_tag_errors;
        self.tag_tp += o.tag_tp;
        self.tag_fp += o.tag_fp;
        self.tag_fn += o.tag_fn;
        self.undefined_wer += o.undefined_wer;
    }
}

pub fn evaluate_utterance(reference: &[TokenId], hyp: &[TokenId], vocab: &Vocab, criterion: SpanMatch) -> Result<EvalCounts> {
    let ref_spans = extract_spans(reference, vocab)?;
    let hyp_spans = extract_spans(hyp, vocab)?;
    let overall = wer(reference, hyp, vocab)?;
    let alignment = align(reference, hyp);
    let in_tag = wert_counts(&alignment, &ref_spans);
    let tags = tag_prf(&ref_spans, &hyp_spans, &alignment, criterion);

    let undefined = overall.words == 0 && overall.errors > 0;
    Ok(EvalCounts {
        utterances: 1,
        ref_words: overall.words,
        errors: if undefined { 0 } else { overall.errors },
        in_tag_ref_words: in_tag.words,
        in_tag_errors: in_tag.errors,
        tag_tp: tags.true_positives,
        tag_fp: tags.predicted - tags.true_positives,
        tag_fn: tags.reference - tags.true_positives,
        undefined_wer: usize::from(undefined),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub wer: Option<f64>,
    pub wert: Option<f64>,
    pub tag_precision: f64,
    /// Set when no spans were predicted and precision defaults to 100.
    pub tag_precision_flagged: bool,
    pub tag_recall: Option<f64>,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn from_counts(system: impl Into<String>, counts: EvalCounts) -> Self {
        let tags = TagCounts {
            true_positives: counts.tag_tp,
            predicted: counts.tag_tp + counts.tag_fp,
            reference: counts.tag_tp + counts.tag_fn,
        };
        let (p, flagged) = tags.precision();
        EvalReport {
            system: system.into(),
            wer: ErrorCount { errors: counts.errors, words: counts.ref_words }.percent(),
            wert: ErrorCount { errors: counts.in_tag_errors, words: counts.in_tag_ref_words }.percent(),
            tag_precision: p,
            tag_precision_flagged: flagged,
            tag_recall: tags.recall(),
            counts,
        }
    }

    pub const TSV_HEADER: &'static str = "system\tWER\tWERT\ttag_P\ttag_R";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.system,
            fmt_pct(self.wer),
            fmt_pct(self.wert),
            fmt_pct(Some(self.tag_precision)),
            fmt_pct(self.tag_recall)
        )
    }
}

pub fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "NA".into(),
    }
}

/// Writes `reports` as TSV to `path` and their counts as JSON to
/// `<path>.counts.json`.
pub fn write_reports(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut tsv = String::from(EvalReport::TSV_HEADER);
    tsv.push('\n');
    for r in reports {
        tsv.push_str(&r.tsv_row());
        tsv.push('\n');
    }
    crate::corpus::write_file(path, tsv.as_bytes())?;
    let sidecar = serde_json::to_vec_pretty(reports).map_err(|e| Error::Internal(e.to_string()))?;
    crate::corpus::write_file(&counts_path(path), &sidecar)
}

pub fn counts_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".counts.json");
    s.into()
}
