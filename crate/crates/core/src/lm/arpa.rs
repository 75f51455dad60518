//! ARPA-style text serialization.
//!
//! Probabilities and backoff weights are written as `log10`. A zero backoff
//! weight (all mass on listed events) is written as `-99`, and any value at or
//! below `-99` reads back as zero.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::ngram::{NGramLm, DEFAULT_FLOOR_LOGPROB};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

const LOG10_ZERO: f64 = -99.0;

fn to_log10(ln: f64) -> f64 {
    if ln == f64::NEG_INFINITY {
        LOG10_ZERO
    } else {
        ln / std::f64::consts::LN_10
    }
}

fn from_log10(l: f64) -> f64 {
    if l <= LOG10_ZERO {
        f64::NEG_INFINITY
    } else {
        l * std::f64::consts::LN_10
    }
}

pub fn serialize_arpa(lm: &NGramLm, vocab: &Vocab) -> String {
    // n-grams per order as (tokens, ln p)
    let mut by_order: Vec<Vec<(Vec<TokenId>, f64)>> = vec![Vec::new(); lm.order];
    for (w, &p) in lm.unigram.iter().enumerate() {
        if p.is_finite() {
            by_order[0].push((vec![TokenId::from(w)], p));
        }
    }
    for (ctx, e) in &lm.contexts {
        for &(t, p) in &e.probs {
            let mut g = ctx.clone();
            g.push(t);
            by_order[g.len() - 1].push((g, p));
        }
    }

    let mut out = String::new();
    out.push_str("\\data\\\n");
    for (n, grams) in by_order.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", n + 1, grams.len());
    }
    for (n, grams) in by_order.iter_mut().enumerate() {
        grams.sort_by(|a, b| a.0.cmp(&b.0));
        let _ = write!(out, "\n\\{}-grams:\n", n + 1);
        for (g, p) in grams.iter() {
            let words: Vec<&str> = g.iter().map(|&t| vocab.token(t)).collect();
            let _ = write!(out, "{}\t{}", to_log10(*p), words.join(" "));
            if n + 1 < lm.order {
                if let Some(bow) = lm.backoff(g) {
                    let _ = write!(out, "\t{}", to_log10(bow));
                }
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

pub fn write_arpa(lm: &NGramLm, vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
    crate::corpus::write_file(path.as_ref(), serialize_arpa(lm, vocab).as_bytes())
}

pub fn read_arpa(path: impl AsRef<Path>, vocab: &Vocab) -> Result<NGramLm> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arpa(&text, vocab).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::parse(path, line, msg),
        other => other,
    })
}

pub fn parse_arpa(text: &str, vocab: &Vocab) -> Result<NGramLm> {
    let err = |line: usize, msg: String| Error::parse("<arpa>", line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));

    // anything before \data\ is a free-form header
    loop {
        match lines.next() {
            Some((_, "\\data\\")) => break,
            Some(_) => continue,
            None => return Err(err(0, "missing \\data\\ header".into())),
        }
    }

    let mut declared: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, &str)> = None;
    for (ln, line) in lines.by_ref() {
        if line.is_empty() {
            continue;
        }
        let Some(rest) = line.strip_prefix("ngram ") else {
            pending = Some((ln, line));
            break;
        };
        let (n, c) = rest
            .split_once('=')
            .ok_or_else(|| err(ln, format!("malformed count line {line:?}")))?;
        let n: usize = n.trim().parse().map_err(|_| err(ln, format!("bad order in {line:?}")))?;
        let c: usize = c.trim().parse().map_err(|_| err(ln, format!("bad count in {line:?}")))?;
        if n != declared.len() + 1 {
            return Err(err(ln, format!("expected ngram {} count, found {n}", declared.len() + 1)));
        }
        declared.push(c);
    }
    let order = declared.len();
    if order == 0 {
        return Err(err(0, "no ngram counts declared".into()));
    }

    let v = vocab.len();
    let mut lm = NGramLm {
        order,
        vocab_size: v,
        floor: DEFAULT_FLOOR_LOGPROB,
        unigram: vec![f64::NEG_INFINITY; v],
        contexts: HashMap::new(),
    };
    let mut backoffs: Vec<(Vec<TokenId>, f64)> = Vec::new();
    let mut section = 0usize;
    let mut listed = vec![0usize; order];
    let mut ended = false;

    let rest = pending.into_iter().chain(lines);
    for (ln, line) in rest {
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            ended = true;
            break;
        }
        if let Some(hdr) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
            let n: usize = hdr.parse().map_err(|_| err(ln, format!("malformed section header {line:?}")))?;
            if n != section + 1 || n > order {
                return Err(err(ln, format!("unexpected section \\{n}-grams:")));
            }
            if section > 0 && listed[section - 1] != declared[section - 1] {
                return Err(count_mismatch(ln, section, declared[section - 1], listed[section - 1]));
            }
            section = n;
            continue;
        }
        if section == 0 || line.starts_with('\\') {
            return Err(err(ln, format!("unexpected line {line:?}")));
        }
        let mut cols = line.split('\t');
        let prob: f64 = cols
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| err(ln, "bad probability column".into()))?;
        let words: Vec<&str> = cols
            .next()
            .ok_or_else(|| err(ln, "missing token column".into()))?
            .split(' ')
            .filter(|w| !w.is_empty())
            .collect();
        if words.len() != section {
            return Err(err(ln, format!("{}-gram listed in \\{section}-grams: section", words.len())));
        }
        let gram = vocab.encode(&words, false).map_err(|e| err(ln, e.to_string()))?;
        let bow = match cols.next() {
            Some(c) if section < order => Some(
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| err(ln, "bad backoff column".into()))?,
            ),
            Some(_) => return Err(err(ln, "backoff column at highest order".into())),
            None => None,
        };
        if cols.next().is_some() {
            return Err(err(ln, "too many columns".into()));
        }
        if !(prob <= 0.0) || prob <= LOG10_ZERO {
            return Err(err(ln, format!("probability {prob} out of range")));
        }
        let p = from_log10(prob);
        let (token, ctx) = gram.split_last().expect("section >= 1");
        if ctx.is_empty() {
            lm.unigram[token.index()] = p;
        } else {
            lm.contexts.entry(ctx.to_vec()).or_default().probs.push((*token, p));
        }
        if let Some(b) = bow {
            backoffs.push((gram, from_log10(b)));
        }
        listed[section - 1] += 1;
    }

    if !ended {
        return Err(err(0, "missing \\end\\".into()));
    }
    if section != order {
        return Err(err(0, format!("missing \\{}-grams: section", section + 1)));
    }
    if listed[order - 1] != declared[order - 1] {
        return Err(count_mismatch(0, order, declared[order - 1], listed[order - 1]));
    }
    if listed[0] == 0 {
        return Err(err(0, "empty \\1-grams: section".into()));
    }
    for (gram, b) in backoffs {
        lm.contexts.entry(gram).or_default().backoff = Some(b);
    }
    for e in lm.contexts.values_mut() {
        e.probs.sort_by_key(|&(t, _)| t);
        if e.probs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Lm("duplicate n-gram entry".into()));
        }
    }
    Ok(lm)
}

fn count_mismatch(line: usize, n: usize, declared: usize, listed: usize) -> Error {
    Error::parse(
        "<arpa>",
        line,
        format!("declared {declared} {n}-grams but listed {listed}"),
    )
}
