use std::sync::Arc;

use cdr_core::decoder::{beam_decode, exhaustive_decode, DecodeConfig};
use cdr_core::lm::train_ngram;
use cdr_core::names::build_ne_lm;
use cdr_core::scorers::{E2eModel, EvidenceRow, FusionConfig, FusionMode, FusionScorer, TabularE2E};
use cdr_core::{extract_spans, LanguageModel, ObservationKey, Smoothing, TokenId, TrainConfig, Vocab};
use proptest::prelude::*;

const WORDS: [&str; 6] = ["the", "doctor", "is", "ann", "lee", "bo"];

struct Fixture {
    vocab: Vocab,
    e2e: Arc<TabularE2E>,
    id: Arc<dyn LanguageModel>,
    ne: Arc<dyn LanguageModel>,
}

fn fixture(evidence: &[Vec<(usize, f64)>]) -> Fixture {
    let vocab = Vocab::with_reserved(WORDS).unwrap();
    let train: Vec<Vec<TokenId>> = [
        "the doctor is <ne> ann lee </ne>",
        "<ne> bo </ne> is the doctor",
        "the doctor is the doctor",
        "is <ne> lee bo </ne>",
    ]
    .iter()
    .map(|s| vocab.encode_str(s, false).unwrap())
    .collect();
    let id = Arc::new(train_ngram(&train, &vocab, TrainConfig::new(3, Smoothing::WittenBell)).unwrap());
    let names = vec![vocab.encode_str("ann lee", false).unwrap(), vocab.encode_str("bo", false).unwrap()];
    let ne = build_ne_lm(&names, id.clone(), &vocab, 4, 0.9).unwrap();
    let rows = evidence
        .iter()
        .map(|r| {
            let mut entries: Vec<(TokenId, f64)> = Vec::new();
            for &(w, x) in r {
                if !entries.iter().any(|e| e.0 == TokenId(w as u32)) {
                    entries.push((TokenId(w as u32), x));
                }
            }
            EvidenceRow::sparse(-8.0, entries)
        })
        .collect();
    let e2e = Arc::new(TabularE2E::new(id.clone(), vec![(ObservationKey::from("o"), rows)], &vocab).unwrap());
    Fixture { vocab, e2e, id, ne }
}

fn scorer(f: &Fixture, mode: FusionMode, alpha: f64, beta: f64) -> FusionScorer {
    FusionScorer::new(
        &f.vocab,
        f.e2e.clone(),
        Some(f.id.clone()),
        Some(f.ne.clone()),
        FusionConfig::new(mode, alpha, beta),
    )
    .unwrap()
}

/// Balanced, non-nested tagged sequence over the fixture words.
fn tagged(raw: &[(usize, bool)], vocab: &Vocab) -> Vec<TokenId> {
    let words: Vec<TokenId> = WORDS.iter().map(|w| vocab.id(w).unwrap()).collect();
    let mut out = Vec::new();
    let mut open = false;
    for &(w, toggle) in raw {
        if toggle {
            out.push(if open { vocab.ne_close() } else { vocab.ne_open() });
            open = !open;
        }
        out.push(words[w % words.len()]);
    }
    if open {
        out.push(vocab.ne_close());
    }
    out
}

fn evidence_strategy() -> impl Strategy<Value = Vec<Vec<(usize, f64)>>> {
    prop::collection::vec(prop::collection::vec((0usize..10, -3.0f64..0.0), 1..4), 1..10)
}

fn raw_strategy() -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((0usize..WORDS.len(), prop::bool::weighted(0.3)), 0..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contextual_score_decomposes(ev in evidence_strategy(), raw in raw_strategy(), alpha in 0.0f64..1.5, beta in 0.0f64..1.5) {
        let f = fixture(&ev);
        let v = &f.vocab;
        let seq = tagged(&raw, v);
        let spans = extract_spans(&seq, v).unwrap();
        let plain = scorer(&f, FusionMode::Plain, 0.0, 0.0).token_scores(&"o".into(), &seq).unwrap();
        for mode in [FusionMode::Csf, FusionMode::Cdr] {
            let got = scorer(&f, mode, alpha, beta).sequence_score(&"o".into(), &seq).unwrap();
            let mut want: f64 = plain.iter().sum();
            let mut id = f.id.initial_state();
            let mut ne = f.ne.initial_state();
            for (i, &t) in seq.iter().enumerate() {
                if spans.iter().any(|s| i > s.begin && i <= s.end) {
                    want += beta * f.ne.logprob(&ne, t);
                    if mode == FusionMode::Cdr {
                        want -= alpha * f.id.logprob(&id, t);
                    }
                }
                id = f.id.advance(&id, t);
                ne = if t == v.ne_open() { f.ne.advance(&f.ne.initial_state(), t) } else { f.ne.advance(&ne, t) };
            }
            prop_assert!((got - want).abs() < 1e-9, "{mode}: {got} vs {want}");
        }
    }

    #[test]
    fn ne_contribution_ignores_prefix(ev in evidence_strategy(), a in raw_strategy(), b in raw_strategy(), name in prop::collection::vec(3usize..6, 1..3)) {
        // same post-<ne> history after different prefixes
        let f = fixture(&ev);
        let v = &f.vocab;
        let name: Vec<TokenId> = name.iter().map(|&w| v.id(WORDS[w]).unwrap()).collect();
        let ne_terms = |prefix: &[TokenId]| {
            let mut seq = prefix.to_vec();
            seq.push(v.ne_open());
            seq.extend(&name);
            seq.push(v.ne_close());
            let csf = scorer(&f, FusionMode::Csf, 0.0, 1.0).token_scores(&"o".into(), &seq).unwrap();
            let plain = scorer(&f, FusionMode::Plain, 0.0, 0.0).token_scores(&"o".into(), &seq).unwrap();
            let start = prefix.len() + 1;
            (start..start + name.len() + 1).map(|i| csf[i] - plain[i]).collect::<Vec<f64>>()
        };
        let (x, y) = (ne_terms(&tagged(&a, v)), ne_terms(&tagged(&b, v)));
        for (p, q) in x.iter().zip(&y) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn forked_states_score_identically(ev in evidence_strategy(), raw in raw_strategy(), tail in raw_strategy()) {
        let f = fixture(&ev);
        let s = scorer(&f, FusionMode::Cdr, 0.3, 0.7);
        let mut st = s.init(&"o".into()).unwrap();
        for t in tagged(&raw, &f.vocab) {
            st = s.step(&st, t);
        }
        let (mut a, mut b) = (st.clone(), st);
        let words: Vec<TokenId> = WORDS.iter().map(|w| f.vocab.id(w).unwrap()).collect();
        for (w, _) in tail {
            a = s.step(&a, words[w]);
            b = s.step(&b, words[w]);
            prop_assert_eq!(s.row(&a), s.row(&b));
        }
    }

    #[test]
    fn e2e_rows_normalize(ev in evidence_strategy(), raw in raw_strategy()) {
        let f = fixture(&ev);
        let mut st = f.e2e.init(&"o".into()).unwrap();
        for t in tagged(&raw, &f.vocab).into_iter().take(ev.len()) {
            let mass: f64 = f.e2e.row(&st).iter().map(|x| x.exp()).sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
            st = f.e2e.step(&st, t);
        }
    }

    #[test]
    fn beam_scores_are_rescorable(ev in evidence_strategy(), beam in 1usize..6, alpha in 0.0f64..1.0, beta in 0.0f64..1.0) {
        let f = fixture(&ev);
        let s = scorer(&f, FusionMode::Cdr, alpha, beta);
        let cfg = DecodeConfig { beam_width: beam, max_len: 12, ..Default::default() };
        let out = beam_decode(&s, &"o".into(), &cfg).unwrap();
        for h in out.nbest.iter().chain(std::iter::once(&out.best)).filter(|h| h.finished) {
            extract_spans(&h.tokens, &f.vocab).unwrap();
            let re = s.sequence_score(&"o".into(), &h.tokens).unwrap();
            prop_assert!((re - h.score).abs() < 1e-9);
        }
    }
}

#[test]
fn id_contribution_sees_prefix() {
    let f = fixture(&[vec![(0, 0.0)]]);
    let v = &f.vocab;
    let s = scorer(&f, FusionMode::Cdr, 1.0, 0.0);
    let plain = scorer(&f, FusionMode::Plain, 0.0, 0.0);
    let id_term = |text: &str| {
        let seq = v.encode_str(text, false).unwrap();
        let i = seq.iter().position(|&t| t == v.ne_open()).unwrap() + 1;
        s.token_scores(&"o".into(), &seq).unwrap()[i] - plain.token_scores(&"o".into(), &seq).unwrap()[i]
    };
    assert_ne!(id_term("is <ne> ann </ne>"), id_term("doctor <ne> ann </ne>"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn beam_is_bounded_by_exhaustive(ev in evidence_strategy(), beam in 1usize..6, alpha in 0.0f64..1.0, beta in 0.0f64..1.0) {
        let f = fixture(&ev);
        let max_len = 4;
        for mode in [FusionMode::Plain, FusionMode::Cdr] {
            let s = scorer(&f, mode, alpha, beta);
            let x = exhaustive_decode(&s, &"o".into(), max_len, true).unwrap();
            let decode = |b: usize| {
                let cfg = DecodeConfig { beam_width: b, max_len, ..Default::default() };
                beam_decode(&s, &"o".into(), &cfg).unwrap().best
            };
            let narrow = decode(beam);
            if narrow.finished {
                prop_assert!(narrow.score <= x.score + 1e-9);
            }
            let full = decode(f.vocab.len().pow(max_len as u32));
            prop_assert_eq!(&full.tokens, &x.tokens);
        }
    }
}

/// Widening the beam can lose a hypothesis the narrower beam kept, so the
/// best score is not monotone in the width.
#[test]
fn wider_beam_can_score_lower() {
    let ev = vec![
        vec![(2, -2.227399207649514), (3, 0.0)],
        vec![(3, 0.0)],
        vec![(2, -0.13870943692257945), (4, -2.1954803636862033)],
        vec![(7, 0.0), (0, 0.0)],
        vec![(4, 0.0), (5, 0.0)],
        vec![(7, 0.0)],
    ];
    let f = fixture(&ev);
    let s = scorer(&f, FusionMode::Plain, 0.0, 0.0);
    let best = |b: usize| {
        let cfg = DecodeConfig { beam_width: b, max_len: 12, ..Default::default() };
        beam_decode(&s, &"o".into(), &cfg).unwrap().best.score
    };
    assert!(best(4) < best(3));
    assert!(best(5) > best(3));
}
