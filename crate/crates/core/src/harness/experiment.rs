use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LmScope};
use super::derive_seed;
use crate::corpus::{Corpus, Utterance};
use crate::decoder::beam_decode;
use crate::error::{Error, Result};
use crate::eval::{evaluate_utterance, EvalCounts, EvalReport, SpanMatch};
use crate::lm::LanguageModel;
use crate::names::{build_ne_lm, extract_conv_names, AdversarialPool, NameList, Perturbation, Provenance};
use crate::scorers::{E2eModel, FusionMode, FusionScorer};
use crate::tags::extract_spans;
use crate::vocab::Vocab;

/// Models shared by every run on a corpus.
pub struct Models {
    pub vocab: Vocab,
    pub id_lm: Arc<dyn LanguageModel>,
    pub e2e: Arc<dyn E2eModel>,
    /// Source of distractor and adversarial names.
    pub pool: Option<NameList>,
    adversarial: OnceLock<AdversarialPool>,
}

impl Models {
    pub fn new(vocab: Vocab, id_lm: Arc<dyn LanguageModel>, e2e: Arc<dyn E2eModel>, pool: Option<NameList>) -> Self {
        Models {
            vocab,
            id_lm,
            e2e,
            pool,
            adversarial: OnceLock::new(),
        }
    }

    fn pool(&self) -> Result<&NameList> {
        self.pool
            .as_ref()
            .ok_or_else(|| Error::Config("name perturbation requires a name pool".into()))
    }

    fn adversarial_pool(&self) -> Result<&AdversarialPool> {
        let pool = self.pool()?;
        Ok(self.adversarial.get_or_init(|| AdversarialPool::new(pool)))
    }
}

/// One line of a hypotheses file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypRecord {
    pub conv: String,
    pub utt: String,
    pub hyp: String,
    pub score: f64,
    pub finished: bool,
}

pub fn write_hypotheses(path: &Path, hyps: &[HypRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for h in hyps {
        crate::corpus::write_record(&mut buf, h)?;
    }
    crate::corpus::write_file(path, &buf)
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<HypRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Per-conversation names: the conversation's declared list plus every
/// tagged span in its references.
pub fn conversation_names(corpus: &Corpus, vocab: &Vocab) -> Result<Vec<NameList>> {
    corpus
        .conversations
        .iter()
        .map(|c| {
            let mut all = c.names.clone();
            all.extend(extract_conv_names(c, vocab)?);
            NameList::from_ids(&all, vocab, Provenance::True)
        })
        .collect()
}

fn utterance_names(utt: &Utterance, vocab: &Vocab) -> Result<NameList> {
    let spans = extract_spans(&utt.reference, vocab)?;
    let names: Vec<_> = spans.iter().map(|s| utt.reference[s.begin + 1..s.end].to_vec()).collect();
    NameList::from_ids(&names, vocab, Provenance::True)
}

fn perturb(truth: &NameList, models: &Models, config: &ExperimentConfig, stream: u64) -> Result<NameList> {
    let Some(spec) = config.perturbation else {
        return Ok(truth.clone());
    };
    let spec = crate::names::PerturbationSpec {
        seed: derive_seed(spec.seed, stream),
        ..spec
    };
    match spec.kind {
        Perturbation::None => Ok(truth.clone()),
        Perturbation::Distractor { .. } => spec.apply(truth, models.pool()?, None),
        Perturbation::Adversarial { .. } if truth.is_empty() => Ok(truth.clone()),
        Perturbation::Adversarial { .. } => spec.apply(truth, models.pool()?, Some(models.adversarial_pool()?)),
    }
}

/// Biasing name lists keyed by scope unit: one per utterance (oracle), per
/// conversation, or a single list.
fn biasing_lists(corpus: &Corpus, models: &Models, config: &ExperimentConfig) -> Result<Vec<NameList>> {
    let vocab = &models.vocab;
    match config.lm_scope {
        LmScope::PerUtteranceOracle => {
            let has_truth = corpus.utterances().any(|u| u.reference.contains(&vocab.ne_open()));
            if !has_truth && corpus.num_utterances() > 0 {
                return Err(Error::Config("per-utterance oracle scope needs tagged references".into()));
            }
            corpus
                .utterances()
                .enumerate()
                .map(|(i, u)| perturb(&utterance_names(u, vocab)?, models, config, i as u64))
                .collect()
        }
        LmScope::PerConversation => conversation_names(corpus, vocab)?
            .iter()
            .enumerate()
            .map(|(i, n)| perturb(n, models, config, i as u64))
            .collect(),
        LmScope::Global => {
            let mut union = NameList::empty(Provenance::True);
            for (i, n) in conversation_names(corpus, vocab)?.iter().enumerate() {
                union = union.union(&perturb(n, models, config, i as u64)?);
            }
            Ok(vec![union])
        }
    }
}

fn unit_of(scope: LmScope, conv: usize, utt_index: usize) -> usize {
    match scope {
        LmScope::PerUtteranceOracle => utt_index,
        LmScope::PerConversation => conv,
        LmScope::Global => 0,
    }
}

/// Decodes every utterance; output order follows the corpus.
pub fn decode_corpus(corpus: &Corpus, models: &Models, config: &ExperimentConfig) -> Result<Vec<HypRecord>> {
    config.validate()?;
    let vocab = &models.vocab;
    let fusion = config.fusion();
    let decode = config.decode();
    let needs_bias = fusion.mode != FusionMode::Plain;
    let scorers: Vec<FusionScorer> = if needs_bias {
        let lists = biasing_lists(corpus, models, config)?;
        lists
            .par_iter()
            .map(|names| {
                let bias = if names.is_empty() {
                    None
                } else {
                    Some(build_ne_lm(&names.encode(vocab)?, models.id_lm.clone(), vocab, config.ne_order, config.ne_mu)?)
                };
                let fusion = if bias.is_none() && matches!(fusion.mode, FusionMode::Sf | FusionMode::Dr) {
                    crate::scorers::FusionConfig::plain()
                } else {
                    fusion
                };
                FusionScorer::new(vocab, models.e2e.clone(), Some(models.id_lm.clone()), bias, fusion)
            })
            .collect::<Result<_>>()?
    } else {
        vec![FusionScorer::plain(vocab, models.e2e.clone())?]
    };

    let jobs: Vec<(usize, usize, &Utterance)> = corpus
        .conversations
        .iter()
        .enumerate()
        .flat_map(|(c, conv)| conv.utterances.iter().map(move |u| (c, u)))
        .enumerate()
        .map(|(i, (c, u))| (c, i, u))
        .collect();
    jobs.par_iter()
        .map(|&(c, i, utt)| {
            let scorer = if needs_bias { &scorers[unit_of(config.lm_scope, c, i)] } else { &scorers[0] };
            let obs = utt
                .observation
                .as_ref()
                .ok_or_else(|| Error::Corpus(format!("{}/{} has no observation", utt.conversation_id, utt.utterance_id)))?;
            let out = beam_decode(scorer, obs, &decode)?;
            Ok(HypRecord {
                conv: utt.conversation_id.clone(),
                utt: utt.utterance_id.clone(),
                hyp: vocab.join(&out.best.tokens),
                score: out.best.score,
                finished: out.best.finished,
            })
        })
        .collect()
}

/// Scores hypotheses against the corpus references. Every utterance must
/// have exactly one hypothesis.
pub fn evaluate_hypotheses(corpus: &Corpus, hyps: &[HypRecord], vocab: &Vocab, criterion: SpanMatch) -> Result<EvalCounts> {
    let mut by_id: HashMap<(&str, &str), &HypRecord> = HashMap::with_capacity(hyps.len());
    for h in hyps {
        if by_id.insert((&h.conv, &h.utt), h).is_some() {
            return Err(Error::Eval(format!("duplicate hypothesis for {}/{}", h.conv, h.utt)));
        }
    }
    let missing: Vec<String> = corpus
        .utterances()
        .filter(|u| !by_id.contains_key(&(u.conversation_id.as_str(), u.utterance_id.as_str())))
        .map(|u| format!("{}/{}", u.conversation_id, u.utterance_id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Eval(format!("missing hypotheses for: {}", missing.join(", "))));
    }
    if hyps.len() != corpus.num_utterances() {
        return Err(Error::Eval(format!(
            "{} hypotheses for {} utterances",
            hyps.len(),
            corpus.num_utterances()
        )));
    }
    let mut total = EvalCounts::default();
    for u in corpus.utterances() {
        let h = by_id[&(u.conversation_id.as_str(), u.utterance_id.as_str())];
        let hyp = vocab.encode_str(&h.hyp, true)?;
        total += evaluate_utterance(&u.reference, &hyp, vocab, criterion)?;
    }
    Ok(total)
}

/// Decode then evaluate.
pub fn run_experiment(
    corpus: &Corpus,
    models: &Models,
    config: &ExperimentConfig,
    system: &str,
) -> Result<(Vec<HypRecord>, EvalReport)> {
    let hyps = decode_corpus(corpus, models, config)?;
    let counts = evaluate_hypotheses(corpus, &hyps, &models.vocab, SpanMatch::Overlap)?;
    Ok((hyps, EvalReport::from_counts(system, counts)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::SynthSpec;
    use crate::harness::synth::synthesize;
    use crate::names::PerturbationSpec;

    fn setup(noise: f64) -> (Corpus, Models) {
        let spec = SynthSpec {
            n_conversations: 4,
            utterances_per_conversation: 10,
            fraction_with_names: 0.3,
            train_conversations: 30,
            generated_pool_size: 200,
            noise,
            ..Default::default()
        };
        let d = synthesize(&spec, None).unwrap();
        let id = Arc::new(d.train_id_lm(3).unwrap());
        let e2e = Arc::new(d.e2e(id.clone()).unwrap());
        (d.test.clone(), Models::new(d.vocab, id, e2e, Some(d.pool)))
    }

    #[test]
    fn noiseless_plain_is_exact() {
        let (corpus, models) = setup(0.0);
        let cfg = ExperimentConfig { mode: FusionMode::Plain, ..Default::default() };
        let (hyps, rep) = run_experiment(&corpus, &models, &cfg, "plain").unwrap();
        assert_eq!(hyps.len(), 40);
        assert_eq!(rep.wer, Some(0.0));
        assert_eq!(rep.wert, Some(0.0));
        assert_eq!((rep.tag_precision, rep.tag_recall), (100.0, Some(100.0)));
    }

    #[test]
    fn zero_weight_cdr_matches_plain_bytes() {
        let (corpus, models) = setup(0.4);
        let dir = tempfile::tempdir().unwrap();
        let plain = decode_corpus(&corpus, &models, &ExperimentConfig { mode: FusionMode::Plain, ..Default::default() }).unwrap();
        let cdr = decode_corpus(&corpus, &models, &ExperimentConfig { alpha: 0.0, beta: 0.0, ..Default::default() }).unwrap();
        write_hypotheses(&dir.path().join("a"), &plain).unwrap();
        write_hypotheses(&dir.path().join("b"), &cdr).unwrap();
        assert_eq!(std::fs::read(dir.path().join("a")).unwrap(), std::fs::read(dir.path().join("b")).unwrap());
        assert_eq!(read_hypotheses(&dir.path().join("a")).unwrap(), plain);
    }

    #[test]
    fn every_scope_and_perturbation_runs_deterministically() {
        let (corpus, models) = setup(0.4);
        for scope in [LmScope::PerUtteranceOracle, LmScope::PerConversation, LmScope::Global] {
            for kind in [
                Perturbation::None,
                Perturbation::Distractor { count: 4 },
                Perturbation::Adversarial { count: 2, distance: 4 },
            ] {
                let cfg = ExperimentConfig {
                    lm_scope: scope,
                    perturbation: Some(PerturbationSpec { kind, seed: 3 }),
                    ..Default::default()
                };
                let a = decode_corpus(&corpus, &models, &cfg).unwrap();
                assert_eq!(a, decode_corpus(&corpus, &models, &cfg).unwrap());
            }
        }
    }

    #[test]
    fn missing_hypothesis_is_reported() {
        let (corpus, models) = setup(0.0);
        let mut hyps = decode_corpus(&corpus, &models, &ExperimentConfig::default()).unwrap();
        let gone = hyps.remove(3);
        let err = evaluate_hypotheses(&corpus, &hyps, &models.vocab, SpanMatch::Overlap).unwrap_err();
        assert!(err.to_string().contains(&format!("{}/{}", gone.conv, gone.utt)));
    }

    #[test]
    fn reference_as_hypothesis_is_perfect() {
        let (corpus, models) = setup(0.4);
        let hyps: Vec<HypRecord> = corpus
            .utterances()
            .map(|u| HypRecord {
                conv: u.conversation_id.clone(),
                utt: u.utterance_id.clone(),
                hyp: models.vocab.join(&u.reference),
                score: 0.0,
                finished: true,
            })
            .collect();
        let rep = EvalReport::from_counts("ref", evaluate_hypotheses(&corpus, &hyps, &models.vocab, SpanMatch::Overlap).unwrap());
        assert_eq!((rep.wer, rep.wert, rep.tag_recall), (Some(0.0), Some(0.0), Some(100.0)));
    }
}
