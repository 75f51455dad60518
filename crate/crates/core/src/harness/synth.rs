//! Synthetic clinic-style conversations with recurring names, a noisy
//! substitution channel and the models derived from them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SynthSpec;
use super::derive_seed;
use crate::corpus::{Conversation, Corpus, ObservationKey, Utterance};
use crate::edit::edit_distance;
use crate::error::{Error, Result};
use crate::lm::{train_ngram, write_arpa, NGramLm, Smoothing, TrainConfig};
use crate::names::{insert_tags, NameList, Provenance};
use crate::scorers::{EvidenceRow, TabularE2E};
use crate::vocab::{TokenId, Vocab};

const STREAM_POOL: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_CHANNEL: u64 = 4;

/// A template grammar: sentence patterns with `{slot}` placeholders and
/// the fillers of each slot. `{name}` is filled with a full name.
struct Grammar {
    plain: &'static [&'static str],
    with_name: &'static [&'static str],
    slots: &'static [(&'static str, &'static [&'static str])],
}

const CLINIC: Grammar = Grammar {
    plain: &[
        "good {time}",
        "how are you feeling today",
        "i have a pain in my {body}",
        "it hurts when i walk",
        "it started {when}",
        "take this {freq}",
        "come back and see me again soon",
        "thank you doctor",
        "i am feeling a bit better",
        "okay please come in",
        "let me check your {body}",
        "that is fine",
        "any pain in your {body}",
        "yes a little",
        "no not really",
        "we will do a test",
        "the results look good",
        "please sit down",
    ],
    with_name: &[
        "hello {name}",
        "the next patient is {name}",
        "good {time} {name}",
        "my name is {name}",
        "thank you {name}",
        "is {name} here",
        "please come in {name}",
        "doctor {name} will see you",
        "i am here to see {name}",
        "this is {name}",
    ],
    slots: &[
        ("time", &["morning", "afternoon", "evening"]),
        ("body", &["back", "head", "chest", "leg", "arm", "knee"]),
        ("when", &["yesterday", "last week", "two days ago"]),
        ("freq", &["twice a day", "once a day", "every morning"]),
    ],
};

fn grammar(id: &str) -> Result<&'static Grammar> {
    match id {
        "clinic" => Ok(&CLINIC),
        _ => Err(Error::Config(format!("unknown grammar {id:?} (clinic)"))),
    }
}

impl Grammar {
    fn words(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let fillers = self.slots.iter().flat_map(|(_, f)| f.iter());
        for text in self.plain.iter().chain(self.with_name).chain(fillers) {
            for w in text.split_whitespace() {
                if !w.starts_with('{') && seen.insert(w.to_string()) {
                    out.push(w.to_string());
                }
            }
        }
        out
    }

    /// An utterance of `sentences` template sentences; with a name, one of
    /// them mentions it.
    fn utterance(&self, rng: &mut ChaCha8Rng, sentences: usize, name: Option<&[String]>) -> Vec<String> {
        let named_at = rng.random_range(0..sentences.max(1));
        let mut out = Vec::new();
        for i in 0..sentences.max(1) {
            out.extend(self.sentence(rng, name.filter(|_| i == named_at)));
        }
        out
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, name: Option<&[String]>) -> Vec<String> {
        let pattern = match name {
            Some(_) => self.with_name.choose(rng),
            None => self.plain.choose(rng),
        }
        .expect("non-empty template list");
        let mut out = Vec::new();
        for w in pattern.split_whitespace() {
            match w.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
                Some("name") => out.extend(name.expect("name template").iter().cloned()),
                Some(slot) => {
                    let fillers = self.slots.iter().find(|(s, _)| *s == slot).expect("declared slot").1;
                    out.extend(fillers.choose(rng).expect("fillers").split_whitespace().map(String::from));
                }
                None => out.push(w.to_string()),
            }
        }
        out
    }
}

/// Pronounceable two-part names built from consonant-vowel syllables.
/// Components come in families of spelling variants one edit apart.
pub fn generate_pool(size: usize, seed: u64, exclude: &HashSet<String>) -> Result<NameList> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
    const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
    const CODAS: &[&str] = &["", "", "n", "r", "l", "s"];
    const FAMILY: usize = 3;
    if size == 0 {
        return Err(Error::Config("name pool size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = (size as f64).sqrt();
    let n_first = (root * 2.2).ceil() as usize;
    let n_last = (root * 3.6).ceil() as usize;
    let mut taken: HashSet<String> = exclude.clone();

    let base = |syllables: std::ops::RangeInclusive<usize>, rng: &mut ChaCha8Rng| {
        let n = rng.random_range(syllables);
        let mut s = String::new();
        for _ in 0..n {
            s.push_str(ONSETS.choose(rng).expect("onsets"));
            s.push(*VOWELS.choose(rng).expect("vowels"));
        }
        s.push_str(CODAS.choose(rng).expect("codas"));
        s
    };
    // one vowel substitution, or a final consonant added or dropped
    let variant = |word: &str, rng: &mut ChaCha8Rng| {
        let chars: Vec<char> = word.chars().collect();
        let vowels: Vec<usize> = (0..chars.len()).filter(|&i| VOWELS.contains(&chars[i])).collect();
        let last_is_vowel = VOWELS.contains(chars.last().expect("non-empty"));
        if rng.random_bool(0.7) && !vowels.is_empty() {
            let i = *vowels.choose(rng).expect("vowel");
            let mut out = chars.clone();
            out[i] = **VOWELS.iter().filter(|&&v| v != chars[i]).collect::<Vec<_>>().choose(rng).expect("vowels");
            out.into_iter().collect::<String>()
        } else if last_is_vowel {
            format!("{word}{}", ["n", "r", "l", "s"].choose(rng).expect("codas"))
        } else {
            chars[..chars.len() - 1].iter().collect()
        }
    };
    let mut family = |count: usize, syllables: std::ops::RangeInclusive<usize>, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let root = base(syllables.clone(), rng);
            if !taken.insert(root.clone()) {
                continue;
            }
            out.push(root.clone());
            for _ in 0..4 * FAMILY {
                if out.len() >= count || out.len() % FAMILY == 0 {
                    break;
                }
                let v = variant(&root, rng);
                if taken.insert(v.clone()) {
                    out.push(v);
                }
            }
        }
        out
    };
    let firsts = family(n_first, 2..=2, &mut rng);
    let lasts = family(n_last, 2..=3, &mut rng);
    let picks = rand::seq::index::sample(&mut rng, n_first * n_last, size);
    NameList::new(
        picks.into_iter().map(|k| [firsts[k / n_last].clone(), lasts[k % n_last].clone()]),
        Provenance::Distractor,
    )
}

/// Generated corpus, training text and acoustic evidence.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub vocab: Vocab,
    pub pool: NameList,
    /// Tagged training transcripts for the in-domain LM.
    pub train: Vec<Vec<TokenId>>,
    pub test: Corpus,
    pub evidence: Vec<(ObservationKey, Vec<EvidenceRow>)>,
}

/// For each word, `k` confusable words of its class: among the `k·spread`
/// closest spellings, the most frequent in training.
fn confusion_sets(vocab: &Vocab, classes: &[Vec<TokenId>], k: usize, spread: usize, freq: &[u64]) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new(); vocab.len()];
    for class in classes {
        let chars: Vec<Vec<char>> = class.iter().map(|&t| vocab.token(t).chars().collect()).collect();
        for (i, &t) in class.iter().enumerate() {
            let mut others: Vec<(usize, TokenId)> = class
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &u)| (edit_distance(&chars[i], &chars[j]), u))
                .collect();
            others.sort();
            others.truncate(k * spread.max(1));
            others.sort_by(|a, b| freq[b.1.index()].cmp(&freq[a.1.index()]).then(a.cmp(b)));
            out[t.index()] = others.into_iter().take(k).map(|(_, u)| u).collect();
        }
    }
    out
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Evidence rows for a tagged reference: one per token plus one for
/// `<eos>`. Ambiguous positions give the true word and its confusers
/// near-equal evidence.
fn channel(
    reference: &[TokenId],
    vocab: &Vocab,
    confusers: &[Vec<TokenId>],
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<EvidenceRow> {
    let mut rows = Vec::with_capacity(reference.len() + 1);
    for &t in reference {
        let ambiguous = !vocab.is_tag(t) && !confusers[t.index()].is_empty() && rng.random_bool(spec.noise);
        let entries = if ambiguous {
            std::iter::once(t)
                .chain(confusers[t.index()].iter().copied())
                .map(|u| (u, round3(spec.jitter * rng.random_range(-1.0..=1.0))))
                .collect()
        } else {
            vec![(t, 0.0)]
        };
        rows.push(EvidenceRow::sparse(spec.background, entries));
    }
    rows.push(EvidenceRow::sparse(spec.background, vec![(vocab.eos(), 0.0)]));
    rows
}

pub fn synthesize(spec: &SynthSpec, pool: Option<NameList>) -> Result<SynthData> {
    spec.validate()?;
    let grammar = grammar(&spec.grammar)?;
    let words = grammar.words();
    let pool = match pool {
        Some(p) => p,
        None => generate_pool(
            spec.generated_pool_size,
            derive_seed(spec.seed, STREAM_POOL),
            &words.iter().cloned().collect(),
        )?,
    };
    if pool.len() < 2 {
        return Err(Error::Config("name pool needs at least two names".into()));
    }

    let mut firsts = Vec::new();
    let mut lasts = Vec::new();
    let mut seen = HashSet::new();
    for name in pool.names() {
        for (i, c) in name.iter().enumerate() {
            if words.contains(c) {
                return Err(Error::Config(format!("name component {c:?} collides with a template word")));
            }
            if seen.insert(c.clone()) {
                if i + 1 == name.len() && name.len() > 1 { lasts.push(c.clone()) } else { firsts.push(c.clone()) }
            }
        }
    }
    let vocab = Vocab::with_reserved(words.iter().chain(&firsts).chain(&lasts))?;
    let ids = |ws: &[String]| vocab.encode(ws, false).expect("generated words are in the vocabulary");
    let classes: Vec<Vec<TokenId>> = [&words, &firsts, &lasts].iter().map(|c| ids(c)).collect();
    let pool_ids = pool.encode(&vocab)?;

    // in-domain training text: names follow a rank-frequency law
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_TRAIN));
    let zipf = WeightedIndex::new((1..=pool.len()).map(|r| (r as f64).powf(-spec.zipf_exponent)))
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut train = Vec::new();
    for _ in 0..spec.train_conversations {
        let names = [zipf.sample(&mut rng), zipf.sample(&mut rng)];
        let tag_list = [pool_ids[names[0]].clone(), pool_ids[names[1]].clone()];
        for _ in 0..spec.utterances_per_conversation {
            let name = rng.random_bool(spec.train_fraction_with_names).then(|| &pool.names()[names[rng.random_range(0..2)]]);
            let n = rng.random_range(spec.min_sentences..=spec.max_sentences);
            let sentence = grammar.utterance(&mut rng, n, name.map(Vec::as_slice));
            train.push(insert_tags(&ids(&sentence), &tag_list, &vocab)?);
        }
    }

    let mut freq = vec![0u64; vocab.len()];
    for t in train.iter().flatten() {
        freq[t.index()] += 1;
    }
    let confusers = confusion_sets(&vocab, &classes, spec.confusers, spec.confuser_spread, &freq);

    // test conversations: two names each, drawn uniformly from the pool
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_TEST));
    let mut chan = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_CHANNEL));
    let total = spec.n_conversations * spec.utterances_per_conversation;
    let n_named = (spec.fraction_with_names * total as f64).round() as usize;
    let named: HashSet<usize> = rand::seq::index::sample(&mut rng, total, n_named).into_iter().collect();
    let mut conversations = Vec::with_capacity(spec.n_conversations);
    let mut evidence = Vec::with_capacity(total);
    for c in 0..spec.n_conversations {
        let conv_id = format!("c{c:04}");
        let picked = rand::seq::index::sample(&mut rng, pool.len(), 2).into_vec();
        let tag_list: Vec<Vec<TokenId>> = picked.iter().map(|&i| pool_ids[i].clone()).collect();
        let mut utterances = Vec::with_capacity(spec.utterances_per_conversation);
        for u in 0..spec.utterances_per_conversation {
            let with_name = named.contains(&(c * spec.utterances_per_conversation + u));
            let name = with_name.then(|| &pool.names()[*picked.choose(&mut rng).expect("two names")]);
            let n = rng.random_range(spec.min_sentences..=spec.max_sentences);
            let sentence = grammar.utterance(&mut rng, n, name.map(Vec::as_slice));
            let reference = insert_tags(&ids(&sentence), &tag_list, &vocab)?;
            let utt_id = format!("u{u:03}");
            let key = ObservationKey(format!("{conv_id}/{utt_id}"));
            evidence.push((key.clone(), channel(&reference, &vocab, &confusers, spec, &mut chan)));
            utterances.push(Utterance::new(conv_id.clone(), utt_id, reference, Some(key), &vocab)?);
        }
        conversations.push(Conversation {
            id: conv_id,
            utterances,
            names: tag_list,
        });
    }
    let test = Corpus { conversations };
    test.validate(&vocab)?;
    Ok(SynthData { vocab, pool, train, test, evidence })
}

impl SynthData {
    pub fn train_id_lm(&self, order: usize) -> Result<NGramLm> {
        train_ngram(&self.train, &self.vocab, TrainConfig::new(order, Smoothing::WittenBell))
    }

    /// Emulated E2E model whose transition LM is `transition`.
    pub fn e2e(&self, transition: Arc<NGramLm>) -> Result<TabularE2E> {
        TabularE2E::new(transition, self.evidence.clone(), &self.vocab)
    }
}

/// File names written by [`write_synth`] inside the output directory.
pub mod files {
    pub const VOCAB: &str = "vocab.txt";
    pub const POOL: &str = "names_pool.txt";
    pub const TRAIN: &str = "train.txt";
    pub const TEST: &str = "test.jsonl";
    pub const TEST_NAMES: &str = "test.names.jsonl";
    pub const ID_LM: &str = "id.arpa";
    pub const E2E: &str = "e2e.json";
    pub const SPEC: &str = "synth.json";
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub dir: PathBuf,
    pub vocab_size: usize,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub test_utterances_with_names: usize,
}

/// Generates the task and writes corpus, pool, training text, in-domain LM
/// and evidence table into `dir`.
pub fn write_synth(spec: &SynthSpec, dir: &Path) -> Result<SynthSummary> {
    let pool = match &spec.name_pool {
        Some(p) => Some(NameList::load(p, Provenance::Distractor)?),
        None => None,
    };
    let data = synthesize(spec, pool)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    data.vocab.save(dir.join(files::VOCAB))?;
    data.pool.save(dir.join(files::POOL))?;
    let mut text = String::new();
    for s in &data.train {
        text.push_str(&data.vocab.join(s));
        text.push('\n');
    }
    crate::corpus::write_file(&dir.join(files::TRAIN), text.as_bytes())?;
    data.test.save(dir.join(files::TEST), Some(&dir.join(files::TEST_NAMES)), &data.vocab)?;
    let id_lm = Arc::new(data.train_id_lm(spec.lm_order)?);
    write_arpa(id_lm.as_ref(), &data.vocab, dir.join(files::ID_LM))?;
    data.e2e(id_lm)?.save(dir.join(files::E2E), files::ID_LM)?;
    let spec_json = serde_json::to_vec_pretty(spec).map_err(|e| Error::Internal(e.to_string()))?;
    crate::corpus::write_file(&dir.join(files::SPEC), &spec_json)?;
    let with_names = data
        .test
        .utterances()
        .filter(|u| u.reference.contains(&data.vocab.ne_open()))
        .count();
    Ok(SynthSummary {
        dir: dir.to_path_buf(),
        vocab_size: data.vocab.len(),
        train_utterances: data.train.len(),
        test_utterances: data.test.num_utterances(),
        test_utterances_with_names: with_names,
    })
}
