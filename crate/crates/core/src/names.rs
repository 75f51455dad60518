//! Name lists: tag insertion, per-conversation extraction, perturbation
//! (distractor and adversarial names) and named-entity LM construction.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::edit::edit_distance;
use crate::error::{Error, Result};
use crate::lm::{interpolate, train_ngram, LanguageModel, Smoothing, TrainConfig};
use crate::tags::extract_spans;
use crate::vocab::{TokenId, Vocab};

pub const DEFAULT_NE_ORDER: usize = 4;
pub const DEFAULT_NE_MU: f64 = 0.9;
pub const DEFAULT_ADVERSARIAL_COUNT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    True,
    Distractor,
    Adversarial(usize),
    Mixed,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::True => f.write_str("true"),
            Provenance::Distractor => f.write_str("distractor"),
            Provenance::Adversarial(d) => write!(f, "adversarial({d})"),
            Provenance::Mixed => f.write_str("mixed"),
        }
    }
}

/// A deduplicated list of lowercase names, each a non-empty sequence of
/// whitespace-free components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameList {
    names: Vec<Vec<String>>,
    provenance: Provenance,
}

impl NameList {
    /// Lowercases, drops empty entries and duplicates (first occurrence
    /// wins). Rejects components that are reserved tokens or contain
    /// whitespace.
    pub fn new<I, N, S>(names: I, provenance: Provenance) -> Result<Self>
    where
        I: IntoIterator<Item = N>,
        N: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let reserved = [crate::vocab::NE_OPEN, crate::vocab::NE_CLOSE, crate::vocab::EOS, crate::vocab::UNK];
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for name in names {
            let parts: Vec<String> = name.into_iter().map(|c| c.as_ref().to_lowercase()).collect();
            if parts.is_empty() {
                continue;
            }
            for p in &parts {
                if p.is_empty() || p.chars().any(char::is_whitespace) || reserved.contains(&p.as_str()) {
                    return Err(Error::Names(format!("invalid name component {p:?}")));
                }
            }
            if seen.insert(parts.clone()) {
                out.push(parts);
            }
        }
        Ok(NameList { names: out, provenance })
    }

    pub fn empty(provenance: Provenance) -> Self {
        NameList { names: Vec::new(), provenance }
    }

    pub fn from_ids(names: &[Vec<TokenId>], vocab: &Vocab, provenance: Provenance) -> Result<Self> {
        NameList::new(names.iter().map(|n| vocab.decode(n)), provenance)
    }

    pub fn names(&self) -> &[Vec<String>] {
        &self.names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &[String]) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Space-joined form used for distance computations.
    pub fn joined(&self) -> Vec<String> {
        self.names.iter().map(|n| n.join(" ")).collect()
    }

    pub fn encode(&self, vocab: &Vocab) -> Result<Vec<Vec<TokenId>>> {
        self.names.iter().map(|n| vocab.encode(n, false)).collect()
    }

    /// Concatenation without duplicates; provenance becomes `Mixed` when the
    /// two differ.
    pub fn union(&self, other: &NameList) -> NameList {
        let provenance = if self.provenance == other.provenance || other.is_empty() {
            self.provenance
        } else {
            Provenance::Mixed
        };
        NameList::new(self.names.iter().chain(other.names.iter()), provenance).expect("already validated")
    }

    /// One name per line, components separated by whitespace.
    pub fn load(path: impl AsRef<Path>, provenance: Provenance) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NameList::new(text.lines().map(|l| l.split_whitespace()), provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        for n in &self.names {
            text.push_str(&n.join(" "));
            text.push('\n');
        }
        crate::corpus::write_file(path.as_ref(), text.as_bytes())
    }
}

/// Wraps name occurrences in `<ne>`/`</ne>`, scanning left to right and
/// taking the longest matching name at each position.
pub fn insert_tags(reference: &[TokenId], names: &[Vec<TokenId>], vocab: &Vocab) -> Result<Vec<TokenId>> {
    if reference.iter().any(|&t| vocab.is_tag(t)) {
        return Err(Error::Names("insert_tags expects an untagged reference".into()));
    }
    let mut out = Vec::with_capacity(reference.len() + 2);
    let mut i = 0;
    while i < reference.len() {
        let best = names
            .iter()
            .filter(|n| !n.is_empty() && reference[i..].starts_with(n))
            .map(Vec::len)
            .max();
        match best {
            Some(len) => {
                out.push(vocab.ne_open());
                out.extend_from_slice(&reference[i..i + len]);
                out.push(vocab.ne_close());
                i += len;
            }
            None => {
                out.push(reference[i]);
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Distinct span contents of a conversation in order of first occurrence.
pub fn extract_conv_names(conversation: &Conversation, vocab: &Vocab) -> Result<Vec<Vec<TokenId>>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for utt in &conversation.utterances {
        for span in extract_spans(&utt.reference, vocab)? {
            let name = utt.reference[span.begin + 1..span.end].to_vec();
            if !name.is_empty() && seen.insert(name.clone()) {
                out.push(name);
            }
        }
    }
    Ok(out)
}

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

/// Edit distance if it is at most `cap`, otherwise `None`.
fn levenshtein_capped(a: &[char], b: &[char], cap: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > cap {
        return None;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        let mut row_min = cur[0];
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
            row_min = row_min.min(cur[j + 1]);
        }
        if row_min > cap {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= cap).then_some(d)
}

/// Distance from `candidate` to its nearest true name (space-joined).
pub fn min_distance(candidate: &str, truenames: &[String]) -> Option<usize> {
    truenames.iter().map(|t| levenshtein(candidate, t)).min()
}

fn sample_indices(len: usize, amount: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, len, amount).into_vec()
}

/// Uniform sample without replacement from `pool` minus `truenames`.
pub fn sample_distractors(pool: &NameList, truenames: &NameList, count: usize, seed: u64) -> Result<NameList> {
    let available: Vec<&Vec<String>> = pool.names.iter().filter(|n| !truenames.contains(n)).collect();
    if available.len() < count {
        return Err(Error::Names(format!(
            "pool has {} names outside the true list, {count} requested",
            available.len()
        )));
    }
    let picked = sample_indices(available.len(), count, seed);
    NameList::new(picked.into_iter().map(|i| available[i]), Provenance::Distractor)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversarialSample {
    pub names: NameList,
    /// Fewer candidates than requested existed; all were returned.
    pub exhausted: bool,
}

/// Candidate names for adversarial sampling: pool entries, first-name by
/// surname cross products and single components.
#[derive(Debug, Clone)]
pub struct AdversarialPool {
    candidates: Vec<(Vec<char>, Vec<String>)>,
}

impl AdversarialPool {
    pub fn new(pool: &NameList) -> Self {
        let mut firsts = Vec::new();
        let mut lasts = Vec::new();
        let mut seen_first = HashSet::new();
        let mut seen_last = HashSet::new();
        let mut all: Vec<Vec<String>> = pool.names.clone();
        for n in &pool.names {
            if n.len() >= 2 {
                if seen_first.insert(&n[0]) {
                    firsts.push(n[0].clone());
                }
                if seen_last.insert(&n[n.len() - 1]) {
                    lasts.push(n[n.len() - 1].clone());
                }
            }
            all.extend(n.iter().map(|c| vec![c.clone()]));
        }
        for f in &firsts {
            for l in &lasts {
                all.push(vec![f.clone(), l.clone()]);
            }
        }
        let list = NameList::new(all, Provenance::Adversarial(0)).expect("components already validated");
        let candidates = list.names.into_iter().map(|n| (n.join(" ").chars().collect(), n)).collect();
        AdversarialPool { candidates }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Indices of candidates whose nearest true name is exactly `d` away.
    fn at_distance(&self, truenames: &NameList, d: usize) -> Vec<usize> {
        let truth: Vec<Vec<char>> = truenames.joined().iter().map(|s| s.chars().collect()).collect();
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| truth.iter().filter_map(|t| levenshtein_capped(c, t, d)).min() == Some(d))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sample(&self, truenames: &NameList, d: usize, count: usize, seed: u64) -> Result<AdversarialSample> {
        if d == 0 {
            return Err(Error::Names("adversarial distance must be at least 1".into()));
        }
        if truenames.is_empty() {
            return Err(Error::Names("adversarial sampling needs at least one true name".into()));
        }
        let eligible = self.at_distance(truenames, d);
        if eligible.is_empty() {
            return Err(Error::Names(format!("no candidate at distance {d} from the true names")));
        }
        let exhausted = eligible.len() < count;
        let picked: Vec<usize> = if exhausted {
            eligible
        } else {
            sample_indices(eligible.len(), count, seed).into_iter().map(|i| eligible[i]).collect()
        };
        let names = NameList::new(picked.into_iter().map(|i| &self.candidates[i].1), Provenance::Adversarial(d))?;
        Ok(AdversarialSample { names, exhausted })
    }
}

/// Uniform sample of `count` candidates at exactly distance `d` from the
/// nearest true name.
pub fn sample_adversarial(pool: &NameList, truenames: &NameList, d: usize, count: usize, seed: u64) -> Result<AdversarialSample> {
    AdversarialPool::new(pool).sample(truenames, d, count, seed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Perturbation {
    #[default]
    None,
    Distractor { count: usize },
    Adversarial { count: usize, distance: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(flatten)]
    pub kind: Perturbation,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    /// True names extended with the sampled perturbation names.
    pub fn apply(&self, truenames: &NameList, pool: &NameList, adversarial: Option<&AdversarialPool>) -> Result<NameList> {
        match self.kind {
            Perturbation::None => Ok(truenames.clone()),
            Perturbation::Distractor { count } => Ok(truenames.union(&sample_distractors(pool, truenames, count, self.seed)?)),
            Perturbation::Adversarial { count, distance } => {
                let owned;
                let adv = match adversarial {
                    Some(a) => a,
                    None => {
                        owned = AdversarialPool::new(pool);
                        &owned
                    }
                };
                Ok(truenames.union(&adv.sample(truenames, distance, count, self.seed)?.names))
            }
        }
    }
}

/// Name model trained on `[<ne>, name.., </ne>]` sequences by maximum
/// likelihood, interpolated with the in-domain LM at weight `mu`.
pub fn build_ne_lm(
    names: &[Vec<TokenId>],
    id_lm: Arc<dyn LanguageModel>,
    vocab: &Vocab,
    order: usize,
    mu: f64,
) -> Result<Arc<dyn LanguageModel>> {
    let names: Vec<&Vec<TokenId>> = names.iter().filter(|n| !n.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::Names("cannot build an NE LM from an empty name list".into()));
    }
    let sequences: Vec<Vec<TokenId>> = names
        .iter()
        .map(|n| {
            let mut s = Vec::with_capacity(n.len() + 2);
            s.push(vocab.ne_open());
            s.extend_from_slice(n);
            s.push(vocab.ne_close());
            s
        })
        .collect();
    let config = TrainConfig {
        floor_logprob: id_lm.floor_logprob(),
        ..TrainConfig::new(order, Smoothing::AddK(0.0))
    };
    let name_lm: Arc<dyn LanguageModel> = Arc::new(train_ngram(&sequences, vocab, config)?);
    Ok(Arc::new(interpolate(name_lm, id_lm, mu)?))
}
