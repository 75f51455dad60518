//! Conversations, utterances and their JSON-lines file formats.
//!
//! A corpus is stored as two files: one record per utterance
//! (`{"conv", "utt", "ref", "obs"}`) and one record per conversation listing
//! the a-priori known names (`{"conv", "names"}`).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::validate_tags;
use crate::vocab::{TokenId, Vocab};

/// Opaque handle naming the acoustic evidence of an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationKey(pub String);

impl fmt::Display for ObservationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObservationKey {
    fn from(s: &str) -> Self {
        ObservationKey(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub conversation_id: String,
    pub utterance_id: String,
    pub reference: Vec<TokenId>,
    pub observation: Option<ObservationKey>,
}

impl Utterance {
    pub fn new(
        conversation_id: impl Into<String>,
        utterance_id: impl Into<String>,
        reference: Vec<TokenId>,
        observation: Option<ObservationKey>,
        vocab: &Vocab,
    ) -> Result<Self> {
        let utt = Utterance {
            conversation_id: conversation_id.into(),
            utterance_id: utterance_id.into(),
            reference,
            observation,
        };
        utt.validate(vocab)?;
        Ok(utt)
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for &t in &self.reference {
            vocab.check(t)?;
        }
        if self.reference.contains(&vocab.eos()) {
            return Err(Error::Corpus(format!(
                "{}/{}: <eos> inside reference",
                self.conversation_id, self.utterance_id
            )));
        }
        validate_tags(&self.reference, vocab)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub names: Vec<Vec<TokenId>>,
}

impl Conversation {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let mut ids = HashSet::new();
        for u in &self.utterances {
            if u.conversation_id != self.id {
                return Err(Error::Corpus(format!(
                    "utterance {} claims conversation {} but is stored under {}",
                    u.utterance_id, u.conversation_id, self.id
                )));
            }
            if !ids.insert(u.utterance_id.as_str()) {
                return Err(Error::Corpus(format!(
                    "duplicate utterance id {} in conversation {}",
                    u.utterance_id, self.id
                )));
            }
            u.validate(vocab)?;
        }
        for name in &self.names {
            if name.is_empty() || name.iter().any(|&t| vocab.is_reserved(t)) {
                return Err(Error::Corpus(format!(
                    "conversation {}: name {:?} is empty or contains reserved tokens",
                    self.id,
                    vocab.join(name)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
}

#[derive(Serialize, Deserialize)]
struct UttRecord {
    conv: String,
    utt: String,
    #[serde(rename = "ref")]
    reference: Vec<String>,
    obs: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct NamesRecord {
    conv: String,
    names: Vec<Vec<String>>,
}

/// Options for [`Corpus::load`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Map out-of-vocabulary tokens to `<unk>` instead of failing.
    pub allow_unk: bool,
}

impl Corpus {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let mut ids = HashSet::new();
        for c in &self.conversations {
            if !ids.insert(c.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate conversation id {}", c.id)));
            }
            c.validate(vocab)?;
        }
        Ok(())
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.conversations.iter().flat_map(|c| c.utterances.iter())
    }

    pub fn num_utterances(&self) -> usize {
        self.conversations.iter().map(|c| c.utterances.len()).sum()
    }

    /// Loads utterances and, if given, the companion name file. Conversations
    /// appear in order of first mention.
    pub fn load(
        corpus_path: impl AsRef<Path>,
        names_path: Option<&Path>,
        vocab: &Vocab,
        opts: LoadOptions,
    ) -> Result<Corpus> {
        let corpus_path = corpus_path.as_ref();
        let mut order: HashMap<String, usize> = HashMap::new();
        let mut conversations: Vec<Conversation> = Vec::new();
        let conv_slot = |id: &str, order: &mut HashMap<String, usize>, convs: &mut Vec<Conversation>| {
            *order.entry(id.to_string()).or_insert_with(|| {
                convs.push(Conversation {
                    id: id.to_string(),
                    utterances: Vec::new(),
                    names: Vec::new(),
                });
                convs.len() - 1
            })
        };

        for_each_record(corpus_path, |line, rec: UttRecord| {
            let reference = vocab
                .encode(&rec.reference, opts.allow_unk)
                .map_err(|e| Error::parse(corpus_path, line, e.to_string()))?;
            let utt = Utterance::new(
                rec.conv.clone(),
                rec.utt,
                reference,
                rec.obs.map(ObservationKey),
                vocab,
            )
            .map_err(|e| Error::parse(corpus_path, line, e.to_string()))?;
            let slot = conv_slot(&rec.conv, &mut order, &mut conversations);
            conversations[slot].utterances.push(utt);
            Ok(())
        })?;

        if let Some(names_path) = names_path {
            for_each_record(names_path, |line, rec: NamesRecord| {
                let slot = conv_slot(&rec.conv, &mut order, &mut conversations);
                for name in &rec.names {
                    let ids = vocab
                        .encode(name, opts.allow_unk)
                        .map_err(|e| Error::parse(names_path, line, e.to_string()))?;
                    conversations[slot].names.push(ids);
                }
                Ok(())
            })?;
        }

        let corpus = Corpus { conversations };
        corpus.validate(vocab)?;
        Ok(corpus)
    }

    pub fn save(&self, corpus_path: impl AsRef<Path>, names_path: Option<&Path>, vocab: &Vocab) -> Result<()> {
        let mut out = Vec::new();
        for u in self.utterances() {
            let rec = UttRecord {
                conv: u.conversation_id.clone(),
                utt: u.utterance_id.clone(),
                reference: vocab.decode(&u.reference),
                obs: u.observation.as_ref().map(|o| o.0.clone()),
            };
            write_record(&mut out, &rec)?;
        }
        write_file(corpus_path.as_ref(), &out)?;

        if let Some(names_path) = names_path {
            let mut out = Vec::new();
            for c in &self.conversations {
                let rec = NamesRecord {
                    conv: c.id.clone(),
                    names: c.names.iter().map(|n| vocab.decode(n)).collect(),
                };
                write_record(&mut out, &rec)?;
            }
            write_file(names_path, &out)?;
        }
        Ok(())
    }
}

fn for_each_record<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        f(i + 1, rec)?;
    }
    Ok(())
}

pub(crate) fn write_record<T: Serialize>(out: &mut Vec<u8>, rec: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, rec).map_err(|e| Error::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(())
}

/// Writes via a temporary sibling and rename so readers never see a partial file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
