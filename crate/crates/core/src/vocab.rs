use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NE_OPEN: &str = "<ne>";
pub const NE_CLOSE: &str = "</ne>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Index of a token in a [`Vocab`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Debug for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Closed token inventory. Token ids are positions in the token list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    ne_open: TokenId,
    ne_close: TokenId,
    eos: TokenId,
    unk: TokenId,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Vocab("empty vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!(
                    "line {}: token {tok:?} is empty or contains whitespace",
                    i + 1
                )));
            }
            if index.insert(tok.clone(), TokenId::from(i)).is_some() {
                return Err(Error::DuplicateToken {
                    token: tok.clone(),
                    line: i + 1,
                });
            }
        }
        let reserved = |name: &'static str| index.get(name).copied().ok_or(Error::MissingReserved(name));
        Ok(Vocab {
            ne_open: reserved(NE_OPEN)?,
            ne_close: reserved(NE_CLOSE)?,
            eos: reserved(EOS)?,
            unk: reserved(UNK)?,
            tokens,
            index,
        })
    }

    /// Builds a vocabulary from `words` followed by the four reserved tokens,
    /// skipping words already present.
    pub fn with_reserved<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = std::collections::HashSet::new();
        let mut tokens = Vec::new();
        for w in words.into_iter().map(Into::into) {
            if [NE_OPEN, NE_CLOSE, EOS, UNK].contains(&w.as_str()) {
                continue;
            }
            if seen.insert(w.clone()) {
                tokens.push(w);
            }
        }
        tokens.extend([NE_OPEN, NE_CLOSE, EOS, UNK].map(String::from));
        Vocab::new(tokens)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.is_empty() {
            return Err(Error::Vocab(format!("{}: empty file", path.display())));
        }
        Vocab::new(tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ne_open(&self) -> TokenId {
        self.ne_open
    }

    pub fn ne_close(&self) -> TokenId {
        self.ne_close
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn is_tag(&self, id: TokenId) -> bool {
        id == self.ne_open || id == self.ne_close
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id == self.ne_open || id == self.ne_close || id == self.eos || id == self.unk
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> {
        (0..self.tokens.len()).map(TokenId::from)
    }

    pub fn check(&self, id: TokenId) -> Result<TokenId> {
        if id.index() < self.len() {
            Ok(id)
        } else {
            Err(Error::TokenOutOfRange {
                id: id.index(),
                size: self.len(),
            })
        }
    }

    /// Maps token strings to ids. Unknown tokens become `<unk>` when
    /// `allow_unk` is set and are an error otherwise.
    pub fn encode<S: AsRef<str>>(&self, words: &[S], allow_unk: bool) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| match self.id(w.as_ref()) {
                Some(id) => Ok(id),
                None if allow_unk => Ok(self.unk),
                None => Err(Error::UnknownToken(w.as_ref().to_string())),
            })
            .collect()
    }

    pub fn encode_str(&self, text: &str, allow_unk: bool) -> Result<Vec<TokenId>> {
        let words: Vec<&str> = text.split_whitespace().collect();
        self.encode(&words, allow_unk)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    pub fn join(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
