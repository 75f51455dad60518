use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeConfig, LengthNorm};
use crate::error::{Error, Result};
use crate::names::{PerturbationSpec, DEFAULT_NE_MU, DEFAULT_NE_ORDER};
use crate::scorers::{FusionConfig, FusionMode};

/// Which names feed each biasing LM.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmScope {
    /// One LM per utterance from the names actually spoken in it.
    PerUtteranceOracle,
    /// One LM per conversation from its name list.
    #[default]
    PerConversation,
    /// One LM for the whole corpus from the union of all name lists.
    Global,
}

impl LmScope {
    pub fn as_str(self) -> &'static str {
        match self {
            LmScope::PerUtteranceOracle => "per-utterance-oracle",
            LmScope::PerConversation => "per-conversation",
            LmScope::Global => "global",
        }
    }
}

impl fmt::Display for LmScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LmScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-utterance-oracle" | "oracle" => Ok(LmScope::PerUtteranceOracle),
            "per-conversation" | "conversation" => Ok(LmScope::PerConversation),
            "global" => Ok(LmScope::Global),
            _ => Err(Error::Config(format!(
                "unknown lm scope {s:?} (per-utterance-oracle | per-conversation | global)"
            ))),
        }
    }
}

/// Everything that determines one decoding run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: FusionMode,
    pub alpha: f64,
    pub beta: f64,
    pub beam_width: usize,
    pub max_len: usize,
    pub length_norm: LengthNorm,
    pub constraints: bool,
    pub lm_scope: LmScope,
    pub perturbation: Option<PerturbationSpec>,
    pub ne_order: usize,
    pub ne_mu: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fusion = FusionConfig::default();
        let decode = DecodeConfig::default();
        ExperimentConfig {
            mode: fusion.mode,
            alpha: fusion.alpha,
            beta: fusion.beta,
            beam_width: decode.beam_width,
            max_len: 40,
            length_norm: decode.length_norm,
            constraints: decode.constraints,
            lm_scope: LmScope::default(),
            perturbation: None,
            ne_order: DEFAULT_NE_ORDER,
            ne_mu: DEFAULT_NE_MU,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            mode: self.mode,
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            beam_width: self.beam_width,
            max_len: self.max_len,
            length_norm: self.length_norm,
            constraints: self.constraints,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion().validate()?;
        self.decode().validate()?;
        if self.ne_order == 0 {
            return Err(Error::Config("ne_order must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ne_mu) {
            return Err(Error::Config(format!("ne_mu {} outside [0, 1]", self.ne_mu)));
        }
        Ok(())
    }
}

/// Parameters of the synthetic transcription task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_conversations: usize,
    pub utterances_per_conversation: usize,
    pub fraction_with_names: f64,
    /// Conversations whose transcripts train the in-domain LM.
    pub train_conversations: usize,
    pub train_fraction_with_names: f64,
    pub grammar: String,
    /// Probability that a word position is acoustically ambiguous.
    pub noise: f64,
    /// Competing words per ambiguous position.
    pub confusers: usize,
    /// Confusers are the most frequent training words among the
    /// `confusers * confuser_spread` closest spellings.
    pub confuser_spread: usize,
    /// Template sentences per utterance, inclusive range.
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Half-width of the uniform perturbation of ambiguous evidence.
    pub jitter: f64,
    /// Log evidence for words not heard at a position.
    pub background: f64,
    /// Name pool file; a pool is generated when absent.
    pub name_pool: Option<PathBuf>,
    pub generated_pool_size: usize,
    /// Exponent of the rank-frequency law for names in training data.
    pub zipf_exponent: f64,
    pub lm_order: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_conversations: 400,
            utterances_per_conversation: 20,
            fraction_with_names: 0.05,
            train_conversations: 300,
            train_fraction_with_names: 0.2,
            grammar: "clinic".into(),
            noise: 0.4,
            confusers: 3,
            confuser_spread: 3,
            min_sentences: 2,
            max_sentences: 4,
            jitter: 0.5,
            background: -30.0,
            name_pool: None,
            generated_pool_size: 3000,
            zipf_exponent: 1.0,
            lm_order: 3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.fraction_with_names) || !(0.0..=1.0).contains(&self.train_fraction_with_names) {
            return bad("name fractions must lie in [0, 1]".into());
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 0.5]", self.noise));
        }
        if self.n_conversations == 0 || self.utterances_per_conversation == 0 || self.train_conversations == 0 {
            return bad("conversation and utterance counts must be positive".into());
        }
        if !self.jitter.is_finite() || self.jitter < 0.0 || !self.background.is_finite() || self.background >= 0.0 {
            return bad("jitter must be >= 0 and background < 0".into());
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return bad("sentence range must satisfy 1 <= min_sentences <= max_sentences".into());
        }
        if self.lm_order == 0 || !(self.zipf_exponent >= 0.0) {
            return bad("lm_order must be positive and zipf_exponent non-negative".into());
        }
        Ok(())
    }
}
