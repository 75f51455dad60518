//! Exactly enumerable noisy-channel posterior over a tiny vocabulary.
//!
//! All sequences up to `max_len` are listed explicitly together with a
//! channel likelihood `p(x|y)`, an in-domain prior `p_int(y)` and an
//! out-of-domain prior `q(y)`. Every conditional is obtained by summing
//! sequence probabilities over prefixes, so the internal LM of the emulated
//! E2E model is known exactly.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{E2eModel, E2eState};
use crate::corpus::ObservationKey;
use crate::edit::edit_distance;
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LmState, DEFAULT_FLOOR_LOGPROB};
use crate::vocab::{TokenId, Vocab};

/// Upper bound on the number of enumerated sequences.
pub const MAX_ENUMERATION: usize = 50_000;

/// `ln p(x|y) = −sharpness · lev(y, y*) + jitter · u(y)` with `u ~ U(−1, 1)`
/// and `y*` a random sequence from the enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub sharpness: f64,
    pub jitter: f64,
}

impl ChannelParams {
    pub fn uniform() -> Self {
        ChannelParams {
            sharpness: 0.0,
            jitter: 0.0,
        }
    }
}

/// Priors are built autoregressively: each prefix shorter than `max_len`
/// gets a next-token distribution `softmax(temperature · g)` with
/// `g ~ U(0, 1)` over the alphabet and `<eos>`. Zero temperature is uniform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorParams {
    pub temperature: f64,
}

impl PriorParams {
    pub fn uniform() -> Self {
        PriorParams { temperature: 0.0 }
    }
}

#[derive(Debug)]
struct PrefixTable {
    /// `ln P(y)` for each complete sequence.
    exact: HashMap<Vec<TokenId>, f64>,
    /// `ln Σ P(y)` over sequences extending each prefix.
    mass: HashMap<Vec<TokenId>, f64>,
}

impl PrefixTable {
    fn new(sequences: &[Vec<TokenId>], logp: &[f64]) -> Self {
        let mut mass: HashMap<Vec<TokenId>, f64> = HashMap::new();
        let mut exact = HashMap::with_capacity(sequences.len());
        for (y, &lp) in sequences.iter().zip(logp) {
            let p = lp.exp();
            for k in 0..=y.len() {
                *mass.entry(y[..k].to_vec()).or_insert(0.0) += p;
            }
            exact.insert(y.clone(), lp);
        }
        let mass = mass.into_iter().map(|(k, m)| (k, m.ln())).collect();
        PrefixTable { exact, mass }
    }
}

/// Exact conditional view `P(w | prefix)` of one sequence distribution.
#[derive(Debug, Clone)]
pub struct ExactLm {
    table: Arc<PrefixTable>,
    vocab_size: usize,
    eos: TokenId,
    max_len: usize,
}

impl LanguageModel for ExactLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> usize {
        self.max_len
    }

    fn floor_logprob(&self) -> f64 {
        DEFAULT_FLOOR_LOGPROB
    }

    fn raw_logprob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let Some(&m) = self.table.mass.get(context) else {
            return f64::NEG_INFINITY;
        };
        if token == self.eos {
            return self.table.exact.get(context).map_or(f64::NEG_INFINITY, |&e| e - m);
        }
        let mut ext = Vec::with_capacity(context.len() + 1);
        ext.extend_from_slice(context);
        ext.push(token);
        self.table.mass.get(&ext).map_or(f64::NEG_INFINITY, |&e| e - m)
    }
}

#[derive(Debug, Clone)]
pub struct EnumerablePosterior {
    vocab: Vocab,
    observation: ObservationKey,
    max_len: usize,
    sequences: Vec<Vec<TokenId>>,
    log_likelihood: Vec<f64>,
    log_prior: Vec<f64>,
    log_ood_prior: Vec<f64>,
    log_posterior: Vec<f64>,
    log_ood_posterior: Vec<f64>,
    posterior: ExactLm,
    internal: ExactLm,
    ood: ExactLm,
}

/// Builds a random instance over `vocab_size` tokens (the four reserved
/// tokens plus `vocab_size − 4` words). Sequences range over every token
/// except `<eos>`.
pub fn build_enumerable(
    vocab_size: usize,
    max_len: usize,
    channel: ChannelParams,
    prior: PriorParams,
    seed: u64,
) -> Result<EnumerablePosterior> {
    if !(4..=8).contains(&vocab_size) {
        return Err(Error::Scorer(format!("vocab_size {vocab_size} outside 4..=8")));
    }
    let words: Vec<String> = (0..vocab_size - 4).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::with_reserved(words)?;
    let alphabet: Vec<TokenId> = vocab.ids().filter(|&t| t != vocab.eos()).collect();
    let n = alphabet.len();
    let total: usize = (0..=max_len).map(|k| n.pow(k as u32)).sum();
    if total > MAX_ENUMERATION {
        return Err(Error::Scorer(format!(
            "enumeration of {total} sequences exceeds {MAX_ENUMERATION}"
        )));
    }

    let mut sequences: Vec<Vec<TokenId>> = vec![vec![]];
    let mut frontier = 0;
    while frontier < sequences.len() {
        if sequences[frontier].len() < max_len {
            for &t in &alphabet {
                let mut s = sequences[frontier].clone();
                s.push(t);
                sequences.push(s);
            }
        }
        frontier += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_prior = autoregressive_prior(&sequences, &alphabet, max_len, prior.temperature, &mut rng);
    let log_ood_prior = autoregressive_prior(&sequences, &alphabet, max_len, prior.temperature, &mut rng);

    let target = &sequences[rng.random_range(0..sequences.len())];
    let log_likelihood: Vec<f64> = sequences
        .iter()
        .map(|y| {
            let u: f64 = rng.random_range(-1.0..1.0);
            -channel.sharpness * edit_distance(y, target) as f64 + channel.jitter * u
        })
        .collect();

    let joint = |prior: &[f64]| -> Vec<f64> {
        let lj: Vec<f64> = log_likelihood.iter().zip(prior).map(|(l, p)| l + p).collect();
        let z = log_sum_exp(&lj);
        lj.into_iter().map(|x| x - z).collect()
    };
    let log_posterior = joint(&log_prior);
    let log_ood_posterior = joint(&log_ood_prior);

    let view = |logp: &[f64]| ExactLm {
        table: Arc::new(PrefixTable::new(&sequences, logp)),
        vocab_size,
        eos: vocab.eos(),
        max_len,
    };
    Ok(EnumerablePosterior {
        posterior: view(&log_posterior),
        internal: view(&log_prior),
        ood: view(&log_ood_prior),
        observation: ObservationKey(format!("enum-{seed}")),
        vocab,
        max_len,
        sequences,
        log_likelihood,
        log_prior,
        log_ood_prior,
        log_posterior,
        log_ood_posterior,
    })
}

fn autoregressive_prior(
    sequences: &[Vec<TokenId>],
    alphabet: &[TokenId],
    max_len: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    // per-prefix next-token log distribution; last slot is <eos>
    let mut cond: HashMap<&[TokenId], Vec<f64>> = HashMap::new();
    for y in sequences {
        let logits: Vec<f64> = if y.len() < max_len {
            (0..=alphabet.len())
                .map(|_| temperature * rng.random::<f64>())
                .collect()
        } else {
            let mut l = vec![f64::NEG_INFINITY; alphabet.len() + 1];
            l[alphabet.len()] = 0.0;
            l
        };
        let z = log_sum_exp(&logits);
        cond.insert(y.as_slice(), logits.into_iter().map(|x| x - z).collect());
    }
    let pos = |t: TokenId| alphabet.iter().position(|&a| a == t).expect("token in alphabet");
    sequences
        .iter()
        .map(|y| {
            let mut lp = 0.0;
            for k in 0..y.len() {
                lp += cond[&y[..k]][pos(y[k])];
            }
            lp + cond[y.as_slice()][alphabet.len()]
        })
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl EnumerablePosterior {
    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn observation(&self) -> &ObservationKey {
        &self.observation
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Every sequence in the support, shortest first.
    pub fn sequences(&self) -> &[Vec<TokenId>] {
        &self.sequences
    }

    pub fn log_likelihood(&self) -> &[f64] {
        &self.log_likelihood
    }

    /// `ln p_int(y)`.
    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    /// `ln q(y)`.
    pub fn log_ood_prior(&self) -> &[f64] {
        &self.log_ood_prior
    }

    /// `ln p(y|x)`.
    pub fn log_posterior(&self) -> &[f64] {
        &self.log_posterior
    }

    /// `ln q(y|x)`, the out-of-domain posterior density ratio aims for.
    pub fn log_ood_posterior(&self) -> &[f64] {
        &self.log_ood_posterior
    }

    /// Exact internal marginal `p_int(y_t | y_<t)`.
    pub fn internal_lm(&self) -> ExactLm {
        self.internal.clone()
    }

    /// Exact out-of-domain marginal `q(y_t | y_<t)`.
    pub fn ood_lm(&self) -> ExactLm {
        self.ood.clone()
    }

    /// Draws `n` sequences from the internal prior.
    pub fn sample_prior(&self, n: usize, seed: u64) -> Vec<Vec<TokenId>> {
        let mut cdf = Vec::with_capacity(self.sequences.len());
        let mut acc = 0.0;
        for lp in &self.log_prior {
            acc += lp.exp();
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let i = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                self.sequences[i].clone()
            })
            .collect()
    }

    /// Mean `|ln p_int(w | prefix) − ln lm(w | prefix)|` over every
    /// reachable (prefix, token) pair of the support.
    pub fn internal_lm_gap(&self, lm: &dyn LanguageModel) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for y in &self.sequences {
            for w in self.vocab.ids() {
                let exact = self.internal.raw_logprob(y, w);
                if exact.is_finite() {
                    total += (exact - lm.raw_logprob(y, w).max(lm.floor_logprob())).abs();
                    count += 1;
                }
            }
        }
        total / count.max(1) as f64
    }
}

impl E2eModel for EnumerablePosterior {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn init(&self, observation: &ObservationKey) -> Result<E2eState> {
        if observation != &self.observation {
            return Err(Error::UnknownObservation(observation.0.clone()));
        }
        Ok(E2eState {
            obs: 0,
            position: 0,
            history: LmState::default(),
        })
    }

    fn step(&self, state: &E2eState, token: TokenId) -> E2eState {
        E2eState {
            obs: 0,
            position: state.position + 1,
            history: self.posterior.advance(&state.history, token),
        }
    }

    fn row(&self, state: &E2eState) -> Vec<f64> {
        self.posterior.raw_row(state.history.context())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{sequence_logprob, train_ngram, Smoothing, TrainConfig};

    fn instance(seed: u64) -> EnumerablePosterior {
        build_enumerable(
            6,
            4,
            ChannelParams {
                sharpness: 1.0,
                jitter: 0.5,
            },
            PriorParams { temperature: 3.0 },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn uniform_everything_gives_uniform_conditionals() {
        let e = build_enumerable(6, 3, ChannelParams::uniform(), PriorParams::uniform(), 1).unwrap();
        let obs = e.observation().clone();
        let mut st = e.init(&obs).unwrap();
        for t in [TokenId(0), TokenId(1)] {
            let row = e.row(&st);
            for &x in &row {
                assert!((x - (1.0f64 / 6.0).ln()).abs() < 1e-12);
            }
            st = e.step(&st, t);
        }
    }

    #[test]
    fn posterior_normalizes() {
        let e = instance(4);
        let total: f64 = e.log_posterior().iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let total: f64 = e.log_prior().iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chain_rule_reproduces_sequence_posterior() {
        let e = instance(9);
        let obs = e.observation().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let i = rng.random_range(0..e.sequences().len());
            let y = &e.sequences()[i];
            let mut st = e.init(&obs).unwrap();
            let mut total = 0.0;
            for &t in y.iter().chain(std::iter::once(&e.vocab().eos())) {
                total += e.row(&st)[t.index()];
                st = e.step(&st, t);
            }
            assert!((total - e.log_posterior()[i]).abs() < 1e-9);
            // same for the exact internal marginal
            let lp = sequence_logprob(&e.internal_lm(), y, e.vocab().eos());
            assert!((lp - e.log_prior()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_are_normalized() {
        let e = instance(12);
        let obs = e.observation().clone();
        let mut st = e.init(&obs).unwrap();
        for t in [TokenId(1), TokenId(0), TokenId(3), TokenId(2)] {
            let mass: f64 = e.row(&st).iter().map(|x| x.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-9);
            st = e.step(&st, t);
        }
        // at max_len only <eos> remains
        let row = e.row(&st);
        assert_eq!(row[e.vocab().eos().index()], 0.0);
    }

    #[test]
    fn too_large_rejected() {
        assert!(build_enumerable(8, 6, ChannelParams::uniform(), PriorParams::uniform(), 0).is_err());
        assert!(build_enumerable(9, 2, ChannelParams::uniform(), PriorParams::uniform(), 0).is_err());
    }

    #[test]
    fn unknown_observation_rejected() {
        let e = instance(1);
        assert!(e.init(&"other".into()).is_err());
    }

    #[test]
    fn sampled_ngram_gap_is_reported() {
        let e = instance(21);
        let samples = e.sample_prior(10_000, 5);
        let lm = train_ngram(&samples, e.vocab(), TrainConfig::new(3, Smoothing::WittenBell)).unwrap();
        let gap = e.internal_lm_gap(&lm);
        eprintln!("mean |ln p_int - ln p_ngram| = {gap:.4}");
        assert!(gap.is_finite());
    }
}
