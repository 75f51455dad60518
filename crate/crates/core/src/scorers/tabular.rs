use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{E2eModel, E2eState};
use crate::corpus::ObservationKey;
use crate::error::{Error, Result};
use crate::lm::{read_arpa, LanguageModel};
use crate::vocab::{TokenId, Vocab};

/// Emulated E2E posterior: a transition LM `p_tr` reweighted by per-position
/// acoustic evidence and renormalized,
/// `p_e2e(w | y_<t, x) ∝ p_tr(w | y_<t) · κ(w; x, t)`.
///
/// Position `t` is the number of tokens emitted so far. Past the end of the
/// evidence table only `<eos>` is reachable.
#[derive(Debug, Clone)]
pub struct TabularE2E {
    transition: Arc<dyn LanguageModel>,
    keys: Vec<ObservationKey>,
    index: HashMap<ObservationKey, usize>,
    /// `[obs][position]`.
    evidence: Vec<Vec<EvidenceRow>>,
    eos: TokenId,
    floor: f64,
}

/// Log evidence `ln κ` for one position: `background` for every token not
/// listed in `entries`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    #[serde(rename = "bg")]
    pub background: f64,
    #[serde(rename = "tok")]
    pub entries: Vec<(TokenId, f64)>,
}

impl EvidenceRow {
    pub fn sparse(background: f64, mut entries: Vec<(TokenId, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        EvidenceRow { background, entries }
    }

    pub fn dense(values: &[f64]) -> Self {
        EvidenceRow {
            background: 0.0,
            entries: values.iter().enumerate().map(|(i, &x)| (TokenId::from(i), x)).collect(),
        }
    }

    pub fn to_dense(&self, vocab_size: usize) -> Vec<f64> {
        let mut row = vec![self.background; vocab_size];
        for &(t, x) in &self.entries {
            row[t.index()] = x;
        }
        row
    }

    pub fn get(&self, token: TokenId) -> f64 {
        match self.entries.binary_search_by_key(&token, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => self.background,
        }
    }

    fn check(&self, vocab_size: usize) -> bool {
        self.background.is_finite()
            && self.entries.iter().all(|&(t, x)| t.index() < vocab_size && x.is_finite())
            && self.entries.windows(2).all(|w| w[0].0 < w[1].0)
    }
}

#[derive(Serialize, Deserialize)]
struct ObsRecord {
    obs: String,
    rows: Vec<EvidenceRow>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    transition_lm: String,
    observations: Vec<ObsRecord>,
}

impl TabularE2E {
    pub fn new(
        transition: Arc<dyn LanguageModel>,
        observations: Vec<(ObservationKey, Vec<EvidenceRow>)>,
        vocab: &Vocab,
    ) -> Result<Self> {
        let v = vocab.len();
        if transition.vocab_size() != v {
            return Err(Error::Scorer(format!(
                "transition LM vocabulary {} != {v}",
                transition.vocab_size()
            )));
        }
        let mut keys = Vec::with_capacity(observations.len());
        let mut index = HashMap::with_capacity(observations.len());
        let mut evidence = Vec::with_capacity(observations.len());
        for (key, rows) in observations {
            if rows.iter().any(|r| !r.check(v)) {
                return Err(Error::Scorer(format!(
                    "{key}: evidence must be finite, sorted and within the vocabulary of size {v}"
                )));
            }
            if index.insert(key.clone(), keys.len()).is_some() {
                return Err(Error::Scorer(format!("duplicate observation {key}")));
            }
            keys.push(key);
            evidence.push(rows);
        }
        Ok(TabularE2E {
            floor: transition.floor_logprob(),
            transition,
            keys,
            index,
            evidence,
            eos: vocab.eos(),
        })
    }

    pub fn transition(&self) -> &Arc<dyn LanguageModel> {
        &self.transition
    }

    pub fn observations(&self) -> &[ObservationKey] {
        &self.keys
    }

    pub fn evidence(&self, key: &ObservationKey) -> Option<&[EvidenceRow]> {
        self.index.get(key).map(|&i| self.evidence[i].as_slice())
    }

    /// Writes the evidence table as JSON. `transition_ref` is stored verbatim
    /// and resolved relative to the JSON file on load.
    pub fn save(&self, path: impl AsRef<Path>, transition_ref: &str) -> Result<()> {
        let file = TableFile {
            transition_lm: transition_ref.to_string(),
            observations: self
                .keys
                .iter()
                .zip(&self.evidence)
                .map(|(k, rows)| ObsRecord {
                    obs: k.0.clone(),
                    rows: rows.clone(),
                })
                .collect(),
        };
        let bytes = serde_json::to_vec(&file).map_err(|e| Error::Internal(e.to_string()))?;
        crate::corpus::write_file(path.as_ref(), &bytes)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: TableFile = serde_json::from_slice(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let lm_path = path.parent().unwrap_or(Path::new(".")).join(&file.transition_lm);
        let transition = read_arpa(&lm_path, vocab)?;
        let obs = file
            .observations
            .into_iter()
            .map(|r| (ObservationKey(r.obs), r.rows))
            .collect();
        TabularE2E::new(Arc::new(transition), obs, vocab)
    }
}

impl E2eModel for TabularE2E {
    fn vocab_size(&self) -> usize {
        self.transition.vocab_size()
    }

    fn init(&self, observation: &ObservationKey) -> Result<E2eState> {
        let obs = *self
            .index
            .get(observation)
            .ok_or_else(|| Error::UnknownObservation(observation.0.clone()))?;
        Ok(E2eState {
            obs,
            position: 0,
            history: self.transition.initial_state(),
        })
    }

    fn step(&self, state: &E2eState, token: TokenId) -> E2eState {
        E2eState {
            obs: state.obs,
            position: state.position + 1,
            history: self.transition.advance(&state.history, token),
        }
    }

    fn row(&self, state: &E2eState) -> Vec<f64> {
        let Some(kappa) = self.evidence[state.obs].get(state.position) else {
            let mut row = vec![self.floor; self.vocab_size()];
            row[self.eos.index()] = 0.0;
            return row;
        };
        let mut row = self.transition.row(&state.history);
        for r in &mut row {
            *r += kappa.background;
        }
        for &(t, k) in &kappa.entries {
            row[t.index()] += k - kappa.background;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = max + row.iter().map(|r| (r - max).exp()).sum::<f64>().ln();
        for r in &mut row {
            *r -= z;
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{context_mass, train_ngram, write_arpa, NGramLm, Smoothing, TrainConfig};

    fn setup() -> (Vocab, NGramLm) {
        let v = Vocab::with_reserved(["a", "b", "c"]).unwrap();
        let seqs = vec![v.encode_str("a b c", false).unwrap(), v.encode_str("b b a", false).unwrap()];
        let lm = train_ngram(&seqs, &v, TrainConfig::new(2, Smoothing::WittenBell)).unwrap();
        (v, lm)
    }

    #[test]
    fn uniform_evidence_reproduces_transition_lm() {
        let (v, lm) = setup();
        let rows = vec![EvidenceRow::sparse(-1.5, vec![]); 4];
        let e2e = TabularE2E::new(Arc::new(lm.clone()), vec![("o".into(), rows)], &v).unwrap();
        let mut st = e2e.init(&"o".into()).unwrap();
        let mut ls = lm.initial_state();
        for t in v.encode_str("a b c", false).unwrap() {
            let got = e2e.row(&st);
            assert!((context_mass(&lm, &ls) - 1.0).abs() < 1e-12);
            for (g, w) in got.iter().zip(lm.row(&ls)) {
                assert!((g - w).abs() < 1e-12);
            }
            st = e2e.step(&st, t);
            ls = lm.advance(&ls, t);
        }
    }

    #[test]
    fn rows_normalize_and_expire() {
        let (v, lm) = setup();
        let rows = vec![EvidenceRow::dense(&[0.0, -3.0, -1.0, -2.0, -5.0, -0.5, -4.0]); 2];
        let e2e = TabularE2E::new(Arc::new(lm), vec![("o".into(), rows)], &v).unwrap();
        let mut st = e2e.init(&"o".into()).unwrap();
        for _ in 0..2 {
            let mass: f64 = e2e.row(&st).iter().map(|x| x.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-9);
            st = e2e.step(&st, TokenId(0));
        }
        let past = e2e.row(&st);
        assert_eq!(past[v.eos().index()], 0.0);
        assert!(past.iter().enumerate().all(|(i, &x)| i == v.eos().index() || x == DEFAULT_FLOOR));
    }

    const DEFAULT_FLOOR: f64 = crate::lm::DEFAULT_FLOOR_LOGPROB;

    #[test]
    fn sparse_matches_dense() {
        let (v, lm) = setup();
        let sparse = EvidenceRow::sparse(-30.0, vec![(TokenId(3), -0.2), (TokenId(1), 0.1)]);
        let dense = EvidenceRow::dense(&sparse.to_dense(v.len()));
        assert_eq!(sparse.get(TokenId(1)), 0.1);
        assert_eq!(sparse.get(TokenId(0)), -30.0);
        let lm = Arc::new(lm);
        let a = TabularE2E::new(lm.clone(), vec![("o".into(), vec![sparse])], &v).unwrap();
        let b = TabularE2E::new(lm, vec![("o".into(), vec![dense])], &v).unwrap();
        let (sa, sb) = (a.init(&"o".into()).unwrap(), b.init(&"o".into()).unwrap());
        for (x, y) in a.row(&sa).iter().zip(b.row(&sb)) {
            assert!((x - y).abs() < 1e-9);
        }
        let bad = EvidenceRow { background: 0.0, entries: vec![(TokenId(99), 0.0)] };
        assert!(TabularE2E::new(a.transition().clone(), vec![("o".into(), vec![bad])], &v).is_err());
    }

    #[test]
    fn unknown_observation() {
        let (v, lm) = setup();
        let e2e = TabularE2E::new(Arc::new(lm), vec![], &v).unwrap();
        assert!(matches!(e2e.init(&"x".into()), Err(Error::UnknownObservation(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let (v, lm) = setup();
        let dir = tempfile::tempdir().unwrap();
        write_arpa(&lm, &v, dir.path().join("tr.arpa")).unwrap();
        let rows = vec![
            EvidenceRow::dense(&[-0.25, -3.0, -1.0, -2.0, -5.0, -0.5, -4.0]),
            EvidenceRow::sparse(-30.0, vec![(TokenId(2), 0.0), (TokenId(0), -0.5)]),
        ];
        let e2e = TabularE2E::new(Arc::new(lm), vec![("o".into(), rows.clone())], &v).unwrap();
        e2e.save(dir.path().join("e2e.json"), "tr.arpa").unwrap();
        let back = TabularE2E::load(dir.path().join("e2e.json"), &v).unwrap();
        assert_eq!(back.evidence(&"o".into()).unwrap(), rows.as_slice());
        let (a, b) = (e2e.init(&"o".into()).unwrap(), back.init(&"o".into()).unwrap());
        for (x, y) in e2e.row(&a).iter().zip(back.row(&b)) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
