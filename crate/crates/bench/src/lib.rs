//! Shared fixtures for the Criterion benchmarks in `benches/`.

use std::sync::Arc;

use cdr_core::harness::{synthesize, Models, SynthData, SynthSpec};

/// A small synthetic task and the models decoding it.
pub struct Fixture {
    pub data: SynthData,
    pub models: Models,
}

pub fn fixture(conversations: usize, seed: u64) -> Fixture {
    let spec = SynthSpec {
        n_conversations: conversations,
        seed,
        ..SynthSpec::default()
    };
    let data = synthesize(&spec, None).expect("valid synthetic spec");
    let id = Arc::new(data.train_id_lm(spec.lm_order).expect("training text is non-empty"));
    let e2e = Arc::new(data.e2e(id.clone()).expect("evidence matches vocabulary"));
    let models = Models::new(data.vocab.clone(), id, e2e, Some(data.pool.clone()));
    Fixture { data, models }
}
