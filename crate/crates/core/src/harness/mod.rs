//! Experiment pipelines: synthetic task generation, corpus decoding under a
//! chosen biasing scope, evaluation and parameter sweeps.

pub mod config;
pub mod experiment;
pub mod sweep;
pub mod synth;

pub use config::{ExperimentConfig, LmScope, SynthSpec};
pub use experiment::{
    conversation_names, decode_corpus, evaluate_hypotheses, read_hypotheses, run_experiment, write_hypotheses,
    HypRecord, Models,
};
pub use sweep::{default_distractor_counts, run_sweep, SweepCell, SweepRow, SweepSpec};
pub use synth::{generate_pool, synthesize, write_synth, SynthData, SynthSummary};

/// Independent stream seed derived from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
