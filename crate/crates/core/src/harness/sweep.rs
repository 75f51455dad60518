use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LmScope};
use super::experiment::{run_experiment, Models};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{fmt_pct, EvalReport};
use crate::names::{Perturbation, PerturbationSpec, DEFAULT_ADVERSARIAL_COUNT};
use crate::scorers::FusionMode;

/// Distractor counts 0, 1, 2, 4, ..., 256.
pub fn default_distractor_counts() -> Vec<usize> {
    std::iter::once(0).chain((0..=8).map(|k| 1 << k)).collect()
}

fn default_distances() -> Vec<usize> {
    vec![1, 2, 4]
}

fn default_adversarial_count() -> usize {
    DEFAULT_ADVERSARIAL_COUNT
}

/// A grid of experiment settings derived from a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepSpec {
    Distractors {
        #[serde(default = "default_distractor_counts")]
        counts: Vec<usize>,
    },
    /// Adversarial names at each distance, plus a reference cell with the
    /// same number of random distractors.
    Adversarial {
        #[serde(default = "default_distances")]
        distances: Vec<usize>,
        #[serde(default = "default_adversarial_count")]
        count: usize,
    },
    Mu { values: Vec<f64> },
    AlphaBeta { alphas: Vec<f64>, betas: Vec<f64> },
    Modes { modes: Vec<FusionMode> },
    Scopes { scopes: Vec<LmScope> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub label: String,
    /// Position on the curve x-axis.
    pub x: f64,
    pub config: ExperimentConfig,
}

impl SweepSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SweepSpec::Distractors { .. } => "distractors",
            SweepSpec::Adversarial { .. } => "adversarial",
            SweepSpec::Mu { .. } => "mu",
            SweepSpec::AlphaBeta { .. } => "alpha-beta",
            SweepSpec::Modes { .. } => "modes",
            SweepSpec::Scopes { .. } => "scopes",
        }
    }

    pub fn cells(&self, base: &ExperimentConfig) -> Result<Vec<SweepCell>> {
        let seed = base.perturbation.map_or(base.seed, |p| p.seed);
        let with = |kind| Some(PerturbationSpec { kind, seed });
        let cell = |label: String, x: f64, config: ExperimentConfig| SweepCell { label, x, config };
        let cells: Vec<SweepCell> = match self {
            SweepSpec::Distractors { counts } => counts
                .iter()
                .map(|&count| {
                    let perturbation = (count > 0).then(|| with(Perturbation::Distractor { count })).flatten();
                    cell(format!("distractors={count}"), count as f64, ExperimentConfig { perturbation, ..base.clone() })
                })
                .collect(),
            SweepSpec::Adversarial { distances, count } => {
                if distances.contains(&0) {
                    return Err(Error::Config("adversarial distances must be positive".into()));
                }
                let mut out: Vec<SweepCell> = distances
                    .iter()
                    .map(|&distance| {
                        let perturbation = with(Perturbation::Adversarial { count: *count, distance });
                        cell(format!("adversarial-d={distance}"), distance as f64, ExperimentConfig { perturbation, ..base.clone() })
                    })
                    .collect();
                let perturbation = with(Perturbation::Distractor { count: *count });
                out.push(cell(format!("random={count}"), 0.0, ExperimentConfig { perturbation, ..base.clone() }));
                out
            }
            SweepSpec::Mu { values } => values
                .iter()
                .map(|&ne_mu| cell(format!("mu={ne_mu}"), ne_mu, ExperimentConfig { ne_mu, ..base.clone() }))
                .collect(),
            SweepSpec::AlphaBeta { alphas, betas } => alphas
                .iter()
                .flat_map(|&alpha| betas.iter().map(move |&beta| (alpha, beta)))
                .map(|(alpha, beta)| {
                    cell(format!("alpha={alpha},beta={beta}"), alpha, ExperimentConfig { alpha, beta, ..base.clone() })
                })
                .collect(),
            SweepSpec::Modes { modes } => modes
                .iter()
                .enumerate()
                .map(|(i, &mode)| cell(format!("mode={mode}"), i as f64, ExperimentConfig { mode, ..base.clone() }))
                .collect(),
            SweepSpec::Scopes { scopes } => scopes
                .iter()
                .enumerate()
                .map(|(i, &lm_scope)| cell(format!("scope={lm_scope}"), i as f64, ExperimentConfig { lm_scope, ..base.clone() }))
                .collect(),
        };
        if cells.is_empty() {
            return Err(Error::Config(format!("{} sweep has no cells", self.name())));
        }
        for c in &cells {
            c.config.validate()?;
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub sweep: &'static str,
    pub cell: SweepCell,
    pub report: EvalReport,
}

impl SweepRow {
    pub const TSV_HEADER: &'static str =
        "sweep\tcell\tx\tmode\talpha\tbeta\tscope\tmu\tperturbation\tWER\tWERT\ttag_P\ttag_R";

    pub fn tsv_row(&self) -> String {
        let c = &self.cell.config;
        let perturbation = match c.perturbation.map(|p| p.kind) {
            None | Some(Perturbation::None) => "none".to_string(),
            Some(Perturbation::Distractor { count }) => format!("distractor:{count}"),
            Some(Perturbation::Adversarial { count, distance }) => format!("adversarial:{count}:d{distance}"),
        };
        let r = &self.report;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.sweep,
            self.cell.label,
            self.cell.x,
            c.mode,
            c.alpha,
            c.beta,
            c.lm_scope,
            c.ne_mu,
            perturbation,
            fmt_pct(r.wer),
            fmt_pct(r.wert),
            fmt_pct(Some(r.tag_precision)),
            fmt_pct(r.tag_recall)
        )
    }

    /// `x<TAB>WERT` line for plotting.
    pub fn curve_point(&self) -> String {
        format!("{}\t{}", self.cell.x, fmt_pct(self.report.wert))
    }
}

/// Runs every cell in order, handing each finished row to `sink` before
/// starting the next. A failing cell stops the sweep; rows already passed
/// to `sink` are kept by the caller.
pub fn run_sweep(
    corpus: &Corpus,
    models: &Models,
    base: &ExperimentConfig,
    spec: &SweepSpec,
    mut sink: impl FnMut(&SweepRow) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for cell in spec.cells(base)? {
        let (_, report) = run_experiment(corpus, models, &cell.config, &cell.label)?;
        let row = SweepRow {
            sweep: spec.name(),
            cell,
            report,
        };
        sink(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        assert_eq!(default_distractor_counts(), vec![0, 1, 2, 4, 8, 16, 32, 64, 128, 256]);
        let spec: SweepSpec = serde_json::from_str(r#"{"kind":"adversarial"}"#).unwrap();
        let cells = spec.cells(&ExperimentConfig::default()).unwrap();
        assert_eq!(cells.len(), 4);
        for c in &cells {
            let kind = c.config.perturbation.unwrap().kind;
            let count = match kind {
                Perturbation::Adversarial { count, .. } | Perturbation::Distractor { count } => count,
                Perturbation::None => 0,
            };
            assert_eq!(count, 16);
        }
    }

    #[test]
    fn grid_cells() {
        let base = ExperimentConfig::default();
        let ab = SweepSpec::AlphaBeta { alphas: vec![0.0, 0.5], betas: vec![0.1, 1.0, 2.0] };
        assert_eq!(ab.cells(&base).unwrap().len(), 6);
        let d = SweepSpec::Distractors { counts: vec![0, 16] }.cells(&base).unwrap();
        assert_eq!(d[0].config.perturbation, None);
        assert!(SweepSpec::Mu { values: vec![] }.cells(&base).is_err());
        assert!(SweepSpec::Mu { values: vec![2.0] }.cells(&base).is_err());
    }
}
