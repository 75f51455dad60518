use std::sync::Arc;

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Linear interpolation `mu·p_a + (1−mu)·p_b`.
#[derive(Debug, Clone)]
pub struct Interpolated {
    a: Arc<dyn LanguageModel>,
    b: Arc<dyn LanguageModel>,
    mu: f64,
}

impl Interpolated {
    pub fn new(a: Arc<dyn LanguageModel>, b: Arc<dyn LanguageModel>, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Lm(format!("interpolation weight {mu} outside [0, 1]")));
        }
        if a.vocab_size() != b.vocab_size() {
            return Err(Error::Lm(format!(
                "vocabulary size mismatch: {} vs {}",
                a.vocab_size(),
                b.vocab_size()
            )));
        }
        Ok(Interpolated { a, b, mu })
    }

    pub fn weight(&self) -> f64 {
        self.mu
    }

    #[inline]
    fn mix(&self, la: f64, lb: f64) -> f64 {
        log_add(self.mu.ln() + la, (1.0 - self.mu).ln() + lb)
    }
}

#[inline]
fn log_add(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

impl LanguageModel for Interpolated {
    fn vocab_size(&self) -> usize {
        self.a.vocab_size()
    }

    fn context_len(&self) -> usize {
        self.a.context_len().max(self.b.context_len())
    }

    fn floor_logprob(&self) -> f64 {
        self.a.floor_logprob().min(self.b.floor_logprob())
    }

    fn raw_logprob(&self, context: &[TokenId], token: TokenId) -> f64 {
        if self.mu == 1.0 {
            return self.a.raw_logprob(context, token);
        }
        if self.mu == 0.0 {
            return self.b.raw_logprob(context, token);
        }
        self.mix(self.a.raw_logprob(context, token), self.b.raw_logprob(context, token))
    }

    fn raw_row(&self, context: &[TokenId]) -> Vec<f64> {
        if self.mu == 1.0 {
            return self.a.raw_row(context);
        }
        if self.mu == 0.0 {
            return self.b.raw_row(context);
        }
        let ra = self.a.raw_row(context);
        let rb = self.b.raw_row(context);
        ra.into_iter().zip(rb).map(|(x, y)| self.mix(x, y)).collect()
    }
}

/// Builds an [`Interpolated`] model.
pub fn interpolate(a: Arc<dyn LanguageModel>, b: Arc<dyn LanguageModel>, mu: f64) -> Result<Interpolated> {
    Interpolated::new(a, b, mu)
}
