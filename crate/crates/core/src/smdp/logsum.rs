use crate::error::{MterError, Result};

/// Expected maximum of a set of action values under additive random shocks,
/// together with its gradient (the choice probabilities).
pub trait Surplus {
    fn surplus(&self, values: &[f64]) -> f64;
    /// Writes choice probabilities into `out` (same length as `values`).
    fn probabilities(&self, values: &[f64], out: &mut [f64]);
}

/// Multinomial logit with scale `scale`: `(1/scale) ln sum exp(scale v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Logit {
    pub scale: f64,
}

impl Logit {
    pub fn new(scale: f64) -> Self {
        Logit { scale }
    }

    /// Log-sum of a pair, the accept/reject decision.
    #[inline]
    pub fn pair(&self, a: f64, b: f64) -> f64 {
        let m = a.max(b);
        m + (-(self.scale * (a - b).abs())).exp().ln_1p() / self.scale
    }

    /// Probability of picking `a` over `b`.
    #[inline]
    pub fn pair_prob(&self, a: f64, b: f64) -> f64 {
        let x = self.scale * (a - b);
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    #[inline]
    pub fn surplus_iter(&self, values: impl Iterator<Item = f64> + Clone) -> f64 {
        let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = values.map(|v| (self.scale * (v - m)).exp()).sum();
        m + s.ln() / self.scale
    }
}

impl Surplus for Logit {
    fn surplus(&self, values: &[f64]) -> f64 {
        self.surplus_iter(values.iter().copied())
    }

    fn probabilities(&self, values: &[f64], out: &mut [f64]) {
        let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &v) in out.iter_mut().zip(values) {
            *o = (self.scale * (v - m)).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }
}

/// Logit social surplus of `values` at scale `scale`.
pub fn social_surplus(values: &[f64], scale: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(MterError::Domain("social surplus of an empty set".into()));
    }
    if !(scale > 0.0) {
        return Err(MterError::Domain(format!(
            "logit scale must be positive, got {scale}"
        )));
    }
    Ok(Logit::new(scale).surplus(values))
}
