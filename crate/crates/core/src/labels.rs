//! The five-class risk scheme and probability vectors over it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::LOG_CLAMP;

pub const CLASS_COUNT: usize = 5;

/// Risk classes in index order, from least to most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskClass {
    #[serde(rename = "SU")]
    Supportive,
    #[serde(rename = "IN")]
    Indicator,
    #[serde(rename = "ID")]
    Ideation,
    #[serde(rename = "SB")]
    Behavior,
    #[serde(rename = "AT")]
    Attempt,
}

impl RiskClass {
    pub const ALL: [RiskClass; CLASS_COUNT] = [
        RiskClass::Supportive,
        RiskClass::Indicator,
        RiskClass::Ideation,
        RiskClass::Behavior,
        RiskClass::Attempt,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Argument(format!("class index {index} out of range 0..{CLASS_COUNT}")))
    }

    pub fn code(self) -> &'static str {
        match self {
            RiskClass::Supportive => "SU",
            RiskClass::Indicator => "IN",
            RiskClass::Ideation => "ID",
            RiskClass::Behavior => "SB",
            RiskClass::Attempt => "AT",
        }
    }

    /// Adjacent classes on the severity scale.
    pub fn neighbors(self) -> Vec<RiskClass> {
        let i = self.index();
        let mut out = Vec::with_capacity(2);
        if i > 0 {
            out.push(Self::ALL[i - 1]);
        }
        if i + 1 < CLASS_COUNT {
            out.push(Self::ALL[i + 1]);
        }
        out
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for RiskClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::Argument(format!("unknown label code {s:?}")))
    }
}

const SUM_TOL: f64 = 1e-9;

/// Probability vector over the five classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelDistribution([f64; CLASS_COUNT]);

impl LabelDistribution {
    pub fn new(probs: [f64; CLASS_COUNT]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Argument(format!("invalid probabilities {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Argument(format!(
                "probabilities {probs:?} sum to {sum}, expected 1"
            )));
        }
        Ok(LabelDistribution(probs))
    }

    /// Scales non-negative weights to sum to one.
    pub fn normalized(weights: [f64; CLASS_COUNT]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Argument(format!("cannot normalize {weights:?}")));
        }
        let mut p = weights;
        p.iter_mut().for_each(|x| *x /= sum);
        Ok(LabelDistribution(p))
    }

    pub fn one_hot(index: usize) -> Result<Self> {
        RiskClass::from_index(index)?;
        let mut p = [0.0; CLASS_COUNT];
        p[index] = 1.0;
        Ok(LabelDistribution(p))
    }

    pub fn uniform() -> Self {
        LabelDistribution([1.0 / CLASS_COUNT as f64; CLASS_COUNT])
    }

    pub fn probs(&self) -> &[f64; CLASS_COUNT] {
        &self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// The class index if this is exactly one-hot.
    pub fn hard_class(&self) -> Option<usize> {
        let ones = self.0.iter().filter(|&&p| p == 1.0).count();
        let zeros = self.0.iter().filter(|&&p| p == 0.0).count();
        (ones == 1 && zeros == CLASS_COUNT - 1).then(|| self.argmax())
    }

    /// `KL(self ‖ other)`, with `other` clamped below at [`LOG_CLAMP`] so a
    /// one-hot reference yields a large finite value instead of infinity.
    pub fn kl_divergence(&self, other: &LabelDistribution) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * (p / q.max(LOG_CLAMP)).ln())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for c in RiskClass::ALL {
            assert_eq!(c.code().parse::<RiskClass>().unwrap(), c);
            assert_eq!(RiskClass::from_index(c.index()).unwrap(), c);
        }
        assert!("XX".parse::<RiskClass>().is_err());
        assert_eq!(RiskClass::Supportive.neighbors(), vec![RiskClass::Indicator]);
        assert_eq!(
            RiskClass::Ideation.neighbors(),
            vec![RiskClass::Indicator, RiskClass::Behavior]
        );
    }

    #[test]
    fn validation() {
        assert!(LabelDistribution::new([0.5, 0.5, 0.0, 0.0, 0.0]).is_ok());
        assert!(LabelDistribution::new([0.5, 0.6, 0.0, 0.0, 0.0]).is_err());
        assert!(LabelDistribution::new([1.5, -0.5, 0.0, 0.0, 0.0]).is_err());
        assert!(LabelDistribution::one_hot(5).is_err());
    }

    #[test]
    fn kl_properties() {
        let p = LabelDistribution::new([0.7, 0.3, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.kl_divergence(&p), 0.0);
        let hard = LabelDistribution::one_hot(0).unwrap();
        let soft = LabelDistribution::new([0.8, 0.2, 0.0, 0.0, 0.0]).unwrap();
        assert!(p.kl_divergence(&soft) < p.kl_divergence(&hard));
    }
}
