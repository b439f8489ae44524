//! Randomized response over cuckoo bucket indices.
//!
//! A client's real Bloom filter maps to one of `B` buckets. The mechanism
//! forms a one-hot vector over the buckets, flips every coordinate with
//! probability `p_flip = 1 / (1 + s e^ε)` with `s = 2^{l(1-s_t)} B / 2^l`,
//! and reports a filter for every bucket that ends up "on": a perturbed copy
//! of the real filter for the real bucket, a dictionary filter for every
//! other bucket.
//!
//! All expressions involving `2^l` and `e^ε` are evaluated in log space.

mod dictionary;
mod perturb;

pub use dictionary::{BucketDictionary, DictionaryMode, DEFAULT_T_CAP};
pub use perturb::{perturb, PerturbedReport};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Which neighbouring-input notion calibrates the flip probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjacency {
    /// One stream contains the item and the other does not.
    #[default]
    Presence,
    /// The streams differ by substituting one item for another; uses the
    /// stricter `1 / (1 + sqrt(s e^ε))`.
    Substitution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismParams {
    pub epsilon: f64,
    /// Bloom filter length in bits.
    pub l: usize,
    /// Bucket count of the mechanism's one-hot vector.
    pub buckets: usize,
    /// Minimum similarity of the reported copy of the real filter.
    pub s_t: f64,
    /// Segments per filter.
    pub m: usize,
    #[serde(default)]
    pub adjacency: Adjacency,
    /// Forces the flip probability; used for noiseless runs and tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_override: Option<f64>,
    /// Similarity floor for the reported copy of the real filter when it
    /// differs from the query threshold `s_t`; 1.0 sends it unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copy_s_t: Option<f64>,
}

impl Default for MechanismParams {
    fn default() -> Self {
        MechanismParams {
            epsilon: 6.0,
            l: 30,
            buckets: 10_000,
            s_t: 0.8,
            m: 5,
            adjacency: Adjacency::Presence,
            flip_override: None,
            copy_s_t: None,
        }
    }
}

impl MechanismParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_t > 0.0 && self.s_t <= 1.0) {
            return Err(invalid(format!("s_t must be in (0, 1], got {}", self.s_t)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.l == 0 || self.buckets == 0 {
            return Err(invalid("l and B must be positive"));
        }
        if self.m == 0 || self.m > self.l {
            return Err(invalid(format!(
                "m must be in 1..={}, got {}",
                self.l, self.m
            )));
        }
        if let Some(c) = self.copy_s_t {
            if !(c > 0.0 && c <= 1.0) {
                return Err(invalid(format!("copy_s_t must be in (0, 1], got {c}")));
            }
        }
        if let Some(p) = self.flip_override {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!(
                    "flip override must be a probability, got {p}"
                )));
            }
        }
        Ok(())
    }

    /// `ln s = l(1 - s_t) ln 2 + ln B - l ln 2`.
    pub fn ln_s(&self) -> f64 {
        let l = self.l as f64;
        l * (1.0 - self.s_t) * LN2 + (self.buckets as f64).ln() - l * LN2
    }

    pub fn s(&self) -> f64 {
        self.ln_s().exp()
    }

    /// `ln t` with `t = 2^l / B` patterns per bucket.
    pub fn ln_t(&self) -> f64 {
        self.l as f64 * LN2 - (self.buckets as f64).ln()
    }

    pub fn t(&self) -> f64 {
        self.ln_t().exp()
    }

    /// `ln(s e^ε)`.
    fn ln_s_exp_eps(&self) -> f64 {
        self.ln_s() + self.epsilon
    }

    /// Threshold used when generating the reported copy of the real filter.
    pub fn copy_threshold(&self) -> f64 {
        self.copy_s_t.unwrap_or(self.s_t)
    }

    /// The flip probability the mechanism actually uses: the override if
    /// set, else the bound selected by `adjacency`.
    pub fn p_flip(&self) -> Result<f64> {
        if let Some(p) = self.flip_override {
            self.validate()?;
            return Ok(p);
        }
        match self.adjacency {
            Adjacency::Presence => flip_probability(self),
            Adjacency::Substitution => flip_probability_pairwise(self),
        }
    }
}

/// `1 / (1 + e^x)` without overflow.
fn logistic_neg(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `ln(e^a + e^b)`.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// `1 / (1 + s e^ε)`, the presence/absence calibration.
pub fn flip_probability(params: &MechanismParams) -> Result<f64> {
    params.validate()?;
    Ok(logistic_neg(params.ln_s_exp_eps()))
}

/// `1 / (1 + sqrt(s e^ε))`, the item-substitution calibration.
pub fn flip_probability_pairwise(params: &MechanismParams) -> Result<f64> {
    params.validate()?;
    Ok(logistic_neg(0.5 * params.ln_s_exp_eps()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioCheck {
    pub p11: f64,
    pub p01: f64,
    pub ratio: f64,
    pub holds: bool,
}

/// Evaluates `e^{-ε} <= P11 / P01 <= e^ε` with
/// `P11 = (1 - p) / 2^{l(1 - s_t)}` and `P01 = p / t + (1 - p) / 2^l`,
/// keeping both terms of `P01`.
pub fn ratio_bound_check_with(params: &MechanismParams, p: f64) -> Result<RatioCheck> {
    params.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!(
            "flip probability must be in [0, 1], got {p}"
        )));
    }
    Ok(ratio_from_logs(params, p.ln(), (-p).ln_1p()))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ratio_from_logs(params: &MechanismParams, ln_p: f64, ln_keep: f64) -> RatioCheck {
    let l = params.l as f64;
    let ln_p11 = ln_keep - l * (1.0 - params.s_t) * LN2;
    let ln_p01 = log_add_exp(ln_p - params.ln_t(), ln_keep - l * LN2);
    let ln_ratio = ln_p11 - ln_p01;
    // 1e-12 of slack for rounding when p sits exactly on the bound
    let slack = 1e-12 * params.epsilon.max(1.0);
    RatioCheck {
        p11: ln_p11.exp(),
        p01: ln_p01.exp(),
        ratio: ln_ratio.exp(),
        holds: ln_ratio >= -params.epsilon - slack && ln_ratio <= params.epsilon + slack,
    }
}

/// [`ratio_bound_check_with`] at the mechanism's own flip probability,
/// evaluated in log space so `p` close to 1 keeps its precision.
pub fn ratio_bound_check(params: &MechanismParams) -> Result<RatioCheck> {
    if params.flip_override.is_some() {
        return ratio_bound_check_with(params, params.p_flip()?);
    }
    params.validate()?;
    let x = match params.adjacency {
        Adjacency::Presence => params.ln_s_exp_eps(),
        Adjacency::Substitution => 0.5 * params.ln_s_exp_eps(),
    };
    // p = 1 / (1 + e^x), 1 - p = e^x / (1 + e^x)
    let sp = softplus(x);
    Ok(ratio_from_logs(params, -sp, x - sp))
}

/// Lower bound on the expected estimate of an item with true count `c`:
/// `c - c s e^ε (1 - s_t)^m / (1 + s e^ε)`.
pub fn count_lower_bound(c: f64, params: &MechanismParams) -> Result<f64> {
    if c < 0.0 {
        return Err(invalid("count must be non-negative"));
    }
    params.validate()?;
    let x = params.ln_s_exp_eps();
    let kept = 1.0 - logistic_neg(x); // s e^ε / (1 + s e^ε)
    let mismatch = kept * (1.0 - params.s_t).powi(params.m as i32);
    Ok(c - c * mismatch)
}

/// Upper bound `c + n (B - 1) 2^{l(1-s_t)} / ((1 + s e^ε) 2^l)`.
pub fn count_upper_bound(c: f64, n: f64, params: &MechanismParams) -> Result<f64> {
    if c < 0.0 || n < 0.0 {
        return Err(invalid("counts must be non-negative"));
    }
    params.validate()?;
    if n == 0.0 || params.buckets == 1 {
        return Ok(c);
    }
    let l = params.l as f64;
    let ln_extra = n.ln() + ((params.buckets - 1) as f64).ln() + l * (1.0 - params.s_t) * LN2
        - l * LN2
        + logistic_neg(params.ln_s_exp_eps()).ln();
    Ok(c + ln_extra.exp())
}

/// Expected segments a client sends per item, `m B p_flip`.
pub fn expected_report_segments(params: &MechanismParams) -> Result<f64> {
    Ok(params.m as f64 * params.buckets as f64 * params.p_flip()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> MechanismParams {
        MechanismParams {
            epsilon: 6.0,
            l: 20,
            buckets: 10_000,
            s_t: 0.7,
            m: 4,
            ..Default::default()
        }
    }

    #[test]
    fn worked_example_flip_probability() {
        let p = example();
        assert!((p.s() - 0.61).abs() < 0.005, "s = {}", p.s());
        assert!((flip_probability(&p).unwrap() - 0.004).abs() < 0.0005);
        assert!((p.s() - 2f64.powf(6.0) / p.t()).abs() < 1e-12);
    }

    #[test]
    fn flip_probability_limits() {
        let mut p = example();
        p.epsilon = 700.0;
        assert!(flip_probability(&p).unwrap() < 1e-250);
        let exact = MechanismParams {
            l: 20,
            buckets: 1 << 20,
            s_t: 1.0,
            ..example()
        };
        assert!((exact.s() - 1.0).abs() < 1e-12);
        assert!((flip_probability(&exact).unwrap() - 1.0 / (1.0 + 6f64.exp())).abs() < 1e-15);
        let bad = MechanismParams {
            s_t: 0.0,
            ..example()
        };
        assert!(flip_probability(&bad).is_err());
        let bad = MechanismParams {
            s_t: 1.2,
            ..example()
        };
        assert!(flip_probability(&bad).is_err());
    }

    #[test]
    fn large_l_does_not_overflow() {
        let p = MechanismParams {
            l: 4000,
            s_t: 0.5,
            buckets: 1 << 20,
            ..example()
        };
        let f = flip_probability(&p).unwrap();
        assert!(f.is_finite() && f > 0.999);
        assert!(ratio_bound_check(&p).unwrap().holds);
    }

    #[test]
    fn pairwise_examples() {
        // s e^eps = 1 exactly: s = 1 needs B = 2^{l s_t}; use s_t = 1, B = 2^l, eps -> ln 1 is
        // not allowed, so take s = e^-2 and eps = 2.
        let mut p = MechanismParams {
            l: 20,
            s_t: 1.0,
            buckets: 1 << 20,
            epsilon: 2.0,
            ..example()
        };
        p.buckets = ((1u64 << 20) as f64 * (-2f64).exp()).round() as usize;
        assert!((flip_probability_pairwise(&p).unwrap() - 0.5).abs() < 1e-6);
        let e = example();
        let want = 1.0 / (1.0 + (e.s() * 6f64.exp()).sqrt());
        assert!((flip_probability_pairwise(&e).unwrap() - want).abs() < 1e-12);
        assert!((flip_probability_pairwise(&e).unwrap() - 0.0599).abs() < 0.001);
        assert!(flip_probability_pairwise(&e).unwrap() >= flip_probability(&e).unwrap());
    }

    #[test]
    fn ratio_check_uniform_and_starved() {
        let p = example();
        let uniform = ratio_bound_check_with(&p, 0.5).unwrap();
        assert!(uniform.holds);
        let starved = MechanismParams {
            epsilon: 2.0,
            s_t: 0.7,
            l: 20,
            buckets: 1 << 12,
            ..example()
        };
        let p_star = flip_probability(&starved).unwrap();
        assert!(
            !ratio_bound_check_with(&starved, p_star / 100.0)
                .unwrap()
                .holds
        );
        assert!(ratio_bound_check_with(&starved, p_star).unwrap().holds);
    }

    #[test]
    fn worked_example_bounds() {
        let mut p = example();
        assert!((count_lower_bound(100.0, &p).unwrap() - 99.19).abs() < 0.05);
        p.m = 2;
        assert!((count_lower_bound(100.0, &p).unwrap() - 91.03).abs() < 0.05);
        p.m = 5;
        assert!((count_lower_bound(100.0, &p).unwrap() - 99.75).abs() < 0.05);
        assert_eq!(count_lower_bound(0.0, &p).unwrap(), 0.0);

        let p = example();
        assert!((count_upper_bound(100.0, 1000.0, &p).unwrap() - 102.47).abs() < 0.05);
        assert_eq!(count_upper_bound(100.0, 0.0, &p).unwrap(), 100.0);
        let one = count_upper_bound(0.0, 1000.0, &p).unwrap();
        let two = count_upper_bound(0.0, 2000.0, &p).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-9);
    }

    #[test]
    fn report_size_expectation() {
        let p = MechanismParams { m: 5, ..example() };
        assert!((expected_report_segments(&p).unwrap() - 202.0).abs() < 5.0);
        let silent = MechanismParams {
            flip_override: Some(0.0),
            ..p.clone()
        };
        assert_eq!(expected_report_segments(&silent).unwrap(), 0.0);
        let doubled = MechanismParams {
            m: 10,
            l: 20,
            ..p.clone()
        };
        assert!(
            (expected_report_segments(&doubled).unwrap()
                - 2.0 * expected_report_segments(&p).unwrap())
            .abs()
                < 1e-9
        );
    }
}
