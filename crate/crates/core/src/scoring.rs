//! Per-query scores and the aggregated reward.
//!
//! The composite reward blends task performance with utility-normalized
//! cost and latency: each query contributes
//! `lambda_perf * S + lambda_cost * U(C; alpha_cost) + lambda_time * U(T; alpha_time)`
//! where `U(x) = 1 / (1 + alpha * x)`, and the reward is the mean of the
//! per-query composites.

use std::collections::BTreeMap;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Sandbox, SandboxOutcome, SandboxUnavailable};

/// One validation/test item: a query plus its gold target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub query: String,
    pub gold: Gold,
}

/// Exactly one gold form per task mode: an expected answer string for math
/// tasks, a unit-test suite for code tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Answer(String),
    Tests(Vec<TestCase>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    /// Raw stdin for the produced program.
    pub input: String,
    /// Expected stdout, compared after stripping one trailing newline.
    pub expected: String,
}

/// Per-query measurements feeding the reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    /// Performance score in [0, 1].
    pub score: f64,
    /// USD.
    pub cost: f64,
    /// Seconds.
    pub latency: f64,
}

/// Reward weights and utility scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_perf: f64,
    pub lambda_cost: f64,
    pub lambda_time: f64,
    /// Per-USD utility scale.
    pub alpha_cost: f64,
    /// Per-second utility scale.
    pub alpha_time: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda_perf: 0.9,
            lambda_cost: 0.05,
            lambda_time: 0.05,
            alpha_cost: 5.0,
            alpha_time: 1.0 / 60.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_perf", self.lambda_perf),
            ("lambda_cost", self.lambda_cost),
            ("lambda_time", self.lambda_time),
            ("alpha_cost", self.alpha_cost),
            ("alpha_time", self.alpha_time),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("utility input must be non-negative, got {0}")]
    NegativeInput(f64),
    #[error("cannot aggregate an empty metrics list")]
    EmptyMetrics,
    #[error("code tasks need a non-empty test suite")]
    EmptyTests,
    #[error("sandbox unavailable: {0}")]
    Sandbox(String),
}

/// Normalized utility `(1 + alpha * x)^-1`: 1 at x = 0, strictly
/// decreasing, always in (0, 1].
pub fn utility(x: f64, alpha: f64) -> Result<f64, ScoringError> {
    if x < 0.0 || x.is_nan() {
        return Err(ScoringError::NegativeInput(x));
    }
    Ok(1.0 / (1.0 + alpha * x))
}

/// Mean of the per-query composites.
pub fn aggregate_reward(
    metrics: &[QueryMetrics],
    weights: &RewardWeights,
) -> Result<f64, ScoringError> {
    if metrics.is_empty() {
        return Err(ScoringError::EmptyMetrics);
    }
    let mut sum = 0.0;
    for m in metrics {
        sum += weights.lambda_perf * m.score
            + weights.lambda_cost * utility(m.cost, weights.alpha_cost)?
            + weights.lambda_time * utility(m.latency, weights.alpha_time)?;
    }
    Ok(sum / metrics.len() as f64)
}

/// Exact-match accuracy with answer normalization: trim, collapse
/// whitespace, strip surrounding answer markup, then compare as exact
/// rationals when both sides parse numerically (so "0.50" matches "1/2"),
/// else case-insensitively as strings.
pub fn score_math(answer: &str, gold: &str) -> u8 {
    let a = normalize_answer(answer);
    let g = normalize_answer(gold);
    if let (Some(ra), Some(rg)) = (parse_rational(&a), parse_rational(&g)) {
        return u8::from(ra == rg);
    }
    u8::from(a.eq_ignore_ascii_case(&g))
}

fn normalize_answer(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    loop {
        let before = s.clone();
        s = s.trim().to_string();
        // Leading answer labels.
        for label in ["final answer:", "the answer is", "answer:"] {
            if s.len() >= label.len() && s[..label.len()].eq_ignore_ascii_case(label) {
                s = s[label.len()..].trim_start().to_string();
            }
        }
        // Symmetric markup wrappers.
        for (open, close) in [
            ("**", "**"),
            ("`", "`"),
            ("$", "$"),
            ("\"", "\""),
            ("'", "'"),
        ] {
            if s.len() >= open.len() + close.len() && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len()..s.len() - close.len()].to_string();
            }
        }
        if let Some(inner) = s.strip_prefix("\\boxed{").and_then(|r| r.strip_suffix('}')) {
            s = inner.to_string();
        }
        // One trailing sentence period. A trailing "3." loses nothing:
        // the remainder still parses to the same rational.
        if s.ends_with('.') {
            s.pop();
        }
        if s == before {
            break;
        }
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parse an exact rational: optional sign, integer, decimal, or `a/b`
/// fraction. Thousands separators in the `1,234,567` pattern are accepted.
fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    if let Some((num, den)) = t.split_once('/') {
        let n = parse_decimal(num.trim())?;
        let d = parse_decimal(den.trim())?;
        if d == BigRational::from_integer(BigInt::from(0)) {
            return None;
        }
        return Some(n / d);
    }
    parse_decimal(t)
}

fn parse_decimal(text: &str) -> Option<BigRational> {
    let mut t = text.trim().to_string();
    // Accept 1,234,567 style separators.
    let comma_ok = {
        let parts: Vec<&str> = t.split(',').collect();
        parts.len() > 1
            && parts[0].trim_start_matches(['-', '+']).len() <= 3
            && !parts[0].trim_start_matches(['-', '+']).is_empty()
            && parts[1..]
                .iter()
                .all(|p| p.len() == 3 && p.chars().all(|c| c.is_ascii_digit()))
    };
    if comma_ok {
        t = t.replace(',', "");
    }
    let negative = t.starts_with('-');
    let unsigned = t.trim_start_matches(['-', '+']);
    if unsigned.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match unsigned.split_once('.') {
        Some((i, f)) => (i, f),
        None => (unsigned, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let digits = if digits.is_empty() {
        "0".to_string()
    } else {
        digits
    };
    let numerator = BigInt::from_str(&digits).ok()?;
    let denominator = BigInt::from(10u32).pow(frac_part.len() as u32);
    let mut value = BigRational::new(numerator, denominator);
    if negative {
        value = -value;
    }
    Some(value)
}

/// pass@1: 1 iff the single produced program passes every test case in the
/// sandbox. Any failing test, timeout, crash, or overflow scores 0. An
/// unusable sandbox is an evaluation error, distinct from a zero score.
pub fn score_code(
    program: &str,
    tests: &[TestCase],
    sandbox: &Sandbox,
) -> Result<u8, ScoringError> {
    if tests.is_empty() {
        return Err(ScoringError::EmptyTests);
    }
    for test in tests {
        let run = sandbox
            .execute(program, test.input.as_bytes())
            .map_err(|SandboxUnavailable(msg)| ScoringError::Sandbox(msg))?;
        match run.outcome {
            SandboxOutcome::Exited {
                status: 0, stdout, ..
            } => {
                let mut text = String::from_utf8_lossy(&stdout).into_owned();
                if text.ends_with('\n') {
                    text.pop();
                    if text.ends_with('\r') {
                        text.pop();
                    }
                }
                if text != test.expected {
                    return Ok(0);
                }
            }
            _ => return Ok(0),
        }
    }
    Ok(1)
}

/// Bind task queries to gold targets by id; reject duplicate ids.
pub fn check_unique_ids(tasks: &[Task]) -> Result<(), String> {
    let mut seen = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        if let Some(prev) = seen.insert(t.id.as_str(), i) {
            return Err(format!(
                "duplicate task id '{}' (records {prev} and {i})",
                t.id
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utility_hand_values() {
        assert_eq!(utility(0.0, 5.0).unwrap(), 1.0);
        assert!((utility(0.2, 5.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((utility(60.0, 1.0 / 60.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            utility(-0.1, 5.0),
            Err(ScoringError::NegativeInput(_))
        ));
    }

    #[test]
    fn utility_is_strictly_decreasing_into_unit_interval() {
        let mut prev = utility(0.0, 5.0).unwrap();
        for i in 1..200 {
            let u = utility(i as f64 * 0.37, 5.0).unwrap();
            assert!(u < prev);
            assert!(u > 0.0 && u <= 1.0);
            prev = u;
        }
    }

    #[test]
    fn aggregate_reward_hand_values() {
        let w = RewardWeights::default();
        let perfect = QueryMetrics {
            score: 1.0,
            cost: 0.0,
            latency: 0.0,
        };
        assert!((aggregate_reward(&[perfect], &w).unwrap() - 1.0).abs() < 1e-12);

        let dud = QueryMetrics {
            score: 0.0,
            cost: 0.0,
            latency: 0.0,
        };
        assert!((aggregate_reward(&[dud], &w).unwrap() - 0.1).abs() < 1e-12);

        // Mean of per-query composites 1.0 and 0.1.
        assert!((aggregate_reward(&[perfect, dud], &w).unwrap() - 0.55).abs() < 1e-12);

        assert_eq!(aggregate_reward(&[], &w), Err(ScoringError::EmptyMetrics));
    }

    #[test]
    fn reward_is_monotone_in_each_component() {
        let w = RewardWeights::default();
        let base = QueryMetrics {
            score: 0.5,
            cost: 0.1,
            latency: 30.0,
        };
        let r0 = aggregate_reward(&[base], &w).unwrap();
        let better_score = QueryMetrics { score: 0.6, ..base };
        let cheaper = QueryMetrics { cost: 0.05, ..base };
        let faster = QueryMetrics {
            latency: 10.0,
            ..base
        };
        assert!(aggregate_reward(&[better_score], &w).unwrap() > r0);
        assert!(aggregate_reward(&[cheaper], &w).unwrap() > r0);
        assert!(aggregate_reward(&[faster], &w).unwrap() > r0);
    }

    #[test]
    fn score_math_examples() {
        assert_eq!(score_math("42", "42"), 1);
        assert_eq!(score_math(" 42 \n", "42"), 1);
        assert_eq!(score_math("0.50", "1/2"), 1);
        assert_eq!(score_math("41", "42"), 0);
        assert_eq!(score_math("", "42"), 0);
    }

    #[test]
    fn score_math_normalization_layers() {
        assert_eq!(score_math("Answer: **7**", "7"), 1);
        assert_eq!(score_math("\\boxed{3/4}", "0.75"), 1);
        assert_eq!(score_math("The answer is 12.", "12"), 1);
        assert_eq!(score_math("-0.25", "-1/4"), 1);
        assert_eq!(score_math("1,234", "1234"), 1);
        assert_eq!(score_math("cat", "CAT"), 1);
        assert_eq!(score_math("two  words", "two words"), 1);
        // Non-numeric text falls back to case-insensitive equality.
        assert_eq!(score_math("x+1", "x + 1"), 0);
    }

    #[test]
    fn score_math_is_symmetric_under_normalization() {
        let pairs = [("0.5", "1/2"), ("Answer: 3", "3"), ("x", "X"), ("7", "8")];
        for (a, b) in pairs {
            assert_eq!(score_math(a, b), score_math(b, a));
        }
    }

    #[test]
    fn score_code_pass_and_fail() {
        let sandbox = Sandbox::default();
        let add = "import sys\na, b = sys.stdin.read().split()\nprint(int(a) + int(b))";
        let tests = vec![
            TestCase {
                input: "1 2".into(),
                expected: "3".into(),
            },
            TestCase {
                input: "10 5".into(),
                expected: "15".into(),
            },
            TestCase {
                input: "0 0".into(),
                expected: "0".into(),
            },
        ];
        assert_eq!(score_code(add, &tests, &sandbox).unwrap(), 1);

        let crash = "raise ValueError('no')";
        assert_eq!(score_code(crash, &tests, &sandbox).unwrap(), 0);

        // Passing 2 of 3 is still 0: pass@1 is all-or-nothing.
        let off_by_one_on_zero =
            "import sys\na, b = sys.stdin.read().split()\nr = int(a) + int(b)\nprint(r if r else 99)";
        assert_eq!(score_code(off_by_one_on_zero, &tests, &sandbox).unwrap(), 0);

        assert_eq!(
            score_code(add, &[], &sandbox),
            Err(ScoringError::EmptyTests)
        );

        let broken = Sandbox {
            interpreter: "no-such-runtime".into(),
            ..Sandbox::default()
        };
        assert!(matches!(
            score_code(add, &tests, &broken),
            Err(ScoringError::Sandbox(_))
        ));
    }
}
