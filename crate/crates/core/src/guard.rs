//! Edge guard predicates.
//!
//! A deliberately closed language so that routing stays deterministic and
//! the meta-agent can learn it from a short description:
//!
//! ```text
//! guard    := "not" "(" guard ")" | predicate
//! predicate := contains("lit") | matches("regex") | equals("lit") | is_absent()
//! ```
//!
//! Predicates other than `is_absent` evaluate to false on an ABSENT source
//! output, so a guard can never resurrect a failed upstream value.

use regex::Regex;
use thiserror::Error;

use crate::exec::NodeValue;

#[derive(Debug, Error, PartialEq)]
pub enum GuardParseError {
    #[error("empty guard expression")]
    Empty,
    #[error("unknown predicate '{0}'")]
    UnknownPredicate(String),
    #[error("malformed guard syntax near '{0}'")]
    Syntax(String),
    #[error("invalid regex: {0}")]
    BadRegex(String),
}

/// A parsed guard expression.
#[derive(Debug, Clone)]
pub enum GuardExpr {
    Contains(String),
    Matches(Regex),
    Equals(String),
    IsAbsent,
    Not(Box<GuardExpr>),
}

impl GuardExpr {
    pub fn parse(text: &str) -> Result<GuardExpr, GuardParseError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(GuardParseError::Empty);
        }
        let (name, rest) = trimmed
            .split_once('(')
            .ok_or_else(|| GuardParseError::Syntax(trimmed.to_string()))?;
        let name = name.trim();
        let rest = rest
            .strip_suffix(')')
            .ok_or_else(|| GuardParseError::Syntax(trimmed.to_string()))?;

        match name {
            "not" => Ok(GuardExpr::Not(Box::new(GuardExpr::parse(rest)?))),
            "is_absent" => {
                if rest.trim().is_empty() {
                    Ok(GuardExpr::IsAbsent)
                } else {
                    Err(GuardParseError::Syntax(trimmed.to_string()))
                }
            }
            "contains" | "matches" | "equals" => {
                let lit = parse_string_literal(rest)
                    .ok_or_else(|| GuardParseError::Syntax(trimmed.to_string()))?;
                match name {
                    "contains" => Ok(GuardExpr::Contains(lit)),
                    "equals" => Ok(GuardExpr::Equals(lit)),
                    "matches" => {
                        let re = Regex::new(&lit)
                            .map_err(|e| GuardParseError::BadRegex(e.to_string()))?;
                        Ok(GuardExpr::Matches(re))
                    }
                    _ => unreachable!(),
                }
            }
            other => Err(GuardParseError::UnknownPredicate(other.to_string())),
        }
    }

    /// Deterministic boolean over the source node's output.
    pub fn evaluate(&self, value: &NodeValue) -> bool {
        match (self, value) {
            (GuardExpr::IsAbsent, NodeValue::Absent) => true,
            (GuardExpr::IsAbsent, NodeValue::Text(_)) => false,
            (GuardExpr::Not(inner), v) => !inner.evaluate(v),
            (_, NodeValue::Absent) => false,
            (GuardExpr::Contains(lit), NodeValue::Text(t)) => t.contains(lit),
            (GuardExpr::Equals(lit), NodeValue::Text(t)) => t == lit,
            (GuardExpr::Matches(re), NodeValue::Text(t)) => re.is_match(t),
        }
    }
}

/// A double-quoted literal with `\"`, `\\`, `\n`, `\t` escapes.
fn parse_string_literal(text: &str) -> Option<String> {
    let t = text.trim();
    let inner = t.strip_prefix('"')?.strip_suffix('"')?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '"' {
            // Unescaped quote inside the literal: reject.
            return None;
        }
        if c == '\\' {
            match chars.next()? {
                '"' => out.push('"'),
                '\\' => out.push('\\'),
                'n' => out.push('\n'),
                't' => out.push('\t'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(s: &str) -> NodeValue {
        NodeValue::Text(s.to_string())
    }

    #[test]
    fn contains_on_error_text() {
        let g = GuardExpr::parse(r#"contains("ERROR")"#).unwrap();
        assert!(g.evaluate(&text("ERROR: bad format")));
        assert!(!g.evaluate(&text("all good")));
        assert!(!g.evaluate(&NodeValue::Absent));
    }

    #[test]
    fn is_absent_on_absent() {
        let g = GuardExpr::parse("is_absent()").unwrap();
        assert!(g.evaluate(&NodeValue::Absent));
        assert!(!g.evaluate(&text("")));
    }

    #[test]
    fn matches_agrees_with_reference_cases() {
        // Expected values worked out by hand against anchored-digit
        // semantics: ^[0-9]+$ accepts exactly nonempty digit strings.
        let g = GuardExpr::parse(r#"matches("^[0-9]+$")"#).unwrap();
        let cases = [
            ("42", true),
            ("007", true),
            ("", false),
            ("4 2", false),
            ("x42", false),
            ("42\n43", false),
        ];
        for (input, expected) in cases {
            assert_eq!(g.evaluate(&text(input)), expected, "input {input:?}");
        }
    }

    #[test]
    fn negation_and_nesting() {
        let g = GuardExpr::parse(r#"not(equals("skip"))"#).unwrap();
        assert!(g.evaluate(&text("go")));
        assert!(!g.evaluate(&text("skip")));
        // not() applied to absent: inner equals is false, so not is true.
        assert!(g.evaluate(&NodeValue::Absent));

        let g = GuardExpr::parse("not(not(is_absent()))").unwrap();
        assert!(g.evaluate(&NodeValue::Absent));
        assert!(!g.evaluate(&text("x")));
    }

    #[test]
    fn escapes_in_literals() {
        let g = GuardExpr::parse(r#"equals("a\"b\\c")"#).unwrap();
        assert!(g.evaluate(&text("a\"b\\c")));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            GuardExpr::parse("  "),
            Err(GuardParseError::Empty)
        ));
        assert!(matches!(
            GuardExpr::parse("frobnicate(\"x\")"),
            Err(GuardParseError::UnknownPredicate(_))
        ));
        assert!(matches!(
            GuardExpr::parse("contains(unquoted)"),
            Err(GuardParseError::Syntax(_))
        ));
        assert!(matches!(
            GuardExpr::parse("contains(\"x\""),
            Err(GuardParseError::Syntax(_))
        ));
        assert!(matches!(
            GuardExpr::parse("matches(\"[\")"),
            Err(GuardParseError::BadRegex(_))
        ));
    }
}
