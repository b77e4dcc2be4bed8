use serde::{Deserialize, Serialize};

use crate::corpus::utterance::Utterance;

pub const NUMBER_TOKEN: &str = "<number>";
pub const TIME_TOKEN: &str = "<time>";
pub const DURATION_TOKEN: &str = "<last>";

/// Surface forms recognized by [`delexicalize`]. The defaults are a superset
/// guess; real corpora may need more time words or units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelexRules {
    /// Standalone time markers, matched exactly.
    pub time_words: Vec<String>,
    /// Also treat `h:mm` / `hh:mm` as a time.
    pub clock_times: bool,
    /// Units that turn an attached number into a duration (`30min`).
    pub duration_units: Vec<String>,
}

impl Default for DelexRules {
    fn default() -> Self {
        Self {
            time_words: ["am", "pm", "AM", "PM"].map(String::from).to_vec(),
            clock_times: true,
            duration_units: ["min", "mins", "hr", "hrs", "h", "m", "sec", "s"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// Decimal integer or float: `7`, `30`, `2.5`.
pub fn is_number(tok: &str) -> bool {
    let (int, frac) = match tok.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (tok, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    digits(int) && frac.is_none_or(digits)
}

fn is_clock(tok: &str) -> bool {
    let Some((h, m)) = tok.split_once(':') else {
        return false;
    };
    (1..=2).contains(&h.len())
        && m.len() == 2
        && h.bytes().chain(m.bytes()).all(|b| b.is_ascii_digit())
}

impl DelexRules {
    pub fn classify(&self, tok: &str) -> Option<&'static str> {
        if is_number(tok) {
            return Some(NUMBER_TOKEN);
        }
        if self.time_words.iter().any(|w| w == tok) || (self.clock_times && is_clock(tok)) {
            return Some(TIME_TOKEN);
        }
        let split = tok.find(|c: char| !(c.is_ascii_digit() || c == '.'))?;
        let (num, unit) = tok.split_at(split);
        if is_number(num) && self.duration_units.iter().any(|u| u == unit) {
            return Some(DURATION_TOKEN);
        }
        None
    }
}

/// Replaces number, time and duration tokens with placeholders. Slots,
/// intent and length are untouched.
pub fn delexicalize(u: &Utterance, rules: &DelexRules) -> Utterance {
    let tokens = u
        .tokens()
        .iter()
        .map(|t| {
            rules
                .classify(t)
                .map(String::from)
                .unwrap_or_else(|| t.clone())
        })
        .collect();
    u.with_tokens(tokens)
}
