//! Parsing of model outputs (tag blocks, boxed answers), answer
//! normalization and grading, and the training reward.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskKind;

/// Result of scanning a model output for `<think>`/`<answer>` structure.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedOutput {
    pub think_block: Option<String>,
    pub answer_block: Option<String>,
    /// Content of the last balanced `\boxed{...}` in the answer region.
    pub boxed_payload: Option<String>,
    /// True iff exactly one well-formed think block precedes exactly one
    /// well-formed answer block.
    pub format_ok: bool,
}

/// Reward shaping for leader training: 0/+1 correctness plus a small
/// formatting bonus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub correct_reward: f64,
    pub incorrect_reward: f64,
    pub format_weight: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            correct_reward: 1.0,
            incorrect_reward: 0.0,
            format_weight: 0.1,
        }
    }
}

impl RewardSpec {
    /// Same correctness rewards with the format term disabled.
    pub fn without_format_term(mut self) -> Self {
        self.format_weight = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.correct_reward <= self.incorrect_reward {
            return Err(Error::Config(
                "correct_reward must exceed incorrect_reward".into(),
            ));
        }
        Ok(())
    }
}

/// The terminal sentence every agent/leader prompt instructs, through end of
/// line. One pattern shared by answer stripping and final-answer projection.
static FINAL_ANSWER_SENTENCE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"Therefore, the final answer is:[^\n]*").unwrap());

/// Find every well-formed `<tag>...</tag>` block by first-open /
/// first-matching-close scanning. Returns (start of open tag, content).
fn find_blocks<'a>(text: &'a str, tag: &str) -> Vec<(usize, &'a str)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut blocks = Vec::new();
    let mut pos = 0;
    while let Some(rel_open) = text[pos..].find(&open) {
        let open_at = pos + rel_open;
        let content_start = open_at + open.len();
        match text[content_start..].find(&close) {
            Some(rel_close) => {
                let content_end = content_start + rel_close;
                blocks.push((open_at, &text[content_start..content_end]));
                pos = content_end + close.len();
            }
            None => break,
        }
    }
    blocks
}

/// Scan `text` for the two-block `<think>`/`<answer>` structure.
///
/// Never fails: malformed text yields `format_ok = false`. When no answer
/// block exists (agent outputs carry no tags) the whole text is treated as
/// the answer region for boxed extraction.
pub fn extract_tagged_blocks(text: &str) -> ParsedOutput {
    let thinks = find_blocks(text, "think");
    let answers = find_blocks(text, "answer");

    let format_ok = thinks.len() == 1
        && answers.len() == 1
        && thinks[0].0 + thinks[0].1.len() < answers[0].0;

    let answer_block = answers.last().map(|(_, c)| c.to_string());
    let think_block = thinks.first().map(|(_, c)| c.to_string());
    let answer_region = answers.last().map(|(_, c)| *c).unwrap_or(text);

    ParsedOutput {
        think_block,
        answer_block,
        boxed_payload: extract_boxed(answer_region),
        format_ok,
    }
}

/// Return the brace-balanced payload of the last `\boxed{...}` occurrence.
///
/// Total on arbitrary UTF-8: nested braces are matched, and occurrences with
/// unbalanced braces are skipped in favor of earlier ones.
pub fn extract_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let starts: Vec<usize> = text.match_indices(MARKER).map(|(i, _)| i).collect();
    for &start in starts.iter().rev() {
        let payload_start = start + MARKER.len();
        let mut depth = 1usize;
        for (off, ch) in text[payload_start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(text[payload_start..payload_start + off].to_string());
                    }
                }
                _ => {}
            }
        }
    }
    None
}

/// Byte ranges of every final-answer sentence in `text`.
pub fn final_answer_sentence_ranges(text: &str) -> Vec<std::ops::Range<usize>> {
    FINAL_ANSWER_SENTENCE
        .find_iter(text)
        .map(|m| m.range())
        .collect()
}

/// Remove every final-answer sentence from `text` (reasoning-only view).
pub fn strip_final_answer_sentences(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for range in final_answer_sentence_ranges(text) {
        out.push_str(&text[pos..range.start]);
        pos = range.end;
    }
    out.push_str(&text[pos..]);
    out.trim_end().to_string()
}

/// The last final-answer sentence of `text`, if any (answer-only view).
pub fn final_answer_line(text: &str) -> Option<&str> {
    FINAL_ANSWER_SENTENCE.find_iter(text).last().map(|m| m.as_str())
}

/// Exact rational used for canonical numeric forms. Falls back to string
/// canonicalization on overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rational {
    num: i128,
    den: i128, // > 0
}

impl Rational {
    fn new(num: i128, den: i128) -> Option<Rational> {
        if den == 0 {
            return None;
        }
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
        Some(Rational {
            num: sign * num / g,
            den: den / sign / g,
        })
    }

    fn render(&self) -> String {
        if self.den == 1 {
            format!("{}", self.num)
        } else {
            format!("{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Parse a plain integer or decimal literal into an exact rational.
fn parse_decimal(s: &str) -> Option<Rational> {
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => (-1i128, rest),
        None => (1i128, s.strip_prefix('+').unwrap_or(s)),
    };
    if digits.is_empty() {
        return None;
    }
    let mut int_part = String::new();
    let mut frac_part = String::new();
    let mut seen_dot = false;
    for ch in digits.chars() {
        match ch {
            '0'..='9' => {
                if seen_dot {
                    frac_part.push(ch);
                } else {
                    int_part.push(ch);
                }
            }
            '.' if !seen_dot => seen_dot = true,
            _ => return None,
        }
    }
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let whole: i128 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().ok()?
    };
    let mut den: i128 = 1;
    let mut num = whole;
    for ch in frac_part.chars() {
        num = num.checked_mul(10)?.checked_add((ch as u8 - b'0') as i128)?;
        den = den.checked_mul(10)?;
    }
    Rational::new(sign * num, den)
}

/// Parse `a/b` (or a bare literal) into an exact rational.
fn parse_rational(s: &str) -> Option<Rational> {
    match s.split_once('/') {
        Some((a, b)) => {
            let left = parse_decimal(a)?;
            let right = parse_decimal(b)?;
            if right.num == 0 {
                return None;
            }
            let num = left.num.checked_mul(right.den)?;
            let den = left.den.checked_mul(right.num)?;
            Rational::new(num, den)
        }
        None => parse_decimal(s),
    }
}

/// Rewrite every `\frac{a}{b}` (also `\dfrac`, `\tfrac`) as `a/b`.
fn collapse_fracs(input: &str) -> String {
    let mut text = input.to_string();
    for macro_name in ["\\dfrac", "\\tfrac", "\\frac"] {
        loop {
            let Some(start) = text.find(macro_name) else {
                break;
            };
            let Some((a, after_a)) = read_braced(&text[start + macro_name.len()..]) else {
                // Malformed macro: drop the macro name and leave the rest.
                text.replace_range(start..start + macro_name.len(), "");
                continue;
            };
            let Some((b, after_b)) = read_braced(after_a) else {
                text.replace_range(start..start + macro_name.len(), "");
                continue;
            };
            let a = collapse_fracs(a);
            let b = collapse_fracs(b);
            let consumed = text.len() - after_b.len() - start;
            text.replace_range(start..start + consumed, &format!("{a}/{b}"));
        }
    }
    text
}

/// Read one `{...}` group with balanced braces; returns (content, rest).
fn read_braced(s: &str) -> Option<(&str, &str)> {
    let rest = s.strip_prefix('{')?;
    let mut depth = 1usize;
    for (i, ch) in rest.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&rest[..i], &rest[i + 1..]));
                }
            }
            _ => {}
        }
    }
    None
}

/// Unwrap an expression entirely enclosed in one pair of parentheses.
fn strip_outer_parens(s: &str) -> &str {
    let t = s.trim();
    if !(t.starts_with('(') && t.ends_with(')') && t.len() >= 2) {
        return s;
    }
    let mut depth = 0usize;
    for (i, ch) in t.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth = depth.saturating_sub(1);
                if depth == 0 && i != t.len() - 1 {
                    return s; // the opening paren closes early
                }
            }
            _ => {}
        }
    }
    if depth == 0 {
        &t[1..t.len() - 1]
    } else {
        s
    }
}

/// Unwrap an expression entirely enclosed in `\text{...}`.
fn strip_outer_text(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("\\text") else {
        return s;
    };
    match read_braced(rest) {
        Some((inner, "")) => inner,
        _ => s,
    }
}

fn pop_trailing_period(s: &mut String) {
    // A single trailing dot is a sentence period, not a decimal point.
    if s.ends_with('.') && !s.ends_with("..") {
        s.pop();
    }
}

fn clean_math(raw: &str) -> String {
    let mut s: String = raw.trim().to_string();
    // Sentence periods and surrounding math-mode dollars, in any nesting.
    loop {
        let before = s.len();
        pop_trailing_period(&mut s);
        let t = s.trim();
        if t.len() >= 2 && t.starts_with('$') && t.ends_with('$') {
            s = t[1..t.len() - 1].trim().to_string();
        } else {
            s = t.to_string();
        }
        if s.len() == before {
            break;
        }
    }
    for token in ["\\left", "\\right", "\\!", "\\,"] {
        s = s.replace(token, "");
    }
    // LaTeX math mode ignores whitespace.
    s.retain(|c| !c.is_whitespace());
    pop_trailing_period(&mut s);
    s = strip_outer_text(&s).to_string();
    s = collapse_fracs(&s);
    s = strip_outer_parens(&s).to_string();
    s
}

/// Normalize a raw answer into its canonical comparison form.
pub fn normalize_answer(raw: &str, kind: TaskKind) -> Result<String> {
    if raw.trim().is_empty() {
        return Err(Error::Normalization("empty answer".into()));
    }
    match kind {
        TaskKind::MultipleChoice => Ok(normalize_choice(raw)),
        TaskKind::ExactString => Ok(raw
            .trim()
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")),
        TaskKind::MathExpression => {
            let cleaned = clean_math(raw);
            match parse_rational(&cleaned) {
                Some(r) => Ok(r.render()),
                None => Ok(cleaned),
            }
        }
    }
}

fn normalize_choice(raw: &str) -> String {
    let mut s = raw.trim();
    // Surrounding dollars, then common option decorations.
    s = s.trim_matches('$').trim();
    if let Some(rest) = s.strip_prefix("\\text") {
        if let Some((inner, after)) = read_braced(rest) {
            if after.trim().is_empty() {
                s = inner.trim();
            }
        }
    }
    let lowered = s.to_lowercase();
    if let Some(rest) = lowered.strip_prefix("option") {
        let offset = s.len() - rest.len();
        s = s[offset..].trim();
    }
    let stripped: String = s
        .chars()
        .filter(|c| !matches!(c, '(' | ')' | '[' | ']' | '{' | '}' | '.' | ':' | '*'))
        .collect();
    let stripped = stripped.trim();
    if stripped.len() == 1 && stripped.chars().next().unwrap().is_ascii_alphabetic() {
        return stripped.to_uppercase();
    }
    stripped.to_uppercase()
}

/// Grade a predicted answer against the gold answer.
///
/// Both sides are normalized, so the call is total and idempotent on
/// already-canonical inputs. For math answers, value equality of numeric
/// forms is folded into the canonical form itself.
pub fn grade(pred: &str, gold: &str, kind: TaskKind) -> bool {
    match (normalize_answer(pred, kind), normalize_answer(gold, kind)) {
        (Ok(p), Ok(g)) => p == g,
        _ => false,
    }
}

/// Training reward: correctness base plus format bonus.
///
/// An unparseable answer counts as incorrect; this never fails.
pub fn reward(parsed: &ParsedOutput, gold: &str, kind: TaskKind, spec: &RewardSpec) -> f64 {
    let correct = parsed
        .boxed_payload
        .as_deref()
        .map(|p| grade(p, gold, kind))
        .unwrap_or(false);
    let base = if correct {
        spec.correct_reward
    } else {
        spec.incorrect_reward
    };
    base + if parsed.format_ok { spec.format_weight } else { 0.0 }
}

/// Extract and normalize the boxed answer from an arbitrary text region.
pub fn extract_answer(text: &str, kind: TaskKind) -> Option<String> {
    extract_boxed(text).and_then(|payload| normalize_answer(&payload, kind).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn well_formed_two_block_output() {
        let text =
            "<think>steps</think><answer>Therefore, the final answer is: $\\boxed{42}$</answer>";
        let parsed = extract_tagged_blocks(text);
        assert_eq!(parsed.think_block.as_deref(), Some("steps"));
        assert_eq!(parsed.boxed_payload.as_deref(), Some("42"));
        assert!(parsed.format_ok);
    }

    #[test]
    fn wrong_block_order_fails_format() {
        let parsed = extract_tagged_blocks("<answer>x</answer><think>y</think>");
        assert!(!parsed.format_ok);
        assert_eq!(parsed.answer_block.as_deref(), Some("x"));
    }

    #[test]
    fn duplicate_answer_blocks_fail_format_but_extract_last() {
        let text = "<think>t</think><answer>$\\boxed{1}$</answer><answer>$\\boxed{2}$</answer>";
        let parsed = extract_tagged_blocks(text);
        assert!(!parsed.format_ok);
        assert_eq!(parsed.boxed_payload.as_deref(), Some("2"));
    }

    #[test]
    fn untagged_text_is_answer_region() {
        let parsed = extract_tagged_blocks("plain reasoning, $\\boxed{7}$ done");
        assert!(!parsed.format_ok);
        assert!(parsed.think_block.is_none());
        assert_eq!(parsed.boxed_payload.as_deref(), Some("7"));
    }

    #[test]
    fn unclosed_think_fails_format() {
        let parsed = extract_tagged_blocks("<think>forever<answer>x</answer>");
        assert!(!parsed.format_ok);
    }

    #[test]
    fn boxed_nested_braces() {
        assert_eq!(
            extract_boxed("final answer is: $\\boxed{\\frac{11}{72}}$").as_deref(),
            Some("\\frac{11}{72}")
        );
    }

    #[test]
    fn boxed_absent() {
        assert_eq!(extract_boxed("no box here"), None);
    }

    #[test]
    fn boxed_last_occurrence_wins() {
        assert_eq!(
            extract_boxed("$\\boxed{a}$ then $\\boxed{b}$").as_deref(),
            Some("b")
        );
    }

    #[test]
    fn boxed_unbalanced_falls_back() {
        assert_eq!(extract_boxed("$\\boxed{a}$ then $\\boxed{oops").as_deref(), Some("a"));
        assert_eq!(extract_boxed("\\boxed{never closed"), None);
    }

    #[test]
    fn fraction_forms_share_canonical() {
        let a = normalize_answer("\\frac{1}{2}", TaskKind::MathExpression).unwrap();
        let b = normalize_answer("1/2", TaskKind::MathExpression).unwrap();
        let c = normalize_answer("0.50", TaskKind::MathExpression).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert_eq!(a, "1/2");
    }

    #[test]
    fn choice_normalization() {
        assert_eq!(normalize_answer(" (B) ", TaskKind::MultipleChoice).unwrap(), "B");
        assert_eq!(normalize_answer("b", TaskKind::MultipleChoice).unwrap(), "B");
        assert_eq!(normalize_answer("C.", TaskKind::MultipleChoice).unwrap(), "C");
        assert_eq!(
            normalize_answer("option D", TaskKind::MultipleChoice).unwrap(),
            "D"
        );
    }

    #[test]
    fn exact_string_normalization() {
        assert_eq!(
            normalize_answer("  Not  Valid\n", TaskKind::ExactString).unwrap(),
            "not valid"
        );
    }

    #[test]
    fn empty_answer_is_normalization_error() {
        let err = normalize_answer("  ", TaskKind::MathExpression).unwrap_err();
        assert!(matches!(err, Error::Normalization(_)));
    }

    #[test]
    fn grading_examples() {
        assert!(grade("42", "42", TaskKind::MathExpression));
        assert!(!grade("B", "C", TaskKind::MultipleChoice));
        assert!(grade("\\frac{11}{72}", "11/72", TaskKind::MathExpression));
        assert!(grade("$\\left(\\frac{3}{4}\\right)$", "0.75", TaskKind::MathExpression));
        assert!(grade("\\text{south}", "south.", TaskKind::MathExpression));
    }

    #[test]
    fn reward_values_match_formula() {
        let spec = RewardSpec::default();
        let good = extract_tagged_blocks(
            "<think>t</think><answer>Therefore, the final answer is: $\\boxed{4}$</answer>",
        );
        assert!((reward(&good, "4", TaskKind::MathExpression, &spec) - 1.1).abs() < 1e-12);
        assert!((reward(&good, "5", TaskKind::MathExpression, &spec) - 0.1).abs() < 1e-12);
        let untagged = extract_tagged_blocks("the answer: $\\boxed{4}$");
        assert!((reward(&untagged, "4", TaskKind::MathExpression, &spec) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn final_answer_sentence_strip_and_line() {
        let text = "Work through it.\nTherefore, the final answer is: $\\boxed{7}$.";
        let stripped = strip_final_answer_sentences(text);
        assert!(!stripped.contains("final answer"));
        assert!(stripped.contains("Work through it."));
        assert_eq!(
            final_answer_line(text),
            Some("Therefore, the final answer is: $\\boxed{7}$.")
        );
    }

    #[test]
    fn strip_removes_every_occurrence() {
        let text = "Therefore, the final answer is: $\\boxed{1}$.\nmore\nTherefore, the final answer is: $\\boxed{2}$.";
        let stripped = strip_final_answer_sentences(text);
        assert!(!stripped.contains("final answer is"));
        assert!(stripped.contains("more"));
    }

    proptest! {
        #[test]
        fn extract_boxed_is_total(text in ".*") {
            let _ = extract_boxed(&text);
            let _ = extract_tagged_blocks(&text);
        }

        #[test]
        fn grade_symmetric_and_reflexive(a in "[-0-9a-zA-Z/.{}\\\\ ]{1,20}", b in "[-0-9a-zA-Z/.{}\\\\ ]{1,20}") {
            for kind in [TaskKind::MathExpression, TaskKind::MultipleChoice, TaskKind::ExactString] {
                prop_assert_eq!(grade(&a, &b, kind), grade(&b, &a, kind));
                prop_assert!(grade(&a, &a, kind) || normalize_answer(&a, kind).is_err());
            }
        }

        #[test]
        fn reward_monotone_in_correctness_and_format(fmt in proptest::bool::ANY) {
            let spec = RewardSpec::default();
            let correct = ParsedOutput {
                boxed_payload: Some("4".into()),
                format_ok: fmt,
                ..ParsedOutput::default()
            };
            let wrong = ParsedOutput {
                boxed_payload: Some("5".into()),
                format_ok: fmt,
                ..ParsedOutput::default()
            };
            let r_ok = reward(&correct, "4", TaskKind::MathExpression, &spec);
            let r_bad = reward(&wrong, "4", TaskKind::MathExpression, &spec);
            prop_assert!(r_ok >= r_bad);

            let tagged = ParsedOutput { format_ok: true, ..correct.clone() };
            let untagged = ParsedOutput { format_ok: false, ..correct };
            let r_tagged = reward(&tagged, "4", TaskKind::MathExpression, &spec);
            let r_untagged = reward(&untagged, "4", TaskKind::MathExpression, &spec);
            prop_assert!(r_tagged >= r_untagged);
        }
    }
}
