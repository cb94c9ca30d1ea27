use std::collections::HashMap;

use serde::Serialize;

use crate::text::tokens;

pub const DEFAULT_ECHO_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EchoVerdict {
    pub is_echo: bool,
    pub overlap_ratio: f64,
}

fn echo_tokens(text: &str) -> Vec<String> {
    let toks = tokens(text);
    if toks.is_empty() {
        // Punctuation-only text still has content worth comparing.
        text.split_whitespace().map(str::to_lowercase).collect()
    } else {
        toks
    }
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// How much of `output` is the prompt repeated back: the token LCS of the
/// two, divided by the output's token count.
pub fn detect_echo(prompt_text: &str, output_text: &str, threshold: f64) -> EchoVerdict {
    let out = echo_tokens(output_text);
    if out.is_empty() {
        return EchoVerdict {
            is_echo: false,
            overlap_ratio: 0.0,
        };
    }
    let prompt = echo_tokens(prompt_text);
    let mut ids: HashMap<&str, u32> = HashMap::new();
    fn intern<'a>(toks: &'a [String], ids: &mut HashMap<&'a str, u32>) -> Vec<u32> {
        toks.iter()
            .map(|t| {
                let next = ids.len() as u32;
                *ids.entry(t.as_str()).or_insert(next)
            })
            .collect()
    }
    let out_ids = intern(&out, &mut ids);
    let prompt_ids = intern(&prompt, &mut ids);
    let overlap_ratio = lcs_len(&out_ids, &prompt_ids) as f64 / out_ids.len() as f64;
    EchoVerdict {
        is_echo: overlap_ratio >= threshold,
        overlap_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ECHO_IN: &str = include_str!("../../tests/fixtures/instruction_echo_input.txt");
    const ECHO_OUT: &str = include_str!("../../tests/fixtures/instruction_echo_output.txt");

    // Full-table LCS, kept separate from the two-row version under test.
    fn lcs_oracle(a: &[String], b: &[String]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in (0..a.len()).rev() {
            for j in (0..b.len()).rev() {
                t[i][j] = if a[i] == b[j] {
                    1 + t[i + 1][j + 1]
                } else {
                    t[i + 1][j].max(t[i][j + 1])
                };
            }
        }
        t[0][0]
    }

    #[test]
    fn reiterated_instruction_is_echo() {
        let v = detect_echo(ECHO_IN, ECHO_OUT, DEFAULT_ECHO_THRESHOLD);
        assert_eq!(v.overlap_ratio, 1.0);
        assert!(v.is_echo);
    }

    #[test]
    fn disjoint_output_is_not_echo() {
        let v = detect_echo("the quick brown fox", "lorem ipsum dolor", DEFAULT_ECHO_THRESHOLD);
        assert_eq!(v.overlap_ratio, 0.0);
        assert!(!v.is_echo);
        assert_eq!(detect_echo("abc", "", 0.95).overlap_ratio, 0.0);
    }

    #[test]
    fn prompt_plus_verdict_list() {
        // 500-token prompt built from a rotating vocabulary, then the
        // model's 9-line verdict list appended.
        let words = ["feel", "tired", "every", "day", "and", "cannot", "sleep", "well", "at", "night"];
        let prompt: Vec<String> = (0..500).map(|i| format!("{}{}", words[i % 10], i / 50)).collect();
        let prompt = prompt.join(" ");
        assert_eq!(tokens(&prompt).len(), 500);
        let verdicts = include_str!("../../tests/fixtures/verdict_pairs_output.txt")
            .replace("], [", "],\n[");
        assert_eq!(verdicts.trim().lines().count(), 9);
        let output = format!("{prompt}\n{verdicts}");
        let v = detect_echo(&prompt, &output, DEFAULT_ECHO_THRESHOLD);
        let out_toks = tokens(&output);
        let expected = lcs_oracle(&out_toks, &tokens(&prompt)) as f64 / out_toks.len() as f64;
        assert_eq!(v.overlap_ratio, expected);
        assert_eq!(expected, 500.0 / out_toks.len() as f64);
        assert!(v.overlap_ratio >= 0.9, "{}", v.overlap_ratio);
    }

    proptest! {
        #[test]
        fn self_echo_is_exactly_one(p in "[a-z !.,]{0,40}[a-z!.]") {
            prop_assert_eq!(detect_echo(&p, &p, 0.95).overlap_ratio, 1.0);
        }

        #[test]
        fn lcs_matches_oracle(
            a in proptest::collection::vec("[abc]", 0..12),
            b in proptest::collection::vec("[abc]", 0..12),
        ) {
            prop_assert_eq!(lcs_len(&a, &b), lcs_oracle(&a, &b));
        }
    }
}
