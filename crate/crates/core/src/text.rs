//! Text conventions shared with the language model: answer extraction and
//! normalization, fenced module blocks, and the token estimate used for
//! budget pre-checks.

use alloc::string::String;
use alloc::vec::Vec;

const FINAL_ANSWER: &str = "final answer:";

/// Trims both ends and collapses internal whitespace runs to one space.
pub fn normalize_answer(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Answer from the last line starting with `final answer:` (case-insensitive,
/// leading whitespace allowed).
pub fn extract_final_answer(text: &str) -> Option<String> {
    text.lines().rev().find_map(|line| {
        let line = line.trim_start();
        let head = line.get(..FINAL_ANSWER.len())?;
        head.eq_ignore_ascii_case(FINAL_ANSWER)
            .then(|| String::from(line[FINAL_ANSWER.len()..].trim()))
    })
}

/// Estimated token count: `ceil(bytes / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// A fenced block found in model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    /// Info string after the opening fence (`module`, `json`, or empty).
    pub info: String,
    pub body: String,
}

/// All fenced blocks whose fences start a line; unterminated blocks are
/// ignored.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut out = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        match open.as_mut() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    open = Some((String::from(info.trim()), Vec::new()));
                }
            }
            Some((_, body)) => {
                if trimmed == "```" {
                    let (info, body) = open.take().expect("open block");
                    out.push(FencedBlock {
                        info,
                        body: body.join("\n"),
                    });
                } else {
                    body.push(line);
                }
            }
        }
    }
    out
}

/// Body of the last fenced block, the convention for "the module the model
/// produced".
pub fn last_fenced_block(text: &str) -> Option<FencedBlock> {
    fenced_blocks(text).pop()
}

/// Collapses whitespace and caps the result at `max_bytes`, cutting on a
/// char boundary and marking the cut.
pub fn compact(text: &str, max_bytes: usize) -> String {
    let mut flat = normalize_answer(text);
    if flat.len() > max_bytes {
        let mut cut = max_bytes;
        while !flat.is_char_boundary(cut) {
            cut -= 1;
        }
        flat.truncate(cut);
        flat.push_str(" …[truncated]");
    }
    flat
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("12345678"), 2);
        assert_eq!(estimate_tokens("123456789"), 3);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer(" 847  5321 9084 "), "847 5321 9084");
        assert_eq!(normalize_answer("a\n\tb"), "a b");
        assert_eq!(normalize_answer("   "), "");
    }

    #[test]
    fn final_answer_extraction() {
        assert_eq!(
            extract_final_answer("thinking\nfinal answer: 847 5321 9084"),
            Some(String::from("847 5321 9084"))
        );
        assert_eq!(
            extract_final_answer("Final Answer: a\nmore\n  FINAL ANSWER:  b  "),
            Some(String::from("b"))
        );
        assert_eq!(extract_final_answer("the final answer: is not at line start"), None);
        assert_eq!(extract_final_answer("nothing"), None);
        assert_eq!(extract_final_answer("é"), None);
    }

    #[test]
    fn fenced_block_parsing() {
        let text = "Here you go:\n```module\nline one\nline two\n```\nnote\n```json\n[]\n```";
        let blocks = fenced_blocks(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].info, "module");
        assert_eq!(blocks[0].body, "line one\nline two");
        assert_eq!(last_fenced_block(text).unwrap().body, "[]");
        assert!(fenced_blocks("```module\nunterminated").is_empty());
        // Inline mentions do not open a block.
        assert!(fenced_blocks("wrap it in ```module fences").is_empty());
    }

    #[test]
    fn compaction() {
        assert_eq!(compact("a   b\n c", 100), "a b c");
        assert_eq!(compact("ééé", 3), "é …[truncated]");
    }

    proptest! {
        #[test]
        fn estimate_is_monotone(a in ".*", b in ".*") {
            let joined = alloc::format!("{a}{b}");
            prop_assert!(estimate_tokens(&joined) >= estimate_tokens(&a).max(estimate_tokens(&b)));
        }

        #[test]
        fn normalization_is_idempotent(s in ".*") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once.clone());
        }
    }
}
