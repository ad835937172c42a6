//! Answer-letter extraction and majority aggregation over repeats.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::mcq::Letter;

fn explicit() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i:\b(?:answer|choice|option)\b(?:\s+(?:is|would be|should be|will be))?)\s*[:=]?\s*[(*]*([A-D])\b")
            .expect("valid regex")
    })
}

fn labelled() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)\(([A-D])\)|^\s*\**([A-D])[).:]").expect("valid regex"))
}

fn standalone() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-D])\b").expect("valid regex"))
}

fn first_capture(re: &Regex, text: &str) -> Option<Letter> {
    re.captures_iter(text)
        .filter_map(|c| c.iter().skip(1).flatten().next())
        .find_map(|m| m.as_str().chars().next().and_then(Letter::from_char))
}

/// The first choice letter in a reply. Explicit statements ("the answer is
/// B") win over labels ("(B)"), which win over bare letters. A bare "A"
/// followed by a lowercase word reads as the article and is skipped.
pub fn extract_letter(reply: &str) -> Option<Letter> {
    if let Some(l) = first_capture(explicit(), reply) {
        return Some(l);
    }
    if let Some(l) = first_capture(labelled(), reply) {
        return Some(l);
    }
    standalone().find_iter(reply).find_map(|m| {
        let letter = Letter::from_char(m.as_str().chars().next()?)?;
        if letter == Letter::A {
            let rest = reply[m.end()..].trim_start_matches([' ', '\t']);
            let article = rest.len() < reply.len() - m.end() && rest.chars().next().is_some_and(char::is_lowercase);
            if article {
                return None;
            }
        }
        Some(letter)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Most frequent answer; unanswered repeats count as their own answer.
    pub majority: Option<Letter>,
    pub correct_votes: usize,
    /// More than half of the repeats chose the key.
    pub correct: bool,
    /// Repeats that differ from the most frequent answer.
    pub disagreement: usize,
}

/// Ties for the most frequent answer go to the earliest letter, then to "unanswered".
pub fn aggregate(letters: &[Option<Letter>], key: Letter) -> Aggregate {
    let count = |x: Option<Letter>| letters.iter().filter(|l| **l == x).count();
    let candidates = Letter::ALL.iter().map(|l| Some(*l)).chain(std::iter::once(None));
    let (majority, multiplicity) = candidates
        .map(|c| (c, count(c)))
        .fold((None, 0), |best, (c, n)| if n > best.1 { (c, n) } else { best });
    let correct_votes = count(Some(key));
    Aggregate {
        majority,
        correct_votes,
        correct: correct_votes * 2 > letters.len(),
        disagreement: letters.len() - multiplicity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Letter::*;

    #[test]
    fn extraction_prefers_explicit_statements() {
        assert_eq!(extract_letter("I think the answer is B, because A is wrong."), Some(B));
        assert_eq!(extract_letter("Answer: (C)"), Some(C));
        assert_eq!(extract_letter("A binary search halves the list, so (D)."), Some(D));
        assert_eq!(extract_letter("A\nBecause it halves."), Some(A));
        assert_eq!(extract_letter("D. It is logarithmic."), Some(D));
        assert_eq!(extract_letter("**B** is right"), Some(B));
    }

    #[test]
    fn replies_without_a_letter_yield_none() {
        assert_eq!(extract_letter("I'm not sure how to do that. Could you explain it to me?"), None);
        assert_eq!(extract_letter("I'm not sure which choice is right. Could you explain it to me?"), None);
        assert_eq!(extract_letter("A sorted array is needed."), None);
    }

    #[test]
    fn aggregation_matches_the_worked_example() {
        let agg = aggregate(&[Some(A), Some(A), Some(B), Some(A), Some(C)], A);
        assert_eq!(agg.majority, Some(A));
        assert_eq!(agg.disagreement, 2);
        assert!(agg.correct);
    }

    #[test]
    fn unanswered_repeats_are_incorrect() {
        let agg = aggregate(&[None, None, None, Some(A), Some(A)], A);
        assert_eq!(agg.majority, None);
        assert!(!agg.correct);
        assert_eq!(agg.disagreement, 2);
    }
}
