//! Extracting the chosen option from a free-text model response.

use crate::pipeline::normalize_for_dedup;

/// Returns the zero-based option picked by `response`, if one can be found.
///
/// The first standalone option letter wins: a letter in `A..` (either case)
/// for one of the options, with no letter or digit directly on
/// either side, so "B", "(b)", "B." and "b)" count but the "a" in "bad" does not.
/// Failing that, the response must contain the text of exactly one option.
pub fn parse_choice(response: &str, options: &[String]) -> Option<usize> {
    first_letter(response, options.len()).or_else(|| unique_containment(response, options))
}

fn first_letter(response: &str, n_options: usize) -> Option<usize> {
    let chars: Vec<char> = response.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_alphabetic() {
            continue;
        }
        let index = (c.to_ascii_uppercase() as u8 - b'A') as usize;
        if index >= n_options {
            continue;
        }
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        if !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric) {
            return Some(index);
        }
    }
    None
}

fn unique_containment(response: &str, options: &[String]) -> Option<usize> {
    let haystack = normalize_for_dedup(response);
    let mut found = options
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let needle = normalize_for_dedup(o);
            !needle.is_empty() && haystack.contains(&needle)
        })
        .map(|(i, _)| i);
    match (found.next(), found.next()) {
        (Some(i), None) => Some(i),
        _ => None,
    }
}
