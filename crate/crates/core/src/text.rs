//! Word scanning shared by normalisation, lemmatisation and annotation.

use std::ops::Range;

/// Byte range of a word inside some text.
pub type Span = Range<usize>;

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}')
}

/// Words are maximal alphanumeric runs, where a hyphen or apostrophe between
/// two alphanumerics joins the runs ("side-effect", "patient's").
pub fn word_spans(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if !c.is_alphanumeric() {
            continue;
        }
        let mut end = start + c.len_utf8();
        loop {
            match chars.peek() {
                Some(&(i, ch)) if ch.is_alphanumeric() => {
                    end = i + ch.len_utf8();
                    chars.next();
                }
                Some(&(i, ch)) if is_joiner(ch) => {
                    let after = i + ch.len_utf8();
                    match text[after..].chars().next() {
                        Some(next) if next.is_alphanumeric() => {
                            chars.next();
                            end = after;
                        }
                        _ => break,
                    }
                }
                _ => break,
            }
        }
        out.push(start..end);
    }
    out
}

/// Lowercased form used for dictionary lookups; typographic apostrophes fold
/// to ASCII.
pub fn fold(word: &str) -> String {
    word.chars()
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .flat_map(char::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(text: &str) -> Vec<&str> {
        word_spans(text).into_iter().map(|s| &text[s]).collect()
    }

    #[test]
    fn hyphenated_and_possessive_words_stay_whole() {
        assert_eq!(
            words("A side-effect, the patient's fever - high."),
            vec!["A", "side-effect", "the", "patient's", "fever", "high"]
        );
    }

    #[test]
    fn trailing_joiners_are_not_part_of_word() {
        assert_eq!(words("patients' 'quoted' well-"), vec!["patients", "quoted", "well"]);
    }

    #[test]
    fn fold_lowercases_and_normalises_apostrophes() {
        assert_eq!(fold("Can\u{2019}t"), "can't");
    }
}
