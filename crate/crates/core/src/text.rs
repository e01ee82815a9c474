//! Tokenization shared by the lexical index and the lexical mocks.

/// Lowercase, split on anything that is not alphanumeric, drop empty pieces.
/// No stemming and no stopword list.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(tokenize("Red fox, RED hen!"), vec!["red", "fox", "red", "hen"]);
        assert!(tokenize("!!!").is_empty());
        assert_eq!(tokenize("O'Bannion"), vec!["o", "bannion"]);
    }

    proptest! {
        #[test]
        fn idempotent_after_join(s in "\\PC{0,60}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
