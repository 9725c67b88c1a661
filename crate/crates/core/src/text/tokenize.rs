/// Token that stands in for every run of digits.
pub const NUM_TOKEN: &str = "NUM";

/// Lowercases and splits on whitespace and punctuation.
///
/// Letter runs become tokens, every digit run becomes [`NUM_TOKEN`], and
/// each punctuation character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    #[derive(PartialEq)]
    enum Run {
        None,
        Word,
        Digits,
    }
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut run = Run::None;
    let flush = |word: &mut String, run: &mut Run, tokens: &mut Vec<String>| {
        match run {
            Run::Word => tokens.push(std::mem::take(word)),
            Run::Digits => tokens.push(NUM_TOKEN.to_string()),
            Run::None => {}
        }
        word.clear();
        *run = Run::None;
    };
    for ch in text.chars() {
        if ch.is_alphabetic() {
            if run != Run::Word {
                flush(&mut word, &mut run, &mut tokens);
                run = Run::Word;
            }
            word.extend(ch.to_lowercase());
        } else if ch.is_numeric() {
            if run != Run::Digits {
                flush(&mut word, &mut run, &mut tokens);
                run = Run::Digits;
            }
        } else {
            flush(&mut word, &mut run, &mut tokens);
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    flush(&mut word, &mut run, &mut tokens);
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn sentence_with_punctuation() {
        assert_eq!(
            toks("She had mild MR and mild TR."),
            ["she", "had", "mild", "mr", "and", "mild", "tr", "."]
        );
    }

    #[test]
    fn empty_input() {
        assert!(toks("").is_empty());
        assert!(toks("   \t\n").is_empty());
    }

    #[test]
    fn digits_fold_and_split_from_letters() {
        assert_eq!(toks("DM2 (Diabetes"), ["dm", "NUM", "(", "diabetes"]);
        assert_eq!(toks("72-year-old"), ["NUM", "-", "year", "-", "old"]);
        assert_eq!(toks("1234"), ["NUM"]);
    }
}
