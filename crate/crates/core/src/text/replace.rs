use super::dictionary::TermSenseDictionary;
use super::sample::{SampleSource, SenseSample};
use super::tokenize::tokenize;

/// Turns raw sentences into labeled samples by replacing a sense phrase
/// with its abbreviation.
///
/// Matching is on token boundaries after tokenization (hence
/// case-insensitive). The earliest match position wins; among phrases
/// starting there the longest wins, then dictionary order. At most one
/// replacement is made per sentence and sentences without a match are
/// skipped.
pub fn replace_sense_mentions<S: AsRef<str>>(
    sentences: &[S],
    dict: &TermSenseDictionary,
) -> Vec<SenseSample> {
    struct Pattern<'a> {
        term: &'a str,
        sense_id: usize,
        phrase: &'a str,
        tokens: Vec<String>,
    }
    let patterns: Vec<Pattern> = dict
        .iter()
        .flat_map(|(term, senses)| {
            senses.iter().enumerate().map(move |(i, p)| Pattern {
                term,
                sense_id: i,
                phrase: p,
                tokens: tokenize(p),
            })
        })
        .filter(|p| !p.tokens.is_empty())
        .collect();

    let mut out = Vec::new();
    for sentence in sentences {
        let tokens = tokenize(sentence.as_ref());
        let found = (0..tokens.len()).find_map(|start| {
            patterns
                .iter()
                .filter(|p| tokens[start..].starts_with(&p.tokens))
                .fold(None::<&Pattern>, |best, p| match best {
                    Some(b) if b.tokens.len() >= p.tokens.len() => Some(b),
                    _ => Some(p),
                })
                .map(|p| (start, p))
        });
        let Some((start, p)) = found else { continue };
        let mut replaced = tokens[..start].to_vec();
        replaced.push(p.term.to_lowercase());
        replaced.extend_from_slice(&tokens[start + p.tokens.len()..]);
        out.push(SenseSample {
            term: p.term.to_string(),
            sense_id: p.sense_id,
            sense_phrase: p.phrase.to_string(),
            tokens: replaced,
            abbrev_pos: start,
            source: SampleSource::Replaced,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict() -> TermSenseDictionary {
        let mut d = TermSenseDictionary::new();
        d.insert("AB", vec!["abortion".into(), "antibody".into()]).unwrap();
        d.insert("AC", vec!["antecubital".into(), "acetate".into()]).unwrap();
        d.insert(
            "MR",
            vec!["mitral regurgitation".into(), "mitral regurgitation murmur".into()],
        )
        .unwrap();
        d
    }

    #[test]
    fn replaces_single_phrase() {
        let out = replace_sense_mentions(&["patient had an abortion yesterday"], &dict());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, ["patient", "had", "an", "ab", "yesterday"]);
        assert_eq!(out[0].abbrev_pos, 3);
        assert_eq!(out[0].sense_id, 0);
        assert_eq!(out[0].source, SampleSource::Replaced);
        out[0].validate().unwrap();
    }

    #[test]
    fn skips_sentences_without_match() {
        assert!(replace_sense_mentions(&["nothing relevant here"], &dict()).is_empty());
    }

    #[test]
    fn first_match_in_reading_order_only() {
        let out = replace_sense_mentions(&["Acetate given, then an ABORTION."], &dict());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].term, "AC");
        assert_eq!(out[0].sense_id, 1);
        assert_eq!(out[0].tokens, ["ac", "given", ",", "then", "an", "abortion", "."]);
    }

    #[test]
    fn longest_phrase_wins_when_nested() {
        let out = replace_sense_mentions(&["mild mitral regurgitation murmur noted"], &dict());
        assert_eq!(out[0].sense_id, 1);
        assert_eq!(out[0].tokens, ["mild", "mr", "noted"]);
    }

    #[test]
    fn tokens_outside_span_are_untouched() {
        let sentence = "x y antibody z w";
        let out = replace_sense_mentions(&[sentence], &dict());
        let orig = tokenize(sentence);
        let s = &out[0];
        assert_eq!(&s.tokens[..s.abbrev_pos], &orig[..s.abbrev_pos]);
        assert_eq!(&s.tokens[s.abbrev_pos + 1..], &orig[s.abbrev_pos + 1..]);
    }
}
