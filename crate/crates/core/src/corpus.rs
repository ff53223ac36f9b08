//! Abstract ingestion, sentence splitting and tokenization.
//!
//! The corpus file is UTF-8 TSV with one abstract per line (`id TAB text`).
//! Blank lines and lines starting with `#` are skipped.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub abstract_id: String,
    pub sentence_index: usize,
    pub tokens: Vec<String>,
}

/// Streaming reader over a corpus file.
///
/// Malformed lines surface as [`Error::Parse`] and iteration continues past
/// them. A duplicate id surfaces as [`Error::DuplicateId`], after which the
/// reader is exhausted.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seen: HashMap<String, usize>,
    done: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        CorpusReader {
            lines: reader.lines(),
            line_no: 0,
            seen: HashMap::new(),
            done: false,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<AbstractRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::Io(e)));
                }
            };
            self.line_no += 1;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Some(Err(Error::parse(
                    self.line_no,
                    format!("expected 2 tab-separated fields, found {}", fields.len()),
                )));
            }
            let id = fields[0].trim();
            let text = fields[1].trim();
            if id.is_empty() {
                return Some(Err(Error::parse(self.line_no, "empty abstract id")));
            }
            if text.is_empty() {
                return Some(Err(Error::parse(self.line_no, "empty abstract text")));
            }
            if let Some(&first) = self.seen.get(id) {
                self.done = true;
                return Some(Err(Error::DuplicateId {
                    id: id.to_string(),
                    line: self.line_no,
                    first,
                }));
            }
            self.seen.insert(id.to_string(), self.line_no);
            return Some(Ok(AbstractRecord {
                id: id.to_string(),
                text: text.to_string(),
            }));
        }
    }
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub records: Vec<AbstractRecord>,
    /// Recoverable per-line errors, in file order.
    pub errors: Vec<Error>,
}

/// Reads a whole corpus, collecting malformed lines instead of failing on
/// them. Duplicate ids and I/O failures abort.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<ParsedCorpus> {
    let mut parsed = ParsedCorpus::default();
    for item in CorpusReader::new(reader) {
        match item {
            Ok(record) => parsed.records.push(record),
            Err(e @ Error::Parse { .. }) => parsed.errors.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(parsed)
}

/// Lowercased words ending in a period that never end a sentence.
const GUARDS: &[&str] = &[
    "e.g.", "i.e.", "vs.", "cf.", "al.", "fig.", "figs.", "eq.", "dr.", "approx.", "ca.", "no.",
    "resp.", "ref.", "refs.", "sp.", "spp.",
];

fn is_guarded(word: &str) -> bool {
    let word = word.trim_start_matches(['(', '[', '"', '\'']);
    let mut chars = word.chars();
    if let (Some(c), Some('.'), None) = (chars.next(), chars.next(), chars.next()) {
        if c.is_uppercase() {
            return true;
        }
    }
    let lower = word.to_lowercase();
    GUARDS.contains(&lower.as_str())
}

/// Splits abstract text into sentences at `.`, `!` or `?` followed by
/// whitespace and an uppercase letter or digit.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    for (i, &(byte, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut j = i + 1;
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        let Some(&(_, next)) = chars.get(j) else {
            continue;
        };
        if !(next.is_uppercase() || next.is_ascii_digit()) {
            continue;
        }
        let end = byte + c.len_utf8();
        if c == '.' {
            let word_start = text[..byte]
                .rfind(char::is_whitespace)
                .map_or(0, |p| p + 1)
                .max(start);
            if is_guarded(&text[word_start..end]) {
                continue;
            }
        }
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

fn is_detachable(c: char) -> bool {
    matches!(
        c,
        '(' | ')' | ',' | ';' | ':' | '.' | '!' | '?' | '\'' | '"' | '`' | '[' | ']'
    )
}

fn push_peeled(piece: &str, out: &mut Vec<String>) {
    let mut core = piece;
    while let Some(c) = core.chars().next().filter(|&c| is_detachable(c)) {
        out.push(c.to_string());
        core = &core[c.len_utf8()..];
    }
    let mut trailing = Vec::new();
    while let Some(c) = core.chars().next_back().filter(|&c| is_detachable(c)) {
        trailing.push(c.to_string());
        core = &core[..core.len() - c.len_utf8()];
    }
    if !core.is_empty() {
        out.push(core.to_string());
    }
    out.extend(trailing.into_iter().rev());
}

/// Whitespace tokenization with punctuation detachment. Parentheses always
/// become standalone tokens; hyphenated terms stay whole.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in sentence.split_whitespace() {
        let mut rest = chunk;
        while let Some(p) = rest.find(['(', ')']) {
            if p > 0 {
                push_peeled(&rest[..p], &mut tokens);
            }
            tokens.push(rest[p..p + 1].to_string());
            rest = &rest[p + 1..];
        }
        if !rest.is_empty() {
            push_peeled(rest, &mut tokens);
        }
    }
    tokens
}

/// Sentence-splits and tokenizes one abstract. Indices run `0..n`.
pub fn tokenize_abstract(record: &AbstractRecord) -> Vec<TokenizedSentence> {
    split_sentences(&record.text)
        .iter()
        .map(|s| tokenize(s))
        .filter(|tokens| !tokens.is_empty())
        .enumerate()
        .map(|(sentence_index, tokens)| TokenizedSentence {
            abstract_id: record.id.clone(),
            sentence_index,
            tokens,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn parses_single_record() {
        let input = "A1\tThe endoplasmic reticulum (ER) is large.\n";
        let parsed = parse_corpus(input.as_bytes()).unwrap();
        assert_eq!(
            parsed.records,
            vec![AbstractRecord {
                id: "A1".into(),
                text: "The endoplasmic reticulum (ER) is large.".into()
            }]
        );
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn empty_input_yields_nothing() {
        let parsed = parse_corpus("".as_bytes()).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let input = "# header\nA1\tok text\nonly-one-field\n\tno id\nA2\tmore\n";
        let parsed = parse_corpus(input.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        let lines: Vec<usize> = parsed
            .errors
            .iter()
            .map(|e| match e {
                Error::Parse { line, .. } => *line,
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        assert_eq!(lines, vec![3, 4]);
    }

    #[test]
    fn duplicate_id_is_fatal() {
        let input = "A1\tone\nA1\ttwo\n";
        match parse_corpus(input.as_bytes()) {
            Err(Error::DuplicateId {
                line: 2, first: 1, ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn splits_on_terminal_periods() {
        assert_eq!(
            split_sentences("A is b. C is d."),
            vec!["A is b.", "C is d."]
        );
        assert_eq!(
            split_sentences("No terminator here"),
            vec!["No terminator here"]
        );
    }

    // Guard-list oracle: the only period followed by space+uppercase-or-digit
    // that is not in a guarded word is the one after "grows".
    #[test]
    fn single_capital_initial_is_guarded() {
        assert_eq!(
            split_sentences("E. coli grows. It divides."),
            vec!["E. coli grows.", "It divides."]
        );
        assert_eq!(
            split_sentences("Markers, e.g. CD4 and CD8, rose. Levels fell."),
            vec!["Markers, e.g. CD4 and CD8, rose.", "Levels fell."]
        );
        assert_eq!(
            split_sentences("Was it? Yes! 42 cases."),
            vec!["Was it?", "Yes!", "42 cases."]
        );
    }

    #[test]
    fn lowercase_continuation_is_not_a_boundary() {
        assert_eq!(
            split_sentences("values approx. equal. Then"),
            vec!["values approx. equal.", "Then"]
        );
        assert_eq!(
            split_sentences("at pH 7. the end"),
            vec!["at pH 7. the end"]
        );
    }

    #[test]
    fn tokenizer_detaches_parentheses_and_punctuation() {
        assert_eq!(
            toks("reticulum (ER) is"),
            vec!["reticulum", "(", "ER", ")", "is"]
        );
        assert_eq!(toks("ER."), vec!["ER", "."]);
        assert_eq!(toks("ENC-DAT' study"), vec!["ENC-DAT", "'", "study"]);
        assert_eq!(
            toks("the multicentre `ENC-DAT' study"),
            vec!["the", "multicentre", "`", "ENC-DAT", "'", "study"]
        );
        assert_eq!(toks("(P < 0.01)."), vec!["(", "P", "<", "0.01", ")", "."]);
        assert_eq!(toks("IL(2)"), vec!["IL", "(", "2", ")"]);
    }

    #[test]
    fn tokenizes_table_fragments() {
        assert_eq!(
            toks("(21.5% in BO vs. 14.8% in AO , P=0.001)"),
            vec!["(", "21.5%", "in", "BO", "vs", ".", "14.8%", "in", "AO", ",", "P=0.001", ")"]
        );
        assert_eq!(toks("NPY-LI showed"), vec!["NPY-LI", "showed"]);
    }

    #[test]
    fn abstract_sentence_indices_are_contiguous() {
        let rec = AbstractRecord {
            id: "X".into(),
            text: "One. Two. Three.".into(),
        };
        let sents = tokenize_abstract(&rec);
        let idx: Vec<usize> = sents.iter().map(|s| s.sentence_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    fn non_ws_sorted(s: &str) -> Vec<char> {
        let mut v: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        v.sort_unstable();
        v
    }

    proptest! {
        #[test]
        fn splitting_preserves_non_whitespace(text in "[A-Za-z0-9 .,!?()'-]{1,120}") {
            let sents = split_sentences(&text);
            prop_assert_eq!(non_ws_sorted(&sents.join(" ")), non_ws_sorted(&text));
        }

        #[test]
        fn tokens_are_nonempty_and_whitespace_free(text in "[A-Za-z0-9 .,;:!?()'\"-]{1,120}") {
            for sent in split_sentences(&text) {
                let tokens = tokenize(&sent);
                prop_assert_eq!(non_ws_sorted(&tokens.concat()), non_ws_sorted(&sent));
                for t in tokens {
                    prop_assert!(!t.is_empty());
                    prop_assert!(!t.chars().any(char::is_whitespace));
                }
            }
        }
    }
}
