//! Harvesting labeled mentions from `Definition ( ABBR )` patterns.
//!
//! A pattern in sentence `s` labels every later occurrence of the same
//! abbreviation token (exact case) in sentences `s+1..` of the same abstract.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::corpus::{tokenize_abstract, AbstractRecord, TokenizedSentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionMention {
    pub abbreviation: String,
    pub definition_tokens: Vec<String>,
    pub abstract_id: String,
    pub sentence_index: usize,
    /// Index of the `(` token that opens the pattern.
    pub paren_index: usize,
}

impl DefinitionMention {
    pub fn definition(&self) -> String {
        self.definition_tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLabeledInstance {
    pub abstract_id: String,
    pub sentence_index: usize,
    pub abbreviation: String,
    pub tokens: Vec<String>,
    pub position: usize,
    pub raw_definition: String,
}

const SPAN_BOUNDARIES: &[&str] = &["(", ")", ",", ";", ":"];

/// Length 2..=10, at least one letter, and at least 60% uppercase letters or digits.
pub fn is_abbreviation_shape(token: &str) -> bool {
    let n = token.chars().count();
    if !(2..=10).contains(&n) || !token.chars().any(char::is_alphabetic) {
        return false;
    }
    let strong = token
        .chars()
        .filter(|c| c.is_uppercase() || c.is_ascii_digit())
        .count();
    strong * 10 >= n * 6
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// Right-to-left character alignment of `abbr` against the words of `span`.
/// The first abbreviation character must begin a word.
fn aligns<S: AsRef<str>>(span: &[S], abbr: &[char]) -> bool {
    let long: Vec<char> = span
        .iter()
        .map(|w| w.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .map(fold)
        .collect();
    let mut l = long.len() as isize - 1;
    for (s, &c) in abbr.iter().enumerate().rev() {
        loop {
            if l < 0 {
                return false;
            }
            let here = long[l as usize];
            let word_start = l == 0 || !long[l as usize - 1].is_alphanumeric();
            if here == c && (s > 0 || word_start) {
                break;
            }
            l -= 1;
        }
        l -= 1;
    }
    true
}

/// Maximum number of definition words considered for an abbreviation.
pub fn max_definition_words(abbreviation: &str) -> usize {
    let n = abbreviation.chars().count();
    (n + 5).min(2 * n)
}

/// Finds the shortest suffix of `preceding` whose words align with the
/// alphanumeric characters of `abbreviation`, case-insensitively.
pub fn resolve_definition_span<'a, S: AsRef<str>>(
    preceding: &'a [S],
    abbreviation: &str,
) -> Option<&'a [S]> {
    let chars: Vec<char> = abbreviation
        .chars()
        .filter(|c| c.is_alphanumeric())
        .map(fold)
        .collect();
    if chars.is_empty() {
        return None;
    }
    let limit = max_definition_words(abbreviation).min(preceding.len());
    (1..=limit)
        .map(|k| &preceding[preceding.len() - k..])
        .take_while(|span| {
            span.iter()
                .all(|w| !SPAN_BOUNDARIES.contains(&w.as_ref()) && w.as_ref() != abbreviation)
        })
        .find(|span| aligns(span, &chars))
}

/// Finds every `( X )` with a single abbreviation-shaped `X` whose
/// definition span resolves from the tokens before `(`.
pub fn detect_patterns(sentence: &TokenizedSentence) -> Vec<DefinitionMention> {
    let tokens = &sentence.tokens;
    let mut found = Vec::new();
    for i in 0..tokens.len().saturating_sub(2) {
        if tokens[i] != "(" || tokens[i + 2] != ")" || !is_abbreviation_shape(&tokens[i + 1]) {
            continue;
        }
        let abbr = &tokens[i + 1];
        let window = max_definition_words(abbr) + 5;
        let preceding = &tokens[i.saturating_sub(window)..i];
        if let Some(span) = resolve_definition_span(preceding, abbr) {
            found.push(DefinitionMention {
                abbreviation: abbr.clone(),
                definition_tokens: span.to_vec(),
                abstract_id: sentence.abstract_id.clone(),
                sentence_index: sentence.sentence_index,
                paren_index: i,
            });
        }
    }
    found
}

/// Labels every occurrence of a defined abbreviation in the sentences that
/// follow its definition. The nearest preceding definition wins.
pub fn label_abstract(sentences: &[TokenizedSentence]) -> Vec<RawLabeledInstance> {
    let mut active: HashMap<String, String> = HashMap::new();
    let mut out = Vec::new();
    for sentence in sentences {
        let mentions = detect_patterns(sentence);
        for (position, token) in sentence.tokens.iter().enumerate() {
            let Some(definition) = active.get(token) else {
                continue;
            };
            // Re-defined earlier in this sentence: this sentence is now a defining one.
            if mentions
                .iter()
                .any(|m| &m.abbreviation == token && m.paren_index < position)
            {
                continue;
            }
            out.push(RawLabeledInstance {
                abstract_id: sentence.abstract_id.clone(),
                sentence_index: sentence.sentence_index,
                abbreviation: token.clone(),
                tokens: sentence.tokens.clone(),
                position,
                raw_definition: definition.clone(),
            });
        }
        for m in mentions {
            let definition = m.definition();
            active.insert(m.abbreviation, definition);
        }
    }
    out
}

/// Extraction over a whole corpus, parallel per abstract, output in corpus order.
pub fn extract_corpus(records: &[AbstractRecord]) -> Vec<RawLabeledInstance> {
    records
        .par_iter()
        .map(|r| label_abstract(&tokenize_abstract(r)))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub const RAW_HEADER: &str =
    "#abstract_id\tsentence_index\tabbreviation\tdefinition\tposition\ttokens";

pub fn write_raw_instances<W: Write>(mut w: W, instances: &[RawLabeledInstance]) -> Result<()> {
    writeln!(w, "{RAW_HEADER}")?;
    for inst in instances {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            inst.abstract_id,
            inst.sentence_index,
            inst.abbreviation,
            inst.raw_definition,
            inst.position,
            inst.tokens.join(" ")
        )?;
    }
    Ok(())
}

pub fn read_raw_instances<R: BufRead>(r: R) -> Result<Vec<RawLabeledInstance>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(
                line_no,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let parse_usize = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(line_no, format!("bad {what} {s:?}")))
        };
        let tokens: Vec<String> = f[5].split(' ').map(str::to_string).collect();
        let position = parse_usize(f[4], "position")?;
        if tokens.get(position).map(String::as_str) != Some(f[2]) {
            return Err(Error::parse(
                line_no,
                "token at position does not match abbreviation",
            ));
        }
        out.push(RawLabeledInstance {
            abstract_id: f[0].to_string(),
            sentence_index: parse_usize(f[1], "sentence index")?,
            abbreviation: f[2].to_string(),
            raw_definition: f[3].to_string(),
            position,
            tokens,
        });
    }
    Ok(out)
}
