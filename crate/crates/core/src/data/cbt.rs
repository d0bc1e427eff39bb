//! Children's-Book-Test style blocks:
//!
//! ```text
//! 1 first context sentence
//! ...
//! 20 last context sentence
//! 21 question with XXXXX in it\tanswer\t\tc1|c2|...|c10
//! <blank>
//! ```

use std::io::BufRead;

use super::vocab::PLACEHOLDER_TOKEN;
use super::RawCloze;
use crate::error::{Error, ParseErrorKind, Result};

/// Blank marker used in CBT questions.
pub const CBT_PLACEHOLDER: &str = "XXXXX";
pub const CBT_CANDIDATES: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CbtCorpus {
    pub examples: Vec<RawCloze>,
    /// Blocks skipped because a candidate contained whitespace.
    pub rejected_multiword: usize,
}

fn split_number(line: &str, lineno: usize) -> Result<(usize, &str)> {
    let (num, rest) = line.split_once(' ').unwrap_or((line, ""));
    let n = num.parse::<usize>().map_err(|_| {
        Error::parse(
            ParseErrorKind::MissingLineNumber,
            lineno,
            format!("expected a line number, found {num:?}"),
        )
    })?;
    Ok((n, rest))
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split_whitespace().map(str::to_lowercase)
}

/// Parses every block of a CBT-format stream, in file order.
pub fn parse_cbt<R: BufRead>(reader: R) -> Result<CbtCorpus> {
    let mut corpus = CbtCorpus::default();
    let mut text: Vec<String> = Vec::new();
    let mut starts: Vec<usize> = Vec::new();
    let mut expected = 1;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if expected != 1 {
                return Err(Error::parse(
                    ParseErrorKind::MissingSection,
                    lineno,
                    "block ended before its question line",
                ));
            }
            continue;
        }
        let (n, rest) = split_number(line, lineno)?;
        if n != expected {
            return Err(Error::parse(
                ParseErrorKind::MissingLineNumber,
                lineno,
                format!("expected line {expected}, found {n}"),
            ));
        }
        if !rest.contains('\t') {
            let sentence: Vec<String> = words(rest).collect();
            if !sentence.is_empty() {
                starts.push(text.len());
                text.extend(sentence);
            }
            expected += 1;
            continue;
        }

        let fields: Vec<&str> = rest.split('\t').collect();
        if fields.len() != 4 || !fields[2].is_empty() {
            return Err(Error::parse(
                ParseErrorKind::MalformedLine,
                lineno,
                "question line must be `question<TAB>answer<TAB><TAB>candidates`",
            ));
        }
        if text.is_empty() {
            return Err(Error::parse(
                ParseErrorKind::MissingSection,
                lineno,
                "no context sentences",
            ));
        }
        let mut question = Vec::new();
        let mut holes = 0;
        for w in fields[0].split_whitespace() {
            if w == CBT_PLACEHOLDER {
                holes += 1;
                question.push(PLACEHOLDER_TOKEN.to_string());
            } else {
                question.push(w.to_lowercase());
            }
        }
        match holes {
            0 => {
                return Err(Error::parse(
                    ParseErrorKind::MissingPlaceholder,
                    lineno,
                    format!("question has no {CBT_PLACEHOLDER}"),
                ))
            }
            1 => {}
            _ => {
                return Err(Error::parse(
                    ParseErrorKind::MultiplePlaceholders,
                    lineno,
                    format!("question has {holes} {CBT_PLACEHOLDER} markers"),
                ))
            }
        }
        let raw_cands: Vec<&str> = fields[3].split('|').collect();
        if raw_cands.len() != CBT_CANDIDATES {
            return Err(Error::parse(
                ParseErrorKind::CandidateCount,
                lineno,
                format!("expected {CBT_CANDIDATES} candidates, found {}", raw_cands.len()),
            ));
        }
        let answer = fields[1].trim().to_lowercase();
        let candidates: Vec<String> = raw_cands.iter().map(|c| c.trim().to_lowercase()).collect();
        if !candidates.contains(&answer) {
            return Err(Error::parse(
                ParseErrorKind::AnswerNotCandidate,
                lineno,
                format!("answer {answer:?} is not a candidate"),
            ));
        }
        let multiword = candidates
            .iter()
            .any(|c| c.is_empty() || c.contains(char::is_whitespace));
        if multiword {
            corpus.rejected_multiword += 1;
        } else {
            corpus.examples.push(RawCloze {
                source: format!("cbt:{}", corpus.examples.len() + corpus.rejected_multiword),
                text: std::mem::take(&mut text),
                sentence_starts: Some(std::mem::take(&mut starts)),
                question,
                answer,
                candidates,
                entity_map: Vec::new(),
            });
        }
        text.clear();
        starts.clear();
        expected = 1;
    }
    if expected != 1 {
        return Err(Error::parse(
            ParseErrorKind::MissingSection,
            0,
            "input ended inside a block",
        ));
    }
    Ok(corpus)
}

/// Renders one example as a CBT block, including the trailing blank line.
pub fn render_cbt(ex: &RawCloze) -> String {
    let mut out = String::new();
    let sentences = ex.sentences();
    for (i, s) in sentences.iter().enumerate() {
        out.push_str(&format!("{} {}\n", i + 1, s.join(" ")));
    }
    let question: Vec<&str> = ex
        .question
        .iter()
        .map(|w| {
            if w == PLACEHOLDER_TOKEN {
                CBT_PLACEHOLDER
            } else {
                w.as_str()
            }
        })
        .collect();
    out.push_str(&format!(
        "{} {}\t{}\t\t{}\n\n",
        sentences.len() + 1,
        question.join(" "),
        ex.answer,
        ex.candidates.join("|")
    ));
    out
}

pub fn render_cbt_corpus(examples: &[RawCloze]) -> String {
    examples.iter().map(render_cbt).collect()
}
