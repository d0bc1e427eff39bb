//! CNN story files: URL, passage, question, answer and entity mapping,
//! separated by blank lines.

use std::io::BufRead;

use super::vocab::PLACEHOLDER_TOKEN;
use super::RawCloze;
use crate::error::{Error, ParseErrorKind, Result};

pub const CNN_PLACEHOLDER: &str = "@placeholder";

/// `@entity` followed by one or more digits.
pub fn is_entity(token: &str) -> bool {
    token
        .strip_prefix("@entity")
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

struct Section {
    first_line: usize,
    lines: Vec<String>,
}

/// Parses a single story. Candidates are the distinct entity tokens of the
/// passage in order of first occurrence; an answer missing from the
/// passage is kept and shows up as `has_support() == false`.
pub fn parse_cnn<R: BufRead>(reader: R) -> Result<RawCloze> {
    let mut sections: Vec<Section> = Vec::new();
    let mut open = false;
    let mut last_line = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        last_line = i + 1;
        if line.trim().is_empty() {
            open = false;
            continue;
        }
        if !open {
            sections.push(Section {
                first_line: i + 1,
                lines: Vec::new(),
            });
            open = true;
        }
        sections.last_mut().unwrap().lines.push(line.to_string());
    }
    const NAMES: [&str; 4] = ["url", "passage", "question", "answer"];
    if sections.len() < NAMES.len() {
        return Err(Error::parse(
            ParseErrorKind::MissingSection,
            last_line,
            format!("missing {} section", NAMES[sections.len()]),
        ));
    }

    let passage = &sections[1];
    let text: Vec<String> = passage
        .lines
        .iter()
        .flat_map(|l| l.split_whitespace().map(str::to_string))
        .collect();

    let qsec = &sections[2];
    let question: Vec<String> = qsec
        .lines
        .iter()
        .flat_map(|l| l.split_whitespace())
        .map(|w| if w == CNN_PLACEHOLDER { PLACEHOLDER_TOKEN } else { w }.to_string())
        .collect();
    match question.iter().filter(|w| *w == PLACEHOLDER_TOKEN).count() {
        0 => {
            return Err(Error::parse(
                ParseErrorKind::MissingPlaceholder,
                qsec.first_line,
                format!("question has no {CNN_PLACEHOLDER}"),
            ))
        }
        1 => {}
        n => {
            return Err(Error::parse(
                ParseErrorKind::MultiplePlaceholders,
                qsec.first_line,
                format!("question has {n} placeholders"),
            ))
        }
    }

    let asec = &sections[3];
    let answer = asec.lines.join(" ").trim().to_string();
    if !is_entity(&answer) {
        return Err(Error::parse(
            ParseErrorKind::AnswerNotEntity,
            asec.first_line,
            format!("answer {answer:?} is not an @entityN token"),
        ));
    }

    let mut entity_map = Vec::new();
    for sec in &sections[4..] {
        for (k, line) in sec.lines.iter().enumerate() {
            match line.split_once(':') {
                Some((ent, name)) if is_entity(ent) => entity_map.push((ent.to_string(), name.to_string())),
                _ => {
                    return Err(Error::parse(
                        ParseErrorKind::BadEntityMapping,
                        sec.first_line + k,
                        format!("expected `@entityN:name`, found {line:?}"),
                    ))
                }
            }
        }
    }

    let mut candidates: Vec<String> = Vec::new();
    for t in text.iter().filter(|t| is_entity(t)) {
        if !candidates.contains(t) {
            candidates.push(t.clone());
        }
    }

    Ok(RawCloze {
        source: sections[0].lines.join(" "),
        text,
        sentence_starts: None,
        question,
        answer,
        candidates,
        entity_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const STORY: &str = "http://example.com/story\n\n\
@entity0 met @entity1 in @entity2 . later @entity0 left .\n\n\
@placeholder left @entity2\n\n\
@entity0\n\n\
@entity0:Alice\n@entity1:Bob\n@entity2:Paris\n";

    #[test]
    fn conforming_story() {
        let ex = parse_cnn(STORY.as_bytes()).unwrap();
        assert_eq!(ex.candidates, vec!["@entity0", "@entity1", "@entity2"]);
        assert_eq!(ex.answer, "@entity0");
        assert!(ex.has_support());
        assert_eq!(ex.entity_map.len(), 3);
        assert_eq!(ex.entity_map[0], ("@entity0".to_string(), "Alice".to_string()));
        assert!(ex.text.iter().all(|t| t != "Alice"));
    }

    #[test]
    fn absent_answer_is_zero_support() {
        let story = STORY.replace("\n\n@entity0\n\n", "\n\n@entity7\n\n");
        let ex = parse_cnn(story.as_bytes()).unwrap();
        assert!(!ex.has_support());
    }

    #[test]
    fn entity_token_shape() {
        assert!(is_entity("@entity12"));
        assert!(!is_entity("@entity"));
        assert!(!is_entity("@entityX"));
        assert!(!is_entity("entity1"));
    }
}
