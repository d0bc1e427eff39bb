//! Deterministic template-generated Cloze tasks for desk-scale checks.
//!
//! * `locate`: one sentence contains `marker <answer>`; the question is
//!   `marker XXXXX .` A pure pointer lookup.
//! * `alternation`: a lamp changes hands. Every participant has a
//!   `<e> takes the lamp .` sentence; every participant but the answer
//!   later has `<e> drops the lamp .`; the question is
//!   `XXXXX has the lamp .` The take sentences look alike, the answer's
//!   take sits at a random position, and distractors are mentioned more
//!   often than the answer, so neither local context, recency nor summed
//!   pointer mass identifies it. Reading the sentences in order does.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cbt::CBT_CANDIDATES;
use super::vocab::PLACEHOLDER_TOKEN;
use super::RawCloze;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticTask {
    Locate,
    Alternation,
}

impl std::str::FromStr for SyntheticTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "locate" => Ok(SyntheticTask::Locate),
            "alternation" => Ok(SyntheticTask::Alternation),
            other => Err(Error::Config(format!("unknown synthetic task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    /// Size of the entity pool answers are drawn from.
    pub num_entities: usize,
    /// Minimum passage length in sentences.
    pub num_sentences: usize,
    /// Total vocabulary budget: entities + template words + fillers.
    pub vocab_size: usize,
    pub num_examples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(task: SyntheticTask, num_examples: usize, seed: u64) -> Self {
        SyntheticSpec {
            task,
            num_entities: 10,
            num_sentences: match task {
                SyntheticTask::Locate => 5,
                SyntheticTask::Alternation => 10,
            },
            vocab_size: 64,
            num_examples,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub train: Vec<RawCloze>,
    pub valid: Vec<RawCloze>,
    pub test: Vec<RawCloze>,
}

const MARKER: &str = "marker";
const TAKE: [&str; 3] = ["takes", "the", "lamp"];
const DROP: [&str; 3] = ["drops", "the", "lamp"];
const QUESTION: [&str; 3] = ["has", "the", "lamp"];
const TEMPLATE_WORDS: [&str; 7] = [".", MARKER, "takes", "drops", "has", "the", "lamp"];
const MIN_FILLERS: usize = 12;
const MAX_PARTICIPANTS: usize = 5;

pub fn entity_token(i: usize) -> String {
    format!("ent{i}")
}

pub fn is_entity_token(t: &str) -> bool {
    t.strip_prefix("ent")
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

struct Gen<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    fillers: Vec<String>,
}

impl Gen<'_> {
    fn filler(&mut self) -> String {
        self.fillers.choose(&mut self.rng).unwrap().clone()
    }

    fn filler_sentence(&mut self) -> Vec<String> {
        vec![self.filler(), self.filler(), self.filler(), ".".into()]
    }

    fn participants(&mut self, answer: usize, n: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.spec.num_entities).filter(|&e| e != answer).collect();
        others.shuffle(&mut self.rng);
        let mut p = vec![answer];
        p.extend(others.into_iter().take(n - 1));
        p
    }

    fn locate(&mut self) -> (Vec<Vec<String>>, Vec<String>, String) {
        let answer = self.rng.gen_range(0..self.spec.num_entities);
        let parts = self.participants(answer, self.spec.num_entities.min(4));
        let n = self.spec.num_sentences.max(2);
        let marker_at = self.rng.gen_range(0..n);
        let sentences = (0..n)
            .map(|i| {
                if i == marker_at {
                    vec![
                        self.filler(),
                        MARKER.into(),
                        entity_token(answer),
                        self.filler(),
                        ".".into(),
                    ]
                } else {
                    let e = *parts.choose(&mut self.rng).unwrap();
                    vec![self.filler(), self.filler(), entity_token(e), self.filler(), ".".into()]
                }
            })
            .collect();
        let question = vec![MARKER.to_string(), PLACEHOLDER_TOKEN.to_string(), ".".to_string()];
        (sentences, question, entity_token(answer))
    }

    fn alternation(&mut self) -> (Vec<Vec<String>>, Vec<String>, String) {
        let answer = self.rng.gen_range(0..self.spec.num_entities);
        let parts = self.participants(answer, self.spec.num_entities.min(MAX_PARTICIPANTS));
        let fact = |e: usize, words: &[&str]| -> Vec<String> {
            std::iter::once(entity_token(e))
                .chain(words.iter().map(|w| w.to_string()))
                .chain(std::iter::once(".".to_string()))
                .collect()
        };
        // events: (entity, is_drop); a random order of takes, then each
        // distractor's drop inserted somewhere after its take
        let mut events: Vec<(usize, bool)> = parts.iter().map(|&e| (e, false)).collect();
        events.shuffle(&mut self.rng);
        for &e in &parts[1..] {
            let take_at = events.iter().position(|&(x, d)| x == e && !d).unwrap();
            let at = self.rng.gen_range(take_at + 1..=events.len());
            events.insert(at, (e, true));
        }
        let mut sentences: Vec<Vec<String>> = events
            .iter()
            .map(|&(e, drop)| fact(e, if drop { &DROP } else { &TAKE }))
            .collect();
        let extra = self.spec.num_sentences.saturating_sub(sentences.len());
        for _ in 0..extra {
            let at = self.rng.gen_range(0..=sentences.len());
            let s = self.filler_sentence();
            sentences.insert(at, s);
        }
        let mut question = vec![PLACEHOLDER_TOKEN.to_string()];
        question.extend(QUESTION.iter().map(|w| w.to_string()));
        question.push(".".into());
        (sentences, question, entity_token(answer))
    }

    /// Distinct passage entities first, then filler words, in order of first
    /// occurrence; topped up with extra filler sentences until there are
    /// enough, then shuffled.
    fn candidates(&mut self, sentences: &mut Vec<Vec<String>>) -> Vec<String> {
        loop {
            let mut ents = Vec::new();
            let mut fill = Vec::new();
            for w in sentences.iter().flatten() {
                if is_entity_token(w) {
                    if !ents.contains(w) {
                        ents.push(w.clone());
                    }
                } else if !TEMPLATE_WORDS.contains(&w.as_str()) && !fill.contains(w) {
                    fill.push(w.clone());
                }
            }
            if ents.len() + fill.len() >= CBT_CANDIDATES {
                let mut c: Vec<String> = ents.into_iter().chain(fill).take(CBT_CANDIDATES).collect();
                c.shuffle(&mut self.rng);
                return c;
            }
            let at = self.rng.gen_range(0..=sentences.len());
            let s = self.filler_sentence();
            sentences.insert(at, s);
        }
    }
}

/// Generates a corpus split 80/10/10 into train/valid/test. Examples are
/// unique across the whole corpus, so no passage-question pair appears in
/// two splits.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.num_entities < 2 {
        return Err(Error::Config("synthetic tasks need at least 2 entities".into()));
    }
    let fixed = spec.num_entities + TEMPLATE_WORDS.len() + 1;
    if spec.vocab_size < fixed + MIN_FILLERS {
        return Err(Error::Config(format!(
            "vocab_size {} too small: need at least {} for {} entities",
            spec.vocab_size,
            fixed + MIN_FILLERS,
            spec.num_entities
        )));
    }
    let fillers = (0..spec.vocab_size - fixed).map(|i| format!("w{i}")).collect();
    let mut g = Gen {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        fillers,
    };
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(spec.num_examples);
    let mut attempts = 0;
    while all.len() < spec.num_examples {
        attempts += 1;
        if attempts > 20 * spec.num_examples + 100 {
            return Err(Error::Config(
                "could not generate enough distinct examples; enlarge the vocabulary".into(),
            ));
        }
        let (mut sentences, question, answer) = match spec.task {
            SyntheticTask::Locate => g.locate(),
            SyntheticTask::Alternation => g.alternation(),
        };
        let candidates = g.candidates(&mut sentences);
        let mut text = Vec::new();
        let mut starts = Vec::new();
        for s in sentences {
            starts.push(text.len());
            text.extend(s);
        }
        if !seen.insert((text.clone(), question.clone())) {
            continue;
        }
        all.push(RawCloze {
            source: format!("synthetic:{}", all.len()),
            text,
            sentence_starts: Some(starts),
            question,
            answer,
            candidates,
            entity_map: Vec::new(),
        });
    }
    let n_train = spec.num_examples * 8 / 10;
    let n_valid = spec.num_examples / 10;
    let test = all.split_off(n_train + n_valid);
    let valid = all.split_off(n_train);
    Ok(SyntheticCorpus {
        train: all,
        valid,
        test,
    })
}

/// The rule the alternation generator follows: the entity that took the
/// lamp and never dropped it.
pub fn solve_alternation(ex: &RawCloze) -> Option<String> {
    let mut holding: Vec<String> = Vec::new();
    for s in ex.sentences() {
        if s.len() >= 2 && is_entity_token(&s[0]) {
            match s[1].as_str() {
                "takes" => holding.push(s[0].clone()),
                "drops" => holding.retain(|e| e != &s[0]),
                _ => {}
            }
        }
    }
    (holding.len() == 1).then(|| holding.remove(0))
}

/// The rule for the locate task: the token after `marker`.
pub fn solve_locate(ex: &RawCloze) -> Option<String> {
    ex.text.windows(2).find(|w| w[0] == MARKER).map(|w| w[1].clone())
}

/// Most frequent candidate in the passage, ties to first occurrence.
pub fn frequency_baseline(ex: &RawCloze) -> Option<String> {
    let count = |c: &String| ex.text.iter().filter(|t| *t == c).count();
    let first = |c: &String| ex.text.iter().position(|t| t == c).unwrap_or(usize::MAX);
    ex.candidates
        .iter()
        .max_by(|a, b| count(a).cmp(&count(b)).then(first(b).cmp(&first(a))))
        .cloned()
}
